// One record from every synthetic task, with its label checked against the independent oracle.
//
// cargo run --example gen_data

use gtlm::data::{generate, Task, TaskSpec};
use gtlm::verify::oracle_label;

fn run_example() -> anyhow::Result<()> {
    for task in Task::ALL {
        let spec = TaskSpec::new(task, 11).with_counts(6, 1, 1);
        let ds = generate(&spec)?;
        let r = &ds.train[0];
        let oracle = oracle_label(task, r)?;
        println!(
            "{task:<24} nodes={:<3} edges={:<3} q={:?} label={:?} oracle={:?}",
            r.graph.n_nodes(),
            r.graph.n_edges(),
            r.question,
            r.label,
            oracle
        );
        assert_eq!(oracle, r.label);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
