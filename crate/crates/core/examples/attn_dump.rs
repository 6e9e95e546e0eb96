// Node-aggregated attention maps and the intra- versus cross-component separation statistic
// for one connectivity-probe instance, on a model with a hand-set distance bias.
//
// cargo run --example attn_dump

use gtlm::bias::BiasSources;
use gtlm::data::{generate, prompt_graph, Task, TaskSpec};
use gtlm::model::GtlmModel;
use gtlm::verify::{desk_config, probe_message_passing};

fn run_example() -> anyhow::Result<()> {
    let ds = generate(&TaskSpec::new(Task::ComponentProbe, 5).with_counts(1, 1, 1))?;
    let g = prompt_graph(&ds.test[0])?;
    let cfg = gtlm::model::ModelConfig { sources: BiasSources { spd: true, rrwp: false, mag: false }, ..desk_config() };
    let mut model = GtlmModel::<f64>::new(cfg, 0)?;
    // head 0 of each layer: stay inside the component, never cross
    let table = &mut model.params.bias.spd_table;
    for l in 0..cfg.n_layers {
        let row = l * cfg.n_heads;
        for c in 1..table.cols {
            table.set(row, c, if c + 1 == table.cols { -30.0 } else { 4.0 });
        }
    }
    let report = probe_message_passing(&model, &g)?;
    print!("{}", report.to_text(&g));
    println!("max separation {:.3}", report.max_separation().unwrap_or(f64::NAN));
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
