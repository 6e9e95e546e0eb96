// Fits a tiny model on a node-count dataset, saves and reloads the checkpoint, then decodes
// free-form and under a closed label set.
//
// cargo run --release --example decode

use gtlm::data::{evaluate_accuracy, generate, prompt_graph, training_graph, Task, TaskSpec};
use gtlm::layout::identity_permutation;
use gtlm::model::{load_checkpoint, save_checkpoint, AdamState, DecodeMode, GtlmModel, TrainConfig};
use gtlm::verify::desk_config;

fn run_example() -> anyhow::Result<()> {
    let spec = TaskSpec::new(Task::NodeCount, 3).with_sizes(4, 6).with_counts(48, 1, 12);
    let ds = generate(&spec)?;
    let cfg = TrainConfig { epochs: 4, lr: 3e-3, lr_bias: 1e-2, batch_size: 8, model: desk_config(), ..TrainConfig::default() };
    let mut model = GtlmModel::<f32>::new(cfg.model, 0)?;
    let prepared = ds
        .train
        .iter()
        .map(|r| {
            let g = training_graph(r)?;
            Ok(model.prepare(&g, &identity_permutation(&g))?)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut state = AdamState::from_config(&model, &cfg);
    model.fit(&prepared, &cfg, &mut state, |e, l| println!("epoch {e} loss {l:.4}"))?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("checkpoint.json");
    save_checkpoint(&model, &path)?;
    let model: GtlmModel<f32> = load_checkpoint(&path)?;

    let r = &ds.test[0];
    let g = prompt_graph(r)?;
    let free = model.decode(&g, &DecodeMode::Free { max_new_tokens: 4 })?;
    let labels: Vec<String> = (4..=6).map(|n| n.to_string()).collect();
    let closed = model.decode(&g, &DecodeMode::Labels(labels))?;
    println!("question {:?} gold {:?} free {:?} constrained {:?}", r.question, r.label, free, closed);
    let acc = evaluate_accuracy(&model, &ds.test, &Task::NodeCount.answer_format(), 4)?;
    println!("test accuracy {:.3} over {}", acc.accuracy, acc.n);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
