// Bias-only training of a frozen random backbone on the connectivity probe, followed by the
// per-head separation statistic on held-out instances.
//
// cargo run --release --example probe_training -- [seed] [n_train] [epochs] [lr_bias]

use gtlm::data::prompt_graph;
use gtlm::verify::{mean_separation, probe_message_passing, train_probe, ProbeSetup};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize| args.get(i).map(String::as_str);
    let mut setup = ProbeSetup::component_probe(arg(0).and_then(|s| s.parse().ok()).unwrap_or(0));
    if let Some(n) = arg(1).and_then(|s| s.parse().ok()) {
        setup.n_train = n;
    }
    if let Some(e) = arg(2).and_then(|s| s.parse().ok()) {
        setup.train.epochs = e;
    }
    if let Some(lr) = arg(3).and_then(|s| s.parse().ok()) {
        setup.train.lr_bias = lr;
    }
    let out = train_probe::<f32>(&setup, |e, l| println!("epoch {e} loss {l:.4}"))?;
    println!("accuracy {:.3}, zero-bias control {:.3}, {:.0}s", out.accuracy, out.control_accuracy, out.seconds);
    let reports = out
        .test
        .iter()
        .take(100)
        .map(|r| probe_message_passing(&out.model, &prompt_graph(r)?))
        .collect::<Result<Vec<_>, _>>()?;
    for (l, heads) in mean_separation(&reports).iter().enumerate() {
        println!("layer {l} separation {heads:.3?}");
    }
    Ok(())
}
