// The command-line workflow end to end in a temporary directory: generate data, train for one
// epoch, evaluate, dump attention and replay the run from its resolved config.
//
// cargo run --release --example cli

use gtlm::cli::run;

fn run_example() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["gen-data".into(), "--task".into(), "edge-existence".into(), "--scale".into(), "0.02".into(), "--sizes".into(), "4..6".into(), "--out".into(), p("data")],
        vec!["train".into(), "--data".into(), p("data"), "--out".into(), p("run"), "--epochs".into(), "1".into(), "--layers".into(), "1".into(), "--heads".into(), "2".into(), "--d-head".into(), "8".into(), "--precision".into(), "32".into()],
        vec!["eval".into(), "--checkpoint".into(), p("run/checkpoint.json"), "--data".into(), p("data"), "--report".into(), p("eval/report.txt"), "--precision".into(), "32".into()],
        vec!["attn-dump".into(), "--checkpoint".into(), p("run/checkpoint.json"), "--data".into(), p("data"), "--out".into(), p("attn/attention.txt")],
        vec!["train".into(), "--config".into(), p("run/run.toml"), "--out".into(), p("replay")],
        vec!["param-count".into(), "--layers".into(), "16".into(), "--heads".into(), "32".into(), "--max-spd".into(), "8".into()],
    ];
    for args in steps {
        let status = run(std::iter::once("gtlm".to_string()).chain(args.iter().cloned()));
        println!("gtlm {} -> status {status}", args[0]);
        anyhow::ensure!(status == 0, "{} failed", args[0]);
    }
    let a = std::fs::read_to_string(p("run/checkpoint.json"))?;
    let b = std::fs::read_to_string(p("replay/checkpoint.json"))?;
    println!("replayed checkpoint identical: {}", a == b);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
