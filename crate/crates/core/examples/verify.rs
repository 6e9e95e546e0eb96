// The numerical verification battery in both precisions.
//
// cargo run --release --example verify

use gtlm::model::Precision;
use gtlm::verify::run_battery;

fn run_example() -> anyhow::Result<()> {
    for p in [Precision::F64, Precision::F32] {
        let report = run_battery(p, 1)?;
        print!("{}", report.to_text());
        anyhow::ensure!(report.passed(), "battery failed in {p}-bit mode");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
