// Directed reachability with and without the Magnetic Laplacian bias.
//
// cargo run --release --example ablation -- [seed]

use gtlm::bias::BiasSources;
use gtlm::verify::{train_probe, ProbeSetup};

fn main() -> anyhow::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let base = ProbeSetup::directed_reachability(seed);
    for (name, sources) in [("full", BiasSources::ALL), ("no-mag", BiasSources { mag: false, ..BiasSources::ALL })] {
        let out = train_probe::<f32>(&base.clone().with_sources(sources), |e, l| println!("{name} epoch {e} loss {l:.4}"))?;
        println!("{name}: accuracy {:.3} (zero-bias twin {:.3}) in {:.0}s", out.accuracy, out.control_accuracy, out.seconds);
    }
    Ok(())
}
