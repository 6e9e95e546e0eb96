// Bias parameter accounting for a 16-layer, 32-head configuration and the shipped default.
//
// cargo run --example param_count

use gtlm::bias::{count_parameters, BiasConfig};
use gtlm::model::ModelConfig;

fn run_example() -> anyhow::Result<()> {
    let big = BiasConfig { n_layers: 16, n_heads: 32, max_spd: 8, rrwp_steps: 16, rrwp_hidden: 64, ..BiasConfig::default() };
    for (name, cfg) in [("L=16 H=32", big), ("default", ModelConfig::default().bias)] {
        let c = count_parameters(&cfg);
        println!("{name:<10} spd={:<6} rrwp={:<7} mag={:<7} total={}", c.spd, c.rrwp, c.mag, c.total);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
