// Structural features of a small directed graph: hop distances, random-walk probabilities and
// the Magnetic Laplacian spectrum.
//
// cargo run --example features

use gtlm::features::{compute_features, FeatureConfig};
use gtlm::graph::TextAttributedGraph;

fn run_example() -> anyhow::Result<()> {
    // a directed 4-cycle with a pendant node
    let g = TextAttributedGraph::from_texts(&["a", "b", "c", "d", "e"], &[(0, 1), (1, 2), (2, 3), (3, 0), (3, 4)])
        .map_err(|e| anyhow::anyhow!("{e:?}"))?;
    let cfg = FeatureConfig { max_spd: 4, rrwp_steps: 4, mag_q: 0.25 };
    let f = compute_features(&g, &cfg)?;

    println!("shortest-path buckets (max_spd = {} is unreachable):", cfg.max_spd);
    for row in &f.spd {
        println!("  {row:?}");
    }
    println!("walk probabilities from node 0 to node 2, steps 0..{}:", cfg.rrwp_steps);
    println!("  {:?}", (0..cfg.rrwp_steps).map(|k| f.rrwp_at(0, 2, k)).collect::<Vec<_>>());
    println!("magnetic laplacian eigenvalues (q = {}):", cfg.mag_q);
    println!("  {:.4?}", f.mag_eigvals);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
