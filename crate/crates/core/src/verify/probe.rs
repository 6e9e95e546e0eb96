//! Node-level attention summaries and the intra- versus cross-component separation statistic.

use std::fmt::Write as _;

use serde::Serialize;

use super::VerifyError;
use crate::graph::{TextAttributedGraph, TARGET};
use crate::layout::{identity_permutation, TokenLayout};
use crate::model::GtlmModel;
use crate::tensor::{Mat, Real};

/// Per layer and head, `M[a][b]` is the attention mass a token of node `order[a]` puts on all
/// tokens of node `order[b]`, averaged over the tokens of `order[a]`.
#[derive(Debug, Clone, Serialize)]
pub struct NodeAttention {
    /// Node indices in layout order; the target node comes last.
    pub order: Vec<usize>,
    pub maps: Vec<Vec<Vec<Vec<f64>>>>,
}

pub fn aggregate_attention<F: Real>(layout: &TokenLayout, attention: &[Vec<Mat<F>>]) -> NodeAttention {
    let order = layout.order.clone();
    let mut slot = vec![usize::MAX; layout.n_nodes];
    for (a, &u) in order.iter().enumerate() {
        slot[u] = a;
    }
    let k = order.len();
    let mut tokens = vec![0usize; k];
    for &u in &layout.node_index {
        tokens[slot[u]] += 1;
    }
    let maps = attention
        .iter()
        .map(|heads| {
            heads
                .iter()
                .map(|a| {
                    let mut m = vec![vec![0.0; k]; k];
                    for i in 0..a.rows {
                        let ri = slot[layout.node_index[i]];
                        for j in 0..a.cols {
                            m[ri][slot[layout.node_index[j]]] += a.get(i, j).as_f64();
                        }
                    }
                    for (row, &count) in m.iter_mut().zip(&tokens) {
                        row.iter_mut().for_each(|x| *x /= count.max(1) as f64);
                    }
                    m
                })
                .collect()
        })
        .collect();
    NodeAttention { order, maps }
}

/// Component label of every node in the prefix graph, ignoring edges that touch the target.
pub fn prefix_components(g: &TextAttributedGraph) -> Vec<usize> {
    let n = g.n_nodes();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for &(a, b) in &g.edges {
        if a != TARGET && b != TARGET {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
    }
    (0..n).map(|x| find(&mut parent, x)).collect()
}

/// Contrast between the mean attention a prefix node pays to other members of its component and
/// the mean it pays to nodes outside it, `(intra − cross) / (intra + cross)`, averaged over rows.
/// Self-attention is left out. Uniform attention scores 0, full segregation scores 1. `None` when
/// the prefix is a single component.
pub fn separation(map: &[Vec<f64>], order: &[usize], comp: &[usize]) -> Option<f64> {
    let prefix: Vec<usize> = (0..order.len()).filter(|&a| order[a] != TARGET).collect();
    let first = comp[order[*prefix.first()?]];
    if prefix.iter().all(|&a| comp[order[a]] == first) {
        return None;
    }
    let mut scores = Vec::new();
    for &a in &prefix {
        let (mut intra, mut ni, mut cross, mut nc) = (0.0, 0, 0.0, 0);
        for &b in prefix.iter().filter(|&&b| b != a) {
            if comp[order[a]] == comp[order[b]] {
                intra += map[a][b];
                ni += 1;
            } else {
                cross += map[a][b];
                nc += 1;
            }
        }
        if ni == 0 || nc == 0 {
            continue;
        }
        let (intra, cross) = (intra / ni as f64, cross / nc as f64);
        if intra + cross > 0.0 {
            scores.push((intra - cross) / (intra + cross));
        }
    }
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub attention: NodeAttention,
    pub components: Vec<usize>,
    /// `[layer][head]`.
    pub separation: Vec<Vec<Option<f64>>>,
}

impl ProbeReport {
    pub fn max_separation(&self) -> Option<f64> {
        self.separation.iter().flatten().flatten().copied().reduce(f64::max)
    }

    /// One block per layer and head: node labels, then one row of attention mass per node.
    pub fn to_text(&self, g: &TextAttributedGraph) -> String {
        let label = |u: usize| {
            let t: String = g.nodes[u].raw_text.chars().take(8).filter(|c| !c.is_control()).collect();
            if u == TARGET {
                "[target]".to_string()
            } else {
                t
            }
        };
        let mut s = String::new();
        for (l, heads) in self.attention.maps.iter().enumerate() {
            for (h, m) in heads.iter().enumerate() {
                let sep = self.separation[l][h].map_or("absent".to_string(), |x| format!("{x:.4}"));
                let _ = writeln!(s, "layer {l} head {h} separation {sep}");
                let _ = write!(s, "{:>9}", "");
                for &u in &self.attention.order {
                    let _ = write!(s, " {:>8}", label(u));
                }
                s.push('\n');
                for (a, row) in m.iter().enumerate() {
                    let _ = write!(s, "{:>9}", label(self.attention.order[a]));
                    for x in row {
                        let _ = write!(s, " {x:>8.4}");
                    }
                    s.push('\n');
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Runs `g` in identity order and summarizes attention at node level.
pub fn probe_message_passing<F: Real>(model: &GtlmModel<F>, g: &TextAttributedGraph) -> Result<ProbeReport, VerifyError> {
    let prep = model.prepare(g, &identity_permutation(g))?;
    let out = model.forward_prepared(&prep, true);
    let attention = aggregate_attention(&prep.layout, &out.attention.expect("captured"));
    let components = prefix_components(g);
    let separation = attention
        .maps
        .iter()
        .map(|heads| heads.iter().map(|m| separation(m, &attention.order, &components)).collect())
        .collect();
    Ok(ProbeReport { attention, components, separation })
}

/// Per-head mean of the defined separations over many reports.
pub fn mean_separation(reports: &[ProbeReport]) -> Vec<Vec<Option<f64>>> {
    let Some(first) = reports.first() else { return Vec::new() };
    (0..first.separation.len())
        .map(|l| {
            (0..first.separation[l].len())
                .map(|h| {
                    let xs: Vec<f64> = reports.iter().filter_map(|r| r.separation[l][h]).collect();
                    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separation_extremes() {
        // order: prefix nodes 1, 2, 3 then target; components {1, 2} and {3}
        let order = [1, 2, 3, 0];
        let comp = [0, 1, 1, 3];
        let block = vec![
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.3, 0.3, 0.4, 0.0],
        ];
        assert!((separation(&block, &order, &comp).unwrap() - 1.0).abs() < 1e-12);
        let swap = vec![vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0, 0.0], vec![0.5, 0.5, 0.0, 0.0], vec![0.0; 4]];
        assert!((separation(&swap, &order, &comp).unwrap() + 1.0).abs() < 1e-12);
        assert!(separation(&block, &order, &[0, 1, 1, 1]).is_none());
    }

    #[test]
    fn components_ignore_target_edges() {
        let g = TextAttributedGraph::from_texts(&["q", "a", "b", "c"], &[(0, 1), (0, 3), (1, 2), (2, 1)]).unwrap();
        let c = prefix_components(&g);
        assert_eq!(c[1], c[2]);
        assert_ne!(c[1], c[3]);
    }
}
