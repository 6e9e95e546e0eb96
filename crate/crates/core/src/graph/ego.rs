use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GraphError, TextAttributedGraph};

/// Closeness-first neighborhood sample around `center`, relabeled so the center is node 0.
///
/// Hop rings (undirected) are admitted whole while they fit in `max_neighbors`; the first ring
/// that does not fit is subsampled uniformly under `seed`. Within a ring nodes keep their
/// original relative order. All edges induced by the kept nodes are retained in edge order.
pub fn sample_ego_subgraph(
    g: &TextAttributedGraph,
    center: usize,
    max_neighbors: usize,
    hops: usize,
    seed: u64,
) -> Result<TextAttributedGraph, GraphError> {
    if center >= g.n_nodes() {
        return Err(GraphError::InvalidCenter { center, n_nodes: g.n_nodes() });
    }
    assert!(hops >= 1, "hops must be at least 1");
    let nb = g.undirected_neighbors();
    let mut dist = vec![usize::MAX; g.n_nodes()];
    dist[center] = 0;
    let mut queue = VecDeque::from([center]);
    let mut rings: Vec<Vec<usize>> = vec![Vec::new(); hops + 1];
    while let Some(u) = queue.pop_front() {
        if dist[u] == hops {
            continue;
        }
        for &v in &nb[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                rings[dist[v]].push(v);
                queue.push_back(v);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![center];
    let mut budget = max_neighbors;
    for ring in rings.iter_mut().skip(1) {
        if budget == 0 {
            break;
        }
        ring.sort_unstable();
        if ring.len() <= budget {
            budget -= ring.len();
            kept.extend(ring.iter().copied());
        } else {
            let mut pick = ring.clone();
            pick.shuffle(&mut rng);
            pick.truncate(budget);
            pick.sort_unstable();
            kept.extend(pick);
            budget = 0;
        }
    }

    let relabel: HashMap<usize, usize> = kept.iter().enumerate().map(|(new, &old)| (old, new)).collect();
    let nodes = kept.iter().map(|&i| g.nodes[i].clone()).collect();
    let edges = g
        .edges
        .iter()
        .filter_map(|&(s, d)| Some((*relabel.get(&s)?, *relabel.get(&d)?)))
        .collect();
    let answer = if center == super::TARGET { g.answer } else { None };
    Ok(TextAttributedGraph { nodes, edges, allow_self_loops: g.allow_self_loops, answer })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> TextAttributedGraph {
        let texts: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        TextAttributedGraph::from_texts(&refs, edges).unwrap()
    }

    #[test]
    fn star_is_capped() {
        let edges: Vec<_> = (1..=100).map(|i| (0, i)).collect();
        let g = graph(101, &edges);
        let s = sample_ego_subgraph(&g, 0, 30, 2, 7).unwrap();
        assert_eq!(s.n_nodes(), 31);
        assert_eq!(s.n_edges(), 30);
        assert!(s.edges.iter().all(|&(a, _)| a == 0));
        let other = sample_ego_subgraph(&g, 0, 30, 2, 8).unwrap();
        assert_ne!(s.nodes, other.nodes, "seed should change the tied ring sample");
        assert_eq!(s, sample_ego_subgraph(&g, 0, 30, 2, 7).unwrap());
    }

    #[test]
    fn isolated_center() {
        let g = graph(3, &[(1, 2)]);
        let s = sample_ego_subgraph(&g, 0, 10, 2, 0).unwrap();
        assert_eq!(s.n_nodes(), 1);
        assert!(s.edges.is_empty());
    }

    #[test]
    fn path_admits_rings_in_order() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3)]);
        let s = sample_ego_subgraph(&g, 0, 2, 2, 0).unwrap();
        let ids: Vec<_> = s.nodes.iter().map(|n| n.node_id.as_str()).collect();
        assert_eq!(ids, ["0", "1", "2"]);
        assert_eq!(s.edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn center_is_relabeled_and_direction_ignored() {
        let g = graph(4, &[(1, 2), (3, 2)]);
        let s = sample_ego_subgraph(&g, 2, 5, 1, 0).unwrap();
        let ids: Vec<_> = s.nodes.iter().map(|n| n.node_id.as_str()).collect();
        assert_eq!(ids, ["2", "1", "3"]);
        assert_eq!(s.edges, vec![(1, 0), (2, 0)]);
    }

    #[test]
    fn invalid_center() {
        let g = graph(2, &[]);
        assert_eq!(sample_ego_subgraph(&g, 5, 3, 1, 0), Err(GraphError::InvalidCenter { center: 5, n_nodes: 2 }));
    }

    #[test]
    fn seed_only_changes_the_partial_ring() {
        // ring 1 = {1,2}, ring 2 = {3..8}; budget 4 keeps ring 1 whole
        let g = graph(9, &[(0, 1), (0, 2), (1, 3), (1, 4), (1, 5), (2, 6), (2, 7), (2, 8)]);
        for seed in 0..10 {
            let s = sample_ego_subgraph(&g, 0, 4, 2, seed).unwrap();
            let ids: Vec<_> = s.nodes.iter().map(|n| n.node_id.clone()).collect();
            assert_eq!(&ids[..3], ["0", "1", "2"]);
            assert_eq!(ids.len(), 5);
        }
    }
}
