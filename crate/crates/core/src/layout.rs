//! Serialization of a graph into one token stream: prefix nodes in a chosen order, then the
//! target node. Positions restart at zero inside every node.

use thiserror::Error;

use crate::graph::{TextAttributedGraph, TARGET};
use crate::tokenizer::{TokenId, EOS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("permutation {0:?} is not a bijection over the prefix nodes")]
    InvalidPermutation(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenLayout {
    pub tokens: Vec<TokenId>,
    /// Graph node each token belongs to.
    pub node_index: Vec<usize>,
    /// Position inside the token's node.
    pub position: Vec<usize>,
    pub is_target: Vec<bool>,
    /// Node order of the stream; the target node is last.
    pub order: Vec<usize>,
    /// `(row, token)` pairs: logits at `row` are scored against `token`.
    pub loss_targets: Vec<(usize, usize)>,
    pub n_nodes: usize,
}

impl TokenLayout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn prefix_len(&self) -> usize {
        self.is_target.iter().take_while(|&&t| !t).count()
    }

    /// Token rows of each graph node, indexed by node.
    pub fn node_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.n_nodes];
        for (t, &u) in self.node_index.iter().enumerate() {
            rows[u].push(t);
        }
        rows
    }

    /// Appends one generated token to the target node.
    pub fn push_target_token(&mut self, token: TokenId) {
        let pos = self.position.last().map_or(0, |&p| if *self.is_target.last().unwrap() { p + 1 } else { 0 });
        self.tokens.push(token);
        self.node_index.push(TARGET);
        self.position.push(pos);
        self.is_target.push(true);
    }
}

/// Identity order over the prefix nodes `1..N`.
pub fn identity_permutation(g: &TextAttributedGraph) -> Vec<usize> {
    (1..g.n_nodes()).collect()
}

/// Lays out `g` with prefix nodes in `permutation` order. When the graph carries an answer span,
/// an end-of-answer token follows the target text and the supervised rows cover label plus marker.
pub fn build_layout(g: &TextAttributedGraph, permutation: &[usize]) -> Result<TokenLayout, LayoutError> {
    let n = g.n_nodes();
    let mut seen = vec![false; n];
    let valid = permutation.len() + 1 == n
        && permutation.iter().all(|&u| u != TARGET && u < n && !std::mem::replace(&mut seen[u], true));
    if !valid {
        return Err(LayoutError::InvalidPermutation(permutation.to_vec()));
    }

    let mut layout = TokenLayout {
        tokens: Vec::new(),
        node_index: Vec::new(),
        position: Vec::new(),
        is_target: Vec::new(),
        order: permutation.iter().copied().chain([TARGET]).collect(),
        loss_targets: Vec::new(),
        n_nodes: n,
    };
    for &u in permutation {
        for (p, &tok) in g.nodes[u].text.iter().enumerate() {
            layout.tokens.push(tok);
            layout.node_index.push(u);
            layout.position.push(p);
            layout.is_target.push(false);
        }
    }
    let target_start = layout.len();
    for &tok in &g.nodes[TARGET].text {
        layout.push_target_token(tok);
    }
    if let Some(span) = g.answer {
        layout.push_target_token(EOS);
        for k in span.start..=span.start + span.len {
            let row = target_start + k - 1;
            layout.loss_targets.push((row, layout.tokens[row + 1] as usize));
        }
    }
    Ok(layout)
}

/// Row-major `T × T` visibility: prefix rows see the whole prefix, target rows see the prefix
/// and earlier target tokens.
pub fn build_mask(layout: &TokenLayout) -> Vec<bool> {
    let t = layout.len();
    let mut mask = vec![false; t * t];
    for i in 0..t {
        for j in 0..t {
            mask[i * t + j] = match (layout.is_target[i], layout.is_target[j]) {
                (false, false) => true,
                (false, true) => false,
                (true, false) => true,
                (true, true) => j <= i,
            };
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::append_question;

    fn graph(texts: &[&str]) -> TextAttributedGraph {
        TextAttributedGraph::from_texts(texts, &[]).unwrap()
    }

    #[test]
    fn positions_reset_per_node() {
        let g = graph(&["xy", "abc"]);
        let l = build_layout(&g, &[1]).unwrap();
        assert_eq!(l.position, vec![0, 1, 2, 0, 1]);
        assert_eq!(l.node_index, vec![1, 1, 1, 0, 0]);
        assert_eq!(l.prefix_len(), 3);
    }

    #[test]
    fn permutations_keep_token_multiset() {
        let g = graph(&["t", "ab", "cde"]);
        let a = build_layout(&g, &[1, 2]).unwrap();
        let b = build_layout(&g, &[2, 1]).unwrap();
        let mut ea: Vec<_> = a.node_index.iter().zip(&a.tokens).collect();
        let mut eb: Vec<_> = b.node_index.iter().zip(&b.tokens).collect();
        ea.sort();
        eb.sort();
        assert_eq!(ea, eb);
    }

    #[test]
    fn single_node_is_all_target() {
        let l = build_layout(&graph(&["hello"]), &[]).unwrap();
        assert_eq!(l.position, vec![0, 1, 2, 3, 4]);
        assert!(l.is_target.iter().all(|&t| t));
    }

    #[test]
    fn rejects_bad_permutations() {
        let g = graph(&["t", "a", "b"]);
        for bad in [vec![1], vec![1, 1], vec![0, 1], vec![1, 3], vec![1, 2, 2]] {
            assert!(build_layout(&g, &bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn answer_span_supervises_label_and_eos() {
        let g = append_question(&graph(&["t", "a"]), "Q?", "Yes").unwrap();
        let l = build_layout(&g, &[1]).unwrap();
        let supervised: Vec<usize> = l.loss_targets.iter().map(|&(_, tok)| tok).collect();
        assert_eq!(supervised, vec![b'Y' as usize, b'e' as usize, b's' as usize, EOS as usize]);
        for &(row, tok) in &l.loss_targets {
            assert_eq!(l.tokens[row + 1] as usize, tok);
            assert!(l.is_target[row]);
        }
    }

    #[test]
    fn mask_counts() {
        let g = graph(&["abc", "12345"]);
        let l = build_layout(&g, &[1]).unwrap();
        let m = build_mask(&l);
        let t = l.len();
        // first target token sees the 5 prefix tokens and itself
        assert_eq!(m[5 * t..6 * t].iter().filter(|&&v| v).count(), 6);
        for i in 0..5 {
            assert!((5..t).all(|j| !m[i * t + j]));
        }
    }

    #[test]
    fn single_node_mask_is_causal() {
        let l = build_layout(&graph(&["abcd"]), &[]).unwrap();
        let m = build_mask(&l);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m[i * 4 + j], j <= i);
            }
        }
    }
}
