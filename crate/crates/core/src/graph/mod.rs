//! Text-attributed graphs: nodes carry text, node 0 is the generation target.

mod ego;
mod io;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{tokenize, TokenId};

pub use ego::sample_ego_subgraph;
pub use io::{load_graphs, load_graphs_as, parse_graphs, save_graphs, write_graphs, GraphFormat, QaRecord};

/// Index of the target node in every graph.
pub const TARGET: usize = 0;

/// Marker that separates the question from the answer in the target text.
pub const ANSWER_MARKER: &str = "\n A: ";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("duplicate edge ({src}, {dst})")]
    DuplicateEdge { src: usize, dst: usize },
    #[error("edge ({src}, {dst}) references a node outside 0..{n_nodes}")]
    DanglingEndpoint { src: usize, dst: usize, n_nodes: usize },
    #[error("node {node} has empty text")]
    EmptyText { node: usize },
    #[error("graph has no target node")]
    MissingTarget,
    #[error("self-loop on node {node} without the self-loop flag")]
    SelfLoop { node: usize },
    #[error("node {node} token ids do not match its raw text")]
    TokenMismatch { node: usize },
    #[error("question must be non-empty")]
    EmptyQuestion,
    #[error("label must be non-empty")]
    EmptyLabel,
    #[error("target text already carries a question template")]
    TemplateAlreadyPresent,
    #[error("center {center} is not a node of a graph with {n_nodes} nodes")]
    InvalidCenter { center: usize, n_nodes: usize },
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("invalid graph: {0:?}")]
    Invalid(Vec<GraphError>),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: String,
    pub text: Vec<TokenId>,
    pub raw_text: String,
}

impl NodeRecord {
    pub fn new(node_id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        Self { node_id: node_id.into(), text: tokenize(&raw_text), raw_text }
    }
}

/// Token range of the supervised label inside the target node's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextAttributedGraph {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<(usize, usize)>,
    #[serde(default)]
    pub allow_self_loops: bool,
    /// Set by [`append_question`]; `None` for unlabelled graphs.
    #[serde(default)]
    pub answer: Option<AnswerSpan>,
}

impl TextAttributedGraph {
    /// Builds and validates a graph whose node ids are the node indices.
    pub fn from_texts(texts: &[&str], edges: &[(usize, usize)]) -> Result<Self, Vec<GraphError>> {
        let nodes = texts.iter().enumerate().map(|(i, t)| NodeRecord::new(i.to_string(), *t)).collect();
        validate_graph(Self { nodes, edges: edges.to_vec(), allow_self_loops: false, answer: None })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn target(&self) -> &NodeRecord {
        &self.nodes[TARGET]
    }

    /// Dense 0/1 directed adjacency, row = source.
    pub fn adjacency(&self) -> Vec<Vec<f64>> {
        let n = self.n_nodes();
        let mut a = vec![vec![0.0; n]; n];
        for &(s, d) in &self.edges {
            a[s][d] = 1.0;
        }
        a
    }

    /// Neighbor lists of the undirected view, each sorted and deduplicated.
    pub fn undirected_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n_nodes()];
        for &(s, d) in &self.edges {
            if s != d {
                nb[s].push(d);
                nb[d].push(s);
            }
        }
        for l in nb.iter_mut() {
            l.sort_unstable();
            l.dedup();
        }
        nb
    }

    /// Directed out-neighbor lists in edge order.
    pub fn out_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n_nodes()];
        for &(s, d) in &self.edges {
            nb[s].push(d);
        }
        nb
    }
}

/// Returns the graph unchanged when every invariant holds, otherwise all violations found.
pub fn validate_graph(g: TextAttributedGraph) -> Result<TextAttributedGraph, Vec<GraphError>> {
    let mut errs = Vec::new();
    let n = g.nodes.len();
    if n == 0 {
        errs.push(GraphError::MissingTarget);
    }
    for (i, node) in g.nodes.iter().enumerate() {
        if node.raw_text.is_empty() {
            errs.push(GraphError::EmptyText { node: i });
        }
        if node.text != tokenize(&node.raw_text) {
            errs.push(GraphError::TokenMismatch { node: i });
        }
    }
    let mut seen = HashSet::new();
    for &(src, dst) in &g.edges {
        if src >= n || dst >= n {
            errs.push(GraphError::DanglingEndpoint { src, dst, n_nodes: n });
            continue;
        }
        if src == dst && !g.allow_self_loops {
            errs.push(GraphError::SelfLoop { node: src });
        }
        if !seen.insert((src, dst)) {
            errs.push(GraphError::DuplicateEdge { src, dst });
        }
    }
    if let (Some(span), Some(t)) = (g.answer, g.nodes.first()) {
        if span.len == 0 || span.start + span.len != t.text.len() {
            errs.push(GraphError::TokenMismatch { node: TARGET });
        }
    }
    if errs.is_empty() {
        Ok(g)
    } else {
        Err(errs)
    }
}

/// Lifts every directed edge `(u, v)` to a node `e` on the path `u → e → v`.
///
/// Original nodes keep their indices; edge nodes are appended in edge order with text `"(u, v)"`.
pub fn to_incidence(g: &TextAttributedGraph) -> TextAttributedGraph {
    let n = g.n_nodes();
    let mut nodes = g.nodes.clone();
    let mut edges = Vec::with_capacity(2 * g.n_edges());
    for (k, &(u, v)) in g.edges.iter().enumerate() {
        nodes.push(NodeRecord::new(format!("edge:{u}->{v}"), format!("({u}, {v})")));
        edges.push((u, n + k));
        edges.push((n + k, v));
    }
    TextAttributedGraph { nodes, edges, allow_self_loops: false, answer: g.answer }
}

fn check_template(g: &TextAttributedGraph, question: &str) -> Result<(), GraphError> {
    if question.is_empty() {
        return Err(GraphError::EmptyQuestion);
    }
    if g.answer.is_some() || g.target().raw_text.contains(ANSWER_MARKER) {
        return Err(GraphError::TemplateAlreadyPresent);
    }
    Ok(())
}

/// Appends `"\n\n{question}\n A: {label}"` to the target text and records the label's token span.
pub fn append_question(g: &TextAttributedGraph, question: &str, label: &str) -> Result<TextAttributedGraph, GraphError> {
    check_template(g, question)?;
    if label.is_empty() {
        return Err(GraphError::EmptyLabel);
    }
    let mut out = g.clone();
    let prompt = format!("{}\n\n{}{}", g.target().raw_text, question, ANSWER_MARKER);
    let start = tokenize(&prompt).len();
    let target = NodeRecord::new(g.target().node_id.clone(), format!("{prompt}{label}"));
    let len = target.text.len() - start;
    out.nodes[TARGET] = target;
    out.answer = Some(AnswerSpan { start, len });
    Ok(out)
}

/// Same template without a label, ready for decoding after `" A: "`.
pub fn append_prompt(g: &TextAttributedGraph, question: &str) -> Result<TextAttributedGraph, GraphError> {
    check_template(g, question)?;
    let mut out = g.clone();
    let prompt = format!("{}\n\n{}{}", g.target().raw_text, question, ANSWER_MARKER);
    out.nodes[TARGET] = NodeRecord::new(g.target().node_id.clone(), prompt);
    out.answer = None;
    Ok(out)
}
