//! Abstract-graph questions: counts, cycles, triangles, degrees, neighborhoods, reachability,
//! edge existence and shortest paths. Node texts are the node ids.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{yes_no, DataError, Split, Task, TaskSpec, PROMPT_TEXT};
use crate::graph::{QaRecord, TextAttributedGraph};

/// Directed graph over nodes `0..n` without self-loops or duplicate edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Digraph {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        let set: BTreeSet<(usize, usize)> = edges.iter().copied().filter(|&(a, b)| a != b && a < n && b < n).collect();
        Self { n, edges: set.into_iter().collect() }
    }

    fn out(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            out[a].push(b);
        }
        out
    }

    fn undirected(&self) -> Vec<BTreeSet<usize>> {
        let mut nb = vec![BTreeSet::new(); self.n];
        for &(a, b) in &self.edges {
            nb[a].insert(b);
            nb[b].insert(a);
        }
        nb
    }

    /// Directed BFS hop counts from `s`.
    pub fn bfs(&self, s: usize) -> Vec<Option<usize>> {
        let out = self.out();
        let mut dist = vec![None; self.n];
        dist[s] = Some(0);
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &v in &out[u] {
                if dist[v].is_none() {
                    dist[v] = Some(dist[u].unwrap() + 1);
                    q.push_back(v);
                }
            }
        }
        dist
    }

    /// Kahn's algorithm: a directed cycle exists iff some node is never freed.
    pub fn has_cycle(&self) -> bool {
        let out = self.out();
        let mut indeg = vec![0usize; self.n];
        for &(_, b) in &self.edges {
            indeg[b] += 1;
        }
        let mut q: VecDeque<usize> = (0..self.n).filter(|&u| indeg[u] == 0).collect();
        let mut freed = 0;
        while let Some(u) = q.pop_front() {
            freed += 1;
            for &v in &out[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    q.push_back(v);
                }
            }
        }
        freed < self.n
    }

    /// Triangles of the undirected view.
    pub fn triangles(&self) -> usize {
        let nb = self.undirected();
        let mut count = 0;
        for u in 0..self.n {
            for &v in nb[u].range(u + 1..) {
                count += nb[u].intersection(&nb[v]).filter(|&&w| w > v).count();
            }
        }
        count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphQuery {
    NodeCount,
    EdgeCount,
    CycleCheck,
    TriangleCount,
    NodeDegree(usize),
    ConnectedNodes(usize),
    Reachability(usize, usize),
    EdgeExistence(usize, usize),
    ShortestPath(usize, usize),
}

impl GraphQuery {
    pub fn question(&self) -> String {
        match *self {
            GraphQuery::NodeCount => "How many nodes are in this graph?".into(),
            GraphQuery::EdgeCount => "How many edges are in this graph?".into(),
            GraphQuery::CycleCheck => "Is there a cycle in this graph?".into(),
            GraphQuery::TriangleCount => "How many triangles are in this graph?".into(),
            GraphQuery::NodeDegree(a) => format!("What is the degree of node {a}?"),
            GraphQuery::ConnectedNodes(a) => format!("Which nodes are connected to node {a}?"),
            GraphQuery::Reachability(a, b) => format!("Is there a directed path from node {a} to node {b}?"),
            GraphQuery::EdgeExistence(a, b) => format!("Is there an edge from node {a} to node {b}?"),
            GraphQuery::ShortestPath(a, b) => format!("What is the length of the shortest path from node {a} to node {b}?"),
        }
    }

    /// Abstract nodes the prompt node links to.
    fn anchors(&self) -> Vec<usize> {
        match *self {
            GraphQuery::NodeDegree(a) | GraphQuery::ConnectedNodes(a) => vec![a],
            GraphQuery::Reachability(a, b) | GraphQuery::EdgeExistence(a, b) | GraphQuery::ShortestPath(a, b) => vec![a, b],
            _ => Vec::new(),
        }
    }
}

/// Ground truth by direct graph algorithms. Degree counts in- plus out-edges; neighbor lists and
/// triangles use the undirected view; cycles, reachability and paths follow edge direction.
pub fn graphqa_label(g: &Digraph, q: GraphQuery) -> String {
    match q {
        GraphQuery::NodeCount => g.n.to_string(),
        GraphQuery::EdgeCount => g.edges.len().to_string(),
        GraphQuery::CycleCheck => yes_no(g.has_cycle()),
        GraphQuery::TriangleCount => g.triangles().to_string(),
        GraphQuery::NodeDegree(a) => g.edges.iter().filter(|&&(s, d)| s == a || d == a).count().to_string(),
        GraphQuery::ConnectedNodes(a) => {
            let nb = &g.undirected()[a];
            if nb.is_empty() {
                "None".into()
            } else {
                nb.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
            }
        }
        GraphQuery::Reachability(a, b) => yes_no(g.bfs(a)[b].is_some()),
        GraphQuery::EdgeExistence(a, b) => yes_no(g.edges.binary_search(&(a, b)).is_ok()),
        GraphQuery::ShortestPath(a, b) => g.bfs(a)[b].map_or_else(|| "No path".into(), |d| d.to_string()),
    }
}

fn random_digraph(rng: &mut ChaCha8Rng, n: usize, acyclic: bool) -> Digraph {
    let p: f64 = rng.random_range(0.1..0.4);
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j || (acyclic && i >= j) {
                continue;
            }
            if rng.random_bool(p) {
                edges.push((order[i], order[j]));
            }
        }
    }
    Digraph::new(n, &edges)
}

/// Wraps an abstract graph as a record: abstract node `k` becomes node `k + 1` with text `k`;
/// node 0 is the prompt node, linked to the queried nodes.
pub(crate) fn to_record(g: &Digraph, q: GraphQuery, label: String) -> QaRecord {
    let mut texts = vec![PROMPT_TEXT.to_string()];
    texts.extend((0..g.n).map(|k| k.to_string()));
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let mut edges: Vec<(usize, usize)> = g.edges.iter().map(|&(a, b)| (a + 1, b + 1)).collect();
    edges.extend(q.anchors().into_iter().map(|a| (0, a + 1)));
    let graph = TextAttributedGraph::from_texts(&refs, &edges).expect("generated graph is valid");
    QaRecord { graph, question: q.question(), label }
}

fn pick_pair(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    (a, b)
}

fn one(rng: &mut ChaCha8Rng, task: Task, sizes: (usize, usize), want_yes: bool) -> QaRecord {
    // yes/no tasks retry a few draws to keep the classes near balance
    for attempt in 0..64 {
        // sizes count the prompt node
        let n = rng.random_range(sizes.0..=sizes.1) - 1;
        let acyclic = (task == Task::CycleCheck && !want_yes) || rng.random_bool(0.5);
        let g = random_digraph(rng, n, acyclic);
        let q = match task {
            Task::NodeCount => GraphQuery::NodeCount,
            Task::EdgeCount => GraphQuery::EdgeCount,
            Task::CycleCheck => GraphQuery::CycleCheck,
            Task::TriangleCount => GraphQuery::TriangleCount,
            Task::NodeDegree => GraphQuery::NodeDegree(rng.random_range(0..n)),
            Task::ConnectedNodes => GraphQuery::ConnectedNodes(rng.random_range(0..n)),
            Task::Reachability => {
                let (a, b) = pick_pair(rng, n);
                GraphQuery::Reachability(a, b)
            }
            Task::EdgeExistence => {
                let (a, b) = if want_yes && !g.edges.is_empty() {
                    g.edges[rng.random_range(0..g.edges.len())]
                } else {
                    pick_pair(rng, n)
                };
                GraphQuery::EdgeExistence(a, b)
            }
            Task::ShortestPath => {
                let (a, b) = pick_pair(rng, n);
                GraphQuery::ShortestPath(a, b)
            }
            _ => unreachable!("not a graph question task"),
        };
        let label = graphqa_label(&g, q);
        let balanced = task.answer_format() != super::AnswerFormat::YesNo || (label == "Yes") == want_yes;
        if balanced || attempt == 63 {
            return to_record(&g, q, label);
        }
    }
    unreachable!()
}

pub fn gen_graphqa(spec: &TaskSpec, split: Split) -> Result<Vec<QaRecord>, DataError> {
    if !spec.task.is_graphqa() {
        return Err(DataError::UnknownTask(spec.task.to_string()));
    }
    spec.check_sizes(3, 64)?;
    let mut rng = spec.rng(split);
    Ok((0..spec.count(split)).map(|i| one(&mut rng, spec.task, spec.sizes, i % 2 == 0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_of_k3() {
        let k3 = Digraph::new(3, &[(0, 1), (1, 2), (2, 0)]);
        assert_eq!(graphqa_label(&k3, GraphQuery::TriangleCount), "1");
        let both = Digraph::new(3, &[(0, 1), (1, 0), (1, 2), (0, 2)]);
        assert_eq!(graphqa_label(&both, GraphQuery::TriangleCount), "1");
    }

    #[test]
    fn tree_has_no_cycle() {
        let tree = Digraph::new(5, &[(0, 1), (0, 2), (1, 3), (1, 4)]);
        assert_eq!(graphqa_label(&tree, GraphQuery::CycleCheck), "No");
        let cyc = Digraph::new(3, &[(0, 1), (1, 2), (2, 0)]);
        assert_eq!(graphqa_label(&cyc, GraphQuery::CycleCheck), "Yes");
    }

    #[test]
    fn shortest_path_on_a_path() {
        let p = Digraph::new(4, &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(graphqa_label(&p, GraphQuery::ShortestPath(0, 3)), "3");
        assert_eq!(graphqa_label(&p, GraphQuery::ShortestPath(3, 0)), "No path");
        assert_eq!(graphqa_label(&p, GraphQuery::Reachability(0, 3)), "Yes");
        assert_eq!(graphqa_label(&p, GraphQuery::NodeDegree(1)), "2");
        assert_eq!(graphqa_label(&p, GraphQuery::ConnectedNodes(2)), "1, 3");
        assert_eq!(graphqa_label(&Digraph::new(2, &[]), GraphQuery::ConnectedNodes(0)), "None");
    }

    #[test]
    fn records_link_prompt_to_queried_nodes() {
        let p = Digraph::new(4, &[(0, 1), (1, 2), (2, 3)]);
        let r = to_record(&p, GraphQuery::ShortestPath(0, 3), "3".into());
        assert_eq!(r.graph.n_nodes(), 5);
        assert!(r.graph.edges.contains(&(0, 1)) && r.graph.edges.contains(&(0, 4)));
        assert_eq!(r.graph.nodes[4].raw_text, "3");
        let r = to_record(&p, GraphQuery::NodeCount, "4".into());
        assert!(r.graph.edges.iter().all(|&(a, _)| a != 0));
    }

    #[test]
    fn generation_is_reproducible_and_balanced() {
        let spec = TaskSpec::new(Task::Reachability, 3).with_counts(200, 10, 10);
        let a = gen_graphqa(&spec, Split::Train).unwrap();
        assert_eq!(a, gen_graphqa(&spec, Split::Train).unwrap());
        let yes = a.iter().filter(|r| r.label == "Yes").count();
        assert!((80..=120).contains(&yes), "{yes}");
    }
}
