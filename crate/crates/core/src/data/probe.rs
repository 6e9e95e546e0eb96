//! Probe tasks over letter-labelled nodes: component membership, and directed reachability
//! where the shortest-path distance between the queried pair is always 2.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{yes_no, DataError, Split, TaskSpec, PROMPT_TEXT};
use crate::graph::{GraphError, QaRecord, TextAttributedGraph};

fn letters(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut all: Vec<char> = ('A'..='Z').collect();
    all.shuffle(rng);
    all[..n].iter().map(|c| c.to_string()).collect()
}

/// Splits `m` nodes into `k` parts of at least two.
fn part_sizes(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Vec<usize> {
    let mut sizes = vec![2; k];
    for _ in 0..m - 2 * k {
        sizes[rng.random_range(0..k)] += 1;
    }
    sizes
}

/// Random spanning tree plus a few chords over `nodes`, as undirected pairs.
fn connected_pairs(rng: &mut ChaCha8Rng, nodes: &[usize]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 1..nodes.len() {
        pairs.push((nodes[rng.random_range(0..i)], nodes[i]));
    }
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            let e = (nodes[i], nodes[j]);
            if !pairs.contains(&e) && !pairs.contains(&(e.1, e.0)) && rng.random_bool(0.15) {
                pairs.push(e);
            }
        }
    }
    pairs
}

fn record(texts: Vec<String>, edges: Vec<(usize, usize)>, question: String, label: bool) -> Result<QaRecord, DataError> {
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let graph = TextAttributedGraph::from_texts(&refs, &edges).map_err(GraphError::Invalid)?;
    Ok(QaRecord { graph, question, label: yes_no(label) })
}

/// `spec.components` isolated components stored with both edge directions; node 0 is the prompt,
/// linked to the two queried nodes. Labels alternate Yes, No, Yes, ...
pub fn gen_component_probe(spec: &TaskSpec, split: Split) -> Result<Vec<QaRecord>, DataError> {
    let k = spec.components;
    if k < 2 {
        return Err(DataError::InvalidSpec(format!("component probe needs at least 2 components, got {k}")));
    }
    spec.check_sizes(1 + 2 * k, 27)?;
    let mut rng = spec.rng(split);
    (0..spec.count(split))
        .map(|i| {
            let m = rng.random_range(spec.sizes.0..=spec.sizes.1) - 1;
            let mut nodes: Vec<usize> = (1..=m).collect();
            nodes.shuffle(&mut rng);
            let mut comps = Vec::new();
            let mut rest = nodes.as_slice();
            for s in part_sizes(&mut rng, m, k) {
                let (c, r) = rest.split_at(s);
                comps.push(c.to_vec());
                rest = r;
            }
            let mut edges = Vec::new();
            for c in &comps {
                for (a, b) in connected_pairs(&mut rng, c) {
                    edges.push((a, b));
                    edges.push((b, a));
                }
            }
            let same = i % 2 == 0;
            let (x, y) = if same {
                let c = &comps[rng.random_range(0..k)];
                let mut two: Vec<usize> = c.choose_multiple(&mut rng, 2).copied().collect();
                two.shuffle(&mut rng);
                (two[0], two[1])
            } else {
                let two: Vec<&Vec<usize>> = comps.choose_multiple(&mut rng, 2).collect();
                let (a, b) = (*two[0].choose(&mut rng).unwrap(), *two[1].choose(&mut rng).unwrap());
                if rng.random_bool(0.5) { (a, b) } else { (b, a) }
            };
            edges.push((0, x));
            edges.push((0, y));
            let mut texts = vec![PROMPT_TEXT.to_string()];
            texts.extend(letters(&mut rng, m));
            let question = format!("Are the nodes {} and {} connected?", texts[x], texts[y]);
            record(texts, edges, question, same)
        })
        .collect()
}

fn directed_reach(out: &[Vec<usize>], s: usize, t: usize) -> bool {
    let mut seen = vec![false; out.len()];
    let mut stack = vec![s];
    while let Some(u) = stack.pop() {
        if u == t {
            return true;
        }
        if !std::mem::replace(&mut seen[u], true) {
            stack.extend(&out[u]);
        }
    }
    false
}

fn undirected_hops(n: usize, edges: &[(usize, usize)], s: usize) -> Vec<Option<usize>> {
    let mut nb = vec![Vec::new(); n];
    for &(a, b) in edges {
        nb[a].push(b);
        nb[b].push(a);
    }
    let mut dist = vec![None; n];
    dist[s] = Some(0);
    let mut q = std::collections::VecDeque::from([s]);
    while let Some(u) = q.pop_front() {
        for &v in &nb[u] {
            if dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                q.push_back(v);
            }
        }
    }
    dist
}

/// Random DAG prefix. The queried pair shares a weak component at undirected distance at least 2,
/// and both point into the prompt node, so every pair sees the same shortest-path bucket and only
/// edge direction decides the label. Labels alternate Yes, No, Yes, ...
pub fn gen_directed_reachability(spec: &TaskSpec, split: Split) -> Result<Vec<QaRecord>, DataError> {
    spec.check_sizes(5, 27)?;
    let mut rng = spec.rng(split);
    let mut out = Vec::with_capacity(spec.count(split));
    while out.len() < spec.count(split) {
        let want = out.len() % 2 == 0;
        let m = rng.random_range(spec.sizes.0..=spec.sizes.1) - 1;
        let mut order: Vec<usize> = (1..=m).collect();
        order.shuffle(&mut rng);
        let mut edges = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                if rng.random_bool(0.2) {
                    edges.push((order[i], order[j]));
                }
            }
        }
        let mut outn = vec![Vec::new(); m + 1];
        for &(a, b) in &edges {
            outn[a].push(b);
        }
        let mut candidates = Vec::new();
        for x in 1..=m {
            let hops = undirected_hops(m + 1, &edges, x);
            for y in x + 1..=m {
                if hops[y].is_some_and(|h| h >= 2)
                    && (directed_reach(&outn, x, y) || directed_reach(&outn, y, x)) == want
                {
                    candidates.push((x, y));
                }
            }
        }
        let Some(&(a, b)) = candidates.choose(&mut rng) else { continue };
        let (x, y) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        edges.push((x, 0));
        edges.push((y, 0));
        let mut texts = vec![PROMPT_TEXT.to_string()];
        texts.extend(letters(&mut rng, m));
        let question = format!("Is there a directed path between nodes {} and {}?", texts[x], texts[y]);
        out.push(record(texts, edges, question, want)?);
    }
    Ok(out)
}
