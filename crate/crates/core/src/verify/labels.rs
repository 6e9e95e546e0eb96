//! Label oracles that read only the rendered record: node texts, edges and question text.
//! Each uses a different algorithm from its generator.

use std::collections::HashMap;

use super::{Check, VerifyError};
use crate::data::{generate, Split, Task, TaskSpec};
use crate::graph::{QaRecord, TARGET};

fn bad(msg: impl Into<String>) -> VerifyError {
    VerifyError::Precondition(msg.into())
}

fn yes_no(b: bool) -> String {
    if b { "Yes" } else { "No" }.to_string()
}

fn numbers(s: &str) -> Vec<usize> {
    s.split(|c: char| !c.is_ascii_digit()).filter(|t| !t.is_empty()).filter_map(|t| t.parse().ok()).collect()
}

/// Edges with neither endpoint at the prompt node, as a boolean matrix.
fn prefix_matrix(r: &QaRecord) -> Vec<Vec<bool>> {
    let n = r.graph.n_nodes();
    let mut a = vec![vec![false; n]; n];
    for &(s, d) in &r.graph.edges {
        if s != TARGET && d != TARGET {
            a[s][d] = true;
        }
    }
    a
}

/// Warshall closure; `c[i][j]` means a directed path of length ≥ 1.
fn closure(a: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let n = a.len();
    let mut c = a.to_vec();
    for k in 0..n {
        for i in 0..n {
            if c[i][k] {
                for j in 0..n {
                    c[i][j] |= c[k][j];
                }
            }
        }
    }
    c
}

fn node_by_text(r: &QaRecord, text: &str) -> Result<usize, VerifyError> {
    let hits: Vec<usize> = (1..r.graph.n_nodes()).filter(|&u| r.graph.nodes[u].raw_text == text).collect();
    match hits.as_slice() {
        [u] => Ok(*u),
        _ => Err(bad(format!("{} nodes carry text '{text}'", hits.len()))),
    }
}

fn graphqa_oracle(task: Task, r: &QaRecord) -> Result<String, VerifyError> {
    let a = prefix_matrix(r);
    let n = a.len();
    let ids = numbers(&r.question);
    let node = |k: usize| -> Result<usize, VerifyError> {
        let id = *ids.get(k).ok_or_else(|| bad("question names too few nodes"))?;
        node_by_text(r, &id.to_string())
    };
    let adj = |u: usize, v: usize| a[u][v] || a[v][u];
    Ok(match task {
        Task::NodeCount => (n - 1).to_string(),
        Task::EdgeCount => a.iter().flatten().filter(|&&x| x).count().to_string(),
        Task::CycleCheck => yes_no((1..n).any(|u| closure(&a)[u][u])),
        Task::TriangleCount => {
            let mut t = 0;
            for i in 1..n {
                for j in i + 1..n {
                    for k in j + 1..n {
                        t += usize::from(adj(i, j) && adj(j, k) && adj(i, k));
                    }
                }
            }
            t.to_string()
        }
        Task::NodeDegree => {
            let u = node(0)?;
            (0..n).map(|v| usize::from(a[u][v]) + usize::from(a[v][u])).sum::<usize>().to_string()
        }
        Task::ConnectedNodes => {
            let u = node(0)?;
            let mut ids: Vec<usize> =
                (1..n).filter(|&v| v != u && adj(u, v)).map(|v| r.graph.nodes[v].raw_text.parse().unwrap_or(usize::MAX)).collect();
            ids.sort_unstable();
            if ids.is_empty() {
                "None".into()
            } else {
                ids.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
            }
        }
        Task::Reachability => yes_no(closure(&a)[node(0)?][node(1)?]),
        Task::EdgeExistence => yes_no(a[node(0)?][node(1)?]),
        Task::ShortestPath => {
            // Floyd–Warshall with unit weights
            let inf = usize::MAX / 4;
            let mut d = vec![vec![inf; n]; n];
            for i in 0..n {
                d[i][i] = 0;
                for j in 0..n {
                    if a[i][j] {
                        d[i][j] = 1;
                    }
                }
            }
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
                    }
                }
            }
            let x = d[node(0)?][node(1)?];
            if x >= inf {
                "No path".into()
            } else {
                x.to_string()
            }
        }
        _ => return Err(bad(format!("{task} is not a graph question task"))),
    })
}

struct Member {
    name: String,
    gender: String,
    born: i64,
    fields: HashMap<String, String>,
}

fn parse_member(text: &str) -> Result<Member, VerifyError> {
    let mut parts = text.split("; ");
    let name = parts.next().ok_or_else(|| bad("empty person text"))?.to_string();
    let mut fields = HashMap::new();
    for p in parts {
        let (k, v) = p.split_once(": ").ok_or_else(|| bad(format!("malformed field '{p}'")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let gender = fields.get("gender").cloned().ok_or_else(|| bad("missing gender"))?;
    let born: i64 = fields.get("born").and_then(|b| b.parse().ok()).ok_or_else(|| bad("missing birth year"))?;
    fields.insert("birth year".into(), born.to_string());
    Ok(Member { name, gender, born, fields })
}

fn family_oracle(r: &QaRecord) -> Result<String, VerifyError> {
    let n = r.graph.n_nodes();
    let people: Vec<Member> = (1..n).map(|u| parse_member(&r.graph.nodes[u].raw_text)).collect::<Result<_, _>>()?;
    let p = |u: usize| &people[u - 1];
    let a = prefix_matrix(r);
    let spouse = |u: usize, v: usize| a[u][v] && a[v][u];
    let child = |u: usize, v: usize| a[u][v] && !a[v][u];

    let q = r.question.strip_prefix("What is the ").and_then(|s| s.strip_suffix('?')).ok_or_else(|| bad("unknown question form"))?;
    let (attr, rest) = q.split_once(" of ").ok_or_else(|| bad("missing attribute"))?;
    let (name, relation) = rest.rsplit_once("'s ").ok_or_else(|| bad("missing relation"))?;
    let anchors: Vec<usize> = (1..n).filter(|&u| p(u).name == name).collect();
    let [anchor] = anchors[..] else { return Err(bad(format!("anchor '{name}' is not unique"))) };

    let words: Vec<&str> = relation.split(' ').collect();
    let (rank, role) = match words.as_slice() {
        [role] => (1, *role),
        ["oldest", role] => (1, *role),
        [ord, "oldest", role] => (numbers(ord).first().copied().ok_or_else(|| bad("bad ordinal"))?, *role),
        _ => return Err(bad(format!("unknown relation '{relation}'"))),
    };
    let mut candidates: Vec<usize> = match role {
        "spouse" => (1..n).filter(|&v| spouse(anchor, v)).collect(),
        "father" | "mother" => (1..n).filter(|&v| child(v, anchor)).collect(),
        "son" | "daughter" => (1..n).filter(|&v| child(anchor, v)).collect(),
        "grandson" | "granddaughter" => {
            (1..n).filter(|&v| (1..n).any(|m| child(anchor, m) && child(m, v))).collect()
        }
        _ => return Err(bad(format!("unknown role '{role}'"))),
    };
    let gender = match role {
        "father" | "son" | "grandson" => Some("male"),
        "mother" | "daughter" | "granddaughter" => Some("female"),
        _ => None,
    };
    if let Some(gd) = gender {
        candidates.retain(|&v| p(v).gender == gd);
    }
    candidates.sort_by_key(|&v| (p(v).born, r.graph.nodes[v].node_id.parse::<usize>().unwrap_or(v)));
    let who = *candidates.get(rank - 1).ok_or_else(|| bad("relative does not exist"))?;
    p(who).fields.get(attr).cloned().ok_or_else(|| bad(format!("unknown attribute '{attr}'")))
}

fn kg_oracle(r: &QaRecord) -> Result<String, VerifyError> {
    let n = r.graph.n_nodes();
    let mut kind = vec![String::new(); n];
    let mut by_name = HashMap::new();
    for u in 1..n {
        let (name, k) = r.graph.nodes[u].raw_text.split_once("; type: ").ok_or_else(|| bad("malformed entity"))?;
        kind[u] = k.to_string();
        by_name.insert(name.to_string(), u);
    }
    let id = |s: &str| by_name.get(s).copied().ok_or_else(|| bad(format!("unknown entity '{s}'")));
    let a = prefix_matrix(r);
    let typed = |s: &str, d: &str| -> Vec<Vec<bool>> {
        (0..n).map(|u| (0..n).map(|v| a[u][v] && kind[u] == s && kind[v] == d).collect()).collect()
    };
    let reports = closure(&typed("person", "person"));
    let access = typed("person", "resource");
    let requires = typed("project", "resource");
    let q = r.question.as_str();
    let answer = if let Some(x) = q.strip_prefix("Is ").and_then(|s| s.strip_suffix(" the CEO (has no boss)?")) {
        let x = id(x)?;
        !(0..n).any(|v| typed("person", "person")[x][v])
    } else if let Some(rest) = q.strip_prefix("Does ").and_then(|s| s.strip_suffix(" directly or indirectly?")) {
        let (x, y) = rest.split_once(" report to ").ok_or_else(|| bad("malformed report question"))?;
        reports[id(x)?][id(y)?]
    } else if let Some(rest) = q.strip_prefix("Does ").and_then(|s| s.strip_suffix('?')).filter(|s| s.contains(" have access to every resource required by ")) {
        let (x, p) = rest.split_once(" have access to every resource required by ").expect("checked");
        let (x, p) = (id(x)?, id(p)?);
        let needed: Vec<usize> = (0..n).filter(|&v| requires[p][v]).collect();
        let held: Vec<usize> = (0..n).filter(|&v| access[x][v]).collect();
        needed.iter().all(|v| held.contains(v))
    } else if let Some(rest) = q.strip_prefix("Does ").and_then(|s| s.strip_suffix('?')).filter(|s| s.contains(" or anyone reporting to ")) {
        let (x, rest) = rest.split_once(" or anyone reporting to ").expect("checked");
        let (_, res) = rest.split_once(" have access to ").ok_or_else(|| bad("malformed access question"))?;
        let (x, res) = (id(x)?, id(res)?);
        (0..n).filter(|&p| p == x || reports[p][x]).any(|p| access[p][res])
    } else {
        return Err(bad(format!("unknown question '{q}'")));
    };
    Ok(yes_no(answer))
}

fn letters_in(q: &str, prefix: &str, suffix: &str) -> Result<(String, String), VerifyError> {
    let mid = q.strip_prefix(prefix).and_then(|s| s.strip_suffix(suffix)).ok_or_else(|| bad("unknown question form"))?;
    let (x, y) = mid.split_once(" and ").ok_or_else(|| bad("expected two nodes"))?;
    Ok((x.to_string(), y.to_string()))
}

fn component_oracle(r: &QaRecord) -> Result<String, VerifyError> {
    let (x, y) = letters_in(&r.question, "Are the nodes ", " connected?")?;
    let (x, y) = (node_by_text(r, &x)?, node_by_text(r, &y)?);
    // union-find over the prefix edges
    let n = r.graph.n_nodes();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &[usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    for &(a, b) in &r.graph.edges {
        if a != TARGET && b != TARGET {
            let (ra, rb) = (root(&parent, a), root(&parent, b));
            parent[ra] = rb;
        }
    }
    Ok(yes_no(root(&parent, x) == root(&parent, y)))
}

fn directed_oracle(r: &QaRecord) -> Result<String, VerifyError> {
    let (x, y) = letters_in(&r.question, "Is there a directed path between nodes ", "?")?;
    let (x, y) = (node_by_text(r, &x)?, node_by_text(r, &y)?);
    // reachability by repeated boolean squaring of (I + A)
    let a = prefix_matrix(r);
    let n = a.len();
    let mut m: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i == j || a[i][j]).collect()).collect();
    let mut span = 1;
    while span < n {
        m = (0..n).map(|i| (0..n).map(|j| (0..n).any(|k| m[i][k] && m[k][j])).collect()).collect();
        span *= 2;
    }
    Ok(yes_no(m[x][y] || m[y][x]))
}

/// Recomputes the label of `r` from its rendered form.
pub fn oracle_label(task: Task, r: &QaRecord) -> Result<String, VerifyError> {
    match task {
        Task::FamilyTree => family_oracle(r),
        Task::KgQa => kg_oracle(r),
        Task::ComponentProbe => component_oracle(r),
        Task::DirectedReachability => directed_oracle(r),
        t => graphqa_oracle(t, r),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementReport {
    pub task: Task,
    pub checked: usize,
    pub disagreements: Vec<(String, String, String)>,
}

impl AgreementReport {
    pub fn agreement(&self) -> f64 {
        1.0 - self.disagreements.len() as f64 / self.checked.max(1) as f64
    }
}

/// Generates at least `n` test-split records of `task` and compares every label with its oracle.
pub fn check_generator_agreement(task: Task, n: usize, seed: u64) -> Result<AgreementReport, VerifyError> {
    let per = if task == Task::KgQa { n.div_ceil(crate::data::QUESTIONS_PER_GRAPH) } else { n };
    let spec = TaskSpec::new(task, seed).with_counts(0, 0, per);
    let data = generate(&spec)?;
    let mut disagreements = Vec::new();
    let records = data.split(Split::Test);
    for r in records {
        let o = match oracle_label(task, r) {
            Ok(o) => o,
            Err(e) => format!("<oracle error: {e}>"),
        };
        if o != r.label {
            disagreements.push((r.question.clone(), r.label.clone(), o));
        }
    }
    Ok(AgreementReport { task, checked: records.len(), disagreements })
}

pub fn agreement_battery(n: usize, seed: u64) -> Result<Vec<Check>, VerifyError> {
    Task::ALL
        .iter()
        .map(|&t| {
            let r = check_generator_agreement(t, n, seed)?;
            Ok(Check::new(format!("generator-oracle/{t}"), r.disagreements.is_empty())
                .metric("instances", r.checked as f64)
                .metric("agreement", r.agreement()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_task_agrees_on_a_small_sample() {
        for t in Task::ALL {
            let r = check_generator_agreement(t, 60, 21).unwrap();
            assert!(r.disagreements.is_empty(), "{t}: {:?}", &r.disagreements[..r.disagreements.len().min(3)]);
            assert!(r.checked >= 60);
        }
    }
}
