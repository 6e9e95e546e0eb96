//! Line-delimited JSON datasets: one `{nodes, edges, question, label}` record per line.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{to_incidence, validate_graph, GraphError, NodeRecord, TextAttributedGraph};

/// A graph plus its question and gold label. The target text is stored without the template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaRecord {
    pub graph: TextAttributedGraph,
    pub question: String,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphFormat {
    #[default]
    Standard,
    Incidence,
}

impl FromStr for GraphFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Self::Standard),
            "incidence" => Ok(Self::Incidence),
            other => Err(format!("unknown graph format '{other}' (expected standard|incidence)")),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireNode {
    id: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    nodes: Vec<WireNode>,
    edges: Vec<[usize; 2]>,
    question: String,
    label: String,
}

impl From<&QaRecord> for WireRecord {
    fn from(r: &QaRecord) -> Self {
        Self {
            nodes: r.graph.nodes.iter().map(|n| WireNode { id: n.node_id.clone(), text: n.raw_text.clone() }).collect(),
            edges: r.graph.edges.iter().map(|&(s, d)| [s, d]).collect(),
            question: r.question.clone(),
            label: r.label.clone(),
        }
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<QaRecord, GraphError> {
    let wire: WireRecord =
        serde_json::from_str(line).map_err(|e| GraphError::ParseError { line: lineno, message: e.to_string() })?;
    let nodes = wire.nodes.into_iter().map(|n| NodeRecord::new(n.id, n.text)).collect();
    let edges: Vec<(usize, usize)> = wire.edges.into_iter().map(|[s, d]| (s, d)).collect();
    let allow_self_loops = edges.iter().any(|&(s, d)| s == d);
    let graph = validate_graph(TextAttributedGraph { nodes, edges, allow_self_loops, answer: None })
        .map_err(|errs| GraphError::ParseError { line: lineno, message: format!("{errs:?}") })?;
    Ok(QaRecord { graph, question: wire.question, label: wire.label })
}

/// Parses dataset text. Blank lines are skipped; any malformed record reports its 1-based line.
pub fn parse_graphs(text: &str) -> Result<Vec<QaRecord>, GraphError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1))
        .collect()
}

/// Serializes records, one per line, with fixed field order.
pub fn write_graphs<W: Write>(mut w: W, records: &[QaRecord]) -> Result<(), GraphError> {
    for r in records {
        let line = serde_json::to_string(&WireRecord::from(r)).map_err(|e| GraphError::Io(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| GraphError::Io(e.to_string()))?;
    }
    Ok(())
}

pub fn save_graphs(path: impl AsRef<Path>, records: &[QaRecord]) -> Result<(), GraphError> {
    let mut buf = Vec::new();
    write_graphs(&mut buf, records)?;
    fs::write(path, buf).map_err(|e| GraphError::Io(e.to_string()))
}

pub fn load_graphs(path: impl AsRef<Path>) -> Result<Vec<QaRecord>, GraphError> {
    let text = fs::read_to_string(path).map_err(|e| GraphError::Io(e.to_string()))?;
    parse_graphs(&text)
}

/// Loads records and applies the incidence lift when requested.
pub fn load_graphs_as(path: impl AsRef<Path>, format: GraphFormat) -> Result<Vec<QaRecord>, GraphError> {
    let mut records = load_graphs(path)?;
    if format == GraphFormat::Incidence {
        for r in records.iter_mut() {
            r.graph = to_incidence(&r.graph);
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record() -> QaRecord {
        let g = TextAttributedGraph::from_texts(&["héllo \"world\"", "b\nc", "z"], &[(1, 0), (2, 1)]).unwrap();
        QaRecord { graph: g, question: "Is it?".into(), label: "Yes".into() }
    }

    #[test]
    fn round_trip_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let recs = vec![record(), record()];
        save_graphs(&path, &recs).unwrap();
        assert_eq!(load_graphs(&path).unwrap(), recs);
    }

    #[test]
    fn field_order_is_fixed() {
        let mut buf = Vec::new();
        write_graphs(&mut buf, &[record()]).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert!(line.starts_with("{\"nodes\":[{\"id\":\"0\",\"text\":"));
        let (e, q, l) = (line.find("\"edges\"").unwrap(), line.find("\"question\"").unwrap(), line.find("\"label\"").unwrap());
        assert!(e < q && q < l);
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let mut buf = Vec::new();
        write_graphs(&mut buf, &[record(), record()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() - 10];
        match parse_graphs(cut) {
            Err(GraphError::ParseError { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse_graphs("").unwrap().is_empty());
    }

    #[test]
    fn invalid_graph_is_a_parse_error() {
        let line = r#"{"nodes":[{"id":"0","text":"a"}],"edges":[[0,3]],"question":"","label":""}"#;
        assert!(matches!(parse_graphs(line), Err(GraphError::ParseError { line: 1, .. })));
    }

    #[test]
    fn incidence_format_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_graphs(&path, &[record()]).unwrap();
        let lifted = load_graphs_as(&path, GraphFormat::Incidence).unwrap();
        assert_eq!(lifted[0].graph.n_nodes(), 5);
        assert_eq!("incidence".parse::<GraphFormat>().unwrap(), GraphFormat::Incidence);
        assert!("weird".parse::<GraphFormat>().is_err());
    }

    proptest! {
        #[test]
        fn round_trip_preserves_bytes(texts in proptest::collection::vec("[^\u{0}]{1,12}", 1..6), q in ".*", l in ".*") {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let n = refs.len();
            let edges: Vec<_> = (1..n).map(|i| (i, i - 1)).collect();
            let g = TextAttributedGraph::from_texts(&refs, &edges).unwrap();
            let rec = QaRecord { graph: g, question: q, label: l };
            let mut buf = Vec::new();
            write_graphs(&mut buf, std::slice::from_ref(&rec)).unwrap();
            let back = parse_graphs(std::str::from_utf8(&buf).unwrap()).unwrap();
            prop_assert_eq!(back, vec![rec]);
        }
    }
}
