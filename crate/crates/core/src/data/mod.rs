//! Seeded generators for every evaluation task, plus exact-match accuracy scoring.
//!
//! Each split draws from its own ChaCha stream of the task seed, so splits never share a draw
//! and regenerating with the same spec gives byte-identical files.

mod family;
mod graphqa;
mod kgqa;
mod probe;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{append_prompt, append_question, save_graphs, GraphError, QaRecord, TextAttributedGraph};
use crate::model::{DecodeMode, GtlmModel, ModelError};
use crate::tensor::Real;

pub use family::{family_question, gen_family_tree, gen_tree, Attribute, FamilyQuery, FamilyTree, Gender, Person, Relation};
pub use graphqa::{gen_graphqa, graphqa_label, Digraph, GraphQuery};
pub use kgqa::{balanced_questions, gen_graph as gen_kg_graph, gen_kgqa, kg_record, EntityKind, KgEntity, KgGraph, KgQuestion, QUESTIONS_PER_GRAPH};
pub use probe::{gen_component_probe, gen_directed_reachability};

/// Base text of the question-bearing target node.
pub const PROMPT_TEXT: &str = "Query";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("ambiguous anchor: {0} names more than one person")]
    AmbiguousAnchor(String),
    #[error("query has no answer in this graph")]
    NoAnswer,
    #[error("rejection budget of {0} draws exhausted")]
    RejectionBudgetExceeded(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    NodeCount,
    EdgeCount,
    CycleCheck,
    TriangleCount,
    NodeDegree,
    ConnectedNodes,
    Reachability,
    EdgeExistence,
    ShortestPath,
    FamilyTree,
    KgQa,
    ComponentProbe,
    DirectedReachability,
}

impl Task {
    pub const ALL: [Task; 13] = [
        Task::NodeCount,
        Task::EdgeCount,
        Task::CycleCheck,
        Task::TriangleCount,
        Task::NodeDegree,
        Task::ConnectedNodes,
        Task::Reachability,
        Task::EdgeExistence,
        Task::ShortestPath,
        Task::FamilyTree,
        Task::KgQa,
        Task::ComponentProbe,
        Task::DirectedReachability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::NodeCount => "node-count",
            Task::EdgeCount => "edge-count",
            Task::CycleCheck => "cycle-check",
            Task::TriangleCount => "triangle-count",
            Task::NodeDegree => "node-degree",
            Task::ConnectedNodes => "connected-nodes",
            Task::Reachability => "reachability",
            Task::EdgeExistence => "edge-existence",
            Task::ShortestPath => "shortest-path",
            Task::FamilyTree => "family-tree",
            Task::KgQa => "kg-qa",
            Task::ComponentProbe => "component-probe",
            Task::DirectedReachability => "directed-reachability",
        }
    }

    pub fn is_graphqa(self) -> bool {
        !matches!(self, Task::FamilyTree | Task::KgQa | Task::ComponentProbe | Task::DirectedReachability)
    }

    pub fn answer_format(self) -> AnswerFormat {
        match self {
            Task::CycleCheck
            | Task::Reachability
            | Task::EdgeExistence
            | Task::KgQa
            | Task::ComponentProbe
            | Task::DirectedReachability => AnswerFormat::YesNo,
            Task::NodeCount | Task::EdgeCount | Task::TriangleCount | Task::NodeDegree => AnswerFormat::Integer,
            Task::ShortestPath | Task::ConnectedNodes | Task::FamilyTree => AnswerFormat::Free,
        }
    }

    /// Default `(min, max)` sizes: total node counts for graph tasks and probes, entity counts
    /// for knowledge graphs, generation counts for family trees.
    pub fn default_sizes(self) -> (usize, usize) {
        match self {
            Task::FamilyTree => (3, 3),
            Task::KgQa => (30, 50),
            Task::ComponentProbe | Task::DirectedReachability => (8, 14),
            _ => (5, 15),
        }
    }

    pub fn default_counts(self) -> SplitCounts {
        match self {
            Task::FamilyTree => SplitCounts { train: 3500, val: 200, test: 1000 },
            // graphs; each carries six questions
            Task::KgQa => SplitCounts { train: 500, val: 30, test: 150 },
            Task::ComponentProbe | Task::DirectedReachability => SplitCounts { train: 2000, val: 200, test: 400 },
            _ => SplitCounts { train: 1000, val: 100, test: 200 },
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| DataError::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerFormat {
    YesNo,
    Integer,
    Free,
    Labels(Vec<String>),
}

impl AnswerFormat {
    /// Closed answer sets decode under a constraint; open ones decode freely.
    pub fn decode_mode(&self, max_new_tokens: usize) -> DecodeMode {
        match self {
            AnswerFormat::YesNo => DecodeMode::Labels(vec!["Yes".into(), "No".into()]),
            AnswerFormat::Labels(l) => DecodeMode::Labels(l.clone()),
            AnswerFormat::Integer | AnswerFormat::Free => DecodeMode::Free { max_new_tokens },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn scaled(self, factor: f64) -> Self {
        let s = |n: usize| ((n as f64 * factor).round() as usize).max(usize::from(n > 0));
        Self { train: s(self.train), val: s(self.val), test: s(self.test) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task: Task,
    pub sizes: (usize, usize),
    pub counts: SplitCounts,
    pub seed: u64,
    pub answer_format: AnswerFormat,
    /// Number of isolated components in the connectivity probe.
    #[serde(default = "default_components")]
    pub components: usize,
    /// Success probability of the geometric degree draws in the knowledge-graph task.
    #[serde(default = "default_geometric_p")]
    pub geometric_p: f64,
}

fn default_components() -> usize {
    2
}

fn default_geometric_p() -> f64 {
    0.5
}

impl TaskSpec {
    pub fn new(task: Task, seed: u64) -> Self {
        Self {
            task,
            sizes: task.default_sizes(),
            counts: task.default_counts(),
            seed,
            answer_format: task.answer_format(),
            components: default_components(),
            geometric_p: default_geometric_p(),
        }
    }

    pub fn with_counts(mut self, train: usize, val: usize, test: usize) -> Self {
        self.counts = SplitCounts { train, val, test };
        self
    }

    pub fn with_sizes(mut self, min: usize, max: usize) -> Self {
        self.sizes = (min, max);
        self
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.counts.train,
            Split::Val => self.counts.val,
            Split::Test => self.counts.test,
        }
    }

    /// Independent generator stream for `split`.
    pub fn rng(&self, split: Split) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(split.stream());
        rng
    }

    fn check_sizes(&self, lo: usize, hi: usize) -> Result<(), DataError> {
        let (a, b) = self.sizes;
        if a > b || a < lo || b > hi {
            return Err(DataError::InvalidSpec(format!("size range {a}..={b} must lie within {lo}..={hi}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub train: Vec<QaRecord>,
    pub val: Vec<QaRecord>,
    pub test: Vec<QaRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[QaRecord] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Writes `train.jsonl`, `val.jsonl`, `test.jsonl` and `spec.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DataError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| GraphError::Io(e.to_string()))?;
        for s in Split::ALL {
            save_graphs(dir.join(format!("{}.jsonl", s.name())), self.split(s))?;
        }
        let spec = serde_json::to_string_pretty(&self.spec).expect("spec serializes");
        std::fs::write(dir.join("spec.json"), spec).map_err(|e| GraphError::Io(e.to_string()))?;
        Ok(())
    }
}

/// Generates all three splits for `spec.task`.
pub fn generate(spec: &TaskSpec) -> Result<Dataset, DataError> {
    let per_split = |f: &dyn Fn(&TaskSpec, Split) -> Result<Vec<QaRecord>, DataError>| -> Result<Dataset, DataError> {
        Ok(Dataset { spec: spec.clone(), train: f(spec, Split::Train)?, val: f(spec, Split::Val)?, test: f(spec, Split::Test)? })
    };
    match spec.task {
        t if t.is_graphqa() => per_split(&gen_graphqa),
        Task::FamilyTree => per_split(&gen_family_tree),
        Task::KgQa => per_split(&gen_kgqa),
        Task::ComponentProbe => per_split(&gen_component_probe),
        Task::DirectedReachability => per_split(&gen_directed_reachability),
        _ => unreachable!("every task is dispatched"),
    }
}

/// Target graph with the question and label appended, ready for training.
pub fn training_graph(r: &QaRecord) -> Result<TextAttributedGraph, GraphError> {
    append_question(&r.graph, &r.question, &r.label)
}

/// Target graph with the question template and no label, ready for decoding.
pub fn prompt_graph(r: &QaRecord) -> Result<TextAttributedGraph, GraphError> {
    append_prompt(&r.graph, &r.question)
}

/// Lowercase, trimmed, inner whitespace collapsed to single spaces.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub question: String,
    pub gold: String,
    pub predicted: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub n: usize,
    pub records: Vec<EvalRecord>,
}

pub fn score(predictions: &[(String, &QaRecord)]) -> AccuracyReport {
    let records: Vec<EvalRecord> = predictions
        .iter()
        .map(|(p, r)| EvalRecord {
            question: r.question.clone(),
            gold: r.label.clone(),
            predicted: p.clone(),
            correct: normalize_answer(p) == normalize_answer(&r.label),
        })
        .collect();
    let n = records.len();
    let hits = records.iter().filter(|r| r.correct).count();
    AccuracyReport { accuracy: if n == 0 { 0.0 } else { hits as f64 / n as f64 }, n, records }
}

/// Greedy-decodes every record (constrained to the label set when the format is closed) and
/// scores exact match after [`normalize_answer`].
pub fn evaluate_accuracy<F: Real>(
    model: &GtlmModel<F>,
    records: &[QaRecord],
    format: &AnswerFormat,
    max_new_tokens: usize,
) -> Result<AccuracyReport, DataError> {
    let mode = format.decode_mode(max_new_tokens);
    let preds: Vec<String> = records
        .par_iter()
        .map(|r| Ok(model.decode(&prompt_graph(r)?, &mode)?))
        .collect::<Result<_, DataError>>()?;
    let pairs: Vec<(String, &QaRecord)> = preds.into_iter().zip(records).collect();
    Ok(score(&pairs))
}

fn yes_no(b: bool) -> String {
    if b { "Yes" } else { "No" }.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(label: &str) -> QaRecord {
        QaRecord { graph: TextAttributedGraph::from_texts(&["q"], &[]).unwrap(), question: "?".into(), label: label.into() }
    }

    #[test]
    fn task_names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert!(matches!("bogus".parse::<Task>(), Err(DataError::UnknownTask(_))));
    }

    #[test]
    fn normalization_fixture() {
        assert_eq!(normalize_answer("  yes \n"), "yes");
        assert_eq!(normalize_answer("No   path"), normalize_answer("no path"));
        let gold = [rec("Yes"), rec("No path"), rec("3")];
        let preds = vec![("YES ".to_string(), &gold[0]), ("no  Path".to_string(), &gold[1]), ("4".to_string(), &gold[2])];
        let r = score(&preds);
        assert_eq!(r.n, 3);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gold_echo_is_perfect_and_constant_yes_is_half() {
        let gold: Vec<QaRecord> = (0..10).map(|i| rec(if i % 2 == 0 { "Yes" } else { "No" })).collect();
        let echo: Vec<(String, &QaRecord)> = gold.iter().map(|r| (r.label.clone(), r)).collect();
        assert_eq!(score(&echo).accuracy, 1.0);
        let yes: Vec<(String, &QaRecord)> = gold.iter().map(|r| ("Yes".to_string(), r)).collect();
        assert_eq!(score(&yes).accuracy, 0.5);
    }

    #[test]
    fn splits_use_distinct_streams() {
        use rand::Rng;
        let spec = TaskSpec::new(Task::NodeCount, 9);
        let a: u64 = spec.rng(Split::Train).random();
        let b: u64 = spec.rng(Split::Val).random();
        assert_ne!(a, b);
        assert_eq!(a, spec.rng(Split::Train).random::<u64>());
    }

    #[test]
    fn scaled_counts_keep_nonzero_splits() {
        let c = SplitCounts { train: 3500, val: 200, test: 1000 }.scaled(0.001);
        assert_eq!(c, SplitCounts { train: 4, val: 1, test: 1 });
    }
}
