//! Command-line front end. Every subcommand resolves its flags into a [`RunConfig`], writes it as
//! `run.toml` beside its outputs, and can be replayed with `--config run.toml`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bias::count_parameters;
use crate::data::{self, evaluate_accuracy, prompt_graph, training_graph, AnswerFormat, Split, Task, TaskSpec};
use crate::features::compute_features;
use crate::graph::{load_graphs, QaRecord};
use crate::layout::identity_permutation;
use crate::model::{load_checkpoint, save_checkpoint, AdamState, DecodeMode, GtlmModel, Precision, TrainConfig};
use crate::tensor::Real;
use crate::verify::{probe_message_passing, run_battery};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Name of the resolved-config file written beside every output.
pub const RUN_CONFIG: &str = "run.toml";

#[derive(Debug, Parser)]
#[command(name = "gtlm", version, about = "Graph transformer language model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train/val/test JSONL).
    GenData(GenDataArgs),
    /// Compute structural features for every graph in a JSONL file.
    Features(FeaturesArgs),
    /// Run the verification battery and write a report.
    Verify(VerifyArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Decode answers for records in a JSONL file.
    Generate(GenerateArgs),
    /// Dump node-aggregated attention maps for one record.
    AttnDump(AttnDumpArgs),
    /// Print the bias parameter breakdown for a configuration.
    ParamCount(ParamCountArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Resolved config from an earlier run; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "GTLM_SEED")]
    seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
struct ModelArgs {
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_head: Option<usize>,
    #[arg(long)]
    d_ffn: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    max_spd: Option<usize>,
    #[arg(long)]
    rrwp_steps: Option<usize>,
    #[arg(long)]
    rrwp_hidden: Option<usize>,
    #[arg(long)]
    mag_q: Option<f64>,
    #[arg(long)]
    mag_dim: Option<usize>,
    #[arg(long)]
    deepset_hidden: Option<usize>,
    #[arg(long)]
    mag_hidden: Option<usize>,
    #[arg(long)]
    no_spd: bool,
    #[arg(long)]
    no_rrwp: bool,
    #[arg(long)]
    no_mag: bool,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    task: Option<Task>,
    /// Size range as `MIN..MAX`, `MIN,MAX` or a single value.
    #[arg(long, value_parser = parse_sizes)]
    sizes: Option<(usize, usize)>,
    /// Multiplies the default split counts.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    precision: Option<Precision>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory (uses `train.jsonl`) or a JSONL file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for the checkpoint, log and resolved config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_bias: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    precision: Option<Precision>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory (uses `test.jsonl` unless `--split` says otherwise) or a JSONL file.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    /// Answer format comes from this task; read from `spec.json` when omitted.
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    precision: Option<Precision>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Only decode this record.
    #[arg(long)]
    index: Option<usize>,
    /// Restrict decoding to these answers (comma separated).
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    precision: Option<Precision>,
}

#[derive(Debug, Args)]
struct AttnDumpArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    index: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    precision: Option<Precision>,
}

#[derive(Debug, Args)]
struct ParamCountArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
}

/// Everything a run depends on. Unknown keys are rejected when read back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub subcommand: String,
    pub paths: RunPaths,
    pub task: Option<Task>,
    pub sizes: Option<(usize, usize)>,
    pub scale: f64,
    pub split: String,
    pub index: Option<usize>,
    pub labels: Option<Vec<String>>,
    pub max_new_tokens: usize,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunPaths {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            subcommand: String::new(),
            paths: RunPaths::default(),
            task: None,
            sizes: None,
            scale: 1.0,
            split: "test".into(),
            index: None,
            labels: None,
            max_new_tokens: 16,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RUN_CONFIG);
        fs::write(&path, self.to_toml()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Usage problems exit with status 2, everything else that goes wrong with status 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

fn parse_sizes(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = if let Some((a, b)) = s.split_once("..") {
        vec![a, b.trim_start_matches('=')]
    } else {
        s.split(',').collect()
    };
    let nums: Vec<usize> = parts.iter().map(|p| p.trim().parse().map_err(|_| format!("bad size '{p}'"))).collect::<Result<_, _>>()?;
    match nums[..] {
        [a] => Ok((a, a)),
        [a, b] if a <= b => Ok((a, b)),
        _ => Err(format!("size range '{s}' must be MIN..MAX with MIN <= MAX")),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Features(a) => features(a),
        Command::Verify(a) => verify(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Generate(a) => generate(a),
        Command::AttnDump(a) => attn_dump(a),
        Command::ParamCount(a) => param_count(a),
    }
}

fn base_config(name: &str, common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_toml(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if !cfg.subcommand.is_empty() && cfg.subcommand != name {
        return Err(usage(format!("config was written by '{}', not '{name}'", cfg.subcommand)));
    }
    cfg.subcommand = name.to_string();
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn apply_model_args(cfg: &mut RunConfig, m: &ModelArgs) -> Result<()> {
    let mc = &mut cfg.train.model;
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut mc.n_layers, m.layers);
    set(&mut mc.n_heads, m.heads);
    set(&mut mc.d_head, m.d_head);
    set(&mut mc.d_ffn, m.d_ffn);
    set(&mut mc.max_seq_len, m.max_seq_len);
    set(&mut mc.bias.max_spd, m.max_spd);
    set(&mut mc.bias.rrwp_steps, m.rrwp_steps);
    set(&mut mc.bias.rrwp_hidden, m.rrwp_hidden);
    set(&mut mc.bias.mag_dim, m.mag_dim);
    set(&mut mc.bias.deepset_hidden, m.deepset_hidden);
    set(&mut mc.bias.mag_hidden, m.mag_hidden);
    if let Some(q) = m.mag_q {
        mc.bias.mag_q = q;
    }
    mc.d_model = m.d_model.unwrap_or(mc.n_heads * mc.d_head);
    mc.bias.n_layers = mc.n_layers;
    mc.bias.n_heads = mc.n_heads;
    mc.sources.spd &= !m.no_spd;
    mc.sources.rrwp &= !m.no_rrwp;
    mc.sources.mag &= !m.no_mag;
    mc.validate().map_err(|e| usage(e.to_string()))
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| usage(format!("--{flag} is required")))
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn report_dir(report: &Path) -> PathBuf {
    report.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

/// A dataset directory resolves to `<split>.jsonl`; anything else is read as a JSONL file.
fn load_split(path: &Path, split: &str) -> Result<Vec<QaRecord>> {
    let file = if path.is_dir() { path.join(format!("{split}.jsonl")) } else { path.to_path_buf() };
    load_graphs(&file).with_context(|| format!("loading {}", file.display()))
}

fn dataset_task(path: &Path) -> Option<Task> {
    let spec = if path.is_dir() { path.join("spec.json") } else { path.parent()?.join("spec.json") };
    let text = fs::read_to_string(spec).ok()?;
    serde_json::from_str::<TaskSpec>(&text).ok().map(|s| s.task)
}

fn gen_data(a: GenDataArgs) -> Result<i32> {
    let mut cfg = base_config("gen-data", &a.common)?;
    cfg.task = a.task.or(cfg.task);
    cfg.sizes = a.sizes.or(cfg.sizes);
    cfg.scale = a.scale.unwrap_or(cfg.scale);
    cfg.paths.out = a.out.or(cfg.paths.out);
    let task = cfg.task.ok_or_else(|| usage("--task is required"))?;
    if !(cfg.scale > 0.0) {
        return Err(usage("--scale must be positive"));
    }
    let mut spec = TaskSpec::new(task, cfg.train.seed);
    spec.counts = spec.counts.scaled(cfg.scale);
    if let Some((lo, hi)) = cfg.sizes {
        spec = spec.with_sizes(lo, hi);
    }
    let ds = data::generate(&spec).map_err(|e| match e {
        data::DataError::InvalidSpec(m) => usage(m),
        other => anyhow!(other),
    })?;
    let dir = out_dir(&cfg);
    ds.save(&dir)?;
    cfg.write(&dir)?;
    println!("task {} train {} val {} test {} dir {}", task, ds.train.len(), ds.val.len(), ds.test.len(), dir.display());
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct FeatureLine<'a> {
    index: usize,
    #[serde(flatten)]
    features: &'a crate::features::StructuralFeatures,
}

fn features(a: FeaturesArgs) -> Result<i32> {
    let mut cfg = base_config("features", &a.common)?;
    cfg.paths.data = a.data.or(cfg.paths.data);
    cfg.paths.out = a.out.or(cfg.paths.out);
    apply_model_args(&mut cfg, &a.model)?;
    let records = load_split(required(&cfg.paths.data, "data")?, "train")?;
    let fc = cfg.train.model.bias.feature_config();
    let out = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("features.jsonl"));
    let mut text = String::new();
    for (i, r) in records.iter().enumerate() {
        let f = compute_features(&r.graph, &fc).with_context(|| format!("record {i}"))?;
        text.push_str(&serde_json::to_string(&FeatureLine { index: i, features: &f })?);
        text.push('\n');
    }
    let dir = report_dir(&out);
    fs::create_dir_all(&dir)?;
    fs::write(&out, text)?;
    cfg.write(&dir)?;
    println!("features {} graphs -> {}", records.len(), out.display());
    Ok(EXIT_OK)
}

fn verify(a: VerifyArgs) -> Result<i32> {
    let mut cfg = base_config("verify", &a.common)?;
    if let Some(p) = a.precision {
        cfg.train.precision = p;
    }
    cfg.paths.report = a.report.or(cfg.paths.report);
    let report = run_battery(cfg.train.precision, cfg.train.seed)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(path) = &cfg.paths.report {
        let dir = report_dir(path);
        fs::create_dir_all(&dir)?;
        fs::write(path, &text)?;
        cfg.write(&dir)?;
    }
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
}

fn train(a: TrainArgs) -> Result<i32> {
    let mut cfg = base_config("train", &a.common)?;
    cfg.paths.data = a.data.or(cfg.paths.data);
    cfg.paths.out = a.out.or(cfg.paths.out);
    cfg.paths.init = a.init.or(cfg.paths.init);
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.lr = a.lr.unwrap_or(t.lr);
    t.lr_bias = a.lr_bias.unwrap_or(t.lr_bias);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.precision = a.precision.unwrap_or(t.precision);
    if t.lr < 0.0 || t.lr_bias < 0.0 {
        return Err(usage("learning rates must be non-negative"));
    }
    if let Some(init) = &cfg.paths.init {
        cfg.train.model = load_checkpoint::<f64>(init)?.config;
    }
    apply_model_args(&mut cfg, &a.model)?;
    match cfg.train.precision {
        Precision::F32 => train_as::<f32>(&cfg),
        Precision::F64 => train_as::<f64>(&cfg),
    }
}

fn train_as<F: Real>(cfg: &RunConfig) -> Result<i32> {
    let records = load_split(required(&cfg.paths.data, "data")?, "train")?;
    let mut model = match &cfg.paths.init {
        Some(p) => load_checkpoint::<F>(p)?.with_sources(cfg.train.model.sources),
        None => GtlmModel::<F>::new(cfg.train.model, cfg.train.seed)?,
    };
    let prepared = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let g = training_graph(r)?;
            Ok(model.prepare(&g, &identity_permutation(&g)).with_context(|| format!("record {i}"))?)
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = out_dir(cfg);
    cfg.write(&dir)?;
    let mut state = AdamState::from_config(&model, &cfg.train);
    let mut log = String::new();
    model.fit(&prepared, &cfg.train, &mut state, |epoch, loss| {
        let line = format!("epoch {epoch} loss {loss:.6}");
        println!("{line}");
        log.push_str(&line);
        log.push('\n');
    })?;
    fs::write(dir.join("train_log.txt"), log)?;
    let ck = dir.join("checkpoint.json");
    save_checkpoint(&model, &ck)?;
    println!("checkpoint {}", ck.display());
    Ok(EXIT_OK)
}

fn eval(a: EvalArgs) -> Result<i32> {
    let mut cfg = base_config("eval", &a.common)?;
    cfg.paths.checkpoint = a.checkpoint.or(cfg.paths.checkpoint);
    cfg.paths.data = a.data.or(cfg.paths.data);
    cfg.paths.report = a.report.or(cfg.paths.report);
    cfg.split = a.split.unwrap_or(cfg.split);
    cfg.max_new_tokens = a.max_new_tokens.unwrap_or(cfg.max_new_tokens);
    cfg.train.precision = a.precision.unwrap_or(cfg.train.precision);
    if Split::ALL.iter().all(|s| s.name() != cfg.split) {
        return Err(usage(format!("unknown split '{}'", cfg.split)));
    }
    let data_path = required(&cfg.paths.data, "data")?.clone();
    cfg.task = a.task.or(cfg.task).or_else(|| dataset_task(&data_path));
    match cfg.train.precision {
        Precision::F32 => eval_as::<f32>(&cfg),
        Precision::F64 => eval_as::<f64>(&cfg),
    }
}

fn eval_as<F: Real>(cfg: &RunConfig) -> Result<i32> {
    let model = load_checkpoint::<F>(required(&cfg.paths.checkpoint, "checkpoint")?)?;
    let records = load_split(required(&cfg.paths.data, "data")?, &cfg.split)?;
    let format = cfg.task.map_or(AnswerFormat::Free, Task::answer_format);
    let report = evaluate_accuracy(&model, &records, &format, cfg.max_new_tokens)?;
    let mut text = String::new();
    let _ = writeln!(text, "accuracy {:.6}", report.accuracy);
    let _ = writeln!(text, "n {}", report.n);
    for (i, r) in report.records.iter().enumerate() {
        let _ = writeln!(text, "record {i} correct {} gold {:?} predicted {:?}", r.correct, r.gold, r.predicted);
    }
    let report_path = cfg.paths.report.clone().unwrap_or_else(|| PathBuf::from("eval_report.txt"));
    let dir = report_dir(&report_path);
    fs::create_dir_all(&dir)?;
    fs::write(&report_path, &text)?;
    cfg.write(&dir)?;
    println!("accuracy {:.6} n {} report {}", report.accuracy, report.n, report_path.display());
    Ok(EXIT_OK)
}

fn select<'a>(records: &'a [QaRecord], index: Option<usize>) -> Result<Vec<(usize, &'a QaRecord)>> {
    match index {
        Some(i) if i >= records.len() => Err(usage(format!("--index {i} out of range ({} records)", records.len()))),
        Some(i) => Ok(vec![(i, &records[i])]),
        None => Ok(records.iter().enumerate().collect()),
    }
}

fn generate(a: GenerateArgs) -> Result<i32> {
    let mut cfg = base_config("generate", &a.common)?;
    cfg.paths.checkpoint = a.checkpoint.or(cfg.paths.checkpoint);
    cfg.paths.data = a.data.or(cfg.paths.data);
    cfg.paths.out = a.out.or(cfg.paths.out);
    cfg.index = a.index.or(cfg.index);
    cfg.labels = a.labels.or(cfg.labels);
    cfg.max_new_tokens = a.max_new_tokens.unwrap_or(cfg.max_new_tokens);
    cfg.train.precision = a.precision.unwrap_or(cfg.train.precision);
    match cfg.train.precision {
        Precision::F32 => generate_as::<f32>(&cfg),
        Precision::F64 => generate_as::<f64>(&cfg),
    }
}

fn generate_as<F: Real>(cfg: &RunConfig) -> Result<i32> {
    let model = load_checkpoint::<F>(required(&cfg.paths.checkpoint, "checkpoint")?)?;
    let records = load_split(required(&cfg.paths.data, "data")?, &cfg.split)?;
    let mode = match &cfg.labels {
        Some(l) => DecodeMode::Labels(l.clone()),
        None => DecodeMode::Free { max_new_tokens: cfg.max_new_tokens },
    };
    let mut text = String::new();
    for (i, r) in select(&records, cfg.index)? {
        let answer = model.decode(&prompt_graph(r)?, &mode)?;
        let _ = writeln!(text, "record {i} answer {answer:?}");
    }
    print!("{text}");
    if let Some(out) = &cfg.paths.out {
        let dir = report_dir(out);
        fs::create_dir_all(&dir)?;
        fs::write(out, &text)?;
        cfg.write(&dir)?;
    }
    Ok(EXIT_OK)
}

fn attn_dump(a: AttnDumpArgs) -> Result<i32> {
    let mut cfg = base_config("attn-dump", &a.common)?;
    cfg.paths.checkpoint = a.checkpoint.or(cfg.paths.checkpoint);
    cfg.paths.data = a.data.or(cfg.paths.data);
    cfg.paths.out = a.out.or(cfg.paths.out);
    cfg.index = a.index.or(cfg.index);
    cfg.train.precision = a.precision.unwrap_or(cfg.train.precision);
    match cfg.train.precision {
        Precision::F32 => attn_dump_as::<f32>(&cfg),
        Precision::F64 => attn_dump_as::<f64>(&cfg),
    }
}

fn attn_dump_as<F: Real>(cfg: &RunConfig) -> Result<i32> {
    let model = load_checkpoint::<F>(required(&cfg.paths.checkpoint, "checkpoint")?)?;
    let records = load_split(required(&cfg.paths.data, "data")?, &cfg.split)?;
    let mut text = String::new();
    for (i, r) in select(&records, Some(cfg.index.unwrap_or(0)))? {
        let g = prompt_graph(r)?;
        let probe = probe_message_passing(&model, &g)?;
        let _ = writeln!(text, "record {i} question {:?}", r.question);
        text.push_str(&probe.to_text(&g));
    }
    let out = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("attention.txt"));
    let dir = report_dir(&out);
    fs::create_dir_all(&dir)?;
    fs::write(&out, &text)?;
    cfg.write(&dir)?;
    print!("{text}");
    Ok(EXIT_OK)
}

fn param_count(a: ParamCountArgs) -> Result<i32> {
    let mut cfg = base_config("param-count", &a.common)?;
    apply_model_args(&mut cfg, &a.model)?;
    let c = count_parameters(&cfg.train.model.bias);
    println!("spd={}", c.spd);
    println!("rrwp={}", c.rrwp);
    println!("mag={}", c.mag);
    println!("total={}", c.total);
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_syntax() {
        assert_eq!(parse_sizes("8..14").unwrap(), (8, 14));
        assert_eq!(parse_sizes("8..=14").unwrap(), (8, 14));
        assert_eq!(parse_sizes("5,9").unwrap(), (5, 9));
        assert_eq!(parse_sizes("7").unwrap(), (7, 7));
        assert!(parse_sizes("9..3").is_err());
        assert!(parse_sizes("x").is_err());
    }

    #[test]
    fn run_config_round_trips_and_rejects_unknown_keys() {
        let cfg = RunConfig { subcommand: "train".into(), task: Some(Task::NodeCount), ..RunConfig::default() };
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let bad = format!("{}\nbogus = 1\n", cfg.to_toml());
        assert!(RunConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(run(["gtlm", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["gtlm"]), EXIT_USAGE);
        assert_eq!(run(["gtlm", "--help"]), EXIT_OK);
    }

    #[test]
    fn param_count_rejects_inconsistent_shapes() {
        assert_eq!(run(["gtlm", "param-count", "--heads", "3", "--d-model", "64"]), EXIT_USAGE);
        assert_eq!(run(["gtlm", "param-count", "--layers", "16", "--heads", "32", "--max-spd", "8"]), EXIT_OK);
    }
}
