//! Acceptance run: one `PASS`/`FAIL` line per criterion, then a summary. Exits nonzero when any
//! criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use gtlm::bias::{count_parameters, BiasConfig, BiasSources};
use gtlm::graph::save_graphs;
use gtlm::model::{save_checkpoint, GtlmModel, ModelConfig};
use gtlm::params::ParamGroup;
use gtlm::verify::{
    agreement_battery, check_backward_compat, check_equivariance, check_gradients, desk_config, equivariance_fixture,
    feature_oracle_battery, kernel_battery, mean_separation, probe_message_passing, randomize_bias, train_probe, ProbeOutcome,
    ProbeSetup,
};

const SEED: u64 = 20_240_601;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

type Criterion<'a> = Box<dyn FnOnce() -> anyhow::Result<Outcome> + 'a>;

fn desk_model() -> GtlmModel<f64> {
    let mut m = GtlmModel::new(desk_config(), SEED).expect("desk config is valid");
    randomize_bias(&mut m, SEED + 1, 1.0);
    m
}

fn backward_compat() -> anyhow::Result<Outcome> {
    let m = desk_model();
    let a = check_backward_compat(&m, 5, SEED)?;
    let b = check_backward_compat(&m.cast::<f32>(), 5, SEED)?;
    Ok(outcome(
        a.passed && b.passed && a.tolerance == 1e-12 && b.tolerance == 1e-4,
        format!("max_abs_f64={:e} max_abs_f32={:e}", a.max(), b.max()),
    ))
}

fn equivariance() -> anyhow::Result<Outcome> {
    let m = desk_model();
    let g = equivariance_fixture();
    let a = check_equivariance(&m, &g, 5, SEED)?;
    let b = check_equivariance(&m.cast::<f32>(), &g, 5, SEED)?;
    Ok(outcome(
        g.n_nodes() == 6 && a.passed && b.passed,
        format!("nodes={} max_abs_f64={:e} max_abs_f32={:e}", g.n_nodes(), a.max(), b.max()),
    ))
}

fn feature_oracles() -> anyhow::Result<Outcome> {
    let c = feature_oracle_battery(50, 12, SEED)?;
    Ok(outcome(c.passed, c.to_string()))
}

fn kernel_invariance() -> anyhow::Result<Outcome> {
    let checks = kernel_battery(SEED)?;
    let detail: Vec<String> = checks.iter().map(ToString::to_string).collect();
    Ok(outcome(checks.iter().all(|c| c.passed), detail.join(" | ")))
}

fn gradients() -> anyhow::Result<Outcome> {
    let m = desk_model();
    let batch = vec![equivariance_fixture()];
    let r = check_gradients(&m, &batch, 200, 1e-6, 1e-4, SEED)?;
    let all_groups = ParamGroup::ALL.len();
    Ok(outcome(
        r.passed && r.coords.len() == 200 && r.groups_covered() == all_groups,
        format!("coords={} groups={}/{all_groups} max_rel_err={:e}", r.coords.len(), r.groups_covered(), r.max_rel_err()),
    ))
}

fn parameter_count() -> anyhow::Result<Outcome> {
    let big = BiasConfig { n_layers: 16, n_heads: 32, max_spd: 8, rrwp_steps: 16, rrwp_hidden: 64, ..BiasConfig::default() };
    let c = count_parameters(&big);
    let shipped = count_parameters(&ModelConfig::default().bias);
    Ok(outcome(
        c.spd == 4096 && c.rrwp == 50_688 && shipped.total == shipped.spd + shipped.rrwp + shipped.mag,
        format!(
            "spd={} rrwp={} shipped spd={} rrwp={} mag={} total={}",
            c.spd, c.rrwp, shipped.spd, shipped.rrwp, shipped.mag, shipped.total
        ),
    ))
}

fn component_probe(trained: &mut Option<ProbeOutcome<f32>>) -> anyhow::Result<Outcome> {
    let setup = ProbeSetup::component_probe(SEED);
    let out = train_probe::<f32>(&setup, |_, _| {})?;
    let margin = out.margin();
    let res = outcome(
        out.accuracy >= 0.85 && margin >= 0.20 && out.seconds <= 900.0,
        format!(
            "accuracy={:.3} zero_bias_control={:.3} margin_pp={:.1} train={} test={} seconds={:.0}",
            out.accuracy,
            out.control_accuracy,
            100.0 * margin,
            setup.n_train,
            setup.n_test,
            out.seconds
        ),
    );
    *trained = Some(out);
    Ok(res)
}

fn ablation_direction() -> anyhow::Result<Outcome> {
    let mut gaps = Vec::new();
    let mut detail = Vec::new();
    for s in 0..3 {
        let base = ProbeSetup::directed_reachability(SEED + s);
        let full = train_probe::<f32>(&base, |_, _| {})?;
        let no_mag = train_probe::<f32>(&base.clone().with_sources(BiasSources { mag: false, ..BiasSources::ALL }), |_, _| {})?;
        gaps.push(full.accuracy - no_mag.accuracy);
        detail.push(format!("seed{s} full={:.3} no_mag={:.3}", full.accuracy, no_mag.accuracy));
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    Ok(outcome(mean >= 0.10, format!("{} mean_gap_pp={:.1}", detail.join(" "), 100.0 * mean)))
}

fn message_passing(trained: Option<&ProbeOutcome<f32>>, dir: &Path) -> anyhow::Result<Outcome> {
    let Some(out) = trained else { return Ok(outcome(false, "criterion 7 produced no model")) };
    let reports = out
        .test
        .iter()
        .take(100)
        .map(|r| probe_message_passing(&out.model, &gtlm::data::prompt_graph(r)?))
        .collect::<Result<Vec<_>, _>>()?;
    let per_head = mean_separation(&reports);
    let (mut best, mut at) = (f64::NEG_INFINITY, (0, 0));
    for (l, heads) in per_head.iter().enumerate() {
        for (h, s) in heads.iter().enumerate() {
            if let Some(s) = *s {
                if s > best {
                    best = s;
                    at = (l, h);
                }
            }
        }
    }
    let ck = dir.join("probe.json");
    let data = dir.join("probe.jsonl");
    let dump = dir.join("attention.txt");
    save_checkpoint(&out.model, &ck)?;
    save_graphs(&data, &out.test[..1])?;
    let p = |x: &Path| x.to_string_lossy().into_owned();
    let status = gtlm::cli::run([
        "gtlm".into(),
        "attn-dump".into(),
        "--precision".into(),
        "32".into(),
        "--checkpoint".into(),
        p(&ck),
        "--data".into(),
        p(&data),
        "--out".into(),
        p(&dump),
    ]);
    let text = std::fs::read_to_string(&dump).unwrap_or_default();
    let n = out.test[0].graph.n_nodes();
    let cfg = out.model.config;
    let blocks = text.lines().filter(|l| l.starts_with("layer ")).count();
    let square = text
        .split("\n\n")
        .filter(|b| b.contains(" head "))
        .all(|b| b.lines().filter(|l| !l.starts_with("layer ") && !l.starts_with("record ")).count() == n + 1);
    let dumped = status == 0 && blocks == cfg.n_layers * cfg.n_heads && square;
    Ok(outcome(
        best > 0.2 && dumped,
        format!("max_mean_separation={best:.3} at layer {} head {} attn_dump_blocks={blocks} nodes={n}", at.0, at.1),
    ))
}

fn generator_agreement() -> anyhow::Result<Outcome> {
    let checks = agreement_battery(1000, SEED)?;
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(ToString::to_string).collect();
    let instances: f64 = checks.iter().filter_map(|c| c.get("instances")).sum();
    Ok(outcome(
        failed.is_empty(),
        format!("tasks={} instances={instances} failures=[{}]", checks.len(), failed.join("; ")),
    ))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut trained = None;
    let mut results = Vec::new();
    {
        let criteria: Vec<(&str, f64, Criterion)> = vec![
            ("backward-compatibility", 10.0, Box::new(backward_compat)),
            ("permutation-equivariance", 10.0, Box::new(equivariance)),
            ("structural-feature-oracles", 30.0, Box::new(feature_oracles)),
            ("kernel-basis-invariance", 5.0, Box::new(kernel_invariance)),
            ("gradient-correctness", 120.0, Box::new(gradients)),
            ("parameter-accounting", 1.0, Box::new(parameter_count)),
            ("component-probe-training", 900.0, Box::new(|| component_probe(&mut trained))),
            ("ablation-direction", 1800.0, Box::new(ablation_direction)),
        ];
        for (name, budget, run) in criteria {
            results.push(timed(name, budget, run));
        }
    }
    results.push(timed("message-passing-probe", 60.0, Box::new(|| message_passing(trained.as_ref(), tmp.path()))));
    results.push(timed("generator-oracle-agreement", 120.0, Box::new(generator_agreement)));
    let failed = results.iter().filter(|&&p| !p).count();
    println!("acceptance {} criteria, {failed} failed", results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn timed(name: &str, budget: f64, run: Criterion) -> bool {
    use std::sync::atomic::{AtomicUsize, Ordering};
    static N: AtomicUsize = AtomicUsize::new(1);
    let k = N.fetch_add(1, Ordering::Relaxed);
    let start = Instant::now();
    let result = run();
    let secs = start.elapsed().as_secs_f64();
    let (passed, detail) = match result {
        Ok(o) => (o.passed && secs <= budget, o.detail),
        Err(e) => (false, format!("error: {e:#}")),
    };
    println!(
        "criterion {k:>2} {} {name} {detail} runtime={secs:.1}s budget={budget:.0}s",
        if passed { "PASS" } else { "FAIL" }
    );
    passed
}
