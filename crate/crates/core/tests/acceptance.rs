//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every tolerance and time budget is pinned below.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use semprobe::clustering::{cluster_closure_oracle, cluster_generations, ClusterMode};
use semprobe::dataset_store::{read_hidden_archive, write_hidden_archive, ArchiveFilter};
use semprobe::evaluation::{
    auroc, auroc_pairwise, run_protocol, train_probe_on, EvalResult, Gold, ProbeKind, Protocol, ProtocolConfig,
    RowKind, TaskData, TaskFeatures,
};
use semprobe::gateway::{render_prompt, GatewayClient, PromptExtras, PromptKind, PromptTemplate};
use semprobe::gateway::prompts::ptrue_block;
use semprobe::probe::logreg::objective_and_gradient;
use semprobe::probe::{fit_probe, load_probe, save_probe, FitOptions};
use semprobe::synthetic::{apply_context, make_synthetic_task, pipeline_task, SyntheticTaskConfig, SyntheticWorld};
use semprobe::testing::{MockResponse, MockServer};
use semprobe::uncertainty::{semantic_entropy_discrete, semantic_entropy_mc};
use semprobe::{
    best_split, ArchiveManifest, DecodeConfig, Execution, FeatureSpec, GenerationSample, GenerationSet,
    HiddenStateRecord, Position, ProbeTarget, SemanticClustering, Stream, TrainingSet,
};

const C1_DISCRETE_TOL: f64 = 1e-6;
const C1_LN_N_TOL: f64 = 1e-12;
const C3_REL_TOL: f64 = 1e-12;
const C3_AFFINE_TOL: f64 = 1e-9;
const C4_FD_REL_TOL: f64 = 1e-5;
const C4_FD_STEP: f64 = 1e-6;
const C6_SEP_SE_MIN: f64 = 0.95;
const C6_SEP_CORRECTNESS_MIN: f64 = 0.80;
const C7_ACC_DROP_MIN: f64 = 0.10;
const C7_SEP_DROP_MAX: f64 = 0.05;
const C9_PROBE_TOL: f64 = 1e-12;
const C10_MIN_BACKOFF: Duration = Duration::from_millis(60);

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sized(sizes: &[usize]) -> SemanticClustering {
    let mut next = 0;
    let clusters = sizes
        .iter()
        .map(|&s| {
            let c: Vec<usize> = (next..next + s).collect();
            next += s;
            c
        })
        .collect();
    SemanticClustering { clusters }
}

fn c1_entropy() -> Outcome {
    let h = semantic_entropy_discrete(&sized(&[3, 3, 4]), 10).map_err(|e| e.to_string())?;
    check((h - 1.08890).abs() <= C1_DISCRETE_TOL, || format!("[3,3,4] gave {h}"))?;
    let one = semantic_entropy_discrete(&sized(&[10]), 10).map_err(|e| e.to_string())?;
    check(one == 0.0, || format!("one cluster gave {one}"))?;
    for n in 1..=50 {
        let h = semantic_entropy_discrete(&sized(&vec![1; n]), n).map_err(|e| e.to_string())?;
        check((h - (n as f64).ln()).abs() <= C1_LN_N_TOL, || format!("{n} singletons gave {h}"))?;
    }
    let mc = semantic_entropy_mc(&[-1.0, -2.0]).map_err(|e| e.to_string())?;
    check(mc == 1.5, || format!("MC gave {mc}"))?;
    Ok(format!("discrete [3,3,4] = {h:.6}, MC = {mc}"))
}

fn c2_clustering() -> Outcome {
    let world = make_synthetic_task(
        &SyntheticTaskConfig { seed: 2, n_prompts: 500, hidden_dim: 4, n_layers: 1, ..Default::default() },
        Execution::Parallel,
    )
    .map_err(|e| e.to_string())?;
    let oracle = world.oracle();
    let mut agree = 0;
    for g in &world.generations {
        let texts = g.sample_texts();
        let greedy = cluster_generations(&texts, &oracle, ClusterMode::FirstMember).map_err(|e| e.to_string())?;
        let closure = cluster_closure_oracle(&texts, &oracle).map_err(|e| e.to_string())?;
        if greedy.canonical() == closure.canonical() {
            agree += 1;
        }
    }
    check(agree == 500, || format!("{agree}/500 partitions agree"))?;
    Ok("500/500 partitions agree".into())
}

/// Exact within-class SSE of integer values, times `n`, as a fraction.
fn exact_objective(sorted: &[i64], cut: usize) -> (i128, i128) {
    let part = |xs: &[i64]| {
        let n = xs.len() as i128;
        let s: i128 = xs.iter().map(|&x| x as i128).sum();
        let q: i128 = xs.iter().map(|&x| (x as i128) * (x as i128)).sum();
        (n * q - s * s, n)
    };
    let (a, nl) = part(&sorted[..cut]);
    let (b, nh) = part(&sorted[cut..]);
    // a/nl + b/nh
    (a * nh + b * nl, nl * nh)
}

fn c3_best_split() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cases = 0;
    while cases < 200 {
        let n = rng.random_range(2..=200);
        let span = if rng.random_bool(0.3) { 5 } else { 1000 };
        let ints: Vec<i64> = (0..n).map(|_| rng.random_range(-span..=span)).collect();
        let mut sorted = ints.clone();
        sorted.sort_unstable();
        if sorted[0] == sorted[n - 1] {
            continue;
        }
        cases += 1;
        let scale = 1000.0;
        let values: Vec<(String, f64)> =
            ints.iter().enumerate().map(|(i, &k)| (format!("{i:03}"), k as f64 / scale)).collect();
        let r = best_split(&values).map_err(|e| e.to_string())?;

        let mut best: Option<(i128, i128)> = None;
        for cut in 1..n {
            if sorted[cut - 1] == sorted[cut] {
                continue;
            }
            let (num, den) = exact_objective(&sorted, cut);
            if best.is_none_or(|(bn, bd)| num * bd < bn * den) {
                best = Some((num, den));
            }
        }
        let (bn, bd) = best.expect("two distinct values");
        let cut = sorted.iter().filter(|&&k| (k as f64 / scale) < r.gamma_star).count();
        let (cn, cd) = exact_objective(&sorted, cut);
        check(cn * bd == bn * cd, || format!("case {cases}: chosen split is not an exact minimum"))?;
        let exact = bn as f64 / bd as f64 / (scale * scale);
        check((r.objective_value - exact).abs() <= C3_REL_TOL * exact.max(1.0), || {
            format!("case {cases}: objective {} vs exact {exact}", r.objective_value)
        })?;

        let a = rng.random_range(0.1..10.0);
        let b = rng.random_range(-5.0..5.0);
        let moved: Vec<(String, f64)> = values.iter().map(|(id, v)| (id.clone(), a * v + b)).collect();
        let m = best_split(&moved).map_err(|e| e.to_string())?;
        check(m.labels == r.labels, || format!("case {cases}: labels change under affine map"))?;
        let expect = a * r.gamma_star + b;
        check((m.gamma_star - expect).abs() <= C3_AFFINE_TOL * (1.0 + expect.abs()), || {
            format!("case {cases}: gamma {} vs {expect}", m.gamma_star)
        })?;
    }
    Ok("200/200 exact minima, affine equivariant".into())
}

fn c4_logreg() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for p in 0..50 {
        let n = rng.random_range(3..40);
        let dim = rng.random_range(1..8);
        let x: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let theta: Vec<f64> = (0..=dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = rng.random_range(0.1..10.0);
        let (_, grad) = objective_and_gradient(Execution::Sequential, &x, &y, dim, c, &theta);
        for k in 0..=dim {
            let h = C4_FD_STEP * theta[k].abs().max(1.0);
            let mut up = theta.clone();
            up[k] += h;
            let mut down = theta.clone();
            down[k] -= h;
            let fu = objective_and_gradient(Execution::Sequential, &x, &y, dim, c, &up).0;
            let fd = objective_and_gradient(Execution::Sequential, &x, &y, dim, c, &down).0;
            let numeric = (fu - fd) / (2.0 * h);
            let rel = (grad[k] - numeric).abs() / grad[k].abs().max(1.0);
            worst = worst.max(rel);
            check(rel <= C4_FD_REL_TOL, || format!("problem {p} coord {k}: {} vs {numeric}", grad[k]))?;
        }
    }

    // Two well separated blobs.
    let dim = 5;
    let n = 400;
    let mut feats = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = (i % 2) as u8;
        let shift = if y == 1 { 4.0 } else { -4.0 };
        feats.extend((0..dim).map(|_| shift + rng.random_range(-1.0..1.0)));
        labels.push(y);
    }
    let ids: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
    let ts = TrainingSet::new(feats.clone(), dim, labels.clone(), ids).map_err(|e| e.to_string())?;
    let spec = FeatureSpec::new(Position::Slt, Stream::Hidden, vec![0], dim).map_err(|e| e.to_string())?;
    let fit = |exec| {
        fit_probe(&ts, spec.clone(), ProbeTarget::Se, &FitOptions { exec, ..Default::default() })
            .map_err(|e| e.to_string())
    };
    let m1 = fit(Execution::Parallel)?;
    let probs = m1.predict_batch(Execution::Parallel, &feats).map_err(|e| e.to_string())?;
    let auc = auroc(&probs, &labels).map_err(|e| e.to_string())?;
    check(auc == 1.0, || format!("separable AUROC {auc}"))?;
    let a = serde_json::to_string(&m1).map_err(|e| e.to_string())?;
    let b = serde_json::to_string(&fit(Execution::Parallel)?).map_err(|e| e.to_string())?;
    let s = serde_json::to_string(&fit(Execution::Sequential)?).map_err(|e| e.to_string())?;
    check(a == b && a == s, || "refit is not byte-identical".into())?;
    Ok(format!("worst FD rel err {worst:.2e}, separable AUROC 1.0, refit identical"))
}

fn c5_auroc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut done = 0;
    while done < 1000 {
        let n = rng.random_range(2..=100);
        let levels = if rng.random_bool(0.5) { rng.random_range(1..4) } else { 1000 };
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..=levels) as f64 / 7.0).collect();
        let gold: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        if gold.iter().all(|&g| g == gold[0]) {
            continue;
        }
        done += 1;
        let fast = auroc(&scores, &gold).map_err(|e| e.to_string())?;
        let slow = auroc_pairwise(&scores, &gold).map_err(|e| e.to_string())?;
        check(fast.to_bits() == slow.to_bits(), || format!("instance {done}: {fast} vs {slow}"))?;
    }
    Ok("1000/1000 exact".into())
}

/// SLT hidden state at the last of the default four layers.
fn features() -> TaskFeatures {
    TaskFeatures { position: Position::Slt, stream: Stream::Hidden, layers: vec![3] }
}

fn task_of(world: &SyntheticWorld, test_fraction: f64) -> Result<TaskData, String> {
    pipeline_task(world, &features(), test_fraction, 17, Execution::Parallel)
        .map(|(t, _)| t)
        .map_err(|e| e.to_string())
}

fn find<'a>(rs: &'a [EvalResult], predictor: &str, gold: Gold, eval_task: &str) -> Result<&'a EvalResult, String> {
    rs.iter()
        .find(|r| r.predictor == predictor && r.gold == gold && r.eval_task == eval_task && r.row == RowKind::Cell)
        .ok_or_else(|| format!("no {predictor}/{gold:?} row for {eval_task}"))
}

fn c6_end_to_end() -> Outcome {
    let cfg = SyntheticTaskConfig { seed: 6, n_prompts: 2500, ..Default::default() };
    let world = make_synthetic_task(&cfg, Execution::Parallel).map_err(|e| e.to_string())?;
    let task = task_of(&world, 0.2)?;
    check(task.test_rows().count() == 500, || "expected 500 test prompts".into())?;
    let report = run_protocol(Protocol::InDist, &[task], &ProtocolConfig::default()).map_err(|e| e.to_string())?;
    check(report.failures.is_empty(), || format!("{:?}", report.failures))?;
    let se = find(&report.results, "sep", Gold::BinarizedSe, &cfg.name)?.auroc;
    let hall = find(&report.results, "sep", Gold::Correctness, &cfg.name)?.auroc;
    check(se >= C6_SEP_SE_MIN, || format!("SEP vs binarized SE {se:.4}"))?;
    check(hall >= C6_SEP_CORRECTNESS_MIN, || format!("SEP hallucination {hall:.4}"))?;
    Ok(format!("SEP/binarized SE {se:.4}, SEP/hallucination {hall:.4}"))
}

fn c7_generalization() -> Outcome {
    let mut acc_drops = Vec::new();
    let mut sep_drops = Vec::new();
    for seed in 0..5u64 {
        let tasks: Vec<TaskData> = ["task_a", "task_b"]
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let cfg = SyntheticTaskConfig {
                    name: (*name).into(),
                    seed: 1000 * seed + k as u64,
                    n_prompts: 1000,
                    direction_seed: 77 + seed,
                    shortcut_weight: 0.3,
                    ..Default::default()
                };
                let world = make_synthetic_task(&cfg, Execution::Parallel).map_err(|e| e.to_string())?;
                task_of(&world, 0.3)
            })
            .collect::<Result<_, _>>()?;
        let pc = ProtocolConfig::default();
        let ind = run_protocol(Protocol::InDist, &tasks, &pc).map_err(|e| e.to_string())?;
        let hold = run_protocol(Protocol::HoldoutTrain, &tasks, &pc).map_err(|e| e.to_string())?;
        let mean = |rs: &[EvalResult], p: &str| -> Result<f64, String> {
            let a = find(rs, p, Gold::Correctness, "task_a")?.auroc;
            let b = find(rs, p, Gold::Correctness, "task_b")?.auroc;
            Ok((a + b) / 2.0)
        };
        acc_drops.push(mean(&ind.results, "acc_probe")? - mean(&hold.results, "acc_probe")?);
        sep_drops.push(mean(&ind.results, "sep")? - mean(&hold.results, "sep")?);
    }
    let acc = acc_drops.iter().sum::<f64>() / 5.0;
    let sep = sep_drops.iter().sum::<f64>() / 5.0;
    let detail = format!("mean drop: accuracy probe {acc:.4}, SEP {sep:.4}");
    check(acc >= C7_ACC_DROP_MIN && sep <= C7_SEP_DROP_MAX, || detail.clone())?;
    Ok(detail)
}

fn c8_context() -> Outcome {
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let cfg = SyntheticTaskConfig { seed: 800 + seed, n_prompts: 500, ..Default::default() };
        let before = make_synthetic_task(&cfg, Execution::Parallel).map_err(|e| e.to_string())?;
        let after = apply_context(&before, 0.5, Execution::Parallel).map_err(|e| e.to_string())?;
        let tb = task_of(&before, 0.2)?;
        let ta = task_of(&after, 0.2)?;
        let sep = train_probe_on(&[&tb], ProbeKind::Sep, &ProtocolConfig::default()).map_err(|e| e.to_string())?;
        let mean_p = |t: &TaskData| -> Result<f64, String> {
            let p = sep.predict_batch(Execution::Parallel, &t.features).map_err(|e| e.to_string())?;
            Ok(p.iter().sum::<f64>() / p.len() as f64)
        };
        let (pb, pa) = (mean_p(&tb)?, mean_p(&ta)?);
        let (sb, sa) = (before.mean_gold_se(), after.mean_gold_se());
        let (ab, aa) = (before.accuracy(), after.accuracy());
        check(sa < sb && pa < pb && aa > ab, || {
            format!("seed {seed}: SE {sb:.3}->{sa:.3}, p(high) {pb:.3}->{pa:.3}, acc {ab:.3}->{aa:.3}")
        })?;
        lines.push(format!("SE {sb:.2}->{sa:.2} p {pb:.2}->{pa:.2} acc {ab:.2}->{aa:.2}"));
    }
    Ok(format!("5/5 seeds; first: {}", lines[0]))
}

fn random_finite_f32(rng: &mut ChaCha8Rng) -> f32 {
    loop {
        let v = f32::from_bits(rng.random::<u32>());
        if v.is_finite() {
            return v;
        }
    }
}

fn c9_formats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dim = 16;
    let manifest =
        ArchiveManifest::new("random", dim, 40, vec![Position::Slt, Position::Tbg], vec![Stream::Hidden, Stream::Residual, Stream::Mlp]);
    let records: Vec<HiddenStateRecord> = (0..10_000)
        .map(|i| {
            let len = rng.random_range(0..24);
            let suffix: String = (0..len).map(|_| char::from(rng.random_range(b'!'..=b'~'))).collect();
            HiddenStateRecord {
                id: format!("{i}-é-{suffix}"),
                position: if rng.random_bool(0.5) { Position::Slt } else { Position::Tbg },
                stream: [Stream::Hidden, Stream::Residual, Stream::Mlp][rng.random_range(0..3)],
                layer: rng.random_range(0..40),
                vector: (0..dim)
                    .map(|k| match k {
                        0 => -0.0,
                        1 => f32::from_bits(1),
                        _ => random_finite_f32(&mut rng),
                    })
                    .collect(),
            }
        })
        .collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("hidden.seph");
    write_hidden_archive(&manifest, &records, &path).map_err(|e| e.to_string())?;
    let (back_manifest, back) = read_hidden_archive(&path, &ArchiveFilter::default()).map_err(|e| e.to_string())?;
    check(back_manifest.record_count == 10_000, || format!("record_count {}", back_manifest.record_count))?;
    check(back.len() == records.len(), || format!("read {} records", back.len()))?;
    for (a, b) in records.iter().zip(&back) {
        let same = a.id == b.id
            && a.position == b.position
            && a.stream == b.stream
            && a.layer == b.layer
            && a.vector.iter().map(|v| v.to_bits()).eq(b.vector.iter().map(|v| v.to_bits()));
        check(same, || format!("record {} differs", a.id))?;
    }

    let pdim = 12;
    let n = 300;
    let feats: Vec<f64> = (0..n * pdim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels: Vec<u8> = (0..n).map(|i| u8::from(feats[i * pdim] + 0.3 * feats[i * pdim + 1] > 0.0)).collect();
    let ids = (0..n).map(|i| format!("p{i}")).collect();
    let ts = TrainingSet::new(feats.clone(), pdim, labels, ids).map_err(|e| e.to_string())?;
    let spec = FeatureSpec::new(Position::Tbg, Stream::Residual, vec![1, 2, 3], 4).map_err(|e| e.to_string())?;
    let model = fit_probe(&ts, spec, ProbeTarget::Accuracy, &FitOptions::default()).map_err(|e| e.to_string())?;
    let probe_path = dir.path().join("probe.json");
    save_probe(&probe_path, &model).map_err(|e| e.to_string())?;
    let loaded = load_probe(&probe_path).map_err(|e| e.to_string())?;
    let p0 = model.predict_batch(Execution::Sequential, &feats).map_err(|e| e.to_string())?;
    let p1 = loaded.predict_batch(Execution::Sequential, &feats).map_err(|e| e.to_string())?;
    let worst = p0.iter().zip(&p1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(worst <= C9_PROBE_TOL, || format!("probe predictions differ by {worst}"))?;
    Ok(format!("10000 records bit-exact, probe max diff {worst:e}"))
}

fn c10_gateway() -> Outcome {
    use common::{fast_config, france_block, golden, record, short_form_shots};
    let err = |e: semprobe::gateway::GatewayError| e.to_string();
    let none = PromptExtras::default();
    let hamlet = record("Who wrote Hamlet?", None, "Shakespeare");
    let france = record(
        "What is the capital of France?",
        Some("Paris is the capital and most populous city of France."),
        "Paris",
    );
    let blocks = vec![france_block(); 10];
    let brainstormed = vec!["Shakespeare".to_string(), "William Shakespeare".to_string()];
    let rendered = [
        ("long_form.txt", render_prompt(&PromptTemplate::new(PromptKind::LongForm), &hamlet, &none).map_err(err)?),
        (
            "short_form.txt",
            render_prompt(&PromptTemplate::short_form(short_form_shots()), &france, &none).map_err(err)?,
        ),
        ("context.txt", render_prompt(&PromptTemplate::new(PromptKind::Context), &france, &none).map_err(err)?),
        (
            "entailment.txt",
            render_prompt(
                &PromptTemplate::new(PromptKind::EntailmentJudge),
                &france,
                &PromptExtras { answer_a: Some("Paris"), answer_b: Some("It's Paris"), ..Default::default() },
            )
            .map_err(err)?,
        ),
        (
            "correctness.txt",
            render_prompt(
                &PromptTemplate::new(PromptKind::CorrectnessJudge),
                &france,
                &PromptExtras { proposed: Some("The capital of France is Paris"), ..Default::default() },
            )
            .map_err(err)?,
        ),
        ("ptrue_block.txt", ptrue_block(&france_block())),
        (
            "ptrue_prompt.txt",
            render_prompt(
                &PromptTemplate::new(PromptKind::Ptrue),
                &hamlet,
                &PromptExtras {
                    ptrue_blocks: Some(&blocks),
                    brainstormed: Some(&brainstormed),
                    possible_answer: Some("Shakespeare"),
                    ..Default::default()
                },
            )
            .map_err(err)?,
        ),
    ];
    for (file, text) in &rendered {
        check(*text == golden(file), || format!("{file} differs from the rendered prompt"))?;
    }

    let server = MockServer::start(|_, _| {
        MockResponse::json(json!({"choices": [{"index": 0, "text": " A", "logprobs": {
            "token_logprobs": [0.3f64.ln()],
            "top_logprobs": [{" A": 0.3f64.ln(), "A": 0.2f64.ln(), "B": 0.5f64.ln()}]
        }}]}))
    })
    .map_err(|e| e.to_string())?;
    let client = GatewayClient::new(fast_config(server.url())).map_err(err)?;
    let sample = |t: &str, temperature| GenerationSample { text: t.into(), token_log_probs: vec![-0.1], temperature };
    let gens = GenerationSet {
        id: "q1".into(),
        greedy: sample("Shakespeare", 0.0),
        samples: vec![sample("Shakespeare", 1.0), sample("William Shakespeare", 1.0)],
        decode_config: DecodeConfig { n_samples: 2, ..Default::default() },
    };
    let p = client.p_true_score(&hamlet, &gens, &blocks).map_err(err)?;
    check((p - 0.5).abs() < 1e-12, || format!("p(True) {p}, expected 0.3 + 0.2"))?;
    check(server.requests()[0].json()["prompt"] == golden("ptrue_prompt.txt"), || "p(True) prompt on the wire".into())?;

    let flaky = MockServer::start(|i, _| {
        if i < 2 {
            MockResponse::status(503)
        } else {
            MockResponse::json(json!({"choices": [{"index": 0, "text": "Entailment"}]}))
        }
    })
    .map_err(|e| e.to_string())?;
    let client = GatewayClient::new(fast_config(flaky.url())).map_err(err)?;
    let start = Instant::now();
    client.judge_entailment("a", "b").map_err(err)?;
    let waited = start.elapsed();
    check(flaky.request_count() == 3, || format!("{} attempts", flaky.request_count()))?;
    check(waited >= C10_MIN_BACKOFF, || format!("backoff only {waited:?}"))?;
    Ok(format!("7 golden prompts exact, p(True) {p}, 3 attempts in {waited:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Option<Duration>); 10] = [
        ("1 entropy correctness", c1_entropy, Some(Duration::from_secs(1))),
        ("2 clustering oracle equivalence", c2_clustering, Some(Duration::from_secs(10))),
        ("3 best-split oracle", c3_best_split, Some(Duration::from_secs(5))),
        ("4 logistic regression", c4_logreg, None),
        ("5 AUROC oracle", c5_auroc, None),
        ("6 end-to-end synthetic SEP", c6_end_to_end, Some(Duration::from_secs(60))),
        ("7 generalization direction", c7_generalization, Some(Duration::from_secs(120))),
        ("8 context counterfactual", c8_context, None),
        ("9 format fidelity", c9_formats, None),
        ("10 gateway contract", c10_gateway, None),
    ];
    let only: BTreeSet<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let number = name.split(' ').next().unwrap_or_default();
        if !only.is_empty() && !only.contains(number) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(b)) if took > b => Err(format!("took {took:.2?}, budget {b:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({took:.2?}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name} ({took:.2?}): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
