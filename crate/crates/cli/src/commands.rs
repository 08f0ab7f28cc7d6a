use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use semprobe::binarization::{best_split, even_split, SplitResult};
use semprobe::clustering::{cluster_batch, ClusterMode, SemanticClustering};
use semprobe::dataset_store::{
    filter_quantile_band, read_generations_jsonl, read_hidden_archive, read_jsonl, read_qa_jsonl, write_jsonl,
    ArchiveFilter,
};
use semprobe::entailment::{
    condition_on_question, CachedEntailer, Entailer, EntailmentCache, JudgeEntailer, LexicalEntailer, NliHttpEntailer,
};
use semprobe::evaluation::{
    evaluate_probe, label_correctness_long, label_correctness_short, load_task, load_task_with, read_results_csv, render_table,
    run_protocol, squad_f1, write_results_csv, CellFailure, CorrectnessLabel, EvalResult, Protocol, ProtocolConfig,
    SeSource, SplitMethod, TaskFeatures, TaskManifest,
};
use semprobe::gateway::{GatewayClient, PTrueBlock, PromptKind, PromptTemplate};
use semprobe::par;
use semprobe::probe::{fit_probe, load_probe, save_probe, FeatureIndex};
use semprobe::synthetic::{make_synthetic_task, pipeline_task};
use semprobe::uncertainty::score_batch;
use semprobe::{Execution, FeatureSpec, GenerationSet, Position, ProbeTarget, Stream, TrainingSet, UncertaintyReport};

use crate::config::Config;
use crate::manifest::RunManifest;
use crate::{
    BackendArg, BinarizeArgs, Cli, ClusterArgs, Command, EvalArgs, LabelArgs, LabelMethodArg, LabelsArg, ModeArg,
    PositionArg, ProtocolArg, PtrueArgs, ReportArgs, SampleArgs, ScoreArgs, SeArg, SplitArg, StreamArg, SynthArgs,
    TemplateArg, TrainProbeArgs,
};

/// One line of `cluster` output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterLine {
    pub id: String,
    pub clusters: Vec<Vec<usize>>,
}

/// One line of `ptrue` output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PtrueLine {
    pub id: String,
    pub p_true: f64,
}

/// `binarize` output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitFile {
    pub method: SplitMethod,
    pub se_source: SeSource,
    pub filter_quantiles: Option<(f64, f64)>,
    #[serde(flatten)]
    pub split: SplitResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layers(pub Vec<u16>);

pub fn parse_layers(s: &str) -> Result<Layers, String> {
    let num = |t: &str| t.trim().parse::<u16>().map_err(|e| format!("bad layer {t:?}: {e}"));
    let layers: Vec<u16> = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if layers.is_empty() {
        return Err(format!("{s:?} selects no layers"));
    }
    Ok(Layers(layers))
}

pub fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected LO,HI, got {s:?}"))?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad quantile {t:?}: {e}"));
    let (lo, hi) = (p(a)?, p(b)?);
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err(format!("need 0 <= LO < HI <= 1, got {s:?}"));
    }
    Ok((lo, hi))
}

struct Ctx {
    cfg: Config,
    exec: Execution,
}

impl Ctx {
    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, serde_json::to_value(&self.cfg).unwrap_or_default())
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let ctx = Ctx { cfg, exec };
    match cli.command {
        Command::Sample(a) => sample(&ctx, a),
        Command::Cluster(a) => cluster(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::Ptrue(a) => ptrue(&ctx, a),
        Command::Label(a) => label(&ctx, a),
        Command::Binarize(a) => binarize(&ctx, a),
        Command::TrainProbe(a) => train_probe(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Report(a) => report(a),
    }
}

/// Keeps the successes and turns any failure into an error after `write`
/// has saved them.
fn split_failures<T, E: std::fmt::Display>(items: Vec<Result<T, E>>, what: &str) -> (Vec<T>, Option<anyhow::Error>) {
    let total = items.len();
    let mut ok = Vec::with_capacity(total);
    let mut first = None;
    let mut failed = 0;
    for r in items {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                failed += 1;
                first.get_or_insert_with(|| e.to_string());
            }
        }
    }
    let err = first.map(|f| anyhow!("{failed} of {total} {what} failed; first: {f}"));
    (ok, err)
}

fn by_id<T>(items: &[T], id: impl Fn(&T) -> &str) -> HashMap<String, &T> {
    items.iter().map(|t| (id(t).to_owned(), t)).collect()
}

fn sample(ctx: &Ctx, a: SampleArgs) -> Result<()> {
    let records = read_qa_jsonl(&a.qa)?;
    let template = match a.template {
        TemplateArg::Long => PromptTemplate::new(PromptKind::LongForm),
        TemplateArg::Context => PromptTemplate::new(PromptKind::Context),
        TemplateArg::Short => {
            let pool = match &a.shots {
                Some(p) => read_qa_jsonl(p)?,
                None => records.clone(),
            };
            let shots: Vec<(String, String)> = pool
                .iter()
                .filter_map(|r| r.answers.first().map(|ans| (r.question.clone(), ans.clone())))
                .take(5)
                .collect();
            PromptTemplate::short_form(shots)
        }
    };
    let mut decode = ctx.cfg.decode;
    if let Some(n) = a.n_samples {
        decode.n_samples = n;
    }
    let client = GatewayClient::new(ctx.cfg.gateway())?;
    let results = client.sample_many(&records, &template, &decode, ctx.exec);
    let (sets, err) = split_failures(results, "records");
    write_jsonl(&a.out, &sets)?;
    let mut m = ctx.manifest("sample");
    m.input(&a.qa).output(&a.out);
    m.write_next_to(&a.out)?;
    err.map_or(Ok(()), Err)
}

fn backend(ctx: &Ctx, a: &ClusterArgs) -> Result<Box<dyn Entailer>> {
    let inner: Box<dyn Entailer> = match a.backend {
        BackendArg::Lexical => Box::new(LexicalEntailer),
        BackendArg::Nli => {
            let url = a
                .nli_url
                .clone()
                .or_else(|| ctx.cfg.entailment.nli_url.clone())
                .ok_or_else(|| anyhow!("--backend nli needs --nli-url or entailment.nli_url"))?;
            Box::new(NliHttpEntailer::new(url, Duration::from_secs_f64(ctx.cfg.entailment.nli_timeout_secs)))
        }
        BackendArg::Judge => Box::new(JudgeEntailer::new(GatewayClient::new(ctx.cfg.gateway())?)),
    };
    Ok(match a.cache.as_ref().or(ctx.cfg.entailment.cache.as_ref()) {
        Some(path) => Box::new(CachedEntailer::new(inner, EntailmentCache::open(path)?)),
        None => inner,
    })
}

fn cluster(ctx: &Ctx, a: ClusterArgs) -> Result<()> {
    let gens = read_generations_jsonl(&a.gens)?;
    let questions: Option<HashMap<String, String>> = match &a.qa {
        Some(p) => Some(read_qa_jsonl(p)?.into_iter().map(|r| (r.id, r.question)).collect()),
        None => None,
    };
    let batch: Vec<Vec<String>> = gens
        .iter()
        .map(|g| {
            let texts = g.sample_texts();
            match &questions {
                Some(q) => {
                    let question = q.get(&g.id).ok_or_else(|| anyhow!("no question for {:?}", g.id))?;
                    Ok(condition_on_question(question, &texts))
                }
                None => Ok(texts.into_iter().map(str::to_owned).collect()),
            }
        })
        .collect::<Result<_>>()?;
    let mode = match a.mode {
        ModeArg::First => ClusterMode::FirstMember,
        ModeArg::All => ClusterMode::AllMembers,
    };
    let judge = backend(ctx, &a)?;
    let results: Vec<Result<ClusterLine, String>> = cluster_batch(ctx.exec, &batch, &judge, mode)
        .into_iter()
        .zip(&gens)
        .map(|(r, g)| {
            r.map(|c| ClusterLine { id: g.id.clone(), clusters: c.clusters })
                .map_err(|e| format!("{}: {e}", g.id))
        })
        .collect();
    let (lines, err) = split_failures(results, "queries");
    write_jsonl(&a.out, &lines)?;
    let mut m = ctx.manifest("cluster");
    m.input(&a.gens).output(&a.out);
    m.write_next_to(&a.out)?;
    err.map_or(Ok(()), Err)
}

fn score(ctx: &Ctx, a: ScoreArgs) -> Result<()> {
    let gens = read_generations_jsonl(&a.gens)?;
    let lines: Vec<ClusterLine> = read_jsonl(&a.clusters)?;
    let clusters = by_id(&lines, |l| &l.id);
    let clusterings: Vec<SemanticClustering> = gens
        .iter()
        .map(|g| {
            clusters
                .get(&g.id)
                .map(|l| SemanticClustering { clusters: l.clusters.clone() })
                .ok_or_else(|| anyhow!("no clusters for {:?}", g.id))
        })
        .collect::<Result<_>>()?;
    let results: Vec<Result<UncertaintyReport, String>> = score_batch(ctx.exec, &gens, &clusterings)
        .into_iter()
        .zip(&gens)
        .map(|(r, g)| r.map_err(|e| format!("{}: {e}", g.id)))
        .collect();
    let (mut reports, err) = split_failures(results, "queries");
    if let Some(p) = &a.ptrue {
        let scores: Vec<PtrueLine> = read_jsonl(p)?;
        let scores = by_id(&scores, |s| &s.id);
        for r in &mut reports {
            r.p_true = scores.get(&r.id).map(|s| s.p_true);
        }
    }
    write_jsonl(&a.out, &reports)?;
    let mut m = ctx.manifest("score");
    m.input(&a.gens).input(&a.clusters).output(&a.out);
    if let Some(p) = &a.ptrue {
        m.input(p);
    }
    m.write_next_to(&a.out)?;
    err.map_or(Ok(()), Err)
}

fn ptrue(ctx: &Ctx, a: PtrueArgs) -> Result<()> {
    let records = read_qa_jsonl(&a.qa)?;
    let gens = read_generations_jsonl(&a.gens)?;
    let gen_of = by_id(&gens, |g| &g.id);
    let blocks: Vec<PTrueBlock> = records
        .iter()
        .filter_map(|r| gen_of.get(&r.id).map(|g| (r, g)))
        .take(a.shots)
        .map(|(r, g)| PTrueBlock {
            question: r.question.clone(),
            brainstormed: g.samples.iter().map(|s| s.text.clone()).collect(),
            possible_answer: g.greedy.text.clone(),
            correct: squad_f1(&g.greedy.text, &r.answers) >= ctx.cfg.eval.f1_threshold,
        })
        .collect();
    if blocks.len() < a.shots {
        bail!("need {} few-shot records with generations, found {}", a.shots, blocks.len());
    }
    let client = GatewayClient::new(ctx.cfg.gateway())?;
    let width = ctx.cfg.gateway.max_parallel_requests;
    let results = par::map_bounded(ctx.exec, width, &records, |r| -> Result<PtrueLine, String> {
        let g: &GenerationSet = gen_of.get(&r.id).ok_or_else(|| format!("no generations for {:?}", r.id))?;
        client
            .p_true_score(r, g, &blocks)
            .map(|p_true| PtrueLine { id: r.id.clone(), p_true })
            .map_err(|e| format!("{}: {e}", r.id))
    });
    let (lines, err) = split_failures(results, "records");
    write_jsonl(&a.out, &lines)?;
    let mut m = ctx.manifest("ptrue");
    m.input(&a.qa).input(&a.gens).output(&a.out);
    m.write_next_to(&a.out)?;
    err.map_or(Ok(()), Err)
}

fn label(ctx: &Ctx, a: LabelArgs) -> Result<()> {
    let records = read_qa_jsonl(&a.qa)?;
    let gens = read_generations_jsonl(&a.gens)?;
    let (labels, err) = match a.method {
        LabelMethodArg::F1 => {
            let t = a.threshold.unwrap_or(ctx.cfg.eval.f1_threshold);
            (label_correctness_short(&records, &gens, t)?, None)
        }
        LabelMethodArg::Judge => {
            let client = GatewayClient::new(ctx.cfg.gateway())?;
            let results = label_correctness_long(ctx.exec, &records, &gens, |r, ans| client.judge_correctness(r, ans));
            split_failures(results, "records")
        }
    };
    write_jsonl(&a.out, &labels)?;
    let mut m = ctx.manifest("label");
    m.input(&a.qa).input(&a.gens).output(&a.out);
    m.write_next_to(&a.out)?;
    err.map_or(Ok(()), Err)
}

fn se_values(reports: &[UncertaintyReport], source: SeSource) -> Result<Vec<(String, f64)>> {
    reports
        .iter()
        .map(|r| {
            let v = match source {
                SeSource::Discrete => r.semantic_entropy_discrete,
                SeSource::Mc => r
                    .semantic_entropy_mc
                    .ok_or_else(|| anyhow!("{:?} has no MC semantic entropy", r.id))?,
            };
            Ok((r.id.clone(), v))
        })
        .collect()
}

fn make_split(
    reports: &[UncertaintyReport],
    method: SplitMethod,
    source: SeSource,
    band: Option<(f64, f64)>,
) -> Result<SplitFile> {
    let mut values = se_values(reports, source)?;
    if let Some((lo, hi)) = band {
        let keep: BTreeSet<String> = filter_quantile_band(&values, lo, hi)?.into_iter().collect();
        values.retain(|(id, _)| keep.contains(id));
    }
    let split = match method {
        SplitMethod::Best => best_split(&values)?,
        SplitMethod::Even => even_split(&values)?,
    };
    Ok(SplitFile { method, se_source: source, filter_quantiles: band, split })
}

fn binarize(ctx: &Ctx, a: BinarizeArgs) -> Result<()> {
    let reports: Vec<UncertaintyReport> = read_jsonl(&a.reports)?;
    let method = match a.method {
        SplitArg::Best => SplitMethod::Best,
        SplitArg::Even => SplitMethod::Even,
    };
    let source = match a.se {
        Some(SeArg::Discrete) => SeSource::Discrete,
        Some(SeArg::Mc) => SeSource::Mc,
        None => ctx.cfg.eval.se_source,
    };
    let file = make_split(&reports, method, source, a.filter_quantiles.or(ctx.cfg.eval.filter_quantiles))?;
    std::fs::write(&a.out, serde_json::to_string_pretty(&file)?)?;
    println!(
        "gamma* = {} ({} low, {} high, objective {})",
        file.split.gamma_star, file.split.class_sizes.0, file.split.class_sizes.1, file.split.objective_value
    );
    let mut m = ctx.manifest("binarize");
    m.input(&a.reports).output(&a.out);
    m.write_next_to(&a.out)
}

fn train_probe(ctx: &Ctx, a: TrainProbeArgs) -> Result<()> {
    let position = match a.position {
        PositionArg::Slt => Position::Slt,
        PositionArg::Tbg => Position::Tbg,
    };
    let stream = match a.stream {
        StreamArg::Hidden => Stream::Hidden,
        StreamArg::Residual => Stream::Residual,
        StreamArg::Mlp => Stream::Mlp,
    };
    let mut m = ctx.manifest("train-probe");
    m.input(&a.archive);
    let (target, labels, gamma): (ProbeTarget, BTreeMap<String, u8>, Option<f64>) = match a.labels {
        LabelsArg::Se => {
            let file = match (&a.split, &a.reports) {
                (Some(p), _) => {
                    m.input(p);
                    serde_json::from_str::<SplitFile>(&std::fs::read_to_string(p)?)
                        .with_context(|| format!("parsing {}", p.display()))?
                }
                (None, Some(p)) => {
                    m.input(p);
                    let reports: Vec<UncertaintyReport> = read_jsonl(p)?;
                    let e = &ctx.cfg.eval;
                    make_split(&reports, e.split, e.se_source, e.filter_quantiles)?
                }
                (None, None) => bail!("--labels se needs --split or --reports"),
            };
            (ProbeTarget::Se, file.split.labels, Some(file.split.gamma_star))
        }
        LabelsArg::Acc => {
            let p = a.correctness.as_ref().ok_or_else(|| anyhow!("--labels acc needs --correctness"))?;
            m.input(p);
            let labels: Vec<CorrectnessLabel> = read_jsonl(p)?;
            (ProbeTarget::Accuracy, labels.into_iter().map(|l| (l.id, u8::from(l.correct))).collect(), None)
        }
    };
    let filter = ArchiveFilter {
        position: Some(position),
        stream: Some(stream),
        layers: Some(a.layers.0.iter().copied().collect()),
    };
    let (manifest, records) = read_hidden_archive(&a.archive, &filter)?;
    let spec = FeatureSpec::new(position, stream, a.layers.0.clone(), manifest.hidden_dim)?;
    spec.validate(Some(manifest.n_layers))?;
    let index = FeatureIndex::new(&records, &spec);
    let ids: Vec<String> = labels.keys().cloned().collect();
    let features = index.matrix(&ids)?;
    let y: Vec<u8> = labels.values().copied().collect();
    let ts = TrainingSet::new(features, spec.concat_dim(), y, ids)?;
    let opts = semprobe::probe::FitOptions { exec: ctx.exec, ..ctx.cfg.probe.fit_options() };
    let mut model = fit_probe(&ts, spec, target, &opts)?;
    model.gamma_star = gamma;
    if let Some(stem) = a.archive.file_stem() {
        model.training_meta.tasks = vec![stem.to_string_lossy().into_owned()];
    }
    if !model.training_meta.converged {
        log::warn!("probe stopped after {} iterations without converging", model.training_meta.iterations);
    }
    save_probe(&a.out, &model)?;
    m.seed = Some(opts.seed);
    m.output(&a.out);
    m.write_next_to(&a.out)
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let protocol = match a.protocol {
        ProtocolArg::InDist => Protocol::InDist,
        ProtocolArg::Holdout => Protocol::HoldoutTrain,
        ProtocolArg::Loo => Protocol::SingleTrainLoo,
    };
    let e = &ctx.cfg.eval;
    let (results, failures): (Vec<EvalResult>, Vec<CellFailure>) = if a.probes.is_empty() {
        let tasks = a
            .tasks
            .iter()
            .map(|p| {
                load_task(p, e.se_source, e.test_fraction, e.split_seed).with_context(|| format!("loading {}", p.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        let pc = ProtocolConfig {
            split: e.split,
            quantile_band: e.filter_quantiles,
            fit: ctx.cfg.probe.fit_options(),
            max_train: None,
            exec: ctx.exec,
        };
        let report = run_protocol(protocol, &tasks, &pc)?;
        (report.results, report.failures)
    } else {
        let mut results = Vec::new();
        let mut failures = Vec::new();
        for p in &a.probes {
            let model = load_probe(p).with_context(|| format!("loading {}", p.display()))?;
            let spec = &model.feature_spec;
            let features = TaskFeatures { position: spec.position, stream: spec.stream, layers: spec.layers.clone() };
            for path in &a.tasks {
                let task = load_task_with(path, Some(&features), e.se_source, e.test_fraction, e.split_seed)
                    .with_context(|| format!("loading {} for {}", path.display(), p.display()))?;
                for (predictor, _, r) in evaluate_probe(&model, &task, protocol, ctx.exec) {
                    match r {
                        Ok(res) => results.push(res),
                        Err(err) => failures.push(CellFailure {
                            predictor,
                            train_tasks: model.training_meta.tasks.clone(),
                            eval_task: task.name.clone(),
                            error: err.to_string(),
                        }),
                    }
                }
            }
        }
        (results, failures)
    };
    write_results_csv(&a.out, &results)?;
    print!("{}", render_table(&results));
    let mut m = ctx.manifest("eval");
    for t in a.tasks.iter().chain(&a.probes) {
        m.input(t);
    }
    m.seed = Some(e.split_seed);
    m.output(&a.out);
    if !failures.is_empty() {
        let mut name = a.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".failures.json");
        let path = a.out.with_file_name(name);
        std::fs::write(&path, serde_json::to_string_pretty(&failures)?)?;
        m.output(&path);
        m.write_next_to(&a.out)?;
        bail!("{} evaluation cells failed; see {}", failures.len(), path.display());
    }
    m.write_next_to(&a.out)
}

fn default_features(cfg: &Config) -> TaskFeatures {
    cfg.features.clone().unwrap_or_else(|| TaskFeatures {
        position: Position::Slt,
        stream: cfg.synthetic.streams.first().copied().unwrap_or(Stream::Hidden),
        layers: vec![cfg.synthetic.n_layers.saturating_sub(1) as u16],
    })
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let mut lab = ctx.cfg.synthetic.clone();
    if let Some(s) = a.seed {
        lab.seed = s;
    }
    if let Some(n) = &a.name {
        lab.name = n.clone();
    }
    if let Some(n) = a.n_prompts {
        lab.n_prompts = n;
    }
    let world = make_synthetic_task(&lab, ctx.exec)?;
    let dir: &Path = &a.out_dir;
    world.write_to(dir)?;
    let features = default_features(&ctx.cfg);
    let e = &ctx.cfg.eval;
    let (_, reports) = pipeline_task(&world, &features, e.test_fraction, e.split_seed, ctx.exec)?;
    let labels = label_correctness_short(&world.records, &world.generations, e.f1_threshold)?;
    write_jsonl(dir.join("reports.jsonl"), &reports)?;
    write_jsonl(dir.join("correctness.jsonl"), &labels)?;
    let task = TaskManifest {
        name: lab.name.clone(),
        reports: "reports.jsonl".into(),
        correctness: "correctness.jsonl".into(),
        archive: "hidden.seph".into(),
        features,
        qa: Some("qa.jsonl".into()),
        generations: Some("generations.jsonl".into()),
    };
    std::fs::write(dir.join("task.json"), serde_json::to_string_pretty(&task)?)?;
    println!(
        "{}: {} prompts, accuracy {:.3}, mean gold SE {:.3}",
        lab.name,
        lab.n_prompts,
        world.accuracy(),
        world.mean_gold_se()
    );
    let mut m = ctx.manifest("synth");
    m.config = serde_json::json!({ "synthetic": lab, "run": m.config });
    m.seed = Some(lab.seed);
    for f in ["qa.jsonl", "generations.jsonl", "hidden.seph", "gold.jsonl", "reports.jsonl", "correctness.jsonl", "task.json"] {
        m.output(dir.join(f));
    }
    m.write_next_to(dir)
}

fn report(a: ReportArgs) -> Result<()> {
    let results = read_results_csv(&a.results)?;
    print!("{}", render_table(&results));
    Ok(())
}
