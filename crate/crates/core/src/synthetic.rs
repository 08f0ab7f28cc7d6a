//! Synthetic world with planted ground truth.
//!
//! Each prompt has a distribution over `M` meanings. Samples are drawn from
//! it and rendered as surface variants of a made-up answer word, so any
//! normalizing matcher (and the exact oracle here) recovers the meaning
//! clusters. Hidden states carry the gold semantic entropy along a fixed
//! direction, plus optional task-specific correctness shortcuts.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clustering::{cluster_batch, ClusterMode};
use crate::dataset_store::{
    write_hidden_archive, write_jsonl, ArchiveManifest, DecodeConfig, GenerationSample,
    GenerationSet, HiddenStateRecord, Position, QARecord, StoreError, Stream,
};
use crate::entailment::{BackendKind, Entailer, EntailmentError, EntailmentJudgment, EntailmentLabel};
use crate::evaluation::{label_correctness_short, test_split, TaskData, TaskFeatures, DEFAULT_F1_THRESHOLD};
use crate::par::{self, Execution};
use crate::probe::{assemble_features, FeatureSpec};
use crate::text::normalized_tokens;
use crate::uncertainty::{entropy_of_counts, score_batch, UncertaintyReport};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("bad synthetic config: {0}")]
    BadConfig(String),
    #[error("pipeline: {0}")]
    Pipeline(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SyntheticError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    pub name: String,
    pub seed: u64,
    pub n_prompts: usize,
    pub n_meanings: usize,
    pub n_samples: usize,
    pub dirichlet_alpha: f64,
    pub paraphrases_per_meaning: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub signal_weight: f64,
    /// Expected norm of the per-record noise vector.
    pub noise_sigma: f64,
    pub context_effect: f64,
    /// Share of prompts whose distribution is pulled toward the gold meaning.
    pub known_fraction: f64,
    /// Mixing weight on the gold meaning for those prompts.
    pub knowledge_sharpening: f64,
    /// Seeds the SE direction and base vector; tasks sharing it share both.
    pub direction_seed: u64,
    /// Strength of the task-specific correctness direction.
    pub shortcut_weight: f64,
    /// Probability that the oracle reports NEUTRAL for a true entailment.
    pub nli_flip_rate: f64,
    pub streams: Vec<Stream>,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            seed: 0,
            n_prompts: 500,
            n_meanings: 10,
            n_samples: 10,
            dirichlet_alpha: 1.0,
            paraphrases_per_meaning: 4,
            hidden_dim: 64,
            n_layers: 4,
            signal_weight: 1.0,
            noise_sigma: 0.5,
            context_effect: 0.5,
            known_fraction: 0.5,
            knowledge_sharpening: 0.8,
            direction_seed: 0,
            shortcut_weight: 0.0,
            nli_flip_rate: 0.0,
            streams: vec![Stream::Hidden],
        }
    }
}

const VARIANTS: usize = 8;

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SyntheticError::BadConfig(m.into()));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_meanings < 1 {
            return bad("n_meanings must be >= 1");
        }
        if self.hidden_dim < 2 {
            return bad("hidden_dim must be >= 2");
        }
        if self.n_prompts < 1 || self.n_samples < 1 || self.n_layers < 1 {
            return bad("n_prompts, n_samples and n_layers must be >= 1");
        }
        if self.n_layers > usize::from(u16::MAX) {
            return bad("n_layers too large");
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return bad("dirichlet_alpha must be positive");
        }
        if !(1..=VARIANTS).contains(&self.paraphrases_per_meaning) {
            return bad("paraphrases_per_meaning must be in 1..=8");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be >= 0");
        }
        if !self.signal_weight.is_finite() || !self.shortcut_weight.is_finite() {
            return bad("weights must be finite");
        }
        if !unit(self.context_effect)
            || !unit(self.known_fraction)
            || !unit(self.knowledge_sharpening)
            || !unit(self.nli_flip_rate)
        {
            return bad("context_effect, known_fraction, knowledge_sharpening and nli_flip_rate must lie in [0, 1]");
        }
        if self.streams.is_empty() {
            return bad("no streams");
        }
        Ok(())
    }
}

/// Latent state of one prompt; generation is a pure function of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLatent {
    pub pi: Vec<f64>,
    pub gold: usize,
    pub known: bool,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub id: String,
    pub meaning_counts: Vec<usize>,
    pub gold_se: f64,
    pub correct: bool,
    pub known: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: SyntheticTaskConfig,
    pub latents: Vec<PromptLatent>,
    pub records: Vec<QARecord>,
    pub generations: Vec<GenerationSet>,
    pub hidden: Vec<HiddenStateRecord>,
    pub gold: Vec<GoldRecord>,
    /// Meaning index of every sample, per prompt.
    pub sample_meanings: Vec<Vec<usize>>,
    pub context_applied: Option<f64>,
}

const SYLLABLES: [&str; 16] = [
    "zor", "van", "kel", "mir", "tas", "qu", "den", "lo", "ri", "pex", "ul", "bra", "sen", "dov", "ka", "th",
];

fn letters(mut n: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (n % 26) as u8);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    String::from_utf8(out).expect("ascii")
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Surface variant `k` of `word`; every variant normalizes to `word`.
pub fn paraphrase(word: &str, k: usize) -> String {
    let cap = capitalize(word);
    let up = word.to_uppercase();
    match k % VARIANTS {
        0 => cap,
        1 => format!("{word}."),
        2 => format!("The {cap}"),
        3 => format!("{up}!"),
        4 => format!("the {word}."),
        5 => format!("A {word}"),
        6 => format!("{cap}?"),
        _ => format!("an {up}"),
    }
}

fn stream_rng(seed: u64, salt: u64, prompt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(prompt as u64);
    rng
}

const SALT_LATENT: u64 = 1;
const SALT_SAMPLES: u64 = 2;
const SALT_HIDDEN: u64 = 3;

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

struct Directions {
    base: Vec<f64>,
    se: Vec<f64>,
    shortcut: Vec<f64>,
}

fn directions(cfg: &SyntheticTaskConfig) -> Directions {
    let d = cfg.hidden_dim;
    let mut shared = ChaCha8Rng::seed_from_u64(cfg.direction_seed);
    let se = unit_vector(&mut shared, d);
    let base = unit_vector(&mut shared, d);
    // The shortcut is re-drawn per task and kept orthogonal to the SE axis.
    let mut own = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_C0DE);
    let mut v = unit_vector(&mut own, d);
    loop {
        let proj: f64 = v.iter().zip(&se).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(&se).for_each(|(a, b)| *a -= proj * b);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|a| *a /= norm);
            break;
        }
        v = unit_vector(&mut own, d);
    }
    Directions { base, se, shortcut: v }
}

fn draw_latent(cfg: &SyntheticTaskConfig, i: usize) -> PromptLatent {
    let m = cfg.n_meanings;
    let mut rng = stream_rng(cfg.seed, SALT_LATENT, i);
    let mut pi = if m == 1 {
        vec![1.0]
    } else {
        // Dirichlet draw as normalized Gamma(α, 1) variates.
        let gamma = Gamma::new(cfg.dirichlet_alpha, 1.0).expect("validated alpha");
        (0..m).map(|_| gamma.sample(&mut rng)).collect()
    };
    // Tiny alphas can underflow every component.
    let total: f64 = pi.iter().sum();
    if !(total > 0.0) || pi.iter().any(|p| !p.is_finite()) {
        pi = vec![0.0; m];
        pi[rng.random_range(0..m)] = 1.0;
    } else {
        pi.iter_mut().for_each(|p| *p /= total);
    }
    let gold = rng.random_range(0..m);
    let known = rng.random::<f64>() < cfg.known_fraction;
    if known {
        let s = cfg.knowledge_sharpening;
        pi.iter_mut().for_each(|p| *p *= 1.0 - s);
        pi[gold] += s;
    }
    let words = (0..m)
        .map(|k| {
            let a = SYLLABLES[rng.random_range(0..SYLLABLES.len())];
            let b = SYLLABLES[rng.random_range(0..SYLLABLES.len())];
            format!("{a}{b}{}", letters(i * m + k))
        })
        .collect();
    PromptLatent { pi, gold, known, words }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn sample_of(text: String, log_prob: f64, temperature: f64) -> GenerationSample {
    let n_tokens = text.split_whitespace().count().max(1);
    GenerationSample {
        token_log_probs: vec![(log_prob / n_tokens as f64).min(0.0); n_tokens],
        text,
        temperature,
    }
}

struct PromptOutput {
    record: QARecord,
    generation: GenerationSet,
    hidden: Vec<HiddenStateRecord>,
    gold: GoldRecord,
    meanings: Vec<usize>,
}

fn render_prompt(
    cfg: &SyntheticTaskConfig,
    dirs: &Directions,
    i: usize,
    latent: &PromptLatent,
    context: Option<f64>,
) -> PromptOutput {
    let id = format!("{}-{i:05}", cfg.name);
    let p = cfg.paraphrases_per_meaning;
    let mut rng = stream_rng(cfg.seed, SALT_SAMPLES, i);
    let mut meanings = Vec::with_capacity(cfg.n_samples);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        // Inverse-CDF draw so one uniform is consumed per sample.
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut m = latent.pi.len() - 1;
        for (k, pk) in latent.pi.iter().enumerate() {
            acc += pk;
            if u < acc && *pk > 0.0 {
                m = k;
                break;
            }
        }
        while latent.pi[m] <= 0.0 {
            m -= 1;
        }
        let variant = rng.random_range(0..p);
        meanings.push(m);
        let lp = latent.pi[m].ln() - (p as f64).ln();
        samples.push(sample_of(paraphrase(&latent.words[m], variant), lp, 1.0));
    }
    let top = argmax(&latent.pi);
    let greedy = sample_of(paraphrase(&latent.words[top], 0), latent.pi[top].ln() - (p as f64).ln(), 0.0);
    let mut counts = vec![0usize; latent.pi.len()];
    for &m in &meanings {
        counts[m] += 1;
    }
    let gold_se = entropy_of_counts(&counts);
    let correct = top == latent.gold;

    let d = cfg.hidden_dim;
    let noise_scale = cfg.noise_sigma / (d as f64).sqrt();
    let mut hrng = stream_rng(cfg.seed, SALT_HIDDEN, i);
    let sign = if correct { 1.0 } else { -1.0 };
    let mut hidden = Vec::with_capacity(cfg.n_layers * 2 * cfg.streams.len());
    for layer in 0..cfg.n_layers {
        let depth = (layer + 1) as f64 / cfg.n_layers as f64;
        for position in [Position::Slt, Position::Tbg] {
            for &stream in &cfg.streams {
                let vector = (0..d)
                    .map(|j| {
                        let noise: f64 = hrng.sample(StandardNormal);
                        (dirs.base[j]
                            + cfg.signal_weight * depth * gold_se * dirs.se[j]
                            + cfg.shortcut_weight * sign * dirs.shortcut[j]
                            + noise_scale * noise) as f32
                    })
                    .collect();
                hidden.push(HiddenStateRecord {
                    id: id.clone(),
                    position,
                    stream,
                    layer: layer as u16,
                    vector,
                });
            }
        }
    }

    let gold_word = &latent.words[latent.gold];
    let record = QARecord {
        id: id.clone(),
        question: format!("Which name was recorded for entry {i} of {}?", cfg.name),
        context: context.map(|_| format!("The recorded name for entry {i} is {}.", capitalize(gold_word))),
        answers: vec![capitalize(gold_word)],
        dataset: cfg.name.clone(),
    };
    PromptOutput {
        record,
        generation: GenerationSet {
            id: id.clone(),
            greedy,
            samples,
            decode_config: DecodeConfig {
                n_samples: cfg.n_samples,
                ..DecodeConfig::default()
            },
        },
        hidden,
        gold: GoldRecord {
            id,
            meaning_counts: counts,
            gold_se,
            correct,
            known: latent.known,
        },
        meanings,
    }
}

fn assemble(
    config: &SyntheticTaskConfig,
    latents: Vec<PromptLatent>,
    context: Option<f64>,
    exec: Execution,
) -> SyntheticWorld {
    let dirs = directions(config);
    let idx: Vec<usize> = (0..latents.len()).collect();
    let outputs = par::map(exec, &idx, |&i| render_prompt(config, &dirs, i, &latents[i], context));
    let mut world = SyntheticWorld {
        config: config.clone(),
        latents: Vec::new(),
        records: Vec::with_capacity(outputs.len()),
        generations: Vec::with_capacity(outputs.len()),
        hidden: Vec::with_capacity(outputs.len() * config.n_layers * 2),
        gold: Vec::with_capacity(outputs.len()),
        sample_meanings: Vec::with_capacity(outputs.len()),
        context_applied: context,
    };
    for o in outputs {
        world.records.push(o.record);
        world.generations.push(o.generation);
        world.hidden.extend(o.hidden);
        world.gold.push(o.gold);
        world.sample_meanings.push(o.meanings);
    }
    world.latents = latents;
    world
}

/// Builds a world. Prompts are generated independently from per-prompt
/// random streams, so the result is identical in either execution mode.
pub fn make_synthetic_task(config: &SyntheticTaskConfig, exec: Execution) -> Result<SyntheticWorld> {
    config.validate()?;
    let latents = par::map_range(exec, config.n_prompts, |i| draw_latent(config, i));
    Ok(assemble(config, latents, None, exec))
}

/// Counterfactual with context: each distribution is mixed toward its gold
/// meaning with weight `effect`, then samples and hidden states are redrawn
/// from the same random streams. `effect = 0` reproduces the world.
pub fn apply_context(world: &SyntheticWorld, effect: f64, exec: Execution) -> Result<SyntheticWorld> {
    if !(0.0..=1.0).contains(&effect) {
        return Err(SyntheticError::BadConfig(format!("context effect {effect} not in [0, 1]")));
    }
    let latents: Vec<PromptLatent> = world
        .latents
        .iter()
        .map(|l| {
            let mut pi: Vec<f64> = l.pi.iter().map(|p| (1.0 - effect) * p).collect();
            pi[l.gold] += effect;
            PromptLatent { pi, ..l.clone() }
        })
        .collect();
    let context = if effect > 0.0 { Some(effect) } else { world.context_applied };
    Ok(assemble(&world.config, latents, context, exec))
}

impl SyntheticWorld {
    pub fn oracle(&self) -> OracleEntailer {
        let mut meaning_of = HashMap::new();
        for (i, l) in self.latents.iter().enumerate() {
            for (k, w) in l.words.iter().enumerate() {
                meaning_of.insert(w.clone(), (i, k));
            }
        }
        OracleEntailer {
            meaning_of,
            flip_rate: self.config.nli_flip_rate,
            seed: self.config.seed,
        }
    }

    pub fn manifest(&self) -> ArchiveManifest {
        ArchiveManifest::new(
            format!("synthetic:{}", self.config.name),
            self.config.hidden_dim,
            self.config.n_layers,
            vec![Position::Slt, Position::Tbg],
            self.config.streams.clone(),
        )
    }

    pub fn accuracy(&self) -> f64 {
        self.gold.iter().filter(|g| g.correct).count() as f64 / self.gold.len() as f64
    }

    pub fn mean_gold_se(&self) -> f64 {
        self.gold.iter().map(|g| g.gold_se).sum::<f64>() / self.gold.len() as f64
    }

    /// Writes `qa.jsonl`, `generations.jsonl`, `hidden.seph` and
    /// `gold.jsonl` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_jsonl(dir.join("qa.jsonl"), &self.records)?;
        write_jsonl(dir.join("generations.jsonl"), &self.generations)?;
        write_hidden_archive(&self.manifest(), self.hidden.iter(), dir.join("hidden.seph"))?;
        write_jsonl(dir.join("gold.jsonl"), &self.gold)?;
        Ok(())
    }
}

/// Exact meaning-equivalence for one synthetic world. The answer word is
/// the last normalized token of any rendering, with or without a question
/// prefix.
#[derive(Debug, Clone)]
pub struct OracleEntailer {
    meaning_of: HashMap<String, (usize, usize)>,
    flip_rate: f64,
    seed: u64,
}

impl OracleEntailer {
    fn meaning(&self, text: &str) -> Option<(usize, usize)> {
        normalized_tokens(text)
            .last()
            .and_then(|w| self.meaning_of.get(w).copied())
    }

    fn flipped(&self, a: &str, b: &str) -> bool {
        if self.flip_rate <= 0.0 {
            return false;
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(a.as_bytes());
        h.update([0u8]);
        h.update(b.as_bytes());
        let bytes: [u8; 32] = h.finalize().into();
        let x = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        (x as f64 / u64::MAX as f64) < self.flip_rate
    }
}

impl Entailer for OracleEntailer {
    fn kind(&self) -> BackendKind {
        BackendKind::Oracle
    }

    fn judge(&self, a: &str, b: &str) -> std::result::Result<EntailmentJudgment, EntailmentError> {
        let same = match (self.meaning(a), self.meaning(b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        };
        let label = if same && !self.flipped(a, b) {
            EntailmentLabel::Entailment
        } else if same {
            EntailmentLabel::Neutral
        } else {
            EntailmentLabel::Contradiction
        };
        Ok(EntailmentJudgment {
            label,
            source: BackendKind::Oracle,
            cached: false,
        })
    }
}


/// Runs the offline pipeline over a world: oracle clustering, scoring, F1
/// correctness and feature assembly, then checks the pipeline's cluster
/// counts against the world's own bookkeeping.
pub fn pipeline_task(
    world: &SyntheticWorld,
    features: &TaskFeatures,
    test_fraction: f64,
    split_seed: u64,
    exec: Execution,
) -> Result<(TaskData, Vec<UncertaintyReport>)> {
    let fail = |m: String| SyntheticError::Pipeline(m);
    let oracle = world.oracle();
    let texts: Vec<Vec<&str>> = world.generations.iter().map(|g| g.sample_texts()).collect();
    let clusterings = cluster_batch(exec, &texts, &oracle, ClusterMode::FirstMember)
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| fail(e.to_string()))?;
    for ((c, gold), meanings) in clusterings.iter().zip(&world.gold).zip(&world.sample_meanings) {
        let mut sizes = c.sizes();
        sizes.sort_unstable();
        let mut expected: Vec<usize> = gold.meaning_counts.iter().copied().filter(|&n| n > 0).collect();
        expected.sort_unstable();
        if sizes != expected || c.clusters.iter().any(|m| m.iter().any(|&i| meanings[i] != meanings[m[0]])) {
            return Err(fail(format!("clusters for {} disagree with the planted meanings", gold.id)));
        }
    }
    let reports = score_batch(exec, &world.generations, &clusterings)
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| fail(e.to_string()))?;
    let labels = label_correctness_short(&world.records, &world.generations, DEFAULT_F1_THRESHOLD)
        .map_err(|e| fail(e.to_string()))?;
    let spec = FeatureSpec::new(features.position, features.stream, features.layers.clone(), world.config.hidden_dim)
        .map_err(|e| fail(e.to_string()))?;
    let ids: Vec<String> = world.records.iter().map(|r| r.id.clone()).collect();
    let matrix = assemble_features(&world.hidden, &spec, &ids).map_err(|e| fail(e.to_string()))?;
    let mut baselines = BTreeMap::new();
    baselines.insert("se_mc".to_owned(), reports.iter().map(|r| r.semantic_entropy_mc.unwrap_or(0.0)).collect());
    baselines.insert("se_discrete".to_owned(), reports.iter().map(|r| r.semantic_entropy_discrete).collect());
    baselines.insert("naive_entropy".to_owned(), reports.iter().map(|r| r.naive_entropy.unwrap_or(0.0)).collect());
    baselines.insert("neg_ll".to_owned(), reports.iter().map(|r| r.neg_log_likelihood.unwrap_or(0.0)).collect());
    let test = test_split(&ids, test_fraction, split_seed);
    let task = TaskData::new(
        world.config.name.clone(),
        ids,
        matrix,
        spec,
        reports.iter().map(|r| r.semantic_entropy_discrete).collect(),
        labels.iter().map(|l| l.correct).collect(),
        baselines,
        test,
    )
    .map_err(|e| fail(e.to_string()))?;
    Ok((task, reports))
}
