use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{auroc, EvalError, EvalResult, Gold, Protocol, Result, RowKind, TaskData};
use crate::binarization::{best_split, even_split};
use crate::dataset_store::filter_quantile_band;
use crate::par::{self, Execution};
use crate::probe::{fit_probe, FitOptions, ProbeModel, ProbeTarget, TrainingSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    #[default]
    Best,
    Even,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProbeKind {
    Sep,
    Accuracy,
}

impl ProbeKind {
    pub fn tag(self) -> &'static str {
        match self {
            ProbeKind::Sep => "sep",
            ProbeKind::Accuracy => "acc_probe",
        }
    }

    fn target(self) -> ProbeTarget {
        match self {
            ProbeKind::Sep => ProbeTarget::Se,
            ProbeKind::Accuracy => ProbeTarget::Accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub split: SplitMethod,
    /// Quantile band applied to SE values before binarizing SEP labels.
    /// Accuracy probes are never filtered.
    pub quantile_band: Option<(f64, f64)>,
    pub fit: FitOptions,
    /// Cap on training rows per probe, taken in task order.
    pub max_train: Option<usize>,
    pub exec: Execution,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            split: SplitMethod::Best,
            quantile_band: None,
            fit: FitOptions::default(),
            max_train: None,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub predictor: String,
    pub train_tasks: Vec<String>,
    pub eval_task: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProtocolReport {
    pub results: Vec<EvalResult>,
    pub failures: Vec<CellFailure>,
}

/// Trains one probe on the non-test rows of `tasks`.
pub fn train_probe_on(tasks: &[&TaskData], kind: ProbeKind, cfg: &ProtocolConfig) -> Result<ProbeModel> {
    let first = tasks.first().ok_or_else(|| EvalError::BadTask {
        task: String::new(),
        message: "no training task".into(),
    })?;
    let spec = first.feature_spec.clone();
    if let Some(t) = tasks.iter().find(|t| t.feature_spec != spec) {
        return Err(EvalError::BadTask {
            task: t.name.clone(),
            message: "feature spec differs from the other training tasks".into(),
        });
    }
    let mut rows: Vec<(&TaskData, usize)> = tasks.iter().flat_map(|t| t.train_rows().map(move |i| (*t, i))).collect();
    if let Some(cap) = cfg.max_train {
        rows.truncate(cap);
    }
    let key = |t: &TaskData, i: usize| format!("{}\u{1f}{}", t.name, t.ids[i]);

    let mut gamma_star = None;
    let (rows, labels): (Vec<(&TaskData, usize)>, Vec<u8>) = match kind {
        ProbeKind::Accuracy => {
            let labels = rows.iter().map(|(t, i)| u8::from(t.correct[*i])).collect();
            (rows, labels)
        }
        ProbeKind::Sep => {
            let mut values: Vec<(String, f64)> = rows.iter().map(|(t, i)| (key(t, *i), t.se[*i])).collect();
            let mut rows = rows;
            if let Some((lo, hi)) = cfg.quantile_band {
                let keep: HashSet<String> = filter_quantile_band(&values, lo, hi)?.into_iter().collect();
                rows.retain(|(t, i)| keep.contains(&key(t, *i)));
                values.retain(|(k, _)| keep.contains(k));
            }
            let split = match cfg.split {
                SplitMethod::Best => best_split(&values)?,
                SplitMethod::Even => even_split(&values)?,
            };
            gamma_star = Some(split.gamma_star);
            let labels = rows.iter().map(|(t, i)| split.label_of(t.se[*i])).collect();
            (rows, labels)
        }
    };
    let mut features = Vec::with_capacity(rows.len() * spec.concat_dim());
    for (t, i) in &rows {
        features.extend_from_slice(t.row(*i));
    }
    let ids = rows.iter().map(|(t, i)| key(t, *i)).collect();
    let ts = TrainingSet::new(features, spec.concat_dim(), labels, ids)?;
    let mut model = fit_probe(&ts, spec, kind.target(), &cfg.fit)?;
    model.gamma_star = gamma_star;
    model.training_meta.tasks = tasks.iter().map(|t| t.name.clone()).collect();
    Ok(model)
}

fn cell(
    predictor: &str,
    protocol: Protocol,
    train_tasks: &[String],
    task: &TaskData,
    gold: Gold,
    scores: &[f64],
    labels: &[u8],
) -> Result<EvalResult> {
    let value = auroc(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    Ok(EvalResult {
        predictor: predictor.to_owned(),
        protocol,
        train_tasks: train_tasks.to_vec(),
        eval_task: task.name.clone(),
        gold,
        auroc: value,
        n_pos,
        n_neg: labels.len() - n_pos,
        row: RowKind::Cell,
    })
}

fn hallucination_gold(task: &TaskData, rows: &[usize]) -> Vec<u8> {
    rows.iter().map(|&i| u8::from(!task.correct[i])).collect()
}

/// Scores a fitted probe on the test rows of `task`. A SEP yields a
/// BINARIZED_SE row (labels from the probe's own threshold) and a
/// CORRECTNESS row; an accuracy probe yields a CORRECTNESS row.
pub fn evaluate_probe(
    model: &ProbeModel,
    task: &TaskData,
    protocol: Protocol,
    exec: Execution,
) -> Vec<(String, Gold, Result<EvalResult>)> {
    let rows: Vec<usize> = task.test_rows().collect();
    let train_tasks = &model.training_meta.tasks;
    let mut features = Vec::with_capacity(rows.len() * task.feature_spec.concat_dim());
    for &i in &rows {
        features.extend_from_slice(task.row(i));
    }
    let probs = match model.predict_batch(exec, &features) {
        Ok(p) => p,
        Err(e) => {
            let msg = e.to_string();
            let tag = match model.target {
                ProbeTarget::Se => "sep",
                ProbeTarget::Accuracy => "acc_probe",
            };
            return vec![(tag.into(), Gold::Correctness, Err(EvalError::BadTask { task: task.name.clone(), message: msg }))];
        }
    };
    let wrong = hallucination_gold(task, &rows);
    match model.target {
        ProbeTarget::Se => {
            let gamma = model.gamma_star.unwrap_or(f64::NAN);
            let high: Vec<u8> = rows.iter().map(|&i| u8::from(task.se[i] > gamma)).collect();
            vec![
                ("sep".into(), Gold::BinarizedSe, cell("sep", protocol, train_tasks, task, Gold::BinarizedSe, &probs, &high)),
                ("sep".into(), Gold::Correctness, cell("sep", protocol, train_tasks, task, Gold::Correctness, &probs, &wrong)),
            ]
        }
        ProbeTarget::Accuracy => {
            let p_wrong: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
            vec![(
                "acc_probe".into(),
                Gold::Correctness,
                cell("acc_probe", protocol, train_tasks, task, Gold::Correctness, &p_wrong, &wrong),
            )]
        }
    }
}

/// Runs one protocol over `tasks`. Every protocol evaluates on each task's
/// test rows; probes train on the non-test rows of the protocol's training
/// tasks. Failed cells are reported, not dropped silently.
pub fn run_protocol(protocol: Protocol, tasks: &[TaskData], cfg: &ProtocolConfig) -> Result<ProtocolReport> {
    if protocol != Protocol::InDist && tasks.len() < 2 {
        return Err(EvalError::NotEnoughTasks(protocol));
    }
    if tasks.is_empty() {
        return Ok(ProtocolReport::default());
    }
    let mut names = HashSet::new();
    if let Some(t) = tasks.iter().find(|t| !names.insert(t.name.as_str())) {
        return Err(EvalError::BadTask {
            task: t.name.clone(),
            message: "duplicate task name".into(),
        });
    }

    let n = tasks.len();
    let train_sets: Vec<Vec<usize>> = match protocol {
        Protocol::InDist | Protocol::SingleTrainLoo => (0..n).map(|t| vec![t]).collect(),
        Protocol::HoldoutTrain => (0..n).map(|e| (0..n).filter(|&t| t != e).collect()).collect(),
    };
    let jobs: Vec<(usize, ProbeKind)> = (0..train_sets.len())
        .flat_map(|s| [(s, ProbeKind::Sep), (s, ProbeKind::Accuracy)])
        .collect();
    // Probes train in parallel with each, single-threaded inside.
    let inner = ProtocolConfig {
        fit: FitOptions {
            exec: if cfg.exec.is_parallel() { Execution::Sequential } else { cfg.fit.exec },
            ..cfg.fit
        },
        ..cfg.clone()
    };
    let models: Vec<Result<ProbeModel>> = par::map(cfg.exec, &jobs, |&(s, kind)| {
        let chosen: Vec<&TaskData> = train_sets[s].iter().map(|&t| &tasks[t]).collect();
        train_probe_on(&chosen, kind, &inner)
    });

    // (job, eval task)
    let cells: Vec<(usize, usize)> = jobs
        .iter()
        .enumerate()
        .flat_map(|(j, &(s, _))| {
            let evals: Vec<usize> = match protocol {
                Protocol::InDist | Protocol::HoldoutTrain => vec![s],
                Protocol::SingleTrainLoo => (0..n).filter(|&e| e != s).collect(),
            };
            evals.into_iter().map(move |e| (j, e))
        })
        .collect();

    for &(j, e) in &cells {
        let (s, _) = jobs[j];
        let train: HashSet<(&str, &str)> = train_sets[s]
            .iter()
            .flat_map(|&t| tasks[t].train_rows().map(move |i| (tasks[t].name.as_str(), tasks[t].ids[i].as_str())))
            .collect();
        let leaked = tasks[e].test_rows().any(|i| train.contains(&(tasks[e].name.as_str(), tasks[e].ids[i].as_str())));
        assert!(!leaked, "evaluation rows of {} appear in a training set", tasks[e].name);
    }

    let evaluated: Vec<Vec<(String, Gold, Vec<String>, String, Result<EvalResult>)>> =
        par::map(cfg.exec, &cells, |&(j, e)| {
            let (s, kind) = jobs[j];
            let train_names: Vec<String> = train_sets[s].iter().map(|&t| tasks[t].name.clone()).collect();
            match &models[j] {
                Ok(model) => evaluate_probe(model, &tasks[e], protocol, Execution::Sequential)
                    .into_iter()
                    .map(|(p, g, r)| (p, g, train_names.clone(), tasks[e].name.clone(), r))
                    .collect(),
                Err(err) => vec![(
                    kind.tag().to_owned(),
                    Gold::Correctness,
                    train_names,
                    tasks[e].name.clone(),
                    Err(EvalError::BadTask {
                        task: tasks[e].name.clone(),
                        message: format!("training failed: {err}"),
                    }),
                )],
            }
        });

    let mut report = ProtocolReport::default();
    for (predictor, _, train_tasks, eval_task, r) in evaluated.into_iter().flatten() {
        match r {
            Ok(res) => report.results.push(res),
            Err(e) => report.failures.push(CellFailure {
                predictor,
                train_tasks,
                eval_task,
                error: e.to_string(),
            }),
        }
    }

    // Baselines need no training; one row per eval task.
    let baseline_rows: Vec<Vec<(String, Result<EvalResult>)>> = par::map(cfg.exec, tasks, |task| {
        let rows: Vec<usize> = task.test_rows().collect();
        let wrong = hallucination_gold(task, &rows);
        task.baselines
            .iter()
            .map(|(name, scores)| {
                let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
                (name.clone(), cell(name, protocol, &[], task, Gold::Correctness, &s, &wrong))
            })
            .collect()
    });
    for (task, rows) in tasks.iter().zip(baseline_rows) {
        for (predictor, r) in rows {
            match r {
                Ok(res) => report.results.push(res),
                Err(e) => report.failures.push(CellFailure {
                    predictor,
                    train_tasks: vec![],
                    eval_task: task.name.clone(),
                    error: e.to_string(),
                }),
            }
        }
    }

    if protocol == Protocol::SingleTrainLoo {
        let mut groups: BTreeMap<(String, Gold, String), Vec<&EvalResult>> = BTreeMap::new();
        for r in report.results.iter().filter(|r| !r.train_tasks.is_empty()) {
            groups
                .entry((r.predictor.clone(), r.gold, r.eval_task.clone()))
                .or_default()
                .push(r);
        }
        let means: Vec<EvalResult> = groups
            .into_values()
            .map(|rs| EvalResult {
                predictor: rs[0].predictor.clone(),
                protocol,
                train_tasks: rs.iter().flat_map(|r| r.train_tasks.clone()).collect(),
                eval_task: rs[0].eval_task.clone(),
                gold: rs[0].gold,
                auroc: rs.iter().map(|r| r.auroc).sum::<f64>() / rs.len() as f64,
                n_pos: rs[0].n_pos,
                n_neg: rs[0].n_neg,
                row: RowKind::Mean,
            })
            .collect();
        report.results.extend(means);
    }

    report.results.sort_by(|a, b| {
        (&a.eval_task, &a.predictor, a.gold, a.row, &a.train_tasks)
            .cmp(&(&b.eval_task, &b.predictor, b.gold, b.row, &b.train_tasks))
    });
    Ok(report)
}
