use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalResult, Gold, Protocol, Result, RowKind};
use crate::dataset_store::write_jsonl;

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    predictor: String,
    protocol: Protocol,
    train_tasks: String,
    eval_task: String,
    gold: Gold,
    auroc: f64,
    n_pos: usize,
    n_neg: usize,
    row: RowKind,
}

pub fn write_results_csv(path: impl AsRef<Path>, results: &[EvalResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in results {
        w.serialize(CsvRow {
            predictor: r.predictor.clone(),
            protocol: r.protocol,
            train_tasks: r.train_tasks.join(";"),
            eval_task: r.eval_task.clone(),
            gold: r.gold,
            auroc: r.auroc,
            n_pos: r.n_pos,
            n_neg: r.n_neg,
            row: r.row,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<EvalResult>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok(EvalResult {
                predictor: row.predictor,
                protocol: row.protocol,
                train_tasks: row
                    .train_tasks
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect(),
                eval_task: row.eval_task,
                gold: row.gold,
                auroc: row.auroc,
                n_pos: row.n_pos,
                n_neg: row.n_neg,
                row: row.row,
            })
        })
        .collect()
}

pub fn write_results_jsonl(path: impl AsRef<Path>, results: &[EvalResult]) -> Result<()> {
    write_jsonl(path, results).map_err(EvalError::from)?;
    Ok(())
}

/// Plain-text table: one line per (protocol, gold, predictor), one AUROC
/// column per eval task. SINGLE_TRAIN_LOO shows its mean rows.
pub fn render_table(results: &[EvalResult]) -> String {
    let tasks: BTreeSet<&str> = results.iter().map(|r| r.eval_task.as_str()).collect();
    let mut lines: BTreeMap<(Protocol, Gold, &str), BTreeMap<&str, f64>> = BTreeMap::new();
    for r in results {
        let shown = match r.protocol {
            Protocol::SingleTrainLoo => r.row == RowKind::Mean || r.train_tasks.is_empty(),
            _ => r.row == RowKind::Cell,
        };
        if shown {
            lines
                .entry((r.protocol, r.gold, r.predictor.as_str()))
                .or_default()
                .insert(r.eval_task.as_str(), r.auroc);
        }
    }
    let width = tasks.iter().map(|t| t.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<17} {:<13} {:<14}", "protocol", "gold", "predictor");
    for t in &tasks {
        let _ = write!(out, " {t:>width$}");
    }
    out.push('\n');
    for ((protocol, gold, predictor), cells) in &lines {
        let _ = write!(out, "{:<17} {:<13} {:<14}", protocol.to_string(), gold.to_string(), predictor);
        for t in &tasks {
            match cells.get(t) {
                Some(v) => {
                    let _ = write!(out, " {:>width$}", format!("{v:.4}"));
                }
                None => {
                    let _ = write!(out, " {:>width$}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res(predictor: &str, task: &str, auroc: f64, train: &[&str], row: RowKind) -> EvalResult {
        EvalResult {
            predictor: predictor.into(),
            protocol: Protocol::SingleTrainLoo,
            train_tasks: train.iter().map(|s| s.to_string()).collect(),
            eval_task: task.into(),
            gold: Gold::Correctness,
            auroc,
            n_pos: 3,
            n_neg: 4,
            row,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rows = vec![
            res("sep", "c", 0.7, &["a"], RowKind::Cell),
            res("sep", "c", 0.75, &["a", "b"], RowKind::Mean),
            res("neg_ll", "c", 0.1 + 0.2, &[], RowKind::Cell),
        ];
        write_results_csv(&p, &rows).unwrap();
        assert_eq!(read_results_csv(&p).unwrap(), rows);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("predictor,protocol,train_tasks,eval_task,gold,auroc,n_pos,n_neg"));
    }

    #[test]
    fn table_shows_loo_means() {
        let t = render_table(&[
            res("sep", "c", 0.7, &["a"], RowKind::Cell),
            res("sep", "c", 0.75, &["a", "b"], RowKind::Mean),
        ]);
        assert!(t.contains("0.7500"));
        assert!(!t.contains("0.7000"));
    }
}
