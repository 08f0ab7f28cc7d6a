//! Per-query uncertainty scores. All entropies are in nats.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::SemanticClustering;
use crate::dataset_store::{GenerationSample, GenerationSet};
use crate::par::{self, Execution};

#[derive(Debug, Error, PartialEq)]
pub enum UncertaintyError {
    #[error("sample has no token log-probabilities")]
    NoLogProbs,
    #[error("no clusters")]
    EmptyClusters,
    #[error("clustering is not a partition: {0}")]
    BadPartition(String),
}

type Result<T> = std::result::Result<T, UncertaintyError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub id: String,
    #[serde(default)]
    pub semantic_entropy_mc: Option<f64>,
    pub semantic_entropy_discrete: f64,
    #[serde(default)]
    pub naive_entropy: Option<f64>,
    #[serde(default)]
    pub neg_log_likelihood: Option<f64>,
    #[serde(default)]
    pub p_true: Option<f64>,
    pub n_clusters: usize,
    pub n_samples: usize,
    #[serde(default)]
    pub clusters: Vec<Vec<usize>>,
}

/// Log-probability of the whole sequence: the sum of token log-probs.
pub fn sequence_log_prob(sample: &GenerationSample) -> Result<f64> {
    if sample.token_log_probs.is_empty() {
        return Err(UncertaintyError::NoLogProbs);
    }
    Ok(sample.token_log_probs.iter().sum())
}

/// `ln Σ exp(x_i)`, shifted by the maximum.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log-probability mass of each cluster over its sampled members.
pub fn cluster_log_probs(gen_set: &GenerationSet, clustering: &SemanticClustering) -> Result<Vec<f64>> {
    let n = gen_set.samples.len();
    if !clustering.is_partition_of(n) {
        return Err(UncertaintyError::BadPartition(format!(
            "clusters do not partition {n} samples"
        )));
    }
    let seq: Vec<f64> = gen_set
        .samples
        .iter()
        .map(sequence_log_prob)
        .collect::<Result<_>>()?;
    Ok(clustering
        .clusters
        .iter()
        .map(|c| log_sum_exp(&c.iter().map(|&i| seq[i]).collect::<Vec<_>>()))
        .collect())
}

/// Monte-Carlo estimate: the negative mean of the cluster log-probs.
pub fn semantic_entropy_mc(cluster_log_probs: &[f64]) -> Result<f64> {
    if cluster_log_probs.is_empty() {
        return Err(UncertaintyError::EmptyClusters);
    }
    Ok(-cluster_log_probs.iter().sum::<f64>() / cluster_log_probs.len() as f64)
}

/// Shannon entropy of the cluster-size fractions `|C_k| / n`.
pub fn semantic_entropy_discrete(clustering: &SemanticClustering, n: usize) -> Result<f64> {
    if n == 0 || !clustering.is_partition_of(n) {
        return Err(UncertaintyError::BadPartition(format!(
            "clusters do not partition {n} samples"
        )));
    }
    Ok(entropy_of_counts(&clustering.sizes()))
}

pub fn entropy_of_counts(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let h = -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>();
    h.max(0.0)
}

fn mean_neg_log_prob(sample: &GenerationSample) -> Result<f64> {
    let lps = &sample.token_log_probs;
    if lps.is_empty() {
        return Err(UncertaintyError::NoLogProbs);
    }
    Ok(-lps.iter().sum::<f64>() / lps.len() as f64)
}

/// Mean over samples of the length-normalized negative log-likelihood.
pub fn naive_entropy(gen_set: &GenerationSet) -> Result<f64> {
    if gen_set.samples.is_empty() {
        return Err(UncertaintyError::NoLogProbs);
    }
    let total: f64 = gen_set
        .samples
        .iter()
        .map(mean_neg_log_prob)
        .sum::<Result<f64>>()?;
    Ok(total / gen_set.samples.len() as f64)
}

/// Length-normalized negative log-likelihood of one (greedy) answer.
pub fn neg_log_likelihood(greedy: &GenerationSample) -> Result<f64> {
    mean_neg_log_prob(greedy)
}

/// Scores one query. Log-prob based scores are left empty when the
/// backend supplied no log-probs.
pub fn score_query(gen_set: &GenerationSet, clustering: &SemanticClustering) -> Result<UncertaintyReport> {
    let n = gen_set.samples.len();
    let discrete = semantic_entropy_discrete(clustering, n)?;
    let mc = match cluster_log_probs(gen_set, clustering) {
        Ok(lps) => Some(semantic_entropy_mc(&lps)?),
        Err(UncertaintyError::NoLogProbs) => None,
        Err(e) => return Err(e),
    };
    Ok(UncertaintyReport {
        id: gen_set.id.clone(),
        semantic_entropy_mc: mc,
        semantic_entropy_discrete: discrete,
        naive_entropy: naive_entropy(gen_set).ok(),
        neg_log_likelihood: neg_log_likelihood(&gen_set.greedy).ok(),
        p_true: None,
        n_clusters: clustering.k(),
        n_samples: n,
        clusters: clustering.clusters.clone(),
    })
}

/// Scores aligned slices of generation sets and their clusterings.
pub fn score_batch(
    exec: Execution,
    gen_sets: &[GenerationSet],
    clusterings: &[SemanticClustering],
) -> Vec<Result<UncertaintyReport>> {
    assert_eq!(gen_sets.len(), clusterings.len(), "unaligned score batch");
    let idx: Vec<usize> = (0..gen_sets.len()).collect();
    par::map(exec, &idx, |&i| score_query(&gen_sets[i], &clusterings[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_store::DecodeConfig;
    use proptest::prelude::*;

    fn sample(lps: &[f64]) -> GenerationSample {
        GenerationSample {
            text: "x".into(),
            token_log_probs: lps.to_vec(),
            temperature: 1.0,
        }
    }

    fn set(samples: Vec<GenerationSample>) -> GenerationSet {
        GenerationSet {
            id: "q".into(),
            greedy: sample(&[-0.5, -1.5]),
            decode_config: DecodeConfig {
                n_samples: samples.len(),
                ..Default::default()
            },
            samples,
        }
    }

    fn clusters(cs: &[&[usize]]) -> SemanticClustering {
        SemanticClustering {
            clusters: cs.iter().map(|c| c.to_vec()).collect(),
        }
    }

    fn sized(sizes: &[usize]) -> SemanticClustering {
        let mut next = 0;
        SemanticClustering {
            clusters: sizes
                .iter()
                .map(|&s| {
                    let c: Vec<usize> = (next..next + s).collect();
                    next += s;
                    c
                })
                .collect(),
        }
    }

    #[test]
    fn sequence_log_prob_sums() {
        assert_eq!(sequence_log_prob(&sample(&[-1.0, -2.0])).unwrap(), -3.0);
        assert_eq!(sequence_log_prob(&sample(&[-0.5])).unwrap(), -0.5);
        assert_eq!(sequence_log_prob(&sample(&[])), Err(UncertaintyError::NoLogProbs));
    }

    #[test]
    fn cluster_log_prob_examples() {
        let g = set(vec![sample(&[0.2f64.ln()]), sample(&[0.3f64.ln()])]);
        let lp = cluster_log_probs(&g, &clusters(&[&[0, 1]])).unwrap();
        assert!((lp[0] - 0.5f64.ln()).abs() < 1e-12);

        let g = set(vec![sample(&[0.1f64.ln()])]);
        let lp = cluster_log_probs(&g, &clusters(&[&[0]])).unwrap();
        assert!((lp[0] - 0.1f64.ln()).abs() < 1e-15);

        let g = set(vec![sample(&[-1000.0]), sample(&[-1000.0])]);
        let lp = cluster_log_probs(&g, &clusters(&[&[0, 1]])).unwrap();
        assert!(lp[0].is_finite());
        assert!((lp[0] - (-1000.0 + 2f64.ln())).abs() < 1e-12);

        let g = set(vec![sample(&[-1e4]), sample(&[-1e4 - 1.0])]);
        let lp = cluster_log_probs(&g, &clusters(&[&[0, 1]])).unwrap();
        assert!(lp[0].is_finite());
    }

    #[test]
    fn mc_examples() {
        assert_eq!(semantic_entropy_mc(&[-1.0, -2.0]).unwrap(), 1.5);
        assert_eq!(semantic_entropy_mc(&[0.0]).unwrap(), 0.0);
        assert_eq!(semantic_entropy_mc(&[-3.0]).unwrap(), 3.0);
        assert_eq!(semantic_entropy_mc(&[]), Err(UncertaintyError::EmptyClusters));
    }

    #[test]
    fn discrete_examples() {
        // -(0.3 ln 0.3 * 2 + 0.4 ln 0.4), evaluated independently.
        let expected = -(2.0 * 0.3 * 0.3f64.ln() + 0.4 * 0.4f64.ln());
        let h = semantic_entropy_discrete(&sized(&[3, 3, 4]), 10).unwrap();
        assert!((h - expected).abs() < 1e-15);
        assert!((h - 1.08890).abs() < 1e-5);
        assert_eq!(semantic_entropy_discrete(&sized(&[10]), 10).unwrap(), 0.0);
        let h = semantic_entropy_discrete(&sized(&[1; 10]), 10).unwrap();
        assert!((h - 10f64.ln()).abs() < 1e-12);
        assert!(semantic_entropy_discrete(&sized(&[3, 3]), 10).is_err());
    }

    #[test]
    fn naive_and_nll() {
        let g = set(vec![sample(&[-1.0, -1.0]), sample(&[-1.0, -1.0])]);
        assert_eq!(naive_entropy(&g).unwrap(), 1.0);
        let g = set(vec![sample(&[-0.5, -1.5])]);
        assert_eq!(naive_entropy(&g).unwrap(), 1.0);
        let g = set(vec![sample(&[0.0, 0.0]), sample(&[0.0])]);
        assert_eq!(naive_entropy(&g).unwrap(), 0.0);
        assert_eq!(neg_log_likelihood(&sample(&[-0.5, -1.5])).unwrap(), 1.0);
        assert_eq!(neg_log_likelihood(&sample(&[0.0])).unwrap(), 0.0);
        assert_eq!(neg_log_likelihood(&sample(&[])), Err(UncertaintyError::NoLogProbs));
    }

    #[test]
    fn report_without_log_probs() {
        let g = set(vec![sample(&[]), sample(&[])]);
        let r = score_query(&g, &sized(&[1, 1])).unwrap();
        assert_eq!(r.semantic_entropy_mc, None);
        assert_eq!(r.naive_entropy, None);
        assert!((r.semantic_entropy_discrete - 2f64.ln()).abs() < 1e-12);
        assert_eq!(r.n_clusters, 2);
    }

    proptest! {
        #[test]
        fn discrete_bounds_and_coarsening(sizes in proptest::collection::vec(1usize..6, 1..8), a in 0usize..8, b in 0usize..8) {
            let n: usize = sizes.iter().sum();
            let h = semantic_entropy_discrete(&sized(&sizes), n).unwrap();
            prop_assert!(h >= 0.0 && h <= (n as f64).ln() + 1e-12);
            let mut rev = sizes.clone();
            rev.reverse();
            prop_assert!((semantic_entropy_discrete(&sized(&rev), n).unwrap() - h).abs() < 1e-12);
            let (a, b) = (a % sizes.len(), b % sizes.len());
            if a != b {
                let mut merged: Vec<usize> = sizes.iter().enumerate().filter(|(i, _)| *i != a && *i != b).map(|(_, s)| *s).collect();
                merged.push(sizes[a] + sizes[b]);
                // brute-force recomputation of the merged entropy
                let hm: f64 = -merged.iter().map(|&s| { let p = s as f64 / n as f64; p * p.ln() }).sum::<f64>();
                prop_assert!(hm <= h + 1e-12);
            }
        }

        #[test]
        fn cluster_mass_conserved(lps in proptest::collection::vec(-20.0f64..-0.01, 1..10), split in 1usize..10) {
            let n = lps.len();
            let split = split.min(n);
            let g = set(lps.iter().map(|&l| sample(&[l])).collect());
            let mut cs: Vec<Vec<usize>> = vec![(0..split).collect()];
            if split < n { cs.push((split..n).collect()); }
            let c = SemanticClustering { clusters: cs };
            let out = cluster_log_probs(&g, &c).unwrap();
            let total: f64 = out.iter().map(|x| x.exp()).sum();
            let direct: f64 = lps.iter().map(|x| x.exp()).sum();
            prop_assert!(((total - direct) / direct).abs() < 1e-12);
            let mut rev = out.clone();
            rev.reverse();
            prop_assert!((semantic_entropy_mc(&rev).unwrap() - semantic_entropy_mc(&out).unwrap()).abs() < 1e-12);
        }
    }
}
