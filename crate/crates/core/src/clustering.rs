//! Greedy semantic clustering under bidirectional entailment.

use serde::{Deserialize, Serialize};

use crate::entailment::{bidirectional_equivalent, Entailer, EntailmentError};
use crate::par::{self, Execution};

/// Partition of sample indices into meaning clusters, in creation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticClustering {
    pub clusters: Vec<Vec<usize>>,
}

impl SemanticClustering {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }

    /// Checks that the clusters form a partition of `0..n` with no empty
    /// cluster.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for c in &self.clusters {
            if c.is_empty() {
                return false;
            }
            for &i in c {
                if i >= n || seen[i] {
                    return false;
                }
                seen[i] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Order-free form for comparing partitions.
    pub fn canonical(&self) -> Vec<Vec<usize>> {
        let mut cs: Vec<Vec<usize>> = self
            .clusters
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.sort_unstable();
                c
            })
            .collect();
        cs.sort();
        cs
    }
}

/// Which existing members a new sample is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    /// The earliest-added member only.
    #[default]
    FirstMember,
    /// Every member must be equivalent.
    AllMembers,
}

/// Greedy pass over `n` items using an arbitrary equivalence predicate.
pub fn cluster_by_predicate<F, E>(n: usize, mode: ClusterMode, mut equiv: F) -> Result<SemanticClustering, E>
where
    F: FnMut(usize, usize) -> Result<bool, E>,
{
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    'samples: for i in 0..n {
        for cluster in clusters.iter_mut() {
            let joins = match mode {
                ClusterMode::FirstMember => equiv(i, cluster[0])?,
                ClusterMode::AllMembers => {
                    let mut all = true;
                    for &m in cluster.iter() {
                        if !equiv(i, m)? {
                            all = false;
                            break;
                        }
                    }
                    all
                }
            };
            if joins {
                cluster.push(i);
                continue 'samples;
            }
        }
        clusters.push(vec![i]);
    }
    Ok(SemanticClustering { clusters })
}

/// Clusters samples in input order: each joins the first cluster whose
/// representative it is bidirectionally equivalent to, else opens a new one.
pub fn cluster_generations<S, E>(
    samples: &[S],
    backend: &E,
    mode: ClusterMode,
) -> Result<SemanticClustering, EntailmentError>
where
    S: AsRef<str>,
    E: Entailer + ?Sized,
{
    if samples.is_empty() {
        return Err(EntailmentError::EmptyText);
    }
    cluster_by_predicate(samples.len(), mode, |i, j| {
        bidirectional_equivalent(backend, samples[i].as_ref(), samples[j].as_ref())
    })
}

/// Clusters each query's samples; errors stay per query.
pub fn cluster_batch<S, E>(
    exec: Execution,
    batch: &[Vec<S>],
    backend: &E,
    mode: ClusterMode,
) -> Vec<Result<SemanticClustering, EntailmentError>>
where
    S: AsRef<str> + Sync,
    E: Entailer + ?Sized,
{
    par::map(exec, batch, |samples| cluster_generations(samples, backend, mode))
}

/// Connected components of the pairwise-equivalence graph over `n` items.
pub fn closure_by_predicate<F, E>(n: usize, mut equiv: F) -> Result<SemanticClustering, E>
where
    F: FnMut(usize, usize) -> Result<bool, E>,
{
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if equiv(i, j)? {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[slot[r]].push(i);
    }
    Ok(SemanticClustering { clusters })
}

/// Test oracle: all O(N²) pairwise equivalences, then graph components.
pub fn cluster_closure_oracle<S, E>(
    samples: &[S],
    backend: &E,
) -> Result<SemanticClustering, EntailmentError>
where
    S: AsRef<str>,
    E: Entailer + ?Sized,
{
    if samples.is_empty() {
        return Err(EntailmentError::EmptyText);
    }
    closure_by_predicate(samples.len(), |i, j| {
        bidirectional_equivalent(backend, samples[i].as_ref(), samples[j].as_ref())
    })
}
