//! Average-linkage agglomerative clustering over a tag similarity matrix.
//!
//! Works directly on similarities (merging the most similar pair is the same
//! as merging the closest pair under distance 1 - s). Ties between candidate
//! pairs break lexicographically on the smallest member label, so the merge
//! order is fully deterministic.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse similarity file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("empty similarity matrix")]
    Empty,
    #[error("matrix is {rows}x{cols} but {labels} labels were given")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        labels: usize,
    },
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("non-finite similarity at ({i},{j})")]
    NonFinite { i: usize, j: usize },
    #[error("similarity {value} at ({i},{j}) outside [0,1]")]
    OutOfRange { value: f64, i: usize, j: usize },
    #[error("matrix not symmetric at ({i},{j})")]
    NonSymmetric { i: usize, j: usize },
    #[error("diagonal entry at {i} is {value}, expected 1")]
    NonUnitDiagonal { i: usize, value: f64 },
    #[error("target level count {k} outside [1,{n}]")]
    BadCut { k: usize, n: usize },
}

/// Symmetric similarity matrix over n labelled tags, values in [0,1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn new(labels: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self, ClusterError> {
        let matrix = SimilarityMatrix { labels, values };
        matrix.validate()?;
        Ok(matrix)
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        let n = self.labels.len();
        if n == 0 {
            return Err(ClusterError::Empty);
        }
        {
            let mut sorted = self.labels.clone();
            sorted.sort();
            for pair in sorted.windows(2) {
                if pair[0] == pair[1] {
                    return Err(ClusterError::DuplicateLabel(pair[0].clone()));
                }
            }
        }
        if self.values.len() != n {
            return Err(ClusterError::ShapeMismatch {
                rows: self.values.len(),
                cols: self.values.first().map(|r| r.len()).unwrap_or(0),
                labels: n,
            });
        }
        for (i, row) in self.values.iter().enumerate() {
            if row.len() != n {
                return Err(ClusterError::ShapeMismatch {
                    rows: n,
                    cols: row.len(),
                    labels: n,
                });
            }
            for (j, &value) in row.iter().enumerate() {
                if !value.is_finite() {
                    return Err(ClusterError::NonFinite { i, j });
                }
                if !(0.0..=1.0).contains(&value) {
                    return Err(ClusterError::OutOfRange { value, i, j });
                }
            }
        }
        for i in 0..n {
            if self.values[i][i] != 1.0 {
                return Err(ClusterError::NonUnitDiagonal {
                    i,
                    value: self.values[i][i],
                });
            }
            for j in (i + 1)..n {
                if self.values[i][j] != self.values[j][i] {
                    return Err(ClusterError::NonSymmetric { i, j });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Load a similarity matrix from a JSON file `{labels: [...], values: [[...]]}`.
pub fn load_similarity(path: &Path) -> Result<SimilarityMatrix, ClusterError> {
    let text = std::fs::read_to_string(path).map_err(|source| ClusterError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let matrix: SimilarityMatrix = serde_json::from_str(&text)?;
    matrix.validate()?;
    Ok(matrix)
}

/// One agglomerative merge. Node ids 0..n are the leaves in label order;
/// merge i creates node n+i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    /// Average-linkage similarity between the merged clusters.
    pub similarity: f64,
    pub size: usize,
}

/// Stepwise merge tree produced by clustering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterTree {
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
}

impl ClusterTree {
    /// Clusters obtained by stopping after n-k merges: exactly k clusters,
    /// each sorted, ordered by first label.
    pub fn cut(&self, k: usize) -> Result<Vec<Vec<String>>, ClusterError> {
        let n = self.labels.len();
        if k < 1 || k > n {
            return Err(ClusterError::BadCut { k, n });
        }
        let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
        for merge in self.merges.iter().take(n - k) {
            let left = members[merge.left].take().expect("left cluster consumed");
            let right = members[merge.right].take().expect("right cluster consumed");
            let mut combined = left;
            combined.extend(right);
            members.push(Some(combined));
        }
        let mut clusters: Vec<Vec<String>> = members
            .into_iter()
            .flatten()
            .map(|idxs| {
                let mut labels: Vec<String> =
                    idxs.into_iter().map(|i| self.labels[i].clone()).collect();
                labels.sort();
                labels
            })
            .collect();
        clusters.sort();
        Ok(clusters)
    }
}

/// Clustering result: the full merge tree plus the cut at the requested level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterOutcome {
    pub tree: ClusterTree,
    pub clusters: Vec<Vec<String>>,
}

struct Active {
    node: usize,
    members: Vec<usize>,
    min_label: String,
}

/// Agglomerative average-linkage clustering; `target_levels` selects the cut
/// returned alongside the tree.
pub fn cluster_tags(
    matrix: &SimilarityMatrix,
    target_levels: usize,
) -> Result<ClusterOutcome, ClusterError> {
    matrix.validate()?;
    let n = matrix.len();
    if target_levels < 1 || target_levels > n {
        return Err(ClusterError::BadCut {
            k: target_levels,
            n,
        });
    }

    let mut active: Vec<Active> = (0..n)
        .map(|i| Active {
            node: i,
            members: vec![i],
            min_label: matrix.labels[i].clone(),
        })
        .collect();
    // pairwise average-linkage similarity between active clusters
    let mut sims: Vec<Vec<f64>> = matrix.values.clone();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    while active.len() > 1 {
        let mut best: Option<(usize, usize)> = None;
        for a in 0..active.len() {
            for b in (a + 1)..active.len() {
                let candidate_better = match best {
                    None => true,
                    Some((ba, bb)) => {
                        let current = sims[a][b];
                        let best_sim = sims[ba][bb];
                        if current != best_sim {
                            current > best_sim
                        } else {
                            pair_key(&active[a], &active[b]) < pair_key(&active[ba], &active[bb])
                        }
                    }
                };
                if candidate_better {
                    best = Some((a, b));
                }
            }
        }
        let (a, b) = best.expect("at least one pair");
        let similarity = sims[a][b];
        let size_a = active[a].members.len();
        let size_b = active[b].members.len();
        // record the cluster with the smaller min label first
        let (left, right) = if active[a].min_label <= active[b].min_label {
            (active[a].node, active[b].node)
        } else {
            (active[b].node, active[a].node)
        };
        merges.push(Merge {
            left,
            right,
            similarity,
            size: size_a + size_b,
        });

        // Lance-Williams update for average linkage
        let merged_sims: Vec<f64> = (0..active.len())
            .map(|c| {
                (size_a as f64 * sims[a][c] + size_b as f64 * sims[b][c])
                    / (size_a + size_b) as f64
            })
            .collect();

        let removed_b = active.remove(b);
        let mut merged_members = std::mem::take(&mut active[a].members);
        merged_members.extend(removed_b.members);
        merged_members.sort_unstable();
        let min_label = if active[a].min_label <= removed_b.min_label {
            active[a].min_label.clone()
        } else {
            removed_b.min_label
        };
        active[a] = Active {
            node: n + merges.len() - 1,
            members: merged_members,
            min_label,
        };

        // rebuild similarity rows: drop b, overwrite a
        for row in sims.iter_mut() {
            row.remove(b);
        }
        sims.remove(b);
        for c in 0..active.len() {
            let value = if c == a {
                1.0
            } else {
                // index into merged_sims before b was dropped
                let orig = if c < b { c } else { c + 1 };
                merged_sims[orig]
            };
            sims[a][c] = value;
            sims[c][a] = value;
        }
    }

    let tree = ClusterTree {
        labels: matrix.labels.clone(),
        merges,
    };
    let clusters = tree.cut(target_levels)?;
    Ok(ClusterOutcome { tree, clusters })
}

fn pair_key<'a>(a: &'a Active, b: &'a Active) -> (&'a str, &'a str) {
    if a.min_label <= b.min_label {
        (&a.min_label, &b.min_label)
    } else {
        (&b.min_label, &a.min_label)
    }
}
