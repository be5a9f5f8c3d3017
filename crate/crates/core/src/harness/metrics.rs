//! Pair-counting and information-theoretic agreement between two partitions.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Item id → cluster label.
pub type Partition = BTreeMap<String, String>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringScores {
    pub f1: f64,
    pub jaccard: f64,
    pub nmi: f64,
}

/// Reads `id<TAB>cluster` lines.
pub fn read_partition(reader: impl BufRead) -> Result<Partition> {
    let mut out = Partition::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(label), None) => {
                out.insert(id.trim().to_string(), label.trim().to_string());
            }
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected id<TAB>cluster".into(),
                })
            }
        }
    }
    Ok(out)
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// F1 and Jaccard over co-clustered item pairs, and NMI normalized by the
/// arithmetic mean of the two entropies. Two partitions with no co-clustered
/// pairs at all score 1 on the pair metrics; two single-cluster partitions
/// score NMI 1.
pub fn clustering_metrics(predicted: &Partition, truth: &Partition) -> Result<ClusteringScores> {
    if predicted.len() != truth.len() || predicted.keys().zip(truth.keys()).any(|(a, b)| a != b) {
        return Err(Error::Input("partitions cover different item sets".into()));
    }
    if predicted.is_empty() {
        return Err(Error::Input("partitions are empty".into()));
    }
    let mut joint: HashMap<(&str, &str), u64> = HashMap::new();
    let mut pred_sizes: HashMap<&str, u64> = HashMap::new();
    let mut true_sizes: HashMap<&str, u64> = HashMap::new();
    for (id, p) in predicted {
        let t = &truth[id];
        *joint.entry((p.as_str(), t.as_str())).or_default() += 1;
        *pred_sizes.entry(p.as_str()).or_default() += 1;
        *true_sizes.entry(t.as_str()).or_default() += 1;
    }

    let tp: u64 = joint.values().map(|&c| pairs(c)).sum();
    let pred_pairs: u64 = pred_sizes.values().map(|&c| pairs(c)).sum();
    let true_pairs: u64 = true_sizes.values().map(|&c| pairs(c)).sum();
    let fp = pred_pairs - tp;
    let fn_ = true_pairs - tp;
    let (f1, jaccard) = if tp + fp + fn_ == 0 {
        (1.0, 1.0)
    } else {
        (
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64,
            tp as f64 / (tp + fp + fn_) as f64,
        )
    };

    let n = predicted.len() as f64;
    let entropy = |sizes: &HashMap<&str, u64>| -> f64 {
        sizes
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_pred = entropy(&pred_sizes);
    let h_true = entropy(&true_sizes);
    let mi: f64 = joint
        .iter()
        .map(|(&(p, t), &c)| {
            let pij = c as f64 / n;
            let pi = pred_sizes[p] as f64 / n;
            let pj = true_sizes[t] as f64 / n;
            pij * (pij / (pi * pj)).ln()
        })
        .sum();
    let nmi = if h_pred + h_true == 0.0 {
        1.0
    } else {
        (2.0 * mi / (h_pred + h_true)).clamp(0.0, 1.0)
    };
    Ok(ClusteringScores { f1, jaccard, nmi })
}
