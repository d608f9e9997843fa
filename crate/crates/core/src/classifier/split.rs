//! Stratified shuffle splits over users.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cohort::Label;
use crate::error::{usage, Result};
use crate::math::round;
use crate::rng::{derive_seed, rng_from_seed, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub n_splits: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            n_splits: 10,
            train_fraction: 0.65,
            seed: 0,
        }
    }
}

/// Indices of training and test users, each ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws `n_splits` independent stratified partitions. The training set has
/// `round(n * train_fraction)` users; per-class quotas use largest
/// remainders with seeded tie-breaking, so each class's training count is
/// within one user of its proportional share.
pub fn stratified_shuffle_split(labels: &[Label], plan: &SplitPlan) -> Result<Vec<Split>> {
    if plan.n_splits == 0 {
        return Err(usage("n_splits must be positive"));
    }
    if !(plan.train_fraction > 0.0 && plan.train_fraction < 1.0) {
        return Err(usage("train_fraction must lie in (0, 1)"));
    }
    let mut classes: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, l) in labels.iter().enumerate() {
        classes[l.index()].push(i);
    }
    if classes.iter().any(|c| c.len() < 2) {
        return Err(usage("each class needs at least two users to stratify"));
    }
    let n = labels.len();
    let n_train = round(n as f64 * plan.train_fraction) as usize;
    (0..plan.n_splits)
        .map(|s| {
            let mut rng = rng_from_seed(derive_seed(plan.seed, stream::SPLIT, s as u64));
            let exact: Vec<f64> = classes
                .iter()
                .map(|c| n_train as f64 * c.len() as f64 / n as f64)
                .collect();
            let mut quota: Vec<usize> = exact.iter().map(|e| *e as usize).collect();
            let mut left = n_train - quota.iter().sum::<usize>();
            let mut by_remainder: Vec<usize> = vec![0, 1];
            by_remainder.shuffle(&mut rng);
            by_remainder.sort_by(|&a, &b| {
                let ra = exact[a] - quota[a] as f64;
                let rb = exact[b] - quota[b] as f64;
                rb.total_cmp(&ra)
            });
            for &k in &by_remainder {
                if left == 0 {
                    break;
                }
                quota[k] += 1;
                left -= 1;
            }
            let mut train = Vec::with_capacity(n_train);
            let mut test = Vec::with_capacity(n - n_train);
            for (members, &q) in classes.iter().zip(&quota) {
                if q == 0 || q >= members.len() {
                    return Err(usage("class too small to stratify at this train fraction"));
                }
                let mut shuffled = members.clone();
                shuffled.shuffle(&mut rng);
                train.extend_from_slice(&shuffled[..q]);
                test.extend_from_slice(&shuffled[q..]);
            }
            train.sort_unstable();
            test.sort_unstable();
            Ok(Split { train, test })
        })
        .collect()
}
