use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{bail_arg, Result};

/// Subject-to-fold assignment. No subject appears in two folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub assignment: BTreeMap<u32, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, subject: u32) -> Option<usize> {
        self.assignment.get(&subject).copied()
    }

    /// Subjects of `fold` in ascending order.
    pub fn subjects_in(&self, fold: usize) -> Vec<u32> {
        self.assignment.iter().filter(|(_, &f)| f == fold).map(|(&s, _)| s).collect()
    }
}

/// Shuffles subjects with `seed` and deals them round-robin into `k` folds,
/// so fold sizes differ by at most one subject.
pub fn split_subject_kfold(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldSplit> {
    subject_kfold(&dataset.subjects(), k, seed)
}

pub(crate) fn subject_kfold(subjects: &[u32], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        bail_arg!("need at least 2 folds, got {k}");
    }
    if subjects.len() < k {
        bail_arg!("{} subjects cannot fill {k} folds", subjects.len());
    }
    let mut order = subjects.to_vec();
    order.sort_unstable();
    order.dedup();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignment = order.into_iter().enumerate().map(|(i, s)| (s, i % k)).collect();
    Ok(FoldSplit { k, assignment })
}
