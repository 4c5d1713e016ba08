//! Hold-out and k-fold partitioning with simple or stratified random sampling.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::math::{floor, round_half_up};
use crate::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    #[default]
    SimpleRandom,
    StratifiedRandom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedProvenance {
    pub master_seed: u64,
    pub stream_key: String,
}

impl SeedProvenance {
    fn of(rng: &RngStream) -> Self {
        Self { master_seed: rng.master_seed(), stream_key: String::from(rng.key()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test_ratio: f64,
    pub strategy: SamplingStrategy,
    pub seed: SeedProvenance,
    /// Ascending dataset indices.
    pub test_indices: Vec<usize>,
    /// Ascending dataset indices.
    pub rest_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub strategy: SamplingStrategy,
    pub seed: SeedProvenance,
    /// Ascending dataset indices that were partitioned.
    pub members: Vec<usize>,
    /// Fold id of `members[i]`.
    pub fold_of: Vec<usize>,
    /// Classes that had fewer than `k` members and were assigned by simple sampling.
    pub warnings: Vec<String>,
}

impl FoldAssignment {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

fn class_members(labels: &[usize], pool: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut per_class = vec![Vec::new(); classes];
    for &i in pool {
        per_class[labels[i]].push(i);
    }
    per_class
}

/// Splits the dataset into a test part and the rest.
pub fn holdout_split(
    dataset: &Dataset,
    ratio: f64,
    strategy: SamplingStrategy,
    rng: &mut RngStream,
) -> Result<SplitPlan> {
    holdout_split_labels(&dataset.labels(), dataset.class_count(), ratio, strategy, rng)
}

/// Label-level hold-out split; `labels[i]` is the class of sample `i`.
pub fn holdout_split_labels(
    labels: &[usize],
    classes: usize,
    ratio: f64,
    strategy: SamplingStrategy,
    rng: &mut RngStream,
) -> Result<SplitPlan> {
    let n = labels.len();
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("test ratio must be in (0, 1), got {ratio}")));
    }
    if n < 2 {
        return Err(Error::invalid("hold-out split needs at least 2 samples"));
    }
    if labels.iter().any(|&l| l >= classes) {
        return Err(Error::invalid("label out of range"));
    }
    let total = round_half_up(ratio * n as f64) as usize;
    if total == 0 || total == n {
        return Err(Error::invalid(format!("ratio {ratio} of {n} samples leaves one side empty")));
    }
    let seed = SeedProvenance::of(rng);
    let mut test = match strategy {
        SamplingStrategy::SimpleRandom => {
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            order.truncate(total);
            order
        }
        SamplingStrategy::StratifiedRandom => {
            let all: Vec<usize> = (0..n).collect();
            let mut per_class = class_members(labels, &all, classes);
            if let Some(c) = per_class.iter().position(Vec::is_empty) {
                return Err(Error::invalid(format!("stratified split needs every class present; class {c} is empty")));
            }
            let quotas: Vec<f64> = per_class.iter().map(|m| ratio * m.len() as f64).collect();
            let mut counts: Vec<usize> = quotas.iter().map(|&q| floor(q) as usize).collect();
            let assigned: usize = counts.iter().sum();
            // largest remainder, lower class index first on ties
            let mut order: Vec<usize> = (0..classes).collect();
            order.sort_by(|&a, &b| {
                let ra = quotas[a] - counts[a] as f64;
                let rb = quotas[b] - counts[b] as f64;
                rb.total_cmp(&ra).then(a.cmp(&b))
            });
            for &c in order.iter().take(total.saturating_sub(assigned)) {
                counts[c] += 1;
            }
            let mut test = Vec::with_capacity(total);
            for (c, members) in per_class.iter_mut().enumerate() {
                if counts[c] >= members.len() {
                    return Err(Error::invalid(format!("stratified split would move all of class {c} into the test set")));
                }
                rng.shuffle(members);
                test.extend_from_slice(&members[..counts[c]]);
            }
            test
        }
    };
    test.sort_unstable();
    let mut in_test = vec![false; n];
    for &i in &test {
        in_test[i] = true;
    }
    let rest = (0..n).filter(|&i| !in_test[i]).collect();
    Ok(SplitPlan { test_ratio: ratio, strategy, seed, test_indices: test, rest_indices: rest })
}

/// Assigns `members` (dataset indices) to `k` folds by shuffled round-robin.
pub fn kfold_partition(
    labels: &[usize],
    classes: usize,
    members: &[usize],
    k: usize,
    strategy: SamplingStrategy,
    rng: &mut RngStream,
) -> Result<FoldAssignment> {
    let n = members.len();
    if k < 2 || k > n {
        return Err(Error::invalid(format!("k must satisfy 2 <= k <= {n}, got {k}")));
    }
    if members.iter().any(|&i| i >= labels.len() || labels[i] >= classes) {
        return Err(Error::invalid("member index or label out of range"));
    }
    let seed = SeedProvenance::of(rng);
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("duplicate member index"));
    }
    let mut fold_by_index = alloc::collections::BTreeMap::new();
    let mut warnings = Vec::new();
    match strategy {
        SamplingStrategy::SimpleRandom => {
            let mut order = sorted.clone();
            rng.shuffle(&mut order);
            for (pos, i) in order.into_iter().enumerate() {
                fold_by_index.insert(i, pos % k);
            }
        }
        SamplingStrategy::StratifiedRandom => {
            let per_class = class_members(labels, &sorted, classes);
            let mut offset = 0;
            let mut leftovers = Vec::new();
            for (c, mut group) in per_class.into_iter().enumerate() {
                if group.is_empty() {
                    continue;
                }
                if group.len() < k {
                    warnings.push(format!(
                        "class {c} has {} members (< k = {k}); assigned by simple random sampling",
                        group.len()
                    ));
                    leftovers.extend(group);
                    continue;
                }
                rng.shuffle(&mut group);
                for (pos, i) in group.iter().enumerate() {
                    fold_by_index.insert(*i, (offset + pos) % k);
                }
                offset = (offset + group.len()) % k;
            }
            rng.shuffle(&mut leftovers);
            for (pos, i) in leftovers.into_iter().enumerate() {
                fold_by_index.insert(i, (offset + pos) % k);
            }
        }
    }
    let fold_of = sorted.iter().map(|i| fold_by_index[i]).collect();
    Ok(FoldAssignment { k, strategy, seed, members: sorted, fold_of, warnings })
}

/// `(train, validation)` dataset indices for fold `i`, both ascending.
pub fn fold_view(assignment: &FoldAssignment, i: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if i >= assignment.k {
        return Err(Error::invalid(format!("fold {i} out of range for k = {}", assignment.k)));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (&idx, &f) in assignment.members.iter().zip(&assignment.fold_of) {
        if f == i {
            val.push(idx);
        } else {
            train.push(idx);
        }
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn balanced(classes: usize, per: usize) -> Vec<usize> {
        (0..classes * per).map(|i| i / per).collect()
    }

    #[test]
    fn trashnet_sized_simple_split() {
        let labels = vec![0; 2527];
        let plan = holdout_split_labels(&labels, 1, 0.10, SamplingStrategy::SimpleRandom, &mut derive_rng(1, "t")).unwrap();
        assert_eq!(plan.test_indices.len(), 253);
        assert_eq!(plan.rest_indices.len(), 2274);
    }

    #[test]
    fn stratified_exact_proportions() {
        let labels = balanced(2, 50);
        let plan = holdout_split_labels(&labels, 2, 0.2, SamplingStrategy::StratifiedRandom, &mut derive_rng(1, "t")).unwrap();
        let per: Vec<usize> = (0..2).map(|c| plan.test_indices.iter().filter(|&&i| labels[i] == c).count()).collect();
        assert_eq!(per, vec![10, 10]);
    }

    #[test]
    fn split_is_deterministic() {
        let labels = balanced(3, 17);
        let a = holdout_split_labels(&labels, 3, 0.3, SamplingStrategy::StratifiedRandom, &mut derive_rng(5, "t")).unwrap();
        let b = holdout_split_labels(&labels, 3, 0.3, SamplingStrategy::StratifiedRandom, &mut derive_rng(5, "t")).unwrap();
        assert_eq!(a, b);
        let c = holdout_split_labels(&labels, 3, 0.3, SamplingStrategy::StratifiedRandom, &mut derive_rng(5, "u")).unwrap();
        assert_ne!(a.test_indices, c.test_indices);
    }

    #[test]
    fn empty_side_rejected() {
        let labels = balanced(1, 4);
        assert!(holdout_split_labels(&labels, 1, 0.05, SamplingStrategy::SimpleRandom, &mut derive_rng(1, "t")).is_err());
        assert!(holdout_split_labels(&labels, 1, 1.0, SamplingStrategy::SimpleRandom, &mut derive_rng(1, "t")).is_err());
        // one-sample class would be emptied
        let labels = vec![0, 1, 1, 1];
        assert!(holdout_split_labels(&labels, 2, 0.5, SamplingStrategy::StratifiedRandom, &mut derive_rng(2, "t")).is_err());
    }

    #[test]
    fn ninety_into_ten_folds() {
        let labels = vec![0; 90];
        let members: Vec<usize> = (0..90).collect();
        let a = kfold_partition(&labels, 1, &members, 10, SamplingStrategy::SimpleRandom, &mut derive_rng(3, "k")).unwrap();
        assert_eq!(a.fold_sizes(), vec![9; 10]);
    }

    #[test]
    fn stratified_folds_exact() {
        let labels = balanced(5, 50);
        let members: Vec<usize> = (0..250).collect();
        let a = kfold_partition(&labels, 5, &members, 10, SamplingStrategy::StratifiedRandom, &mut derive_rng(3, "k")).unwrap();
        for f in 0..10 {
            let (_, val) = fold_view(&a, f).unwrap();
            for c in 0..5 {
                assert_eq!(val.iter().filter(|&&i| labels[i] == c).count(), 5);
            }
        }
        assert!(a.warnings.is_empty());
    }

    #[test]
    fn small_class_falls_back_with_warning() {
        let mut labels = balanced(2, 20);
        labels.extend([2, 2, 2]);
        let members: Vec<usize> = (0..labels.len()).collect();
        let a = kfold_partition(&labels, 3, &members, 5, SamplingStrategy::StratifiedRandom, &mut derive_rng(3, "k")).unwrap();
        assert_eq!(a.warnings.len(), 1);
        let sizes = a.fold_sizes();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn fold_view_partition_and_bounds() {
        let labels = vec![0; 23];
        let members: Vec<usize> = (0..23).collect();
        let a = kfold_partition(&labels, 1, &members, 10, SamplingStrategy::SimpleRandom, &mut derive_rng(3, "k")).unwrap();
        let (train, val) = fold_view(&a, 3).unwrap();
        assert_eq!(train.len() + val.len(), 23);
        let mut seen = [0; 23];
        for i in 0..10 {
            for v in fold_view(&a, i).unwrap().1 {
                seen[v] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        assert!(fold_view(&a, 10).is_err());
        assert!(kfold_partition(&labels, 1, &members[..5], 6, SamplingStrategy::SimpleRandom, &mut derive_rng(3, "k")).is_err());
    }
}
