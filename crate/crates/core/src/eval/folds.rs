use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    /// Sequence ids of each fold, ascending.
    pub folds: Vec<Vec<usize>>,
    /// `counts[fold][class]`.
    pub counts: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Ids of every fold except `fold`, ascending.
    pub fn train_ids(&self, fold: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != fold)
            .flat_map(|(_, ids)| ids.iter().copied())
            .collect();
        ids.sort_unstable();
        ids
    }
}

/// Stratified K-fold over `(id, label)` pairs. Per class the ids are sorted, shuffled
/// with the seed and dealt round-robin; the dealing position carries over from class to
/// class so fold sizes stay balanced too. The result depends only on the set of pairs.
pub fn stratified_kfold_pairs(items: &[(usize, usize)], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(HarError::invalid("K must be at least 2"));
    }
    if items.len() < k {
        return Err(HarError::invalid(format!("{} sequences cannot fill {k} folds", items.len())));
    }
    let classes = items.iter().map(|(_, l)| l + 1).max().unwrap_or(0);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(id, label) in items {
        by_class.entry(label).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut counts = vec![vec![0; classes]; k];
    let mut next = 0;
    for (label, mut ids) in by_class {
        if ids.len() < k {
            warn!("class {label} has {} sequences, fewer than {k} folds", ids.len());
        }
        ids.sort_unstable();
        ids.dedup();
        ids.shuffle(&mut rng);
        for id in ids {
            folds[next].push(id);
            counts[next][label] += 1;
            next = (next + 1) % k;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldSplit { folds, counts })
}

/// Stratified K-fold where sequence `i` has label `labels[i]`.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldSplit> {
    let items: Vec<(usize, usize)> = labels.iter().copied().enumerate().collect();
    stratified_kfold_pairs(&items, k, seed)
}

/// Stratified holdout: roughly `fraction` of each class goes to the second set. Classes
/// with a single sequence stay in the first set.
pub fn stratified_holdout(ids: &[usize], labels: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(HarError::invalid("holdout fraction must be in (0, 1)"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &id in ids {
        by_class.entry(labels[id]).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut keep, mut held) = (Vec::new(), Vec::new());
    for (_, mut members) in by_class {
        members.sort_unstable();
        members.shuffle(&mut rng);
        let n = members.len();
        let take = if n < 2 { 0 } else { ((n as f64 * fraction).round() as usize).clamp(1, n - 1) };
        held.extend_from_slice(&members[..take]);
        keep.extend_from_slice(&members[take..]);
    }
    if held.is_empty() {
        if keep.len() < 2 {
            return Err(HarError::invalid("too few sequences for a validation split"));
        }
        held.push(keep.pop().expect("non-empty"));
    }
    keep.sort_unstable();
    held.sort_unstable();
    Ok((keep, held))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_classes_one_per_fold() {
        let labels = [0, 0, 0, 1, 1, 1, 2, 2, 2];
        let s = stratified_kfold(&labels, 3, 4).unwrap();
        for c in &s.counts {
            assert_eq!(c, &vec![1, 1, 1]);
        }
    }

    #[test]
    fn imbalanced_counts_differ_by_at_most_one() {
        let labels: Vec<usize> = (0..300).map(|i| usize::from(i >= 250)).collect();
        let s = stratified_kfold(&labels, 3, 9).unwrap();
        for c in &s.counts {
            assert!((82..=84).contains(&c[0]) && (15..=17).contains(&c[1]), "{c:?}");
        }
        let mut all: Vec<usize> = s.folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..300).collect::<Vec<_>>());
    }

    #[test]
    fn seeded_and_order_invariant() {
        let items: Vec<(usize, usize)> = (0..40).map(|i| (i * 3, i % 4)).collect();
        let a = stratified_kfold_pairs(&items, 3, 1).unwrap();
        let mut rev = items.clone();
        rev.reverse();
        assert_eq!(a, stratified_kfold_pairs(&rev, 3, 1).unwrap());
        assert_ne!(a, stratified_kfold_pairs(&items, 3, 2).unwrap());
    }

    #[test]
    fn too_few_items_is_an_error() {
        assert!(stratified_kfold(&[0, 1], 3, 0).is_err());
        assert!(stratified_kfold(&[0, 1, 1], 1, 0).is_err());
    }

    #[test]
    fn holdout_is_stratified() {
        let labels: Vec<usize> = (0..50).map(|i| usize::from(i >= 40)).collect();
        let ids: Vec<usize> = (0..50).collect();
        let (train, val) = stratified_holdout(&ids, &labels, 0.2, 0).unwrap();
        assert_eq!(val.iter().filter(|&&i| labels[i] == 0).count(), 8);
        assert_eq!(val.iter().filter(|&&i| labels[i] == 1).count(), 2);
        assert_eq!(train.len() + val.len(), 50);
    }
}
