//! Stratified k-fold cross-validation plans and class weighting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index lists for one fold. Indices refer to positions in the label list
/// the plan was built from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// A complete cross-validation plan. Within each fold the three splits are
/// disjoint and cover every study; across folds the test splits partition
/// the dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldSplit>,
}

/// Builds a stratified k-fold plan: shuffle all indices once with `seed`,
/// deal each class round-robin into `k` groups (so group sizes per class
/// differ by at most one), then fold `i` tests on group `i`, validates on
/// group `(i+1) mod k`, and trains on the rest. With k = 5 this yields the
/// 60/20/20 split.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Data(format!("labels must be 0 or 1, got {bad}")));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in [0u8, 1] {
        let members: Vec<usize> =
            order.iter().copied().filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::Data(format!(
                "class {class} has {} members, fewer than k = {k}",
                members.len()
            )));
        }
        for (j, idx) in members.into_iter().enumerate() {
            groups[j % k].push(idx);
        }
    }

    let mut folds = Vec::with_capacity(k);
    for i in 0..k {
        let val_group = (i + 1) % k;
        let mut split = FoldSplit {
            train: Vec::new(),
            val: groups[val_group].clone(),
            test: groups[i].clone(),
        };
        for (g, group) in groups.iter().enumerate() {
            if g != i && g != val_group {
                split.train.extend_from_slice(group);
            }
        }
        split.train.sort_unstable();
        split.val.sort_unstable();
        split.test.sort_unstable();
        folds.push(split);
    }
    Ok(FoldPlan { k, seed, folds })
}

/// Inverse-frequency class weights `w[c] = n / (2 * n_c)`, so
/// `sum_c w[c] * n_c = n` and the rarer class weighs more.
pub fn class_weights(labels: &[u8]) -> Result<[f64; 2]> {
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::Data(format!(
            "class weights need both classes, got {n0} of class 0 and {n1} of class 1"
        )));
    }
    let n = labels.len() as f64;
    Ok([n / (2.0 * n0 as f64), n / (2.0 * n1 as f64)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imbalanced(n0: usize, n1: usize) -> Vec<u8> {
        let mut l = vec![0u8; n0];
        l.extend(std::iter::repeat(1).take(n1));
        l
    }

    fn assert_plan_invariants(labels: &[u8], plan: &FoldPlan) {
        let n = labels.len();
        let n1: usize = labels.iter().filter(|&&l| l == 1).count();
        let mut test_seen = vec![false; n];
        for split in &plan.folds {
            let mut seen = vec![0u8; n];
            for idx in split.train.iter().chain(&split.val).chain(&split.test) {
                seen[*idx] += 1;
            }
            assert!(seen.iter().all(|&c| c == 1), "splits must partition the studies");
            for idx in &split.test {
                assert!(!test_seen[*idx], "test sets must be disjoint across folds");
                test_seen[*idx] = true;
            }
            // Stratification: each split's class-1 count is within one
            // study per contributing group of the proportional share.
            for part in [&split.train, &split.val, &split.test] {
                let part_n1 = part.iter().filter(|&&i| labels[i] == 1).count();
                let share = part.len() as f64 * n1 as f64 / n as f64;
                assert!(
                    (part_n1 as f64 - share).abs() <= plan.k as f64,
                    "class-1 count {part_n1} too far from share {share}"
                );
            }
        }
        assert!(test_seen.iter().all(|&s| s), "test sets must cover the dataset");
    }

    #[test]
    fn five_per_class_k5_gives_one_of_each_per_test_set() {
        let labels = imbalanced(5, 5);
        let plan = stratified_kfold(&labels, 5, 3).unwrap();
        for split in &plan.folds {
            assert_eq!(split.test.len(), 2);
            let ones = split.test.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(ones, 1);
            assert_eq!(split.train.len(), 6);
            assert_eq!(split.val.len(), 2);
        }
        assert_plan_invariants(&labels, &plan);
    }

    #[test]
    fn clinical_scale_imbalance_keeps_proportions() {
        // 546 vs 168: each k=5 test group gets 109 or 110 of class 0 and
        // 33 or 34 of class 1.
        let labels = imbalanced(546, 168);
        let plan = stratified_kfold(&labels, 5, 41).unwrap();
        for split in &plan.folds {
            let zeros = split.test.iter().filter(|&&i| labels[i] == 0).count();
            let ones = split.test.len() - zeros;
            assert!((109..=110).contains(&zeros), "{zeros}");
            assert!((33..=34).contains(&ones), "{ones}");
            let frac = ones as f64 / split.test.len() as f64;
            assert!((frac - 168.0 / 714.0).abs() < 0.01, "{frac}");
        }
        assert_plan_invariants(&labels, &plan);
    }

    #[test]
    fn same_seed_reproduces_the_plan_different_seed_changes_it() {
        let labels = imbalanced(30, 12);
        let a = stratified_kfold(&labels, 5, 7).unwrap();
        let b = stratified_kfold(&labels, 5, 7).unwrap();
        assert_eq!(a, b);
        let c = stratified_kfold(&labels, 5, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn three_folds_on_small_data() {
        let labels = imbalanced(9, 6);
        let plan = stratified_kfold(&labels, 3, 11).unwrap();
        assert_eq!(plan.folds.len(), 3);
        assert_plan_invariants(&labels, &plan);
        for split in &plan.folds {
            assert_eq!(split.test.len(), 5);
            assert_eq!(split.val.len(), 5);
            assert_eq!(split.train.len(), 5);
        }
    }

    #[test]
    fn undersized_classes_and_bad_k_are_rejected() {
        assert!(matches!(
            stratified_kfold(&imbalanced(10, 3), 5, 0),
            Err(Error::Data(_))
        ));
        assert!(matches!(stratified_kfold(&imbalanced(10, 10), 1, 0), Err(Error::Config(_))));
        assert!(matches!(stratified_kfold(&[0, 1, 2], 2, 0), Err(Error::Data(_))));
    }

    #[test]
    fn class_weight_formula() {
        assert_eq!(class_weights(&imbalanced(4, 4)).unwrap(), [1.0, 1.0]);
        let w = class_weights(&imbalanced(546, 168)).unwrap();
        assert!((w[1] / w[0] - 3.25).abs() < 1e-12);
        assert!((w[0] - 714.0 / 1092.0).abs() < 1e-12);
        let w31 = class_weights(&imbalanced(3, 1)).unwrap();
        assert!((w31[0] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(w31[1], 2.0);
        assert!(class_weights(&imbalanced(5, 0)).is_err());
    }

    #[test]
    fn weights_balance_total_mass() {
        for (n0, n1) in [(7, 3), (100, 1), (13, 13)] {
            let labels = imbalanced(n0, n1);
            let w = class_weights(&labels).unwrap();
            let total = w[0] * n0 as f64 + w[1] * n1 as f64;
            assert!((total - labels.len() as f64).abs() < 1e-9);
        }
    }
}
