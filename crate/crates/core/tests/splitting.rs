use cvharness_core::rng::derive_rng;
use cvharness_core::split::{fold_view, holdout_split_labels, kfold_partition, SamplingStrategy};
use proptest::prelude::*;

fn labels_from(counts: &[usize]) -> Vec<usize> {
    counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn holdout_and_folds_partition(
        counts in prop::collection::vec(2usize..40, 1..6),
        ratio in 0.05..0.5f64,
        k in 2usize..11,
        stratified in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let labels = labels_from(&counts);
        let n = labels.len();
        let classes = counts.len();
        let strategy = if stratified { SamplingStrategy::StratifiedRandom } else { SamplingStrategy::SimpleRandom };
        let mut rng = derive_rng(seed, "holdout");
        let Ok(plan) = holdout_split_labels(&labels, classes, ratio, strategy, &mut rng) else {
            // only legal refusals: an empty side or an emptied class
            let total = (ratio * n as f64 + 0.5).floor() as usize;
            prop_assert!(total == 0 || total == n || stratified);
            return Ok(());
        };
        let mut all: Vec<usize> = plan.test_indices.iter().chain(&plan.rest_indices).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(plan.test_indices.len(), (ratio * n as f64 + 0.5).floor() as usize);
        if stratified {
            for (c, &m) in counts.iter().enumerate() {
                let got = plan.test_indices.iter().filter(|&&i| labels[i] == c).count() as f64;
                prop_assert!((got - ratio * m as f64).abs() < 1.0);
            }
        }

        if k > plan.rest_indices.len() {
            return Ok(());
        }
        let folds = kfold_partition(&labels, classes, &plan.rest_indices, k, strategy, &mut derive_rng(seed, "folds")).unwrap();
        let mut seen = vec![0usize; n];
        for i in 0..k {
            let (train, val) = fold_view(&folds, i).unwrap();
            prop_assert_eq!(train.len() + val.len(), plan.rest_indices.len());
            for &v in &val {
                seen[v] += 1;
            }
            for &t in train.iter().chain(&val) {
                prop_assert!(!plan.test_indices.contains(&t));
            }
        }
        for &r in &plan.rest_indices {
            prop_assert_eq!(seen[r], 1);
        }
        let sizes = folds.fold_sizes();
        if !stratified {
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        } else {
            for c in 0..classes {
                let members: Vec<usize> = plan.rest_indices.iter().copied().filter(|&i| labels[i] == c).collect();
                if members.len() < k {
                    continue;
                }
                let per: Vec<usize> = (0..k).map(|f| members.iter().filter(|&&i| folds.fold_of[folds.members.binary_search(&i).unwrap()] == f).count()).collect();
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
        }
    }
}

#[test]
fn ten_percent_holdout_then_ten_folds() {
    let labels = labels_from(&[20; 5]);
    for strategy in [SamplingStrategy::SimpleRandom, SamplingStrategy::StratifiedRandom] {
        let plan = holdout_split_labels(&labels, 5, 0.1, strategy, &mut derive_rng(1, "h")).unwrap();
        assert_eq!(plan.test_indices.len(), 10);
        let folds = kfold_partition(&labels, 5, &plan.rest_indices, 10, strategy, &mut derive_rng(1, "k")).unwrap();
        for i in 0..10 {
            let (train, val) = fold_view(&folds, i).unwrap();
            assert!((train.len() as i64 - 81).abs() <= 1, "{}", train.len());
            assert!((val.len() as i64 - 9).abs() <= 1, "{}", val.len());
        }
    }
}
