use lcx_core::eval::{average_ranks, rank_aggregate, EvalRecord};
use proptest::prelude::*;

fn record(curve: &str, method: &str, ll: f64, mse: f64) -> EvalRecord {
    EvalRecord { curve_id: curve.into(), method: method.into(), cutoff: 0.1, ll, mse }
}

proptest! {
    #[test]
    fn ranks_sum_to_the_triangular_number(scores in prop::collection::vec(-3i32..3, 1..12)) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let ranks = average_ranks(&scores);
        let n = scores.len() as f64;
        prop_assert!((ranks.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if scores[i] < scores[j] {
                    prop_assert!(ranks[i] < ranks[j]);
                }
                if scores[i] == scores[j] {
                    prop_assert_eq!(ranks[i], ranks[j]);
                }
            }
        }
    }

    #[test]
    fn mean_ranks_stay_in_range(lls in prop::collection::vec(-5.0f64..5.0, 9)) {
        let methods = ["a", "b", "c"];
        let records: Vec<EvalRecord> = lls
            .iter()
            .enumerate()
            .map(|(i, &ll)| record(&format!("c{}", i / 3), methods[i % 3], ll, ll.abs()))
            .collect();
        let ranks = rank_aggregate(&records).unwrap();
        prop_assert_eq!(ranks.len(), 3);
        let total: f64 = ranks.iter().map(|r| r.ll_rank).sum();
        prop_assert!((total - 6.0).abs() < 1e-9);
        for r in &ranks {
            prop_assert!((1.0..=3.0).contains(&r.ll_rank) && (1.0..=3.0).contains(&r.mse_rank));
        }
    }
}

#[test]
fn hand_computed_ranks() {
    // Per curve LL ranks (higher is better) and MSE ranks (lower is better).
    let records = vec![
        record("c1", "pfn", 2.0, 0.01),
        record("c1", "mcmc", 1.0, 0.02),
        record("c1", "last", 0.0, 0.03),
        record("c2", "pfn", 1.0, 0.05),
        record("c2", "mcmc", 3.0, 0.05),
        record("c2", "last", 2.0, 0.01),
        record("c3", "pfn", 0.5, 0.2),
        record("c3", "mcmc", 0.5, 0.1),
        record("c3", "last", 0.5, 0.3),
        record("c4", "pfn", 4.0, 0.4),
        record("c4", "mcmc", -1.0, 0.4),
        record("c4", "last", 1.0, 0.4),
    ];
    let ranks = rank_aggregate(&records).unwrap();
    let get = |m: &str| ranks.iter().find(|r| r.method == m).unwrap();
    // pfn LL: 1, 3, 2, 1 -> 7/4; mcmc: 2, 1, 2, 3 -> 2; last: 3, 2, 2, 2 -> 9/4.
    assert_eq!(get("pfn").ll_rank, 1.75);
    assert_eq!(get("mcmc").ll_rank, 2.0);
    assert_eq!(get("last").ll_rank, 2.25);
    // pfn MSE: 1, 2.5, 2, 2 -> 7.5/4; mcmc: 2, 2.5, 1, 2 -> 7.5/4; last: 3, 1, 3, 2 -> 9/4.
    assert_eq!(get("pfn").mse_rank, 1.875);
    assert_eq!(get("mcmc").mse_rank, 1.875);
    assert_eq!(get("last").mse_rank, 2.25);
    assert!(ranks.iter().all(|r| r.curves == 4));
}
