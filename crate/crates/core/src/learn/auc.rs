use crate::error::{Error, Result};

/// One-vs-rest ROC AUC via the Mann-Whitney U statistic with mid-ranks, so
/// tied scores count one half.
pub fn auc_one_vs_rest(scores: &[(f64, bool)]) -> Result<f64> {
    let n_pos = scores.iter().filter(|(_, p)| *p).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));

    // Ranks are 1-based; a tie group spanning ranks i+1..=j gets (i+1+j)/2.
    // Doubling keeps everything in integers until the final division.
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]].0 == scores[order[i]].0 {
            j += 1;
        }
        let doubled_mid = (i + 1 + j) as u64;
        let positives = order[i..j].iter().filter(|&&k| scores[k].1).count() as u64;
        doubled_rank_sum += doubled_mid * positives;
        i = j;
    }
    let (p, q) = (n_pos as u64, n_neg as u64);
    // 2U = 2R - p(p+1)
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2 * p * q) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise(scores: &[(f64, bool)]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for &(sp, p) in scores {
            for &(sn, n) in scores {
                if p && !n {
                    pairs += 1.0;
                    if sp > sn {
                        wins += 1.0;
                    } else if sp == sn {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfect_ranking() {
        let s = [(0.9, true), (0.8, true), (0.2, false), (0.1, false)];
        assert_eq!(auc_one_vs_rest(&s).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_is_half() {
        let s = [
            (0.3, true),
            (0.3, false),
            (0.3, false),
            (0.3, true),
            (0.3, true),
        ];
        assert_eq!(auc_one_vs_rest(&s).unwrap(), 0.5);
    }

    #[test]
    fn three_of_four_pairs() {
        let s = [(0.9, true), (0.8, false), (0.4, true), (0.3, false)];
        assert_eq!(auc_one_vs_rest(&s).unwrap(), 0.75);
        assert_eq!(pairwise(&s), 0.75);
    }

    #[test]
    fn one_class_is_undefined() {
        assert!(matches!(
            auc_one_vs_rest(&[(0.1, true), (0.2, true)]),
            Err(Error::UndefinedAuc)
        ));
        assert!(matches!(auc_one_vs_rest(&[]), Err(Error::UndefinedAuc)));
    }

    fn scored() -> impl Strategy<Value = Vec<(f64, bool)>> {
        prop::collection::vec(
            ((0u8..20).prop_map(|s| s as f64 / 19.0), any::<bool>()),
            2..80,
        )
        .prop_filter("both classes", |v| {
            v.iter().any(|x| x.1) && v.iter().any(|x| !x.1)
        })
    }

    proptest! {
        #[test]
        fn matches_pairwise(s in scored()) {
            let a = auc_one_vs_rest(&s).unwrap();
            prop_assert!((a - pairwise(&s)).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_monotone_transform(s in scored()) {
            let t: Vec<_> = s.iter().map(|&(x, p)| ((3.0 * x).exp() - 7.0, p)).collect();
            prop_assert_eq!(auc_one_vs_rest(&s).unwrap(), auc_one_vs_rest(&t).unwrap());
        }

        #[test]
        fn complement_sums_to_one(s in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..60)) {
            prop_assume!(s.iter().any(|x| x.1) && s.iter().any(|x| !x.1));
            let mut xs: Vec<f64> = s.iter().map(|x| x.0).collect();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            prop_assume!(xs.len() == s.len());
            let flipped: Vec<_> = s.iter().map(|&(x, p)| (x, !p)).collect();
            let sum = auc_one_vs_rest(&s).unwrap() + auc_one_vs_rest(&flipped).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
