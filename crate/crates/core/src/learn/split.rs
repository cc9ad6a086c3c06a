use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Minimum number of resolved labels before a hold-out split is attempted.
pub const MIN_LABELS: usize = 5;

/// Stratified, seeded train/hold-out split.
///
/// The hold-out gets `round(fraction * n)` items, apportioned across
/// categories by largest remainder so every category is split as close to
/// `fraction` as rounding allows. If that would leave the training part with
/// fewer than two categories, the apportionment is redone keeping at least
/// one item of every category on the training side.
///
/// The result depends only on the set of labels, the fraction and the seed;
/// input order is irrelevant.
#[allow(clippy::type_complexity)]
pub fn split_holdout<I, C>(
    labels: &[(I, C)],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<(I, C)>, Vec<(I, C)>)>
where
    I: Ord + Clone,
    C: Ord + Clone,
{
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Validation(
            "hold-out fraction must lie in (0, 1)".into(),
        ));
    }
    if labels.len() < MIN_LABELS {
        return Err(Error::InsufficientData(format!(
            "{} labels, need at least {MIN_LABELS}",
            labels.len()
        )));
    }
    let mut groups: BTreeMap<&C, Vec<&I>> = BTreeMap::new();
    for (id, cat) in labels {
        groups.entry(cat).or_default().push(id);
    }
    if groups.len() < 2 {
        return Err(Error::CannotTrain("all labels share one category".into()));
    }
    for ids in groups.values_mut() {
        ids.sort();
    }
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let target = (fraction * labels.len() as f64).round() as usize;

    let mut quota = apportion(&sizes, fraction, target, false);
    let train_categories = sizes.iter().zip(&quota).filter(|(n, h)| *n > *h).count();
    if train_categories < 2 {
        quota = apportion(&sizes, fraction, target, true);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(labels.len() - target);
    let mut holdout = Vec::with_capacity(target);
    for ((cat, ids), &h) in groups.iter_mut().zip(&quota) {
        ids.shuffle(&mut rng);
        for (i, id) in ids.iter().enumerate() {
            let item = ((*id).clone(), (*cat).clone());
            if i < h {
                holdout.push(item);
            } else {
                train.push(item);
            }
        }
    }
    train.sort();
    holdout.sort();
    Ok((train, holdout))
}

/// Largest-remainder apportionment of `target` hold-out slots.
fn apportion(sizes: &[usize], fraction: f64, target: usize, keep_one: bool) -> Vec<usize> {
    let cap = |n: usize| if keep_one { n.saturating_sub(1) } else { n };
    let mut quota: Vec<usize> = sizes
        .iter()
        .map(|&n| ((fraction * n as f64).floor() as usize).min(cap(n)))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    let remainder = |i: usize| fraction * sizes[i] as f64 - quota[i] as f64;
    let rems: Vec<f64> = order.iter().map(|&i| remainder(i)).collect();
    order.sort_by(|&a, &b| rems[b].total_cmp(&rems[a]).then(a.cmp(&b)));
    let mut assigned: usize = quota.iter().sum();
    // Largest remainders first; repeat passes in case caps blocked a category.
    while assigned < target {
        let mut progressed = false;
        for &i in &order {
            if assigned >= target {
                break;
            }
            if quota[i] < cap(sizes[i]) {
                quota[i] += 1;
                assigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    quota
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(counts: &[(&str, usize)]) -> Vec<(u32, String)> {
        let mut out = Vec::new();
        let mut id = 0;
        for (c, n) in counts {
            for _ in 0..*n {
                out.push((id, c.to_string()));
                id += 1;
            }
        }
        out
    }

    #[test]
    fn hundred_labels_eighty_twenty() {
        let l = labels(&[("a", 37), ("b", 41), ("c", 22)]);
        let (train, hold) = split_holdout(&l, 0.2, 7).unwrap();
        assert_eq!((train.len(), hold.len()), (80, 20));
    }

    #[test]
    fn five_and_five() {
        let l = labels(&[("a", 5), ("b", 5)]);
        let (train, hold) = split_holdout(&l, 0.2, 1).unwrap();
        assert_eq!((train.len(), hold.len()), (8, 2));
        assert_eq!(hold.iter().filter(|(_, c)| c == "a").count(), 1);
        assert_eq!(hold.iter().filter(|(_, c)| c == "b").count(), 1);
    }

    #[test]
    fn deterministic_and_order_free() {
        let mut l = labels(&[("a", 13), ("b", 9), ("c", 30)]);
        let first = split_holdout(&l, 0.2, 99).unwrap();
        assert_eq!(first, split_holdout(&l, 0.2, 99).unwrap());
        l.reverse();
        assert_eq!(first, split_holdout(&l, 0.2, 99).unwrap());
        assert_ne!(first, split_holdout(&l, 0.2, 100).unwrap());
    }

    #[test]
    fn disjoint_and_covering() {
        let l = labels(&[("a", 11), ("b", 7), ("c", 3), ("d", 1)]);
        let (train, hold) = split_holdout(&l, 0.2, 3).unwrap();
        let mut all: Vec<_> = train.iter().chain(&hold).cloned().collect();
        all.sort();
        assert_eq!(all, l);
        assert_eq!(hold.len(), (0.2f64 * 22.0).round() as usize);
    }

    #[test]
    fn keeps_two_training_categories() {
        // Unconstrained apportionment would move the lone "b" to hold-out.
        let l = labels(&[("a", 4), ("b", 1)]);
        let (train, _) = split_holdout(&l, 0.6, 0).unwrap();
        assert!(train.iter().any(|(_, c)| c == "b"));
        assert!(train.iter().any(|(_, c)| c == "a"));
    }

    #[test]
    fn too_few_or_single_category() {
        assert!(matches!(
            split_holdout(&labels(&[("a", 2), ("b", 2)]), 0.2, 0),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            split_holdout(&labels(&[("a", 9)]), 0.2, 0),
            Err(Error::CannotTrain(_))
        ));
    }
}
