use serde::{Deserialize, Serialize};

use super::auc::auc_one_vs_rest;
use super::forest::Forest;
use crate::error::{Error, Result};
use crate::text::FeatureVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryAuc {
    pub category: String,
    /// `None` when the hold-out has no positives or no negatives for it.
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Metrics {
    pub per_category: Vec<CategoryAuc>,
    /// Mean over categories with a defined AUC.
    pub macro_auc: Option<f64>,
}

impl Metrics {
    pub fn from_per_category(per_category: Vec<CategoryAuc>) -> Self {
        let defined: Vec<f64> = per_category.iter().filter_map(|c| c.auc).collect();
        let macro_auc = if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        };
        Metrics {
            per_category,
            macro_auc,
        }
    }
}

/// One-vs-rest AUC per category over the hold-out, scored by `forest`.
pub fn evaluate(
    forest: &Forest,
    categories: &[String],
    holdout: &[(FeatureVector, usize)],
) -> Result<Metrics> {
    if holdout.is_empty() {
        return Err(Error::InsufficientData("empty hold-out set".into()));
    }
    let scores: Vec<Vec<f64>> = holdout.iter().map(|(v, _)| forest.scores(v)).collect();
    Ok(score_metrics(
        categories,
        &scores,
        holdout.iter().map(|(_, c)| *c),
    ))
}

pub(crate) fn score_metrics(
    categories: &[String],
    scores: &[Vec<f64>],
    truth: impl Iterator<Item = usize> + Clone,
) -> Metrics {
    let per_category = categories
        .iter()
        .enumerate()
        .map(|(ci, name)| {
            let pairs: Vec<(f64, bool)> = scores
                .iter()
                .zip(truth.clone())
                .map(|(s, t)| (s[ci], t == ci))
                .collect();
            CategoryAuc {
                category: name.clone(),
                auc: auc_one_vs_rest(&pairs).ok(),
            }
        })
        .collect();
    Metrics::from_per_category(per_category)
}
