use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::forest::DEFAULT_NUM_TREES;
use crate::error::{Error, Result};
use crate::text::DEFAULT_FEATURE_CAP;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

impl Category {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Category {
            name: name.into(),
            description: description.into(),
        }
    }
}

/// How open labeling tasks are ordered once a model exists.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Low-confidence messages first.
    #[default]
    Uncertainty,
    /// Seeded uniform-random order; a baseline for comparing against uncertainty.
    Random,
}

/// A named category set bound to one collection, plus its training knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassifierSchema {
    pub id: String,
    pub collection_id: String,
    pub name: String,
    pub categories: Vec<Category>,
    pub k: usize,
    pub retrain_every: usize,
    pub active_threshold: f64,
    pub holdout_fraction: f64,
    pub num_trees: usize,
    pub seed: u64,
    #[serde(default)]
    pub selection: SelectionPolicy,
}

/// Caller-supplied part of a schema; unset knobs take the defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SchemaSpec {
    pub name: String,
    pub categories: Vec<Category>,
    pub k: Option<usize>,
    pub retrain_every: Option<usize>,
    pub active_threshold: Option<f64>,
    pub holdout_fraction: Option<f64>,
    pub num_trees: Option<usize>,
    pub seed: Option<u64>,
    pub selection: Option<SelectionPolicy>,
}

impl SchemaSpec {
    pub fn new(name: impl Into<String>, categories: Vec<Category>) -> Self {
        SchemaSpec {
            name: name.into(),
            categories,
            ..Default::default()
        }
    }

    pub(crate) fn into_schema(self, id: String, collection_id: String) -> Result<ClassifierSchema> {
        let schema = ClassifierSchema {
            id,
            collection_id,
            name: self.name,
            categories: self.categories,
            k: self.k.unwrap_or(DEFAULT_FEATURE_CAP),
            retrain_every: self.retrain_every.unwrap_or(50),
            active_threshold: self.active_threshold.unwrap_or(0.60),
            holdout_fraction: self.holdout_fraction.unwrap_or(0.20),
            num_trees: self.num_trees.unwrap_or(DEFAULT_NUM_TREES),
            seed: self.seed.unwrap_or(0),
            selection: self.selection.unwrap_or_default(),
        };
        schema.validate()?;
        Ok(schema)
    }
}

impl ClassifierSchema {
    pub fn validate(&self) -> Result<()> {
        if self.categories.len() < 2 {
            return Err(Error::Validation(
                "a classifier needs at least 2 categories".into(),
            ));
        }
        let mut names = HashSet::new();
        for c in &self.categories {
            if c.name.trim().is_empty() {
                return Err(Error::Validation("category name must be non-empty".into()));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate category {:?}",
                    c.name
                )));
            }
        }
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.active_threshold) {
            return Err(Error::Validation(
                "activeThreshold must lie in (0, 1)".into(),
            ));
        }
        if !open_unit(self.holdout_fraction) {
            return Err(Error::Validation(
                "holdoutFraction must lie in (0, 1)".into(),
            ));
        }
        if self.k == 0 || self.retrain_every == 0 || self.num_trees == 0 {
            return Err(Error::Validation(
                "k, retrainEvery and numTrees must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }

    pub fn category_names(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|c| c.name.as_str())
    }

    /// Eight health categories for an SMS counselling desk.
    pub fn health_categories() -> Vec<Category> {
        vec![
            Category::new(
                "Symptoms",
                "Describes symptoms and asks how they relate to known diseases such as HIV.",
            ),
            Category::new(
                "Definition",
                "Asks for the definition of sexual and reproductive health terms.",
            ),
            Category::new(
                "Male Circumcision",
                "Where to go for MC, the procedure, cost, healing afterwards.",
            ),
            Category::new(
                "Testing HIV",
                "Questions primarily about testing for HIV/AIDS.",
            ),
            Category::new(
                "Treatment",
                "Available treatments and treatment procedures.",
            ),
            Category::new(
                "Pregnancy",
                "Pregnancy, its prevention, signs and how to handle it.",
            ),
            Category::new(
                "Transmission",
                "How HIV/AIDS is transmitted, carriers and protective measures.",
            ),
            Category::new(
                "Prevention",
                "Preventing HIV infection, condoms, effectiveness of methods.",
            ),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_applied() {
        let s = SchemaSpec::new("health", ClassifierSchema::health_categories())
            .into_schema("s1".into(), "c1".into())
            .unwrap();
        assert_eq!(s.k, 800);
        assert_eq!(s.retrain_every, 50);
        assert_eq!(s.active_threshold, 0.60);
        assert_eq!(s.holdout_fraction, 0.20);
        assert_eq!(s.num_trees, 100);
        assert_eq!(s.categories.len(), 8);
        assert_eq!(s.selection, SelectionPolicy::Uncertainty);
    }

    #[test]
    fn rejects_bad_schemas() {
        let one = SchemaSpec::new("x", vec![Category::new("a", "")]);
        assert!(one.into_schema("s".into(), "c".into()).is_err());
        let dup = SchemaSpec::new("x", vec![Category::new("a", ""), Category::new("a", "")]);
        assert!(dup.into_schema("s".into(), "c".into()).is_err());
        let mut bad = SchemaSpec::new("x", vec![Category::new("a", ""), Category::new("b", "")]);
        bad.active_threshold = Some(1.0);
        assert!(bad.into_schema("s".into(), "c".into()).is_err());
    }
}
