use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, Metrics};
use super::forest::{train_forest, Forest, ForestParams};
use super::schema::ClassifierSchema;
use super::split::split_holdout;
use crate::error::{Error, Result};
use crate::seed::mix;
use crate::text::{build_vocabulary, FeatureVector, Vocabulary};

const SNAPSHOT_FORMAT: &str = "smstriage-model/1";

/// A resolved label with the message text it applies to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledText {
    pub message_id: String,
    pub text: String,
    pub category: String,
}

/// Immutable, published Random Forest snapshot.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub version: u64,
    pub schema_id: String,
    pub categories: Vec<String>,
    pub vocabulary: Arc<Vocabulary>,
    pub forest: Forest,
    pub train_size: usize,
    pub holdout_size: usize,
    pub metrics: Metrics,
    pub seed: u64,
    pub trained_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub model_version: u64,
    pub category: String,
    pub category_index: usize,
    pub confidence: f64,
    /// Aligned with the schema's category order; sums to 1.
    pub scores: Vec<f64>,
}

/// Split, select features on the training part, grow the forest and score
/// it on the hold-out.
pub fn train_model(
    schema: &ClassifierSchema,
    labeled: &[LabeledText],
    version: u64,
    trained_at: DateTime<Utc>,
) -> Result<TrainedModel> {
    let categories: Vec<String> = schema.category_names().map(str::to_string).collect();
    let class_of: HashMap<&str, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut by_id: HashMap<&str, &LabeledText> = HashMap::with_capacity(labeled.len());
    for l in labeled {
        if !class_of.contains_key(l.category.as_str()) {
            return Err(Error::Validation(format!(
                "label category {:?} is not in schema {}",
                l.category, schema.id
            )));
        }
        by_id.insert(l.message_id.as_str(), l);
    }
    let pairs: Vec<(&str, &str)> = labeled
        .iter()
        .map(|l| (l.message_id.as_str(), l.category.as_str()))
        .collect();
    let split_seed = mix(schema.seed ^ mix(version));
    let (train, holdout) = split_holdout(&pairs, schema.holdout_fraction, split_seed)?;

    let train_texts: Vec<(&str, &str)> = train
        .iter()
        .map(|(id, c)| (by_id[id].text.as_str(), *c))
        .collect();
    let vocabulary = build_vocabulary(&train_texts, schema.k, version)?;
    let encode = |part: &[(&str, &str)]| -> Vec<(FeatureVector, usize)> {
        part.iter()
            .map(|(id, c)| (vocabulary.vectorize(&by_id[id].text), class_of[c]))
            .collect()
    };
    let train_vectors = encode(&train);
    let holdout_vectors = encode(&holdout);

    let forest_seed = mix(split_seed);
    let forest = train_forest(
        &train_vectors,
        categories.len(),
        vocabulary.len(),
        &ForestParams {
            num_trees: schema.num_trees,
            seed: forest_seed,
        },
    )?;
    let metrics = evaluate(&forest, &categories, &holdout_vectors)?;
    Ok(TrainedModel {
        version,
        schema_id: schema.id.clone(),
        categories,
        vocabulary: Arc::new(vocabulary),
        forest,
        train_size: train.len(),
        holdout_size: holdout.len(),
        metrics,
        seed: schema.seed,
        trained_at,
    })
}

/// Averages leaf distributions; confidence is the top score and ties go to
/// the category listed first in the schema.
pub fn predict(vector: &FeatureVector, model: &TrainedModel) -> Result<Prediction> {
    if vector.vocabulary_version != model.vocabulary.version() {
        return Err(Error::StaleVector {
            vector: vector.vocabulary_version,
            model: model.vocabulary.version(),
        });
    }
    let scores = model.forest.scores(vector);
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(Prediction {
        model_version: model.version,
        category: model.categories[best].clone(),
        category_index: best,
        confidence: scores[best],
        scores,
    })
}

impl TrainedModel {
    pub fn classify_text(&self, text: &str) -> Prediction {
        predict(&self.vocabulary.vectorize(text), self)
            .expect("vector built from the model's own vocabulary")
    }

    pub fn labeled_total(&self) -> usize {
        self.train_size + self.holdout_size
    }

    pub fn snapshot_file_name(version: u64) -> String {
        format!("model-v{version}.json")
    }

    pub fn vocabulary_file_name(version: u64) -> String {
        format!("vocab-v{version}.csv")
    }

    /// Writes `vocab-vN.csv` and `model-vN.json` into `dir`. The model file
    /// references the vocabulary by file name and SHA-256 of its content.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let vocab_name = Self::vocabulary_file_name(self.version);
        let csv = self.vocabulary.to_csv_bytes();
        write_atomic(&dir.join(&vocab_name), &csv)?;
        let snapshot = ModelSnapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            version: self.version,
            schema_id: self.schema_id.clone(),
            categories: self.categories.clone(),
            vocabulary: VocabularyRef {
                file: vocab_name,
                sha256: self.vocabulary.content_hash(),
                version: self.vocabulary.version(),
                k: self.vocabulary.k(),
                source_label_count: self.vocabulary.source_label_count(),
                label_entropy: self.vocabulary.label_entropy(),
            },
            forest: self.forest.clone(),
            train_size: self.train_size,
            holdout_size: self.holdout_size,
            metrics: self.metrics.clone(),
            seed: self.seed,
            trained_at: self.trained_at,
        };
        let path = dir.join(Self::snapshot_file_name(self.version));
        write_atomic(&path, &serde_json::to_vec(&snapshot)?)?;
        Ok(path)
    }

    /// Reloads a snapshot written by [`TrainedModel::save`], verifying the
    /// vocabulary hash.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut de = serde_json::Deserializer::from_slice(&bytes);
        // Trees are nested one JSON object per level.
        de.disable_recursion_limit();
        let snap: ModelSnapshot = serde::Deserialize::deserialize(&mut de)?;
        if snap.format != SNAPSHOT_FORMAT {
            return Err(Error::Corrupt(format!(
                "unknown model format {:?}",
                snap.format
            )));
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        let csv = fs::read(dir.join(&snap.vocabulary.file))?;
        let vocabulary = Vocabulary::read_csv(
            &csv[..],
            snap.vocabulary.k,
            snap.vocabulary.source_label_count,
            snap.vocabulary.version,
            snap.vocabulary.label_entropy,
        )?;
        if vocabulary.content_hash() != snap.vocabulary.sha256 {
            return Err(Error::Corrupt(format!(
                "vocabulary {} does not match its recorded hash",
                snap.vocabulary.file
            )));
        }
        Ok(TrainedModel {
            version: snap.version,
            schema_id: snap.schema_id,
            categories: snap.categories,
            vocabulary: Arc::new(vocabulary),
            forest: snap.forest,
            train_size: snap.train_size,
            holdout_size: snap.holdout_size,
            metrics: snap.metrics,
            seed: snap.seed,
            trained_at: snap.trained_at,
        })
    }
}

/// On-disk, self-describing model format.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelSnapshot {
    pub format: String,
    pub version: u64,
    pub schema_id: String,
    pub categories: Vec<String>,
    pub vocabulary: VocabularyRef,
    pub forest: Forest,
    pub train_size: usize,
    pub holdout_size: usize,
    pub metrics: Metrics,
    pub seed: u64,
    pub trained_at: DateTime<Utc>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VocabularyRef {
    pub file: String,
    pub sha256: String,
    pub version: u64,
    pub k: usize,
    pub source_label_count: usize,
    pub label_entropy: f64,
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::forest::{Node, Tree};
    use crate::learn::schema::{Category, SchemaSpec};

    fn schema(n: usize) -> ClassifierSchema {
        let cats = (0..n).map(|i| Category::new(format!("c{i}"), "")).collect();
        let mut spec = SchemaSpec::new("t", cats);
        spec.num_trees = Some(30);
        spec.seed = Some(11);
        spec.into_schema("s".into(), "c".into()).unwrap()
    }

    fn stump(class: usize) -> Tree {
        let mut d = vec![0.0, 0.0];
        d[class] = 1.0;
        Tree {
            root: Node::Leaf(d),
        }
    }

    fn model_with(forest: Forest) -> TrainedModel {
        let vocab = build_vocabulary(&[("a", "x"), ("b", "y")], 10, 1).unwrap();
        TrainedModel {
            version: 1,
            schema_id: "s".into(),
            categories: vec!["A".into(), "B".into()],
            vocabulary: Arc::new(vocab),
            forest,
            train_size: 0,
            holdout_size: 0,
            metrics: Metrics::from_per_category(vec![]),
            seed: 0,
            trained_at: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    fn empty_vector() -> FeatureVector {
        FeatureVector {
            vocabulary_version: 1,
            present: vec![],
        }
    }

    #[test]
    fn averaging_hand_built_stumps() {
        let trees = (0..100)
            .map(|i| stump(if i < 58 { 0 } else { 1 }))
            .collect();
        let m = model_with(Forest::from_trees(2, 2, trees));
        let p = predict(&empty_vector(), &m).unwrap();
        assert_eq!(p.category, "A");
        assert!((p.confidence - 0.58).abs() < 1e-12);
        assert!((p.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unanimous_vote() {
        let m = model_with(Forest::from_trees(2, 2, vec![stump(1); 7]));
        let p = predict(&empty_vector(), &m).unwrap();
        assert_eq!((p.category.as_str(), p.confidence), ("B", 1.0));
    }

    #[test]
    fn tie_goes_to_schema_order() {
        let m = model_with(Forest::from_trees(2, 2, vec![stump(1), stump(0)]));
        let p = predict(&empty_vector(), &m).unwrap();
        assert_eq!(p.category, "A");
        assert_eq!(p.confidence, 0.5);
    }

    #[test]
    fn stale_vector_rejected() {
        let m = model_with(Forest::from_trees(2, 2, vec![stump(0)]));
        let v = FeatureVector {
            vocabulary_version: 2,
            present: vec![],
        };
        assert!(matches!(
            predict(&v, &m),
            Err(Error::StaleVector {
                vector: 2,
                model: 1
            })
        ));
    }

    fn labeled(n: usize, classes: usize) -> Vec<LabeledText> {
        let words = ["alpha", "bravo", "charlie", "delta"];
        (0..n)
            .map(|i| LabeledText {
                message_id: format!("m{i:04}"),
                text: format!("{} filler{} common", words[i % classes], i % 5),
                category: format!("c{}", i % classes),
            })
            .collect()
    }

    #[test]
    fn end_to_end_training_is_deterministic() {
        let s = schema(3);
        let l = labeled(60, 3);
        let a = train_model(&s, &l, 1, DateTime::<Utc>::UNIX_EPOCH).unwrap();
        let b = train_model(&s, &l, 1, DateTime::<Utc>::UNIX_EPOCH).unwrap();
        assert_eq!(a.train_size + a.holdout_size, 60);
        assert_eq!(a.holdout_size, 12);
        assert_eq!(a.forest, b.forest);
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.forest.trees.len(), 30);
        assert_eq!(a.metrics.macro_auc, Some(1.0));
        let p = a.classify_text("Bravo!");
        assert_eq!(p.category, "c1");
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = train_model(&schema(3), &labeled(40, 3), 4, Utc::now()).unwrap();
        let path = m.save(dir.path()).unwrap();
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back.forest, m.forest);
        assert_eq!(back.metrics, m.metrics);
        for text in ["alpha x", "charlie filler3", "nothing"] {
            assert_eq!(back.classify_text(text), m.classify_text(text));
        }
        // Tampered vocabulary is caught.
        let vocab = dir.path().join(TrainedModel::vocabulary_file_name(4));
        let mut csv = fs::read_to_string(&vocab).unwrap();
        csv.push_str("zzz,1,0\n");
        fs::write(&vocab, csv).unwrap();
        assert!(matches!(TrainedModel::load(&path), Err(Error::Corrupt(_))));
    }
}
