use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ig::{entropy_bits, gain_from_counts};
use super::ngram::{for_each_ngram_text, NgramFeature};
use super::normalize::normalize;
use crate::error::{Error, Result};

pub const DEFAULT_FEATURE_CAP: usize = 800;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredFeature {
    pub feature: NgramFeature,
    pub ig_bits: f64,
}

/// Selected n-gram features, best information gain first.
///
/// Ordering is `ig_bits` descending with ties broken by feature text
/// ascending, so the same labeled set always yields the same vocabulary.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    features: Vec<ScoredFeature>,
    k: usize,
    source_label_count: usize,
    version: u64,
    label_entropy: f64,
    index: HashMap<String, u32>,
}

/// Binary presence encoding of one message against one vocabulary version.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureVector {
    pub vocabulary_version: u64,
    /// Strictly increasing indices into the vocabulary.
    pub present: Vec<u32>,
}

impl FeatureVector {
    pub fn contains(&self, index: u32) -> bool {
        self.present.binary_search(&index).is_ok()
    }
}

/// Scores every distinct n-gram of the labeled set by information gain and
/// keeps the best `k`.
///
/// `labeled` holds `(raw text, category)` pairs. Presence means the n-gram
/// occurs at least once in the normalized message.
pub fn build_vocabulary<T, C>(labeled: &[(T, C)], k: usize, version: u64) -> Result<Vocabulary>
where
    T: AsRef<str>,
    C: AsRef<str>,
{
    if k == 0 {
        return Err(Error::Validation("feature cap k must be at least 1".into()));
    }
    let classes: BTreeMap<&str, usize> = labeled
        .iter()
        .map(|(_, c)| c.as_ref())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, i))
        .collect();
    if classes.len() < 2 {
        return Err(Error::CannotTrain(format!(
            "need at least 2 categories among labels, found {}",
            classes.len()
        )));
    }
    let n_classes = classes.len();
    let mut totals = vec![0u64; n_classes];
    let mut table: HashMap<String, (u8, Vec<u64>)> = HashMap::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (text, category) in labeled {
        let class = classes[category.as_ref()];
        totals[class] += 1;
        seen.clear();
        let normalized = normalize(text.as_ref());
        for_each_ngram_text(&normalized, |t, arity| {
            if seen.insert(t.to_string()) {
                let entry = table
                    .entry(t.to_string())
                    .or_insert_with(|| (arity, vec![0; n_classes]));
                entry.1[class] += 1;
            }
        });
    }

    let mut scored: Vec<(String, u8, f64)> = table
        .into_iter()
        .map(|(text, (arity, present))| {
            let ig = gain_from_counts(&totals, &present);
            (text, arity, ig)
        })
        .collect();
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);

    let features = scored
        .into_iter()
        .map(|(text, arity, ig_bits)| {
            let feature = NgramFeature::from_text(&text, arity)
                .ok_or_else(|| Error::Corrupt(format!("bad feature text {text:?}")))?;
            Ok(ScoredFeature { feature, ig_bits })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Vocabulary::from_parts(
        features,
        k,
        labeled.len(),
        version,
        entropy_bits(&totals),
    ))
}

impl Vocabulary {
    fn from_parts(
        features: Vec<ScoredFeature>,
        k: usize,
        source_label_count: usize,
        version: u64,
        label_entropy: f64,
    ) -> Self {
        let index = features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.feature.text(), i as u32))
            .collect();
        Vocabulary {
            features,
            k,
            source_label_count,
            version,
            label_entropy,
            index,
        }
    }

    pub fn features(&self) -> &[ScoredFeature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn source_label_count(&self) -> usize {
        self.source_label_count
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Empirical label entropy of the source set; upper bound for every score.
    pub fn label_entropy(&self) -> f64 {
        self.label_entropy
    }

    pub fn index_of(&self, feature_text: &str) -> Option<u32> {
        self.index.get(feature_text).copied()
    }

    /// Presence vector of `text`; out-of-vocabulary n-grams are ignored.
    pub fn vectorize(&self, text: &str) -> FeatureVector {
        let normalized = normalize(text);
        let mut present = Vec::new();
        for_each_ngram_text(&normalized, |t, _| {
            if let Some(&i) = self.index.get(t) {
                present.push(i);
            }
        });
        present.sort_unstable();
        present.dedup();
        FeatureVector {
            vocabulary_version: self.version,
            present,
        }
    }

    /// Writes `feature,arity,ig_bits` rows in vocabulary order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["feature", "arity", "ig_bits"])?;
        for f in &self.features {
            w.write_record([
                f.feature.text(),
                f.feature.arity().to_string(),
                f.ig_bits.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    /// Hex SHA-256 of the CSV export.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_bytes()))
    }

    /// Reloads a vocabulary from its CSV export. Scores are round-tripped
    /// exactly, so the reloaded vocabulary vectorizes identically.
    pub fn read_csv<R: Read>(
        input: R,
        k: usize,
        source_label_count: usize,
        version: u64,
        label_entropy: f64,
    ) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut features = Vec::new();
        for row in r.records() {
            let row = row?;
            let (text, arity, ig) = match (row.get(0), row.get(1), row.get(2)) {
                (Some(t), Some(a), Some(g)) => (t, a, g),
                _ => return Err(Error::Corrupt("vocabulary row needs 3 fields".into())),
            };
            let arity: u8 = arity
                .parse()
                .map_err(|_| Error::Corrupt(format!("bad arity {arity:?}")))?;
            let ig_bits: f64 = ig
                .parse()
                .map_err(|_| Error::Corrupt(format!("bad ig_bits {ig:?}")))?;
            let feature = NgramFeature::from_text(text, arity)
                .ok_or_else(|| Error::Corrupt(format!("bad feature {text:?}")))?;
            features.push(ScoredFeature { feature, ig_bits });
        }
        if features.len() > k {
            return Err(Error::Corrupt(format!(
                "{} features exceed cap {k}",
                features.len()
            )));
        }
        Ok(Self::from_parts(
            features,
            k,
            source_label_count,
            version,
            label_entropy,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<(String, String)> {
        [
            ("where can i get hiv testing", "testing"),
            ("is hiv testing free", "testing"),
            ("how much is circumcision", "circumcision"),
            ("circumcision healing time", "circumcision"),
            ("am i pregnant", "pregnancy"),
            ("pregnant and hiv", "pregnancy"),
        ]
        .iter()
        .map(|(t, c)| (t.to_string(), c.to_string()))
        .collect()
    }

    #[test]
    fn sorted_and_bounded() {
        let v = build_vocabulary(&corpus(), 800, 1).unwrap();
        let h = v.label_entropy();
        assert!((h - 3f64.log2()).abs() < 1e-12);
        for w in v.features().windows(2) {
            let ord = w[1]
                .ig_bits
                .total_cmp(&w[0].ig_bits)
                .then_with(|| w[0].feature.text().cmp(&w[1].feature.text()));
            assert!(ord.is_le(), "{:?} before {:?}", w[0], w[1]);
        }
        assert!(v
            .features()
            .iter()
            .all(|f| f.ig_bits >= 0.0 && f.ig_bits <= h));
    }

    #[test]
    fn caps_at_k() {
        let mut labeled = Vec::new();
        for m in 0..10 {
            let text: Vec<String> = (0..150).map(|i| format!("w{m}x{i}")).collect();
            labeled.push((
                text.join(" "),
                if m % 2 == 0 { "a" } else { "b" }.to_string(),
            ));
        }
        let v = build_vocabulary(&labeled, 800, 1).unwrap();
        assert_eq!(v.len(), 800);
    }

    #[test]
    fn fewer_candidates_than_cap() {
        let v = build_vocabulary(&corpus(), 800, 1).unwrap();
        let mut distinct = HashSet::new();
        for (t, _) in corpus() {
            for_each_ngram_text(&normalize(&t), |s, _| {
                distinct.insert(s.to_string());
            });
        }
        assert_eq!(v.len(), distinct.len());
    }

    #[test]
    fn identical_texts_fall_back_to_lexicographic() {
        let labeled: Vec<_> = (0..6)
            .map(|i| ("zeta alpha mid", if i < 3 { "x" } else { "y" }))
            .collect();
        let a = build_vocabulary(&labeled, 800, 1).unwrap();
        let b = build_vocabulary(&labeled, 800, 1).unwrap();
        let names: Vec<_> = a.features().iter().map(|f| f.feature.text()).collect();
        assert_eq!(names, ["alpha", "alpha_mid", "mid", "zeta", "zeta_alpha"]);
        assert!(a.features().iter().all(|f| f.ig_bits == 0.0));
        assert_eq!(a.to_csv_bytes(), b.to_csv_bytes());
    }

    #[test]
    fn single_category_cannot_train() {
        let labeled = [("a b", "x"), ("c d", "x")];
        assert!(matches!(
            build_vocabulary(&labeled, 800, 1),
            Err(Error::CannotTrain(_))
        ));
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut c = corpus();
        let a = build_vocabulary(&c, 5, 1).unwrap();
        c.reverse();
        let b = build_vocabulary(&c, 5, 1).unwrap();
        assert_eq!(a.to_csv_bytes(), b.to_csv_bytes());
    }

    #[test]
    fn presence_not_count() {
        let v = build_vocabulary(&corpus(), 800, 3).unwrap();
        let text = "HIV hiv hiv testing testing";
        let fv = v.vectorize(text);
        // Count-based oracle: every in-vocabulary n-gram, with multiplicity.
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for f in super::super::extract_ngrams(&normalize(text)) {
            if let Some(i) = v.index_of(&f.text()) {
                *counts.entry(i).or_default() += 1;
            }
        }
        assert!(counts.values().any(|&c| c > 1));
        assert_eq!(fv.present, counts.keys().copied().collect::<Vec<_>>());
        assert_eq!(fv.vocabulary_version, 3);
    }

    #[test]
    fn specific_indices_and_oov() {
        let v = build_vocabulary(&corpus(), 800, 1).unwrap();
        let unigrams: Vec<(u32, String)> = v
            .features()
            .iter()
            .enumerate()
            .filter_map(|(i, f)| match &f.feature {
                NgramFeature::Unigram(t) => Some((i as u32, t.clone())),
                _ => None,
            })
            .collect();
        let (i, a) = &unigrams[1];
        let (j, b) = &unigrams[4];
        let fv = v.vectorize(&format!("{a} qqq {b}"));
        let mut want = vec![*i, *j];
        want.sort();
        assert_eq!(fv.present, want);
        assert!(v.vectorize("zzz yyy").present.is_empty());
    }

    #[test]
    fn csv_round_trip_preserves_scores() {
        let v = build_vocabulary(&corpus(), 800, 2).unwrap();
        let bytes = v.to_csv_bytes();
        assert!(bytes.starts_with(b"feature,arity,ig_bits\n"));
        let back = Vocabulary::read_csv(&bytes[..], 800, 6, 2, v.label_entropy()).unwrap();
        assert_eq!(back.features(), v.features());
        assert_eq!(back.content_hash(), v.content_hash());
    }
}
