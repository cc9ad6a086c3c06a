use std::io::{BufRead, Write};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthCategory {
    pub name: String,
    pub keyword_pool: Vec<String>,
    pub weight: f64,
}

/// Recipe for a seeded corpus. Each message mixes keywords from its own
/// category (sometimes borrowing from another) with filler tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SyntheticSpec {
    pub categories: Vec<SynthCategory>,
    pub vocabulary_noise: Vec<String>,
    pub count: usize,
    pub seed: u64,
    pub char_limit: usize,
    /// Inclusive range of keyword slots per message.
    #[serde(default = "default_keywords")]
    pub keywords_per_message: [usize; 2],
    /// Inclusive range of filler tokens per message.
    #[serde(default = "default_noise")]
    pub noise_per_message: [usize; 2],
    /// Chance that a keyword slot draws from a different category's pool.
    #[serde(default = "default_cross_talk")]
    pub cross_talk: f64,
}

fn default_keywords() -> [usize; 2] {
    [1, 2]
}

fn default_noise() -> [usize; 2] {
    [3, 9]
}

fn default_cross_talk() -> f64 {
    0.25
}

/// One corpus line as read by the replay pusher.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CorpusLine {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sender_ref: Option<String>,
}

const HEALTH_POOLS: [(&str, &[&str]); 8] = [
    (
        "Symptoms",
        &[
            "rash",
            "itching",
            "fever",
            "sores",
            "pain",
            "headache",
            "discharge",
            "cough",
            "swollen",
            "burning",
            "weak",
            "diarrhoea",
            "sick",
            "signs",
        ],
    ),
    (
        "Definition",
        &[
            "meaning",
            "define",
            "what is",
            "stand for",
            "mean",
            "definition",
            "term",
            "aids",
            "sti",
            "explain",
            "word",
            "called",
        ],
    ),
    (
        "Male Circumcision",
        &[
            "circumcision",
            "circumcised",
            "foreskin",
            "cut",
            "mc",
            "clinic",
            "heal",
            "wound",
            "procedure",
            "cost",
            "penis",
            "operation",
        ],
    ),
    (
        "Testing HIV",
        &[
            "testing",
            "test",
            "tested",
            "results",
            "status",
            "vct",
            "window period",
            "negative",
            "positive",
            "blood",
            "kit",
            "know my",
        ],
    ),
    (
        "Treatment",
        &[
            "treatment",
            "arvs",
            "drugs",
            "medicine",
            "cure",
            "treated",
            "tablets",
            "side effects",
            "hospital",
            "doctor",
            "herbs",
            "pills",
        ],
    ),
    (
        "Pregnancy",
        &[
            "pregnant",
            "pregnancy",
            "baby",
            "period",
            "missed",
            "contraceptive",
            "family planning",
            "abortion",
            "mother",
            "born",
            "injection",
            "womb",
        ],
    ),
    (
        "Transmission",
        &[
            "transmitted",
            "spread",
            "kiss",
            "come from",
            "saliva",
            "mosquito",
            "sharing",
            "razor",
            "catch",
            "infected",
            "get hiv",
            "through",
        ],
    ),
    (
        "Prevention",
        &[
            "condom",
            "condoms",
            "prevent",
            "protect",
            "abstain",
            "faithful",
            "avoid",
            "safe",
            "prep",
            "effective",
            "protection",
            "stop",
        ],
    ),
];

const FILLERS: &[&str] = &[
    "please",
    "help",
    "me",
    "i",
    "my",
    "is",
    "it",
    "true",
    "that",
    "how",
    "can",
    "do",
    "you",
    "what",
    "where",
    "when",
    "why",
    "if",
    "a",
    "the",
    "and",
    "or",
    "to",
    "of",
    "in",
    "on",
    "someone",
    "friend",
    "sir",
    "madam",
    "ureport",
    "hello",
    "thanks",
    "question",
    "want",
    "know",
    "tell",
    "u",
    "r",
    "am",
    "boyfriend",
    "girlfriend",
    "am",
    "worried",
    "scared",
    "really",
    "need",
    "advice",
    "should",
    "will",
    "there",
    "they",
    "we",
    "zambia",
    "lusaka",
    "today",
    "now",
    "again",
    "also",
    "very",
    "much",
    "good",
    "people",
    "say",
];

impl SyntheticSpec {
    /// Eight health categories with equal weights; keyword pools loosely
    /// follow the vocabulary the categories are described with.
    pub fn health(count: usize, seed: u64) -> Self {
        let weight = 1.0 / HEALTH_POOLS.len() as f64;
        SyntheticSpec {
            categories: HEALTH_POOLS
                .iter()
                .map(|(name, pool)| SynthCategory {
                    name: name.to_string(),
                    keyword_pool: pool.iter().map(|s| s.to_string()).collect(),
                    weight,
                })
                .collect(),
            vocabulary_noise: FILLERS.iter().map(|s| s.to_string()).collect(),
            count,
            seed,
            char_limit: crate::gateway::DEFAULT_CHAR_LIMIT,
            keywords_per_message: default_keywords(),
            noise_per_message: default_noise(),
            cross_talk: default_cross_talk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.len() < 2 {
            return Err(Error::Validation(
                "a corpus needs at least 2 categories".into(),
            ));
        }
        let total: f64 = self.categories.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "category weights sum to {total}, not 1"
            )));
        }
        if self
            .categories
            .iter()
            .any(|c| c.weight.is_nan() || c.weight < 0.0)
        {
            return Err(Error::Validation(
                "category weights must be non-negative".into(),
            ));
        }
        if self.categories.iter().any(|c| c.keyword_pool.is_empty()) {
            return Err(Error::Validation("every category needs keywords".into()));
        }
        if self.char_limit == 0 {
            return Err(Error::Validation("charLimit must be at least 1".into()));
        }
        let [kmin, kmax] = self.keywords_per_message;
        let [nmin, nmax] = self.noise_per_message;
        if kmin == 0 || kmin > kmax || nmin > nmax {
            return Err(Error::Validation("bad per-message token ranges".into()));
        }
        if !(0.0..=1.0).contains(&self.cross_talk) {
            return Err(Error::Validation("crossTalk must be in [0, 1]".into()));
        }
        if nmax > 0 && self.vocabulary_noise.is_empty() {
            return Err(Error::Validation(
                "filler tokens requested but none given".into(),
            ));
        }
        Ok(())
    }
}

/// Generates `spec.count` messages. The same spec always yields the same
/// corpus.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<CorpusLine>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let senders = (spec.count / 4).max(1);
    let mut out = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let cat = pick_category(spec, rng.random::<f64>());
        let n_kw = rng.random_range(spec.keywords_per_message[0]..=spec.keywords_per_message[1]);
        let n_noise = rng.random_range(spec.noise_per_message[0]..=spec.noise_per_message[1]);
        let mut tokens: Vec<&str> = Vec::with_capacity(n_kw + n_noise);
        for _ in 0..n_kw {
            let source = if rng.random_bool(spec.cross_talk) {
                let other = rng.random_range(0..spec.categories.len() - 1);
                if other >= cat {
                    other + 1
                } else {
                    other
                }
            } else {
                cat
            };
            let pool = &spec.categories[source].keyword_pool;
            tokens.push(pool.choose(&mut rng).expect("non-empty pool"));
        }
        for _ in 0..n_noise {
            tokens.push(
                spec.vocabulary_noise
                    .choose(&mut rng)
                    .expect("non-empty fillers"),
            );
        }
        tokens.shuffle(&mut rng);
        let mut text = tokens.join(" ");
        if rng.random_bool(0.5) {
            text.push('?');
        }
        out.push(CorpusLine {
            text: fit(text, spec.char_limit),
            true_category: Some(spec.categories[cat].name.clone()),
            sender_ref: Some(format!("u{:05}", rng.random_range(0..senders))),
        });
    }
    Ok(out)
}

fn pick_category(spec: &SyntheticSpec, u: f64) -> usize {
    let mut acc = 0.0;
    for (i, c) in spec.categories.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            return i;
        }
    }
    spec.categories.len() - 1
}

/// Drops trailing words, then characters, until `text` fits.
fn fit(mut text: String, limit: usize) -> String {
    while text.chars().count() > limit {
        match text.trim_end().rfind(' ') {
            Some(i) if i > 0 => text.truncate(i),
            _ => {
                text = text.chars().take(limit).collect();
            }
        }
    }
    text
}

pub fn write_corpus<W: Write>(lines: &[CorpusLine], mut out: W) -> Result<()> {
    for line in lines {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a corpus, failing on the first malformed line.
pub fn read_corpus<R: BufRead>(input: R) -> Result<Vec<CorpusLine>> {
    let mut lines = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str(&line)
            .map_err(|e| Error::Validation(format!("corpus line {}: {e}", n + 1)))?;
        lines.push(parsed);
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_output_is_byte_identical() {
        let spec = SyntheticSpec::health(500, 11);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_corpus(&generate(&spec).unwrap(), &mut a).unwrap();
        write_corpus(&generate(&spec).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let other = generate(&SyntheticSpec::health(500, 12)).unwrap();
        assert_ne!(read_corpus(&a[..]).unwrap(), other);
    }

    #[test]
    fn respects_char_limit() {
        let mut spec = SyntheticSpec::health(2000, 3);
        spec.noise_per_message = [20, 40];
        let lines = generate(&spec).unwrap();
        let longest = lines.iter().map(|l| l.text.chars().count()).max().unwrap();
        assert!(longest <= 140);
        assert!(longest > 120);
        spec.char_limit = 5;
        assert!(generate(&spec)
            .unwrap()
            .iter()
            .all(|l| l.text.chars().count() <= 5));
    }

    #[test]
    fn equal_weights_pass_chi_square() {
        let lines = generate(&SyntheticSpec::health(8000, 5)).unwrap();
        let mut counts = std::collections::HashMap::new();
        for l in &lines {
            *counts
                .entry(l.true_category.clone().unwrap())
                .or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 8);
        let expected = 1000.0;
        let chi2: f64 = counts
            .values()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        // 7 degrees of freedom, 0.999 quantile.
        assert!(chi2 < 24.32, "chi2 = {chi2}");
    }

    #[test]
    fn weights_must_sum_to_one() {
        let mut spec = SyntheticSpec::health(10, 1);
        spec.categories[0].weight += 1e-6;
        assert!(matches!(generate(&spec), Err(Error::Validation(_))));
        spec.categories[0].weight -= 1e-6;
        spec.categories.truncate(1);
        spec.categories[0].weight = 1.0;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn skewed_mix_is_reproduced() {
        let mut spec = SyntheticSpec::health(4000, 9);
        spec.categories.truncate(4);
        for (c, w) in spec.categories.iter_mut().zip([0.4, 0.3, 0.2, 0.1]) {
            c.weight = w;
        }
        let lines = generate(&spec).unwrap();
        let share = |name: &str| {
            lines
                .iter()
                .filter(|l| l.true_category.as_deref() == Some(name))
                .count() as f64
                / 4000.0
        };
        assert!((share("Symptoms") - 0.4).abs() < 0.03);
        assert!((share("Testing HIV") - 0.1).abs() < 0.03);
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = SyntheticSpec::health(10, 1);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("keywordPool") && json.contains("vocabularyNoise"));
        let back: SyntheticSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
