use std::fmt;

use serde::{Deserialize, Serialize};

/// A unigram or an adjacent-token bigram.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NgramFeature {
    Unigram(String),
    Bigram(String, String),
}

impl NgramFeature {
    pub fn arity(&self) -> u8 {
        match self {
            NgramFeature::Unigram(_) => 1,
            NgramFeature::Bigram(..) => 2,
        }
    }

    /// Feature text: bigram terms joined by `_`. Tokens never contain `_`
    /// after normalization, so the text identifies the feature.
    pub fn text(&self) -> String {
        self.to_string()
    }

    /// Parses feature text back; `arity` disambiguates.
    pub fn from_text(text: &str, arity: u8) -> Option<Self> {
        match arity {
            1 if !text.is_empty() && !text.contains('_') => {
                Some(NgramFeature::Unigram(text.to_string()))
            }
            2 => {
                let (a, b) = text.split_once('_')?;
                if a.is_empty() || b.is_empty() || b.contains('_') {
                    return None;
                }
                Some(NgramFeature::Bigram(a.to_string(), b.to_string()))
            }
            _ => None,
        }
    }
}

impl fmt::Display for NgramFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NgramFeature::Unigram(t) => f.write_str(t),
            NgramFeature::Bigram(a, b) => write!(f, "{a}_{b}"),
        }
    }
}

/// Whitespace tokens of already-normalized text.
pub fn tokens(normalized: &str) -> impl Iterator<Item = &str> {
    normalized.split_whitespace()
}

/// All unigrams in order, then all adjacent bigrams in order. Repeats are kept.
pub fn extract_ngrams(normalized: &str) -> Vec<NgramFeature> {
    let toks: Vec<&str> = tokens(normalized).collect();
    let mut out = Vec::with_capacity(toks.len() * 2);
    out.extend(toks.iter().map(|t| NgramFeature::Unigram(t.to_string())));
    out.extend(
        toks.windows(2)
            .map(|w| NgramFeature::Bigram(w[0].to_string(), w[1].to_string())),
    );
    out
}

/// Calls `f(text, arity)` for each n-gram without allocating a feature per call.
pub(crate) fn for_each_ngram_text(normalized: &str, mut f: impl FnMut(&str, u8)) {
    let mut buf = String::new();
    let mut prev: Option<&str> = None;
    for tok in tokens(normalized) {
        f(tok, 1);
        if let Some(p) = prev {
            buf.clear();
            buf.push_str(p);
            buf.push('_');
            buf.push_str(tok);
            f(&buf, 2);
        }
        prev = Some(tok);
    }
}
