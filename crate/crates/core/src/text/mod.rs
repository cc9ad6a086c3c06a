//! Message text to sparse features: normalization, uni-/bi-gram extraction,
//! information-gain ranking and presence vectorization.

mod ig;
mod ngram;
mod normalize;
mod vocab;

pub use ig::{entropy_bits, information_gain};
pub use ngram::{extract_ngrams, tokens, NgramFeature};
pub use normalize::normalize;
pub use vocab::{build_vocabulary, FeatureVector, ScoredFeature, Vocabulary, DEFAULT_FEATURE_CAP};
