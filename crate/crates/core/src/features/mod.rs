//! Dense descriptor grids, the synthetic descriptor oracle, and bag-of-words
//! retrieval.

mod bow;
mod feature_map;
mod synthetic;

pub use bow::{
    bow_histogram, build_vocabulary, retrieve_references, BowHistogram, BowVocabulary,
    KMeansOptions,
};
pub(crate) use feature_map::dot as feature_map_dot;
pub use feature_map::{cosine, FeatureMap, Mask};
pub use synthetic::{
    owners_from_depth, synthetic_features, AppearanceParams, SymmetrySpec, SyntheticAppearance,
    SyntheticFeatureParams,
};
