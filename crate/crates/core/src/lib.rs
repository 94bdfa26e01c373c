//! Crowd-label aggregation, ambiguity detection and cost-sensitive sequence
//! labeling.

pub mod aggregator;
pub mod ambiguity;
pub mod corpus;
pub mod crowdsim;
pub mod error;
pub mod evaluate;
pub mod labeler;
pub mod pipeline;
pub mod synthetic;
pub mod tsv;

pub use corpus::{Annotation, Corpus, CrowdAnnotations, LabelId, LabelSet, Token};
pub use error::{Error, Result};
