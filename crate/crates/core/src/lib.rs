//! Gender-bias and object-hallucination metrics for captioning, retrieval
//! and masked-prediction outputs of vision-language models.
//!
//! Each module owns one metric family:
//!
//! - [`lexicon`]: gender word lists, masking, caption/image labels, Error
//! - [`corpus`]: JSONL records and streaming readers
//! - [`lic`]: leakage of gender through masked caption context
//! - [`cooccur`]: BiasAmp and co-occurrence hit ratios
//! - [`hallucination`]: CHAIR with a hierarchical synonym vocabulary
//! - [`retrieval`]: Bias@K, MaxSkew@K, NDKL, Recall@K, resolution gaps
//! - [`vlbias`]: counterfactual vision-language bias

pub mod cooccur;
pub mod corpus;
pub mod error;
pub mod hallucination;
pub mod lexicon;
pub mod lic;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod vlbias;

pub use corpus::{
    CaptionRecord, GenderCatalog, ObjectAnnotation, PredictionRecord, RankedRetrieval,
    ResolutionInstance, Scenario, Split, VlBiasRecord,
};
pub use error::{FairlensError, Result};
pub use hallucination::SynonymHierarchy;
pub use lexicon::{Gender, GenderLabel, GenderLexicon, MaskedCaption};
