//! Synthetic workloads shared by the benchmarks.

use std::collections::{BTreeMap, BTreeSet};

use fairlens_core::hallucination::ground_truth_objects;
use fairlens_core::lexicon::mask_gender;
use fairlens_core::{synth, CaptionRecord, GenderLexicon, MaskedCaption, PredictionRecord, SynonymHierarchy};

pub struct CaptionWorkload {
    pub references: Vec<CaptionRecord>,
    pub predictions: Vec<PredictionRecord>,
    pub ground_truths: BTreeMap<String, BTreeSet<String>>,
}

pub fn caption_workload(images: usize, h: &SynonymHierarchy) -> CaptionWorkload {
    let references = synth::caption_corpus(images, 5, 1);
    let predictions = synth::predictions_for(&references, 2);
    let ground_truths = references
        .iter()
        .map(|r| {
            let gt = ground_truth_objects(None, &r.captions, h).expect("references present");
            (r.image_id.clone(), gt)
        })
        .collect();
    CaptionWorkload {
        references,
        predictions,
        ground_truths,
    }
}

/// Masked gendered captions, first reference of every image.
pub fn masked_corpus(references: &[CaptionRecord], lex: &GenderLexicon) -> Vec<MaskedCaption> {
    references
        .iter()
        .map(|r| mask_gender(&r.captions[0], lex))
        .filter(|m| m.source_gender.gender().is_some())
        .collect()
}
