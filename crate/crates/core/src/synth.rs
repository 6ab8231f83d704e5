//! Seeded synthetic corpora for benchmarks and scale tests.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{CaptionRecord, GenderCatalog, PredictionRecord, RankedRetrieval, Split};
use crate::lexicon::GenderLabel;
use crate::rng;

const SUBJECTS: &[&str] = &["man", "woman", "person", "boy", "girl", "player", "child", "lady", "guy"];
const VERBS: &[&str] = &["rides", "holds", "sits next to", "walks with", "looks at", "carries", "plays with"];
const OBJECTS: &[&str] = &[
    "a dog", "a surfboard", "a kite", "a bicycle", "an umbrella", "a pizza", "a laptop",
    "a teddy bear", "a purse", "a briefcase", "a horse", "a frisbee", "a cup", "a bench",
];
const PLACES: &[&str] = &["on the beach", "in a park", "at the table", "near the street", "in a kitchen", ""];

fn sentence(rng: &mut impl Rng) -> String {
    let subject = SUBJECTS.choose(rng).unwrap();
    let verb = VERBS.choose(rng).unwrap();
    let object = OBJECTS.choose(rng).unwrap();
    let place = PLACES.choose(rng).unwrap();
    format!("a {subject} {verb} {object} {place}").trim_end().to_string()
}

/// `n` images with `per_image` reference captions each.
pub fn caption_corpus(n: usize, per_image: usize, seed: u64) -> Vec<CaptionRecord> {
    let mut rng = rng::stream(seed, "synth.captions");
    (0..n)
        .map(|i| CaptionRecord {
            image_id: format!("img{i:07}"),
            captions: (0..per_image).map(|_| sentence(&mut rng)).collect(),
            split: Split::Train,
        })
        .collect()
}

/// One generated caption per image id of `references`.
pub fn predictions_for(references: &[CaptionRecord], seed: u64) -> Vec<PredictionRecord> {
    let mut rng = rng::stream(seed, "synth.predictions");
    references
        .iter()
        .map(|r| PredictionRecord {
            image_id: r.image_id.clone(),
            caption: sentence(&mut rng),
        })
        .collect()
}

/// Random catalog over `n` images `img0000000..`.
pub fn random_catalog(n: usize, seed: u64) -> GenderCatalog {
    let mut rng = rng::stream(seed, "synth.catalog");
    let labels = [GenderLabel::Male, GenderLabel::Female, GenderLabel::Neutral];
    (0..n)
        .map(|i| (format!("img{i:07}"), *labels.choose(&mut rng).unwrap()))
        .collect()
}

/// `queries` rankings of length `len` over a pool of `pool` images, each
/// with one relevant image drawn from the pool.
pub fn random_rankings(queries: usize, len: usize, pool: usize, seed: u64) -> Vec<RankedRetrieval> {
    let mut rng = rng::stream(seed, "synth.rankings");
    let ids: Vec<String> = (0..pool).map(|i| format!("img{i:07}")).collect();
    (0..queries)
        .map(|q| {
            let ranking: Vec<String> = ids.choose_multiple(&mut rng, len.min(pool)).cloned().collect();
            let relevant: BTreeSet<String> = [ids.choose(&mut rng).unwrap().clone()].into();
            RankedRetrieval {
                query_id: format!("q{q:05}"),
                ranking,
                relevant,
            }
        })
        .collect()
}
