//! Co-occurrence statistics between gender and words or objects.
//!
//! One [`CooccurrenceTable`] feeds both BiasAmp (gender x word counts) and
//! the hit ratios (object x object and gender x object counts).

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{CaptionRecord, GenderCatalog, PredictionRecord, Split};
use crate::error::{FairlensError, Result};
use crate::hallucination::{extract_objects, SynonymHierarchy};
use crate::lexicon::{image_gender, tokenize, Gender, GenderLabel, GenderLexicon};

const CHUNK: usize = 4096;
const STREAM_CHUNK: usize = 512;
const STREAM_BATCH: usize = 16 * STREAM_CHUNK;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CooccurrenceTable {
    word_list: BTreeSet<String>,
    /// Captions of gender `a` containing word `l`.
    gender_word_counts: BTreeMap<(Gender, String), u64>,
    /// Images containing both objects; stored in both orders.
    object_object_counts: BTreeMap<String, BTreeMap<String, u64>>,
    gender_object_counts: BTreeMap<Gender, BTreeMap<String, u64>>,
    object_image_counts: BTreeMap<String, u64>,
    gender_image_counts: BTreeMap<Gender, u64>,
}

impl CooccurrenceTable {
    /// Empty table over `word_list`, which must be non-empty and share no
    /// word with the lexicon.
    pub fn new(word_list: BTreeSet<String>, lex: &GenderLexicon) -> Result<Self> {
        if word_list.is_empty() {
            return Err(FairlensError::InvalidArgument("word list is empty".into()));
        }
        let overlap: Vec<String> = word_list.iter().filter(|w| lex.contains(w)).cloned().collect();
        if !overlap.is_empty() {
            return Err(FairlensError::WordListOverlap(overlap));
        }
        Ok(CooccurrenceTable {
            word_list,
            ..Default::default()
        })
    }

    pub fn word_list(&self) -> &BTreeSet<String> {
        &self.word_list
    }

    /// Counts one caption: every listed word it contains co-occurs once with
    /// the caption's gender. Neutral captions count nothing.
    pub fn add_caption(&mut self, caption: &str, lex: &GenderLexicon) {
        let tokens = tokenize(caption);
        let Some(gender) = lex.label_tokens(&tokens).gender() else {
            return;
        };
        let present: BTreeSet<&String> = tokens.iter().filter(|t| self.word_list.contains(*t)).collect();
        for word in present {
            *self
                .gender_word_counts
                .entry((gender, word.clone()))
                .or_insert(0) += 1;
        }
    }

    /// Counts one image's object set against itself and the image gender.
    pub fn add_image_objects(&mut self, gender: Option<Gender>, objects: &BTreeSet<String>) {
        for a in objects {
            *self.object_image_counts.entry(a.clone()).or_insert(0) += 1;
            let row = self.object_object_counts.entry(a.clone()).or_default();
            for b in objects {
                if a != b {
                    *row.entry(b.clone()).or_insert(0) += 1;
                }
            }
        }
        if let Some(g) = gender {
            *self.gender_image_counts.entry(g).or_insert(0) += 1;
            let row = self.gender_object_counts.entry(g).or_default();
            for o in objects {
                *row.entry(o.clone()).or_insert(0) += 1;
            }
        }
    }

    /// Adds every count of `other` into `self`. Word lists must match.
    pub fn merge(&mut self, other: CooccurrenceTable) -> Result<()> {
        if self.word_list != other.word_list {
            return Err(FairlensError::WordListMismatch);
        }
        for (k, v) in other.gender_word_counts {
            *self.gender_word_counts.entry(k).or_insert(0) += v;
        }
        for (a, row) in other.object_object_counts {
            let mine = self.object_object_counts.entry(a).or_default();
            for (b, v) in row {
                *mine.entry(b).or_insert(0) += v;
            }
        }
        for (g, row) in other.gender_object_counts {
            let mine = self.gender_object_counts.entry(g).or_default();
            for (o, v) in row {
                *mine.entry(o).or_insert(0) += v;
            }
        }
        for (o, v) in other.object_image_counts {
            *self.object_image_counts.entry(o).or_insert(0) += v;
        }
        for (g, v) in other.gender_image_counts {
            *self.gender_image_counts.entry(g).or_insert(0) += v;
        }
        Ok(())
    }

    pub fn gender_word(&self, gender: Gender, word: &str) -> u64 {
        self.gender_word_counts
            .get(&(gender, word.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn object_object(&self, a: &str, b: &str) -> u64 {
        self.object_object_counts
            .get(a)
            .and_then(|row| row.get(b))
            .copied()
            .unwrap_or(0)
    }

    pub fn gender_object(&self, gender: Gender, object: &str) -> u64 {
        self.gender_object_counts
            .get(&gender)
            .and_then(|row| row.get(object))
            .copied()
            .unwrap_or(0)
    }

    /// Images containing `object`.
    pub fn object_images(&self, object: &str) -> u64 {
        self.object_image_counts.get(object).copied().unwrap_or(0)
    }

    pub fn gender_images(&self, gender: Gender) -> u64 {
        self.gender_image_counts.get(&gender).copied().unwrap_or(0)
    }
}

impl From<&PredictionRecord> for CaptionRecord {
    fn from(p: &PredictionRecord) -> Self {
        CaptionRecord {
            image_id: p.image_id.clone(),
            captions: vec![p.caption.clone()],
            split: Split::Test,
        }
    }
}

fn count_chunk(
    images: &[CaptionRecord],
    template: &CooccurrenceTable,
    lex: &GenderLexicon,
    hierarchy: Option<&SynonymHierarchy>,
) -> CooccurrenceTable {
    let mut table = CooccurrenceTable {
        word_list: template.word_list.clone(),
        ..Default::default()
    };
    for image in images {
        for caption in &image.captions {
            table.add_caption(caption, lex);
        }
        if let Some(h) = hierarchy {
            let mut objects = BTreeSet::new();
            for caption in &image.captions {
                objects.extend(extract_objects(caption, h));
            }
            let gender = image_gender(&image.captions, lex)
                .ok()
                .and_then(GenderLabel::gender);
            table.add_image_objects(gender, &objects);
        }
    }
    table
}

/// Builds gender x word counts over every caption and, when a hierarchy is
/// given, image-level object co-occurrence over extracted canonicals.
pub fn build_table(
    images: &[CaptionRecord],
    lex: &GenderLexicon,
    word_list: BTreeSet<String>,
    hierarchy: Option<&SynonymHierarchy>,
) -> Result<CooccurrenceTable> {
    let table = CooccurrenceTable::new(word_list, lex)?;
    fill(table, images, lex, hierarchy, CHUNK)
}

/// Object co-occurrence only, with no word list; what the hit ratios need.
pub fn build_object_table(
    images: &[CaptionRecord],
    lex: &GenderLexicon,
    hierarchy: &SynonymHierarchy,
) -> Result<CooccurrenceTable> {
    fill(CooccurrenceTable::default(), images, lex, Some(hierarchy), CHUNK)
}

fn fill(
    mut table: CooccurrenceTable,
    images: &[CaptionRecord],
    lex: &GenderLexicon,
    hierarchy: Option<&SynonymHierarchy>,
    chunk: usize,
) -> Result<CooccurrenceTable> {
    let partials: Vec<CooccurrenceTable> = images
        .par_chunks(chunk)
        .map(|chunk| count_chunk(chunk, &table, lex, hierarchy))
        .collect();
    for partial in partials {
        table.merge(partial)?;
    }
    Ok(table)
}

/// Batches of records pulled from a fallible stream; only one batch is
/// held at a time.
fn fill_from<I>(
    mut table: CooccurrenceTable,
    records: I,
    lex: &GenderLexicon,
    hierarchy: Option<&SynonymHierarchy>,
) -> Result<CooccurrenceTable>
where
    I: IntoIterator<Item = Result<CaptionRecord>>,
{
    let mut records = records.into_iter();
    let mut batch = Vec::with_capacity(STREAM_BATCH);
    loop {
        batch.clear();
        for record in records.by_ref().take(STREAM_BATCH) {
            batch.push(record?);
        }
        if batch.is_empty() {
            return Ok(table);
        }
        table = fill(table, &batch, lex, hierarchy, STREAM_CHUNK)?;
    }
}

/// [`build_table`] over a record stream such as a
/// [`RecordReader`](crate::corpus::RecordReader).
pub fn build_table_from<I>(
    records: I,
    lex: &GenderLexicon,
    word_list: BTreeSet<String>,
    hierarchy: Option<&SynonymHierarchy>,
) -> Result<CooccurrenceTable>
where
    I: IntoIterator<Item = Result<CaptionRecord>>,
{
    let table = CooccurrenceTable::new(word_list, lex)?;
    fill_from(table, records, lex, hierarchy)
}

pub fn build_object_table_from<I>(
    records: I,
    lex: &GenderLexicon,
    hierarchy: &SynonymHierarchy,
) -> Result<CooccurrenceTable>
where
    I: IntoIterator<Item = Result<CaptionRecord>>,
{
    fill_from(CooccurrenceTable::default(), records, lex, Some(hierarchy))
}

/// The `top_n` most frequent tokens of a corpus with stop words and gender
/// words removed afterwards. Frequency ties break toward the
/// lexicographically smaller token.
pub fn derive_word_list(
    images: &[CaptionRecord],
    lex: &GenderLexicon,
    top_n: usize,
    stoplist: &BTreeSet<String>,
) -> BTreeSet<String> {
    let mut freq = BTreeMap::new();
    for image in images {
        count_tokens(&mut freq, image);
    }
    rank_words(freq, lex, top_n, stoplist)
}

/// [`derive_word_list`] over a record stream.
pub fn derive_word_list_from<I>(
    records: I,
    lex: &GenderLexicon,
    top_n: usize,
    stoplist: &BTreeSet<String>,
) -> Result<BTreeSet<String>>
where
    I: IntoIterator<Item = Result<CaptionRecord>>,
{
    let mut freq = BTreeMap::new();
    for image in records {
        count_tokens(&mut freq, &image?);
    }
    Ok(rank_words(freq, lex, top_n, stoplist))
}

fn count_tokens(freq: &mut BTreeMap<String, u64>, image: &CaptionRecord) {
    for caption in &image.captions {
        for token in tokenize(caption) {
            *freq.entry(token).or_insert(0) += 1;
        }
    }
}

fn rank_words(
    freq: BTreeMap<String, u64>,
    lex: &GenderLexicon,
    top_n: usize,
    stoplist: &BTreeSet<String>,
) -> BTreeSet<String> {
    let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(top_n)
        .map(|(w, _)| w)
        .filter(|w| !stoplist.contains(w) && lex.gender_of(w).is_none())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasAmpResult {
    pub value: f64,
    /// Contribution of every (gender, word) pair of the evaluated word set.
    #[serde(skip)]
    pub per_word: BTreeMap<(Gender, String), f64>,
    /// Words never co-occurring with a gender in the predictions.
    pub skipped_words: BTreeSet<String>,
    /// Words never co-occurring with a gender in training; not part of L.
    pub excluded_words: BTreeSet<String>,
    /// Size of the evaluated word set.
    pub n_words: usize,
}

/// Bias amplification from training co-occurrences to predicted ones.
///
/// For each word, `b = c_a / (c_m + c_f)`; pairs whose training proportion
/// exceeds 1/2 contribute `b_pred - b_train`. Words with no training
/// co-occurrence leave the word set; words with no predicted co-occurrence
/// stay in it but contribute 0.
pub fn bias_amp(train: &CooccurrenceTable, pred: &CooccurrenceTable) -> Result<BiasAmpResult> {
    if train.word_list != pred.word_list {
        return Err(FairlensError::WordListMismatch);
    }
    let threshold = 1.0 / Gender::BOTH.len() as f64;
    let mut per_word = BTreeMap::new();
    let mut skipped_words = BTreeSet::new();
    let mut excluded_words = BTreeSet::new();
    for word in &train.word_list {
        let train_total: u64 = Gender::BOTH.iter().map(|g| train.gender_word(*g, word)).sum();
        if train_total == 0 {
            excluded_words.insert(word.clone());
            continue;
        }
        let pred_total: u64 = Gender::BOTH.iter().map(|g| pred.gender_word(*g, word)).sum();
        for g in Gender::BOTH {
            let b = train.gender_word(g, word) as f64 / train_total as f64;
            let contribution = if pred_total == 0 || b <= threshold {
                0.0
            } else {
                pred.gender_word(g, word) as f64 / pred_total as f64 - b
            };
            per_word.insert((g, word.clone()), contribution);
        }
        if pred_total == 0 {
            skipped_words.insert(word.clone());
        }
    }
    let n_words = train.word_list.len() - excluded_words.len();
    if n_words == 0 {
        return Err(FairlensError::undefined(
            "BiasAmp: no listed word co-occurs with a gender in training",
        ));
    }
    let total: f64 = per_word.values().sum();
    Ok(BiasAmpResult {
        value: total / n_words as f64,
        per_word,
        skipped_words,
        excluded_words,
        n_words,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Anchor {
    Object(String),
    Gender(Gender),
}

impl std::fmt::Display for Anchor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Anchor::Object(o) => f.write_str(o),
            Anchor::Gender(g) => write!(f, "{g}"),
        }
    }
}

/// The `k` objects co-occurring most often with `anchor`, most frequent
/// first, ties broken lexicographically. The anchor itself is never listed.
pub fn top_cooccurring(table: &CooccurrenceTable, anchor: &Anchor, k: usize) -> Result<Vec<String>> {
    let row = match anchor {
        Anchor::Object(o) => {
            if table.object_images(o) == 0 {
                return Err(FairlensError::UnknownAnchor(o.clone()));
            }
            table.object_object_counts.get(o)
        }
        Anchor::Gender(g) => {
            if table.gender_images(*g) == 0 {
                return Err(FairlensError::UnknownAnchor(g.to_string()));
            }
            table.gender_object_counts.get(g)
        }
    };
    let mut partners: Vec<(&String, u64)> = row
        .into_iter()
        .flatten()
        .filter(|(o, n)| **n > 0 && !matches!(anchor, Anchor::Object(a) if a == *o))
        .map(|(o, n)| (o, *n))
        .collect();
    partners.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(partners.into_iter().take(k).map(|(o, _)| o.clone()).collect())
}

/// How images without hallucinated objects enter a hit ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyHallucinations {
    /// Left out of the mean and counted separately.
    #[default]
    Exclude,
    /// Enter the mean with ratio 0.
    CountAsZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HitRatio {
    pub value: f64,
    /// Images averaged over.
    pub n_images: usize,
    /// Candidate images with no hallucinated object.
    pub n_empty: usize,
}

fn hit_ratio<'a>(
    per_image: &BTreeMap<String, BTreeSet<String>>,
    c_set: &BTreeSet<String>,
    images: impl Iterator<Item = &'a str>,
    empty: EmptyHallucinations,
    what: &str,
) -> Result<HitRatio> {
    let none = BTreeSet::new();
    let mut sum = 0.0;
    let mut n_images = 0;
    let mut n_empty = 0;
    for id in images {
        let hallucinated = per_image.get(id).unwrap_or(&none);
        if hallucinated.is_empty() {
            n_empty += 1;
            if empty == EmptyHallucinations::CountAsZero {
                n_images += 1;
            }
            continue;
        }
        let hits = hallucinated.intersection(c_set).count();
        sum += hits as f64 / hallucinated.len() as f64;
        n_images += 1;
    }
    if n_images == 0 {
        return Err(FairlensError::undefined(format!(
            "hit ratio for {what}: no qualifying image"
        )));
    }
    Ok(HitRatio {
        value: sum / n_images as f64,
        n_images,
        n_empty,
    })
}

/// Mean share of each image's hallucinated objects that fall in `c_set`,
/// over the images containing the probing object.
pub fn hit_ratio_object(
    per_image: &BTreeMap<String, BTreeSet<String>>,
    c_set: &BTreeSet<String>,
    images_with_anchor: &BTreeSet<String>,
    empty: EmptyHallucinations,
) -> Result<HitRatio> {
    hit_ratio(
        per_image,
        c_set,
        images_with_anchor.iter().map(String::as_str),
        empty,
        "object",
    )
}

/// Same as [`hit_ratio_object`] over the images labeled `gender`.
pub fn hit_ratio_gender(
    per_image: &BTreeMap<String, BTreeSet<String>>,
    catalog: &GenderCatalog,
    gender: Gender,
    c_set: &BTreeSet<String>,
    empty: EmptyHallucinations,
) -> Result<HitRatio> {
    hit_ratio(
        per_image,
        c_set,
        catalog.ids_with(gender.into()),
        empty,
        gender.as_str(),
    )
}
