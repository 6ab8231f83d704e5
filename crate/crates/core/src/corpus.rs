//! JSON-Lines ingestion for every corpus the toolkit consumes.
//!
//! Each file holds one JSON object per line. Readers stream: they keep one
//! line buffer plus the id index needed for duplicate detection, so memory
//! grows with the number of distinct ids and not with the file size. Every
//! failure carries the file name and 1-based line number.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{FairlensError, Result};
use crate::lexicon::{Gender, GenderLabel, GENDER_SENTINEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Reference captions for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRecord {
    pub image_id: String,
    pub captions: Vec<String>,
    pub split: Split,
}

/// One generated caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub image_id: String,
    pub caption: String,
}

/// Annotated canonical objects present in an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectAnnotation {
    pub image_id: String,
    pub objects: BTreeSet<String>,
}

/// A ranked list of images returned for one text query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankedRetrieval {
    pub query_id: String,
    pub ranking: Vec<String>,
    #[serde(default)]
    pub relevant: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Occupation with an object (single person).
    #[serde(rename = "OO")]
    OccupationObject,
    /// Occupation with a participant (two people).
    #[serde(rename = "OP")]
    OccupationParticipant,
}

impl Scenario {
    pub fn code(self) -> &'static str {
        match self {
            Scenario::OccupationObject => "OO",
            Scenario::OccupationParticipant => "OP",
        }
    }
}

/// One pronoun-resolution trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionInstance {
    pub occupation: String,
    pub scenario: Scenario,
    pub true_gender: Gender,
    pub predicted_gender: Gender,
}

impl ResolutionInstance {
    pub fn is_correct(&self) -> bool {
        self.true_gender == self.predicted_gender
    }
}

/// Probability of one masked token before and after the counterfactual edit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbabilityShift {
    pub factual: f64,
    pub counterfactual: f64,
}

impl ProbabilityShift {
    pub fn delta(&self) -> f64 {
        self.counterfactual - self.factual
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenderShifts {
    pub male: ProbabilityShift,
    pub female: ProbabilityShift,
}

impl GenderShifts {
    pub fn get(&self, gender: Gender) -> ProbabilityShift {
        match gender {
            Gender::Male => self.male,
            Gender::Female => self.female,
        }
    }
}

/// Masked-token probabilities for one image-text pair and its counterfactual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VlBiasRecord {
    pub pair_id: String,
    pub target: String,
    pub p_t: ProbabilityShift,
    pub p_a: GenderShifts,
    /// Optional grouping tag such as `activity` or `occupation`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    pub image_id: String,
    pub gender: GenderLabel,
}

/// Gender label per image id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenderCatalog {
    labels: BTreeMap<String, GenderLabel>,
}

impl GenderCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, label: GenderLabel) -> Option<GenderLabel> {
        self.labels.insert(image_id.into(), label)
    }

    pub fn get(&self, image_id: &str) -> Option<GenderLabel> {
        self.labels.get(image_id).copied()
    }

    /// Like [`GenderCatalog::get`], failing with `MissingCatalogEntry`.
    pub fn label(&self, image_id: &str) -> Result<GenderLabel> {
        self.get(image_id)
            .ok_or_else(|| FairlensError::MissingCatalogEntry(image_id.to_string()))
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.labels.contains_key(image_id)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, GenderLabel)> + '_ {
        self.labels.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Ids carrying the given label, in sorted order.
    pub fn ids_with(&self, label: GenderLabel) -> impl Iterator<Item = &str> + '_ {
        self.iter().filter(move |(_, l)| *l == label).map(|(id, _)| id)
    }

    pub fn entries(&self) -> impl Iterator<Item = CatalogEntry> + '_ {
        self.iter().map(|(id, gender)| CatalogEntry {
            image_id: id.to_string(),
            gender,
        })
    }

    pub fn distribution(&self) -> LabelCounts {
        let mut counts = LabelCounts::default();
        for (_, label) in self.iter() {
            counts.add(label);
        }
        counts
    }
}

impl FromIterator<(String, GenderLabel)> for GenderCatalog {
    fn from_iter<I: IntoIterator<Item = (String, GenderLabel)>>(iter: I) -> Self {
        GenderCatalog {
            labels: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub male: usize,
    pub female: usize,
    pub neutral: usize,
}

impl LabelCounts {
    pub fn add(&mut self, label: GenderLabel) {
        match label {
            GenderLabel::Male => self.male += 1,
            GenderLabel::Female => self.female += 1,
            GenderLabel::Neutral => self.neutral += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.male + self.female + self.neutral
    }
}

/// A JSONL record type: how to find its id and what to validate.
pub trait Record: DeserializeOwned {
    /// Id used for duplicate detection, when the record type has one.
    fn id(&self) -> Option<&str>;

    fn validate(&self, _path: &str, _line: usize) -> Result<()> {
        Ok(())
    }
}

fn reject_sentinel(text: &str, path: &str, line: usize) -> Result<()> {
    if text.contains(GENDER_SENTINEL) {
        return Err(FairlensError::MalformedRecord {
            path: path.to_string(),
            line,
            message: FairlensError::ReservedToken(text.to_string()).to_string(),
        });
    }
    Ok(())
}

impl Record for CaptionRecord {
    fn id(&self) -> Option<&str> {
        Some(&self.image_id)
    }

    fn validate(&self, path: &str, line: usize) -> Result<()> {
        if self.captions.is_empty() {
            return Err(FairlensError::MalformedRecord {
                path: path.to_string(),
                line,
                message: format!("image `{}` has no captions", self.image_id),
            });
        }
        for caption in &self.captions {
            reject_sentinel(caption, path, line)?;
        }
        Ok(())
    }
}

impl Record for PredictionRecord {
    fn id(&self) -> Option<&str> {
        Some(&self.image_id)
    }

    fn validate(&self, path: &str, line: usize) -> Result<()> {
        reject_sentinel(&self.caption, path, line)
    }
}

impl Record for ObjectAnnotation {
    fn id(&self) -> Option<&str> {
        Some(&self.image_id)
    }
}

impl Record for RankedRetrieval {
    fn id(&self) -> Option<&str> {
        Some(&self.query_id)
    }

    fn validate(&self, path: &str, line: usize) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.ranking.len());
        for image_id in &self.ranking {
            if !seen.insert(image_id.as_str()) {
                return Err(FairlensError::DuplicateInRanking {
                    path: path.to_string(),
                    line,
                    query_id: self.query_id.clone(),
                    image_id: image_id.clone(),
                });
            }
        }
        Ok(())
    }
}

impl Record for CatalogEntry {
    fn id(&self) -> Option<&str> {
        Some(&self.image_id)
    }
}

impl Record for ResolutionInstance {
    fn id(&self) -> Option<&str> {
        None
    }
}

impl Record for VlBiasRecord {
    fn id(&self) -> Option<&str> {
        Some(&self.pair_id)
    }

    fn validate(&self, path: &str, line: usize) -> Result<()> {
        let fields = [
            ("p_t.factual", self.p_t.factual),
            ("p_t.counterfactual", self.p_t.counterfactual),
            ("p_a.male.factual", self.p_a.male.factual),
            ("p_a.male.counterfactual", self.p_a.male.counterfactual),
            ("p_a.female.factual", self.p_a.female.factual),
            ("p_a.female.counterfactual", self.p_a.female.counterfactual),
        ];
        for (field, value) in fields {
            if !(0.0..=1.0).contains(&value) {
                return Err(FairlensError::ProbabilityOutOfRange {
                    path: path.to_string(),
                    line,
                    field: field.to_string(),
                    value,
                });
            }
        }
        Ok(())
    }
}

/// Streaming iterator over the validated records of a JSONL source.
///
/// Blank lines are skipped. Each yielded item is `(line_number, record)`.
pub struct RecordReader<R, T> {
    source: R,
    path: String,
    line: usize,
    buf: String,
    seen: HashSet<String>,
    failed: bool,
    _record: PhantomData<T>,
}

impl<T: Record> RecordReader<BufReader<File>, T> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| FairlensError::io(path, e))?;
        Ok(Self::new(BufReader::new(file), path.display().to_string()))
    }
}

impl<R: BufRead, T: Record> RecordReader<R, T> {
    pub fn new(source: R, path: impl Into<String>) -> Self {
        RecordReader {
            source,
            path: path.into(),
            line: 0,
            buf: String::new(),
            seen: HashSet::new(),
            failed: false,
            _record: PhantomData,
        }
    }

    fn parse_line(&mut self) -> Result<T> {
        let record: T =
            serde_json::from_str(self.buf.trim()).map_err(|e| FairlensError::MalformedRecord {
                path: self.path.clone(),
                line: self.line,
                message: e.to_string(),
            })?;
        record.validate(&self.path, self.line)?;
        if let Some(id) = record.id() {
            if !self.seen.insert(id.to_string()) {
                return Err(FairlensError::DuplicateId {
                    path: self.path.clone(),
                    line: self.line,
                    id: id.to_string(),
                });
            }
        }
        Ok(record)
    }
}

impl<R: BufRead, T: Record> Iterator for RecordReader<R, T> {
    type Item = Result<(usize, T)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            self.line += 1;
            match self.source.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(FairlensError::io(self.path.clone(), e)));
                }
            }
            if self.buf.trim().is_empty() {
                continue;
            }
            let parsed = self.parse_line();
            if parsed.is_err() {
                self.failed = true;
            }
            return Some(parsed.map(|record| (self.line, record)));
        }
    }
}

/// Reads and validates every record of a JSONL file.
pub fn read_records<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    RecordReader::<_, T>::open(path)?
        .map(|item| item.map(|(_, record)| record))
        .collect()
}

pub fn read_captions(path: impl AsRef<Path>) -> Result<Vec<CaptionRecord>> {
    read_records(path)
}

/// Caption records one at a time; memory stays at one line plus the id set.
pub fn stream_captions(path: impl AsRef<Path>) -> Result<impl Iterator<Item = Result<CaptionRecord>>> {
    Ok(RecordReader::<_, CaptionRecord>::open(path)?.map(|item| item.map(|(_, record)| record)))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    read_records(path)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<ObjectAnnotation>> {
    read_records(path)
}

pub fn read_rankings(path: impl AsRef<Path>) -> Result<Vec<RankedRetrieval>> {
    read_records(path)
}

pub fn read_catalog(path: impl AsRef<Path>) -> Result<GenderCatalog> {
    let entries: Vec<CatalogEntry> = read_records(path)?;
    Ok(entries
        .into_iter()
        .map(|entry| (entry.image_id, entry.gender))
        .collect())
}

pub fn read_resolution(path: impl AsRef<Path>) -> Result<Vec<ResolutionInstance>> {
    read_records(path)
}

pub fn read_vlbias(path: impl AsRef<Path>) -> Result<Vec<VlBiasRecord>> {
    read_records(path)
}

/// Writes records as JSON Lines.
pub fn write_records<'a, T, W, I>(mut out: W, records: I) -> std::io::Result<()>
where
    T: Serialize + 'a,
    W: Write,
    I: IntoIterator<Item = &'a T>,
{
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Mismatches between the id sets of predictions, references and catalog.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct JoinReport {
    pub predictions_missing_reference: Vec<String>,
    pub references_missing_prediction: Vec<String>,
    pub predictions_missing_catalog: Vec<String>,
    pub catalog_missing_prediction: Vec<String>,
    /// Gender distribution of the catalog restricted to predicted ids.
    pub gender_distribution: Option<LabelCounts>,
}

impl JoinReport {
    pub fn is_clean(&self) -> bool {
        self.predictions_missing_reference.is_empty()
            && self.references_missing_prediction.is_empty()
            && self.predictions_missing_catalog.is_empty()
            && self.catalog_missing_prediction.is_empty()
    }
}

/// Cross-checks ids between the inputs of a captioning evaluation.
///
/// In strict mode any mismatch becomes a `JoinMismatch` error.
pub fn validate_join(
    predictions: &[PredictionRecord],
    references: &[CaptionRecord],
    catalog: Option<&GenderCatalog>,
    strict: bool,
) -> Result<JoinReport> {
    let predicted: BTreeSet<&str> = predictions.iter().map(|p| p.image_id.as_str()).collect();
    let referenced: BTreeSet<&str> = references.iter().map(|r| r.image_id.as_str()).collect();
    let owned = |ids: Vec<&&str>| ids.into_iter().map(|s| s.to_string()).collect::<Vec<_>>();

    let mut report = JoinReport {
        predictions_missing_reference: owned(predicted.difference(&referenced).collect()),
        references_missing_prediction: owned(referenced.difference(&predicted).collect()),
        ..JoinReport::default()
    };
    if let Some(catalog) = catalog {
        let cataloged: BTreeSet<&str> = catalog.iter().map(|(id, _)| id).collect();
        report.predictions_missing_catalog = owned(predicted.difference(&cataloged).collect());
        report.catalog_missing_prediction = owned(cataloged.difference(&predicted).collect());
        let mut counts = LabelCounts::default();
        for id in &predicted {
            if let Some(label) = catalog.get(id) {
                counts.add(label);
            }
        }
        report.gender_distribution = Some(counts);
    }

    if strict && !report.is_clean() {
        let mut parts = Vec::new();
        let mut describe = |what: &str, ids: &[String]| {
            if !ids.is_empty() {
                parts.push(format!("{what}: {}", ids.join(", ")));
            }
        };
        describe("predictions without references", &report.predictions_missing_reference);
        describe("references without predictions", &report.references_missing_prediction);
        describe("predictions without catalog label", &report.predictions_missing_catalog);
        describe("catalog entries without predictions", &report.catalog_missing_prediction);
        return Err(FairlensError::JoinMismatch(parts.join("; ")));
    }
    Ok(report)
}
