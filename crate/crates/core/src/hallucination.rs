//! CHAIR object-hallucination scores over a hierarchical synonym vocabulary.
//!
//! Caption words are mapped to canonical objects by greedy longest-match
//! over 1-3 token phrases. Canonicals form a forest through `parents`
//! (`woman -> person`, `purse -> bag`). Mentioning a super-category of a
//! present object is accepted; mentioning a sibling is a hallucination.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use crate::corpus::{ObjectAnnotation, PredictionRecord};
use crate::error::{FairlensError, Result};
use crate::lexicon::tokenize;

/// Text of the bundled MSCOCO hierarchy.
pub const DEFAULT_HIERARCHY: &str = include_str!("../data/coco_hierarchy.json");

/// Longest surface form, in tokens.
pub const MAX_PHRASE_TOKENS: usize = 3;

/// Word-to-object map plus the child-to-parent relation between objects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynonymHierarchy {
    word_to_canonical: BTreeMap<String, String>,
    parent: BTreeMap<String, String>,
    canonicals: BTreeSet<String>,
    longest_phrase: usize,
}

/// JSON object read as an ordered list of pairs so duplicate keys survive
/// until validation.
struct PairList(Vec<(String, String)>);

impl<'de> Deserialize<'de> for PairList {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct PairVisitor;

        impl<'de> Visitor<'de> for PairVisitor {
            type Value = PairList;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object mapping strings to strings")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<PairList, A::Error> {
                let mut pairs = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    pairs.push((k, v));
                }
                Ok(PairList(pairs))
            }
        }

        deserializer.deserialize_map(PairVisitor)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HierarchyFile {
    synonyms: PairList,
    #[serde(default = "empty_pairs")]
    parents: PairList,
}

fn empty_pairs() -> PairList {
    PairList(Vec::new())
}

impl Default for SynonymHierarchy {
    /// MSCOCO objects with person and bag sub-categories.
    fn default() -> Self {
        Self::from_json(DEFAULT_HIERARCHY).expect("bundled hierarchy is valid")
    }
}

fn normalize_phrase(surface: &str) -> String {
    tokenize(surface).join(" ")
}

impl SynonymHierarchy {
    /// Builds and validates a hierarchy from `(surface, canonical)` and
    /// `(child, parent)` pairs.
    pub fn new<S, P>(synonyms: S, parents: P) -> Result<Self>
    where
        S: IntoIterator<Item = (String, String)>,
        P: IntoIterator<Item = (String, String)>,
    {
        let mut word_to_canonical: BTreeMap<String, String> = BTreeMap::new();
        let mut longest_phrase = 0;
        for (surface, canonical) in synonyms {
            let phrase = normalize_phrase(&surface);
            let n_tokens = phrase.split(' ').filter(|t| !t.is_empty()).count();
            if n_tokens == 0 || n_tokens > MAX_PHRASE_TOKENS {
                return Err(FairlensError::InvalidHierarchy(format!(
                    "surface form {surface:?} must have 1 to {MAX_PHRASE_TOKENS} tokens"
                )));
            }
            if canonical.trim().is_empty() {
                return Err(FairlensError::InvalidHierarchy(format!(
                    "surface form {surface:?} maps to an empty canonical"
                )));
            }
            longest_phrase = longest_phrase.max(n_tokens);
            if let Some(previous) = word_to_canonical.get(&phrase) {
                if *previous != canonical {
                    return Err(FairlensError::AmbiguousSurfaceForm {
                        surface: phrase,
                        first: previous.clone(),
                        second: canonical,
                    });
                }
            }
            word_to_canonical.insert(phrase, canonical);
        }

        let mut parent: BTreeMap<String, String> = BTreeMap::new();
        for (child, up) in parents {
            if let Some(previous) = parent.get(&child) {
                if *previous != up {
                    return Err(FairlensError::InvalidHierarchy(format!(
                        "`{child}` has two parents: `{previous}` and `{up}`"
                    )));
                }
            }
            parent.insert(child, up);
        }

        let canonicals: BTreeSet<String> = word_to_canonical
            .values()
            .chain(parent.keys())
            .cloned()
            .collect();
        for (child, up) in &parent {
            if !canonicals.contains(up) {
                return Err(FairlensError::InvalidHierarchy(format!(
                    "parent `{up}` of `{child}` is not a canonical object"
                )));
            }
        }

        let hierarchy = SynonymHierarchy {
            word_to_canonical,
            parent,
            canonicals,
            longest_phrase,
        };
        hierarchy.check_acyclic()?;
        Ok(hierarchy)
    }

    fn check_acyclic(&self) -> Result<()> {
        for start in self.parent.keys() {
            let mut chain = vec![start.clone()];
            let mut node = start;
            while let Some(up) = self.parent.get(node) {
                if let Some(pos) = chain.iter().position(|c| c == up) {
                    let mut cycle = chain[pos..].to_vec();
                    cycle.push(up.clone());
                    return Err(FairlensError::CyclicHierarchy(cycle));
                }
                chain.push(up.clone());
                node = up;
            }
        }
        Ok(())
    }

    /// Parses `{"synonyms": {...}, "parents": {...}}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: HierarchyFile = serde_json::from_str(text)
            .map_err(|e| FairlensError::InvalidHierarchy(e.to_string()))?;
        Self::new(file.synonyms.0, file.parents.0)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FairlensError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn canonicals(&self) -> &BTreeSet<String> {
        &self.canonicals
    }

    pub fn is_canonical(&self, object: &str) -> bool {
        self.canonicals.contains(object)
    }

    pub fn canonical_of(&self, surface: &str) -> Option<&str> {
        self.word_to_canonical
            .get(&normalize_phrase(surface))
            .map(String::as_str)
    }

    pub fn parent_of(&self, object: &str) -> Option<&str> {
        self.parent.get(object).map(String::as_str)
    }

    pub fn synonyms(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.word_to_canonical
            .iter()
            .map(|(s, c)| (s.as_str(), c.as_str()))
    }

    pub fn parents(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.parent.iter().map(|(c, p)| (c.as_str(), p.as_str()))
    }

    /// Strict ancestors of `object`, nearest first.
    pub fn ancestors(&self, object: &str) -> Vec<&str> {
        let mut out = Vec::new();
        let mut node = object;
        while let Some(up) = self.parent.get(node) {
            out.push(up.as_str());
            node = up;
        }
        out
    }

    pub fn is_strict_ancestor(&self, ancestor: &str, of: &str) -> bool {
        self.ancestors(of).contains(&ancestor)
    }

    /// Serializes back to the JSON file format.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "synonyms": self.word_to_canonical,
            "parents": self.parent,
        })
        .to_string()
    }
}

/// Canonical objects mentioned in a caption.
///
/// Greedy left-to-right longest match (3, 2, then 1 token); a matched
/// phrase consumes its tokens, so "teddy bear" never also yields "bear".
pub fn extract_objects(caption: &str, h: &SynonymHierarchy) -> BTreeSet<String> {
    let tokens = tokenize(caption);
    let mut found = BTreeSet::new();
    let mut i = 0;
    let mut phrase = String::new();
    'outer: while i < tokens.len() {
        let longest = h.longest_phrase.min(tokens.len() - i);
        for n in (1..=longest).rev() {
            phrase.clear();
            for (j, tok) in tokens[i..i + n].iter().enumerate() {
                if j > 0 {
                    phrase.push(' ');
                }
                phrase.push_str(tok);
            }
            if let Some(canonical) = h.word_to_canonical.get(&phrase) {
                found.insert(canonical.clone());
                i += n;
                continue 'outer;
            }
        }
        i += 1;
    }
    found
}

/// Ground-truth objects of one image: annotated canonicals united with the
/// objects extracted from each reference caption.
pub fn ground_truth_objects<S: AsRef<str>>(
    annotation: Option<&ObjectAnnotation>,
    references: &[S],
    h: &SynonymHierarchy,
) -> Result<BTreeSet<String>> {
    if annotation.is_none() && references.is_empty() {
        return Err(FairlensError::NoGroundTruth(String::new()));
    }
    let mut objects = BTreeSet::new();
    if let Some(annotation) = annotation {
        for object in &annotation.objects {
            if !h.is_canonical(object) {
                return Err(FairlensError::UnknownObject(object.clone()));
            }
            objects.insert(object.clone());
        }
    }
    for reference in references {
        objects.extend(extract_objects(reference.as_ref(), h));
    }
    Ok(objects)
}

/// How to treat a sub-category mentioned when only its super-category is
/// in the ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubCategoryRule {
    /// Unverifiable, hence hallucinated.
    #[default]
    Strict,
    /// Accepted.
    RelaxSub,
}

/// Whether `predicted` is a hallucination given ground truth `gt`.
///
/// Not hallucinated when `predicted` is in `gt` or is a strict ancestor of a
/// ground-truth object. Under [`SubCategoryRule::RelaxSub`] a strict
/// descendant of a ground-truth object is accepted too.
pub fn is_hallucinated(
    predicted: &str,
    gt: &BTreeSet<String>,
    h: &SynonymHierarchy,
    rule: SubCategoryRule,
) -> Result<bool> {
    if !h.is_canonical(predicted) {
        return Err(FairlensError::UnknownObject(predicted.to_string()));
    }
    if gt.contains(predicted) {
        return Ok(false);
    }
    if gt.iter().any(|g| h.is_strict_ancestor(predicted, g)) {
        return Ok(false);
    }
    if rule == SubCategoryRule::RelaxSub
        && h.ancestors(predicted).iter().any(|a| gt.contains(*a))
    {
        return Ok(false);
    }
    Ok(true)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ImageChair {
    pub mentioned: BTreeSet<String>,
    pub hallucinated: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChairResult {
    pub per_image: BTreeMap<String, ImageChair>,
    /// Hallucinated objects over mentioned objects; `None` when no caption
    /// mentions an object.
    pub chair_i: Option<f64>,
    /// Captions with a hallucination over all captions.
    pub chair_s: f64,
    pub n_objects: usize,
    pub n_hallucinated_objects: usize,
    pub n_captions: usize,
    pub n_hallucinated_captions: usize,
    pub rule: SubCategoryRule,
}

impl ChairResult {
    pub fn chair_i(&self) -> Result<f64> {
        self.chair_i
            .ok_or_else(|| FairlensError::undefined("CHAIRi: captions mention no objects"))
    }

    /// Hallucinated object sets keyed by image id.
    pub fn hallucinations(&self) -> BTreeMap<String, BTreeSet<String>> {
        self.per_image
            .iter()
            .map(|(id, img)| (id.clone(), img.hallucinated.clone()))
            .collect()
    }
}

/// Incremental CHAIR counts, fed one evaluated image at a time.
#[derive(Debug, Clone, Default)]
pub struct ChairTally {
    pub n_objects: usize,
    pub n_hallucinated_objects: usize,
    pub n_captions: usize,
    pub n_hallucinated_captions: usize,
}

impl ChairTally {
    pub fn add(&mut self, image: &ImageChair) {
        self.n_captions += 1;
        self.n_objects += image.mentioned.len();
        self.n_hallucinated_objects += image.hallucinated.len();
        if !image.hallucinated.is_empty() {
            self.n_hallucinated_captions += 1;
        }
    }

    pub fn chair_i(&self) -> Option<f64> {
        (self.n_objects > 0).then(|| self.n_hallucinated_objects as f64 / self.n_objects as f64)
    }

    pub fn chair_s(&self) -> Result<f64> {
        if self.n_captions == 0 {
            return Err(FairlensError::undefined("CHAIRs: no captions"));
        }
        Ok(self.n_hallucinated_captions as f64 / self.n_captions as f64)
    }
}

/// Mentioned and hallucinated objects of one caption.
pub fn evaluate_caption(
    caption: &str,
    gt: &BTreeSet<String>,
    h: &SynonymHierarchy,
    rule: SubCategoryRule,
) -> Result<ImageChair> {
    let mentioned = extract_objects(caption, h);
    let mut hallucinated = BTreeSet::new();
    for object in &mentioned {
        if is_hallucinated(object, gt, h, rule)? {
            hallucinated.insert(object.clone());
        }
    }
    Ok(ImageChair {
        mentioned,
        hallucinated,
    })
}

/// CHAIRi and CHAIRs over generated captions joined to ground-truth sets.
pub fn chair(
    predictions: &[PredictionRecord],
    ground_truths: &BTreeMap<String, BTreeSet<String>>,
    h: &SynonymHierarchy,
    rule: SubCategoryRule,
) -> Result<ChairResult> {
    let evaluated: Vec<Result<(String, ImageChair)>> = predictions
        .par_iter()
        .map(|p| {
            let gt = ground_truths.get(&p.image_id).ok_or_else(|| {
                FairlensError::JoinMismatch(format!("no ground truth for image `{}`", p.image_id))
            })?;
            Ok((p.image_id.clone(), evaluate_caption(&p.caption, gt, h, rule)?))
        })
        .collect();

    let mut per_image = BTreeMap::new();
    let mut tally = ChairTally::default();
    for item in evaluated {
        let (id, image) = item?;
        tally.add(&image);
        if per_image.insert(id.clone(), image).is_some() {
            return Err(FairlensError::JoinMismatch(format!(
                "image `{id}` has more than one prediction"
            )));
        }
    }
    Ok(ChairResult {
        chair_i: tally.chair_i(),
        chair_s: tally.chair_s()?,
        per_image,
        n_objects: tally.n_objects,
        n_hallucinated_objects: tally.n_hallucinated_objects,
        n_captions: tally.n_captions,
        n_hallucinated_captions: tally.n_hallucinated_captions,
        rule,
    })
}
