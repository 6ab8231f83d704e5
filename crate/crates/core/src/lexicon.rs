//! Gender word lists and everything that reads gender off raw text.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{GenderCatalog, PredictionRecord};
use crate::error::{FairlensError, Result};

/// Token substituted for every gender word by [`mask_gender`].
pub const GENDER_SENTINEL: &str = "[GENDER]";

/// Text of the bundled gender word list.
pub const DEFAULT_LEXICON: &str = include_str!("../data/gender_words.txt");

/// A binary gender attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const BOTH: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn other(self) -> Gender {
        match self {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Gender label of a caption or image. `Neutral` absorbs every ambiguous case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderLabel {
    Male,
    Female,
    Neutral,
}

impl GenderLabel {
    pub fn gender(self) -> Option<Gender> {
        match self {
            GenderLabel::Male => Some(Gender::Male),
            GenderLabel::Female => Some(Gender::Female),
            GenderLabel::Neutral => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GenderLabel::Male => "male",
            GenderLabel::Female => "female",
            GenderLabel::Neutral => "neutral",
        }
    }

    /// Label implied by whether any male and any female word was seen.
    pub fn from_presence(male: bool, female: bool) -> GenderLabel {
        match (male, female) {
            (true, false) => GenderLabel::Male,
            (false, true) => GenderLabel::Female,
            _ => GenderLabel::Neutral,
        }
    }
}

impl From<Gender> for GenderLabel {
    fn from(g: Gender) -> Self {
        match g {
            Gender::Male => GenderLabel::Male,
            Gender::Female => GenderLabel::Female,
        }
    }
}

impl fmt::Display for GenderLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Disjoint sets of lowercase female and male words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenderLexicon {
    female_words: BTreeSet<String>,
    male_words: BTreeSet<String>,
    match_plurals: bool,
}

impl Default for GenderLexicon {
    /// The bundled 44-word list.
    fn default() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

impl GenderLexicon {
    pub fn new<F, M>(female: F, male: M) -> Result<Self>
    where
        F: IntoIterator,
        F::Item: Into<String>,
        M: IntoIterator,
        M::Item: Into<String>,
    {
        let female_words: BTreeSet<String> = female.into_iter().map(Into::into).collect();
        let male_words: BTreeSet<String> = male.into_iter().map(Into::into).collect();
        for word in female_words.iter().chain(&male_words) {
            if word.is_empty()
                || word.chars().any(char::is_whitespace)
                || word.chars().any(char::is_uppercase)
            {
                return Err(FairlensError::InvalidLexicon(format!(
                    "entry {word:?} must be a single lowercase token"
                )));
            }
        }
        if female_words.is_empty() || male_words.is_empty() {
            return Err(FairlensError::InvalidLexicon(
                "both [female] and [male] lists must be non-empty".into(),
            ));
        }
        let overlap: Vec<String> = female_words.intersection(&male_words).cloned().collect();
        if !overlap.is_empty() {
            return Err(FairlensError::OverlappingLexicon(overlap));
        }
        Ok(GenderLexicon {
            female_words,
            male_words,
            match_plurals: false,
        })
    }

    /// Parses the sectioned text format: `[female]` and `[male]` headers,
    /// one word per line, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut female = Vec::new();
        let mut male = Vec::new();
        let mut section: Option<Gender> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "[female]" => section = Some(Gender::Female),
                "[male]" => section = Some(Gender::Male),
                _ if line.starts_with('[') => {
                    return Err(FairlensError::InvalidLexicon(format!(
                        "line {}: unknown section {line}",
                        idx + 1
                    )))
                }
                word => match section {
                    Some(Gender::Female) => female.push(word.to_string()),
                    Some(Gender::Male) => male.push(word.to_string()),
                    None => {
                        return Err(FairlensError::InvalidLexicon(format!(
                            "line {}: word {word:?} outside a section",
                            idx + 1
                        )))
                    }
                },
            }
        }
        Self::new(female, male)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FairlensError::io(path, e))?;
        Self::parse(&text)
    }

    /// Also match `word+s` / `word+es` for listed words. Off by default.
    pub fn with_plurals(mut self, enabled: bool) -> Self {
        self.match_plurals = enabled;
        self
    }

    pub fn female_words(&self) -> &BTreeSet<String> {
        &self.female_words
    }

    pub fn male_words(&self) -> &BTreeSet<String> {
        &self.male_words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.female_words.contains(word) || self.male_words.contains(word)
    }

    fn lookup(&self, token: &str) -> Option<Gender> {
        if self.male_words.contains(token) {
            Some(Gender::Male)
        } else if self.female_words.contains(token) {
            Some(Gender::Female)
        } else {
            None
        }
    }

    /// Gender of a single (already tokenized) word, if it is a gender word.
    pub fn gender_of(&self, token: &str) -> Option<Gender> {
        if let Some(g) = self.lookup(token) {
            return Some(g);
        }
        if self.match_plurals {
            for suffix in ["s", "es"] {
                if let Some(stem) = token.strip_suffix(suffix) {
                    if let Some(g) = self.lookup(stem) {
                        return Some(g);
                    }
                }
            }
        }
        None
    }

    /// Label of an already tokenized caption.
    pub fn label_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> GenderLabel {
        let (male, female) = self.presence(tokens.iter().map(AsRef::as_ref));
        GenderLabel::from_presence(male, female)
    }

    fn presence<'t>(&self, tokens: impl Iterator<Item = &'t str>) -> (bool, bool) {
        let mut male = false;
        let mut female = false;
        for token in tokens {
            match self.gender_of(token) {
                Some(Gender::Male) => male = true,
                Some(Gender::Female) => female = true,
                None => {}
            }
            if male && female {
                break;
            }
        }
        (male, female)
    }
}

/// Splits text into lowercase tokens.
///
/// Any character that is not alphanumeric separates tokens; apostrophes
/// separate too, so `she'd` yields `she`, `d`. The literal `[GENDER]`
/// sentinel survives as one token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if rest.starts_with(GENDER_SENTINEL) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(GENDER_SENTINEL.to_string());
            rest = &rest[GENDER_SENTINEL.len()..];
            continue;
        }
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        rest = &rest[c.len_utf8()..];
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub fn caption_gender(caption: &str, lex: &GenderLexicon) -> GenderLabel {
    lex.label_tokens(&tokenize(caption))
}

/// Image label from its reference captions: male (female) when some caption
/// has a male (female) word and none has a female (male) word.
pub fn image_gender<S: AsRef<str>>(reference_captions: &[S], lex: &GenderLexicon) -> Result<GenderLabel> {
    if reference_captions.is_empty() {
        return Err(FairlensError::EmptyReferences);
    }
    let mut male = false;
    let mut female = false;
    for caption in reference_captions {
        let tokens = tokenize(caption.as_ref());
        let (m, f) = lex.presence(tokens.iter().map(String::as_str));
        male |= m;
        female |= f;
    }
    Ok(GenderLabel::from_presence(male, female))
}

/// A caption with every gender word replaced by [`GENDER_SENTINEL`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedCaption {
    pub tokens: Vec<String>,
    pub source_gender: GenderLabel,
}

impl MaskedCaption {
    /// Tokens joined by single spaces.
    pub fn rendered(&self) -> String {
        self.tokens.join(" ")
    }
}

pub fn mask_gender(caption: &str, lex: &GenderLexicon) -> MaskedCaption {
    let mut tokens = tokenize(caption);
    let mut male = false;
    let mut female = false;
    for token in tokens.iter_mut() {
        if let Some(g) = lex.gender_of(token) {
            match g {
                Gender::Male => male = true,
                Gender::Female => female = true,
            }
            *token = GENDER_SENTINEL.to_string();
        }
    }
    MaskedCaption {
        tokens,
        source_gender: GenderLabel::from_presence(male, female),
    }
}

/// Running counts behind the Error metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ErrorTally {
    /// Predictions whose caption gender contradicts a gendered gold label.
    pub errors: usize,
    /// Predictions whose gold label is male or female.
    pub gendered: usize,
    /// Gendered-gold predictions whose caption was labeled neutral.
    pub neutral_predictions: usize,
    /// Predictions on neutral-gold images (outside the denominator).
    pub neutral_gold: usize,
}

impl ErrorTally {
    pub fn add(&mut self, predicted: GenderLabel, gold: GenderLabel) {
        let Some(gold) = gold.gender() else {
            self.neutral_gold += 1;
            return;
        };
        self.gendered += 1;
        match predicted.gender() {
            Some(p) if p != gold => self.errors += 1,
            Some(_) => {}
            None => self.neutral_predictions += 1,
        }
    }

    pub fn rate(&self) -> Result<f64> {
        if self.gendered == 0 {
            return Err(FairlensError::undefined(
                "Error: no prediction has a male or female gold label",
            ));
        }
        Ok(self.errors as f64 / self.gendered as f64)
    }
}

/// Tallies gender misclassifications of generated captions against gold labels.
pub fn error_tally(
    predictions: &[PredictionRecord],
    gold: &GenderCatalog,
    lex: &GenderLexicon,
) -> Result<ErrorTally> {
    let mut tally = ErrorTally::default();
    for p in predictions {
        let gold_label = gold
            .get(&p.image_id)
            .ok_or_else(|| FairlensError::MissingGoldLabel(p.image_id.clone()))?;
        tally.add(caption_gender(&p.caption, lex), gold_label);
    }
    Ok(tally)
}

/// Fraction of gendered-gold predictions whose caption names the other gender.
/// Neutral captions never count as errors.
pub fn error_rate(
    predictions: &[PredictionRecord],
    gold: &GenderCatalog,
    lex: &GenderLexicon,
) -> Result<f64> {
    error_tally(predictions, gold, lex)?.rate()
}

/// Fraction of texts that contain at least one gender word.
pub fn gender_mention_rate<S: AsRef<str>>(texts: &[S], lex: &GenderLexicon) -> Result<f64> {
    if texts.is_empty() {
        return Err(FairlensError::undefined("gender mention rate of an empty corpus"));
    }
    let gendered = texts
        .iter()
        .filter(|t| tokenize(t.as_ref()).iter().any(|tok| lex.gender_of(tok).is_some()))
        .count();
    Ok(gendered as f64 / texts.len() as f64)
}
