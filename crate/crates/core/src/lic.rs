//! Leakage of gender through caption context.
//!
//! Two gender classifiers are fitted: one on gender-masked reference
//! captions, one on gender-masked generated captions. Each is scored by its
//! confidence-weighted accuracy on held-out captions; the score gap tells
//! whether generated text leaks more gender than the reference text does.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{FairlensError, Result};
use crate::lexicon::{Gender, MaskedCaption};
use crate::rng;

pub const SPLIT_STREAM: &str = "lic.split";
pub const DOWNSAMPLE_STREAM: &str = "lic.downsample";

pub const DEFAULT_SMOOTHING: f64 = 1.0;
pub const DEFAULT_EVAL_FRACTION: f64 = 0.2;

fn class_index(g: Gender) -> usize {
    match g {
        Gender::Male => 0,
        Gender::Female => 1,
    }
}

/// Output of a gender classifier on one caption.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub label: Gender,
    /// Posterior probability of `label`.
    pub confidence: f64,
    /// Posteriors were exactly equal; `label` fell back to female.
    pub tie: bool,
}

/// Anything that predicts a binary gender from masked caption tokens.
pub trait GenderClassifier {
    fn classify_tokens(&self, tokens: &[String]) -> Classification;
}

/// Fits a [`GenderClassifier`] from labeled masked captions.
pub trait ClassifierTrainer {
    type Model: GenderClassifier;

    fn train(&self, captions: &[&MaskedCaption], seed: u64) -> Result<Self::Model>;
}

/// Multinomial bag-of-tokens model with additive smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub vocabulary: BTreeMap<String, usize>,
    /// Indexed male, female.
    pub class_log_priors: [f64; 2],
    /// Per class, per vocabulary index.
    pub token_log_likelihoods: [Vec<f64>; 2],
    pub smoothing: f64,
}

impl ClassifierModel {
    pub fn log_prior(&self, g: Gender) -> f64 {
        self.class_log_priors[class_index(g)]
    }

    pub fn log_likelihood(&self, g: Gender, token: &str) -> Option<f64> {
        self.vocabulary
            .get(token)
            .map(|&i| self.token_log_likelihoods[class_index(g)][i])
    }
}

impl GenderClassifier for ClassifierModel {
    fn classify_tokens(&self, tokens: &[String]) -> Classification {
        let mut joint = self.class_log_priors;
        for token in tokens {
            if let Some(&i) = self.vocabulary.get(token) {
                joint[0] += self.token_log_likelihoods[0][i];
                joint[1] += self.token_log_likelihoods[1][i];
            }
        }
        let diff = joint[0] - joint[1];
        let p_male = if diff >= 0.0 {
            1.0 / (1.0 + (-diff).exp())
        } else {
            let e = diff.exp();
            e / (1.0 + e)
        };
        if diff > 0.0 {
            Classification {
                label: Gender::Male,
                confidence: p_male,
                tie: false,
            }
        } else {
            Classification {
                label: Gender::Female,
                confidence: 1.0 - p_male,
                tie: diff == 0.0,
            }
        }
    }
}

pub fn classify(model: &ClassifierModel, caption: &MaskedCaption) -> Classification {
    model.classify_tokens(&caption.tokens)
}

/// Indices of the captions kept after balancing both genders to the
/// minority count. The majority class is subsampled with `rng`.
fn balanced_indices(labels: &[Gender], rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, g) in labels.iter().enumerate() {
        by_class[class_index(*g)].push(i);
    }
    let keep = by_class[0].len().min(by_class[1].len());
    let mut selected = Vec::with_capacity(2 * keep);
    for idx in by_class.iter_mut() {
        if idx.len() > keep {
            idx.shuffle(rng);
            idx.truncate(keep);
        }
        selected.extend_from_slice(idx);
    }
    selected.sort_unstable();
    selected
}

fn binary_labels(captions: &[&MaskedCaption]) -> Vec<Option<Gender>> {
    captions.iter().map(|c| c.source_gender.gender()).collect()
}

/// Fits the smoothed multinomial model.
///
/// Neutral captions are ignored. The majority gender is downsampled to the
/// minority count with the `lic.downsample` stream of `seed` before counting.
pub fn train_classifier(masked: &[MaskedCaption], seed: u64, smoothing: f64) -> Result<ClassifierModel> {
    let refs: Vec<&MaskedCaption> = masked.iter().collect();
    NaiveBayesTrainer { smoothing }.train(&refs, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveBayesTrainer {
    pub smoothing: f64,
}

impl Default for NaiveBayesTrainer {
    fn default() -> Self {
        NaiveBayesTrainer {
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

impl ClassifierTrainer for NaiveBayesTrainer {
    type Model = ClassifierModel;

    fn train(&self, captions: &[&MaskedCaption], seed: u64) -> Result<ClassifierModel> {
        if !(self.smoothing > 0.0 && self.smoothing.is_finite()) {
            return Err(FairlensError::InvalidArgument(format!(
                "smoothing must be positive, got {}",
                self.smoothing
            )));
        }
        let gendered: Vec<(&MaskedCaption, Gender)> = captions
            .iter()
            .zip(binary_labels(captions))
            .filter_map(|(c, g)| g.map(|g| (*c, g)))
            .collect();
        let labels: Vec<Gender> = gendered.iter().map(|(_, g)| *g).collect();
        let has = |g: Gender| labels.contains(&g);
        match (has(Gender::Male), has(Gender::Female)) {
            (true, true) => {}
            (true, false) => return Err(FairlensError::DegenerateTraining("male".into())),
            (false, true) => return Err(FairlensError::DegenerateTraining("female".into())),
            (false, false) => return Err(FairlensError::DegenerateTraining("neither gender".into())),
        }

        let mut rng = rng::stream(seed, DOWNSAMPLE_STREAM);
        let selected = balanced_indices(&labels, &mut rng);

        let mut vocabulary = BTreeMap::new();
        for &i in &selected {
            for token in &gendered[i].0.tokens {
                let next = vocabulary.len();
                vocabulary.entry(token.clone()).or_insert(next);
            }
        }
        // Re-index in sorted token order so the model does not depend on
        // caption order.
        for (i, idx) in vocabulary.values_mut().enumerate() {
            *idx = i;
        }

        let v = vocabulary.len();
        let mut counts = [vec![0u64; v], vec![0u64; v]];
        let mut totals = [0u64; 2];
        let mut docs = [0u64; 2];
        for &i in &selected {
            let (caption, g) = gendered[i];
            let c = class_index(g);
            docs[c] += 1;
            for token in &caption.tokens {
                counts[c][vocabulary[token]] += 1;
                totals[c] += 1;
            }
        }

        let n_docs = (docs[0] + docs[1]) as f64;
        let class_log_priors = [
            (docs[0] as f64 / n_docs).ln(),
            (docs[1] as f64 / n_docs).ln(),
        ];
        let alpha = self.smoothing;
        let likelihoods = |c: usize| -> Vec<f64> {
            let denom = totals[c] as f64 + alpha * v as f64;
            counts[c]
                .iter()
                .map(|&n| ((n as f64 + alpha) / denom).ln())
                .collect()
        };
        Ok(ClassifierModel {
            token_log_likelihoods: [likelihoods(0), likelihoods(1)],
            vocabulary,
            class_log_priors,
            smoothing: alpha,
        })
    }
}

/// Train/eval partition of one corpus, as indices into the input slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Splits the gendered captions of a corpus per gender so that roughly
/// `eval_fraction` of each gender is held out. Neutral captions appear in
/// neither part.
pub fn stratified_split(corpus: &[MaskedCaption], seed: u64, eval_fraction: f64) -> Result<Partition> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(FairlensError::InvalidArgument(format!(
            "eval fraction must lie in (0, 1), got {eval_fraction}"
        )));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, c) in corpus.iter().enumerate() {
        if let Some(g) = c.source_gender.gender() {
            by_class[class_index(g)].push(i);
        }
    }
    for (g, idx) in Gender::BOTH.iter().zip(&by_class) {
        if idx.len() < 2 {
            return Err(FairlensError::TooSmallToStratify(format!(
                "{} {g} caption(s); at least 2 per gender are needed",
                idx.len()
            )));
        }
    }
    let mut rng = rng::stream(seed, SPLIT_STREAM);
    let mut partition = Partition {
        train: Vec::new(),
        eval: Vec::new(),
    };
    for idx in by_class.iter_mut() {
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_eval = ((eval_fraction * n as f64).round() as usize).clamp(1, n - 1);
        partition.eval.extend_from_slice(&idx[..n_eval]);
        partition.train.extend_from_slice(&idx[n_eval..]);
    }
    partition.train.sort_unstable();
    partition.eval.sort_unstable();
    Ok(partition)
}

/// Mean of `confidence · 1[predicted = true gender]` over `captions`, plus
/// the number of tie-broken predictions.
pub fn confidence_weighted_accuracy<M: GenderClassifier>(
    model: &M,
    captions: &[&MaskedCaption],
) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut ties = 0usize;
    for caption in captions {
        let Some(truth) = caption.source_gender.gender() else {
            continue;
        };
        let out = model.classify_tokens(&caption.tokens);
        if out.tie {
            ties += 1;
        }
        if out.label == truth {
            sum += out.confidence;
        }
        n += 1;
    }
    if n == 0 {
        return (0.0, ties);
    }
    (sum / n as f64, ties)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LicConfig {
    pub seed: u64,
    pub eval_fraction: f64,
    pub smoothing: f64,
}

impl Default for LicConfig {
    fn default() -> Self {
        LicConfig {
            seed: 0,
            eval_fraction: DEFAULT_EVAL_FRACTION,
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LicResult {
    /// Confidence-weighted accuracy on held-out reference captions.
    pub lic_d: f64,
    /// Same, on held-out generated captions.
    pub lic_m: f64,
    /// `lic_m - lic_d`; positive means the model leaks more gender.
    pub lic: f64,
    pub n_train_d: usize,
    pub n_train_m: usize,
    pub n_eval_d: usize,
    pub n_eval_m: usize,
    pub ties_d: usize,
    pub ties_m: usize,
    pub seed: u64,
    pub eval_fraction: f64,
    pub smoothing: f64,
}

struct SideScore {
    score: f64,
    n_train: usize,
    n_eval: usize,
    ties: usize,
}

fn score_side<T: ClassifierTrainer>(
    trainer: &T,
    corpus: &[MaskedCaption],
    seed: u64,
    eval_fraction: f64,
) -> Result<SideScore> {
    let partition = stratified_split(corpus, seed, eval_fraction)?;
    let train: Vec<&MaskedCaption> = partition.train.iter().map(|&i| &corpus[i]).collect();
    let eval: Vec<&MaskedCaption> = partition.eval.iter().map(|&i| &corpus[i]).collect();
    let model = trainer.train(&train, seed)?;
    let (score, ties) = confidence_weighted_accuracy(&model, &eval);
    Ok(SideScore {
        score,
        n_train: train.len(),
        n_eval: eval.len(),
        ties,
    })
}

/// Leakage score with the bundled multinomial classifier.
///
/// Both corpora go through the same seed derivation, so swapping them
/// negates the score exactly.
pub fn lic_score(
    ground_truth: &[MaskedCaption],
    generated: &[MaskedCaption],
    config: &LicConfig,
) -> Result<LicResult> {
    let trainer = NaiveBayesTrainer {
        smoothing: config.smoothing,
    };
    lic_score_with(&trainer, ground_truth, generated, config)
}

/// Leakage score with a caller-supplied classifier family.
pub fn lic_score_with<T: ClassifierTrainer>(
    trainer: &T,
    ground_truth: &[MaskedCaption],
    generated: &[MaskedCaption],
    config: &LicConfig,
) -> Result<LicResult> {
    let d = score_side(trainer, ground_truth, config.seed, config.eval_fraction)?;
    let m = score_side(trainer, generated, config.seed, config.eval_fraction)?;
    Ok(LicResult {
        lic_d: d.score,
        lic_m: m.score,
        lic: m.score - d.score,
        n_train_d: d.n_train,
        n_train_m: m.n_train,
        n_eval_d: d.n_eval,
        n_eval_m: m.n_eval,
        ties_d: d.ties,
        ties_m: m.ties,
        seed: config.seed,
        eval_fraction: config.eval_fraction,
        smoothing: config.smoothing,
    })
}
