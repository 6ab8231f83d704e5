//! Counterfactual vision-language bias from masked-token probability dumps.
//!
//! For a pair `s` and its counterfactual `s_c`, the per-gender term is the
//! shift in target probability divided by the shift in gender-word
//! probability. The target score averages the male-minus-female difference
//! over pairs; positive values lean male.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::VlBiasRecord;
use crate::error::{FairlensError, Result};
use crate::lexicon::Gender;

/// Smallest accepted |gender probability shift|.
pub const DEFAULT_DELTA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairBias {
    Value(f64),
    /// The gender probability barely moved; the ratio is not trusted.
    Skip,
}

impl PairBias {
    pub fn value(self) -> Option<f64> {
        match self {
            PairBias::Value(v) => Some(v),
            PairBias::Skip => None,
        }
    }
}

/// Target probability shift over the gender-`a` probability shift, or
/// [`PairBias::Skip`] when the latter is smaller than `delta` in magnitude.
pub fn pair_bias(rec: &VlBiasRecord, a: Gender, delta: f64) -> PairBias {
    let denominator = rec.p_a.get(a).delta();
    if denominator.abs() < delta {
        return PairBias::Skip;
    }
    PairBias::Value(rec.p_t.delta() / denominator)
}

/// Lowercased, trimmed target string used for grouping.
pub fn normalize_target(target: &str) -> String {
    target.trim().to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TargetBias {
    pub value: f64,
    pub usable_pairs: usize,
    pub skipped_pairs: usize,
}

/// Mean of `B_s(t, male) - B_s(t, female)` over the pairs where both terms
/// pass the denominator guard.
pub fn target_bias(records: &[&VlBiasRecord], delta: f64) -> Result<TargetBias> {
    check_delta(delta)?;
    let mut sum = 0.0;
    let mut usable = 0usize;
    let mut skipped = 0usize;
    for rec in records {
        match (
            pair_bias(rec, Gender::Male, delta).value(),
            pair_bias(rec, Gender::Female, delta).value(),
        ) {
            (Some(m), Some(f)) => {
                sum += m - f;
                usable += 1;
            }
            _ => skipped += 1,
        }
    }
    if usable == 0 {
        return Err(FairlensError::undefined(format!(
            "VL-Bias: all {skipped} pair(s) failed the denominator guard"
        )));
    }
    Ok(TargetBias {
        value: sum / usable as f64,
        usable_pairs: usable,
        skipped_pairs: skipped,
    })
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(FairlensError::InvalidArgument(format!(
            "delta must be positive, got {delta}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VlBiasResult {
    pub per_target: BTreeMap<String, f64>,
    /// Unweighted mean over targets with a defined score.
    pub dataset_bias: f64,
    pub skipped_pairs: BTreeMap<String, usize>,
    pub pair_counts: BTreeMap<String, usize>,
    /// Targets whose every pair was skipped.
    pub undefined_targets: Vec<String>,
    /// Mean over targets per record group tag, for tagged dumps.
    pub per_group: BTreeMap<String, f64>,
    pub delta: f64,
}

/// Per-target and dataset-level VL-Bias.
pub fn dataset_bias(records: &[VlBiasRecord], delta: f64) -> Result<VlBiasResult> {
    check_delta(delta)?;
    let mut by_target: BTreeMap<String, Vec<&VlBiasRecord>> = BTreeMap::new();
    let mut target_group: BTreeMap<String, String> = BTreeMap::new();
    for rec in records {
        let target = normalize_target(&rec.target);
        if let Some(group) = &rec.group {
            if let Some(previous) = target_group.insert(target.clone(), group.clone()) {
                if previous != *group {
                    return Err(FairlensError::InvalidArgument(format!(
                        "target `{target}` tagged with both `{previous}` and `{group}`"
                    )));
                }
            }
        }
        by_target.entry(target).or_default().push(rec);
    }

    let scored: Vec<(String, usize, Result<TargetBias>)> = by_target
        .par_iter()
        .map(|(t, recs)| (t.clone(), recs.len(), target_bias(recs, delta)))
        .collect();

    let mut per_target = BTreeMap::new();
    let mut skipped_pairs = BTreeMap::new();
    let mut pair_counts = BTreeMap::new();
    let mut undefined_targets = Vec::new();
    for (target, n, outcome) in scored {
        pair_counts.insert(target.clone(), n);
        match outcome {
            Ok(tb) => {
                skipped_pairs.insert(target.clone(), tb.skipped_pairs);
                per_target.insert(target, tb.value);
            }
            Err(e) if e.is_undefined_metric() => {
                skipped_pairs.insert(target.clone(), n);
                undefined_targets.push(target);
            }
            Err(e) => return Err(e),
        }
    }
    if per_target.is_empty() {
        return Err(FairlensError::undefined("VL-Bias: no target has a usable pair"));
    }
    let dataset_bias = per_target.values().sum::<f64>() / per_target.len() as f64;

    let mut grouped: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (target, value) in &per_target {
        if let Some(group) = target_group.get(target) {
            grouped.entry(group.as_str()).or_default().push(*value);
        }
    }
    let per_group = grouped
        .into_iter()
        .map(|(g, v)| (g.to_string(), v.iter().sum::<f64>() / v.len() as f64))
        .collect();

    Ok(VlBiasResult {
        per_target,
        dataset_bias,
        skipped_pairs,
        pair_counts,
        undefined_targets,
        per_group,
        delta,
    })
}
