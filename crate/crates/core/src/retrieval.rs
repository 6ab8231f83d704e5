//! Ranking-level gender metrics: Bias@K, MaxSkew@K, NDKL and Recall@K, plus
//! pronoun-resolution accuracy gaps.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{GenderCatalog, RankedRetrieval, ResolutionInstance, Scenario};
use crate::error::{FairlensError, Result};
use crate::lexicon::{Gender, GenderLabel};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// How neutral images enter Skew and NDKL proportions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeutralHandling {
    /// Proportions are taken over gendered images only.
    #[default]
    Exclude,
    /// Neutral images are a third category holding probability mass.
    AsMass,
}

/// Target proportion of each gender among retrieved images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesiredDistribution {
    pub male: f64,
    pub female: f64,
}

impl DesiredDistribution {
    pub const UNIFORM: DesiredDistribution = DesiredDistribution {
        male: 0.5,
        female: 0.5,
    };

    pub fn new(male: f64, female: f64) -> Result<Self> {
        let d = DesiredDistribution { male, female };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.male >= 0.0 && self.female >= 0.0) {
            return Err(FairlensError::InvalidDesired("proportions must be non-negative".into()));
        }
        if (self.male + self.female - 1.0).abs() > 1e-9 {
            return Err(FairlensError::InvalidDesired(format!(
                "proportions sum to {}, not 1",
                self.male + self.female
            )));
        }
        Ok(())
    }

    pub fn get(&self, g: Gender) -> f64 {
        match g {
            Gender::Male => self.male,
            Gender::Female => self.female,
        }
    }

    /// Gender proportions among the gendered images of a candidate pool.
    pub fn from_candidates(candidates: &[String], catalog: &GenderCatalog) -> Result<Self> {
        let counts = PrefixCounts::over(candidates, catalog, candidates.len())?;
        let gendered = counts.male + counts.female;
        if gendered == 0 {
            return Err(FairlensError::undefined(
                "desired distribution: candidate pool has no gendered image",
            ));
        }
        Ok(DesiredDistribution {
            male: counts.male as f64 / gendered as f64,
            female: counts.female as f64 / gendered as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct PrefixCounts {
    male: usize,
    female: usize,
    neutral: usize,
}

impl PrefixCounts {
    fn add(&mut self, label: GenderLabel) {
        match label {
            GenderLabel::Male => self.male += 1,
            GenderLabel::Female => self.female += 1,
            GenderLabel::Neutral => self.neutral += 1,
        }
    }

    fn over(ranking: &[String], catalog: &GenderCatalog, k: usize) -> Result<Self> {
        let mut counts = PrefixCounts::default();
        for id in ranking.iter().take(k) {
            counts.add(catalog.label(id)?);
        }
        Ok(counts)
    }

    fn get(&self, g: Gender) -> usize {
        match g {
            Gender::Male => self.male,
            Gender::Female => self.female,
        }
    }

    fn mass(&self, neutral: NeutralHandling) -> usize {
        match neutral {
            NeutralHandling::Exclude => self.male + self.female,
            NeutralHandling::AsMass => self.male + self.female + self.neutral,
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(FairlensError::InvalidArgument("k must be at least 1".into()));
    }
    Ok(())
}

/// `(N_m - N_f) / (N_m + N_f)` over the top `k`; 0 when the prefix holds
/// no gendered image. `k` beyond the ranking length uses the whole list.
pub fn bias_at_k(r: &RankedRetrieval, catalog: &GenderCatalog, k: usize) -> Result<f64> {
    check_k(k)?;
    let c = PrefixCounts::over(&r.ranking, catalog, k)?;
    let gendered = c.male + c.female;
    if gendered == 0 {
        return Ok(0.0);
    }
    Ok((c.male as f64 - c.female as f64) / gendered as f64)
}

/// Largest log-ratio of actual to desired gender proportion in the top `k`.
///
/// Genders with desired proportion 0 are skipped. A gender absent from the
/// prefix has skew `-inf`; if every considered gender is absent the metric
/// is undefined.
pub fn max_skew_at_k(
    r: &RankedRetrieval,
    catalog: &GenderCatalog,
    desired: &DesiredDistribution,
    k: usize,
    neutral: NeutralHandling,
) -> Result<f64> {
    check_k(k)?;
    desired.validate()?;
    let c = PrefixCounts::over(&r.ranking, catalog, k)?;
    let mass = c.mass(neutral);
    let mut best = f64::NEG_INFINITY;
    for g in Gender::BOTH {
        let want = desired.get(g);
        if want == 0.0 || mass == 0 {
            continue;
        }
        let actual = c.get(g) as f64 / mass as f64;
        let skew = if actual == 0.0 {
            f64::NEG_INFINITY
        } else {
            (actual / want).ln()
        };
        best = best.max(skew);
    }
    if best == f64::NEG_INFINITY {
        return Err(FairlensError::undefined(format!(
            "MaxSkew@{k} for query `{}`: no considered gender in the top {k}",
            r.query_id
        )));
    }
    Ok(best)
}

fn smooth(values: &[f64], epsilon: f64) -> Vec<f64> {
    let total: f64 = values.iter().sum::<f64>() + epsilon * values.len() as f64;
    values.iter().map(|v| (v + epsilon) / total).collect()
}

/// KL divergence in nats.
fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi == 0.0 { 0.0 } else { pi * (pi / qi).ln() })
        .sum()
}

/// Normalized discounted KL divergence between each prefix's gender
/// distribution and the desired one, in nats.
///
/// Both distributions get `epsilon` added to every category and are
/// renormalized before the divergence is taken.
pub fn ndkl(
    r: &RankedRetrieval,
    catalog: &GenderCatalog,
    desired: &DesiredDistribution,
    epsilon: f64,
    neutral: NeutralHandling,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(FairlensError::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    desired.validate()?;
    if r.ranking.is_empty() {
        return Err(FairlensError::InvalidArgument(format!(
            "NDKL of query `{}`: empty ranking",
            r.query_id
        )));
    }
    let target = match neutral {
        NeutralHandling::Exclude => smooth(&[desired.male, desired.female], epsilon),
        NeutralHandling::AsMass => smooth(&[desired.male, desired.female, 0.0], epsilon),
    };
    let mut counts = PrefixCounts::default();
    let mut z = 0.0;
    let mut total = 0.0;
    for (i, id) in r.ranking.iter().enumerate() {
        counts.add(catalog.label(id)?);
        let discount = 1.0 / ((i + 2) as f64).log2();
        let actual = match neutral {
            NeutralHandling::Exclude => smooth(&[counts.male as f64, counts.female as f64], epsilon),
            NeutralHandling::AsMass => smooth(
                &[counts.male as f64, counts.female as f64, counts.neutral as f64],
                epsilon,
            ),
        };
        z += discount;
        total += discount * kl(&actual, &target);
    }
    Ok(total / z)
}

/// Whether any relevant image appears in the top `k`.
pub fn hit_at_k(r: &RankedRetrieval, k: usize) -> Result<bool> {
    check_k(k)?;
    if r.relevant.is_empty() {
        return Err(FairlensError::InvalidQuery(r.query_id.clone()));
    }
    Ok(r.ranking.iter().take(k).any(|id| r.relevant.contains(id)))
}

/// Fraction of queries with a relevant image in the top `k`.
pub fn recall_at_k(rankings: &[RankedRetrieval], k: usize) -> Result<f64> {
    if rankings.is_empty() {
        return Err(FairlensError::undefined("Recall@K over zero queries"));
    }
    let mut hits = 0usize;
    for r in rankings {
        if hit_at_k(r, k)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / rankings.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub sigma: f64,
    pub n: usize,
}

/// Mean and population standard deviation, summed in key order.
pub fn aggregate<K: Ord>(values: &BTreeMap<K, f64>) -> Result<Summary> {
    if values.is_empty() {
        return Err(FairlensError::undefined("aggregate over zero values"));
    }
    let n = values.len() as f64;
    let mean = values.values().sum::<f64>() / n;
    let var = values.values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Summary {
        mean,
        sigma: var.sqrt(),
        n: values.len(),
    })
}

/// Where the desired distribution of each query comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DesiredSource {
    Fixed(DesiredDistribution),
    /// Gender proportions of the query's own ranked candidate pool.
    FromCandidates,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    pub ks: Vec<usize>,
    pub epsilon: f64,
    pub desired: DesiredSource,
    pub neutral: NeutralHandling,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            ks: vec![1, 5, 10],
            epsilon: DEFAULT_EPSILON,
            desired: DesiredSource::Fixed(DesiredDistribution::UNIFORM),
            neutral: NeutralHandling::Exclude,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub bias: BTreeMap<usize, f64>,
    /// `None` where MaxSkew is undefined for this query.
    pub max_skew: BTreeMap<usize, Option<f64>>,
    pub ndkl: Option<f64>,
    /// Relevant image in the top k; empty when the query has no relevant set.
    pub hit: BTreeMap<usize, bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RetrievalAggregate {
    pub bias: BTreeMap<usize, Summary>,
    pub max_skew: BTreeMap<usize, Summary>,
    pub ndkl: Option<Summary>,
    /// Recall@K (mean of per-query hits).
    pub recall: BTreeMap<usize, Summary>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RetrievalMetrics {
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub aggregate: RetrievalAggregate,
    /// Queries shorter than some requested k, per k.
    pub truncated: BTreeMap<usize, usize>,
    /// Queries left out of MaxSkew averages, per k.
    pub undefined_max_skew: BTreeMap<usize, usize>,
    /// Queries without a desired distribution (from-candidates with no
    /// gendered candidate).
    pub undefined_desired: usize,
}

fn evaluate_query(
    r: &RankedRetrieval,
    catalog: &GenderCatalog,
    config: &RetrievalConfig,
) -> Result<QueryMetrics> {
    let desired = match config.desired {
        DesiredSource::Fixed(d) => Some(d),
        DesiredSource::FromCandidates => match DesiredDistribution::from_candidates(&r.ranking, catalog) {
            Ok(d) => Some(d),
            Err(e) if e.is_undefined_metric() => None,
            Err(e) => return Err(e),
        },
    };
    let mut q = QueryMetrics::default();
    for &k in &config.ks {
        q.bias.insert(k, bias_at_k(r, catalog, k)?);
        let skew = match &desired {
            Some(d) => match max_skew_at_k(r, catalog, d, k, config.neutral) {
                Ok(v) => Some(v),
                Err(e) if e.is_undefined_metric() => None,
                Err(e) => return Err(e),
            },
            None => None,
        };
        q.max_skew.insert(k, skew);
        if !r.relevant.is_empty() {
            q.hit.insert(k, hit_at_k(r, k)?);
        }
    }
    if let Some(d) = &desired {
        if !r.ranking.is_empty() {
            q.ndkl = Some(ndkl(r, catalog, d, config.epsilon, config.neutral)?);
        }
    }
    Ok(q)
}

/// Every ranking metric for every query, with mean and sigma per metric.
///
/// Recall is computed only when every query has a relevant set; a mix of
/// queries with and without one is an `InvalidQuery` error.
pub fn evaluate_rankings(
    rankings: &[RankedRetrieval],
    catalog: &GenderCatalog,
    config: &RetrievalConfig,
) -> Result<RetrievalMetrics> {
    if config.ks.is_empty() {
        return Err(FairlensError::InvalidArgument("no k requested".into()));
    }
    for &k in &config.ks {
        check_k(k)?;
    }
    if let DesiredSource::Fixed(d) = &config.desired {
        d.validate()?;
    }
    let with_relevant = rankings.iter().filter(|r| !r.relevant.is_empty()).count();
    if with_relevant != 0 && with_relevant != rankings.len() {
        let missing = rankings.iter().find(|r| r.relevant.is_empty()).unwrap();
        return Err(FairlensError::InvalidQuery(missing.query_id.clone()));
    }

    let evaluated: Vec<Result<(String, QueryMetrics)>> = rankings
        .par_iter()
        .map(|r| Ok((r.query_id.clone(), evaluate_query(r, catalog, config)?)))
        .collect();
    let mut out = RetrievalMetrics::default();
    for item in evaluated {
        let (id, q) = item?;
        out.per_query.insert(id, q);
    }

    for r in rankings {
        for &k in &config.ks {
            if k > r.ranking.len() {
                *out.truncated.entry(k).or_insert(0) += 1;
            }
        }
    }

    for &k in &config.ks {
        let collect = |f: &dyn Fn(&QueryMetrics) -> Option<f64>| -> BTreeMap<&str, f64> {
            out.per_query
                .iter()
                .filter_map(|(id, q)| f(q).map(|v| (id.as_str(), v)))
                .collect()
        };
        let bias = collect(&|q| q.bias.get(&k).copied());
        let skew = collect(&|q| q.max_skew.get(&k).copied().flatten());
        let hits = collect(&|q| q.hit.get(&k).map(|h| if *h { 1.0 } else { 0.0 }));
        let undefined = out.per_query.len() - skew.len();
        if let Ok(s) = aggregate(&bias) {
            out.aggregate.bias.insert(k, s);
        }
        if let Ok(s) = aggregate(&skew) {
            out.aggregate.max_skew.insert(k, s);
        }
        if let Ok(s) = aggregate(&hits) {
            out.aggregate.recall.insert(k, s);
        }
        out.undefined_max_skew.insert(k, undefined);
    }
    let ndkls: BTreeMap<&str, f64> = out
        .per_query
        .iter()
        .filter_map(|(id, q)| q.ndkl.map(|v| (id.as_str(), v)))
        .collect();
    out.aggregate.ndkl = aggregate(&ndkls).ok();
    out.undefined_desired = if config.desired == DesiredSource::FromCandidates {
        rankings
            .iter()
            .filter(|r| DesiredDistribution::from_candidates(&r.ranking, catalog).is_err())
            .count()
    } else {
        0
    };
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct GenderAccuracy {
    pub correct: usize,
    pub total: usize,
}

impl GenderAccuracy {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OccupationResolution {
    pub male: GenderAccuracy,
    pub female: GenderAccuracy,
    /// `RA_m - RA_f`, when both genders have instances.
    pub delta_ra: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ResolutionMetrics {
    pub accuracy: f64,
    /// Mean over occupations of the male-minus-female accuracy gap.
    pub delta_ra: BTreeMap<String, f64>,
    /// Scenario code -> occupation -> detail.
    pub per_occupation: BTreeMap<String, BTreeMap<String, OccupationResolution>>,
    /// Occupations left out of the gap mean because a gender has no instance.
    pub excluded: BTreeMap<String, BTreeSet<String>>,
}

/// Resolution accuracy and per-scenario accuracy gaps.
pub fn resolution_metrics(instances: &[ResolutionInstance]) -> Result<ResolutionMetrics> {
    if instances.is_empty() {
        return Err(FairlensError::undefined("resolution metrics over zero instances"));
    }
    let mut grouped: BTreeMap<Scenario, BTreeMap<String, OccupationResolution>> = BTreeMap::new();
    let mut correct = 0usize;
    for inst in instances {
        let cell = grouped
            .entry(inst.scenario)
            .or_default()
            .entry(inst.occupation.clone())
            .or_default();
        let acc = match inst.true_gender {
            Gender::Male => &mut cell.male,
            Gender::Female => &mut cell.female,
        };
        acc.total += 1;
        if inst.is_correct() {
            acc.correct += 1;
            correct += 1;
        }
    }
    let mut out = ResolutionMetrics {
        accuracy: correct as f64 / instances.len() as f64,
        ..Default::default()
    };
    for (scenario, occupations) in grouped {
        let code = scenario.code().to_string();
        let mut gaps = BTreeMap::new();
        let mut detail = BTreeMap::new();
        for (occupation, mut cell) in occupations {
            match (cell.male.accuracy(), cell.female.accuracy()) {
                (Some(m), Some(f)) => {
                    cell.delta_ra = Some(m - f);
                    gaps.insert(occupation.clone(), m - f);
                }
                _ => {
                    out.excluded
                        .entry(code.clone())
                        .or_default()
                        .insert(occupation.clone());
                }
            }
            detail.insert(occupation, cell);
        }
        if let Ok(s) = aggregate(&gaps) {
            out.delta_ra.insert(code.clone(), s.mean);
        }
        out.per_occupation.insert(code, detail);
    }
    Ok(out)
}
