//! Biomarker association protocol.
//!
//! For every principal component of every model the scans scoring below
//! the 10th and above the 90th percentile form two tails. For every
//! biomarker the tail values are compared with a two-sample
//! Kolmogorov–Smirnov test; tails with fewer than `min_tail` scans are
//! skipped. Significance uses a Bonferroni-adjusted level.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::appearance::{AppearanceModel, Reconstruction};
use crate::error::{Error, Result};
use crate::model_io::{CohortTable, ImagingMode, ModelKind, Sex};
use crate::pca::{percentile, PcaModel, ScorePercentiles};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_MIN_TAIL: usize = 100;
pub const SPEARMAN_ALPHA: f64 = 0.01;
/// Largest sample size accepted by the exact KS mode.
pub const EXACT_KS_MAX: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileSource {
    /// Percentiles stored with the model, computed on its training scans.
    Train,
    /// Percentiles recomputed on the scores being tested.
    #[serde(rename = "self")]
    SelfScores,
}

impl FromStr for PercentileSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "self" => Ok(Self::SelfScores),
            other => Err(Error::invalid(format!("unknown percentile source {other:?} (expected train or self)"))),
        }
    }
}

impl fmt::Display for PercentileSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::SelfScores => "self",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailSplit {
    /// Scans with score `< p10`.
    pub low: Vec<String>,
    /// Scans with score `> p90`.
    pub high: Vec<String>,
    pub source: PercentileSource,
    pub p10: f64,
    pub p90: f64,
}

/// Splits scans into strict percentile tails. `train` holds the stored
/// `(p10, p90)` and is required when `source` is `Train`.
pub fn split_tails(ids: &[String], scores: &[f64], train: Option<(f64, f64)>, source: PercentileSource) -> Result<TailSplit> {
    if ids.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: ids.len(),
            actual: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite score for scan {}", ids[i])));
    }
    let (p10, p90) = match source {
        PercentileSource::Train => train.ok_or_else(|| Error::invalid("missing stored training percentiles"))?,
        PercentileSource::SelfScores => {
            if scores.is_empty() {
                return Err(Error::invalid("cannot compute percentiles of zero scores"));
            }
            (percentile(scores, 0.1), percentile(scores, 0.9))
        }
    };
    let pick = |keep: &dyn Fn(f64) -> bool| ids.iter().zip(scores).filter(|(_, &s)| keep(s)).map(|(id, _)| id.clone()).collect();
    Ok(TailSplit {
        low: pick(&|s| s < p10),
        high: pick(&|s| s > p90),
        source,
        p10,
        p90,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsMethod {
    /// Kolmogorov limit distribution with the finite-sample correction
    /// `(√n_e + 0.12 + 0.11/√n_e)·D`, `n_e = mn/(m+n)`.
    Asymptotic,
    /// Exact permutation distribution by lattice-path counting; ties are
    /// handled. Limited to samples of at most [`EXACT_KS_MAX`].
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
}

fn check_sample(name: &str, s: &[f64]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::invalid(format!("KS sample {name} is empty")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("KS sample {name} has non-finite values")));
    }
    Ok(())
}

fn sorted(s: &[f64]) -> Vec<f64> {
    let mut v = s.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// `max |i·n − j·m|` over the distinct values of the pooled sample, with
/// `i`, `j` the counts of `a` and `b` at or below the value. `D` is this
/// divided by `m·n`.
fn ks_numerator(a: &[f64], b: &[f64]) -> u64 {
    let (m, n) = (a.len() as i64, b.len() as i64);
    let (mut i, mut j, mut best) = (0usize, 0usize, 0i64);
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        best = best.max((i as i64 * n - j as i64 * m).abs());
    }
    best as u64
}

/// Two-sample KS statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    check_sample("a", a)?;
    check_sample("b", b)?;
    Ok(ks_numerator(&sorted(a), &sorted(b)) as f64 / (a.len() * b.len()) as f64)
}

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form converges fast for small λ.
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=8).map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp()).sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Two-sided asymptotic KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    ks_two_sample_with(a, b, KsMethod::Asymptotic)
}

pub fn ks_two_sample_with(a: &[f64], b: &[f64], method: KsMethod) -> Result<KsResult> {
    check_sample("a", a)?;
    check_sample("b", b)?;
    let (sa, sb) = (sorted(a), sorted(b));
    let num = ks_numerator(&sa, &sb);
    let (m, n) = (a.len(), b.len());
    let d = num as f64 / (m * n) as f64;
    let p_value = match method {
        KsMethod::Asymptotic => {
            let ne = (m * n) as f64 / (m + n) as f64;
            let en = ne.sqrt();
            kolmogorov_sf((en + 0.12 + 0.11 / en) * d)
        }
        KsMethod::Exact => {
            if m > EXACT_KS_MAX || n > EXACT_KS_MAX {
                return Err(Error::invalid(format!("exact KS mode supports samples up to {EXACT_KS_MAX}, got {m} and {n}")));
            }
            exact_pvalue(&sa, &sb, num)
        }
    };
    Ok(KsResult { d, p_value })
}

/// `P(D ≥ D_obs)` over all `C(m+n, m)` equally likely labelings of the
/// pooled sample. The statistic is only evaluated at the end of each run
/// of tied pooled values, exactly as [`ks_numerator`] does.
fn exact_pvalue(a: &[f64], b: &[f64], num: u64) -> f64 {
    let (m, n) = (a.len(), b.len());
    let mut pooled = [a, b].concat();
    pooled.sort_by(f64::total_cmp);
    let total = m + n;
    let checked = |k: usize| k == total || (k > 0 && pooled[k - 1] < pooled[k]);
    let ok = |i: usize, j: usize| ((i * n) as i64 - (j * m) as i64).unsigned_abs() < num;
    // paths[i][j]: labelings of the first i+j pooled values with i from `a`
    // that never reach the observed statistic at a checked position.
    let mut paths = vec![vec![0u128; n + 1]; m + 1];
    paths[0][0] = 1;
    for i in 0..=m {
        for j in 0..=n {
            if i + j == 0 {
                continue;
            }
            let mut c = 0;
            if i > 0 {
                c += paths[i - 1][j];
            }
            if j > 0 {
                c += paths[i][j - 1];
            }
            if checked(i + j) && !ok(i, j) {
                c = 0;
            }
            paths[i][j] = c;
        }
    }
    let all = binomial(total, m);
    (all - paths[m][n]) as f64 / all as f64
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Monte-Carlo permutation p-value `(1 + #{D_perm ≥ D_obs}) / (1 + n_perm)`.
pub fn ks_permutation_pvalue(a: &[f64], b: &[f64], n_perm: usize, seed: u64) -> Result<f64> {
    check_sample("a", a)?;
    check_sample("b", b)?;
    let obs = ks_numerator(&sorted(a), &sorted(b));
    let mut pooled = [a, b].concat();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..n_perm {
        pooled.shuffle(&mut rng);
        let (x, y) = pooled.split_at(a.len());
        if ks_numerator(&sorted(x), &sorted(y)) >= obs {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (n_perm + 1) as f64)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = r;
        }
        start = end;
    }
    ranks
}

/// Spearman's ρ; `None` when either variable is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::invalid(format!("spearman needs at least 3 pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("spearman input has non-finite values"));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Two-sided p-value of ρ from the t distribution with `n − 2` degrees of freedom.
pub fn spearman_pvalue(rho: f64, n: usize) -> f64 {
    if n < 3 {
        return 1.0;
    }
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ModelLabel {
    pub kind: ModelKind,
    pub mode: Option<ImagingMode>,
    pub sex: Sex,
}

impl fmt::Display for ModelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            Some(m) => write!(f, "{}_{}_{}", self.kind, m, self.sex),
            None => write!(f, "{}_{}", self.kind, self.sex),
        }
    }
}

/// Scores of a set of scans on one model, with what the protocol needs
/// from the model itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredModel {
    pub label: ModelLabel,
    /// Per-component fraction of the model's full training variance.
    pub variance_fractions: Vec<f64>,
    pub train_percentiles: Option<ScorePercentiles>,
    pub scan_ids: Vec<String>,
    /// `N × k`, rows aligned with `scan_ids`.
    pub scores: DMatrix<f64>,
}

impl ScoredModel {
    pub fn new(
        label: ModelLabel,
        pca: &PcaModel,
        train_percentiles: Option<ScorePercentiles>,
        scan_ids: Vec<String>,
        scores: DMatrix<f64>,
    ) -> Result<Self> {
        if scores.nrows() != scan_ids.len() || scores.ncols() != pca.n_components() {
            return Err(Error::invalid(format!(
                "{label}: score matrix is {}×{}, expected {}×{}",
                scores.nrows(),
                scores.ncols(),
                scan_ids.len(),
                pca.n_components()
            )));
        }
        Ok(Self {
            label,
            variance_fractions: pca.explained_fractions(),
            train_percentiles,
            scan_ids,
            scores,
        })
    }

    pub fn n_components(&self) -> usize {
        self.scores.ncols()
    }

    fn row_of(&self) -> HashMap<&str, usize> {
        self.scan_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    /// Tail split of component `c` (0-based).
    pub fn split(&self, c: usize, source: PercentileSource) -> Result<TailSplit> {
        let train = match (&self.train_percentiles, source) {
            (Some(p), _) if c < p.len() => Some((p.p10[c], p.p90[c])),
            _ => None,
        };
        let col: Vec<f64> = self.scores.column(c).iter().copied().collect();
        split_tails(&self.scan_ids, &col, train, source)
            .map_err(|e| Error::invalid(format!("{} component {}: {e}", self.label, c + 1)))
    }

    /// Mean score vectors of the low and of the high tail.
    pub fn tail_means(&self, split: &TailSplit) -> Result<(Vec<f64>, Vec<f64>)> {
        let rows = self.row_of();
        let mean = |ids: &[String]| -> Result<Vec<f64>> {
            if ids.is_empty() {
                return Err(Error::invalid("cannot average an empty tail"));
            }
            let mut acc = vec![0.0; self.n_components()];
            for id in ids {
                let r = *rows.get(id.as_str()).ok_or_else(|| Error::invalid(format!("scan {id} has no scores")))?;
                for (a, v) in acc.iter_mut().zip(self.scores.row(r).iter()) {
                    *a += v;
                }
            }
            Ok(acc.into_iter().map(|a| a / ids.len() as f64).collect())
        };
        Ok((mean(&split.low)?, mean(&split.high)?))
    }

    pub fn overall_mean(&self) -> Vec<f64> {
        let n = self.scores.nrows().max(1) as f64;
        self.scores.row_sum().iter().map(|s| s / n).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationConfig {
    pub alpha_base: f64,
    /// When set, used verbatim as the adjusted level of every test.
    pub pinned_alpha: Option<f64>,
    pub source: PercentileSource,
    pub min_tail: usize,
    /// Biomarkers to test; all cohort columns when `None`.
    pub biomarkers: Option<Vec<String>>,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            alpha_base: DEFAULT_ALPHA,
            pinned_alpha: None,
            source: PercentileSource::Train,
            min_tail: DEFAULT_MIN_TAIL,
            biomarkers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssociationResult {
    pub model: ModelLabel,
    /// 1-based principal component number.
    pub component: usize,
    pub variance_fraction: f64,
    pub biomarker: String,
    pub n_low: usize,
    pub n_high: usize,
    /// `None` when skipped.
    pub ks_d: Option<f64>,
    pub p_value: Option<f64>,
    pub alpha_adjusted: f64,
    pub significant: bool,
    pub skipped: bool,
    pub skip_reason: Option<String>,
    /// Tails after dropping scans missing this biomarker.
    #[serde(skip)]
    pub split: TailSplit,
}

fn resolve_biomarkers(cohort: &CohortTable, wanted: &Option<Vec<String>>) -> Result<Vec<(String, usize)>> {
    let names = wanted.clone().unwrap_or_else(|| cohort.biomarkers.clone());
    names
        .into_iter()
        .map(|name| match cohort.biomarker_index(&name) {
            Some(i) => Ok((name, i)),
            None => Err(Error::invalid(format!(
                "unknown biomarker {name:?}; cohort has: {}",
                cohort.biomarkers.join(", ")
            ))),
        })
        .collect()
}

fn check_cohort(models: &[ScoredModel], cohort: &CohortTable) -> Result<()> {
    for m in models {
        for id in &m.scan_ids {
            let row = cohort.get(id).ok_or_else(|| Error::invalid(format!("scan {id} is not in the cohort table")))?;
            if row.sex != m.label.sex {
                return Err(Error::invalid(format!("scan {id} is {} but model {} is {}", row.sex, m.label, m.label.sex)));
            }
        }
    }
    Ok(())
}

/// Runs the tail/KS protocol for every (model, component, biomarker).
/// Results come back in that order; the Bonferroni denominator is the
/// number of tests actually performed.
pub fn scan_associations(models: &[ScoredModel], cohort: &CohortTable, config: &AssociationConfig) -> Result<Vec<AssociationResult>> {
    let biomarkers = resolve_biomarkers(cohort, &config.biomarkers)?;
    check_cohort(models, cohort)?;
    let jobs: Vec<(usize, usize)> = models
        .iter()
        .enumerate()
        .flat_map(|(mi, m)| (0..m.n_components()).map(move |c| (mi, c)))
        .collect();
    let per_job: Vec<Vec<AssociationResult>> = jobs
        .par_iter()
        .map(|&(mi, c)| {
            let model = &models[mi];
            let split = model.split(c, config.source)?;
            biomarkers
                .iter()
                .map(|(name, b)| test_one(model, c, &split, name, *b, cohort, config.min_tail))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut results: Vec<AssociationResult> = per_job.into_iter().flatten().collect();
    let attempted = results.iter().filter(|r| !r.skipped).count();
    let alpha = config.pinned_alpha.unwrap_or(config.alpha_base / attempted.max(1) as f64);
    for r in &mut results {
        r.alpha_adjusted = alpha;
        r.significant = !r.skipped && r.p_value.is_some_and(|p| p < alpha);
    }
    Ok(results)
}

fn test_one(
    model: &ScoredModel,
    c: usize,
    split: &TailSplit,
    name: &str,
    b: usize,
    cohort: &CohortTable,
    min_tail: usize,
) -> Result<AssociationResult> {
    let present = |ids: &[String]| -> (Vec<String>, Vec<f64>) {
        ids.iter().filter_map(|id| cohort.value(id, b).map(|v| (id.clone(), v))).unzip()
    };
    let (low_ids, low_vals) = present(&split.low);
    let (high_ids, high_vals) = present(&split.high);
    let skipped = low_ids.len() < min_tail || high_ids.len() < min_tail;
    let ks = if skipped { None } else { Some(ks_two_sample(&low_vals, &high_vals)?) };
    Ok(AssociationResult {
        model: model.label,
        component: c + 1,
        variance_fraction: model.variance_fractions.get(c).copied().unwrap_or(0.0),
        biomarker: name.to_string(),
        n_low: low_ids.len(),
        n_high: high_ids.len(),
        ks_d: ks.map(|k| k.d),
        p_value: ks.map(|k| k.p_value),
        alpha_adjusted: f64::NAN,
        significant: false,
        skipped,
        skip_reason: skipped.then(|| format!("tail<{min_tail}")),
        split: TailSplit {
            low: low_ids,
            high: high_ids,
            ..split.clone()
        },
    })
}

#[derive(Debug, Clone)]
pub enum Representative {
    /// Reconstructions at the mean scores of the low and high tails.
    Pair { low: Reconstruction, high: Reconstruction },
    /// Reconstruction at the mean scores of all scans.
    Overall(Reconstruction),
}

/// A low/high pair for a significant result, otherwise the
/// reconstruction at the overall mean scores.
pub fn representative_images(app: &AppearanceModel, scored: &ScoredModel, result: &AssociationResult) -> Result<Representative> {
    if result.model != scored.label || result.component == 0 || result.component > scored.n_components() {
        return Err(Error::invalid(format!(
            "result for {} component {} does not belong to {}",
            result.model, result.component, scored.label
        )));
    }
    if scored.n_components() != app.n_components() {
        return Err(Error::DimensionMismatch {
            expected: app.n_components(),
            actual: scored.n_components(),
        });
    }
    if result.significant {
        let (low, high) = scored.tail_means(&result.split)?;
        Ok(Representative::Pair {
            low: app.reconstruct(&low)?,
            high: app.reconstruct(&high)?,
        })
    } else {
        Ok(Representative::Overall(app.reconstruct(&scored.overall_mean())?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow {
    pub model: ModelLabel,
    pub biomarker: String,
    pub component: usize,
    pub variance_fraction: f64,
    pub significant: bool,
}

/// Results regrouped by (model, biomarker) with components in order.
pub fn variance_significance_table(results: &[AssociationResult]) -> Vec<VarianceRow> {
    let mut model_order: Vec<ModelLabel> = Vec::new();
    let mut marker_order: Vec<&str> = Vec::new();
    for r in results {
        if !model_order.contains(&r.model) {
            model_order.push(r.model);
        }
        if !marker_order.contains(&r.biomarker.as_str()) {
            marker_order.push(&r.biomarker);
        }
    }
    let key = |r: &AssociationResult| {
        (
            model_order.iter().position(|m| *m == r.model).unwrap(),
            marker_order.iter().position(|b| *b == r.biomarker).unwrap(),
            r.component,
        )
    };
    let mut sorted: Vec<&AssociationResult> = results.iter().collect();
    sorted.sort_by_key(|r| key(r));
    sorted
        .into_iter()
        .map(|r| VarianceRow {
            model: r.model,
            biomarker: r.biomarker.clone(),
            component: r.component,
            variance_fraction: r.variance_fraction,
            significant: r.significant,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpearmanRow {
    pub model: ModelLabel,
    pub component: usize,
    pub biomarker: String,
    pub n: usize,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
}

/// Spearman correlation of the first `max_components` components (all
/// when `None`) with each biomarker, using pairwise-complete rows.
pub fn spearman_table(
    models: &[ScoredModel],
    cohort: &CohortTable,
    biomarkers: &Option<Vec<String>>,
    max_components: Option<usize>,
) -> Result<Vec<SpearmanRow>> {
    let markers = resolve_biomarkers(cohort, biomarkers)?;
    let mut rows = Vec::new();
    for m in models {
        let k = max_components.map_or(m.n_components(), |c| c.min(m.n_components()));
        for c in 0..k {
            for (name, b) in &markers {
                let (x, y): (Vec<f64>, Vec<f64>) = m
                    .scan_ids
                    .iter()
                    .enumerate()
                    .filter_map(|(i, id)| cohort.value(id, *b).map(|v| (m.scores[(i, c)], v)))
                    .unzip();
                let rho = if x.len() >= 3 { spearman(&x, &y)? } else { None };
                rows.push(SpearmanRow {
                    model: m.label,
                    component: c + 1,
                    biomarker: name.clone(),
                    n: x.len(),
                    rho,
                    p_value: rho.map(|r| spearman_pvalue(r, x.len())),
                });
            }
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

fn label_fields(l: &ModelLabel) -> [String; 3] {
    [
        l.kind.to_string(),
        l.mode.map(|m| m.to_string()).unwrap_or_default(),
        l.sex.to_string(),
    ]
}

pub fn write_results_csv(results: &[AssociationResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "model_kind", "mode", "sex", "component", "variance_fraction", "biomarker", "n_low", "n_high", "ks_d", "p_value",
        "alpha_adjusted", "significant", "skipped", "skip_reason",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in results {
        let [kind, mode, sex] = label_fields(&r.model);
        w.write_record([
            kind,
            mode,
            sex,
            r.component.to_string(),
            r.variance_fraction.to_string(),
            r.biomarker.clone(),
            r.n_low.to_string(),
            r.n_high.to_string(),
            opt(r.ks_d),
            opt(r.p_value),
            r.alpha_adjusted.to_string(),
            r.significant.to_string(),
            r.skipped.to_string(),
            r.skip_reason.clone().unwrap_or_default(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_variance_table_csv(rows: &[VarianceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["model_kind", "mode", "sex", "biomarker", "component", "variance_fraction", "significant"])
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        let [kind, mode, sex] = label_fields(&r.model);
        w.write_record([
            kind,
            mode,
            sex,
            r.biomarker.clone(),
            r.component.to_string(),
            r.variance_fraction.to_string(),
            r.significant.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes rows with `|ρ| ≥ min_abs_rho` (every row when the filter is 0)
/// and flags those significant at the per-test level [`SPEARMAN_ALPHA`].
pub fn write_spearman_csv(rows: &[SpearmanRow], min_abs_rho: f64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["model_kind", "mode", "sex", "component", "biomarker", "n", "rho", "p_value", "significant_at_0.01"])
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        let shown = min_abs_rho <= 0.0 || r.rho.is_some_and(|x| x.abs() >= min_abs_rho);
        if !shown {
            continue;
        }
        let [kind, mode, sex] = label_fields(&r.model);
        w.write_record([
            kind,
            mode,
            sex,
            r.component.to_string(),
            r.biomarker.clone(),
            r.n.to_string(),
            opt(r.rho),
            opt(r.p_value),
            r.p_value.is_some_and(|p| p < SPEARMAN_ALPHA).to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::CohortRow;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:04}")).collect()
    }

    #[test]
    fn tails_of_one_to_hundred() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        let t = split_tails(&ids(100), &scores, None, PercentileSource::SelfScores).unwrap();
        assert!((t.p10 - 10.9).abs() < 1e-12 && (t.p90 - 90.1).abs() < 1e-12);
        assert_eq!(t.low, ids(10));
        assert_eq!(t.high, ids(100)[90..].to_vec());
    }

    #[test]
    fn tails_strict_and_train_mode() {
        let t = split_tails(&ids(5), &[3.0; 5], None, PercentileSource::SelfScores).unwrap();
        assert!(t.low.is_empty() && t.high.is_empty());
        let t = split_tails(&ids(3), &[-2.0, 0.0, 2.0], Some((-1.0, 1.0)), PercentileSource::Train).unwrap();
        assert_eq!((t.low, t.high), (vec!["s0000".to_string()], vec!["s0002".to_string()]));
        let t = split_tails(&ids(3), &[-1.0, 0.0, 1.0], Some((-1.0, 1.0)), PercentileSource::Train).unwrap();
        assert!(t.low.is_empty() && t.high.is_empty());
        assert!(split_tails(&ids(3), &[0.0; 3], None, PercentileSource::Train).is_err());
    }

    #[test]
    fn ks_fixtures() {
        let r = ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.d, r.p_value), (0.0, 1.0));
        assert_eq!(ks_statistic(&[0.1, 0.2, 0.3], &[0.4, 0.5, 0.6]).unwrap(), 1.0);
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[1.5, 2.5, 3.5, 4.5]).unwrap(), 0.25);
        assert!(ks_statistic(&[], &[1.0]).is_err());
        assert!(ks_statistic(&[f64::NAN], &[1.0]).is_err());
    }

    /// Brute-force oracle: evaluate both ECDFs at every pooled value.
    fn brute_d(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], v: f64| s.iter().filter(|&&x| x <= v).count() as f64 / s.len() as f64;
        a.iter().chain(b).map(|&v| (ecdf(a, v) - ecdf(b, v)).abs()).fold(0.0, f64::max)
    }

    /// Enumerates every split of the pooled sample.
    fn brute_exact_p(a: &[f64], b: &[f64]) -> f64 {
        let pooled = [a, b].concat();
        let n = pooled.len();
        let d_obs = brute_d(a, b);
        let (mut hits, mut total) = (0, 0);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != a.len() {
                continue;
            }
            let (x, y): (Vec<f64>, Vec<f64>) = {
                let (mut x, mut y) = (vec![], vec![]);
                for (i, v) in pooled.iter().enumerate() {
                    if mask >> i & 1 == 1 { x.push(*v) } else { y.push(*v) }
                }
                (x, y)
            };
            total += 1;
            if brute_d(&x, &y) >= d_obs - 1e-12 {
                hits += 1;
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn exact_mode_matches_enumeration() {
        let cases: [(&[f64], &[f64]); 4] = [
            (&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]),
            (&[1.0, 2.0, 3.0, 4.0], &[1.5, 2.5, 3.5, 4.5]),
            (&[1.0, 1.0, 2.0, 3.0, 5.0], &[1.0, 2.0, 2.0, 4.0, 6.0, 7.0]),
            (&[0.3, 0.1, 0.9, 0.4], &[0.2, 0.8, 0.7, 0.5, 0.6, 0.25, 0.95]),
        ];
        for (a, b) in cases {
            let r = ks_two_sample_with(a, b, KsMethod::Exact).unwrap();
            assert!((r.d - brute_d(a, b)).abs() < 1e-15);
            assert!((r.p_value - brute_exact_p(a, b)).abs() < 1e-12, "{a:?} {b:?}");
        }
        // Disjoint 3 vs 3: only the two extreme labelings reach D = 1.
        let r = ks_two_sample_with(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], KsMethod::Exact).unwrap();
        assert!((r.p_value - 0.1).abs() < 1e-15);
        assert!(ks_two_sample_with(&[0.0; 26], &[1.0], KsMethod::Exact).is_err());
    }

    #[test]
    fn kolmogorov_reference_values() {
        // P(K > 1.36) ≈ 0.05 and P(K > 1.63) ≈ 0.01 are the classical critical values.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-3);
        // Both series agree where they meet.
        let lo = 1.18 - 1e-9;
        assert!((kolmogorov_sf(lo) - kolmogorov_sf(1.18)).abs() < 1e-9);
    }

    #[test]
    fn permutation_pvalue_is_seeded() {
        let a = [0.1, 0.5, 0.9, 1.3, 1.7];
        let b = [0.4, 1.0, 1.6, 2.2, 2.8];
        let p1 = ks_permutation_pvalue(&a, &b, 2000, 3).unwrap();
        assert_eq!(p1, ks_permutation_pvalue(&a, &b, 2000, 3).unwrap());
        let exact = ks_two_sample_with(&a, &b, KsMethod::Exact).unwrap().p_value;
        assert!((p1 - exact).abs() < 0.03);
    }

    #[test]
    fn spearman_fixtures() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&x, &x.map(|v| 10.0 * v)).unwrap(), Some(1.0));
        assert_eq!(spearman(&x, &x.map(|v| -v)).unwrap(), Some(-1.0));
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap().unwrap();
        assert!((r - 0.8).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), None);
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn spearman_pvalue_reference() {
        // n = 10: ρ = 0.632 gives t = 2.306, the two-sided 0.05 critical value at 8 df.
        let p = spearman_pvalue(0.632, 10);
        assert!((p - 0.05).abs() < 0.003, "{p}");
        assert_eq!(spearman_pvalue(1.0, 10), 0.0);
    }

    fn cohort_for(ids: &[String], sex: Sex, values: impl Fn(usize) -> Vec<Option<f64>>, names: &[&str]) -> CohortTable {
        CohortTable::new(
            names.iter().map(|s| s.to_string()).collect(),
            ids.iter()
                .enumerate()
                .map(|(i, id)| CohortRow {
                    scan_id: id.clone(),
                    subject_id: format!("p{i}"),
                    sex,
                    values: values(i),
                })
                .collect(),
        )
        .unwrap()
    }

    fn scored(scores: Vec<f64>, k: usize) -> ScoredModel {
        let n = scores.len() / k;
        ScoredModel {
            label: ModelLabel {
                kind: ModelKind::Shape,
                mode: None,
                sex: Sex::F,
            },
            variance_fractions: vec![0.5; k],
            train_percentiles: None,
            scan_ids: ids(n),
            scores: DMatrix::from_row_slice(n, k, &scores),
        }
    }

    #[test]
    fn skip_rule_and_bonferroni() {
        // 1000 scans: self percentiles of 0..999 leave 100 strictly below p10 = 99.9.
        let m = scored((0..1000).map(f64::from).collect(), 1);
        let cohort = cohort_for(&m.scan_ids, Sex::F, |i| vec![Some(i as f64), (i != 0).then_some(1.0)], &["a", "b"]);
        let cfg = AssociationConfig {
            source: PercentileSource::SelfScores,
            ..Default::default()
        };
        let r = scan_associations(&[m], &cohort, &cfg).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].n_low, r[0].skipped), (100, false));
        assert_eq!(r[0].ks_d, Some(1.0));
        assert!(r[0].significant);
        assert_eq!((r[1].n_low, r[1].skipped, r[1].skip_reason.as_deref()), (99, true, Some("tail<100")));
        assert!(!r[1].significant && r[1].p_value.is_none());
        // One attempted test: α = 0.05 / 1.
        assert_eq!(r[0].alpha_adjusted, 0.05);
        assert_eq!(r[1].alpha_adjusted, 0.05);
    }

    #[test]
    fn pinned_alpha_and_unknown_biomarker() {
        let m = scored((0..1000).map(|i| ((i * 37) % 1000) as f64).collect(), 1);
        let cohort = cohort_for(&m.scan_ids, Sex::F, |i| vec![Some((i % 7) as f64)], &["a"]);
        let cfg = AssociationConfig {
            source: PercentileSource::SelfScores,
            pinned_alpha: Some(4.1e-6),
            ..Default::default()
        };
        let r = scan_associations(std::slice::from_ref(&m), &cohort, &cfg).unwrap();
        assert!(r.iter().all(|x| x.alpha_adjusted == 4.1e-6));
        let bad = AssociationConfig {
            biomarkers: Some(vec!["nope".into()]),
            ..cfg
        };
        assert!(scan_associations(&[m], &cohort, &bad).unwrap_err().to_string().contains("nope"));
    }

    #[test]
    fn results_ordered_by_model_component_biomarker() {
        let n = 300;
        let scores: Vec<f64> = (0..n * 3).map(|i| ((i * 7919) % 1009) as f64).collect();
        let m = scored(scores, 3);
        let cohort = cohort_for(&m.scan_ids, Sex::F, |i| vec![Some(i as f64), Some(-(i as f64))], &["x", "y"]);
        let cfg = AssociationConfig {
            source: PercentileSource::SelfScores,
            min_tail: 10,
            ..Default::default()
        };
        let r = scan_associations(&[m], &cohort, &cfg).unwrap();
        let keys: Vec<(usize, &str)> = r.iter().map(|x| (x.component, x.biomarker.as_str())).collect();
        assert_eq!(keys, vec![(1, "x"), (1, "y"), (2, "x"), (2, "y"), (3, "x"), (3, "y")]);
        assert!(r.iter().all(|x| (x.alpha_adjusted - 0.05 / 6.0).abs() < 1e-18));
        let t = variance_significance_table(&r);
        let keys: Vec<(&str, usize)> = t.iter().map(|x| (x.biomarker.as_str(), x.component)).collect();
        assert_eq!(keys, vec![("x", 1), ("x", 2), ("x", 3), ("y", 1), ("y", 2), ("y", 3)]);
        assert!(variance_significance_table(&[]).is_empty());
    }

    #[test]
    fn cohort_must_match_sex() {
        let m = scored((0..10).map(f64::from).collect(), 1);
        let cohort = cohort_for(&m.scan_ids, Sex::M, |_| vec![Some(1.0)], &["a"]);
        assert!(scan_associations(&[m], &cohort, &AssociationConfig::default()).is_err());
    }

    #[test]
    fn tail_means_and_overall() {
        let mut m = scored(vec![-3.0, 1.0, -1.0, 2.0, 0.0, 0.0, 1.0, 5.0, 3.0, -4.0], 2);
        m.train_percentiles = Some(ScorePercentiles {
            p10: vec![-0.5, 0.0],
            p90: vec![0.5, 0.0],
        });
        let split = m.split(0, PercentileSource::Train).unwrap();
        let (lo, hi) = m.tail_means(&split).unwrap();
        assert_eq!(lo, vec![-2.0, 1.5]);
        assert_eq!(hi, vec![2.0, 0.5]);
        assert_eq!(m.overall_mean(), vec![0.0, 0.8]);
        let pca = PcaModel {
            mean: DVector::zeros(2),
            components: DMatrix::identity(2, 2),
            eigenvalues: DVector::from_vec(vec![2.0, 1.0]),
            total_variance: 4.0,
            n_train: 5,
            variance_fraction: 0.95,
            zero_variance: false,
        };
        let s = ScoredModel::new(m.label, &pca, None, m.scan_ids.clone(), m.scores.clone()).unwrap();
        assert_eq!(s.variance_fractions, vec![0.5, 0.25]);
    }

    proptest! {
        #[test]
        fn ks_d_matches_brute_force_and_is_monotone_invariant(
            a in proptest::collection::vec(-5i32..5, 1..30),
            b in proptest::collection::vec(-5i32..5, 1..30),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let d = ks_statistic(&a, &b).unwrap();
            prop_assert!((d - brute_d(&a, &b)).abs() < 1e-12);
            let f = |v: &f64| (v * 0.7).exp() + 3.0;
            let ta: Vec<f64> = a.iter().map(f).collect();
            let tb: Vec<f64> = b.iter().map(f).collect();
            prop_assert_eq!(d, ks_statistic(&ta, &tb).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn spearman_bounded_and_monotone_invariant(xy in proptest::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..40)) {
            let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
            if let Some(r) = spearman(&x, &y).unwrap() {
                prop_assert!((-1.0..=1.0).contains(&r));
                let tx: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
                let r2 = spearman(&tx, &y).unwrap().unwrap();
                prop_assert!((r - r2).abs() < 1e-12);
            }
        }

        #[test]
        fn tails_are_disjoint(scores in proptest::collection::vec(-10.0..10.0f64, 1..200)) {
            let t = split_tails(&ids(scores.len()), &scores, None, PercentileSource::SelfScores).unwrap();
            prop_assert!(t.low.iter().all(|id| !t.high.contains(id)));
        }
    }
}
