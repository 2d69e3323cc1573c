//! Mean-centred PCA with exact and randomized solvers.
//!
//! Eigenvalues are those of the sample covariance (divisor `N - 1`).
//! `total_variance` is the trace of that covariance, computed from the
//! centred data before any truncation, so explained-variance fractions
//! are always fractions of the full variance.
//!
//! Each component is sign-canonicalized: its entry of largest magnitude
//! (lowest index on ties) is positive.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model_io::ContainerBlocks;

/// Tolerance on `VᵀV = I` accepted when loading or validating a model.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RELATIVE_EIGEN_FLOOR: f64 = 1e-12;

/// Relative slack when comparing a cumulative sum with its target.
const CUMULATIVE_SLACK: f64 = 1e-12;

const RANDOMIZED_START_RANK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Full symmetric eigendecomposition of the smaller Gram/covariance matrix.
    Exact,
    /// Randomized range finder with Gaussian test matrices.
    Randomized {
        seed: u64,
        oversample: usize,
        power_iters: usize,
    },
}

impl Solver {
    /// Randomized solver with oversample 10 and two power iterations.
    pub fn randomized(seed: u64) -> Self {
        Solver::Randomized {
            seed,
            oversample: 10,
            power_iters: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `d × k`, orthonormal columns.
    pub components: DMatrix<f64>,
    /// Length `k`, positive and non-increasing.
    pub eigenvalues: DVector<f64>,
    /// Sum over all eigenvalues of the training covariance.
    pub total_variance: f64,
    pub n_train: usize,
    pub variance_fraction: f64,
    /// Set when the training data had no variance; the model then has `k = 0`.
    pub zero_variance: bool,
}

/// Training-set score percentiles per retained component.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScorePercentiles {
    pub p10: Vec<f64>,
    pub p90: Vec<f64>,
}

impl ScorePercentiles {
    pub fn len(&self) -> usize {
        self.p10.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p10.is_empty()
    }

    /// Percentiles of each column of a score matrix (rows are samples).
    pub fn from_scores(scores: &DMatrix<f64>) -> Result<Self> {
        if scores.nrows() == 0 {
            return Err(Error::invalid("percentiles need at least one sample"));
        }
        let mut out = ScorePercentiles::default();
        for col in scores.column_iter() {
            let mut v: Vec<f64> = col.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            out.p10.push(percentile_sorted(&v, 0.1));
            out.p90.push(percentile_sorted(&v, 0.9));
        }
        Ok(out)
    }

    pub(crate) fn to_blocks(&self, prefix: &str, blocks: &mut ContainerBlocks) {
        let mut data = self.p10.clone();
        data.extend_from_slice(&self.p90);
        blocks.push(format!("{prefix}.percentiles"), self.len(), 2, data);
    }

    pub(crate) fn from_blocks(prefix: &str, blocks: &ContainerBlocks) -> Result<Self> {
        let (rows, _, data) = blocks.array(&format!("{prefix}.percentiles"))?;
        let out = ScorePercentiles {
            p10: data[..rows].to_vec(),
            p90: data[rows..].to_vec(),
        };
        if out.p10.iter().zip(&out.p90).any(|(a, b)| a > b) {
            return Err(Error::invalid(format!("{prefix}: p10 exceeds p90")));
        }
        Ok(out)
    }
}

/// Linear-interpolation percentile of sorted data: `h = (N-1)·q`, then
/// interpolate between the neighbouring order statistics.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Linear-interpolation percentile of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Per-component fraction of the full training variance.
    pub fn explained_fractions(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.n_components()];
        }
        self.eigenvalues.iter().map(|l| l / self.total_variance).collect()
    }

    pub fn retained_fraction(&self) -> f64 {
        self.explained_fractions().iter().sum()
    }

    /// `Vᵀ (x - mean)`.
    pub fn project(&self, sample: &[f64]) -> Result<Vec<f64>> {
        if sample.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: sample.len(),
            });
        }
        let centred = DVector::from_iterator(sample.len(), sample.iter().zip(self.mean.iter()).map(|(x, m)| x - m));
        Ok(at_b(&self.components, &centred).as_slice().to_vec())
    }

    /// Scores of every row of `data` (`N × d` → `N × k`).
    pub fn project_rows(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: data.ncols(),
            });
        }
        let mut centred = data.clone();
        for (mut col, m) in centred.column_iter_mut().zip(self.mean.iter()) {
            col.add_scalar_mut(-m);
        }
        Ok(centred * &self.components)
    }

    /// `mean + V_{:, ..len} · scores`; shorter score vectors use the
    /// leading components.
    pub fn reconstruct(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() > self.n_components() {
            return Err(Error::invalid(format!(
                "{} scores given but the model has {} components",
                scores.len(),
                self.n_components()
            )));
        }
        let mut out = self.mean.clone();
        for (j, &s) in scores.iter().enumerate() {
            out.axpy(s, &self.components.column(j), 1.0);
        }
        Ok(out.as_slice().to_vec())
    }

    pub fn score_percentiles(&self, data: &DMatrix<f64>) -> Result<ScorePercentiles> {
        if data.nrows() == 0 {
            return Err(Error::invalid("percentiles need at least one sample"));
        }
        ScorePercentiles::from_scores(&self.project_rows(data)?)
    }

    /// `max |VᵀV - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.components)
    }

    pub(crate) fn to_blocks(&self, prefix: &str, blocks: &mut ContainerBlocks) {
        let (d, k) = self.components.shape();
        blocks.push(format!("{prefix}.mean"), d, 1, self.mean.as_slice().to_vec());
        blocks.push(format!("{prefix}.eigenvalues"), k, 1, self.eigenvalues.as_slice().to_vec());
        blocks.push(format!("{prefix}.components"), d, k, self.components.as_slice().to_vec());
        blocks.push(
            format!("{prefix}.scalars"),
            4,
            1,
            vec![
                self.total_variance,
                self.n_train as f64,
                self.variance_fraction,
                if self.zero_variance { 1.0 } else { 0.0 },
            ],
        );
    }

    pub(crate) fn from_blocks(prefix: &str, blocks: &ContainerBlocks) -> Result<Self> {
        let (d, _, mean) = blocks.array(&format!("{prefix}.mean"))?;
        let (k, _, eig) = blocks.array(&format!("{prefix}.eigenvalues"))?;
        let (rows, cols, comps) = blocks.array(&format!("{prefix}.components"))?;
        let (_, _, scalars) = blocks.array(&format!("{prefix}.scalars"))?;
        if rows != d || cols != k || scalars.len() != 4 {
            return Err(Error::invalid(format!("{prefix}: inconsistent array shapes")));
        }
        if eig.iter().any(|&l| !(l > 0.0)) || eig.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::EigenvaluesNotSorted(prefix.to_string()));
        }
        let components = DMatrix::from_column_slice(d, k, comps);
        let deviation = orthonormality_error(&components);
        if !(deviation <= ORTHONORMALITY_TOL) {
            return Err(Error::NotOrthonormal {
                block: prefix.to_string(),
                deviation,
            });
        }
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            components,
            eigenvalues: DVector::from_column_slice(eig),
            total_variance: scalars[0],
            n_train: scalars[1] as usize,
            variance_fraction: scalars[2],
            zero_variance: scalars[3] != 0.0,
        })
    }
}

pub fn orthonormality_error(v: &DMatrix<f64>) -> f64 {
    let k = v.ncols();
    if k == 0 {
        return 0.0;
    }
    let g = at_b(v, v);
    let mut worst: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Fits PCA to the rows of `data` (`N × d`), keeping the smallest number
/// of leading components whose eigenvalues reach `variance_fraction` of
/// the total variance.
pub fn fit(data: &DMatrix<f64>, variance_fraction: f64, solver: Solver) -> Result<PcaModel> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 samples, got {n}")));
    }
    if d == 0 {
        return Err(Error::invalid("PCA needs at least one variable"));
    }
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::invalid(format!("variance_fraction {variance_fraction} outside (0, 1]")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in PCA input"));
    }

    let mean = DVector::from_iterator(d, data.column_iter().map(|c| c.sum() / n as f64));
    let mut centred = data.clone();
    for (mut col, m) in centred.column_iter_mut().zip(mean.iter()) {
        col.add_scalar_mut(-m);
    }
    let total_variance = centred.norm_squared() / (n - 1) as f64;

    let magnitude = data.amax().max(1.0);
    let zero_model = |total_variance: f64| PcaModel {
        mean: mean.clone(),
        components: DMatrix::zeros(d, 0),
        eigenvalues: DVector::zeros(0),
        total_variance,
        n_train: n,
        variance_fraction,
        zero_variance: true,
    };
    if total_variance / d as f64 <= (1e-12 * magnitude).powi(2) {
        return Ok(zero_model(total_variance));
    }

    let target = variance_fraction * total_variance - CUMULATIVE_SLACK * total_variance;
    let (eigenvalues, mut components) = match solver {
        Solver::Exact => exact_eigen(&centred, target),
        Solver::Randomized {
            seed,
            oversample,
            power_iters,
        } => randomized_eigen(&centred, target, seed, oversample, power_iters),
    };
    if eigenvalues.is_empty() {
        return Ok(zero_model(total_variance));
    }
    orthonormalize(&mut components);
    canonicalize_signs(&mut components);
    Ok(PcaModel {
        mean,
        components,
        eigenvalues: DVector::from_vec(eigenvalues),
        total_variance,
        n_train: n,
        variance_fraction,
        zero_variance: false,
    })
}

/// Number of leading eigenvalues needed to reach `target`, or `None` if
/// the given (non-zero) eigenvalues never get there. Eigenvalues below the
/// relative floor are never counted.
fn truncation_rank(sorted_desc: &[f64], target: f64) -> (Option<usize>, usize) {
    let floor = sorted_desc.first().copied().unwrap_or(0.0) * RELATIVE_EIGEN_FLOOR;
    let eligible = sorted_desc.iter().take_while(|&&l| l > floor && l > 0.0).count();
    let mut cum = 0.0;
    for (i, l) in sorted_desc[..eligible].iter().enumerate() {
        cum += l;
        if cum >= target {
            return (Some(i + 1), eligible);
        }
    }
    (None, eligible)
}

fn exact_eigen(centred: &DMatrix<f64>, target: f64) -> (Vec<f64>, DMatrix<f64>) {
    let (n, d) = centred.shape();
    let denom = (n - 1) as f64;
    if n <= d {
        // Gram route: eigenvectors of X Xᵀ map to components via Xᵀ u / sqrt((N-1) λ)
        let xt = centred.transpose();
        let gram = centred * xt / denom;
        let (vals, vecs) = sorted_symmetric_eigen(gram);
        let (k, eligible) = truncation_rank(&vals, target);
        let k = k.unwrap_or(eligible);
        let mut u = vecs.columns(0, k).into_owned();
        for (j, mut col) in u.column_iter_mut().enumerate() {
            col /= (denom * vals[j]).sqrt();
        }
        (vals[..k].to_vec(), at_b(centred, &u))
    } else {
        let cov = at_b(centred, centred) / denom;
        let (vals, vecs) = sorted_symmetric_eigen(cov);
        let (k, eligible) = truncation_rank(&vals, target);
        let k = k.unwrap_or(eligible);
        (vals[..k].to_vec(), vecs.columns(0, k).into_owned())
    }
}

fn sorted_symmetric_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    (vals, vecs)
}

/// `Aᵀ B` through an explicit transpose so the product runs as a blocked GEMM.
fn at_b<C: nalgebra::Dim, S: nalgebra::storage::Storage<f64, nalgebra::Dyn, C>>(a: &DMatrix<f64>, b: &nalgebra::Matrix<f64, nalgebra::Dyn, C, S>) -> nalgebra::OMatrix<f64, nalgebra::Dyn, C>
where
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<nalgebra::Dyn, C>,
{
    a.transpose() * b
}

/// Orthonormal basis of the column space of `m` via thin QR.
fn orth(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Randomized range finder. The sketch rank doubles until the leading
/// `rank` eigenvalues reach `target` or the sketch spans the full range.
fn randomized_eigen(centred: &DMatrix<f64>, target: f64, seed: u64, oversample: usize, power_iters: usize) -> (Vec<f64>, DMatrix<f64>) {
    let (n, d) = centred.shape();
    let full = n.min(d);
    let denom = (n - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rank = RANDOMIZED_START_RANK.min(full);
    loop {
        let width = (rank + oversample).min(full);
        let omega = DMatrix::from_fn(d, width, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut q = orth(centred * omega);
        for _ in 0..power_iters {
            let z = orth(at_b(centred, &q));
            q = orth(centred * z);
        }
        // B = Qᵀ X; the right singular vectors of B approximate the components
        let bt = at_b(centred, &q);
        let svd = bt.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
        let vals: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2) / denom).collect();
        let spans_all = width >= full;
        let trusted = if spans_all { vals.len() } else { rank.min(vals.len()) };
        let (k, eligible) = truncation_rank(&vals[..trusted], target);
        if k.is_some() || spans_all {
            let k = k.unwrap_or(eligible);
            let vecs = DMatrix::from_columns(&order[..k].iter().map(|&i| u.column(i)).collect::<Vec<_>>());
            return (vals[..k].to_vec(), vecs);
        }
        rank = (rank * 2).min(full);
    }
}

/// Re-orthonormalizes columns with a QR pass that keeps each column's direction.
fn orthonormalize(v: &mut DMatrix<f64>) {
    if v.ncols() == 0 {
        return;
    }
    let qr = v.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    *v = q;
}

fn canonicalize_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0usize;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::Distribution;

    fn rows(data: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_row_slice(data.len(), data[0].len(), &data.iter().flat_map(|r| r.iter().copied()).collect::<Vec<_>>())
    }

    /// `N × 3` data whose covariance spectrum is exactly `{9, 0.5, 0.5}`:
    /// centred Hadamard columns, scaled.
    fn spectrum_9_half_half() -> DMatrix<f64> {
        let h = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
        // each column: sum of squares 4, N-1 = 3, so variance 4/3 before scaling
        let s = [(9.0f64 * 3.0 / 4.0).sqrt(), (0.5f64 * 3.0 / 4.0).sqrt(), (0.5f64 * 3.0 / 4.0).sqrt()];
        DMatrix::from_fn(4, 3, |i, j| h[i][j] * s[j] + 10.0)
    }

    #[test]
    fn rank_one_data() {
        let m = fit(&rows(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]]), 0.95, Solver::Exact).unwrap();
        assert_eq!(m.n_components(), 1);
        let c = m.components.column(0);
        assert!((c[0] - 0.5f64.sqrt()).abs() < 1e-12 && (c[1] - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((m.retained_fraction() - 1.0).abs() < 1e-12);
        assert!((m.eigenvalues[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_on_known_spectrum() {
        let data = spectrum_9_half_half();
        let m = fit(&data, 0.95, Solver::Exact).unwrap();
        assert_eq!(m.n_components(), 2);
        assert!((m.eigenvalues[0] - 9.0).abs() < 1e-12);
        assert!((m.total_variance - 10.0).abs() < 1e-12);
        let m = fit(&data, 0.9, Solver::Exact).unwrap();
        assert_eq!(m.n_components(), 1);
        let m = fit(&data, 1.0, Solver::Exact).unwrap();
        assert_eq!(m.n_components(), 3);
    }

    #[test]
    fn constant_rows_give_zero_variance() {
        let data = DMatrix::from_fn(5, 4, |_, j| j as f64 * 3.0 + 1.0);
        let m = fit(&data, 0.95, Solver::Exact).unwrap();
        assert!(m.zero_variance);
        assert_eq!(m.n_components(), 0);
        assert_eq!(m.project(&[1.0, 4.0, 7.0, 10.0]).unwrap(), Vec::<f64>::new());
        assert_eq!(m.reconstruct(&[]).unwrap(), vec![1.0, 4.0, 7.0, 10.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit(&rows(&[&[1.0, 2.0]]), 0.95, Solver::Exact).is_err());
        assert!(fit(&rows(&[&[1.0], &[2.0]]), 0.0, Solver::Exact).is_err());
        assert!(fit(&rows(&[&[1.0], &[f64::NAN]]), 0.5, Solver::Exact).is_err());
    }

    fn random_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn project_and_reconstruct() {
        let data = random_matrix(40, 6, 3);
        let m = fit(&data, 1.0, Solver::Exact).unwrap();
        assert_eq!(m.n_components(), 6);
        assert!(m.orthonormality_error() < 1e-12);
        let mean: Vec<f64> = m.mean.iter().copied().collect();
        assert!(m.project(&mean).unwrap().iter().all(|s| s.abs() < 1e-12));
        assert_eq!(m.reconstruct(&[0.0; 6]).unwrap(), mean);

        // mean + 2 sqrt(λ1) v1 projects to (2 sqrt(λ1), 0, ...)
        let s1 = 2.0 * m.eigenvalues[0].sqrt();
        let x: Vec<f64> = mean.iter().zip(m.components.column(0).iter()).map(|(a, v)| a + s1 * v).collect();
        let p = m.project(&x).unwrap();
        assert!((p[0] - s1).abs() < 1e-12);
        assert!(p[1..].iter().all(|v| v.abs() < 1e-12));

        // brute-force dot products
        let sample: Vec<f64> = data.row(7).iter().copied().collect();
        let p = m.project(&sample).unwrap();
        for j in 0..6 {
            let dot: f64 = (0..6).map(|i| m.components[(i, j)] * (sample[i] - mean[i])).sum();
            assert!((p[j] - dot).abs() < 1e-12);
        }
        // full-rank round trip
        let back = m.reconstruct(&p).unwrap();
        for (a, b) in back.iter().zip(&sample) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(m.reconstruct(&[0.0; 7]).is_err());
        assert!(m.project(&[0.0; 5]).is_err());
    }

    #[test]
    fn plus_minus_mode_synthesis() {
        let m = fit(&random_matrix(30, 5, 9), 1.0, Solver::Exact).unwrap();
        for i in 0..3 {
            let mut s = vec![0.0; m.n_components()];
            s[i] = 2.5 * m.eigenvalues[i].sqrt();
            let plus = m.reconstruct(&s).unwrap();
            for (r, (p, mu)) in plus.iter().zip(m.mean.iter()).enumerate() {
                assert!((p - (mu + s[i] * m.components[(r, i)])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn variance_bookkeeping() {
        let data = random_matrix(25, 10, 11);
        let m = fit(&data, 1.0, Solver::Exact).unwrap();
        let sum: f64 = m.eigenvalues.iter().sum();
        assert!((sum - m.total_variance).abs() / m.total_variance < 1e-8);
        // wide case goes through the Gram route
        let data = random_matrix(8, 30, 12);
        let m = fit(&data, 1.0, Solver::Exact).unwrap();
        assert_eq!(m.n_components(), 7);
        let sum: f64 = m.eigenvalues.iter().sum();
        assert!((sum - m.total_variance).abs() / m.total_variance < 1e-8);
        assert!(m.orthonormality_error() < 1e-8);
    }

    #[test]
    fn sign_convention() {
        let m = fit(&random_matrix(50, 8, 4), 1.0, Solver::Exact).unwrap();
        for col in m.components.column_iter() {
            let best = col.iter().enumerate().fold(0, |b, (i, x)| if x.abs() > col[b].abs() { i } else { b });
            assert!(col[best] > 0.0);
        }
        let neg = fit(&(-random_matrix(50, 8, 4)), 1.0, Solver::Exact).unwrap();
        for (a, b) in neg.components.iter().zip(m.components.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn randomized_matches_exact_on_small_low_rank() {
        let basis = random_matrix(5, 60, 1);
        let latent = random_matrix(200, 5, 2);
        let noise = random_matrix(200, 60, 3) * 0.01;
        let data = latent * DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 7.0, 5.0, 3.0, 2.0])) * basis + noise;
        let e = fit(&data, 0.99, Solver::Exact).unwrap();
        let r = fit(&data, 0.99, Solver::randomized(5)).unwrap();
        assert_eq!(e.n_components(), r.n_components());
        for (a, b) in e.eigenvalues.iter().zip(r.eigenvalues.iter()) {
            assert!((a - b).abs() / a < 1e-6);
        }
        assert!(r.orthonormality_error() < 1e-10);
        let again = fit(&data, 0.99, Solver::randomized(5)).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn randomized_escalates_to_full_rank() {
        let data = random_matrix(30, 20, 6);
        let e = fit(&data, 1.0, Solver::Exact).unwrap();
        let r = fit(&data, 1.0, Solver::randomized(1)).unwrap();
        assert_eq!(e.n_components(), r.n_components());
        for (a, b) in e.eigenvalues.iter().zip(r.eigenvalues.iter()) {
            assert!((a - b).abs() / a < 1e-9);
        }
    }

    #[test]
    fn percentile_fixtures() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((percentile(&v, 0.1) - 10.9).abs() < 1e-12);
        assert!((percentile(&v, 0.9) - 90.1).abs() < 1e-12);
        assert_eq!(percentile(&[3.5; 9], 0.1), 3.5);
        assert_eq!(percentile(&[3.5; 9], 0.9), 3.5);
        assert!((percentile(&[10.0, 0.0], 0.1) - 1.0).abs() < 1e-12);
        assert!((percentile(&[10.0, 0.0], 0.9) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn score_percentiles_of_training_data() {
        let data = random_matrix(101, 3, 8);
        let m = fit(&data, 1.0, Solver::Exact).unwrap();
        let p = m.score_percentiles(&data).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.p10.iter().zip(&p.p90).all(|(a, b)| a <= b));
    }

    proptest! {
        #[test]
        fn project_reconstruct_identity_on_scores(seed in 0u64..1000, s in proptest::collection::vec(-5.0..5.0f64, 4)) {
            let m = fit(&random_matrix(20, 4, seed), 1.0, Solver::Exact).unwrap();
            let x = m.reconstruct(&s).unwrap();
            let back = m.project(&x).unwrap();
            for (a, b) in back.iter().zip(&s) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
