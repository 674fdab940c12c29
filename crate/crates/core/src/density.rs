//! Evaluable density models and the expectation backends.
//!
//! Every analytic family evaluates its density in log space (score fields need
//! `log f` anyway and it avoids underflow in the tails), carries a seeded
//! sampler, and exposes per-coordinate moments used to pick integration boxes
//! and perturbation steps. The [`IntegrationSpec`] realizes the expectation
//! operator `E_f[·]` either by a tensor-product Gauss rule over a bounding box
//! or by seeded Monte Carlo.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sum::ChunkedAcc;

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Truncation radius (in bandwidths) for kernel sums; exp(-32) is far below
/// double-precision noise relative to the kernels that matter.
const KDE_WINDOW: f64 = 8.0;

// ---------------------------------------------------------------------------
// Sample matrices
// ---------------------------------------------------------------------------

/// An N×n matrix of observations (rows are samples), tagged with the RNG seed
/// that produced it (0 for external data).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    data: DMatrix<f64>,
    seed: u64,
}

impl SampleMatrix {
    /// Wrap a data matrix. All entries must be finite; at least one row and
    /// one column are required.
    pub fn new(data: DMatrix<f64>, seed: u64) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidParameter {
                name: "samples",
                reason: "need at least one row and one column".into(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "samples",
                reason: "non-finite entry".into(),
            });
        }
        Ok(Self { data, seed })
    }

    pub fn from_rows(rows: &[Vec<f64>], seed: u64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptySamples);
        }
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParameter {
                name: "samples",
                reason: "ragged rows".into(),
            });
        }
        let data = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        Self::new(data, seed)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Copy row `i` into a plain vector.
    pub fn row_vec(&self, i: usize) -> Vec<f64> {
        (0..self.dim()).map(|j| self.data[(i, j)]).collect()
    }

    /// Row-major flattened copy of the data.
    pub fn flat_rows(&self) -> Vec<f64> {
        let (count, dim) = (self.count(), self.dim());
        let mut flat = Vec::with_capacity(count * dim);
        for i in 0..count {
            for j in 0..dim {
                flat.push(self.data[(i, j)]);
            }
        }
        flat
    }

    /// Per-coordinate sample mean.
    pub fn column_means(&self) -> DVector<f64> {
        let n = self.count() as f64;
        DVector::from_iterator(self.dim(), self.data.column_iter().map(|c| c.sum() / n))
    }

    /// Per-coordinate sample standard deviation (ddof = 1).
    pub fn column_stds(&self) -> DVector<f64> {
        let n = self.count();
        let means = self.column_means();
        DVector::from_iterator(
            self.dim(),
            self.data.column_iter().enumerate().map(|(j, c)| {
                if n < 2 {
                    return 0.0;
                }
                let ss: f64 = c.iter().map(|v| (v - means[j]).powi(2)).sum();
                (ss / (n as f64 - 1.0)).sqrt()
            }),
        )
    }
}

// ---------------------------------------------------------------------------
// Analytic families
// ---------------------------------------------------------------------------

/// Multivariate Gaussian with symmetric positive-definite covariance.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    log_norm: f64,
}

impl PartialEq for Gaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::ShapeMismatch {
                what: "covariance",
                expected: (n, n),
                got: (cov.nrows(), cov.ncols()),
            });
        }
        let asym = (&cov - cov.transpose()).abs().max();
        let scale = cov.abs().max().max(1.0);
        if asym > 1e-12 * scale {
            return Err(Error::InvalidParameter {
                name: "covariance",
                reason: "not symmetric".into(),
            });
        }
        let eigs = SymmetricEigen::new(cov.clone()).eigenvalues;
        let max_eig = eigs.max();
        let min_eig = eigs.min();
        if min_eig.is_nan() || min_eig <= 1e-12 * max_eig {
            return Err(Error::InvalidParameter {
                name: "covariance",
                reason: format!("not positive definite (eigenvalues {min_eig:.3e}..{max_eig:.3e})"),
            });
        }
        let chol = Cholesky::new(cov.clone()).ok_or(Error::InvalidParameter {
            name: "covariance",
            reason: "Cholesky factorization failed".into(),
        })?;
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let precision = chol.inverse();
        let log_norm = -0.5 * (n as f64 * LN_2PI + log_det);
        Ok(Self {
            mean,
            cov,
            precision,
            chol_lower: chol.l(),
            log_norm,
        })
    }

    /// 1-D Gaussian N(mean, var).
    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, var),
        )
    }

    /// N(mean, diag(vars)).
    pub fn diagonal(mean: DVector<f64>, vars: &[f64]) -> Result<Self> {
        let n = mean.len();
        if vars.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: vars.len(),
            });
        }
        let mut cov = DMatrix::zeros(n, n);
        for (i, &v) in vars.iter().enumerate() {
            cov[(i, i)] = v;
        }
        Self::new(mean, cov)
    }

    /// N(0, I_n).
    pub fn standard(dim: usize) -> Self {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        self.log_norm - 0.5 * (&self.precision * &d).dot(&d)
    }

    /// Stein score: -Σ⁻¹ (x - μ).
    fn score(&self, x: &[f64], out: &mut [f64]) {
        let d = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let s = -(&self.precision * d);
        out.copy_from_slice(s.as_slice());
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let n = self.mean.len();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x = &self.mean + &self.chol_lower * z;
        out.copy_from_slice(x.as_slice());
    }
}

/// Finite mixture of Gaussians with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<Gaussian>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if weights.len() != components.len() || components.is_empty() {
            return Err(Error::InvalidParameter {
                name: "mixture",
                reason: "weights and components must match and be non-empty".into(),
            });
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidParameter {
                name: "mixture",
                reason: "negative weight".into(),
            });
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter {
                name: "mixture",
                reason: format!("weights sum to {total}, not 1"),
            });
        }
        let dim = components[0].mean().len();
        if components.iter().any(|c| c.mean().len() != dim) {
            return Err(Error::InvalidParameter {
                name: "mixture",
                reason: "components have mixed dimensions".into(),
            });
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    fn dim(&self) -> usize {
        self.components[0].mean().len()
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_pdf(x))
            .collect();
        log_sum_exp(&logs)
    }

    /// Responsibility-weighted average of the component scores.
    fn score(&self, x: &[f64], out: &mut [f64]) {
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_pdf(x))
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        out.fill(0.0);
        let mut comp_score = vec![0.0; x.len()];
        for (log_w, comp) in logs.iter().zip(&self.components) {
            let r = (log_w - m).exp();
            total += r;
            comp.score(x, &mut comp_score);
            for (o, s) in out.iter_mut().zip(&comp_score) {
                *o += r * s;
            }
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut pick = self.components.len() - 1;
        for (k, &w) in self.weights.iter().enumerate() {
            cum += w;
            if u < cum {
                pick = k;
                break;
            }
        }
        self.components[pick].sample_into(rng, out);
    }
}

/// Coordinatewise exponential distribution on x_i > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Exponential {
    rates: DVector<f64>,
}

impl Exponential {
    pub fn new(rates: DVector<f64>) -> Result<Self> {
        if rates.is_empty() || rates.iter().any(|&r| !r.is_finite() || r <= 0.0) {
            return Err(Error::InvalidParameter {
                name: "rates",
                reason: "rates must be positive and finite".into(),
            });
        }
        Ok(Self { rates })
    }

    pub fn scalar(rate: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, rate))
    }

    pub fn rates(&self) -> &DVector<f64> {
        &self.rates
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (xi, &l) in x.iter().zip(self.rates.iter()) {
            if *xi <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += l.ln() - l * xi;
        }
        acc
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for (o, &l) in out.iter_mut().zip(self.rates.iter()) {
            let u: f64 = rng.random();
            *o = -(1.0 - u).ln() / l;
        }
    }
}

/// Gaussian-kernel density estimate with a per-coordinate bandwidth.
#[derive(Debug, Clone)]
pub struct Kde {
    rows: Vec<f64>,
    count: usize,
    dim: usize,
    bandwidth: Vec<f64>,
    inv_bw2: Vec<f64>,
    log_norm: f64,
    sorted_1d: Option<Vec<f64>>,
    col_lo: Vec<f64>,
    col_hi: Vec<f64>,
    col_means: Vec<f64>,
    col_stds: Vec<f64>,
}

impl PartialEq for Kde {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.bandwidth == other.bandwidth && self.dim == other.dim
    }
}

impl Kde {
    pub fn new(samples: &SampleMatrix, bandwidth: DVector<f64>) -> Result<Self> {
        let dim = samples.dim();
        if bandwidth.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bandwidth.len(),
            });
        }
        if bandwidth.iter().any(|&h| !h.is_finite() || h <= 0.0) {
            return Err(Error::InvalidParameter {
                name: "bandwidth",
                reason: "bandwidths must be positive".into(),
            });
        }
        let count = samples.count();
        let rows = samples.flat_rows();
        let log_norm = -(count as f64).ln()
            - bandwidth.iter().map(|h| h.ln()).sum::<f64>()
            - 0.5 * dim as f64 * LN_2PI;
        let sorted_1d = if dim == 1 {
            let mut s = rows.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Some(s)
        } else {
            None
        };
        let mut col_lo = vec![f64::INFINITY; dim];
        let mut col_hi = vec![f64::NEG_INFINITY; dim];
        for r in 0..count {
            for j in 0..dim {
                let v = rows[r * dim + j];
                col_lo[j] = col_lo[j].min(v);
                col_hi[j] = col_hi[j].max(v);
            }
        }
        Ok(Self {
            rows,
            count,
            dim,
            inv_bw2: bandwidth.iter().map(|h| 1.0 / (h * h)).collect(),
            bandwidth: bandwidth.iter().cloned().collect(),
            log_norm,
            sorted_1d,
            col_lo,
            col_hi,
            col_means: samples.column_means().iter().cloned().collect(),
            col_stds: samples.column_stds().iter().cloned().collect(),
        })
    }

    /// KDE with the Silverman rule per coordinate:
    /// h_i = 1.06 σ̂_i N^(-1/(n+4)).
    pub fn with_silverman(samples: &SampleMatrix) -> Result<Self> {
        let bw = silverman_bandwidth(samples)?;
        Self::new(samples, bw)
    }

    pub fn bandwidth(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.bandwidth)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Index range of samples within the truncation window (1-D fast path).
    fn window_1d(&self, x: f64) -> (usize, usize) {
        let sorted = self.sorted_1d.as_ref().unwrap();
        let half = KDE_WINDOW * self.bandwidth[0];
        let lo = sorted.partition_point(|&v| v < x - half);
        let hi = sorted.partition_point(|&v| v <= x + half);
        if lo < hi {
            (lo, hi)
        } else {
            // Empty window: fall back to the nearest sample.
            let i = lo.min(self.count - 1);
            let i = if i > 0 && (x - sorted[i - 1]).abs() < (sorted[i] - x).abs() {
                i - 1
            } else {
                i
            };
            (i, i + 1)
        }
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        if self.dim == 1 {
            let sorted = self.sorted_1d.as_ref().unwrap();
            let (lo, hi) = self.window_1d(x[0]);
            let ib2 = self.inv_bw2[0];
            let mut m = f64::NEG_INFINITY;
            for &v in &sorted[lo..hi] {
                let q = -0.5 * (x[0] - v) * (x[0] - v) * ib2;
                m = m.max(q);
            }
            let mut total = 0.0;
            for &v in &sorted[lo..hi] {
                let q = -0.5 * (x[0] - v) * (x[0] - v) * ib2;
                total += (q - m).exp();
            }
            return m + total.ln() + self.log_norm;
        }
        let mut m = f64::NEG_INFINITY;
        let mut qs = vec![0.0; self.count];
        for (k, q) in qs.iter_mut().enumerate() {
            *q = -0.5 * self.sq_dist(k, x);
            m = m.max(*q);
        }
        let total: f64 = qs.iter().map(|q| (q - m).exp()).sum();
        m + total.ln() + self.log_norm
    }

    /// Exact gradient of the log KDE density: the responsibility-weighted
    /// average of the per-kernel Gaussian scores.
    pub fn score_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        if self.dim == 1 {
            let sorted = self.sorted_1d.as_ref().unwrap();
            let (lo, hi) = self.window_1d(x[0]);
            let ib2 = self.inv_bw2[0];
            let mut m = f64::NEG_INFINITY;
            for &v in &sorted[lo..hi] {
                m = m.max(-0.5 * (x[0] - v) * (x[0] - v) * ib2);
            }
            let (mut total, mut num) = (0.0, 0.0);
            for &v in &sorted[lo..hi] {
                let d = x[0] - v;
                let r = (-0.5 * d * d * ib2 - m).exp();
                total += r;
                num += r * (v - x[0]);
            }
            out[0] = num / total * ib2;
            return;
        }
        let mut m = f64::NEG_INFINITY;
        for k in 0..self.count {
            m = m.max(-0.5 * self.sq_dist(k, x));
        }
        let mut total = 0.0;
        out.fill(0.0);
        for k in 0..self.count {
            let r = (-0.5 * self.sq_dist(k, x) - m).exp();
            total += r;
            let row = &self.rows[k * self.dim..(k + 1) * self.dim];
            for j in 0..self.dim {
                out[j] += r * (row[j] - x[j]) * self.inv_bw2[j];
            }
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    #[inline]
    fn sq_dist(&self, k: usize, x: &[f64]) -> f64 {
        let row = &self.rows[k * self.dim..(k + 1) * self.dim];
        let mut q = 0.0;
        for j in 0..self.dim {
            let d = x[j] - row[j];
            q += d * d * self.inv_bw2[j];
        }
        q
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let idx = rng.random_range(0..self.count);
        let row = &self.rows[idx * self.dim..(idx + 1) * self.dim];
        for j in 0..self.dim {
            let z: f64 = rng.sample(StandardNormal);
            out[j] = row[j] + self.bandwidth[j] * z;
        }
    }
}

/// Silverman's rule per coordinate: h_i = 1.06 σ̂_i N^(-1/(n+4)).
pub fn silverman_bandwidth(samples: &SampleMatrix) -> Result<DVector<f64>> {
    if samples.count() < 2 {
        return Err(Error::EmptySamples);
    }
    let n = samples.dim();
    let factor = (samples.count() as f64).powf(-1.0 / (n as f64 + 4.0));
    let stds = samples.column_stds();
    let bw = DVector::from_iterator(
        n,
        stds.iter().map(|&s| {
            let s = if s > 0.0 { s } else { 1.0 };
            1.06 * s * factor
        }),
    );
    Ok(bw)
}

// ---------------------------------------------------------------------------
// The model enum
// ---------------------------------------------------------------------------

/// An evaluable probability density on R^n with a seeded sampler.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityModel {
    Gaussian(Gaussian),
    GaussianMixture(GaussianMixture),
    Exponential(Exponential),
    /// Independent product of 1-D models.
    ProductOfMarginals(Vec<DensityModel>),
    Kde(Kde),
}

impl DensityModel {
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Ok(Self::Gaussian(Gaussian::new(mean, cov)?))
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::Gaussian(Gaussian::standard(dim))
    }

    pub fn product(marginals: Vec<DensityModel>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::InvalidParameter {
                name: "marginals",
                reason: "empty product".into(),
            });
        }
        if marginals.iter().any(|m| m.dim() != 1) {
            return Err(Error::InvalidParameter {
                name: "marginals",
                reason: "product factors must be 1-D".into(),
            });
        }
        Ok(Self::ProductOfMarginals(marginals))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.mean().len(),
            Self::GaussianMixture(m) => m.dim(),
            Self::Exponential(e) => e.rates().len(),
            Self::ProductOfMarginals(ms) => ms.len(),
            Self::Kde(k) => k.dim(),
        }
    }

    /// True for the closed-form families (everything except KDE).
    pub fn is_analytic(&self) -> bool {
        !matches!(self, Self::Kde(_))
    }

    /// log f(x); -inf outside the support.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.log_pdf_raw(x))
    }

    /// f(x); 0 outside the support.
    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_pdf(x)?.exp())
    }

    pub(crate) fn log_pdf_raw(&self, x: &[f64]) -> f64 {
        match self {
            Self::Gaussian(g) => g.log_pdf(x),
            Self::GaussianMixture(m) => m.log_pdf(x),
            Self::Exponential(e) => e.log_pdf(x),
            Self::ProductOfMarginals(ms) => ms
                .iter()
                .zip(x)
                .map(|(m, &xi)| m.log_pdf_raw(std::slice::from_ref(&xi)))
                .sum(),
            Self::Kde(k) => k.log_pdf(x),
        }
    }

    /// Closed-form Stein score for analytic families.
    pub(crate) fn analytic_score_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Self::Gaussian(g) => {
                g.score(x, out);
                Ok(())
            }
            Self::GaussianMixture(m) => {
                m.score(x, out);
                Ok(())
            }
            Self::Exponential(e) => {
                if x.iter().any(|&v| v <= 0.0) {
                    return Err(Error::OutOfSupport(format!("{x:?}")));
                }
                for (o, &l) in out.iter_mut().zip(e.rates().iter()) {
                    *o = -l;
                }
                Ok(())
            }
            Self::ProductOfMarginals(ms) => {
                for (j, m) in ms.iter().enumerate() {
                    let mut s = [0.0];
                    m.analytic_score_into(&x[j..j + 1], &mut s)?;
                    out[j] = s[0];
                }
                Ok(())
            }
            Self::Kde(_) => Err(Error::UnsupportedModel(
                "closed-form score is not defined for KDE models; use kde_score",
            )),
        }
    }

    /// Draw `count` rows; bit-reproducible for a fixed `(model, count, seed)`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<SampleMatrix> {
        if count == 0 {
            return Err(Error::InvalidParameter {
                name: "count",
                reason: "need at least one draw".into(),
            });
        }
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = DMatrix::zeros(count, n);
        let mut row = vec![0.0; n];
        for i in 0..count {
            self.sample_into(&mut rng, &mut row);
            for j in 0..n {
                data[(i, j)] = row[j];
            }
        }
        SampleMatrix::new(data, seed)
    }

    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            Self::Gaussian(g) => g.sample_into(rng, out),
            Self::GaussianMixture(m) => m.sample_into(rng, out),
            Self::Exponential(e) => e.sample_into(rng, out),
            Self::ProductOfMarginals(ms) => {
                for (j, m) in ms.iter().enumerate() {
                    m.sample_into(rng, &mut out[j..j + 1]);
                }
            }
            Self::Kde(k) => k.sample_into(rng, out),
        }
    }

    /// Per-coordinate mean.
    pub fn mean_vector(&self) -> DVector<f64> {
        match self {
            Self::Gaussian(g) => g.mean().clone(),
            Self::GaussianMixture(m) => {
                let n = m.dim();
                let mut mean = DVector::zeros(n);
                for (w, c) in m.weights().iter().zip(m.components()) {
                    mean += c.mean() * *w;
                }
                mean
            }
            Self::Exponential(e) => e.rates().map(|l| 1.0 / l),
            Self::ProductOfMarginals(ms) => {
                DVector::from_iterator(ms.len(), ms.iter().map(|m| m.mean_vector()[0]))
            }
            Self::Kde(k) => DVector::from_column_slice(&k.col_means),
        }
    }

    /// Per-coordinate standard deviation.
    pub fn std_vector(&self) -> DVector<f64> {
        match self {
            Self::Gaussian(g) => g.covariance().diagonal().map(f64::sqrt),
            Self::GaussianMixture(m) => {
                let n = m.dim();
                let mean = self.mean_vector();
                let mut second: DVector<f64> = DVector::zeros(n);
                for (w, c) in m.weights().iter().zip(m.components()) {
                    for j in 0..n {
                        second[j] += w * (c.mean()[j].powi(2) + c.covariance()[(j, j)]);
                    }
                }
                DVector::from_iterator(
                    n,
                    (0..n).map(|j| f64::sqrt(f64::max(second[j] - mean[j].powi(2), 0.0))),
                )
            }
            Self::Exponential(e) => e.rates().map(|l| 1.0 / l),
            Self::ProductOfMarginals(ms) => {
                DVector::from_iterator(ms.len(), ms.iter().map(|m| m.std_vector()[0]))
            }
            Self::Kde(k) => DVector::from_iterator(
                k.dim,
                k.col_stds
                    .iter()
                    .zip(&k.bandwidth)
                    .map(|(s, h)| (s * s + h * h).sqrt()),
            ),
        }
    }

    /// Default integration box per coordinate: mean ± 8σ for unbounded
    /// families, [0, 25/λ] for exponentials, data range ± 8 bandwidths for a
    /// KDE. All choices keep the truncated mass far below quadrature noise.
    pub fn default_box(&self) -> Vec<(f64, f64)> {
        match self {
            Self::Exponential(e) => e.rates().iter().map(|&l| (0.0, 25.0 / l)).collect(),
            Self::ProductOfMarginals(ms) => ms.iter().map(|m| m.default_box()[0]).collect(),
            Self::Kde(k) => (0..k.dim)
                .map(|j| {
                    let pad = KDE_WINDOW * k.bandwidth[j];
                    (k.col_lo[j] - pad, k.col_hi[j] + pad)
                })
                .collect(),
            _ => {
                let mean = self.mean_vector();
                let std = self.std_vector();
                (0..self.dim())
                    .map(|j| (mean[j] - 8.0 * std[j], mean[j] + 8.0 * std[j]))
                    .collect()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Expectation backends
// ---------------------------------------------------------------------------

/// How to realize E_f[·]: a tensor-product Gauss rule over a box, or seeded
/// Monte Carlo. Grid results are deterministic; Monte Carlo is deterministic
/// per seed.
#[derive(Debug, Clone, PartialEq)]
pub enum IntegrationSpec {
    TensorGrid {
        points_per_axis: usize,
        bounds: Vec<(f64, f64)>,
    },
    MonteCarlo {
        draws: usize,
        seed: u64,
    },
}

impl IntegrationSpec {
    pub fn grid(points_per_axis: usize, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if points_per_axis < 16 {
            return Err(Error::InvalidParameter {
                name: "points_per_axis",
                reason: "need at least 16 points per axis".into(),
            });
        }
        if bounds.is_empty()
            || bounds
                .iter()
                .any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi))
        {
            return Err(Error::InvalidParameter {
                name: "bounds",
                reason: "each axis needs lo < hi".into(),
            });
        }
        Ok(Self::TensorGrid {
            points_per_axis,
            bounds,
        })
    }

    pub fn monte_carlo(draws: usize, seed: u64) -> Result<Self> {
        if draws < 1000 {
            return Err(Error::InvalidParameter {
                name: "draws",
                reason: "need at least 1000 draws".into(),
            });
        }
        Ok(Self::MonteCarlo { draws, seed })
    }

    /// Grid over the model's default box with a per-dimension point budget.
    pub fn default_grid(model: &DensityModel) -> Self {
        let pts = default_points_for_dim(model.dim());
        Self::TensorGrid {
            points_per_axis: pts,
            bounds: model.default_box(),
        }
    }

    /// Same point budget as [`default_grid`](Self::default_grid) but over an
    /// explicit box.
    pub fn grid_with_default_points(dim: usize, bounds: Vec<(f64, f64)>) -> Result<Self> {
        Self::grid(default_points_for_dim(dim), bounds)
    }
}

pub fn default_points_for_dim(dim: usize) -> usize {
    match dim {
        1 => 200,
        2 => 120,
        3 => 64,
        _ => 32,
    }
}

/// Per-axis nodes and weights: the axis is split into `points/2` cells, each
/// carrying the two-point Gauss-Legendre rule. Nodes are strictly interior,
/// so support boundaries are never evaluated.
pub(crate) fn axis_nodes(lo: f64, hi: f64, points_per_axis: usize) -> (Vec<f64>, Vec<f64>) {
    let cells = (points_per_axis / 2).max(8);
    let width = (hi - lo) / cells as f64;
    let off = width * 0.5 / 3f64.sqrt();
    let half_w = width * 0.5;
    let mut nodes = Vec::with_capacity(2 * cells);
    let mut weights = Vec::with_capacity(2 * cells);
    for c in 0..cells {
        let center = lo + (c as f64 + 0.5) * width;
        nodes.push(center - off);
        weights.push(half_w);
        nodes.push(center + off);
        weights.push(half_w);
    }
    (nodes, weights)
}

/// Visit every node of the tensor-product rule with its weight.
pub(crate) fn fold_grid<F>(
    bounds: &[(f64, f64)],
    points_per_axis: usize,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(&[f64], f64) -> Result<()>,
{
    let n = bounds.len();
    let axes: Vec<(Vec<f64>, Vec<f64>)> = bounds
        .iter()
        .map(|&(lo, hi)| axis_nodes(lo, hi, points_per_axis))
        .collect();
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    loop {
        let mut w = 1.0;
        for k in 0..n {
            x[k] = axes[k].0[idx[k]];
            w *= axes[k].1[idx[k]];
        }
        visit(&x, w)?;
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < axes[k].0.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == n {
                return Ok(());
            }
        }
    }
}

/// E_f[g(X)] under `model`, realized per `spec`.
///
/// The grid backend integrates `g(x) f(x)` over the box, skipping nodes where
/// the density vanishes; Monte Carlo averages `g` over a seeded sample. Both
/// reduce in a fixed chunked order.
pub fn expectation<F>(model: &DensityModel, mut integrand: F, spec: &IntegrationSpec) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    match spec {
        IntegrationSpec::TensorGrid {
            points_per_axis,
            bounds,
        } => {
            if bounds.len() != model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.dim(),
                    got: bounds.len(),
                });
            }
            let mut acc = ChunkedAcc::new();
            fold_grid(bounds, *points_per_axis, |x, w| {
                let fx = model.log_pdf_raw(x).exp();
                if fx > 0.0 {
                    let gx = integrand(x);
                    if !gx.is_finite() {
                        return Err(Error::NonFiniteIntegrand { at: x.to_vec() });
                    }
                    acc.push(w * fx * gx);
                }
                Ok(())
            })?;
            Ok(acc.finish())
        }
        IntegrationSpec::MonteCarlo { draws, seed } => {
            let samples = model.sample(*draws, *seed)?;
            let mut acc = ChunkedAcc::new();
            let mut row = vec![0.0; model.dim()];
            for i in 0..samples.count() {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = samples.data()[(i, j)];
                }
                let gx = integrand(&row);
                if !gx.is_finite() {
                    return Err(Error::NonFiniteIntegrand { at: row.clone() });
                }
                acc.push(gx);
            }
            Ok(acc.finish() / *draws as f64)
        }
    }
}

pub(crate) fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
pub(crate) use tests::skew_mixture;
