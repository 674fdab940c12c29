//! The covariate Fisher information matrix G = E_f[s sᵀ], its trace
//! (G-entropy), spectral reports, and the invertibility test.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::density::{expectation, fold_grid, DensityModel, IntegrationSpec, SampleMatrix};
use crate::error::{Error, Result};
use crate::score::ScoreField;
use crate::sum::CHUNK;

/// Eigenvalues below -1e-10·λ₁ signal a numeric bug (the matrix is PSD by
/// construction); anything in (-1e-10·λ₁, 0) is round-off and gets clipped.
const PSD_SLACK: f64 = 1e-10;

/// Floor applied to ratio denominators when hunting for the spectral gap.
const RATIO_FLOOR: f64 = 1e-12;

/// Provenance of the scores that built a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Analytic,
    Kde,
    FiniteDifference,
    Quadrature,
    External,
}

/// Symmetric positive-semidefinite score Gram matrix with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateFim {
    matrix: DMatrix<f64>,
    sample_count: usize,
    score_source: ScoreSource,
}

impl CovariateFim {
    /// Wrap a square matrix, symmetrizing (M + Mᵀ)/2 against accumulation
    /// round-off.
    pub fn from_matrix(
        matrix: DMatrix<f64>,
        sample_count: usize,
        score_source: ScoreSource,
    ) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::ShapeMismatch {
                what: "cfim",
                expected: (matrix.nrows(), matrix.nrows()),
                got: (matrix.nrows(), matrix.ncols()),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "cfim",
                reason: "non-finite entry".into(),
            });
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        Ok(Self {
            matrix: sym,
            sample_count,
            score_source,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn score_source(&self) -> ScoreSource {
        self.score_source
    }

    /// Total explainable information: Tr(G).
    pub fn g_entropy(&self) -> f64 {
        g_entropy(self)
    }

    pub fn spectrum(&self) -> SpectralReport {
        spectrum(self)
    }

    pub fn invertibility(&self, cond_threshold: f64) -> Invertibility {
        check_invertibility(self, cond_threshold)
    }

    /// JSON-ready view combining the matrix with its spectral summary.
    pub fn report(&self) -> CfimReport {
        let spec = self.spectrum();
        CfimReport {
            n: self.dim(),
            matrix: (0..self.dim())
                .map(|i| (0..self.dim()).map(|j| self.matrix[(i, j)]).collect())
                .collect(),
            eigenvalues: spec.eigenvalues.clone(),
            gap_index: spec.gap_index,
            dominance_ratio: spec.dominance_ratio,
            g_entropy: self.g_entropy(),
        }
    }
}

/// Serializable cFIM summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CfimReport {
    pub n: usize,
    pub matrix: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub gap_index: usize,
    pub dominance_ratio: f64,
    pub g_entropy: f64,
}

/// Sorted eigenstructure of a cFIM plus the spectral-gap quantities.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Descending, with round-off negatives clipped to zero.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal columns matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    /// 1-based k maximizing λ_k/λ_{k+1} (first maximum on ties); 1 for 1×1.
    pub gap_index: usize,
    pub gap_ratio: f64,
    /// Σ_{k ≤ gap_index} λ_k / Σ λ_k.
    pub dominance_ratio: f64,
    /// True when round-off negatives were clipped.
    pub negatives_clipped: bool,
}

/// Ĝ = (1/N) Σ s(X_k) s(X_k)ᵀ over the sample rows, symmetrized.
pub fn empirical_cfim(scores: &ScoreField, samples: &SampleMatrix) -> Result<CovariateFim> {
    if scores.dim() != samples.dim() {
        return Err(Error::DimensionMismatch {
            expected: scores.dim(),
            got: samples.dim(),
        });
    }
    let n = samples.dim();
    let evals = scores.eval_batch(samples)?;
    // Fixed-order chunked accumulation keeps the result bit-stable.
    let mut partials: Vec<DMatrix<f64>> = Vec::new();
    let mut acc = DMatrix::zeros(n, n);
    for (i, s) in evals.iter().enumerate() {
        acc.syger(1.0, s, s, 1.0);
        if (i + 1) % CHUNK == 0 {
            partials.push(std::mem::replace(&mut acc, DMatrix::zeros(n, n)));
        }
    }
    partials.push(acc);
    let mut total = DMatrix::zeros(n, n);
    for p in partials {
        total += p;
    }
    total /= samples.count() as f64;
    // syger fills the lower triangle; mirror it.
    for i in 0..n {
        for j in (i + 1)..n {
            total[(i, j)] = total[(j, i)];
        }
    }
    CovariateFim::from_matrix(total, samples.count(), scores.source_tag())
}

/// Entrywise quadrature of E_f[s_i s_j] for an analytic model; the oracle for
/// [`empirical_cfim`].
pub fn quadrature_cfim(model: &DensityModel, spec: &IntegrationSpec) -> Result<CovariateFim> {
    if !model.is_analytic() {
        return Err(Error::UnsupportedModel(
            "quadrature cfim needs a closed-form score; KDE models go through empirical_cfim",
        ));
    }
    let n = model.dim();
    match spec {
        IntegrationSpec::TensorGrid {
            points_per_axis,
            bounds,
        } => {
            if bounds.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: bounds.len(),
                });
            }
            let mut partials: Vec<DMatrix<f64>> = Vec::new();
            let mut acc = DMatrix::zeros(n, n);
            let mut s = vec![0.0; n];
            let mut visited = 0usize;
            fold_grid(bounds, *points_per_axis, |x, w| {
                let fx = model.log_pdf_raw(x).exp();
                if fx > 0.0 {
                    model.analytic_score_into(x, &mut s)?;
                    let sv = DVector::from_column_slice(&s);
                    acc.syger(w * fx, &sv, &sv, 1.0);
                    visited += 1;
                    if visited.is_multiple_of(CHUNK) {
                        partials.push(std::mem::replace(&mut acc, DMatrix::zeros(n, n)));
                    }
                }
                Ok(())
            })?;
            partials.push(acc);
            let mut total = DMatrix::zeros(n, n);
            for p in partials {
                total += p;
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    total[(i, j)] = total[(j, i)];
                }
            }
            CovariateFim::from_matrix(total, 0, ScoreSource::Quadrature)
        }
        IntegrationSpec::MonteCarlo { .. } => {
            let mut total = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = expectation(
                        model,
                        |x| {
                            let mut s = vec![0.0; n];
                            model
                                .analytic_score_into(x, &mut s)
                                .map(|_| s[i] * s[j])
                                .unwrap_or(f64::NAN)
                        },
                        spec,
                    )?;
                    total[(i, j)] = v;
                    total[(j, i)] = v;
                }
            }
            CovariateFim::from_matrix(total, 0, ScoreSource::Quadrature)
        }
    }
}

/// Trace identity: the G-entropy of the model behind `G`.
pub fn g_entropy(g: &CovariateFim) -> f64 {
    g.matrix.trace()
}

/// Symmetric eigendecomposition sorted descending, with the spectral-gap
/// index, its ratio, and the dominance ratio at the gap.
///
/// Panics if an eigenvalue is below -1e-10·λ₁: the matrix is PSD in exact
/// arithmetic, so that signals a bug upstream, and the offending matrix is
/// included in the panic message.
pub fn spectrum(g: &CovariateFim) -> SpectralReport {
    let n = g.dim();
    let eig = SymmetricEigen::new(g.matrix.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let raw: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let top = raw[0].max(0.0);
    let mut negatives_clipped = false;
    let eigenvalues: Vec<f64> = raw
        .iter()
        .map(|&l| {
            if l < 0.0 {
                assert!(
                    l >= -PSD_SLACK * top.max(f64::MIN_POSITIVE),
                    "eigenvalue {l:.6e} violates positive semidefiniteness; matrix:\n{}",
                    g.matrix
                );
                negatives_clipped = true;
                0.0
            } else {
                l
            }
        })
        .collect();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        eigenvectors.set_column(col, &eig.eigenvectors.column(k));
    }
    let (gap_index, gap_ratio) = if n == 1 {
        (1, 1.0)
    } else {
        let mut best = (1usize, f64::NEG_INFINITY);
        for k in 1..n {
            let denom = eigenvalues[k].max(RATIO_FLOOR * top.max(f64::MIN_POSITIVE));
            let ratio = eigenvalues[k - 1] / denom;
            if ratio > best.1 {
                best = (k, ratio);
            }
        }
        best
    };
    let total: f64 = eigenvalues.iter().sum();
    let dominance_ratio = if total > 0.0 {
        eigenvalues[..gap_index].iter().sum::<f64>() / total
    } else {
        1.0
    };
    SpectralReport {
        eigenvalues,
        eigenvectors,
        gap_index,
        gap_ratio,
        dominance_ratio,
        negatives_clipped,
    }
}

/// Outcome of the linear-independence test on the score coordinates.
#[derive(Debug, Clone)]
pub enum Invertibility {
    /// Metric is positive definite at the working precision; carries G⁻¹.
    Invertible(DMatrix<f64>),
    /// Metric is singular; columns witness the dependent score directions.
    Singular { null_space: DMatrix<f64> },
}

/// Eigenvalue-based invertibility test: invertible iff λ_min/λ_max stays
/// above 1/cond_threshold, otherwise the near-null eigenvectors are returned
/// as the dependence witness.
pub fn check_invertibility(g: &CovariateFim, cond_threshold: f64) -> Invertibility {
    let spec = spectrum(g);
    let n = g.dim();
    let top = spec.eigenvalues[0];
    let cutoff = if top > 0.0 { top / cond_threshold } else { 0.0 };
    let null_cols: Vec<usize> = (0..n)
        .filter(|&k| spec.eigenvalues[k] <= cutoff || spec.eigenvalues[k] == 0.0)
        .collect();
    if null_cols.is_empty() {
        let mut inv = DMatrix::zeros(n, n);
        for k in 0..n {
            let v = spec.eigenvectors.column(k);
            inv.syger(
                1.0 / spec.eigenvalues[k],
                &v.into_owned(),
                &v.into_owned(),
                1.0,
            );
        }
        for i in 0..n {
            for j in (i + 1)..n {
                inv[(i, j)] = inv[(j, i)];
            }
        }
        Invertibility::Invertible(inv)
    } else {
        let mut null_space = DMatrix::zeros(n, null_cols.len());
        for (col, &k) in null_cols.iter().enumerate() {
            null_space.set_column(col, &spec.eigenvectors.column(k));
        }
        Invertibility::Singular { null_space }
    }
}

/// Default condition-number threshold for [`check_invertibility`].
pub const DEFAULT_COND_THRESHOLD: f64 = 1e10;
