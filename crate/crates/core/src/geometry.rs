//! Fisher-Rao geometry on the tangent space of a density.
//!
//! Tangent vectors are stored in score form s_h = h/f: every metric quantity
//! then reduces to an expectation of score products, so no division by small
//! densities ever happens. Projection onto the covariate subspace (the span of
//! the coordinate scores) solves G w = v and splits the information of a
//! tangent vector into an explained and a residual part.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cfim::{check_invertibility, CovariateFim, Invertibility, DEFAULT_COND_THRESHOLD};
use crate::density::{expectation, fold_grid, DensityModel, IntegrationSpec};
use crate::error::{Error, Result};
use crate::score::ScoreField;
use crate::sum::ChunkedAcc;

// ---------------------------------------------------------------------------
// Polynomials (tangent specifications)
// ---------------------------------------------------------------------------

/// Sparse multivariate polynomial, used to specify tangent directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    /// (coefficient, per-variable exponents); exponent vectors share a length.
    terms: Vec<(f64, Vec<u32>)>,
    dim: usize,
}

impl Polynomial {
    pub fn new(terms: Vec<(f64, Vec<u32>)>, dim: usize) -> Result<Self> {
        if terms.iter().any(|(_, p)| p.len() != dim) {
            return Err(Error::InvalidParameter {
                name: "polynomial",
                reason: "exponent vectors must match the dimension".into(),
            });
        }
        Ok(Self { terms, dim })
    }

    /// Parse expressions like `x1`, `x1^2-1`, or `2*x1 + 0.5*x1*x2^2`.
    /// Variables are 1-based; the dimension is the highest index seen.
    pub fn parse(input: &str) -> Result<Self> {
        let cleaned: String = input.chars().filter(|c| !c.is_whitespace()).collect();
        if cleaned.is_empty() {
            return Err(Error::InvalidParameter {
                name: "polynomial",
                reason: "empty expression".into(),
            });
        }
        // Split into signed terms.
        let mut raw_terms: Vec<(f64, String)> = Vec::new();
        let mut sign = 1.0;
        let mut cur = String::new();
        for (i, c) in cleaned.chars().enumerate() {
            if (c == '+' || c == '-') && i > 0 {
                if cur.is_empty() {
                    return Err(Self::syntax(input));
                }
                raw_terms.push((sign, std::mem::take(&mut cur)));
                sign = if c == '-' { -1.0 } else { 1.0 };
            } else if c == '-' && i == 0 {
                sign = -1.0;
            } else if c == '+' && i == 0 {
                // leading plus, skip
            } else {
                cur.push(c);
            }
        }
        if cur.is_empty() {
            return Err(Self::syntax(input));
        }
        raw_terms.push((sign, cur));

        let mut parsed: Vec<(f64, Vec<(usize, u32)>)> = Vec::new();
        let mut dim = 0usize;
        for (sign, term) in raw_terms {
            let mut coef = sign;
            let mut powers: Vec<(usize, u32)> = Vec::new();
            for factor in term.split('*') {
                if factor.is_empty() {
                    return Err(Self::syntax(input));
                }
                if let Some(rest) = factor.strip_prefix('x') {
                    let (idx_str, pow_str) = match rest.split_once('^') {
                        Some((a, b)) => (a, Some(b)),
                        None => (rest, None),
                    };
                    let idx: usize = idx_str.parse().map_err(|_| Self::syntax(input))?;
                    if idx == 0 {
                        return Err(Self::syntax(input));
                    }
                    let pow: u32 = match pow_str {
                        Some(p) => p.parse().map_err(|_| Self::syntax(input))?,
                        None => 1,
                    };
                    dim = dim.max(idx);
                    powers.push((idx - 1, pow));
                } else {
                    let v: f64 = factor.parse().map_err(|_| Self::syntax(input))?;
                    coef *= v;
                }
            }
            parsed.push((coef, powers));
        }
        let dim = dim.max(1);
        let terms = parsed
            .into_iter()
            .map(|(coef, pows)| {
                let mut dense = vec![0u32; dim];
                for (idx, p) in pows {
                    dense[idx] += p;
                }
                (coef, dense)
            })
            .collect();
        Self::new(terms, dim)
    }

    fn syntax(input: &str) -> Error {
        Error::InvalidParameter {
            name: "polynomial",
            reason: format!("cannot parse {input:?}"),
        }
    }

    /// Random polynomial of total degree ≤ `max_degree` with coefficients in
    /// [-1, 1]; used to generate test tangents.
    pub fn random<R: Rng>(dim: usize, max_degree: u32, rng: &mut R) -> Self {
        let mut terms = Vec::new();
        let n_terms = rng.random_range(1..=4);
        for _ in 0..n_terms {
            let coef: f64 = rng.random_range(-1.0..1.0);
            let mut powers = vec![0u32; dim];
            let mut budget = max_degree;
            for p in powers.iter_mut() {
                let e = rng.random_range(0..=budget);
                *p = e;
                budget -= e;
            }
            terms.push((coef, powers));
        }
        Self { terms, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|(c, _)| *c == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(coef, powers)| {
                coef * powers
                    .iter()
                    .zip(x)
                    .map(|(&p, &v)| v.powi(p as i32))
                    .product::<f64>()
            })
            .sum()
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (coef, powers)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " {} ", if *coef < 0.0 { "-" } else { "+" })?;
            } else if *coef < 0.0 {
                write!(f, "-")?;
            }
            write!(f, "{}", coef.abs())?;
            for (j, &p) in powers.iter().enumerate() {
                if p > 0 {
                    write!(f, "*x{}", j + 1)?;
                    if p > 1 {
                        write!(f, "^{p}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Tangent vectors
// ---------------------------------------------------------------------------

type ScoreFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A tangent direction at a base density, held in score form s_h = h/f.
///
/// Construction enforces the zero-mean constraint E_f[s_h] = 0 exactly on the
/// integration rule used, by subtracting the quadrature mean.
#[derive(Clone)]
pub struct TangentVector {
    base: DensityModel,
    score_form: ScoreFn,
    label: String,
}

impl fmt::Debug for TangentVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TangentVector")
            .field("label", &self.label)
            .field("base_dim", &self.base.dim())
            .finish()
    }
}

impl TangentVector {
    /// Tangent with score form given by a polynomial, mean-centered under the
    /// base on the given integration rule.
    pub fn from_polynomial(
        base: &DensityModel,
        poly: &Polynomial,
        spec: &IntegrationSpec,
    ) -> Result<Self> {
        if poly.dim() > base.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                got: poly.dim(),
            });
        }
        let mean = expectation(base, |x| poly.eval(x), spec)?;
        let p = poly.clone();
        Ok(Self {
            base: base.clone(),
            score_form: Arc::new(move |x| p.eval(x) - mean),
            label: format!("{poly} - {mean:.6e}"),
        })
    }

    /// Tangent lying in the covariate subspace: s_h = wᵀ s(x). Coordinate
    /// scores already have zero mean, so no centering is needed.
    pub fn from_score_combo(base: &DensityModel, weights: &DVector<f64>) -> Result<Self> {
        if weights.len() != base.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                got: weights.len(),
            });
        }
        let field = ScoreField::for_model(base);
        let w = weights.clone();
        Ok(Self {
            base: base.clone(),
            score_form: Arc::new(move |x| {
                field
                    .eval(x)
                    .expect("dimension checked at construction")
                    .dot(&w)
            }),
            label: format!("score combo {:?}", weights.as_slice()),
        })
    }

    /// The zero tangent.
    pub fn zero(base: &DensityModel) -> Self {
        Self {
            base: base.clone(),
            score_form: Arc::new(|_| 0.0),
            label: "zero".into(),
        }
    }

    /// Residual ε = h - wᵀ∇f, i.e. the original score form minus a covariate
    /// combination.
    pub fn minus_score_combo(&self, weights: &DVector<f64>) -> Result<Self> {
        let combo = Self::from_score_combo(&self.base, weights)?;
        let own = self.score_form.clone();
        let other = combo.score_form;
        Ok(Self {
            base: self.base.clone(),
            score_form: Arc::new(move |x| own(x) - other(x)),
            label: format!("{} minus combo", self.label),
        })
    }

    pub fn base(&self) -> &DensityModel {
        &self.base
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Evaluate the score form s_h at a point.
    pub fn score_at(&self, x: &[f64]) -> f64 {
        (self.score_form)(x)
    }
}

/// Outcome of projecting a tangent vector onto the covariate subspace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionResult {
    /// w = G⁻¹ v, the coordinates of the projection in the score basis.
    pub weights: Vec<f64>,
    /// v with entries E[s_h s_j].
    pub cross_info: Vec<f64>,
    /// Explained information vᵀ G⁻¹ v.
    pub explained: f64,
    /// Residual information (total - explained, floored at zero).
    pub residual: f64,
    /// Total information g(h, h).
    pub total: f64,
    /// explained / total, in [0, 1].
    pub capture_ratio: f64,
}

/// g_f(a, b) = E_f[s_a s_b]; symmetric and bilinear.
pub fn fisher_rao_inner(
    base: &DensityModel,
    a: &TangentVector,
    b: &TangentVector,
    spec: &IntegrationSpec,
) -> Result<f64> {
    if a.base != *base || b.base != *base {
        return Err(Error::BaseMismatch);
    }
    expectation(base, |x| a.score_at(x) * b.score_at(x), spec)
}

/// Cross-information vector v with entries v_j = E_f[s_h s_j].
pub fn cross_information_vector(
    base: &DensityModel,
    h: &TangentVector,
    scores: &ScoreField,
    spec: &IntegrationSpec,
) -> Result<DVector<f64>> {
    if h.base != *base {
        return Err(Error::BaseMismatch);
    }
    if scores.dim() != base.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            got: scores.dim(),
        });
    }
    let n = base.dim();
    let mut v = DVector::zeros(n);
    for j in 0..n {
        v[j] = expectation(
            base,
            |x| {
                let s = scores.eval(x).expect("dimension checked");
                h.score_at(x) * s[j]
            },
            spec,
        )?;
    }
    Ok(v)
}

/// Solve G w = v and split the information of `h` into explained + residual.
///
/// `explained = vᵀ G⁻¹ v`, `residual = total - explained`, and
/// `capture_ratio = explained / total`. Errors with the null-space witness if
/// the metric is singular, and with `ZeroTangent` if `h` carries no
/// information.
pub fn project_tangent(
    h: &TangentVector,
    g: &CovariateFim,
    v: &DVector<f64>,
    spec: &IntegrationSpec,
) -> Result<ProjectionResult> {
    if g.dim() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: v.len(),
        });
    }
    let inv = match check_invertibility(g, DEFAULT_COND_THRESHOLD) {
        Invertibility::Invertible(inv) => inv,
        Invertibility::Singular { null_space } => return Err(Error::SingularMetric { null_space }),
    };
    let total = fisher_rao_inner(&h.base, h, h, spec)?;
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ZeroTangent);
    }
    let w = &inv * v;
    let explained = v.dot(&w);
    let residual = (total - explained).max(0.0);
    let capture_ratio = (explained / total).clamp(0.0, 1.0);
    Ok(ProjectionResult {
        weights: w.iter().cloned().collect(),
        cross_info: v.iter().cloned().collect(),
        explained,
        residual,
        total,
        capture_ratio,
    })
}

/// Closed-form Fisher-Rao distance 2·arccos ∫√(f₁ f₂).
///
/// The Bhattacharyya coefficient is computed by plain quadrature over the
/// spec's box (grid backend) or by importance sampling under `f1` (Monte
/// Carlo backend), clamped into [0, 1] before the arccos.
pub fn fisher_rao_distance(
    f1: &DensityModel,
    f2: &DensityModel,
    spec: &IntegrationSpec,
) -> Result<f64> {
    if f1.dim() != f2.dim() {
        return Err(Error::DimensionMismatch {
            expected: f1.dim(),
            got: f2.dim(),
        });
    }
    let bc = match spec {
        IntegrationSpec::TensorGrid {
            points_per_axis,
            bounds,
        } => {
            if bounds.len() != f1.dim() {
                return Err(Error::DimensionMismatch {
                    expected: f1.dim(),
                    got: bounds.len(),
                });
            }
            let mut acc = ChunkedAcc::new();
            fold_grid(bounds, *points_per_axis, |x, w| {
                let l1 = f1.log_pdf_raw(x);
                let l2 = f2.log_pdf_raw(x);
                if l1 > f64::NEG_INFINITY && l2 > f64::NEG_INFINITY {
                    acc.push(w * (0.5 * (l1 + l2)).exp());
                }
                Ok(())
            })?;
            acc.finish()
        }
        mc @ IntegrationSpec::MonteCarlo { .. } => expectation(
            f1,
            |x| {
                let l1 = f1.log_pdf_raw(x);
                let l2 = f2.log_pdf_raw(x);
                if l2 > f64::NEG_INFINITY {
                    (0.5 * (l2 - l1)).exp()
                } else {
                    0.0
                }
            },
            mc,
        )?,
    };
    Ok(2.0 * bc.clamp(0.0, 1.0).acos())
}

/// Bounding box covering both models' default boxes.
pub fn union_box(f1: &DensityModel, f2: &DensityModel) -> Vec<(f64, f64)> {
    f1.default_box()
        .into_iter()
        .zip(f2.default_box())
        .map(|((a_lo, a_hi), (b_lo, b_hi))| (a_lo.min(b_lo), a_hi.max(b_hi)))
        .collect()
}
