//! Covariate information geometry toolkit.
//!
//! The crate turns score-based information geometry into concrete numerics:
//!
//! * [`density`] — evaluable density models (Gaussians, mixtures, exponentials,
//!   products of marginals, kernel density estimates), seeded sampling, and the
//!   quadrature / Monte Carlo expectation backends everything else rests on.
//! * [`score`] — Stein score fields `s(x) = ∇ₓ log f(x)`, computed analytically,
//!   from a KDE, or by finite differences (the built-in oracle).
//! * [`cfim`] — the covariate Fisher information matrix `G = E[s sᵀ]`, its
//!   G-entropy (trace), spectral reports, and the invertibility test.
//! * [`geometry`] — Fisher-Rao inner products, projection of tangent vectors
//!   onto the covariate subspace, the Pythagorean information decomposition,
//!   and the closed-form Fisher-Rao distance.
//! * [`divergence`] — KL divergence by quadrature, coordinate perturbation
//!   curves, and stencil verification of the second- and third-derivative
//!   identities (including the cubic tensor behind KL asymmetry).
//! * [`inference`] — the covariate Cramér-Rao bound, canonical influence
//!   function, replication covariance of estimators, and efficiency ratios.
//! * [`manifold`] — synthetic manifold data with known intrinsic dimension and
//!   the spectral-gap manifold-hypothesis test.
//!
//! All operations are pure functions of their inputs; anything randomized takes
//! an explicit seed and is bit-reproducible.

pub mod cfim;
pub mod density;
pub mod divergence;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod manifold;
pub mod score;

mod sum;

pub use cfim::{
    check_invertibility, empirical_cfim, g_entropy, quadrature_cfim, spectrum, CovariateFim,
    Invertibility, ScoreSource, SpectralReport,
};
pub use density::{
    expectation, DensityModel, Exponential, Gaussian, GaussianMixture, IntegrationSpec, Kde,
    SampleMatrix,
};
pub use divergence::{
    asymmetry_check, cubic_tensor, default_step, gentropy_via_kl, kl_derivatives, kl_divergence,
    AsymmetryReport, DerivativeReport, KlDirection, PerturbationCurve,
};
pub use error::{Error, Result};
pub use geometry::{
    cross_information_vector, fisher_rao_distance, fisher_rao_inner, project_tangent, Polynomial,
    ProjectionResult, TangentVector,
};
pub use inference::{
    canonical_influence, covariate_crlb, efficiency_ratio, efficiency_report, estimator_covariance,
    EfficiencyReport, EstimatorSpec, ScoreMethod,
};
pub use manifold::{
    dominance_ratio, generate_manifold_data, jacobian_congruence_check, mh_test, mh_test_local,
    ManifoldKind, ManifoldSpec, MhDecision, MhReport,
};
