//! JSON model and manifold specifications accepted on the command line.

use anyhow::{bail, Context};
use covgeom::{DensityModel, Exponential, Gaussian, GaussianMixture, ManifoldKind, ManifoldSpec};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Externally tagged model description, e.g.
/// `{"gaussian": {"mean": [0], "cov": [[1]]}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpecJson {
    Gaussian(GaussianJson),
    GaussianMixture {
        weights: Vec<f64>,
        components: Vec<GaussianJson>,
    },
    Exponential {
        rates: Vec<f64>,
    },
    Product {
        marginals: Vec<ModelSpecJson>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianJson {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

fn to_matrix(rows: &[Vec<f64>]) -> anyhow::Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        bail!("matrix rows must be non-empty and rectangular");
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

impl GaussianJson {
    fn build(&self) -> anyhow::Result<Gaussian> {
        let mean = DVector::from_column_slice(&self.mean);
        let cov = to_matrix(&self.cov)?;
        Ok(Gaussian::new(mean, cov)?)
    }
}

impl ModelSpecJson {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        serde_json::from_str(text).context("cannot parse --model JSON")
    }

    pub fn build(&self) -> anyhow::Result<DensityModel> {
        Ok(match self {
            Self::Gaussian(g) => DensityModel::Gaussian(g.build()?),
            Self::GaussianMixture {
                weights,
                components,
            } => {
                let comps = components
                    .iter()
                    .map(|c| c.build())
                    .collect::<anyhow::Result<Vec<_>>>()?;
                DensityModel::GaussianMixture(GaussianMixture::new(weights.clone(), comps)?)
            }
            Self::Exponential { rates } => {
                DensityModel::Exponential(Exponential::new(DVector::from_column_slice(rates))?)
            }
            Self::Product { marginals } => {
                let ms = marginals
                    .iter()
                    .map(|m| m.build())
                    .collect::<anyhow::Result<Vec<_>>>()?;
                DensityModel::product(ms)?
            }
        })
    }
}

/// Externally tagged manifold description, e.g.
/// `{"circle": {"radius": 1.0, "ambient": 2, "noise": 0.05}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldSpecJson {
    Circle {
        radius: f64,
        ambient: usize,
        noise: f64,
    },
    LinearEmbedding {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
        noise: f64,
    },
    Helix {
        noise: f64,
    },
}

impl ManifoldSpecJson {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        serde_json::from_str(text).context("cannot parse --manifold JSON")
    }

    pub fn build(&self) -> anyhow::Result<ManifoldSpec> {
        Ok(match self {
            Self::Circle {
                radius,
                ambient,
                noise,
            } => ManifoldSpec::new(
                ManifoldKind::Circle {
                    radius: *radius,
                    ambient: *ambient,
                },
                *noise,
            )?,
            Self::LinearEmbedding {
                matrix,
                offset,
                noise,
            } => ManifoldSpec::new(
                ManifoldKind::LinearEmbedding {
                    matrix: to_matrix(matrix)?,
                    offset: DVector::from_column_slice(offset),
                },
                *noise,
            )?,
            Self::Helix { noise } => ManifoldSpec::new(ManifoldKind::Helix, *noise)?,
        })
    }
}
