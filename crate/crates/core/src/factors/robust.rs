use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    None,
    Cauchy,
    Huber,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(LossKind::None),
            "cauchy" => Ok(LossKind::Cauchy),
            "huber" => Ok(LossKind::Huber),
            other => Err(Error::config("loss", format!("unknown loss `{other}`"))),
        }
    }
}

/// M-estimator applied to the squared whitened norm `s` of a residual block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustLoss {
    pub kind: LossKind,
    pub scale: f64,
}

impl Default for RobustLoss {
    fn default() -> Self {
        Self { kind: LossKind::None, scale: 1.0 }
    }
}

impl RobustLoss {
    pub fn new(kind: LossKind, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::config("loss.scale", "must be strictly positive"));
        }
        Ok(Self { kind, scale })
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// Loss value `rho(s)`; equals `s` for the quadratic loss.
    pub fn rho(&self, s: f64) -> f64 {
        let c2 = self.scale * self.scale;
        match self.kind {
            LossKind::None => s,
            LossKind::Cauchy => c2 * (s / c2).ln_1p(),
            LossKind::Huber => {
                if s <= c2 {
                    s
                } else {
                    2.0 * self.scale * s.sqrt() - c2
                }
            }
        }
    }

    /// IRLS weight `rho'(s)`.
    pub fn weight(&self, s: f64) -> f64 {
        let c2 = self.scale * self.scale;
        match self.kind {
            LossKind::None => 1.0,
            LossKind::Cauchy => 1.0 / (1.0 + s / c2),
            LossKind::Huber => {
                if s <= c2 {
                    1.0
                } else {
                    self.scale / s.sqrt()
                }
            }
        }
    }
}

/// Whitened residual after reweighting.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustResidual {
    /// `sqrt(w) L^-1 r`.
    pub whitened: DVector<f64>,
    pub weight: f64,
    /// `rho(|L^-1 r|^2)`.
    pub cost: f64,
}

/// Inverse Cholesky factor `L^-1` of a covariance, so that `L^-1 r` is white.
pub fn sqrt_information(covariance: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = covariance.nrows();
    let chol = covariance
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateInput("covariance is not positive definite".into()))?;
    let l = chol.l();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::DegenerateInput("singular covariance factor".into()))
}

pub fn apply_robust(residual: &DVector<f64>, covariance: &DMatrix<f64>, loss: &RobustLoss) -> Result<RobustResidual> {
    let white = sqrt_information(covariance)? * residual;
    let s = white.norm_squared();
    let weight = loss.weight(s);
    Ok(RobustResidual {
        whitened: white * weight.sqrt(),
        weight,
        cost: loss.rho(s),
    })
}
