//! Single-index conditional distribution models.
//!
//! A model describes the law of `Y` given `X = x` through the scalar index
//! `u = xᵀβ`: a density `f(y, u)`, its distribution function `h(y, u)` and
//! the index derivative `∂h/∂u`. The lasso additionally needs the first two
//! index derivatives of `-log f`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

pub trait ConditionalModel: Send + Sync {
    /// `f(y, u)`.
    fn density(&self, y: f64, u: f64) -> f64;

    /// `h(y, u) = ∫_{-∞}^{y} f(t, u) dt`.
    fn cdf(&self, y: f64, u: f64) -> f64;

    /// `∂h(y, u)/∂u`.
    fn cdf_index_deriv(&self, y: f64, u: f64) -> f64;

    /// `-log f(y, u)` without underflow checks.
    fn neg_log_density_raw(&self, y: f64, u: f64) -> f64;

    /// `∂/∂u` of `-log f(y, u)`.
    fn nll_index_grad(&self, y: f64, u: f64) -> f64;

    /// `∂²/∂u²` of `-log f(y, u)`. Must be positive for the lasso to apply.
    fn nll_index_curvature(&self, y: f64, u: f64) -> f64;

    /// `-log f(y, u)`, failing when the density underflows to zero.
    fn neg_log_density(&self, y: f64, u: f64) -> Result<f64> {
        check_finite(y, u, "neg_log_density")?;
        if self.density(y, u) <= 0.0 {
            return Err(Error::DensityUnderflow { y, u });
        }
        Ok(self.neg_log_density_raw(y, u))
    }

    fn checked_cdf(&self, y: f64, u: f64) -> Result<f64> {
        check_finite(y, u, "cdf")?;
        Ok(self.cdf(y, u))
    }

    fn checked_cdf_index_deriv(&self, y: f64, u: f64) -> Result<f64> {
        check_finite(y, u, "cdf_index_deriv")?;
        Ok(self.cdf_index_deriv(y, u))
    }
}

fn check_finite(y: f64, u: f64, what: &'static str) -> Result<()> {
    if y.is_finite() && u.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// `Y | X = x ~ N(xᵀβ, σ²)` with a fixed response scale `σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalLinearModel {
    response_scale: f64,
}

impl Default for NormalLinearModel {
    fn default() -> Self {
        Self { response_scale: 1.0 }
    }
}

impl NormalLinearModel {
    pub fn new(response_scale: f64) -> Result<Self> {
        if !(response_scale.is_finite() && response_scale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "response scale must be positive, got {response_scale}"
            )));
        }
        Ok(Self { response_scale })
    }

    pub fn response_scale(&self) -> f64 {
        self.response_scale
    }
}

impl ConditionalModel for NormalLinearModel {
    #[inline]
    fn density(&self, y: f64, u: f64) -> f64 {
        let s = self.response_scale;
        normal::pdf((y - u) / s) / s
    }

    #[inline]
    fn cdf(&self, y: f64, u: f64) -> f64 {
        normal::cdf((y - u) / self.response_scale)
    }

    #[inline]
    fn cdf_index_deriv(&self, y: f64, u: f64) -> f64 {
        -self.density(y, u)
    }

    #[inline]
    fn neg_log_density_raw(&self, y: f64, u: f64) -> f64 {
        let s = self.response_scale;
        let z = (y - u) / s;
        0.5 * z * z + (s * (2.0 * std::f64::consts::PI).sqrt()).ln()
    }

    #[inline]
    fn nll_index_grad(&self, y: f64, u: f64) -> f64 {
        let s2 = self.response_scale * self.response_scale;
        -(y - u) / s2
    }

    #[inline]
    fn nll_index_curvature(&self, _y: f64, _u: f64) -> f64 {
        1.0 / (self.response_scale * self.response_scale)
    }
}
