//! Closed-form first-order weights for the perturbed log-SABR model.
//!
//! Write `ξ = (b, z) = (B¹_t, Z_t)` with `Z = ρB¹ + ρ̄B²`, so `ξ ~ N(0, C)`,
//! `C = t[[1, ρ], [ρ, 1]]`, and `u = C⁻¹ξ`. The proxy is
//!
//! ```text
//! X̄₁ = x − εησ²t/2 + εησ b,     σ̄ = σ + εσ z.
//! ```
//!
//! The second-order coefficients have conditional means
//!
//! ```text
//! E[½∂²_ε X₁|₀ | ξ] = −ησ² t z/2 + ησ (b z − ρt)/2
//! E[½∂²_ε σ|₀  | ξ] = σ (z² − t)/2
//! ```
//!
//! and applying the Gaussian divergence `∂*_i g = u_i g − ∂_i g` gives
//!
//! ```text
//! M¹ = 1 + ε { u₁ (b z − ρt − σ t z)/2 − z/2 + u₂ (z² − t)/2 − z }.
//! ```
//!
//! Averaging over `z | b ~ N(ρb, ρ̄²t)` leaves the marginal weight on the
//! log-spot coordinate alone:
//!
//! ```text
//! M̂¹ = 1 + ερ [ h3(b; t)/(2t) − σ h2(b; t)/2 ].
//! ```

use crate::error::{invalid, Result};
use crate::models::LogNormalSabr;

use super::hermite::hermite_table;

fn check_step(t: f64, sigma: f64) -> Result<()> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("must be positive, got {t}")));
    }
    if !(sigma > 0.0) {
        return Err(invalid("sigma", format!("anchor volatility must be positive, got {sigma}")));
    }
    Ok(())
}

/// Weight on the joint proxy `(X̄₁, σ̄)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SabrTwoDimWeight {
    eps: f64,
    eps_eta: f64,
    rho: f64,
    t: f64,
    x: f64,
    sigma: f64,
    /// 1 / (t (1 − ρ²))
    inv_det: f64,
}

impl SabrTwoDimWeight {
    /// Anchored at `(x, σ)`; the model supplies ε, η and ρ.
    pub fn new(model: &LogNormalSabr, t: f64, x: f64, sigma: f64) -> Result<Self> {
        check_step(t, sigma)?;
        let rho = model.rho;
        Ok(Self {
            eps: model.nu,
            eps_eta: model.nu * model.eta,
            rho,
            t,
            x,
            sigma,
            inv_det: 1.0 / (t * (1.0 - rho * rho)),
        })
    }

    /// Gaussian coordinates `(b, z)` of a proxy value `(y1, y2)`.
    #[inline]
    pub fn coordinates(&self, y1: f64, y2: f64) -> (f64, f64) {
        let s = self.sigma;
        let b = (y1 - self.x + 0.5 * self.eps_eta * s * s * self.t) / (self.eps_eta * s);
        let z = (y2 - s) / (self.eps * s);
        (b, z)
    }

    /// Weight in Gaussian coordinates.
    #[inline]
    pub fn at_coordinates(&self, b: f64, z: f64) -> f64 {
        let (t, rho, s) = (self.t, self.rho, self.sigma);
        let u1 = (b - rho * z) * self.inv_det;
        let u2 = (z - rho * b) * self.inv_det;
        let g = 0.5 * (b * z - rho * t - s * t * z);
        1.0 + self.eps * (u1 * g - 0.5 * z + 0.5 * u2 * (z * z - t) - z)
    }

    #[inline]
    pub fn at(&self, y1: f64, y2: f64) -> f64 {
        let (b, z) = self.coordinates(y1, y2);
        self.at_coordinates(b, z)
    }
}

/// Weight on the log-spot proxy `X̄₁` alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SabrMarginalWeight {
    eps: f64,
    eps_eta: f64,
    rho: f64,
    t: f64,
    x: f64,
    sigma: f64,
}

impl SabrMarginalWeight {
    pub fn new(model: &LogNormalSabr, t: f64, x: f64, sigma: f64) -> Result<Self> {
        check_step(t, sigma)?;
        Ok(Self {
            eps: model.nu,
            eps_eta: model.nu * model.eta,
            rho: model.rho,
            t,
            x,
            sigma,
        })
    }

    /// Mean of `X̄₁`.
    pub fn proxy_mean(&self) -> f64 {
        self.x - 0.5 * self.eps_eta * self.sigma * self.sigma * self.t
    }

    /// Standard deviation of `X̄₁`.
    pub fn proxy_sd(&self) -> f64 {
        self.eps_eta * self.sigma * self.t.sqrt()
    }

    #[inline]
    pub fn coordinate(&self, y1: f64) -> f64 {
        (y1 - self.proxy_mean()) / (self.eps_eta * self.sigma)
    }

    #[inline]
    pub fn at_coordinate(&self, b: f64) -> f64 {
        let t = self.t;
        let h = hermite_table(b, t);
        1.0 + self.eps * self.rho * (h[3] / (2.0 * t) - 0.5 * self.sigma * h[2])
    }

    #[inline]
    pub fn at(&self, y1: f64) -> f64 {
        self.at_coordinate(self.coordinate(y1))
    }
}
