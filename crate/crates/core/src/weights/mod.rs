//! Malliavin weight functions `M^m(t, x, y)`.
//!
//! The one-step operator integrates a payoff against `M^m · p^{X̄}`, where
//! `p^{X̄}` is the proxy density. Every closed form here is checked against
//! [`oracle`], which prices the same expansion pathwise before any
//! integration by parts.

pub mod hermite;
pub mod local_vol;
pub mod oracle;
pub mod sabr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, AewError, Result};
use crate::models::{LocalVolCev, LogNormalSabr, ModelSpec};
use crate::quadrature::GaussHermite;

pub use hermite::{cond_exp_iter2, cond_exp_iter3, hermite, hermite_table, nested_overlap2, nested_overlap3};
pub use local_vol::LocalVolWeight;
pub use oracle::{weight_oracle_mc, OracleReport};
pub use sabr::{SabrMarginalWeight, SabrTwoDimWeight};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightTag {
    LocalVolM0,
    LocalVolM1,
    LocalVolM2,
    SabrM1TwoDim,
    SabrM1Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SabrWeightKind {
    TwoDim,
    Marginal,
}

/// An evaluatable weight `M^m(t, x, y)` bound to its model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFunction {
    tag: WeightTag,
    model: ModelSpec,
}

impl WeightFunction {
    pub fn local_vol(model: &LocalVolCev, m: u8) -> Result<Self> {
        let tag = match m {
            0 => WeightTag::LocalVolM0,
            1 => WeightTag::LocalVolM1,
            2 => WeightTag::LocalVolM2,
            _ => return Err(AewError::UnsupportedOrder(m)),
        };
        Ok(Self {
            tag,
            model: ModelSpec::LocalVol(*model),
        })
    }

    pub fn sabr(model: &LogNormalSabr, kind: SabrWeightKind) -> Self {
        let tag = match kind {
            SabrWeightKind::TwoDim => WeightTag::SabrM1TwoDim,
            SabrWeightKind::Marginal => WeightTag::SabrM1Marginal,
        };
        Self {
            tag,
            model: ModelSpec::Sabr(*model),
        }
    }

    pub fn tag(&self) -> WeightTag {
        self.tag
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn order(&self) -> u8 {
        match self.tag {
            WeightTag::LocalVolM0 => 0,
            WeightTag::LocalVolM2 => 2,
            _ => 1,
        }
    }

    /// Dimension of the terminal value `y` the weight reads.
    pub fn target_dim(&self) -> usize {
        match self.tag {
            WeightTag::SabrM1TwoDim => 2,
            _ => 1,
        }
    }

    /// `M^m(t, x, y)`. For SABR `x = (log-spot, vol)`; the marginal weight
    /// reads only `y[0]`.
    pub fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        if y.len() < self.target_dim() {
            return Err(invalid("y", format!("expected {} coordinates", self.target_dim())));
        }
        match (&self.model, self.tag) {
            (ModelSpec::LocalVol(m), _) => Ok(LocalVolWeight::new(self.order(), m, t, x[0])?.at(y[0])),
            (ModelSpec::Sabr(m), WeightTag::SabrM1TwoDim) => {
                Ok(SabrTwoDimWeight::new(m, t, x[0], sabr_anchor_vol(x)?)?.at(y[0], y[1]))
            }
            (ModelSpec::Sabr(m), _) => Ok(SabrMarginalWeight::new(m, t, x[0], sabr_anchor_vol(x)?)?.at(y[0])),
        }
    }

    /// `∫ M^m(t, x, y) p^{X̄}(t, x, y) dy` by Gauss–Hermite with `nodes`
    /// points per dimension. Equals one for a correctly normalized weight.
    pub fn normalization(&self, t: f64, x: &[f64], nodes: usize) -> Result<f64> {
        let gh = GaussHermite::new(nodes);
        let sd = t.sqrt();
        match (&self.model, self.tag) {
            (ModelSpec::LocalVol(m), _) => {
                let w = LocalVolWeight::new(self.order(), m, t, x[0])?;
                Ok(gh.expect(0.0, sd, |b| w.at_w(b)))
            }
            (ModelSpec::Sabr(m), WeightTag::SabrM1TwoDim) => {
                let w = SabrTwoDimWeight::new(m, t, x[0], sabr_anchor_vol(x)?)?;
                let rb = m.rho_bar();
                Ok(gh.expect(0.0, sd, |b| gh.expect(m.rho * b, rb * sd, |z| w.at_coordinates(b, z))))
            }
            (ModelSpec::Sabr(m), _) => {
                let w = SabrMarginalWeight::new(m, t, x[0], sabr_anchor_vol(x)?)?;
                Ok(gh.expect(0.0, sd, |b| w.at_coordinate(b)))
            }
        }
    }

    /// Intervals of `y` (first coordinate) within `span_sd` proxy standard
    /// deviations of the proxy mean where the signed kernel `M^m p^{X̄}` is
    /// negative, scanned on `points` equally spaced values. The two-dimensional
    /// weight is scanned along `y₁` with the volatility at its proxy mean.
    pub fn negative_regions(&self, t: f64, x: &[f64], span_sd: f64, points: usize) -> Result<Vec<(f64, f64)>> {
        if points < 2 {
            return Err(invalid("points", "need at least 2"));
        }
        let (mean, sd, f): (f64, f64, Box<dyn Fn(f64) -> f64>) = match (&self.model, self.tag) {
            (ModelSpec::LocalVol(m), _) => {
                let w = LocalVolWeight::new(self.order(), m, t, x[0])?;
                (x[0], w.proxy_sd(), Box::new(move |y| w.at(y)))
            }
            (ModelSpec::Sabr(m), tag) => {
                let wm = SabrMarginalWeight::new(m, t, x[0], sabr_anchor_vol(x)?)?;
                let (mean, sd) = (wm.proxy_mean(), wm.proxy_sd());
                if tag == WeightTag::SabrM1TwoDim {
                    let w = SabrTwoDimWeight::new(m, t, x[0], x[1])?;
                    let vol = x[1];
                    (mean, sd, Box::new(move |y| w.at(y, vol)))
                } else {
                    (mean, sd, Box::new(move |y| wm.at(y)))
                }
            }
        };
        let lo = mean - span_sd * sd;
        let step = 2.0 * span_sd * sd / (points - 1) as f64;
        let mut out = Vec::new();
        let mut open: Option<f64> = None;
        let mut last = lo;
        for i in 0..points {
            let y = lo + step * i as f64;
            let neg = f(y) < 0.0;
            match (neg, open) {
                (true, None) => open = Some(y),
                (false, Some(a)) => {
                    out.push((a, last));
                    open = None;
                }
                _ => {}
            }
            last = y;
        }
        if let Some(a) = open {
            out.push((a, last));
        }
        Ok(out)
    }
}

fn sabr_anchor_vol(x: &[f64]) -> Result<f64> {
    x.get(1)
        .copied()
        .ok_or_else(|| invalid("x", "SABR anchor needs (log-spot, vol)"))
}

/// `M^m(t, x, y)` for the local volatility model.
pub fn weight_local_vol(m: u8, model: &LocalVolCev, t: f64, x: f64, y: f64) -> Result<f64> {
    Ok(LocalVolWeight::new(m, model, t, x)?.at(y))
}

/// First-order SABR weight at anchor `x = (log-spot, vol)`. `y` has two
/// coordinates for [`SabrWeightKind::TwoDim`] and one (log-spot) otherwise.
pub fn weight_sabr(kind: SabrWeightKind, model: &LogNormalSabr, t: f64, x: [f64; 2], y: &[f64]) -> Result<f64> {
    WeightFunction::sabr(model, kind).eval(t, &x, y)
}
