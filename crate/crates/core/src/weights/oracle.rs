//! Pathwise oracle for the weighted one-step operator.
//!
//! Instead of integrating the payoff against a closed-form weight, this
//! simulates the Brownian path on a fine grid, forms the expansion
//! coefficients `∂^k_ε X|₀ / k!` from discretized iterated integrals, and
//! averages the expansion before integration by parts:
//!
//! ```text
//! E f(X̄) + ε² E[f′(X̄) X₂] + ε³ E[f′(X̄) X₃] + ½ ε⁴ E[f″(X̄) X₂²]
//! ```
//!
//! For calls and puts `f″` is a point mass at the strike, so the last term is
//! `p^{X̄}(K) · E[X₂² | X̄ = K]`, estimated on the same path turned into a
//! Brownian bridge pinned where `X̄ = K`.

use crate::error::{invalid, AewError, Result};
use crate::estimate::{simulate, MethodDescriptor, PriceEstimate, PricingMode};
use crate::models::{LocalVolCev, LogNormalSabr, PayoffKind, PayoffSpec, UnderlyingMap};
use crate::rng::{normal_pdf, RngStream};

use crate::models::ModelSpec;

/// Default Brownian grid of the oracle.
pub const ORACLE_STEPS: usize = 1024;

/// Oracle estimates for several payoffs from one set of paths.
/// `by_order[i][m]` is the order-`m` price of payoff `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub by_order: Vec<Vec<PriceEstimate>>,
}

/// The order-`m` oracle price of one payoff with the default grid.
pub fn weight_oracle_mc(
    model: &ModelSpec,
    m: u8,
    t: f64,
    x: &[f64],
    payoff: &PayoffSpec,
    paths: u64,
    stream: &RngStream,
) -> Result<PriceEstimate> {
    let report = match model {
        ModelSpec::LocalVol(lv) => local_vol_oracle(lv, t, x[0], &[*payoff], paths, ORACLE_STEPS, stream)?,
        ModelSpec::Sabr(s) => {
            let vol = *x.get(1).ok_or_else(|| invalid("x", "SABR anchor needs (log-spot, vol)"))?;
            sabr_oracle(s, t, x[0], vol, &[*payoff], paths, ORACLE_STEPS, stream)?
        }
    };
    report.by_order[0]
        .get(m as usize)
        .copied()
        .ok_or(AewError::UnsupportedOrder(m))
}

fn check_common(t: f64, paths: u64, steps: usize) -> Result<()> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("must be positive, got {t}")));
    }
    if paths < 2 {
        return Err(invalid("paths", "need at least 2"));
    }
    if steps == 0 {
        return Err(invalid("steps", "need at least 1"));
    }
    Ok(())
}

/// Level-payoff derivative and point-mass weight at the strike.
#[inline]
fn point_mass(p: &PayoffSpec) -> f64 {
    match p.kind {
        PayoffKind::Identity => 0.0,
        _ => 1.0,
    }
}

/// Local-vol oracle for orders 0, 1, 2 at anchor `x`.
pub fn local_vol_oracle(
    model: &LocalVolCev,
    t: f64,
    x: f64,
    payoffs: &[PayoffSpec],
    paths: u64,
    steps: usize,
    stream: &RngStream,
) -> Result<OracleReport> {
    check_common(t, paths, steps)?;
    if payoffs.iter().any(|p| p.underlying_map != UnderlyingMap::Level) {
        return Err(invalid("payoff", "the local-vol oracle reads the spot level"));
    }
    let eps = model.epsilon;
    let s = model.sigma(x)?;
    let ds = model.dsigma_unchecked(x);
    let d2s = model.d2sigma_unchecked(x);
    let scale = eps * s;
    let sd = scale * t.sqrt();
    let dt = t / steps as f64;
    let sq = dt.sqrt();
    // Brownian coordinate where X̄ hits each strike, and the proxy density there
    let pins: Vec<(f64, f64)> = payoffs
        .iter()
        .map(|p| {
            let wk = (p.strike - x) / scale;
            (wk, normal_pdf((p.strike - x) / sd) / sd * point_mass(p))
        })
        .collect();

    let width = 3 * payoffs.len();
    let stats = simulate(paths, width, |path, out| {
        let mut rng = stream.path(path);
        let (mut b, mut i1, mut i21, mut j, mut q) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..steps {
            let db = sq * rng.next_normal();
            i21 += i1 * db;
            j += b * b * db;
            i1 += b * db;
            q += db * db;
            b += db;
        }
        let xbar = x + scale * b;
        let x2 = s * ds * i1;
        let x3 = s * ds * ds * i21 + 0.5 * s * s * d2s * j;
        for (k, p) in payoffs.iter().enumerate() {
            let f = p.eval_first(xbar);
            let fp = p.deriv_first(xbar);
            // ∫B dB of the bridge pinned at w_K, from the same increments:
            // Σ (ΔB − c dt)² = q − 2c dt·b + c² dt·t with c = (b − w_K)/t
            let (wk, dens) = pins[k];
            let c = (b - wk) / t;
            let qb = q - 2.0 * c * dt * b + c * c * dt * t;
            let x2_bridge = s * ds * 0.5 * (wk * wk - qb);
            let o1 = eps * eps * fp * x2;
            let o2 = eps.powi(3) * fp * x3 + 0.5 * eps.powi(4) * dens * x2_bridge * x2_bridge;
            out[3 * k] = f;
            out[3 * k + 1] = f + o1;
            out[3 * k + 2] = f + o1 + o2;
        }
    });
    Ok(OracleReport {
        by_order: collect(&stats, payoffs.len(), 3, stream.seed()),
    })
}

fn collect(stats: &[crate::estimate::SampleStats], count: usize, orders: usize, seed: u64) -> Vec<Vec<PriceEstimate>> {
    (0..count)
        .map(|k| {
            (0..orders)
                .map(|m| {
                    PriceEstimate::sampled(
                        &stats[orders * k + m],
                        seed,
                        MethodDescriptor::new(m as u8, 1, 1.0, PricingMode::Oracle),
                    )
                })
                .collect()
        })
        .collect()
}

/// Test function on the SABR state: value and gradient at `(y1, y2)`.
pub type SabrTestFn<'a> = dyn Fn(f64, f64) -> (f64, [f64; 2]) + Sync + 'a;

/// SABR oracle for orders 0 and 1 at anchor `(x, σ)` for log-spot payoffs.
#[allow(clippy::too_many_arguments)]
pub fn sabr_oracle(
    model: &LogNormalSabr,
    t: f64,
    x: f64,
    sigma: f64,
    payoffs: &[PayoffSpec],
    paths: u64,
    steps: usize,
    stream: &RngStream,
) -> Result<OracleReport> {
    let fns: Vec<Box<SabrTestFn>> = payoffs
        .iter()
        .map(|p| {
            let p = *p;
            Box::new(move |y1: f64, _y2: f64| (p.eval_first(y1), [p.deriv_first(y1), 0.0])) as Box<SabrTestFn>
        })
        .collect();
    let refs: Vec<&SabrTestFn> = fns.iter().map(|b| b.as_ref()).collect();
    sabr_oracle_fn(model, t, x, sigma, &refs, paths, steps, stream)
}

/// SABR oracle for arbitrary differentiable test functions of `(X₁, σ)`.
#[allow(clippy::too_many_arguments)]
pub fn sabr_oracle_fn(
    model: &LogNormalSabr,
    t: f64,
    x: f64,
    sigma: f64,
    fns: &[&SabrTestFn],
    paths: u64,
    steps: usize,
    stream: &RngStream,
) -> Result<OracleReport> {
    check_common(t, paths, steps)?;
    if !(sigma > 0.0) {
        return Err(invalid("sigma", "anchor volatility must be positive"));
    }
    let (eps, eta, rho) = (model.nu, model.eta, model.rho);
    let rb = model.rho_bar();
    let dt = t / steps as f64;
    let sq = dt.sqrt();
    let stats = simulate(paths, 2 * fns.len(), |path, out| {
        let mut rng = stream.path(path);
        let (mut b1, mut z, mut int_z_dt, mut int_z_db1) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..steps {
            let d1 = sq * rng.next_normal();
            let d2 = sq * rng.next_normal();
            let dz = rho * d1 + rb * d2;
            int_z_dt += (z + 0.5 * dz) * dt;
            int_z_db1 += z * d1;
            b1 += d1;
            z += dz;
        }
        let y1 = x - 0.5 * eps * eta * sigma * sigma * t + eps * eta * sigma * b1;
        let y2 = sigma + eps * sigma * z;
        let x1_2 = -eta * sigma * sigma * int_z_dt + eta * sigma * int_z_db1;
        let sig_2 = 0.5 * sigma * (z * z - t);
        for (k, f) in fns.iter().enumerate() {
            let (v, g) = f(y1, y2);
            out[2 * k] = v;
            out[2 * k + 1] = v + eps * eps * (g[0] * x1_2 + g[1] * sig_2);
        }
    });
    Ok(OracleReport {
        by_order: collect(&stats, fns.len(), 2, stream.seed()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_local_vol, build_sabr};
    use crate::quadrature::GaussianIntegrator;
    use crate::weights::{LocalVolWeight, SabrTwoDimWeight};

    #[test]
    fn local_vol_identity_and_bachelier() {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        let s = RngStream::new(11, 0);
        let r = local_vol_oracle(&lv, 1.0, 100.0, &[PayoffSpec::identity(), PayoffSpec::call(100.0)], 40_000, 32, &s)
            .unwrap();
        for m in 0..3 {
            let e = r.by_order[0][m];
            assert!((e.value - 100.0).abs() < 3.0 * e.std_err, "m={m} {e:?}");
        }
        let bach = 40.0 / (2.0 * std::f64::consts::PI).sqrt();
        let e = r.by_order[1][0];
        assert!((e.value - bach).abs() < 3.0 * e.std_err);
    }

    #[test]
    fn local_vol_closed_forms_match_oracle() {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        let strikes = [60.0, 100.0, 140.0];
        let payoffs: Vec<_> = strikes.iter().map(|k| PayoffSpec::call(*k)).collect();
        let r = local_vol_oracle(&lv, 1.0, 100.0, &payoffs, 200_000, 128, &RngStream::new(5, 0)).unwrap();
        let gi = GaussianIntegrator::default();
        for (k, p) in payoffs.iter().enumerate() {
            for m in 1..=2u8 {
                let w = LocalVolWeight::new(m, &lv, 1.0, 100.0).unwrap();
                let closed = gi.expect(100.0, 40.0, &[p.strike], |y| p.eval_first(y) * w.at(y));
                let o = r.by_order[k][m as usize];
                assert!(
                    (closed - o.value).abs() < 3.5 * o.std_err + 0.01,
                    "K={} m={m}: closed {closed} oracle {} ± {}",
                    p.strike,
                    o.value,
                    o.std_err
                );
            }
        }
    }

    #[test]
    fn sabr_two_dim_weight_matches_oracle_with_vol_dependence() {
        let model = build_sabr(100.0, 0.3, 0.1, -0.5).unwrap();
        let t = 1.0;
        let (x, s) = (model.x0, model.sigma0);
        // a test function that reads both coordinates
        let f = |y1: f64, y2: f64| {
            let e = y1.exp();
            let c = (e - 100.0).max(0.0);
            let dc = if e > 100.0 { e } else { 0.0 };
            (c * y2 / 0.3 * y2 / 0.3, [dc * (y2 / 0.3).powi(2), c * 2.0 * y2 / 0.09])
        };
        let r = sabr_oracle_fn(&model, t, x, s, &[&f], 200_000, 128, &RngStream::new(3, 0)).unwrap();
        let w = SabrTwoDimWeight::new(&model, t, x, s).unwrap();
        let gh = crate::quadrature::GaussHermite::new(96);
        let rb = model.rho_bar();
        let gi = GaussianIntegrator::default();
        let mean1 = x - 0.5 * s * s * t;
        let closed = gi.expect(0.0, 1.0, &[(100f64.ln() - mean1) / (s * t.sqrt())], |g| {
            let b = g * t.sqrt();
            let y1 = mean1 + s * b;
            gh.expect(model.rho * b, rb * t.sqrt(), |z| {
                let y2 = s + 0.1 * s * z;
                f(y1, y2).0 * w.at_coordinates(b, z)
            })
        });
        let o = r.by_order[0][1];
        assert!((closed - o.value).abs() < 3.5 * o.std_err + 0.01, "closed {closed} oracle {o:?}");
    }
}
