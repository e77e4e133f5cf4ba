//! Euler–Maruyama benchmark prices, plus a Crank–Nicolson reference for the
//! one-dimensional local volatility model.

mod pde;

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DVector;

use crate::error::{invalid, AewError, Result};
use crate::estimate::{simulate, MethodDescriptor, PriceEstimate, PricingMode};
use crate::models::{LocalVolCev, LogNormalSabr, ModelSpec, PayoffSpec, VectorFieldSet};
use crate::pricer::MIN_PATHS;
use crate::rng::RngStream;

pub use pde::{pde_price_local_vol, PdeOptions};

/// Fraction of `s0` below which the local volatility is evaluated at the floor.
pub const SPOT_FLOOR_FRACTION: f64 = 1e-8;

fn check_run(maturity: f64, steps: usize, paths: u64) -> Result<()> {
    if !(maturity > 0.0 && maturity.is_finite()) {
        return Err(invalid("maturity", format!("must be positive, got {maturity}")));
    }
    if steps == 0 {
        return Err(invalid("steps", "need at least one time step"));
    }
    if paths < MIN_PATHS {
        return Err(invalid("paths", format!("need at least {MIN_PATHS}, got {paths}")));
    }
    Ok(())
}

fn descriptor(steps: usize) -> MethodDescriptor {
    MethodDescriptor::new(0, steps, 1.0, PricingMode::EulerMaruyama)
}

/// Lowest exploding path index, or `u64::MAX` when every path stayed finite.
struct ExplosionGuard(AtomicU64);

impl ExplosionGuard {
    fn new() -> Self {
        Self(AtomicU64::new(u64::MAX))
    }

    fn record(&self, path: u64) {
        self.0.fetch_min(path, Ordering::Relaxed);
    }

    fn check(&self) -> Result<()> {
        match self.0.load(Ordering::Relaxed) {
            u64::MAX => Ok(()),
            path => Err(AewError::StateExplosion { path }),
        }
    }
}

/// Euler–Maruyama price of one payoff. See [`em_prices`].
pub fn em_price(
    model: &ModelSpec,
    x0: &[f64],
    payoff: &PayoffSpec,
    maturity: f64,
    steps: usize,
    paths: u64,
    stream: &RngStream,
) -> Result<PriceEstimate> {
    Ok(em_prices(model, x0, std::slice::from_ref(payoff), maturity, steps, paths, stream)?[0])
}

/// Prices every payoff on one shared set of simulated paths.
///
/// Local volatility steps `S += ε σ(max(S, floor)) ΔB` with
/// `floor = 1e-8·s0`. SABR steps the volatility exactly as a geometric
/// Brownian motion and the log-spot by Euler with the `−εησ²/2` drift. Path
/// `p` reads the substream `stream.path(p)`, so estimates are reproducible
/// for any thread count.
pub fn em_prices(
    model: &ModelSpec,
    x0: &[f64],
    payoffs: &[PayoffSpec],
    maturity: f64,
    steps: usize,
    paths: u64,
    stream: &RngStream,
) -> Result<Vec<PriceEstimate>> {
    check_run(maturity, steps, paths)?;
    if x0.len() != model.initial_state().len() || x0.iter().any(|v| !v.is_finite()) {
        return Err(invalid("x0", "initial state has the wrong dimension or is not finite"));
    }
    let guard = ExplosionGuard::new();
    let stats = match model {
        ModelSpec::LocalVol(m) => em_local_vol(m, x0[0], payoffs, maturity, steps, paths, stream, &guard),
        ModelSpec::Sabr(m) => em_sabr(m, [x0[0], x0[1]], payoffs, maturity, steps, paths, stream, &guard),
    };
    guard.check()?;
    Ok(stats
        .iter()
        .map(|s| PriceEstimate::sampled(s, stream.seed(), descriptor(steps)))
        .collect())
}

/// `σ(max(s, floor))` with the power evaluated once per call site.
fn floored_sigma(model: &LocalVolCev) -> impl Fn(f64) -> f64 + Sync {
    let floor = SPOT_FLOOR_FRACTION * model.s0;
    let beta = model.beta;
    let scale = model.s0.powf(1.0 - beta);
    move |s: f64| {
        let s = s.max(floor);
        if beta == 1.0 {
            s
        } else if beta == 0.5 {
            scale * s.sqrt()
        } else {
            scale * s.powf(beta)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn em_local_vol(
    model: &LocalVolCev,
    s0: f64,
    payoffs: &[PayoffSpec],
    maturity: f64,
    steps: usize,
    paths: u64,
    stream: &RngStream,
    guard: &ExplosionGuard,
) -> Vec<crate::estimate::SampleStats> {
    let sigma = floored_sigma(model);
    let vol_dt = model.epsilon * (maturity / steps as f64).sqrt();
    simulate(paths, payoffs.len(), |p, out| {
        let mut rng = stream.path(p);
        let mut s = s0;
        for _ in 0..steps {
            s += vol_dt * sigma(s) * rng.next_normal();
        }
        if !s.is_finite() {
            guard.record(p);
            out.fill(0.0);
            return;
        }
        for (o, f) in out.iter_mut().zip(payoffs) {
            *o = f.eval_first(s);
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn em_sabr(
    model: &LogNormalSabr,
    x0: [f64; 2],
    payoffs: &[PayoffSpec],
    maturity: f64,
    steps: usize,
    paths: u64,
    stream: &RngStream,
    guard: &ExplosionGuard,
) -> Vec<crate::estimate::SampleStats> {
    let dt = maturity / steps as f64;
    let sq = dt.sqrt();
    let eps = model.nu;
    let eta = model.eta;
    let (rho, rho_bar) = (model.rho, model.rho_bar());
    let vol_drift = -0.5 * eps * eps * dt;
    simulate(paths, payoffs.len(), |p, out| {
        let mut rng = stream.path(p);
        let (mut x, mut v) = (x0[0], x0[1]);
        for _ in 0..steps {
            let db1 = sq * rng.next_normal();
            let db2 = sq * rng.next_normal();
            x += eps * eta * v * (db1 - 0.5 * v * dt);
            v *= (vol_drift + eps * (rho * db1 + rho_bar * db2)).exp();
        }
        if !(x.is_finite() && v.is_finite()) {
            guard.record(p);
            out.fill(0.0);
            return;
        }
        for (o, f) in out.iter_mut().zip(payoffs) {
            *o = f.eval_first(x);
        }
    })
}

/// Local volatility Euler–Maruyama with a control variate per payoff.
///
/// The control is the second-order Taylor proxy
/// `Y = s0 + εσ B_T + ½ ε² σσ′ (B_T² − T)` driven by the same increments,
/// whose payoff expectation is a one-dimensional Gaussian integral. The
/// regression coefficient is estimated from the same paths, which biases the
/// estimate by `O(1/paths)`. Level-mapped payoffs only.
pub fn em_prices_local_vol_cv(
    model: &LocalVolCev,
    s0: f64,
    payoffs: &[PayoffSpec],
    maturity: f64,
    steps: usize,
    paths: u64,
    stream: &RngStream,
) -> Result<Vec<PriceEstimate>> {
    check_run(maturity, steps, paths)?;
    if payoffs.iter().any(|p| p.underlying_map != crate::models::UnderlyingMap::Level) {
        return Err(invalid("payoff", "the control variate needs Level-mapped payoffs"));
    }
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(invalid("s0", format!("must be positive, got {s0}")));
    }
    let sigma = floored_sigma(model);
    let eps = model.epsilon;
    let (a1, a2) = (eps * model.sigma_unchecked(s0), 0.5 * eps * eps * model.sigma_unchecked(s0) * model.dsigma_unchecked(s0));
    let control = move |b: f64| s0 + a1 * b + a2 * (b * b - maturity);
    let sq = (maturity / steps as f64).sqrt();
    let guard = ExplosionGuard::new();
    let width = payoffs.len();
    // slots per payoff: f, g, f + g
    let stats = simulate(paths, 3 * width, |p, out| {
        let mut rng = stream.path(p);
        let mut s = s0;
        let mut b = 0.0;
        for _ in 0..steps {
            let db = sq * rng.next_normal();
            s += eps * sigma(s) * db;
            b += db;
        }
        if !s.is_finite() {
            guard.record(p);
            out.fill(0.0);
            return;
        }
        let y = control(b);
        for (i, f) in payoffs.iter().enumerate() {
            let (fv, gv) = (f.eval_first(s), f.eval_first(y));
            out[3 * i] = fv;
            out[3 * i + 1] = gv;
            out[3 * i + 2] = fv + gv;
        }
    });
    guard.check()?;
    let gi = crate::quadrature::GaussianIntegrator::new(64);
    let n = paths as f64;
    Ok(payoffs
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let (sf, sg, ss) = (&stats[3 * i], &stats[3 * i + 1], &stats[3 * i + 2]);
            let (vf, vg) = (sf.variance(), sg.variance());
            let cov = 0.5 * (ss.variance() - vf - vg);
            let beta = if vg > 0.0 { cov / vg } else { 0.0 };
            let exact = control_expectation(f, s0, a1, a2, maturity, &gi);
            let value = sf.mean - beta * (sg.mean - exact);
            let var = (vf - 2.0 * beta * cov + beta * beta * vg).max(0.0);
            PriceEstimate {
                value,
                std_err: (var / n).sqrt(),
                paths,
                seed: stream.seed(),
                method: MethodDescriptor::new(0, steps, 1.0, PricingMode::EulerMaruyamaCv),
            }
        })
        .collect())
}

/// `E f(s0 + a1 B + a2 (B² − T))` for `B ~ N(0, T)`, split at the points
/// where the proxy crosses the strike.
fn control_expectation(f: &PayoffSpec, s0: f64, a1: f64, a2: f64, t: f64, gi: &crate::quadrature::GaussianIntegrator) -> f64 {
    let c = s0 - a2 * t - f.strike;
    let mut breaks = Vec::new();
    if a2 == 0.0 {
        if a1 != 0.0 {
            breaks.push(-c / a1);
        }
    } else {
        let disc = a1 * a1 - 4.0 * a2 * c;
        if disc >= 0.0 {
            let r = disc.sqrt();
            breaks.push((-a1 - r) / (2.0 * a2));
            breaks.push((-a1 + r) / (2.0 * a2));
            breaks.sort_by(f64::total_cmp);
        }
    }
    gi.expect(0.0, t.sqrt(), &breaks, |b| f.eval_first(s0 + a1 * b + a2 * (b * b - t)))
}

/// Euler–Maruyama for an arbitrary vector-field set, using the full drift
/// `V0(ε, x)` and diffusions `ε V_j(x)`. Slower than [`em_prices`]; meant for
/// models without a dedicated simulator.
pub fn em_prices_generic(
    model: &dyn VectorFieldSet,
    x0: &[f64],
    payoffs: &[PayoffSpec],
    maturity: f64,
    steps: usize,
    paths: u64,
    stream: &RngStream,
) -> Result<Vec<PriceEstimate>> {
    check_run(maturity, steps, paths)?;
    if x0.len() != model.state_dim() {
        return Err(invalid("x0", format!("expected {} coordinates", model.state_dim())));
    }
    let dt = maturity / steps as f64;
    let sq = dt.sqrt();
    let eps = model.epsilon();
    let d = model.noise_dim();
    let guard = ExplosionGuard::new();
    let stats = simulate(paths, payoffs.len(), |p, out| {
        let mut rng = stream.path(p);
        let mut x = DVector::from_column_slice(x0);
        let mut ok = true;
        for _ in 0..steps {
            let mut next = match model.drift(eps, &x) {
                Ok(b) => &x + b * dt,
                Err(_) => {
                    ok = false;
                    break;
                }
            };
            for j in 0..d {
                match model.diffusion(j, &x) {
                    Ok(v) => next += v * (eps * sq * rng.next_normal()),
                    Err(_) => ok = false,
                }
            }
            x = next;
            if !ok || x.iter().any(|v| !v.is_finite()) {
                ok = false;
                break;
            }
        }
        if !ok {
            guard.record(p);
            out.fill(0.0);
            return;
        }
        for (o, f) in out.iter_mut().zip(payoffs) {
            *o = f.eval(x.as_slice());
        }
    });
    guard.check()?;
    Ok(stats
        .iter()
        .map(|s| PriceEstimate::sampled(s, stream.seed(), descriptor(steps)))
        .collect())
}
