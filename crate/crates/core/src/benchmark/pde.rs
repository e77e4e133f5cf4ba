//! Crank–Nicolson solver for `u_τ = ½ ε² σ(S)² u_SS` on `[0, S_max]`.
//!
//! The origin is absorbing because `σ(0) = 0`, and the upper edge carries the
//! payoff as a Dirichlet value. Two Rannacher half-steps of implicit Euler
//! damp the payoff kink, the payoff is cell-averaged, and a Richardson step
//! over `(h, Δτ)` and `(h/2, Δτ/2)` removes the second-order error.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::estimate::{MethodDescriptor, PriceEstimate, PricingMode};
use crate::models::{LocalVolCev, PayoffKind, PayoffSpec, UnderlyingMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeOptions {
    /// Spatial step as a fraction of `s0` on the coarse grid.
    pub space_step_fraction: f64,
    /// Time steps on the coarse grid.
    pub time_steps: usize,
    /// `S_max = s0 + span_sd · ε σ(s0) √T`.
    pub span_sd: f64,
    pub richardson: bool,
}

impl Default for PdeOptions {
    fn default() -> Self {
        Self {
            space_step_fraction: 1.0 / 800.0,
            time_steps: 400,
            span_sd: 12.0,
            richardson: true,
        }
    }
}

/// Reference prices of Level-mapped payoffs under the local volatility model.
pub fn pde_price_local_vol(
    model: &LocalVolCev,
    payoffs: &[PayoffSpec],
    maturity: f64,
    opts: &PdeOptions,
) -> Result<Vec<PriceEstimate>> {
    if !(maturity > 0.0 && maturity.is_finite()) {
        return Err(invalid("maturity", format!("must be positive, got {maturity}")));
    }
    if !(opts.space_step_fraction > 0.0) || opts.time_steps < 4 || !(opts.span_sd > 0.0) {
        return Err(invalid("opts", "need a positive step fraction, span and at least 4 time steps"));
    }
    if payoffs.iter().any(|p| p.underlying_map != UnderlyingMap::Level) {
        return Err(invalid("payoff", "the local volatility solver prices Level-mapped payoffs only"));
    }
    let s0 = model.s0;
    let h = opts.space_step_fraction * s0;
    let sd = model.epsilon * s0 * maturity.sqrt();
    let cells = ((s0 + opts.span_sd * sd) / h).ceil() as usize;
    let method = MethodDescriptor::new(0, opts.time_steps, 1.0, PricingMode::Pde);
    Ok(payoffs
        .par_iter()
        .map(|p| {
            let coarse = solve(model, p, maturity, h, cells, opts.time_steps);
            let value = if opts.richardson {
                let fine = solve(model, p, maturity, 0.5 * h, 2 * cells, 2 * opts.time_steps);
                (4.0 * fine - coarse) / 3.0
            } else {
                coarse
            };
            PriceEstimate::deterministic(value, method)
        })
        .collect())
}

/// `(1/h) ∫ f` over `[a, b]` for a payoff that is linear away from its kink.
fn cell_average(p: &PayoffSpec, a: f64, b: f64) -> f64 {
    let mid = |lo: f64, hi: f64| (hi - lo) * p.eval_first(0.5 * (lo + hi));
    let total = match p.kind {
        PayoffKind::Identity => mid(a, b),
        _ if a < p.strike && p.strike < b => mid(a, p.strike) + mid(p.strike, b),
        _ => mid(a, b),
    };
    total / (b - a)
}

fn solve(model: &LocalVolCev, payoff: &PayoffSpec, maturity: f64, h: f64, cells: usize, steps: usize) -> f64 {
    let m = cells;
    let s = |i: usize| i as f64 * h;
    let mut u: Vec<f64> = (0..=m)
        .map(|i| {
            if i == 0 || i == m {
                payoff.eval_first(s(i))
            } else {
                cell_average(payoff, s(i) - 0.5 * h, s(i) + 0.5 * h)
            }
        })
        .collect();
    let upper = payoff.eval_first(s(m));
    let lower = payoff.eval_first(0.0);
    // λ_i = ½ ε² σ(S_i)² / h², so L u_i = λ_i (u_{i+1} − 2u_i + u_{i−1})
    let lambda: Vec<f64> = (0..=m)
        .map(|i| {
            let v = if i == 0 { 0.0 } else { model.epsilon * model.sigma_unchecked(s(i)) };
            0.5 * v * v / (h * h)
        })
        .collect();
    let dt = maturity / steps as f64;
    let mut work = Tridiagonal::new(m + 1);
    // Rannacher start: the first two steps become four implicit half-steps
    for _ in 0..4 {
        step(&mut u, &lambda, 0.5 * dt, 1.0, lower, upper, &mut work);
    }
    for _ in 2..steps {
        step(&mut u, &lambda, dt, 0.5, lower, upper, &mut work);
    }
    let x = model.s0 / h;
    let i = x.round();
    if (x - i).abs() < 1e-9 {
        return u[i as usize];
    }
    // cubic Lagrange through the four surrounding nodes
    let base = (x.floor() as usize).clamp(1, m - 2) - 1;
    let mut value = 0.0;
    for j in 0..4 {
        let mut l = 1.0;
        for k in 0..4 {
            if k != j {
                l *= (x - (base + k) as f64) / (j as f64 - k as f64);
            }
        }
        value += l * u[base + j];
    }
    value
}

struct Tridiagonal {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    rhs: Vec<f64>,
}

impl Tridiagonal {
    fn new(n: usize) -> Self {
        Self {
            sub: vec![0.0; n],
            diag: vec![0.0; n],
            sup: vec![0.0; n],
            rhs: vec![0.0; n],
        }
    }

    /// Thomas algorithm; overwrites `diag` and `rhs`, solution lands in `out`.
    fn solve_into(&mut self, out: &mut [f64]) {
        let n = self.diag.len();
        for i in 1..n {
            let w = self.sub[i] / self.diag[i - 1];
            self.diag[i] -= w * self.sup[i - 1];
            self.rhs[i] -= w * self.rhs[i - 1];
        }
        out[n - 1] = self.rhs[n - 1] / self.diag[n - 1];
        for i in (0..n - 1).rev() {
            out[i] = (self.rhs[i] - self.sup[i] * out[i + 1]) / self.diag[i];
        }
    }
}

/// One θ-scheme step: `(I − θΔτL) u⁺ = (I + (1−θ)ΔτL) u`.
fn step(u: &mut [f64], lambda: &[f64], dt: f64, theta: f64, lower: f64, upper: f64, t: &mut Tridiagonal) {
    let n = u.len();
    t.diag[0] = 1.0;
    t.sup[0] = 0.0;
    t.rhs[0] = lower;
    t.diag[n - 1] = 1.0;
    t.sub[n - 1] = 0.0;
    t.rhs[n - 1] = upper;
    for i in 1..n - 1 {
        let a = theta * dt * lambda[i];
        let b = (1.0 - theta) * dt * lambda[i];
        t.sub[i] = -a;
        t.diag[i] = 1.0 + 2.0 * a;
        t.sup[i] = -a;
        t.rhs[i] = u[i] + b * (u[i + 1] - 2.0 * u[i] + u[i - 1]);
    }
    t.solve_into(u);
}
