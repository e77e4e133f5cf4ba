//! Error rates, convergence fits, the error-transfer laws and the γ search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{chain_price_1d, GridSpec, DEFAULT_SPATIAL_NODES};
use crate::error::{invalid, AewError, Result};
use crate::estimate::{MethodDescriptor, PriceEstimate};
use crate::models::{LocalVolCev, PayoffSpec};

/// The γ values of the published sweeps.
pub const SWEEP_GAMMAS: [f64; 6] = [0.1, 0.33, 0.5, 1.0, 1.5, 2.0];

/// Strikes 50, 60, …, 200.
pub fn strike_grid() -> Vec<f64> {
    (5..=20).map(|i| 10.0 * i as f64).collect()
}

/// Put below the spot and call at or above it.
pub fn otm_payoff(strike: f64, spot: f64) -> PayoffSpec {
    if strike < spot {
        PayoffSpec::put(strike)
    } else {
        PayoffSpec::call(strike)
    }
}

/// The sweep values plus 0.80, 0.85, …, 1.30, sorted without duplicates.
pub fn gamma_search_grid() -> Vec<f64> {
    let mut g: Vec<f64> = SWEEP_GAMMAS.to_vec();
    g.extend((0..=10).map(|i| (80.0 + 5.0 * i as f64) / 100.0));
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// `100 (weak − bench) / bench`.
pub fn error_rate(weak: f64, bench: f64) -> Result<f64> {
    if bench == 0.0 {
        return Err(AewError::ZeroBenchmark);
    }
    Ok(100.0 * (weak - bench) / bench)
}

/// Error at `n + 1` steps predicted from the error at `n`: `err (n/(n+1))^{m/2}`.
pub fn predict_error_next_n(err: f64, m: u8, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    Ok(err * (n as f64 / (n + 1) as f64).powf(0.5 * m as f64))
}

/// Error at order `m + 1` predicted from order `m`: `err ε / √n`.
pub fn predict_error_next_m(err: f64, epsilon: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
    }
    Ok(err * epsilon / (n as f64).sqrt())
}

/// Least-squares slope of `log error` against `log n`.
pub fn convergence_slope(errors: &[(usize, f64)]) -> Result<f64> {
    if errors.len() < 3 {
        return Err(invalid("errors", "need at least 3 points"));
    }
    if let Some((n, e)) = errors.iter().find(|(n, e)| !(*e > 0.0) || *n == 0) {
        return Err(invalid("errors", format!("n = {n} has a non-positive entry ({e})")));
    }
    let pts: Vec<(f64, f64)> = errors.iter().map(|(n, e)| ((*n as f64).ln(), e.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("errors", "all n are equal"));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

/// One line of an error report: a method's price against a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReportRow {
    pub strike: f64,
    pub method: MethodDescriptor,
    pub weak_price: f64,
    pub benchmark_price: f64,
    pub benchmark_se: f64,
    pub error_rate_pct: f64,
    /// `|weak − benchmark|`.
    pub abs_error: f64,
}

impl ErrorReportRow {
    pub fn new(strike: f64, weak: &PriceEstimate, bench: &PriceEstimate) -> Result<Self> {
        Ok(Self {
            strike,
            method: weak.method,
            weak_price: weak.value,
            benchmark_price: bench.value,
            benchmark_se: bench.combined_se(weak),
            error_rate_pct: error_rate(weak.value, bench.value)?,
            abs_error: (weak.value - bench.value).abs(),
        })
    }

    /// Signed error `weak − benchmark`.
    pub fn error(&self) -> f64 {
        self.weak_price - self.benchmark_price
    }
}

/// Result of a γ search: the minimizer and the objective at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSearch {
    pub gamma: f64,
    pub sse: Vec<(f64, f64)>,
}

impl GammaSearch {
    pub fn sse_at(&self, gamma: f64) -> Option<f64> {
        self.sse.iter().find(|(g, _)| *g == gamma).map(|(_, s)| *s)
    }
}

/// Minimizes `Σ_K error(γ, K)²` over `gamma_grid`. Cells are evaluated in
/// parallel and summed in strike order, so the objective does not depend on
/// scheduling. Ties go to the earlier grid point.
pub fn optimal_gamma_by<F>(gamma_grid: &[f64], strikes: &[f64], error: F) -> Result<GammaSearch>
where
    F: Fn(f64, f64) -> Result<f64> + Sync,
{
    if gamma_grid.is_empty() {
        return Err(invalid("gamma_grid", "must not be empty"));
    }
    let cells: Vec<(f64, f64)> = gamma_grid
        .iter()
        .flat_map(|g| strikes.iter().map(move |k| (*g, *k)))
        .collect();
    let errs = cells
        .par_iter()
        .map(|(g, k)| error(*g, *k))
        .collect::<Result<Vec<f64>>>()?;
    let sse: Vec<(f64, f64)> = gamma_grid
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let s = errs[i * strikes.len()..(i + 1) * strikes.len()].iter().map(|e| e * e).sum();
            (*g, s)
        })
        .collect();
    let mut best = sse[0];
    for cell in &sse[1..] {
        if cell.1 < best.1 {
            best = *cell;
        }
    }
    Ok(GammaSearch { gamma: best.0, sse })
}

/// γ search for the local volatility grid chain with `m` and `n` fixed.
/// `payoffs[i]` is priced against `benchmarks[i]`; the objective uses the
/// absolute errors.
pub fn optimal_gamma(
    model: &LocalVolCev,
    payoffs: &[PayoffSpec],
    benchmarks: &[PriceEstimate],
    m: u8,
    n: usize,
    maturity: f64,
    gamma_grid: &[f64],
) -> Result<GammaSearch> {
    if payoffs.len() != benchmarks.len() {
        return Err(invalid("benchmarks", "need one benchmark per payoff"));
    }
    let index: Vec<f64> = (0..payoffs.len()).map(|i| i as f64).collect();
    optimal_gamma_by(gamma_grid, &index, |g, i| {
        let i = i as usize;
        let grid = GridSpec::new(n, g, maturity)?;
        let weak = chain_price_1d(model, &payoffs[i], &grid, m, DEFAULT_SPATIAL_NODES)?;
        Ok(weak.value - benchmarks[i].value)
    })
}
