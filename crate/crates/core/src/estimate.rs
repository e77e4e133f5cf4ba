//! Price estimates and the block-ordered Monte Carlo reduction they come from.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How a price was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PricingMode {
    /// One-step operator by deterministic quadrature.
    Quadrature,
    /// Backward induction on a spatial grid.
    Grid,
    /// Nested Monte Carlo over the chain levels.
    NestedMc,
    /// SABR one-step with the marginal weight, by quadrature.
    SabrMarginal,
    /// SABR one-step sampling the 2-d proxy with the two-dimensional weight.
    SabrTwoDimMc,
    /// SABR two-step chain: outer sampling, analytic inner step.
    SabrChain,
    /// Euler–Maruyama benchmark.
    EulerMaruyama,
    /// Euler–Maruyama with a Taylor-proxy control variate.
    EulerMaruyamaCv,
    /// Finite-difference reference.
    Pde,
    /// Pathwise pre-integration-by-parts expansion oracle.
    Oracle,
    /// Closed-form reference formula.
    ClosedForm,
}

impl PricingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PricingMode::Quadrature => "quadrature",
            PricingMode::Grid => "grid",
            PricingMode::NestedMc => "nested-mc",
            PricingMode::SabrMarginal => "sabr-marginal",
            PricingMode::SabrTwoDimMc => "sabr-two-dim-mc",
            PricingMode::SabrChain => "sabr-chain",
            PricingMode::EulerMaruyama => "euler-maruyama",
            PricingMode::EulerMaruyamaCv => "euler-maruyama-cv",
            PricingMode::Pde => "pde",
            PricingMode::Oracle => "oracle",
            PricingMode::ClosedForm => "closed-form",
        }
    }

    /// Whether estimates in this mode carry sampling error.
    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            PricingMode::NestedMc
                | PricingMode::SabrTwoDimMc
                | PricingMode::SabrChain
                | PricingMode::EulerMaruyama
                | PricingMode::EulerMaruyamaCv
                | PricingMode::Oracle
        )
    }
}

/// Expansion order, step count and grid exponent of a method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodDescriptor {
    pub m: u8,
    pub n: usize,
    pub gamma: f64,
    pub mode: PricingMode,
}

impl MethodDescriptor {
    pub fn new(m: u8, n: usize, gamma: f64, mode: PricingMode) -> Self {
        Self { m, n, gamma, mode }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceEstimate {
    pub value: f64,
    /// Zero exactly when the method is deterministic.
    pub std_err: f64,
    pub paths: u64,
    pub seed: u64,
    pub method: MethodDescriptor,
}

impl PriceEstimate {
    pub fn deterministic(value: f64, method: MethodDescriptor) -> Self {
        Self {
            value,
            std_err: 0.0,
            paths: 0,
            seed: 0,
            method,
        }
    }

    pub fn sampled(stats: &SampleStats, seed: u64, method: MethodDescriptor) -> Self {
        Self {
            value: stats.mean,
            std_err: stats.std_err(),
            paths: stats.count,
            seed,
            method,
        }
    }

    /// √(se_a² + se_b²).
    pub fn combined_se(&self, other: &PriceEstimate) -> f64 {
        self.std_err.hypot(other.std_err)
    }
}

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl SampleStats {
    #[inline]
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
    }

    /// Pairwise merge (Chan et al.).
    pub fn merge(&mut self, other: &SampleStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_err(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Paths per reduction block. Fixed so that results do not depend on how
/// rayon splits the work.
pub const PATH_BLOCK: u64 = 1024;

/// Runs `body(path, out)` for every path in `0..paths`, where `out` has
/// `width` slots, and returns per-slot statistics. Blocks of [`PATH_BLOCK`]
/// paths are evaluated in parallel and merged in block order, so the result is
/// bit-identical for any thread count.
pub fn simulate<F>(paths: u64, width: usize, body: F) -> Vec<SampleStats>
where
    F: Fn(u64, &mut [f64]) + Sync,
{
    let blocks = paths.div_ceil(PATH_BLOCK);
    let partial: Vec<Vec<SampleStats>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut stats = vec![SampleStats::default(); width];
            let mut out = vec![0.0; width];
            let end = ((b + 1) * PATH_BLOCK).min(paths);
            for p in b * PATH_BLOCK..end {
                body(p, &mut out);
                for (s, v) in stats.iter_mut().zip(&out) {
                    s.push(*v);
                }
            }
            stats
        })
        .collect();
    let mut total = vec![SampleStats::default(); width];
    for block in &partial {
        for (t, s) in total.iter_mut().zip(block) {
            t.merge(s);
        }
    }
    total
}
