//! Composition of one-step operators over a time partition:
//! `Q^m_(s_1) ⋯ Q^m_(s_n) f(x0)` with `s_k = t_k − t_{k−1}`,
//! `t_k = k^γ T / n^γ`.
//!
//! For the local-vol model the intermediate functions `q_k` live on a
//! Chebyshev–Lobatto grid spanning the initial proxy mean ± 8 total standard
//! deviations. Each node is an anchor for its own proxy law (frozen
//! coefficients per step). Anchors at or below the floor `1e-8·s0`, where
//! `σ` vanishes, do not move, so there `q_{k−1} = q_k` and ultimately the
//! payoff itself.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, AewError, Result};
use crate::estimate::{simulate, MethodDescriptor, PriceEstimate, PricingMode};
use crate::gaussian_proxy::proxy_law;
use crate::interpolation::ChebyshevGrid;
use crate::models::{LocalVolCev, LogNormalSabr, PayoffSpec, UnderlyingMap};
use crate::pricer::{q_step_1d, sabr_marginal_closed_form, DEFAULT_NODES};
use crate::quadrature::GaussianIntegrator;
use crate::rng::RngStream;
use crate::weights::{LocalVolWeight, SabrTwoDimWeight, WeightFunction};

/// Default number of spatial nodes.
pub const DEFAULT_SPATIAL_NODES: usize = 801;
/// Coarsest accepted spatial grid.
pub const MIN_SPATIAL_NODES: usize = 101;
/// Half-width of the spatial grid in total proxy standard deviations.
pub const SPATIAL_SPAN_SD: f64 = 8.0;
/// Spots at or below `FLOOR_FRACTION · s0` are frozen.
pub const FLOOR_FRACTION: f64 = 1e-8;
/// Deepest nesting accepted by [`chain_price_mc`].
pub const MAX_NESTED_LEVELS: usize = 3;

/// Partition parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub gamma: f64,
    pub maturity: f64,
}

impl GridSpec {
    pub fn new(n: usize, gamma: f64, maturity: f64) -> Result<Self> {
        let g = Self { n, gamma, maturity };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "need at least one step"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be positive, got {}", self.gamma)));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(invalid("maturity", format!("must be positive, got {}", self.maturity)));
        }
        Ok(())
    }
}

/// `(t_k, s_k)` for `k = 0..=n`, with `s_0 = 0`, `t_0 = 0` and `t_n = T`.
pub fn make_grid(g: &GridSpec) -> Result<Vec<(f64, f64)>> {
    g.validate()?;
    let nf = g.n as f64;
    let mut out = Vec::with_capacity(g.n + 1);
    out.push((0.0, 0.0));
    let mut prev = 0.0;
    for k in 1..=g.n {
        let t = if k == g.n {
            g.maturity
        } else {
            (k as f64 / nf).powf(g.gamma) * g.maturity
        };
        out.push((t, t - prev));
        prev = t;
    }
    Ok(out)
}

/// Tuning of the grid chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainOptions {
    pub spatial_nodes: usize,
    pub quad_nodes: usize,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            spatial_nodes: DEFAULT_SPATIAL_NODES,
            quad_nodes: DEFAULT_NODES,
        }
    }
}

/// Grid chain for the local-vol model with `spatial_grid` nodes.
pub fn chain_price_1d(
    model: &LocalVolCev,
    payoff: &PayoffSpec,
    g: &GridSpec,
    m: u8,
    spatial_grid: usize,
) -> Result<PriceEstimate> {
    chain_price_1d_with(
        model,
        payoff,
        g,
        m,
        &ChainOptions {
            spatial_nodes: spatial_grid,
            ..ChainOptions::default()
        },
    )
}

pub fn chain_price_1d_with(
    model: &LocalVolCev,
    payoff: &PayoffSpec,
    g: &GridSpec,
    m: u8,
    opts: &ChainOptions,
) -> Result<PriceEstimate> {
    if opts.spatial_nodes < MIN_SPATIAL_NODES {
        return Err(invalid(
            "spatial_grid",
            format!("need at least {MIN_SPATIAL_NODES} nodes, got {}", opts.spatial_nodes),
        ));
    }
    if payoff.underlying_map != UnderlyingMap::Level {
        return Err(invalid("payoff", "the local-vol chain reads the spot level"));
    }
    let weight = WeightFunction::local_vol(model, m)?;
    let grid = make_grid(g)?;
    let method = MethodDescriptor::new(m, g.n, g.gamma, PricingMode::Grid);
    let x0 = model.s0;
    if g.n == 1 {
        let law = proxy_law(model, &nalgebra::DVector::from_vec(vec![x0]), g.maturity, model.epsilon)?;
        let v = q_step_1d(&law, &weight, payoff, opts.quad_nodes)?;
        return Ok(PriceEstimate::deterministic(v, method));
    }

    let gi = GaussianIntegrator::new(opts.quad_nodes);
    let floor = FLOOR_FRACTION * model.s0;
    let sd_total = model.epsilon * model.sigma(x0)? * g.maturity.sqrt();
    let lo = (x0 - SPATIAL_SPAN_SD * sd_total).max(floor);
    let hi = x0 + SPATIAL_SPAN_SD * sd_total;
    let cheb = ChebyshevGrid::new(lo, hi, opts.spatial_nodes);

    let step = |x: f64, s: f64, breaks: &[f64], q: &(dyn Fn(f64) -> f64 + Sync)| -> Result<f64> {
        if x <= floor {
            return Ok(q(x));
        }
        let w = LocalVolWeight::new(m, model, s, x)?;
        Ok(gi.expect(x, w.proxy_sd(), breaks, |y| q(y) * w.at(y)))
    };

    // last step, straight from the payoff
    let kink: Vec<f64> = payoff.kink().into_iter().collect();
    let pay = |y: f64| payoff.eval_first(y);
    let s_last = grid[g.n].1;
    let mut values: Vec<f64> = cheb
        .nodes()
        .par_iter()
        .map(|&x| step(x, s_last, &kink, &pay))
        .collect::<Result<_>>()?;

    let interior_breaks = [floor, lo, hi];
    for k in (2..g.n).rev() {
        let prev = values;
        let q = |y: f64| extend(&cheb, &prev, payoff, floor, y);
        let s = grid[k].1;
        values = cheb
            .nodes()
            .par_iter()
            .map(|&x| step(x, s, &interior_breaks, &q))
            .collect::<Result<_>>()?;
    }
    let q = |y: f64| extend(&cheb, &values, payoff, floor, y);
    let v = step(x0, grid[1].1, &interior_breaks, &q)?;
    if !v.is_finite() {
        return Err(AewError::Unsupported(format!("non-finite chain value {v}")));
    }
    Ok(PriceEstimate::deterministic(v, method))
}

/// Grid function extended beyond the grid: the payoff below the floor,
/// linear continuation elsewhere outside.
fn extend(cheb: &ChebyshevGrid, values: &[f64], payoff: &PayoffSpec, floor: f64, y: f64) -> f64 {
    if y <= floor {
        payoff.eval_first(y)
    } else if y < cheb.lower() || y > cheb.upper() {
        cheb.extrapolate(values, y)
    } else {
        cheb.eval(values, y)
    }
}

/// Nested Monte Carlo over the chain levels, `paths_per_level[k]` draws at
/// level `k + 1` (outermost first). The standard error is that of the outer
/// average.
pub fn chain_price_mc(
    model: &LocalVolCev,
    payoff: &PayoffSpec,
    g: &GridSpec,
    m: u8,
    paths_per_level: &[u64],
    stream: &RngStream,
) -> Result<PriceEstimate> {
    if g.n > MAX_NESTED_LEVELS {
        return Err(invalid(
            "n",
            format!(
                "nested Monte Carlo is limited to n ≤ {MAX_NESTED_LEVELS} (cost grows as paths^n); use chain_price_1d"
            ),
        ));
    }
    if paths_per_level.len() != g.n {
        return Err(invalid("paths_per_level", format!("expected {} entries", g.n)));
    }
    if paths_per_level.iter().any(|p| *p == 0) || paths_per_level[0] < 2 {
        return Err(invalid("paths_per_level", "need at least 2 outer paths and 1 inner path"));
    }
    WeightFunction::local_vol(model, m)?;
    let grid = make_grid(g)?;
    let floor = FLOOR_FRACTION * model.s0;
    let x0 = model.s0;

    // q_{k-1}(x) estimated from `paths_per_level[k-1]` draws, for k ≥ 2
    fn inner(
        model: &LocalVolCev,
        payoff: &PayoffSpec,
        grid: &[(f64, f64)],
        counts: &[u64],
        m: u8,
        floor: f64,
        stream: &RngStream,
        k: usize,
        x: f64,
        id: u64,
    ) -> Result<f64> {
        if k > counts.len() {
            return Ok(payoff.eval_first(x));
        }
        let count = counts[k - 1];
        if x <= floor {
            return inner(model, payoff, grid, counts, m, floor, stream, k + 1, x, id * count);
        }
        let w = LocalVolWeight::new(m, model, grid[k].1, x)?;
        let sd = w.proxy_sd();
        let level = stream.with_tag(stream.tag().wrapping_add(k as u32));
        let mut acc = 0.0;
        for j in 0..count {
            let child = id * count + j;
            let y = x + sd * level.path(child).normal_at(0);
            acc += inner(model, payoff, grid, counts, m, floor, stream, k + 1, y, child)? * w.at(y);
        }
        Ok(acc / count as f64)
    }

    let w1 = LocalVolWeight::new(m, model, grid[1].1, x0)?;
    let sd1 = w1.proxy_sd();
    let level1 = stream.with_tag(stream.tag().wrapping_add(1));
    let failure = std::sync::Mutex::new(None);
    let stats = simulate(paths_per_level[0], 1, |j, out| {
        let y = x0 + sd1 * level1.path(j).normal_at(0);
        out[0] = match inner(model, payoff, &grid, paths_per_level, m, floor, stream, 2, y, j) {
            Ok(v) => v * w1.at(y),
            Err(e) => {
                failure.lock().unwrap().get_or_insert(e);
                0.0
            }
        };
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(PriceEstimate::sampled(
        &stats[0],
        stream.seed(),
        MethodDescriptor::new(m, g.n, g.gamma, PricingMode::NestedMc),
    ))
}

/// The two-step SABR scheme: sample the joint proxy at `T/2` with the
/// two-dimensional weight, and price the remaining half step analytically
/// with the marginal first-order weight re-anchored at the sample.
pub fn chain_price_sabr_n2(
    model: &LogNormalSabr,
    payoff: &PayoffSpec,
    maturity: f64,
    paths: u64,
    stream: &RngStream,
) -> Result<PriceEstimate> {
    Ok(chain_price_sabr_n2_many(model, std::slice::from_ref(payoff), maturity, paths, stream)?[0])
}

/// [`chain_price_sabr_n2`] for several payoffs on the same paths.
pub fn chain_price_sabr_n2_many(
    model: &LogNormalSabr,
    payoffs: &[PayoffSpec],
    maturity: f64,
    paths: u64,
    stream: &RngStream,
) -> Result<Vec<PriceEstimate>> {
    if paths < 10_000 {
        return Err(invalid("paths", format!("need at least 10^4, got {paths}")));
    }
    if !(maturity > 0.0) {
        return Err(invalid("maturity", format!("must be positive, got {maturity}")));
    }
    let payoffs: Vec<PayoffSpec> = payoffs
        .iter()
        .map(|p| p.with_map(UnderlyingMap::ExpOfFirstCoordinate))
        .collect();
    let s = 0.5 * maturity;
    let (x0, s0) = (model.x0, model.sigma0);
    let w = SabrTwoDimWeight::new(model, s, x0, s0)?;
    let (eps, eps_eta, rho, rb) = (model.nu, model.nu * model.eta, model.rho, model.rho_bar());
    let sq = s.sqrt();
    let failure = std::sync::Mutex::new(None);
    let stats = simulate(paths, payoffs.len(), |p, out| {
        let mut rng = stream.path(p);
        let b = sq * rng.next_normal();
        let z = rho * b + rb * sq * rng.next_normal();
        let y1 = x0 - 0.5 * eps_eta * s0 * s0 * s + eps_eta * s0 * b;
        let y2 = s0 + eps * s0 * z;
        let weight = w.at_coordinates(b, z);
        for (o, pay) in out.iter_mut().zip(&payoffs) {
            *o = match sabr_marginal_closed_form(model, y1, y2, s, pay, 1) {
                Ok(v) => v * weight,
                Err(e) => {
                    failure.lock().unwrap().get_or_insert(e);
                    0.0
                }
            };
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(stats
        .iter()
        .map(|st| {
            PriceEstimate::sampled(
                st,
                stream.seed(),
                MethodDescriptor::new(1, 2, 1.0, PricingMode::SabrChain),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_local_vol;

    #[test]
    fn grid_examples() {
        let t = |n, g| make_grid(&GridSpec::new(n, g, 1.0).unwrap()).unwrap();
        assert_eq!(t(2, 1.0).iter().map(|p| p.0).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        assert_eq!(t(2, 2.0).iter().map(|p| p.0).collect::<Vec<_>>(), vec![0.0, 0.25, 1.0]);
        assert_eq!(t(1, 3.7).iter().map(|p| p.0).collect::<Vec<_>>(), vec![0.0, 1.0]);
        assert!(GridSpec::new(0, 1.0, 1.0).is_err());
        assert!(GridSpec::new(2, 0.0, 1.0).is_err());
        assert!(GridSpec::new(2, 1.0, -1.0).is_err());
    }

    #[test]
    fn grid_telescopes_exactly() {
        for n in 1..=12 {
            for &gamma in &[0.1, 0.33, 0.5, 0.8, 1.0, 1.015657, 1.5, 2.0, 3.0] {
                for &mat in &[1.0, 2.0, 10.0] {
                    let grid = make_grid(&GridSpec::new(n, gamma, mat).unwrap()).unwrap();
                    let mut acc = 0.0;
                    for k in 1..=n {
                        assert!(grid[k].1 > 0.0);
                        acc += grid[k].1;
                        assert_eq!(acc, grid[k].0, "n={n} γ={gamma} T={mat} k={k}");
                    }
                    assert_eq!(acc, mat);
                }
            }
        }
    }

    #[test]
    fn single_step_is_bit_identical_to_q_step() {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        let law = proxy_law(&lv, &nalgebra::DVector::from_vec(vec![100.0]), 1.0, 0.4).unwrap();
        for m in 0..=2 {
            let w = WeightFunction::local_vol(&lv, m).unwrap();
            for k in [60.0, 100.0, 180.0] {
                let p = PayoffSpec::call(k);
                let a = q_step_1d(&law, &w, &p, DEFAULT_NODES).unwrap();
                let b = chain_price_1d(&lv, &p, &GridSpec::new(1, 2.0, 1.0).unwrap(), m, 801).unwrap();
                assert_eq!(a.to_bits(), b.value.to_bits());
                assert_eq!(b.std_err, 0.0);
            }
        }
    }

    #[test]
    fn rejects_coarse_grid_and_deep_nesting() {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        let g = GridSpec::new(2, 1.0, 1.0).unwrap();
        assert!(chain_price_1d(&lv, &PayoffSpec::call(100.0), &g, 1, 100).is_err());
        let g4 = GridSpec::new(4, 1.0, 1.0).unwrap();
        let err = chain_price_mc(&lv, &PayoffSpec::call(100.0), &g4, 1, &[10, 10, 10, 10], &RngStream::new(1, 0))
            .unwrap_err();
        assert!(err.to_string().contains("chain_price_1d"));
    }

    #[test]
    fn doubling_spatial_nodes_is_converged() {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        for (n, gamma) in [(2, 1.0), (3, 1.0), (3, 0.1), (4, 2.0)] {
            let g = GridSpec::new(n, gamma, 1.0).unwrap();
            for m in [1, 2] {
                for k in [50.0, 100.0, 200.0] {
                    let p = PayoffSpec::call(k);
                    let a = chain_price_1d(&lv, &p, &g, m, 801).unwrap().value;
                    let b = chain_price_1d(&lv, &p, &g, m, 1601).unwrap().value;
                    assert!((a - b).abs() < 1e-8, "n={n} γ={gamma} m={m} K={k}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn parity_holds_through_the_chain() {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        let g = GridSpec::new(3, 1.0, 1.0).unwrap();
        let id = chain_price_1d(&lv, &PayoffSpec::identity(), &g, 2, 401).unwrap().value;
        for k in [70.0, 130.0] {
            let c = chain_price_1d(&lv, &PayoffSpec::call(k), &g, 2, 401).unwrap().value;
            let p = chain_price_1d(&lv, &PayoffSpec::put(k), &g, 2, 401).unwrap().value;
            assert!((c - p - (id - k)).abs() < 1e-9);
        }
    }

    #[test]
    fn nested_mc_matches_grid_chain() {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        let g = GridSpec::new(2, 1.0, 1.0).unwrap();
        let p = PayoffSpec::call(100.0);
        let grid = chain_price_1d(&lv, &p, &g, 1, 801).unwrap();
        let mc = chain_price_mc(&lv, &p, &g, 1, &[20_000, 200], &RngStream::new(4, 10)).unwrap();
        assert!((grid.value - mc.value).abs() < 3.0 * mc.std_err, "{grid:?} {mc:?}");
        let again = chain_price_mc(&lv, &p, &g, 1, &[20_000, 200], &RngStream::new(4, 10)).unwrap();
        assert_eq!(mc.value.to_bits(), again.value.to_bits());
    }

    #[test]
    fn nested_mc_single_level_matches_quadrature() {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        let g = GridSpec::new(1, 1.0, 1.0).unwrap();
        for m in 0..=2 {
            let p = PayoffSpec::call(120.0);
            let q = chain_price_1d(&lv, &p, &g, m, 801).unwrap();
            let mc = chain_price_mc(&lv, &p, &g, m, &[400_000], &RngStream::new(8, 0)).unwrap();
            assert!((q.value - mc.value).abs() < 3.0 * mc.std_err, "m={m} {q:?} {mc:?}");
        }
    }
}
