//! The subcommands. Each returns its rows in cell order; cells are priced in
//! parallel but collected by index, so output never depends on scheduling.

use std::time::Instant;

use aew_core::analysis::{gamma_search_grid, SWEEP_GAMMAS};
use aew_core::chain::{chain_price_1d_with, chain_price_mc, chain_price_sabr_n2_many, ChainOptions};
use aew_core::{
    convergence_slope, em_prices, em_prices_local_vol_cv, optimal_gamma, pde_price_local_vol, predict_error_next_m,
    predict_error_next_n, proxy_law, q_step_1d, q_step_sabr, ErrorReportRow, GridSpec, MethodDescriptor, ModelSpec,
    PayoffKind, PayoffSpec, PdeOptions, PriceEstimate, PricingMode, RngStream, SabrStepMode, WeightFunction,
};
use clap::ValueEnum;
use log::info;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BenchmarkKind, Config, MethodMode};
use crate::CliError;

/// Substream tag of the benchmark simulation.
const BENCH_TAG: u32 = 0x4245_4e43;

/// Substream tag of priced cell `i`. Cells are spaced so that the per-level
/// tags of the nested scheme never collide.
fn cell_tag(i: usize) -> u32 {
    16 * (i as u32 + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceRow {
    pub model: &'static str,
    pub payoff: &'static str,
    pub strike: f64,
    pub method: &'static str,
    pub m: u8,
    pub n: usize,
    pub gamma: f64,
    pub price: f64,
    pub std_err: f64,
    pub paths: u64,
    pub seed: u64,
    pub runtime_ms: u64,
}

pub const PRICE_HEADER: &str = "model,payoff,strike,method,m,n,gamma,price,std_err,paths,seed,runtime_ms";

fn payoff_tag(p: &PayoffSpec) -> &'static str {
    match p.kind {
        PayoffKind::Call => "call",
        PayoffKind::Put => "put",
        PayoffKind::Identity => "identity",
    }
}

fn price_row(cfg: &Config, p: &PayoffSpec, est: &PriceEstimate, elapsed_ms: Option<u64>) -> PriceRow {
    PriceRow {
        model: cfg.model_tag(),
        payoff: payoff_tag(p),
        strike: p.strike,
        method: est.method.mode.as_str(),
        m: est.method.m,
        n: est.method.n,
        gamma: est.method.gamma,
        price: est.value,
        std_err: est.std_err,
        paths: est.paths,
        seed: est.seed,
        runtime_ms: elapsed_ms.unwrap_or(0),
    }
}

fn timed<T>(timings: bool, f: impl FnOnce() -> T) -> (T, Option<u64>) {
    let start = Instant::now();
    let out = f();
    (out, timings.then(|| start.elapsed().as_millis() as u64))
}

/// Weak price of one payoff at order `m` over `n` steps with exponent `gamma`.
#[allow(clippy::too_many_arguments)]
fn weak_price(
    cfg: &Config,
    mode: MethodMode,
    payoff: &PayoffSpec,
    m: u8,
    n: usize,
    gamma: f64,
    maturity: f64,
    cell: usize,
) -> Result<PriceEstimate, CliError> {
    let stream = RngStream::new(cfg.mc.seed, cell_tag(cell));
    let grid = GridSpec::new(n, gamma, maturity)?;
    let est = match (cfg.model_spec()?, mode) {
        (ModelSpec::LocalVol(lv), MethodMode::Grid) => {
            let opts = ChainOptions {
                spatial_nodes: cfg.method.spatial_nodes,
                quad_nodes: cfg.method.quad_nodes,
            };
            chain_price_1d_with(&lv, payoff, &grid, m, &opts)?
        }
        (ModelSpec::LocalVol(lv), MethodMode::Quadrature) => {
            let law = proxy_law(&lv, &DVector::from_element(1, lv.s0), maturity, lv.epsilon)?;
            let w = WeightFunction::local_vol(&lv, m)?;
            let v = q_step_1d(&law, &w, payoff, cfg.method.quad_nodes)?;
            PriceEstimate::deterministic(v, MethodDescriptor::new(m, 1, gamma, PricingMode::Quadrature))
        }
        (ModelSpec::LocalVol(lv), MethodMode::NestedMc) => {
            let levels = cfg.method.nested_paths.as_deref().unwrap_or(&[]);
            chain_price_mc(&lv, payoff, &grid, m, &levels[..n.min(levels.len())], &stream)?
        }
        (ModelSpec::Sabr(s), MethodMode::Sabr) if n == 2 => {
            chain_price_sabr_n2_many(&s, std::slice::from_ref(payoff), maturity, cfg.mc.chain_paths, &stream)?[0]
        }
        (ModelSpec::Sabr(s), MethodMode::Sabr | MethodMode::SabrTwoDimMc) => {
            let step = if mode == MethodMode::Sabr {
                SabrStepMode::MarginalQuadrature
            } else {
                SabrStepMode::TwoDimMc
            };
            q_step_sabr(&s, [s.x0, s.sigma0], maturity, payoff, m, step, cfg.mc.chain_paths, &stream)?
        }
        _ => return Err(CliError::Config(format!("method.mode {mode:?} does not apply to this model"))),
    };
    let mut est = est;
    est.method.gamma = gamma;
    Ok(est)
}

/// `price`: one row per (order, step count, strike), in that nesting.
pub fn price(cfg: &Config, timings: bool) -> Result<Vec<PriceRow>, CliError> {
    let payoffs = cfg.payoffs();
    let mut cells = Vec::new();
    for &m in &cfg.method.orders {
        for &n in &cfg.grid.steps {
            for p in &payoffs {
                cells.push((m, n, *p));
            }
        }
    }
    cells
        .par_iter()
        .enumerate()
        .map(|(i, (m, n, p))| {
            let (est, ms) = timed(timings, || {
                weak_price(cfg, cfg.method.mode, p, *m, *n, cfg.grid.gamma, cfg.grid.maturity, i)
            });
            Ok(price_row(cfg, p, &est?, ms))
        })
        .collect()
}

/// Benchmark prices of `payoffs` at `maturity`, one estimate per payoff.
pub fn benchmark(cfg: &Config, payoffs: &[PayoffSpec], maturity: f64) -> Result<Vec<PriceEstimate>, CliError> {
    let model = cfg.model_spec()?;
    let stream = RngStream::new(cfg.mc.seed, BENCH_TAG);
    let out = match (cfg.mc.benchmark, model) {
        (BenchmarkKind::Em, _) => em_prices(
            &model,
            &model.initial_state(),
            payoffs,
            maturity,
            cfg.mc.steps,
            cfg.mc.paths,
            &stream,
        )?,
        (BenchmarkKind::EmCv, ModelSpec::LocalVol(lv)) => {
            em_prices_local_vol_cv(&lv, lv.s0, payoffs, maturity, cfg.mc.steps, cfg.mc.paths, &stream)?
        }
        (BenchmarkKind::Pde, ModelSpec::LocalVol(lv)) => {
            pde_price_local_vol(&lv, payoffs, maturity, &PdeOptions::default())?
        }
        (kind, _) => return Err(CliError::Config(format!("mc.benchmark {kind:?} needs the local-vol model"))),
    };
    Ok(out)
}

/// `bench`: benchmark prices in the `price` schema.
pub fn bench(cfg: &Config, timings: bool) -> Result<Vec<PriceRow>, CliError> {
    let payoffs = cfg.payoffs();
    let (ests, ms) = timed(timings, || benchmark(cfg, &payoffs, cfg.grid.maturity));
    Ok(payoffs.iter().zip(&ests?).map(|(p, e)| price_row(cfg, p, e, ms)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FigureId {
    #[value(name = "F1")]
    F1,
    #[value(name = "F2")]
    F2,
    #[value(name = "F3")]
    F3,
    #[value(name = "F4")]
    F4,
    #[value(name = "F5")]
    F5,
    #[value(name = "F6")]
    F6,
    #[value(name = "F7")]
    F7,
    #[value(name = "F8")]
    F8,
}

impl FigureId {
    pub fn label(self) -> &'static str {
        match self {
            FigureId::F1 => "F1",
            FigureId::F2 => "F2",
            FigureId::F3 => "F3",
            FigureId::F4 => "F4",
            FigureId::F5 => "F5",
            FigureId::F6 => "F6",
            FigureId::F7 => "F7",
            FigureId::F8 => "F8",
        }
    }

    /// Maturity of the experiment the figure shows.
    pub fn maturity(self) -> f64 {
        match self {
            FigureId::F2 => 10.0,
            FigureId::F4 => 2.0,
            _ => 1.0,
        }
    }

    fn is_sabr(self) -> bool {
        matches!(self, FigureId::F3 | FigureId::F4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureRow {
    pub figure: &'static str,
    pub series: String,
    pub strike: f64,
    pub m: u8,
    pub n: usize,
    pub gamma: f64,
    pub weak_price: f64,
    pub benchmark_price: f64,
    pub benchmark_se: f64,
    pub error_rate_pct: f64,
    pub abs_error: f64,
}

pub const FIGURE_HEADER: &str =
    "figure,series,strike,m,n,gamma,weak_price,benchmark_price,benchmark_se,error_rate_pct,abs_error";

/// A priced series: label and method.
struct Series {
    label: String,
    m: u8,
    n: usize,
    gamma: f64,
}

fn series(label: impl Into<String>, m: u8, n: usize, gamma: f64) -> Series {
    Series { label: label.into(), m, n, gamma }
}

/// A series derived from another one by an error-transfer law.
struct Predicted {
    label: &'static str,
    from: usize,
    m: u8,
    n: usize,
    law: Box<dyn Fn(f64) -> Result<f64, aew_core::AewError>>,
}

/// `figure`: error rates of the figure's series against the benchmark. The
/// maturity is the figure's own; local volatility figures use the grid chain
/// and SABR figures the marginal step and the two-step chain.
pub fn figure(cfg: &Config, id: FigureId) -> Result<Vec<FigureRow>, CliError> {
    let sabr = cfg.sabr().is_some();
    if id.is_sabr() != sabr {
        let want = if id.is_sabr() { "sabr" } else { "local-vol" };
        return Err(CliError::Config(format!("model.kind: figure {} needs the {want} model", id.label())));
    }
    let maturity = id.maturity();
    if maturity != cfg.grid.maturity {
        info!("figure {} uses maturity {maturity} (config has {})", id.label(), cfg.grid.maturity);
    }
    let eps = cfg.model_spec()?.epsilon();
    let mut predicted: Vec<Predicted> = Vec::new();
    let list: Vec<Series> = match id {
        FigureId::F1 | FigureId::F2 => vec![
            series("AE1", 1, 1, 1.0),
            series("AE1-WA n=2", 1, 2, 1.0),
            series("AE1-WA n=3", 1, 3, 1.0),
            series("AE2", 2, 1, 1.0),
            series("AE2-WA n=2", 2, 2, 1.0),
        ],
        FigureId::F3 | FigureId::F4 => vec![series("AE1", 1, 1, 1.0), series("AE1-WA n=2", 1, 2, 1.0)],
        FigureId::F5 => {
            predicted.push(Predicted {
                label: "theory AE1-WA n=3",
                from: 0,
                m: 1,
                n: 3,
                law: Box::new(|e| predict_error_next_n(e, 1, 2)),
            });
            vec![series("AE1-WA n=2", 1, 2, 1.0), series("AE1-WA n=3", 1, 3, 1.0)]
        }
        FigureId::F6 => {
            predicted.push(Predicted {
                label: "theory AE2-WA n=2",
                from: 0,
                m: 2,
                n: 2,
                law: Box::new(move |e| predict_error_next_m(e, eps, 2)),
            });
            vec![series("AE1-WA n=2", 1, 2, 1.0), series("AE2-WA n=2", 2, 2, 1.0)]
        }
        FigureId::F7 | FigureId::F8 => {
            let n = if id == FigureId::F7 { 2 } else { 3 };
            SWEEP_GAMMAS.iter().map(|g| series(format!("gamma={g}"), 1, n, *g)).collect()
        }
    };
    let payoffs = cfg.payoffs();
    let bench = benchmark(cfg, &payoffs, maturity)?;
    let mode = if sabr { MethodMode::Sabr } else { MethodMode::Grid };
    let cells: Vec<(usize, usize)> = (0..list.len()).flat_map(|s| (0..payoffs.len()).map(move |k| (s, k))).collect();
    let weak: Vec<PriceEstimate> = cells
        .par_iter()
        .enumerate()
        .map(|(i, (s, k))| {
            let sr = &list[*s];
            weak_price(cfg, mode, &payoffs[*k], sr.m, sr.n, sr.gamma, maturity, i)
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for ((s, k), w) in cells.iter().zip(&weak) {
        let sr = &list[*s];
        rows.push(figure_row(id, &sr.label, sr.m, sr.n, sr.gamma, payoffs[*k].strike, w, &bench[*k])?);
    }
    for pr in &predicted {
        for (k, p) in payoffs.iter().enumerate() {
            let base = &weak[pr.from * payoffs.len() + k];
            let err = (pr.law)(base.value - bench[k].value)?;
            let est = PriceEstimate::deterministic(bench[k].value + err, base.method);
            rows.push(figure_row(id, pr.label, pr.m, pr.n, 1.0, p.strike, &est, &bench[k])?);
        }
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn figure_row(
    id: FigureId,
    label: &str,
    m: u8,
    n: usize,
    gamma: f64,
    strike: f64,
    weak: &PriceEstimate,
    bench: &PriceEstimate,
) -> Result<FigureRow, CliError> {
    let r = ErrorReportRow::new(strike, weak, bench)?;
    Ok(FigureRow {
        figure: id.label(),
        series: label.to_string(),
        strike,
        m,
        n,
        gamma,
        weak_price: r.weak_price,
        benchmark_price: r.benchmark_price,
        benchmark_se: r.benchmark_se,
        error_rate_pct: r.error_rate_pct,
        abs_error: r.abs_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub m: u8,
    pub n: usize,
    pub gamma: f64,
    pub sse: f64,
    pub optimal: bool,
}

/// `sweep-gamma`: the squared-error objective over the γ search grid for
/// every configured (order, step count), local volatility only.
pub fn sweep_gamma(cfg: &Config) -> Result<Vec<SweepRow>, CliError> {
    let lv = cfg
        .local_vol()
        .ok_or_else(|| CliError::Config("model.kind: sweep-gamma needs the local-vol model".into()))?;
    let payoffs = cfg.payoffs();
    let bench = benchmark(cfg, &payoffs, cfg.grid.maturity)?;
    let grid = gamma_search_grid();
    let mut rows = Vec::new();
    for &m in &cfg.method.orders {
        for &n in &cfg.grid.steps {
            let res = optimal_gamma(&lv, &payoffs, &bench, m, n, cfg.grid.maturity, &grid)?;
            info!("m={m} n={n}: optimal gamma {}", res.gamma);
            rows.extend(res.sse.iter().map(|(g, s)| SweepRow {
                m,
                n,
                gamma: *g,
                sse: *s,
                optimal: *g == res.gamma,
            }));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub strike: f64,
    pub m: u8,
    pub n: usize,
    pub gamma: f64,
    pub price: f64,
    pub reference: f64,
    pub reference_se: f64,
    pub abs_error: f64,
    /// Fitted slope of log error against log n for this (strike, m); empty
    /// when fewer than three positive errors are available.
    pub slope: Option<f64>,
}

/// `convergence`: chain errors against the benchmark for every step count,
/// with the fitted order per (strike, order).
pub fn convergence(cfg: &Config) -> Result<Vec<ConvergenceRow>, CliError> {
    if cfg.local_vol().is_none() {
        return Err(CliError::Config("model.kind: convergence needs the local-vol model".into()));
    }
    let payoffs = cfg.payoffs();
    let bench = benchmark(cfg, &payoffs, cfg.grid.maturity)?;
    let prices = price(cfg, false)?;
    let mut rows = Vec::with_capacity(prices.len());
    let mut i = 0;
    for &m in &cfg.method.orders {
        let mut group: Vec<Vec<ConvergenceRow>> = vec![Vec::new(); payoffs.len()];
        for &n in &cfg.grid.steps {
            for (k, b) in bench.iter().enumerate() {
                let p = &prices[i];
                i += 1;
                group[k].push(ConvergenceRow {
                    strike: p.strike,
                    m,
                    n,
                    gamma: p.gamma,
                    price: p.price,
                    reference: b.value,
                    reference_se: b.std_err,
                    abs_error: (p.price - b.value).abs(),
                    slope: None,
                });
            }
        }
        for mut g in group {
            let pts: Vec<(usize, f64)> = g.iter().map(|r| (r.n, r.abs_error)).collect();
            let slope = convergence_slope(&pts).ok();
            for r in &mut g {
                r.slope = slope;
            }
            rows.extend(g);
        }
    }
    Ok(rows)
}
