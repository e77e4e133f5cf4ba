//! The one-step operator `Q^m_(t) f(x) = E[f(X̄_t) M^m(t, x, X̄_t)]` and the
//! closed-form prices used to check it.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, AewError, Result};
use crate::estimate::{simulate, MethodDescriptor, PriceEstimate, PricingMode};
use crate::gaussian_proxy::ProxyLaw;
use crate::models::{LogNormalSabr, PayoffKind, PayoffSpec, UnderlyingMap};
use crate::quadrature::GaussianIntegrator;
use crate::rng::{normal_cdf, normal_pdf, RngStream};
use crate::models::ModelSpec;
use crate::weights::{LocalVolWeight, SabrMarginalWeight, SabrTwoDimWeight, WeightFunction, WeightTag};

/// Default Gauss–Legendre nodes per piece of the Gaussian integrals.
pub const DEFAULT_NODES: usize = 128;

/// Minimum path count for sampled one-step prices.
pub const MIN_PATHS: u64 = 1000;

/// Shared integrator with [`DEFAULT_NODES`] nodes.
pub fn default_integrator() -> &'static GaussianIntegrator {
    static RULE: OnceLock<GaussianIntegrator> = OnceLock::new();
    RULE.get_or_init(|| GaussianIntegrator::new(DEFAULT_NODES))
}

fn integrator(nodes: usize) -> GaussianIntegrator {
    if nodes == DEFAULT_NODES {
        default_integrator().clone()
    } else {
        GaussianIntegrator::new(nodes)
    }
}

/// `Q^m f` for a one-dimensional proxy by Gaussian quadrature split at the
/// payoff kink, with `nodes` points per piece. The law may also be the 2-d
/// SABR proxy when `w` is the marginal SABR weight; the first coordinate is
/// then integrated out alone.
pub fn q_step_1d(law: &ProxyLaw, w: &WeightFunction, payoff: &PayoffSpec, nodes: usize) -> Result<f64> {
    if nodes < 16 {
        return Err(invalid("nodes", format!("need at least 16, got {nodes}")));
    }
    let mean = law.mean()[0];
    let var = law.covariance()[(0, 0)];
    if var == 0.0 {
        return Ok(payoff.eval_first(mean));
    }
    if !(var > 0.0) {
        return Err(invalid("law", format!("negative variance {var}")));
    }
    let sd = var.sqrt();
    let gi = integrator(nodes);
    let breaks: Vec<f64> = payoff.kink().into_iter().collect();
    match (w.model(), w.tag()) {
        (ModelSpec::LocalVol(model), _) => {
            if law.dim() != 1 {
                return Err(invalid("law", "local-vol weights need a one-dimensional law"));
            }
            let weight = LocalVolWeight::new(w.order(), model, law.t, law.anchor[0])?;
            Ok(gi.expect(mean, sd, &breaks, |y| payoff.eval_first(y) * weight.at(y)))
        }
        (ModelSpec::Sabr(model), WeightTag::SabrM1Marginal) => {
            if law.dim() != 2 {
                return Err(invalid("law", "the marginal SABR weight reads the 2-d proxy"));
            }
            let weight = SabrMarginalWeight::new(model, law.t, law.anchor[0], law.anchor[1])?;
            Ok(gi.expect(mean, sd, &breaks, |y| payoff.eval_first(y) * weight.at(y)))
        }
        (ModelSpec::Sabr(_), _) => Err(AewError::Unsupported(
            "the two-dimensional SABR weight is priced by q_step_sabr".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SabrStepMode {
    MarginalQuadrature,
    TwoDimMc,
}

/// One SABR step from `x = (log-spot, vol)` over `t` at order `m ≤ 1`.
/// The payoff reads the exponential of the log-spot.
#[allow(clippy::too_many_arguments)]
pub fn q_step_sabr(
    model: &LogNormalSabr,
    x: [f64; 2],
    t: f64,
    payoff: &PayoffSpec,
    m: u8,
    mode: SabrStepMode,
    paths: u64,
    stream: &RngStream,
) -> Result<PriceEstimate> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("must be positive, got {t}")));
    }
    if m > 1 {
        return Err(AewError::UnsupportedOrder(m));
    }
    let payoff = payoff.with_map(UnderlyingMap::ExpOfFirstCoordinate);
    match mode {
        SabrStepMode::MarginalQuadrature => {
            let v = sabr_marginal_quadrature(model, x[0], x[1], t, &payoff, m, default_integrator())?;
            Ok(PriceEstimate::deterministic(
                v,
                MethodDescriptor::new(m, 1, 1.0, PricingMode::SabrMarginal),
            ))
        }
        SabrStepMode::TwoDimMc => {
            if paths < MIN_PATHS {
                return Err(invalid("paths", format!("need at least {MIN_PATHS}, got {paths}")));
            }
            let w = SabrTwoDimWeight::new(model, t, x[0], x[1])?;
            let (eps_eta, rho, rb) = (model.nu * model.eta, model.rho, model.rho_bar());
            let (x1, s) = (x[0], x[1]);
            let sq = t.sqrt();
            let stats = simulate(paths, 1, |p, out| {
                let mut rng = stream.path(p);
                let b = sq * rng.next_normal();
                let z = rho * b + rb * sq * rng.next_normal();
                let y1 = x1 - 0.5 * eps_eta * s * s * t + eps_eta * s * b;
                let weight = if m == 0 { 1.0 } else { w.at_coordinates(b, z) };
                out[0] = payoff.eval_first(y1) * weight;
            });
            Ok(PriceEstimate::sampled(
                &stats[0],
                stream.seed(),
                MethodDescriptor::new(m, 1, 1.0, PricingMode::SabrTwoDimMc),
            ))
        }
    }
}

/// Marginal SABR step by quadrature at anchor `(x, σ)`. A nonpositive anchor
/// volatility freezes the log-spot.
pub fn sabr_marginal_quadrature(
    model: &LogNormalSabr,
    x: f64,
    sigma: f64,
    t: f64,
    payoff: &PayoffSpec,
    m: u8,
    gi: &GaussianIntegrator,
) -> Result<f64> {
    if sigma <= 0.0 || t == 0.0 {
        return Ok(payoff.eval_first(x));
    }
    let w = SabrMarginalWeight::new(model, t, x, sigma)?;
    let breaks: Vec<f64> = payoff.kink().into_iter().collect();
    Ok(gi.expect(w.proxy_mean(), w.proxy_sd(), &breaks, |y| {
        let weight = if m == 0 { 1.0 } else { w.at(y) };
        payoff.eval_first(y) * weight
    }))
}

/// The same marginal SABR step in closed form. With `Y = μ + σ_e b`,
/// `b ~ N(0, t)`, Gaussian integration by parts gives
/// `E[g(b) h_k(b; t)] = t^k E[g^(k)(b)]`, and the derivatives of the
/// exponential call payoff are explicit up to point masses at the strike.
pub fn sabr_marginal_closed_form(
    model: &LogNormalSabr,
    x: f64,
    sigma: f64,
    t: f64,
    payoff: &PayoffSpec,
    m: u8,
) -> Result<f64> {
    if m > 1 {
        return Err(AewError::UnsupportedOrder(m));
    }
    if payoff.underlying_map != UnderlyingMap::ExpOfFirstCoordinate {
        return Err(invalid("payoff", "the SABR step prices exp(log-spot) payoffs"));
    }
    if sigma <= 0.0 || t == 0.0 {
        return Ok(payoff.eval_first(x));
    }
    let eps_eta = model.nu * model.eta;
    let se = eps_eta * sigma;
    let mu = x - 0.5 * se * se * t;
    let fwd = (mu + 0.5 * se * se * t).exp();
    let k = payoff.strike;
    // correction term for the payoff (e^Y − K)^+ and for the linear part e^Y − K
    let corr = |e2: f64, e3: f64| model.nu * model.rho * (0.5 * t * t * e3 - 0.5 * sigma * t * t * e2);
    match payoff.kind {
        PayoffKind::Identity => {
            let lin = corr(se * se * fwd, se * se * se * fwd);
            Ok(fwd + if m == 1 { lin } else { 0.0 })
        }
        PayoffKind::Call | PayoffKind::Put => {
            if !(k > 0.0) {
                return Err(invalid("strike", "must be positive for exp payoffs"));
            }
            let sd = se * t.sqrt();
            let d1 = (x - k.ln() + 0.5 * sd * sd) / sd;
            let d2 = d1 - sd;
            let call0 = fwd * normal_cdf(d1) - k * normal_cdf(d2);
            let bk = (k.ln() - mu) / se;
            let dens = normal_pdf(bk / t.sqrt()) / t.sqrt();
            let e2 = se * se * fwd * normal_cdf(d1) + se * k * dens;
            let e3 = se * se * se * fwd * normal_cdf(d1) + se * se * k * dens + se * k * (bk / t) * dens;
            let call = call0 + if m == 1 { corr(e2, e3) } else { 0.0 };
            if payoff.kind == PayoffKind::Call {
                Ok(call)
            } else {
                let lin = fwd - k + if m == 1 { corr(se * se * fwd, se * se * se * fwd) } else { 0.0 };
                Ok(call - lin)
            }
        }
    }
}

/// `E[payoff(Y)]` for `Y ~ N(mean, sd²)`.
pub fn bachelier_price(payoff: &PayoffSpec, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return payoff.eval_first(mean);
    }
    let k = payoff.strike;
    let d = (mean - k) / sd;
    match payoff.kind {
        PayoffKind::Identity => mean,
        PayoffKind::Call => (mean - k) * normal_cdf(d) + sd * normal_pdf(d),
        PayoffKind::Put => (k - mean) * normal_cdf(-d) + sd * normal_pdf(d),
    }
}

/// Zero-rate Black–Scholes price of `payoff` on a spot with volatility `vol`.
pub fn black_scholes_price(payoff: &PayoffSpec, spot: f64, vol: f64, t: f64) -> f64 {
    let sd = vol * t.sqrt();
    if sd == 0.0 {
        return payoff.eval_first(spot);
    }
    let k = payoff.strike;
    match payoff.kind {
        PayoffKind::Identity => spot,
        PayoffKind::Call | PayoffKind::Put => {
            let d1 = ((spot / k).ln() + 0.5 * sd * sd) / sd;
            let d2 = d1 - sd;
            if payoff.kind == PayoffKind::Call {
                spot * normal_cdf(d1) - k * normal_cdf(d2)
            } else {
                k * normal_cdf(-d2) - spot * normal_cdf(-d1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_proxy::proxy_law;
    use crate::models::{build_local_vol, build_sabr};
    use crate::weights::SabrWeightKind;
    use nalgebra::DVector;

    fn lv_law(t: f64) -> (crate::models::LocalVolCev, ProxyLaw) {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        let law = proxy_law(&lv, &DVector::from_vec(vec![100.0]), t, 0.4).unwrap();
        (lv, law)
    }

    #[test]
    fn bachelier_at_the_money() {
        let (lv, law) = lv_law(1.0);
        let w = WeightFunction::local_vol(&lv, 0).unwrap();
        let v = q_step_1d(&law, &w, &PayoffSpec::call(100.0), 128).unwrap();
        assert!((v - 40.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-9);
        let v = q_step_1d(&law, &w, &PayoffSpec::identity(), 128).unwrap();
        assert!((v - 100.0).abs() < 1e-10);
        assert!(q_step_1d(&law, &w, &PayoffSpec::identity(), 8).is_err());
    }

    #[test]
    fn degenerate_law_returns_payoff() {
        let (lv, mut law) = lv_law(1.0);
        law.sigma[(0, 0)] = 0.0;
        let w = WeightFunction::local_vol(&lv, 2).unwrap();
        assert_eq!(q_step_1d(&law, &w, &PayoffSpec::put(120.0), 128).unwrap(), 20.0);
    }

    #[test]
    fn parity_linearity_and_node_doubling() {
        let (lv, law) = lv_law(1.0);
        for m in 0..=2 {
            let w = WeightFunction::local_vol(&lv, m).unwrap();
            let id = q_step_1d(&law, &w, &PayoffSpec::identity(), 128).unwrap();
            for k in [50.0, 100.0, 170.0] {
                let c = q_step_1d(&law, &w, &PayoffSpec::call(k), 128).unwrap();
                let p = q_step_1d(&law, &w, &PayoffSpec::put(k), 128).unwrap();
                assert!((c - p - (id - k)).abs() < 1e-9, "m={m} K={k}");
                let c2 = q_step_1d(&law, &w, &PayoffSpec::call(k), 256).unwrap();
                assert!((c - c2).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn call_prices_monotone_in_strike_near_the_money() {
        let (lv, law) = lv_law(1.0);
        for m in 0..=2 {
            let w = WeightFunction::local_vol(&lv, m).unwrap();
            let prices: Vec<f64> = (0..=24)
                .map(|i| 100.0 - 120.0 + 10.0 * i as f64)
                .map(|k| q_step_1d(&law, &w, &PayoffSpec::call(k), 128).unwrap())
                .collect();
            assert!(prices.windows(2).all(|p| p[1] <= p[0] + 1e-12), "m={m}");
        }
    }

    #[test]
    fn sabr_zero_order_is_black_scholes() {
        let model = build_sabr(100.0, 0.3, 0.1, -0.5).unwrap();
        let x = [model.x0, model.sigma0];
        let s = RngStream::new(1, 0);
        for k in [60.0, 100.0, 150.0] {
            let call = PayoffSpec::call(k);
            let v = q_step_sabr(&model, x, 1.0, &call, 0, SabrStepMode::MarginalQuadrature, 0, &s).unwrap();
            let bs = black_scholes_price(&call, 100.0, 0.3, 1.0);
            assert!((v.value - bs).abs() < 1e-10, "K={k}");
            assert_eq!(v.std_err, 0.0);
        }
    }

    #[test]
    fn sabr_closed_form_matches_quadrature() {
        let model = build_sabr(100.0, 0.3, 0.1, -0.5).unwrap();
        for &(x, s, t) in &[(model.x0, 0.3, 1.0), (4.4, 0.25, 0.5), (4.8, 0.4, 2.0)] {
            for m in 0..=1 {
                for k in [50.0, 100.0, 140.0, 200.0] {
                    for p in [PayoffSpec::call(k), PayoffSpec::put(k), PayoffSpec::identity()] {
                        let p = p.with_map(UnderlyingMap::ExpOfFirstCoordinate);
                        let q = sabr_marginal_quadrature(&model, x, s, t, &p, m, default_integrator()).unwrap();
                        let c = sabr_marginal_closed_form(&model, x, s, t, &p, m).unwrap();
                        assert!((q - c).abs() < 1e-10, "x={x} s={s} t={t} m={m} {p:?}: {q} vs {c}");
                    }
                }
            }
        }
    }

    #[test]
    fn sabr_two_dim_mc_agrees_with_marginal() {
        let model = build_sabr(100.0, 0.3, 0.1, -0.5).unwrap();
        let x = [model.x0, model.sigma0];
        let s = RngStream::new(77, 2);
        for k in [80.0, 100.0, 130.0] {
            let call = PayoffSpec::call(k);
            let q = q_step_sabr(&model, x, 1.0, &call, 1, SabrStepMode::MarginalQuadrature, 0, &s).unwrap();
            let mc = q_step_sabr(&model, x, 1.0, &call, 1, SabrStepMode::TwoDimMc, 200_000, &s).unwrap();
            assert!((q.value - mc.value).abs() < 3.0 * mc.std_err, "K={k} {q:?} {mc:?}");
        }
        assert!(q_step_sabr(&model, x, 1.0, &PayoffSpec::call(100.0), 1, SabrStepMode::TwoDimMc, 999, &s).is_err());
    }

    #[test]
    fn sabr_marginal_through_q_step_1d() {
        let model = build_sabr(100.0, 0.3, 0.1, -0.5).unwrap();
        let law = proxy_law(&model, &model.initial_state(), 1.0, model.nu).unwrap();
        let w = WeightFunction::sabr(&model, SabrWeightKind::Marginal);
        let p = PayoffSpec::call(110.0).with_map(UnderlyingMap::ExpOfFirstCoordinate);
        let a = q_step_1d(&law, &w, &p, 128).unwrap();
        let b = sabr_marginal_closed_form(&model, model.x0, 0.3, 1.0, &p, 1).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn black_scholes_reference_value() {
        let v = black_scholes_price(&PayoffSpec::call(100.0), 100.0, 0.4, 1.0);
        assert!((v - 15.851_941_887_820_608).abs() < 1e-10, "{v}");
    }
}
