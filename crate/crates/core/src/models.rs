//! Perturbed SDE models and payoffs.
//!
//! A model is the vector-field set of
//! `dX = V0(ε, X) dt + ε Σ_j V_j(X) dB^j`, together with the analytic first
//! derivatives that the weight closed forms need.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, AewError, Result};

/// Vector fields of a perturbed SDE. Jacobians are `N×N` with entry
/// `(i, k) = ∂V^i/∂x_k`.
pub trait VectorFieldSet: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn drift(&self, epsilon: f64, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn drift_eps_deriv_at_zero(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn diffusion(&self, j: usize, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn diffusion_jacobian(&self, j: usize, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// ∂_x V0(0, x). The default is a central difference; models with a
    /// nontrivial skeleton should override it.
    fn drift_jacobian_at_zero(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.state_dim();
        let mut jac = DMatrix::zeros(n, n);
        for k in 0..n {
            let h = 1e-6 * x[k].abs().max(1.0);
            let mut up = x.clone();
            let mut dn = x.clone();
            up[k] += h;
            dn[k] -= h;
            let col = (self.drift(0.0, &up)? - self.drift(0.0, &dn)?) / (2.0 * h);
            jac.set_column(k, &col);
        }
        Ok(jac)
    }

    /// True when V0(0, ·) ≡ 0, so the skeleton is constant and J = I.
    fn skeleton_is_constant(&self) -> bool {
        false
    }

    /// Perturbation size ε of the model.
    fn epsilon(&self) -> f64;

    /// A(x) = Σ_j V_j V_jᵀ.
    fn diffusion_matrix(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.state_dim();
        let mut a = DMatrix::zeros(n, n);
        for j in 0..self.noise_dim() {
            let v = self.diffusion(j, x)?;
            a += &v * v.transpose();
        }
        Ok(a)
    }
}

/// Central-difference Jacobian of `diffusion[j]`, for validating the analytic one.
pub fn fd_diffusion_jacobian(
    model: &dyn VectorFieldSet,
    j: usize,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = model.state_dim();
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let h = 1e-5 * x[k].abs().max(1e-3);
        let mut up = x.clone();
        let mut dn = x.clone();
        up[k] += h;
        dn[k] -= h;
        let col = (model.diffusion(j, &up)? - model.diffusion(j, &dn)?) / (2.0 * h);
        jac.set_column(k, &col);
    }
    Ok(jac)
}

/// CEV-type local volatility `dS = ε σ(S) dB`, `σ(S) = s0^{1-β} S^β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalVolCev {
    pub s0: f64,
    pub beta: f64,
    pub epsilon: f64,
}

pub fn build_local_vol(s0: f64, beta: f64, epsilon: f64) -> Result<LocalVolCev> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(invalid("s0", format!("must be positive, got {s0}")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid("beta", format!("must lie in (0, 1], got {beta}")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(invalid("epsilon", format!("must lie in (0, 1], got {epsilon}")));
    }
    Ok(LocalVolCev { s0, beta, epsilon })
}

impl LocalVolCev {
    fn scale(&self) -> f64 {
        self.s0.powf(1.0 - self.beta)
    }

    pub fn sigma(&self, x: f64) -> Result<f64> {
        if x > 0.0 {
            Ok(self.sigma_unchecked(x))
        } else {
            Err(AewError::Domain {
                value: x,
                domain: "spot must be positive",
            })
        }
    }

    /// σ(x) for x > 0; the caller owns the domain check.
    #[inline]
    pub fn sigma_unchecked(&self, x: f64) -> f64 {
        if self.beta == 1.0 {
            x
        } else {
            self.scale() * x.powf(self.beta)
        }
    }

    /// σ′(x) = β σ(x) / x.
    #[inline]
    pub fn dsigma_unchecked(&self, x: f64) -> f64 {
        if self.beta == 1.0 {
            1.0
        } else {
            self.beta * self.scale() * x.powf(self.beta - 1.0)
        }
    }

    /// σ″(x) = β(β−1) σ(x) / x².
    #[inline]
    pub fn d2sigma_unchecked(&self, x: f64) -> f64 {
        if self.beta == 1.0 {
            0.0
        } else {
            self.beta * (self.beta - 1.0) * self.scale() * x.powf(self.beta - 2.0)
        }
    }

    /// σ evaluated at max(x, floor).
    #[inline]
    pub fn sigma_floored(&self, x: f64, floor: f64) -> f64 {
        self.sigma_unchecked(x.max(floor))
    }
}

impl VectorFieldSet for LocalVolCev {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift(&self, _epsilon: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.sigma(x[0])?;
        Ok(DVector::zeros(1))
    }
    fn drift_eps_deriv_at_zero(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.sigma(x[0])?;
        Ok(DVector::zeros(1))
    }
    fn diffusion(&self, j: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        debug_assert_eq!(j, 0);
        Ok(DVector::from_element(1, self.sigma(x[0])?))
    }
    fn diffusion_jacobian(&self, j: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        debug_assert_eq!(j, 0);
        self.sigma(x[0])?;
        Ok(DMatrix::from_element(1, 1, self.dsigma_unchecked(x[0])))
    }
    fn drift_jacobian_at_zero(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(1, 1))
    }
    fn skeleton_is_constant(&self) -> bool {
        true
    }
    fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Perturbed logarithmic SABR model with state `(X1, σ)`, `ε = ν`, `η = 1/ν`:
///
/// `dX1 = ε[−η σ²/2 dt + η σ dB¹]`, `dσ = ε σ (ρ dB¹ + √(1−ρ²) dB²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalSabr {
    pub z: f64,
    pub sigma0: f64,
    pub nu: f64,
    pub rho: f64,
    pub eta: f64,
    pub x0: f64,
}

pub fn build_sabr(z: f64, sigma0: f64, nu: f64, rho: f64) -> Result<LogNormalSabr> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(invalid("z", format!("must be positive, got {z}")));
    }
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(invalid("sigma0", format!("must be positive, got {sigma0}")));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(invalid("nu", format!("must lie in (0, 1], got {nu}")));
    }
    if !(rho.abs() < 1.0) {
        return Err(invalid("rho", format!("must satisfy |rho| < 1, got {rho}")));
    }
    let eta = 1.0 / nu;
    if ((eta * nu) - 1.0).abs() > 4.0 * f64::EPSILON {
        return Err(invalid("nu", "eta·nu must equal 1"));
    }
    Ok(LogNormalSabr {
        z,
        sigma0,
        nu,
        rho,
        eta,
        x0: z.ln(),
    })
}

impl LogNormalSabr {
    pub fn rho_bar(&self) -> f64 {
        (1.0 - self.rho * self.rho).sqrt()
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.x0, self.sigma0])
    }
}

impl VectorFieldSet for LogNormalSabr {
    fn state_dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn drift(&self, epsilon: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let s = x[1];
        Ok(DVector::from_vec(vec![-epsilon * self.eta * s * s / 2.0, 0.0]))
    }
    fn drift_eps_deriv_at_zero(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let s = x[1];
        Ok(DVector::from_vec(vec![-self.eta * s * s / 2.0, 0.0]))
    }
    fn diffusion(&self, j: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let s = x[1];
        Ok(match j {
            0 => DVector::from_vec(vec![self.eta * s, self.rho * s]),
            _ => DVector::from_vec(vec![0.0, self.rho_bar() * s]),
        })
    }
    fn diffusion_jacobian(&self, j: usize, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(match j {
            0 => DMatrix::from_row_slice(2, 2, &[0.0, self.eta, 0.0, self.rho]),
            _ => DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, self.rho_bar()]),
        })
    }
    fn drift_jacobian_at_zero(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(2, 2))
    }
    fn skeleton_is_constant(&self) -> bool {
        true
    }
    fn epsilon(&self) -> f64 {
        self.nu
    }
}

/// Scalar linear model `dX = (a X + ε c) dt + ε v dB`. Its skeleton, mean
/// shift and covariance have closed forms, which makes it the reference for
/// the generic ODE path of the Gaussian proxy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearScalarModel {
    pub a: f64,
    pub c: f64,
    pub v: f64,
    pub epsilon: f64,
}

impl VectorFieldSet for LinearScalarModel {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift(&self, epsilon: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, self.a * x[0] + epsilon * self.c))
    }
    fn drift_eps_deriv_at_zero(&self, _x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, self.c))
    }
    fn diffusion(&self, _j: usize, _x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, self.v))
    }
    fn diffusion_jacobian(&self, _j: usize, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(1, 1))
    }
    fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// One of the two concrete models, for code that dispatches on the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    LocalVol(LocalVolCev),
    Sabr(LogNormalSabr),
}

impl ModelSpec {
    /// Initial state: `(s0)` or `(ln z, σ0)`.
    pub fn initial_state(&self) -> Vec<f64> {
        match self {
            ModelSpec::LocalVol(m) => vec![m.s0],
            ModelSpec::Sabr(m) => vec![m.x0, m.sigma0],
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            ModelSpec::LocalVol(m) => m.epsilon,
            ModelSpec::Sabr(m) => m.nu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayoffKind {
    Call,
    Put,
    Identity,
}

/// How the payoff reads the state: the first coordinate itself, or its exponential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnderlyingMap {
    Level,
    ExpOfFirstCoordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffSpec {
    pub kind: PayoffKind,
    pub strike: f64,
    pub underlying_map: UnderlyingMap,
}

impl PayoffSpec {
    pub fn call(strike: f64) -> Self {
        Self {
            kind: PayoffKind::Call,
            strike,
            underlying_map: UnderlyingMap::Level,
        }
    }

    pub fn put(strike: f64) -> Self {
        Self {
            kind: PayoffKind::Put,
            strike,
            underlying_map: UnderlyingMap::Level,
        }
    }

    pub fn identity() -> Self {
        Self {
            kind: PayoffKind::Identity,
            strike: 0.0,
            underlying_map: UnderlyingMap::Level,
        }
    }

    pub fn with_map(mut self, map: UnderlyingMap) -> Self {
        self.underlying_map = map;
        self
    }

    /// Payoff as a function of the first state coordinate.
    #[inline]
    pub fn eval_first(&self, x1: f64) -> f64 {
        let u = match self.underlying_map {
            UnderlyingMap::Level => x1,
            UnderlyingMap::ExpOfFirstCoordinate => x1.exp(),
        };
        match self.kind {
            PayoffKind::Call => (u - self.strike).max(0.0),
            PayoffKind::Put => (self.strike - u).max(0.0),
            PayoffKind::Identity => u,
        }
    }

    pub fn eval(&self, state: &[f64]) -> f64 {
        self.eval_first(state[0])
    }

    /// Derivative in the first coordinate (a.e.).
    #[inline]
    pub fn deriv_first(&self, x1: f64) -> f64 {
        let (u, du) = match self.underlying_map {
            UnderlyingMap::Level => (x1, 1.0),
            UnderlyingMap::ExpOfFirstCoordinate => {
                let e = x1.exp();
                (e, e)
            }
        };
        match self.kind {
            PayoffKind::Call => {
                if u > self.strike {
                    du
                } else {
                    0.0
                }
            }
            PayoffKind::Put => {
                if u < self.strike {
                    -du
                } else {
                    0.0
                }
            }
            PayoffKind::Identity => du,
        }
    }

    /// Location of the kink in the first coordinate, if any.
    pub fn kink(&self) -> Option<f64> {
        match self.kind {
            PayoffKind::Identity => None,
            _ => match self.underlying_map {
                UnderlyingMap::Level => Some(self.strike),
                UnderlyingMap::ExpOfFirstCoordinate => {
                    (self.strike > 0.0).then(|| self.strike.ln())
                }
            },
        }
    }
}

/// `eval_payoff` in free-function form.
pub fn eval_payoff(p: &PayoffSpec, state: &[f64]) -> f64 {
    p.eval(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn local_vol_examples() {
        let m = build_local_vol(100.0, 0.5, 0.4).unwrap();
        assert!((m.diffusion(0, &dv(&[100.0])).unwrap()[0] - 100.0).abs() < 1e-12);
        let jac = m.diffusion_jacobian(0, &dv(&[100.0])).unwrap()[(0, 0)];
        assert!((jac - 0.5).abs() < 1e-14);
        let fd = fd_diffusion_jacobian(&m, 0, &dv(&[100.0])).unwrap()[(0, 0)];
        assert!(((fd - jac) / jac).abs() < 1e-6);

        let lognormal = build_local_vol(100.0, 1.0, 0.4).unwrap();
        for x in [0.5, 3.0, 100.0, 1234.5] {
            assert_eq!(lognormal.sigma(x).unwrap() / x, 1.0);
        }
    }

    #[test]
    fn local_vol_rejects_bad_parameters_and_domain() {
        assert!(build_local_vol(0.0, 0.5, 0.4).is_err());
        assert!(build_local_vol(100.0, 0.5, 0.0).is_err());
        assert!(build_local_vol(100.0, 0.5, 1.5).is_err());
        assert!(build_local_vol(100.0, 1.2, 0.4).is_err());
        let m = build_local_vol(100.0, 0.5, 0.4).unwrap();
        assert!(matches!(m.sigma(-1.0), Err(AewError::Domain { .. })));
        assert!(m.diffusion(0, &dv(&[0.0])).is_err());
    }

    #[test]
    fn sabr_examples() {
        let m = build_sabr(100.0, 0.3, 0.1, -0.5).unwrap();
        let x = dv(&[100f64.ln(), 0.3]);
        let d = m.drift_eps_deriv_at_zero(&x).unwrap();
        assert!((d[0] + 0.45).abs() < 1e-12 && d[1] == 0.0);
        let v1 = m.diffusion(0, &x).unwrap();
        assert!((v1[0] - 3.0).abs() < 1e-12 && (v1[1] + 0.15).abs() < 1e-12);
        let v2 = m.diffusion(1, &x).unwrap();
        assert!(v2[0] == 0.0 && (v2[1] - 0.3 * 0.75f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.eta * m.nu, 1.0);
        assert!(build_sabr(100.0, 0.3, 0.1, 1.0).is_err());
        assert!(build_sabr(100.0, 0.3, 0.1, -1.2).is_err());
    }

    #[test]
    fn sabr_jacobians_match_finite_differences() {
        let m = build_sabr(100.0, 0.3, 0.1, -0.5).unwrap();
        let x = dv(&[4.2, 0.27]);
        for j in 0..2 {
            let a = m.diffusion_jacobian(j, &x).unwrap();
            let f = fd_diffusion_jacobian(&m, j, &x).unwrap();
            assert!((a - f).amax() < 1e-6);
        }
    }

    #[test]
    fn skeleton_drift_vanishes() {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        let sabr = build_sabr(100.0, 0.3, 0.1, -0.5).unwrap();
        for x in [1.0, 50.0, 300.0] {
            assert_eq!(lv.drift(0.0, &dv(&[x])).unwrap()[0], 0.0);
            assert_eq!(sabr.drift(0.0, &dv(&[x.ln(), 0.2])).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn payoff_examples() {
        assert_eq!(PayoffSpec::call(100.0).eval(&[140.0]), 40.0);
        let put_exp = PayoffSpec::put(100.0).with_map(UnderlyingMap::ExpOfFirstCoordinate);
        assert!(put_exp.eval(&[100f64.ln(), 0.3]).abs() < 1e-12);
        let call_exp = PayoffSpec::call(100.0).with_map(UnderlyingMap::ExpOfFirstCoordinate);
        assert!((call_exp.eval(&[120f64.ln(), 0.3]) - 20.0).abs() < 1e-12);
        assert_eq!(eval_payoff(&PayoffSpec::identity(), &[7.5]), 7.5);
    }

    proptest! {
        #[test]
        fn put_call_payoff_identity(k in 1.0..300.0f64, s in -5.0..400.0f64, exp in any::<bool>()) {
            let map = if exp { UnderlyingMap::ExpOfFirstCoordinate } else { UnderlyingMap::Level };
            let s = if exp { s / 100.0 } else { s };
            let c = PayoffSpec::call(k).with_map(map).eval(&[s]);
            let p = PayoffSpec::put(k).with_map(map).eval(&[s]);
            let u = PayoffSpec::identity().with_map(map).eval(&[s]);
            prop_assert!(c >= 0.0 && p >= 0.0);
            prop_assert!((c - p - (u - k)).abs() <= 1e-12 * u.abs().max(k));
        }
    }
}
