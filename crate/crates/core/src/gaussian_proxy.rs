//! The Gaussian proxy `X̄ = X⁰ + ε ∂_ε X|_{ε=0}`.
//!
//! `X̄_t` is normal with mean `X⁰_t + ε μ(t)` and covariance `ε² Σ(t)`, where
//!
//! ```text
//! μ(t)  = ∫_0^t J_t J_u⁻¹ ∂_ε V0(0, X⁰_u) du
//! Σ(t)  = Σ_k ∫_0^t (J_t J_s⁻¹ V_k(X⁰_s)) (J_t J_s⁻¹ V_k(X⁰_s))ᵀ ds
//! ```
//!
//! For models whose skeleton is constant (`V0(0,·) ≡ 0`) the integrands are
//! constant and both reduce to `t` times their value at the anchor. Otherwise
//! the skeleton and its Jacobian are integrated with fixed-step RK4
//! (256 steps per unit time) and μ, Σ by composite Simpson on the same grid.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, AewError, Result};
use crate::models::VectorFieldSet;
use crate::rng::RngStream;

const RK4_STEPS_PER_UNIT: f64 = 256.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyLaw {
    pub skeleton: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub epsilon: f64,
    pub t: f64,
    pub anchor: DVector<f64>,
}

impl ProxyLaw {
    pub fn dim(&self) -> usize {
        self.skeleton.len()
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.skeleton + &self.mu * self.epsilon
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.sigma * (self.epsilon * self.epsilon)
    }

    /// Lower Cholesky factor of `ε² Σ`, with a rounding ridge when needed.
    pub fn cholesky_factor(&self) -> Result<DMatrix<f64>> {
        cholesky_with_ridge(&self.covariance())
    }
}

/// Skeleton trajectory sampled on a uniform grid, with Jacobians.
struct SkeletonPath {
    h: f64,
    states: Vec<DVector<f64>>,
    jacobians: Vec<DMatrix<f64>>,
}

fn simpson_steps(t: f64) -> usize {
    let n = (RK4_STEPS_PER_UNIT * t).ceil().max(2.0) as usize;
    n + n % 2
}

fn integrate_skeleton(model: &dyn VectorFieldSet, x: &DVector<f64>, t: f64) -> Result<SkeletonPath> {
    let n = simpson_steps(t);
    let h = t / n as f64;
    let dim = model.state_dim();
    let rhs = |xs: &DVector<f64>, js: &DMatrix<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let dx = model.drift(0.0, xs)?;
        let dj = model.drift_jacobian_at_zero(xs)? * js;
        Ok((dx, dj))
    };
    let mut states = Vec::with_capacity(n + 1);
    let mut jacobians = Vec::with_capacity(n + 1);
    let mut xs = x.clone();
    let mut js = DMatrix::<f64>::identity(dim, dim);
    states.push(xs.clone());
    jacobians.push(js.clone());
    for step in 0..n {
        let (k1x, k1j) = rhs(&xs, &js)?;
        let (k2x, k2j) = rhs(&(&xs + &k1x * (h / 2.0)), &(&js + &k1j * (h / 2.0)))?;
        let (k3x, k3j) = rhs(&(&xs + &k2x * (h / 2.0)), &(&js + &k2j * (h / 2.0)))?;
        let (k4x, k4j) = rhs(&(&xs + &k3x * h), &(&js + &k3j * h))?;
        xs += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        js += (k1j + k2j * 2.0 + k3j * 2.0 + k4j) * (h / 6.0);
        if xs.iter().chain(js.iter()).any(|v| !v.is_finite()) {
            return Err(AewError::OdeDiverged {
                t: (step + 1) as f64 * h,
            });
        }
        states.push(xs.clone());
        jacobians.push(js.clone());
    }
    Ok(SkeletonPath {
        h,
        states,
        jacobians,
    })
}

fn simpson_weight(i: usize, n: usize) -> f64 {
    if i == 0 || i == n {
        1.0
    } else if i % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(invalid("t", format!("must be nonnegative, got {t}")))
    }
}

/// `(X⁰_t, J_t)`; exactly `(x, I)` when the skeleton is constant.
pub fn skeleton_and_jacobian(
    model: &dyn VectorFieldSet,
    x: &DVector<f64>,
    t: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_time(t)?;
    let n = model.state_dim();
    if model.skeleton_is_constant() || t == 0.0 {
        return Ok((x.clone(), DMatrix::identity(n, n)));
    }
    let path = integrate_skeleton(model, x, t)?;
    Ok((
        path.states.last().unwrap().clone(),
        path.jacobians.last().unwrap().clone(),
    ))
}

/// μ(t).
pub fn mean_shift(model: &dyn VectorFieldSet, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    check_time(t)?;
    if model.skeleton_is_constant() || t == 0.0 {
        return Ok(model.drift_eps_deriv_at_zero(x)? * t);
    }
    let path = integrate_skeleton(model, x, t)?;
    let n = path.states.len() - 1;
    let jt = &path.jacobians[n];
    let mut acc = DVector::zeros(model.state_dim());
    for i in 0..=n {
        let ju_inv = path.jacobians[i]
            .clone()
            .try_inverse()
            .ok_or(AewError::OdeDiverged { t: i as f64 * path.h })?;
        acc += ju_inv * model.drift_eps_deriv_at_zero(&path.states[i])? * simpson_weight(i, n);
    }
    Ok(jt * acc * (path.h / 3.0))
}

/// Σ(t).
pub fn covariance(model: &dyn VectorFieldSet, x: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
    check_time(t)?;
    if model.skeleton_is_constant() || t == 0.0 {
        return Ok(model.diffusion_matrix(x)? * t);
    }
    let path = integrate_skeleton(model, x, t)?;
    let n = path.states.len() - 1;
    let jt = &path.jacobians[n];
    let dim = model.state_dim();
    let mut acc = DMatrix::zeros(dim, dim);
    for i in 0..=n {
        let ju_inv = path.jacobians[i]
            .clone()
            .try_inverse()
            .ok_or(AewError::OdeDiverged { t: i as f64 * path.h })?;
        let a = model.diffusion_matrix(&path.states[i])?;
        acc += &ju_inv * a * ju_inv.transpose() * simpson_weight(i, n);
    }
    let sigma = jt * acc * jt.transpose() * (path.h / 3.0);
    // symmetrize rounding
    Ok((&sigma + sigma.transpose()) * 0.5)
}

/// Law of `X̄_t` started at `x`.
pub fn proxy_law(model: &dyn VectorFieldSet, x: &DVector<f64>, t: f64, epsilon: f64) -> Result<ProxyLaw> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("must be positive, got {t}")));
    }
    let (skeleton, jacobian) = skeleton_and_jacobian(model, x, t)?;
    Ok(ProxyLaw {
        skeleton,
        jacobian,
        mu: mean_shift(model, x, t)?,
        sigma: covariance(model, x, t)?,
        epsilon,
        t,
        anchor: x.clone(),
    })
}

/// Lower Cholesky factor of a PSD matrix. A ridge of 1e-14·trace is added when
/// the plain factorization fails, growing tenfold up to 1e-10·trace.
pub fn cholesky_with_ridge(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let trace = cov.trace();
    if trace == 0.0 && cov.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let mut ridge = 1e-14 * trace;
    while ridge <= 1e-10 * trace * (1.0 + 1e-12) {
        let shifted = cov + DMatrix::identity(n, n) * ridge;
        if let Some(ch) = shifted.cholesky() {
            return Ok(ch.l());
        }
        ridge *= 10.0;
    }
    Err(AewError::NotPositiveSemidefinite { ridge })
}

/// `count` i.i.d. draws of the proxy law as rows of a `count × N` matrix.
/// Draw `i` uses substream `(stream.tag, i)`.
pub fn sample(law: &ProxyLaw, count: usize, stream: &RngStream) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Err(invalid("count", "must be at least 1"));
    }
    let l = law.cholesky_factor()?;
    let mean = law.mean();
    let dim = law.dim();
    let mut flat = vec![0.0; count * dim];
    flat.par_chunks_mut(dim).enumerate().for_each(|(i, row)| {
        let mut rng = stream.path(i as u64);
        let z: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
        for r in 0..dim {
            let mut v = mean[r];
            for c in 0..=r {
                v += l[(r, c)] * z[c];
            }
            row[r] = v;
        }
    });
    Ok(DMatrix::from_row_slice(count, dim, &flat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_local_vol, build_sabr, LinearScalarModel};

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn constant_skeleton_short_circuits() {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        let (s, j) = skeleton_and_jacobian(&lv, &dv(&[100.0]), 1.0).unwrap();
        assert_eq!(s[0], 100.0);
        assert_eq!(j[(0, 0)], 1.0);
        let sabr = build_sabr(100.0, 0.3, 0.1, -0.5).unwrap();
        let x = sabr.initial_state();
        let (s, j) = skeleton_and_jacobian(&sabr, &x, 2.0).unwrap();
        assert_eq!(s, x);
        assert_eq!(j, DMatrix::identity(2, 2));
    }

    #[test]
    fn mean_shift_examples() {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        assert_eq!(mean_shift(&lv, &dv(&[100.0]), 0.7).unwrap()[0], 0.0);
        let sabr = build_sabr(100.0, 0.3, 0.1, -0.5).unwrap();
        let x = sabr.initial_state();
        let m1 = mean_shift(&sabr, &x, 1.0).unwrap();
        let m2 = mean_shift(&sabr, &x, 2.0).unwrap();
        assert!((m1[0] + 0.45).abs() < 1e-12 && m1[1] == 0.0);
        assert!((m2[0] + 0.90).abs() < 1e-12);
        assert_eq!(m2[0], 2.0 * m1[0]);
    }

    #[test]
    fn covariance_examples() {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        let c = covariance(&lv, &dv(&[100.0]), 1.0).unwrap();
        assert!((c[(0, 0)] - 10000.0).abs() < 1e-9);
        let sabr = build_sabr(100.0, 0.3, 0.1, -0.5).unwrap();
        let c = covariance(&sabr, &sabr.initial_state(), 1.0).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[9.0, -0.45, -0.45, 0.09]);
        assert!((c - want).amax() < 1e-12);
        assert_eq!(covariance(&lv, &dv(&[100.0]), 0.0).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn covariance_linear_and_monotone_in_t() {
        let sabr = build_sabr(100.0, 0.3, 0.1, -0.5).unwrap();
        let x = sabr.initial_state();
        let c1 = covariance(&sabr, &x, 0.5).unwrap();
        let c2 = covariance(&sabr, &x, 1.0).unwrap();
        assert_eq!(c2, &c1 * 2.0);
        let diff = c2 - c1;
        let eig = diff.symmetric_eigenvalues();
        assert!(eig.iter().all(|e| *e >= -1e-15));
    }

    #[test]
    fn proxy_law_examples() {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        let law = proxy_law(&lv, &dv(&[100.0]), 1.0, 0.4).unwrap();
        assert_eq!(law.mean()[0], 100.0);
        assert!((law.covariance()[(0, 0)] - 1600.0).abs() < 1e-9);
        let law = proxy_law(&lv, &dv(&[100.0]), 0.25, 0.4).unwrap();
        assert!((law.covariance()[(0, 0)] - 400.0).abs() < 1e-9);

        let sabr = build_sabr(100.0, 0.3, 0.1, -0.5).unwrap();
        let law = proxy_law(&sabr, &sabr.initial_state(), 1.0, sabr.nu).unwrap();
        let m = law.mean();
        assert!((m[0] - (100f64.ln() - 0.045)).abs() < 1e-12);
        assert!((m[1] - 0.3).abs() < 1e-15);
        let want = DMatrix::from_row_slice(2, 2, &[9.0, -0.45, -0.45, 0.09]) * 0.01;
        assert!((law.covariance() - want).amax() < 1e-14);
        assert!(proxy_law(&lv, &dv(&[100.0]), 0.0, 0.4).is_err());
    }

    #[test]
    fn generic_linear_model_matches_closed_form() {
        let m = LinearScalarModel {
            a: 0.3,
            c: 0.7,
            v: 1.5,
            epsilon: 0.2,
        };
        let x = dv(&[2.0]);
        let t = 1.3;
        let (s, j) = skeleton_and_jacobian(&m, &x, t).unwrap();
        let e = (m.a * t).exp();
        assert!((s[0] - 2.0 * e).abs() < 1e-10);
        assert!((j[(0, 0)] - e).abs() < 1e-10);
        let mu = mean_shift(&m, &x, t).unwrap()[0];
        assert!((mu - m.c * (e - 1.0) / m.a).abs() < 1e-9);
        let sig = covariance(&m, &x, t).unwrap()[(0, 0)];
        let want = m.v * m.v * ((2.0 * m.a * t).exp() - 1.0) / (2.0 * m.a);
        assert!((sig - want).abs() < 1e-9);
    }

    #[test]
    fn sampling_is_deterministic_and_degenerate_safe() {
        let lv = build_local_vol(100.0, 0.5, 0.4).unwrap();
        let law = proxy_law(&lv, &dv(&[100.0]), 1.0, 0.4).unwrap();
        let s = RngStream::new(9, 0);
        let a = sample(&law, 100, &s).unwrap();
        let b = sample(&law, 100, &s).unwrap();
        assert_eq!(a, b);

        let mut flat = law.clone();
        flat.sigma = DMatrix::zeros(1, 1);
        let d = sample(&flat, 10, &s).unwrap();
        assert!(d.iter().all(|v| *v == 100.0));
    }

    #[test]
    fn ridge_rescues_rounding_only() {
        let nearly = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(cholesky_with_ridge(&nearly).is_ok());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_with_ridge(&indefinite),
            Err(AewError::NotPositiveSemidefinite { .. })
        ));
    }
}
