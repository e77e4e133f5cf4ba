//! Hermite polynomials with a variance parameter and the conditional
//! expectations of iterated Wiener integrals they produce.
//!
//! `h_l(ξ; v)` is orthogonal under N(0, v): `h_0 = 1`, `h_1 = ξ`,
//! `h_{l+1} = ξ h_l − l v h_{l−1}`. For a Brownian motion `W` with `W_t = ξ`
//! and deterministic integrands, `E[∫∫ … dW | W_t = ξ]` of order `l` is the
//! nested overlap integral times `h_l(ξ; v) / v^l`.

use crate::error::{AewError, Result};
use crate::quadrature::GaussLegendre;

/// Highest degree supported. The second-order local-vol weight needs `h_6`.
pub const MAX_HERMITE_DEGREE: usize = 8;

/// `h_l(ξ; v)` for `l ≤ 8`.
pub fn hermite(l: usize, xi: f64, v: f64) -> Result<f64> {
    if l > MAX_HERMITE_DEGREE {
        return Err(AewError::UnsupportedDegree(l));
    }
    if !(v > 0.0) {
        return Err(crate::error::invalid("v", format!("must be positive, got {v}")));
    }
    Ok(hermite_table(xi, v)[l])
}

/// `[h_0, …, h_8](ξ; v)` in one pass of the recurrence.
#[inline]
pub fn hermite_table(xi: f64, v: f64) -> [f64; MAX_HERMITE_DEGREE + 1] {
    let mut h = [0.0; MAX_HERMITE_DEGREE + 1];
    h[0] = 1.0;
    h[1] = xi;
    for l in 1..MAX_HERMITE_DEGREE {
        h[l + 1] = xi * h[l] - l as f64 * v * h[l - 1];
    }
    h
}

/// `coefficient · h_2(ξ; v) / v²`: the conditional expectation of a double
/// Wiener integral, with the caller supplying its nested overlap integral.
pub fn cond_exp_iter2(coefficient: f64, xi: f64, v: f64) -> f64 {
    coefficient * (xi * xi - v) / (v * v)
}

/// `coefficient · h_3(ξ; v) / v³`, the triple-integral analogue.
pub fn cond_exp_iter3(coefficient: f64, xi: f64, v: f64) -> f64 {
    coefficient * (xi * xi * xi - 3.0 * v * xi) / (v * v * v)
}

/// `∫_0^t ∫_0^s q2(u) q1(u) du · q3(s) q1(s) ds`, the coefficient for
/// [`cond_exp_iter2`] when `∫_0^t q1² = v`.
pub fn nested_overlap2(
    q1: impl Fn(f64) -> f64,
    q2: impl Fn(f64) -> f64,
    q3: impl Fn(f64) -> f64,
    t: f64,
) -> f64 {
    let gl = GaussLegendre::new(48);
    gl.integrate(0.0, t, |s| {
        gl.integrate(0.0, s, |u| q2(u) * q1(u)) * q3(s) * q1(s)
    })
}

/// Triple analogue of [`nested_overlap2`]:
/// `∫_0^t ∫_0^s ∫_0^r q2 q1 du · q3 q1 dr · q4 q1 ds`.
pub fn nested_overlap3(
    q1: impl Fn(f64) -> f64,
    q2: impl Fn(f64) -> f64,
    q3: impl Fn(f64) -> f64,
    q4: impl Fn(f64) -> f64,
    t: f64,
) -> f64 {
    let gl = GaussLegendre::new(32);
    gl.integrate(0.0, t, |s| {
        gl.integrate(0.0, s, |r| gl.integrate(0.0, r, |u| q2(u) * q1(u)) * q3(r) * q1(r)) * q4(s) * q1(s)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussHermite;

    #[test]
    fn examples() {
        assert_eq!(hermite(2, 2.0, 1.0).unwrap(), 3.0);
        assert_eq!(hermite(3, 1.0, 1.0).unwrap(), -2.0);
        assert_eq!(hermite(4, 0.0, 1.0).unwrap(), 3.0);
        assert_eq!(hermite(0, 5.0, 2.0).unwrap(), 1.0);
        assert_eq!(hermite(1, 5.0, 2.0).unwrap(), 5.0);
        assert!(matches!(hermite(9, 0.0, 1.0), Err(AewError::UnsupportedDegree(9))));
        assert!(hermite(2, 0.0, 0.0).is_err());
    }

    #[test]
    fn closed_forms_agree_with_recurrence() {
        for &(x, v) in &[(0.3, 0.7), (-2.0, 1.5), (4.0, 0.25)] {
            let h = hermite_table(x, v);
            assert!((h[2] - (x * x - v)).abs() < 1e-12);
            assert!((h[3] - (x * x * x - 3.0 * v * x)).abs() < 1e-12);
            let h4 = x.powi(4) - 6.0 * v * x * x + 3.0 * v * v;
            assert!((h[4] - h4).abs() < 1e-11);
        }
    }

    #[test]
    fn orthogonality_under_gaussian() {
        let gh = GaussHermite::new(64);
        for &v in &[0.25, 1.0, 2.5] {
            let sd = f64::sqrt(v);
            for k in 0..=MAX_HERMITE_DEGREE {
                for l in 0..=MAX_HERMITE_DEGREE {
                    let ip = gh.expect(0.0, sd, |x| {
                        let h = hermite_table(x, v);
                        h[k] * h[l]
                    });
                    let norm = |k: usize| (1..=k).map(|i| i as f64).product::<f64>() * v.powi(k as i32);
                    let want = if k == l { norm(k) } else { 0.0 };
                    let scale = (norm(k) * norm(l)).sqrt().max(1.0);
                    assert!((ip - want).abs() < 1e-10 * scale, "k={k} l={l} v={v}: {ip} vs {want}");
                }
            }
        }
    }

    #[test]
    fn iterated_integral_examples() {
        let c2 = nested_overlap2(|_| 1.0, |_| 1.0, |_| 1.0, 1.0);
        assert!((c2 - 0.5).abs() < 1e-14);
        assert!((cond_exp_iter2(c2, 1.0, 1.0)).abs() < 1e-15);
        assert!((cond_exp_iter2(c2, 2.0, 1.0) - 1.5).abs() < 1e-14);
        assert!((cond_exp_iter2(c2, 0.0, 1.0) + 0.5).abs() < 1e-14);
        let c3 = nested_overlap3(|_| 1.0, |_| 1.0, |_| 1.0, |_| 1.0, 1.0);
        assert!((c3 - 1.0 / 6.0).abs() < 1e-14);
        assert!((cond_exp_iter3(c3, 2.0, 1.0) - 1.0 / 3.0).abs() < 1e-14);
        assert_eq!(cond_exp_iter3(c3, 0.0, 1.0), 0.0);
        assert!((cond_exp_iter3(c3, 1.0, 1.0) + 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn double_integral_of_time_weighted_integrand() {
        // ∫_0^t s dW_s ∫ … ; with q2 = s the overlap is ∫_0^t s²/2 ds = t³/6
        let c = nested_overlap2(|_| 1.0, |u| u, |_| 1.0, 2.0);
        assert!((c - 8.0 / 6.0).abs() < 1e-13);
    }
}
