//! Gaussian quadrature rules and expectation integrals against normal laws.

use std::f64::consts::PI;

/// Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        for i in 0..m {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut pp;
            loop {
                let (mut p1, mut p2) = (1.0, 0.0);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
                }
                pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 {
                    // one more evaluation at the converged point for the weight
                    let (mut p1, mut p2) = (1.0, 0.0);
                    for j in 0..n {
                        let p3 = p2;
                        p2 = p1;
                        p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
                    }
                    pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            let w = 2.0 / ((1.0 - z * z) * pp * pp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// ∫_a^b f.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

/// Gauss–Hermite rule for the standard normal measure: Σ w_i g(z_i) ≈ E[g(Z)].
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        // roots of the physicists' polynomial via Newton on the orthonormal recurrence
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let nf = n as f64;
        let m = (n + 1) / 2;
        let mut z = 0.0;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let (mut p1, mut p2) = (pim4, 0.0);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let sqrt2 = std::f64::consts::SQRT_2;
        let nodes = x.iter().rev().map(|v| v * sqrt2).collect();
        let weights = w.iter().rev().map(|v| v / PI.sqrt()).collect();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// E[g(mean + sd·Z)].
    pub fn expect(&self, mean: f64, sd: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * g(mean + sd * z))
            .sum()
    }
}

/// Half-width of the integration window, in standard deviations.
pub const GAUSSIAN_SPAN: f64 = 12.0;

/// Expectations against N(mean, sd²) by Gauss–Legendre on the window
/// mean ± 12 sd, split at the breakpoints that fall inside it. A breakpoint is
/// any point where the integrand loses smoothness (payoff kink, domain floor).
#[derive(Debug, Clone)]
pub struct GaussianIntegrator {
    rule: GaussLegendre,
}

impl GaussianIntegrator {
    pub fn new(nodes_per_piece: usize) -> Self {
        Self {
            rule: GaussLegendre::new(nodes_per_piece),
        }
    }

    pub fn nodes_per_piece(&self) -> usize {
        self.rule.len()
    }

    /// E[f(Y)], Y ~ N(mean, sd²), sd > 0.
    pub fn expect(&self, mean: f64, sd: f64, breaks: &[f64], mut f: impl FnMut(f64) -> f64) -> f64 {
        debug_assert!(sd > 0.0);
        let mut cuts: Vec<f64> = Vec::with_capacity(breaks.len() + 2);
        cuts.push(-GAUSSIAN_SPAN);
        for &b in breaks {
            let z = (b - mean) / sd;
            if z > -GAUSSIAN_SPAN && z < GAUSSIAN_SPAN {
                cuts.push(z);
            }
        }
        cuts.push(GAUSSIAN_SPAN);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let norm = 1.0 / (2.0 * PI).sqrt();
        let mut total = 0.0;
        for w in cuts.windows(2) {
            if w[1] - w[0] <= 0.0 {
                continue;
            }
            total += self
                .rule
                .integrate(w[0], w[1], |z| f(mean + sd * z) * (-0.5 * z * z).exp());
        }
        total * norm
    }
}

impl Default for GaussianIntegrator {
    fn default() -> Self {
        Self::new(128)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let gl = GaussLegendre::new(8);
        // degree 15 is exact for 8 nodes
        let v = gl.integrate(0.0, 2.0, |x| x.powi(15));
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-9);
        assert!((gl.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_moments() {
        for n in [16, 64, 128] {
            let gh = GaussHermite::new(n);
            let m0: f64 = gh.weights.iter().sum();
            let m2 = gh.expect(0.0, 1.0, |z| z * z);
            let m4 = gh.expect(0.0, 1.0, |z| z.powi(4));
            let m6 = gh.expect(0.0, 1.0, |z| z.powi(6));
            assert!((m0 - 1.0).abs() < 1e-13, "n={n}");
            assert!((m2 - 1.0).abs() < 1e-12);
            assert!((m4 - 3.0).abs() < 1e-11);
            assert!((m6 - 15.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_integrator_with_kink() {
        let gi = GaussianIntegrator::default();
        // E[(Y-K)^+] for Y ~ N(100, 40^2), K = 100 is 40·φ(0)
        let v = gi.expect(100.0, 40.0, &[100.0], |y| (y - 100.0).max(0.0));
        let exact = 40.0 / (2.0 * PI).sqrt();
        assert!((v - exact).abs() < 1e-12, "{v} vs {exact}");
    }
}
