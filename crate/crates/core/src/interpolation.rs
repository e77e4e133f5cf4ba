//! Chebyshev–Lobatto grids with barycentric interpolation.

/// Chebyshev–Lobatto nodes on `[a, b]`, in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevGrid {
    a: f64,
    b: f64,
    nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl ChebyshevGrid {
    /// `n ≥ 2` nodes on `a < b`.
    pub fn new(a: f64, b: f64, n: usize) -> Self {
        assert!(n >= 2 && a < b);
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let last = (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n)
            .map(|j| mid - half * (std::f64::consts::PI * j as f64 / last).cos())
            .collect();
        nodes[0] = a;
        nodes[n - 1] = b;
        let bary = (0..n)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == n - 1 {
                    0.5 * sign
                } else {
                    sign
                }
            })
            .collect();
        Self { a, b, nodes, bary }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn lower(&self) -> f64 {
        self.a
    }

    pub fn upper(&self) -> f64 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Interpolant of `values` (one per node) at `y ∈ [a, b]`.
    pub fn eval(&self, values: &[f64], y: f64) -> f64 {
        debug_assert_eq!(values.len(), self.nodes.len());
        let mut num = 0.0;
        let mut den = 0.0;
        for ((x, w), v) in self.nodes.iter().zip(&self.bary).zip(values) {
            let d = y - x;
            if d == 0.0 {
                return *v;
            }
            let c = w / d;
            num += c * v;
            den += c;
        }
        num / den
    }

    /// Linear continuation through the two outermost nodes on either side.
    pub fn extrapolate(&self, values: &[f64], y: f64) -> f64 {
        let n = self.nodes.len();
        let (i, j) = if y < self.a { (0, 1) } else { (n - 1, n - 2) };
        let slope = (values[i] - values[j]) / (self.nodes[i] - self.nodes[j]);
        values[i] + slope * (y - self.nodes[i])
    }
}
