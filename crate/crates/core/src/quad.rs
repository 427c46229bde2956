//! Gauss-Legendre quadrature rules on [-1, 1].
//!
//! Nodes and weights are computed once per order by Newton iteration on the
//! Legendre polynomials and cached. The iteration converges to machine
//! precision in a handful of steps and is fully deterministic.

use std::sync::OnceLock;

/// A quadrature rule: paired nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    fn compute(m: usize) -> Self {
        assert!(m >= 1);
        let mut nodes = vec![0.0; m];
        let mut weights = vec![0.0; m];
        for k in 0..m {
            // Chebyshev-based initial guess for the k-th root.
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (m as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_with_derivative(m, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_with_derivative(m, x);
            nodes[m - 1 - k] = x;
            weights[m - 1 - k] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        GaussRule { nodes, weights }
    }

    /// Integrate `f` over [a, b].
    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=m {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

macro_rules! cached_rule {
    ($name:ident, $m:expr) => {
        pub fn $name() -> &'static GaussRule {
            static RULE: OnceLock<GaussRule> = OnceLock::new();
            RULE.get_or_init(|| GaussRule::compute($m))
        }
    };
}

cached_rule!(gauss_4, 4);
cached_rule!(gauss_8, 8);
cached_rule!(gauss_16, 16);
cached_rule!(gauss_32, 32);

/// Adaptive 1D quadrature (global bisection on the worst interval) used as a
/// test oracle; not part of any production evaluation path.
pub fn adaptive_integrate<F: Fn(f64) -> f64 + Copy>(a: f64, b: f64, f: F, rel_tol: f64) -> f64 {
    #[derive(PartialEq)]
    struct Seg {
        a: f64,
        b: f64,
        coarse: f64,
        fine: f64,
    }
    fn eval<F: Fn(f64) -> f64 + Copy>(a: f64, b: f64, f: F) -> Seg {
        let coarse = gauss_8().integrate(a, b, f);
        let m = 0.5 * (a + b);
        let fine = gauss_8().integrate(a, m, f) + gauss_8().integrate(m, b, f);
        Seg { a, b, coarse, fine }
    }
    let mut segs = vec![eval(a, b, f)];
    for _ in 0..10_000 {
        let total: f64 = segs.iter().map(|s| s.fine).sum();
        let (idx, worst) = segs
            .iter()
            .enumerate()
            .map(|(i, s)| (i, (s.fine - s.coarse).abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if worst <= rel_tol * total.abs().max(1e-300) {
            return total;
        }
        let seg = segs.swap_remove(idx);
        let m = 0.5 * (seg.a + seg.b);
        segs.push(eval(seg.a, m, f));
        segs.push(eval(m, seg.b, f));
    }
    segs.iter().map(|s| s.fine).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rules_integrate_polynomials_exactly() {
        // m-point Gauss is exact through degree 2m-1.
        let r = gauss_4();
        let v = r.integrate(-1.0, 1.0, |x| x.powi(6));
        assert!((v - 2.0 / 7.0).abs() < 1e-14, "got {v}");
        let r = gauss_16();
        let v = r.integrate(0.0, 2.0, |x| x.powi(31));
        assert!((v - 2.0f64.powi(32) / 32.0).abs() < 2.0f64.powi(32) / 32.0 * 1e-14);
    }

    #[test]
    fn gauss_weights_sum_to_interval_length() {
        for rule in [gauss_4(), gauss_8(), gauss_16(), gauss_32()] {
            let s: f64 = rule.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn adaptive_handles_steep_integrands() {
        // integral of y^{-3/2} over [0.01, 1] = 2 (0.01^{-1/2} - 1) = 18
        let v = adaptive_integrate(0.01, 1.0, |y| y.powf(-1.5), 1e-12);
        assert!((v - 18.0).abs() < 1e-9, "got {v}");
    }
}
