//! Gauss-Hermite rules for expectations under a normal distribution.

use std::f64::consts::PI;

/// Nodes `x_i` and weights `w_i` with `Σ w_i f(x_i) ≈ E[f(Z)]`, `Z ~ N(0, 1)`.
///
/// Exact for polynomials of degree `2n - 1`.
#[derive(Debug, Clone)]
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalRule {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let (x, w) = physicists_hermite(n);
        // ∫ e^{-x²} f(x) dx  →  E[f(Z)] with Z = √2 x.
        let nodes = x.iter().map(|v| v * 2f64.sqrt()).collect();
        let weights = w.iter().map(|v| v / PI.sqrt()).collect();
        NormalRule { nodes, weights }
    }

    /// E[f(Y)] for `Y ~ N(mean, sd²)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mean: f64, sd: f64, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * f(mean + sd * z))
            .sum()
    }
}

/// Newton iteration on the orthonormal Hermite recurrence.
fn physicists_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments() {
        let rule = NormalRule::new(15);
        let total: f64 = rule.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-13);
        assert!(rule.expect(0.0, 1.0, |z| z).abs() < 1e-13);
        assert!((rule.expect(0.0, 1.0, |z| z * z) - 1.0).abs() < 1e-12);
        assert!((rule.expect(0.0, 1.0, |z| z.powi(4)) - 3.0).abs() < 1e-11);
        assert!((rule.expect(0.0, 1.0, |z| z.powi(8)) - 105.0).abs() < 1e-9);
        assert!((rule.expect(2.0, 3.0, |y| y * y) - 13.0).abs() < 1e-11);
    }

    #[test]
    fn single_node() {
        let rule = NormalRule::new(1);
        assert_eq!(rule.nodes.len(), 1);
        assert!(rule.nodes[0].abs() < 1e-12);
        assert!((rule.weights[0] - 1.0).abs() < 1e-12);
    }
}
