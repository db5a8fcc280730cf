//! Gauss-Legendre quadrature rules.

/// Nodes and weights on the reference interval `[0, 1]`.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    /// `n`-point Gauss-Legendre rule, exact for polynomials of degree `2n-1`.
    pub fn gauss(n: usize) -> Self {
        assert!(n >= 1);
        let (mut nodes, mut weights) = (vec![0.0; n], vec![0.0; n]);
        // roots of P_n on [-1, 1] by Newton with Chebyshev-like initial guesses
        for k in 0..n {
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_with_derivative(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_with_derivative(n, x);
            nodes[n - 1 - k] = x;
            weights[n - 1 - k] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        // map [-1, 1] -> [0, 1]
        for x in &mut nodes {
            *x = 0.5 * (*x + 1.0);
        }
        for w in &mut weights {
            *w *= 0.5;
        }
        QuadRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Value and derivative of the Legendre polynomial `P_n` at `x` in `[-1, 1]`.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0f64, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_monomials_exactly() {
        for n in 1..=8 {
            let rule = QuadRule::gauss(n);
            for deg in 0..=(2 * n - 1) {
                let exact = 1.0 / (deg as f64 + 1.0);
                let approx: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&x, &w)| w * x.powi(deg as i32))
                    .sum();
                assert!((approx - exact).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn weights_sum_to_one() {
        for n in 1..=12 {
            let rule = QuadRule::gauss(n);
            let s: f64 = rule.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }
}
