//! Orthonormal (shifted Legendre) polynomial basis of one time strip, with
//! the per-quadrature-node matrices needed by the strip assembly.

use crate::fem::QuadRule;
use ndarray::Array2;

/// Values and derivatives of the orthonormal Legendre basis at the quadrature
/// nodes of a strip, plus the assembled time matrices.
#[derive(Debug, Clone)]
pub struct TimeBasis {
    pub order: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// physical quadrature nodes and weights (weights sum to the strip length)
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `M_mu[s, s'] = eta_{s'}(tau_mu) eta_s(tau_mu)`
    pub m_mats: Vec<Array2<f64>>,
    /// `T_mu[s, s'] = eta'_{s'}(tau_mu) eta_s(tau_mu)`
    pub t_mats: Vec<Array2<f64>>,
    /// `C_mu[s, s'] = eta'_{s'}(tau_mu) eta'_s(tau_mu)`
    pub c_mats: Vec<Array2<f64>>,
    /// `G[s, s'] = eta_{s'}(t_start) eta_s(t_start)`
    pub g_start: Array2<f64>,
    pub eval_start: Vec<f64>,
    pub eval_end: Vec<f64>,
}

impl TimeBasis {
    /// Builds the basis with `m >= order + 1` Gauss-Legendre nodes.
    pub fn new(t_start: f64, t_end: f64, order: usize, m: usize) -> Self {
        assert!(m >= order + 1, "need at least order+1 quadrature nodes");
        assert!(t_end > t_start);
        let dt = t_end - t_start;
        let rule = QuadRule::gauss(m);
        let nodes: Vec<f64> = rule.nodes.iter().map(|&x| t_start + x * dt).collect();
        let weights: Vec<f64> = rule.weights.iter().map(|&w| w * dt).collect();
        let basis = |t: f64| eval_basis(order, t_start, dt, t);
        let deriv = |t: f64| eval_basis_deriv(order, t_start, dt, t);
        let outer = |a: &[f64], b: &[f64]| {
            // [s, s'] = b[s'] * a[s]
            Array2::from_shape_fn((order + 1, order + 1), |(s, sp)| b[sp] * a[s])
        };
        let mut m_mats = Vec::with_capacity(m);
        let mut t_mats = Vec::with_capacity(m);
        let mut c_mats = Vec::with_capacity(m);
        for &tau in &nodes {
            let e = basis(tau);
            let d = deriv(tau);
            m_mats.push(outer(&e, &e));
            t_mats.push(outer(&e, &d));
            c_mats.push(outer(&d, &d));
        }
        let e0 = basis(t_start);
        let e1 = basis(t_end);
        TimeBasis {
            order,
            t_start,
            t_end,
            nodes,
            weights,
            m_mats,
            t_mats,
            c_mats,
            g_start: outer(&e0, &e0),
            eval_start: e0,
            eval_end: e1,
        }
    }

    pub fn dt(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.t_start + self.t_end)
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        eval_basis(self.order, self.t_start, self.dt(), t)
    }

    pub fn eval_deriv(&self, t: f64) -> Vec<f64> {
        eval_basis_deriv(self.order, self.t_start, self.dt(), t)
    }

    /// Quadrature-integrated matrices `sum_mu w_mu X_mu`.
    pub fn integrated(&self, mats: &[Array2<f64>]) -> Array2<f64> {
        let mut acc = Array2::zeros((self.order + 1, self.order + 1));
        for (w, m) in self.weights.iter().zip(mats) {
            acc.zip_mut_with(m, |a, b| *a += w * b);
        }
        acc
    }
}

/// Orthonormal Legendre values `eta_s(t) = sqrt((2s+1)/dt) P_s(xi)`,
/// `xi = 2 (t - t0)/dt - 1`.
fn eval_basis(order: usize, t0: f64, dt: f64, t: f64) -> Vec<f64> {
    let xi = 2.0 * (t - t0) / dt - 1.0;
    let p = legendre_all(order, xi);
    (0..=order)
        .map(|s| ((2 * s + 1) as f64 / dt).sqrt() * p[s])
        .collect()
}

fn eval_basis_deriv(order: usize, t0: f64, dt: f64, t: f64) -> Vec<f64> {
    let xi = 2.0 * (t - t0) / dt - 1.0;
    let dp = legendre_all_deriv(order, xi);
    (0..=order)
        .map(|s| ((2 * s + 1) as f64 / dt).sqrt() * dp[s] * 2.0 / dt)
        .collect()
}

fn legendre_all(n: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; n + 1];
    p[0] = 1.0;
    if n >= 1 {
        p[1] = x;
    }
    for k in 2..=n {
        let kf = k as f64;
        p[k] = ((2.0 * kf - 1.0) * x * p[k - 1] - (kf - 1.0) * p[k - 2]) / kf;
    }
    p
}

fn legendre_all_deriv(n: usize, x: f64) -> Vec<f64> {
    let p = legendre_all(n, x);
    let mut dp = vec![0.0; n + 1];
    for k in 1..=n {
        // P'_k = P'_{k-2} + (2k - 1) P_{k-1}
        dp[k] = if k >= 2 { dp[k - 2] } else { 0.0 } + (2.0 * k as f64 - 1.0) * p[k - 1];
    }
    dp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_zero_matrices() {
        let tb = TimeBasis::new(0.0, 0.5, 0, 1);
        // eta_0 = 1/sqrt(dt): M integrates to 1, T = 0, G = 1/dt
        let m = tb.integrated(&tb.m_mats);
        assert!((m[(0, 0)] - 1.0).abs() < 1e-14);
        let t = tb.integrated(&tb.t_mats);
        assert!(t[(0, 0)].abs() < 1e-14);
        assert!((tb.g_start[(0, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gram_is_identity() {
        for r in 0..=3 {
            let tb = TimeBasis::new(0.25, 0.75, r, r + 1);
            let m = tb.integrated(&tb.m_mats);
            for s in 0..=r {
                for sp in 0..=r {
                    let expect = if s == sp { 1.0 } else { 0.0 };
                    assert!((m[(s, sp)] - expect).abs() < 1e-13, "r={r} ({s},{sp})");
                }
            }
        }
    }

    #[test]
    fn integrated_t_matches_exact_integrals() {
        // r = 1: eta_0 = 1/sqrt(dt), eta_1 = sqrt(3/dt) xi;
        // int eta'_1 eta_0 = sqrt(3)/dt * ... checked against direct quadrature
        // of the derivative with a refined rule
        let r = 1;
        let (t0, t1) = (0.0, 0.4);
        let tb = TimeBasis::new(t0, t1, r, r + 1);
        let t_int = tb.integrated(&tb.t_mats);
        let fine = TimeBasis::new(t0, t1, r, 8);
        let t_ref = fine.integrated(&fine.t_mats);
        for s in 0..=r {
            for sp in 0..=r {
                assert!((t_int[(s, sp)] - t_ref[(s, sp)]).abs() < 1e-13);
            }
        }
        // exact value: int eta'_1 eta_0 dt = sqrt(3)/dt * 2 = 2 sqrt(3)/dt... direct:
        // eta'_1 = sqrt(3/dt) * 2/dt, integral over dt: sqrt(3/dt) * 2/dt * (1/sqrt(dt)) * dt
        let expect = (3.0f64).sqrt() * 2.0 / 0.4;
        assert!((t_int[(0, 1)] - expect).abs() < 1e-12, "{} vs {expect}", t_int[(0, 1)]);
    }

    #[test]
    fn discrete_integration_by_parts() {
        // sum_mu w_mu (T_mu + T_mu^T) = eta(t1) eta(t1)^T - eta(t0) eta(t0)^T
        for r in 0..=3 {
            let tb = TimeBasis::new(1.0, 1.7, r, r + 2);
            let t_int = tb.integrated(&tb.t_mats);
            let e0 = &tb.eval_start;
            let e1 = &tb.eval_end;
            for s in 0..=r {
                for sp in 0..=r {
                    let lhs = t_int[(s, sp)] + t_int[(sp, s)];
                    let rhs = e1[s] * e1[sp] - e0[s] * e0[sp];
                    assert!((lhs - rhs).abs() < 1e-12, "r={r} ({s},{sp}): {lhs} vs {rhs}");
                }
            }
        }
    }

    #[test]
    fn end_evaluations_are_consistent() {
        let tb = TimeBasis::new(0.0, 1.0, 2, 4);
        let e = tb.eval(1.0);
        for (a, b) in e.iter().zip(&tb.eval_end) {
            assert!((a - b).abs() < 1e-14);
        }
        let d = tb.eval_deriv(0.3);
        // derivative of the constant mode vanishes
        assert!(d[0].abs() < 1e-14);
    }
}
