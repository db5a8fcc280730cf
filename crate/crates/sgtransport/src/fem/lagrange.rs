//! One-dimensional Lagrange bases on equispaced nodes of the reference cell
//! `[0, 1]`, used as tensor factors of the `Q_r` elements.

/// Values of the `r+1` Lagrange basis polynomials at `x`.
pub fn eval(order: usize, x: f64) -> Vec<f64> {
    let r = order;
    let nodes: Vec<f64> = (0..=r).map(|i| i as f64 / r.max(1) as f64).collect();
    let mut out = vec![1.0; r + 1];
    for i in 0..=r {
        for j in 0..=r {
            if i != j {
                out[i] *= (x - nodes[j]) / (nodes[i] - nodes[j]);
            }
        }
    }
    out
}

/// Derivatives of the basis polynomials at `x`.
pub fn eval_deriv(order: usize, x: f64) -> Vec<f64> {
    let r = order;
    let nodes: Vec<f64> = (0..=r).map(|i| i as f64 / r.max(1) as f64).collect();
    let mut out = vec![0.0; r + 1];
    for i in 0..=r {
        let mut acc = 0.0;
        for k in 0..=r {
            if k == i {
                continue;
            }
            let mut term = 1.0 / (nodes[i] - nodes[k]);
            for j in 0..=r {
                if j != i && j != k {
                    term *= (x - nodes[j]) / (nodes[i] - nodes[j]);
                }
            }
            acc += term;
        }
        out[i] = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronecker_delta_at_nodes() {
        for r in 1..=3 {
            for i in 0..=r {
                let vals = eval(r, i as f64 / r as f64);
                for (j, &v) in vals.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-13, "r={r} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_and_derivative_sum() {
        for r in 1..=3 {
            for &x in &[0.0, 0.17, 0.5, 0.93, 1.0] {
                let s: f64 = eval(r, x).iter().sum();
                assert!((s - 1.0).abs() < 1e-13);
                let ds: f64 = eval_deriv(r, x).iter().sum();
                assert!(ds.abs() < 1e-11);
            }
        }
    }

    #[test]
    fn reproduces_polynomials() {
        // interpolation of x^r at the nodes evaluates exactly
        for r in 1..=3 {
            let x = 0.371;
            let vals = eval(r, x);
            let interp: f64 = (0..=r)
                .map(|i| (i as f64 / r as f64).powi(r as i32) * vals[i])
                .sum();
            assert!((interp - x.powi(r as i32)).abs() < 1e-13);
        }
    }
}
