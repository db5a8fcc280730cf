//! Streamline-diffusion norm and global bilinear energy for constant
//! coefficients, used by the stability property tests.

use super::assemble::{assemble_strip, boundary_abs_weight};
use super::problem::{Factor, TransportProblem};
use super::time_basis::TimeBasis;
use crate::error::{Error, Result};
use crate::fem::{assemble_boundary_trace, assemble_directional_advection,
    assemble_directional_grad_pair, assemble_mass, MatrixFamily};
use crate::tensor::{active_levels, BlockVector, KronOperator, KronTerm, L2Metric};
use ndarray::Array2;
use std::sync::Arc;

/// A piecewise-polynomial-in-time function: one coefficient vector per strip.
pub struct StripFunction {
    pub basis: TimeBasis,
    pub coeffs: BlockVector,
}

fn require_constant_coefficients(problem: &TransportProblem) -> Result<f64> {
    for term in &problem.beta {
        if term.x_weight.as_constant().is_none() || term.v_weight.as_constant().is_none() {
            return Err(Error::Unsupported(
                "streamline-diffusion diagnostics require constant coefficients".into(),
            ));
        }
    }
    problem.constant_sigma().ok_or_else(|| {
        Error::Unsupported("streamline-diffusion diagnostics require constant sigma".into())
    })
}

/// Builds the quadratic-form operator of
/// `int_{I_j} delta ||d_t u + d_beta u||^2 + |u|^2_{dOmega} + sigma ||u||^2 dt`
/// for one strip basis.
fn strip_energy_operator(
    problem: &TransportProblem,
    level: usize,
    metric: &L2Metric,
    basis: &TimeBasis,
    delta: f64,
    sigma: f64,
) -> Result<KronOperator> {
    let space = &metric.space;
    let pairs = active_levels(level);
    let rp1 = basis.order + 1;
    let mut op = KronOperator::new(level, rp1, rp1, pairs.clone());
    let m_int = basis.integrated(&basis.m_mats);
    let t_int = basis.integrated(&basis.t_mats);
    let c_int = basis.integrated(&basis.c_mats);

    // sigma mass + delta (d_t, d_t) part
    let mut time0 = c_int.mapv(|x| delta * x);
    time0.zip_mut_with(&m_int, |a, b| *a += sigma * b);
    let mut specs: Vec<(Array2<f64>, f64, Arc<MatrixFamily>, bool, Arc<MatrixFamily>, bool)> = vec![(
        time0,
        1.0,
        metric.mass_x.clone(),
        false,
        metric.mass_v.clone(),
        false,
    )];

    // advection families per term
    let mut adv: Vec<(Factor, Arc<MatrixFamily>, Arc<MatrixFamily>)> = Vec::new();
    for term in &problem.beta {
        let dspace = match term.factor {
            Factor::X => &space.x,
            Factor::V => &space.v,
        };
        let d = Arc::new(MatrixFamily::new(
            dspace.clone(),
            assemble_directional_advection(dspace, level, &term.dirs, term.weight_on(term.factor), 0.0)?,
        ));
        let wspace = match term.factor {
            Factor::X => &space.v,
            Factor::V => &space.x,
        };
        let w = if term.weight_on(if term.factor == Factor::X { Factor::V } else { Factor::X })
            .as_constant()
            == Some(1.0)
        {
            match term.factor {
                Factor::X => metric.mass_v.clone(),
                Factor::V => metric.mass_x.clone(),
            }
        } else {
            Arc::new(MatrixFamily::new(
                wspace.clone(),
                assemble_mass(
                    wspace,
                    level,
                    term.weight_on(if term.factor == Factor::X { Factor::V } else { Factor::X }),
                    0.0,
                )?,
            ))
        };
        adv.push((term.factor, d, w));
    }

    // delta cross terms 2 (d_t u, d_beta u): time T^T (x) T_sp and T (x) T_sp^T
    for (fac, d, w) in &adv {
        let (fx, fv) = match fac {
            Factor::X => (d.clone(), w.clone()),
            Factor::V => (w.clone(), d.clone()),
        };
        let on_x = matches!(fac, Factor::X);
        specs.push((t_int.t().to_owned(), delta, fx.clone(), false, fv.clone(), false));
        specs.push((t_int.clone(), delta, fx, on_x, fv, !on_x));
    }
    // delta (d_beta u, d_beta u): pairwise
    for ti in &problem.beta {
        for tj in &problem.beta {
            let (fx, fx_t, fv, fv_t): (Arc<MatrixFamily>, bool, Arc<MatrixFamily>, bool) =
                match (ti.factor, tj.factor) {
                    (Factor::X, Factor::X) => {
                        let wx = ti.x_weight.product(&tj.x_weight);
                        let wv = ti.v_weight.product(&tj.v_weight);
                        let gp = Arc::new(MatrixFamily::new(
                            space.x.clone(),
                            assemble_directional_grad_pair(&space.x, level, &ti.dirs, &tj.dirs, &wx, 0.0)?,
                        ));
                        let wm = Arc::new(MatrixFamily::new(
                            space.v.clone(),
                            assemble_mass(&space.v, level, &wv, 0.0)?,
                        ));
                        (gp, false, wm, false)
                    }
                    (Factor::V, Factor::V) => {
                        let wv = ti.v_weight.product(&tj.v_weight);
                        let wx = ti.x_weight.product(&tj.x_weight);
                        let gp = Arc::new(MatrixFamily::new(
                            space.v.clone(),
                            assemble_directional_grad_pair(&space.v, level, &ti.dirs, &tj.dirs, &wv, 0.0)?,
                        ));
                        let wm = Arc::new(MatrixFamily::new(
                            space.x.clone(),
                            assemble_mass(&space.x, level, &wx, 0.0)?,
                        ));
                        (wm, false, gp, false)
                    }
                    (Factor::X, Factor::V) => {
                        let ax = Arc::new(MatrixFamily::new(
                            space.x.clone(),
                            assemble_directional_advection(
                                &space.x,
                                level,
                                &ti.dirs,
                                &ti.x_weight.product(&tj.x_weight),
                                0.0,
                            )?,
                        ));
                        let av = Arc::new(MatrixFamily::new(
                            space.v.clone(),
                            assemble_directional_advection(
                                &space.v,
                                level,
                                &tj.dirs,
                                &ti.v_weight.product(&tj.v_weight),
                                0.0,
                            )?,
                        ));
                        (ax, false, av, true)
                    }
                    (Factor::V, Factor::X) => {
                        let ax = Arc::new(MatrixFamily::new(
                            space.x.clone(),
                            assemble_directional_advection(
                                &space.x,
                                level,
                                &tj.dirs,
                                &ti.x_weight.product(&tj.x_weight),
                                0.0,
                            )?,
                        ));
                        let av = Arc::new(MatrixFamily::new(
                            space.v.clone(),
                            assemble_directional_advection(
                                &space.v,
                                level,
                                &ti.dirs,
                                &ti.v_weight.product(&tj.v_weight),
                                0.0,
                            )?,
                        ));
                        (ax, true, av, false)
                    }
                };
            specs.push((m_int.clone(), delta, fx, fx_t, fv, fv_t));
        }
    }
    // boundary |u|^2 with |beta . n|
    for seg in &problem.boundary {
        let w_abs = boundary_abs_weight(seg);
        let (tspace, wspace) = match seg.trace_factor {
            Factor::X => (&space.x, &space.v),
            Factor::V => (&space.v, &space.x),
        };
        let (trace, _) =
            assemble_boundary_trace(tspace, level, &seg.selector, &seg.trace_weight, 0.0, None)?;
        let tf = Arc::new(MatrixFamily::new(tspace.clone(), trace));
        let wf = Arc::new(MatrixFamily::new(
            wspace.clone(),
            assemble_mass(wspace, level, &w_abs, 0.0)?,
        ));
        let (fx, fv) = match seg.trace_factor {
            Factor::X => (tf, wf),
            Factor::V => (wf, tf),
        };
        specs.push((m_int.clone(), 1.0, fx, false, fv, false));
    }

    for &tgt in &pairs {
        for &src in &pairs {
            for (time, scale, fx, fx_t, fv, fv_t) in &specs {
                let x = if *fx_t { fx.get_transposed(tgt.l1, src.l1) } else { fx.get(tgt.l1, src.l1) };
                let v = if *fv_t { fv.get_transposed(tgt.l2, src.l2) } else { fv.get(tgt.l2, src.l2) };
                op.push(tgt, src, KronTerm::new(*scale, time.clone(), x, v));
            }
        }
    }
    op.coalesce();
    Ok(op)
}

/// Streamline-diffusion norm squared of a piecewise function over all strips:
/// volume terms, boundary terms, interior jumps, and both end traces.
/// Restricted to constant coefficients.
pub fn sd_norm_sq(
    problem: &TransportProblem,
    level: usize,
    metric: &L2Metric,
    parts: &[StripFunction],
) -> Result<f64> {
    let sigma = require_constant_coefficients(problem)?;
    let delta = problem.sd_parameter(level);
    let mut acc = 0.0;
    for part in parts {
        let op = strip_energy_operator(problem, level, metric, &part.basis, delta, sigma)?;
        acc += op.apply(&part.coeffs).raw_dot(&part.coeffs);
    }
    // jumps between strips
    for w in parts.windows(2) {
        let left = w[0].coeffs.contract_time(&w[0].basis.eval_end);
        let right = w[1].coeffs.contract_time(&w[1].basis.eval_start);
        let mut jump = right.clone();
        jump.axpy(-1.0, &left);
        acc += metric.inner_spatial(&jump, &jump);
    }
    // end traces
    if let (Some(first), Some(last)) = (parts.first(), parts.last()) {
        let start = first.coeffs.contract_time(&first.basis.eval_start);
        let end = last.coeffs.contract_time(&last.basis.eval_end);
        acc += metric.inner_spatial(&start, &start);
        acc += metric.inner_spatial(&end, &end);
    }
    Ok(acc.max(0.0))
}

/// The global bilinear energy `A(u, u)`: the sum of the per-strip forms minus
/// the inter-strip coupling loads. Restricted to constant coefficients.
pub fn bilinear_energy(
    problem: &TransportProblem,
    level: usize,
    metric: &L2Metric,
    parts: &[StripFunction],
) -> Result<f64> {
    require_constant_coefficients(problem)?;
    let mut acc = 0.0;
    for (j, part) in parts.iter().enumerate() {
        let system = assemble_strip(problem, j, level, metric)?;
        acc += system.operator.apply(&part.coeffs).raw_dot(&part.coeffs);
    }
    for (j, w) in parts.windows(2).enumerate() {
        let left = w[0].coeffs.contract_time(&w[0].basis.eval_end);
        let right = w[1].coeffs.contract_time(&w[1].basis.eval_start);
        let _ = j;
        acc -= metric.inner_spatial(&left, &right);
    }
    Ok(acc)
}
