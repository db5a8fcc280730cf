//! Implicit time stepping: project the initial datum, then solve the strips
//! in sequence, carrying the end trace as the next strip's jump load.

use crate::error::{Error, Result};
use crate::solver::{richardson_solve, CombinationPrecond, SolveReport, SolverConfig};
use crate::strip::{assemble_strip, StripFunction, TransportProblem};
use crate::tensor::{BlockVector, L2Metric, ProductSpace, SeparableMoments};
use ndarray::Array2;

/// Per-strip diagnostics row.
#[derive(Debug, Clone)]
pub struct StripDiagnostics {
    pub strip: usize,
    pub t_end: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace_norm: f64,
}

/// Outcome of a time-stepping run.
pub struct RunState {
    pub level: usize,
    pub strips_completed: usize,
    /// final-time trace `U_N^-` (or the last completed strip's trace)
    pub trace: BlockVector,
    pub reports: Vec<SolveReport>,
    pub diagnostics: Vec<StripDiagnostics>,
    /// all strip solutions when requested (needed by norm diagnostics)
    pub history: Option<Vec<StripFunction>>,
    pub converged: bool,
}

#[derive(Clone, Default)]
pub struct RunOptions {
    pub solver: SolverConfig,
    pub keep_history: bool,
}

/// L2 projection of the initial datum onto the sparse space, solved with the
/// same combination-preconditioned Richardson iteration on the Gram system.
pub fn project_initial(
    problem: &TransportProblem,
    level: usize,
    metric: &L2Metric,
    config: &SolverConfig,
) -> Result<(BlockVector, SolveReport)> {
    if problem.u0.is_zero() {
        let z = BlockVector::zeros(&metric.space, level, 1);
        return Ok((
            z,
            SolveReport {
                iterations: 0,
                update_norms: Vec::new(),
                converged: true,
                final_residual: 0.0,
                wall_time: 0.0,
            },
        ));
    }
    let moments = SeparableMoments::new(&metric.space, &problem.u0, 0.0, level)?;
    let rhs = moments_to_block_vector(&moments, &metric.space, level);
    let gram = Array2::eye(1);
    let op = metric.mass_operator(level, &gram);
    let precond = CombinationPrecond::for_mass(metric, level, &gram, config)?;
    let (u, report) = richardson_solve(
        &op,
        &rhs,
        &precond,
        metric,
        (config.epsilon * 1e-2).max(1e-13),
        config.max_iterations,
        config.damping,
    )?;
    if !report.converged {
        return Err(Error::NonConvergence(format!(
            "initial projection stalled at residual {:e}",
            report.final_residual
        )));
    }
    Ok((u, report))
}

/// Outer-product load blocks of per-factor moments over the active set.
pub fn moments_to_block_vector(
    moments: &SeparableMoments,
    space: &ProductSpace,
    level: usize,
) -> BlockVector {
    let mut out = BlockVector::zeros(space, level, 1);
    for (mx, mv) in moments.terms() {
        for &pair in &out.pairs.clone() {
            let block = out.block_mut(pair);
            let (bx, bv) = (&mx[pair.l1], &mv[pair.l2]);
            for (k1, &a) in bx.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (k2, &b) in bv.iter().enumerate() {
                    block[(0, k1, k2)] += a * b;
                }
            }
        }
    }
    out
}

/// Runs the implicit time stepping over all strips. `on_strip` is invoked
/// after each strip solve with the strip index, its end trace, and the solve
/// report. For time-invariant coefficients the strip system and its
/// factorizations are assembled once and reused.
pub fn run(
    problem: &TransportProblem,
    level: usize,
    metric: &L2Metric,
    options: &RunOptions,
    mut on_strip: Option<&mut dyn FnMut(usize, &BlockVector, &SolveReport)>,
) -> Result<RunState> {
    let (mut trace, _) = project_initial(problem, level, metric, &options.solver)?;
    let cacheable = problem.time_invariant() && !problem.f.is_time_dependent();
    let mut system = assemble_strip(problem, 0, level, metric)?;
    let mut precond = CombinationPrecond::for_system(&system, metric, &options.solver)?;
    let mut reports = Vec::new();
    let mut diagnostics = Vec::new();
    let mut history = if options.keep_history { Some(Vec::new()) } else { None };
    let mut converged = true;
    let mut strips_completed = 0;
    for strip in 0..problem.strips {
        if strip > 0 {
            if cacheable {
                system.retarget(problem, strip);
            } else {
                system = assemble_strip(problem, strip, level, metric)?;
                precond = CombinationPrecond::for_system(&system, metric, &options.solver)?;
            }
        }
        let b = system.rhs(&trace);
        let (u, report) = richardson_solve(
            &system.operator,
            &b,
            &precond,
            metric,
            options.solver.epsilon,
            options.solver.max_iterations,
            options.solver.damping,
        )?;
        let ok = report.converged;
        trace = system.end_trace(&u);
        let trace_norm = metric.norm_spatial(&trace);
        diagnostics.push(StripDiagnostics {
            strip,
            t_end: problem.strip_bounds(strip).1,
            iterations: report.iterations,
            converged: ok,
            trace_norm,
        });
        if let Some(h) = history.as_mut() {
            h.push(StripFunction { basis: system.basis.clone(), coeffs: u.clone() });
        }
        if let Some(cb) = on_strip.as_mut() {
            cb(strip, &trace, &report);
        }
        reports.push(report);
        strips_completed = strip + 1;
        if !ok {
            converged = false;
            break;
        }
    }
    Ok(RunState { level, strips_completed, trace, reports, diagnostics, history, converged })
}

/// One row of a convergence table.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub level: usize,
    pub h: f64,
    pub rel_err: f64,
    pub order: Option<f64>,
    pub skipped: Option<String>,
}

/// Estimated order between two successive rows: `log2(err_prev / err)`.
pub fn estimate_orders(rows: &mut [TableRow]) {
    let mut prev: Option<f64> = None;
    for row in rows.iter_mut() {
        if row.skipped.is_some() {
            prev = None;
            continue;
        }
        if let Some(p) = prev {
            row.order = Some((p / row.rel_err).log2());
        }
        prev = Some(row.rel_err);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{sine_sum_mode, BoxMesh, FactorSpace, ScalarField, SeparableField};
    use crate::strip::{AdvectionTerm, Factor};
    use crate::tensor::{combine_error, LevelPair};
    use std::sync::Arc;

    fn product_space(cells: usize, order: usize, levels: usize) -> ProductSpace {
        let m = BoxMesh::box_domain(1, &[(0.0, 1.0)], &[cells], true).unwrap();
        ProductSpace::new(
            Arc::new(FactorSpace::build(m.clone(), order, levels).unwrap()),
            Arc::new(FactorSpace::build(m, order, levels).unwrap()),
        )
    }

    fn advect_1d(space: &ProductSpace, level: usize) -> TransportProblem {
        TransportProblem::advection(
            space.clone(),
            vec![
                AdvectionTerm::constant_ones(Factor::X, 1),
                AdvectionTerm::constant_ones(Factor::V, 1),
            ],
            sine_sum_mode(1, 0.0),
            0.5,
            1 << (level + 1),
        )
    }

    #[test]
    fn projection_is_idempotent_on_representable_data() {
        let space = product_space(4, 1, 3);
        let metric = L2Metric::new(&space, 3).unwrap();
        let problem = TransportProblem::advection(
            space.clone(),
            vec![AdvectionTerm::constant_ones(Factor::X, 1)],
            SeparableField::constant(1.0),
            1.0,
            2,
        );
        let config = SolverConfig::default();
        let (u, _) = project_initial(&problem, 2, &metric, &config).unwrap();
        let mut ones = BlockVector::zeros(&space, 2, 1);
        ones.block_mut(LevelPair::new(1, 2)).fill(1.0);
        let mass = metric.inner_spatial(&u, &ones);
        assert!((mass - 1.0).abs() < 1e-9, "mass {mass}");
        let d = metric.distance_spatial(&u, &ones);
        assert!(d < 1e-7, "distance to the constant: {d}");
    }

    #[test]
    fn projection_error_decays_second_order() {
        let space = product_space(4, 1, 6);
        let config = SolverConfig::default();
        let mut errs = Vec::new();
        for level in 2..=5 {
            let metric = L2Metric::new(&space, level + 1).unwrap();
            let problem = TransportProblem::advection(
                space.clone(),
                vec![AdvectionTerm::constant_ones(Factor::X, 1)],
                sine_sum_mode(1, 0.0),
                1.0,
                2,
            );
            let (u, _) = project_initial(&problem, level, &metric, &config).unwrap();
            let (_, rel) = combine_error(&metric, &u, &problem.u0, 0.0).unwrap();
            errs.push(rel);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.75, "projection order {order} (errors {errs:?})");
        }
    }

    #[test]
    fn nothing_transports_nothing() {
        // beta = 0, sigma = 0, f = 0: the trace stays at the initial projection
        let space = product_space(4, 1, 2);
        let metric = L2Metric::new(&space, 2).unwrap();
        let problem = TransportProblem {
            space: space.clone(),
            beta: vec![AdvectionTerm {
                factor: Factor::X,
                dirs: vec![(0, 0.0)],
                x_weight: ScalarField::one(),
                v_weight: ScalarField::one(),
            }],
            sigma: Vec::new(),
            f: SeparableField::zero(),
            u0: sine_sum_mode(1, 0.3),
            boundary: Vec::new(),
            final_time: 1.0,
            strips: 4,
            delta_multiplier: 1.0,
            time_quad_points: None,
        };
        let options = RunOptions::default();
        let config = SolverConfig::default();
        let (p0, _) = project_initial(&problem, 2, &metric, &config).unwrap();
        let state = run(&problem, 2, &metric, &options, None).unwrap();
        assert!(state.converged);
        let d = metric.distance_spatial(&state.trace, &p0);
        assert!(d < 4.0 * 10.0 * config.epsilon, "trace moved by {d}");
    }

    #[test]
    fn reaction_decays_exponentially() {
        // sigma = 1, beta = 0: ||u(T)|| ~ e^{-T} ||u0||
        let space = product_space(4, 1, 3);
        let metric = L2Metric::new(&space, 3).unwrap();
        let level = 2;
        let problem = TransportProblem {
            space: space.clone(),
            beta: vec![AdvectionTerm {
                factor: Factor::X,
                dirs: vec![(0, 0.0)],
                x_weight: ScalarField::one(),
                v_weight: ScalarField::one(),
            }],
            sigma: vec![(ScalarField::one(), ScalarField::one())],
            f: SeparableField::zero(),
            u0: sine_sum_mode(1, 0.0),
            boundary: Vec::new(),
            final_time: 1.0,
            strips: 16,
            delta_multiplier: 1.0,
            time_quad_points: None,
        };
        let state = run(&problem, level, &metric, &RunOptions::default(), None).unwrap();
        assert!(state.converged);
        let norm_t = metric.norm_spatial(&state.trace);
        let (p0, _) = project_initial(&problem, level, &metric, &SolverConfig::default()).unwrap();
        let norm_0 = metric.norm_spatial(&p0);
        let ratio = norm_t / norm_0;
        let expect = (-1.0f64).exp();
        assert!(
            (ratio - expect).abs() < 0.02,
            "decay ratio {ratio} vs {expect}"
        );
    }

    #[test]
    fn causality_of_the_strip_sequence() {
        // a source supported in the future does not change earlier traces
        let space = product_space(4, 1, 2);
        let metric = L2Metric::new(&space, 2).unwrap();
        let mut base = advect_1d(&space, 1);
        base.strips = 4;
        let mut early_trace_a: Option<BlockVector> = None;
        let mut early_trace_b: Option<BlockVector> = None;
        {
            let mut hook = |strip: usize, trace: &BlockVector, _: &SolveReport| {
                if strip == 1 {
                    early_trace_a = Some(trace.clone());
                }
            };
            run(&base, 1, &metric, &RunOptions::default(), Some(&mut hook)).unwrap();
        }
        let mut with_future = base.clone();
        with_future.f = SeparableField {
            terms: vec![crate::fem::Rank1Term::new(ScalarField::one(), ScalarField::one())
                .with_time(|t| if t > 0.26 { 5.0 } else { 0.0 })],
        };
        {
            let mut hook = |strip: usize, trace: &BlockVector, _: &SolveReport| {
                if strip == 1 {
                    early_trace_b = Some(trace.clone());
                }
            };
            run(&with_future, 1, &metric, &RunOptions::default(), Some(&mut hook)).unwrap();
        }
        let (a, b) = (early_trace_a.unwrap(), early_trace_b.unwrap());
        let d = metric.distance_spatial(&a, &b);
        assert!(d < 1e-7, "future data leaked into the past: {d}");
    }

    #[test]
    fn jump_norms_decay_with_level() {
        // interior jump sizes shrink at a rate of at least ~h^{r+1/2}
        let space = product_space(4, 1, 5);
        let mut jumps = Vec::new();
        for level in 2..=4 {
            let metric = L2Metric::new(&space, level + 1).unwrap();
            let problem = advect_1d(&space, level);
            let state = run(
                &problem,
                level,
                &metric,
                &RunOptions { keep_history: true, ..Default::default() },
                None,
            )
            .unwrap();
            assert!(state.converged);
            let hist = state.history.unwrap();
            let mut total = 0.0;
            for w in hist.windows(2) {
                let left = w[0].coeffs.contract_time(&w[0].basis.eval_end);
                let right = w[1].coeffs.contract_time(&w[1].basis.eval_start);
                let mut jump = right;
                jump.axpy(-1.0, &left);
                total += metric.inner_spatial(&jump, &jump);
            }
            jumps.push(total.sqrt());
        }
        for w in jumps.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate > 1.4, "jump decay rate {rate} (jumps {jumps:?})");
        }
    }

    #[test]
    fn advection_converges_toward_reference_errors() {
        // d = 1, r = 1 after one period: reference magnitudes within 2x
        let space = product_space(4, 1, 5);
        let mut rows: Vec<TableRow> = Vec::new();
        for level in 1..=3 {
            let metric = L2Metric::new(&space, level + 1).unwrap();
            let problem = advect_1d(&space, level);
            let state = run(&problem, level, &metric, &RunOptions::default(), None).unwrap();
            assert!(state.converged);
            let exact = sine_sum_mode(1, 0.0);
            let (_, rel) = combine_error(&metric, &state.trace, &exact, 0.5).unwrap();
            rows.push(TableRow {
                level,
                h: space.x.mesh(level).edge(),
                rel_err: rel,
                order: None,
                skipped: None,
            });
        }
        estimate_orders(&mut rows);
        let expect = [1.42, 6.26e-1, 1.27e-1];
        for (row, e) in rows.iter().zip(expect) {
            assert!(
                row.rel_err < 2.0 * e && row.rel_err > 0.5 * e,
                "L={}: rel err {} vs reference {e}",
                row.level,
                row.rel_err
            );
        }
    }
}
