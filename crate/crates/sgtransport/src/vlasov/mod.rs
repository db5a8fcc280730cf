//! Nonlinear Vlasov-Poisson driver: per-strip fixed-point iteration between
//! the frozen-field linear transport solve and the Poisson solve, with
//! densities, invariants, and the Landau-damping setups.

pub mod poisson;

pub use poisson::{FieldState, PoissonSolver};

use crate::error::{Error, Result};
use crate::fem::{BoxMesh, FactorSpace, FacetSelector, Rank1Term, ScalarField, SeparableField};
use crate::solver::{richardson_solve, CombinationPrecond, SolverConfig};
use crate::strip::{assemble_strip, AdvectionTerm, BoundarySegment, Factor, TransportProblem};
use crate::tensor::{BlockVector, L2Metric, ProductSpace};
use std::sync::Arc;

/// Configuration of a Landau-damping run.
#[derive(Clone)]
pub struct LandauConfig {
    /// spatial dimension per factor (1 or 2)
    pub dim: usize,
    pub level: usize,
    pub order: usize,
    pub alpha: f64,
    pub wave_number: f64,
    pub v_max: f64,
    pub horizon: f64,
    /// strip count; default scales the 100-step [0,50] baseline by 2^(L-5)
    pub steps: Option<usize>,
    pub fp_tol: f64,
    pub fp_max_iters: usize,
    pub solver: SolverConfig,
    /// preconditioner refresh trigger: rebuild when the average Richardson
    /// contraction over the last three solves exceeds this ratio
    pub refresh_ratio: f64,
    pub delta_multiplier: f64,
}

impl LandauConfig {
    pub fn new(dim: usize, level: usize) -> Self {
        LandauConfig {
            dim,
            level,
            order: 1,
            alpha: 1e-2,
            wave_number: 0.5,
            v_max: 6.0,
            horizon: 50.0,
            steps: None,
            fp_tol: 1e-8,
            fp_max_iters: 50,
            solver: SolverConfig::default(),
            refresh_ratio: 0.9,
            delta_multiplier: 1.0,
        }
    }

    pub fn num_steps(&self) -> usize {
        match self.steps {
            Some(n) => n,
            None => {
                let base = 100.0 * 2f64.powi(self.level as i32 - 5) * self.horizon / 50.0;
                base.round().max(1.0) as usize
            }
        }
    }
}

/// One diagnostics row of the time series.
#[derive(Debug, Clone)]
pub struct InvariantRow {
    pub t: f64,
    pub electric_energy: f64,
    pub mass: f64,
    pub total_energy: f64,
    pub entropy: f64,
    pub fp_iterations: usize,
    pub richardson_iterations: usize,
}

pub struct LandauRun {
    pub rows: Vec<InvariantRow>,
    pub trace: BlockVector,
    pub converged: bool,
}

/// The Landau phase-space domain: periodic `[0, 2 pi / k * dim_factor]^d` in
/// x (four coarse cells per direction) and `[-v_max, v_max]^d` with zero
/// inflow in v.
pub fn landau_space(config: &LandauConfig) -> Result<ProductSpace> {
    let d = config.dim;
    let x_len = 4.0 * std::f64::consts::PI;
    let xb: Vec<(f64, f64)> = (0..d).map(|_| (0.0, x_len)).collect();
    let vb: Vec<(f64, f64)> = (0..d).map(|_| (-config.v_max, config.v_max)).collect();
    let cells: Vec<usize> = (0..d).map(|_| 4).collect();
    let mx = BoxMesh::box_domain(d, &xb, &cells, true)?;
    let mv = BoxMesh::box_domain(d, &vb, &cells, false)?;
    // the error metric needs one level beyond the run level
    let sx = Arc::new(FactorSpace::build(mx, config.order, config.level + 1)?);
    let sv = Arc::new(FactorSpace::build(mv, config.order, config.level + 1)?);
    Ok(ProductSpace::new(sx, sv))
}

/// Maxwellian with the cosine perturbation, as a separable field.
pub fn landau_initial(config: &LandauConfig) -> SeparableField {
    let d = config.dim;
    let norm = (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0);
    let gauss = move |p: &[f64]| {
        let v2: f64 = p.iter().map(|v| v * v).sum();
        norm * (-0.5 * v2).exp()
    };
    let mut terms = vec![Rank1Term::new(ScalarField::one(), ScalarField::function(gauss))];
    for axis in 0..d {
        let (alpha, k) = (config.alpha, config.wave_number);
        terms.push(Rank1Term::new(
            ScalarField::function(move |p: &[f64]| alpha * (k * p[axis]).cos()),
            ScalarField::function(gauss),
        ));
    }
    SeparableField { terms }
}

/// Contracts the v factor of a spatial block vector with `int phi_k dv` and
/// prolongs everything to the finest x level: the nodal coefficients of the
/// spatial density `rho(x) = int f dv` at the transport order.
pub fn density(
    f: &BlockVector,
    metric: &L2Metric,
    level: usize,
) -> Vec<f64> {
    assert_eq!(f.time_dim, 1);
    let space = &metric.space;
    let n_fine = space.x.num_dofs(level);
    let mut rho = vec![0.0; n_fine];
    for (pair, block) in f.pairs.iter().zip(&f.blocks) {
        let mv = metric.mass_v.get(pair.l2, pair.l2);
        let ones = vec![1.0; mv.ncols()];
        let mut wv = vec![0.0; mv.nrows()];
        mv.matvec(&ones, &mut wv);
        let b2 = block.index_axis(ndarray::Axis(0), 0);
        let cx: Vec<f64> = (0..b2.dim().0)
            .map(|k1| b2.row(k1).iter().zip(&wv).map(|(u, w)| u * w).sum())
            .collect();
        let fine = space.x.prolong(pair.l1, level, &cx).expect("prolong density");
        for (r, v) in rho.iter_mut().zip(&fine) {
            *r += v;
        }
    }
    rho
}

/// Density as an evaluable field on the finest x grid.
pub fn density_field(space: Arc<FactorSpace>, level: usize, rho: Vec<f64>) -> ScalarField {
    ScalarField::function(move |p: &[f64]| space.evaluate(level, &rho, p).unwrap_or(0.0))
}

/// Builds the frozen-field transport problem for one strip: x-advection by v
/// and v-forcing by `-E(x)`, with zero-inflow truncation at `|v_i| = v_max`.
pub fn frozen_field_problem(
    config: &LandauConfig,
    space: &ProductSpace,
    field: &Arc<FieldState>,
) -> TransportProblem {
    let d = config.dim;
    let mut beta = Vec::new();
    for axis in 0..d {
        beta.push(AdvectionTerm {
            factor: Factor::X,
            dirs: vec![(axis, 1.0)],
            x_weight: ScalarField::one(),
            v_weight: ScalarField::function(move |p: &[f64]| p[axis]),
        });
        let fe = field.clone();
        beta.push(AdvectionTerm {
            factor: Factor::V,
            dirs: vec![(axis, 1.0)],
            x_weight: ScalarField::function(move |p: &[f64]| -fe.e_component(axis, p)),
            v_weight: ScalarField::one(),
        });
    }
    let mut boundary = Vec::new();
    for axis in 0..d {
        for side in [0usize, 1] {
            let sign = if side == 1 { 1.0 } else { -1.0 };
            let fe = field.clone();
            let inflow = ScalarField::function(move |p: &[f64]| {
                (-fe.e_component(axis, p) * sign).min(0.0)
            });
            let fe = field.clone();
            let outflow = ScalarField::function(move |p: &[f64]| {
                (-fe.e_component(axis, p) * sign).max(0.0)
            });
            boundary.push(BoundarySegment {
                trace_factor: Factor::V,
                selector: FacetSelector::normal(axis, if side == 1 { 1 } else { -1 }),
                trace_weight: ScalarField::one(),
                inflow_weight: inflow,
                outflow_weight: outflow,
                g: None,
            });
        }
    }
    TransportProblem {
        space: space.clone(),
        beta,
        sigma: Vec::new(),
        f: SeparableField::zero(),
        u0: landau_initial(config),
        boundary,
        final_time: config.horizon,
        strips: config.num_steps(),
        delta_multiplier: config.delta_multiplier,
        time_quad_points: None,
    }
}

/// Invariants of the distribution and field: particle number, total energy
/// (kinetic + electric), and entropy (squared L2 norm).
pub fn invariants(
    f: &BlockVector,
    field: &FieldState,
    metric: &L2Metric,
    level: usize,
) -> (f64, f64, f64) {
    let space = &metric.space;
    // mass: contract both factors with the constant-one loads
    let mut mass = 0.0;
    let mut kinetic = 0.0;
    for (pair, block) in f.pairs.iter().zip(&f.blocks) {
        let mx = metric.mass_x.get(pair.l1, pair.l1);
        let mv = metric.mass_v.get(pair.l2, pair.l2);
        let ones_x = vec![1.0; mx.ncols()];
        let mut wx = vec![0.0; mx.nrows()];
        mx.matvec(&ones_x, &mut wx);
        let ones_v = vec![1.0; mv.ncols()];
        let mut wv = vec![0.0; mv.nrows()];
        mv.matvec(&ones_v, &mut wv);
        // |v|^2-weighted v load, assembled on the finest grid and restricted
        let vsq = crate::fem::assemble_load(
            &space.v,
            level,
            &ScalarField::function(|p: &[f64]| p.iter().map(|v| v * v).sum()),
            0.0,
            space.v.order() + 2,
        )
        .expect("kinetic load");
        let wv2 = space.v.restrict(level, pair.l2, &vsq).expect("restrict kinetic load");
        let b2 = block.index_axis(ndarray::Axis(0), 0);
        for (k1, &a) in wx.iter().enumerate() {
            let row = b2.row(k1);
            mass += a * row.iter().zip(&wv).map(|(u, w)| u * w).sum::<f64>();
            kinetic += a * row.iter().zip(&wv2).map(|(u, w)| u * w).sum::<f64>();
        }
    }
    let entropy = metric.inner_spatial(f, f);
    let total_energy = 0.5 * kinetic + field.electric_energy();
    (mass, total_energy, entropy)
}

/// Runs the Landau benchmark: per strip a fixed-point iteration alternating
/// the frozen-field transport solve and the Poisson solve, recording the
/// invariant time series.
pub fn run_landau(
    config: &LandauConfig,
    mut on_strip: Option<&mut dyn FnMut(&InvariantRow)>,
) -> Result<LandauRun> {
    let space = landau_space(config)?;
    let level = config.level;
    let metric = L2Metric::new(&space, level + 1)?;
    let poisson = PoissonSolver::new(
        space.x.mesh(1).clone(),
        config.order + 1,
        level,
    )?;
    // initial projection
    let proto = frozen_field_problem(
        config,
        &space,
        &Arc::new(FieldState::zero(poisson.space(), level, 0.0)),
    );
    let (mut trace, _) = crate::driver::project_initial(&proto, level, &metric, &config.solver)?;

    let field_of = |f: &BlockVector, tau: f64| -> Result<Arc<FieldState>> {
        let rho = density(f, &metric, level);
        let xs = space.x.clone();
        let rhs = {
            let rho = rho.clone();
            ScalarField::function(move |p: &[f64]| 1.0 - xs.evaluate(level, &rho, p).unwrap_or(0.0))
        };
        Ok(Arc::new(poisson.solve(&rhs, tau)?))
    };

    let mut rows = Vec::new();
    let mut field = field_of(&trace, 0.0)?;
    {
        let (mass, energy, entropy) = invariants(&trace, &field, &metric, level);
        let row = InvariantRow {
            t: 0.0,
            electric_energy: field.electric_energy(),
            mass,
            total_energy: energy,
            entropy,
            fp_iterations: 0,
            richardson_iterations: 0,
        };
        if let Some(cb) = on_strip.as_mut() {
            cb(&row);
        }
        rows.push(row);
    }

    let n_strips = config.num_steps();
    let mut precond: Option<CombinationPrecond> = None;
    let mut recent_contractions: Vec<f64> = Vec::new();
    let mut converged = true;

    'strips: for strip in 0..n_strips {
        let (t0, t1) = (
            strip as f64 * config.horizon / n_strips as f64,
            (strip + 1) as f64 * config.horizon / n_strips as f64,
        );
        let t_mid = 0.5 * (t0 + t1);
        let dt = t1 - t0;
        // E^(0) from the previous trace, held constant over the strip
        field = field_of(&trace, t_mid)?;
        let mut u_prev: Option<BlockVector> = None;
        let mut fp_iters = 0;
        let mut rich_iters = 0;
        let mut accepted: Option<BlockVector> = None;
        for fp in 0..config.fp_max_iters {
            let problem = frozen_field_problem(config, &space, &field);
            let system = assemble_strip(&problem, strip, level, &metric)?;
            // refresh policy: rebuild factorizations when the recent
            // Richardson contraction rate degrades beyond the threshold
            let need_build = match &precond {
                None => true,
                Some(_) => {
                    recent_contractions.len() >= 3
                        && recent_contractions.iter().rev().take(3).sum::<f64>() / 3.0
                            > config.refresh_ratio
                }
            };
            if need_build {
                precond = Some(CombinationPrecond::for_system(&system, &metric, &config.solver)?);
                recent_contractions.clear();
            }
            let pc = precond.as_ref().unwrap();
            let b = system.rhs(&trace);
            let (u, report) = richardson_solve(
                &system.operator,
                &b,
                pc,
                &metric,
                config.solver.epsilon,
                config.solver.max_iterations,
                config.solver.damping,
            )?;
            rich_iters += report.iterations;
            if !report.converged {
                // stale preconditioner: force a rebuild and retry once
                precond = Some(CombinationPrecond::for_system(&system, &metric, &config.solver)?);
                recent_contractions.clear();
                let pc = precond.as_ref().unwrap();
                let (u2, report2) = richardson_solve(
                    &system.operator,
                    &b,
                    pc,
                    &metric,
                    config.solver.epsilon,
                    config.solver.max_iterations,
                    config.solver.damping,
                )?;
                if !report2.converged {
                    converged = false;
                    let _ = u2;
                    break 'strips;
                }
                rich_iters += report2.iterations;
                record_contraction(&mut recent_contractions, &report2.update_norms);
                let mid = u2.contract_time(&system.basis.eval(t_mid));
                let new_field = field_of(&mid, t_mid)?;
                let (done, u2) = fixed_point_step(
                    &metric, &field, &new_field, &u_prev, u2, dt, config.fp_tol,
                );
                field = new_field;
                fp_iters = fp + 1;
                if done {
                    accepted = Some(u2);
                    break;
                }
                u_prev = Some(u2);
                continue;
            }
            record_contraction(&mut recent_contractions, &report.update_norms);
            // midpoint density -> new field
            let mid = u.contract_time(&system.basis.eval(t_mid));
            let new_field = field_of(&mid, t_mid)?;
            let (done, u) =
                fixed_point_step(&metric, &field, &new_field, &u_prev, u, dt, config.fp_tol);
            field = new_field;
            fp_iters = fp + 1;
            if done {
                accepted = Some(u);
                break;
            }
            u_prev = Some(u);
        }
        let Some(u) = accepted else {
            return Err(Error::FixedPoint(format!(
                "strip {strip}: no convergence within {} iterations",
                config.fp_max_iters
            )));
        };
        // final-strip trace and diagnostics
        let problem = frozen_field_problem(config, &space, &field);
        let system = assemble_strip(&problem, strip, level, &metric)?;
        trace = system.end_trace(&u);
        let (mass, energy, entropy) = invariants(&trace, &field, &metric, level);
        let row = InvariantRow {
            t: t1,
            electric_energy: field.electric_energy(),
            mass,
            total_energy: energy,
            entropy,
            fp_iterations: fp_iters,
            richardson_iterations: rich_iters,
        };
        if let Some(cb) = on_strip.as_mut() {
            cb(&row);
        }
        rows.push(row);
        if !converged {
            break;
        }
    }
    Ok(LandauRun { rows, trace, converged })
}

fn record_contraction(recent: &mut Vec<f64>, norms: &[f64]) {
    if norms.len() >= 2 {
        let first = norms[0].max(1e-300);
        let last = norms[norms.len() - 1].max(1e-300);
        let rate = (last / first).powf(1.0 / (norms.len() - 1) as f64);
        recent.push(rate.min(1.5));
    }
}

/// Fixed-point convergence test: combined field and distribution increments
/// over the strip. Returns the (possibly accepted) iterate.
fn fixed_point_step(
    metric: &L2Metric,
    old_field: &FieldState,
    new_field: &FieldState,
    u_prev: &Option<BlockVector>,
    u: BlockVector,
    dt: f64,
    tol: f64,
) -> (bool, BlockVector) {
    let e_diff = (new_field.field_distance_sq(old_field) * dt).sqrt();
    let f_diff = match u_prev {
        None => f64::INFINITY,
        Some(prev) => {
            let mut d = u.clone();
            d.axpy(-1.0, prev);
            let gram = ndarray::Array2::eye(u.time_dim);
            metric.norm(&d, &gram)
        }
    };
    (e_diff + f_diff < tol, u)
}

/// Fits the exponential decay rate of the electric-field amplitude from the
/// peak envelope of the electric-energy series over `[t0, t1]`:
/// the energy peaks decay like `exp(-2 gamma t)`.
pub fn fit_decay_rate(rows: &[InvariantRow], t0: f64, t1: f64) -> Option<f64> {
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    for w in rows.windows(3) {
        let (a, b, c) = (&w[0], &w[1], &w[2]);
        if b.t >= t0
            && b.t <= t1
            && b.electric_energy > a.electric_energy
            && b.electric_energy >= c.electric_energy
            && b.electric_energy > 0.0
        {
            peaks.push((b.t, b.electric_energy.ln()));
        }
    }
    if peaks.len() < 2 {
        return None;
    }
    // least-squares line through (t, ln E)
    let n = peaks.len() as f64;
    let sx: f64 = peaks.iter().map(|p| p.0).sum();
    let sy: f64 = peaks.iter().map(|p| p.1).sum();
    let sxx: f64 = peaks.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = peaks.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    Some(-0.5 * slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::combine_error;

    #[test]
    fn landau_initial_mass_and_density() {
        // 1+1d: rho(0, x) = 1 + alpha cos(k x) up to truncation error
        let config = LandauConfig::new(1, 3);
        let space = landau_space(&config).unwrap();
        let metric = L2Metric::new(&space, 4).unwrap();
        let proto = frozen_field_problem(
            &config,
            &space,
            &Arc::new(FieldState::zero(
                Arc::new(
                    FactorSpace::build(space.x.mesh(1).clone(), config.order + 1, 3).unwrap(),
                ),
                3,
                0.0,
            )),
        );
        let (f0, _) = crate::driver::project_initial(&proto, 3, &metric, &SolverConfig::default())
            .unwrap();
        // mass = 4 pi
        let field = FieldState::zero(
            Arc::new(FactorSpace::build(space.x.mesh(1).clone(), config.order + 1, 3).unwrap()),
            3,
            0.0,
        );
        let (mass, _, entropy) = invariants(&f0, &field, &metric, 3);
        let expect = 4.0 * std::f64::consts::PI;
        assert!(
            (mass - expect).abs() < 1e-6 * expect,
            "mass {mass} vs {expect}"
        );
        assert!(entropy > 0.0);
        // density at nodes of the fine grid
        let rho = density(&f0, &metric, 3);
        let nodes = space.x.node_positions(3);
        let mut worst = 0.0f64;
        for (dof, p) in nodes.iter().enumerate() {
            let exact = 1.0 + config.alpha * (config.wave_number * p[0]).cos();
            worst = worst.max((rho[dof] - exact).abs());
        }
        // projection error of the Maxwellian profile dominates
        assert!(worst < 5e-3, "density nodal error {worst}");
    }

    #[test]
    fn uniform_maxwellian_is_stationary() {
        // alpha = 0: E = 0 after one iteration and f stays put
        let mut config = LandauConfig::new(1, 3);
        config.alpha = 0.0;
        config.horizon = 1.0;
        config.steps = Some(2);
        let run = run_landau(&config, None).unwrap();
        assert!(run.converged);
        for row in &run.rows {
            assert!(row.electric_energy < 1e-18, "E energy {}", row.electric_energy);
            assert!(row.fp_iterations <= 2);
        }
        // distribution unchanged up to solver tolerance
        let space = landau_space(&config).unwrap();
        let metric = L2Metric::new(&space, 4).unwrap();
        let (abs, _) = combine_error(&metric, &run.trace, &landau_initial(&config), 0.0).unwrap();
        // the projection error dominates; compare against the t=0 projection
        let proto = frozen_field_problem(
            &config,
            &space,
            &Arc::new(FieldState::zero(
                Arc::new(FactorSpace::build(space.x.mesh(1).clone(), 2, 3).unwrap()),
                3,
                0.0,
            )),
        );
        let (f0, _) =
            crate::driver::project_initial(&proto, 3, &metric, &SolverConfig::default()).unwrap();
        let d = metric.distance_spatial(&run.trace, &f0);
        assert!(d < 1e-5, "drift of the equilibrium: {d}");
        let _ = abs;
    }

    #[test]
    fn initial_electric_energy_matches_analytic() {
        let config = LandauConfig::new(1, 4);
        let space = landau_space(&config).unwrap();
        let metric = L2Metric::new(&space, 5).unwrap();
        let poisson = PoissonSolver::new(space.x.mesh(1).clone(), 2, 4).unwrap();
        let proto = frozen_field_problem(
            &config,
            &space,
            &Arc::new(FieldState::zero(poisson.space(), 4, 0.0)),
        );
        let (f0, _) =
            crate::driver::project_initial(&proto, 4, &metric, &SolverConfig::default()).unwrap();
        let rho = density(&f0, &metric, 4);
        let xs = space.x.clone();
        let rhs = ScalarField::function(move |p: &[f64]| {
            1.0 - xs.evaluate(4, &rho, p).unwrap_or(0.0)
        });
        let field = poisson.solve(&rhs, 0.0).unwrap();
        let expect = 4.0 * std::f64::consts::PI * 1e-4;
        let energy = field.electric_energy();
        assert!(
            ((energy - expect) / expect).abs() < 2e-2,
            "E energy {energy} vs {expect}"
        );
    }

    #[test]
    fn frozen_field_matches_plain_transport() {
        // a manufactured static E: the fixed-point strip with that field
        // equals a plain transport run with the same beta
        let mut config = LandauConfig::new(1, 3);
        config.horizon = 0.5;
        config.steps = Some(1);
        let space = landau_space(&config).unwrap();
        let metric = L2Metric::new(&space, 4).unwrap();
        let poisson = PoissonSolver::new(space.x.mesh(1).clone(), 2, 3).unwrap();
        // static field from the initial density
        let proto = frozen_field_problem(
            &config,
            &space,
            &Arc::new(FieldState::zero(poisson.space(), 3, 0.0)),
        );
        let (f0, _) =
            crate::driver::project_initial(&proto, 3, &metric, &SolverConfig::default()).unwrap();
        let rho = density(&f0, &metric, 3);
        let xs = space.x.clone();
        let rhs =
            ScalarField::function(move |p: &[f64]| 1.0 - xs.evaluate(3, &rho, p).unwrap_or(0.0));
        let field = Arc::new(poisson.solve(&rhs, 0.25).unwrap());
        let problem = frozen_field_problem(&config, &space, &field);
        let state =
            crate::driver::run(&problem, 3, &metric, &crate::driver::RunOptions::default(), None)
                .unwrap();
        assert!(state.converged);
        // one fixed-point solve with the same frozen field
        let system = assemble_strip(&problem, 0, 3, &metric).unwrap();
        let pc = CombinationPrecond::for_system(&system, &metric, &SolverConfig::default()).unwrap();
        let b = system.rhs(&f0);
        let (u, rep) = richardson_solve(
            &system.operator,
            &b,
            &pc,
            &metric,
            1e-8,
            200,
            1.0,
        )
        .unwrap();
        assert!(rep.converged);
        let t1 = system.end_trace(&u);
        let d = metric.distance_spatial(&t1, &state.trace);
        assert!(d < 1e-7, "frozen-field equivalence broken: {d}");
    }
}
