//! Assembly of the discrete system of one time strip: the block operator as
//! sums of Kronecker terms (transport, reaction, streamline-diffusion
//! couplings, inflow boundary, time jump) and the right-hand side loads.

use super::problem::{BoundarySegment, Factor, TransportProblem};
use super::time_basis::TimeBasis;
use crate::error::Result;
use crate::fem::{
    assemble_directional_advection, assemble_directional_grad_pair, assemble_boundary_trace,
    assemble_load, assemble_load_deriv, assemble_mass, assemble_trace_load, FactorMatrix,
    MatrixFamily, ScalarField,
};
use crate::tensor::{active_levels, precond_levels, BlockVector, KronOperator, KronTerm, L2Metric, LevelPair};
use ndarray::Array2;
use std::sync::Arc;

/// Assembled system of one strip: operator, jump coupling to the previous
/// trace, and the strip-local load vector.
pub struct StripSystem {
    pub level: usize,
    pub strip: usize,
    pub delta: f64,
    pub basis: TimeBasis,
    pub operator: KronOperator,
    /// maps the previous end trace (spatial) to the jump load `(U^-, w^+)`
    pub jump_op: KronOperator,
    /// f and g loads of this strip
    pub f_load: BlockVector,
    /// diagonal blocks `A_{l,l}` for the coarse preconditioner row `|l|_1 = L`
    pub coarse_diag: Vec<(LevelPair, Vec<KronTerm>)>,
}

impl StripSystem {
    /// Right-hand side for the given previous end trace.
    pub fn rhs(&self, prev_trace: &BlockVector) -> BlockVector {
        let mut b = self.jump_op.apply(prev_trace);
        b.axpy(1.0, &self.f_load);
        b.strip = Some(self.strip);
        b
    }

    /// Final-time trace `U_j^-` by exact end evaluation.
    pub fn end_trace(&self, u: &BlockVector) -> BlockVector {
        u.contract_time(&self.basis.eval_end)
    }

    /// Start trace `U_{j-1}^+`.
    pub fn start_trace(&self, u: &BlockVector) -> BlockVector {
        u.contract_time(&self.basis.eval_start)
    }

    /// Re-targets the cached system to another strip with the same length
    /// (valid for time-invariant coefficients on a uniform partition).
    pub fn retarget(&mut self, problem: &TransportProblem, strip: usize) {
        let (t0, t1) = problem.strip_bounds(strip);
        let m = self.basis.nodes.len();
        self.basis = TimeBasis::new(t0, t1, self.basis.order, m);
        self.strip = strip;
    }
}

/// The per-factor matrix families built for one strip (shared with the
/// preconditioner so diagonal blocks reuse the same projected matrices).
pub struct StripContext<'a> {
    pub problem: &'a TransportProblem,
    pub metric: &'a L2Metric,
}

fn family(space: &Arc<crate::fem::FactorSpace>, m: FactorMatrix) -> Arc<MatrixFamily> {
    Arc::new(MatrixFamily::new(space.clone(), m))
}

/// Weighted-mass family on a factor, reusing the metric's unweighted family
/// when the weight is constant 1.
fn mass_family(
    ctx: &StripContext,
    fac: Factor,
    weight: &ScalarField,
    level: usize,
    t: f64,
) -> Result<Arc<MatrixFamily>> {
    let (space, base) = match fac {
        Factor::X => (&ctx.metric.space.x, &ctx.metric.mass_x),
        Factor::V => (&ctx.metric.space.v, &ctx.metric.mass_v),
    };
    if weight.as_constant() == Some(1.0) {
        return Ok(base.clone());
    }
    Ok(family(space, assemble_mass(space, level, weight, t)?))
}

fn other(f: Factor) -> Factor {
    match f {
        Factor::X => Factor::V,
        Factor::V => Factor::X,
    }
}

/// Pulls the `(target, source)` cross-level pair of an (x, v) family pair as
/// a Kronecker term with the given time matrix.
#[allow(clippy::too_many_arguments)]
fn kron_term(
    time: Array2<f64>,
    scale: f64,
    fx: &Arc<MatrixFamily>,
    fx_transposed: bool,
    fv: &Arc<MatrixFamily>,
    fv_transposed: bool,
    target: LevelPair,
    source: LevelPair,
) -> KronTerm {
    let x = if fx_transposed {
        fx.get_transposed(target.l1, source.l1)
    } else {
        fx.get(target.l1, source.l1)
    };
    let v = if fv_transposed {
        fv.get_transposed(target.l2, source.l2)
    } else {
        fv.get(target.l2, source.l2)
    };
    KronTerm::new(scale, time, x, v)
        .with_invariance(fx.translation_invariant(), fv.translation_invariant())
}

/// A logical operator term: time matrix plus (x, v) family pair.
struct TermSpec {
    time: Array2<f64>,
    scale: f64,
    fx: Arc<MatrixFamily>,
    fx_t: bool,
    fv: Arc<MatrixFamily>,
    fv_t: bool,
}

/// Builds all term specs at one coefficient snapshot time `t`, with the given
/// integrated time matrices.
struct TimeMats {
    /// `sum_mu w_mu M_mu` (identity for the orthonormal basis)
    m_int: Array2<f64>,
    /// `sum_mu w_mu T_mu`
    t_int: Array2<f64>,
    /// `sum_mu w_mu C_mu`
    c_int: Array2<f64>,
}

fn build_term_specs(
    ctx: &StripContext,
    level: usize,
    delta: f64,
    tm: &TimeMats,
    g_start: &Array2<f64>,
    t: f64,
) -> Result<Vec<TermSpec>> {
    let p = ctx.problem;
    let sx = &ctx.metric.space.x;
    let sv = &ctx.metric.space.v;
    let mass_x = ctx.metric.mass_x.clone();
    let mass_v = ctx.metric.mass_v.clone();
    let mut specs: Vec<TermSpec> = Vec::new();

    // d_t U tested with w + delta d_t w, plus the upwind jump term:
    // (T + delta C + G) (x) M (x) M
    let mut t_time = tm.t_int.clone();
    t_time.zip_mut_with(&tm.c_int, |a, b| *a += delta * b);
    t_time.zip_mut_with(g_start, |a, b| *a += b);
    specs.push(TermSpec {
        time: t_time,
        scale: 1.0,
        fx: mass_x.clone(),
        fx_t: false,
        fv: mass_v.clone(),
        fv_t: false,
    });

    // advection families: directional derivative on its factor + weighted
    // mass on the other factor
    let mut adv: Vec<(Factor, Arc<MatrixFamily>, Arc<MatrixFamily>)> = Vec::new();
    for term in &p.beta {
        let dspace = match term.factor {
            Factor::X => sx,
            Factor::V => sv,
        };
        let d = family(
            dspace,
            assemble_directional_advection(dspace, level, &term.dirs, term.weight_on(term.factor), t)?,
        );
        let w = mass_family(ctx, other(term.factor), term.weight_on(other(term.factor)), level, t)?;
        adv.push((term.factor, d, w));
    }
    // sigma families
    let mut sig: Vec<(Arc<MatrixFamily>, Arc<MatrixFamily>)> = Vec::new();
    for (px, qv) in &p.sigma {
        sig.push((
            mass_family(ctx, Factor::X, px, level, t)?,
            mass_family(ctx, Factor::V, qv, level, t)?,
        ));
    }

    // transport (M (x) T^r), its streamline-diffusion test coupling
    // (delta T (x) (T^r)^T) and trial coupling (delta T^T (x) (T^r + K^r))
    for (fac, d, w) in &adv {
        let (fx, fx_t, fv, fv_t) = match fac {
            Factor::X => (d.clone(), false, w.clone(), false),
            Factor::V => (w.clone(), false, d.clone(), false),
        };
        specs.push(TermSpec {
            time: tm.m_int.clone(),
            scale: 1.0,
            fx: fx.clone(),
            fx_t,
            fv: fv.clone(),
            fv_t,
        });
        specs.push(TermSpec {
            time: tm.t_int.clone(),
            scale: delta,
            fx: fx.clone(),
            fx_t: !matches!(fac, Factor::V),
            fv: fv.clone(),
            fv_t: matches!(fac, Factor::V),
        });
        specs.push(TermSpec {
            time: tm.t_int.t().to_owned(),
            scale: delta,
            fx,
            fx_t,
            fv,
            fv_t,
        });
    }
    for (px, qv) in &sig {
        // reaction M (x) K^r and its trial coupling delta T^T (x) K^r
        specs.push(TermSpec {
            time: tm.m_int.clone(),
            scale: 1.0,
            fx: px.clone(),
            fx_t: false,
            fv: qv.clone(),
            fv_t: false,
        });
        specs.push(TermSpec {
            time: tm.t_int.t().to_owned(),
            scale: delta,
            fx: px.clone(),
            fx_t: false,
            fv: qv.clone(),
            fv_t: false,
        });
    }

    if delta != 0.0 {
        // streamline-diffusion couplings delta (d_beta U, d_beta w):
        // pairwise expansion over advection rank terms
        for ti in &p.beta {
            for tj in &p.beta {
                let spec = match (ti.factor, tj.factor) {
                    (Factor::X, Factor::X) => {
                        let wx = ti.x_weight.product(&tj.x_weight);
                        let wv = ti.v_weight.product(&tj.v_weight);
                        let gp = family(
                            sx,
                            assemble_directional_grad_pair(sx, level, &ti.dirs, &tj.dirs, &wx, t)?,
                        );
                        let wm = mass_family(ctx, Factor::V, &wv, level, t)?;
                        TermSpec { time: tm.m_int.clone(), scale: delta, fx: gp, fx_t: false, fv: wm, fv_t: false }
                    }
                    (Factor::V, Factor::V) => {
                        let wv = ti.v_weight.product(&tj.v_weight);
                        let wx = ti.x_weight.product(&tj.x_weight);
                        let gp = family(
                            sv,
                            assemble_directional_grad_pair(sv, level, &ti.dirs, &tj.dirs, &wv, t)?,
                        );
                        let wm = mass_family(ctx, Factor::X, &wx, level, t)?;
                        TermSpec { time: tm.m_int.clone(), scale: delta, fx: wm, fx_t: false, fv: gp, fv_t: false }
                    }
                    (Factor::X, Factor::V) => {
                        // trial derivative on x (term i), test derivative on v (term j)
                        let wx = ti.x_weight.product(&tj.x_weight);
                        let wv = ti.v_weight.product(&tj.v_weight);
                        let ax = family(
                            sx,
                            assemble_directional_advection(sx, level, &ti.dirs, &wx, t)?,
                        );
                        let av = family(
                            sv,
                            assemble_directional_advection(sv, level, &tj.dirs, &wv, t)?,
                        );
                        TermSpec { time: tm.m_int.clone(), scale: delta, fx: ax, fx_t: false, fv: av, fv_t: true }
                    }
                    (Factor::V, Factor::X) => {
                        let wx = ti.x_weight.product(&tj.x_weight);
                        let wv = ti.v_weight.product(&tj.v_weight);
                        let ax = family(
                            sx,
                            assemble_directional_advection(sx, level, &tj.dirs, &wx, t)?,
                        );
                        let av = family(
                            sv,
                            assemble_directional_advection(sv, level, &ti.dirs, &wv, t)?,
                        );
                        TermSpec { time: tm.m_int.clone(), scale: delta, fx: ax, fx_t: true, fv: av, fv_t: false }
                    }
                };
                specs.push(spec);
            }
        }
        // delta (sigma U, d_beta w): sigma rank x advection term, test derivative
        for (px, qv) in &p.sigma {
            for term in &p.beta {
                let spec = match term.factor {
                    Factor::X => {
                        let wx = px.product(&term.x_weight);
                        let wv = qv.product(&term.v_weight);
                        let ax = family(
                            sx,
                            assemble_directional_advection(sx, level, &term.dirs, &wx, t)?,
                        );
                        let wm = mass_family(ctx, Factor::V, &wv, level, t)?;
                        TermSpec { time: tm.m_int.clone(), scale: delta, fx: ax, fx_t: true, fv: wm, fv_t: false }
                    }
                    Factor::V => {
                        let wx = px.product(&term.x_weight);
                        let wv = qv.product(&term.v_weight);
                        let wm = mass_family(ctx, Factor::X, &wx, level, t)?;
                        let av = family(
                            sv,
                            assemble_directional_advection(sv, level, &term.dirs, &wv, t)?,
                        );
                        TermSpec { time: tm.m_int.clone(), scale: delta, fx: wm, fx_t: false, fv: av, fv_t: true }
                    }
                };
                specs.push(spec);
            }
        }
    }

    // inflow boundary: -(U, w)_{Gamma^-} with (beta . n)^- as the other-factor
    // weight; the assembled weight is negative, so the minus sign makes the
    // contribution positive semidefinite
    for seg in &p.boundary {
        let (tspace, tfam_space) = match seg.trace_factor {
            Factor::X => (sx, Factor::X),
            Factor::V => (sv, Factor::V),
        };
        let (trace, matched) =
            assemble_boundary_trace(tspace, level, &seg.selector, &seg.trace_weight, t, None)?;
        if !matched {
            eprintln!(
                "warning: boundary selector matched no facets on the {} factor at level {level}",
                if seg.trace_factor == Factor::X { "x" } else { "v" }
            );
        }
        let tf = family(tspace, trace);
        let wf = mass_family(ctx, other(tfam_space), &seg.inflow_weight, level, t)?;
        let (fx, fv) = match seg.trace_factor {
            Factor::X => (tf, wf),
            Factor::V => (wf, tf),
        };
        specs.push(TermSpec {
            time: tm.m_int.clone(),
            scale: -1.0,
            fx,
            fx_t: false,
            fv,
            fv_t: false,
        });
    }
    Ok(specs)
}

/// Assembles the full strip system at the given level.
pub fn assemble_strip(
    problem: &TransportProblem,
    strip: usize,
    level: usize,
    metric: &L2Metric,
) -> Result<StripSystem> {
    let ctx = StripContext { problem, metric };
    let space = &metric.space;
    let order = space.x.order();
    let (t0, t1) = problem.strip_bounds(strip);
    let m = problem.time_quad_points.unwrap_or(order + 2);
    let basis = TimeBasis::new(t0, t1, order, m);
    let delta = problem.sd_parameter(level);
    let pairs = active_levels(level);
    let coarse = precond_levels(level);
    let mut operator = KronOperator::new(level, order + 1, order + 1, pairs.clone());
    let mut coarse_diag: Vec<(LevelPair, Vec<KronTerm>)> =
        coarse.iter().map(|&c| (c, Vec::new())).collect();

    let static_coeffs = problem.time_invariant();
    if static_coeffs {
        let tm = TimeMats {
            m_int: basis.integrated(&basis.m_mats),
            t_int: basis.integrated(&basis.t_mats),
            c_int: basis.integrated(&basis.c_mats),
        };
        let specs = build_term_specs(&ctx, level, delta, &tm, &basis.g_start, basis.midpoint())?;
        for &tgt in &pairs {
            for &src in &pairs {
                for s in &specs {
                    operator.push(
                        tgt,
                        src,
                        kron_term(s.time.clone(), s.scale, &s.fx, s.fx_t, &s.fv, s.fv_t, tgt, src),
                    );
                }
            }
        }
        for (c, terms) in coarse_diag.iter_mut() {
            for s in &specs {
                terms.push(kron_term(s.time.clone(), s.scale, &s.fx, s.fx_t, &s.fv, s.fv_t, *c, *c));
            }
        }
    } else {
        // per-node coefficient snapshots; the jump term enters once
        for (mu, &tau) in basis.nodes.iter().enumerate() {
            let w = basis.weights[mu];
            let mut t_w = basis.t_mats[mu].clone();
            t_w.zip_mut_with(&basis.c_mats[mu], |a, b| *a += delta * b);
            t_w.mapv_inplace(|x| x * w);
            if mu == 0 {
                t_w.zip_mut_with(&basis.g_start, |a, b| *a += b);
            }
            let tm = TimeMats {
                m_int: basis.m_mats[mu].mapv(|x| x * w),
                t_int: basis.t_mats[mu].mapv(|x| x * w),
                c_int: Array2::zeros((order + 1, order + 1)),
            };
            // the (T + delta C + G) (x) M (x) M piece is rebuilt with the
            // weighted node matrices; spatial parts are time-independent
            let mut specs = build_term_specs(&ctx, level, delta, &tm, &Array2::zeros((order + 1, order + 1)), tau)?;
            specs[0].time = t_w;
            for &tgt in &pairs {
                for &src in &pairs {
                    for s in &specs {
                        operator.push(
                            tgt,
                            src,
                            kron_term(s.time.clone(), s.scale, &s.fx, s.fx_t, &s.fv, s.fv_t, tgt, src),
                        );
                    }
                }
            }
            for (c, terms) in coarse_diag.iter_mut() {
                for s in &specs {
                    terms.push(kron_term(s.time.clone(), s.scale, &s.fx, s.fx_t, &s.fv, s.fv_t, *c, *c));
                }
            }
        }
    }
    operator.coalesce();
    for (_, terms) in coarse_diag.iter_mut() {
        crate::tensor::kron::coalesce_terms(terms);
    }

    // jump coupling (U_{j-1}^-, w_{j-1}^+): eta(t0) column (x) cross masses
    let eta0 = Array2::from_shape_fn((order + 1, 1), |(s, _)| basis.eval_start[s]);
    let mut jump_op = KronOperator::new(level, order + 1, 1, pairs.clone());
    for &tgt in &pairs {
        for &src in &pairs {
            jump_op.push(
                tgt,
                src,
                KronTerm::new(
                    1.0,
                    eta0.clone(),
                    metric.mass_x.get(tgt.l1, src.l1),
                    metric.mass_v.get(tgt.l2, src.l2),
                ),
            );
        }
    }

    let f_load = assemble_loads(&ctx, &basis, level, delta)?;

    Ok(StripSystem { level, strip, delta, basis, operator, jump_op, f_load, coarse_diag })
}

/// Source and inflow-datum loads of one strip, with the streamline-diffusion
/// test modification `w + delta (d_t w + d_beta w)`.
fn assemble_loads(
    ctx: &StripContext,
    basis: &TimeBasis,
    level: usize,
    delta: f64,
) -> Result<BlockVector> {
    let p = ctx.problem;
    let space = &ctx.metric.space;
    let order = basis.order;
    let mut out = BlockVector::zeros(space, level, order + 1);
    let nq = crate::tensor::ERROR_QUAD_POINTS;

    let add_outer = |out: &mut BlockVector, tvec: &[f64], lx: &[Vec<f64>], lv: &[Vec<f64>]| {
        for &pair in &out.pairs.clone() {
            let block = out.block_mut(pair);
            let (bx, bv) = (&lx[pair.l1], &lv[pair.l2]);
            for (s, &c) in tvec.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                for (k1, &a) in bx.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (k2, &b) in bv.iter().enumerate() {
                        block[(s, k1, k2)] += c * a * b;
                    }
                }
            }
        }
    };

    let restrict_levels = |space: &Arc<crate::fem::FactorSpace>, finest: Vec<f64>| -> Result<Vec<Vec<f64>>> {
        let mut by_level = vec![Vec::new(); level + 1];
        for l in 1..level {
            by_level[l] = space.restrict(level, l, &finest)?;
        }
        by_level[level] = finest;
        Ok(by_level)
    };

    if !p.f.is_zero() {
        for term in &p.f.terms {
            for (mu, &tau) in basis.nodes.iter().enumerate() {
                let wmu = basis.weights[mu] * term.time_coeff(tau);
                let e = basis.eval(tau);
                let de = basis.eval_deriv(tau);
                // (f, w + delta d_t w)
                let tvec: Vec<f64> = e.iter().zip(&de).map(|(a, b)| wmu * (a + delta * b)).collect();
                let lx = restrict_levels(&space.x, assemble_load(&space.x, level, &term.x, tau, nq)?)?;
                let lv = restrict_levels(&space.v, assemble_load(&space.v, level, &term.v, tau, nq)?)?;
                add_outer(&mut out, &tvec, &lx, &lv);
                if delta != 0.0 {
                    // (f, delta d_beta w): directional derivative loads
                    let tvec: Vec<f64> = e.iter().map(|a| wmu * delta * a).collect();
                    for adv in &p.beta {
                        let (lx, lv) = match adv.factor {
                            Factor::X => (
                                restrict_levels(
                                    &space.x,
                                    assemble_load_deriv(
                                        &space.x,
                                        level,
                                        &term.x.product(&adv.x_weight),
                                        &adv.dirs,
                                        tau,
                                        nq,
                                    )?,
                                )?,
                                restrict_levels(
                                    &space.v,
                                    assemble_load(&space.v, level, &term.v.product(&adv.v_weight), tau, nq)?,
                                )?,
                            ),
                            Factor::V => (
                                restrict_levels(
                                    &space.x,
                                    assemble_load(&space.x, level, &term.x.product(&adv.x_weight), tau, nq)?,
                                )?,
                                restrict_levels(
                                    &space.v,
                                    assemble_load_deriv(
                                        &space.v,
                                        level,
                                        &term.v.product(&adv.v_weight),
                                        &adv.dirs,
                                        tau,
                                        nq,
                                    )?,
                                )?,
                            ),
                        };
                        add_outer(&mut out, &tvec, &lx, &lv);
                    }
                }
            }
        }
    }

    // inflow data: -(g, w)_{Gamma^-} per segment with separable g
    for seg in &p.boundary {
        let Some((g_trace, g_other)) = &seg.g else { continue };
        for (mu, &tau) in basis.nodes.iter().enumerate() {
            let wmu = basis.weights[mu];
            let tvec: Vec<f64> = basis.eval(tau).iter().map(|a| -wmu * a).collect();
            let (lx, lv) = match seg.trace_factor {
                Factor::X => (
                    restrict_levels(
                        &space.x,
                        assemble_trace_load(
                            &space.x,
                            level,
                            &seg.selector,
                            &seg.trace_weight.product(g_trace),
                            tau,
                            nq,
                        )?,
                    )?,
                    restrict_levels(
                        &space.v,
                        assemble_load(&space.v, level, &seg.inflow_weight.product(g_other), tau, nq)?,
                    )?,
                ),
                Factor::V => (
                    restrict_levels(
                        &space.x,
                        assemble_load(&space.x, level, &seg.inflow_weight.product(g_other), tau, nq)?,
                    )?,
                    restrict_levels(
                        &space.v,
                        assemble_trace_load(
                            &space.v,
                            level,
                            &seg.selector,
                            &seg.trace_weight.product(g_trace),
                            tau,
                            nq,
                        )?,
                    )?,
                ),
            };
            add_outer(&mut out, &tvec, &lx, &lv);
        }
    }
    Ok(out)
}

/// Boundary segments with full `|beta . n|` weight (inflow + outflow parts),
/// used by the streamline-diffusion norm.
pub fn boundary_abs_weight(seg: &BoundarySegment) -> ScalarField {
    let inw = seg.inflow_weight.clone();
    let outw = seg.outflow_weight.clone();
    ScalarField::time_function(move |t, p| outw.eval(t, p) - inw.eval(t, p))
}
