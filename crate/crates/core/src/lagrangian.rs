//! Temporal Lagrangian decomposition of the MISOCP relaxation.
//!
//! The horizon is split into contiguous blocks. Rows of the full model whose
//! variables live in more than one block (ramping, the commitment logic
//! equality, min-up and min-down windows that cross a seam) are moved into
//! the objective with multipliers; what remains separates by block.

use std::ops::Range;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnb::{fix_binaries, relative_gap, schedule_from_solution, solve_misocp, Fixing, MipOptions, MipResult, MipStatus};
use crate::conic::{solve_conic, ConicOptions};
use crate::cuts::{cut_loop, cycle_basis, envelope_cuts, CutLoopOptions};
use crate::feasibility::{recover_dispatch, AcDispatch, WarmStart};
use crate::formulation::{build_misocp, LinExpr, LinearRow, ModelIR, RotatedSocRow, Sense, SocRow, Tag, VarKind};
use crate::instance::UcInstance;
use crate::schedule::CommitmentSchedule;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub horizon: usize,
    pub blocks: Vec<Range<usize>>,
}

impl BlockPartition {
    /// Equal contiguous blocks; `b` must divide the horizon.
    pub fn new(horizon: usize, b: usize) -> Result<Self> {
        if b == 0 || horizon % b != 0 {
            return Err(Error::invalid(format!("{b} blocks do not divide a horizon of {horizon}")));
        }
        let len = horizon / b;
        Ok(BlockPartition { horizon, blocks: (0..b).map(|k| k * len..(k + 1) * len).collect() })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block_of(&self, t: usize) -> usize {
        self.blocks.iter().position(|r| r.contains(&t)).expect("period inside the horizon")
    }

    /// `(t̲_b, t̄_b)`, zero-based.
    pub fn bounds(&self, b: usize) -> (usize, usize) {
        (self.blocks[b].start, self.blocks[b].end - 1)
    }
}

/// One relaxed row with its multiplier. `g(x) = a·x − rhs`; inequality
/// multipliers stay nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    pub row: usize,
    pub tag: Tag,
    pub generator: usize,
    pub period: usize,
    pub sense: Sense,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSet {
    pub entries: Vec<Multiplier>,
}

impl MultiplierSet {
    /// Multipliers of one family (`RampUp`, `RampDown`, `CommitmentLogic`,
    /// `MinUp`, `MinDown`).
    pub fn family(&self, tag: Tag) -> impl Iterator<Item = &Multiplier> {
        self.entries.iter().filter(move |m| m.tag == tag)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sign_domains_hold(&self) -> bool {
        self.entries.iter().all(|m| m.sense == Sense::Eq || m.value >= 0.0)
    }

    fn project(&mut self) {
        for m in &mut self.entries {
            match m.sense {
                Sense::Le | Sense::Ge => m.value = m.value.max(0.0),
                Sense::Eq => {}
            }
        }
    }
}

/// Rows of `model` that couple two or more blocks.
pub fn cross_block_rows(model: &ModelIR, part: &BlockPartition) -> Vec<usize> {
    model
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            let mut blocks = r.terms.iter().map(|&(j, _)| part.block_of(model.variables[j].period));
            let first = blocks.next();
            blocks.any(|b| Some(b) != first)
        })
        .map(|(k, _)| k)
        .collect()
}

/// `g(x) = a·x − rhs` oriented so that feasibility is `g ≤ 0` (or `= 0`).
fn oriented(row: &LinearRow) -> (Vec<(usize, f64)>, f64) {
    match row.sense {
        Sense::Ge => (row.terms.iter().map(|&(j, a)| (j, -a)).collect(), -row.rhs),
        _ => (row.terms.clone(), row.rhs),
    }
}

fn empty_set(model: &ModelIR, rows: &[usize]) -> MultiplierSet {
    MultiplierSet {
        entries: rows
            .iter()
            .map(|&k| {
                let r = &model.rows[k];
                Multiplier {
                    row: k,
                    tag: r.info.tag,
                    generator: r.info.entity,
                    period: r.info.period,
                    sense: r.sense,
                    value: 0.0,
                }
            })
            .collect(),
    }
}

/// Multipliers from the duals of the continuous relaxation of `model`
/// (cuts included). On failure all multipliers are zero.
pub fn init_multipliers(model: &ModelIR, part: &BlockPartition, conic: &ConicOptions) -> MultiplierSet {
    let rows = cross_block_rows(model, part);
    let mut set = empty_set(model, &rows);
    if set.is_empty() {
        return set;
    }
    match solve_conic(&model.relaxed(), conic) {
        Ok(sol) if sol.is_optimal() => {
            for m in &mut set.entries {
                // Duals multiply a·x − rhs for ≤/= rows and rhs − a·x for ≥.
                m.value = sol.duals[m.row];
            }
            set.project();
        }
        Ok(sol) => warn!("multiplier initialization: relaxation {:?}, using zeros", sol.status),
        Err(e) => warn!("multiplier initialization failed: {e}, using zeros"),
    }
    set
}

/// Subproblem of block `b`: the variables of its periods, the rows and cones
/// lying entirely inside it, and the objective share plus the multiplier
/// terms on its variables. Returns the model and its variable map into the
/// full model.
pub fn build_block_subproblem(
    model: &ModelIR,
    part: &BlockPartition,
    b: usize,
    lambda: &MultiplierSet,
) -> (ModelIR, Vec<usize>) {
    let range = &part.blocks[b];
    let mut map = vec![usize::MAX; model.n_vars()];
    let mut sub = ModelIR::new(format!("{}:block{b}", model.name), model.horizon);
    let mut back = Vec::new();
    for (j, v) in model.variables.iter().enumerate() {
        if range.contains(&v.period) {
            map[j] = sub.add_var(v.kind, v.entity, v.period, v.lo, v.hi, v.integrality);
            back.push(j);
        }
    }
    let inside = |terms: &[(usize, f64)]| terms.iter().all(|&(j, _)| map[j] != usize::MAX);
    let remap = |terms: &[(usize, f64)]| -> Vec<(usize, f64)> { terms.iter().map(|&(j, a)| (map[j], a)).collect() };
    let remap_expr = |e: &LinExpr| LinExpr::new(remap(&e.terms), e.constant);
    let relaxed: std::collections::BTreeSet<usize> = lambda.entries.iter().map(|m| m.row).collect();
    for (k, r) in model.rows.iter().enumerate() {
        if relaxed.contains(&k) || !inside(&r.terms) {
            continue;
        }
        sub.rows.push(LinearRow { terms: remap(&r.terms), sense: r.sense, rhs: r.rhs, info: r.info });
    }
    for c in &model.socs {
        if c.lhs.iter().chain(std::iter::once(&c.rhs)).all(|e| inside(&e.terms)) {
            sub.socs.push(SocRow { lhs: c.lhs.iter().map(remap_expr).collect(), rhs: remap_expr(&c.rhs), info: c.info });
        }
    }
    for c in &model.rotated {
        if c.lhs.iter().chain([&c.x, &c.y]).all(|e| inside(&e.terms)) {
            sub.rotated.push(RotatedSocRow {
                lhs: c.lhs.iter().map(remap_expr).collect(),
                x: remap_expr(&c.x),
                y: remap_expr(&c.y),
                info: c.info,
            });
        }
    }
    let mut obj: Vec<(usize, f64)> = model.objective.terms.iter().filter(|&&(j, _)| map[j] != usize::MAX).map(|&(j, a)| (map[j], a)).collect();
    for m in &lambda.entries {
        if m.value == 0.0 {
            continue;
        }
        let (terms, _) = oriented(&model.rows[m.row]);
        for (j, a) in terms {
            if map[j] != usize::MAX {
                obj.push((map[j], m.value * a));
            }
        }
    }
    sub.objective = LinExpr::new(obj, 0.0);
    (sub, back)
}

/// Objective constant not attached to any block: the model constant and
/// `−Σ λ·rhs` of the relaxed rows.
pub fn global_constant(model: &ModelIR, lambda: &MultiplierSet) -> f64 {
    model.objective.constant
        - lambda
            .entries
            .iter()
            .map(|m| m.value * oriented(&model.rows[m.row]).1)
            .sum::<f64>()
}

#[derive(Debug, Clone)]
pub struct BlockSolution {
    pub block: usize,
    pub result: MipResult,
    /// Variable map into the full model.
    pub map: Vec<usize>,
}

/// Solves all block subproblems and returns `Σ_b bound_b + constant`.
pub fn lagrangian_bound(
    model: &ModelIR,
    part: &BlockPartition,
    lambda: &MultiplierSet,
    opts: &MipOptions,
) -> Result<(f64, Vec<BlockSolution>)> {
    let sols: Vec<Result<BlockSolution>> = (0..part.len())
        .into_par_iter()
        .map(|b| {
            let (sub, map) = build_block_subproblem(model, part, b, lambda);
            let result = solve_misocp(&sub, opts, &[])?;
            Ok(BlockSolution { block: b, result, map })
        })
        .collect();
    let sols = sols.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(s) = sols.iter().find(|s| s.result.status == MipStatus::Infeasible) {
        return Err(Error::Solver(format!("block {} subproblem infeasible", s.block)));
    }
    let lb = sols.iter().map(|s| s.result.best_bound).sum::<f64>() + global_constant(model, lambda);
    Ok((lb, sols))
}

/// Full-model point assembled from the block incumbents.
pub fn concatenate(model: &ModelIR, sols: &[BlockSolution]) -> Option<Vec<f64>> {
    let mut x = vec![0.0; model.n_vars()];
    for s in sols {
        let inc = s.result.incumbent.as_ref()?;
        for (k, &j) in s.map.iter().enumerate() {
            x[j] = inc[k];
        }
    }
    Some(x)
}

/// Fixings of the restricted problem from concatenated block commitments:
/// units on throughout or off throughout are fixed everywhere, others only
/// at their on periods.
pub fn restricted_fixings(u: &[Vec<bool>]) -> Vec<Fixing> {
    let mut out = Vec::new();
    for (g, row) in u.iter().enumerate() {
        let all_on = row.iter().all(|&b| b);
        let all_off = row.iter().all(|&b| !b);
        for (t, &on) in row.iter().enumerate() {
            if all_off {
                out.push((VarKind::U, g, t, false));
            } else if on || all_on {
                out.push((VarKind::U, g, t, true));
            }
        }
    }
    out
}

/// Solves the restricted problem built from the block solutions.
pub fn restricted_schedule(
    model: &ModelIR,
    sols: &[BlockSolution],
    opts: &MipOptions,
) -> Result<(Vec<Fixing>, MipResult)> {
    let x = concatenate(model, sols).ok_or_else(|| Error::Solver("a block has no incumbent".into()))?;
    let s = schedule_from_solution(model, &x).ok_or_else(|| Error::Model("model has no commitment variables".into()))?;
    let fixings = restricted_fixings(&s.u);
    let restricted = fix_binaries(model, None, &fixings)?;
    let res = solve_misocp(&restricted, opts, &[])?;
    Ok((fixings, res))
}

/// Relaxed-row values `g(x)` at a full-model point.
pub fn subgradient(model: &ModelIR, lambda: &MultiplierSet, x: &[f64]) -> Vec<f64> {
    lambda
        .entries
        .iter()
        .map(|m| {
            let (terms, rhs) = oriented(&model.rows[m.row]);
            terms.iter().map(|&(j, a)| a * x[j]).sum::<f64>() - rhs
        })
        .collect()
}

/// Polyak step `λ ← proj(λ + α (ub − lb) / ‖g‖² · g)`. Unchanged when
/// `‖g‖ = 0` or the upper bound is not finite.
pub fn subgradient_update(lambda: &MultiplierSet, g: &[f64], lb: f64, best_ub: f64, alpha: f64) -> MultiplierSet {
    let norm2: f64 = g.iter().map(|v| v * v).sum();
    let mut next = lambda.clone();
    if norm2 == 0.0 || !best_ub.is_finite() {
        return next;
    }
    let step = alpha * (best_ub - lb).max(0.0) / norm2;
    for (m, gi) in next.entries.iter_mut().zip(g) {
        m.value += step * gi;
    }
    next.project();
    next
}

#[derive(Debug, Clone, Copy)]
pub struct DecompositionOptions {
    pub blocks: usize,
    pub max_iters: usize,
    pub gap_target: f64,
    pub subproblem: MipOptions,
    pub restricted: MipOptions,
    pub cuts: CutLoopOptions,
    pub envelope_anchors: usize,
    /// Skip the cycle cut rounds (envelopes are still added).
    pub disable_sdp_cuts: bool,
    /// Decompose the bare MISOCP: no envelopes and no cycle cuts.
    pub plain: bool,
    pub alpha0: f64,
    pub time_limit_s: f64,
}

impl Default for DecompositionOptions {
    fn default() -> Self {
        let sub = MipOptions { rel_gap: 0.01, ..Default::default() };
        DecompositionOptions {
            blocks: 4,
            max_iters: 5,
            gap_target: 0.01,
            subproblem: sub,
            restricted: sub,
            cuts: CutLoopOptions::default(),
            envelope_anchors: 3,
            disable_sdp_cuts: false,
            plain: false,
            alpha0: 1.0,
            time_limit_s: 3600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub block_bounds: Vec<f64>,
    pub lb: f64,
    pub ub: Option<f64>,
    pub best_lb: f64,
    pub best_ub: Option<f64>,
    pub gap: Option<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub best_lb: f64,
    pub best_ub: Option<f64>,
    pub schedule: Option<CommitmentSchedule>,
    pub dispatch: Option<AcDispatch>,
    pub iterations: Vec<IterationRecord>,
    pub lb_time: f64,
    pub ub_time: f64,
    pub timed_out: bool,
}

impl DecompositionResult {
    pub fn gap(&self) -> Option<f64> {
        self.best_ub.map(|ub| relative_gap(ub, self.best_lb))
    }
}

/// Strengthened full model: the MISOCP with envelopes as rows and the cycle
/// cuts of the cut loop appended.
pub fn strengthened_model(inst: &UcInstance, anchors: usize, cuts: Option<&CutLoopOptions>) -> Result<(ModelIR, Vec<f64>)> {
    let mut model = build_misocp(inst);
    for c in envelope_cuts(&mut model, inst, anchors) {
        model.rows.push(c.row);
    }
    let mut trace = Vec::new();
    if let Some(opts) = cuts {
        let res = cut_loop(&model.relaxed(), inst, &cycle_basis(&inst.network), opts)?;
        trace = res.lb_trace;
        for c in res.cuts {
            model.rows.push(c.row);
        }
    }
    Ok((model, trace))
}

/// Runs the decomposition: cut preparation, multiplier initialization, then
/// up to `max_iters` rounds of block solves, schedule repair, AC recovery
/// and multiplier updates.
pub fn run_decomposition(inst: &UcInstance, opts: &DecompositionOptions) -> Result<DecompositionResult> {
    let clock = Instant::now();
    let part = BlockPartition::new(inst.horizon, opts.blocks)?;
    let model = if opts.plain {
        build_misocp(inst)
    } else {
        strengthened_model(inst, opts.envelope_anchors, (!opts.disable_sdp_cuts).then_some(&opts.cuts))?.0
    };
    let mut lambda = init_multipliers(&model, &part, &opts.subproblem.conic);

    let mut res = DecompositionResult {
        best_lb: f64::NEG_INFINITY,
        best_ub: None,
        schedule: None,
        dispatch: None,
        iterations: Vec::new(),
        lb_time: 0.0,
        ub_time: 0.0,
        timed_out: false,
    };
    let mut alpha = opts.alpha0;
    let mut ub_clock = 0.0;
    for iter in 1..=opts.max_iters {
        let remaining = opts.time_limit_s - clock.elapsed().as_secs_f64();
        if remaining <= 0.0 {
            res.timed_out = true;
            break;
        }
        let sub_opts = MipOptions { time_limit_s: opts.subproblem.time_limit_s.min(remaining), ..opts.subproblem };
        let (lb, sols) = lagrangian_bound(&model, &part, &lambda, &sub_opts)?;
        let improved = lb > res.best_lb;
        if improved {
            res.best_lb = lb;
        }
        res.lb_time = clock.elapsed().as_secs_f64() - ub_clock;

        // Upper bound from the restricted problem and AC recovery.
        let t_ub = Instant::now();
        let mut ub = None;
        let restricted_opts = MipOptions { time_limit_s: opts.restricted.time_limit_s.min(remaining), ..opts.restricted };
        match restricted_schedule(&model, &sols, &restricted_opts) {
            Ok((_, mip)) => match (mip.incumbent.as_ref(), mip.incumbent.as_ref().and_then(|x| schedule_from_solution(&model, x))) {
                (Some(x), Some(s)) if s.is_valid(inst) => {
                    let ws = WarmStart::from_solution(inst, &model, x);
                    let out = recover_dispatch(inst, &s, Some(&ws))?;
                    if let (true, Some(d)) = (out.is_feasible(), out.dispatch) {
                        ub = Some(d.cost);
                        if res.best_ub.is_none_or(|b| d.cost < b) {
                            res.best_ub = Some(d.cost);
                            res.schedule = Some(s);
                            res.dispatch = Some(d);
                        }
                    } else {
                        info!("decomposition iteration {iter}: AC recovery locally infeasible");
                    }
                }
                _ => info!("decomposition iteration {iter}: restricted problem gave no schedule"),
            },
            Err(e) => info!("decomposition iteration {iter}: restricted problem failed: {e}"),
        }
        ub_clock += t_ub.elapsed().as_secs_f64();
        res.ub_time = ub_clock;

        let gap = res.gap();
        let record = IterationRecord {
            iter,
            block_bounds: sols.iter().map(|s| s.result.best_bound).collect(),
            lb,
            ub,
            best_lb: res.best_lb,
            best_ub: res.best_ub,
            gap,
            alpha,
        };
        for (b, bb) in record.block_bounds.iter().enumerate() {
            info!(
                "iter {iter}, block {b}, block_bound {bb:.6}, lb {lb:.6}, ub {}, gap {}, alpha {alpha}",
                res.best_ub.map_or("-".into(), |v| format!("{v:.6}")),
                gap.map_or("-".into(), |v| format!("{:.4}%", 100.0 * v))
            );
        }
        res.iterations.push(record);
        if gap.is_some_and(|g| g <= opts.gap_target) || lambda.is_empty() {
            break;
        }

        // Multiplier step.
        if !improved && iter > 1 {
            alpha *= 0.5;
        }
        let next = match (concatenate(&model, &sols), res.best_ub) {
            (Some(x), Some(ub)) => subgradient_update(&lambda, &subgradient(&model, &lambda, &x), lb, ub, alpha),
            _ => {
                alpha *= 0.5;
                lambda.clone()
            }
        };
        // Unchanged multipliers repeat the same iteration.
        if next == lambda {
            break;
        }
        lambda = next;
    }
    Ok(res)
}
