//! Branch-and-bound over the binaries of a mixed-integer conic model.
//!
//! Node relaxations are solved by [`solve_conic`]. Nodes are explored
//! best-bound first; the branching variable is the most fractional
//! commitment variable `u`, falling back to other binaries only when every
//! `u` is integral, with ties broken by the lowest `(generator, period)`.
//! Incumbents come from integral nodes and from a rounding heuristic that
//! fixes a repaired on/off pattern and re-solves.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::conic::{solve_conic, ConicOptions, ConicSolution, ConicStatus};
use crate::error::{Error, Result};
use crate::formulation::{Integrality, LinearRow, ModelIR, Tag, VarKind};
pub use crate::schedule::CommitmentSchedule;

pub const INT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MipStatus {
    OptimalWithinGap,
    Infeasible,
    TimeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MipOptions {
    pub rel_gap: f64,
    pub time_limit_s: f64,
    pub node_limit: usize,
    pub conic: ConicOptions,
}

impl Default for MipOptions {
    fn default() -> Self {
        MipOptions {
            rel_gap: 1e-3,
            time_limit_s: 3600.0,
            node_limit: usize::MAX,
            conic: ConicOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipResult {
    pub status: MipStatus,
    pub incumbent_obj: Option<f64>,
    pub best_bound: f64,
    pub incumbent: Option<Vec<f64>>,
    pub schedule: Option<CommitmentSchedule>,
    pub node_count: usize,
    pub wall_time: f64,
    /// Global bound after each processed node.
    pub bound_trace: Vec<f64>,
}

impl MipResult {
    pub fn gap(&self) -> Option<f64> {
        self.incumbent_obj.map(|inc| relative_gap(inc, self.best_bound))
    }
}

/// `(incumbent − bound) / max(|incumbent|, ε)`.
pub fn relative_gap(incumbent: f64, bound: f64) -> f64 {
    (incumbent - bound) / incumbent.abs().max(1e-10)
}

struct Node {
    bound: f64,
    depth: usize,
    seq: usize,
    fixings: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Max-heap: the smallest bound is the greatest; ties prefer deeper,
    // then older nodes.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

/// Solves `model` (with binaries) to the relative gap target. `extra_cuts`
/// are appended to every node relaxation.
pub fn solve_misocp(model: &ModelIR, opts: &MipOptions, extra_cuts: &[LinearRow]) -> Result<MipResult> {
    let clock = Instant::now();
    let mut base = model.relaxed();
    base.rows.extend_from_slice(extra_cuts);
    base.validate()?;
    let binaries: Vec<usize> = model.binaries().collect();
    let mut search = Search {
        base: &base,
        binaries: &binaries,
        opts,
        clock,
        incumbent: None,
        tried: HashSet::new(),
        windows: commitment_windows(model),
        pruned: f64::INFINITY,
    };

    let root = search.solve_node(&[])?;
    match root.status {
        ConicStatus::Optimal => {}
        ConicStatus::Infeasible => {
            return Ok(MipResult {
                status: MipStatus::Infeasible,
                incumbent_obj: None,
                best_bound: f64::INFINITY,
                incumbent: None,
                schedule: None,
                node_count: 1,
                wall_time: clock.elapsed().as_secs_f64(),
                bound_trace: vec![f64::INFINITY],
            })
        }
        s => return Err(Error::Solver(format!("root relaxation ended with {s:?}"))),
    }

    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    let mut seq = 0usize;
    let mut nodes = 0usize;
    let mut trace = Vec::new();
    // Bounds of nodes whose relaxation failed: they stay open forever.
    let mut stuck = f64::INFINITY;
    let mut best_bound = root.bound();
    let mut pending: Option<(ConicSolution, Vec<(usize, f64)>, usize)> = Some((root, Vec::new(), 0));
    let mut status = MipStatus::OptimalWithinGap;

    loop {
        let (sol, fixings, depth) = match pending.take() {
            Some(p) => p,
            None => {
                let Some(node) = heap.pop() else { break };
                if search.prunable(node.bound) {
                    continue;
                }
                if clock.elapsed().as_secs_f64() > opts.time_limit_s || nodes >= opts.node_limit {
                    heap.push(node);
                    status = MipStatus::TimeLimit;
                    break;
                }
                let sol = search.solve_node(&node.fixings)?;
                match sol.status {
                    ConicStatus::Optimal => {}
                    ConicStatus::Infeasible => {
                        nodes += 1;
                        continue;
                    }
                    _ => {
                        nodes += 1;
                        stuck = stuck.min(node.bound);
                        continue;
                    }
                }
                let mut sol = sol;
                // A child's bound can never be below its parent's.
                if sol.bound() < node.bound {
                    sol.objective = sol.objective.max(node.bound);
                    sol.dual_objective = sol.dual_objective.max(node.bound);
                }
                (sol, node.fixings, node.depth)
            }
        };
        nodes += 1;
        let bound = sol.bound();
        if !search.prunable(bound) {
            if nodes <= 1 || search.incumbent.is_none() || nodes % 5 == 0 {
                search.heuristic(&sol, &fixings)?;
            }
            match search.branch_var(&sol.primal) {
                None => search.accept_integral(&sol, &fixings)?,
                Some(j) => {
                    if !search.prunable(bound) {
                        for value in [0.0, 1.0] {
                            let mut f = fixings.clone();
                            f.push((j, value));
                            seq += 1;
                            heap.push(Node {
                                bound,
                                depth: depth + 1,
                                seq,
                                fixings: f,
                            });
                        }
                    }
                }
            }
        }
        let open = heap
            .peek()
            .map(|n| n.bound)
            .unwrap_or(f64::INFINITY)
            .min(stuck)
            .min(search.pruned);
        let inc = search.incumbent_obj();
        best_bound = best_bound.max(open.min(inc));
        trace.push(best_bound);
        if let Some(inc) = search.incumbent.as_ref().map(|i| i.0) {
            let gap = relative_gap(inc, best_bound);
            debug!(
                "node {nodes}, open {}, bound {best_bound:.6}, incumbent {inc:.6}, gap {:.4}%, time {:.2}",
                heap.len(),
                gap * 100.0,
                clock.elapsed().as_secs_f64()
            );
            if gap <= opts.rel_gap {
                break;
            }
        }
        if clock.elapsed().as_secs_f64() > opts.time_limit_s || nodes >= opts.node_limit {
            if !heap.is_empty() || stuck.is_finite() {
                status = MipStatus::TimeLimit;
            }
            break;
        }
    }

    let wall_time = clock.elapsed().as_secs_f64();
    let (incumbent_obj, incumbent) = match search.incumbent.take() {
        Some((obj, x)) => (Some(obj), Some(x)),
        None => (None, None),
    };
    if heap.is_empty() && !stuck.is_finite() && status != MipStatus::TimeLimit {
        // Tree exhausted: the bound closes on the incumbent up to pruned nodes.
        match incumbent_obj {
            Some(inc) => best_bound = best_bound.max(inc.min(search.pruned)),
            None => {
                status = MipStatus::Infeasible;
                best_bound = f64::INFINITY;
            }
        }
    }
    if let Some(inc) = incumbent_obj {
        best_bound = best_bound.min(inc);
    }
    let schedule = incumbent.as_ref().and_then(|x| schedule_from_solution(model, x));
    info!(
        "branch-and-bound: {nodes} nodes, bound {best_bound:.6}, incumbent {:?}, {wall_time:.2}s",
        incumbent_obj
    );
    Ok(MipResult {
        status,
        incumbent_obj,
        best_bound,
        incumbent,
        schedule,
        node_count: nodes,
        wall_time,
        bound_trace: trace,
    })
}

struct Search<'a> {
    base: &'a ModelIR,
    binaries: &'a [usize],
    opts: &'a MipOptions,
    clock: Instant,
    incumbent: Option<(f64, Vec<f64>)>,
    tried: HashSet<Vec<bool>>,
    windows: BTreeMap<usize, (usize, usize)>,
    /// Smallest bound among nodes discarded for being within the gap target
    /// of the incumbent; they may still hide slightly better solutions.
    pruned: f64,
}

impl Search<'_> {
    fn incumbent_obj(&self) -> f64 {
        self.incumbent.as_ref().map(|i| i.0).unwrap_or(f64::INFINITY)
    }

    fn prunable(&mut self, bound: f64) -> bool {
        match &self.incumbent {
            Some((inc, _)) if relative_gap(*inc, bound) <= self.opts.rel_gap => {
                self.pruned = self.pruned.min(bound);
                true
            }
            _ => false,
        }
    }

    fn remaining(&self) -> f64 {
        (self.opts.time_limit_s - self.clock.elapsed().as_secs_f64()).max(1.0)
    }

    fn solve_node(&self, fixings: &[(usize, f64)]) -> Result<ConicSolution> {
        let mut m = self.base.clone();
        for &(j, v) in fixings {
            m.variables[j].lo = v;
            m.variables[j].hi = v;
        }
        let mut opts = self.opts.conic;
        opts.time_limit_s = opts.time_limit_s.min(self.remaining());
        solve_conic(&m, &opts)
    }

    /// Most fractional binary, commitment variables first.
    fn branch_var(&self, x: &[f64]) -> Option<usize> {
        let frac = |j: usize| {
            let f = x[j] - x[j].floor();
            f.min(1.0 - f)
        };
        let rank = |j: usize| {
            let v = &self.base.variables[j];
            let class = match v.kind {
                VarKind::U => 0,
                VarKind::V => 1,
                VarKind::W => 2,
                _ => 3,
            };
            (class, v.entity, v.period, j)
        };
        let mut best: Option<(usize, f64)> = None;
        let mut best_class = usize::MAX;
        for &j in self.binaries {
            let f = frac(j);
            if f <= INT_TOL {
                continue;
            }
            let r = rank(j);
            let better = match best {
                None => true,
                Some((k, bf)) => {
                    r.0 < best_class
                        || (r.0 == best_class && (f > bf + 1e-12 || ((f - bf).abs() <= 1e-12 && r < rank(k))))
                }
            };
            if better {
                best = Some((j, f));
                best_class = r.0;
            }
        }
        best.map(|(j, _)| j)
    }

    fn accept_integral(&mut self, sol: &ConicSolution, fixings: &[(usize, f64)]) -> Result<()> {
        let mut all = fixings.to_vec();
        for &j in self.binaries {
            all.push((j, sol.primal[j].round()));
        }
        self.try_fixed(&all)
    }

    /// Fixes every binary listed and, if the resulting relaxation is
    /// integral, offers it as an incumbent.
    fn try_fixed(&mut self, fixings: &[(usize, f64)]) -> Result<()> {
        let sol = self.solve_node(fixings)?;
        if !sol.is_optimal() {
            return Ok(());
        }
        if self.binaries.iter().any(|&j| {
            let f = sol.primal[j] - sol.primal[j].round();
            f.abs() > INT_TOL
        }) {
            return Ok(());
        }
        let mut x = sol.primal.clone();
        for &j in self.binaries {
            x[j] = x[j].round();
        }
        if sol.objective < self.incumbent_obj() {
            debug!("new incumbent {:.6}", sol.objective);
            self.incumbent = Some((sol.objective, x));
        }
        Ok(())
    }

    /// Rounds the commitment variables two ways (any positive value, and at
    /// one half), repairs minimum up/down runs, fixes the pattern and
    /// re-solves.
    fn heuristic(&mut self, sol: &ConicSolution, fixings: &[(usize, f64)]) -> Result<()> {
        let us: Vec<usize> = self
            .binaries
            .iter()
            .copied()
            .filter(|&j| self.base.variables[j].kind == VarKind::U)
            .collect();
        if us.is_empty() {
            return Ok(());
        }
        for threshold in [INT_TOL, 0.5] {
            let mut on: BTreeMap<usize, Vec<(usize, bool)>> = BTreeMap::new();
            for &j in &us {
                let v = &self.base.variables[j];
                let fixed = fixings.iter().rev().find(|f| f.0 == j).map(|f| f.1 > 0.5);
                let val = fixed.unwrap_or(sol.primal[j] > threshold);
                on.entry(v.entity).or_default().push((v.period, val));
            }
            let mut pattern = Vec::new();
            let mut fix = Vec::new();
            for (g, mut periods) in on {
                periods.sort();
                let mut row: Vec<bool> = periods.iter().map(|p| p.1).collect();
                let cyclic = periods.len() == self.base.horizon;
                if let Some(&(up, dw)) = self.windows.get(&g) {
                    repair_runs(&mut row, up, dw, cyclic);
                }
                for (k, &(t, _)) in periods.iter().enumerate() {
                    fix.push((self.base.v(VarKind::U, g, t), row[k] as u8 as f64));
                }
                pattern.extend(row);
            }
            // Respect branching decisions on other binaries.
            for &(j, v) in fixings {
                if self.base.variables[j].kind != VarKind::U {
                    fix.push((j, v));
                }
            }
            if fix.iter().any(|&(j, v)| fixings.iter().any(|&(k, w)| k == j && w != v)) {
                continue;
            }
            if self.tried.insert(pattern) {
                self.try_fixed(&fix)?;
            }
        }
        Ok(())
    }
}

/// Minimum up/down lengths per generator read off the model's window rows.
fn commitment_windows(model: &ModelIR) -> BTreeMap<usize, (usize, usize)> {
    let mut out: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in &model.rows {
        let kind = match r.info.tag {
            Tag::MinUp => VarKind::V,
            Tag::MinDown => VarKind::W,
            _ => continue,
        };
        let len = r.terms.iter().filter(|&&(j, _)| model.variables[j].kind == kind).count();
        let e = out.entry(r.info.entity).or_insert((1, 1));
        if kind == VarKind::V {
            e.0 = e.0.max(len);
        } else {
            e.1 = e.1.max(len);
        }
    }
    out
}

/// Switches units on until every on-run lasts at least `up` periods and
/// every off-run at least `down` periods.
pub fn repair_runs(row: &mut [bool], up: usize, down: usize, cyclic: bool) {
    let h = row.len();
    if h == 0 {
        return;
    }
    for _ in 0..=h {
        if row.iter().all(|&x| x) || row.iter().all(|&x| !x) {
            return;
        }
        let mut changed = false;
        for (start, len, value) in runs(row, cyclic) {
            let need = if value { up } else { down };
            let whole = !cyclic && (start == 0 || start + len == h);
            if len >= need || whole && !value {
                continue;
            }
            if value {
                // Extend forward.
                for k in 0..need.saturating_sub(len) {
                    let t = start + len + k;
                    let t = if cyclic { t % h } else { t.min(h - 1) };
                    if !row[t] {
                        row[t] = true;
                        changed = true;
                    }
                }
            } else {
                for k in 0..len {
                    row[(start + k) % h] = true;
                }
                changed = true;
            }
            break;
        }
        if !changed {
            return;
        }
    }
}

/// Maximal runs `(start, length, value)`; with `cyclic`, a run may wrap.
fn runs(row: &[bool], cyclic: bool) -> Vec<(usize, usize, bool)> {
    let h = row.len();
    let mut start = 0;
    if cyclic {
        // Begin at a value change so wrapping runs stay whole.
        start = (0..h).find(|&t| row[t] != row[(t + h - 1) % h]).unwrap_or(0);
    }
    let mut out = Vec::new();
    let mut k = 0;
    while k < h {
        let t0 = (start + k) % h;
        let v = row[t0];
        let mut len = 0;
        while k < h && row[(start + k) % h] == v {
            len += 1;
            k += 1;
        }
        out.push((t0, len, v));
    }
    out
}

/// On/off schedule read from a solution of a full-horizon commitment model.
pub fn schedule_from_solution(model: &ModelIR, x: &[f64]) -> Option<CommitmentSchedule> {
    let gens = model
        .variables
        .iter()
        .filter(|v| v.kind == VarKind::U)
        .map(|v| v.entity)
        .max()?
        + 1;
    let h = model.horizon;
    let mut u = vec![vec![false; h]; gens];
    let mut v = vec![vec![false; h]; gens];
    let mut w = vec![vec![false; h]; gens];
    for (j, var) in model.variables.iter().enumerate() {
        let target = match var.kind {
            VarKind::U => &mut u,
            VarKind::V => &mut v,
            VarKind::W => &mut w,
            _ => continue,
        };
        target[var.entity][var.period] = x[j] > 0.5;
    }
    Some(CommitmentSchedule { u, v, w })
}

/// Commitment rows of `model` evaluated at `schedule`; errors on the first
/// violated row.
pub fn check_schedule_rows(model: &ModelIR, schedule: &CommitmentSchedule) -> Result<()> {
    let mut x = vec![0.0; model.n_vars()];
    for (j, var) in model.variables.iter().enumerate() {
        let src = match var.kind {
            VarKind::U => &schedule.u,
            VarKind::V => &schedule.v,
            VarKind::W => &schedule.w,
            _ => continue,
        };
        x[j] = src[var.entity][var.period] as u8 as f64;
    }
    for r in &model.rows {
        let logical = matches!(
            r.info.tag,
            Tag::CommitmentLogic | Tag::StartupLogic | Tag::ShutdownLogic | Tag::MinUp | Tag::MinDown
        );
        if logical && r.violation(&x) > 1e-9 {
            return Err(Error::invalid(format!(
                "schedule violates {} row for generator {} at period {}",
                r.info.tag, r.info.entity, r.info.period
            )));
        }
    }
    Ok(())
}

/// A single binary fixing `(kind, generator, period, value)`.
pub type Fixing = (VarKind, usize, usize, bool);

/// Fixes binaries through equal bounds: every `u`, `v`, `w` of `schedule`
/// when given, then the listed partial fixings.
pub fn fix_binaries(
    model: &ModelIR,
    schedule: Option<&CommitmentSchedule>,
    partial: &[Fixing],
) -> Result<ModelIR> {
    let mut fixed: BTreeMap<(VarKind, usize, usize), bool> = BTreeMap::new();
    let mut set = |k: VarKind, g: usize, t: usize, val: bool| -> Result<()> {
        match fixed.insert((k, g, t), val) {
            Some(prev) if prev != val => Err(Error::invalid(format!(
                "{}[{g},{t}] fixed to both values",
                k.name()
            ))),
            _ => Ok(()),
        }
    };
    if let Some(s) = schedule {
        for g in 0..s.n_generators() {
            for t in 0..s.horizon() {
                set(VarKind::U, g, t, s.u[g][t])?;
                set(VarKind::V, g, t, s.v[g][t])?;
                set(VarKind::W, g, t, s.w[g][t])?;
            }
        }
    }
    for &(k, g, t, val) in partial {
        if !k.is_commitment() {
            return Err(Error::invalid(format!("{} is not a commitment variable", k.name())));
        }
        set(k, g, t, val)?;
    }
    for (&(k, g, t), &val) in &fixed {
        let u = fixed.get(&(VarKind::U, g, t)).copied();
        match (k, val, u) {
            (VarKind::V, true, Some(false)) => {
                return Err(Error::invalid(format!("startup fixed while off at g{g} t{t}")))
            }
            (VarKind::W, true, Some(true)) => {
                return Err(Error::invalid(format!("shutdown fixed while on at g{g} t{t}")))
            }
            _ => {}
        }
    }
    let mut m = model.clone();
    for ((k, g, t), val) in fixed {
        let Some(j) = m.var(k, g, t) else { continue };
        if m.variables[j].integrality != Integrality::Binary {
            continue;
        }
        let v = val as u8 as f64;
        m.variables[j].lo = v;
        m.variables[j].hi = v;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_wrap() {
        let r = runs(&[true, false, false, true], true);
        assert_eq!(r, vec![(1, 2, false), (3, 2, true)]);
        let r = runs(&[true, false, false, true], false);
        assert_eq!(r.len(), 3);
    }

    #[test]
    fn repair_extends_short_on_run() {
        let mut row = vec![false, true, false, false, false, false];
        repair_runs(&mut row, 3, 1, true);
        assert_eq!(row, vec![false, true, true, true, false, false]);
    }

    #[test]
    fn repair_fills_short_off_gap() {
        let mut row = vec![true, true, false, true, true, true];
        repair_runs(&mut row, 2, 2, true);
        assert!(row.iter().all(|&x| x));
    }

    #[test]
    fn node_order_is_best_bound() {
        let mut heap: BinaryHeap<Node> = BinaryHeap::new();
        for (k, b) in [3.0, 1.0, 2.0].into_iter().enumerate() {
            heap.push(Node {
                bound: b,
                depth: 0,
                seq: k,
                fixings: vec![],
            });
        }
        assert_eq!(heap.pop().unwrap().bound, 1.0);
        assert_eq!(heap.pop().unwrap().bound, 2.0);
    }

    #[test]
    fn gap_formula() {
        assert!((relative_gap(100.0, 99.0) - 0.01).abs() < 1e-15);
    }
}
