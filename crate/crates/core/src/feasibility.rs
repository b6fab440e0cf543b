//! AC feasibility recovery for a fixed commitment schedule.
//!
//! The AC multi-period OPF is solved in polar form (`θ`, `|V|`, `p`, `q` per
//! period) by the interior-point NLP solver. Feasibility of the result is
//! judged by [`evaluate_residuals`], which recomputes everything from complex
//! bus voltages and never touches the NLP code.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write;

use log::debug;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::formulation::{ModelIR, VarKind};
use crate::instance::UcInstance;
use crate::nlp::{mips, MipsOptions, NlpProblem, Triplets};
use crate::schedule::CommitmentSchedule;
use crate::Result;

/// Largest residual, in per-unit, for a dispatch to count as AC feasible.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcDispatch {
    /// Indexed `[t][bus]`.
    pub v: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    /// Indexed `[t][gen]`.
    pub p_g: Vec<Vec<f64>>,
    pub q_g: Vec<Vec<f64>>,
    /// Indexed `[t][line]`.
    pub p_from: Vec<Vec<f64>>,
    pub q_from: Vec<Vec<f64>>,
    pub p_to: Vec<Vec<f64>>,
    pub q_to: Vec<Vec<f64>>,
    /// Production cost plus commitment costs of the schedule.
    pub cost: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecoveryStatus {
    Feasible,
    LocalInfeasible,
}

#[derive(Debug, Clone)]
pub struct RecoveryOutcome {
    pub status: RecoveryStatus,
    /// Best point found; present even when it is not feasible.
    pub dispatch: Option<AcDispatch>,
    pub residual: f64,
    pub iterations: usize,
}

impl RecoveryOutcome {
    pub fn is_feasible(&self) -> bool {
        self.status == RecoveryStatus::Feasible
    }
}

/// Initial point for the NLP, per period.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub v: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub p_g: Vec<Vec<f64>>,
    pub q_g: Vec<Vec<f64>>,
}

impl WarmStart {
    /// Flat start: `|V| = 1`, `θ = 0`, committed units at mid-range.
    pub fn flat(inst: &UcInstance, schedule: &CommitmentSchedule) -> Self {
        let net = &inst.network;
        let h = inst.horizon;
        let mid = |lo: f64, hi: f64, on: bool| if on { 0.5 * (lo + hi) } else { 0.0 };
        WarmStart {
            v: vec![vec![1.0; net.n_buses()]; h],
            theta: vec![vec![0.0; net.n_buses()]; h],
            p_g: (0..h)
                .map(|t| {
                    net.generators.iter().enumerate().map(|(g, gen)| mid(gen.pmin, gen.pmax, schedule.is_on(g, t))).collect()
                })
                .collect(),
            q_g: (0..h)
                .map(|t| {
                    net.generators.iter().enumerate().map(|(g, gen)| mid(gen.qmin, gen.qmax, schedule.is_on(g, t))).collect()
                })
                .collect(),
        }
    }

    /// Reads a relaxation point. Voltages come from `√c_ii`; angles are
    /// propagated over a BFS tree from `θ_i − θ_j = atan2(−s_ij, c_ij)`.
    /// Models without those variables (DC) contribute their `θ` and `p`.
    pub fn from_solution(inst: &UcInstance, model: &ModelIR, x: &[f64]) -> Self {
        let net = &inst.network;
        let h = inst.horizon;
        let mut ws = WarmStart {
            v: vec![vec![1.0; net.n_buses()]; h],
            theta: vec![vec![0.0; net.n_buses()]; h],
            p_g: vec![vec![0.0; net.n_generators()]; h],
            q_g: vec![vec![0.0; net.n_generators()]; h],
        };
        let get = |k, e, t| model.var(k, e, t).map(|j| x[j]);
        for t in 0..h {
            for i in 0..net.n_buses() {
                if let Some(c) = get(VarKind::Cii, i, t) {
                    ws.v[t][i] = c.max(0.0).sqrt();
                }
                if let Some(a) = get(VarKind::Theta, i, t) {
                    ws.theta[t][i] = a;
                }
            }
            for g in 0..net.n_generators() {
                ws.p_g[t][g] = get(VarKind::Pg, g, t).unwrap_or(0.0);
                ws.q_g[t][g] = get(VarKind::Qg, g, t).unwrap_or(0.0);
            }
            if model.var(VarKind::Theta, 0, t).is_some() || model.var(VarKind::Cij, 0, t).is_none() {
                continue;
            }
            let mut seen = vec![false; net.n_buses()];
            let mut queue = VecDeque::new();
            for root in std::iter::once(net.ref_bus()).chain(0..net.n_buses()) {
                if seen[root] {
                    continue;
                }
                seen[root] = true;
                queue.push_back(root);
                while let Some(i) = queue.pop_front() {
                    for &(j, l) in net.neighbors(i) {
                        if seen[j] {
                            continue;
                        }
                        seen[j] = true;
                        let d = get(VarKind::Sij, l, t)
                            .zip(get(VarKind::Cij, l, t))
                            .map(|(s, c)| (-s).atan2(c))
                            .unwrap_or(0.0);
                        ws.theta[t][j] = if net.branches[l].from == i {
                            ws.theta[t][i] - d
                        } else {
                            ws.theta[t][i] + d
                        };
                        queue.push_back(j);
                    }
                }
            }
        }
        ws
    }
}

/// One branch flow in polar form:
/// `F = a·Vi² + b·Vj² + Vi·Vj·(α cos δ + β sin δ)`, `δ = θi − θj`.
#[derive(Clone, Copy)]
struct FlowForm {
    a: f64,
    b: f64,
    alpha: f64,
    beta: f64,
}

/// Value, gradient and Hessian of a flow with respect to `(Vi, Vj, θi, θj)`.
struct FlowEval {
    value: f64,
    grad: [f64; 4],
    hess: [[f64; 4]; 4],
}

impl FlowForm {
    fn eval(&self, vi: f64, vj: f64, ti: f64, tj: f64) -> FlowEval {
        let d = ti - tj;
        let (sn, cs) = d.sin_cos();
        let tr = self.alpha * cs + self.beta * sn;
        let tp = -self.alpha * sn + self.beta * cs;
        let value = self.a * vi * vi + self.b * vj * vj + vi * vj * tr;
        let grad = [
            2.0 * self.a * vi + vj * tr,
            2.0 * self.b * vj + vi * tr,
            vi * vj * tp,
            -vi * vj * tp,
        ];
        let vv = vi * vj;
        let hess = [
            [2.0 * self.a, tr, vj * tp, -vj * tp],
            [tr, 2.0 * self.b, vi * tp, -vi * tp],
            [vj * tp, vi * tp, -vv * tr, vv * tr],
            [-vj * tp, -vi * tp, vv * tr, -vv * tr],
        ];
        FlowEval { value, grad, hess }
    }
}

#[derive(Clone)]
struct LineForms {
    pf: FlowForm,
    qf: FlowForm,
    pt: FlowForm,
    qt: FlowForm,
}

#[derive(Clone, Copy)]
enum Ineq {
    /// `sign·(x_j − bound) ≤ 0`
    Bound { j: usize, bound: f64, sign: f64 },
    /// `p_t − p_prev − ramp ≤ 0` (or reversed for ramp-down).
    Ramp { a: usize, b: usize, limit: f64 },
    /// `sign·(θi − θj − bound) ≤ 0`
    Angle { ti: usize, tj: usize, bound: f64, sign: f64 },
    /// `P² + Q² − S² ≤ 0` at one end of a line.
    Apparent { line: usize, period: usize, to_end: bool },
}

#[derive(Clone, Copy)]
enum Eq {
    Active(usize, usize),
    Reactive(usize, usize),
    /// `x_j = value`
    Fix(usize, f64),
}

/// The polar AC multi-period dispatch problem for one schedule.
struct AcProblem<'a> {
    inst: &'a UcInstance,
    forms: Vec<LineForms>,
    stride: usize,
    eqs: Vec<Eq>,
    ineqs: Vec<Ineq>,
    scale: f64,
}

impl<'a> AcProblem<'a> {
    fn new(inst: &'a UcInstance, schedule: &CommitmentSchedule) -> Self {
        let net = &inst.network;
        let (nb, ng) = (net.n_buses(), net.n_generators());
        let forms = net
            .branches
            .iter()
            .map(|br| {
                let y = &br.y;
                LineForms {
                    pf: FlowForm { a: y.gff, b: 0.0, alpha: y.gft, beta: y.bft },
                    qf: FlowForm { a: -y.bff, b: 0.0, alpha: -y.bft, beta: y.gft },
                    pt: FlowForm { a: 0.0, b: y.gtt, alpha: y.gtf, beta: -y.btf },
                    qt: FlowForm { a: 0.0, b: -y.btt, alpha: -y.btf, beta: -y.gtf },
                }
            })
            .collect();
        let stride = 2 * nb + 2 * ng;
        let mut p = AcProblem {
            inst,
            forms,
            stride,
            eqs: Vec::new(),
            ineqs: Vec::new(),
            scale: 1.0,
        };
        let h = inst.horizon;
        for t in 0..h {
            for i in 0..nb {
                p.eqs.push(Eq::Active(i, t));
                p.eqs.push(Eq::Reactive(i, t));
            }
            p.eqs.push(Eq::Fix(p.theta(t, net.ref_bus()), 0.0));
            for (i, bus) in net.buses.iter().enumerate() {
                p.push_bounds(p.vmag(t, i), bus.vmin, bus.vmax);
            }
            for (g, gen) in net.generators.iter().enumerate() {
                let on = schedule.is_on(g, t);
                for (j, lo, hi) in [(p.pg(t, g), gen.pmin, gen.pmax), (p.qg(t, g), gen.qmin, gen.qmax)] {
                    if on {
                        p.push_bounds(j, lo, hi);
                    } else {
                        p.eqs.push(Eq::Fix(j, 0.0));
                    }
                }
            }
            for (l, br) in net.branches.iter().enumerate() {
                let (ti, tj) = (p.theta(t, br.from), p.theta(t, br.to));
                if br.angle_max.is_finite() {
                    p.ineqs.push(Ineq::Angle { ti, tj, bound: br.angle_max, sign: 1.0 });
                }
                if br.angle_min.is_finite() {
                    p.ineqs.push(Ineq::Angle { ti, tj, bound: br.angle_min, sign: -1.0 });
                }
                if br.has_limit() {
                    p.ineqs.push(Ineq::Apparent { line: l, period: t, to_end: false });
                    p.ineqs.push(Ineq::Apparent { line: l, period: t, to_end: true });
                }
            }
        }
        if h > 1 {
            for (g, gp) in inst.gen_params.iter().enumerate() {
                for t in 0..h {
                    let (a, b) = (p.pg(t, g), p.pg(inst.prev(t), g));
                    if gp.ramp_up.is_finite() {
                        p.ineqs.push(Ineq::Ramp { a, b, limit: gp.ramp_up });
                    }
                    if gp.ramp_down.is_finite() {
                        p.ineqs.push(Ineq::Ramp { a: b, b: a, limit: gp.ramp_down });
                    }
                }
            }
        }
        let slope = net
            .generators
            .iter()
            .map(|g| (g.cost_linear + 2.0 * g.cost_quadratic * g.pmax.abs()).abs())
            .fold(0.0f64, f64::max);
        p.scale = 1.0 / slope.max(1.0);
        p
    }

    fn push_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        if hi - lo < 1e-9 {
            self.eqs.push(Eq::Fix(j, 0.5 * (lo + hi)));
            return;
        }
        if lo.is_finite() {
            self.ineqs.push(Ineq::Bound { j, bound: lo, sign: -1.0 });
        }
        if hi.is_finite() {
            self.ineqs.push(Ineq::Bound { j, bound: hi, sign: 1.0 });
        }
    }

    fn nb(&self) -> usize {
        self.inst.network.n_buses()
    }

    fn theta(&self, t: usize, i: usize) -> usize {
        t * self.stride + i
    }

    fn vmag(&self, t: usize, i: usize) -> usize {
        t * self.stride + self.nb() + i
    }

    fn pg(&self, t: usize, g: usize) -> usize {
        t * self.stride + 2 * self.nb() + g
    }

    fn qg(&self, t: usize, g: usize) -> usize {
        t * self.stride + 2 * self.nb() + self.inst.network.n_generators() + g
    }

    /// Variable indices `(Vi, Vj, θi, θj)` of a line in period `t`.
    fn line_vars(&self, l: usize, t: usize) -> [usize; 4] {
        let br = &self.inst.network.branches[l];
        [self.vmag(t, br.from), self.vmag(t, br.to), self.theta(t, br.from), self.theta(t, br.to)]
    }

    fn flow(&self, x: &[f64], l: usize, t: usize, form: &FlowForm) -> FlowEval {
        let [vi, vj, ti, tj] = self.line_vars(l, t);
        form.eval(x[vi], x[vj], x[ti], x[tj])
    }

    fn pack(&self, ws: &WarmStart) -> Vec<f64> {
        let net = &self.inst.network;
        let mut x = vec![0.0; self.n()];
        for t in 0..self.inst.horizon {
            for i in 0..net.n_buses() {
                x[self.theta(t, i)] = ws.theta[t][i];
                let b = &net.buses[i];
                x[self.vmag(t, i)] = ws.v[t][i].clamp(b.vmin, b.vmax);
            }
            for g in 0..net.n_generators() {
                x[self.pg(t, g)] = ws.p_g[t][g];
                x[self.qg(t, g)] = ws.q_g[t][g];
            }
        }
        x
    }

    fn unpack(&self, x: &[f64], schedule: &CommitmentSchedule) -> AcDispatch {
        let net = &self.inst.network;
        let h = self.inst.horizon;
        let per_t = |f: &dyn Fn(usize) -> Vec<f64>| (0..h).map(f).collect::<Vec<_>>();
        let line = |pick: fn(&LineForms) -> &FlowForm| {
            per_t(&|t| (0..net.n_branches()).map(|l| self.flow(x, l, t, pick(&self.forms[l])).value).collect())
        };
        let p_g = per_t(&|t| (0..net.n_generators()).map(|g| x[self.pg(t, g)]).collect());
        let mut cost = schedule.fixed_cost(self.inst);
        for row in &p_g {
            for (g, gen) in net.generators.iter().enumerate() {
                cost += gen.cost(row[g]);
            }
        }
        AcDispatch {
            v: per_t(&|t| (0..net.n_buses()).map(|i| x[self.vmag(t, i)]).collect()),
            theta: per_t(&|t| (0..net.n_buses()).map(|i| x[self.theta(t, i)]).collect()),
            q_g: per_t(&|t| (0..net.n_generators()).map(|g| x[self.qg(t, g)]).collect()),
            p_g,
            p_from: line(|f| &f.pf),
            q_from: line(|f| &f.qf),
            p_to: line(|f| &f.pt),
            q_to: line(|f| &f.qt),
            cost,
            max_residual: f64::NAN,
        }
    }

    /// Flows leaving bus `i` through its incident lines, with the forms of
    /// the matching end.
    fn incident(&self, i: usize) -> impl Iterator<Item = (usize, &LineForms, bool)> + '_ {
        let net = &self.inst.network;
        net.neighbors(i).iter().map(move |&(_, l)| (l, &self.forms[l], net.branches[l].from == i))
    }
}

impl NlpProblem for AcProblem<'_> {
    fn n(&self) -> usize {
        self.stride * self.inst.horizon
    }

    fn n_eq(&self) -> usize {
        self.eqs.len()
    }

    fn n_ineq(&self) -> usize {
        self.ineqs.len()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let net = &self.inst.network;
        let mut f = 0.0;
        for t in 0..self.inst.horizon {
            for (g, gen) in net.generators.iter().enumerate() {
                let p = x[self.pg(t, g)];
                f += gen.cost_quadratic * p * p + gen.cost_linear * p;
            }
        }
        f * self.scale
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..self.inst.horizon {
            for (g, gen) in self.inst.network.generators.iter().enumerate() {
                let j = self.pg(t, g);
                out[j] = self.scale * (2.0 * gen.cost_quadratic * x[j] + gen.cost_linear);
            }
        }
    }

    fn eq(&self, x: &[f64], out: &mut [f64]) {
        let net = &self.inst.network;
        let at = net.generators_at();
        for (k, e) in self.eqs.iter().enumerate() {
            out[k] = match *e {
                Eq::Active(i, t) => {
                    let vi = x[self.vmag(t, i)];
                    let mut r: f64 = at[i].iter().map(|&g| x[self.pg(t, g)]).sum();
                    r -= self.inst.pd[i][t] + net.buses[i].gs * vi * vi;
                    for (l, f, from) in self.incident(i) {
                        r -= self.flow(x, l, t, if from { &f.pf } else { &f.pt }).value;
                    }
                    r
                }
                Eq::Reactive(i, t) => {
                    let vi = x[self.vmag(t, i)];
                    let mut r: f64 = at[i].iter().map(|&g| x[self.qg(t, g)]).sum();
                    r -= self.inst.qd[i][t] - net.buses[i].bs * vi * vi;
                    for (l, f, from) in self.incident(i) {
                        r -= self.flow(x, l, t, if from { &f.qf } else { &f.qt }).value;
                    }
                    r
                }
                Eq::Fix(j, v) => x[j] - v,
            };
        }
    }

    fn eq_jacobian(&self, x: &[f64]) -> Triplets {
        let net = &self.inst.network;
        let at = net.generators_at();
        let mut out = Vec::new();
        for (k, e) in self.eqs.iter().enumerate() {
            match *e {
                Eq::Active(i, t) | Eq::Reactive(i, t) => {
                    let active = matches!(e, Eq::Active(..));
                    let vi = x[self.vmag(t, i)];
                    for &g in &at[i] {
                        out.push((k, if active { self.pg(t, g) } else { self.qg(t, g) }, 1.0));
                    }
                    let shunt = if active { -2.0 * net.buses[i].gs } else { 2.0 * net.buses[i].bs };
                    out.push((k, self.vmag(t, i), shunt * vi));
                    for (l, f, from) in self.incident(i) {
                        let form = match (active, from) {
                            (true, true) => &f.pf,
                            (true, false) => &f.pt,
                            (false, true) => &f.qf,
                            (false, false) => &f.qt,
                        };
                        let ev = self.flow(x, l, t, form);
                        for (j, d) in self.line_vars(l, t).into_iter().zip(ev.grad) {
                            out.push((k, j, -d));
                        }
                    }
                }
                Eq::Fix(j, _) => out.push((k, j, 1.0)),
            }
        }
        out
    }

    fn ineq(&self, x: &[f64], out: &mut [f64]) {
        for (k, c) in self.ineqs.iter().enumerate() {
            out[k] = match *c {
                Ineq::Bound { j, bound, sign } => sign * (x[j] - bound),
                Ineq::Ramp { a, b, limit } => x[a] - x[b] - limit,
                Ineq::Angle { ti, tj, bound, sign } => sign * (x[ti] - x[tj] - bound),
                Ineq::Apparent { line, period, to_end } => {
                    let f = &self.forms[line];
                    let (fp, fq) = if to_end { (&f.pt, &f.qt) } else { (&f.pf, &f.qf) };
                    let p = self.flow(x, line, period, fp).value;
                    let q = self.flow(x, line, period, fq).value;
                    let s = self.inst.network.branches[line].s_max;
                    p * p + q * q - s * s
                }
            };
        }
    }

    fn ineq_jacobian(&self, x: &[f64]) -> Triplets {
        let mut out = Vec::new();
        for (k, c) in self.ineqs.iter().enumerate() {
            match *c {
                Ineq::Bound { j, sign, .. } => out.push((k, j, sign)),
                Ineq::Ramp { a, b, .. } => {
                    out.push((k, a, 1.0));
                    out.push((k, b, -1.0));
                }
                Ineq::Angle { ti, tj, sign, .. } => {
                    out.push((k, ti, sign));
                    out.push((k, tj, -sign));
                }
                Ineq::Apparent { line, period, to_end } => {
                    let f = &self.forms[line];
                    let (fp, fq) = if to_end { (&f.pt, &f.qt) } else { (&f.pf, &f.qf) };
                    let ep = self.flow(x, line, period, fp);
                    let eq = self.flow(x, line, period, fq);
                    for (a, j) in self.line_vars(line, period).into_iter().enumerate() {
                        out.push((k, j, 2.0 * (ep.value * ep.grad[a] + eq.value * eq.grad[a])));
                    }
                }
            }
        }
        out
    }

    fn hessian(&self, x: &[f64], sigma: f64, lambda: &[f64], mu: &[f64]) -> Triplets {
        let net = &self.inst.network;
        let mut out = Vec::new();
        for t in 0..self.inst.horizon {
            for (g, gen) in net.generators.iter().enumerate() {
                let j = self.pg(t, g);
                out.push((j, j, sigma * self.scale * 2.0 * gen.cost_quadratic));
            }
        }
        let push_flow = |out: &mut Triplets, vars: [usize; 4], hess: &[[f64; 4]; 4], w: f64| {
            for a in 0..4 {
                for b in a..4 {
                    out.push((vars[a], vars[b], w * hess[a][b]));
                }
            }
        };
        for (k, e) in self.eqs.iter().enumerate() {
            let lam = lambda[k];
            if lam == 0.0 {
                continue;
            }
            match *e {
                Eq::Active(i, t) | Eq::Reactive(i, t) => {
                    let active = matches!(e, Eq::Active(..));
                    let shunt = if active { -2.0 * net.buses[i].gs } else { 2.0 * net.buses[i].bs };
                    let vi = self.vmag(t, i);
                    out.push((vi, vi, lam * shunt));
                    for (l, f, from) in self.incident(i) {
                        let form = match (active, from) {
                            (true, true) => &f.pf,
                            (true, false) => &f.pt,
                            (false, true) => &f.qf,
                            (false, false) => &f.qt,
                        };
                        let ev = self.flow(x, l, t, form);
                        push_flow(&mut out, self.line_vars(l, t), &ev.hess, -lam);
                    }
                }
                Eq::Fix(..) => {}
            }
        }
        for (k, c) in self.ineqs.iter().enumerate() {
            if let Ineq::Apparent { line, period, to_end } = *c {
                let m = mu[k];
                let f = &self.forms[line];
                let (fp, fq) = if to_end { (&f.pt, &f.qt) } else { (&f.pf, &f.qf) };
                let vars = self.line_vars(line, period);
                for ev in [self.flow(x, line, period, fp), self.flow(x, line, period, fq)] {
                    let mut hh = [[0.0; 4]; 4];
                    for a in 0..4 {
                        for b in 0..4 {
                            hh[a][b] = 2.0 * (ev.grad[a] * ev.grad[b] + ev.value * ev.hess[a][b]);
                        }
                    }
                    push_flow(&mut out, vars, &hh, m);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RecoveryOptions {
    pub nlp: MipsOptions,
    /// Retry from a flat start if the warm start fails.
    pub flat_fallback: bool,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions {
            nlp: MipsOptions::default(),
            flat_fallback: true,
        }
    }
}

/// Solves the AC dispatch for `schedule` and certifies the result with
/// [`evaluate_residuals`].
pub fn recover_dispatch(
    inst: &UcInstance,
    schedule: &CommitmentSchedule,
    warm_start: Option<&WarmStart>,
) -> Result<RecoveryOutcome> {
    recover_dispatch_with(inst, schedule, warm_start, &RecoveryOptions::default())
}

pub fn recover_dispatch_with(
    inst: &UcInstance,
    schedule: &CommitmentSchedule,
    warm_start: Option<&WarmStart>,
    opts: &RecoveryOptions,
) -> Result<RecoveryOutcome> {
    schedule.check(inst)?;
    let prob = AcProblem::new(inst, schedule);
    let flat = WarmStart::flat(inst, schedule);
    let mut starts = Vec::new();
    if let Some(ws) = warm_start {
        starts.push(ws);
    }
    if warm_start.is_none() || opts.flat_fallback {
        starts.push(&flat);
    }
    let mut best: Option<RecoveryOutcome> = None;
    for (attempt, ws) in starts.into_iter().enumerate() {
        let x0 = prob.pack(ws);
        let res = mips(&prob, &x0, &opts.nlp);
        let mut d = prob.unpack(&res.x, schedule);
        let report = evaluate_residuals(inst, schedule, &d);
        d.max_residual = report.max;
        debug!(
            "ac recovery attempt {attempt}: converged={} iters={} residual={:.3e} cost={:.4}",
            res.converged, res.iterations, report.max, d.cost
        );
        let status = if report.max <= FEAS_TOL && report.max.is_finite() {
            RecoveryStatus::Feasible
        } else {
            RecoveryStatus::LocalInfeasible
        };
        let outcome = RecoveryOutcome {
            status,
            residual: report.max,
            dispatch: Some(d),
            iterations: res.iterations,
        };
        let better = match &best {
            None => true,
            Some(b) => !b.is_feasible() && (outcome.is_feasible() || outcome.residual < b.residual),
        };
        if better {
            best = Some(outcome);
        }
        if best.as_ref().is_some_and(|b| b.is_feasible()) {
            break;
        }
    }
    Ok(best.expect("at least one start"))
}

/// Largest violation per constraint family, in per-unit (radians for
/// angles).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub per_family: BTreeMap<String, f64>,
    pub max: f64,
}

impl ResidualReport {
    fn record(&mut self, family: &str, r: f64) {
        let r = if r.is_nan() { f64::INFINITY } else { r.max(0.0) };
        let e = self.per_family.entry(family.to_string()).or_insert(0.0);
        *e = e.max(r);
        self.max = self.max.max(r);
    }
}

/// Checks a dispatch against the AC unit commitment constraints for the
/// given schedule, recomputing flows as `S = V·conj(I)` from the complex
/// voltages. Reported flows must match the recomputed ones.
pub fn evaluate_residuals(inst: &UcInstance, schedule: &CommitmentSchedule, d: &AcDispatch) -> ResidualReport {
    let net = &inst.network;
    let mut rep = ResidualReport::default();
    let shape_ok = d.v.len() == inst.horizon
        && d.theta.len() == inst.horizon
        && d.p_g.len() == inst.horizon
        && d.q_g.len() == inst.horizon
        && d.p_from.len() == inst.horizon;
    if !shape_ok {
        rep.record("shape", f64::INFINITY);
        return rep;
    }
    for t in 0..inst.horizon {
        let volts: Vec<Complex64> = (0..net.n_buses()).map(|i| Complex64::from_polar(d.v[t][i], d.theta[t][i])).collect();
        let mut inj = vec![Complex64::new(0.0, 0.0); net.n_buses()];
        for (l, br) in net.branches.iter().enumerate() {
            let y = br.y.matrix();
            let (vf, vt) = (volts[br.from], volts[br.to]);
            let i_f = y[0][0] * vf + y[0][1] * vt;
            let i_t = y[1][0] * vf + y[1][1] * vt;
            let s_f = vf * i_f.conj();
            let s_t = vt * i_t.conj();
            inj[br.from] += s_f;
            inj[br.to] += s_t;
            rep.record("flow_definition", (s_f.re - d.p_from[t][l]).abs());
            rep.record("flow_definition", (s_f.im - d.q_from[t][l]).abs());
            rep.record("flow_definition", (s_t.re - d.p_to[t][l]).abs());
            rep.record("flow_definition", (s_t.im - d.q_to[t][l]).abs());
            if br.has_limit() {
                rep.record("apparent_limit", s_f.norm() - br.s_max);
                rep.record("apparent_limit", s_t.norm() - br.s_max);
            }
            let diff = d.theta[t][br.from] - d.theta[t][br.to];
            rep.record("angle_difference", diff - br.angle_max);
            rep.record("angle_difference", br.angle_min - diff);
        }
        for (i, bus) in net.buses.iter().enumerate() {
            let vsq = volts[i].norm_sqr();
            let shunt = Complex64::new(bus.gs, -bus.bs) * vsq;
            let mut gen = Complex64::new(0.0, 0.0);
            for (g, gn) in net.generators.iter().enumerate() {
                if gn.bus == i {
                    gen += Complex64::new(d.p_g[t][g], d.q_g[t][g]);
                }
            }
            let mismatch = gen - Complex64::new(inst.pd[i][t], inst.qd[i][t]) - shunt - inj[i];
            rep.record("active_balance", mismatch.re.abs());
            rep.record("reactive_balance", mismatch.im.abs());
            rep.record("voltage_bounds", bus.vmin - d.v[t][i]);
            rep.record("voltage_bounds", d.v[t][i] - bus.vmax);
        }
        if d.theta[t][net.ref_bus()].abs() > 0.0 {
            rep.record("reference_angle", d.theta[t][net.ref_bus()].abs());
        }
        for (g, gn) in net.generators.iter().enumerate() {
            let on = if schedule.is_on(g, t) { 1.0 } else { 0.0 };
            let (p, q) = (d.p_g[t][g], d.q_g[t][g]);
            rep.record("active_generation", gn.pmin * on - p);
            rep.record("active_generation", p - gn.pmax * on);
            rep.record("reactive_generation", gn.qmin * on - q);
            rep.record("reactive_generation", q - gn.qmax * on);
        }
    }
    if inst.horizon > 1 {
        for (g, gp) in inst.gen_params.iter().enumerate() {
            for t in 0..inst.horizon {
                let step = d.p_g[t][g] - d.p_g[inst.prev(t)][g];
                rep.record("ramp", step - gp.ramp_up);
                rep.record("ramp", -step - gp.ramp_down);
            }
        }
    }
    rep
}

/// Text dump of a dispatch: one `bus`, `gen` or `line` record per line.
pub fn dispatch_to_text(inst: &UcInstance, d: &AcDispatch) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# dispatch {} cost {:.6} max_residual {:.3e}", inst.name, d.cost, d.max_residual);
    for t in 0..inst.horizon {
        for i in 0..inst.network.n_buses() {
            let _ = writeln!(out, "bus t={t} i={i} v={:.8} theta={:.8}", d.v[t][i], d.theta[t][i]);
        }
        for g in 0..inst.network.n_generators() {
            let _ = writeln!(out, "gen t={t} g={g} p={:.8} q={:.8}", d.p_g[t][g], d.q_g[t][g]);
        }
        for l in 0..inst.network.n_branches() {
            let _ = writeln!(
                out,
                "line t={t} l={l} pf={:.8} qf={:.8} pt={:.8} qt={:.8}",
                d.p_from[t][l], d.q_from[t][l], d.p_to[t][l], d.q_to[t][l]
            );
        }
    }
    out
}
