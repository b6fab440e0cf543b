use std::f64::INFINITY;

use serde::{Deserialize, Serialize};

use super::{
    Integrality, LinExpr, LinearRow, ModelIR, RotatedSocRow, RowInfo, Sense, SocRow, Tag, VarKind,
};
use crate::instance::UcInstance;
use crate::schedule::CommitmentSchedule;

/// One consistency row linking a line's (c, s) pair to its end voltages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearRow {
    pub tag: Tag,
    pub line: usize,
    pub period: usize,
    pub cii: usize,
    pub cjj: usize,
    pub c: usize,
    pub s: usize,
    pub theta_i: usize,
    pub theta_j: usize,
}

impl NonlinearRow {
    /// Equality residual at `x`.
    ///
    /// `c² + s² − c_ii·c_jj` for the cosine row and
    /// `s·cos(θj−θi) − c·sin(θj−θi)` for the angle row. The latter vanishes
    /// exactly when `s = tan(θj−θi)·c` but has no poles.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let (c, s) = (x[self.c], x[self.s]);
        match self.tag {
            Tag::CosineConsistency => c * c + s * s - x[self.cii] * x[self.cjj],
            _ => {
                let d = x[self.theta_j] - x[self.theta_i];
                s * d.cos() - c * d.sin()
            }
        }
    }
}

/// A cone relaxation plus the nonlinear rows that make it exact, and the
/// angle-difference limits on the voltage angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpModel {
    pub relaxation: ModelIR,
    pub nonlinear: Vec<NonlinearRow>,
    pub angle_rows: Vec<LinearRow>,
}

impl NlpModel {
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = self.relaxation.max_violation(x);
        for r in &self.nonlinear {
            worst = worst.max(r.residual(x).abs());
        }
        for r in &self.angle_rows {
            worst = worst.max(r.violation(x));
        }
        worst
    }

    pub fn tags(&self) -> std::collections::BTreeSet<Tag> {
        let mut t = self.relaxation.tags();
        t.extend(self.nonlinear.iter().map(|r| r.tag));
        t.extend(self.angle_rows.iter().map(|r| r.info.tag));
        t
    }
}

#[derive(Clone, Copy)]
enum Grid {
    Ac { nlp: bool },
    Dc,
}

#[derive(Clone, Copy)]
enum Commitment<'a> {
    Fixed(&'a CommitmentSchedule),
    AllOn,
    Binary,
}

impl Commitment<'_> {
    fn on(&self, g: usize, t: usize) -> f64 {
        match self {
            Commitment::Fixed(s) => s.u[g][t] as u8 as f64,
            _ => 1.0,
        }
    }
}

/// Multiperiod AC OPF under a fixed schedule (all units on by default), with
/// the consistency rows that make the c-s-θ model exact.
pub fn build_mopf(inst: &UcInstance, schedule: Option<&CommitmentSchedule>) -> NlpModel {
    assemble(inst, Grid::Ac { nlp: true }, commitment(schedule), true, "mopf")
}

/// Cone relaxation of [`build_mopf`]: consistency replaced by
/// `c² + s² ≤ c_ii·c_jj`, no angle variables.
pub fn build_socp(inst: &UcInstance, schedule: Option<&CommitmentSchedule>) -> ModelIR {
    assemble(inst, Grid::Ac { nlp: false }, commitment(schedule), true, "socp").relaxation
}

/// Lossless DC dispatch under a fixed schedule (all units on by default).
pub fn build_dc_mopf(inst: &UcInstance, schedule: Option<&CommitmentSchedule>) -> ModelIR {
    assemble(inst, Grid::Dc, commitment(schedule), true, "dc_mopf").relaxation
}

/// Unit commitment with exact AC power flow.
pub fn build_uc_minlp(inst: &UcInstance) -> NlpModel {
    assemble(inst, Grid::Ac { nlp: true }, Commitment::Binary, true, "uc_minlp")
}

/// Mixed-integer cone relaxation of [`build_uc_minlp`].
pub fn build_misocp(inst: &UcInstance) -> ModelIR {
    assemble(inst, Grid::Ac { nlp: false }, Commitment::Binary, true, "misocp").relaxation
}

/// Unit commitment on the DC network model. Ramping limits are not part of
/// this model.
pub fn build_dc_uc(inst: &UcInstance) -> ModelIR {
    assemble(inst, Grid::Dc, Commitment::Binary, false, "dc_uc").relaxation
}

fn commitment(schedule: Option<&CommitmentSchedule>) -> Commitment<'_> {
    match schedule {
        Some(s) => Commitment::Fixed(s),
        None => Commitment::AllOn,
    }
}

fn info(tag: Tag, entity: usize, period: usize) -> RowInfo {
    RowInfo {
        tag,
        entity,
        period,
    }
}

fn assemble(
    inst: &UcInstance,
    grid: Grid,
    commit: Commitment,
    ramp: bool,
    kind: &str,
) -> NlpModel {
    let net = &inst.network;
    let h = inst.horizon;
    let mut m = ModelIR::new(format!("{}:{kind}", inst.name), h);
    let mut nonlinear = Vec::new();
    let mut angle_rows = Vec::new();
    let c = Integrality::Continuous;
    let at = net.generators_at();
    let binary = matches!(commit, Commitment::Binary);

    if binary {
        for g in 0..net.n_generators() {
            for t in 0..h {
                m.add_var(VarKind::U, g, t, 0.0, 1.0, Integrality::Binary);
                m.add_var(VarKind::V, g, t, 0.0, 1.0, Integrality::Binary);
                m.add_var(VarKind::W, g, t, 0.0, 1.0, Integrality::Binary);
            }
        }
    }

    for t in 0..h {
        // Generators.
        for (g, gen) in net.generators.iter().enumerate() {
            let p = m.add_var(VarKind::Pg, g, t, gen.pmin.min(0.0), gen.pmax.max(0.0), c);
            let q = match grid {
                Grid::Ac { .. } => {
                    Some(m.add_var(VarKind::Qg, g, t, gen.qmin.min(0.0), gen.qmax.max(0.0), c))
                }
                Grid::Dc => None,
            };
            let mut limits = vec![(p, gen.pmin, gen.pmax, Tag::ActiveGeneration)];
            if let Some(q) = q {
                limits.push((q, gen.qmin, gen.qmax, Tag::ReactiveGeneration));
            }
            for (x, lo, hi, tag) in limits {
                if binary {
                    let u = m.v(VarKind::U, g, t);
                    m.add_row(vec![(x, 1.0), (u, -hi)], Sense::Le, 0.0, info(tag, g, t));
                    m.add_row(vec![(x, 1.0), (u, -lo)], Sense::Ge, 0.0, info(tag, g, t));
                } else {
                    let on = commit.on(g, t);
                    m.add_row(vec![(x, 1.0)], Sense::Le, hi * on, info(tag, g, t));
                    m.add_row(vec![(x, 1.0)], Sense::Ge, lo * on, info(tag, g, t));
                }
            }
            // Production cost C(p) for every unit and period. The quadratic
            // part goes through an epigraph variable, in perspective form
            // c2·p² ≤ e·u when u is a decision.
            m.objective.terms.push((p, gen.cost_linear));
            m.objective.constant += gen.cost_constant;
            if gen.cost_quadratic > 0.0 {
                let e = m.add_var(VarKind::Aux, g, t, 0.0, INFINITY, c);
                let y = if binary { LinExpr::var(m.v(VarKind::U, g, t)) } else { LinExpr::constant(1.0) };
                m.rotated.push(RotatedSocRow {
                    lhs: vec![LinExpr::scaled_var(p, gen.cost_quadratic.sqrt())],
                    x: LinExpr::var(e),
                    y,
                    info: info(Tag::CostEpigraph, g, t),
                });
                m.objective.terms.push((e, 1.0));
            }
        }

        match grid {
            Grid::Ac { nlp } => {
                ac_network(inst, &mut m, t, nlp, &mut nonlinear, &mut angle_rows, &at)
            }
            Grid::Dc => dc_network(inst, &mut m, t, &at),
        }
    }

    if ramp && h > 1 {
        for (g, p) in inst.gen_params.iter().enumerate() {
            for t in 0..h {
                let (pt, pp) = (m.v(VarKind::Pg, g, t), m.v(VarKind::Pg, g, inst.prev(t)));
                m.add_row(vec![(pt, 1.0), (pp, -1.0)], Sense::Le, p.ramp_up, info(Tag::RampUp, g, t));
                m.add_row(vec![(pp, 1.0), (pt, -1.0)], Sense::Le, p.ramp_down, info(Tag::RampDown, g, t));
            }
        }
    }

    if binary {
        commitment_rows(inst, &mut m);
    }

    NlpModel {
        relaxation: m,
        nonlinear,
        angle_rows,
    }
}

fn ac_network(
    inst: &UcInstance,
    m: &mut ModelIR,
    t: usize,
    nlp: bool,
    nonlinear: &mut Vec<NonlinearRow>,
    angle_rows: &mut Vec<LinearRow>,
    at: &[Vec<usize>],
) {
    let net = &inst.network;
    let c = Integrality::Continuous;
    for (i, bus) in net.buses.iter().enumerate() {
        m.add_var(VarKind::Cii, i, t, bus.vmin * bus.vmin, bus.vmax * bus.vmax, c);
        if nlp {
            let (lo, hi) = if i == net.ref_bus() { (0.0, 0.0) } else { (-INFINITY, INFINITY) };
            m.add_var(VarKind::Theta, i, t, lo, hi, c);
        }
    }
    for (l, br) in net.branches.iter().enumerate() {
        let (bi, bj) = (&net.buses[br.from], &net.buses[br.to]);
        let rmin = bi.vmin * bj.vmin;
        let rmax = bi.vmax * bj.vmax;
        let wide = br.angle_max.abs().max(br.angle_min.abs());
        let c_lo = rmin * wide.cos();
        let cv = m.add_var(VarKind::Cij, l, t, c_lo, rmax, c);
        // s = −|Vi||Vj| sin(θi − θj) with θi − θj ∈ [angle_min, angle_max].
        let sv = m.add_var(
            VarKind::Sij,
            l,
            t,
            -rmax * br.angle_max.sin(),
            -rmax * br.angle_min.sin(),
            c,
        );
        let lim = if br.has_limit() { br.s_max } else { INFINITY };
        let pf = m.add_var(VarKind::Pfwd, l, t, -lim, lim, c);
        let pt = m.add_var(VarKind::Pbwd, l, t, -lim, lim, c);
        let qf = m.add_var(VarKind::Qfwd, l, t, -lim, lim, c);
        let qt = m.add_var(VarKind::Qbwd, l, t, -lim, lim, c);
        let (cii, cjj) = (m.v(VarKind::Cii, br.from, t), m.v(VarKind::Cii, br.to, t));
        let y = &br.y;
        let eq = |m: &mut ModelIR, terms: Vec<(usize, f64)>, tag| {
            m.add_row(terms, Sense::Eq, 0.0, info(tag, l, t))
        };
        eq(m, vec![(pf, 1.0), (cii, -y.gff), (cv, -y.gft), (sv, y.bft)], Tag::ActiveFlowFrom);
        eq(m, vec![(pt, 1.0), (cjj, -y.gtt), (cv, -y.gtf), (sv, -y.btf)], Tag::ActiveFlowTo);
        eq(m, vec![(qf, 1.0), (cii, y.bff), (cv, y.bft), (sv, y.gft)], Tag::ReactiveFlowFrom);
        eq(m, vec![(qt, 1.0), (cjj, y.btt), (cv, y.btf), (sv, -y.gtf)], Tag::ReactiveFlowTo);
        if br.has_limit() {
            for (a, b, tag) in [(pf, qf, Tag::ApparentFrom), (pt, qt, Tag::ApparentTo)] {
                m.socs.push(SocRow {
                    lhs: vec![LinExpr::var(a), LinExpr::var(b)],
                    rhs: LinExpr::constant(br.s_max),
                    info: info(tag, l, t),
                });
            }
        }
        m.rotated.push(RotatedSocRow {
            lhs: vec![LinExpr::var(cv), LinExpr::var(sv)],
            x: LinExpr::var(cii),
            y: LinExpr::var(cjj),
            info: info(Tag::ConeRelaxation, l, t),
        });
        if nlp {
            let (ti, tj) = (m.v(VarKind::Theta, br.from, t), m.v(VarKind::Theta, br.to, t));
            for tag in [Tag::CosineConsistency, Tag::AngleConsistency] {
                nonlinear.push(NonlinearRow {
                    tag,
                    line: l,
                    period: t,
                    cii,
                    cjj,
                    c: cv,
                    s: sv,
                    theta_i: ti,
                    theta_j: tj,
                });
            }
            for (sense, rhs) in [(Sense::Le, br.angle_max), (Sense::Ge, br.angle_min)] {
                angle_rows.push(LinearRow {
                    terms: vec![(ti, 1.0), (tj, -1.0)],
                    sense,
                    rhs,
                    info: info(Tag::AngleDifference, l, t),
                });
            }
        }
    }
    for (i, bus) in net.buses.iter().enumerate() {
        let cii = m.v(VarKind::Cii, i, t);
        let mut p_terms: Vec<(usize, f64)> = at[i].iter().map(|&g| (m.v(VarKind::Pg, g, t), 1.0)).collect();
        let mut q_terms: Vec<(usize, f64)> = at[i].iter().map(|&g| (m.v(VarKind::Qg, g, t), 1.0)).collect();
        p_terms.push((cii, -bus.gs));
        q_terms.push((cii, bus.bs));
        for &(_, l) in net.neighbors(i) {
            let from = net.branches[l].from == i;
            let (pk, qk) = if from { (VarKind::Pfwd, VarKind::Qfwd) } else { (VarKind::Pbwd, VarKind::Qbwd) };
            p_terms.push((m.v(pk, l, t), -1.0));
            q_terms.push((m.v(qk, l, t), -1.0));
        }
        m.add_row(p_terms, Sense::Eq, inst.pd[i][t], info(Tag::ActiveBalance, i, t));
        m.add_row(q_terms, Sense::Eq, inst.qd[i][t], info(Tag::ReactiveBalance, i, t));
    }
}

fn dc_network(inst: &UcInstance, m: &mut ModelIR, t: usize, at: &[Vec<usize>]) {
    let net = &inst.network;
    let c = Integrality::Continuous;
    for i in 0..net.n_buses() {
        let (lo, hi) = if i == net.ref_bus() { (0.0, 0.0) } else { (-INFINITY, INFINITY) };
        m.add_var(VarKind::Theta, i, t, lo, hi, c);
    }
    for (l, br) in net.branches.iter().enumerate() {
        let f = m.add_var(VarKind::Fdc, l, t, -INFINITY, INFINITY, c);
        let b = 1.0 / (br.x * br.tap);
        let (ti, tj) = (m.v(VarKind::Theta, br.from, t), m.v(VarKind::Theta, br.to, t));
        m.add_row(
            vec![(f, 1.0), (ti, -b), (tj, b)],
            Sense::Eq,
            -b * br.shift,
            info(Tag::DcFlow, l, t),
        );
        if br.has_limit() {
            m.add_row(vec![(f, 1.0)], Sense::Le, br.s_max, info(Tag::DcThermal, l, t));
            m.add_row(vec![(f, 1.0)], Sense::Ge, -br.s_max, info(Tag::DcThermal, l, t));
        }
    }
    for i in 0..net.n_buses() {
        let mut terms: Vec<(usize, f64)> = at[i].iter().map(|&g| (m.v(VarKind::Pg, g, t), 1.0)).collect();
        for &(_, l) in net.neighbors(i) {
            let sign = if net.branches[l].from == i { -1.0 } else { 1.0 };
            terms.push((m.v(VarKind::Fdc, l, t), sign));
        }
        m.add_row(terms, Sense::Eq, inst.pd[i][t], info(Tag::DcBalance, i, t));
    }
}

fn commitment_rows(inst: &UcInstance, m: &mut ModelIR) {
    let h = inst.horizon;
    for (g, p) in inst.gen_params.iter().enumerate() {
        for t in 0..h {
            let (u, v, w) = (m.v(VarKind::U, g, t), m.v(VarKind::V, g, t), m.v(VarKind::W, g, t));
            let up = m.v(VarKind::U, g, inst.prev(t));
            let row = if up == u {
                vec![(v, -1.0), (w, 1.0)]
            } else {
                vec![(u, 1.0), (up, -1.0), (v, -1.0), (w, 1.0)]
            };
            m.add_row(row, Sense::Eq, 0.0, info(Tag::CommitmentLogic, g, t));
            m.add_row(vec![(v, 1.0), (u, -1.0)], Sense::Le, 0.0, info(Tag::StartupLogic, g, t));
            m.add_row(vec![(w, 1.0), (u, 1.0)], Sense::Le, 1.0, info(Tag::ShutdownLogic, g, t));
            let mut up_row: Vec<(usize, f64)> =
                inst.uptime_window(g, t).iter().map(|&k| (m.v(VarKind::V, g, k), 1.0)).collect();
            add_term(&mut up_row, u, -1.0);
            m.add_row(up_row, Sense::Le, 0.0, info(Tag::MinUp, g, t));
            let mut dw_row: Vec<(usize, f64)> =
                inst.downtime_window(g, t).iter().map(|&k| (m.v(VarKind::W, g, k), 1.0)).collect();
            add_term(&mut dw_row, u, 1.0);
            m.add_row(dw_row, Sense::Le, 1.0, info(Tag::MinDown, g, t));

            m.objective.terms.push((u, p.fixed_cost));
            m.objective.terms.push((v, p.startup_cost));
            if p.shutdown_cost != 0.0 {
                m.objective.terms.push((w, p.shutdown_cost));
            }
        }
    }
}

fn add_term(terms: &mut Vec<(usize, f64)>, j: usize, a: f64) {
    match terms.iter_mut().find(|(k, _)| *k == j) {
        Some(e) => e.1 += a,
        None => terms.push((j, a)),
    }
}
