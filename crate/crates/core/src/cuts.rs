//! Strengthening of the conic relaxation: arctangent envelopes linking
//! `θi − θj` to `(c_ij, s_ij)`, and cycle-wise SDP separation.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write;

use log::{debug, warn};
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::case_io::{Branch, Network};
use crate::conic::{solve_conic, solve_small_psd, ConicOptions, ConicSolution, HermitianPattern};
use crate::formulation::{Integrality, LinearRow, ModelIR, RowInfo, Sense, Tag, VarKind};
use crate::instance::UcInstance;
use crate::{Error, Result};

/// Minimum normalized violation for a separated cut.
pub const EPS_CUT: f64 = 1e-5;

/// A simple cycle: `lines[k]` joins `buses[k]` and `buses[(k + 1) % len]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cycle {
    pub buses: Vec<usize>,
    pub lines: Vec<usize>,
}

impl Cycle {
    pub fn len(&self) -> usize {
        self.buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buses.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleBasis {
    pub cycles: Vec<Cycle>,
}

/// Fundamental cycles of a BFS spanning tree rooted at the reference bus.
pub fn cycle_basis(net: &Network) -> CycleBasis {
    let n = net.n_buses();
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut depth = vec![usize::MAX; n];
    let mut tree_line = vec![false; net.n_branches()];
    let mut queue = VecDeque::new();
    for root in std::iter::once(net.ref_bus()).chain(0..n) {
        if depth[root] != usize::MAX {
            continue;
        }
        depth[root] = 0;
        queue.push_back(root);
        while let Some(i) = queue.pop_front() {
            for &(j, l) in net.neighbors(i) {
                if depth[j] == usize::MAX {
                    depth[j] = depth[i] + 1;
                    parent[j] = Some((i, l));
                    tree_line[l] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    let mut cycles = Vec::new();
    for (l, br) in net.branches.iter().enumerate() {
        if tree_line[l] {
            continue;
        }
        // Paths from each end up to the common ancestor.
        let (mut a, mut b) = (br.from, br.to);
        let (mut up_a, mut up_b) = (Vec::new(), Vec::new());
        while a != b {
            if depth[a] >= depth[b] {
                let (p, pl) = parent[a].expect("non-root has a parent");
                up_a.push((a, pl));
                a = p;
            } else {
                let (p, pl) = parent[b].expect("non-root has a parent");
                up_b.push((b, pl));
                b = p;
            }
        }
        // from → … → lca → … → to, closed by the non-tree line.
        let mut buses: Vec<usize> = up_a.iter().map(|e| e.0).collect();
        let mut lines: Vec<usize> = up_a.iter().map(|e| e.1).collect();
        buses.push(a);
        for &(bus, pl) in up_b.iter().rev() {
            lines.push(pl);
            buses.push(bus);
        }
        lines.push(l);
        cycles.push(Cycle { buses, lines });
    }
    CycleBasis { cycles }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutOrigin {
    Arctangent,
    SdpSeparation,
}

impl CutOrigin {
    pub fn label(self) -> &'static str {
        match self {
            CutOrigin::Arctangent => "arctangent",
            CutOrigin::SdpSeparation => "sdp_separation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCut {
    pub row: LinearRow,
    pub origin: CutOrigin,
    pub period: usize,
    /// Violation at the point that produced the cut (zero for envelopes).
    pub violation: f64,
}

/// A valid inequality on one line, `a·(θi − θj) + b_c·c + b_s·s ≤ rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineInequality {
    pub a_theta: f64,
    pub b_c: f64,
    pub b_s: f64,
    pub rhs: f64,
}

impl LineInequality {
    pub fn lhs(&self, dtheta: f64, c: f64, s: f64) -> f64 {
        self.a_theta * dtheta + self.b_c * c + self.b_s * s
    }
}

/// Magnitude range `[r_min, r_max]` of `|Vi||Vj|` for a line.
pub fn magnitude_range(net: &Network, br: &Branch) -> (f64, f64) {
    let (bi, bj) = (&net.buses[br.from], &net.buses[br.to]);
    (bi.vmin * bj.vmin, bi.vmax * bj.vmax)
}

/// Envelope inequalities for one line: two sector cuts and two tangent cuts
/// per anchor angle. Returns `None` when the angle bounds reach ±π/2.
///
/// Tangent cuts are written in coordinates rotated to the anchor `φ0`:
/// with `ψ = Δθ − φ0`, `x = r cos ψ`, `y = r sin ψ`, the cut
/// `∓r0·ψ ± y + κ·x ≤ e` has `e` set to its exact maximum over
/// `ψ ∈ [amin − φ0, amax − φ0]`, `r ∈ [r_min, r_max]`, so it is valid for
/// every magnitude in range and tight at the anchor when `r_min = r_max`.
pub fn arctangent_envelopes(
    angle_min: f64,
    angle_max: f64,
    r_min: f64,
    r_max: f64,
    anchors: usize,
) -> Option<Vec<LineInequality>> {
    let bar = angle_max.abs().max(angle_min.abs());
    if bar >= FRAC_PI_2 || !(angle_min < angle_max) || r_min <= 0.0 || r_max < r_min {
        return None;
    }
    let mut out = Vec::new();
    // ±s ≤ c·tan θ̄
    let t = bar.tan();
    out.push(LineInequality { a_theta: 0.0, b_c: -t, b_s: 1.0, rhs: 0.0 });
    out.push(LineInequality { a_theta: 0.0, b_c: -t, b_s: -1.0, rhs: 0.0 });

    let r0 = 1.0f64.clamp(r_min, r_max);
    for k in 0..anchors {
        let phi0 = if anchors == 1 { 0.0 } else { -bar / 2.0 + bar * k as f64 / (anchors - 1) as f64 };
        let (lo, hi) = (angle_min - phi0, angle_max - phi0);
        let u = lo.abs().max(hi.abs());
        let kappa = if u > 0.0 { (u - u.sin()) / (1.0 - u.cos()) } else { 0.0 };
        for sign in [1.0, -1.0] {
            // a·ψ + bx·x + by·y ≤ e
            let (a, bx, by) = (-sign * r0, kappa, sign);
            let e = support(a, bx, by, lo, hi, r_min, r_max);
            // Back to (Δθ, c, s): x = c cos φ0 − s sin φ0,
            // y = −c sin φ0 − s cos φ0.
            let (sn, cs) = phi0.sin_cos();
            out.push(LineInequality {
                a_theta: a,
                b_c: bx * cs - by * sn,
                b_s: -bx * sn - by * cs,
                rhs: e + a * phi0,
            });
        }
    }
    Some(out)
}

/// `max a·ψ + r·(bx cos ψ + by sin ψ)` over `ψ ∈ [lo, hi]`, `r ∈ [rmin, rmax]`.
fn support(a: f64, bx: f64, by: f64, lo: f64, hi: f64, rmin: f64, rmax: f64) -> f64 {
    let rho = bx.hypot(by);
    let omega = by.atan2(bx);
    let h = |psi: f64| {
        let v = bx * psi.cos() + by * psi.sin();
        a * psi + (rmin * v).max(rmax * v)
    };
    let mut cands = vec![lo, hi];
    let inside = |p: f64| p > lo && p < hi;
    for k in -3..=3 {
        let base = k as f64 * std::f64::consts::PI;
        let p = omega + FRAC_PI_2 + base;
        if inside(p) {
            cands.push(p);
        }
        if rho > 0.0 {
            for r in [rmin, rmax] {
                let q = a / (r * rho);
                if q.abs() <= 1.0 {
                    for p in [omega + q.asin() + 2.0 * base, omega + std::f64::consts::PI - q.asin() + 2.0 * base] {
                        if inside(p) {
                            cands.push(p);
                        }
                    }
                }
            }
        }
    }
    let m = cands.into_iter().map(h).fold(f64::NEG_INFINITY, f64::max);
    m + 1e-12 * (1.0 + m.abs())
}

/// Adds `θ` variables (reference bus fixed to zero) to a model that lacks
/// them. Returns the model unchanged otherwise.
pub fn add_angle_variables(model: &mut ModelIR, inst: &UcInstance) {
    let net = &inst.network;
    for t in 0..inst.horizon {
        for i in 0..net.n_buses() {
            if model.var(VarKind::Theta, i, t).is_none() {
                let (lo, hi) = if i == net.ref_bus() { (0.0, 0.0) } else { (f64::NEG_INFINITY, f64::INFINITY) };
                model.add_var(VarKind::Theta, i, t, lo, hi, Integrality::Continuous);
            }
        }
    }
}

/// Envelope rows for every line and period of an AC model, with `K`
/// anchors. Adds the `θ` variables if needed.
pub fn envelope_cuts(model: &mut ModelIR, inst: &UcInstance, anchors: usize) -> Vec<LinearCut> {
    add_angle_variables(model, inst);
    let net = &inst.network;
    let mut out = Vec::new();
    for (l, br) in net.branches.iter().enumerate() {
        let (rmin, rmax) = magnitude_range(net, br);
        let Some(ineqs) = arctangent_envelopes(br.angle_min, br.angle_max, rmin, rmax, anchors) else {
            warn!("line {l}: angle bounds reach ±π/2, no envelope");
            continue;
        };
        for t in 0..inst.horizon {
            let (Some(c), Some(s)) = (model.var(VarKind::Cij, l, t), model.var(VarKind::Sij, l, t)) else {
                continue;
            };
            let (ti, tj) = (model.v(VarKind::Theta, br.from, t), model.v(VarKind::Theta, br.to, t));
            for q in &ineqs {
                let mut terms = vec![(c, q.b_c), (s, q.b_s)];
                if q.a_theta != 0.0 {
                    terms.push((ti, q.a_theta));
                    terms.push((tj, -q.a_theta));
                }
                terms.retain(|&(_, v)| v != 0.0);
                out.push(LinearCut {
                    row: LinearRow {
                        terms,
                        sense: Sense::Le,
                        rhs: q.rhs,
                        info: RowInfo { tag: Tag::Envelope, entity: l, period: t },
                    },
                    origin: CutOrigin::Arctangent,
                    period: t,
                    violation: 0.0,
                });
            }
        }
    }
    out
}

/// The partial Hermitian matrix of a cycle at a point: `W_kk = c_kk`,
/// `W[from][to] = c + i·s` on cycle lines.
pub fn cycle_pattern(net: &Network, cycle: &Cycle, cii: &[f64], c: &[f64], s: &[f64]) -> HermitianPattern {
    let n = cycle.len();
    let diag = cycle.buses.iter().map(|&b| cii[b]).collect();
    let mut offdiag = Vec::with_capacity(n);
    for k in 0..n {
        let l = cycle.lines[k];
        let (a, b) = (k, (k + 1) % n);
        let forward = net.branches[l].from == cycle.buses[a];
        let z = Complex::new(c[l], if forward { s[l] } else { -s[l] });
        if a < b {
            offdiag.push((a, b, z));
        } else {
            offdiag.push((b, a, z.conj()));
        }
    }
    HermitianPattern { dim: n, diag, offdiag }
}

/// Separates the point `(ĉ, ŝ)` of one period from the set of partial
/// matrices with a PSD completion on `cycle`. Returns the normalized
/// supporting-hyperplane cut `⟨N, W⟩ ≤ 0` when it is violated by at least
/// `eps`.
#[allow(clippy::too_many_arguments)]
pub fn separate_cycle(
    net: &Network,
    cycle: &Cycle,
    cii: &[f64],
    c: &[f64],
    s: &[f64],
    eps: f64,
) -> Option<(HermitianPattern, f64)> {
    if cycle.len() < 3 {
        return None;
    }
    let target = cycle_pattern(net, cycle, cii, c, s);
    let proj = solve_small_psd(&target, 2000, 1e-12);
    if !matches!(proj.status, crate::conic::ConicStatus::Optimal) {
        debug!("cycle separation failed to converge");
        return None;
    }
    let norm = proj.normal.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let normal = proj.normal.scaled(1.0 / norm);
    let violation = normal.dot(&target);
    (violation >= eps).then_some((normal, violation))
}

/// Maps `⟨N, W⟩ ≤ 0` on a cycle to a row over the model's `c_ii`, `c`, `s`.
fn cycle_cut_row(
    model: &ModelIR,
    net: &Network,
    cycle: &Cycle,
    normal: &HermitianPattern,
    t: usize,
    entity: usize,
) -> LinearRow {
    let mut terms = Vec::new();
    for (k, &b) in cycle.buses.iter().enumerate() {
        terms.push((model.v(VarKind::Cii, b, t), normal.diag[k]));
    }
    let n = cycle.len();
    for k in 0..n {
        let l = cycle.lines[k];
        let (a, b) = (k, (k + 1) % n);
        let forward = net.branches[l].from == cycle.buses[a];
        // Entry stored for (min, max); orient it as W[a][b].
        let nz = normal
            .offdiag
            .iter()
            .find(|e| (e.0, e.1) == (a.min(b), a.max(b)))
            .map(|e| if a < b { e.2 } else { e.2.conj() })
            .expect("cycle entry");
        // 2·Re(conj(N_ab)·W_ab) with W_ab = c ± i·s.
        let sign = if forward { 1.0 } else { -1.0 };
        terms.push((model.v(VarKind::Cij, l, t), 2.0 * nz.re));
        terms.push((model.v(VarKind::Sij, l, t), 2.0 * nz.im * sign));
    }
    LinearRow {
        terms,
        sense: Sense::Le,
        rhs: 0.0,
        info: RowInfo { tag: Tag::SdpCut, entity, period: t },
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CutLoopOptions {
    pub rounds: usize,
    pub eps: f64,
    pub conic: ConicOptions,
}

impl Default for CutLoopOptions {
    fn default() -> Self {
        CutLoopOptions { rounds: 5, eps: EPS_CUT, conic: ConicOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct CutLoopResult {
    /// SDP cuts found over all rounds.
    pub cuts: Vec<LinearCut>,
    /// Best lower bound after each solve; non-decreasing by construction.
    pub lb_trace: Vec<f64>,
    /// Bound of each individual solve.
    pub raw_trace: Vec<f64>,
    pub last: Option<ConicSolution>,
}

/// Repeatedly solves `model` (a continuous relaxation, envelopes included)
/// and adds the violated cycle cuts of every period.
pub fn cut_loop(model: &ModelIR, inst: &UcInstance, basis: &CycleBasis, opts: &CutLoopOptions) -> Result<CutLoopResult> {
    let net = &inst.network;
    let mut work = model.clone();
    let mut res = CutLoopResult { cuts: Vec::new(), lb_trace: Vec::new(), raw_trace: Vec::new(), last: None };
    let jobs: Vec<(usize, usize)> = (0..inst.horizon)
        .flat_map(|t| basis.cycles.iter().enumerate().filter(|(_, c)| c.len() >= 3).map(move |(k, _)| (t, k)))
        .collect();
    for round in 0..opts.rounds {
        let sol = solve_conic(&work, &opts.conic)?;
        if !sol.is_optimal() {
            if res.lb_trace.is_empty() {
                return Err(Error::Solver(format!("cut loop relaxation: {:?}", sol.status)));
            }
            warn!("cut loop round {round}: relaxation {:?}, keeping partial cuts", sol.status);
            break;
        }
        let lb = sol.bound();
        let best = res.lb_trace.last().map_or(lb, |b: &f64| b.max(lb));
        res.raw_trace.push(lb);
        res.lb_trace.push(best);
        let x = &sol.primal;
        let found: Vec<LinearCut> = jobs
            .par_iter()
            .filter_map(|&(t, k)| {
                let cyc = &basis.cycles[k];
                let cii: Vec<f64> = (0..net.n_buses()).map(|i| x[work.v(VarKind::Cii, i, t)]).collect();
                let mut c = vec![0.0; net.n_branches()];
                let mut s = vec![0.0; net.n_branches()];
                for &l in &cyc.lines {
                    c[l] = x[work.v(VarKind::Cij, l, t)];
                    s[l] = x[work.v(VarKind::Sij, l, t)];
                }
                let (normal, violation) = separate_cycle(net, cyc, &cii, &c, &s, opts.eps)?;
                let row = cycle_cut_row(&work, net, cyc, &normal, t, k);
                Some(LinearCut { row, origin: CutOrigin::SdpSeparation, period: t, violation })
            })
            .collect();
        debug!("cut loop round {round}: lb {lb:.6}, {} cuts", found.len());
        res.last = Some(sol);
        if found.is_empty() {
            break;
        }
        for cut in &found {
            work.rows.push(cut.row.clone());
        }
        res.cuts.extend(found);
    }
    Ok(res)
}

/// Sets `c_ii`, `c_ij`, `s_ij` and `θ` of `x` from voltages through the
/// variable change, for every period present in `v`/`theta` (`[t][bus]`).
pub fn lift_voltages(model: &ModelIR, net: &Network, v: &[Vec<f64>], theta: &[Vec<f64>], x: &mut [f64]) {
    for (t, (vt, at)) in v.iter().zip(theta).enumerate() {
        for i in 0..net.n_buses() {
            if let Some(j) = model.var(VarKind::Cii, i, t) {
                x[j] = vt[i] * vt[i];
            }
            if let Some(j) = model.var(VarKind::Theta, i, t) {
                x[j] = at[i];
            }
        }
        for (l, br) in net.branches.iter().enumerate() {
            let r = vt[br.from] * vt[br.to];
            let d = at[br.from] - at[br.to];
            if let Some(j) = model.var(VarKind::Cij, l, t) {
                x[j] = r * d.cos();
            }
            if let Some(j) = model.var(VarKind::Sij, l, t) {
                x[j] = -r * d.sin();
            }
        }
    }
}

/// Cut dump: one cut per line, `origin period rhs` then sparse terms.
pub fn cuts_to_text(cuts: &[LinearCut]) -> String {
    let mut out = String::new();
    for c in cuts {
        let _ = write!(out, "{} {} {:e}", c.origin.label(), c.period, c.row.rhs);
        for &(j, a) in &c.row.terms {
            let _ = write!(out, " {j}:{a:e}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_matches_dense_grid() {
        let (a, bx, by, lo, hi, rmin, rmax) = (-0.9, 0.2, 1.0, -0.7, 0.3, 0.81, 1.21);
        let e = support(a, bx, by, lo, hi, rmin, rmax);
        let mut m = f64::NEG_INFINITY;
        for k in 0..=20000 {
            let psi = lo + (hi - lo) * k as f64 / 20000.0;
            for r in [rmin, rmax] {
                m = m.max(a * psi + r * (bx * psi.cos() + by * psi.sin()));
            }
        }
        assert!(e >= m - 1e-12 && e - m < 1e-6, "{e} {m}");
    }

    #[test]
    fn tangent_tight_at_anchor_for_fixed_magnitude() {
        let bar = std::f64::consts::FRAC_PI_6;
        let cuts = arctangent_envelopes(-bar, bar, 1.0, 1.0, 3).unwrap();
        // Anchor 0 is the second anchor: cuts 4 and 5.
        for q in &cuts[4..6] {
            assert!((q.lhs(0.0, 1.0, 0.0) - q.rhs).abs() < 1e-9, "{q:?}");
        }
    }

    #[test]
    fn sector_cut_cuts_off_wide_angle() {
        let q = arctangent_envelopes(-std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4, 0.9, 1.1, 3).unwrap();
        assert!(q[0].lhs(0.0, 1.0, 1.2) > q[0].rhs);
    }
}
