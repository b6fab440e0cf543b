//! Solver-agnostic optimization models in c-s-θ variables.
//!
//! A [`ModelIR`] holds variables with bounds and integrality, linear rows,
//! second-order cones, rotated cones and small PSD cones, and an affine
//! objective. Every row carries a [`Tag`] naming the constraint family it
//! encodes plus the entity (bus, line or generator) and period it belongs to.

mod build;
mod export;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use build::{
    build_dc_mopf, build_dc_uc, build_misocp, build_mopf, build_socp, build_uc_minlp, NlpModel,
    NonlinearRow,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VarKind {
    Cii,
    Cij,
    Sij,
    Theta,
    Pg,
    Qg,
    Pfwd,
    Pbwd,
    Qfwd,
    Qbwd,
    U,
    V,
    W,
    Fdc,
    Aux,
}

impl VarKind {
    pub fn name(self) -> &'static str {
        match self {
            VarKind::Cii => "c_ii",
            VarKind::Cij => "c_ij",
            VarKind::Sij => "s_ij",
            VarKind::Theta => "theta",
            VarKind::Pg => "p_gen",
            VarKind::Qg => "q_gen",
            VarKind::Pfwd => "p_fwd",
            VarKind::Pbwd => "p_bwd",
            VarKind::Qfwd => "q_fwd",
            VarKind::Qbwd => "q_bwd",
            VarKind::U => "u",
            VarKind::V => "v",
            VarKind::W => "w",
            VarKind::Fdc => "f_dc",
            VarKind::Aux => "aux",
        }
    }

    pub fn is_commitment(self) -> bool {
        matches!(self, VarKind::U | VarKind::V | VarKind::W)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrality {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub kind: VarKind,
    pub entity: usize,
    pub period: usize,
    pub lo: f64,
    pub hi: f64,
    pub integrality: Integrality,
}

/// Constraint families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    ActiveBalance,
    ReactiveBalance,
    ActiveGeneration,
    ReactiveGeneration,
    RampUp,
    RampDown,
    ActiveFlowFrom,
    ActiveFlowTo,
    ReactiveFlowFrom,
    ReactiveFlowTo,
    ApparentFrom,
    ApparentTo,
    CosineConsistency,
    AngleConsistency,
    ConeRelaxation,
    AngleDifference,
    DcBalance,
    DcFlow,
    DcThermal,
    CommitmentLogic,
    StartupLogic,
    ShutdownLogic,
    MinUp,
    MinDown,
    CostEpigraph,
    Envelope,
    SdpCut,
}

impl Tag {
    pub fn label(self) -> &'static str {
        match self {
            Tag::ActiveBalance => "active_balance",
            Tag::ReactiveBalance => "reactive_balance",
            Tag::ActiveGeneration => "active_generation",
            Tag::ReactiveGeneration => "reactive_generation",
            Tag::RampUp => "ramp_up",
            Tag::RampDown => "ramp_down",
            Tag::ActiveFlowFrom => "active_flow_from",
            Tag::ActiveFlowTo => "active_flow_to",
            Tag::ReactiveFlowFrom => "reactive_flow_from",
            Tag::ReactiveFlowTo => "reactive_flow_to",
            Tag::ApparentFrom => "apparent_from",
            Tag::ApparentTo => "apparent_to",
            Tag::CosineConsistency => "cosine_consistency",
            Tag::AngleConsistency => "angle_consistency",
            Tag::ConeRelaxation => "cone_relaxation",
            Tag::AngleDifference => "angle_difference",
            Tag::DcBalance => "dc_balance",
            Tag::DcFlow => "dc_flow",
            Tag::DcThermal => "dc_thermal",
            Tag::CommitmentLogic => "commitment_logic",
            Tag::StartupLogic => "startup_logic",
            Tag::ShutdownLogic => "shutdown_logic",
            Tag::MinUp => "min_up",
            Tag::MinDown => "min_down",
            Tag::CostEpigraph => "cost_epigraph",
            Tag::Envelope => "envelope",
            Tag::SdpCut => "sdp_cut",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// Where a row comes from: its family, the entity it is indexed by and its
/// period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowInfo {
    pub tag: Tag,
    pub entity: usize,
    pub period: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new(terms: Vec<(usize, f64)>, constant: f64) -> Self {
        LinExpr { terms, constant }
    }

    pub fn var(j: usize) -> Self {
        LinExpr::new(vec![(j, 1.0)], 0.0)
    }

    pub fn scaled_var(j: usize, a: f64) -> Self {
        LinExpr::new(vec![(j, a)], 0.0)
    }

    pub fn constant(c: f64) -> Self {
        LinExpr::new(Vec::new(), c)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    pub info: RowInfo,
}

impl LinearRow {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let ax = self.activity(x);
        match self.sense {
            Sense::Le => (ax - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - ax).max(0.0),
            Sense::Eq => (ax - self.rhs).abs(),
        }
    }
}

/// `‖lhs‖₂ ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocRow {
    pub lhs: Vec<LinExpr>,
    pub rhs: LinExpr,
    pub info: RowInfo,
}

/// `Σ lhs_k² ≤ x·y` with `x, y ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotatedSocRow {
    pub lhs: Vec<LinExpr>,
    pub x: LinExpr,
    pub y: LinExpr,
    pub info: RowInfo,
}

/// Symmetric matrix with affine entries constrained to be PSD. Entries hold
/// the upper triangle row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdRow {
    pub dim: usize,
    pub entries: Vec<LinExpr>,
    pub info: RowInfo,
}

impl PsdRow {
    pub fn entry(&self, r: usize, c: usize) -> &LinExpr {
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        &self.entries[r * self.dim - r * (r + 1) / 2 + c]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelIR {
    pub name: String,
    pub variables: Vec<Variable>,
    pub rows: Vec<LinearRow>,
    pub socs: Vec<SocRow>,
    pub rotated: Vec<RotatedSocRow>,
    pub psds: Vec<PsdRow>,
    pub objective: LinExpr,
    pub horizon: usize,
    #[serde(skip)]
    index: HashMap<(VarKind, usize, usize), usize>,
}

impl ModelIR {
    pub fn new(name: impl Into<String>, horizon: usize) -> Self {
        ModelIR {
            name: name.into(),
            horizon,
            ..Default::default()
        }
    }

    pub fn add_var(
        &mut self,
        kind: VarKind,
        entity: usize,
        period: usize,
        lo: f64,
        hi: f64,
        integrality: Integrality,
    ) -> usize {
        let j = self.variables.len();
        self.variables.push(Variable {
            kind,
            entity,
            period,
            lo,
            hi,
            integrality,
        });
        self.index.insert((kind, entity, period), j);
        j
    }

    pub fn var(&self, kind: VarKind, entity: usize, period: usize) -> Option<usize> {
        self.index.get(&(kind, entity, period)).copied()
    }

    /// Like [`ModelIR::var`] but for variables the caller knows exist.
    pub fn v(&self, kind: VarKind, entity: usize, period: usize) -> usize {
        self.var(kind, entity, period).unwrap_or_else(|| {
            panic!("no variable {}[{entity}, {period}] in {}", kind.name(), self.name)
        })
    }

    pub fn add_row(&mut self, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64, info: RowInfo) {
        self.rows.push(LinearRow {
            terms,
            sense,
            rhs,
            info,
        });
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn binaries(&self) -> impl Iterator<Item = usize> + '_ {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.integrality == Integrality::Binary)
            .map(|(j, _)| j)
    }

    pub fn n_binaries(&self) -> usize {
        self.binaries().count()
    }

    /// Copy with every binary relaxed to its bounds.
    pub fn relaxed(&self) -> ModelIR {
        let mut m = self.clone();
        for v in &mut m.variables {
            v.integrality = Integrality::Continuous;
        }
        m
    }

    /// Rebuilds the variable lookup (needed after deserialization).
    pub fn reindex(&mut self) {
        self.index = self
            .variables
            .iter()
            .enumerate()
            .map(|(j, v)| ((v.kind, v.entity, v.period), j))
            .collect();
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    /// Largest violation of any bound, row or cone at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (v, &xj) in self.variables.iter().zip(x) {
            worst = worst.max(v.lo - xj).max(xj - v.hi);
        }
        for r in &self.rows {
            worst = worst.max(r.violation(x));
        }
        for c in &self.socs {
            let norm = c.lhs.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(norm - c.rhs.eval(x));
        }
        for c in &self.rotated {
            let (a, b) = (c.x.eval(x), c.y.eval(x));
            let sq: f64 = c.lhs.iter().map(|e| e.eval(x).powi(2)).sum();
            // Distance-like measure: ‖(2l, a-b)‖ - (a+b).
            let norm = (4.0 * sq + (a - b).powi(2)).sqrt();
            worst = worst.max(norm - (a + b)).max(-a).max(-b);
        }
        for c in &self.psds {
            worst = worst.max(-psd_min_eigenvalue(c, x));
        }
        worst.max(0.0)
    }

    /// Tags of every row and cone present in the model.
    pub fn tags(&self) -> std::collections::BTreeSet<Tag> {
        self.rows
            .iter()
            .map(|r| r.info.tag)
            .chain(self.socs.iter().map(|r| r.info.tag))
            .chain(self.rotated.iter().map(|r| r.info.tag))
            .chain(self.psds.iter().map(|r| r.info.tag))
            .collect()
    }

    pub fn count_tag(&self, tag: Tag) -> usize {
        self.rows.iter().filter(|r| r.info.tag == tag).count()
            + self.socs.iter().filter(|r| r.info.tag == tag).count()
            + self.rotated.iter().filter(|r| r.info.tag == tag).count()
            + self.psds.iter().filter(|r| r.info.tag == tag).count()
    }

    /// Checks that every row references declared variables and cone shapes
    /// are consistent.
    pub fn validate(&self) -> Result<()> {
        let n = self.variables.len();
        let bad = |what: &str| Error::Model(format!("{}: {what}", self.name));
        let check = |terms: &[(usize, f64)]| terms.iter().all(|&(j, a)| j < n && a.is_finite());
        for v in &self.variables {
            if v.lo > v.hi || v.lo.is_nan() || v.hi.is_nan() {
                return Err(bad(&format!(
                    "variable {}[{},{}] has empty bounds",
                    v.kind.name(),
                    v.entity,
                    v.period
                )));
            }
        }
        if !self.rows.iter().all(|r| check(&r.terms) && r.rhs.is_finite()) {
            return Err(bad("linear row references unknown variable"));
        }
        let exprs_ok = |es: &[&LinExpr]| es.iter().all(|e| check(&e.terms));
        for c in &self.socs {
            let mut es: Vec<&LinExpr> = c.lhs.iter().collect();
            es.push(&c.rhs);
            if !exprs_ok(&es) {
                return Err(bad("cone references unknown variable"));
            }
        }
        for c in &self.rotated {
            let mut es: Vec<&LinExpr> = c.lhs.iter().collect();
            es.push(&c.x);
            es.push(&c.y);
            if !exprs_ok(&es) {
                return Err(bad("rotated cone references unknown variable"));
            }
        }
        for c in &self.psds {
            if c.entries.len() != c.dim * (c.dim + 1) / 2 {
                return Err(bad("PSD cone has wrong number of entries"));
            }
            if !exprs_ok(&c.entries.iter().collect::<Vec<_>>()) {
                return Err(bad("PSD cone references unknown variable"));
            }
        }
        if !check(&self.objective.terms) {
            return Err(bad("objective references unknown variable"));
        }
        Ok(())
    }
}

fn psd_min_eigenvalue(c: &PsdRow, x: &[f64]) -> f64 {
    let n = c.dim;
    let m = nalgebra::DMatrix::from_fn(n, n, |r, k| c.entry(r, k).eval(x));
    m.symmetric_eigenvalues().min()
}

pub use export::to_text;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_entry_layout() {
        let e = |k: f64| LinExpr::constant(k);
        let row = PsdRow {
            dim: 3,
            entries: vec![e(0.0), e(1.0), e(2.0), e(3.0), e(4.0), e(5.0)],
            info: RowInfo {
                tag: Tag::SdpCut,
                entity: 0,
                period: 0,
            },
        };
        assert_eq!(row.entry(0, 2).constant, 2.0);
        assert_eq!(row.entry(2, 1).constant, 4.0);
        assert_eq!(row.entry(2, 2).constant, 5.0);
    }

    #[test]
    fn violation_measures() {
        let mut m = ModelIR::new("t", 1);
        let x = m.add_var(VarKind::Aux, 0, 0, 0.0, 10.0, Integrality::Continuous);
        let info = RowInfo {
            tag: Tag::CostEpigraph,
            entity: 0,
            period: 0,
        };
        m.add_row(vec![(x, 1.0)], Sense::Ge, 2.0, info);
        assert_eq!(m.max_violation(&[1.5]), 0.5);
        assert_eq!(m.max_violation(&[3.0]), 0.0);
        m.socs.push(SocRow {
            lhs: vec![LinExpr::constant(3.0), LinExpr::constant(4.0)],
            rhs: LinExpr::var(x),
            info,
        });
        assert!((m.max_violation(&[4.0]) - 1.0).abs() < 1e-12);
        assert!(m.validate().is_ok());
    }
}
