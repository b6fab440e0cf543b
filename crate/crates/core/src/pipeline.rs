//! End-to-end run modes and their reports.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bnb::{solve_misocp, MipOptions, MipResult, MipStatus};
use crate::case_io::parse_case;
use crate::cuts::CutLoopOptions;
use crate::feasibility::{recover_dispatch, AcDispatch, RecoveryOutcome, WarmStart};
use crate::formulation::{build_dc_uc, build_misocp, ModelIR};
use crate::instance::{generate_instance, UcInstance};
use crate::lagrangian::{run_decomposition, strengthened_model, DecompositionOptions, IterationRecord};
use crate::schedule::CommitmentSchedule;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dc,
    Misocp,
    #[serde(rename = "misocp++")]
    MisocpPlus,
    Decomp,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Dc => "dc",
            Mode::Misocp => "misocp",
            Mode::MisocpPlus => "misocp++",
            Mode::Decomp => "decomp",
        }
    }
}

/// Operating-condition variant, read off the case name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TypeTag {
    #[serde(rename = "TYP")]
    Typ,
    #[serde(rename = "API")]
    Api,
    #[serde(rename = "SAD")]
    Sad,
}

impl TypeTag {
    pub fn from_name(name: &str) -> Self {
        let lower = name.to_ascii_lowercase();
        if lower.contains("api") {
            TypeTag::Api
        } else if lower.contains("sad") {
            TypeTag::Sad
        } else {
            TypeTag::Typ
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TypeTag::Typ => "TYP",
            TypeTag::Api => "API",
            TypeTag::Sad => "SAD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    DcInfeasible,
    AcRecoveryInfeasible,
    LocalInf,
    TimeLimit,
}

impl Outcome {
    pub fn label(self) -> &'static str {
        match self {
            Outcome::Ok => "ok",
            Outcome::DcInfeasible => "dc_infeasible",
            Outcome::AcRecoveryInfeasible => "ac_recovery_infeasible",
            Outcome::LocalInf => "local_inf",
            Outcome::TimeLimit => "time_limit",
        }
    }
}

/// One row of the results table. Missing values are `None`, never zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub mode: Mode,
    pub instance: String,
    pub type_tag: TypeTag,
    pub lbt_s: Option<f64>,
    pub ubt_s: Option<f64>,
    pub total_s: f64,
    pub lb: Option<f64>,
    pub ub: Option<f64>,
    pub gap_pct: Option<f64>,
    pub outcome: Outcome,
    pub b: Option<usize>,
    pub iterations: Option<usize>,
}

impl SolveReport {
    /// Copy with the timing fields cleared, for run-to-run comparison.
    pub fn without_timing(&self) -> SolveReport {
        SolveReport { lbt_s: None, ubt_s: None, total_s: 0.0, ..self.clone() }
    }
}

/// `(ub − lb) / ub × 100`.
pub fn compute_gap(lb: f64, ub: f64) -> Result<f64> {
    if ub <= 0.0 || !ub.is_finite() || !lb.is_finite() {
        return Err(Error::invalid(format!("gap undefined for lb {lb}, ub {ub}")));
    }
    Ok((ub - lb) / ub * 100.0)
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub mip_gap: f64,
    pub time_limit_s: f64,
    pub cut_rounds: usize,
    pub envelope_anchors: usize,
    pub blocks: usize,
    pub decomp_iters: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { mip_gap: 1e-3, time_limit_s: 3600.0, cut_rounds: 5, envelope_anchors: 3, blocks: 4, decomp_iters: 5 }
    }
}

impl RunOptions {
    fn mip(&self) -> MipOptions {
        MipOptions { rel_gap: self.mip_gap, time_limit_s: self.time_limit_s, ..Default::default() }
    }
}

/// Everything a run produced besides the report row.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: SolveReport,
    pub schedule: Option<CommitmentSchedule>,
    pub dispatch: Option<AcDispatch>,
    /// Lower bound after each cut round (enhanced mode).
    pub lb_trace: Vec<f64>,
    pub mip: Option<MipResult>,
    /// Per-iteration records (decomposition mode).
    pub iterations: Vec<IterationRecord>,
}

/// Reads an instance file: generated-instance JSON, or a MATPOWER case from
/// which an instance is generated with `seed`.
pub fn load_instance(text: &str, seed: u64) -> Result<UcInstance> {
    if text.trim_start().starts_with('{') {
        let inst = UcInstance::from_json(text)?;
        inst.validate()?;
        Ok(inst)
    } else {
        Ok(generate_instance(&parse_case(text)?, seed))
    }
}

fn blank(mode: Mode, inst: &UcInstance) -> SolveReport {
    SolveReport {
        mode,
        instance: inst.name.clone(),
        type_tag: TypeTag::from_name(&inst.name),
        lbt_s: None,
        ubt_s: None,
        total_s: 0.0,
        lb: None,
        ub: None,
        gap_pct: None,
        outcome: Outcome::Ok,
        b: None,
        iterations: None,
    }
}

/// Solves `model`, recovers an AC dispatch for its schedule and fills the
/// report. `infeasible` is the outcome when the MIP has no solution,
/// `failed` when recovery fails.
fn solve_and_recover(
    inst: &UcInstance,
    model: &ModelIR,
    opts: &RunOptions,
    mut report: SolveReport,
    with_lb: bool,
    infeasible: Outcome,
    failed: Outcome,
) -> Result<RunOutput> {
    let clock = Instant::now();
    let mip = solve_misocp(model, &opts.mip(), &[])?;
    report.lbt_s = Some(clock.elapsed().as_secs_f64());
    let mut out = RunOutput {
        report,
        schedule: None,
        dispatch: None,
        lb_trace: Vec::new(),
        mip: None,
        iterations: Vec::new(),
    };
    if with_lb && mip.status != MipStatus::Infeasible {
        out.report.lb = Some(mip.best_bound);
    }
    let (Some(x), Some(schedule)) = (mip.incumbent.as_ref(), mip.schedule.clone()) else {
        out.report.outcome = if mip.status == MipStatus::TimeLimit { Outcome::TimeLimit } else { infeasible };
        out.mip = Some(mip);
        return Ok(out);
    };
    let t_ub = Instant::now();
    let ws = WarmStart::from_solution(inst, model, x);
    let rec: RecoveryOutcome = recover_dispatch(inst, &schedule, Some(&ws))?;
    out.report.ubt_s = Some(t_ub.elapsed().as_secs_f64());
    out.schedule = Some(schedule);
    match rec.dispatch {
        Some(d) if rec.is_feasible() => {
            out.report.ub = Some(d.cost);
            out.dispatch = Some(d);
            out.report.outcome = if mip.status == MipStatus::TimeLimit { Outcome::TimeLimit } else { Outcome::Ok };
        }
        _ => out.report.outcome = failed,
    }
    if let (Some(lb), Some(ub)) = (out.report.lb, out.report.ub) {
        out.report.gap_pct = compute_gap(lb, ub).ok();
    }
    out.mip = Some(mip);
    Ok(out)
}

/// MISOCP, then AC recovery of its schedule.
pub fn run_base(inst: &UcInstance, opts: &RunOptions) -> Result<RunOutput> {
    let clock = Instant::now();
    let model = build_misocp(inst);
    let mut out = solve_and_recover(inst, &model, opts, blank(Mode::Misocp, inst), true, Outcome::LocalInf, Outcome::LocalInf)?;
    out.report.total_s = clock.elapsed().as_secs_f64();
    Ok(out)
}

/// Envelopes and cut rounds on the relaxation, then the MISOCP with all
/// cuts, then AC recovery. The cut-loop time counts toward the LB time.
pub fn run_enhanced(inst: &UcInstance, opts: &RunOptions) -> Result<RunOutput> {
    let clock = Instant::now();
    let cut_opts = CutLoopOptions { rounds: opts.cut_rounds, ..Default::default() };
    let (model, trace) = strengthened_model(inst, opts.envelope_anchors, (opts.cut_rounds > 0).then_some(&cut_opts))?;
    let prep = clock.elapsed().as_secs_f64();
    let mut out = solve_and_recover(inst, &model, opts, blank(Mode::MisocpPlus, inst), true, Outcome::LocalInf, Outcome::LocalInf)?;
    out.report.lbt_s = out.report.lbt_s.map(|t| t + prep);
    out.lb_trace = trace;
    out.report.total_s = clock.elapsed().as_secs_f64();
    Ok(out)
}

/// DC unit commitment, then AC recovery of its schedule. No AC lower bound.
pub fn run_dc(inst: &UcInstance, opts: &RunOptions) -> Result<RunOutput> {
    let clock = Instant::now();
    let model = build_dc_uc(inst);
    let mut out = solve_and_recover(
        inst,
        &model,
        opts,
        blank(Mode::Dc, inst),
        false,
        Outcome::DcInfeasible,
        Outcome::AcRecoveryInfeasible,
    )?;
    out.report.total_s = clock.elapsed().as_secs_f64();
    Ok(out)
}

/// Temporal decomposition into `opts.blocks` blocks.
pub fn run_decomp(inst: &UcInstance, opts: &RunOptions) -> Result<RunOutput> {
    let clock = Instant::now();
    let sub = MipOptions { rel_gap: 0.01, time_limit_s: opts.time_limit_s, ..Default::default() };
    let dopts = DecompositionOptions {
        blocks: opts.blocks,
        max_iters: opts.decomp_iters,
        subproblem: sub,
        restricted: sub,
        cuts: CutLoopOptions { rounds: opts.cut_rounds, ..Default::default() },
        envelope_anchors: opts.envelope_anchors,
        disable_sdp_cuts: opts.cut_rounds == 0,
        time_limit_s: opts.time_limit_s,
        ..Default::default()
    };
    let res = run_decomposition(inst, &dopts)?;
    let mut report = blank(Mode::Decomp, inst);
    report.lb = res.best_lb.is_finite().then_some(res.best_lb);
    report.ub = res.best_ub;
    report.lbt_s = Some(res.lb_time);
    report.ubt_s = Some(res.ub_time);
    report.b = Some(opts.blocks);
    report.iterations = Some(res.iterations.len());
    report.outcome = match (res.best_ub, res.timed_out) {
        (_, true) => Outcome::TimeLimit,
        (Some(_), false) => Outcome::Ok,
        (None, false) => Outcome::LocalInf,
    };
    if let (Some(lb), Some(ub)) = (report.lb, report.ub) {
        report.gap_pct = compute_gap(lb, ub).ok();
    }
    report.total_s = clock.elapsed().as_secs_f64();
    Ok(RunOutput {
        report,
        schedule: res.schedule,
        dispatch: res.dispatch,
        lb_trace: Vec::new(),
        mip: None,
        iterations: res.iterations,
    })
}

pub fn run_mode(mode: Mode, inst: &UcInstance, opts: &RunOptions) -> Result<RunOutput> {
    match mode {
        Mode::Dc => run_dc(inst, opts),
        Mode::Misocp => run_base(inst, opts),
        Mode::MisocpPlus => run_enhanced(inst, opts),
        Mode::Decomp => run_decomp(inst, opts),
    }
}

/// CSV with one header row named after the report fields; `None` is an
/// empty cell.
pub fn reports_to_csv(reports: &[SolveReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn reports_from_csv(text: &str) -> Result<Vec<SolveReport>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Fixed-width table: instance, LBT, UBT, UB, %Gap, outcome.
pub fn reports_to_table(reports: &[SolveReport]) -> String {
    let cell = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:<22} {:>10} {:>10} {:>14} {:>8}  {}",
        "mode", "instance", "LBT", "UBT", "UB", "%Gap", "outcome"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<10} {:<22} {:>10} {:>10} {:>14} {:>8}  {}",
            r.mode.label(),
            format!("{}-{}", r.instance, r.type_tag.label()),
            cell(r.lbt_s, 2),
            cell(r.ubt_s, 2),
            cell(r.ub, 2),
            cell(r.gap_pct, 2),
            r.outcome.label()
        );
    }
    s
}
