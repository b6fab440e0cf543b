mod common;

use acuc_core::conic::solve_conic;
use acuc_core::feasibility::{evaluate_residuals, FEAS_TOL};
use acuc_core::formulation::build_misocp;
use acuc_core::instance::UcInstance;
use acuc_core::pipeline::{
    compute_gap, reports_from_csv, reports_to_csv, run_base, run_dc, run_decomp, run_enhanced, Outcome, RunOptions,
    RunOutput,
};
use common::{dc_infeasible_instance, dc_suboptimal_instance, desk_instance, load_case};

fn within(a: f64, b: f64) -> bool {
    a <= b + 1e-6 * b.abs().max(1.0)
}

fn assert_certified(inst: &UcInstance, out: &RunOutput) {
    if let (Some(s), Some(d)) = (&out.schedule, &out.dispatch) {
        let r = evaluate_residuals(inst, s, d);
        assert!(r.max <= FEAS_TOL, "{}: residuals {:?}", inst.name, r.per_family);
        assert_eq!(out.report.ub, Some(d.cost));
    }
}

fn sandwich(inst: &UcInstance) {
    let opts = RunOptions::default();
    let relaxation = solve_conic(&build_misocp(inst).relaxed(), &Default::default()).unwrap().bound();
    let base = run_base(inst, &opts).unwrap();
    let enh = run_enhanced(inst, &opts).unwrap();
    assert_certified(inst, &base);
    assert_certified(inst, &enh);
    for out in [&base, &enh] {
        let r = &out.report;
        assert_eq!(r.outcome, Outcome::Ok, "{}", inst.name);
        let (lb, ub) = (r.lb.unwrap(), r.ub.unwrap());
        let inc = out.mip.as_ref().unwrap().incumbent_obj.unwrap();
        assert!(within(relaxation, lb), "{}: relaxation {relaxation} > lb {lb}", inst.name);
        assert!(within(lb, inc), "{}: lb {lb} > incumbent {inc}", inst.name);
        assert!(within(inc, ub), "{}: incumbent {inc} > ub {ub}", inst.name);
        assert_eq!(r.gap_pct.unwrap(), (ub - lb) / ub * 100.0);
    }
    let (lb0, lb1) = (base.report.lb.unwrap(), enh.report.lb.unwrap());
    // Both bounds come from a search stopped at 0.1%.
    assert!(lb1 >= lb0 * (1.0 - 1e-3), "{}: enhanced {lb1} vs base {lb0}", inst.name);
}

#[test]
fn bounds_are_ordered_on_case9() {
    sandwich(&load_case("case9", 1));
}

#[test]
fn bounds_are_ordered_on_case14() {
    sandwich(&load_case("case14", 1));
}

#[test]
fn bounds_are_ordered_on_desk_instances() {
    for seed in 0..6 {
        sandwich(&desk_instance(seed));
    }
}

#[test]
fn gap_formula_anchors() {
    assert_eq!(compute_gap(5.0, 5.0).unwrap(), 0.0);
    assert!((compute_gap(99.0, 100.0).unwrap() - 1.0).abs() < 1e-12);
    assert!(compute_gap(1.0, 0.0).is_err());
}

#[test]
fn dc_milp_infeasible_but_ac_feasible() {
    let inst = dc_infeasible_instance();
    let dc = run_dc(&inst, &RunOptions::default()).unwrap();
    assert_eq!(dc.report.outcome, Outcome::DcInfeasible);
    assert_eq!((dc.report.lb, dc.report.ub), (None, None));
    let base = run_base(&inst, &RunOptions::default()).unwrap();
    assert_eq!(base.report.outcome, Outcome::Ok);
    assert_certified(&inst, &base);
}

#[test]
fn dc_schedule_fails_ac_recovery_on_case14() {
    let inst = load_case("case14", 1);
    let dc = run_dc(&inst, &RunOptions::default()).unwrap();
    assert_eq!(dc.report.outcome, Outcome::AcRecoveryInfeasible);
    assert!(dc.schedule.is_some() && dc.report.ub.is_none());
    let base = run_base(&inst, &RunOptions::default()).unwrap();
    assert_eq!(base.report.outcome, Outcome::Ok);
}

#[test]
fn dc_schedule_costs_more_than_misocp_schedule() {
    let inst = dc_suboptimal_instance();
    let dc = run_dc(&inst, &RunOptions::default()).unwrap();
    let base = run_base(&inst, &RunOptions::default()).unwrap();
    assert_eq!(dc.report.outcome, Outcome::Ok);
    assert_certified(&inst, &dc);
    let (ub_dc, ub_base) = (dc.report.ub.unwrap(), base.report.ub.unwrap());
    assert!(ub_dc > ub_base * (1.0 + 1e-6), "dc {ub_dc} vs misocp {ub_base}");
    // The DC UB is still an AC-feasible cost, so it sits above the MISOCP LB.
    assert!(ub_dc >= base.report.lb.unwrap());
}

#[test]
fn dc_ub_is_above_misocp_lb_on_desk_instances() {
    for seed in 0..6 {
        let inst = desk_instance(seed);
        let dc = run_dc(&inst, &RunOptions::default()).unwrap().report;
        let base = run_base(&inst, &RunOptions::default()).unwrap().report;
        if let (Some(ub), Some(lb)) = (dc.ub, base.lb) {
            assert!(within(lb, ub), "seed {seed}: dc ub {ub} < misocp lb {lb}");
        }
    }
}

#[test]
fn reports_are_reproducible() {
    let inst = load_case("case9", 4);
    let opts = RunOptions::default();
    for run in [run_base, run_enhanced, run_dc, run_decomp] {
        let a = run(&inst, &opts).unwrap().report.without_timing();
        let b = run(&inst, &opts).unwrap().report.without_timing();
        assert_eq!(a, b);
    }
}

#[test]
fn every_mode_emits_the_full_schema() {
    let inst = desk_instance(2);
    let opts = RunOptions { blocks: 2, ..Default::default() };
    let reports: Vec<_> = [run_base, run_enhanced, run_dc, run_decomp].iter().map(|f| f(&inst, &opts).unwrap().report).collect();
    let text = reports_to_csv(&reports).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "mode,instance,type_tag,lbt_s,ubt_s,total_s,lb,ub,gap_pct,outcome,b,iterations");
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 12));
    assert_eq!(reports_from_csv(&text).unwrap(), reports);
    // No AC lower bound from the DC model; block count only for decomposition.
    assert_eq!(reports[2].lb, None);
    assert_eq!(reports[3].b, Some(2));
    assert!(reports[0].b.is_none() && reports[0].iterations.is_none());
}

#[test]
fn local_infeasibility_is_reported_without_ub() {
    // All units forced on by their minimum output exceed the lowest demand.
    let inst = load_case("case6ww", 1);
    let base = run_base(&inst, &RunOptions::default()).unwrap();
    assert_eq!(base.report.outcome, Outcome::LocalInf);
    assert!(base.report.ub.is_none() && base.report.gap_pct.is_none());
    assert!(base.report.lb.is_some());
}
