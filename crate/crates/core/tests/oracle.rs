mod common;

use acuc_core::bnb::{solve_misocp, MipOptions, MipStatus};
use acuc_core::formulation::build_misocp;
use acuc_core::lagrangian::{run_decomposition, DecompositionOptions};
use common::{ac_enumeration, desk_instance, enumeration_optimum, rel_diff};

fn exact() -> MipOptions {
    MipOptions { rel_gap: 1e-9, ..Default::default() }
}

#[test]
fn misocp_matches_enumeration_on_desk_instances() {
    let start = std::time::Instant::now();
    let mut compared = 0;
    for seed in 0..24 {
        let inst = desk_instance(seed);
        let Some((oracle, _)) = enumeration_optimum(&inst) else { continue };
        let r = solve_misocp(&build_misocp(&inst), &exact(), &[]).unwrap();
        assert_eq!(r.status, MipStatus::OptimalWithinGap, "seed {seed}");
        let inc = r.incumbent_obj.unwrap();
        assert!(rel_diff(inc, oracle) <= 1e-6, "seed {seed}: misocp {inc} vs oracle {oracle}");
        assert!(r.schedule.unwrap().is_valid(&inst));
        compared += 1;
    }
    assert!(compared >= 20, "only {compared} feasible desk instances");
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

fn check_bookkeeping(res: &acuc_core::lagrangian::DecompositionResult) {
    for w in res.iterations.windows(2) {
        assert!(w[1].best_lb >= w[0].best_lb);
        if let (Some(a), Some(c)) = (w[0].best_ub, w[1].best_ub) {
            assert!(c <= a);
        }
    }
    let gaps: Vec<f64> = res.iterations.iter().filter_map(|r| r.gap).collect();
    if let (Some(first), Some(last)) = (gaps.first(), gaps.last()) {
        assert!(last <= first);
    }
}

#[test]
fn plain_decomposition_brackets_the_enumeration_optimum() {
    for seed in 0..8 {
        let inst = desk_instance(seed);
        let Some((oracle, _)) = enumeration_optimum(&inst) else { continue };
        let full = solve_misocp(&build_misocp(&inst), &exact(), &[]).unwrap();
        for b in [1, 2] {
            let opts = DecompositionOptions { blocks: b, gap_target: 0.0, plain: true, ..Default::default() };
            let res = run_decomposition(&inst, &opts).unwrap();
            let tol = 1e-6 * oracle.abs();
            assert!(res.best_lb <= oracle + tol, "seed {seed} b {b}: lb {} > oracle {oracle}", res.best_lb);
            if let Some(ub) = res.best_ub {
                assert!(ub >= oracle - tol, "seed {seed} b {b}: ub {ub} < oracle {oracle}");
            }
            check_bookkeeping(&res);
            if b == 1 {
                assert!(rel_diff(full.best_bound, res.best_lb) <= 0.01, "seed {seed}: {} vs {}", res.best_lb, full.best_bound);
            }
        }
    }
}

#[test]
fn strengthened_decomposition_stays_below_ac_dispatches() {
    for seed in 0..8 {
        let inst = desk_instance(seed);
        let Some(ac) = ac_enumeration(&inst) else { continue };
        let Some((relaxed, _)) = enumeration_optimum(&inst) else { continue };
        for b in [1, 2] {
            let opts = DecompositionOptions { blocks: b, gap_target: 0.0, ..Default::default() };
            let res = run_decomposition(&inst, &opts).unwrap();
            assert!(res.best_lb <= ac * (1.0 + 1e-6), "seed {seed} b {b}: lb {} > ac {ac}", res.best_lb);
            if b == 1 {
                // Cuts only strengthen the bare relaxation, up to the subproblem tolerance.
                assert!(res.best_lb >= relaxed * (1.0 - 0.01));
            }
            check_bookkeeping(&res);
        }
    }
}
