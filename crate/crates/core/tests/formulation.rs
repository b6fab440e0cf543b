mod common;

use acuc_core::conic::solve_conic;
use acuc_core::feasibility::recover_dispatch;
use acuc_core::formulation::{build_dc_uc, build_misocp, build_mopf, build_socp, build_uc_minlp, to_text, Tag, VarKind};
use acuc_core::schedule::CommitmentSchedule;
use common::{desk_instance, load_case};

#[test]
fn misocp_has_three_binaries_per_unit_period() {
    let inst = load_case("case9", 1);
    let m = build_misocp(&inst);
    assert_eq!(m.n_binaries(), 3 * 3 * 24);
    assert!(m.binaries().all(|j| m.variables[j].kind.is_commitment()));
    assert!(m.socs.len() + m.rotated.len() > 0);
    let tags = m.tags();
    for t in [Tag::ConeRelaxation, Tag::MinUp, Tag::MinDown, Tag::RampUp, Tag::RampDown, Tag::StartupLogic] {
        assert!(tags.contains(&t), "{t:?}");
    }
    assert!(!tags.contains(&Tag::CosineConsistency) && !tags.contains(&Tag::AngleConsistency));
    assert!(m.var(VarKind::Theta, 0, 0).is_none());
}

#[test]
fn exact_models_keep_consistency_rows() {
    let inst = load_case("case9", 1);
    let uc = build_uc_minlp(&inst).tags();
    let opf = build_mopf(&inst, None).tags();
    for tags in [&uc, &opf] {
        assert!(tags.contains(&Tag::CosineConsistency) && tags.contains(&Tag::AngleConsistency));
    }
    assert!(uc.contains(&Tag::MinUp) && !opf.contains(&Tag::MinUp));
}

#[test]
fn dc_uc_drops_ramping_and_cones() {
    let inst = load_case("case14", 1);
    let m = build_dc_uc(&inst);
    let tags = m.tags();
    assert!(!tags.contains(&Tag::RampUp) && !tags.contains(&Tag::RampDown));
    assert!(tags.contains(&Tag::DcBalance) && tags.contains(&Tag::DcFlow));
    // Only the quadratic cost epigraphs are conic.
    assert!(m.socs.is_empty() && m.psds.is_empty());
    assert!(m.rotated.iter().all(|c| c.info.tag == Tag::CostEpigraph));
    let theta = m.v(VarKind::Theta, 1, 0);
    assert!(m.variables[theta].lo.is_infinite() && m.variables[theta].hi.is_infinite());
}

#[test]
fn off_units_produce_nothing() {
    let inst = load_case("case9", 1);
    let mut s = CommitmentSchedule::all_on(3, 24);
    s.u[2] = vec![false; 24];
    let m = build_socp(&inst, Some(&s));
    let sol = solve_conic(&m, &Default::default()).unwrap();
    assert!(sol.is_optimal());
    for t in 0..24 {
        assert!(sol.primal[m.v(VarKind::Pg, 2, t)].abs() < 1e-6);
        assert!(sol.primal[m.v(VarKind::Qg, 2, t)].abs() < 1e-6);
    }
}

#[test]
fn cone_relaxation_is_below_the_ac_dispatch() {
    for inst in [load_case("case9", 2), desk_instance(4)] {
        let s = CommitmentSchedule::all_on(inst.network.n_generators(), inst.horizon);
        let relaxed = solve_conic(&build_socp(&inst, Some(&s)), &Default::default()).unwrap();
        let out = recover_dispatch(&inst, &s, None).unwrap();
        assert!(out.is_feasible());
        let ac = out.dispatch.unwrap().cost - s.fixed_cost(&inst);
        assert!(relaxed.bound() <= ac + 1e-6 * ac.abs(), "{}: {} > {ac}", inst.name, relaxed.bound());
        // Close to tight on these lightly loaded cases.
        assert!(relaxed.bound() >= ac * 0.99, "{}: {} vs {ac}", inst.name, relaxed.bound());
    }
}

#[test]
fn text_export_lists_every_variable() {
    let inst = desk_instance(0);
    let m = build_misocp(&inst);
    let text = to_text(&m);
    assert!(text.starts_with("NAME desk0:misocp"));
    assert!(text.contains(&format!("VARIABLES {}", m.n_vars())));
    assert_eq!(text.lines().filter(|l| l.ends_with(" B")).count(), m.n_binaries());
    assert!(text.contains("OBJECTIVE"));
}
