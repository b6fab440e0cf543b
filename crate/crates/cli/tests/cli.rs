use std::path::PathBuf;
use std::process::{Command, Output};

use acuc_core::pipeline::{reports_from_csv, Mode, Outcome};

fn acuc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acuc")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("acuc-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn case9() -> String {
    format!("{}/../../cases/case9.m", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn generate_then_solve_writes_a_report() {
    let inst = scratch("case9.json");
    let out = acuc(&["generate", "--case", &case9(), "--seed", "3", "--out", inst.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let again = scratch("case9b.json");
    acuc(&["generate", "--case", &case9(), "--seed", "3", "--out", again.to_str().unwrap()]);
    assert_eq!(std::fs::read(&inst).unwrap(), std::fs::read(&again).unwrap());

    let csv = scratch("misocp.csv");
    let out = acuc(&["misocp", "--instance", inst.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("%Gap"), "{table}");
    let reports = reports_from_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].mode, Mode::Misocp);
    assert_eq!(reports[0].outcome, Outcome::Ok);
    assert!(reports[0].gap_pct.unwrap() <= 2.0);
}

#[test]
fn every_mode_runs_on_a_case_file() {
    for mode in ["dc", "misocp", "misocp++", "decomp"] {
        let csv = scratch(&format!("{mode}.csv"));
        let out = acuc(&[mode, "--instance", &case9(), "--seed", "2", "--cut-rounds", "2", "--out", csv.to_str().unwrap()]);
        assert!(out.status.success(), "{mode}: {}", String::from_utf8_lossy(&out.stderr));
        let r = &reports_from_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap()[0];
        assert_eq!(r.mode.label(), mode);
        if mode == "decomp" {
            assert_eq!(r.b, Some(4));
            let log = String::from_utf8(out.stdout).unwrap();
            assert!(log.lines().any(|l| l.starts_with("iter 1, block 3,")), "{log}");
        }
    }
}

#[test]
fn indivisible_block_count_is_an_error() {
    let out = acuc(&["decomp", "--instance", &case9(), "--blocks", "5"]);
    assert!(!out.status.success());
}

#[test]
fn missing_instance_is_an_error() {
    let out = acuc(&["misocp", "--instance", "/nonexistent/case.m"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/case.m"));
    assert!(!acuc(&["opf", "--instance", &case9()]).status.success());
}
