//! End-to-end checks of the command-line surface: every subcommand, the
//! config-file grammar with flag overrides, and the file formats they
//! exchange.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_orbdmrg"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("orbdmrg-cli-{tag}-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn ed_prints_dimer_ground_energy() {
    let out = bin()
        .args(["ed", "--n", "2", "--p", "2", "--t0", "1.0", "--u0", "4.0", "--gamma", "inf"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let value: f64 = text.trim().strip_prefix("E0 = ").unwrap().parse().unwrap();
    let expect = (4.0 - (16.0f64 + 16.0).sqrt()) / 2.0;
    assert!((value - expect).abs() < 1e-9, "{value} vs {expect}");
}

#[test]
fn hf_reports_mean_field_energy_and_writes_basis() {
    let dir = temp_dir("hf");
    let basis = dir.join("basis.json");
    let out = bin()
        .args(["hf", "--n", "2", "--p", "2", "--u0", "2.0", "--gamma", "inf"])
        .args(["--out", basis.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("E_HF = "));
    assert!(basis.exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn rotate_with_identity_is_lossless() {
    use orbdmrg::operators::{build_hubbard, Boundary, OperatorFile};
    let dir = temp_dir("rotate");
    let op = build_hubbard(3, 1, 1.0, 2.0, 1.0, Boundary::Open).unwrap();
    let op_path = dir.join("op.json");
    std::fs::write(
        &op_path,
        serde_json::to_string(&OperatorFile::from_operator(&op, None)).unwrap(),
    )
    .unwrap();
    let u_path = dir.join("unit.json");
    orbdmrg::driver::UnitaryFile::write(&u_path, &orbdmrg::CMat::identity(3, 3)).unwrap();
    let out_path = dir.join("rotated.json");
    let out = bin()
        .args(["rotate", "--operator", op_path.to_str().unwrap()])
        .args(["--unitary", u_path.to_str().unwrap()])
        .args(["--out", out_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = std::fs::read_to_string(&out_path).unwrap();
    let parsed: OperatorFile = serde_json::from_str(&text).unwrap();
    let (restored, _) = parsed.to_operator().unwrap();
    let dev_t = orbdmrg::linalg::max_diff(&op.t, &restored.t);
    let dev_v = op
        .v
        .iter()
        .zip(restored.v.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0f64, f64::max);
    assert!(dev_t <= 1e-15 && dev_v <= 1e-15, "t {dev_t:.2e} v {dev_v:.2e}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn run_config_overrides_and_mi_on_checkpoint() {
    let dir = temp_dir("run");
    let config_path = dir.join("run.conf");
    std::fs::write(
        &config_path,
        "# tiny smoke run\n\
         model = hubbard\n\
         n = 4\n\
         p = 1\n\
         t0 = 1.0\n\
         u0 = 2.0\n\
         gamma = 1.0\n\
         d_max = 64\n\
         eps_trc = 0\n\
         plain_sweeps = 5\n\
         opt_sweeps = 0\n\
         reorder = false\n\
         seed = 5\n",
    )
    .unwrap();
    let out = bin()
        .args(["run", "--config", config_path.to_str().unwrap()])
        .args(["--set", "plain_sweeps=6"])
        .args(["--out-dir", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let energy: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("final energy: "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    // The override took effect: six sweeps appear in the report.
    let report = std::fs::read_to_string(dir.join("report.jsonl")).unwrap();
    let max_sweep = report
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["sweep"].as_u64().unwrap())
        .max()
        .unwrap();
    assert_eq!(max_sweep, 5);
    // Exactness against the in-process oracle.
    let (op, _) = orbdmrg::driver::build_model(&orbdmrg::driver::ModelSpec::Hubbard {
        n: 4,
        p: 1,
        t0: 1.0,
        u0: 2.0,
        gamma: 1.0,
        boundary: orbdmrg::operators::Boundary::Open,
    })
    .unwrap();
    let (e_exact, _) = orbdmrg::oracle::exact_ground_state(&op, Some(&[2])).unwrap();
    assert!((energy - e_exact).abs() <= 1e-8 * e_exact.abs());

    // `mi` renders a symmetric matrix with a zero diagonal.
    let out = bin()
        .args(["mi", "--checkpoint", dir.join("checkpoint.json").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split_whitespace().map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for q in 0..4 {
        assert_eq!(rows[q][q], 0.0);
        for r in 0..4 {
            assert!((rows[q][r] - rows[r][q]).abs() < 1e-12);
            assert!(rows[q][r] > -1e-10);
        }
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bad_flags_fail_with_nonzero_exit() {
    let out = bin().args(["run", "--set", "model"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["ed"]).output().unwrap();
    assert!(!out.status.success());
    let text = String::from_utf8(out.stderr).unwrap();
    assert!(text.contains("error"));
}
