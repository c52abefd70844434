use std::fs;
use std::path::Path;
use std::process::Command;

use lssm::config::parse_config_str;
use lssm_cli::{cmd_audit, cmd_bound_sweep, cmd_ensemble, cmd_run, cmd_spectrum_dump, read_records_csv, run_dir};

const STOKES: &str = r#"
seed = 1
[grid]
n = 16
ell = 6.283185307179586
[flow]
nu = 0.1
nu_bar = 0.05
r = 2.0
[forcing]
type = "modes"
entries = [{ k = [0, 1, 0], amplitude = [0.1, 0.0, 0.0], phase = "sin" }]
[time]
dt_max = 0.1
T = 200.0
burn_in = 150.0
"#;

const NOISY: &str = r#"
seed = 2
[grid]
n = 8
ell = 6.283185307179586
[flow]
nu = 0.1
nu_bar = 0.02
r = 3.0
[forcing]
type = "modes"
entries = [{ k = [0, 1, 0], amplitude = [0.2, 0.0, 0.0] }]
[noise]
mode = "additive"
sigma0 = 0.05
[time]
dt_max = 0.02
T = 1.0
burn_in = 0.5
[init]
type = "random"
kmax = 2
energy = 2.0
[ensemble]
members = 8
"#;

fn lssm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lssm"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_reports_stokes_dissipation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config_str(STOKES, &[]).unwrap();
    let out = cmd_run(&cfg, tmp.path(), 0, None).unwrap();
    let eps = out.report.pooled.eps;
    let exact = 0.1 * 0.1 / (2.0 * 0.15);
    assert!((eps - exact).abs() <= 1e-6 * exact, "{eps} vs {exact}");
    assert!(out.report.pass);
    let member = out.dir.join("0");
    for f in ["records.csv", "summary.json", "final.ckpt", "report.json"] {
        assert!(member.join(f).exists(), "missing {f}");
    }
    assert_eq!(read_records_csv(&member.join("records.csv")).unwrap().len(), 2000);
    assert_eq!(out.dir, run_dir(tmp.path(), &cfg));

    let spec = cmd_spectrum_dump(&member.join("final.ckpt")).unwrap();
    let total: f64 = spec.iter().map(|(_, e)| e).sum();
    assert!(spec[1].1 > 0.999 * total);
}

#[test]
fn restart_continues_to_same_state() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = parse_config_str(NOISY, &[]).unwrap();
    cfg.ensemble.members = 1;
    let full = cmd_run(&cfg, &tmp.path().join("a"), 0, None).unwrap();
    let mut half = cfg.clone();
    half.time.horizon = 0.5;
    half.time.burn_in = 0.0;
    let first = cmd_run(&half, &tmp.path().join("b"), 0, None).unwrap();
    let ck = first.dir.join("0").join("final.ckpt");
    let rest = cmd_run(&cfg, &tmp.path().join("c"), 0, Some(&ck)).unwrap();
    let a = fs::read(full.dir.join("0").join("final.ckpt")).unwrap();
    let c = fs::read(rest.dir.join("0").join("final.ckpt")).unwrap();
    assert_eq!(a, c);
}

#[test]
fn ensemble_then_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config_str(NOISY, &[]).unwrap();
    let out = cmd_ensemble(&cfg, tmp.path()).unwrap();
    assert_eq!(out.report.members, 8);
    assert!(out.dir.join("ensemble.json").exists());
    let audit = cmd_audit(&out.dir).unwrap();
    assert_eq!(audit.members, 8);
    assert!(audit.martingale.is_some());
    assert!(audit.budgets.iter().all(|(_, b)| b.is_some()));
    assert!(audit.pass, "{audit:#?}");
}

#[test]
fn audit_of_noise_free_run_passes_trivially() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = parse_config_str(NOISY, &[]).unwrap();
    cfg.noise.mode = lssm::config::NoiseSwitch::Off;
    let out = cmd_ensemble(&cfg, tmp.path()).unwrap();
    let audit = cmd_audit(&out.dir).unwrap();
    let m = audit.martingale.unwrap();
    assert_eq!(m.mean, 0.0);
    assert_eq!(m.stderr, 0.0);
    assert!(audit.pass);
}

#[test]
fn bound_sweep_writes_one_row_per_viscosity() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config_str(NOISY, &["time.T=0.6".into(), "time.burn_in=0.2".into()]).unwrap();
    let res = cmd_bound_sweep(&cfg, &[0.1, 0.05, 0.025], &tmp.path().join("art"), tmp.path(), 4.0).unwrap();
    let text = fs::read_to_string(&res.table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].contains("ratio_B3"));
    assert!(res.rows.iter().all(|r| r.ratio_b3.is_finite()));
    assert!(res.plot.exists());
}

#[test]
fn binary_exit_codes_and_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write(tmp.path(), "good.toml", NOISY);
    let echo = lssm().arg("run").arg(&good).args(["--echo", "--set", "flow.nu=0.2"]).output().unwrap();
    assert!(echo.status.success());
    let text = String::from_utf8(echo.stdout).unwrap();
    let back = parse_config_str(&text, &[]).unwrap();
    assert_eq!(back.flow.nu, 0.2);

    let bad = write(tmp.path(), "bad.toml", &NOISY.replace("nu = 0.1", "nu = 0.0"));
    let out = lssm().arg("run").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("flow.nu"));

    let unknown = write(tmp.path(), "unknown.toml", &format!("{NOISY}\n[extra]\nx = 1\n"));
    let out = lssm().arg("ensemble").arg(&unknown).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let root = tmp.path().join("art");
    let out = lssm()
        .arg("ensemble")
        .arg(&good)
        .arg("--root")
        .arg(&root)
        .args(["--members", "8", "--threads", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = parse_config_str(NOISY, &[]).unwrap();
    let dir = run_dir(&root, &cfg);
    let out = lssm().arg("audit").arg(&dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = lssm().arg("spectrum-dump").arg(dir.join("0").join("final.ckpt")).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("shell,energy"));
}

#[test]
fn artifact_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write(tmp.path(), "good.toml", NOISY);
    let root = tmp.path().join("env-root");
    let out = lssm()
        .env("LSSM_ARTIFACT_ROOT", &root)
        .arg("run")
        .arg(&good)
        .args(["--index", "3"])
        .output()
        .unwrap();
    assert!(out.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = parse_config_str(NOISY, &[]).unwrap();
    assert!(run_dir(&root, &cfg).join("3").join("summary.json").exists());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            lssm::config::parse_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
