mod common;

use common::config;
use lssm::checkpoint::{decode, encode};
use lssm::ensemble::{finalize, merge, run_ensemble, run_member, run_member_from, run_partial, RunContext};
use lssm::Error;

const BASE: &str = r#"
seed = 21
[grid]
n = 8
ell = 6.283185307179586
[flow]
nu = 0.1
nu_bar = 0.02
r = 3.0
[forcing]
type = "modes"
entries = [{ k = [0, 1, 0], amplitude = [0.3, 0.0, 0.0] }]
[noise]
mode = "additive"
sigma0 = 0.05
[time]
dt_max = 0.02
T = 1.0
burn_in = 0.4
[init]
type = "random"
kmax = 2
energy = 4.0
"#;

#[test]
fn single_member_ensemble_matches_trajectory() {
    let cfg = config(BASE);
    let ctx = RunContext::new(&cfg).unwrap();
    let run = run_member(&ctx, 0).unwrap();
    let rep = run_ensemble(&cfg).unwrap();
    assert_eq!(rep.members, 1);
    assert_eq!(rep.pooled, run.summary.stats.unwrap());
    assert_eq!(rep.stderr.eps, 0.0);
}

#[test]
fn noise_off_members_agree_exactly() {
    let mut cfg = config(BASE);
    cfg.noise.mode = lssm::config::NoiseSwitch::Off;
    cfg.init = lssm::integrate::InitialCondition::Mode {
        entries: vec![lssm::dynamics::ForcingMode { k: [1, 0, 0], amplitude: [0.0, 0.5, 0.0], phase: Default::default() }],
    };
    cfg.ensemble.members = 4;
    let rep = run_ensemble(&cfg).unwrap();
    assert_eq!(rep.stderr.eps, 0.0);
    assert_eq!(rep.stderr.u_sq, 0.0);
    let first = rep.trajectories[0].stats.unwrap();
    assert!(rep.trajectories.iter().all(|t| t.stats.unwrap() == first));
    assert_eq!(rep.pooled, first);
}

#[test]
fn merged_partials_equal_one_run() {
    let mut cfg = config(BASE);
    cfg.ensemble.members = 8;
    let ctx = RunContext::new(&cfg).unwrap();
    let whole = finalize(&ctx, &run_partial(&ctx, 0..8).unwrap()).unwrap();
    let a = run_partial(&ctx, 0..3).unwrap();
    let b = run_partial(&ctx, 3..8).unwrap();
    let ab = finalize(&ctx, &merge(&a, &b).unwrap()).unwrap();
    let ba = finalize(&ctx, &merge(&b, &a).unwrap()).unwrap();
    let json = |r| serde_json::to_string(r).unwrap();
    assert_eq!(json(&whole), json(&ab));
    assert_eq!(json(&ab), json(&ba));
    assert!(matches!(merge(&a, &a), Err(Error::Merge(_))));
    let mut other = cfg.clone();
    other.seed += 1;
    let octx = RunContext::new(&other).unwrap();
    let c = run_partial(&octx, 8..9).unwrap();
    assert!(matches!(merge(&a, &c), Err(Error::Merge(_))));
}

#[test]
fn restart_from_checkpoint_is_bitwise() {
    let cfg = config(BASE);
    let ctx = RunContext::new(&cfg).unwrap();
    let full = run_member(&ctx, 2).unwrap();

    let mut half = cfg.clone();
    half.time.horizon = 0.5;
    let hctx = RunContext::new(&half).unwrap();
    let first = run_member(&hctx, 2).unwrap();
    let resumed = decode(&encode(&first.final_state)).unwrap();
    let rest = run_member_from(&ctx, 2, resumed).unwrap();
    assert_eq!(encode(&rest.final_state), encode(&full.final_state));
    let tail = &full.records[first.records.len()..];
    assert_eq!(tail, rest.records.as_slice());
}

#[test]
fn zero_horizon_reports_initial_state_only() {
    let mut cfg = config(BASE);
    cfg.time.horizon = 0.0;
    cfg.time.burn_in = 0.0;
    let ctx = RunContext::new(&cfg).unwrap();
    let run = run_member(&ctx, 0).unwrap();
    assert!(run.records.is_empty());
    assert_eq!(run.summary.steps, 0);
    assert!((run.summary.initial.ke - 4.0).abs() <= 1e-12 * 4.0);
    assert!(run.summary.stats.is_none());
}

#[test]
fn too_few_survivors_is_an_error() {
    let mut cfg = config(BASE);
    cfg.ensemble.members = 2;
    let ctx = RunContext::new(&cfg).unwrap();
    let mut partial = run_partial(&ctx, 0..2).unwrap();
    for s in partial.members.values_mut() {
        s.valid = false;
    }
    assert!(matches!(finalize(&ctx, &partial), Err(Error::Ensemble(_))));
}
