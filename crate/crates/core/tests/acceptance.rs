//! Acceptance criteria A1–A9. Each criterion prints one PASS/FAIL line; the
//! test fails if any criterion fails.

mod common;

use std::cell::Cell;
use std::io::Write;
use std::time::Instant;

use common::{cell, config, direct_samples, rel};
use lssm::audit::{check_budget, BudgetTolerance};
use lssm::ensemble::{run_ensemble, run_member, RunContext};
use lssm::field::{Grid, Spectral};
use lssm::integrate::{InitialCondition, StepRecord};
use lssm::noise::RngStream;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Writes past the test harness's output capture so the verdicts appear in
/// a plain `cargo test` log.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

thread_local! {
    static MAX_DIV: Cell<f64> = const { Cell::new(0.0) };
}

fn note_div(x: f64) {
    MAX_DIV.with(|m| m.set(m.get().max(x)));
}

fn note_records(recs: &[StepRecord]) {
    for r in recs {
        note_div(r.div_residual);
    }
}

fn energy_identity_defect(r: &StepRecord) -> f64 {
    let scale = r.ke_pre.max(r.ke_unfactored).max(r.incr_sq);
    if scale == 0.0 {
        return 0.0;
    }
    ((r.ke_unfactored - r.ke_pre) - (2.0 * r.incr_dot_u + r.incr_sq)).abs() / scale
}

const STOKES: &str = r#"
seed = 1
[grid]
n = 32
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

fn a1() -> Outcome {
    let ctx = RunContext::new(&config(STOKES)).unwrap();
    let run = run_member(&ctx, 0).unwrap();
    note_records(&run.records);
    let amp = 0.1 / 0.15;
    let exact = ctx.spectral().from_fn(|x| [amp * x[1].sin(), 0.0, 0.0]).unwrap();
    let field_err = (run.final_state.u.sub(&exact).unwrap().norm_l2_sq() / exact.norm_l2_sq()).sqrt();
    let eps = run.summary.stats.unwrap().eps;
    let eps_exact = 0.1 * 0.1 / (2.0 * 0.15);
    let eps_err = rel(eps, eps_exact);
    outcome(
        field_err <= 1e-6 && eps_err <= 1e-6,
        format!("field rel err {field_err:.2e}, eps {eps:.12} vs {eps_exact:.12} (rel {eps_err:.2e})"),
    )
}

const CALIBRATION: &str = r#"
seed = 3
[grid]
n = 32
ell = 6.283185307179586
[flow]
nu = 0.05
nu_bar = 0.02
r = 3.0
[forcing]
type = "modes"
entries = [{ k = [0, 1, 0], amplitude = [0.1, 0.0, 0.0], phase = "sin" }]
[noise]
mode = "additive"
sigma0 = 0.05
kmax = 1
[time]
dt_max = 0.004
T = 1.0
[init]
type = "random"
kmax = 4
energy = 20.0
"#;

fn a3() -> Outcome {
    let ctx = RunContext::new(&config(CALIBRATION)).unwrap();
    let ns = ctx.noise();
    let p = ctx.params();
    let fine_dt = 1e-3;
    let fine_steps = 1000;
    let mut path_rng = RngStream::new(77, 0);
    let fine: Vec<Vec<f64>> = (0..fine_steps).map(|_| ns.draw_brownian(fine_dt, &mut path_rng).unwrap()).collect();
    let mut residuals = Vec::new();
    let mut max_identity = 0.0f64;
    for group in [4usize, 2, 1] {
        let dt = fine_dt * group as f64;
        let mut state = ctx.initial_state(0).unwrap();
        let mut records = Vec::new();
        for chunk in fine.chunks(group) {
            let mut db = vec![0.0; ns.len()];
            for inc in chunk {
                for (a, b) in db.iter_mut().zip(inc) {
                    *a += b;
                }
            }
            records.push(ctx.stepper.step_driven(&mut state, dt, &db).unwrap());
        }
        note_records(&records);
        max_identity = records.iter().map(energy_identity_defect).fold(max_identity, f64::max);
        let tol = BudgetTolerance { rate: 0.0, abs: f64::MAX };
        residuals.push(check_budget(&records, None, p, &tol).unwrap().residual);
    }
    let q1 = residuals[0].abs() / residuals[1].abs();
    let q2 = residuals[1].abs() / residuals[2].abs();
    outcome(
        max_identity <= 1e-12 && q1 >= 1.6 && q2 >= 1.6,
        format!(
            "identity defect {max_identity:.2e}; residuals {:.3e} {:.3e} {:.3e}; ratios {q1:.3} {q2:.3}",
            residuals[0], residuals[1], residuals[2]
        ),
    )
}

const ADDITIVE_SMALL: &str = r#"
seed = 4
[grid]
n = 16
ell = 6.283185307179586
[flow]
nu = 0.1
nu_bar = 0.0
r = 2.0
[noise]
mode = "additive"
sigma0 = 0.1
kmax = 1
[time]
dt_max = 0.02
T = 5.0
[ensemble]
members = 64
"#;

fn a4() -> Outcome {
    let rep = run_ensemble(&config(ADDITIVE_SMALL)).unwrap();
    note_div(rep.audit.max_div_residual);
    let m = rep.audit.martingale.unwrap();
    outcome(
        m.pass_mean && m.pass_increment,
        format!(
            "mean 2Σ(gΔW,u) = {:.3e} ± {:.3e}; increment defect {:.3e} ± {:.3e}; variance defect {:.3e} ± {:.3e}",
            m.mean, m.stderr, m.increment_defect, m.increment_stderr, m.variance_defect, m.variance_stderr
        ),
    )
}

const DECAY: &str = r#"
seed = 5
[grid]
n = 16
ell = 6.283185307179586
[flow]
nu = 0.1
nu_bar = 0.0
r = 2.0
[time]
dt_max = 0.01
T = 10.0
[init]
type = "mode"
entries = [{ k = [0, 1, 0], amplitude = [1.0, 0.0, 0.0] }]
"#;

const STATIONARY: &str = r#"
seed = 6
[grid]
n = 16
ell = 6.283185307179586
[flow]
nu = 0.1
nu_bar = 0.0
r = 2.0
[noise]
mode = "additive"
sigma0 = 0.1
kmax = 1
[time]
dt_max = 0.05
T = 30.0
burn_in = 20.0
[ensemble]
members = 64
"#;

fn a5() -> Outcome {
    let ctx = RunContext::new(&config(DECAY)).unwrap();
    let run = run_member(&ctx, 0).unwrap();
    note_records(&run.records);
    let e0 = run.summary.initial.ke;
    let decay_err = run
        .records
        .iter()
        .map(|r| rel(r.ke_post, e0 * (-2.0 * 0.1 * r.t_end()).exp()))
        .fold(0.0, f64::max);

    let cfg = config(STATIONARY);
    let rep = run_ensemble(&cfg).unwrap();
    note_div(rep.audit.max_div_residual);
    let vol = Grid::new(16, cfg.grid.ell).unwrap().volume();
    let stationary = rep.pooled.u * rep.pooled.u * vol;
    let se = rep.stderr.u_sq * vol;
    let bound = rep.pooled.rho_infty / 0.1;
    let envelope_pass = rep.audit.envelope.as_ref().is_some_and(|e| e.pass);
    outcome(
        decay_err <= 1e-8 && stationary <= bound + 3.0 * se && envelope_pass,
        format!(
            "decay rel err {decay_err:.2e}; stationary E‖u‖² = {stationary:.4e} ± {se:.2e} vs ρ∞/(νλ₁) = {bound:.4e}; envelope {}",
            if envelope_pass { "ok" } else { "violated" }
        ),
    )
}

fn sweep_config(nu: f64) -> String {
    format!(
        r#"
seed = 7
[grid]
n = 32
ell = 6.283185307179586
[flow]
nu = {nu}
nu_bar = 0.01
r = 3.0
[forcing]
type = "modes"
entries = [{{ k = [0, 1, 0], amplitude = [0.1, 0.0, 0.0], phase = "sin" }}]
[noise]
mode = "additive"
sigma0 = 0.02
kmax = 1
[time]
dt_policy = "cfl"
dt_max = 0.05
T = 20.0
burn_in = 5.0
[init]
type = "random"
kmax = 2
energy = 1.0
[ensemble]
members = 16
"#
    )
}

const RATIO_CAP: f64 = 4.0;

fn a6() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for nu in [0.1, 0.05, 0.025] {
        let rep = run_ensemble(&config(&sweep_config(nu))).unwrap();
        note_div(rep.audit.max_div_residual);
        let b = &rep.bound;
        let ratio = b.ratio_b3.unwrap_or(f64::NAN);
        let ok = b.pass_b1 && b.pass_b2 && ratio.is_finite() && ratio <= RATIO_CAP && rep.survivors == rep.members;
        pass &= ok;
        parts.push(format!(
            "nu={nu}: B1 {:.3e} (tol {:.1e}) B2 {:.3e} (tol {:.1e}) ratio {ratio:.4}",
            b.residual_b1, b.tol_b1, b.residual_b2, b.tol_b2
        ));
    }
    outcome(pass, parts.join("; "))
}

fn a7() -> Outcome {
    let g = Grid::new(16, 1.7).unwrap();
    let sp = Spectral::new(g);
    let ic = InitialCondition::Random { kmax: g.dealias_kmax(), energy: 3.0 };
    let mut rng = RngStream::new(8, 0);
    let dv = cell(&g);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let u = ic.build(&sp, &mut rng).unwrap();
        let v = ic.build(&sp, &mut rng).unwrap();
        let du = direct_samples(&u);
        let dvs = direct_samples(&v);
        let pts = g.points();
        let l2 = dv * (0..3).map(|i| du.u[i].iter().map(|x| x * x).sum::<f64>()).sum::<f64>();
        let inner = dv * (0..3).map(|i| du.u[i].iter().zip(&dvs.u[i]).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>();
        let frob: Vec<f64> = (0..pts).map(|p| du.grad.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt()).collect();
        let g2 = dv * frob.iter().map(|x| x * x).sum::<f64>();
        let g3 = dv * frob.iter().map(|x| x * x * x).sum::<f64>();
        let gmax = frob.iter().copied().fold(0.0, f64::max);
        let grad = sp.gradient(&u);
        let errs = [
            rel(u.norm_l2_sq(), l2),
            rel(sp.to_physical(&u).norm_l2_sq(), l2),
            rel(u.inner_product(&v).unwrap(), inner),
            rel(u.grad_norm_l2_sq(), g2),
            rel(grad.norm_l2_sq(), g2),
            rel(grad.norm_lr_r(3.0).unwrap(), g3),
            rel(grad.norm_lr_r(2.0).unwrap(), g2),
            rel(grad.max_frobenius(), gmax),
        ];
        worst = errs.iter().copied().fold(worst, f64::max);
        note_div(u.divergence_residual());
    }
    outcome(worst <= 1e-10, format!("worst relative disagreement over 100 draws: {worst:.2e}"))
}

fn reduction_config(nu: f64, nu_bar: f64) -> String {
    format!(
        r#"
seed = 9
[grid]
n = 16
ell = 6.283185307179586
[flow]
nu = {nu}
nu_bar = {nu_bar}
r = 2.0
[forcing]
type = "modes"
entries = [{{ k = [0, 1, 0], amplitude = [0.5, 0.0, 0.0] }}, {{ k = [1, 0, 1], amplitude = [0.0, 0.3, 0.0], phase = "cos" }}]
[noise]
mode = "additive"
sigma0 = 0.05
kmax = 1
[time]
dt_max = 0.01
T = 10.0
[init]
type = "random"
kmax = 3
energy = 50.0
"#
    )
}

fn a8() -> Outcome {
    let ls = RunContext::new(&config(&reduction_config(0.08, 0.04))).unwrap();
    let ns = RunContext::new(&config(&reduction_config(0.12, 0.0))).unwrap();
    let mut a = ls.initial_state(0).unwrap();
    let mut b = ns.initial_state(0).unwrap();
    let mut worst = 0.0f64;
    let mut eps_gap = 0.0f64;
    for _ in 0..1000 {
        let ra = ls.stepper.step(&mut a, None).unwrap();
        let rb = ns.stepper.step(&mut b, None).unwrap();
        note_div(ra.div_residual.max(rb.div_residual));
        let d = a.u.sub(&b.u).unwrap();
        let scale = a.u.coeffs().iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
        let diff = d.coeffs().iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
        worst = worst.max(diff / scale);
        let eps_a = 0.08 * ra.grad_l2_sq + 0.04 * ra.grad_lr_r;
        let eps_b = 0.12 * rb.grad_l2_sq;
        eps_gap = eps_gap.max(rel(eps_a, eps_b));
    }
    outcome(
        worst <= 1e-10 && eps_gap <= 1e-10,
        format!("max coefficient deviation {worst:.2e}; dissipation rate deviation {eps_gap:.2e}"),
    )
}

const REPRO: &str = r#"
seed = 10
[grid]
n = 8
ell = 6.283185307179586
[flow]
nu = 0.05
nu_bar = 0.02
r = 3.0
[forcing]
type = "modes"
entries = [{ k = [0, 1, 0], amplitude = [0.2, 0.0, 0.0] }]
[noise]
mode = "multiplicative"
sigma0 = 0.02
kmax = 1
[time]
dt_max = 0.02
T = 1.0
burn_in = 0.5
[init]
type = "random"
kmax = 2
energy = 5.0
[ensemble]
members = 8
parallel_width = 1
"#;

fn a9() -> Outcome {
    let cfg = config(REPRO);
    let first = serde_json::to_string(&run_ensemble(&cfg).unwrap()).unwrap();
    let second = serde_json::to_string(&run_ensemble(&cfg).unwrap()).unwrap();
    let mut wide = cfg.clone();
    wide.ensemble.parallel_width = 4;
    let rep = run_ensemble(&wide).unwrap();
    note_div(rep.audit.max_div_residual);
    let third = serde_json::to_string(&rep).unwrap();
    outcome(
        first == second && first == third,
        format!(
            "{} bytes; repeat {}, width 4 {}",
            first.len(),
            if first == second { "identical" } else { "differs" },
            if first == third { "identical" } else { "differs" }
        ),
    )
}

#[test]
fn acceptance_suite() {
    let criteria: [(&str, &str, fn() -> Outcome); 8] = [
        ("A1", "steady Stokes", a1),
        ("A3", "energy identity and budget convergence", a3),
        ("A4", "martingale mean zero", a4),
        ("A5", "energy envelope", a5),
        ("A6", "bound chain over viscosity sweep", a6),
        ("A7", "norm oracle", a7),
        ("A8", "Navier-Stokes reduction", a8),
        ("A9", "reproducibility", a9),
    ];
    let only: Option<Vec<String>> = std::env::var("LSSM_ACCEPTANCE").ok().map(|s| s.split(',').map(str::to_string).collect());
    let mut lines = Vec::new();
    let mut all = true;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == id)) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let line = format!(
            "{id} {} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        report(&line);
        all &= o.pass;
        lines.push(line);
    }
    let div = MAX_DIV.with(Cell::get);
    let div_pass = div <= 1e-12;
    let line = format!(
        "A2 {} incompressibility: max divergence residual over all snapshots above {div:.2e}",
        if div_pass { "PASS" } else { "FAIL" }
    );
    report(&line);
    all &= div_pass;
    lines.push(line);
    assert!(all, "acceptance failures:\n{}", lines.join("\n"));
}
