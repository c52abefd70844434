//! Command implementations behind the `lssm` binary.
//!
//! Artifacts live under `<root>/<config_hash>/<seed>/`:
//!
//! ```text
//! config.toml            canonical config
//! ensemble.json          report (ensemble command)
//! <index>/records.csv    per-step diagnostics
//! <index>/summary.json   trajectory summary
//! <index>/final.ckpt     terminal state
//! ```
//!
//! The root is `$LSSM_ARTIFACT_ROOT`, or `./artifacts` when unset.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lssm::audit::{
    check_budget, check_envelope, check_martingale_zero, check_pointwise_inequalities, BudgetTolerance, BudgetWindow,
    EnvelopeCheck, MartingaleReport, PointwiseReport,
};
use lssm::checkpoint;
use lssm::config::RunConfig;
use lssm::ensemble::{
    finalize, run_member_from, run_partial_with, EnsemblePartial, EnsembleReport, MemberRun, RunContext,
    TrajectorySummary, CODE_VERSION,
};
use lssm::integrate::{DtKind, StepRecord};
use serde::{Deserialize, Serialize};

pub const ARTIFACT_ROOT_ENV: &str = "LSSM_ARTIFACT_ROOT";

pub const CSV_COLUMNS: [&str; 10] = [
    "t", "dt", "ke", "grad_l2_sq", "grad_lr_r", "trace_gg", "f_dot_u", "noise_dot_u", "noise_sq", "div_residual",
];

pub fn artifact_root(explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(ARTIFACT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("artifacts")),
    }
}

pub fn run_dir(root: &Path, cfg: &RunConfig) -> PathBuf {
    root.join(cfg.hash()).join(cfg.seed.to_string())
}

/// One CSV row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    pub t: f64,
    pub dt: f64,
    pub ke: f64,
    pub grad_l2_sq: f64,
    pub grad_lr_r: f64,
    pub trace_gg: f64,
    pub f_dot_u: f64,
    pub noise_dot_u: f64,
    pub noise_sq: f64,
    pub div_residual: f64,
}

impl From<&StepRecord> for CsvRecord {
    fn from(r: &StepRecord) -> Self {
        Self {
            t: r.t,
            dt: r.dt,
            ke: r.ke_pre,
            grad_l2_sq: r.grad_l2_sq,
            grad_lr_r: r.grad_lr_r,
            trace_gg: r.trace_gg,
            f_dot_u: r.f_dot_u,
            noise_dot_u: r.noise_dot_u,
            noise_sq: r.noise_sq,
            div_residual: r.div_residual,
        }
    }
}

pub fn write_records_csv(path: &Path, records: &[StepRecord], cadence: u64) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for (i, r) in records.iter().enumerate() {
        if i as u64 % cadence.max(1) == 0 {
            w.serialize(CsvRecord::from(r))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<CsvRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if headers != CSV_COLUMNS {
        bail!("{}: unexpected columns {headers:?}", path.display());
    }
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// Contents of `<index>/summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberArtifact {
    pub config_hash: String,
    pub code_version: String,
    pub trajectory: TrajectorySummary,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_member(dir: &Path, ctx: &RunContext, m: &MemberRun) -> Result<()> {
    let d = dir.join(m.summary.index.to_string());
    fs::create_dir_all(&d)?;
    write_records_csv(&d.join("records.csv"), &m.records, ctx.config.output.cadence)?;
    let art = MemberArtifact {
        config_hash: ctx.config_hash.clone(),
        code_version: CODE_VERSION.to_string(),
        trajectory: m.summary.clone(),
    };
    write_json(&d.join("summary.json"), &art)?;
    if ctx.config.output.checkpoint {
        checkpoint::save(&d.join("final.ckpt"), &m.final_state)?;
    }
    Ok(())
}

fn prepare_dir(root: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = run_dir(root, cfg);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(dir)
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub report: EnsembleReport,
}

/// One trajectory (stream `index`), optionally continued from a checkpoint.
pub fn cmd_run(cfg: &RunConfig, root: &Path, index: u64, restart: Option<&Path>) -> Result<RunOutcome> {
    let ctx = RunContext::new(cfg)?;
    let state = match restart {
        Some(p) => checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ctx.initial_state(index)?,
    };
    let dir = prepare_dir(root, cfg)?;
    let m = run_member_from(&ctx, index, state)?;
    write_member(&dir, &ctx, &m)?;
    let mut partial = EnsemblePartial::empty(ctx.config_hash.clone());
    partial.members.insert(index, m.summary);
    let report = finalize(&ctx, &partial)?;
    write_json(&dir.join(index.to_string()).join("report.json"), &report)?;
    Ok(RunOutcome { dir, report })
}

/// `ensemble.members` trajectories; writes every member and `ensemble.json`.
pub fn cmd_ensemble(cfg: &RunConfig, root: &Path) -> Result<RunOutcome> {
    let ctx = RunContext::new(cfg)?;
    let dir = prepare_dir(root, cfg)?;
    let partial = run_partial_with(&ctx, 0..cfg.ensemble.members as u64, |m| {
        write_member(&dir, &ctx, m).map_err(|e| lssm::Error::Ensemble(format!("{e:#}")))
    })?;
    let report = finalize(&ctx, &partial)?;
    write_json(&dir.join("ensemble.json"), &report)?;
    Ok(RunOutcome { dir, report })
}

/// Audit recomputed from stored artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub config_hash: String,
    pub code_version: String,
    pub members: usize,
    pub budgets: Vec<(u64, Option<BudgetWindow>)>,
    pub budget_note: Option<String>,
    pub martingale: Option<MartingaleReport>,
    pub martingale_note: Option<String>,
    pub envelope: Option<EnvelopeCheck>,
    pub envelope_note: Option<String>,
    pub pointwise: Option<PointwiseReport>,
    pub max_div_residual: f64,
    pub aborted: Vec<u64>,
    pub pass: bool,
}

/// Rebuilds the budget-relevant fields of each step from CSV rows; the
/// last `ke_post` comes from the summary.
fn records_from_csv(rows: &[CsvRecord], last_ke: f64) -> Vec<StepRecord> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| StepRecord {
            t: r.t,
            dt: r.dt,
            ke_pre: r.ke,
            ke_post: rows.get(i + 1).map_or(last_ke, |n| n.ke),
            grad_l2_sq: r.grad_l2_sq,
            grad_lr_r: r.grad_lr_r,
            trace_gg: r.trace_gg,
            f_dot_u: r.f_dot_u,
            noise_dot_u: r.noise_dot_u,
            noise_sq: r.noise_sq,
            div_residual: r.div_residual,
            ..Default::default()
        })
        .collect()
}

pub fn cmd_audit(dir: &Path) -> Result<AuditReport> {
    let text = fs::read_to_string(dir.join("config.toml")).with_context(|| format!("no config.toml in {}", dir.display()))?;
    let cfg = lssm::config::parse_config_str(&text, &[])?;
    let ctx = RunContext::new(&cfg)?;
    let p = ctx.params().clone();
    let mut indices: Vec<u64> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().and_then(|s| s.parse().ok()))
        .collect();
    indices.sort_unstable();
    if indices.is_empty() {
        bail!("no trajectory directories in {}", dir.display());
    }
    let mut budgets = Vec::new();
    let mut raws = Vec::new();
    let mut series = Vec::new();
    let mut snapshots = Vec::new();
    let mut aborted = Vec::new();
    let mut max_div = 0.0f64;
    let cadence = cfg.output.cadence;
    for &k in &indices {
        let d = dir.join(k.to_string());
        let art: MemberArtifact = serde_json::from_str(&fs::read_to_string(d.join("summary.json"))?)?;
        if art.config_hash != ctx.config_hash {
            bail!("{}: config hash {} does not match {}", d.display(), art.config_hash, ctx.config_hash);
        }
        let s = art.trajectory;
        if !s.valid {
            aborted.push(k);
            continue;
        }
        let rows = read_records_csv(&d.join("records.csv"))?;
        max_div = rows.iter().map(|r| r.div_residual).fold(max_div, f64::max);
        if cadence == 1 {
            let recs = records_from_csv(&rows, s.raw.boundary_ke_end);
            let b = if recs.is_empty() { None } else { Some(check_budget(&recs, None, &p, &BudgetTolerance::default())?) };
            budgets.push((k, b));
        }
        let mut ser: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.ke)).collect();
        if ser.is_empty() {
            ser.push((s.t_final, s.initial.ke));
        }
        series.push(ser);
        raws.push(s.raw);
        let ck = d.join("final.ckpt");
        if ck.exists() {
            snapshots.push(checkpoint::load(&ck)?.u);
        }
    }
    let budget_note = (cadence != 1).then(|| "records are thinned; budget not recomputed".to_string());
    let (martingale, martingale_note) = match check_martingale_zero(&raws) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (envelope, envelope_note) = if cfg.time.dt_policy != DtKind::Fixed {
        (None, Some("adaptive steps: trajectories do not share a time grid".to_string()))
    } else {
        match check_envelope(&series, &p, ctx.noise(), ctx.stepper.model().forcing_norm_sq()) {
            Ok(e) => (Some(e), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    let pointwise = if snapshots.is_empty() {
        None
    } else {
        Some(check_pointwise_inequalities(ctx.spectral(), &snapshots, ctx.stepper.model().forcing(), &p)?)
    };
    let pass = budgets.iter().all(|(_, b)| b.is_none_or(|b| b.pass))
        && martingale.as_ref().is_none_or(|m| m.pass())
        && envelope.as_ref().is_none_or(|e| e.pass)
        && pointwise.as_ref().is_none_or(|p| p.pass())
        && max_div <= 1e-12
        && aborted.is_empty();
    Ok(AuditReport {
        config_hash: ctx.config_hash.clone(),
        code_version: CODE_VERSION.to_string(),
        members: indices.len(),
        budgets,
        budget_note,
        martingale,
        martingale_note,
        envelope,
        envelope_note,
        pointwise,
        max_div_residual: max_div,
        aborted,
        pass,
    })
}

/// One row of the viscosity sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub nu: f64,
    #[serde(rename = "Re_nu")]
    pub re_nu: f64,
    pub eps: f64,
    #[serde(rename = "ratio_B3")]
    pub ratio_b3: f64,
    #[serde(rename = "residual_B1")]
    pub residual_b1: f64,
    #[serde(rename = "residual_B2")]
    pub residual_b2: f64,
}

/// Plot data: the scaled dissipation against `Re_ν`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub nu: f64,
    #[serde(rename = "Re_nu")]
    pub re_nu: f64,
    #[serde(rename = "Re_nubar")]
    pub re_nubar: f64,
    pub tau: f64,
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub eps: f64,
    pub eps_stderr: f64,
    #[serde(rename = "eps_L_over_U3")]
    pub eps_scaled: f64,
    #[serde(rename = "ratio_B3")]
    pub ratio_b3: f64,
    #[serde(rename = "tol_B1")]
    pub tol_b1: f64,
    #[serde(rename = "tol_B2")]
    pub tol_b2: f64,
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub reports: Vec<EnsembleReport>,
    pub table: PathBuf,
    pub plot: PathBuf,
    pub pass: bool,
}

/// Ensembles over `nus` at fixed forcing and noise; writes `sweep.csv` and
/// `sweep_plot.csv` into `out`.
pub fn cmd_bound_sweep(cfg: &RunConfig, nus: &[f64], root: &Path, out: &Path, ratio_cap: f64) -> Result<SweepOutcome> {
    if nus.is_empty() {
        bail!("empty viscosity list");
    }
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    let mut plot = Vec::new();
    let mut reports = Vec::new();
    for &nu in nus {
        let mut c = cfg.clone();
        c.flow.nu = nu;
        c.validate()?;
        let rep = cmd_ensemble(&c, root)?.report;
        let st = &rep.pooled;
        let ratio = rep.bound.ratio_b3.unwrap_or(f64::NAN);
        rows.push(SweepRow {
            nu,
            re_nu: st.re_nu,
            eps: st.eps,
            ratio_b3: ratio,
            residual_b1: rep.bound.residual_b1,
            residual_b2: rep.bound.residual_b2,
        });
        plot.push(PlotRow {
            nu,
            re_nu: st.re_nu,
            re_nubar: st.re_nubar,
            tau: st.tau,
            u: st.u,
            l: st.l,
            eps: st.eps,
            eps_stderr: rep.stderr.eps,
            eps_scaled: st.eps * st.l / st.u.powi(3),
            ratio_b3: ratio,
            tol_b1: rep.bound.tol_b1,
            tol_b2: rep.bound.tol_b2,
        });
        reports.push(rep);
    }
    let table = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&table)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let plot_path = out.join("sweep_plot.csv");
    let mut w = csv::Writer::from_path(&plot_path)?;
    for r in &plot {
        w.serialize(r)?;
    }
    w.flush()?;
    let pass = reports.iter().all(|r| r.bound.pass() && r.survivors == r.members)
        && rows.iter().all(|r| r.ratio_b3.is_finite() && r.ratio_b3 <= ratio_cap);
    Ok(SweepOutcome { rows, reports, table, plot: plot_path, pass })
}

/// Shell-summed `|û(κ)|²` of a checkpoint as `(shell, energy)` pairs.
pub fn cmd_spectrum_dump(ckpt: &Path) -> Result<Vec<(usize, f64)>> {
    let (_, u) = checkpoint::read_field(ckpt)?;
    Ok(u.shell_spectrum().into_iter().enumerate().collect())
}
