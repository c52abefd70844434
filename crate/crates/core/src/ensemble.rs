//! Monte Carlo ensembles: trajectory `k` draws from stream `k` of the master
//! seed, trajectories run in parallel, and the reduction runs in index order
//! so reports do not depend on scheduling.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{
    check_budget, check_envelope, check_martingale_zero, check_pointwise_inequalities, BudgetTolerance,
    BudgetWindow, EnvelopeCheck, MartingaleReport, PointwiseReport, MIN_MARTINGALE_MEMBERS,
};
use crate::config::RunConfig;
use crate::dynamics::{FlowParams, Model};
use crate::error::{Error, Result};
use crate::field::{Grid, Spectral};
use crate::integrate::{integrate_to, DtKind, SimState, StepRecord, Stepper};
use crate::noise::{NoiseSpec, RngStream};
use crate::stats::{
    bound_check, forcing_scales, mean_exact, std_error, Averages, B2Variant, BoundReport, BoundTolerances,
    BoundaryTerms, ForcingScales, StatInputs, Statistics, StatsAccumulator,
};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Upper bound on the number of sampled points in each energy series.
const SERIES_POINTS: u64 = 400;

/// Everything shared read-only by the trajectories of one configuration.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub config: RunConfig,
    pub config_hash: String,
    pub stepper: Stepper,
    pub scales: ForcingScales,
    pub inputs: StatInputs,
    pub budget_tol: BudgetTolerance,
    pub b2_variant: B2Variant,
}

impl RunContext {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let sp = Spectral::new(grid);
        let params = config.flow_params();
        let model = Model::new(sp.clone(), params.clone())?;
        let noise = config.noise_spec(grid)?;
        let scales = forcing_scales(&sp, model.forcing(), params.r)?;
        let inputs = StatInputs {
            nu: params.nu,
            nu_bar: params.nu_bar,
            r: params.r,
            rho_infty: noise.rho_infty(),
            volume: grid.volume(),
        };
        let stepper = Stepper::new(model, noise, config.dt_policy())?;
        Ok(Self {
            config: config.clone(),
            config_hash: config.hash(),
            stepper,
            scales,
            inputs,
            budget_tol: BudgetTolerance::default(),
            b2_variant: B2Variant::NuBar,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.stepper.model().grid()
    }

    pub fn spectral(&self) -> &Spectral {
        self.stepper.spectral()
    }

    pub fn params(&self) -> &FlowParams {
        self.stepper.model().params()
    }

    pub fn noise(&self) -> &NoiseSpec {
        self.stepper.noise()
    }

    /// Initial state of trajectory `index`.
    pub fn initial_state(&self, index: u64) -> Result<SimState> {
        let mut rng = RngStream::new(self.config.seed, index);
        let u = self.config.init.build(self.spectral(), &mut rng)?;
        Ok(SimState { u, t: 0.0, step_index: 0, rng })
    }

    fn series_stride(&self) -> u64 {
        let t = &self.config.time;
        let est = (t.horizon / t.dt_max).ceil().max(1.0) as u64;
        est.div_ceil(SERIES_POINTS).max(1)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InitialDiagnostics {
    pub ke: f64,
    pub grad_l2_sq: f64,
    pub div_residual: f64,
}

/// Per-trajectory results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub index: u64,
    pub seed: u64,
    pub valid: bool,
    pub abort: Option<String>,
    pub steps: u64,
    pub t_final: f64,
    pub initial: InitialDiagnostics,
    /// Whole run and post-burn-in window.
    pub raw: StatsAccumulator,
    pub post: StatsAccumulator,
    pub raw_stats: Option<Statistics>,
    pub stats: Option<Statistics>,
    pub budget: Option<BudgetWindow>,
    pub budget_post: Option<BudgetWindow>,
    /// Sum over the post window of the per-step defect in the discrete
    /// identity for `(u, f)`.
    pub f_defect: f64,
    pub max_div_residual: f64,
    /// Largest relative defect of `‖v‖² = ‖u‖² + 2(v−u, u) + ‖v−u‖²`.
    pub max_energy_identity_defect: f64,
    pub pointwise: Option<PointwiseReport>,
    /// `(t, ‖u(t)‖²)` sampled on a fixed step stride.
    #[serde(skip)]
    pub ke_series: Vec<(f64, f64)>,
}

/// A finished trajectory with its in-memory artifacts.
#[derive(Clone, Debug)]
pub struct MemberRun {
    pub summary: TrajectorySummary,
    pub records: Vec<StepRecord>,
    pub final_state: SimState,
}

fn energy_identity_defect(r: &StepRecord) -> f64 {
    let lhs = r.ke_unfactored - r.ke_pre;
    let rhs = 2.0 * r.incr_dot_u + r.incr_sq;
    let scale = r.ke_pre.max(r.ke_unfactored).max(r.incr_sq);
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}

fn f_step_defect(r: &StepRecord, p: &FlowParams, f_norm_sq: f64) -> f64 {
    let drift = f_norm_sq - r.adv_dot_f - p.nu * r.grad_dot_grad_f - p.nu_bar * r.stress_dot_grad_f;
    (r.f_dot_u_post - r.f_dot_u) - r.dt * drift - r.noise_dot_f
}

/// Runs trajectory `index` from its initial state to `T`.
pub fn run_member(ctx: &RunContext, index: u64) -> Result<MemberRun> {
    let state = ctx.initial_state(index)?;
    run_member_from(ctx, index, state)
}

/// Continues trajectory `index` from `state` to `T`.
pub fn run_member_from(ctx: &RunContext, index: u64, mut state: SimState) -> Result<MemberRun> {
    let cfg = &ctx.config;
    let grid = *ctx.grid();
    let p = ctx.params().clone();
    let f_norm_sq = ctx.stepper.model().forcing_norm_sq();
    let horizon = cfg.time.horizon;
    let burn_in = cfg.time.burn_in;
    let stride = ctx.series_stride();
    let eps_t = 1e-9 * cfg.time.dt_max;

    let initial = InitialDiagnostics {
        ke: state.u.norm_l2_sq(),
        grad_l2_sq: state.u.grad_norm_l2_sq(),
        div_residual: state.u.divergence_residual(),
    };
    let mut summary = TrajectorySummary {
        index,
        seed: cfg.seed,
        valid: true,
        abort: None,
        steps: 0,
        t_final: state.t,
        initial,
        raw: StatsAccumulator::default(),
        post: StatsAccumulator::default(),
        raw_stats: None,
        stats: None,
        budget: None,
        budget_post: None,
        f_defect: 0.0,
        max_div_residual: initial.div_residual,
        max_energy_identity_defect: 0.0,
        pointwise: None,
        ke_series: vec![(state.t, initial.ke)],
    };
    let mut records = Vec::new();
    let outcome = integrate_to(&ctx.stepper, &mut state, horizon, |rec, st| {
        summary.raw.push(rec)?;
        if rec.t >= burn_in - eps_t {
            summary.post.push(rec)?;
            summary.f_defect += f_step_defect(rec, &p, f_norm_sq);
        }
        summary.max_div_residual = summary.max_div_residual.max(rec.div_residual);
        summary.max_energy_identity_defect = summary.max_energy_identity_defect.max(energy_identity_defect(rec));
        if st.step_index % stride == 0 {
            summary.ke_series.push((st.t, rec.ke_post));
        }
        records.push(*rec);
        Ok(())
    });
    summary.steps = records.len() as u64;
    summary.t_final = state.t;
    if let Err(e) = outcome {
        match e {
            Error::StateCorruption { .. } => {
                summary.valid = false;
                summary.abort = Some(e.to_string());
            }
            other => return Err(other),
        }
    }
    if summary.valid {
        if summary.raw.elapsed > 0.0 {
            summary.raw_stats = Some(Statistics::from_averages(&summary.raw.averages(&grid)?, &ctx.inputs, &ctx.scales));
            summary.budget = Some(check_budget(&records, None, &p, &ctx.budget_tol)?);
        }
        if summary.post.elapsed > 0.0 {
            summary.stats = Some(Statistics::from_averages(&summary.post.averages(&grid)?, &ctx.inputs, &ctx.scales));
            let post: Vec<StepRecord> = records.iter().filter(|r| r.t >= burn_in - eps_t).copied().collect();
            summary.budget_post = Some(check_budget(&post, None, &p, &ctx.budget_tol)?);
        }
        summary.pointwise = Some(check_pointwise_inequalities(
            ctx.spectral(),
            std::slice::from_ref(&state.u),
            ctx.stepper.model().forcing(),
            &p,
        )?);
    }
    Ok(MemberRun { summary, records, final_state: state })
}

/// Trajectories computed so far for one configuration, keyed by index.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsemblePartial {
    pub config_hash: String,
    pub members: BTreeMap<u64, TrajectorySummary>,
}

impl EnsemblePartial {
    pub fn empty(config_hash: impl Into<String>) -> Self {
        Self { config_hash: config_hash.into(), members: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Union of two partials over disjoint index sets of the same configuration.
pub fn merge(a: &EnsemblePartial, b: &EnsemblePartial) -> Result<EnsemblePartial> {
    if a.config_hash != b.config_hash {
        return Err(Error::Merge(format!("config hash {} differs from {}", a.config_hash, b.config_hash)));
    }
    let mut members = a.members.clone();
    for (k, v) in &b.members {
        if members.insert(*k, v.clone()).is_some() {
            return Err(Error::Merge(format!("trajectory {k} appears in both partials")));
        }
    }
    Ok(EnsemblePartial { config_hash: a.config_hash.clone(), members })
}

fn pool(width: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(width.max(1))
        .build()
        .map_err(|e| Error::Ensemble(format!("thread pool: {e}")))
}

/// Runs the given trajectory indices.
pub fn run_partial(ctx: &RunContext, indices: impl IntoIterator<Item = u64>) -> Result<EnsemblePartial> {
    run_partial_with(ctx, indices, |_| Ok(()))
}

/// Like [`run_partial`], handing every finished trajectory to `sink` (on a
/// worker thread) before its records are dropped.
pub fn run_partial_with<F>(ctx: &RunContext, indices: impl IntoIterator<Item = u64>, sink: F) -> Result<EnsemblePartial>
where
    F: Fn(&MemberRun) -> Result<()> + Sync,
{
    let idx: Vec<u64> = indices.into_iter().collect();
    let runs: Vec<Result<TrajectorySummary>> = pool(ctx.config.ensemble.parallel_width)?.install(|| {
        idx.par_iter()
            .map(|&k| {
                let m = run_member(ctx, k)?;
                sink(&m)?;
                Ok(m.summary)
            })
            .collect()
    });
    let mut out = EnsemblePartial::empty(ctx.config_hash.clone());
    for (k, r) in idx.iter().zip(runs) {
        out.members.insert(*k, r?);
    }
    Ok(out)
}

/// Standard errors of the pooled quantities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PooledStderr {
    pub eps0: f64,
    #[serde(rename = "epsM")]
    pub eps_m: f64,
    pub eps: f64,
    #[serde(rename = "U2")]
    pub u_sq: f64,
    #[serde(rename = "G2")]
    pub g2: f64,
    pub f_dot_u: f64,
    #[serde(rename = "residual_B1")]
    pub residual_b1: f64,
    #[serde(rename = "residual_B2")]
    pub residual_b2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub budget_pass: usize,
    pub budget_fail: Vec<u64>,
    pub martingale: Option<MartingaleReport>,
    pub martingale_note: Option<String>,
    pub envelope: Option<EnvelopeCheck>,
    pub envelope_note: Option<String>,
    pub pointwise_violations: usize,
    pub max_div_residual: f64,
    pub max_energy_identity_defect: f64,
}

impl AuditSummary {
    pub fn pass(&self) -> bool {
        self.budget_fail.is_empty()
            && self.martingale.as_ref().is_none_or(|m| m.pass())
            && self.envelope.as_ref().is_none_or(|e| e.pass)
            && self.pointwise_violations == 0
            && self.max_div_residual <= 1e-12
            && self.max_energy_identity_defect <= 1e-12
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub n: usize,
    pub members: usize,
    pub survivors: usize,
    pub forcing_scales: ForcingScales,
    pub pooled: Statistics,
    pub raw_pooled: Option<Statistics>,
    pub stderr: PooledStderr,
    pub bound: BoundReport,
    pub audit: AuditSummary,
    pub trajectories: Vec<TrajectorySummary>,
    pub pass: bool,
}

/// Pooled statistics, bound check and audits over the members of `partial`.
pub fn finalize(ctx: &RunContext, partial: &EnsemblePartial) -> Result<EnsembleReport> {
    if partial.config_hash != ctx.config_hash {
        return Err(Error::Merge("partial belongs to another configuration".into()));
    }
    let grid = *ctx.grid();
    let vol = grid.volume();
    let all: Vec<&TrajectorySummary> = partial.members.values().collect();
    let m = all.len();
    if m == 0 {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    let surv: Vec<&TrajectorySummary> = all.iter().copied().filter(|s| s.valid && s.stats.is_some()).collect();
    if 2 * surv.len() < m {
        return Err(Error::Ensemble(format!("only {} of {m} trajectories survived", surv.len())));
    }

    let post_avgs: Vec<Averages> = surv.iter().map(|s| s.post.averages(&grid)).collect::<Result<_>>()?;
    let pooled = Statistics::from_averages(&Averages::mean(&post_avgs)?, &ctx.inputs, &ctx.scales);
    let raw_avgs: Vec<Averages> = surv
        .iter()
        .filter(|s| s.raw.elapsed > 0.0)
        .map(|s| s.raw.averages(&grid))
        .collect::<Result<_>>()?;
    let raw_pooled = if raw_avgs.is_empty() {
        None
    } else {
        Some(Statistics::from_averages(&Averages::mean(&raw_avgs)?, &ctx.inputs, &ctx.scales))
    };

    let per: Vec<&Statistics> = surv.iter().map(|s| s.stats.as_ref().unwrap()).collect();
    let col = |f: &dyn Fn(&Statistics) -> f64| per.iter().map(|s| f(s)).collect::<Vec<f64>>();
    let ke_b: Vec<f64> = surv.iter().map(|s| s.post.ke_boundary(&grid)).collect();
    let f_b: Vec<f64> = surv.iter().map(|s| s.post.f_boundary(&grid)).collect();
    let boundary = BoundaryTerms { ke: mean_exact(&ke_b), f: mean_exact(&f_b) };

    let b1_k: Vec<f64> = per
        .iter()
        .zip(&ke_b)
        .map(|(s, kb)| 0.5 * s.g2 + s.f * s.u - s.eps - kb)
        .collect();
    let b2_k: Vec<f64> = per
        .iter()
        .zip(&f_b)
        .map(|(s, fb)| {
            let corr = if s.f > 0.0 { fb / s.f } else { 0.0 };
            s.b2_terms(ctx.b2_variant).iter().sum::<f64>() + corr - s.f
        })
        .collect();
    let stderr = PooledStderr {
        eps0: std_error(&col(&|s| s.eps0)),
        eps_m: std_error(&col(&|s| s.eps_m)),
        eps: std_error(&col(&|s| s.eps)),
        u_sq: std_error(&col(&|s| s.u * s.u)),
        g2: std_error(&col(&|s| s.g2)),
        f_dot_u: std_error(&col(&|s| s.f_dot_u)),
        residual_b1: std_error(&b1_k),
        residual_b2: std_error(&b2_k),
    };

    let elapsed = pooled.horizon;
    let budget_res: Vec<f64> = surv.iter().map(|s| s.budget_post.map_or(0.0, |b| b.residual)).collect();
    let quad_b1 = mean_exact(&budget_res).abs() / (2.0 * vol * elapsed);
    let defects: Vec<f64> = surv.iter().map(|s| s.f_defect).collect();
    let quad_b2 = if pooled.f > 0.0 { mean_exact(&defects).abs() / (vol * elapsed * pooled.f) } else { 0.0 };
    let floor_b1 = 1e-12 * (0.5 * pooled.g2 + pooled.f * pooled.u + pooled.eps).max(1e-300);
    let floor_b2 = 1e-12 * pooled.f.max(pooled.u * pooled.u / pooled.l).max(1e-300);
    let tol = BoundTolerances {
        b1: quad_b1 + 3.0 * stderr.residual_b1 + floor_b1,
        b2: quad_b2 + 3.0 * stderr.residual_b2 + floor_b2,
    };
    let bound = bound_check(&pooled, &boundary, &tol, ctx.b2_variant)?;

    let audit = audit_members(ctx, &surv);
    let pass = bound.pass() && audit.pass() && surv.len() == m;
    Ok(EnsembleReport {
        config_hash: ctx.config_hash.clone(),
        code_version: CODE_VERSION.to_string(),
        seed: ctx.config.seed,
        n: grid.n(),
        members: m,
        survivors: surv.len(),
        forcing_scales: ctx.scales,
        pooled,
        raw_pooled,
        stderr,
        bound,
        audit,
        trajectories: all.into_iter().cloned().collect(),
        pass,
    })
}

fn audit_members(ctx: &RunContext, surv: &[&TrajectorySummary]) -> AuditSummary {
    let budget_fail: Vec<u64> = surv.iter().filter(|s| s.budget.is_some_and(|b| !b.pass)).map(|s| s.index).collect();
    let budget_pass = surv.iter().filter(|s| s.budget.is_some_and(|b| b.pass)).count();
    let raws: Vec<StatsAccumulator> = surv.iter().map(|s| s.raw).collect();
    let (martingale, martingale_note) = match check_martingale_zero(&raws) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (envelope, envelope_note) = if ctx.config.time.dt_policy != DtKind::Fixed {
        (None, Some("adaptive steps: trajectories do not share a time grid".to_string()))
    } else {
        let series: Vec<Vec<(f64, f64)>> = surv.iter().map(|s| s.ke_series.clone()).collect();
        match check_envelope(&series, ctx.params(), ctx.noise(), ctx.stepper.model().forcing_norm_sq()) {
            Ok(e) => (Some(e), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    AuditSummary {
        budget_pass,
        budget_fail,
        martingale,
        martingale_note: martingale_note.or_else(|| {
            (surv.len() < MIN_MARTINGALE_MEMBERS).then(|| "too few trajectories".to_string())
        }),
        envelope,
        envelope_note,
        pointwise_violations: surv
            .iter()
            .map(|s| s.pointwise.as_ref().map_or(0, |p| p.violations.len()))
            .sum(),
        max_div_residual: surv.iter().map(|s| s.max_div_residual).fold(0.0, f64::max),
        max_energy_identity_defect: surv.iter().map(|s| s.max_energy_identity_defect).fold(0.0, f64::max),
    }
}

/// `M = config.ensemble.members` trajectories with streams `0..M`.
pub fn run_ensemble(config: &RunConfig) -> Result<EnsembleReport> {
    let ctx = RunContext::new(config)?;
    let partial = run_partial(&ctx, 0..config.ensemble.members as u64)?;
    finalize(&ctx, &partial)
}
