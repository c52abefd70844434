//! Checks of the energetic and probabilistic structure on simulation output:
//! the pathwise energy budget, the mean-zero martingale, the uniform energy
//! envelope, and the functional inequalities used along the way.

use serde::{Deserialize, Serialize};

use crate::dynamics::FlowParams;
use crate::error::{param, Error, Result};
use crate::field::{Spectral, SpectralVelocity};
use crate::integrate::StepRecord;
use crate::noise::{NoiseMode, NoiseSpec};
use crate::stats::{mean_exact, std_error, StatsAccumulator};

/// `tol = rate · dt_max · Σ|terms| + abs`, with `rate` in 1/time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetTolerance {
    pub rate: f64,
    pub abs: f64,
}

impl Default for BudgetTolerance {
    fn default() -> Self {
        Self { rate: 1.0, abs: 1e-10 }
    }
}

/// Energy budget over a contiguous window:
///
/// ```text
/// Δke + 2∫ν‖∇u‖² + 2∫ν̄‖∇u‖ᵣʳ  ≤  ∫Tr(g*g) + 2∫(f,u) + 2Σ(gΔW,u) + Σ(‖gΔW‖² − Tr·dt)
/// ```
///
/// The last term is the zero-mean difference between the realized and the
/// expected quadratic variation of the noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub steps: u64,
    pub dt_max: f64,
    pub delta_ke: f64,
    pub viscous: f64,
    pub power_law: f64,
    pub trace: f64,
    pub forcing: f64,
    pub martingale: f64,
    pub qv_defect: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl BudgetWindow {
    pub fn lhs(&self) -> [f64; 3] {
        [self.delta_ke, self.viscous, self.power_law]
    }

    pub fn rhs(&self) -> [f64; 4] {
        [self.trace, self.forcing, self.martingale, self.qv_defect]
    }
}

/// Budget over the records intersecting `[t_start, t_end]` (all if `None`).
pub fn check_budget(
    records: &[StepRecord],
    window: Option<(f64, f64)>,
    p: &FlowParams,
    tol: &BudgetTolerance,
) -> Result<BudgetWindow> {
    let sel: Vec<&StepRecord> = match window {
        None => records.iter().collect(),
        Some((a, b)) => {
            if !(b >= a) {
                return Err(Error::Window(format!("empty window [{a}, {b}]")));
            }
            records.iter().filter(|r| r.t >= a - 1e-12 && r.t_end() <= b + 1e-12).collect()
        }
    };
    for w in sel.windows(2) {
        let (a, b) = (w[0], w[1]);
        let gap = (b.t - a.t_end()).abs();
        if gap > 1e-9 * a.t_end().abs().max(1.0) || a.ke_post != b.ke_pre {
            return Err(Error::Window(format!("gap in records between t = {} and t = {}", a.t_end(), b.t)));
        }
    }
    let mut out = BudgetWindow {
        t_start: sel.first().map_or(0.0, |r| r.t),
        t_end: sel.last().map_or(0.0, |r| r.t_end()),
        steps: sel.len() as u64,
        dt_max: 0.0,
        delta_ke: 0.0,
        viscous: 0.0,
        power_law: 0.0,
        trace: 0.0,
        forcing: 0.0,
        martingale: 0.0,
        qv_defect: 0.0,
        residual: 0.0,
        tolerance: tol.abs,
        pass: true,
    };
    let (Some(first), Some(last)) = (sel.first(), sel.last()) else {
        return Ok(out);
    };
    out.delta_ke = last.ke_post - first.ke_pre;
    for r in &sel {
        out.dt_max = out.dt_max.max(r.dt);
        out.viscous += 2.0 * p.nu * r.grad_l2_sq * r.dt;
        out.power_law += 2.0 * p.nu_bar * r.grad_lr_r * r.dt;
        out.trace += r.trace_gg * r.dt;
        out.forcing += 2.0 * r.f_dot_u * r.dt;
        out.martingale += 2.0 * r.noise_dot_u;
        out.qv_defect += r.noise_sq - r.trace_gg * r.dt;
    }
    out.residual = out.lhs().iter().sum::<f64>() - out.rhs().iter().sum::<f64>();
    let scale: f64 = out.lhs().iter().chain(out.rhs().iter()).map(|x| x.abs()).sum();
    out.tolerance = tol.rate * out.dt_max * scale + tol.abs;
    if !out.residual.is_finite() {
        return Err(Error::StateCorruption { t: out.t_end, what: "non-finite budget".into() });
    }
    out.pass = out.residual <= out.tolerance;
    Ok(out)
}

/// Ensemble test of `E[2∫(g,u)dW] = 0` and of the two variance identities
/// `E[Σ‖gΔW‖²] = E[∫Tr(g*g)dt]` and `E[M²] = E[⟨M⟩]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub members: usize,
    pub mean: f64,
    pub stderr: f64,
    pub pass_mean: bool,
    /// Mean and standard error of `Σ‖gΔW‖² − ∫Tr dt`.
    pub increment_defect: f64,
    pub increment_stderr: f64,
    pub pass_increment: bool,
    /// Mean and standard error of `M² − ⟨M⟩`.
    pub variance_defect: f64,
    pub variance_stderr: f64,
    pub pass_variance: bool,
}

impl MartingaleReport {
    pub fn pass(&self) -> bool {
        self.pass_mean && self.pass_increment && self.pass_variance
    }
}

pub const MIN_MARTINGALE_MEMBERS: usize = 8;

/// One accumulator per trajectory, all over the same horizon.
pub fn check_martingale_zero(runs: &[StatsAccumulator]) -> Result<MartingaleReport> {
    if runs.len() < MIN_MARTINGALE_MEMBERS {
        return Err(Error::InsufficientSample { needed: MIN_MARTINGALE_MEMBERS, got: runs.len() });
    }
    let m: Vec<f64> = runs.iter().map(|a| 2.0 * a.sum_noise_dot_u).collect();
    let inc: Vec<f64> = runs.iter().map(|a| a.sum_noise_sq - a.int_trace_gg).collect();
    let var: Vec<f64> = runs.iter().map(|a| 4.0 * a.sum_noise_dot_u * a.sum_noise_dot_u - a.sum_mart_qv).collect();
    let (mean, stderr) = (mean_exact(&m), std_error(&m));
    let (increment_defect, increment_stderr) = (mean_exact(&inc), std_error(&inc));
    let (variance_defect, variance_stderr) = (mean_exact(&var), std_error(&var));
    Ok(MartingaleReport {
        members: runs.len(),
        mean,
        stderr,
        pass_mean: mean.abs() <= 3.0 * stderr,
        increment_defect,
        increment_stderr,
        pass_increment: increment_defect.abs() <= 5.0 * increment_stderr,
        variance_defect,
        variance_stderr,
        pass_variance: variance_defect.abs() <= 5.0 * variance_stderr,
    })
}

/// Ensemble energy against the Grönwall envelope
/// `E‖u₀‖²e^{−βt} + (ρ∞ + ‖f‖²/(νλ₁))(1 − e^{−βt})/β`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub beta: f64,
    pub times: Vec<f64>,
    pub empirical: Vec<f64>,
    pub envelope: Vec<f64>,
    pub margin: Vec<f64>,
    pub mc_stderr: Vec<f64>,
    pub pass: bool,
    /// Smallest `margin + 3·stderr`.
    pub worst_slack: f64,
}

/// Exponential rate of the envelope; refuses multiplicative noise with
/// `ρ∞ ≥ νλ₁`.
pub fn envelope_rate(p: &FlowParams, ns: &NoiseSpec) -> Result<f64> {
    let nl = p.nu * ns.grid().lambda1();
    match ns.mode() {
        NoiseMode::Additive => Ok(nl),
        NoiseMode::Multiplicative => {
            let rho = ns.rho_infty();
            if rho >= nl {
                Err(Error::AssumptionViolation(format!(
                    "uniform energy bound needs rho_infty < nu·lambda1; got {rho} ≥ {nl}"
                )))
            } else {
                Ok(nl - rho)
            }
        }
    }
}

/// `envelope(t)` for initial mean energy `e0` and `‖f‖² = f_norm_sq`.
pub fn envelope_value(t: f64, e0: f64, beta: f64, p: &FlowParams, ns: &NoiseSpec, f_norm_sq: f64) -> f64 {
    let nl = p.nu * ns.grid().lambda1();
    let source = ns.rho_infty() + f_norm_sq / nl;
    let decay = (-beta * t).exp();
    e0 * decay + source * (-(-beta * t).exp_m1()) / beta
}

/// `series[k]` holds `(t, ‖u(t)‖²)` of trajectory `k`, starting at `t = 0`;
/// all trajectories must share the time grid.
pub fn check_envelope(
    series: &[Vec<(f64, f64)>],
    p: &FlowParams,
    ns: &NoiseSpec,
    f_norm_sq: f64,
) -> Result<EnvelopeCheck> {
    let beta = envelope_rate(p, ns)?;
    let first = series.first().ok_or(Error::InsufficientSample { needed: 1, got: 0 })?;
    if first.is_empty() {
        return Err(param("empty energy series"));
    }
    for s in series {
        if s.len() != first.len() || s.iter().zip(first).any(|(a, b)| (a.0 - b.0).abs() > 1e-9 * b.0.abs().max(1.0)) {
            return Err(Error::Window("trajectories do not share a time grid".into()));
        }
    }
    let e0 = mean_exact(&series.iter().map(|s| s[0].1).collect::<Vec<_>>());
    let mut out = EnvelopeCheck {
        beta,
        times: Vec::with_capacity(first.len()),
        empirical: Vec::with_capacity(first.len()),
        envelope: Vec::with_capacity(first.len()),
        margin: Vec::with_capacity(first.len()),
        mc_stderr: Vec::with_capacity(first.len()),
        pass: true,
        worst_slack: f64::INFINITY,
    };
    let t0 = first[0].0;
    for i in 0..first.len() {
        let vals: Vec<f64> = series.iter().map(|s| s[i].1).collect();
        let t = first[i].0;
        let emp = mean_exact(&vals);
        let se = std_error(&vals);
        let env = envelope_value(t - t0, e0, beta, p, ns, f_norm_sq);
        // Relative slack for rounding in exactly saturated cases.
        let slack = env - emp + 3.0 * se + 1e-12 * env.abs();
        out.times.push(t);
        out.empirical.push(emp);
        out.envelope.push(env);
        out.margin.push(env - emp);
        out.mc_stderr.push(se);
        out.worst_slack = out.worst_slack.min(slack);
        if slack < 0.0 {
            out.pass = false;
        }
    }
    Ok(out)
}

/// Slack `rhs − lhs` of each inequality for one snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseMargins {
    pub poincare: f64,
    pub cauchy_schwarz: f64,
    pub holder: f64,
    pub advection: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseReport {
    pub snapshots: usize,
    pub margins: Vec<PointwiseMargins>,
    /// `(snapshot, inequality)` of each failure.
    pub violations: Vec<(usize, String)>,
}

impl PointwiseReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// For each snapshot `u`:
///
/// ```text
/// λ₁‖u‖² ≤ ‖∇u‖²
/// |(∇u, ∇f)| ≤ ‖∇u‖ ‖∇f‖
/// |(|∇u|^{r−2}∇u, ∇f)| ≤ (‖∇u‖ᵣʳ)^{(r−1)/r} (‖∇f‖ᵣʳ)^{1/r}
/// |(u⊗u, ∇f)| ≤ ‖∇f‖∞ ‖u‖²
/// ```
pub fn check_pointwise_inequalities(
    sp: &Spectral,
    snapshots: &[SpectralVelocity],
    f: &SpectralVelocity,
    p: &FlowParams,
) -> Result<PointwiseReport> {
    let grid = *sp.grid();
    grid.ensure_same(f.grid())?;
    let r = p.r;
    let gf = sp.gradient(f);
    let gf_l2 = f.grad_norm_l2_sq().sqrt();
    let gf_lr = gf.norm_lr_r(r)?;
    let gf_inf = gf.max_frobenius();
    let mut report = PointwiseReport { snapshots: snapshots.len(), margins: Vec::new(), violations: Vec::new() };
    for (id, u) in snapshots.iter().enumerate() {
        grid.ensure_same(u.grid())?;
        let ke = u.norm_l2_sq();
        let g2 = u.grad_norm_l2_sq();
        let gu = sp.gradient(u);
        let poincare = g2 * (1.0 + 1e-10) - grid.lambda1() * ke;
        let cs_lhs = crate::dynamics::grad_inner(sp, u, f).abs();
        let cauchy_schwarz = g2.sqrt() * gf_l2 * (1.0 + 1e-10) - cs_lhs;
        let stress = gu.power_law(r);
        let h_lhs = stress.inner_product(&gf)?.abs();
        let h_rhs = gu.norm_lr_r(r)?.powf((r - 1.0) / r) * gf_lr.powf(1.0 / r);
        let holder = h_rhs * (1.0 + 1e-8) - h_lhs;
        let phys = sp.to_physical(u);
        let c = phys.components();
        let cell = grid.cell_volume();
        let mut a_lhs = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let g = gf.entry(i, j);
                a_lhs += (0..grid.points()).map(|q| c[i][q] * c[j][q] * g[q]).sum::<f64>();
            }
        }
        let a_lhs = (a_lhs * cell).abs();
        // Collocation ‖u‖² equals the spectral one for band-limited u.
        let advection = gf_inf * ke * (1.0 + 1e-10) - a_lhs;
        let m = PointwiseMargins { poincare, cauchy_schwarz, holder, advection };
        for (name, v) in [("poincare", poincare), ("cauchy_schwarz", cauchy_schwarz), ("holder", holder), ("advection", advection)] {
            if !(v >= 0.0) {
                report.violations.push((id, name.to_string()));
            }
        }
        report.margins.push(m);
    }
    Ok(report)
}
