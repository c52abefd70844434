//! Time stepping: exact integrating factor for the linear viscous term,
//! explicit Euler–Maruyama for advection, power-law stress and noise.
//!
//! One step from `(t, û)` with step `dt` and Brownian increments `ΔB`:
//!
//! ```text
//! v̂  = û + dt·N̂(u) + dt·w(a)·f̂ + ĝ(t,u)ΔB,   a = ν_i|k|²dt, w(a) = (eᵃ − 1)/a
//! û⁺ = P[e^{−a} v̂]
//! ```
//!
//! `ν_i` is `ν`, plus `ν̄` when `r = 2`. The weight `w` integrates the
//! steady forcing exactly against the viscous semigroup, so the steady
//! Stokes solution is a fixed point for every `dt`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{add_mode, Evaluation, ForcingMode, Model};
use crate::error::{param, Error, Result};
use crate::field::{Spectral, SpectralVelocity};
use crate::noise::{NoiseSpec, RngStream};

/// Full simulation state; with the same parameters it determines the rest
/// of the trajectory bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub u: SpectralVelocity,
    pub t: f64,
    pub step_index: u64,
    pub rng: RngStream,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtKind {
    #[default]
    Fixed,
    Cfl,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtPolicy {
    pub kind: DtKind,
    pub dt_max: f64,
    pub c_adv: f64,
    pub c_visc: f64,
}

impl DtPolicy {
    pub fn fixed(dt: f64) -> Self {
        Self { kind: DtKind::Fixed, dt_max: dt, c_adv: 0.5, c_visc: 0.25 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_max.is_finite() && self.dt_max > 0.0) {
            return Err(param(format!("dt_max = {} must be positive", self.dt_max)));
        }
        if self.kind == DtKind::Cfl && !(self.c_adv > 0.0 && self.c_visc > 0.0) {
            return Err(param("CFL constants must be positive"));
        }
        Ok(())
    }
}

const DT_FLOOR: f64 = 1e-30;

/// Admissible step for a state with the given velocity and gradient maxima.
///
/// `min(dt_max, C_adv Δx/‖u‖∞, C_visc Δx²/(3ν̄(r−1)‖∇u‖∞^{r−2}))`; the
/// linear viscosity is exempt, and so is the power-law term at `r = 2`.
pub fn stable_dt(
    u_max: f64,
    grad_max: f64,
    dx: f64,
    nu_bar: f64,
    r: f64,
    policy: &DtPolicy,
) -> f64 {
    match policy.kind {
        DtKind::Fixed => policy.dt_max,
        DtKind::Cfl => {
            let adv = policy.c_adv * dx / (u_max + DT_FLOOR);
            let mut dt = policy.dt_max.min(adv);
            if r > 2.0 && nu_bar > 0.0 {
                let stiff = 3.0 * nu_bar * (r - 1.0) * (grad_max + DT_FLOOR).powf(r - 2.0) + DT_FLOOR;
                dt = dt.min(policy.c_visc * dx * dx / stiff);
            }
            dt
        }
    }
}

/// Per-step diagnostics. Integrands are evaluated at the pre-step state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub ke_pre: f64,
    pub ke_post: f64,
    /// `‖v‖²` before the integrating factor is applied.
    pub ke_unfactored: f64,
    /// `(v − u, u)` and `‖v − u‖²`.
    pub incr_dot_u: f64,
    pub incr_sq: f64,
    pub grad_l2_sq: f64,
    pub grad_lr_r: f64,
    pub trace_gg: f64,
    pub f_dot_u: f64,
    pub f_dot_u_post: f64,
    /// `(gΔW, u)` at the pre-step state.
    pub noise_dot_u: f64,
    pub noise_sq: f64,
    pub noise_dot_f: f64,
    /// `4 Σₖ σₖ²m²A²(eₖ, u)² dt`, the conditional variance of `2(gΔW, u)`.
    pub mart_qv: f64,
    pub adv_dot_f: f64,
    pub grad_dot_grad_f: f64,
    pub stress_dot_grad_f: f64,
    pub div_residual: f64,
}

impl StepRecord {
    pub fn t_end(&self) -> f64 {
        self.t + self.dt
    }
}

/// Stateless stepping engine: model, noise and step policy.
#[derive(Clone, Debug)]
pub struct Stepper {
    model: Model,
    noise: NoiseSpec,
    policy: DtPolicy,
    kk: Vec<u32>,
}

impl Stepper {
    pub fn new(model: Model, noise: NoiseSpec, policy: DtPolicy) -> Result<Self> {
        policy.validate()?;
        model.grid().ensure_same(noise.grid())?;
        let g = *model.grid();
        let kk = (0..g.points())
            .map(|idx| {
                let k = g.wavevector(idx);
                (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as u32
            })
            .collect();
        Ok(Self { model, noise, policy, kk })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn spectral(&self) -> &Spectral {
        self.model.spectral()
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn policy(&self) -> &DtPolicy {
        &self.policy
    }

    fn dt_for(&self, ev: &Evaluation) -> f64 {
        let p = self.model.params();
        stable_dt(ev.u_max, ev.grad_max, self.model.grid().dx(), p.nu_bar, p.r, &self.policy)
    }

    /// One step with `dt` from the policy, clipped so that `t` does not pass
    /// `horizon` by more than rounding. Brownian increments come from the
    /// state's stream.
    pub fn step(&self, state: &mut SimState, horizon: Option<f64>) -> Result<StepRecord> {
        let ev = self.evaluate(state)?;
        let mut dt = self.dt_for(&ev);
        if let Some(h) = horizon {
            let left = h - state.t;
            if left <= 0.0 {
                return Err(param(format!("state time {} is already at horizon {h}", state.t)));
            }
            // A remainder within rounding of a full step keeps the full step,
            // so that a run split at a step boundary takes identical steps.
            if left < dt * (1.0 - 1e-9) {
                dt = left;
            }
        }
        let db = self.noise.draw_brownian(dt, &mut state.rng)?;
        self.advance(state, ev, dt, &db)
    }

    /// One step of size `dt` driven by the given Brownian increments, one per
    /// noise mode; the state's stream is not consumed.
    pub fn step_driven(&self, state: &mut SimState, dt: f64, dbrownian: &[f64]) -> Result<StepRecord> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(param(format!("time step dt = {dt} must be positive")));
        }
        let ev = self.evaluate(state)?;
        self.advance(state, ev, dt, dbrownian)
    }

    /// Whether the state is within a step of `horizon`.
    pub fn reached(&self, state: &SimState, horizon: f64) -> bool {
        horizon - state.t <= 1e-9 * self.policy.dt_max
    }

    fn evaluate(&self, state: &SimState) -> Result<Evaluation> {
        if !state.u.is_finite() {
            return Err(Error::StateCorruption { t: state.t, what: "non-finite velocity".into() });
        }
        self.model.evaluate(&state.u).map_err(|e| match e {
            Error::StateCorruption { what, .. } => Error::StateCorruption { t: state.t, what },
            other => other,
        })
    }

    fn advance(&self, state: &mut SimState, ev: Evaluation, dt: f64, db: &[f64]) -> Result<StepRecord> {
        let t = state.t;
        let g = *self.model.grid();
        let dw = self.noise.increment_from_brownian(&state.u, t, db)?;
        let trace_gg = self.noise.trace_from_energy(ev.ke, t);
        let mart_qv = 4.0 * self.noise.projected_rate(&state.u, t) * dt;

        let nu_i = self.model.params().implicit_nu();
        let lam = g.lambda1();
        let kk_max = *self.kk.iter().max().unwrap_or(&0) as usize;
        let mut decay = vec![1.0; kk_max + 1];
        let mut weight = vec![1.0; kk_max + 1];
        for m in 1..=kk_max {
            let a = nu_i * lam * m as f64 * dt;
            decay[m] = (-a).exp();
            weight[m] = if a > 0.0 { a.exp_m1() / a } else { 1.0 };
        }

        let f = self.model.forcing();
        let with_f = self.model.has_forcing();
        let mut incr = ev.explicit;
        incr.scale(dt);
        {
            let ic = incr.coeffs_mut();
            let (fc, wc) = (f.coeffs(), dw.coeffs());
            for i in 0..3 {
                for idx in 0..g.points() {
                    let mut z = ic[i][idx] + wc[i][idx];
                    if with_f {
                        z += fc[i][idx] * (dt * weight[self.kk[idx] as usize]);
                    }
                    ic[i][idx] = z;
                }
            }
        }
        let incr_dot_u = incr.inner_product(&state.u)?;
        let incr_sq = incr.norm_l2_sq();
        let mut next = state.u.clone();
        next.add_scaled(1.0, &incr)?;
        let ke_unfactored = next.norm_l2_sq();
        for c in next.coeffs_mut().iter_mut() {
            for (idx, z) in c.iter_mut().enumerate() {
                *z *= decay[self.kk[idx] as usize];
            }
        }
        self.model.spectral().project_in_place(&mut next);
        if !next.is_finite() {
            return Err(Error::StateCorruption { t, what: "non-finite velocity after step".into() });
        }

        let noise_dot_u = dw.inner_product(&state.u)?;
        let noise_sq = dw.norm_l2_sq();
        let (noise_dot_f, f_dot_u_post) = if with_f {
            (dw.inner_product(f)?, next.inner_product(f)?)
        } else {
            (0.0, 0.0)
        };
        let rec = StepRecord {
            t,
            dt,
            ke_pre: ev.ke,
            ke_post: next.norm_l2_sq(),
            ke_unfactored,
            incr_dot_u,
            incr_sq,
            grad_l2_sq: ev.grad_l2_sq,
            grad_lr_r: ev.grad_lr_r,
            trace_gg,
            f_dot_u: ev.f_dot_u,
            f_dot_u_post,
            noise_dot_u,
            noise_sq,
            noise_dot_f,
            mart_qv,
            adv_dot_f: ev.adv_dot_f,
            grad_dot_grad_f: ev.grad_dot_grad_f,
            stress_dot_grad_f: ev.stress_dot_grad_f,
            div_residual: next.divergence_residual(),
        };
        if !(rec.ke_post.is_finite() && rec.ke_unfactored.is_finite()) {
            return Err(Error::StateCorruption { t, what: "non-finite energy after step".into() });
        }
        state.u = next;
        state.t = t + dt;
        state.step_index += 1;
        Ok(rec)
    }
}

/// Steps `state` until it reaches `horizon`, calling `on_step` after every
/// step with the record and the updated state.
pub fn integrate_to(
    stepper: &Stepper,
    state: &mut SimState,
    horizon: f64,
    mut on_step: impl FnMut(&StepRecord, &SimState) -> Result<()>,
) -> Result<()> {
    while !stepper.reached(state, horizon) {
        let rec = stepper.step(state, Some(horizon))?;
        on_step(&rec, state)?;
    }
    Ok(())
}

/// Initial velocity field.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialCondition {
    #[default]
    Zero,
    /// Sum of real Fourier modes, projected.
    Mode { entries: Vec<ForcingMode> },
    /// Gaussian coefficients on `0 < max|κᵢ| ≤ kmax`, projected and
    /// rescaled so that `‖u₀‖² = energy`.
    Random { kmax: i32, energy: f64 },
}

impl InitialCondition {
    /// Builds `u₀`; random draws are taken from `rng` before any noise.
    pub fn build(&self, sp: &Spectral, rng: &mut RngStream) -> Result<SpectralVelocity> {
        let g = *sp.grid();
        match self {
            InitialCondition::Zero => Ok(SpectralVelocity::zeros(g)),
            InitialCondition::Mode { entries } => {
                let mut u = SpectralVelocity::zeros(g);
                for m in entries {
                    add_mode(&mut u, m)?;
                }
                sp.project(&u)
            }
            InitialCondition::Random { kmax, energy } => {
                if *kmax < 1 || *kmax > g.dealias_kmax() {
                    return Err(param(format!("init kmax = {kmax} outside [1, {}]", g.dealias_kmax())));
                }
                if !(energy.is_finite() && *energy >= 0.0) {
                    return Err(param(format!("init energy = {energy} must be nonnegative")));
                }
                let mut u = SpectralVelocity::zeros(g);
                let k = *kmax;
                for a in -k..=k {
                    for b in -k..=k {
                        for c in -k..=k {
                            let kappa = [a, b, c];
                            let canonical = kappa.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0);
                            if !canonical {
                                continue;
                            }
                            let plus = g.index_of(kappa).expect("in band");
                            let minus = g.index_of([-a, -b, -c]).expect("in band");
                            let mut z = [num_complex::Complex64::new(0.0, 0.0); 3];
                            for zi in z.iter_mut() {
                                *zi = num_complex::Complex64::new(rng.standard_normal(), rng.standard_normal());
                            }
                            let zc = [z[0].conj(), z[1].conj(), z[2].conj()];
                            u.set(plus, z);
                            u.set(minus, zc);
                        }
                    }
                }
                let mut u = sp.project(&u)?;
                let e = u.norm_l2_sq();
                if e > 0.0 {
                    u.scale((energy / e).sqrt());
                }
                Ok(u)
            }
        }
    }
}
