//! Time-averaged statistics (ε₀, ε_M, U, F, L, G², Re_ν, Re_ν̄, τ) and the
//! inequality chain
//!
//! ```text
//! B1: ε ≤ ½G² + F·U
//! B2: F ≤ U²/L + ½Uν/L² + ½ε₀/U + (1/r)(ν̄/Lʳ)U^{r−1} + ((r−1)/r)ε_M/U
//! B3: ε ≤ C (1 + τ + 1/Re_ν + 1/Re_ν̄) U³/L
//! ```
//!
//! Finite horizons keep the boundary terms that vanish as `T → ∞`.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::field::{Grid, Spectral, SpectralVelocity};
use crate::integrate::StepRecord;

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

/// dt-weighted left-endpoint integrals over a contiguous window of steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsAccumulator {
    pub steps: u64,
    pub elapsed: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub int_grad_l2_sq: f64,
    pub int_grad_lr_r: f64,
    pub int_ke: f64,
    pub int_trace_gg: f64,
    pub int_f_dot_u: f64,
    pub boundary_ke_start: f64,
    pub boundary_ke_end: f64,
    pub boundary_f_dot_u_start: f64,
    pub boundary_f_dot_u_end: f64,
    /// `Σ (gΔW, u)` and `Σ ‖gΔW‖²`.
    pub sum_noise_dot_u: f64,
    pub sum_noise_sq: f64,
    pub sum_noise_dot_f: f64,
    pub sum_mart_qv: f64,
    pub int_adv_dot_f: f64,
    pub int_grad_dot_grad_f: f64,
    pub int_stress_dot_grad_f: f64,
}

impl StatsAccumulator {
    pub fn push(&mut self, rec: &StepRecord) -> Result<()> {
        let vals = [
            rec.t, rec.dt, rec.ke_pre, rec.ke_post, rec.grad_l2_sq, rec.grad_lr_r, rec.trace_gg,
            rec.f_dot_u, rec.f_dot_u_post, rec.noise_dot_u, rec.noise_sq, rec.noise_dot_f,
            rec.mart_qv, rec.adv_dot_f, rec.grad_dot_grad_f, rec.stress_dot_grad_f,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::StateCorruption { t: rec.t, what: "non-finite step record".into() });
        }
        if rec.dt <= 0.0 {
            return Err(param(format!("record at t = {} has dt = {}", rec.t, rec.dt)));
        }
        let dt = rec.dt;
        if self.steps == 0 {
            self.t_start = rec.t;
            self.boundary_ke_start = rec.ke_pre;
            self.boundary_f_dot_u_start = rec.f_dot_u;
        }
        self.steps += 1;
        self.elapsed += dt;
        self.t_end = rec.t + dt;
        self.int_grad_l2_sq += dt * rec.grad_l2_sq;
        self.int_grad_lr_r += dt * rec.grad_lr_r;
        self.int_ke += dt * rec.ke_pre;
        self.int_trace_gg += dt * rec.trace_gg;
        self.int_f_dot_u += dt * rec.f_dot_u;
        self.boundary_ke_end = rec.ke_post;
        self.boundary_f_dot_u_end = rec.f_dot_u_post;
        self.sum_noise_dot_u += rec.noise_dot_u;
        self.sum_noise_sq += rec.noise_sq;
        self.sum_noise_dot_f += rec.noise_dot_f;
        self.sum_mart_qv += rec.mart_qv;
        self.int_adv_dot_f += dt * rec.adv_dot_f;
        self.int_grad_dot_grad_f += dt * rec.grad_dot_grad_f;
        self.int_stress_dot_grad_f += dt * rec.stress_dot_grad_f;
        Ok(())
    }

    /// Accumulator of this window followed by `later`.
    pub fn concat(&self, later: &StatsAccumulator) -> Result<StatsAccumulator> {
        if self.steps == 0 {
            return Ok(*later);
        }
        if later.steps == 0 {
            return Ok(*self);
        }
        let gap = (later.t_start - self.t_end).abs();
        if gap > 1e-9 * self.t_end.abs().max(1.0) {
            return Err(Error::Window(format!(
                "windows are not contiguous: {} then {}",
                self.t_end, later.t_start
            )));
        }
        Ok(StatsAccumulator {
            steps: self.steps + later.steps,
            elapsed: self.elapsed + later.elapsed,
            t_start: self.t_start,
            t_end: later.t_end,
            int_grad_l2_sq: self.int_grad_l2_sq + later.int_grad_l2_sq,
            int_grad_lr_r: self.int_grad_lr_r + later.int_grad_lr_r,
            int_ke: self.int_ke + later.int_ke,
            int_trace_gg: self.int_trace_gg + later.int_trace_gg,
            int_f_dot_u: self.int_f_dot_u + later.int_f_dot_u,
            boundary_ke_start: self.boundary_ke_start,
            boundary_ke_end: later.boundary_ke_end,
            boundary_f_dot_u_start: self.boundary_f_dot_u_start,
            boundary_f_dot_u_end: later.boundary_f_dot_u_end,
            sum_noise_dot_u: self.sum_noise_dot_u + later.sum_noise_dot_u,
            sum_noise_sq: self.sum_noise_sq + later.sum_noise_sq,
            sum_noise_dot_f: self.sum_noise_dot_f + later.sum_noise_dot_f,
            sum_mart_qv: self.sum_mart_qv + later.sum_mart_qv,
            int_adv_dot_f: self.int_adv_dot_f + later.int_adv_dot_f,
            int_grad_dot_grad_f: self.int_grad_dot_grad_f + later.int_grad_dot_grad_f,
            int_stress_dot_grad_f: self.int_stress_dot_grad_f + later.int_stress_dot_grad_f,
        })
    }

    /// Space-time averages `(1/(|D|·elapsed))∫ψ dt` of the integrands.
    pub fn averages(&self, grid: &Grid) -> Result<Averages> {
        if !(self.elapsed > 0.0) {
            return Err(Error::UndefinedStatistics("averaging window has zero length".into()));
        }
        let w = 1.0 / (grid.volume() * self.elapsed);
        Ok(Averages {
            grad_l2_sq: w * self.int_grad_l2_sq,
            grad_lr_r: w * self.int_grad_lr_r,
            ke: w * self.int_ke,
            trace_gg: w * self.int_trace_gg,
            f_dot_u: w * self.int_f_dot_u,
            elapsed: self.elapsed,
            t_start: self.t_start,
        })
    }

    /// `(‖u(T)‖² − ‖u(T₀)‖²)/(2|D|(T − T₀))`.
    pub fn ke_boundary(&self, grid: &Grid) -> f64 {
        if self.elapsed > 0.0 {
            (self.boundary_ke_end - self.boundary_ke_start) / (2.0 * grid.volume() * self.elapsed)
        } else {
            0.0
        }
    }

    /// `(u(T) − u(T₀), f)/(|D|(T − T₀))`.
    pub fn f_boundary(&self, grid: &Grid) -> f64 {
        if self.elapsed > 0.0 {
            (self.boundary_f_dot_u_end - self.boundary_f_dot_u_start) / (grid.volume() * self.elapsed)
        } else {
            0.0
        }
    }
}

/// Space-time averaged integrands of one trajectory (or their ensemble mean).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub grad_l2_sq: f64,
    pub grad_lr_r: f64,
    pub ke: f64,
    pub trace_gg: f64,
    pub f_dot_u: f64,
    pub elapsed: f64,
    pub t_start: f64,
}

impl Averages {
    /// Componentwise mean; the window must be common.
    pub fn mean(items: &[Averages]) -> Result<Averages> {
        let first = items.first().ok_or_else(|| Error::InsufficientSample { needed: 1, got: 0 })?;
        let avg = |f: fn(&Averages) -> f64| mean_exact(&items.iter().map(f).collect::<Vec<_>>());
        Ok(Averages {
            grad_l2_sq: avg(|a| a.grad_l2_sq),
            grad_lr_r: avg(|a| a.grad_lr_r),
            ke: avg(|a| a.ke),
            trace_gg: avg(|a| a.trace_gg),
            f_dot_u: avg(|a| a.f_dot_u),
            elapsed: first.elapsed,
            t_start: first.t_start,
        })
    }
}

/// Mean that returns the common value exactly when all inputs agree.
pub fn mean_exact(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    if xs.iter().all(|&x| x == xs[0]) {
        return xs[0];
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean, `s/√M`; zero for `M = 1` or identical inputs.
pub fn std_error(xs: &[f64]) -> f64 {
    let m = xs.len();
    if m < 2 || xs.iter().all(|&x| x == xs[0]) {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / m as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64;
    (var / m as f64).sqrt()
}

/// Forcing amplitude `F` and length scale `L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcingScales {
    pub f: f64,
    pub l: f64,
    /// `ℓ`, `F/(‖∇f‖²/|D|)^{1/2}`, `F/(‖∇f‖ᵣʳ/|D|)^{1/r}`, `F/‖∇f‖∞`.
    pub candidates: [f64; 4],
    /// `f = 0`: `L = ℓ` by convention.
    pub zero_forcing: bool,
}

pub fn forcing_scales(sp: &Spectral, f: &SpectralVelocity, r: f64) -> Result<ForcingScales> {
    let grid = *sp.grid();
    grid.ensure_same(f.grid())?;
    if !(r.is_finite() && r >= 2.0) {
        return Err(param(format!("r = {r} must be at least 2")));
    }
    let vol = grid.volume();
    let ell = grid.ell();
    let norm_sq = f.norm_l2_sq();
    if !norm_sq.is_finite() {
        return Err(Error::DataCorruption("non-finite forcing".into()));
    }
    if norm_sq == 0.0 {
        return Ok(ForcingScales { f: 0.0, l: ell, candidates: [ell, f64::INFINITY, f64::INFINITY, f64::INFINITY], zero_forcing: true });
    }
    let big_f = (norm_sq / vol).sqrt();
    let grad = sp.gradient(f);
    let c2 = big_f / (f.grad_norm_l2_sq() / vol).sqrt();
    let cr = big_f / (grad.norm_lr_r(r)? / vol).powf(1.0 / r);
    let cinf = big_f / grad.max_frobenius();
    let candidates = [ell, c2, cr, cinf];
    let l = candidates.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ForcingScales { f: big_f, l, candidates, zero_forcing: false })
}

/// Coefficients entering the dimensionless groups.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatInputs {
    pub nu: f64,
    pub nu_bar: f64,
    pub r: f64,
    pub rho_infty: f64,
    pub volume: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Statistics {
    pub eps0: f64,
    #[serde(rename = "epsM")]
    pub eps_m: f64,
    pub eps: f64,
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "G2")]
    pub g2: f64,
    #[serde(rename = "Re_nu", with = "extended_f64")]
    pub re_nu: f64,
    #[serde(rename = "Re_nubar", with = "extended_f64")]
    pub re_nubar: f64,
    #[serde(with = "extended_f64")]
    pub tau: f64,
    /// Mean `(f, u)/|D|`.
    pub f_dot_u: f64,
    pub rho_infty: f64,
    pub nu: f64,
    pub nu_bar: f64,
    pub r: f64,
    /// Averaging window length `T − T₀` and its start `T₀`.
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "T0")]
    pub burn_in: f64,
}

impl Statistics {
    pub fn from_averages(avg: &Averages, inp: &StatInputs, scales: &ForcingScales) -> Statistics {
        let eps0 = inp.nu * avg.grad_l2_sq;
        let eps_m = inp.nu_bar * avg.grad_lr_r;
        let u = avg.ke.max(0.0).sqrt();
        let l = scales.l;
        let re_nu = u * l / inp.nu;
        let re_nubar = if inp.nu_bar == 0.0 {
            f64::INFINITY
        } else {
            l.powf(inp.r - 1.0) / (inp.nu_bar * u.powf(inp.r - 3.0))
        };
        let tau = if inp.rho_infty == 0.0 { 0.0 } else { inp.rho_infty * l / u };
        Statistics {
            eps0,
            eps_m,
            eps: eps0 + eps_m,
            u,
            f: scales.f,
            l,
            g2: avg.trace_gg,
            re_nu,
            re_nubar,
            tau,
            f_dot_u: avg.f_dot_u,
            rho_infty: inp.rho_infty,
            nu: inp.nu,
            nu_bar: inp.nu_bar,
            r: inp.r,
            horizon: avg.elapsed,
            burn_in: avg.t_start,
        }
    }

    /// `ε / [(1 + τ + 1/Re_ν + 1/Re_ν̄) U³/L]`; undefined for `U = 0`.
    pub fn ratio_b3(&self) -> Result<f64> {
        if !(self.u > 0.0) {
            return Err(Error::UndefinedStatistics("U = 0: ratio_B3 is undefined".into()));
        }
        let factor = 1.0 + self.tau + 1.0 / self.re_nu + 1.0 / self.re_nubar;
        Ok(self.eps / (factor * self.u.powi(3) / self.l))
    }

    /// The five terms on the right of B2, in order.
    pub fn b2_terms(&self, variant: B2Variant) -> [f64; 5] {
        let (u, l, r) = (self.u, self.l, self.r);
        let coeff = match variant {
            B2Variant::NuBar => self.nu_bar,
            B2Variant::PrintedNu => self.nu,
        };
        let over_u = |x: f64| if x == 0.0 { 0.0 } else { x / u };
        [
            u * u / l,
            0.5 * u * self.nu / (l * l),
            0.5 * over_u(self.eps0),
            coeff / (r * l.powf(r)) * u.powf(r - 1.0),
            (r - 1.0) / r * over_u(self.eps_m),
        ]
    }
}

/// Per-trajectory statistics with the window's finite-horizon corrections.
pub fn finalize(acc: &StatsAccumulator, grid: &Grid, inp: &StatInputs, scales: &ForcingScales) -> Result<Statistics> {
    Ok(Statistics::from_averages(&acc.averages(grid)?, inp, scales))
}

/// Which coefficient multiplies `U^{r−1}/(r Lʳ)` in B2.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum B2Variant {
    /// `ν̄`, as carried by the Hölder step it comes from.
    #[default]
    NuBar,
    /// `ν`, as printed in the displayed inequality.
    PrintedNu,
}

/// Finite-horizon terms: `E[‖u(T)‖² − ‖u(T₀)‖²]/(2|D|T)` and
/// `E[(u(T) − u(T₀), f)]/(|D|T)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTerms {
    pub ke: f64,
    pub f: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTolerances {
    pub b1: f64,
    pub b2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    #[serde(rename = "residual_B1")]
    pub residual_b1: f64,
    #[serde(rename = "residual_B2")]
    pub residual_b2: f64,
    /// `None` when `U = 0`.
    #[serde(rename = "ratio_B3")]
    pub ratio_b3: Option<f64>,
    pub boundary_term: f64,
    pub f_boundary_term: f64,
    pub b2_terms: [f64; 5],
    pub variant: B2Variant,
    pub tol_b1: f64,
    pub tol_b2: f64,
    pub pass_b1: bool,
    pub pass_b2: bool,
}

impl BoundReport {
    pub fn pass(&self) -> bool {
        self.pass_b1 && self.pass_b2
    }
}

/// Signed slacks of B1 and B2 and the B3 ratio.
///
/// With `U = 0` the terms `ε₀/U`, `ε_M/U` are taken as zero when their
/// numerators vanish and the ratio is reported as `None`.
pub fn bound_check(st: &Statistics, boundary: &BoundaryTerms, tol: &BoundTolerances, variant: B2Variant) -> Result<BoundReport> {
    if !(tol.b1 >= 0.0 && tol.b2 >= 0.0) {
        return Err(param("bound tolerances must be nonnegative"));
    }
    if st.u == 0.0 && st.eps > 0.0 {
        return Err(Error::UndefinedStatistics("U = 0 with positive dissipation".into()));
    }
    let residual_b1 = 0.5 * st.g2 + st.f * st.u - st.eps - boundary.ke;
    let terms = st.b2_terms(variant);
    let correction = if st.f > 0.0 { boundary.f / st.f } else { 0.0 };
    let residual_b2 = terms.iter().sum::<f64>() + correction - st.f;
    let ratio_b3 = st.ratio_b3().ok();
    if !residual_b1.is_finite() || !residual_b2.is_finite() {
        return Err(Error::UndefinedStatistics("non-finite bound residual".into()));
    }
    Ok(BoundReport {
        residual_b1,
        residual_b2,
        ratio_b3,
        boundary_term: boundary.ke,
        f_boundary_term: boundary.f,
        b2_terms: terms,
        variant,
        tol_b1: tol.b1,
        tol_b2: tol.b2,
        pass_b1: residual_b1 >= -tol.b1,
        pass_b2: residual_b2 >= -tol.b2,
    })
}
