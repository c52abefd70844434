//! Deterministic drift of the Ladyzhenskaya–Smagorinsky system:
//!
//! ```text
//! du/dt = −P∇·(u⊗u) + νΔu + P∇·(ν̄ |∇u|^{r−2} ∇u) + f   (+ noise)
//! ```
//!
//! Nonlinear fluxes are formed pointwise on the collocation grid,
//! transformed, differentiated spectrally, truncated by the two-thirds rule
//! and projected onto divergence-free fields; the pressure never appears.

use std::path::PathBuf;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::field::{GradientTensor, Grid, PhysicalField, Spectral, SpectralVelocity};

/// Sine or cosine profile of a forcing mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    #[default]
    Sin,
    Cos,
}

/// `amplitude · sin(k·x)` (or cos) with `k = 2πκ/ℓ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingMode {
    pub k: [i32; 3],
    pub amplitude: [f64; 3],
    #[serde(default)]
    pub phase: Phase,
}

/// Time-independent body force.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ForcingSpec {
    #[default]
    None,
    Modes {
        entries: Vec<ForcingMode>,
    },
    /// Spectral field stored in the checkpoint layout.
    File {
        path: PathBuf,
    },
}

/// PDE coefficients and body force.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub nu: f64,
    pub nu_bar: f64,
    pub r: f64,
    #[serde(default)]
    pub forcing: ForcingSpec,
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(param(format!("nu = {} must be positive", self.nu)));
        }
        if !(self.nu_bar.is_finite() && self.nu_bar >= 0.0) {
            return Err(param(format!("nu_bar = {} must be nonnegative", self.nu_bar)));
        }
        if !(self.r.is_finite() && self.r >= 2.0) {
            return Err(param(format!("r = {} must be at least 2", self.r)));
        }
        Ok(())
    }

    /// Viscosity handled exactly by the integrating factor. At `r = 2` the
    /// power-law term is linear and is folded in here.
    pub fn implicit_nu(&self) -> f64 {
        if self.r == 2.0 {
            self.nu + self.nu_bar
        } else {
            self.nu
        }
    }

    /// Whether the power-law term is advanced explicitly.
    pub fn explicit_power_law(&self) -> bool {
        self.r > 2.0 && self.nu_bar > 0.0
    }
}

/// Band-limited, projected forcing field on the grid of `sp`.
pub fn forcing_field(spec: &ForcingSpec, sp: &Spectral) -> Result<SpectralVelocity> {
    let grid = *sp.grid();
    match spec {
        ForcingSpec::None => Ok(SpectralVelocity::zeros(grid)),
        ForcingSpec::Modes { entries } => {
            let mut f = SpectralVelocity::zeros(grid);
            for m in entries {
                add_mode(&mut f, m)?;
            }
            sp.project(&f)
        }
        ForcingSpec::File { path } => {
            let (file_grid, f) = crate::checkpoint::read_field(path)?;
            if file_grid != grid {
                return Err(Error::Format(format!(
                    "forcing file {} has n = {}, ell = {}; run grid has n = {}, ell = {}",
                    path.display(),
                    file_grid.n(),
                    file_grid.ell(),
                    grid.n(),
                    grid.ell()
                )));
            }
            sp.project(&f)
        }
    }
}

/// Adds a single real Fourier mode to `v` (no projection).
pub fn add_mode(v: &mut SpectralVelocity, m: &ForcingMode) -> Result<()> {
    let grid = *v.grid();
    if m.k == [0, 0, 0] {
        return Err(param("forcing and initial modes must have nonzero wavevector"));
    }
    if !grid.in_band(m.k) {
        return Err(param(format!(
            "mode {:?} lies beyond the dealiasing band |κᵢ| ≤ {}",
            m.k,
            grid.dealias_kmax()
        )));
    }
    if m.amplitude.iter().any(|a| !a.is_finite()) {
        return Err(param("mode amplitude must be finite"));
    }
    let plus = grid.index_of(m.k).expect("in-band");
    let minus = grid.index_of([-m.k[0], -m.k[1], -m.k[2]]).expect("in-band");
    let unit = match m.phase {
        Phase::Cos => Complex64::new(0.5, 0.0),
        Phase::Sin => Complex64::new(0.0, -0.5),
    };
    let coeffs = v.coeffs_mut();
    for (c, &a) in coeffs.iter_mut().zip(m.amplitude.iter()) {
        c[plus] += unit * a;
        c[minus] += unit.conj() * a;
    }
    Ok(())
}

/// `P∇·(u⊗u)`, dealiased; the drift carries it with a minus sign.
pub fn advection(sp: &Spectral, u: &SpectralVelocity) -> Result<SpectralVelocity> {
    sp.grid().ensure_same(u.grid())?;
    let phys = sp.to_physical(u);
    let flux = outer_product(&phys, 1.0);
    let mut out = sp.tensor_divergence(&flux);
    if !out.is_finite() {
        return Err(Error::StateCorruption { t: f64::NAN, what: "non-finite advection".into() });
    }
    sp.project_in_place(&mut out);
    Ok(out)
}

/// `P∇·(ν̄ |∇u|^{r−2} ∇u)`, dealiased.
pub fn nonlinear_viscosity(
    sp: &Spectral,
    u: &SpectralVelocity,
    nu_bar: f64,
    r: f64,
) -> Result<SpectralVelocity> {
    if !(r.is_finite() && r >= 2.0) {
        return Err(param(format!("power-law exponent r = {r} must be at least 2")));
    }
    sp.grid().ensure_same(u.grid())?;
    let stress = sp.gradient(u).power_law(r);
    let mut out = sp.tensor_divergence(&stress);
    out.scale(nu_bar);
    if !out.is_finite() {
        return Err(Error::StateCorruption { t: f64::NAN, what: "non-finite viscous stress".into() });
    }
    sp.project_in_place(&mut out);
    Ok(out)
}

/// `−ν|k|² û`.
pub fn linear_term(sp: &Spectral, u: &SpectralVelocity, nu: f64) -> SpectralVelocity {
    let mut out = sp.laplacian(u);
    out.scale(nu);
    out
}

/// `−P∇·(u⊗u) + P∇·(ν̄|∇u|^{r−2}∇u) + f`. The linear viscous term is
/// excluded; see [`linear_term`].
pub fn drift(
    sp: &Spectral,
    u: &SpectralVelocity,
    p: &FlowParams,
    forcing: &SpectralVelocity,
) -> Result<SpectralVelocity> {
    p.validate()?;
    let mut out = advection(sp, u)?;
    out.scale(-1.0);
    if p.nu_bar > 0.0 {
        out.add_scaled(1.0, &nonlinear_viscosity(sp, u, p.nu_bar, p.r)?)?;
    }
    out.add_scaled(1.0, forcing)?;
    Ok(out)
}

/// `sign · u ⊗ u` stored as a full 3×3 tensor field.
fn outer_product(u: &PhysicalField, sign: f64) -> GradientTensor {
    let grid = *u.grid();
    let c = u.components();
    let comps = std::array::from_fn(|e| {
        let (i, j) = (e / 3, e % 3);
        c[i].iter().zip(c[j].iter()).map(|(a, b)| sign * a * b).collect()
    });
    GradientTensor::from_comps(grid, comps)
}

/// Resolved model: spectral context, parameters, and forcing in both spaces.
#[derive(Clone, Debug)]
pub struct Model {
    spectral: Spectral,
    params: FlowParams,
    forcing: SpectralVelocity,
    grad_forcing: GradientTensor,
    forcing_norm_sq: f64,
}

/// Everything one step needs from the pre-step state.
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// `−P∇·(u⊗u)` plus the explicit power-law term; forcing excluded.
    pub explicit: SpectralVelocity,
    pub ke: f64,
    pub grad_l2_sq: f64,
    pub grad_lr_r: f64,
    pub u_max: f64,
    pub grad_max: f64,
    /// `(u·∇u, f) = −(u⊗u, ∇f)`.
    pub adv_dot_f: f64,
    /// `(∇u, ∇f)`.
    pub grad_dot_grad_f: f64,
    /// `(|∇u|^{r−2}∇u, ∇f)`.
    pub stress_dot_grad_f: f64,
    /// `(f, u)`.
    pub f_dot_u: f64,
}

impl Model {
    pub fn new(spectral: Spectral, params: FlowParams) -> Result<Self> {
        params.validate()?;
        let forcing = forcing_field(&params.forcing, &spectral)?;
        let grad_forcing = spectral.gradient(&forcing);
        let forcing_norm_sq = forcing.norm_l2_sq();
        Ok(Self { spectral, params, forcing, grad_forcing, forcing_norm_sq })
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    pub fn grid(&self) -> &Grid {
        self.spectral.grid()
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }

    pub fn forcing(&self) -> &SpectralVelocity {
        &self.forcing
    }

    pub fn grad_forcing(&self) -> &GradientTensor {
        &self.grad_forcing
    }

    pub fn forcing_norm_sq(&self) -> f64 {
        self.forcing_norm_sq
    }

    pub fn has_forcing(&self) -> bool {
        self.forcing_norm_sq > 0.0
    }

    /// Fused evaluation of the explicit terms and the diagnostics of `u`.
    pub fn evaluate(&self, u: &SpectralVelocity) -> Result<Evaluation> {
        let sp = &self.spectral;
        let grid = *sp.grid();
        grid.ensure_same(u.grid())?;
        let p = &self.params;
        let need_gradient = p.r > 2.0;

        let c = u.coeffs();
        let mut spectra: Vec<&[Complex64]> = vec![&c[0], &c[1], &c[2]];
        let grad_spectra;
        if need_gradient {
            grad_spectra = sp.gradient_spectra(u);
            spectra.extend(grad_spectra.iter().map(|s| s.as_slice()));
        }
        let mut phys = sp.inverse_real(&spectra).into_iter();
        let vel: [Vec<f64>; 3] = std::array::from_fn(|_| phys.next().unwrap());
        let grad: Option<[Vec<f64>; 9]> = need_gradient.then(|| std::array::from_fn(|_| phys.next().unwrap()));

        let ke = u.norm_l2_sq();
        let grad_l2_sq = u.grad_norm_l2_sq();
        let cell = grid.cell_volume();
        let npts = grid.points();

        let mut u_max = 0.0f64;
        for q in 0..npts {
            let m = vel[0][q] * vel[0][q] + vel[1][q] * vel[1][q] + vel[2][q] * vel[2][q];
            u_max = u_max.max(m);
        }
        let u_max = u_max.sqrt();

        let with_f = self.has_forcing();
        let gf = self.grad_forcing.components();

        // (u⊗u, ∇f)
        let mut uu_gf = 0.0;
        if with_f {
            for i in 0..3 {
                for j in 0..3 {
                    let g = &gf[3 * i + j];
                    uu_gf += (0..npts).map(|q| vel[i][q] * vel[j][q] * g[q]).sum::<f64>();
                }
            }
            uu_gf *= cell;
        }

        let explicit_pl = p.explicit_power_law();
        let mut grad_lr_r = grad_l2_sq;
        let mut grad_max = 0.0;
        let mut stress_dot_grad_f = 0.0;
        let mut stress: Option<Vec<Vec<f64>>> = None;
        if let Some(g) = &grad {
            let expo = 0.5 * (p.r - 2.0);
            let mut lr = 0.0;
            let mut gmax = 0.0f64;
            let mut weights = vec![0.0; npts];
            for q in 0..npts {
                let s: f64 = g.iter().map(|c| c[q] * c[q]).sum();
                gmax = gmax.max(s);
                if s > 0.0 {
                    let w = if p.r == 3.0 { s.sqrt() } else { s.powf(expo) };
                    lr += s * w;
                    weights[q] = w;
                }
            }
            grad_lr_r = cell * lr;
            grad_max = gmax.sqrt();
            if with_f {
                let mut acc = 0.0;
                for e in 0..9 {
                    acc += (0..npts).map(|q| weights[q] * g[e][q] * gf[e][q]).sum::<f64>();
                }
                stress_dot_grad_f = cell * acc;
            }
            if explicit_pl {
                let nb = p.nu_bar;
                stress = Some(
                    (0..9)
                        .map(|e| (0..npts).map(|q| nb * weights[q] * g[e][q]).collect())
                        .collect(),
                );
            }
        }

        let grad_dot_grad_f = if with_f { grad_inner(sp, u, &self.forcing) } else { 0.0 };
        if p.r == 2.0 {
            stress_dot_grad_f = grad_dot_grad_f;
        }

        // Flux Φᵢⱼ = −uᵢuⱼ (+ ν̄|G|^{r−2}Gᵢⱼ); drift = P∇·Φ.
        let explicit = if let Some(stress) = stress {
            let flux: Vec<Vec<f64>> = (0..9)
                .map(|e| {
                    let (i, j) = (e / 3, e % 3);
                    (0..npts).map(|q| stress[e][q] - vel[i][q] * vel[j][q]).collect()
                })
                .collect();
            let refs: Vec<&[f64]> = flux.iter().map(|f| f.as_slice()).collect();
            let fs = sp.forward_real(&refs);
            sp.divergence_of_spectra(|i, j| &fs[3 * i + j])
        } else {
            const SYM: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
            let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
            let flux: Vec<Vec<f64>> = pairs
                .iter()
                .map(|&(i, j)| (0..npts).map(|q| -vel[i][q] * vel[j][q]).collect())
                .collect();
            let refs: Vec<&[f64]> = flux.iter().map(|f| f.as_slice()).collect();
            let fs = sp.forward_real(&refs);
            sp.divergence_of_spectra(|i, j| &fs[SYM[i][j]])
        };
        let mut explicit = explicit;
        if !explicit.is_finite() {
            return Err(Error::StateCorruption { t: f64::NAN, what: "non-finite drift".into() });
        }
        sp.project_in_place(&mut explicit);

        let f_dot_u = if with_f { self.forcing.inner_product(u)? } else { 0.0 };

        Ok(Evaluation {
            explicit,
            ke,
            grad_l2_sq,
            grad_lr_r,
            u_max,
            grad_max,
            adv_dot_f: -uu_gf,
            grad_dot_grad_f,
            stress_dot_grad_f,
            f_dot_u,
        })
    }
}

/// `(∇a, ∇b)` by Parseval.
pub fn grad_inner(sp: &Spectral, a: &SpectralVelocity, b: &SpectralVelocity) -> f64 {
    let grid = sp.grid();
    let (ca, cb) = (a.coeffs(), b.coeffs());
    let mut sum = 0.0;
    for idx in 0..grid.points() {
        let k2 = sp.k2(idx);
        if k2 == 0.0 {
            continue;
        }
        let dot: f64 = (0..3).map(|i| (ca[i][idx] * cb[i][idx].conj()).re).sum();
        sum += k2 * dot;
    }
    grid.volume() * sum
}
