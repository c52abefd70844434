//! Periodic, mean-zero, divergence-free velocity fields on a uniform `n³`
//! collocation grid.
//!
//! Spectral coefficients are stored in FFT order with the convention
//!
//! ```text
//! u(x) = Σ_κ û(κ) exp(i 2π κ·x / ℓ),   κ ∈ [−n/2, n/2)³
//! ```
//!
//! so that `‖u‖² = ℓ³ Σ_κ |û(κ)|²` (Parseval). Every field that leaves
//! [`Spectral::project`] has a zero mean mode, is orthogonal to its
//! wavevector, is conjugate symmetric and vanishes outside the two-thirds
//! band `max|κᵢ| ≤ n/3`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Uniform periodic grid on the box `[0, ℓ)³`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    ell: f64,
}

impl Grid {
    pub fn new(n: usize, ell: f64) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(param(format!("grid size n = {n} must be even and at least 4")));
        }
        if !(ell.is_finite() && ell > 0.0) {
            return Err(param(format!("box length ell = {ell} must be positive and finite")));
        }
        Ok(Self { n, ell })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn volume(&self) -> f64 {
        self.ell * self.ell * self.ell
    }

    /// Smallest eigenvalue of the Stokes operator on mean-zero periodic
    /// fields, `(2π/ℓ)²`.
    pub fn lambda1(&self) -> f64 {
        let k = self.k_unit();
        k * k
    }

    /// Physical wavenumber of the unit integer wavevector, `2π/ℓ`.
    pub fn k_unit(&self) -> f64 {
        2.0 * PI / self.ell
    }

    pub fn dx(&self) -> f64 {
        self.ell / self.n as f64
    }

    /// Collocation cell volume `Δx³`.
    pub fn cell_volume(&self) -> f64 {
        let dx = self.dx();
        dx * dx * dx
    }

    pub fn points(&self) -> usize {
        self.n * self.n * self.n
    }

    /// Largest integer wavenumber kept by the two-thirds rule.
    pub fn dealias_kmax(&self) -> i32 {
        (self.n / 3) as i32
    }

    /// Integer wavenumber of FFT index `i` along one axis.
    pub fn wavenumber(&self, i: usize) -> i32 {
        if i < self.n / 2 {
            i as i32
        } else {
            i as i32 - self.n as i32
        }
    }

    pub fn flat(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.n + b) * self.n + c
    }

    pub fn unflat(&self, idx: usize) -> (usize, usize, usize) {
        let n = self.n;
        (idx / (n * n), (idx / n) % n, idx % n)
    }

    pub fn wavevector(&self, idx: usize) -> [i32; 3] {
        let (a, b, c) = self.unflat(idx);
        [self.wavenumber(a), self.wavenumber(b), self.wavenumber(c)]
    }

    /// Flat index of integer wavevector `κ`, if it is representable.
    pub fn index_of(&self, kappa: [i32; 3]) -> Option<usize> {
        let half = (self.n / 2) as i32;
        let mut pos = [0usize; 3];
        for (p, &k) in pos.iter_mut().zip(kappa.iter()) {
            if k < -half || k >= half {
                return None;
            }
            *p = k.rem_euclid(self.n as i32) as usize;
        }
        Some(self.flat(pos[0], pos[1], pos[2]))
    }

    /// Whether `κ` survives the two-thirds dealiasing mask.
    pub fn in_band(&self, kappa: [i32; 3]) -> bool {
        let kmax = self.dealias_kmax();
        kappa.iter().all(|k| k.abs() <= kmax)
    }

    /// Physical coordinates of the collocation point with flat index `idx`.
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let (a, b, c) = self.unflat(idx);
        let dx = self.dx();
        [a as f64 * dx, b as f64 * dx, c as f64 * dx]
    }

    pub(crate) fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "n = {}, ell = {} vs n = {}, ell = {}",
                self.n, self.ell, other.n, other.ell
            )))
        }
    }
}

/// Three-component velocity in Fourier space.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralVelocity {
    grid: Grid,
    coeffs: [Vec<Complex64>; 3],
}

impl SpectralVelocity {
    pub fn zeros(grid: Grid) -> Self {
        let len = grid.points();
        Self {
            grid,
            coeffs: [vec![ZERO; len], vec![ZERO; len], vec![ZERO; len]],
        }
    }

    pub fn from_coeffs(grid: Grid, coeffs: [Vec<Complex64>; 3]) -> Result<Self> {
        if coeffs.iter().any(|c| c.len() != grid.points()) {
            return Err(Error::GridMismatch(format!(
                "coefficient arrays must have n³ = {} entries",
                grid.points()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Vec<Complex64>; 3] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Vec<Complex64>; 3] {
        &mut self.coeffs
    }

    pub fn component(&self, i: usize) -> &[Complex64] {
        &self.coeffs[i]
    }

    /// Coefficient vector at flat index `idx`.
    pub fn at(&self, idx: usize) -> [Complex64; 3] {
        [self.coeffs[0][idx], self.coeffs[1][idx], self.coeffs[2][idx]]
    }

    pub fn set(&mut self, idx: usize, value: [Complex64; 3]) {
        for (c, v) in self.coeffs.iter_mut().zip(value) {
            c[idx] = v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs
            .iter()
            .all(|c| c.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }

    /// `‖u‖²` by Parseval.
    pub fn norm_l2_sq(&self) -> f64 {
        let sum: f64 = self
            .coeffs
            .iter()
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum();
        self.grid.volume() * sum
    }

    /// `‖∇u‖²` by Parseval, `ℓ³ Σ |k|² |û|²`.
    pub fn grad_norm_l2_sq(&self) -> f64 {
        let g = &self.grid;
        let ku = g.k_unit();
        let mut sum = 0.0;
        for idx in 0..g.points() {
            let k = g.wavevector(idx);
            let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
            if k2 == 0.0 {
                continue;
            }
            let m: f64 = self.coeffs.iter().map(|c| c[idx].norm_sqr()).sum();
            sum += k2 * m;
        }
        g.volume() * ku * ku * sum
    }

    /// `(self, other)` in `L²(D)` via Parseval.
    pub fn inner_product(&self, other: &SpectralVelocity) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        let mut sum = 0.0;
        for (a, b) in self.coeffs.iter().zip(other.coeffs.iter()) {
            sum += a.iter().zip(b.iter()).map(|(x, y)| (x * y.conj()).re).sum::<f64>();
        }
        Ok(self.grid.volume() * sum)
    }

    pub fn scale(&mut self, factor: f64) {
        for c in self.coeffs.iter_mut() {
            for z in c.iter_mut() {
                *z *= factor;
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    /// `self += factor · other`.
    pub fn add_scaled(&mut self, factor: f64, other: &SpectralVelocity) -> Result<()> {
        self.grid.ensure_same(&other.grid)?;
        for (a, b) in self.coeffs.iter_mut().zip(other.coeffs.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y * factor;
            }
        }
        Ok(())
    }

    pub fn sub(&self, other: &SpectralVelocity) -> Result<Self> {
        let mut out = self.clone();
        out.add_scaled(-1.0, other)?;
        Ok(out)
    }

    /// Largest `|κ·û(κ)| / |û(κ)|` over nonzero coefficients (integer `κ`).
    pub fn divergence_residual(&self) -> f64 {
        let g = &self.grid;
        let mut worst = 0.0f64;
        for idx in 0..g.points() {
            let v = self.at(idx);
            let mag = (v[0].norm_sqr() + v[1].norm_sqr() + v[2].norm_sqr()).sqrt();
            if mag == 0.0 {
                continue;
            }
            let k = g.wavevector(idx);
            let div = v[0] * k[0] as f64 + v[1] * k[1] as f64 + v[2] * k[2] as f64;
            worst = worst.max(div.norm() / mag);
        }
        worst
    }

    /// Checks every structural invariant of a projected velocity.
    pub fn invariant_report(&self) -> InvariantReport {
        let g = &self.grid;
        let mean_mode = self.at(0).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut conjugate_defect = 0.0f64;
        let mut out_of_band = 0.0f64;
        for idx in 0..g.points() {
            let k = g.wavevector(idx);
            let v = self.at(idx);
            if !g.in_band(k) {
                out_of_band = v.iter().map(|z| z.norm()).fold(out_of_band, f64::max);
                continue;
            }
            let mirror = g
                .index_of([-k[0], -k[1], -k[2]])
                .expect("in-band wavevectors have representable mirrors");
            let w = self.at(mirror);
            for (a, b) in v.iter().zip(w.iter()) {
                conjugate_defect = conjugate_defect.max((a - b.conj()).norm());
            }
        }
        InvariantReport {
            mean_mode,
            divergence_residual: self.divergence_residual(),
            conjugate_defect,
            out_of_band,
        }
    }

    /// Squared coefficient magnitudes binned by rounded `|κ|`, scaled by `ℓ³`.
    pub fn shell_spectrum(&self) -> Vec<f64> {
        let g = &self.grid;
        let kmax = ((3.0f64).sqrt() * (g.n() / 2) as f64).ceil() as usize + 1;
        let mut shells = vec![0.0; kmax];
        for idx in 0..g.points() {
            let k = g.wavevector(idx);
            let mag = ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt();
            let bin = mag.round() as usize;
            let e: f64 = self.coeffs.iter().map(|c| c[idx].norm_sqr()).sum();
            shells[bin] += g.volume() * e;
        }
        shells
    }
}

/// Invariant residuals of a spectral velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub mean_mode: f64,
    pub divergence_residual: f64,
    pub conjugate_defect: f64,
    pub out_of_band: f64,
}

impl InvariantReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.mean_mode == 0.0
            && self.divergence_residual <= tol
            && self.conjugate_defect == 0.0
            && self.out_of_band == 0.0
    }
}

/// Real three-component field sampled on the collocation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalField {
    grid: Grid,
    comps: [Vec<f64>; 3],
}

impl PhysicalField {
    pub fn zeros(grid: Grid) -> Self {
        let len = grid.points();
        Self {
            grid,
            comps: [vec![0.0; len], vec![0.0; len], vec![0.0; len]],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut out = Self::zeros(grid);
        for idx in 0..grid.points() {
            let v = f(grid.position(idx));
            for (c, x) in out.comps.iter_mut().zip(v) {
                c[idx] = x;
            }
        }
        out
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.comps[i]
    }

    pub fn components(&self) -> &[Vec<f64>; 3] {
        &self.comps
    }

    /// `‖v‖²` by collocation quadrature `Δx³ Σ |v|²`.
    pub fn norm_l2_sq(&self) -> f64 {
        let sum: f64 = self.comps.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>()).sum();
        self.grid.cell_volume() * sum
    }

    pub fn inner_product(&self, other: &PhysicalField) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        let sum: f64 = self
            .comps
            .iter()
            .zip(other.comps.iter())
            .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        Ok(self.grid.cell_volume() * sum)
    }

    /// Largest pointwise Euclidean magnitude.
    pub fn max_norm(&self) -> f64 {
        (0..self.grid.points())
            .map(|p| {
                let (a, b, c) = (self.comps[0][p], self.comps[1][p], self.comps[2][p]);
                (a * a + b * b + c * c).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Velocity gradient `∂uᵢ/∂xⱼ` sampled on the collocation grid; entry
/// `(i, j)` is stored in component `3i + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTensor {
    grid: Grid,
    comps: [Vec<f64>; 9],
}

impl GradientTensor {
    pub fn zeros(grid: Grid) -> Self {
        let len = grid.points();
        Self {
            grid,
            comps: std::array::from_fn(|_| vec![0.0; len]),
        }
    }

    pub(crate) fn from_comps(grid: Grid, comps: [Vec<f64>; 9]) -> Self {
        Self { grid, comps }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn entry(&self, i: usize, j: usize) -> &[f64] {
        &self.comps[3 * i + j]
    }

    pub fn components(&self) -> &[Vec<f64>; 9] {
        &self.comps
    }

    pub fn sample(&self, p: usize) -> [[f64; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.comps[3 * i + j][p]))
    }

    pub fn frobenius_at(&self, p: usize) -> f64 {
        self.comps.iter().map(|c| c[p] * c[p]).sum::<f64>().sqrt()
    }

    /// `‖∇u‖²` by collocation quadrature.
    pub fn norm_l2_sq(&self) -> f64 {
        let sum: f64 = self.comps.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>()).sum();
        self.grid.cell_volume() * sum
    }

    /// `‖∇u‖_{L^r}^r = Δx³ Σ |∇u|^r` with the pointwise Frobenius norm.
    pub fn norm_lr_r(&self, r: f64) -> Result<f64> {
        if !(r >= 2.0 && r.is_finite()) {
            return Err(param(format!("L^r exponent r = {r} must be finite and at least 2")));
        }
        let half = 0.5 * r;
        let sum: f64 = (0..self.grid.points())
            .map(|p| {
                let s: f64 = self.comps.iter().map(|c| c[p] * c[p]).sum();
                if s == 0.0 {
                    0.0
                } else {
                    s.powf(half)
                }
            })
            .sum();
        Ok(self.grid.cell_volume() * sum)
    }

    /// `∫ A : B dx` by collocation quadrature.
    pub fn inner_product(&self, other: &GradientTensor) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        let sum: f64 = self
            .comps
            .iter()
            .zip(other.comps.iter())
            .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        Ok(self.grid.cell_volume() * sum)
    }

    pub fn max_frobenius(&self) -> f64 {
        (0..self.grid.points()).map(|p| self.frobenius_at(p)).fold(0.0, f64::max)
    }

    /// Largest `|tr ∇u| / (|∇u| + floor)` over the grid.
    pub fn trace_residual(&self) -> f64 {
        (0..self.grid.points())
            .map(|p| {
                let tr = self.comps[0][p] + self.comps[4][p] + self.comps[8][p];
                tr.abs() / (self.frobenius_at(p) + f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }

    /// Pointwise map `G ↦ |G|^{r−2} G`, with the value at `G = 0` taken as 0
    /// for `r > 2`.
    pub fn power_law(&self, r: f64) -> GradientTensor {
        let mut out = self.clone();
        if r == 2.0 {
            return out;
        }
        let expo = 0.5 * (r - 2.0);
        for p in 0..self.grid.points() {
            let s: f64 = self.comps.iter().map(|c| c[p] * c[p]).sum();
            let w = if s == 0.0 { 0.0 } else { s.powf(expo) };
            for c in out.comps.iter_mut() {
                c[p] *= w;
            }
        }
        out
    }
}

/// FFT plans and wavenumber tables for one grid.
#[derive(Clone)]
pub struct Spectral {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    mirror: Arc<Vec<usize>>,
    retained: Arc<Vec<bool>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.n());
        let inverse = planner.plan_fft_inverse(grid.n());
        let n = grid.n();
        let mirror = (0..grid.points())
            .map(|idx| {
                let (a, b, c) = grid.unflat(idx);
                grid.flat((n - a) % n, (n - b) % n, (n - c) % n)
            })
            .collect();
        let retained = (0..grid.points())
            .map(|idx| {
                let k = grid.wavevector(idx);
                idx != 0 && grid.in_band(k)
            })
            .collect();
        Self {
            grid,
            forward,
            inverse,
            mirror: Arc::new(mirror),
            retained: Arc::new(retained),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Whether flat index `idx` is a nonzero in-band mode.
    pub fn retained(&self, idx: usize) -> bool {
        self.retained[idx]
    }

    /// Flat index of `−κ`.
    pub fn mirror(&self, idx: usize) -> usize {
        self.mirror[idx]
    }

    fn fft3(&self, buf: &mut [Complex64], forward: bool) {
        let n = self.grid.n();
        let plan = if forward { &self.forward } else { &self.inverse };
        let mut scratch = vec![ZERO; plan.get_inplace_scratch_len()];
        let mut tmp = vec![ZERO; buf.len()];
        plan.process_with_scratch(buf, &mut scratch);
        for plane in buf.chunks_exact_mut(n * n) {
            let t = &mut tmp[..n * n];
            transpose(plane, t, n, n);
            plan.process_with_scratch(t, &mut scratch);
            transpose(t, plane, n, n);
        }
        transpose(buf, &mut tmp, n, n * n);
        plan.process_with_scratch(&mut tmp, &mut scratch);
        transpose(&tmp, buf, n * n, n);
        if forward {
            let norm = 1.0 / self.grid.points() as f64;
            for z in buf.iter_mut() {
                *z *= norm;
            }
        }
    }

    /// Inverse transforms of conjugate-symmetric spectra, two per complex FFT.
    pub(crate) fn inverse_real(&self, spectra: &[&[Complex64]]) -> Vec<Vec<f64>> {
        let len = self.grid.points();
        let mut out = Vec::with_capacity(spectra.len());
        for pair in spectra.chunks(2) {
            let mut buf: Vec<Complex64> = match pair {
                [a, b] => a.iter().zip(b.iter()).map(|(x, y)| x + Complex64::i() * y).collect(),
                [a] => a.to_vec(),
                _ => unreachable!(),
            };
            debug_assert_eq!(buf.len(), len);
            self.fft3(&mut buf, false);
            out.push(buf.iter().map(|z| z.re).collect());
            if pair.len() == 2 {
                out.push(buf.iter().map(|z| z.im).collect());
            }
        }
        out
    }

    /// Forward transforms of real fields, two per complex FFT.
    pub(crate) fn forward_real(&self, fields: &[&[f64]]) -> Vec<Vec<Complex64>> {
        let mut out = Vec::with_capacity(fields.len());
        for pair in fields.chunks(2) {
            match pair {
                [a, b] => {
                    let mut buf: Vec<Complex64> =
                        a.iter().zip(b.iter()).map(|(&x, &y)| Complex64::new(x, y)).collect();
                    self.fft3(&mut buf, true);
                    let mut sa = vec![ZERO; buf.len()];
                    let mut sb = vec![ZERO; buf.len()];
                    for idx in 0..buf.len() {
                        let z = buf[idx];
                        let zm = buf[self.mirror[idx]].conj();
                        sa[idx] = (z + zm) * 0.5;
                        sb[idx] = (z - zm) * Complex64::new(0.0, -0.5);
                    }
                    out.push(sa);
                    out.push(sb);
                }
                [a] => {
                    let mut buf: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                    self.fft3(&mut buf, true);
                    let sym = (0..buf.len())
                        .map(|idx| (buf[idx] + buf[self.mirror[idx]].conj()) * 0.5)
                        .collect();
                    out.push(sym);
                }
                _ => unreachable!(),
            }
        }
        out
    }

    pub fn to_physical(&self, u: &SpectralVelocity) -> PhysicalField {
        let c = u.coeffs();
        let mut v = self.inverse_real(&[&c[0], &c[1], &c[2]]).into_iter();
        PhysicalField {
            grid: self.grid,
            comps: [v.next().unwrap(), v.next().unwrap(), v.next().unwrap()],
        }
    }

    /// Spectrum of a real field; no projection or dealiasing.
    pub fn from_physical(&self, v: &PhysicalField) -> SpectralVelocity {
        let c = v.components();
        let mut s = self.forward_real(&[&c[0], &c[1], &c[2]]).into_iter();
        SpectralVelocity {
            grid: self.grid,
            coeffs: [s.next().unwrap(), s.next().unwrap(), s.next().unwrap()],
        }
    }

    /// Samples `f` on the grid, transforms and projects.
    pub fn from_fn(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<SpectralVelocity> {
        let v = PhysicalField::from_fn(self.grid, f);
        self.project(&self.from_physical(&v))
    }

    /// Leray projection composed with the two-thirds mask:
    /// `(P v)(κ) = (I − κκᵀ/|κ|²) v̂(κ)` on retained modes, zero elsewhere.
    pub fn project(&self, v: &SpectralVelocity) -> Result<SpectralVelocity> {
        self.grid.ensure_same(v.grid())?;
        if !v.is_finite() {
            return Err(Error::DataCorruption("non-finite spectral coefficient".into()));
        }
        let mut out = v.clone();
        self.project_in_place(&mut out);
        Ok(out)
    }

    pub(crate) fn project_in_place(&self, v: &mut SpectralVelocity) {
        let g = self.grid;
        for idx in 0..g.points() {
            if !self.retained[idx] {
                v.set(idx, [ZERO; 3]);
                continue;
            }
            let k = g.wavevector(idx);
            let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
            let k2 = kf[0] * kf[0] + kf[1] * kf[1] + kf[2] * kf[2];
            let w = v.at(idx);
            let dot = w[0] * kf[0] + w[1] * kf[1] + w[2] * kf[2];
            if dot == ZERO {
                continue;
            }
            let s = dot / k2;
            v.set(idx, [w[0] - s * kf[0], w[1] - s * kf[1], w[2] - s * kf[2]]);
        }
    }

    /// Zeroes every mode outside the two-thirds band and the mean mode.
    pub fn dealias(&self, v: &mut SpectralVelocity) {
        for idx in 0..self.grid.points() {
            if !self.retained[idx] {
                v.set(idx, [ZERO; 3]);
            }
        }
    }

    /// Spectral derivative `i kⱼ ûᵢ` of every component.
    pub fn gradient_spectra(&self, u: &SpectralVelocity) -> [Vec<Complex64>; 9] {
        let g = self.grid;
        let ku = g.k_unit();
        let mut out: [Vec<Complex64>; 9] = std::array::from_fn(|_| vec![ZERO; g.points()]);
        for idx in 0..g.points() {
            let k = g.wavevector(idx);
            for i in 0..3 {
                let ui = u.coeffs[i][idx];
                if ui == ZERO {
                    continue;
                }
                for j in 0..3 {
                    out[3 * i + j][idx] = ui * Complex64::new(0.0, ku * k[j] as f64);
                }
            }
        }
        out
    }

    pub fn gradient(&self, u: &SpectralVelocity) -> GradientTensor {
        let spectra = self.gradient_spectra(u);
        let refs: Vec<&[Complex64]> = spectra.iter().map(|s| s.as_slice()).collect();
        let phys = self.inverse_real(&refs);
        let mut it = phys.into_iter();
        GradientTensor::from_comps(self.grid, std::array::from_fn(|_| it.next().unwrap()))
    }

    /// Spectral divergence `Σⱼ i kⱼ T̂ᵢⱼ` of a physical tensor field, without
    /// dealiasing or projection.
    pub fn tensor_divergence(&self, tensor: &GradientTensor) -> SpectralVelocity {
        let refs: Vec<&[f64]> = tensor.comps.iter().map(|c| c.as_slice()).collect();
        let spectra = self.forward_real(&refs);
        self.divergence_of_spectra(|i, j| &spectra[3 * i + j])
    }

    pub(crate) fn divergence_of_spectra<'a>(
        &self,
        entry: impl Fn(usize, usize) -> &'a [Complex64],
    ) -> SpectralVelocity {
        let g = self.grid;
        let ku = g.k_unit();
        let mut out = SpectralVelocity::zeros(g);
        for idx in 0..g.points() {
            if !self.retained[idx] {
                continue;
            }
            let k = g.wavevector(idx);
            for i in 0..3 {
                let mut acc = ZERO;
                for j in 0..3 {
                    acc += entry(i, j)[idx] * Complex64::new(0.0, ku * k[j] as f64);
                }
                out.coeffs[i][idx] = acc;
            }
        }
        out
    }

    /// Spectral Laplacian `−|k|² û`.
    pub fn laplacian(&self, u: &SpectralVelocity) -> SpectralVelocity {
        let g = self.grid;
        let ku2 = g.lambda1();
        let mut out = u.clone();
        for idx in 0..g.points() {
            let k = g.wavevector(idx);
            let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64 * ku2;
            for c in out.coeffs.iter_mut() {
                c[idx] *= -k2;
            }
        }
        out
    }

    /// Physical `|k|²` at flat index `idx`.
    pub fn k2(&self, idx: usize) -> f64 {
        let k = self.grid.wavevector(idx);
        (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64 * self.grid.lambda1()
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        for (c, &z) in row.iter().enumerate() {
            dst[c * rows + r] = z;
        }
    }
}
