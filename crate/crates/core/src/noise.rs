//! Q-Wiener forcing `g(t,u) dW = Σₖ σₖ m(t) A(u) eₖ dBₖ` built on a
//! truncated, real, solenoidal Fourier basis.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::field::{Grid, SpectralVelocity};

/// State dependence of the noise amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// `A(u) = 1`.
    Additive,
    /// `A(u) = √(1 + ‖u‖²)`.
    Multiplicative,
}

/// Bounded time modulation `m(t) ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Modulation {
    Constant { value: f64 },
    /// `½(1 + cos(2πt/period))`.
    Cosine { period: f64 },
}

impl Default for Modulation {
    fn default() -> Self {
        Modulation::Constant { value: 1.0 }
    }
}

impl Modulation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Modulation::Constant { value } if (0.0..=1.0).contains(&value) => Ok(()),
            Modulation::Constant { value } => {
                Err(param(format!("constant modulation {value} must lie in [0, 1]")))
            }
            Modulation::Cosine { period } if period.is_finite() && period > 0.0 => Ok(()),
            Modulation::Cosine { period } => {
                Err(param(format!("modulation period {period} must be positive")))
            }
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Modulation::Constant { value } => value,
            Modulation::Cosine { period } => 0.5 * (1.0 + (2.0 * PI * t / period).cos()),
        }
    }

    /// `sup_t m(t)²`.
    pub fn sup_sq(&self) -> f64 {
        match *self {
            Modulation::Constant { value } => value * value,
            Modulation::Cosine { .. } => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Cos,
    Sin,
}

/// One real orthonormal basis field `e(x) = √(2/|D|) p cos(k·x)` or
/// `√(2/|D|) p sin(k·x)`, with `p ⊥ κ`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisMode {
    /// Wavevector as enumerated; its mirror carries the sine partner.
    pub kappa: [i32; 3],
    pub polarization: [f64; 3],
    phase: Phase,
    plus: usize,
    minus: usize,
    weight: f64,
}

impl BasisMode {
    /// Coefficient at the canonical wavevector; the mirror holds its conjugate.
    fn coefficient(&self) -> Complex64 {
        match self.phase {
            Phase::Cos => Complex64::new(0.5 * self.weight, 0.0),
            Phase::Sin => Complex64::new(0.0, -0.5 * self.weight),
        }
    }

    /// Adds `amp · e` into `v`.
    fn accumulate(&self, amp: f64, v: &mut SpectralVelocity) {
        let c = self.coefficient() * amp;
        let coeffs = v.coeffs_mut();
        for (comp, &p) in coeffs.iter_mut().zip(self.polarization.iter()) {
            comp[self.plus] += c * p;
            comp[self.minus] += c.conj() * p;
        }
    }

    /// `(e, u)`.
    pub fn project(&self, u: &SpectralVelocity) -> f64 {
        let c = self.coefficient();
        let coeffs = u.coeffs();
        let dot: Complex64 = (0..3).map(|i| coeffs[i][self.plus].conj() * self.polarization[i]).sum();
        2.0 * u.grid().volume() * (c * dot).re
    }

    pub fn to_velocity(&self, grid: Grid) -> SpectralVelocity {
        let mut v = SpectralVelocity::zeros(grid);
        self.accumulate(1.0, &mut v);
        v
    }
}

fn is_canonical(k: [i32; 3]) -> bool {
    k.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalized(a: [f64; 3]) -> [f64; 3] {
    let m = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / m, a[1] / m, a[2] / m]
}

fn polarizations(k: [i32; 3]) -> [[f64; 3]; 2] {
    let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
    let axis = (0..3)
        .min_by(|&a, &b| kf[a].abs().partial_cmp(&kf[b].abs()).unwrap())
        .unwrap();
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let p1 = normalized(cross(kf, e));
    let p2 = normalized(cross(kf, p1));
    [p1, p2]
}

/// Orthonormal solenoidal basis for every `κ ≠ 0` with `max|κᵢ| ≤ kmax`,
/// two polarizations each, in lexicographic `κ` order.
pub fn build_basis(grid: Grid, kmax: i32) -> Result<Vec<BasisMode>> {
    if kmax < 1 || kmax > grid.dealias_kmax() {
        return Err(param(format!(
            "noise kmax = {kmax} must lie in [1, {}] for n = {}",
            grid.dealias_kmax(),
            grid.n()
        )));
    }
    let weight = (2.0 / grid.volume()).sqrt();
    let mut basis = Vec::new();
    for a in -kmax..=kmax {
        for b in -kmax..=kmax {
            for c in -kmax..=kmax {
                let kappa = [a, b, c];
                if kappa == [0, 0, 0] {
                    continue;
                }
                let (canon, phase) = if is_canonical(kappa) {
                    (kappa, Phase::Cos)
                } else {
                    ([-a, -b, -c], Phase::Sin)
                };
                let plus = grid.index_of(canon).expect("kmax within the grid");
                let minus = grid.index_of([-canon[0], -canon[1], -canon[2]]).expect("kmax within the grid");
                for polarization in polarizations(canon) {
                    basis.push(BasisMode { kappa, polarization, phase, plus, minus, weight });
                }
            }
        }
    }
    Ok(basis)
}

/// Noise spectrum `{σₖ, eₖ}` with amplitude mode and time modulation.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    grid: Grid,
    basis: Vec<BasisMode>,
    sigmas: Vec<f64>,
    mode: NoiseMode,
    modulation: Modulation,
}

impl NoiseSpec {
    /// No stochastic forcing.
    pub fn none(grid: Grid) -> Self {
        Self {
            grid,
            basis: Vec::new(),
            sigmas: Vec::new(),
            mode: NoiseMode::Additive,
            modulation: Modulation::default(),
        }
    }

    /// Power-law spectrum `σ(κ) = σ₀ |κ|^{−α}` on the basis of [`build_basis`].
    pub fn power_law(
        grid: Grid,
        kmax: i32,
        sigma0: f64,
        alpha: f64,
        mode: NoiseMode,
        modulation: Modulation,
    ) -> Result<Self> {
        if !(sigma0.is_finite() && sigma0 >= 0.0) {
            return Err(param(format!("sigma0 = {sigma0} must be finite and nonnegative")));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(param(format!("alpha = {alpha} must be finite and nonnegative")));
        }
        let basis = build_basis(grid, kmax)?;
        let sigmas = basis
            .iter()
            .map(|m| {
                let k = m.kappa;
                let mag = ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt();
                sigma0 * mag.powf(-alpha)
            })
            .collect();
        Self::from_parts(grid, basis, sigmas, mode, modulation)
    }

    pub fn from_parts(
        grid: Grid,
        basis: Vec<BasisMode>,
        sigmas: Vec<f64>,
        mode: NoiseMode,
        modulation: Modulation,
    ) -> Result<Self> {
        if basis.len() != sigmas.len() {
            return Err(param(format!(
                "{} basis modes but {} amplitudes",
                basis.len(),
                sigmas.len()
            )));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(param("noise amplitudes must be finite and nonnegative"));
        }
        modulation.validate()?;
        Ok(Self { grid, basis, sigmas, mode, modulation })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn basis(&self) -> &[BasisMode] {
        &self.basis
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    /// Number of driving Brownian motions.
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// True when every amplitude is zero.
    pub fn is_silent(&self) -> bool {
        self.sigmas.iter().all(|&s| s == 0.0) || self.modulation.sup_sq() == 0.0
    }

    fn sum_sigma_sq(&self) -> f64 {
        self.sigmas.iter().map(|s| s * s).sum()
    }

    /// State factor `A(u)`.
    pub fn amplitude(&self, u: &SpectralVelocity) -> f64 {
        self.amplitude_from_energy(u.norm_l2_sq())
    }

    pub fn amplitude_from_energy(&self, ke: f64) -> f64 {
        match self.mode {
            NoiseMode::Additive => 1.0,
            NoiseMode::Multiplicative => (1.0 + ke).sqrt(),
        }
    }

    /// `Tr(g*g) = Σσₖ² m(t)² A(u)²`.
    pub fn trace_g_star_g(&self, u: &SpectralVelocity, t: f64) -> f64 {
        self.trace_from_energy(u.norm_l2_sq(), t)
    }

    pub fn trace_from_energy(&self, ke: f64, t: f64) -> f64 {
        let m = self.modulation.value(t);
        let a = self.amplitude_from_energy(ke);
        self.sum_sigma_sq() * m * m * a * a
    }

    /// `Σₖ σₖ² m(t)² A(u)² (eₖ, u)²`: rate of the quadratic variation of
    /// `∫(g, u) dW`.
    pub fn projected_rate(&self, u: &SpectralVelocity, t: f64) -> f64 {
        let m = self.modulation.value(t);
        let a = self.amplitude(u);
        let s: f64 = self
            .basis
            .iter()
            .zip(&self.sigmas)
            .filter(|(_, &sigma)| sigma != 0.0)
            .map(|(mode, &sigma)| {
                let c = mode.project(u);
                sigma * sigma * c * c
            })
            .sum();
        s * m * m * a * a
    }

    /// `E_W = ½ Σσₖ²`.
    pub fn e_w(&self) -> f64 {
        0.5 * self.sum_sigma_sq()
    }

    /// Smallest `ρ` with `sup_t ‖g(t,v)‖² ≤ ρ (1 + ‖v‖²)`: `Σσₖ² sup m²`.
    pub fn rho_infty(&self) -> f64 {
        self.sum_sigma_sq() * self.modulation.sup_sq()
    }

    /// Standard normal draws `ΔBₖ = ξₖ √dt`, one per basis mode.
    pub fn draw_brownian(&self, dt: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(param(format!("time step dt = {dt} must be positive")));
        }
        let s = dt.sqrt();
        Ok((0..self.basis.len()).map(|_| rng.standard_normal() * s).collect())
    }

    /// `Σₖ σₖ m(t) A(u) eₖ ΔBₖ` for given Brownian increments.
    pub fn increment_from_brownian(
        &self,
        u: &SpectralVelocity,
        t: f64,
        dbrownian: &[f64],
    ) -> Result<SpectralVelocity> {
        self.grid.ensure_same(u.grid())?;
        if dbrownian.len() != self.basis.len() {
            return Err(param(format!(
                "{} Brownian increments for {} modes",
                dbrownian.len(),
                self.basis.len()
            )));
        }
        let ke = u.norm_l2_sq();
        if !ke.is_finite() {
            return Err(Error::StateCorruption { t, what: "non-finite kinetic energy".into() });
        }
        let scale = self.modulation.value(t) * self.amplitude_from_energy(ke);
        let mut out = SpectralVelocity::zeros(self.grid);
        for ((mode, &sigma), &db) in self.basis.iter().zip(&self.sigmas).zip(dbrownian) {
            if sigma != 0.0 {
                mode.accumulate(sigma * scale * db, &mut out);
            }
        }
        Ok(out)
    }

    /// One Itô increment `g(t,u) ΔW` over `[t, t + dt]`.
    pub fn sample_increment(
        &self,
        u: &SpectralVelocity,
        t: f64,
        dt: f64,
        rng: &mut RngStream,
    ) -> Result<SpectralVelocity> {
        let db = self.draw_brownian(dt, rng)?;
        self.increment_from_brownian(u, t, &db)
    }
}

const CHACHA20_ID: u8 = 1;
const RNG_STATE_LEN: usize = 1 + 32 + 8 + 16;

/// Seeded ChaCha20 stream; `(master_seed, index)` fixes the sequence.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
        rng.set_stream(index);
        Self { rng }
    }

    pub fn stream_index(&self) -> u64 {
        self.rng.get_stream()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Algorithm id, 256-bit key, stream index and word position.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RNG_STATE_LEN);
        out.push(CHACHA20_ID);
        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != RNG_STATE_LEN || bytes[0] != CHACHA20_ID {
            return Err(Error::Format(format!(
                "rng state must be {RNG_STATE_LEN} bytes tagged {CHACHA20_ID}"
            )));
        }
        let seed: [u8; 32] = bytes[1..33].try_into().unwrap();
        let stream = u64::from_le_bytes(bytes[33..41].try_into().unwrap());
        let word_pos = u128::from_le_bytes(bytes[41..57].try_into().unwrap());
        let mut rng = ChaCha20Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Self { rng })
    }
}

impl PartialEq for RngStream {
    fn eq(&self, other: &Self) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Spectral;

    fn grid(n: usize) -> Grid {
        Grid::new(n, 2.0 * PI).unwrap()
    }

    fn two_mode_spec(mode: NoiseMode, modulation: Modulation) -> NoiseSpec {
        let g = grid(8);
        let basis: Vec<_> = build_basis(g, 1).unwrap().into_iter().take(2).collect();
        NoiseSpec::from_parts(g, basis, vec![0.1, 0.2], mode, modulation).unwrap()
    }

    /// Independent count of the real dimension of the truncated solenoidal
    /// space: each conjugate pair `{κ, −κ}` carries 2 polarizations × 2 phases.
    fn enumerate_real_dimension(kmax: i32) -> usize {
        let mut pairs = std::collections::BTreeSet::new();
        for a in -kmax..=kmax {
            for b in -kmax..=kmax {
                for c in -kmax..=kmax {
                    if (a, b, c) != (0, 0, 0) {
                        pairs.insert(std::cmp::max((a, b, c), (-a, -b, -c)));
                    }
                }
            }
        }
        4 * pairs.len()
    }

    #[test]
    fn basis_size_matches_enumeration() {
        let b1 = build_basis(grid(8), 1).unwrap();
        assert_eq!(b1.len(), enumerate_real_dimension(1));
        assert_eq!(b1.len(), 52);
        let b2 = build_basis(grid(8), 2).unwrap();
        assert_eq!(b2.len(), enumerate_real_dimension(2));
        assert_eq!(b1[0].kappa, [-1, -1, -1]);
        assert_eq!(b1[1].kappa, [-1, -1, -1]);
        assert_eq!(b1[2].kappa, [-1, -1, 0]);
    }

    #[test]
    fn basis_rejects_out_of_band_kmax() {
        assert!(build_basis(grid(8), 0).is_err());
        assert!(build_basis(grid(8), 3).is_err());
        assert!(build_basis(grid(12), 4).is_ok());
    }

    #[test]
    fn basis_is_orthonormal_and_solenoidal() {
        let g = grid(8);
        let sp = Spectral::new(g);
        let fields: Vec<_> = build_basis(g, 1).unwrap().iter().map(|m| m.to_velocity(g)).collect();
        for (i, a) in fields.iter().enumerate() {
            assert!((a.norm_l2_sq() - 1.0).abs() < 1e-10);
            assert!(a.divergence_residual() <= 1e-12);
            assert!(a.invariant_report().holds(1e-12));
            let phys = sp.to_physical(a);
            assert!((phys.norm_l2_sq() - 1.0).abs() < 1e-10);
            for b in fields.iter().skip(i + 1) {
                assert!(a.inner_product(b).unwrap().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn trace_and_coloring() {
        let spec = two_mode_spec(NoiseMode::Additive, Modulation::default());
        let u = SpectralVelocity::zeros(*spec.grid());
        assert!((spec.trace_g_star_g(&u, 0.0) - 0.05).abs() < 1e-15);
        assert!((spec.e_w() - 0.025).abs() < 1e-15);
        assert!((spec.rho_infty() - 0.05).abs() < 1e-15);

        let empty = NoiseSpec::none(grid(8));
        assert_eq!(empty.trace_g_star_g(&u, 0.0), 0.0);
        assert_eq!(empty.e_w(), 0.0);
        assert_eq!(empty.rho_infty(), 0.0);

        let mult = two_mode_spec(NoiseMode::Multiplicative, Modulation::default());
        assert!((mult.trace_from_energy(3.0, 0.0) - 0.2).abs() < 1e-15);

        let half = two_mode_spec(NoiseMode::Additive, Modulation::Constant { value: 0.5 });
        assert!((half.rho_infty() - 0.0125).abs() < 1e-15);

        let g = grid(8);
        let basis: Vec<_> = build_basis(g, 1).unwrap().into_iter().take(2).collect();
        let doubled =
            NoiseSpec::from_parts(g, basis, vec![0.2, 0.4], NoiseMode::Additive, Modulation::default()).unwrap();
        assert!((doubled.e_w() - 4.0 * spec.e_w()).abs() < 1e-15);
    }

    #[test]
    fn zero_amplitudes_give_zero_increment() {
        let g = grid(8);
        let spec = NoiseSpec::power_law(g, 1, 0.0, 0.0, NoiseMode::Additive, Modulation::default()).unwrap();
        let u = SpectralVelocity::zeros(g);
        let mut rng = RngStream::new(3, 0);
        let inc = spec.sample_increment(&u, 0.0, 0.1, &mut rng).unwrap();
        assert_eq!(inc.norm_l2_sq(), 0.0);
    }

    #[test]
    fn increments_are_reproducible_and_solenoidal() {
        let g = grid(8);
        let spec = NoiseSpec::power_law(g, 2, 0.1, 1.0, NoiseMode::Additive, Modulation::default()).unwrap();
        let u = SpectralVelocity::zeros(g);
        let a = spec.sample_increment(&u, 0.0, 0.01, &mut RngStream::new(11, 4)).unwrap();
        let b = spec.sample_increment(&u, 0.0, 0.01, &mut RngStream::new(11, 4)).unwrap();
        assert_eq!(a, b);
        assert!(a.invariant_report().holds(1e-12));
        let c = spec.sample_increment(&u, 0.0, 0.01, &mut RngStream::new(11, 5)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn multiplicative_at_rest_matches_additive() {
        let g = grid(8);
        let add = NoiseSpec::power_law(g, 1, 0.1, 0.0, NoiseMode::Additive, Modulation::default()).unwrap();
        let mul = NoiseSpec::power_law(g, 1, 0.1, 0.0, NoiseMode::Multiplicative, Modulation::default()).unwrap();
        let u = SpectralVelocity::zeros(g);
        let a = add.sample_increment(&u, 0.0, 0.01, &mut RngStream::new(1, 0)).unwrap();
        let b = mul.sample_increment(&u, 0.0, 0.01, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_step_and_state_rejected() {
        let g = grid(8);
        let spec = NoiseSpec::power_law(g, 1, 0.1, 0.0, NoiseMode::Multiplicative, Modulation::default()).unwrap();
        let mut u = SpectralVelocity::zeros(g);
        let mut rng = RngStream::new(1, 0);
        assert!(matches!(spec.sample_increment(&u, 0.0, 0.0, &mut rng), Err(Error::Parameter(_))));
        assert!(matches!(spec.sample_increment(&u, 0.0, -1.0, &mut rng), Err(Error::Parameter(_))));
        u.coeffs_mut()[0][1] = Complex64::new(f64::INFINITY, 0.0);
        assert!(matches!(
            spec.sample_increment(&u, 0.0, 0.1, &mut rng),
            Err(Error::StateCorruption { .. })
        ));
    }

    #[test]
    fn rng_state_roundtrip_resumes_sequence() {
        let mut a = RngStream::new(42, 7);
        for _ in 0..13 {
            a.standard_normal();
        }
        let mut b = RngStream::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a, b);
        for _ in 0..50 {
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
        assert_eq!(b.stream_index(), 7);
        assert!(RngStream::from_bytes(&[0u8; 10]).is_err());
    }

    #[test]
    fn modulation_bounds() {
        assert!(Modulation::Constant { value: 1.5 }.validate().is_err());
        assert!(Modulation::Cosine { period: 0.0 }.validate().is_err());
        let m = Modulation::Cosine { period: 4.0 };
        assert!((m.value(0.0) - 1.0).abs() < 1e-15);
        assert!(m.value(2.0).abs() < 1e-15);
        assert_eq!(m.sup_sq(), 1.0);
    }
}
