#![allow(dead_code)]

use lssm::config::{parse_config_str, RunConfig};
use lssm::field::{Grid, SpectralVelocity};
use num_complex::Complex64;

pub fn config(text: &str) -> RunConfig {
    parse_config_str(text, &[]).expect("valid test config")
}

/// Physical-space samples of a band-limited field by direct summation of
/// its Fourier series, one axis at a time. Returns `[component][point]`
/// for `u` and `[3i + j][point]` for `∂ⱼuᵢ`.
pub struct DirectSamples {
    pub u: [Vec<f64>; 3],
    pub grad: Vec<Vec<f64>>,
}

pub fn direct_samples(u: &SpectralVelocity) -> DirectSamples {
    let g = *u.grid();
    let n = g.n();
    let kmax = g.dealias_kmax();
    let kk: Vec<i32> = (-kmax..=kmax).collect();
    let m = kk.len();
    let unit = 2.0 * std::f64::consts::PI / g.ell();
    // e[κ][x] = exp(i·unit·κ·x_j) with x_j = ℓ j / n.
    let phase: Vec<Vec<Complex64>> = kk
        .iter()
        .map(|&k| {
            (0..n)
                .map(|j| {
                    let x = g.ell() * j as f64 / n as f64;
                    Complex64::from_polar(1.0, unit * k as f64 * x)
                })
                .collect()
        })
        .collect();
    let mut comps: Vec<Vec<f64>> = Vec::new();
    // 3 velocity components, then 9 gradient entries.
    for target in 0..12 {
        let (i, deriv) = if target < 3 { (target, None) } else { ((target - 3) / 3, Some((target - 3) % 3)) };
        let coef = |a: usize, b: usize, c: usize| -> Complex64 {
            let kappa = [kk[a], kk[b], kk[c]];
            let idx = match g.index_of(kappa) {
                Some(idx) => idx,
                None => return Complex64::new(0.0, 0.0),
            };
            let z = u.component(i)[idx];
            match deriv {
                None => z,
                Some(j) => z * Complex64::new(0.0, unit * kappa[j] as f64),
            }
        };
        // Sum over κ₃, then κ₂, then κ₁.
        let mut s3 = vec![Complex64::new(0.0, 0.0); m * m * n];
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    let z = coef(a, b, c);
                    if z == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    for x3 in 0..n {
                        s3[(a * m + b) * n + x3] += z * phase[c][x3];
                    }
                }
            }
        }
        let mut s2 = vec![Complex64::new(0.0, 0.0); m * n * n];
        for a in 0..m {
            for b in 0..m {
                for x2 in 0..n {
                    let e = phase[b][x2];
                    for x3 in 0..n {
                        s2[(a * n + x2) * n + x3] += s3[(a * m + b) * n + x3] * e;
                    }
                }
            }
        }
        let mut out = vec![0.0; n * n * n];
        for a in 0..m {
            for x1 in 0..n {
                let e = phase[a][x1];
                for x2 in 0..n {
                    for x3 in 0..n {
                        out[(x1 * n + x2) * n + x3] += (s2[(a * n + x2) * n + x3] * e).re;
                    }
                }
            }
        }
        comps.push(out);
    }
    let grad = comps.split_off(3);
    let w = comps.pop().unwrap();
    let v = comps.pop().unwrap();
    let u0 = comps.pop().unwrap();
    DirectSamples { u: [u0, v, w], grad }
}

pub fn cell(g: &Grid) -> f64 {
    (g.ell() / g.n() as f64).powi(3)
}

pub fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}
