//! Binary checkpoint format (little endian):
//!
//! ```text
//! "LSSM" | version u32 | n u32 | ell f64 | t f64 | step u64 | rng_len u32 | rng bytes
//! body: 3 components × n³ × (re f64, im f64),
//!       κ lexicographic over [−n/2, n/2)³ (κ₁ slowest), component-major
//! ```
//!
//! Forcing files use the same layout with `rng_len = 0`.

use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{Grid, SpectralVelocity};
use crate::integrate::SimState;
use crate::noise::RngStream;

pub const MAGIC: &[u8; 4] = b"LSSM";
pub const FORMAT_VERSION: u32 = 1;

fn lex_order(grid: &Grid) -> Vec<usize> {
    let h = (grid.n() / 2) as i32;
    let mut out = Vec::with_capacity(grid.points());
    for a in -h..h {
        for b in -h..h {
            for c in -h..h {
                out.push(grid.index_of([a, b, c]).expect("on grid"));
            }
        }
    }
    out
}

fn encode_raw(u: &SpectralVelocity, t: f64, step: u64, rng: &[u8]) -> Vec<u8> {
    let g = u.grid();
    let mut out = Vec::with_capacity(40 + rng.len() + 48 * g.points());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.n() as u32).to_le_bytes());
    out.extend_from_slice(&g.ell().to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    out.extend_from_slice(&step.to_le_bytes());
    out.extend_from_slice(&(rng.len() as u32).to_le_bytes());
    out.extend_from_slice(rng);
    let order = lex_order(g);
    for c in u.coeffs() {
        for &idx in &order {
            out.extend_from_slice(&c[idx].re.to_le_bytes());
            out.extend_from_slice(&c[idx].im.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(Error::Format(format!("truncated checkpoint at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

struct Decoded {
    grid: Grid,
    u: SpectralVelocity,
    t: f64,
    step: u64,
    rng: Vec<u8>,
}

fn decode_raw(bytes: &[u8]) -> Result<Decoded> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let n = r.u32()? as usize;
    let ell = r.f64()?;
    let grid = Grid::new(n, ell).map_err(|e| Error::Format(format!("bad grid header: {e}")))?;
    let t = r.f64()?;
    let step = r.u64()?;
    let rng_len = r.u32()? as usize;
    let rng = r.take(rng_len)?.to_vec();
    let order = lex_order(&grid);
    let mut coeffs: [Vec<Complex64>; 3] = std::array::from_fn(|_| vec![Complex64::new(0.0, 0.0); grid.points()]);
    for c in coeffs.iter_mut() {
        for &idx in &order {
            c[idx] = Complex64::new(r.f64()?, r.f64()?);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let u = SpectralVelocity::from_coeffs(grid, coeffs)?;
    Ok(Decoded { grid, u, t, step, rng })
}

pub fn encode(state: &SimState) -> Vec<u8> {
    encode_raw(&state.u, state.t, state.step_index, &state.rng.to_bytes())
}

pub fn decode(bytes: &[u8]) -> Result<SimState> {
    let d = decode_raw(bytes)?;
    let rng = RngStream::from_bytes(&d.rng)?;
    if !d.t.is_finite() || !d.u.is_finite() {
        return Err(Error::Format("non-finite values in checkpoint".into()));
    }
    Ok(SimState { u: d.u, t: d.t, step_index: d.step, rng })
}

pub fn save(path: &Path, state: &SimState) -> Result<()> {
    std::fs::write(path, encode(state))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SimState> {
    decode(&std::fs::read(path)?)
}

/// Writes a bare spectral field (e.g. a forcing) in the checkpoint layout.
pub fn write_field(path: &Path, u: &SpectralVelocity) -> Result<()> {
    std::fs::write(path, encode_raw(u, 0.0, 0, &[]))?;
    Ok(())
}

/// Reads any file in the checkpoint layout as a bare field.
pub fn read_field(path: &Path) -> Result<(Grid, SpectralVelocity)> {
    let d = decode_raw(&std::fs::read(path)?)?;
    if !d.u.is_finite() {
        return Err(Error::Format(format!("non-finite values in {}", path.display())));
    }
    Ok((d.grid, d.u))
}
