//! Run configuration: TOML schema, dotted-key overrides, validation and the
//! content hash used to key artifacts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{FlowParams, ForcingSpec};
use crate::error::{Error, Result};
use crate::field::{Grid, Spectral};
use crate::integrate::{DtKind, DtPolicy, InitialCondition};
use crate::noise::{Modulation, NoiseMode, NoiseSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    pub ell: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub nu: f64,
    pub nu_bar: f64,
    pub r: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSwitch {
    #[default]
    Off,
    Additive,
    Multiplicative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub mode: NoiseSwitch,
    #[serde(default)]
    pub sigma0: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "one_i32")]
    pub kmax: i32,
    #[serde(default)]
    pub modulation: Modulation,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { mode: NoiseSwitch::Off, sigma0: 0.0, alpha: 0.0, kmax: 1, modulation: Modulation::default() }
    }
}

fn one_i32() -> i32 {
    1
}

fn one_u64() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

fn quarter() -> f64 {
    0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(default)]
    pub dt_policy: DtKind,
    pub dt_max: f64,
    #[serde(default = "half")]
    pub c_adv: f64,
    #[serde(default = "quarter")]
    pub c_visc: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub burn_in: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Every `cadence`-th step is written to `records.csv`.
    #[serde(default = "one_u64")]
    pub cadence: u64,
    #[serde(default = "default_true")]
    pub checkpoint: bool,
}

fn default_true() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { cadence: 1, checkpoint: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default = "one_usize")]
    pub members: usize,
    #[serde(default = "one_usize")]
    pub parallel_width: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self { members: 1, parallel_width: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSection,
    pub flow: FlowSection,
    #[serde(default)]
    pub forcing: ForcingSpec,
    #[serde(default)]
    pub noise: NoiseSection,
    pub time: TimeSection,
    #[serde(default)]
    pub init: InitialCondition,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
}

fn cfg_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), msg: msg.into() }
}

fn finite(key: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(cfg_err(key, format!("{v} is not finite")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(cfg_err("seed", "must fit a TOML integer (at most 2^63 - 1)"));
        }
        let g = &self.grid;
        if g.n < 4 || g.n % 2 != 0 {
            return Err(cfg_err("grid.n", format!("{} must be even and at least 4", g.n)));
        }
        finite("grid.ell", g.ell)?;
        if g.ell <= 0.0 {
            return Err(cfg_err("grid.ell", "must be positive"));
        }
        let f = &self.flow;
        for (k, v) in [("flow.nu", f.nu), ("flow.nu_bar", f.nu_bar), ("flow.r", f.r)] {
            finite(k, v)?;
        }
        if f.nu <= 0.0 {
            return Err(cfg_err("flow.nu", format!("{} must be positive", f.nu)));
        }
        if f.nu_bar < 0.0 {
            return Err(cfg_err("flow.nu_bar", format!("{} must be nonnegative", f.nu_bar)));
        }
        if f.r < 2.0 {
            return Err(cfg_err("flow.r", format!("{} must be at least 2", f.r)));
        }
        let n = &self.noise;
        finite("noise.sigma0", n.sigma0)?;
        finite("noise.alpha", n.alpha)?;
        if n.mode != NoiseSwitch::Off {
            if n.sigma0 < 0.0 {
                return Err(cfg_err("noise.sigma0", "must be nonnegative"));
            }
            if n.kmax < 1 || n.kmax > (g.n / 3) as i32 {
                return Err(cfg_err("noise.kmax", format!("{} outside [1, {}]", n.kmax, g.n / 3)));
            }
            n.modulation.validate().map_err(|e| cfg_err("noise.modulation", e.to_string()))?;
        }
        let t = &self.time;
        for (k, v) in [("time.dt_max", t.dt_max), ("time.T", t.horizon), ("time.burn_in", t.burn_in), ("time.c_adv", t.c_adv), ("time.c_visc", t.c_visc)] {
            finite(k, v)?;
        }
        if t.dt_max <= 0.0 {
            return Err(cfg_err("time.dt_max", "must be positive"));
        }
        if t.horizon < 0.0 {
            return Err(cfg_err("time.T", "must be nonnegative"));
        }
        if t.burn_in < 0.0 || t.burn_in > t.horizon {
            return Err(cfg_err("time.burn_in", "must lie in [0, T]"));
        }
        if t.dt_policy == DtKind::Cfl && (t.c_adv <= 0.0 || t.c_visc <= 0.0) {
            return Err(cfg_err("time.c_adv", "CFL constants must be positive"));
        }
        if self.output.cadence == 0 {
            return Err(cfg_err("output.cadence", "must be at least 1"));
        }
        if self.ensemble.members == 0 {
            return Err(cfg_err("ensemble.members", "must be at least 1"));
        }
        if self.ensemble.parallel_width == 0 {
            return Err(cfg_err("ensemble.parallel_width", "must be at least 1"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.n, self.grid.ell)
    }

    pub fn flow_params(&self) -> FlowParams {
        FlowParams { nu: self.flow.nu, nu_bar: self.flow.nu_bar, r: self.flow.r, forcing: self.forcing.clone() }
    }

    pub fn dt_policy(&self) -> DtPolicy {
        DtPolicy { kind: self.time.dt_policy, dt_max: self.time.dt_max, c_adv: self.time.c_adv, c_visc: self.time.c_visc }
    }

    pub fn noise_spec(&self, grid: Grid) -> Result<NoiseSpec> {
        let n = &self.noise;
        let mode = match n.mode {
            NoiseSwitch::Off => return Ok(NoiseSpec::none(grid)),
            NoiseSwitch::Additive => NoiseMode::Additive,
            NoiseSwitch::Multiplicative => NoiseMode::Multiplicative,
        };
        NoiseSpec::power_law(grid, n.kmax, n.sigma0, n.alpha, mode, n.modulation)
    }

    pub fn spectral(&self) -> Result<Spectral> {
        Ok(Spectral::new(self.grid()?))
    }

    /// Canonical TOML; parses back to an identical config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON form. The
    /// thread count does not affect results and is excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.ensemble.parallel_width = 1;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..8])
    }
}

/// Parses TOML text, applies `key=value` overrides with dotted keys, and
/// validates.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
        key: String::new(),
        msg: e.message().to_string(),
    })?;
    for ov in overrides {
        apply_override(&mut table, ov)?;
    }
    let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        let msg = e.message().to_string();
        let key = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
            .unwrap_or("")
            .to_string();
        Error::Config { key, msg }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, &[])
}

pub fn parse_config_with(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, overrides)
}

fn override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `a.b.c = value` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, ov: &str) -> Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| cfg_err(ov, "override must look like key=value"))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(cfg_err(key, "malformed dotted key"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| cfg_err(key, format!("{p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), override_value(raw.trim()));
    Ok(())
}
