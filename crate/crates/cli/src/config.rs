//! Experiment configuration files.
//!
//! The file is TOML with one flat table per concern. Powers are given in dBm
//! and ratios in dB; everything is converted to linear SI units on load.
//! Keys marked as sweeps accept a single value or an array, and the run covers
//! their Cartesian product.

use std::path::PathBuf;

use irsma_core::ao::Adjustment;
use irsma_core::channel::{db_to_linear, dbm_to_watts, Point, ScenarioGeometry, UserRegion};
use irsma_core::irs::{Codebook, Resolution};
use irsma_core::power::Access;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

impl<T> From<T> for OneOrMany<T> {
    fn from(v: T) -> Self {
        OneOrMany::One(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessName {
    Noma,
    Tdma,
    Fdma,
}

impl From<AccessName> for Access {
    fn from(a: AccessName) -> Self {
        match a {
            AccessName::Noma => Access::Noma,
            AccessName::Tdma => Access::Tdma,
            AccessName::Fdma => Access::Fdma,
        }
    }
}

/// Phase resolution: a bit count `L >= 1` or the string `"continuous"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantization {
    Bits(u32),
    Named(String),
}

impl Quantization {
    pub fn resolution(&self) -> Result<Resolution, String> {
        match self {
            Quantization::Bits(b) if (1..=16).contains(b) => Ok(Resolution::Discrete(Codebook::new(*b))),
            Quantization::Bits(b) => Err(format!("quantization bits must lie in 1..=16, got {b}")),
            Quantization::Named(s) if s == "continuous" => Ok(Resolution::Continuous),
            Quantization::Named(s) => Err(format!("unknown quantization \"{s}\"; use a bit count or \"continuous\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Number of fading states F.
    pub states: usize,
    /// CSV output path; the JSON sidecar uses the same stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub scenario: ScenarioSection,
    pub fading: FadingSection,
    pub budget: BudgetSection,
    pub scheme: SchemeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub bs_position: Point,
    /// Sweep.
    pub irs_position: OneOrMany<Point>,
    /// Fixed user positions; when absent both users are dropped in `user_region`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_positions: Option<[Point; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_region: Option<UserRegion>,
    /// Defaults to 1 m.
    #[serde(default = "one_meter")]
    pub reference_distance_m: f64,
    pub reference_loss_db: f64,
    pub exponent_bu: f64,
    pub exponent_bi: f64,
    pub exponent_iu: f64,
}

fn one_meter() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingSection {
    pub rician_factor_db: f64,
    pub noise_power_dbm: f64,
    /// Sweep. Zero removes the IRS.
    pub num_elements: OneOrMany<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    /// Sweep.
    pub avg_power_dbm: OneOrMany<f64>,
    /// Peak power; exactly one of this and `peak_offset_db` must be set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_power_dbm: Option<f64>,
    /// Peak power relative to the average power.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_offset_db: Option<f64>,
    /// Sweep. Minimum average rate per user, bits/s/Hz.
    pub min_rate: OneOrMany<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    /// Sweep.
    pub access: OneOrMany<AccessName>,
    /// Sweep.
    pub adjustment: OneOrMany<Adjustment>,
    /// Sweep.
    pub quantization: OneOrMany<Quantization>,
    #[serde(default = "default_block")]
    pub block_size: usize,
    #[serde(default = "default_samples")]
    pub samples_per_block: usize,
    #[serde(default = "default_rounds")]
    pub ao_max_rounds: usize,
    #[serde(default = "default_eps")]
    pub convergence_eps: f64,
}

fn default_block() -> usize {
    100
}
fn default_samples() -> usize {
    8
}
fn default_rounds() -> usize {
    10
}
fn default_eps() -> f64 {
    1e-2
}

/// One fully specified experiment in linear units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub access: Access,
    pub adjustment: Adjustment,
    pub num_elements: usize,
    pub resolution: Resolution,
    pub irs_position: Point,
    pub avg_power_dbm: f64,
    pub peak_power_dbm: f64,
    pub min_rate: f64,
}

impl SweepPoint {
    pub fn avg_power(&self) -> f64 {
        dbm_to_watts(self.avg_power_dbm)
    }

    pub fn peak_power(&self) -> f64 {
        dbm_to_watts(self.peak_power_dbm)
    }

    /// `L` as written to the CSV.
    pub fn level_label(&self) -> String {
        match self.resolution {
            Resolution::Continuous => "continuous".into(),
            Resolution::Discrete(cb) => cb.bits.to_string(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(render_parse_error(text, &e)))?;
        cfg.validate(text)?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn noise_power(&self) -> f64 {
        dbm_to_watts(self.fading.noise_power_dbm)
    }

    pub fn rician_factor(&self) -> f64 {
        db_to_linear(self.fading.rician_factor_db)
    }

    pub fn geometry(&self, users: [Point; 2], irs: Point) -> ScenarioGeometry {
        let s = &self.scenario;
        ScenarioGeometry {
            bs_position: s.bs_position,
            irs_position: irs,
            user_positions: users,
            reference_distance: s.reference_distance_m,
            reference_loss: db_to_linear(s.reference_loss_db),
            exp_bu: s.exponent_bu,
            exp_bi: s.exponent_bi,
            exp_iu: s.exponent_iu,
        }
    }

    pub fn region(&self) -> UserRegion {
        self.scenario.user_region.unwrap_or_default()
    }

    /// Cartesian product of the sweep keys in a fixed order.
    pub fn sweep(&self) -> Vec<SweepPoint> {
        let mut points = Vec::new();
        for access in self.scheme.access.values() {
            for adjustment in self.scheme.adjustment.values() {
                for n in self.fading.num_elements.values() {
                    for q in self.scheme.quantization.values() {
                        for irs in self.scenario.irs_position.values() {
                            for r in self.budget.min_rate.values() {
                                for p in self.budget.avg_power_dbm.values() {
                                    let peak = match (self.budget.peak_power_dbm, self.budget.peak_offset_db) {
                                        (Some(abs), _) => abs,
                                        (None, Some(off)) => p + off,
                                        (None, None) => unreachable!("validated"),
                                    };
                                    points.push(SweepPoint {
                                        access: access.into(),
                                        adjustment,
                                        num_elements: n,
                                        resolution: q.resolution().expect("validated"),
                                        irs_position: irs,
                                        avg_power_dbm: p,
                                        peak_power_dbm: peak,
                                        min_rate: r,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        points
    }

    fn validate(&self, text: &str) -> Result<(), ConfigError> {
        let fail = |section: &str, key: &str, message: String| ConfigError::Invalid { location: locate(text, section, key), message };
        if self.states == 0 {
            return Err(fail("", "states", "states must be at least 1".into()));
        }
        let s = &self.scenario;
        if !(s.reference_distance_m > 0.0) {
            return Err(fail("scenario", "reference_distance_m", "reference distance must be positive".into()));
        }
        if s.reference_loss_db > 0.0 {
            return Err(fail("scenario", "reference_loss_db", "reference loss must be at most 0 dB".into()));
        }
        for (key, e) in [("exponent_bu", s.exponent_bu), ("exponent_bi", s.exponent_bi), ("exponent_iu", s.exponent_iu)] {
            if !(e >= 2.0) {
                return Err(fail("scenario", key, format!("path-loss exponent must be at least 2, got {e}")));
            }
        }
        if let Some(users) = s.user_positions {
            for irs in s.irs_position.values() {
                if let Err(e) = self.geometry(users, irs).validate() {
                    return Err(fail("scenario", "user_positions", e.to_string()));
                }
            }
        }
        if s.irs_position.values().is_empty() {
            return Err(fail("scenario", "irs_position", "sweep is empty".into()));
        }
        let f = &self.fading;
        if !f.rician_factor_db.is_finite() {
            return Err(fail("fading", "rician_factor_db", "Rician factor must be finite".into()));
        }
        if !f.noise_power_dbm.is_finite() {
            return Err(fail("fading", "noise_power_dbm", "noise power must be finite".into()));
        }
        if f.num_elements.values().is_empty() {
            return Err(fail("fading", "num_elements", "sweep is empty".into()));
        }
        let b = &self.budget;
        match (b.peak_power_dbm, b.peak_offset_db) {
            (Some(_), Some(_)) => return Err(fail("budget", "peak_offset_db", "set either peak_power_dbm or peak_offset_db, not both".into())),
            (None, None) => return Err(fail("budget", "avg_power_dbm", "one of peak_power_dbm or peak_offset_db is required".into())),
            _ => {}
        }
        let powers = b.avg_power_dbm.values();
        if powers.is_empty() || powers.iter().any(|p| !p.is_finite()) {
            return Err(fail("budget", "avg_power_dbm", "average powers must be finite and nonempty".into()));
        }
        for p in &powers {
            let peak = b.peak_power_dbm.unwrap_or_else(|| p + b.peak_offset_db.unwrap_or(0.0));
            if peak < *p {
                let key = if b.peak_power_dbm.is_some() { "peak_power_dbm" } else { "peak_offset_db" };
                return Err(fail("budget", key, format!("peak power {peak} dBm is below the average power {p} dBm")));
            }
        }
        let rates = b.min_rate.values();
        if rates.is_empty() || rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(fail("budget", "min_rate", "minimum rates must be finite and nonnegative".into()));
        }
        let sc = &self.scheme;
        if sc.access.values().is_empty() {
            return Err(fail("scheme", "access", "sweep is empty".into()));
        }
        if sc.adjustment.values().is_empty() {
            return Err(fail("scheme", "adjustment", "sweep is empty".into()));
        }
        let levels = sc.quantization.values();
        if levels.is_empty() {
            return Err(fail("scheme", "quantization", "sweep is empty".into()));
        }
        for q in &levels {
            q.resolution().map_err(|m| fail("scheme", "quantization", m))?;
        }
        if sc.block_size == 0 {
            return Err(fail("scheme", "block_size", "block size must be at least 1".into()));
        }
        if sc.samples_per_block == 0 || sc.samples_per_block > sc.block_size {
            return Err(fail("scheme", "samples_per_block", "samples per block must lie in 1..=block_size".into()));
        }
        if sc.ao_max_rounds == 0 {
            return Err(fail("scheme", "ao_max_rounds", "at least one round is required".into()));
        }
        if !(sc.convergence_eps > 0.0) {
            return Err(fail("scheme", "convergence_eps", "convergence threshold must be positive".into()));
        }
        Ok(())
    }
}

/// `line N` of `key` inside `[section]`, or the section header when the key is absent.
fn locate(text: &str, section: &str, key: &str) -> String {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return format!("line {}", i + 1);
                }
            }
        }
    }
    match header {
        Some(n) => format!("line {n} ([{section}])"),
        None if section.is_empty() => "top level".into(),
        None => format!("[{section}]"),
    }
}

fn render_parse_error(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {}", e.message())
        }
        None => e.message().to_string(),
    }
}
