//! Flat `key = value` system configuration.
//!
//! Defaults mirror the reference industrial deployment: a 1 km square with
//! 20 single-antenna access points, 200 users with length-40 pilots,
//! 1.9 GHz carrier, 5.9 dB shadowing, 200 mW transmit power, -109 dBm noise
//! and activation probability 0.1.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::preprocess::FeatureMode;

/// Arithmetic precision used for network training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f64" | "double" => Ok(Precision::F64),
            "f32" | "single" => Ok(Precision::F32),
            other => Err(Error::Config(format!(
                "precision must be `f64` or `f32`, got `{other}`"
            ))),
        }
    }
}

/// All scenario and training parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Side of the square deployment area, meters.
    pub area_side_m: f64,
    pub num_aps: usize,
    pub num_users: usize,
    /// Antennas per access point.
    pub num_antennas: usize,
    /// Pilot length in symbols.
    pub pilot_len: usize,
    pub carrier_ghz: f64,
    /// Shadowing intensity multiplying a standard-normal draw, dB.
    pub shadow_intensity: f64,
    pub tx_power_mw: f64,
    pub noise_dbm: f64,
    pub activity_prob: f64,
    pub batch_size: usize,
    pub num_epochs: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
    pub feature_mode: FeatureMode,
    pub precision: Precision,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            area_side_m: 1000.0,
            num_aps: 20,
            num_users: 200,
            num_antennas: 1,
            pilot_len: 40,
            carrier_ghz: 1.9,
            shadow_intensity: 5.9,
            tx_power_mw: 200.0,
            noise_dbm: -109.0,
            activity_prob: 0.1,
            batch_size: 256,
            num_epochs: 10,
            learning_rate: 1e-3,
            rng_seed: 0,
            feature_mode: FeatureMode::Magnitude,
            precision: Precision::F64,
        }
    }
}

const KEYS: &[&str] = &[
    "area_side_m",
    "num_aps",
    "num_users",
    "num_antennas",
    "pilot_len",
    "carrier_ghz",
    "shadow_intensity",
    "tx_power_mw",
    "noise_dbm",
    "activity_prob",
    "batch_size",
    "num_epochs",
    "learning_rate",
    "rng_seed",
    "feature_mode",
    "precision",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for key `{key}`")))
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_aps", self.num_aps),
            ("num_users", self.num_users),
            ("num_antennas", self.num_antennas),
            ("pilot_len", self.pilot_len),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.area_side_m > 0.0 && self.area_side_m.is_finite()) {
            return Err(Error::Config("area_side_m must be positive".into()));
        }
        if !(self.carrier_ghz > 0.0 && self.carrier_ghz.is_finite()) {
            return Err(Error::Config("carrier_ghz must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.activity_prob) {
            return Err(Error::Config("activity_prob must lie in [0, 1]".into()));
        }
        if !self.shadow_intensity.is_finite() || !self.noise_dbm.is_finite() {
            return Err(Error::Config("shadowing and noise must be finite".into()));
        }
        if !(self.tx_power_mw > 0.0 && self.tx_power_mw.is_finite()) {
            return Err(Error::Config("tx_power_mw must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Noise power in milliwatts.
    pub fn noise_mw(&self) -> f64 {
        10f64.powf(self.noise_dbm / 10.0)
    }

    /// Transmit power normalized by the noise power.
    ///
    /// Received frames are expressed in units where the noise variance is 1,
    /// so this dimensionless factor plays the role of the transmit power.
    pub fn effective_snr(&self) -> f64 {
        self.tx_power_mw / self.noise_mw()
    }

    /// Depth (channel count) of the input tensor.
    pub fn tensor_depth(&self) -> usize {
        self.feature_mode.depth(self.num_aps)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "area_side_m" => self.area_side_m = parse_num(key, value)?,
            "num_aps" => self.num_aps = parse_num(key, value)?,
            "num_users" => self.num_users = parse_num(key, value)?,
            "num_antennas" => self.num_antennas = parse_num(key, value)?,
            "pilot_len" => self.pilot_len = parse_num(key, value)?,
            "carrier_ghz" => self.carrier_ghz = parse_num(key, value)?,
            "shadow_intensity" => self.shadow_intensity = parse_num(key, value)?,
            "tx_power_mw" => self.tx_power_mw = parse_num(key, value)?,
            "noise_dbm" => self.noise_dbm = parse_num(key, value)?,
            "activity_prob" => self.activity_prob = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "num_epochs" => self.num_epochs = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "rng_seed" => self.rng_seed = parse_num(key, value)?,
            "feature_mode" => self.feature_mode = FeatureMode::parse(value)?,
            "precision" => self.precision = Precision::parse(value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key `{other}` (expected one of: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Canonical text form; `from_text(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "area_side_m = {}", self.area_side_m);
        let _ = writeln!(s, "num_aps = {}", self.num_aps);
        let _ = writeln!(s, "num_users = {}", self.num_users);
        let _ = writeln!(s, "num_antennas = {}", self.num_antennas);
        let _ = writeln!(s, "pilot_len = {}", self.pilot_len);
        let _ = writeln!(s, "carrier_ghz = {}", self.carrier_ghz);
        let _ = writeln!(s, "shadow_intensity = {}", self.shadow_intensity);
        let _ = writeln!(s, "tx_power_mw = {}", self.tx_power_mw);
        let _ = writeln!(s, "noise_dbm = {}", self.noise_dbm);
        let _ = writeln!(s, "activity_prob = {}", self.activity_prob);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "num_epochs = {}", self.num_epochs);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "rng_seed = {}", self.rng_seed);
        let _ = writeln!(s, "feature_mode = {}", self.feature_mode.as_str());
        let _ = writeln!(s, "precision = {}", self.precision.as_str());
        s
    }

    /// 64-bit digest of the canonical text form.
    pub fn digest(&self) -> u64 {
        let hash = Sha256::digest(self.to_text().as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&hash[..8]);
        u64::from_le_bytes(bytes)
    }
}
