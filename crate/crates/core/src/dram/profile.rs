//! Static module descriptions and the shipped profiles for modules 1 to 12.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mapping::RowMapping;
use crate::error::{Error, Result};

/// Current profile document version.
pub const PROFILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Manufacturer {
    A,
    B,
    C,
    D,
}

impl fmt::Display for Manufacturer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Manufacturer::A => "A",
            Manufacturer::B => "B",
            Manufacturer::C => "C",
            Manufacturer::D => "D",
        };
        f.write_str(s)
    }
}

/// Cubic `c3·t³ + c2·t² + c1·t + c0` with `t` in °C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerCubic {
    pub c3: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl BerCubic {
    pub const fn new(c3: f64, c2: f64, c1: f64, c0: f64) -> Self {
        Self { c3, c2, c1, c0 }
    }

    pub const fn constant(k: f64) -> Self {
        Self::new(0.0, 0.0, 0.0, k)
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        ((self.c3 * t + self.c2) * t + self.c1) * t + self.c0
    }

    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        (3.0 * self.c3 * t + 2.0 * self.c2) * t + self.c1
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.c3 * k, self.c2 * k, self.c1 * k, self.c0 * k)
    }

    pub fn coeffs(&self) -> [f64; 4] {
        [self.c3, self.c2, self.c1, self.c0]
    }
}

/// Inclusive integer temperature grid with 1 °C steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TempDomain {
    pub min: i32,
    pub max: i32,
}

impl Default for TempDomain {
    fn default() -> Self {
        Self { min: 50, max: 95 }
    }
}

impl TempDomain {
    pub const fn new(min: i32, max: i32) -> Self {
        Self { min, max }
    }

    pub fn len(&self) -> usize {
        (self.max - self.min + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, t: i32) -> bool {
        (self.min..=self.max).contains(&t)
    }

    pub fn contains_f64(&self, t: f64) -> bool {
        t >= f64::from(self.min) && t <= f64::from(self.max)
    }

    pub fn index(&self, t: i32) -> Result<usize> {
        if self.contains(t) {
            Ok((t - self.min) as usize)
        } else {
            Err(Error::domain(format!(
                "temperature {t} °C outside [{}, {}]",
                self.min, self.max
            )))
        }
    }

    pub fn temps(&self) -> impl Iterator<Item = i32> + Clone {
        self.min..=self.max
    }

    pub fn span(&self) -> i32 {
        self.max - self.min
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (f64::from(self.min) + f64::from(self.max))
    }
}

fn default_version() -> u32 {
    PROFILE_VERSION
}

fn default_rows() -> u32 {
    24576
}

fn default_columns() -> u32 {
    65536
}

fn default_scale() -> f64 {
    1.0
}

fn default_canary_density() -> f64 {
    30.0
}

fn default_canary_flip_prob() -> f64 {
    0.8
}

/// Static description of a simulated DRAM module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleProfile {
    #[serde(default = "default_version")]
    pub version: u32,
    pub module_id: u32,
    pub manufacturer: Manufacturer,
    #[serde(default = "default_rows")]
    pub rows: u32,
    /// Bits per row.
    #[serde(default = "default_columns")]
    pub columns_per_row: u32,
    pub mapping: RowMapping,
    pub ber_cubic: BerCubic,
    #[serde(default)]
    pub temp_domain: TempDomain,
    pub single_sided_asymmetric: bool,
    #[serde(default = "default_scale")]
    pub ber_scale: f64,
    #[serde(default = "default_canary_density")]
    pub canary_density: f64,
    #[serde(default = "default_canary_flip_prob")]
    pub canary_flip_prob: f64,
    /// Mean band cells per row. `None` sizes the population from the BER curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_cells_per_row: Option<f64>,
}

const BUILTIN: [&str; 12] = [
    include_str!("../../profiles/module_01.json"),
    include_str!("../../profiles/module_02.json"),
    include_str!("../../profiles/module_03.json"),
    include_str!("../../profiles/module_04.json"),
    include_str!("../../profiles/module_05.json"),
    include_str!("../../profiles/module_06.json"),
    include_str!("../../profiles/module_07.json"),
    include_str!("../../profiles/module_08.json"),
    include_str!("../../profiles/module_09.json"),
    include_str!("../../profiles/module_10.json"),
    include_str!("../../profiles/module_11.json"),
    include_str!("../../profiles/module_12.json"),
];

impl ModuleProfile {
    /// One of the twelve shipped profiles (`id` in 1..=12).
    pub fn builtin(id: u32) -> Result<Self> {
        let idx = id
            .checked_sub(1)
            .filter(|i| (*i as usize) < BUILTIN.len())
            .ok_or_else(|| Error::config(format!("no shipped profile with module id {id}")))?;
        Self::from_json(BUILTIN[idx as usize])
    }

    pub fn all_builtin() -> Vec<Self> {
        (1..=12).map(|i| Self::builtin(i).expect("shipped profile")).collect()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read profile {}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != PROFILE_VERSION {
            return Err(Error::config(format!("unsupported profile version {}", self.version)));
        }
        if self.rows < 3 {
            return Err(Error::config("a module needs at least 3 rows"));
        }
        if !self.columns_per_row.is_power_of_two() || self.columns_per_row > 1 << 16 {
            return Err(Error::config("columns_per_row must be a power of two no larger than 65536"));
        }
        if self.mapping.width > 32 || u64::from(self.rows) > self.mapping.address_space() {
            return Err(Error::config(format!(
                "{} rows do not fit a {}-bit row address",
                self.rows, self.mapping.width
            )));
        }
        if self.temp_domain.min >= self.temp_domain.max {
            return Err(Error::config("temperature domain must contain at least two points"));
        }
        if !(self.ber_scale.is_finite() && self.ber_scale > 0.0) {
            return Err(Error::config("ber_scale must be positive"));
        }
        if !(self.canary_density.is_finite() && self.canary_density >= 0.0) {
            return Err(Error::config("canary_density must be non-negative"));
        }
        if !(self.canary_flip_prob > 0.0 && self.canary_flip_prob <= 1.0) {
            return Err(Error::config("canary_flip_prob must be in (0, 1]"));
        }
        if let Some(n) = self.band_cells_per_row {
            if !(n.is_finite() && n > 0.0 && n <= f64::from(self.columns_per_row)) {
                return Err(Error::config("band_cells_per_row must be in (0, columns_per_row]"));
            }
        }
        for t in self.temp_domain.temps() {
            let y = self.ber_cubic.eval(f64::from(t));
            if !(y.is_finite() && y > 0.0) {
                return Err(Error::config(format!(
                    "BER cubic is not positive at {t} °C ({y})"
                )));
            }
        }
        Ok(())
    }

    /// `ber_scale · P(t)` in flips per row.
    pub fn expected_ber(&self, temp: f64) -> Result<f64> {
        if !self.temp_domain.contains_f64(temp) {
            return Err(Error::domain(format!(
                "temperature {temp} °C outside [{}, {}]",
                self.temp_domain.min, self.temp_domain.max
            )));
        }
        Ok(self.ber_scale * self.ber_cubic.eval(temp))
    }

    /// Same module model with a different inter-module scale.
    pub fn with_ber_scale(&self, ber_scale: f64) -> Self {
        Self { ber_scale, ..self.clone() }
    }
}

/// Free-function form of [`ModuleProfile::expected_ber`].
pub fn expected_ber(profile: &ModuleProfile, temp: f64) -> Result<f64> {
    profile.expected_ber(temp)
}
