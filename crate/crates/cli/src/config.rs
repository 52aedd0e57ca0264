//! Run configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Torus,
    Icosphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Spectrum,
    Branch,
    Threshold,
    All,
}

impl Mode {
    pub fn runs_branch(self) -> bool {
        matches!(self, Self::Branch | Self::All)
    }

    pub fn runs_threshold(self) -> bool {
        matches!(self, Self::Threshold | Self::All)
    }
}

/// Geometric amplitude grid, descending from `t_max` to `t_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TGrid {
    pub t_max: f64,
    pub t_min: f64,
    pub points: usize,
}

impl TGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.t_max];
        }
        let ratio = (self.t_min / self.t_max).powf(1.0 / (self.points - 1) as f64);
        (0..self.points).map(|k| self.t_max * ratio.powi(k as i32)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub kernel: f64,
    pub fixed_point: f64,
    pub linear_solve: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            kernel: 1e-9,
            fixed_point: 1e-12,
            linear_solve: 1e-13,
        }
    }
}

fn default_side_length() -> f64 {
    1.0
}

fn default_p() -> f64 {
    4.0
}

fn default_eigen_count() -> usize {
    6
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: Geometry,
    /// Grid cells per side (torus) or subdivision level (icosphere).
    pub resolution: usize,
    #[serde(default = "default_side_length")]
    pub side_length: f64,
    pub degree: i64,
    pub kappa2: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    pub mode: Mode,
    #[serde(default = "default_eigen_count")]
    pub eigen_count: usize,
    pub t_grid: Option<TGrid>,
    /// Absolute `τ` values of the threshold scan.
    #[serde(default)]
    pub tau_values: Vec<f64>,
    /// `τ/τ₀` values of the threshold scan, resolved once `λ` is known.
    #[serde(default)]
    pub tau_ratios: Vec<f64>,
    /// Runs the threshold scan even when `κ² < ½`.
    #[serde(default)]
    pub allow_small_kappa: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// One rejected field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Checks every field and reports all violations together.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let mut reject = |field: &'static str, message: String| errors.push(FieldError { field, message });

        match self.geometry {
            Geometry::Torus if self.resolution < 4 => {
                reject("resolution", format!("torus needs at least 4 cells per side, got {}", self.resolution))
            }
            Geometry::Icosphere if !(1..=7).contains(&self.resolution) => reject(
                "resolution",
                format!("icosphere subdivision must lie in 1..=7, got {}", self.resolution),
            ),
            _ => {}
        }
        if !(self.side_length > 0.0 && self.side_length.is_finite()) {
            reject("side_length", format!("must be positive, got {}", self.side_length));
        }
        if self.degree < 0 {
            reject("degree", format!("must be >= 0, got {}", self.degree));
        }
        if !(self.kappa2 > 0.0 && self.kappa2.is_finite()) {
            reject("kappa2", format!("must be > 0, got {}", self.kappa2));
        }
        if !(self.p > 2.0 && self.p.is_finite()) {
            reject("p", format!("must be > 2, got {}", self.p));
        }
        if self.eigen_count == 0 {
            reject("eigen_count", "must be at least 1".into());
        }
        match (&self.t_grid, self.mode.runs_branch()) {
            (None, true) => reject("t_grid", "required for branch runs".into()),
            (Some(g), _) => {
                if !(g.t_max > 0.0 && g.t_max.is_finite()) {
                    reject("t_grid.t_max", format!("must be positive, got {}", g.t_max));
                }
                if !(g.t_min > 0.0 && g.t_min <= g.t_max) {
                    reject("t_grid.t_min", format!("must lie in (0, t_max], got {}", g.t_min));
                }
                if g.points == 0 {
                    reject("t_grid.points", "must be at least 1".into());
                }
            }
            (None, false) => {}
        }
        if self.mode.runs_threshold() && self.tau_values.is_empty() && self.tau_ratios.is_empty() {
            reject("tau_values", "threshold runs need tau_values or tau_ratios".into());
        }
        if self.mode.runs_threshold() && self.kappa2 > 0.0 && self.kappa2 < 0.5 && !self.allow_small_kappa {
            reject(
                "kappa2",
                format!("threshold scans need kappa2 >= 1/2, got {} (set allow_small_kappa to override)", self.kappa2),
            );
        }
        if let Some(bad) = self.tau_values.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            reject("tau_values", format!("entries must be positive, got {bad}"));
        }
        if let Some(bad) = self.tau_ratios.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            reject("tau_ratios", format!("entries must be positive, got {bad}"));
        }
        for (field, value) in [
            ("tolerances.kernel", self.tolerances.kernel),
            ("tolerances.fixed_point", self.tolerances.fixed_point),
            ("tolerances.linear_solve", self.tolerances.linear_solve),
        ] {
            if !(value > 0.0 && value < 1.0) {
                reject(field, format!("must lie in (0, 1), got {value}"));
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            reject("output_dir", "must not be empty".into());
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
geometry = "torus"
resolution = 12
degree = 1
kappa2 = 1.0
mode = "spectrum"
"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.p, 4.0);
        assert_eq!(c.side_length, 1.0);
        assert_eq!(c.tolerances, Tolerances::default());
        assert_eq!(c.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn reports_every_bad_field() {
        let text = MINIMAL.replace("kappa2 = 1.0", "kappa2 = 0.0\np = 1.5").replace("degree = 1", "degree = -2");
        let Err(ConfigError::Invalid(errors)) = RunConfig::from_toml_str(&text) else {
            panic!("expected validation errors");
        };
        let fields: Vec<_> = errors.iter().map(|e| e.field).collect();
        assert_eq!(fields, ["degree", "kappa2", "p"]);
    }

    #[test]
    fn branch_mode_needs_a_grid() {
        let text = MINIMAL.replace("\"spectrum\"", "\"branch\"");
        let Err(ConfigError::Invalid(errors)) = RunConfig::from_toml_str(&text) else {
            panic!("expected validation errors");
        };
        assert_eq!(errors[0].field, "t_grid");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::from_toml_str(&format!("{MINIMAL}\nkapa2 = 3.0\n")),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = TGrid {
            t_max: 0.4,
            t_min: 0.05,
            points: 4,
        };
        let v = g.values();
        assert_eq!(v.len(), 4);
        assert_eq!(v[0], 0.4);
        assert!((v[3] - 0.05).abs() < 1e-15);
        assert!(v.windows(2).all(|w| w[1] < w[0]));
    }
}
