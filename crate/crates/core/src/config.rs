//! JSON-backed configuration for coefficient sets and sweeps.

use crate::error::{HomlabError, Result};
use crate::fields::{build_preset, CoefficientSet, Preset};
use serde::{Deserialize, Serialize};
use std::path::Path;

fn default_lambda() -> f64 {
    1.0
}

fn default_cell_tol() -> f64 {
    crate::cell::DEFAULT_CELL_TOL
}

fn default_solve_tol() -> f64 {
    crate::solver::DEFAULT_SOLVE_TOL
}

fn default_q() -> usize {
    32
}

fn default_data() -> String {
    "one_plus_cos".into()
}

fn default_phi() -> String {
    "single".into()
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

fn default_workers() -> usize {
    1
}

/// Coefficient specification: preset name, parameters and sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub preset: String,
    #[serde(default)]
    pub params: Vec<f64>,
    pub m: usize,
    pub d: usize,
    /// cell grid resolution N (power of two >= 16)
    pub n: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

impl CoefficientSpec {
    pub fn build(&self) -> Result<CoefficientSet> {
        let preset: Preset = self.preset.parse()?;
        build_preset(preset, &self.params, self.m, self.d, self.n, self.lambda)
    }
}

/// Full sweep configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub coeff: CoefficientSpec,
    /// descending list of epsilon values
    pub eps: Vec<f64>,
    /// cells per oscillation period: grid n = q / eps
    #[serde(default = "default_q")]
    pub cells_per_eps: usize,
    /// named volume data choice for F (f = 0, g = 0)
    #[serde(default = "default_data")]
    pub data: String,
    /// phi strategy: single | double | steklov
    #[serde(default = "default_phi")]
    pub phi: String,
    #[serde(default = "default_cell_tol")]
    pub cell_tol: f64,
    #[serde(default = "default_solve_tol")]
    pub solve_tol: f64,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl SweepConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: SweepConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Grid resolution for one epsilon value.
    pub fn grid_n(&self, eps: f64) -> Result<usize> {
        let q = self.cells_per_eps as f64;
        let n = (q / eps).round();
        if (q / eps - n).abs() > 1e-9 || n < 8.0 {
            return Err(HomlabError::InvalidConfig(format!(
                "cells_per_eps = {} with eps = {eps} gives a non-integral grid",
                self.cells_per_eps
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() {
            return Err(HomlabError::InvalidConfig("empty eps list".into()));
        }
        for pair in self.eps.windows(2) {
            if pair[1] >= pair[0] {
                return Err(HomlabError::InvalidConfig(
                    "eps list must be strictly descending".into(),
                ));
            }
        }
        for &eps in &self.eps {
            if !(eps > 0.0 && eps <= 0.25) {
                return Err(HomlabError::InvalidConfig(format!(
                    "eps = {eps} outside (0, 1/4]"
                )));
            }
            self.grid_n(eps)?;
        }
        if self.cells_per_eps < 16 {
            return Err(HomlabError::InvalidConfig(
                "cells_per_eps must be at least 16".into(),
            ));
        }
        if !(self.cell_tol > 0.0 && self.solve_tol > 0.0) {
            return Err(HomlabError::InvalidConfig("tolerances must be positive".into()));
        }
        if self.workers == 0 {
            return Err(HomlabError::InvalidConfig("workers must be >= 1".into()));
        }
        for fmt in &self.formats {
            if !matches!(fmt.as_str(), "csv" | "json" | "svg") {
                return Err(HomlabError::InvalidConfig(format!("unknown format `{fmt}`")));
            }
        }
        self.phi.parse::<crate::expansion::PhiStrategy>()?;
        named_data_check(&self.data)?;
        Ok(())
    }
}

fn named_data_check(name: &str) -> Result<()> {
    match name {
        "one_plus_cos" | "cos_cos" | "ones" => Ok(()),
        other => Err(HomlabError::InvalidConfig(format!(
            "unknown data spec `{other}` (expected one_plus_cos|cos_cos|ones)"
        ))),
    }
}

/// Build the named volume data F on the (d, n) grid with m components.
pub fn build_volume_data(name: &str, d: usize, n: usize, m: usize) -> Result<crate::grid::GridFunction> {
    named_data_check(name)?;
    use std::f64::consts::PI;
    let f: Box<dyn Fn(&[f64]) -> f64> = match name {
        "one_plus_cos" => Box::new(|x: &[f64]| 1.0 + (2.0 * PI * x[0]).cos()),
        "cos_cos" => Box::new(|x: &[f64]| x.iter().map(|&v| (PI * v).cos()).product()),
        _ => Box::new(|_| 1.0),
    };
    Ok(crate::grid::GridFunction::from_fn(d, n, m, |_, x| f(x)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> SweepConfig {
        serde_json::from_str(
            r#"{
                "coeff": {"preset": "scalar1d", "params": [2.0, 1.0], "m": 1, "d": 1, "n": 64},
                "eps": [0.125, 0.0625, 0.03125]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = base_config();
        cfg.validate().unwrap();
        assert_eq!(cfg.cells_per_eps, 32);
        assert_eq!(cfg.phi, "single");
        assert_eq!(cfg.grid_n(0.125).unwrap(), 256);
    }

    #[test]
    fn rejects_ascending_eps() {
        let mut cfg = base_config();
        cfg.eps = vec![0.03125, 0.125];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_unknown_strategy() {
        let mut cfg = base_config();
        cfg.phi = "septuple".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn builds_coefficients() {
        let cfg = base_config();
        let cs = cfg.coeff.build().unwrap();
        assert_eq!(cs.d, 1);
        assert_eq!(cs.n, 64);
    }
}
