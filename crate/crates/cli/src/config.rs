//! TOML configuration files. Unknown keys are rejected.

use std::path::Path;

use qcsb::glass::{GlassMaterial, GridSpec};
use qcsb::{BathSpectrum, QcsbParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

fn default_dim() -> usize {
    30
}

fn default_tol() -> f64 {
    1e-8
}

fn default_true() -> bool {
    true
}

/// Initial coherent amplitude of the oscillator; the spins start thermal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Initial {
    pub alpha_re: f64,
    #[serde(default)]
    pub alpha_im: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    /// Fock cutoff d.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Frequency of the number basis; defaults to the effective frequency.
    pub ref_freq: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub t_end: f64,
    pub sample_dt: f64,
    /// Rerun at d + 10 and warn if observables move by more than 1e-4.
    #[serde(default = "default_true")]
    pub convergence_check: bool,
    /// Window for the initial impurity slope; defaults to one fitted period.
    pub dephasing_window: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SpinCount,
    CouplingFreq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// With a coupling_freq sweep, set bare_freq = sqrt(1 - w^2).
    #[serde(default)]
    pub bare_from_coupling: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub model: QcsbParams,
    pub bath: BathSpectrum,
    pub initial: Initial,
    pub numerics: Numerics,
    pub sweep: Option<Sweep>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermoInputs {
    /// Static force for the linear-response shifts.
    #[serde(default)]
    pub force: f64,
    /// <x^2> at which the flip rate is evaluated.
    #[serde(default)]
    pub x2: f64,
}

/// Accepts a simulation config; the dynamics tables are parsed but unused.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermoConfig {
    pub model: QcsbParams,
    pub bath: BathSpectrum,
    #[serde(default = "default_thermo_inputs")]
    pub thermo: ThermoInputs,
    pub initial: Option<Initial>,
    pub numerics: Option<Numerics>,
    pub sweep: Option<Sweep>,
}

fn default_thermo_inputs() -> ThermoInputs {
    ThermoInputs { force: 0.0, x2: 0.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlassConfig {
    pub material: GlassMaterial,
    pub grid: GridSpec,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = read(path)?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.model
            .validate()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        self.bath
            .validate()
            .map_err(|e| CliError::Config(format!("bath: {e}")))?;
        let n = &self.numerics;
        if n.dim < 2 {
            return bad(format!("numerics.dim must be >= 2, got {}", n.dim));
        }
        if !(n.t_end > 0.0) || !(n.sample_dt > 0.0) || !(n.tol > 0.0) {
            return bad("numerics.t_end, numerics.sample_dt and numerics.tol must be > 0".into());
        }
        if let Some(w) = n.ref_freq {
            if !(w > 0.0) {
                return bad(format!("numerics.ref_freq must be > 0, got {w}"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep.values must not be empty".into());
            }
            for &v in &s.values {
                let ok = match s.axis {
                    SweepAxis::SpinCount => v >= 1.0 && v.fract() == 0.0,
                    SweepAxis::CouplingFreq => v >= 0.0 && (!s.bare_from_coupling || v <= 1.0),
                };
                if !ok {
                    return bad(format!("sweep.values: {v} is not valid for {:?}", s.axis));
                }
            }
        }
        Ok(())
    }

    /// Model parameters at one sweep point.
    pub fn model_at(&self, value: f64) -> QcsbParams {
        let Some(s) = &self.sweep else {
            return self.model;
        };
        match s.axis {
            SweepAxis::SpinCount => self.model.with_spin_count(value as usize),
            SweepAxis::CouplingFreq => {
                let bare = if s.bare_from_coupling {
                    (1.0 - value * value).max(0.0).sqrt()
                } else {
                    self.model.bare_freq
                };
                self.model.with_coupling(value, bare)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[model]
mass = 1.0
bare_freq = 0.0
coupling_freq = 1.0
spin_count = 4
spin_gap = 10.0
beta = 0.01

[bath]
kind = "constant"
gamma = 10.0

[initial]
alpha_re = 1.0

[numerics]
t_end = 5.0
sample_dt = 0.1
"#;

    #[test]
    fn defaults() {
        let c: SimConfig = toml::from_str(BASE).unwrap();
        assert_eq!(c.numerics.dim, 30);
        assert_eq!(c.numerics.tol, 1e-8);
        assert!(c.numerics.convergence_check);
        assert!(c.sweep.is_none());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = BASE.replace("beta = 0.01", "beta = 0.01\nbetta = 2.0");
        let err = toml::from_str::<SimConfig>(&text).unwrap_err().to_string();
        assert!(err.contains("betta"), "{err}");
    }

    #[test]
    fn sweep_points() {
        let text = format!(
            "{BASE}\n[sweep]\naxis = \"coupling_freq\"\nvalues = [0.6, 1.0]\nbare_from_coupling = true\n"
        );
        let c: SimConfig = toml::from_str(&text).unwrap();
        c.validate().unwrap();
        let p = c.model_at(0.6);
        assert_eq!(p.coupling_freq, 0.6);
        assert!((p.bare_freq - 0.8).abs() < 1e-15);
        let bad = text.replace("[0.6, 1.0]", "[1.2]");
        assert!(toml::from_str::<SimConfig>(&bad).unwrap().validate().is_err());
    }

    #[test]
    fn thermo_reads_simulation_configs() {
        let c: ThermoConfig = toml::from_str(BASE).unwrap();
        assert_eq!(c.thermo.force, 0.0);
        assert!(toml::from_str::<ThermoConfig>(&format!("{BASE}\n[extra]\n")).is_err());
    }
}
