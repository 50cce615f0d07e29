use serde::{Deserialize, Serialize};

use crate::error::{QcsbError, Result};

/// Constants of the quadratic-coupled spin-bath model in natural units
/// (hbar = k_B = 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QcsbParams {
    pub mass: f64,
    /// Bare oscillator frequency omega_0.
    pub bare_freq: f64,
    /// Coupling frequency omega; a fully polarized bath adds omega^2 to the
    /// squared frequency.
    pub coupling_freq: f64,
    pub spin_count: usize,
    /// TLS level splitting B.
    pub spin_gap: f64,
    pub beta: f64,
}

impl QcsbParams {
    pub fn new(
        mass: f64,
        bare_freq: f64,
        coupling_freq: f64,
        spin_count: usize,
        spin_gap: f64,
        beta: f64,
    ) -> Result<Self> {
        let p = QcsbParams {
            mass,
            bare_freq,
            coupling_freq,
            spin_count,
            spin_gap,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.mass,
            self.bare_freq,
            self.coupling_freq,
            self.spin_gap,
            self.beta,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(QcsbError::invalid("model parameters must be finite"));
        }
        if self.mass <= 0.0 {
            return Err(QcsbError::invalid(format!("mass must be > 0, got {}", self.mass)));
        }
        if self.bare_freq < 0.0 || self.coupling_freq < 0.0 {
            return Err(QcsbError::invalid("frequencies must be >= 0"));
        }
        if self.spin_count == 0 {
            return Err(QcsbError::invalid("spin_count must be >= 1"));
        }
        if self.beta <= 0.0 {
            return Err(QcsbError::invalid(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.spin_gap <= 0.0 {
            return Err(QcsbError::invalid(format!(
                "spin_gap must be > 0, got {}",
                self.spin_gap
            )));
        }
        Ok(())
    }

    /// Per-spin coupling delta = M omega^2 / (2N).
    pub fn delta(&self) -> f64 {
        self.mass * self.coupling_freq * self.coupling_freq / (2.0 * self.spin_count as f64)
    }

    /// Squared oscillator frequency in the sector with `k` up spins.
    pub fn sector_freq_sq(&self, k: usize) -> f64 {
        self.bare_freq * self.bare_freq
            + self.coupling_freq * self.coupling_freq * k as f64 / self.spin_count as f64
    }

    pub fn with_spin_count(mut self, n: usize) -> Self {
        self.spin_count = n;
        self
    }

    pub fn with_coupling(mut self, coupling_freq: f64, bare_freq: f64) -> Self {
        self.coupling_freq = coupling_freq;
        self.bare_freq = bare_freq;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_times_n_is_half_m_omega_sq() {
        for n in 1..20 {
            let p = QcsbParams::new(1.3, 0.2, 0.7, n, 1.0, 0.5).unwrap();
            assert!((p.delta() * n as f64 - 0.5 * 1.3 * 0.49).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_values() {
        assert!(QcsbParams::new(0.0, 0.0, 1.0, 1, 1.0, 1.0).is_err());
        assert!(QcsbParams::new(1.0, -1.0, 1.0, 1, 1.0, 1.0).is_err());
        assert!(QcsbParams::new(1.0, 0.0, 1.0, 0, 1.0, 1.0).is_err());
        assert!(QcsbParams::new(1.0, 0.0, 1.0, 1, 0.0, 1.0).is_err());
        assert!(QcsbParams::new(1.0, 0.0, 1.0, 1, 1.0, 0.0).is_err());
        assert!(QcsbParams::new(1.0, 0.0, f64::NAN, 1, 1.0, 1.0).is_err());
    }

    #[test]
    fn delta_tracks_spin_count() {
        let p = QcsbParams::new(1.0, 0.0, 1.0, 4, 1.0, 1.0).unwrap();
        assert_eq!(p.with_spin_count(8).delta(), 1.0 / 16.0);
    }
}
