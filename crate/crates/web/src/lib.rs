//! Browser bindings for the static demo page in `www/`.
//!
//! Each export wraps a plain Rust function so the same code paths run in
//! native tests.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use qcsb::analysis;
use qcsb::glass::{self, GlassMaterial, GridSpec};
use qcsb::{
    build_oscillator_space, dynamics, evolve, thermo, BathSpectrum, BlockGenerator, EvolveOptions, QcsbParams,
};
use wasm_bindgen::prelude::*;

/// Largest Fock cutoff the page may request; the browser runs single-threaded.
const MAX_DIM: usize = 40;
const MAX_SPINS: usize = 32;

/// Sampled trajectory plus the oscillation fit, if one succeeded.
#[wasm_bindgen]
pub struct SimResult {
    times: Vec<f64>,
    x: Vec<f64>,
    impurity: Vec<f64>,
    ds_tls: Vec<f64>,
    kappa: f64,
    omega: f64,
}

#[wasm_bindgen]
impl SimResult {
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }
    pub fn impurity(&self) -> Vec<f64> {
        self.impurity.clone()
    }
    pub fn ds_tls(&self) -> Vec<f64> {
        self.ds_tls.clone()
    }
    /// Fitted damping rate; NaN when the fit failed.
    #[wasm_bindgen(getter)]
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    #[wasm_bindgen(getter)]
    pub fn omega(&self) -> f64 {
        self.omega
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SimInput {
    pub spin_count: usize,
    pub coupling_freq: f64,
    pub bare_freq: f64,
    pub spin_gap: f64,
    pub beta: f64,
    pub gamma: f64,
    pub dim: usize,
    pub t_end: f64,
    pub sample_dt: f64,
}

pub fn run_simulation(inp: &SimInput) -> Result<SimResult, String> {
    if inp.dim > MAX_DIM || inp.spin_count > MAX_SPINS {
        return Err(format!("demo limits: dim <= {MAX_DIM}, N <= {MAX_SPINS}"));
    }
    let run = || -> qcsb::Result<SimResult> {
        let p = QcsbParams::new(
            1.0,
            inp.bare_freq,
            inp.coupling_freq,
            inp.spin_count,
            inp.spin_gap,
            inp.beta,
        )?;
        let bath = BathSpectrum::Constant { gamma: inp.gamma };
        bath.validate()?;
        let space = Arc::new(build_oscillator_space(
            inp.dim,
            p.mass,
            thermo::basis_frequency(&p),
        )?);
        let state = dynamics::thermal_coherent_state(space.clone(), &p, C64::new(1.0, 0.0))?;
        let gen = BlockGenerator::new(&space, &p, &bath)?;
        let traj = evolve(
            &state,
            &gen,
            &p,
            &EvolveOptions::new(inp.t_end, inp.sample_dt, 1e-7)?,
        )?;
        let fit = analysis::fit_damped_oscillation(&traj.times, &traj.x()).ok();
        Ok(SimResult {
            x: traj.x(),
            impurity: traj.impurity(),
            ds_tls: traj.ds_tls(),
            kappa: fit.map_or(f64::NAN, |f| f.kappa),
            omega: fit.map_or(f64::NAN, |f| f.omega),
            times: traj.times,
        })
    };
    run().map_err(|e| e.to_string())
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    spin_count: usize,
    coupling_freq: f64,
    bare_freq: f64,
    spin_gap: f64,
    beta: f64,
    gamma: f64,
    dim: usize,
    t_end: f64,
    sample_dt: f64,
) -> Result<SimResult, JsError> {
    run_simulation(&SimInput {
        spin_count,
        coupling_freq,
        bare_freq,
        spin_gap,
        beta,
        gamma,
        dim,
        t_end,
        sample_dt,
    })
    .map_err(|e| JsError::new(&e))
}

/// Vitreous silica constants, as in `configs/silica.toml`.
pub fn silica() -> GlassMaterial {
    GlassMaterial {
        p_bar: 3.4e44,
        gamma_l: 2.5634826e-19,
        gamma_t: 1.6021766e-19,
        v_l: 5800.0,
        v_t: 3750.0,
        rho: 2200.0,
    }
}

/// Row-major R_s over (temperature, frequency), log-spaced; failed cells
/// are NaN. Appends the boundary frequency for each temperature.
pub fn rs_map_values(
    temp_min: f64,
    temp_max: f64,
    n_temp: usize,
    omega_min: f64,
    omega_max: f64,
    n_omega: usize,
) -> Result<Vec<f64>, String> {
    if n_temp * n_omega > 200 * 200 {
        return Err("demo limit: at most 40000 cells".into());
    }
    let spec = GridSpec {
        omega_min,
        omega_max,
        n_omega,
        temp_min,
        temp_max,
        n_temp,
        log_spaced: true,
    };
    let grid = glass::rs_grid(&silica(), &spec).map_err(|e| e.to_string())?;
    let mut out: Vec<f64> = grid.cells.iter().map(|c| c.r_s).collect();
    out.extend(grid.boundary.iter().map(|&(_, w)| w));
    Ok(out)
}

#[wasm_bindgen]
pub fn rs_map(
    temp_min: f64,
    temp_max: f64,
    n_temp: usize,
    omega_min: f64,
    omega_max: f64,
    n_omega: usize,
) -> Result<Vec<f64>, JsError> {
    rs_map_values(temp_min, temp_max, n_temp, omega_min, omega_max, n_omega).map_err(|e| JsError::new(&e))
}

/// `[effective frequency, entropic frequency, entropic parameter,
/// entropy curvature, up-spin probability]`; the entropic parameter is NaN
/// when undefined.
pub fn thermo_values(
    coupling_freq: f64,
    bare_freq: f64,
    spin_gap: f64,
    beta: f64,
) -> Result<Vec<f64>, String> {
    let p = QcsbParams::new(1.0, bare_freq, coupling_freq, 1, spin_gap, beta).map_err(|e| e.to_string())?;
    Ok(vec![
        thermo::effective_frequency(&p),
        thermo::entropic_frequency(&p),
        thermo::entropic_parameter(&p).unwrap_or(f64::NAN),
        thermo::entropy_curvature(&p),
        thermo::mean_polarization(p.beta, p.spin_gap),
    ])
}

#[wasm_bindgen]
pub fn thermo_summary(
    coupling_freq: f64,
    bare_freq: f64,
    spin_gap: f64,
    beta: f64,
) -> Result<Vec<f64>, JsError> {
    thermo_values(coupling_freq, bare_freq, spin_gap, beta).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulation_runs_and_fits() {
        let r = run_simulation(&SimInput {
            spin_count: 8,
            coupling_freq: 1.0,
            bare_freq: 0.0,
            spin_gap: 100.0,
            beta: 0.01,
            gamma: 10.0,
            dim: 14,
            t_end: 40.0,
            sample_dt: 0.2,
        })
        .unwrap();
        assert_eq!(r.times().len(), 201);
        assert!(r.kappa() > 0.0 && r.omega() > 0.0);
    }

    #[test]
    fn limits_are_errors() {
        let mut inp = SimInput {
            spin_count: 2,
            coupling_freq: 1.0,
            bare_freq: 0.0,
            spin_gap: 100.0,
            beta: 0.01,
            gamma: 10.0,
            dim: 100,
            t_end: 1.0,
            sample_dt: 0.1,
        };
        assert!(run_simulation(&inp).is_err());
        inp.dim = 10;
        inp.gamma = -1.0;
        assert!(run_simulation(&inp).is_err());
    }

    #[test]
    fn rs_map_shape() {
        let v = rs_map_values(0.1, 1.0, 3, 1e6, 1e9, 4).unwrap();
        assert_eq!(v.len(), 3 * 4 + 3);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn thermo_matches_core() {
        let v = thermo_values(1.0, 0.0, 100.0, 0.01).unwrap();
        assert!((v[0] * v[0] - v[4]).abs() < 1e-15);
    }
}
