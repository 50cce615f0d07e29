use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use qcsb::analysis::{self, DampedFit, LinearFit};
use qcsb::glass::{self, CellStatus};
use qcsb::{
    brute_force_evolve, build_oscillator_space, dynamics, evolve, io, thermo, BathSpectrum, BlockGenerator,
    EvolveOptions, QcsbError, QcsbParams, Trajectory,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{self, GlassConfig, SimConfig, ThermoConfig};
use crate::output::{write_atomic, write_json};
use crate::{CliError, Common};

/// Relative change above which the d + 10 rerun triggers a warning.
const CONVERGENCE_TOL: f64 = 1e-4;
/// Block vs full-space agreement required by `validate`.
const VALIDATE_TOL: f64 = 1e-6;
/// Fraction of glass cells that must evaluate for a zero exit.
const GLASS_MIN_OK: f64 = 0.9;

fn load_sim(path: &Path, common: &Common) -> Result<SimConfig, CliError> {
    let mut cfg: SimConfig = config::load(path)?;
    if let Some(tol) = common.tol {
        cfg.numerics.tol = tol;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn integrate(cfg: &SimConfig, params: &QcsbParams, dim: usize) -> qcsb::Result<Trajectory> {
    let n = &cfg.numerics;
    let w_ref = n.ref_freq.unwrap_or_else(|| thermo::basis_frequency(params));
    let space = Arc::new(build_oscillator_space(dim, params.mass, w_ref)?);
    let alpha = C64::new(cfg.initial.alpha_re, cfg.initial.alpha_im);
    let state = dynamics::thermal_coherent_state(space.clone(), params, alpha)?;
    let gen = BlockGenerator::new(&space, params, &cfg.bath)?;
    evolve(
        &state,
        &gen,
        params,
        &EvolveOptions::new(n.t_end, n.sample_dt, n.tol)?,
    )
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> std::io::Result<()> {
    write_atomic(path, |w| io::write_trajectory_csv(traj, w))
}

/// Result of a fit, serialized as either the value or the error message.
#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum Fitted<T> {
    Ok(T),
    Error(String),
}

impl<T> Fitted<T> {
    fn from_result(r: qcsb::Result<T>) -> Self {
        match r {
            Ok(v) => Fitted::Ok(v),
            Err(e) => Fitted::Error(e.to_string()),
        }
    }

    fn ok(&self) -> Option<&T> {
        match self {
            Fitted::Ok(v) => Some(v),
            Fitted::Error(_) => None,
        }
    }
}

#[derive(Serialize)]
struct Fits {
    damped_oscillation: Fitted<DampedFit>,
    dephasing_window: Option<f64>,
    dephasing_slope: Fitted<f64>,
}

fn fit_trajectory(traj: &Trajectory, window: Option<f64>) -> Fits {
    let damped = Fitted::from_result(analysis::fit_damped_oscillation(&traj.times, &traj.x()));
    let window = window.or_else(|| damped.ok().map(DampedFit::period));
    let slope = match window {
        Some(w) => Fitted::from_result(analysis::initial_slope(&traj.times, &traj.impurity(), w)),
        None => Fitted::Error("no window: the oscillation fit failed and none was configured".into()),
    };
    Fits {
        damped_oscillation: damped,
        dephasing_window: window,
        dephasing_slope: slope,
    }
}

#[derive(Serialize)]
struct Convergence {
    dim: usize,
    check_dim: usize,
    max_relative_change: f64,
    converged: bool,
}

/// Largest change of each observable between two runs, relative to its
/// largest magnitude.
fn relative_change(a: &Trajectory, b: &Trajectory) -> f64 {
    let series: [fn(&Trajectory) -> Vec<f64>; 5] = [
        Trajectory::x,
        Trajectory::p,
        Trajectory::x2,
        Trajectory::impurity,
        Trajectory::ds_tls,
    ];
    series
        .iter()
        .map(|f| {
            let (va, vb) = (f(a), f(b));
            let scale = va.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12);
            let diff = va.iter().zip(&vb).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
            diff / scale
        })
        .fold(0.0, f64::max)
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: String,
    model: &'a QcsbParams,
    bath: &'a BathSpectrum,
    numerics: &'a config::Numerics,
    thermo: Option<thermo::ThermoSummary>,
    diagnostics: &'a dynamics::Diagnostics,
    convergence: Option<Convergence>,
    warnings: Vec<String>,
    fits: Fits,
}

pub fn simulate(path: &Path, common: &Common) -> Result<(), CliError> {
    let cfg = load_sim(path, common)?;
    let traj_path = common.out.join("trajectory.csv");
    let traj = match integrate(&cfg, &cfg.model, cfg.numerics.dim) {
        Ok(t) => t,
        Err(e) => {
            if let Some(partial) = e.partial_trajectory() {
                let p = common.out.join("trajectory.csv.partial");
                write_trajectory(&p, partial)?;
                eprintln!("qcsb: wrote {} samples to {}", partial.times.len(), p.display());
            }
            return Err(e.into());
        }
    };
    write_trajectory(&traj_path, &traj)?;

    let mut warnings = traj.warnings.clone();
    let convergence = if cfg.numerics.convergence_check {
        let check_dim = cfg.numerics.dim + 10;
        let check = integrate(&cfg, &cfg.model, check_dim)?;
        let change = relative_change(&traj, &check);
        let converged = change < CONVERGENCE_TOL;
        if !converged {
            warnings.push(format!(
                "Fock cutoff not converged: observables change by {change:.2e} (relative) from d={} to d={check_dim}",
                cfg.numerics.dim
            ));
        }
        Some(Convergence {
            dim: cfg.numerics.dim,
            check_dim,
            max_relative_change: change,
            converged,
        })
    } else {
        None
    };

    let fits = fit_trajectory(&traj, cfg.numerics.dephasing_window);
    let x2_end = traj.records.last().map_or(0.0, |r| r.x2);
    let thermo = match thermo::summary(&cfg.model, &cfg.bath, 0.0, x2_end) {
        Ok(s) => Some(s),
        Err(e) => {
            warnings.push(format!("thermodynamic summary unavailable: {e}"));
            None
        }
    };
    for w in &warnings {
        eprintln!("qcsb: warning: {w}");
    }
    let summary = Summary {
        schema: io::schema_line("qcsb-summary"),
        model: &cfg.model,
        bath: &cfg.bath,
        numerics: &cfg.numerics,
        thermo,
        diagnostics: &traj.diagnostics,
        convergence,
        warnings,
        fits,
    };
    write_json(&common.out.join("summary.json"), &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    value: f64,
    kappa: f64,
    omega_fit: f64,
    dephasing_slope: f64,
    entropic_parameter: f64,
    entropy_curvature: f64,
    flag: String,
}

fn sweep_point(cfg: &SimConfig, value: f64) -> SweepRow {
    let p = cfg.model_at(value);
    let mut row = SweepRow {
        value,
        kappa: f64::NAN,
        omega_fit: f64::NAN,
        dephasing_slope: f64::NAN,
        entropic_parameter: thermo::entropic_parameter(&p).unwrap_or(f64::NAN),
        entropy_curvature: thermo::entropy_curvature(&p),
        flag: "ok".into(),
    };
    let traj = match p.validate().and_then(|_| integrate(cfg, &p, cfg.numerics.dim)) {
        Ok(t) => t,
        Err(e) => {
            row.flag = format!("integration: {e}");
            return row;
        }
    };
    let fits = fit_trajectory(&traj, cfg.numerics.dephasing_window);
    let mut problems = Vec::new();
    match fits.damped_oscillation {
        Fitted::Ok(f) => {
            row.kappa = f.kappa;
            row.omega_fit = f.omega;
        }
        Fitted::Error(e) => problems.push(format!("oscillation fit: {e}")),
    }
    match fits.dephasing_slope {
        Fitted::Ok(s) => row.dephasing_slope = s,
        Fitted::Error(e) => problems.push(format!("dephasing slope: {e}")),
    }
    if !problems.is_empty() {
        row.flag = problems.join("; ");
    }
    row
}

#[derive(Serialize)]
struct SweepFits {
    schema: String,
    points: usize,
    failed_points: usize,
    inverse_kappa_vs_value: Fitted<LinearFit>,
    inverse_dephasing_vs_value: Fitted<LinearFit>,
    dephasing_vs_entropic_parameter: Fitted<LinearFit>,
}

fn fit_columns(rows: &[SweepRow], x: fn(&SweepRow) -> f64, y: fn(&SweepRow) -> f64) -> Fitted<LinearFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .map(|r| (x(r), y(r)))
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .unzip();
    Fitted::from_result(analysis::scaling_fit(&xs, &ys))
}

pub fn sweep(path: &Path, common: &Common) -> Result<(), CliError> {
    let cfg = load_sim(path, common)?;
    let Some(spec) = &cfg.sweep else {
        return Err(CliError::Config(format!(
            "{}: missing [sweep] table",
            path.display()
        )));
    };
    let rows: Vec<SweepRow> = spec.values.par_iter().map(|&v| sweep_point(&cfg, v)).collect();
    for r in rows.iter().filter(|r| r.flag != "ok") {
        eprintln!("qcsb: point {}: {}", r.value, r.flag);
    }
    let failed = rows.iter().filter(|r| r.flag.starts_with("integration")).count();

    write_atomic(&common.out.join("sweep.csv"), |w| {
        use std::io::Write;
        writeln!(w, "{}", io::schema_line("qcsb-sweep"))?;
        writeln!(
            w,
            "value,kappa,omega_fit,dephasing_slope,entropic_parameter,entropy_curvature,flag"
        )?;
        for r in &rows {
            let flag = r.flag.replace([',', '\n'], " ");
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                io::fmt15(r.value),
                io::fmt15(r.kappa),
                io::fmt15(r.omega_fit),
                io::fmt15(r.dephasing_slope),
                io::fmt15(r.entropic_parameter),
                io::fmt15(r.entropy_curvature),
                flag
            )?;
        }
        Ok(())
    })?;

    let fits = SweepFits {
        schema: io::schema_line("qcsb-sweep-fits"),
        points: rows.len(),
        failed_points: failed,
        inverse_kappa_vs_value: fit_columns(&rows, |r| r.value, |r| 1.0 / r.kappa),
        inverse_dephasing_vs_value: fit_columns(&rows, |r| r.value, |r| 1.0 / r.dephasing_slope),
        dephasing_vs_entropic_parameter: fit_columns(&rows, |r| r.entropic_parameter, |r| r.dephasing_slope),
    };
    write_json(&common.out.join("fits.json"), &fits)?;
    if failed == rows.len() {
        return Err(CliError::Numerical(
            "every sweep point failed to integrate".into(),
        ));
    }
    Ok(())
}

pub fn thermo(path: &Path, common: &Common) -> Result<(), CliError> {
    let cfg: ThermoConfig = config::load(path)?;
    cfg.model.validate()?;
    cfg.bath.validate()?;
    let s = thermo::summary(&cfg.model, &cfg.bath, cfg.thermo.force, cfg.thermo.x2)?;
    #[derive(Serialize)]
    struct Out<'a> {
        schema: String,
        model: &'a QcsbParams,
        bath: &'a BathSpectrum,
        force: f64,
        x2: f64,
        summary: thermo::ThermoSummary,
    }
    write_json(
        &common.out.join("thermo.json"),
        &Out {
            schema: io::schema_line("qcsb-thermo"),
            model: &cfg.model,
            bath: &cfg.bath,
            force: cfg.thermo.force,
            x2: cfg.thermo.x2,
            summary: s,
        },
    )?;
    Ok(())
}

pub fn glass_map(path: &Path, common: &Common) -> Result<(), CliError> {
    let cfg: GlassConfig = config::load(path)?;
    cfg.material.validate()?;
    cfg.grid.validate()?;
    let grid = glass::rs_grid(&cfg.material, &cfg.grid)?;
    write_atomic(&common.out.join("rsgrid.csv"), |w| {
        io::write_rs_grid_csv(&grid, w)
    })?;
    write_atomic(&common.out.join("boundary.csv"), |w| {
        io::write_boundary_csv(&grid, w)
    })?;
    let mut failed = 0;
    for c in grid.failed() {
        failed += 1;
        if let CellStatus::Failed(msg) = &c.status {
            eprintln!("qcsb: cell T={:e} K, w_p={:e} rad/s: {msg}", c.temp, c.omega_p);
        }
    }
    let total = grid.cells.len();
    let ok_frac = (total - failed) as f64 / total as f64;
    if ok_frac < GLASS_MIN_OK {
        return Err(CliError::Numerical(format!("{failed} of {total} cells failed")));
    }
    Ok(())
}

#[derive(Serialize)]
struct ValidateCase {
    spin_count: usize,
    max_abs_diff: f64,
    min_eigenvalue: f64,
    max_trace_error: f64,
    pass: bool,
}

fn validate_case(n: usize, gain_scale: f64, tol: f64) -> qcsb::Result<ValidateCase> {
    let p = QcsbParams::new(1.0, 0.0, 1.0, n, 100.0, 0.01)?;
    let spectrum = BathSpectrum::Constant { gamma: 10.0 };
    let space = Arc::new(build_oscillator_space(12, p.mass, thermo::basis_frequency(&p))?);
    let state = dynamics::thermal_coherent_state(space.clone(), &p, C64::new(1.0, 0.0))?;
    let opts = EvolveOptions::new(5.0, 0.1, tol)?;
    let mut gen = BlockGenerator::new(&space, &p, &spectrum)?;
    gen.gain_scale = gain_scale;
    let a = evolve(&state, &gen, &p, &opts);
    let b = brute_force_evolve(&space, &p, &spectrum, &state.to_full(), &opts)?;
    let a = match a {
        Ok(t) => t,
        // A broken generator may drive populations negative; that is a
        // validation failure, not a numerical one.
        Err(QcsbError::NegativePopulation { .. }) => {
            return Ok(ValidateCase {
                spin_count: n,
                max_abs_diff: f64::INFINITY,
                min_eigenvalue: f64::NAN,
                max_trace_error: f64::NAN,
                pass: false,
            })
        }
        Err(e) => return Err(e),
    };
    let mut diff: f64 = if a.times.len() == b.times.len() {
        0.0
    } else {
        f64::INFINITY
    };
    for (ra, rb) in a.records.iter().zip(&b.records) {
        let d = [
            ra.x - rb.x,
            ra.p - rb.p,
            ra.x2 - rb.x2,
            ra.impurity - rb.impurity,
            ra.s_tls - rb.s_tls,
        ];
        diff = d.iter().fold(diff, |m, v| m.max(v.abs()));
        diff = ra
            .populations
            .iter()
            .zip(&rb.populations)
            .fold(diff, |m, (x, y)| m.max((x - y).abs()));
    }
    let dg = &a.diagnostics;
    Ok(ValidateCase {
        spin_count: n,
        max_abs_diff: diff,
        min_eigenvalue: dg.min_eigenvalue,
        max_trace_error: dg.max_trace_error,
        pass: diff <= VALIDATE_TOL && dg.min_eigenvalue > -1e-8 && dg.max_trace_error < 1e-8,
    })
}

pub fn validate(gain_scale: f64, common: &Common) -> Result<(), CliError> {
    let tol = common.tol.unwrap_or(1e-10);
    let cases = (1..=3)
        .map(|n| validate_case(n, gain_scale, tol))
        .collect::<qcsb::Result<Vec<_>>>()?;
    for c in &cases {
        println!(
            "N={} max|block-full|={:.3e} min_eig={:.3e} trace_err={:.3e} {}",
            c.spin_count,
            c.max_abs_diff,
            c.min_eigenvalue,
            c.max_trace_error,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    #[derive(Serialize)]
    struct Report<'a> {
        schema: String,
        tolerance: f64,
        cases: &'a [ValidateCase],
    }
    write_json(
        &common.out.join("validate.json"),
        &Report {
            schema: io::schema_line("qcsb-validate"),
            tolerance: VALIDATE_TOL,
            cases: &cases,
        },
    )?;
    let failed: Vec<String> = cases
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("N={}", c.spin_count))
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Validation(format!(
            "block integrator disagrees with reference for {}",
            failed.join(", ")
        )));
    }
    Ok(())
}
