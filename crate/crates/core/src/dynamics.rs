//! Entropic spring master equation in the symmetric sector representation.
//!
//! With `Gd = gamma(x^2) (nbar(x^2) + 1)` and `Gu = gamma(x^2) nbar(x^2)`
//! (both functions of the oscillator position), each sector block evolves as
//!
//! ```text
//! dW_k/dt = -i[H_k, W_k]
//!           - (k/2) {Gd, W_k} - ((N-k)/2) {Gu, W_k}
//!           + ((N-k)/2) {Gd, W_{k+1}} + (k/2) {Gu, W_{k-1}}
//! ```
//!
//! where `{A, B} = AB + BA`. The loss terms count the spins that can flip
//! out of a configuration; the gain terms count, per configuration, the
//! spins whose flip leads into it. [`FullSpaceModel`] implements the same
//! equation spin by spin on the `2^N d` dimensional space and is the oracle
//! for the reduction.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{QcsbError, Result};
use crate::linalg::{self, CMatrix, I};
use crate::ode::{self, Dopri5Options, OdeFailure, StepStats};
use crate::params::QcsbParams;
use crate::statespace::{binomial, BlockState, OscillatorSpace};

/// Largest spin count accepted by the full-space oracle.
pub const BRUTE_FORCE_MAX_SPINS: usize = 4;

/// Positivity watermark below which a trajectory carries a warning.
pub const POSITIVITY_WARN: f64 = -1e-6;

/// Spin populations below this are an error; between it and zero they are
/// treated as zero.
pub const NEGATIVITY_TOL: f64 = 1e-10;

/// Bath coupling that sets the flip rate `gamma(x^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BathSpectrum {
    /// Position-independent rate.
    Constant { gamma: f64 },
    /// `gamma(E) = 2 pi J(E)` with `J(E) = eta E`.
    Ohmic { eta: f64 },
}

impl BathSpectrum {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BathSpectrum::Constant { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            BathSpectrum::Ohmic { eta } if eta > 0.0 && eta.is_finite() => Ok(()),
            other => Err(QcsbError::invalid(format!("bath rate must be > 0: {other:?}"))),
        }
    }

    /// Rate for a spin splitting `energy`.
    pub fn rate(&self, energy: f64) -> f64 {
        match *self {
            BathSpectrum::Constant { gamma } => gamma,
            BathSpectrum::Ohmic { eta } => 2.0 * std::f64::consts::PI * eta * energy,
        }
    }
}

/// Bose occupation `e^{-x} / (1 - e^{-x})` for `x = beta E > 0`.
pub(crate) fn bose(x: f64) -> f64 {
    1.0 / x.exp_m1()
}

/// Downward and upward flip rates as functions of the oscillator position.
#[derive(Clone, Debug)]
pub struct RateOperators {
    pub down: CMatrix,
    pub up: CMatrix,
    /// Spectra of `down` and `up` on the eigenbasis of x.
    pub down_spectrum: Vec<f64>,
    pub up_spectrum: Vec<f64>,
}

pub fn rate_operators(
    space: &OscillatorSpace,
    params: &QcsbParams,
    spectrum: &BathSpectrum,
) -> Result<RateOperators> {
    params.validate()?;
    spectrum.validate()?;
    let delta = params.delta();
    let mut down_spectrum = Vec::with_capacity(space.dim());
    let mut up_spectrum = Vec::with_capacity(space.dim());
    for &xi in space.x_eigvals().iter() {
        let energy = params.spin_gap + delta * xi * xi;
        let gamma = spectrum.rate(energy);
        let nbar = bose(params.beta * energy);
        let (down, up) = (gamma * (nbar + 1.0), gamma * nbar);
        if !(down.is_finite() && up.is_finite()) {
            return Err(QcsbError::Domain {
                eigenvalue: xi,
                argument: xi * xi,
            });
        }
        down_spectrum.push(down);
        up_spectrum.push(up);
    }
    Ok(RateOperators {
        down: space.function_of_x2_spectrum(&down_spectrum),
        up: space.function_of_x2_spectrum(&up_spectrum),
        down_spectrum,
        up_spectrum,
    })
}

/// `H_k = p^2/2M + (M/2)(w0^2 + w^2 k/N) x^2 + B k`.
pub fn hamiltonian_block(space: &OscillatorSpace, params: &QcsbParams, k: usize) -> Result<CMatrix> {
    if k > params.spin_count {
        return Err(QcsbError::invalid(format!(
            "sector {k} out of range 0..={}",
            params.spin_count
        )));
    }
    let kinetic = space.p2().mapv(|v| v / (2.0 * params.mass));
    let spring = 0.5 * params.mass * params.sector_freq_sq(k);
    let mut h = kinetic + space.x2().mapv(|v| v * spring);
    let shift = params.spin_gap * k as f64;
    for i in 0..space.dim() {
        h[[i, i]] += shift;
    }
    Ok(h)
}

/// Generator of the block dynamics: Hamiltonians per sector plus rates.
#[derive(Clone, Debug)]
pub struct BlockGenerator {
    n: usize,
    hams: Vec<CMatrix>,
    rates: RateOperators,
    /// Multiplies both gain terms. Exactly 1 for the physical equation;
    /// other values exist only so validation can prove it detects a wrong
    /// generator.
    pub gain_scale: f64,
}

impl BlockGenerator {
    pub fn new(space: &OscillatorSpace, params: &QcsbParams, spectrum: &BathSpectrum) -> Result<Self> {
        let rates = rate_operators(space, params, spectrum)?;
        let hams = (0..=params.spin_count)
            .map(|k| hamiltonian_block(space, params, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_parts(rates, hams))
    }

    pub fn from_parts(rates: RateOperators, hams: Vec<CMatrix>) -> Self {
        BlockGenerator {
            n: hams.len() - 1,
            hams,
            rates,
            gain_scale: 1.0,
        }
    }

    pub fn spin_count(&self) -> usize {
        self.n
    }

    pub fn rates(&self) -> &RateOperators {
        &self.rates
    }

    pub fn hamiltonians(&self) -> &[CMatrix] {
        &self.hams
    }

    /// Time derivative of the blocks. Blocks must be Hermitian: `W A` is
    /// evaluated as `(A W)^dagger`, so each sector costs three products.
    pub fn rhs(&self, blocks: &Array3<C64>) -> Array3<C64> {
        let n = self.n;
        let nf = n as f64;
        let views: Vec<ArrayView2<C64>> = blocks.axis_iter(Axis(0)).collect();
        let hw: Vec<CMatrix> = (0..=n).map(|k| self.hams[k].dot(&views[k])).collect();
        let dw: Vec<CMatrix> = views.iter().map(|w| self.rates.down.dot(w)).collect();
        let uw: Vec<CMatrix> = views.iter().map(|w| self.rates.up.dot(w)).collect();

        let mut out = Array3::zeros(blocks.raw_dim());
        for k in 0..=n {
            let kf = k as f64;
            // B_k; the block derivative is B_k + B_k^dagger.
            let mut b = hw[k].mapv(|v| -I * v);
            b.scaled_add(C64::new(-0.5 * kf, 0.0), &dw[k]);
            b.scaled_add(C64::new(-0.5 * (nf - kf), 0.0), &uw[k]);
            if k < n {
                b.scaled_add(C64::new(0.5 * (nf - kf) * self.gain_scale, 0.0), &dw[k + 1]);
            }
            if k > 0 {
                b.scaled_add(C64::new(0.5 * kf * self.gain_scale, 0.0), &uw[k - 1]);
            }
            let bd = linalg::dagger(&b.view());
            out.slice_mut(s![k, .., ..]).assign(&(b + bd));
        }
        out
    }

    /// Integrates the blocks and returns them at `sample_times`.
    pub fn propagate(
        &self,
        state: &BlockState,
        t_end: f64,
        sample_times: &[f64],
        tol: f64,
    ) -> Result<Vec<BlockState>> {
        let mut snaps = Vec::with_capacity(sample_times.len());
        let space = state.space().clone();
        let scales = sector_scales(state, None);
        ode::integrate(
            rescale(state.blocks().clone(), &scales, false),
            t_end,
            sample_times,
            &Dopri5Options::with_tol(tol),
            |y| rescale(self.rhs(&rescale(y.clone(), &scales, true)), &scales, false),
            |_, y| {
                for mut blk in y.axis_iter_mut(Axis(0)) {
                    linalg::symmetrize(&mut blk);
                }
                true
            },
            |_, y| snaps.push(rescale(y.clone(), &scales, true)),
        )
        .map_err(|(f, _)| ode_error(f, None))?;
        snaps
            .into_iter()
            .map(|b| BlockState::from_blocks(space.clone(), b))
            .collect()
    }
}

/// Per-sector magnitudes used to non-dimensionalize the blocks before
/// integration, so that the absolute tolerance is relative to each
/// sector's weight. Extreme sectors of a large bath carry weights far below
/// any useful absolute tolerance.
fn sector_scales(state: &BlockState, reference: Option<&[f64]>) -> Vec<f64> {
    let own: Vec<f64> = (0..=state.spin_count())
        .map(|k| state.config_population(k).abs())
        .collect();
    let top = own.iter().copied().fold(0.0, f64::max);
    own.iter()
        .enumerate()
        .map(|(k, &w)| {
            let r = reference.map_or(0.0, |r| r[k]);
            w.max(r).max(1e-30 * top).max(f64::MIN_POSITIVE)
        })
        .collect()
}

/// Divides (or with `inverse`, multiplies) block k by `scales[k]`.
fn rescale(mut blocks: Array3<C64>, scales: &[f64], inverse: bool) -> Array3<C64> {
    for (mut blk, &sc) in blocks.axis_iter_mut(Axis(0)).zip(scales) {
        let f = if inverse { sc } else { 1.0 / sc };
        blk.mapv_inplace(|v| v * f);
    }
    blocks
}

/// One evaluation of the block master equation.
pub fn lindblad_rhs(state: &BlockState, rates: &RateOperators, hams: &[CMatrix]) -> Result<Array3<C64>> {
    if hams.len() != state.spin_count() + 1 {
        return Err(QcsbError::invalid(format!(
            "{} Hamiltonian blocks for {} spins",
            hams.len(),
            state.spin_count()
        )));
    }
    let gen = BlockGenerator::from_parts(rates.clone(), hams.to_vec());
    Ok(gen.rhs(state.blocks()))
}

fn ode_error(f: OdeFailure, partial: Option<Trajectory>) -> QcsbError {
    let partial = partial.map(Box::new);
    match f {
        OdeFailure::StepUnderflow { t, h } => QcsbError::Stiffness { t, h, partial },
        OdeFailure::TooManySteps { t } => QcsbError::Stiffness { t, h: 0.0, partial },
        OdeFailure::NonFinite { t } => QcsbError::NonFinite { t, partial },
    }
}

/// Observables of one sampled state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub x: f64,
    pub p: f64,
    pub x2: f64,
    /// 1 - Tr(rho_osc^2).
    pub impurity: f64,
    pub s_tls: f64,
    /// S_TLS minus its value at t = 0.
    pub ds_tls: f64,
    /// P_k = C(N,k) Tr W_k.
    pub populations: Vec<f64>,
    /// Mean restoring force -M <(w0^2 + w^2 K/N) x>, K the up-spin count.
    pub force: f64,
    pub trace: f64,
    /// Smallest eigenvalue of rho_osc.
    pub min_eigenvalue: f64,
    /// Largest entry of any spin-off-diagonal block (full-space oracle only).
    pub spin_coherence: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub steps: usize,
    pub rejected_steps: usize,
    pub rhs_evals: usize,
    pub min_eigenvalue: f64,
    pub max_trace_error: f64,
    /// Largest |W - W^dagger| seen before re-symmetrizing an accepted step.
    pub max_hermiticity_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub spin_count: usize,
    pub times: Vec<f64>,
    pub records: Vec<ObservableRecord>,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
}

impl Trajectory {
    fn new(spin_count: usize) -> Self {
        Trajectory {
            spin_count,
            times: Vec::new(),
            records: Vec::new(),
            diagnostics: Diagnostics {
                min_eigenvalue: f64::INFINITY,
                ..Default::default()
            },
            warnings: Vec::new(),
        }
    }

    pub fn series(&self, f: impl Fn(&ObservableRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }

    pub fn x(&self) -> Vec<f64> {
        self.series(|r| r.x)
    }

    pub fn x2(&self) -> Vec<f64> {
        self.series(|r| r.x2)
    }

    pub fn p(&self) -> Vec<f64> {
        self.series(|r| r.p)
    }

    pub fn impurity(&self) -> Vec<f64> {
        self.series(|r| r.impurity)
    }

    pub fn ds_tls(&self) -> Vec<f64> {
        self.series(|r| r.ds_tls)
    }

    fn push(&mut self, t: f64, rec: ObservableRecord) {
        let d = &mut self.diagnostics;
        d.min_eigenvalue = d.min_eigenvalue.min(rec.min_eigenvalue);
        d.max_trace_error = d.max_trace_error.max((rec.trace - 1.0).abs());
        self.times.push(t);
        self.records.push(rec);
    }

    fn finish(&mut self, stats: StepStats) {
        self.diagnostics.steps = stats.accepted;
        self.diagnostics.rejected_steps = stats.rejected;
        self.diagnostics.rhs_evals = stats.rhs_evals;
        if self.diagnostics.min_eigenvalue < POSITIVITY_WARN {
            self.warnings.push(format!(
                "positivity watermark {:.3e} below {POSITIVITY_WARN:e}",
                self.diagnostics.min_eigenvalue
            ));
        }
    }
}

/// Spin entropy `-sum_k C(N,k) p ln p` over per-configuration populations.
fn sector_entropy(n: usize, config_pops: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (k, &p) in config_pops.iter().enumerate() {
        if p < -NEGATIVITY_TOL {
            return Err(QcsbError::NegativePopulation { sector: k, value: p });
        }
        if p > 0.0 {
            s -= binomial(n, k) * p * p.ln();
        }
    }
    Ok(s)
}

fn impurity_of(rho: &CMatrix) -> f64 {
    // Tr(rho^2) = sum |rho_ij|^2 for Hermitian rho.
    1.0 - rho.iter().map(|v| v.norm_sqr()).sum::<f64>()
}

/// Observables of a block state; `baseline_entropy` is subtracted from
/// S_TLS to give the reported entropy change.
pub fn observables(
    state: &BlockState,
    params: &QcsbParams,
    baseline_entropy: f64,
) -> Result<ObservableRecord> {
    let n = state.spin_count();
    let sp = state.space();
    let mut x = 0.0;
    let mut p = 0.0;
    let mut x2 = 0.0;
    let mut force = 0.0;
    let mut pops = Vec::with_capacity(n + 1);
    let mut config = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let c = binomial(n, k);
        let w = state.block(k);
        let xk = linalg::trace_product(&sp.x().view(), &w).re;
        x += c * xk;
        p += c * linalg::trace_product(&sp.p().view(), &w).re;
        x2 += c * linalg::trace_product(&sp.x2().view(), &w).re;
        force -= c * params.mass * params.sector_freq_sq(k) * xk;
        let tr = linalg::trace(&w).re;
        config.push(tr);
        pops.push(c * tr);
    }
    let rho = state.reduced_oscillator();
    let min_eig = linalg::min_eigenvalue(&rho.view());
    let s_tls = sector_entropy(n, &config)?;
    Ok(ObservableRecord {
        x,
        p,
        x2,
        impurity: impurity_of(&rho),
        s_tls,
        ds_tls: s_tls - baseline_entropy,
        trace: pops.iter().sum(),
        populations: pops,
        force,
        min_eigenvalue: min_eig,
        spin_coherence: 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolveOptions {
    pub t_end: f64,
    pub sample_dt: f64,
    pub tol: f64,
}

impl EvolveOptions {
    pub fn new(t_end: f64, sample_dt: f64, tol: f64) -> Result<Self> {
        if !(t_end > 0.0 && sample_dt > 0.0 && tol > 0.0) {
            return Err(QcsbError::invalid(format!(
                "t_end, sample_dt and tol must be > 0 (got {t_end}, {sample_dt}, {tol})"
            )));
        }
        Ok(EvolveOptions {
            t_end,
            sample_dt,
            tol,
        })
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let count = (self.t_end / self.sample_dt + 1e-9).floor() as usize;
        (0..=count).map(|i| i as f64 * self.sample_dt).collect()
    }
}

/// Integrates the block master equation and records observables every
/// `sample_dt`. On integrator failure the error carries the trajectory
/// recorded so far.
pub fn evolve(
    state: &BlockState,
    generator: &BlockGenerator,
    params: &QcsbParams,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    if generator.spin_count() != state.spin_count() || params.spin_count != state.spin_count() {
        return Err(QcsbError::invalid("generator, params and state disagree on N"));
    }
    let space = state.space().clone();
    let baseline = observables(state, params, 0.0)?.s_tls;
    let mut traj = Trajectory::new(state.spin_count());
    let sample_err: RefCell<Option<QcsbError>> = RefCell::new(None);
    let mut herm_err: f64 = 0.0;
    let samples = opts.sample_times();

    let thermal = crate::statespace::thermal_spin_weights(params.spin_count, params.spin_gap, params.beta)?;
    let scales = sector_scales(state, Some(thermal.weights()));

    let result = ode::integrate(
        rescale(state.blocks().clone(), &scales, false),
        opts.t_end,
        &samples,
        &Dopri5Options::with_tol(opts.tol),
        |y| rescale(generator.rhs(&rescale(y.clone(), &scales, true)), &scales, false),
        |_, y| {
            for mut blk in y.axis_iter_mut(Axis(0)) {
                herm_err = herm_err.max(linalg::hermiticity_error(&blk.view()));
                linalg::symmetrize(&mut blk);
            }
            sample_err.borrow().is_none()
        },
        |t, y| {
            if sample_err.borrow().is_some() {
                return;
            }
            let st = BlockState::from_blocks(space.clone(), rescale(y.clone(), &scales, true))
                .expect("integrator preserves block shape");
            match observables(&st, params, baseline) {
                Ok(rec) => traj.push(t, rec),
                Err(e) => *sample_err.borrow_mut() = Some(e),
            }
        },
    );
    traj.diagnostics.max_hermiticity_error = herm_err;
    match result {
        Ok((_, stats)) => {
            traj.finish(stats);
            match sample_err.into_inner() {
                Some(e) => Err(e),
                None => Ok(traj),
            }
        }
        Err((f, stats)) => {
            traj.finish(stats);
            Err(ode_error(f, Some(traj)))
        }
    }
}

/// Reference implementation on the full `2^N d` dimensional space: every
/// spin carries its own sigma_+, sigma_-, and the state keeps spin
/// coherences. Spin configurations are the slow index; bit j set means
/// spin j is up.
#[derive(Clone, Debug)]
pub struct FullSpaceModel {
    n: usize,
    d: usize,
    params: QcsbParams,
    /// Hamiltonian restricted to each spin configuration.
    config_hams: Vec<CMatrix>,
    down: CMatrix,
    up: CMatrix,
    x: CMatrix,
    p: CMatrix,
    x2: CMatrix,
}

impl FullSpaceModel {
    pub fn new(space: &OscillatorSpace, params: &QcsbParams, spectrum: &BathSpectrum) -> Result<Self> {
        let n = params.spin_count;
        if n > BRUTE_FORCE_MAX_SPINS {
            return Err(QcsbError::TooLarge(format!(
                "{n} spins give a {}-dimensional space; the full-space oracle is limited to \
                 N <= {BRUTE_FORCE_MAX_SPINS}",
                (1usize << n) * space.dim()
            )));
        }
        let rates = rate_operators(space, params, spectrum)?;
        let free = space.p2().mapv(|v| v / (2.0 * params.mass))
            + space
                .x2()
                .mapv(|v| v * 0.5 * params.mass * params.bare_freq * params.bare_freq);
        // Each up spin adds B (sigma_z + 1)/2 + (M w^2 / 2N) (sigma_z + 1)/2 x^2.
        let per_spin =
            space.x2().mapv(|v| v * params.delta()) + CMatrix::eye(space.dim()).mapv(|v| v * params.spin_gap);
        let config_hams = (0..1usize << n)
            .map(|cfg| {
                let mut h = free.clone();
                for j in 0..n {
                    if cfg >> j & 1 == 1 {
                        h += &per_spin;
                    }
                }
                h
            })
            .collect();
        Ok(FullSpaceModel {
            n,
            d: space.dim(),
            params: *params,
            config_hams,
            down: rates.down,
            up: rates.up,
            x: space.x().clone(),
            p: space.p().clone(),
            x2: space.x2().clone(),
        })
    }

    pub fn full_dim(&self) -> usize {
        (1usize << self.n) * self.d
    }

    fn block<'a>(&self, rho: &'a CMatrix, a: usize, b: usize) -> ArrayView2<'a, C64> {
        let d = self.d;
        rho.slice(s![a * d..(a + 1) * d, b * d..(b + 1) * d])
    }

    /// Right-hand side of the master equation with every term applied per
    /// spin, exactly as written for the unreduced problem.
    pub fn rhs(&self, rho: &CMatrix) -> CMatrix {
        let n = self.n;
        let configs = 1usize << n;
        let d = self.d;
        let nonzero: Vec<bool> = (0..configs * configs)
            .map(|idx| {
                self.block(rho, idx / configs, idx % configs)
                    .iter()
                    .any(|v| *v != C64::new(0.0, 0.0))
            })
            .collect();
        let is_nz = |a: usize, b: usize| nonzero[a * configs + b];
        let half = C64::new(0.5, 0.0);

        let mut out = CMatrix::zeros(rho.raw_dim());
        for a in 0..configs {
            for b in 0..configs {
                // Sources of block (a, b): itself and the blocks one
                // common flip away.
                let fed = (0..n).any(|j| {
                    let (ua, ub) = (a >> j & 1, b >> j & 1);
                    (ua == 0 && ub == 0 && is_nz(a | 1 << j, b | 1 << j))
                        || (ua == 1 && ub == 1 && is_nz(a ^ 1 << j, b ^ 1 << j))
                });
                if !is_nz(a, b) && !fed {
                    continue;
                }
                let r = self.block(rho, a, b);
                let mut acc = (self.config_hams[a].dot(&r) - r.dot(&self.config_hams[b])).mapv(|v| -I * v);
                if is_nz(a, b) {
                    let dr = self.down.dot(&r);
                    let rd = r.dot(&self.down);
                    let ur = self.up.dot(&r);
                    let ru = r.dot(&self.up);
                    for j in 0..n {
                        // -1/2 sigma+ sigma- Gd rho: projector on spin j up (row side)
                        if a >> j & 1 == 1 {
                            acc.scaled_add(-half, &dr);
                        } else {
                            acc.scaled_add(-half, &ur);
                        }
                        // -1/2 rho Gd sigma+ sigma-: column side
                        if b >> j & 1 == 1 {
                            acc.scaled_add(-half, &rd);
                        } else {
                            acc.scaled_add(-half, &ru);
                        }
                    }
                }
                for j in 0..n {
                    let (ua, ub) = (a >> j & 1, b >> j & 1);
                    if ua == 0 && ub == 0 && is_nz(a | 1 << j, b | 1 << j) {
                        // sigma-_j (Gd rho + rho Gd) sigma+_j / 2
                        let src = self.block(rho, a | 1 << j, b | 1 << j);
                        acc.scaled_add(half, &self.down.dot(&src));
                        acc.scaled_add(half, &src.dot(&self.down));
                    }
                    if ua == 1 && ub == 1 && is_nz(a ^ 1 << j, b ^ 1 << j) {
                        // sigma+_j (Gu rho + rho Gu) sigma-_j / 2
                        let src = self.block(rho, a ^ 1 << j, b ^ 1 << j);
                        acc.scaled_add(half, &self.up.dot(&src));
                        acc.scaled_add(half, &src.dot(&self.up));
                    }
                }
                out.slice_mut(s![a * d..(a + 1) * d, b * d..(b + 1) * d])
                    .assign(&acc);
            }
        }
        out
    }

    pub fn propagate(
        &self,
        rho0: &CMatrix,
        t_end: f64,
        sample_times: &[f64],
        tol: f64,
    ) -> Result<Vec<CMatrix>> {
        self.check_shape(rho0)?;
        let mut snaps = Vec::new();
        ode::integrate(
            rho0.clone(),
            t_end,
            sample_times,
            &Dopri5Options::with_tol(tol),
            |y| self.rhs(y),
            |_, y| {
                linalg::symmetrize(&mut y.view_mut());
                true
            },
            |_, y| snaps.push(y.clone()),
        )
        .map_err(|(f, _)| ode_error(f, None))?;
        Ok(snaps)
    }

    fn check_shape(&self, rho: &CMatrix) -> Result<()> {
        let dim = self.full_dim();
        if rho.dim() != (dim, dim) {
            return Err(QcsbError::invalid(format!(
                "full state has shape {:?}, expected ({dim}, {dim})",
                rho.dim()
            )));
        }
        Ok(())
    }

    /// Same record schema as [`observables`]; the spin entropy comes from
    /// the eigenvalues of the reduced spin density matrix.
    pub fn observables(&self, rho: &CMatrix, baseline_entropy: f64) -> Result<ObservableRecord> {
        self.check_shape(rho)?;
        let configs = 1usize << self.n;
        let mut rho_osc = CMatrix::zeros((self.d, self.d));
        let mut rho_spin = CMatrix::zeros((configs, configs));
        let mut pops = vec![0.0; self.n + 1];
        let (mut x, mut p, mut x2, mut force) = (0.0, 0.0, 0.0, 0.0);
        let mut coherence: f64 = 0.0;
        for a in 0..configs {
            for b in 0..configs {
                let blk = self.block(rho, a, b);
                rho_spin[[a, b]] = linalg::trace(&blk);
                if a != b {
                    coherence = coherence.max(blk.iter().map(|v| v.norm()).fold(0.0, f64::max));
                }
            }
            let blk = self.block(rho, a, a);
            rho_osc += &blk;
            let k = (a as u32).count_ones() as usize;
            pops[k] += linalg::trace(&blk).re;
            let xa = linalg::trace_product(&self.x.view(), &blk).re;
            x += xa;
            p += linalg::trace_product(&self.p.view(), &blk).re;
            x2 += linalg::trace_product(&self.x2.view(), &blk).re;
            force -= self.params.mass * self.params.sector_freq_sq(k) * xa;
        }
        let spin_eigs = linalg::hermitian_eigenvalues(&rho_spin.view());
        if let Some(&lo) = spin_eigs.first() {
            if lo < -NEGATIVITY_TOL {
                return Err(QcsbError::NegativePopulation { sector: 0, value: lo });
            }
        }
        let s_tls = spin_eigs
            .iter()
            .filter(|&&l| l > 0.0)
            .map(|&l| -l * l.ln())
            .sum::<f64>();
        let min_eig = linalg::min_eigenvalue(&rho_osc.view());
        Ok(ObservableRecord {
            x,
            p,
            x2,
            impurity: impurity_of(&rho_osc),
            s_tls,
            ds_tls: s_tls - baseline_entropy,
            trace: pops.iter().sum(),
            populations: pops,
            force,
            min_eigenvalue: min_eig,
            spin_coherence: coherence,
        })
    }
}

/// Product of independent thermal spins and an oscillator state on the
/// full space, built as an explicit Kronecker product.
pub fn full_thermal_product(n: usize, gap: f64, beta: f64, rho_osc: &CMatrix) -> Result<CMatrix> {
    if n == 0 || n > BRUTE_FORCE_MAX_SPINS {
        return Err(QcsbError::TooLarge(format!("full-space state for {n} spins")));
    }
    let p_up = 1.0 / (1.0 + (beta * gap).exp());
    let single = [1.0 - p_up, p_up];
    let mut spin = Array2::<f64>::from_elem((1, 1), 1.0);
    // Spin j is bit j of the configuration index, so spin 0 is the fastest
    // factor: kron(spin_{n-1}, ..., spin_0).
    for _ in 0..n {
        let g = Array2::from_diag(&ndarray::arr1(&single));
        spin = kron_real(&g, &spin);
    }
    let d = rho_osc.nrows();
    let configs = spin.nrows();
    let mut full = CMatrix::zeros((configs * d, configs * d));
    for a in 0..configs {
        for b in 0..configs {
            if spin[[a, b]] != 0.0 {
                full.slice_mut(s![a * d..(a + 1) * d, b * d..(b + 1) * d])
                    .assign(&rho_osc.mapv(|v| v * spin[[a, b]]));
            }
        }
    }
    Ok(full)
}

fn kron_real(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    Array2::from_shape_fn((ar * br, ac * bc), |(i, j)| {
        a[[i / br, j / bc]] * b[[i % br, j % bc]]
    })
}

/// Integrates the full-space master equation (N <= 4) and records the same
/// observables as [`evolve`].
pub fn brute_force_evolve(
    space: &OscillatorSpace,
    params: &QcsbParams,
    spectrum: &BathSpectrum,
    rho0: &CMatrix,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    let model = FullSpaceModel::new(space, params, spectrum)?;
    model.check_shape(rho0)?;
    let baseline = model.observables(rho0, 0.0)?.s_tls;
    let mut traj = Trajectory::new(params.spin_count);
    let mut sample_err = None;
    let mut herm_err: f64 = 0.0;
    let result = ode::integrate(
        rho0.clone(),
        opts.t_end,
        &opts.sample_times(),
        &Dopri5Options::with_tol(opts.tol),
        |y| model.rhs(y),
        |_, y| {
            herm_err = herm_err.max(linalg::hermiticity_error(&y.view()));
            linalg::symmetrize(&mut y.view_mut());
            true
        },
        |t, y| match model.observables(y, baseline) {
            Ok(rec) => traj.push(t, rec),
            Err(e) => {
                sample_err.get_or_insert(e);
            }
        },
    );
    traj.diagnostics.max_hermiticity_error = herm_err;
    match result {
        Ok((_, stats)) => {
            traj.finish(stats);
            match sample_err {
                Some(e) => Err(e),
                None => Ok(traj),
            }
        }
        Err((f, stats)) => {
            traj.finish(stats);
            Err(ode_error(f, Some(traj)))
        }
    }
}

/// Convenience bundle: thermal spins times a coherent oscillator state.
pub fn thermal_coherent_state(
    space: Arc<OscillatorSpace>,
    params: &QcsbParams,
    alpha: C64,
) -> Result<BlockState> {
    let weights = crate::statespace::thermal_spin_weights(params.spin_count, params.spin_gap, params.beta)?;
    let rho = space.coherent_state(alpha)?;
    crate::statespace::block_state_init(space, &weights, &rho)
}
