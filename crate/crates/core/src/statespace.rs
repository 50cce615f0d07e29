//! Truncated Fock space of the oscillator and the permutation-symmetric
//! representation of the spin bath.
//!
//! A spin-diagonal state that is symmetric under permutations of the N
//! spins is fixed by one number per up-spin count `k`: every configuration
//! with `k` spins up carries the same weight. Tensored with the oscillator,
//! every configuration in sector `k` carries the same oscillator operator
//! `W_k`, so the joint state is stored as N+1 blocks instead of a
//! `(2^N d) x (2^N d)` matrix. The sector basis and the expansion in
//! elementary symmetric products of sigma_z (`C_j`) are related by a
//! Krawtchouk transform, see [`SectorWeights::symmetric_coefficients`].

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, Array3};
use num_complex::Complex64 as C64;

use crate::error::{QcsbError, Result};
use crate::linalg::{self, CMatrix};

/// Minimum Poisson weight a truncated coherent state must keep.
pub const COHERENT_NORM_THRESHOLD: f64 = 0.9999;

/// Binomial coefficient as a float. Exact for the sizes used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Debug)]
pub struct OscillatorSpace {
    dim: usize,
    mass: f64,
    ref_freq: f64,
    x: CMatrix,
    p: CMatrix,
    x2: CMatrix,
    p2: CMatrix,
    x_eigvals: Array1<f64>,
    x_eigvecs: Array2<f64>,
}

/// Builds x, p and the spectral decomposition of x in the Fock basis of an
/// oscillator of mass `mass` and frequency `ref_freq` (hbar = 1).
pub fn build_oscillator_space(dim: usize, mass: f64, ref_freq: f64) -> Result<OscillatorSpace> {
    if dim < 2 {
        return Err(QcsbError::invalid(format!(
            "Fock dimension must be >= 2, got {dim}"
        )));
    }
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(QcsbError::invalid(format!("mass must be > 0, got {mass}")));
    }
    if !(ref_freq > 0.0 && ref_freq.is_finite()) {
        return Err(QcsbError::invalid(format!(
            "reference frequency must be > 0, got {ref_freq}"
        )));
    }

    let x_scale = (1.0 / (2.0 * mass * ref_freq)).sqrt();
    let p_scale = (mass * ref_freq / 2.0).sqrt();
    let mut x_real = Array2::<f64>::zeros((dim, dim));
    let mut p = CMatrix::zeros((dim, dim));
    for n in 0..dim - 1 {
        let ladder = ((n + 1) as f64).sqrt();
        x_real[[n, n + 1]] = x_scale * ladder;
        x_real[[n + 1, n]] = x_scale * ladder;
        // p = i sqrt(M w / 2) (a^dagger - a)
        p[[n + 1, n]] = C64::new(0.0, p_scale * ladder);
        p[[n, n + 1]] = C64::new(0.0, -p_scale * ladder);
    }

    let eig = SymmetricEigen::new(DMatrix::from_fn(dim, dim, |i, j| x_real[[i, j]]));
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let x_eigvals = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let x_eigvecs = Array2::from_shape_fn((dim, dim), |(r, c)| eig.eigenvectors[(r, order[c])]);

    let x = linalg::real_to_complex(&x_real);
    let x2 = x.dot(&x);
    let p2 = p.dot(&p);
    Ok(OscillatorSpace {
        dim,
        mass,
        ref_freq,
        x,
        p,
        x2,
        p2,
        x_eigvals,
        x_eigvecs,
    })
}

impl OscillatorSpace {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn ref_freq(&self) -> f64 {
        self.ref_freq
    }

    pub fn x(&self) -> &CMatrix {
        &self.x
    }

    pub fn p(&self) -> &CMatrix {
        &self.p
    }

    /// x * x as a matrix product of the truncated x (not the analytic x^2
    /// matrix elements; they differ in the last Fock level).
    pub fn x2(&self) -> &CMatrix {
        &self.x2
    }

    pub fn p2(&self) -> &CMatrix {
        &self.p2
    }

    pub fn x_eigvals(&self) -> &Array1<f64> {
        &self.x_eigvals
    }

    pub fn x_eigvecs(&self) -> &Array2<f64> {
        &self.x_eigvecs
    }

    pub fn number_op(&self) -> CMatrix {
        Array2::from_shape_fn((self.dim, self.dim), |(i, j)| {
            if i == j {
                C64::new(i as f64, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    /// U diag(f(xi_i^2)) U^T over the eigenvalues xi_i of x.
    pub fn matrix_function_of_x2<F: Fn(f64) -> f64>(&self, f: F) -> Result<CMatrix> {
        let mut values = Vec::with_capacity(self.dim);
        for &xi in self.x_eigvals.iter() {
            let v = f(xi * xi);
            if !v.is_finite() {
                return Err(QcsbError::Domain {
                    eigenvalue: xi,
                    argument: xi * xi,
                });
            }
            values.push(v);
        }
        Ok(self.function_of_x2_spectrum(&values))
    }

    pub(crate) fn function_of_x2_spectrum(&self, values: &[f64]) -> CMatrix {
        let u = &self.x_eigvecs;
        let scaled = Array2::from_shape_fn((self.dim, self.dim), |(r, c)| u[[r, c]] * values[c]);
        linalg::real_to_complex(&scaled.dot(&u.t()))
    }

    /// |alpha><alpha| truncated to this space and renormalized.
    pub fn coherent_state(&self, alpha: C64) -> Result<CMatrix> {
        let mut amps = Vec::with_capacity(self.dim);
        let mut c = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
        for n in 0..self.dim {
            amps.push(c);
            c = c * alpha / ((n + 1) as f64).sqrt();
        }
        let captured: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if captured < COHERENT_NORM_THRESHOLD {
            return Err(QcsbError::Truncation {
                dim: self.dim,
                captured,
                required: COHERENT_NORM_THRESHOLD,
            });
        }
        let norm = captured.sqrt();
        Ok(Array2::from_shape_fn((self.dim, self.dim), |(i, j)| {
            amps[i] * amps[j].conj() / (norm * norm)
        }))
    }
}

/// Per-configuration populations of a permutation-symmetric, spin-diagonal
/// state: `w[k]` is the probability of any single configuration with `k`
/// up spins.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorWeights {
    n: usize,
    w: Vec<f64>,
}

impl SectorWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.len() < 2 {
            return Err(QcsbError::invalid("need at least one spin (two sectors)"));
        }
        let n = w.len() - 1;
        if let Some((k, &v)) = w.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(QcsbError::NegativePopulation { sector: k, value: v });
        }
        let total: f64 = w.iter().enumerate().map(|(k, v)| binomial(n, k) * v).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(QcsbError::invalid(format!(
                "sector weights must satisfy sum C(N,k) w_k = 1, got {total}"
            )));
        }
        Ok(SectorWeights { n, w })
    }

    pub fn spin_count(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// Coefficients `a_j` of the expansion `rho_s = sum_j a_j C_j`, where
    /// `C_j` is the j-th elementary symmetric product of sigma_z's.
    ///
    /// On a configuration with `k` up spins, `C_j` evaluates to the
    /// Krawtchouk polynomial `K_j(k)`; orthogonality
    /// `sum_k C(N,k) K_i(k) K_j(k) = 2^N C(N,j) delta_ij` inverts the map.
    pub fn symmetric_coefficients(&self) -> Vec<f64> {
        let n = self.n;
        let norm = 2f64.powi(n as i32);
        (0..=n)
            .map(|j| {
                let s: f64 = (0..=n)
                    .map(|k| binomial(n, k) * self.w[k] * krawtchouk(n, j, k))
                    .sum();
                s / (norm * binomial(n, j))
            })
            .collect()
    }

    /// Inverse of [`symmetric_coefficients`](Self::symmetric_coefficients).
    pub fn from_symmetric_coefficients(a: &[f64]) -> Result<Self> {
        if a.len() < 2 {
            return Err(QcsbError::invalid("need at least two coefficients"));
        }
        let n = a.len() - 1;
        let w = (0..=n)
            .map(|k| (0..=n).map(|j| a[j] * krawtchouk(n, j, k)).sum())
            .collect();
        SectorWeights::new(w)
    }
}

/// Value of C_j on a configuration with `k` up spins: the elementary
/// symmetric polynomial of degree j in k (+1)'s and N-k (-1)'s.
pub fn krawtchouk(n: usize, j: usize, k: usize) -> f64 {
    (0..=j)
        .map(|m| {
            let sign = if (j - m).is_multiple_of(2) { 1.0 } else { -1.0 };
            sign * binomial(k, m) * binomial(n - k, j - m)
        })
        .sum()
}

/// Gibbs weights of N independent spins of splitting `gap`:
/// `w_k = e^{-beta gap k} / (1 + e^{-beta gap})^N`, evaluated in log space.
pub fn thermal_spin_weights(n: usize, gap: f64, beta: f64) -> Result<SectorWeights> {
    if n == 0 {
        return Err(QcsbError::invalid("spin count must be >= 1"));
    }
    if !(beta > 0.0) {
        return Err(QcsbError::invalid(format!("beta must be > 0, got {beta}")));
    }
    let bb = beta * gap;
    let log_z = softplus(-bb);
    let w = (0..=n)
        .map(|k| (-bb * k as f64 - n as f64 * log_z).exp())
        .collect::<Vec<_>>();
    // Normalization holds analytically; absorb the last ulp drift.
    let total: f64 = w.iter().enumerate().map(|(k, v)| binomial(n, k) * v).sum();
    SectorWeights::new(w.into_iter().map(|v| v / total).collect())
}

/// Joint oscillator-spin state restricted to symmetric, spin-diagonal
/// states. `blocks[k]` is the oscillator operator attached to each of the
/// C(N,k) configurations with `k` up spins.
#[derive(Clone, Debug)]
pub struct BlockState {
    space: Arc<OscillatorSpace>,
    n: usize,
    blocks: Array3<C64>,
}

impl BlockState {
    pub fn from_blocks(space: Arc<OscillatorSpace>, blocks: Array3<C64>) -> Result<Self> {
        let (nb, d1, d2) = blocks.dim();
        if nb < 2 || d1 != space.dim() || d2 != space.dim() {
            return Err(QcsbError::invalid(format!(
                "block array of shape {:?} does not match Fock dimension {}",
                blocks.dim(),
                space.dim()
            )));
        }
        Ok(BlockState {
            space,
            n: nb - 1,
            blocks,
        })
    }

    pub fn space(&self) -> &Arc<OscillatorSpace> {
        &self.space
    }

    pub fn spin_count(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &Array3<C64> {
        &self.blocks
    }

    pub fn into_blocks(self) -> Array3<C64> {
        self.blocks
    }

    pub fn block(&self, k: usize) -> ndarray::ArrayView2<'_, C64> {
        self.blocks.slice(s![k, .., ..])
    }

    /// Tr W_k, the population of one configuration in sector k.
    pub fn config_population(&self, k: usize) -> f64 {
        linalg::trace(&self.block(k)).re
    }

    /// sum_k C(N,k) Tr W_k.
    pub fn total_trace(&self) -> f64 {
        (0..=self.n)
            .map(|k| binomial(self.n, k) * self.config_population(k))
            .sum()
    }

    /// rho_osc = sum_k C(N,k) W_k.
    pub fn reduced_oscillator(&self) -> CMatrix {
        let d = self.space.dim();
        let mut acc = CMatrix::zeros((d, d));
        for k in 0..=self.n {
            acc.scaled_add(C64::new(binomial(self.n, k), 0.0), &self.block(k));
        }
        acc
    }

    /// Expands to the full `(2^N d) x (2^N d)` density matrix, with the
    /// spin configuration as the slow index and bit j set meaning spin j up.
    pub fn to_full(&self) -> CMatrix {
        let d = self.space.dim();
        let configs = 1usize << self.n;
        let mut full = CMatrix::zeros((configs * d, configs * d));
        for s_cfg in 0..configs {
            let k = s_cfg.count_ones() as usize;
            full.slice_mut(s![s_cfg * d..(s_cfg + 1) * d, s_cfg * d..(s_cfg + 1) * d])
                .assign(&self.block(k));
        }
        full
    }
}

/// `W_k = w_k rho_osc`: thermal spins in product with an oscillator state.
pub fn block_state_init(
    space: Arc<OscillatorSpace>,
    weights: &SectorWeights,
    rho_osc: &CMatrix,
) -> Result<BlockState> {
    let d = space.dim();
    if rho_osc.dim() != (d, d) {
        return Err(QcsbError::invalid(format!(
            "oscillator state has shape {:?}, expected ({d}, {d})",
            rho_osc.dim()
        )));
    }
    let tr = linalg::trace(&rho_osc.view());
    if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
        return Err(QcsbError::invalid(format!(
            "oscillator state must have unit trace, got {tr}"
        )));
    }
    let n = weights.spin_count();
    let mut blocks = Array3::zeros((n + 1, d, d));
    for (k, &w) in weights.weights().iter().enumerate() {
        blocks.slice_mut(s![k, .., ..]).assign(&rho_osc.mapv(|v| v * w));
    }
    BlockState::from_blocks(space, blocks)
}
