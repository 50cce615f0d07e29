//! Entropic spring parameter of a phonon mode coupled to the tunneling
//! two-level systems of an amorphous solid. SI units throughout.
//!
//! The sums over TLSs become integrals over the standard tunneling-model
//! density `P(eps, Gamma) = Pbar / (2 Gamma sqrt(1 - Gamma/Gamma_max(eps)))`.
//! A TLS with relaxation rate Gamma has `Lambda^2/eps^2 = Gamma/Gamma_max`,
//! so its transverse coupling to the mode is
//! `g_x^2 = gamma_L^2 k^2 Gamma / (4 pi^2 Gamma_max)` with `k = w_p / v_L`
//! (strain slope k/pi). The oscillator mass `V rho` cancels against the
//! volume of the TLS sum, leaving for `S[f] = sum_j 4 g_x^2 f(eps_j)/(M eps_j)`
//!
//! ```text
//! S[f] = (Pbar gamma_L^2 w_p^2 / (pi^2 rho v_L^2))
//!        * int_{eps_min}^{k_B T} d eps f(eps)/eps * sqrt(1 - w_p / Gamma_max(eps))
//! ```
//!
//! after the Gamma integral over `[w_p, Gamma_max]` is done in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{QcsbError, Result};
use crate::quadrature;

pub const HBAR: f64 = 1.054_571_817e-34;
pub const K_B: f64 = 1.380_649e-23;
pub const ELECTRON_VOLT: f64 = 1.602_176_634e-19;

const QUAD_REL_TOL: f64 = 1e-8;
const QUAD_MAX_SEGMENTS: usize = 2000;

/// Tunneling-model constants of an amorphous solid (SI units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlassMaterial {
    /// TLS density of states, 1/(J m^3).
    pub p_bar: f64,
    /// Longitudinal deformation potential, J.
    pub gamma_l: f64,
    /// Transverse deformation potential, J.
    pub gamma_t: f64,
    /// Longitudinal sound speed, m/s.
    pub v_l: f64,
    /// Transverse sound speed, m/s.
    pub v_t: f64,
    /// Mass density, kg/m^3.
    pub rho: f64,
}

impl GlassMaterial {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("p_bar", self.p_bar),
            ("gamma_l", self.gamma_l),
            ("gamma_t", self.gamma_t),
            ("v_l", self.v_l),
            ("v_t", self.v_t),
            ("rho", self.rho),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(QcsbError::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `(gamma_L^2/v_L^5 + 2 gamma_T^2/v_T^5) / (2 pi rho hbar^4)`.
    fn rate_prefactor(&self) -> f64 {
        (self.gamma_l.powi(2) / self.v_l.powi(5) + 2.0 * self.gamma_t.powi(2) / self.v_t.powi(5))
            / (2.0 * std::f64::consts::PI * self.rho * HBAR.powi(4))
    }

    /// Dimensionless tunneling strength `Pbar gamma_L^2 / (rho v_L^2)`.
    pub fn tunneling_strength(&self) -> f64 {
        self.p_bar * self.gamma_l.powi(2) / (self.rho * self.v_l.powi(2))
    }

    /// `S[f] / int(...)`: the prefactor of both TLS sums, 1/s^2.
    pub fn coupling_prefactor(&self, omega_p: f64) -> f64 {
        self.tunneling_strength() * omega_p * omega_p / std::f64::consts::PI.powi(2)
    }
}

/// Microscopic TLS: asymmetry, tunneling and strain coupling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TlsMicro {
    pub asymmetry: f64,
    pub tunneling: f64,
    pub coupling: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TlsCoupling {
    pub energy: f64,
    pub g_x: f64,
    pub g_z: f64,
    /// `M w_j^2 = 4 g_x^2 / eps`; divide by the mode mass for w_j^2.
    pub spring_weight: f64,
}

pub fn map_tls_to_qcsb(t: &TlsMicro) -> Result<TlsCoupling> {
    let eps = t.asymmetry.hypot(t.tunneling);
    if eps == 0.0 || !eps.is_finite() {
        return Err(QcsbError::invalid(
            "degenerate TLS: asymmetry and tunneling both zero",
        ));
    }
    let g_x = -t.coupling * t.tunneling / eps;
    Ok(TlsCoupling {
        energy: eps,
        g_x,
        g_z: t.coupling * t.asymmetry / eps,
        spring_weight: 4.0 * g_x * g_x / eps,
    })
}

fn coth(x: f64) -> f64 {
    1.0 / x.tanh()
}

/// One-phonon relaxation rate of a TLS with splitting `eps` and tunneling
/// `lambda` at temperature `temp` (K).
pub fn tls_relaxation_rate(m: &GlassMaterial, eps: f64, lambda: f64, temp: f64) -> Result<f64> {
    if !(lambda > 0.0) || !(eps > 0.0) || !(temp > 0.0) {
        return Err(QcsbError::invalid("eps, lambda and T must be > 0"));
    }
    if lambda > eps {
        return Err(QcsbError::invalid(format!(
            "tunneling {lambda:e} J exceeds splitting {eps:e} J"
        )));
    }
    Ok(m.rate_prefactor() * eps * lambda * lambda * coth(eps / (2.0 * K_B * temp)))
}

/// Gamma_max(eps) = Gamma(eps, Lambda = eps).
pub fn gamma_max(m: &GlassMaterial, eps: f64, temp: f64) -> f64 {
    m.rate_prefactor() * eps.powi(3) * coth(eps / (2.0 * K_B * temp))
}

/// Lower edge of the contributing TLS band: `Gamma_max(eps_min) = w_p`.
/// `None` when even `eps = k_B T` relaxes slower than `w_p`.
pub fn eps_min(m: &GlassMaterial, omega_p: f64, temp: f64) -> Result<Option<f64>> {
    if !(omega_p > 0.0 && temp > 0.0) {
        return Err(QcsbError::invalid("w_p and T must be > 0"));
    }
    let top = K_B * temp;
    if gamma_max(m, top, temp) <= omega_p {
        return Ok(None);
    }
    let mut prev = 0.0;
    for i in 0..=64 {
        let eps = top * 10f64.powf(-12.0 * (64 - i) as f64 / 64.0);
        let g = gamma_max(m, eps, temp);
        if g < prev {
            return Err(QcsbError::NonMonotone(eps));
        }
        prev = g;
    }
    let (mut lo, mut hi) = (0.0, top);
    for _ in 0..400 {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if gamma_max(m, mid, temp) < omega_p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// `int dGamma P(eps, Gamma)/Pbar * Gamma/Gamma_max` over `[w_p, Gamma_max]`,
/// in closed form.
pub fn inner_weight(omega_p: f64, gmax: f64) -> f64 {
    if gmax <= omega_p {
        0.0
    } else {
        ((gmax - omega_p) / gmax).sqrt()
    }
}

/// Number of TLSs per unit volume and energy with rate in `[w_p, Gamma_max]`,
/// divided by Pbar: `atanh(sqrt(1 - w_p/Gamma_max))`.
pub fn tls_count_density(omega_p: f64, gmax: f64) -> f64 {
    inner_weight(omega_p, gmax).atanh()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RsComponents {
    pub r_s: f64,
    /// sum_j 4 g_x^2/(M eps) * beta eps e^{beta eps}/(1+e^{beta eps})^2, 1/s^2.
    pub numerator: f64,
    /// sum_j 4 g_x^2/(M eps) * tanh(beta eps / 2)/2, 1/s^2.
    pub softening: f64,
    pub eps_min: Option<f64>,
}

impl RsComponents {
    fn empty() -> Self {
        RsComponents {
            r_s: 0.0,
            numerator: 0.0,
            softening: 0.0,
            eps_min: None,
        }
    }
}

/// `f_num(y)/y` with `y = beta eps`.
fn numerator_kernel(y: f64) -> f64 {
    let e = (-y).exp();
    e / (1.0 + e).powi(2)
}

/// `f_den(y)/y`.
fn softening_kernel(y: f64) -> f64 {
    if y < 1e-6 {
        0.25 - y * y / 48.0
    } else {
        (0.5 * y).tanh() / (2.0 * y)
    }
}

pub fn rs_components(m: &GlassMaterial, omega_p: f64, temp: f64) -> Result<RsComponents> {
    m.validate()?;
    let Some(e_min) = eps_min(m, omega_p, temp)? else {
        return Ok(RsComponents::empty());
    };
    let kt = K_B * temp;
    let y_min = e_min / kt;
    let weight = |y: f64| inner_weight(omega_p, gamma_max(m, y * kt, temp));
    let num = quadrature::integrate(
        |y| numerator_kernel(y) * weight(y),
        y_min,
        1.0,
        QUAD_REL_TOL,
        0.0,
        QUAD_MAX_SEGMENTS,
    )?;
    let den = quadrature::integrate(
        |y| softening_kernel(y) * weight(y),
        y_min,
        1.0,
        QUAD_REL_TOL,
        0.0,
        QUAD_MAX_SEGMENTS,
    )?;
    let pref = m.coupling_prefactor(omega_p);
    let numerator = pref * num.value;
    let softening = pref * den.value;
    let stiffness = omega_p * omega_p;
    if stiffness - softening <= 0.0 {
        return Err(QcsbError::Unstable { softening, stiffness });
    }
    Ok(RsComponents {
        r_s: (numerator / (stiffness - softening)).sqrt(),
        numerator,
        softening,
        eps_min: Some(e_min),
    })
}

/// Entropic spring parameter R_s of a mode at `omega_p` (rad/s) and `temp` (K).
pub fn rs_integral(m: &GlassMaterial, omega_p: f64, temp: f64) -> Result<f64> {
    rs_components(m, omega_p, temp).map(|c| c.r_s)
}

/// Boundary of the entropic region: `w_p = Gamma_max(k_B T)`.
pub fn boundary_frequency(m: &GlassMaterial, temp: f64) -> f64 {
    gamma_max(m, K_B * temp, temp)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub omega_min: f64,
    pub omega_max: f64,
    pub n_omega: usize,
    pub temp_min: f64,
    pub temp_max: f64,
    pub n_temp: usize,
    #[serde(default = "default_log")]
    pub log_spaced: bool,
}

fn default_log() -> bool {
    true
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_min > 0.0 && self.omega_max >= self.omega_min)
            || !(self.temp_min > 0.0 && self.temp_max >= self.temp_min)
            || self.n_omega == 0
            || self.n_temp == 0
        {
            return Err(QcsbError::invalid(format!("invalid grid: {self:?}")));
        }
        Ok(())
    }

    fn axis(lo: f64, hi: f64, n: usize, log: bool) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n)
            .map(|i| {
                let f = i as f64 / (n - 1) as f64;
                if log {
                    (lo.ln() + f * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + f * (hi - lo)
                }
            })
            .collect()
    }

    pub fn omegas(&self) -> Vec<f64> {
        Self::axis(self.omega_min, self.omega_max, self.n_omega, self.log_spaced)
    }

    pub fn temps(&self) -> Vec<f64> {
        Self::axis(self.temp_min, self.temp_max, self.n_temp, self.log_spaced)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum CellStatus {
    Ok,
    /// Gamma_max(k_B T) <= w_p: no contributing TLS.
    Empty,
    Failed(String),
}

impl CellStatus {
    pub fn label(&self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Empty => "empty",
            CellStatus::Failed(_) => "error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RsCell {
    pub temp: f64,
    pub omega_p: f64,
    /// NaN for failed cells.
    pub r_s: f64,
    pub status: CellStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RsGrid {
    pub temps: Vec<f64>,
    pub omegas: Vec<f64>,
    /// Row-major over (temperature, frequency).
    pub cells: Vec<RsCell>,
    /// (T, w_p) samples of the boundary curve.
    pub boundary: Vec<(f64, f64)>,
}

impl RsGrid {
    pub fn cell(&self, it: usize, iw: usize) -> &RsCell {
        &self.cells[it * self.omegas.len() + iw]
    }

    pub fn failed(&self) -> impl Iterator<Item = &RsCell> {
        self.cells
            .iter()
            .filter(|c| matches!(c.status, CellStatus::Failed(_)))
    }

    pub fn max_rs(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| c.r_s)
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max)
    }
}

fn eval_cell(m: &GlassMaterial, temp: f64, omega_p: f64) -> RsCell {
    let (r_s, status) = match rs_components(m, omega_p, temp) {
        Ok(c) if c.eps_min.is_none() => (0.0, CellStatus::Empty),
        Ok(c) => (c.r_s, CellStatus::Ok),
        Err(e) => (f64::NAN, CellStatus::Failed(e.to_string())),
    };
    RsCell {
        temp,
        omega_p,
        r_s,
        status,
    }
}

/// Evaluates R_s over a (T, w_p) grid. Cell failures are flagged, never
/// fatal.
pub fn rs_grid(m: &GlassMaterial, spec: &GridSpec) -> Result<RsGrid> {
    m.validate()?;
    spec.validate()?;
    let temps = spec.temps();
    let omegas = spec.omegas();
    let points: Vec<(f64, f64)> = temps
        .iter()
        .flat_map(|&t| omegas.iter().map(move |&w| (t, w)))
        .collect();
    #[cfg(feature = "parallel")]
    let cells = {
        use rayon::prelude::*;
        points.par_iter().map(|&(t, w)| eval_cell(m, t, w)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let cells = points.iter().map(|&(t, w)| eval_cell(m, t, w)).collect();
    let boundary = temps.iter().map(|&t| (t, boundary_frequency(m, t))).collect();
    Ok(RsGrid {
        temps,
        omegas,
        cells,
        boundary,
    })
}

/// Slow reference evaluations that do not use the closed-form Gamma
/// integral, for cross-checking [`rs_components`].
pub mod oracle {
    use super::*;

    /// `int dGamma P(eps, Gamma)/Pbar * Gamma/Gamma_max` by adaptive
    /// quadrature of the raw integrand, written in the distance
    /// `t = Gamma_max - Gamma` from the square-root singularity.
    pub fn inner_weight_quadrature(omega_p: f64, gmax: f64, rel_tol: f64) -> Result<f64> {
        if gmax <= omega_p {
            return Ok(0.0);
        }
        let integrand = |t: f64| {
            let gamma = gmax - t;
            let density = 1.0 / (2.0 * gamma * (t / gmax).sqrt());
            density * gamma / gmax
        };
        quadrature::integrate(integrand, 0.0, gmax - omega_p, rel_tol, 0.0, 10_000).map(|r| r.value)
    }

    /// `int dGamma P(eps, Gamma)/Pbar` over `[w_p, Gamma_max]`, raw integrand.
    pub fn tls_count_quadrature(omega_p: f64, gmax: f64, rel_tol: f64) -> Result<f64> {
        if gmax <= omega_p {
            return Ok(0.0);
        }
        let integrand = |t: f64| {
            let gamma = gmax - t;
            1.0 / (2.0 * gamma * (t / gmax).sqrt())
        };
        quadrature::integrate(integrand, 0.0, gmax - omega_p, rel_tol, 0.0, 10_000).map(|r| r.value)
    }

    /// Same count after `u = sqrt(1 - Gamma/Gamma_max)`, which leaves the
    /// bounded integrand `1/(1 - u^2)`.
    pub fn tls_count_substituted(omega_p: f64, gmax: f64, rel_tol: f64) -> Result<f64> {
        let u_max = inner_weight(omega_p, gmax);
        quadrature::integrate(|u| 1.0 / (1.0 - u * u), 0.0, u_max, rel_tol, 0.0, 10_000).map(|r| r.value)
    }

    /// Numerator and softening sums by nested two-dimensional quadrature.
    pub fn rs_sums_direct(m: &GlassMaterial, omega_p: f64, temp: f64) -> Result<(f64, f64)> {
        let Some(e_min) = eps_min(m, omega_p, temp)? else {
            return Ok((0.0, 0.0));
        };
        let kt = K_B * temp;
        let mut failure = None;
        let mut outer = |kernel: fn(f64) -> f64| {
            quadrature::integrate(
                |y| {
                    let gmax = gamma_max(m, y * kt, temp);
                    match inner_weight_quadrature(omega_p, gmax, 1e-11) {
                        Ok(w) => kernel(y) * w,
                        Err(e) => {
                            failure.get_or_insert(e);
                            0.0
                        }
                    }
                },
                e_min / kt,
                1.0,
                1e-10,
                0.0,
                QUAD_MAX_SEGMENTS,
            )
        };
        let num = outer(numerator_kernel)?;
        let den = outer(softening_kernel)?;
        if let Some(e) = failure {
            return Err(e);
        }
        let pref = m.coupling_prefactor(omega_p);
        Ok((pref * num.value, pref * den.value))
    }
}
