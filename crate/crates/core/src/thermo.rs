//! Closed-form thermodynamics of the QCSB model (hbar = k_B = 1, T = 1/beta).

use serde::Serialize;

use crate::dynamics::BathSpectrum;
use crate::error::{QcsbError, Result};
use crate::params::QcsbParams;
use crate::statespace::{binomial, softplus};

/// Largest N accepted by [`partition_exact_finite`].
pub const EXACT_PARTITION_MAX_SPINS: usize = 30;

/// Equilibrium up-spin probability `1/(1 + e^{beta B})`.
pub fn mean_polarization(beta: f64, gap: f64) -> f64 {
    (-softplus(beta * gap)).exp()
}

/// `e^{beta B} / (1 + e^{beta B})^2 = p (1 - p)`, stable for large beta B.
fn polarization_variance(beta: f64, gap: f64) -> f64 {
    let p = mean_polarization(beta, gap);
    let q = mean_polarization(-beta, gap);
    p * q
}

pub fn effective_frequency(params: &QcsbParams) -> f64 {
    let w0 = params.bare_freq;
    let w = params.coupling_freq;
    (w0 * w0 + w * w * mean_polarization(params.beta, params.spin_gap)).sqrt()
}

/// Default frequency for the number basis: the effective frequency, or the
/// largest bare scale when that vanishes.
pub fn basis_frequency(params: &QcsbParams) -> f64 {
    let w = effective_frequency(params);
    if w > 0.0 {
        w
    } else {
        params.coupling_freq.max(params.bare_freq).max(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Partition {
    /// Oscillator factor `1 / (2 sinh(beta w_eff / 2))`.
    pub qcsb: f64,
    /// Single-spin partition function `1 + e^{-beta B}`.
    pub tls: f64,
}

pub fn partition_qcsb(params: &QcsbParams) -> Result<Partition> {
    let weff = effective_frequency(params);
    if weff <= 0.0 {
        return Err(QcsbError::Divergent(
            "oscillator partition function",
            "w_eff = 0 (free particle)".into(),
        ));
    }
    Ok(Partition {
        qcsb: 0.5 / (0.5 * params.beta * weff).sinh(),
        tls: 1.0 + (-params.beta * params.spin_gap).exp(),
    })
}

/// Exact `Z / Z_TLS^N` for finite N: the binomial average of the sector
/// oscillator partition functions.
pub fn partition_exact_finite(params: &QcsbParams) -> Result<f64> {
    params.validate()?;
    let n = params.spin_count;
    if n > EXACT_PARTITION_MAX_SPINS {
        return Err(QcsbError::invalid(format!(
            "exact partition function limited to N <= {EXACT_PARTITION_MAX_SPINS}, got {n}"
        )));
    }
    if params.bare_freq == 0.0 {
        return Err(QcsbError::Divergent(
            "exact partition function",
            "with w0 = 0 the all-down sector is a free particle; only the steepest-descent \
             form stays finite"
                .into(),
        ));
    }
    let bb = params.beta * params.spin_gap;
    let log_z1 = softplus(-bb);
    let mut acc = 0.0;
    for k in 0..=n {
        let wk = params.sector_freq_sq(k).sqrt();
        let log_weight = binomial(n, k).ln() - bb * k as f64 - n as f64 * log_z1;
        acc += log_weight.exp() * 0.5 / (0.5 * params.beta * wk).sinh();
    }
    Ok(acc)
}

/// `-d ln Z_QCSB / d beta`, including the temperature dependence of w_eff.
pub fn mean_energy_qcsb(params: &QcsbParams) -> Result<f64> {
    let weff = effective_frequency(params);
    if weff <= 0.0 {
        return Err(QcsbError::Divergent("mean energy", "w_eff = 0".into()));
    }
    let w2 = params.coupling_freq * params.coupling_freq;
    let dpol = -params.spin_gap * polarization_variance(params.beta, params.spin_gap);
    let dweff = w2 * dpol / (2.0 * weff);
    let arg = 0.5 * params.beta * weff;
    Ok(0.5 * (weff + params.beta * dweff) / arg.tanh())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearResponse {
    pub free_energy_shift: f64,
    pub entropy_shift: f64,
}

/// Leading-order free energy and entropy change under a static force `f`.
pub fn linear_response(params: &QcsbParams, f: f64) -> LinearResponse {
    let weff2 = effective_frequency(params).powi(2);
    let w2 = params.coupling_freq * params.coupling_freq;
    let var = polarization_variance(params.beta, params.spin_gap);
    LinearResponse {
        free_energy_shift: -f * f / (2.0 * params.mass * weff2),
        entropy_shift: -params.beta.powi(2) * params.spin_gap * var * w2 * f * f
            / (2.0 * params.mass * weff2 * weff2),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EntropicProfile {
    /// S_TLS(x) - S_B.
    pub entropy_offset: f64,
    /// T dS/dx.
    pub force: f64,
}

/// Coefficient c in `S_TLS(x) - S_B = -c x^2`.
pub fn entropy_curvature(params: &QcsbParams) -> f64 {
    let w2 = params.coupling_freq * params.coupling_freq;
    0.5 * params.beta.powi(2)
        * params.mass
        * w2
        * params.spin_gap
        * polarization_variance(params.beta, params.spin_gap)
}

pub fn entropic_profile(params: &QcsbParams, x: f64) -> EntropicProfile {
    let c = entropy_curvature(params);
    EntropicProfile {
        entropy_offset: -c * x * x,
        force: -2.0 * c * x / params.beta,
    }
}

/// Entropic spring frequency `w_s = w sqrt(beta B e^{beta B}) / (1 + e^{beta B})`.
pub fn entropic_frequency(params: &QcsbParams) -> f64 {
    let bb = params.beta * params.spin_gap;
    params.coupling_freq * (bb * polarization_variance(params.beta, params.spin_gap)).sqrt()
}

/// R_S = w_s / w_eff.
pub fn entropic_parameter(params: &QcsbParams) -> Result<f64> {
    let weff = effective_frequency(params);
    if weff <= 0.0 {
        return Err(QcsbError::Divergent("entropic parameter", "w_eff = 0".into()));
    }
    Ok(entropic_frequency(params) / weff)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlipRate {
    /// gamma (nbar + 1) P(up) + gamma nbar (1 - P(up)) with Gibbs P(up).
    pub exact: f64,
    /// 2 gamma e^{-beta E} / (1 - e^{-2 beta E}).
    pub approx: f64,
}

pub fn flip_rate(params: &QcsbParams, spectrum: &BathSpectrum, x2: f64) -> Result<FlipRate> {
    if x2 < 0.0 {
        return Err(QcsbError::invalid(format!("x^2 must be >= 0, got {x2}")));
    }
    let energy = params.spin_gap + params.delta() * x2;
    let gamma = spectrum.rate(energy);
    let be = params.beta * energy;
    let nbar = crate::dynamics::bose(be);
    let (p_up, _) = gibbs_populations(be);
    let q = (-be).exp();
    Ok(FlipRate {
        exact: gamma * (nbar + 1.0) * p_up + gamma * nbar * (1.0 - p_up),
        approx: 2.0 * gamma * q / (1.0 - q * q),
    })
}

fn gibbs_populations(beta_energy: f64) -> (f64, f64) {
    let p_up = (-softplus(beta_energy)).exp();
    (p_up, 1.0 - p_up)
}

/// Single-spin Gibbs populations at position `x`: `(P(up), P(down))`.
pub fn gibbs_tls_state(params: &QcsbParams, x: f64) -> (f64, f64) {
    gibbs_populations(params.beta * (params.spin_gap + params.delta() * x * x))
}

/// All closed-form quantities for one parameter set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThermoSummary {
    pub mean_polarization: f64,
    pub effective_frequency: f64,
    pub partition_qcsb: Option<f64>,
    pub partition_tls: f64,
    pub partition_exact_ratio: Option<f64>,
    pub entropic_frequency: f64,
    pub entropic_parameter: Option<f64>,
    pub entropy_curvature: f64,
    pub force_per_displacement: f64,
    pub free_energy_shift: f64,
    pub entropy_shift: f64,
    pub flip_rate: f64,
    pub flip_rate_approx: f64,
}

/// `force` and `x2` feed the linear response and flip-rate entries.
pub fn summary(params: &QcsbParams, spectrum: &BathSpectrum, force: f64, x2: f64) -> Result<ThermoSummary> {
    params.validate()?;
    let part = partition_qcsb(params).ok();
    let exact = partition_exact_finite(params).ok();
    let lr = linear_response(params, force);
    let fr = flip_rate(params, spectrum, x2)?;
    Ok(ThermoSummary {
        mean_polarization: mean_polarization(params.beta, params.spin_gap),
        effective_frequency: effective_frequency(params),
        partition_qcsb: part.map(|p| p.qcsb),
        partition_tls: 1.0 + (-params.beta * params.spin_gap).exp(),
        partition_exact_ratio: match (exact, part) {
            (Some(e), Some(p)) => Some(e / p.qcsb),
            _ => None,
        },
        entropic_frequency: entropic_frequency(params),
        entropic_parameter: entropic_parameter(params).ok(),
        entropy_curvature: entropy_curvature(params),
        force_per_displacement: entropic_profile(params, 1.0).force,
        free_energy_shift: lr.free_energy_shift,
        entropy_shift: lr.entropy_shift,
        flip_rate: fr.exact,
        flip_rate_approx: fr.approx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn weak_damping() -> QcsbParams {
        QcsbParams::new(1.0, 0.0, 1.0, 8, 100.0, 0.01).unwrap()
    }

    #[test]
    fn polarization_values() {
        assert_eq!(mean_polarization(1.0, 1e6), 0.0);
        assert_eq!(mean_polarization(1.0, 0.0), 0.5);
        assert_relative_eq!(mean_polarization(1.0, 1.0), 0.268941, epsilon = 1e-6);
        assert_relative_eq!(
            mean_polarization(1.0, 1.0),
            1.0 / (1.0 + 1f64.exp()),
            epsilon = 1e-15
        );
    }

    #[test]
    fn effective_frequencies() {
        let p = weak_damping().with_coupling(0.0, 0.7);
        assert_eq!(effective_frequency(&p), 0.7);
        assert_relative_eq!(effective_frequency(&weak_damping()), 0.518596, epsilon = 1e-6);
        let p2b = QcsbParams::new(1.0, 0.0, 1.0, 4, 10.0, 0.01).unwrap();
        assert_relative_eq!(effective_frequency(&p2b), 0.689218, epsilon = 1e-6);
    }

    #[test]
    fn partition_functions() {
        let z = partition_qcsb(&weak_damping()).unwrap();
        assert_relative_eq!(z.qcsb, 192.828, epsilon = 1e-3);
        let p = QcsbParams::new(1.0, 1.0, 0.0, 1, 1.0, 1.0).unwrap();
        assert_relative_eq!(partition_qcsb(&p).unwrap().tls, 1.36788, epsilon = 1e-5);
        // Ground-state dominance.
        let cold = QcsbParams::new(1.0, 2.0, 0.0, 1, 1.0, 30.0).unwrap();
        assert_relative_eq!(
            partition_qcsb(&cold).unwrap().qcsb,
            (-30.0f64).exp(),
            max_relative = 1e-12
        );
        let free = QcsbParams::new(1.0, 0.0, 0.0, 1, 1.0, 1.0).unwrap();
        assert!(matches!(partition_qcsb(&free), Err(QcsbError::Divergent(..))));
    }

    #[test]
    fn exact_partition() {
        let p = QcsbParams::new(1.0, 0.8, 0.0, 1, 1.0, 1.3).unwrap();
        let z = partition_qcsb(&p).unwrap().qcsb;
        assert_relative_eq!(partition_exact_finite(&p).unwrap(), z, max_relative = 1e-14);

        let gap = |n| {
            let p = QcsbParams::new(1.0, 0.5, 1.0, n, 1.0, 1.0).unwrap();
            (partition_exact_finite(&p).unwrap() / partition_qcsb(&p).unwrap().qcsb - 1.0).abs()
        };
        assert!(gap(20) < gap(5));

        let cold = QcsbParams::new(1.0, 0.5, 1.0, 10, 20.0, 1.0).unwrap();
        let r = partition_exact_finite(&cold).unwrap() / partition_qcsb(&cold).unwrap().qcsb;
        assert!((r - 1.0).abs() < 1e-6);

        assert!(matches!(
            partition_exact_finite(&weak_damping()),
            Err(QcsbError::Divergent(..))
        ));
        let big = QcsbParams::new(1.0, 0.5, 1.0, 31, 1.0, 1.0).unwrap();
        assert!(partition_exact_finite(&big).is_err());
    }

    #[test]
    fn mean_energy_matches_finite_difference() {
        for (w0, w, b, beta) in [
            (0.5, 1.0, 1.0, 1.0),
            (0.0, 1.0, 100.0, 0.01),
            (1.0, 2.0, 3.0, 0.4),
        ] {
            let p = QcsbParams::new(1.0, w0, w, 4, b, beta).unwrap();
            let lnz = |beta: f64| {
                let q = QcsbParams { beta, ..p };
                partition_qcsb(&q).unwrap().qcsb.ln()
            };
            let h = 1e-5 * beta;
            let fd = -(lnz(beta + h) - lnz(beta - h)) / (2.0 * h);
            let e = mean_energy_qcsb(&p).unwrap();
            assert!(((fd - e) / e).abs() < 1e-6, "{fd} vs {e}");
        }
    }

    #[test]
    fn linear_response_values() {
        let p = weak_damping();
        assert_eq!(
            linear_response(&p, 0.0),
            LinearResponse {
                free_energy_shift: -0.0,
                entropy_shift: -0.0
            }
        );
        let lr = linear_response(&p, 0.1);
        assert_relative_eq!(lr.free_energy_shift, -0.0185914, epsilon = 1e-7);
        let uncoupled = p.with_coupling(0.0, 0.6);
        let lr = linear_response(&uncoupled, 0.3);
        assert_eq!(lr.entropy_shift, 0.0);
        assert_relative_eq!(lr.free_energy_shift, -0.09 / (2.0 * 0.36), epsilon = 1e-15);
    }

    /// The entropy shift is -dA/dT at fixed f; check against a finite
    /// difference of the free energy shift in temperature.
    #[test]
    fn entropy_shift_is_temperature_derivative() {
        let p = QcsbParams::new(1.3, 0.4, 1.1, 4, 2.0, 0.7).unwrap();
        let f = 0.2;
        let da = |t: f64| linear_response(&QcsbParams { beta: 1.0 / t, ..p }, f).free_energy_shift;
        let t = 1.0 / p.beta;
        let h = 1e-5;
        let fd = -(da(t + h) - da(t - h)) / (2.0 * h);
        assert_relative_eq!(linear_response(&p, f).entropy_shift, fd, max_relative = 1e-6);
    }

    #[test]
    fn entropic_force() {
        let p = weak_damping();
        assert_eq!(entropic_profile(&p, 0.0).force, 0.0);
        let e = 1f64.exp();
        let want = -0.01 * 100.0 * e / (1.0 + e).powi(2);
        assert_relative_eq!(entropic_profile(&p, 1.0).force, want, epsilon = 1e-12);
        assert_relative_eq!(want, -0.19661, epsilon = 1e-5);
        assert_eq!(entropic_profile(&p, -0.7).force, -entropic_profile(&p, 0.7).force);
        // F_S / x = -M w_s^2
        let ws = entropic_frequency(&p);
        assert_relative_eq!(
            entropic_profile(&p, 1.0).force,
            -p.mass * ws * ws,
            max_relative = 1e-14
        );
    }

    #[test]
    fn entropic_parameter_values() {
        let p = QcsbParams::new(1.0, 0.0, 1.0, 4, 10.0, 0.01).unwrap();
        assert_relative_eq!(entropic_frequency(&p), 0.157916, epsilon = 1e-6);
        assert_relative_eq!(entropic_parameter(&p).unwrap(), 0.229124, epsilon = 1e-5);
        assert_eq!(entropic_parameter(&p.with_coupling(0.0, 1.0)).unwrap(), 0.0);
        let frozen = QcsbParams::new(1.0, 1.0, 1.0, 4, 1e4, 1.0).unwrap();
        assert!(entropic_parameter(&frozen).unwrap() < 1e-100);
    }

    #[test]
    fn flip_rates() {
        let p = weak_damping();
        let s = BathSpectrum::Constant { gamma: 10.0 };
        let fr = flip_rate(&p, &s, 0.0).unwrap();
        assert_relative_eq!(fr.approx, 8.5092, epsilon = 1e-4);
        let cold = QcsbParams::new(1.0, 0.0, 1.0, 4, 50.0, 1.0).unwrap();
        let fr = flip_rate(&cold, &s, 0.0).unwrap();
        assert_relative_eq!(fr.approx, 20.0 * (-50.0f64).exp(), max_relative = 1e-12);
        assert!(flip_rate(&p, &s, -1.0).is_err());
    }

    #[test]
    fn gibbs_states() {
        let p = QcsbParams::new(1.0, 0.0, 1.0, 10, 100.0, 0.01).unwrap();
        let (up, down) = gibbs_tls_state(&p, 1.0);
        let q = (-1.0005f64).exp();
        assert_relative_eq!(up, q / (1.0 + q), epsilon = 1e-14);
        assert_relative_eq!(up, 0.26884, epsilon = 1e-5);
        assert_relative_eq!(up + down, 1.0, epsilon = 1e-15);
        assert_eq!(gibbs_populations(1e5), (0.0, 1.0));
        assert_eq!(gibbs_populations(0.0), (0.5, 0.5));
    }

    proptest! {
        #[test]
        fn flip_rate_forms_coincide(beta in 0.01f64..5.0, gap in 0.01f64..10.0, w in 0.0f64..3.0,
                                    n in 1usize..50, x2 in 0.0f64..10.0, gamma in 0.1f64..100.0) {
            let p = QcsbParams::new(1.0, 0.0, w, n, gap, beta).unwrap();
            let fr = flip_rate(&p, &BathSpectrum::Constant { gamma }, x2).unwrap();
            prop_assert!(((fr.exact - fr.approx) / fr.approx).abs() < 1e-12);
        }

        #[test]
        fn consistency_chain(beta in 0.01f64..5.0, gap in 0.01f64..10.0, w in 0.0f64..3.0, w0 in 0.0f64..3.0) {
            let p = QcsbParams::new(1.0, w0, w, 3, gap, beta).unwrap();
            let lhs = effective_frequency(&p).powi(2) - w0 * w0;
            let rhs = w * w * mean_polarization(beta, gap);
            prop_assert!((lhs - rhs).abs() <= 1e-14 * (1.0 + w0 * w0));
            // Profile force is T times the x-derivative of the entropy offset.
            let x = 0.37;
            let prof = entropic_profile(&p, x);
            let ds_dx = -2.0 * entropy_curvature(&p) * x;
            prop_assert_eq!(prof.force, ds_dx / beta);
        }
    }
}
