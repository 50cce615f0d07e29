//! Estimators for trajectories: damped-oscillation fits, initial slopes and
//! linear scaling fits. All are deterministic.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{QcsbError, Result};

const LM_MAX_ITERATIONS: usize = 200;
const MIN_PEAKS: usize = 3;
const MIN_SLOPE_SAMPLES: usize = 10;

/// `A exp(-kappa t) cos(omega t + phase) + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampedFit {
    pub amplitude: f64,
    pub kappa: f64,
    pub omega: f64,
    pub phase: f64,
    pub offset: f64,
    /// RMS residual divided by the RMS deviation of the data from its mean.
    pub residual: f64,
    pub iterations: usize,
}

impl DampedFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (-self.kappa * t).exp() * (self.omega * t + self.phase).cos() + self.offset
    }

    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega
    }
}

fn check_series(t: &[f64], y: &[f64]) -> Result<()> {
    if t.len() != y.len() {
        return Err(QcsbError::invalid(format!(
            "series length mismatch: {} times, {} values",
            t.len(),
            y.len()
        )));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(QcsbError::invalid("series contains non-finite values"));
    }
    Ok(())
}

/// Local maxima of `y`, refined by a parabola through the three samples
/// around each one. Returns `(t, y)` of the vertex.
pub fn find_peaks(t: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let mut peaks = Vec::new();
    for i in 1..y.len().saturating_sub(1) {
        let (a, b, c) = (y[i - 1], y[i], y[i + 1]);
        if !(b > a && b >= c) {
            continue;
        }
        let denom = a - 2.0 * b + c;
        let shift = if denom < 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
        let h = t[i + 1] - t[i];
        peaks.push((t[i] + shift * h, b - 0.25 * (a - c) * shift));
    }
    peaks
}

/// Angular frequency of the largest periodogram peak, refined by golden
/// section between the neighbouring bins.
fn spectral_peak(t: &[f64], y: &[f64]) -> f64 {
    let n = y.len();
    let span = t[n - 1] - t[0];
    let power = |w: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for (&ti, &yi) in t.iter().zip(y) {
            let (s, c) = (w * (ti - t[0])).sin_cos();
            re += yi * c;
            im += yi * s;
        }
        re * re + im * im
    };
    let dw = 2.0 * std::f64::consts::PI / span;
    let mut best = (1, f64::NEG_INFINITY);
    for m in 1..=n / 2 {
        let p = power(m as f64 * dw);
        if p > best.1 {
            best = (m, p);
        }
    }
    let (mut lo, mut hi) = ((best.0 as f64 - 1.0) * dw, (best.0 as f64 + 1.0) * dw);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if power(a) > power(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

type P5 = SVector<f64, 5>;

fn model_terms(p: &P5, t: f64) -> (f64, [f64; 5]) {
    let (a, kappa, w, phi, _) = (p[0], p[1], p[2], p[3], p[4]);
    let e = (-kappa * t).exp();
    let (s, c) = (w * t + phi).sin_cos();
    let value = a * e * c + p[4];
    (value, [e * c, -t * a * e * c, -t * a * e * s, -a * e * s, 1.0])
}

fn cost(p: &P5, t: &[f64], y: &[f64]) -> f64 {
    t.iter()
        .zip(y)
        .map(|(&ti, &yi)| (model_terms(p, ti).0 - yi).powi(2))
        .sum()
}

/// Least-squares fit of a damped cosine. Initial guesses: frequency from
/// the periodogram, decay from a log-linear regression of the peak
/// envelope, amplitude from the first peak. Refined by Levenberg-Marquardt.
pub fn fit_damped_oscillation(t: &[f64], y: &[f64]) -> Result<DampedFit> {
    check_series(t, y)?;
    if y.len() < 8 {
        return Err(QcsbError::InsufficientData(format!("{} samples", y.len())));
    }
    let offset0 = mean(y);
    let centered: Vec<f64> = y.iter().map(|v| v - offset0).collect();
    let peaks: Vec<(f64, f64)> = find_peaks(t, &centered)
        .into_iter()
        .filter(|p| p.1 > 0.0)
        .collect();
    if peaks.len() < MIN_PEAKS {
        return Err(QcsbError::InsufficientData(format!(
            "{} resolvable peaks, need {MIN_PEAKS}",
            peaks.len()
        )));
    }
    let omega0 = spectral_peak(t, &centered);
    let pt: Vec<f64> = peaks.iter().map(|p| p.0).collect();
    let pl: Vec<f64> = peaks.iter().map(|p| p.1.ln()).collect();
    let kappa0 = -ols(&pt, &pl).map(|f| f.slope).unwrap_or(0.0);
    let (t1, h1) = peaks[0];
    let mut p = P5::from([h1 * (kappa0 * t1).exp(), kappa0, omega0, -omega0 * t1, offset0]);

    let ss_tot: f64 = centered.iter().map(|v| v * v).sum();
    let mut c = cost(&p, t, y);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < LM_MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = SMatrix::<f64, 5, 5>::zeros();
        let mut jtr = P5::zeros();
        for (&ti, &yi) in t.iter().zip(y) {
            let (v, g) = model_terms(&p, ti);
            let g = P5::from(g);
            jtj += g * g.transpose();
            jtr += g * (v - yi);
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for i in 0..5 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let tc = cost(&trial, t, y);
            if tc.is_finite() && tc <= c {
                let small = step
                    .iter()
                    .zip(p.iter())
                    .all(|(s, v)| s.abs() <= 1e-12 * (v.abs() + 1e-12));
                let gain = c - tc;
                p = trial;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if small || gain <= 1e-15 * c.max(1e-300) {
                    converged = true;
                }
                c = tc;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || converged || c <= 1e-30 * ss_tot {
            converged = true;
            break;
        }
    }
    let residual = if ss_tot > 0.0 { (c / ss_tot).sqrt() } else { 0.0 };
    if !converged || !p.iter().all(|v| v.is_finite()) {
        return Err(QcsbError::FitNonConvergence { iterations, residual });
    }
    // Canonical form: A > 0, omega > 0, phase in (-pi, pi].
    let (mut a, mut w, mut phi) = (p[0], p[2], p[3]);
    if w < 0.0 {
        w = -w;
        phi = -phi;
    }
    if a < 0.0 {
        a = -a;
        phi += std::f64::consts::PI;
    }
    let tau = 2.0 * std::f64::consts::PI;
    phi = phi - tau * ((phi + std::f64::consts::PI) / tau).ceil() + tau;
    Ok(DampedFit {
        amplitude: a,
        kappa: p[1],
        omega: w,
        phase: phi,
        offset: p[4],
        residual,
        iterations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

fn ols(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(QcsbError::InsufficientData("degenerate abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LinearFit { slope, intercept, r2 })
}

/// Least-squares slope of `y` over `[t[0], t[0] + window]`.
pub fn initial_slope(t: &[f64], y: &[f64], window: f64) -> Result<f64> {
    check_series(t, y)?;
    if !(window > 0.0) {
        return Err(QcsbError::invalid(format!("window must be > 0, got {window}")));
    }
    let Some(&t0) = t.first() else {
        return Err(QcsbError::InsufficientData("empty series".into()));
    };
    let n = t
        .iter()
        .take_while(|&&ti| ti <= t0 + window * (1.0 + 1e-12))
        .count();
    if n < MIN_SLOPE_SAMPLES {
        return Err(QcsbError::InsufficientData(format!(
            "{n} samples in window {window}, need {MIN_SLOPE_SAMPLES}"
        )));
    }
    ols(&t[..n], &y[..n]).map(|f| f.slope)
}

/// Ordinary least-squares line through `(xs, ys)` with its r².
pub fn scaling_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    check_series(xs, ys)?;
    if xs.len() < 3 {
        return Err(QcsbError::InsufficientData(format!(
            "{} points, need 3",
            xs.len()
        )));
    }
    ols(xs, ys)
}

/// Pearson correlation coefficient; NaN when either series is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Half the peak-to-peak excursion.
pub fn half_range(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    0.5 * (max - min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(t_end: f64, dt: f64) -> Vec<f64> {
        let n = (t_end / dt).round() as usize;
        (0..=n).map(|i| i as f64 * dt).collect()
    }

    #[test]
    fn synthetic_damped_cosine() {
        let t = grid(120.0, 0.05);
        let y: Vec<f64> = t.iter().map(|&t| (-0.1 * t).exp() * (0.5 * t).cos()).collect();
        let f = fit_damped_oscillation(&t, &y).unwrap();
        assert!((f.kappa - 0.1).abs() < 1e-3, "{f:?}");
        assert!((f.omega - 0.5).abs() < 1e-3, "{f:?}");
        assert!((f.amplitude - 1.0).abs() < 1e-6);
        assert!(f.residual < 1e-8);
    }

    #[test]
    fn pure_cosine_has_zero_decay() {
        let t = grid(60.0, 0.05);
        let y: Vec<f64> = t.iter().map(|&t| 0.3 * (1.7 * t + 0.4).cos() + 2.0).collect();
        let f = fit_damped_oscillation(&t, &y).unwrap();
        assert!(f.kappa.abs() < 1e-6, "{f:?}");
        assert!((f.omega - 1.7).abs() < 1e-9);
        assert!((f.phase - 0.4).abs() < 1e-8);
        assert!((f.offset - 2.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_peaks() {
        let t = grid(10.0, 0.05);
        let y: Vec<f64> = t.iter().map(|&t| (0.5 * t).cos()).collect();
        assert!(matches!(
            fit_damped_oscillation(&t, &y),
            Err(QcsbError::InsufficientData(_))
        ));
    }

    #[test]
    fn peak_interpolation() {
        let t = grid(10.0, 0.1);
        let y: Vec<f64> = t.iter().map(|&t| -(t - 3.03f64).powi(2)).collect();
        let p = find_peaks(&t, &y);
        assert_eq!(p.len(), 1);
        assert!((p[0].0 - 3.03).abs() < 1e-12);
        assert!(p[0].1.abs() < 1e-12);
    }

    #[test]
    fn slopes() {
        let t = grid(5.0, 0.01);
        let c = vec![0.7; t.len()];
        assert!(initial_slope(&t, &c, 1.0).unwrap().abs() < 1e-14);
        let y: Vec<f64> = t.iter().map(|&t| 0.01 * t + 1e-5 * t * t).collect();
        assert!((initial_slope(&t, &y, 1.0).unwrap() - 0.01).abs() < 1e-4);
        assert!(initial_slope(&t, &y, 0.05).is_err());
        assert!(initial_slope(&t, &y, 0.0).is_err());
    }

    #[test]
    fn linear_fits() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let f = scaling_fit(&xs, &[2.0, 4.0, 6.0, 8.0]).unwrap();
        assert_eq!((f.slope, f.intercept, f.r2), (2.0, 0.0, 1.0));
        assert!(scaling_fit(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(scaling_fit(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn correlation() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&a, &[-2.0, -4.0, -6.0, -8.0]) + 1.0).abs() < 1e-15);
        assert_eq!(half_range(&[-1.0, 3.0, 0.0]), 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fit_is_scale_equivariant(scale in 0.01f64..100.0, kappa in 0.0f64..0.1, w in 0.3f64..2.0) {
            let t = grid(80.0, 0.05);
            let y: Vec<f64> = t.iter().map(|&t| (-kappa * t).exp() * (w * t).cos()).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * scale).collect();
            let a = fit_damped_oscillation(&t, &y).unwrap();
            let b = fit_damped_oscillation(&t, &ys).unwrap();
            prop_assert!((b.amplitude / a.amplitude - scale).abs() <= 1e-6 * scale);
            prop_assert!((a.kappa - b.kappa).abs() <= 1e-8);
            prop_assert!((a.omega - b.omega).abs() <= 1e-8);
        }

        #[test]
        fn slope_is_offset_invariant(c in -1e3f64..1e3, a in -1.0f64..1.0) {
            let t = grid(3.0, 0.01);
            let y: Vec<f64> = t.iter().map(|&t| a * t + (3.0 * t).sin()).collect();
            let yc: Vec<f64> = y.iter().map(|v| v + c).collect();
            let s0 = initial_slope(&t, &y, 1.0).unwrap();
            let s1 = initial_slope(&t, &yc, 1.0).unwrap();
            prop_assert!((s0 - s1).abs() <= 1e-9 * (1.0 + c.abs()));
        }
    }
}
