//! Dormand-Prince 5(4) explicit Runge-Kutta with step-size control and the
//! 4th-order continuous extension for output between steps.
//!
//! States are complex ndarrays of any dimension; the error norm is the
//! usual RMS of `|err| / (atol + rtol * max(|y0|, |y1|))`.

use ndarray::{Array, Dimension, Zip};
use num_complex::Complex64 as C64;

// The right-hand side is autonomous, so the node offsets c_i never appear.

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Clone, Copy, Debug)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    /// Abort when the step falls below `min_step_fraction * t_end`.
    pub min_step_fraction: f64,
    pub max_steps: usize,
    pub initial_step: Option<f64>,
}

impl Dopri5Options {
    pub fn with_tol(tol: f64) -> Self {
        Dopri5Options {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Dopri5Options {
            rtol: 1e-8,
            atol: 1e-8,
            min_step_fraction: 1e-12,
            max_steps: 50_000_000,
            initial_step: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum OdeFailure {
    StepUnderflow { t: f64, h: f64 },
    NonFinite { t: f64 },
    TooManySteps { t: f64 },
}

type Arr<D> = Array<C64, D>;

fn lincomb<D: Dimension>(y: &Arr<D>, h: f64, terms: &[(f64, &Arr<D>)]) -> Arr<D> {
    let mut out = y.clone();
    for &(c, k) in terms {
        if c != 0.0 {
            out.scaled_add(C64::new(h * c, 0.0), k);
        }
    }
    out
}

fn error_norm<D: Dimension>(err: &Arr<D>, y0: &Arr<D>, y1: &Arr<D>, opts: &Dopri5Options) -> f64 {
    let mut acc = 0.0;
    Zip::from(err).and(y0).and(y1).for_each(|e, a, b| {
        let sc = opts.atol + opts.rtol * a.norm().max(b.norm());
        acc += (e.norm() / sc).powi(2);
    });
    (acc / err.len().max(1) as f64).sqrt()
}

fn norm_rms<D: Dimension>(y: &Arr<D>, opts: &Dopri5Options) -> f64 {
    let mut acc = 0.0;
    for v in y.iter() {
        let sc = opts.atol + opts.rtol * v.norm();
        acc += (v.norm() / sc).powi(2);
    }
    (acc / y.len().max(1) as f64).sqrt()
}

/// Integrates `dy/dt = f(y)` from 0 to `t_end`.
///
/// `sample_times` must be ascending within `[0, t_end]`; `on_sample` is
/// called once per sample with the interpolated state. `on_accept` may
/// modify the state after each accepted step (e.g. to restore Hermiticity)
/// and returns `false` to stop the integration early.
pub fn integrate<D, F, A, S>(
    y0: Arr<D>,
    t_end: f64,
    sample_times: &[f64],
    opts: &Dopri5Options,
    mut rhs: F,
    mut on_accept: A,
    mut on_sample: S,
) -> Result<(Arr<D>, StepStats), (OdeFailure, StepStats)>
where
    D: Dimension,
    F: FnMut(&Arr<D>) -> Arr<D>,
    A: FnMut(f64, &mut Arr<D>) -> bool,
    S: FnMut(f64, &Arr<D>),
{
    let mut stats = StepStats::default();
    let mut next_sample = 0usize;
    let mut t = 0.0f64;
    let mut y = y0;

    while next_sample < sample_times.len() && sample_times[next_sample] <= 0.0 {
        on_sample(sample_times[next_sample], &y);
        next_sample += 1;
    }
    if t_end <= 0.0 {
        return Ok((y, stats));
    }

    let mut k1 = rhs(&y);
    stats.rhs_evals += 1;

    let mut h = match opts.initial_step {
        Some(h) => h,
        None => {
            let d0 = norm_rms(&y, opts);
            let d1 = norm_rms(&k1, opts);
            let h0 = if d0 < 1e-5 || d1 < 1e-5 {
                1e-6
            } else {
                0.01 * d0 / d1
            };
            let y1 = lincomb(&y, h0, &[(1.0, &k1)]);
            let f1 = rhs(&y1);
            stats.rhs_evals += 1;
            let d2 = error_norm(&(&f1 - &k1), &y, &y1, opts) / h0;
            let h1 = if d1.max(d2) <= 1e-15 {
                (h0 * 1e-3).max(1e-6)
            } else {
                (0.01 / d1.max(d2)).powf(0.2)
            };
            (100.0 * h0).min(h1)
        }
    }
    .min(t_end);

    let h_min = opts.min_step_fraction * t_end;
    let mut last_rejected = false;

    while t < t_end {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err((OdeFailure::TooManySteps { t }, stats));
        }
        if h < h_min {
            return Err((OdeFailure::StepUnderflow { t, h }, stats));
        }
        if t + h > t_end {
            h = t_end - t;
        }

        let k2 = rhs(&lincomb(&y, h, &[(A21, &k1)]));
        let k3 = rhs(&lincomb(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = rhs(&lincomb(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = rhs(&lincomb(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let k6 = rhs(&lincomb(
            &y,
            h,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        ));
        let y1 = lincomb(
            &y,
            h,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        let k7 = rhs(&y1);
        stats.rhs_evals += 6;

        let mut err = k1.mapv(|v| v * E1);
        for (c, k) in [(E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)] {
            err.scaled_add(C64::new(c, 0.0), k);
        }
        err.mapv_inplace(|v| v * h);
        let en = error_norm(&err, &y, &y1, opts);

        if !en.is_finite() {
            if y1.iter().all(|v| v.is_finite()) {
                // Error estimate overflowed on a finite state: shrink hard.
                stats.rejected += 1;
                h *= 0.1;
                last_rejected = true;
                continue;
            }
            return Err((OdeFailure::NonFinite { t }, stats));
        }

        if en <= 1.0 {
            let t_new = t + h;
            if next_sample < sample_times.len() && sample_times[next_sample] <= t_new {
                // Continuous extension coefficients (Hairer's contd5).
                let r2 = &y1 - &y;
                let r3 = k1.mapv(|v| v * h) - &r2;
                let r4 = &r2 - k7.mapv(|v| v * h) - &r3;
                let mut r5 = k1.mapv(|v| v * D1);
                for (c, k) in [(D3, &k3), (D4, &k4), (D5, &k5), (D6, &k6), (D7, &k7)] {
                    r5.scaled_add(C64::new(c, 0.0), k);
                }
                r5.mapv_inplace(|v| v * h);
                while next_sample < sample_times.len() && sample_times[next_sample] <= t_new {
                    let ts = sample_times[next_sample];
                    let th = ((ts - t) / h).clamp(0.0, 1.0);
                    let th1 = 1.0 - th;
                    let mut ys = y.clone();
                    Zip::from(&mut ys)
                        .and(&r2)
                        .and(&r3)
                        .and(&r4)
                        .and(&r5)
                        .for_each(|o, &a, &b, &c, &d| {
                            *o += th * (a + th1 * (b + th * (c + th1 * d)));
                        });
                    on_sample(ts, &ys);
                    next_sample += 1;
                }
            }
            stats.accepted += 1;
            t = t_new;
            y = y1;
            k1 = k7;
            let keep_going = on_accept(t, &mut y);
            if !keep_going {
                break;
            }
            let mut fac = (0.9 * en.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            h *= fac;
            last_rejected = false;
        } else {
            stats.rejected += 1;
            h *= (0.9 * en.powf(-0.2)).clamp(0.1, 1.0);
            last_rejected = true;
        }
    }
    Ok((y, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn exponential_decay_and_rotation() {
        // y' = (-0.3 + 2i) y, exact y0 * exp(lambda t)
        let lam = C64::new(-0.3, 2.0);
        let y0: Array1<C64> = array![C64::new(1.0, 0.0), C64::new(0.2, -0.5)];
        let samples: Vec<f64> = (0..=50).map(|i| i as f64 * 0.1).collect();
        let mut got = Vec::new();
        let (yend, stats) = integrate(
            y0.clone(),
            5.0,
            &samples,
            &Dopri5Options::with_tol(1e-10),
            |y| y.mapv(|v| v * lam),
            |_, _| true,
            |t, y| got.push((t, y.clone())),
        )
        .unwrap();
        assert_eq!(got.len(), 51);
        for (t, y) in &got {
            let f = (lam * *t).exp();
            for i in 0..2 {
                assert!((y[i] - y0[i] * f).norm() < 1e-8, "t={t}");
            }
        }
        let f = (lam * 5.0).exp();
        assert!((yend[0] - f).norm() < 1e-9);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn dense_output_is_fourth_order_between_steps() {
        // Harmonic oscillator in complex form; coarse tolerance so steps are
        // long and many samples land inside them.
        let y0: Array1<C64> = array![C64::new(1.0, 0.0)];
        let samples: Vec<f64> = (0..=400).map(|i| i as f64 * 0.025).collect();
        let mut worst: f64 = 0.0;
        integrate(
            y0,
            10.0,
            &samples,
            &Dopri5Options::with_tol(1e-7),
            |y| y.mapv(|v| v * C64::new(0.0, 1.0)),
            |_, _| true,
            |t, y| worst = worst.max((y[0] - C64::new(0.0, t).exp()).norm()),
        )
        .unwrap();
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn underflow_is_reported() {
        let y0: Array1<C64> = array![C64::new(1.0, 0.0)];
        let opts = Dopri5Options {
            min_step_fraction: 0.5,
            initial_step: Some(0.01),
            ..Dopri5Options::with_tol(1e-12)
        };
        let r = integrate(
            y0,
            1.0,
            &[],
            &opts,
            |y| y.mapv(|v| v * 50.0),
            |_, _| true,
            |_, _| {},
        );
        assert!(matches!(r, Err((OdeFailure::StepUnderflow { .. }, _))));
    }
}
