//! Small curve-fitting helpers: Levenberg-Marquardt least squares, exponential
//! decays, sinusoids and phase fringes.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimize `Σ r_i(p)²` from `p0`; Jacobian by central differences.
/// Parameters should be scaled to order one.
pub fn levenberg_marquardt(
    residuals: impl Fn(&[f64]) -> Vec<f64>,
    p0: &[f64],
    max_iter: usize,
) -> Result<Vec<f64>> {
    let mut p = p0.to_vec();
    let mut r = residuals(&p);
    let mut cost: f64 = r.iter().map(|x| x * x).sum();
    if !cost.is_finite() {
        return Err(Error::Fit("non-finite residuals at the initial guess".into()));
    }
    let mut mu = 1e-3;
    for _ in 0..max_iter {
        let m = r.len();
        let k = p.len();
        let mut jac = DMatrix::<f64>::zeros(m, k);
        for j in 0..k {
            let h = 1e-6 * p[j].abs().max(1e-3);
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus[j] += h;
            minus[j] -= h;
            let rp = residuals(&plus);
            let rm = residuals(&minus);
            for i in 0..m {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rv = DVector::from_vec(r.clone());
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * rv;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for d in 0..k {
                a[(d, d)] += mu * jtj[(d, d)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                mu *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = residuals(&trial);
            let ct: f64 = rt.iter().map(|x| x * x).sum();
            if ct.is_finite() && ct <= cost {
                let rel = (cost - ct) / cost.max(1e-300);
                p = trial;
                r = rt;
                cost = ct;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-14 {
                    return Ok(p);
                }
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    Ok(p)
}

/// `y = amplitude · exp(−t/tau) + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub amplitude: f64,
    pub tau: f64,
    pub offset: f64,
}

/// Exponential decay fit; `with_offset = false` pins the offset at zero.
pub fn fit_exponential(t: &[f64], y: &[f64], with_offset: bool) -> Result<ExpFit> {
    if t.len() != y.len() || t.len() < 3 {
        return Err(Error::Fit("need at least three points of matching length".into()));
    }
    // log-linear initial guess on the positive part
    let offset0 = if with_offset {
        y.iter().copied().fold(f64::INFINITY, f64::min).min(0.0) * 0.5
    } else {
        0.0
    };
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, &v)| v - offset0 > 1e-9)
        .map(|(&a, &b)| (a, (b - offset0).ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Fit("decay data has no positive points".into()));
    }
    let (slope, icept) = linear_regression(&pts);
    let tau0 = if slope < 0.0 { -1.0 / slope } else { t.iter().copied().fold(0.0, f64::max) };
    let scale = tau0;
    let model = |p: &[f64], x: f64| p[0] * (-x / (p[1] * scale)).exp() + if with_offset { p[2] } else { 0.0 };
    let mut p0 = vec![icept.exp(), 1.0];
    if with_offset {
        p0.push(offset0);
    }
    let p = levenberg_marquardt(|p| t.iter().zip(y).map(|(&x, &v)| model(p, x) - v).collect(), &p0, 200)?;
    let tau = p[1] * scale;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Fit(format!("decay constant {tau} not positive")));
    }
    Ok(ExpFit {
        amplitude: p[0],
        tau,
        offset: if with_offset { p[2] } else { 0.0 },
    })
}

/// `y = offset + amplitude · cos(2π f t + phase)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineFit {
    pub frequency: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
}

/// Sinusoid fit: dense frequency scan with linear amplitudes, then LM refinement.
pub fn fit_sinusoid(t: &[f64], y: &[f64], f_min: f64, f_max: f64) -> Result<SineFit> {
    if t.len() != y.len() || t.len() < 5 || !(f_max > f_min && f_min >= 0.0) {
        return Err(Error::Fit("invalid sinusoid fit inputs".into()));
    }
    let n_scan = 2000;
    let mut best = (f64::INFINITY, f_min, [0.0; 3]);
    for i in 0..=n_scan {
        let f = f_min + (f_max - f_min) * i as f64 / n_scan as f64;
        if let Some((c, res)) = linear_sine(t, y, f) {
            if res < best.0 {
                best = (res, f, c);
            }
        }
    }
    let (_, f0, [off, a, b]) = best;
    if !best.0.is_finite() {
        return Err(Error::Fit("sinusoid scan failed".into()));
    }
    // y = off + a cos + b sin = off + R cos(ωt + φ) with R cos φ = a, −R sin φ = b
    let amp = a.hypot(b);
    let ph = (-b).atan2(a);
    let scale = f0.max(1e-300);
    let p = levenberg_marquardt(
        |p| {
            t.iter()
                .zip(y)
                .map(|(&x, &v)| p[3] + p[1] * (TAU * p[0] * scale * x + p[2]).cos() - v)
                .collect()
        },
        &[1.0, amp, ph, off],
        200,
    )?;
    if !(p[0] > 0.0) {
        return Err(Error::Fit("sinusoid fit ran to a non-positive frequency".into()));
    }
    let (mut amplitude, mut phase) = (p[1], p[2]);
    if amplitude < 0.0 {
        amplitude = -amplitude;
        phase += std::f64::consts::PI;
    }
    Ok(SineFit {
        frequency: p[0] * scale,
        amplitude,
        phase: phase.rem_euclid(TAU),
        offset: p[3],
    })
}

/// Damped oscillation `offset + amplitude · exp(−t/tau) · cos(2π f t + phase)`,
/// or with `decaying_offset` the whole signal relaxing to zero:
/// `exp(−t/tau) · (offset + amplitude · cos(2π f t + phase))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampedFit {
    pub frequency: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
    pub tau: f64,
}

/// Damped cosine fit, seeded by a scan over frequency and decay time with the
/// amplitudes solved linearly at each point.
pub fn fit_damped_cosine(t: &[f64], y: &[f64], f_min: f64, f_max: f64, decaying_offset: bool) -> Result<DampedFit> {
    if t.len() != y.len() || t.len() < 6 || !(f_max > f_min && f_min >= 0.0) {
        return Err(Error::Fit("invalid damped cosine fit inputs".into()));
    }
    let span = t.iter().copied().fold(f64::NEG_INFINITY, f64::max) - t.iter().copied().fold(f64::INFINITY, f64::min);
    let ts = span.max(1e-300);
    let n_scan = 1000;
    let mut best = (f64::INFINITY, f_min, 1.0, [0.0; 3]);
    for tau in [0.25, 0.5, 1.0, 2.0, 4.0, 16.0] {
        let envelope = |x: f64| (-x / (tau * ts)).exp();
        for i in 0..=n_scan {
            let f = f_min + (f_max - f_min) * i as f64 / n_scan as f64;
            if let Some((c, res)) = linear_damped(t, y, f, envelope, decaying_offset) {
                if res < best.0 {
                    best = (res, f, tau, c);
                }
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Fit("damped cosine scan failed".into()));
    }
    let (_, f0, tau0, [off, a, b]) = best;
    let fs = f0.max(1e-300);
    let p = levenberg_marquardt(
        |p| {
            t.iter()
                .zip(y)
                .map(|(&x, &v)| {
                    let e = (-x / (p[4] * ts)).exp();
                    let swing = p[1] * (TAU * p[0] * fs * x + p[2]).cos();
                    if decaying_offset {
                        e * (p[3] + swing) - v
                    } else {
                        p[3] + e * swing - v
                    }
                })
                .collect()
        },
        &[1.0, a.hypot(b), (-b).atan2(a), off, tau0],
        400,
    )?;
    if !(p[4] > 0.0 && p[0] > 0.0) {
        return Err(Error::Fit("damped cosine fit ran to a non-physical decay or frequency".into()));
    }
    let (mut amplitude, mut phase) = (p[1], p[2]);
    if amplitude < 0.0 {
        amplitude = -amplitude;
        phase += std::f64::consts::PI;
    }
    Ok(DampedFit {
        frequency: p[0] * fs,
        amplitude,
        phase: phase.rem_euclid(TAU),
        offset: p[3],
        tau: p[4] * ts,
    })
}

fn linear_damped(
    t: &[f64],
    y: &[f64],
    f: f64,
    envelope: impl Fn(f64) -> f64,
    decaying_offset: bool,
) -> Option<([f64; 3], f64)> {
    let a = DMatrix::from_fn(t.len(), 3, |i, j| {
        let e = envelope(t[i]);
        match j {
            0 if decaying_offset => e,
            0 => 1.0,
            1 => e * (TAU * f * t[i]).cos(),
            _ => e * (TAU * f * t[i]).sin(),
        }
    });
    let yv = DVector::from_column_slice(y);
    let c = (a.transpose() * &a).lu().solve(&(a.transpose() * &yv))?;
    let res = (&a * &c - yv).norm_squared();
    Some(([c[0], c[1], c[2]], res))
}

fn linear_sine(t: &[f64], y: &[f64], f: f64) -> Option<([f64; 3], f64)> {
    let m = t.len();
    let a = DMatrix::from_fn(m, 3, |i, j| match j {
        0 => 1.0,
        1 => (TAU * f * t[i]).cos(),
        _ => (TAU * f * t[i]).sin(),
    });
    let yv = DVector::from_column_slice(y);
    let c = (a.transpose() * &a).lu().solve(&(a.transpose() * &yv))?;
    let res = (&a * &c - yv).norm_squared();
    Some(([c[0], c[1], c[2]], res))
}

/// Fringe `y(φ) = offset + amplitude · cos(φ − phase)` by linear least squares.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fringe {
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
}

pub fn fit_fringe(phases: &[f64], y: &[f64]) -> Result<Fringe> {
    if phases.len() != y.len() || phases.len() < 3 {
        return Err(Error::Fit("fringe needs at least three phases".into()));
    }
    let m = phases.len();
    let a = DMatrix::from_fn(m, 3, |i, j| match j {
        0 => 1.0,
        1 => phases[i].cos(),
        _ => phases[i].sin(),
    });
    let yv = DVector::from_column_slice(y);
    let c = (a.transpose() * &a)
        .lu()
        .solve(&(a.transpose() * yv))
        .ok_or_else(|| Error::Fit("degenerate fringe phases".into()))?;
    Ok(Fringe {
        amplitude: c[1].hypot(c[2]),
        phase: c[2].atan2(c[1]),
        offset: c[0],
    })
}

/// Ordinary least-squares line `y = slope · x + intercept`.
pub fn linear_regression(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Least-squares slope of `y = slope · x` through the origin.
pub fn slope_through_origin(x: &[f64], y: &[f64]) -> f64 {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_recovers_parameters() {
        let t: Vec<f64> = (0..30).map(|i| i as f64 * 50e-9).collect();
        let y: Vec<f64> = t.iter().map(|x| 0.9 * (-x / 380e-9).exp() + 0.02).collect();
        let f = fit_exponential(&t, &y, true).unwrap();
        assert!((f.tau - 380e-9).abs() < 1e-12, "{f:?}");
        assert!((f.offset - 0.02).abs() < 1e-9);
        let y: Vec<f64> = t.iter().map(|x| 0.7 * (-x / 527e-9).exp()).collect();
        let f = fit_exponential(&t, &y, false).unwrap();
        assert!((f.tau - 527e-9).abs() < 1e-12);
    }

    #[test]
    fn sinusoid_recovers_frequency() {
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.5e-9).collect();
        let y: Vec<f64> = t.iter().map(|x| 0.5 + 0.45 * (TAU * 11.8e6 * x + 0.3).cos()).collect();
        let f = fit_sinusoid(&t, &y, 1e6, 50e6).unwrap();
        assert!((f.frequency - 11.8e6).abs() < 1.0, "{f:?}");
        assert!((f.amplitude - 0.45).abs() < 1e-9);
        assert!((f.phase - 0.3).abs() < 1e-7);
    }

    #[test]
    fn damped_cosine_recovers_decay() {
        let t: Vec<f64> = (0..150).map(|i| i as f64 * 2e-9).collect();
        let y: Vec<f64> = t
            .iter()
            .map(|x| (-x / 400e-9).exp() * (0.5 + 0.48 * (TAU * 11.8e6 * x + 0.2).cos()))
            .collect();
        let f = fit_damped_cosine(&t, &y, 2e6, 40e6, true).unwrap();
        assert!((f.frequency - 11.8e6).abs() < 1e2, "{f:?}");
        assert!((f.tau - 400e-9).abs() < 1e-12);
        let y: Vec<f64> = t
            .iter()
            .map(|x| 0.5 + 0.4 * (-x / 700e-9).exp() * (TAU * 3e6 * x - 1.0).cos())
            .collect();
        let f = fit_damped_cosine(&t, &y, 1e6, 20e6, false).unwrap();
        assert!((f.tau - 700e-9).abs() < 1e-12 && (f.offset - 0.5).abs() < 1e-12, "{f:?}");
    }

    #[test]
    fn fringe_linear() {
        let ph: Vec<f64> = (0..8).map(|i| i as f64 * TAU / 8.0).collect();
        let y: Vec<f64> = ph.iter().map(|p| 0.5 + 0.3 * (p - 1.0).cos()).collect();
        let f = fit_fringe(&ph, &y).unwrap();
        assert!((f.amplitude - 0.3).abs() < 1e-12);
        assert!((f.phase - 1.0).abs() < 1e-12);
    }

    #[test]
    fn origin_slope() {
        assert!((slope_through_origin(&[1.0, 2.0], &[2.0, 4.0]) - 2.0).abs() < 1e-15);
    }
}
