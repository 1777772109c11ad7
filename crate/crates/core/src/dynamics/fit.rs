use std::f64::consts::PI;

use super::DynamicsError;
use crate::numerics::{fit_nonlinear_least_squares, FitOptions, FitResult, ParamBounds};

/// Two-pulse echo intensity `amplitude * exp(-4 tau / t2)`.
pub fn two_pulse_decay_model(taus_s: &[f64], amplitude: f64, t2_s: f64) -> Vec<f64> {
    taus_s.iter().map(|&tau| amplitude * (-4.0 * tau / t2_s).exp()).collect()
}

/// Stimulated echo intensity `(a_fast exp(-T/t_fast) + a_slow exp(-T/t_slow))^2`.
pub fn stimulated_decay_model(waits_s: &[f64], a_fast: f64, t_fast_s: f64, a_slow: f64, t_slow_s: f64) -> Vec<f64> {
    waits_s.iter().map(|&t| stimulated_field(t, a_fast, t_fast_s, a_slow, t_slow_s).powi(2)).collect()
}

fn stimulated_field(t: f64, a_fast: f64, t_fast: f64, a_slow: f64, t_slow: f64) -> f64 {
    a_fast * (-t / t_fast).exp() + a_slow * (-t / t_slow).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPulseFit {
    pub amplitude: f64,
    pub t2_s: f64,
    /// `1 / (pi t2)`.
    pub homogeneous_linewidth_hz: f64,
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimulatedFit {
    pub a_fast: f64,
    pub t_fast_s: f64,
    pub a_slow: f64,
    pub t_slow_s: f64,
    /// Set when `t_slow / t_fast < 10`.
    pub ambiguous_separation: bool,
    /// Set when the data carry no resolvable slow component; `t_slow_s` is
    /// then the upper bound of the search range.
    pub slow_at_upper_bound: bool,
    pub fit: FitResult,
}

fn check_data(x: &[f64], y: &[f64], min_points: usize) -> Result<(), DynamicsError> {
    if x.len() != y.len() {
        return Err(DynamicsError::InvalidData(format!("{} delays but {} intensities", x.len(), y.len())));
    }
    if x.len() < min_points {
        return Err(DynamicsError::InvalidData(format!("need at least {min_points} points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(DynamicsError::InvalidData("non-finite delay or intensity".into()));
    }
    if x.iter().any(|&v| v < 0.0) {
        return Err(DynamicsError::InvalidData("delays must be >= 0".into()));
    }
    Ok(())
}

/// Least-squares fit of [`two_pulse_decay_model`]. The starting point comes
/// from a straight-line fit to the logarithm of the positive samples.
pub fn fit_two_pulse_decay(taus_s: &[f64], intensity: &[f64]) -> Result<TwoPulseFit, DynamicsError> {
    check_data(taus_s, intensity, 2)?;
    let (a0, t0) = log_linear_start(taus_s, intensity)?;
    let span = taus_s.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let bounds = [ParamBounds::positive(), ParamBounds::new(1e-6 * span, 1e6 * span)];
    let init = [a0, t0.clamp(bounds[1].lo, bounds[1].hi)];
    let fit = fit_nonlinear_least_squares(
        |p: &[f64], tau: f64| p[0] * (-4.0 * tau / p[1]).exp(),
        taus_s,
        intensity,
        &init,
        &bounds,
        &FitOptions::default(),
    )?;
    let (amplitude, t2_s) = (fit.params[0], fit.params[1]);
    Ok(TwoPulseFit { amplitude, t2_s, homogeneous_linewidth_hz: 1.0 / (PI * t2_s), fit })
}

fn log_linear_start(x: &[f64], y: &[f64]) -> Result<(f64, f64), DynamicsError> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(_, &v)| v > 0.0).map(|(&t, &v)| (t, v.ln())).collect();
    if pts.len() < 2 {
        return Err(DynamicsError::InvalidData("fewer than two positive intensities".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(DynamicsError::InvalidData("all delays are equal".into()));
    }
    let slope = sxy / sxx;
    let t2 = if slope < 0.0 { -4.0 / slope } else { 1e3 * x.iter().copied().fold(0.0, f64::max).max(1e-12) };
    Ok(((my - slope * mx).exp(), t2))
}

/// Slow components with less than this share of the field at `T = 0` are
/// treated as absent.
const NEGLIGIBLE_SLOW_SHARE: f64 = 1e-6;

/// Bounded fit of [`stimulated_decay_model`] on the logarithm of the
/// intensity, so that every decade of delay carries equal weight. Several
/// starting values of `t_fast` spread across the delay range are tried and the
/// best fit kept. Lifetimes are searched within `[T_min / 100, 100 T_max]`.
pub fn fit_stimulated_decay(waits_s: &[f64], intensity: &[f64]) -> Result<StimulatedFit, DynamicsError> {
    check_data(waits_s, intensity, 6)?;
    if intensity.iter().any(|&v| v <= 0.0) {
        return Err(DynamicsError::InvalidData("stimulated echo intensities must be > 0".into()));
    }
    let t_min = waits_s.iter().copied().filter(|&t| t > 0.0).fold(f64::INFINITY, f64::min);
    let t_max = waits_s.iter().copied().fold(0.0, f64::max);
    if !(t_min.is_finite() && t_max / t_min >= 100.0 * (1.0 - 1e-9)) {
        return Err(DynamicsError::InvalidData("delays must span at least two decades".into()));
    }
    let life = ParamBounds::new(t_min / 100.0, 100.0 * t_max);
    let bounds = [ParamBounds::positive(), life, ParamBounds::positive(), life];
    let log_y: Vec<f64> = intensity.iter().map(|v| v.ln()).collect();
    let field0 = intensity[argmin(waits_s)].sqrt();
    let model = |p: &[f64], t: f64| 2.0 * stimulated_field(t, p[0], p[1], p[2], p[3]).max(f64::MIN_POSITIVE).ln();

    let starts = 7;
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for k in 0..starts {
        let tf = t_min * (t_max / t_min).powf(k as f64 / (starts - 1) as f64 * 0.8);
        let init = [0.5 * field0, tf, 0.5 * field0, 10.0 * t_max];
        match fit_nonlinear_least_squares(model, waits_s, &log_y, &init, &bounds, &FitOptions::default()) {
            Ok(f) => {
                if best.as_ref().is_none_or(|b| f.residual_norm < b.residual_norm) {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let fit = match (best, last_err) {
        (Some(f), _) => f,
        (None, Some(e)) => return Err(e.into()),
        (None, None) => unreachable!("at least one start is tried"),
    };

    let (mut af, mut tf, mut a_s, mut ts) = (fit.params[0], fit.params[1], fit.params[2], fit.params[3]);
    // A single surviving component is reported as the fast one.
    let vanished_fast = af <= NEGLIGIBLE_SLOW_SHARE * (af + a_s);
    if tf > ts || vanished_fast {
        std::mem::swap(&mut af, &mut a_s);
        std::mem::swap(&mut tf, &mut ts);
    }
    let negligible = a_s <= NEGLIGIBLE_SLOW_SHARE * (af + a_s);
    let slow_at_upper_bound = negligible || ts >= life.hi * (1.0 - 1e-9);
    if slow_at_upper_bound {
        ts = life.hi;
    }
    Ok(StimulatedFit {
        a_fast: af,
        t_fast_s: tf,
        a_slow: a_s,
        t_slow_s: ts,
        ambiguous_separation: ts / tf < 10.0,
        slow_at_upper_bound,
        fit,
    })
}

fn argmin(v: &[f64]) -> usize {
    v.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i)
}
