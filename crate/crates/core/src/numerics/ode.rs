use super::NumericsError;

/// Sampled solution of an initial-value problem, one state per step boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

fn step_count(t0: f64, t1: f64, dt: f64) -> Result<usize, NumericsError> {
    let span = t1 - t0;
    if !(dt > 0.0 && dt.is_finite() && span >= 0.0 && span.is_finite()) {
        return Err(NumericsError::StepMismatch { t0, t1, dt });
    }
    let n = (span / dt).round();
    if (n * dt - span).abs() > 1e-9 * span.max(dt) {
        return Err(NumericsError::StepMismatch { t0, t1, dt });
    }
    Ok(n as usize)
}

/// Classical fourth-order Runge-Kutta with a fixed step. `rhs(t, y, dydt)`
/// writes the derivative into `dydt`.
pub fn integrate_ode_fixed_step<F>(
    rhs: F,
    y0: &[f64],
    t_span: (f64, f64),
    dt: f64,
) -> Result<Trajectory, NumericsError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut times = vec![t_span.0];
    let mut states = vec![y0.to_vec()];
    integrate(rhs, y0, t_span, dt, |t, y| {
        times.push(t);
        states.push(y.to_vec());
    })?;
    Ok(Trajectory { times, states })
}

/// Same integrator as [`integrate_ode_fixed_step`] but keeps only the final state.
pub fn integrate_ode_final<F>(
    rhs: F,
    y0: &[f64],
    t_span: (f64, f64),
    dt: f64,
) -> Result<Vec<f64>, NumericsError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    integrate(rhs, y0, t_span, dt, |_, _| {})
}

fn integrate<F, S>(
    mut rhs: F,
    y0: &[f64],
    (t0, t1): (f64, f64),
    dt: f64,
    mut sink: S,
) -> Result<Vec<f64>, NumericsError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: FnMut(f64, &[f64]),
{
    let n = step_count(t0, t1, dt)?;
    let h = if n == 0 { 0.0 } else { (t1 - t0) / n as f64 };
    let dim = y0.len();
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) =
        (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];

    for i in 0..n {
        let t = t0 + i as f64 * h;
        rhs(t, &y, &mut k1);
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for j in 0..dim {
            tmp[j] = y[j] + h * k3[j];
        }
        rhs(t + h, &tmp, &mut k4);
        for j in 0..dim {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let t_next = if i + 1 == n { t1 } else { t0 + (i + 1) as f64 * h };
        if let Some(component) = y.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFiniteState { t: t_next, component });
        }
        sink(t_next, &y);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = -y[0];
    }

    #[test]
    fn zero_rhs_keeps_state() {
        let traj = integrate_ode_fixed_step(|_, _, dy: &mut [f64]| dy.fill(0.0), &[1.5, -2.0], (0.0, 1.0), 0.1)
            .unwrap();
        assert_eq!(traj.states.len(), 11);
        assert!(traj.states.iter().all(|s| s == &[1.5, -2.0]));
    }

    #[test]
    fn exponential_decay() {
        let y = integrate_ode_final(decay, &[1.0], (0.0, 1.0), 1e-3).unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn fourth_order_convergence() {
        let exact = (-1.0f64).exp();
        let e1 = (integrate_ode_final(decay, &[1.0], (0.0, 1.0), 0.1).unwrap()[0] - exact).abs();
        let e2 = (integrate_ode_final(decay, &[1.0], (0.0, 1.0), 0.05).unwrap()[0] - exact).abs();
        assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn rejects_non_dividing_step() {
        let err = integrate_ode_final(decay, &[1.0], (0.0, 1.0), 0.3);
        assert!(matches!(err, Err(NumericsError::StepMismatch { .. })));
    }

    #[test]
    fn reports_blow_up() {
        let err = integrate_ode_final(|_, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0], &[1.0], (0.0, 2.0), 0.01);
        assert!(matches!(err, Err(NumericsError::NonFiniteState { component: 0, .. })));
    }
}
