use nalgebra::{DMatrix, DVector};

use super::NumericsError;

/// Box constraint on a single parameter. Either side may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    pub lo: f64,
    pub hi: f64,
}

impl ParamBounds {
    pub const FREE: Self = Self { lo: f64::NEG_INFINITY, hi: f64::INFINITY };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn positive() -> Self {
        Self { lo: 0.0, hi: f64::INFINITY }
    }

    fn clamp(&self, v: f64) -> f64 {
        v.max(self.lo).min(self.hi)
    }

    fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative change in the sum of squares below which an accepted step ends the fit.
    pub ftol: f64,
    /// Largest cosine between the residual vector and any free Jacobian
    /// column that still counts as stationary.
    pub gtol: f64,
    pub initial_damping: f64,
    /// Damping beyond which a fit stops shrinking its step.
    pub max_damping: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            ftol: 1e-10,
            gtol: 1e-4,
            initial_damping: 1e-3,
            max_damping: 1e16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// Euclidean norm of the residual vector, in data units.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Projected gradient measure: max cosine between the residuals and the
    /// Jacobian columns of parameters not pinned at a bound.
    pub gradient_norm: f64,
}

/// Bounded damped Gauss-Newton (Levenberg-Marquardt) fit of `model(params, x)`
/// to `(x, y)`. The Jacobian is taken by central differences. Damping starts at
/// `initial_damping`, is multiplied by 10 after a rejected step and divided by
/// 10 after an accepted one. Iterates are clamped to `bounds`.
pub fn fit_nonlinear_least_squares<M>(
    model: M,
    x: &[f64],
    y: &[f64],
    init: &[f64],
    bounds: &[ParamBounds],
    options: &FitOptions,
) -> Result<FitResult, NumericsError>
where
    M: Fn(&[f64], f64) -> f64,
{
    let n_params = init.len();
    if x.len() != y.len() {
        return Err(NumericsError::InvalidFitInput(format!(
            "x has {} points but y has {}",
            x.len(),
            y.len()
        )));
    }
    if n_params == 0 || x.len() < n_params {
        return Err(NumericsError::InvalidFitInput(format!(
            "{} points cannot determine {} parameters",
            x.len(),
            n_params
        )));
    }
    if bounds.len() != n_params {
        return Err(NumericsError::InvalidFitInput("one bound per parameter required".into()));
    }
    for (i, (p, b)) in init.iter().zip(bounds).enumerate() {
        if !p.is_finite() || !b.contains(*p) {
            return Err(NumericsError::InvalidFitInput(format!(
                "initial parameter {i} = {p} lies outside [{}, {}]",
                b.lo, b.hi
            )));
        }
    }
    if y.iter().chain(x).any(|v| !v.is_finite()) {
        return Err(NumericsError::InvalidFitInput("non-finite data".into()));
    }

    let typical: Vec<f64> = init.iter().map(|p| p.abs().max(1e-12)).collect();
    let residuals = |p: &[f64]| -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().zip(y).map(|(&xi, &yi)| yi - model(p, xi)))
    };
    let data_scale = y.iter().map(|v| v * v).sum::<f64>();
    let zero_floor = 1e-28 * data_scale.max(f64::MIN_POSITIVE);

    let mut params = init.to_vec();
    let mut r = residuals(&params);
    let mut ssr = r.norm_squared();
    if !ssr.is_finite() {
        return Err(NumericsError::InvalidFitInput("model is non-finite at the initial guess".into()));
    }
    let mut damping = options.initial_damping;
    let mut iterations = 0;
    let mut converged = false;
    let mut gradient_norm;

    loop {
        let jac = jacobian(&model, x, &params, &typical, bounds);
        let grad = jac.transpose() * &r;
        let free: Vec<usize> = (0..n_params)
            .filter(|&i| {
                let pinned_low = params[i] <= bounds[i].lo && grad[i] < 0.0;
                let pinned_high = params[i] >= bounds[i].hi && grad[i] > 0.0;
                !(pinned_low || pinned_high)
            })
            .collect();
        gradient_norm = gradient_cosine(&jac, &r, &grad, &free);

        if ssr <= zero_floor || free.is_empty() {
            converged = true;
            break;
        }
        if iterations >= options.max_iterations {
            break;
        }
        iterations += 1;

        let normal = jac.transpose() * &jac;
        if free.iter().all(|&i| normal[(i, i)] == 0.0) {
            return Err(NumericsError::DegenerateJacobian { damping });
        }

        // Inner loop: raise damping until a step lowers the sum of squares.
        let mut accepted = None;
        while damping <= options.max_damping {
            match damped_step(&normal, &grad, &free, damping) {
                Some(step) => {
                    let mut trial = params.clone();
                    for (k, &i) in free.iter().enumerate() {
                        trial[i] = bounds[i].clamp(params[i] + step[k]);
                    }
                    let r_trial = residuals(&trial);
                    let ssr_trial = r_trial.norm_squared();
                    if ssr_trial.is_finite() && ssr_trial < ssr {
                        accepted = Some((trial, r_trial, ssr_trial));
                        damping = (damping / 10.0).max(1e-12);
                        break;
                    }
                    if trial == params {
                        break;
                    }
                }
                None if damping >= options.max_damping => {
                    return Err(NumericsError::DegenerateJacobian { damping });
                }
                None => {}
            }
            damping *= 10.0;
        }

        match accepted {
            Some((trial, r_trial, ssr_trial)) => {
                let rel_change = (ssr - ssr_trial) / ssr;
                params = trial;
                r = r_trial;
                ssr = ssr_trial;
                if rel_change < options.ftol {
                    let jac = jacobian(&model, x, &params, &typical, bounds);
                    let grad = jac.transpose() * &r;
                    let free = free_set(&params, bounds, &grad);
                    gradient_norm = gradient_cosine(&jac, &r, &grad, &free);
                    converged = gradient_norm <= options.gtol || ssr <= zero_floor;
                    break;
                }
            }
            None => {
                // No descent possible at any damping: a stationary point up to rounding.
                converged = gradient_norm <= options.gtol || ssr <= zero_floor;
                break;
            }
        }
    }

    Ok(FitResult { params, residual_norm: ssr.sqrt(), converged, iterations, gradient_norm })
}

fn free_set(params: &[f64], bounds: &[ParamBounds], grad: &DVector<f64>) -> Vec<usize> {
    (0..params.len())
        .filter(|&i| {
            !((params[i] <= bounds[i].lo && grad[i] < 0.0) || (params[i] >= bounds[i].hi && grad[i] > 0.0))
        })
        .collect()
}

fn gradient_cosine(jac: &DMatrix<f64>, r: &DVector<f64>, grad: &DVector<f64>, free: &[usize]) -> f64 {
    let r_norm = r.norm();
    if r_norm == 0.0 {
        return 0.0;
    }
    free.iter()
        .map(|&i| {
            let col = jac.column(i).norm();
            if col == 0.0 {
                0.0
            } else {
                grad[i].abs() / (col * r_norm)
            }
        })
        .fold(0.0, f64::max)
}

fn damped_step(normal: &DMatrix<f64>, grad: &DVector<f64>, free: &[usize], damping: f64) -> Option<Vec<f64>> {
    let k = free.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for (ri, &i) in free.iter().enumerate() {
        b[ri] = grad[i];
        for (ci, &j) in free.iter().enumerate() {
            a[(ri, ci)] = normal[(i, j)];
        }
        let diag = normal[(i, i)];
        a[(ri, ri)] += damping * if diag > 0.0 { diag } else { 1.0 };
    }
    let step = a.cholesky()?.solve(&b);
    step.iter().all(|v| v.is_finite()).then(|| step.iter().copied().collect())
}

fn jacobian<M>(model: &M, x: &[f64], params: &[f64], typical: &[f64], bounds: &[ParamBounds]) -> DMatrix<f64>
where
    M: Fn(&[f64], f64) -> f64,
{
    let rel = f64::EPSILON.cbrt();
    let mut jac = DMatrix::<f64>::zeros(x.len(), params.len());
    let mut probe = params.to_vec();
    for j in 0..params.len() {
        let h = rel * params[j].abs().max(1e-3 * typical[j]);
        let up = (params[j] + h).min(bounds[j].hi);
        let down = (params[j] - h).max(bounds[j].lo);
        let width = up - down;
        if width <= 0.0 {
            continue;
        }
        for (i, &xi) in x.iter().enumerate() {
            probe[j] = up;
            let f_up = model(&probe, xi);
            probe[j] = down;
            let f_down = model(&probe, xi);
            jac[(i, j)] = (f_up - f_down) / width;
        }
        probe[j] = params[j];
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_model(p: &[f64], x: f64) -> f64 {
        p[0] * (-x / p[1]).exp()
    }

    #[test]
    fn recovers_noiseless_exponential() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.25).collect();
        let y: Vec<f64> = x.iter().map(|&xi| exp_model(&[3.0, 2.0], xi)).collect();
        let fit = fit_nonlinear_least_squares(
            exp_model,
            &x,
            &y,
            &[1.0, 1.0],
            &[ParamBounds::positive(), ParamBounds::new(1e-3, 1e3)],
            &FitOptions::default(),
        )
        .unwrap();
        assert!(fit.converged);
        assert!((fit.params[0] - 3.0).abs() < 1e-6, "{:?}", fit);
        assert!((fit.params[1] - 2.0).abs() < 1e-6, "{:?}", fit);
    }

    #[test]
    fn constant_data_pins_decay_at_upper_bound() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let y = vec![2.5; x.len()];
        let upper = 1e6;
        let fit = fit_nonlinear_least_squares(
            exp_model,
            &x,
            &y,
            &[1.0, 1.0],
            &[ParamBounds::positive(), ParamBounds::new(1e-3, upper)],
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(fit.params[1], upper);
        assert!((fit.params[0] - 2.5).abs() / 2.5 < 1e-4, "{:?}", fit);
    }

    #[test]
    fn rejects_underdetermined_and_out_of_bounds() {
        let e = fit_nonlinear_least_squares(exp_model, &[1.0], &[1.0], &[1.0, 1.0], &[ParamBounds::FREE; 2], &FitOptions::default());
        assert!(matches!(e, Err(NumericsError::InvalidFitInput(_))));
        let e = fit_nonlinear_least_squares(
            exp_model,
            &[0.0, 1.0, 2.0],
            &[1.0, 0.5, 0.2],
            &[-1.0, 1.0],
            &[ParamBounds::positive(), ParamBounds::FREE],
            &FitOptions::default(),
        );
        assert!(matches!(e, Err(NumericsError::InvalidFitInput(_))));
    }

    #[test]
    fn parameter_free_model_is_degenerate() {
        let e = fit_nonlinear_least_squares(
            |_p: &[f64], x: f64| x,
            &[0.0, 1.0, 2.0],
            &[1.0, 0.5, 0.2],
            &[1.0],
            &[ParamBounds::FREE],
            &FitOptions::default(),
        );
        assert!(matches!(e, Err(NumericsError::DegenerateJacobian { .. })));
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.25).collect();
        let y: Vec<f64> = x.iter().map(|&xi| exp_model(&[3.0, 2.0], xi)).collect();
        let opts = FitOptions { max_iterations: 1, ..FitOptions::default() };
        let fit = fit_nonlinear_least_squares(
            exp_model,
            &x,
            &y,
            &[1.0, 0.3],
            &[ParamBounds::positive(), ParamBounds::new(1e-3, 1e3)],
            &opts,
        )
        .unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
    }
}
