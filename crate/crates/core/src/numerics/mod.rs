//! Numerical kernel shared by the physics modules: bracketed root finding,
//! fixed-step RK4 integration and bounded Levenberg-Marquardt fitting.

mod lsq;
mod ode;
mod roots;

pub use lsq::{fit_nonlinear_least_squares, FitOptions, FitResult, ParamBounds};
pub use ode::{integrate_ode_fixed_step, integrate_ode_final, Trajectory};
pub use roots::{find_root_bracketed, find_root_with_cap, Bracket, Root, ROOT_MAX_ITERATIONS};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("objective has no sign change on [{lo}, {hi}] (f(lo) = {f_lo}, f(hi) = {f_hi})")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("root finder did not reach tolerance {tol} within {iterations} iterations")]
    MaxIterations { tol: f64, iterations: usize },
    #[error("invalid bracket [{lo}, {hi}]")]
    InvalidBracket { lo: f64, hi: f64 },
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("objective returned a non-finite value at x = {0}")]
    NonFiniteObjective(f64),
    #[error("ODE state became non-finite at t = {t} (component {component})")]
    NonFiniteState { t: f64, component: usize },
    #[error("step {dt} does not divide the interval [{t0}, {t1}]")]
    StepMismatch { t0: f64, t1: f64, dt: f64 },
    #[error("normal equations are singular beyond damping recovery (damping {damping:e})")]
    DegenerateJacobian { damping: f64 },
    #[error("invalid fit input: {0}")]
    InvalidFitInput(String),
}
