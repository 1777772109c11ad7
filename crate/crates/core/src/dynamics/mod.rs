//! Optical-Bloch simulation of the inhomogeneous, depth-weighted ion ensemble
//! under pulse sequences, plus the echo-decay models and their fits.
//!
//! Times are in seconds and angular frequencies in rad/s unless a name says
//! otherwise. Pulse delays are measured between pulse centroids.

mod bloch;
mod fit;
mod sequence;

pub use bloch::{bloch_rhs, free_evolution, propagate_pulse, relax_population, rotate_for, BlochVector};
pub use fit::{
    fit_stimulated_decay, fit_two_pulse_decay, stimulated_decay_model, two_pulse_decay_model, StimulatedFit,
    TwoPulseFit,
};
pub use sequence::{
    detect_peaks, simulate_phase_cycled, simulate_sequence, stimulated_sweep, two_pulse_sweep, EchoTemplate, EchoTrace, GridSpec, GridWarning,
    LaserPhaseNoise, Peak, PhaseCycle, PulseSequence, RecordWindow, SweepPoint, PEAK_FLOOR,
};

pub(crate) use sequence::{simulate_with_shift, ShiftSchedule};

use thiserror::Error;

use crate::ensemble::EnsembleError;
use crate::numerics::NumericsError;

/// Rectangular optical pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    pub t_start_s: f64,
    pub duration_s: f64,
    /// Peak Rabi frequency at the film/substrate interface, rad/s.
    pub rabi_rad_s: f64,
    pub phase_rad: f64,
    /// Laser frequency offset during the pulse, rad/s.
    pub detuning_offset_rad_s: f64,
}

impl Pulse {
    pub fn new(t_start_s: f64, duration_s: f64, rabi_rad_s: f64, phase_rad: f64) -> Self {
        Self { t_start_s, duration_s, rabi_rad_s, phase_rad, detuning_offset_rad_s: 0.0 }
    }

    pub fn end_s(&self) -> f64 {
        self.t_start_s + self.duration_s
    }

    pub fn centroid_s(&self) -> f64 {
        self.t_start_s + 0.5 * self.duration_s
    }

    /// Pulse area at the interface, rad.
    pub fn area(&self) -> f64 {
        self.rabi_rad_s * self.duration_s
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid pulse sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid simulation grid: {0}")]
    InvalidGrid(String),
    #[error("invalid decay data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("fit failed: {0}")]
    Fit(#[from] NumericsError),
}
