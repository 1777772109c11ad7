//! Electrode-addressed echo devices sharing one bus waveguide. Each device's
//! ions are Stark shifted into or out of resonance with a fixed laser.

use std::collections::HashSet;
use std::f64::consts::TAU;

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{simulate_with_shift, DynamicsError, EchoTrace, GridSpec, PulseSequence, ShiftSchedule};
use crate::ensemble::IonEnsembleSpec;
use crate::waveguide::ModeSolution;

/// Detunings within this many excitation bandwidths of zero count as resonant.
pub const RESONANCE_BANDWIDTHS: f64 = 3.0;
/// Relative cancellation below which a detuning counts as exactly resonant;
/// absorbs voltages written out to a finite number of digits.
pub const RESONANCE_SNAP: f64 = 1e-9;
/// Idle devices should sit at least this many homogeneous linewidths away.
pub const IDLE_MARGIN_LINEWIDTHS: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StarkError {
    #[error("device {device}: {reason}")]
    InvalidDevice { device: String, reason: String },
    #[error("duplicate device id {0}")]
    DuplicateDevice(String),
    #[error("device {device}: time {t_s:e} s is outside its voltage timeline [{start_s:e}, {end_s:e}] s")]
    OutOfTimeline { device: String, t_s: f64, start_s: f64, end_s: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Piecewise-constant voltage. Each step holds from its time up to the next
/// step; the timeline is defined on `[first time, last time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageTimeline {
    steps: Vec<(f64, f64)>,
}

impl VoltageTimeline {
    pub fn new(steps: Vec<(f64, f64)>) -> Result<Self, String> {
        if steps.is_empty() {
            return Err("timeline needs at least one step".into());
        }
        if steps.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err("timeline steps must be finite".into());
        }
        if steps.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err("timeline times must be strictly increasing".into());
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.steps[0].0, self.steps[self.steps.len() - 1].0)
    }

    pub fn contains(&self, t: f64) -> bool {
        let (a, b) = self.domain();
        t >= a && t <= b
    }

    /// Voltage at `t`, or `None` outside the domain.
    pub fn voltage(&self, t: f64) -> Option<f64> {
        if !self.contains(t) {
            return None;
        }
        self.steps.iter().rev().find(|s| s.0 <= t).map(|s| s.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarkDevice {
    pub id: String,
    pub coefficient_hz_per_v_cm: f64,
    pub electrode_gap_cm: f64,
    /// Ensemble detuning from the laser at 0 V, Hz.
    pub detuned_offset_hz: f64,
    pub timeline: VoltageTimeline,
}

impl StarkDevice {
    pub fn validate(&self) -> Result<(), StarkError> {
        let bad = |reason: String| Err(StarkError::InvalidDevice { device: self.id.clone(), reason });
        if self.id.is_empty() {
            return bad("device id must not be empty".into());
        }
        if !(self.electrode_gap_cm > 0.0 && self.electrode_gap_cm.is_finite()) {
            return bad(format!("electrode gap {} cm must be > 0", self.electrode_gap_cm));
        }
        if !self.coefficient_hz_per_v_cm.is_finite() || !self.detuned_offset_hz.is_finite() {
            return bad("Stark coefficient and offset must be finite".into());
        }
        Ok(())
    }

    /// Detuning from the laser produced by `volts`, Hz.
    pub fn detuning_at_voltage(&self, volts: f64) -> f64 {
        let shift = self.coefficient_hz_per_v_cm * volts / self.electrode_gap_cm;
        let d = self.detuned_offset_hz - shift;
        if d.abs() <= RESONANCE_SNAP * self.detuned_offset_hz.abs().max(shift.abs()) {
            0.0
        } else {
            d
        }
    }

    /// Voltage that brings the device to resonance.
    pub fn resonance_voltage(&self) -> f64 {
        self.detuned_offset_hz * self.electrode_gap_cm / self.coefficient_hz_per_v_cm
    }
}

/// Ensemble detuning of `device` from the laser at time `t_s`, Hz.
pub fn stark_detuning(device: &StarkDevice, t_s: f64) -> Result<f64, StarkError> {
    let (start_s, end_s) = device.timeline.domain();
    device
        .timeline
        .voltage(t_s)
        .map(|v| device.detuning_at_voltage(v))
        .ok_or(StarkError::OutOfTimeline { device: device.id.clone(), t_s, start_s, end_s })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChipLayout {
    /// Devices in the order light traverses them.
    pub devices: Vec<StarkDevice>,
    pub laser_offset_hz: f64,
    /// Pulses shared by every device on the bus.
    pub sequence: PulseSequence,
}

impl ChipLayout {
    pub fn validate(&self) -> Result<(), StarkError> {
        let mut seen = HashSet::new();
        for d in &self.devices {
            d.validate()?;
            if !seen.insert(d.id.as_str()) {
                return Err(StarkError::DuplicateDevice(d.id.clone()));
            }
        }
        Ok(())
    }

    /// Detuning from the laser of `device` at `t_s`, including the laser offset.
    fn laser_detuning(&self, device: &StarkDevice, t_s: f64) -> Result<f64, StarkError> {
        Ok(stark_detuning(device, t_s)? - self.laser_offset_hz)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseAssignment {
    pub pulse_index: usize,
    pub resonant_devices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginWarning {
    pub device_id: String,
    pub margin_hz: f64,
    pub required_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScheduleReport {
    pub pulses: Vec<PulseAssignment>,
    /// Pulses during which more than one device is resonant.
    pub overlaps: Vec<PulseAssignment>,
    pub margin_warnings: Vec<MarginWarning>,
    /// Devices whose timeline does not cover the pulse train.
    pub uncovered: Vec<String>,
}

impl ScheduleReport {
    pub fn is_clean(&self) -> bool {
        self.overlaps.is_empty() && self.margin_warnings.is_empty() && self.uncovered.is_empty()
    }
}

/// Detunings of `device` at all times in `[a, b]`: the value at `a` plus every
/// step that starts inside the interval.
fn detunings_over(layout: &ChipLayout, device: &StarkDevice, a: f64, b: f64) -> Option<Vec<f64>> {
    let mut out = vec![layout.laser_detuning(device, a).ok()?];
    for &(t, _) in device.timeline.steps() {
        if t > a && t <= b {
            out.push(layout.laser_detuning(device, t).ok()?);
        }
    }
    Some(out)
}

/// Lists the devices near resonance during each pulse and flags shared pulses
/// and idle devices parked too close to the laser.
pub fn validate_schedule(layout: &ChipLayout, excitation_bandwidth_hz: f64, homogeneous_linewidth_hz: f64) -> ScheduleReport {
    let window = RESONANCE_BANDWIDTHS * excitation_bandwidth_hz;
    let mut report = ScheduleReport::default();
    for (k, p) in layout.sequence.pulses.iter().enumerate() {
        let resonant_devices: Vec<String> = layout
            .devices
            .iter()
            .filter(|d| {
                detunings_over(layout, d, p.t_start_s, p.end_s()).is_some_and(|v| v.iter().any(|x| x.abs() <= window))
            })
            .map(|d| d.id.clone())
            .collect();
        let a = PulseAssignment { pulse_index: k, resonant_devices };
        if a.resonant_devices.len() > 1 {
            report.overlaps.push(a.clone());
        }
        report.pulses.push(a);
    }
    let required = IDLE_MARGIN_LINEWIDTHS * homogeneous_linewidth_hz;
    let first = layout.sequence.pulses.first().map_or(0.0, |p| p.t_start_s);
    let last = layout.sequence.pulses.last().map_or(0.0, |p| p.end_s());
    for d in &layout.devices {
        if !(d.timeline.contains(first) && d.timeline.contains(last)) {
            report.uncovered.push(d.id.clone());
        }
        let margin = d
            .timeline
            .steps()
            .iter()
            .map(|&(_, v)| d.detuning_at_voltage(v) - layout.laser_offset_hz)
            .filter(|x| *x != 0.0)
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min);
        if margin < required {
            report.margin_warnings.push(MarginWarning { device_id: d.id.clone(), margin_hz: margin, required_hz: required });
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceTrace {
    pub device_id: String,
    pub trace: EchoTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChipOutput {
    pub devices: Vec<DeviceTrace>,
    pub times_s: Vec<f64>,
    /// Sum of device intensities in device order.
    pub total_intensity: Vec<f64>,
    pub schedule: ScheduleReport,
}

fn shift_schedule(layout: &ChipLayout, device: &StarkDevice) -> Result<ShiftSchedule, StarkError> {
    let seq = &layout.sequence;
    let first = seq.pulses.first().map_or(seq.record_start_s, |p| p.t_start_s).min(seq.record_start_s);
    let last = seq.pulses.last().map_or(seq.record_end_s, |p| p.end_s()).max(seq.record_end_s);
    for t in [first, last] {
        stark_detuning(device, t)?;
    }
    let steps: Vec<(f64, f64)> = device
        .timeline
        .steps()
        .iter()
        .map(|&(t, v)| (t, TAU * (device.detuning_at_voltage(v) - layout.laser_offset_hz)))
        .collect();
    Ok(ShiftSchedule::from_steps(steps))
}

/// Simulates each device under the shared pulse train with its own Stark
/// detuning added to every ensemble class.
pub fn simulate_chip(
    layout: &ChipLayout,
    spec: &IonEnsembleSpec,
    mode: &ModeSolution,
    grid: &GridSpec,
    homogeneous_linewidth_hz: f64,
) -> Result<ChipOutput, StarkError> {
    layout.validate()?;
    let schedules = layout.devices.iter().map(|d| shift_schedule(layout, d)).collect::<Result<Vec<_>, _>>()?;
    let devices = layout
        .devices
        .par_iter()
        .zip(schedules.par_iter())
        .map(|(d, s)| {
            simulate_with_shift(spec, mode, &layout.sequence, grid, s)
                .map(|trace| DeviceTrace { device_id: d.id.clone(), trace })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let times_s = layout.sequence.sample_times();
    let mut total_intensity = vec![0.0; times_s.len()];
    for d in &devices {
        for (acc, v) in total_intensity.iter_mut().zip(&d.trace.intensity) {
            *acc += v;
        }
    }
    let schedule = validate_schedule(layout, layout.sequence.excitation_bandwidth_hz(), homogeneous_linewidth_hz);
    Ok(ChipOutput { devices, times_s, total_intensity, schedule })
}

/// Two devices that take turns on one bus, as in a two-device demonstration:
/// device `A` is tuned in for the first pi/2 - tau - pi pair and its echo,
/// then parked; device `B` takes the second pair.
pub fn two_device_demo(
    template: &crate::dynamics::EchoTemplate,
    tau_s: f64,
    coefficient_hz_per_v_cm: f64,
    electrode_gap_cm: f64,
    idle_offset_hz: f64,
) -> Result<ChipLayout, StarkError> {
    use crate::dynamics::Pulse;
    let d1 = template.pi_half_duration_s;
    let d2 = template.pi_duration_s;
    let rabi = template.rabi_rad_s;
    let guard = 2.0 * d2;
    let pair = |c1: f64| {
        [Pulse::new(c1 - 0.5 * d1, d1, rabi, 0.0), Pulse::new(c1 + tau_s - 0.5 * d2, d2, rabi, 0.0)]
    };
    let c_a = 0.5 * d1 + guard;
    let echo_a = c_a + 2.0 * tau_s;
    let switch = echo_a + guard;
    let c_b = switch + guard + 0.5 * d1;
    let echo_b = c_b + 2.0 * tau_s;
    let end = echo_b + guard;
    let mut pulses = pair(c_a).to_vec();
    pulses.extend(pair(c_b));
    let sequence = PulseSequence::spanning(pulses, (0.0, end), template.record_step_s)?;
    let device = |id: &str, on: (f64, f64)| -> Result<StarkDevice, StarkError> {
        let mut d = StarkDevice {
            id: id.into(),
            coefficient_hz_per_v_cm,
            electrode_gap_cm,
            detuned_offset_hz: idle_offset_hz,
            timeline: VoltageTimeline::new(vec![(0.0, 0.0)]).expect("single step"),
        };
        let v = d.resonance_voltage();
        let mut steps = Vec::new();
        if on.0 > 0.0 {
            steps.push((0.0, 0.0));
        }
        steps.push((on.0, v));
        if on.1 < end {
            steps.push((on.1, 0.0));
        }
        steps.push((end, if on.1 < end { 0.0 } else { v }));
        d.timeline = VoltageTimeline::new(steps).map_err(|reason| StarkError::InvalidDevice { device: id.into(), reason })?;
        Ok(d)
    };
    Ok(ChipLayout {
        devices: vec![device("A", (0.0, switch))?, device("B", (switch, end))?],
        laser_offset_hz: 0.0,
        sequence,
    })
}
