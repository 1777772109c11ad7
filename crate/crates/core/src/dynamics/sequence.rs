use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::bloch::{free_evolution, relax_population, rotate_for, BlochVector};
use super::{DynamicsError, Pulse};
use crate::ensemble::{depth_bins, intensity_decay_depth_nm, rabi_depth_scale, IonEnsembleSpec};
use crate::waveguide::ModeSolution;

/// Peaks below this fraction of the trace maximum are ignored.
pub const PEAK_FLOOR: f64 = 0.01;
/// Default detuning span in units of the pulse Rabi bandwidth.
pub const DEFAULT_SPAN_FACTOR: f64 = 20.0;
const MIN_DETUNING_CLASSES: usize = 64;

/// Time-ordered pulses plus the sampling of the emitted intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pub pulses: Vec<Pulse>,
    pub record_start_s: f64,
    pub record_end_s: f64,
    pub record_step_s: f64,
    /// Number of write pulse pairs represented by this sequence (grating sequences).
    pub grating_pairs: u32,
    /// Field multiplier applied to the emission; stands in for the contrast
    /// built up by repeated grating pairs.
    pub emission_scale: f64,
}

impl PulseSequence {
    /// Sequence whose record window starts after the last pulse has ended.
    pub fn new(pulses: Vec<Pulse>, record_window: (f64, f64), record_step_s: f64) -> Result<Self, DynamicsError> {
        let seq = Self::spanning(pulses, record_window, record_step_s)?;
        let last_end = seq.pulses.last().map_or(f64::NEG_INFINITY, Pulse::end_s);
        if seq.record_start_s < last_end {
            return Err(DynamicsError::InvalidSequence(format!(
                "record window starts at {:e} s, before the last pulse ends at {last_end:e} s",
                seq.record_start_s
            )));
        }
        Ok(seq)
    }

    /// Sequence whose record window may interleave with the pulses; samples
    /// falling inside a pulse are not recorded.
    pub fn spanning(pulses: Vec<Pulse>, record_window: (f64, f64), record_step_s: f64) -> Result<Self, DynamicsError> {
        let bad = |m: String| Err(DynamicsError::InvalidSequence(m));
        if pulses.is_empty() {
            return bad("at least one pulse is required".into());
        }
        for (i, p) in pulses.iter().enumerate() {
            if !(p.duration_s > 0.0 && p.duration_s.is_finite()) {
                return bad(format!("pulse {i} duration {:e} s must be > 0", p.duration_s));
            }
            if ![p.t_start_s, p.rabi_rad_s, p.phase_rad, p.detuning_offset_rad_s].iter().all(|v| v.is_finite()) {
                return bad(format!("pulse {i} has non-finite parameters"));
            }
            if p.rabi_rad_s < 0.0 {
                return bad(format!("pulse {i} Rabi frequency must be >= 0"));
            }
        }
        for (i, w) in pulses.windows(2).enumerate() {
            if w[1].t_start_s < w[0].end_s() {
                return bad(format!("pulses {i} and {} overlap or are out of order", i + 1));
            }
        }
        let (start, end) = record_window;
        if !(start.is_finite() && end.is_finite() && end >= start) {
            return bad(format!("record window [{start:e}, {end:e}] is empty"));
        }
        if !(record_step_s > 0.0 && record_step_s.is_finite()) {
            return bad(format!("record step {record_step_s:e} s must be > 0"));
        }
        Ok(Self {
            pulses,
            record_start_s: start,
            record_end_s: end,
            record_step_s,
            grating_pairs: 1,
            emission_scale: 1.0,
        })
    }

    pub fn with_grating(mut self, pairs: u32, contrast: f64) -> Result<Self, DynamicsError> {
        if pairs == 0 {
            return Err(DynamicsError::InvalidSequence("grating_pairs must be >= 1".into()));
        }
        if !(contrast > 0.0 && contrast.is_finite()) {
            return Err(DynamicsError::InvalidSequence(format!("grating contrast {contrast} must be > 0")));
        }
        self.grating_pairs = pairs;
        self.emission_scale = contrast;
        Ok(self)
    }

    /// Largest Rabi frequency in the sequence, Hz.
    pub fn excitation_bandwidth_hz(&self) -> f64 {
        self.pulses.iter().map(|p| p.rabi_rad_s).fold(0.0, f64::max) / TAU
    }

    /// Recorded sample times, skipping samples strictly inside a pulse.
    pub fn sample_times(&self) -> Vec<f64> {
        let n = ((self.record_end_s - self.record_start_s) / self.record_step_s + 1e-9).floor() as usize;
        (0..=n)
            .map(|k| self.record_start_s + k as f64 * self.record_step_s)
            .filter(|&t| !self.pulses.iter().any(|p| t > p.t_start_s && t < p.end_s()))
            .collect()
    }

    /// Time over which ensemble phases accumulate before the end of the
    /// record: pulse durations plus free intervals, each free interval capped
    /// at five coherence times.
    pub fn phase_memory_s(&self, t2_s: f64) -> f64 {
        let cap = 5.0 * t2_s;
        let mut total = 0.0;
        let mut cursor = self.pulses[0].t_start_s;
        for p in &self.pulses {
            if p.t_start_s >= self.record_end_s {
                break;
            }
            total += (p.t_start_s - cursor).min(cap);
            total += p.duration_s;
            cursor = p.end_s();
        }
        total + (self.record_end_s - cursor).max(0.0).min(cap)
    }
}

/// Random laser phase with Wiener statistics, for pulses longer than the
/// laser coherence time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserPhaseNoise {
    pub coherence_time_s: f64,
    pub seed: u64,
}

/// Discretization of the ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n_detuning: usize,
    pub n_depth: usize,
    /// Detuning span of the simulated spectral slice, Hz. Defaults to
    /// [`DEFAULT_SPAN_FACTOR`] times the pulse Rabi bandwidth.
    pub span_hz: Option<f64>,
    /// Width of the laser-referenced detection band, Hz. Emission from an
    /// ensemble whose common shift lies outside the band is not detected;
    /// the response rolls off towards the band edge. Defaults to the span.
    pub detection_band_hz: Option<f64>,
    pub phase_noise: Option<LaserPhaseNoise>,
}

impl GridSpec {
    pub fn new(n_detuning: usize, n_depth: usize) -> Self {
        Self { n_detuning, n_depth, span_hz: None, detection_band_hz: None, phase_noise: None }
    }

    pub fn span_for(&self, seq: &PulseSequence) -> f64 {
        self.span_hz.unwrap_or(DEFAULT_SPAN_FACTOR * seq.excitation_bandwidth_hz())
    }

    /// Smallest detuning count whose spectral revival period exceeds the
    /// phase memory of `seq` by 10 %.
    pub fn alias_free_detuning_count(&self, seq: &PulseSequence, t2_s: f64) -> usize {
        (1.1 * self.span_for(seq) * seq.phase_memory_s(t2_s)).ceil() as usize
    }

    /// Copy with `n_detuning` raised to the alias-free count when needed.
    pub fn resolved_for(&self, seq: &PulseSequence, t2_s: f64) -> Self {
        Self { n_detuning: self.n_detuning.max(self.alias_free_detuning_count(seq, t2_s)), ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridWarning {
    FewDetuningClasses { n_detuning: usize },
    NarrowSpan { span_hz: f64, excitation_bandwidth_hz: f64 },
    /// Spectral sampling revives signals after `revival_period_s`, shorter than the phase memory.
    Aliasing { revival_period_s: f64, phase_memory_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub time_s: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoTrace {
    pub times_s: Vec<f64>,
    pub intensity: Vec<f64>,
    pub peaks: Vec<Peak>,
    pub warnings: Vec<GridWarning>,
}

impl EchoTrace {
    pub fn max_intensity(&self) -> f64 {
        self.intensity.iter().copied().fold(0.0, f64::max)
    }

    /// Largest detected peak.
    pub fn dominant_peak(&self) -> Option<Peak> {
        self.peaks.iter().copied().max_by(|a, b| a.intensity.total_cmp(&b.intensity))
    }

    /// Largest sample within `[t0, t1]`.
    pub fn max_in(&self, t0: f64, t1: f64) -> Option<Peak> {
        self.times_s
            .iter()
            .zip(&self.intensity)
            .filter(|(&t, _)| t >= t0 && t <= t1)
            .map(|(&time_s, &intensity)| Peak { time_s, intensity })
            .max_by(|a, b| a.intensity.total_cmp(&b.intensity))
    }
}

/// Piecewise-constant extra detuning (rad/s) common to every ensemble class.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ShiftSchedule {
    /// (start time, shift) with strictly increasing start times; the first
    /// entry extends to -inf and the last to +inf. Empty means zero shift.
    steps: Vec<(f64, f64)>,
}

impl ShiftSchedule {
    pub(crate) fn zero() -> Self {
        Self { steps: Vec::new() }
    }

    /// Adjacent steps with equal shifts are merged.
    pub(crate) fn from_steps(steps: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (t, v) in steps {
            match merged.last() {
                Some(&(_, last)) if last == v => {}
                _ => merged.push((t, v)),
            }
        }
        Self { steps: merged }
    }

    pub(crate) fn value(&self, t: f64) -> f64 {
        match self.steps.iter().rev().find(|(start, _)| *start <= t) {
            Some(&(_, v)) => v,
            None => self.steps.first().map_or(0.0, |s| s.1),
        }
    }

    fn breakpoints_in(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().skip(1).map(|s| s.0).filter(move |&t| t > a && t < b)
    }

    /// Integral of the shift over `[a, b]`, rad.
    fn phase(&self, a: f64, b: f64) -> f64 {
        let mut cuts = vec![a];
        cuts.extend(self.breakpoints_in(a, b));
        cuts.push(b);
        cuts.windows(2).map(|w| (w[1] - w[0]) * self.value(0.5 * (w[0] + w[1]))).sum()
    }
}

/// One (detuning, depth) class of the ensemble.
#[derive(Debug, Clone, Copy)]
struct Class {
    delta: f64,
    rabi_scale: f64,
    /// Population weight times the emission (reciprocity) factor.
    emission_weight: f64,
}

fn build_classes(spec: &IonEnsembleSpec, intensity_depth_nm: f64, grid: &GridSpec, span_hz: f64) -> Vec<Class> {
    let n = grid.n_detuning;
    let freqs: Vec<f64> = (0..n).map(|j| -0.5 * span_hz + (j as f64 + 0.5) * span_hz / n as f64).collect();
    let densities: Vec<f64> =
        freqs.iter().map(|&nu| spec.lineshape_density(nu) * edge_taper(nu / (0.5 * span_hz))).collect();
    let norm: f64 = densities.iter().sum();
    let depths = depth_bins(intensity_depth_nm, grid.n_depth);
    let mut classes = Vec::with_capacity(n * depths.len());
    for (nu, g) in freqs.iter().zip(&densities) {
        for bin in &depths {
            let scale = rabi_depth_scale(bin.depth_nm, intensity_depth_nm);
            classes.push(Class { delta: TAU * nu, rabi_scale: scale, emission_weight: g / norm * bin.weight * scale });
        }
    }
    classes
}

/// Fraction of the half-span, measured from the centre, left untapered.
const TAPER_START: f64 = 0.7;

/// Raised-cosine roll-off towards `|x| = 1`, zero beyond. Used for the class
/// weights across the span and for the detection band response.
fn edge_taper(x: f64) -> f64 {
    let a = x.abs();
    if a <= TAPER_START {
        1.0
    } else {
        let r = (a - TAPER_START) / (1.0 - TAPER_START);
        if r >= 1.0 {
            return 0.0;
        }
        0.5 * (1.0 + (std::f64::consts::PI * r).cos())
    }
}

/// Per-pulse pieces of (start, length, extra laser phase).
fn laser_phase_pieces(seq: &PulseSequence, noise: Option<LaserPhaseNoise>) -> Vec<Vec<(f64, f64, f64)>> {
    let Some(noise) = noise else {
        return seq.pulses.iter().map(|p| vec![(p.t_start_s, p.duration_s, 0.0)]).collect();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let tc = noise.coherence_time_s;
    let piece = tc / 8.0;
    let mut phase = 0.0;
    let mut cursor = seq.pulses[0].t_start_s;
    seq.pulses
        .iter()
        .map(|p| {
            phase += (2.0 * (p.t_start_s - cursor) / tc).sqrt() * unit.sample(&mut rng);
            let count = (p.duration_s / piece).ceil().max(1.0) as usize;
            let len = p.duration_s / count as f64;
            let pieces = (0..count)
                .map(|k| {
                    if k > 0 {
                        phase += (2.0 * len / tc).sqrt() * unit.sample(&mut rng);
                    }
                    (p.t_start_s + k as f64 * len, len, phase)
                })
                .collect();
            cursor = p.end_s();
            pieces
        })
        .collect()
}

fn grid_warnings(seq: &PulseSequence, grid: &GridSpec, span_hz: f64, t2_s: f64) -> Vec<GridWarning> {
    let mut warnings = Vec::new();
    if grid.n_detuning < MIN_DETUNING_CLASSES {
        warnings.push(GridWarning::FewDetuningClasses { n_detuning: grid.n_detuning });
    }
    let bw = seq.excitation_bandwidth_hz();
    if span_hz < DEFAULT_SPAN_FACTOR * bw * (1.0 - 1e-12) {
        warnings.push(GridWarning::NarrowSpan { span_hz, excitation_bandwidth_hz: bw });
    }
    let revival = grid.n_detuning as f64 / span_hz;
    let memory = seq.phase_memory_s(t2_s);
    if revival < memory {
        warnings.push(GridWarning::Aliasing { revival_period_s: revival, phase_memory_s: memory });
    }
    warnings
}

/// Propagates every (detuning, depth) class through `seq` and records the
/// coherent emission `|sum weight * (u + i v) * depth factor|^2`.
pub fn simulate_sequence(
    spec: &IonEnsembleSpec,
    mode: &ModeSolution,
    seq: &PulseSequence,
    grid: &GridSpec,
) -> Result<EchoTrace, DynamicsError> {
    simulate_with_shift(spec, mode, seq, grid, &ShiftSchedule::zero())
}

pub(crate) fn simulate_with_shift(
    spec: &IonEnsembleSpec,
    mode: &ModeSolution,
    seq: &PulseSequence,
    grid: &GridSpec,
    shift: &ShiftSchedule,
) -> Result<EchoTrace, DynamicsError> {
    let (times_s, field, warnings) = emitted_field(spec, mode, seq, grid, shift)?;
    let intensity: Vec<f64> = field.iter().map(|e| e.norm_sqr()).collect();
    let peaks = detect_peaks(&times_s, &intensity, seq);
    Ok(EchoTrace { times_s, intensity, peaks, warnings })
}

/// Pulse phase offsets for each step of a phase cycle; the emitted fields of
/// all steps are averaged before squaring.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCycle(pub Vec<Vec<f64>>);

impl PhaseCycle {
    /// Inverts the pi pulse on the second step. The echo phase `2 phi2 - phi1`
    /// is unchanged while the transient left by the pi pulse changes sign.
    pub fn two_pulse() -> Self {
        Self(vec![vec![0.0, 0.0], vec![0.0, PI]])
    }

    /// Inverts the first and third pulses on the second step, keeping the
    /// stimulated echo phase `phi1 - phi2 + phi3` and cancelling the
    /// transient of the read pulse.
    pub fn stimulated() -> Self {
        Self(vec![vec![0.0, 0.0, 0.0], vec![PI, 0.0, PI]])
    }
}

/// [`simulate_sequence`] averaged over the steps of `cycle`.
pub fn simulate_phase_cycled(
    spec: &IonEnsembleSpec,
    mode: &ModeSolution,
    seq: &PulseSequence,
    grid: &GridSpec,
    cycle: &PhaseCycle,
) -> Result<EchoTrace, DynamicsError> {
    if cycle.0.is_empty() || cycle.0.iter().any(|step| step.len() != seq.pulses.len()) {
        return Err(DynamicsError::InvalidSequence(format!(
            "phase cycle needs one offset per pulse ({}) in every step",
            seq.pulses.len()
        )));
    }
    let mut total: Option<(Vec<f64>, Vec<Complex64>, Vec<GridWarning>)> = None;
    for step in &cycle.0 {
        let mut shifted = seq.clone();
        for (p, dphi) in shifted.pulses.iter_mut().zip(step) {
            p.phase_rad += dphi;
        }
        let (times, field, warnings) = emitted_field(spec, mode, &shifted, grid, &ShiftSchedule::zero())?;
        match &mut total {
            None => total = Some((times, field, warnings)),
            Some((_, acc, _)) => acc.iter_mut().zip(&field).for_each(|(a, b)| *a += b),
        }
    }
    let (times_s, field, warnings) = total.expect("non-empty cycle");
    let n = cycle.0.len() as f64;
    let intensity: Vec<f64> = field.iter().map(|e| (e / n).norm_sqr()).collect();
    let peaks = detect_peaks(&times_s, &intensity, seq);
    Ok(EchoTrace { times_s, intensity, peaks, warnings })
}

/// Complex emitted field at every recorded sample.
#[allow(clippy::type_complexity)]
fn emitted_field(
    spec: &IonEnsembleSpec,
    mode: &ModeSolution,
    seq: &PulseSequence,
    grid: &GridSpec,
    shift: &ShiftSchedule,
) -> Result<(Vec<f64>, Vec<Complex64>, Vec<GridWarning>), DynamicsError> {
    spec.validate()?;
    if grid.n_detuning == 0 || grid.n_depth == 0 {
        return Err(DynamicsError::InvalidGrid("n_detuning and n_depth must be >= 1".into()));
    }
    let span_hz = grid.span_for(seq);
    if !(span_hz > 0.0 && span_hz.is_finite()) {
        return Err(DynamicsError::InvalidGrid(format!("detuning span {span_hz:e} Hz must be > 0")));
    }
    let band_hz = grid.detection_band_hz.unwrap_or(span_hz);
    if !(band_hz > 0.0) {
        return Err(DynamicsError::InvalidGrid("detection band must be > 0".into()));
    }
    if let Some(noise) = grid.phase_noise {
        if !(noise.coherence_time_s > 0.0 && noise.coherence_time_s.is_finite()) {
            return Err(DynamicsError::InvalidGrid("laser coherence time must be > 0".into()));
        }
    }

    let d_i = intensity_decay_depth_nm(mode);
    let classes = build_classes(spec, d_i, grid, span_hz);
    let pieces = laser_phase_pieces(seq, grid.phase_noise);
    let half_band = 0.5 * TAU * band_hz;
    let samples = seq.sample_times();
    let mut field = vec![Complex64::new(0.0, 0.0); samples.len()];
    let mut states = vec![BlochVector::GROUND; classes.len()];

    let free = |states: &mut Vec<BlochVector>, a: f64, b: f64| {
        if b <= a {
            return;
        }
        let mut cuts = vec![a];
        cuts.extend(shift.breakpoints_in(a, b));
        cuts.push(b);
        let survival = spec.spin_survival(b - a);
        states.par_iter_mut().zip(classes.par_iter()).for_each(|(s, c)| {
            for w in cuts.windows(2) {
                let extra = shift.value(0.5 * (w[0] + w[1]));
                *s = free_evolution(*s, w[1] - w[0], c.delta + extra, spec.t2_s);
            }
            *s = relax_population(*s, survival);
        });
    };

    let mut cursor: Option<f64> = None;
    for (k, pulse) in seq.pulses.iter().enumerate() {
        if let Some(end) = cursor {
            free(&mut states, end, pulse.t_start_s);
        }
        let mut cuts: Vec<(f64, f64, f64)> = Vec::new();
        for &(start, len, laser_phase) in &pieces[k] {
            let mut edges = vec![start];
            edges.extend(shift.breakpoints_in(start, start + len));
            edges.push(start + len);
            for w in edges.windows(2) {
                cuts.push((w[1] - w[0], shift.value(0.5 * (w[0] + w[1])), laser_phase));
            }
        }
        states.par_iter_mut().zip(classes.par_iter()).for_each(|(s, c)| {
            for &(len, extra, laser_phase) in &cuts {
                *s = rotate_for(
                    *s,
                    pulse.rabi_rad_s * c.rabi_scale,
                    pulse.phase_rad + laser_phase,
                    c.delta + extra - pulse.detuning_offset_rad_s,
                    len,
                );
            }
        });
        let end = pulse.end_s();
        cursor = Some(end);

        let next_start = seq.pulses.get(k + 1).map_or(f64::INFINITY, |p| p.t_start_s);
        let idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i] >= end && samples[i] <= next_start).collect();
        let values: Vec<Complex64> = idx
            .par_iter()
            .map(|&i| {
                let t = samples[i];
                let dt = t - end;
                let response = edge_taper(shift.value(t) / half_band);
                if response == 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                let mut sum = Complex64::new(0.0, 0.0);
                for (s, c) in states.iter().zip(&classes) {
                    let (sn, cs) = (c.delta * dt).sin_cos();
                    sum += s.coherence() * Complex64::new(cs, sn) * c.emission_weight;
                }
                let decay = (-dt / spec.t2_s).exp() * spec.spin_survival(dt).sqrt() * seq.emission_scale * response;
                let (sn, cs) = shift.phase(end, t).sin_cos();
                sum * Complex64::new(cs, sn) * decay
            })
            .collect();
        for (&i, v) in idx.iter().zip(values) {
            field[i] = v;
        }
    }
    let warnings = grid_warnings(seq, grid, span_hz, spec.t2_s);
    Ok((samples, field, warnings))
}

/// Interior local maxima above [`PEAK_FLOOR`] of the gated trace maximum.
/// Detection is gated off for one pulse duration after each pulse, where the
/// free-induction transient of the pulse dominates, and a pulse between two
/// samples breaks contiguity.
pub fn detect_peaks(times: &[f64], intensity: &[f64], seq: &PulseSequence) -> Vec<Peak> {
    let gated = |t: f64| seq.pulses.iter().any(|p| t >= p.t_start_s && t < p.end_s() + p.duration_s);
    let max = times.iter().zip(intensity).filter(|(&t, _)| !gated(t)).map(|(_, &v)| v).fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let contiguous = |i: usize, j: usize| {
        let (a, b) = (times[i], times[j]);
        !seq.pulses.iter().any(|p| p.t_start_s < b && p.end_s() > a)
    };
    (1..intensity.len().saturating_sub(1))
        .filter(|&i| {
            !gated(times[i])
                && intensity[i] >= PEAK_FLOOR * max
                && intensity[i] > intensity[i - 1]
                && intensity[i] >= intensity[i + 1]
                && contiguous(i - 1, i)
                && contiguous(i, i + 1)
        })
        .map(|i| Peak { time_s: times[i], intensity: intensity[i] })
        .collect()
}

/// Where the recorded samples go relative to the sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecordWindow {
    /// From the end of the last pulse for `extent_s`.
    AfterLastPulse { extent_s: f64 },
    /// `expected echo time +- half_width_s`, never starting before the last pulse ends.
    AroundEcho { half_width_s: f64 },
}

/// Pulse shapes shared by the echo sequences: a pi/2 pulse and a pi pulse of
/// equal Rabi frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoTemplate {
    pub pi_half_duration_s: f64,
    pub pi_duration_s: f64,
    pub rabi_rad_s: f64,
    pub record_step_s: f64,
}

impl EchoTemplate {
    /// Rabi frequency chosen so the first pulse has area pi/2 at the interface.
    pub fn from_durations(pi_half_duration_s: f64, pi_duration_s: f64, record_step_s: f64) -> Self {
        Self { pi_half_duration_s, pi_duration_s, rabi_rad_s: FRAC_PI_2 / pi_half_duration_s, record_step_s }
    }

    fn pulse_at_centroid(&self, centroid: f64, duration: f64) -> Pulse {
        Pulse::new(centroid - 0.5 * duration, duration, self.rabi_rad_s, 0.0)
    }

    fn first_centroid(&self) -> f64 {
        0.5 * self.pi_half_duration_s
    }

    /// Echo time of the pi/2 - tau - pi sequence, `c1 + 2 tau` with `c1` the first centroid.
    pub fn two_pulse_echo_time(&self, tau_s: f64) -> f64 {
        self.first_centroid() + 2.0 * tau_s
    }

    /// Stimulated echo time, one pulse gap after the third pulse centroid.
    pub fn stimulated_echo_time(&self, tau_s: f64, wait_s: f64) -> f64 {
        self.first_centroid() + 2.0 * tau_s + wait_s
    }

    fn window(&self, pulses: &[Pulse], echo: f64, window: RecordWindow) -> (f64, f64) {
        let last_end = pulses.last().map_or(0.0, Pulse::end_s);
        match window {
            RecordWindow::AfterLastPulse { extent_s } => (last_end, last_end + extent_s),
            RecordWindow::AroundEcho { half_width_s } => {
                ((echo - half_width_s).max(last_end), echo + half_width_s)
            }
        }
    }

    /// pi/2 at t = 0 followed by pi a centroid delay `tau_s` later.
    pub fn two_pulse(&self, tau_s: f64, window: RecordWindow) -> Result<PulseSequence, DynamicsError> {
        let c1 = self.first_centroid();
        let pulses = vec![
            self.pulse_at_centroid(c1, self.pi_half_duration_s),
            self.pulse_at_centroid(c1 + tau_s, self.pi_duration_s),
        ];
        let w = self.window(&pulses, self.two_pulse_echo_time(tau_s), window);
        PulseSequence::new(pulses, w, self.record_step_s)
    }

    /// pi/2 - tau - pi/2 - wait - pi/2; `wait_s` separates the second and third centroids.
    pub fn stimulated(&self, tau_s: f64, wait_s: f64, window: RecordWindow) -> Result<PulseSequence, DynamicsError> {
        let c1 = self.first_centroid();
        let d = self.pi_half_duration_s;
        let pulses = vec![
            self.pulse_at_centroid(c1, d),
            self.pulse_at_centroid(c1 + tau_s, d),
            self.pulse_at_centroid(c1 + tau_s + wait_s, d),
        ];
        let w = self.window(&pulses, self.stimulated_echo_time(tau_s, wait_s), window);
        PulseSequence::new(pulses, w, self.record_step_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub delay_s: f64,
    pub peak_time_s: f64,
    pub peak_intensity: f64,
}

fn peak_near(trace: &EchoTrace, echo: f64, half_width: f64) -> Result<Peak, DynamicsError> {
    trace
        .max_in(echo - half_width, echo + half_width)
        .ok_or_else(|| DynamicsError::InvalidSequence(format!("no samples recorded near the echo at {echo:e} s")))
}

/// Peak two-pulse echo intensity for each delay, phase cycled with
/// [`PhaseCycle::two_pulse`]. The grid is widened to the alias-free detuning
/// count of the longest sequence.
pub fn two_pulse_sweep(
    spec: &IonEnsembleSpec,
    mode: &ModeSolution,
    template: &EchoTemplate,
    taus_s: &[f64],
    grid: &GridSpec,
    half_width_s: f64,
) -> Result<Vec<SweepPoint>, DynamicsError> {
    let window = RecordWindow::AroundEcho { half_width_s };
    let seqs = taus_s.iter().map(|&tau| template.two_pulse(tau, window)).collect::<Result<Vec<_>, _>>()?;
    let grid = seqs.iter().fold(*grid, |g, s| g.resolved_for(s, spec.t2_s));
    taus_s
        .iter()
        .zip(&seqs)
        .map(|(&tau, seq)| {
            let trace = simulate_phase_cycled(spec, mode, seq, &grid, &PhaseCycle::two_pulse())?;
            let p = peak_near(&trace, template.two_pulse_echo_time(tau), half_width_s)?;
            Ok(SweepPoint { delay_s: tau, peak_time_s: p.time_s, peak_intensity: p.intensity })
        })
        .collect()
}

/// Peak stimulated-echo intensity for each storage delay, phase cycled with
/// [`PhaseCycle::stimulated`].
#[allow(clippy::too_many_arguments)]
pub fn stimulated_sweep(
    spec: &IonEnsembleSpec,
    mode: &ModeSolution,
    template: &EchoTemplate,
    tau_s: f64,
    waits_s: &[f64],
    grid: &GridSpec,
    half_width_s: f64,
    grating: (u32, f64),
) -> Result<Vec<SweepPoint>, DynamicsError> {
    let window = RecordWindow::AroundEcho { half_width_s };
    let seqs = waits_s
        .iter()
        .map(|&wait| template.stimulated(tau_s, wait, window)?.with_grating(grating.0, grating.1))
        .collect::<Result<Vec<_>, _>>()?;
    let grid = seqs.iter().fold(*grid, |g, s| g.resolved_for(s, spec.t2_s));
    waits_s
        .iter()
        .zip(&seqs)
        .map(|(&wait, seq)| {
            let trace = simulate_phase_cycled(spec, mode, seq, &grid, &PhaseCycle::stimulated())?;
            let p = peak_near(&trace, template.stimulated_echo_time(tau_s, wait), half_width_s)?;
            Ok(SweepPoint { delay_s: wait, peak_time_s: p.time_s, peak_intensity: p.intensity })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{bulk_absorption_from_peak, Lineshape, DEFAULT_CATION_DENSITY_PER_CM3};
    use crate::waveguide::{solve_te_fundamental, LayerStack};

    fn spec() -> IonEnsembleSpec {
        IonEnsembleSpec {
            concentration: 5e-5,
            cation_density_per_cm3: DEFAULT_CATION_DENSITY_PER_CM3,
            site1_fraction: 0.5,
            inhom_fwhm_hz: 2e9,
            lineshape: Lineshape::Gaussian,
            center_offset_hz: 0.0,
            bulk_absorption_db_per_mm: bulk_absorption_from_peak(2.25, 4.0, 0.072),
            t2_s: 70e-6,
            spin_lifetime_fast_s: 9.8,
            spin_lifetime_slow_s: 1e4,
            spin_fraction_fast: 0.5,
            isd_coefficient_hz_cm3: 1.2e-11,
        }
    }

    fn mode() -> ModeSolution {
        solve_te_fundamental(&LayerStack::slab(1.0, 2.05, 400.0, 1.806, 605.977).unwrap()).unwrap()
    }

    fn template() -> EchoTemplate {
        EchoTemplate::from_durations(3e-6, 6e-6, 0.5e-6)
    }

    fn grid() -> GridSpec {
        GridSpec::new(512, 8)
    }

    #[test]
    fn two_pulse_echo_at_twice_tau() {
        let (s, m, t) = (spec(), mode(), template());
        for &tau in &[20e-6, 40e-6, 80e-6] {
            let seq = t.two_pulse(tau, RecordWindow::AfterLastPulse { extent_s: 2.0 * tau }).unwrap();
            let trace = simulate_sequence(&s, &m, &seq, &grid().resolved_for(&seq, s.t2_s)).unwrap();
            let peak = trace.dominant_peak().unwrap();
            let expected = t.two_pulse_echo_time(tau);
            assert!((peak.time_s - expected).abs() <= t.record_step_s + 1e-12, "tau {tau}: {} vs {expected}", peak.time_s);
            assert!(trace.warnings.is_empty(), "{:?}", trace.warnings);
        }
    }

    #[test]
    fn echo_time_slope_is_two() {
        let (s, m, t) = (spec(), mode(), template());
        let taus: Vec<f64> = (0..6).map(|k| 20e-6 + 12e-6 * k as f64).collect();
        let pts = two_pulse_sweep(&s, &m, &t, &taus, &grid(), 5e-6).unwrap();
        let n = pts.len() as f64;
        let mx = taus.iter().sum::<f64>() / n;
        let my = pts.iter().map(|p| p.peak_time_s).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.delay_s - mx) * (p.peak_time_s - my)).sum();
        let sxx: f64 = taus.iter().map(|x| (x - mx).powi(2)).sum();
        assert!((sxy / sxx - 2.0).abs() < 0.02, "slope {}", sxy / sxx);
    }

    #[test]
    fn peak_ratio_follows_coherence_decay() {
        let m = mode();
        let t = template();
        let mut slow = spec();
        slow.t2_s = 1e3;
        let s = spec();
        let taus = [10e-6, 20e-6, 50e-6, 80e-6, 110e-6];
        let a = two_pulse_sweep(&slow, &m, &t, &taus, &grid(), 3e-6).unwrap();
        let b = two_pulse_sweep(&s, &m, &t, &taus, &grid(), 3e-6).unwrap();
        let ratio: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y.peak_intensity / x.peak_intensity).collect();
        for k in 1..taus.len() {
            let measured = ratio[k] / ratio[0];
            let expected = (-4.0 * (taus[k] - taus[0]) / s.t2_s).exp();
            assert!((measured / expected - 1.0).abs() < 5e-4, "{measured} vs {expected}");
        }
    }

    #[test]
    fn stimulated_echo_after_third_pulse() {
        let (s, m, t) = (spec(), mode(), template());
        let (tau, wait) = (20e-6, 100e-6);
        let seq = t.stimulated(tau, wait, RecordWindow::AfterLastPulse { extent_s: 3.0 * tau }).unwrap();
        let trace = simulate_sequence(&s, &m, &seq, &grid().resolved_for(&seq, s.t2_s)).unwrap();
        let peak = trace.dominant_peak().unwrap();
        assert!((peak.time_s - t.stimulated_echo_time(tau, wait)).abs() <= t.record_step_s + 1e-12);
    }

    #[test]
    fn stimulated_echo_tracks_spin_survival() {
        let (s, m, t) = (spec(), mode(), template());
        let waits = [0.1, 5.0, 20.0];
        let pts = stimulated_sweep(&s, &m, &t, 10e-6, &waits, &grid(), 3e-6, (1000, 1.0)).unwrap();
        for k in 1..waits.len() {
            let measured = pts[k].peak_intensity / pts[0].peak_intensity;
            let expected = (s.spin_survival(waits[k]) / s.spin_survival(waits[0])).powi(2);
            assert!((measured / expected - 1.0).abs() < 1e-4, "{measured} vs {expected}");
        }
    }

    #[test]
    fn global_phase_does_not_change_intensity() {
        let (s, m, t) = (spec(), mode(), template());
        let seq = t.two_pulse(30e-6, RecordWindow::AfterLastPulse { extent_s: 60e-6 }).unwrap();
        let mut shifted = seq.clone();
        for p in &mut shifted.pulses {
            p.phase_rad += 1.234;
        }
        let g = grid().resolved_for(&seq, s.t2_s);
        let a = simulate_sequence(&s, &m, &seq, &g).unwrap();
        let b = simulate_sequence(&s, &m, &shifted, &g).unwrap();
        let scale = a.max_intensity();
        for (x, y) in a.intensity.iter().zip(&b.intensity) {
            assert!((x - y).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn grid_refinement_converges() {
        let (s, m, t) = (spec(), mode(), template());
        let seq = t.two_pulse(40e-6, RecordWindow::AroundEcho { half_width_s: 3e-6 }).unwrap();
        let coarse = simulate_sequence(&s, &m, &seq, &GridSpec::new(512, 16)).unwrap();
        let fine = simulate_sequence(&s, &m, &seq, &GridSpec::new(1024, 16)).unwrap();
        let (a, b) = (coarse.max_intensity(), fine.max_intensity());
        assert!(((a - b) / b).abs() < 5e-3, "{a} vs {b}");
    }

    #[test]
    fn zero_shift_schedule_is_bit_identical() {
        let (s, m, t) = (spec(), mode(), template());
        let seq = t.two_pulse(30e-6, RecordWindow::AfterLastPulse { extent_s: 60e-6 }).unwrap();
        let g = grid().resolved_for(&seq, s.t2_s);
        let a = simulate_sequence(&s, &m, &seq, &g).unwrap();
        let zero = ShiftSchedule::from_steps([(0.0, 0.0), (10e-6, 0.0), (50e-6, 0.0)]);
        let b = simulate_with_shift(&s, &m, &seq, &g, &zero).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shift_outside_detection_band_suppresses_echo() {
        let (s, m, t) = (spec(), mode(), template());
        let seq = t.two_pulse(30e-6, RecordWindow::AfterLastPulse { extent_s: 60e-6 }).unwrap();
        let g = grid().resolved_for(&seq, s.t2_s);
        let span = g.span_for(&seq);
        let far = ShiftSchedule::from_steps([(0.0, TAU * 2.0 * span)]);
        let trace = simulate_with_shift(&s, &m, &seq, &g, &far).unwrap();
        assert_eq!(trace.max_intensity(), 0.0);
        assert!(trace.peaks.is_empty());
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let (s, m, t) = (spec(), mode(), template());
        let seq = t.two_pulse(25e-6, RecordWindow::AfterLastPulse { extent_s: 50e-6 }).unwrap();
        let g = GridSpec { phase_noise: Some(LaserPhaseNoise { coherence_time_s: 2e-6, seed: 3 }), ..grid() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_sequence(&s, &m, &seq, &g).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn phase_noise_weakens_echo() {
        let (s, m, t) = (spec(), mode(), template());
        let seq = t.two_pulse(30e-6, RecordWindow::AroundEcho { half_width_s: 3e-6 }).unwrap();
        let clean = simulate_sequence(&s, &m, &seq, &grid()).unwrap().max_intensity();
        let noisy: f64 = (0..8)
            .map(|seed| {
                let g = GridSpec { phase_noise: Some(LaserPhaseNoise { coherence_time_s: 1e-6, seed }), ..grid() };
                simulate_sequence(&s, &m, &seq, &g).unwrap().max_intensity()
            })
            .sum::<f64>()
            / 8.0;
        assert!(noisy < 0.5 * clean, "{noisy} vs {clean}");
    }

    #[test]
    fn coarse_grid_warnings() {
        let (s, m, t) = (spec(), mode(), template());
        let seq = t.two_pulse(80e-6, RecordWindow::AroundEcho { half_width_s: 3e-6 }).unwrap();
        let g = GridSpec { span_hz: Some(1e6), ..GridSpec::new(32, 2) };
        let trace = simulate_sequence(&s, &m, &seq, &g).unwrap();
        assert!(trace.warnings.iter().any(|w| matches!(w, GridWarning::FewDetuningClasses { .. })));
        assert!(trace.warnings.iter().any(|w| matches!(w, GridWarning::NarrowSpan { .. })));
        assert!(trace.warnings.iter().any(|w| matches!(w, GridWarning::Aliasing { .. })));
    }

    #[test]
    fn sequence_validation() {
        let p = |t0, d| Pulse::new(t0, d, 1e5, 0.0);
        assert!(PulseSequence::new(vec![], (0.0, 1.0), 0.1).is_err());
        assert!(PulseSequence::new(vec![p(0.0, 2.0), p(1.0, 1.0)], (5.0, 6.0), 0.1).is_err());
        assert!(PulseSequence::new(vec![p(0.0, 1.0)], (0.5, 2.0), 0.1).is_err());
        assert!(PulseSequence::new(vec![p(0.0, 1.0)], (1.0, 2.0), 0.0).is_err());
        assert!(PulseSequence::new(vec![p(0.0, -1.0)], (1.0, 2.0), 0.1).is_err());
        let seq = PulseSequence::spanning(vec![p(0.0, 1.0), p(2.0, 1.0)], (0.0, 4.0), 0.25).unwrap();
        assert!(seq.sample_times().iter().all(|&t| !(t > 2.0 && t < 3.0) && !(t > 0.0 && t < 1.0)));
        assert!(seq.clone().with_grating(0, 1.0).is_err());
        assert!(simulate_sequence(&spec(), &mode(), &seq, &GridSpec::new(0, 4)).is_err());
    }

    #[test]
    fn samples_before_first_pulse_are_dark() {
        let p = Pulse::new(5e-6, 3e-6, FRAC_PI_2 / 3e-6, 0.0);
        let seq = PulseSequence::spanning(vec![p], (0.0, 20e-6), 1e-6).unwrap();
        let trace = simulate_sequence(&spec(), &mode(), &seq, &grid()).unwrap();
        assert!(trace.times_s.iter().zip(&trace.intensity).filter(|(&t, _)| t <= 5e-6).all(|(_, &i)| i == 0.0));
        assert!(trace.intensity.iter().any(|&i| i > 0.0));
    }
}
