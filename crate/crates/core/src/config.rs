//! TOML run configuration. Every unit-bearing key carries its unit suffix and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::dynamics::{EchoTemplate, Pulse, PulseSequence};
use crate::ensemble::{
    IonEnsembleSpec, Lineshape, DEFAULT_CATION_DENSITY_PER_CM3, DEFAULT_SITE1_FRACTION,
};
use crate::stark::{ChipLayout, StarkDevice, VoltageTimeline};
use crate::waveguide::{Film, LayerStack};

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid `{key}`: {message}")]
    Validation { key: String, message: String },
}

fn invalid<T>(key: impl Into<String>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Validation { key: key.into(), message: message.into() })
}

fn required<T: Copy>(v: Option<T>, key: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| ConfigError::Validation { key: key.into(), message: "missing required key".into() })
}

fn positive(v: f64, key: &str) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        invalid(key, format!("{v} must be > 0"))
    }
}

fn fraction(v: f64, key: &str) -> Result<f64, ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        invalid(key, format!("{v} must lie in [0, 1]"))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema: Option<i64>,
    seed: Option<u64>,
    stack: Option<RawStack>,
    ensemble: Option<RawEnsemble>,
    sequence: Option<RawSequence>,
    stark: Option<RawStark>,
    output: Option<RawOutput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStack {
    wavelength_nm: Option<f64>,
    cover_index: Option<f64>,
    substrate_index: Option<f64>,
    films: Option<Vec<RawFilm>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFilm {
    index: Option<f64>,
    thickness_nm: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnsemble {
    concentration: Option<f64>,
    cation_density_per_cm3: Option<f64>,
    site1_fraction: Option<f64>,
    inhom_fwhm_ghz: Option<f64>,
    lineshape: Option<Lineshape>,
    center_offset_ghz: Option<f64>,
    bulk_absorption_db_per_mm: Option<f64>,
    t2_us: Option<f64>,
    spin_lifetime_fast_s: Option<f64>,
    spin_lifetime_slow_s: Option<f64>,
    spin_fraction_fast: Option<f64>,
    isd_coefficient_hz_cm3: Option<f64>,
    excitation_bandwidth_mhz: Option<f64>,
    apply_site_fraction: Option<bool>,
    interaction_length_mm: Option<f64>,
    dead_layer_headroom: Option<f64>,
    spectrum_span_ghz: Option<f64>,
    spectrum_points: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSequence {
    pi_half_duration_us: Option<f64>,
    pi_duration_us: Option<f64>,
    tau_us: Option<f64>,
    tau_sweep_us: Option<[f64; 3]>,
    storage_sweep_s: Option<[f64; 3]>,
    record_step_us: Option<f64>,
    n_detuning: Option<usize>,
    n_depth: Option<usize>,
    grating_pairs: Option<u32>,
    grating_contrast: Option<f64>,
    laser_coherence_us: Option<f64>,
    noise_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStark {
    laser_offset_mhz: Option<f64>,
    record_end_us: Option<f64>,
    pulses: Option<Vec<RawStarkPulse>>,
    devices: Option<Vec<RawDevice>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStarkPulse {
    center_us: Option<f64>,
    kind: Option<PulseKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseKind {
    PiHalf,
    Pi,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDevice {
    id: Option<String>,
    coeff_khz_per_v_cm: Option<f64>,
    gap_cm: Option<f64>,
    idle_offset_mhz: Option<f64>,
    timeline: Option<Vec<RawStep>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    t_us: Option<f64>,
    volts: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    plots: Option<bool>,
}

/// Measurement-side parameters of the ensemble block.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub excitation_bandwidth_hz: f64,
    pub apply_site_fraction: bool,
    pub interaction_length_mm: f64,
    pub dead_layer_headroom: f64,
    pub spectrum_span_hz: f64,
    pub spectrum_points: usize,
}

/// Linear or logarithmic sweep `start:stop:count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Sweep {
    pub fn new(start: f64, stop: f64, count: usize) -> Result<Self, String> {
        if !(start.is_finite() && stop.is_finite()) {
            return Err("sweep bounds must be finite".into());
        }
        if count == 0 || (count == 1 && start != stop) {
            return Err(format!("count {count} cannot span [{start}, {stop}]"));
        }
        if stop < start {
            return Err(format!("stop {stop} is below start {start}"));
        }
        Ok(Self { start, stop, count })
    }

    /// Parses `start:stop:count`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(':').collect();
        let [a, b, n] = parts.as_slice() else {
            return Err(format!("expected start:stop:count, got `{text}`"));
        };
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
        let count = n.trim().parse::<usize>().map_err(|e| format!("`{n}`: {e}"))?;
        Self::new(num(a)?, num(b)?, count)
    }

    pub fn linear(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.start + step * i as f64).collect()
    }

    /// Log-spaced points; requires `start > 0`.
    pub fn logarithmic(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let (a, b) = (self.start.ln(), self.stop.ln());
        (0..self.count).map(|i| (a + (b - a) * i as f64 / (self.count - 1) as f64).exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceConfig {
    pub template: EchoTemplate,
    pub tau_s: f64,
    pub tau_sweep_s: Sweep,
    pub storage_sweep_s: Sweep,
    pub n_detuning: usize,
    pub n_depth: usize,
    pub grating_pairs: u32,
    pub grating_contrast: f64,
    pub laser_coherence_s: Option<f64>,
    /// Relative Gaussian noise added to simulated decay sweeps before fitting.
    pub noise_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub plots: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub stack: LayerStack,
    pub ensemble: IonEnsembleSpec,
    pub probe: ProbeConfig,
    pub sequence: SequenceConfig,
    pub chip: Option<ChipLayout>,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub warnings: Vec<String>,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_config(&text)
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub fn parse_config(text: &str) -> Result<LoadedConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        ConfigError::Parse { line, column, message: e.message().to_string() }
    })?;
    let mut warnings = Vec::new();

    match raw.schema {
        Some(SCHEMA_VERSION) => {}
        Some(v) => return invalid("schema", format!("unsupported schema version {v}, expected {SCHEMA_VERSION}")),
        None => return invalid("schema", "missing required key"),
    }
    let seed = raw.seed.unwrap_or(0);
    let stack = build_stack(raw.stack)?;
    let (ensemble, probe) = build_ensemble(raw.ensemble, &mut warnings)?;
    let sequence = build_sequence(raw.sequence)?;
    let chip = raw.stark.map(|s| build_chip(s, &sequence.template)).transpose()?;
    let output = raw.output.map_or(Ok(OutputConfig { dir: PathBuf::from("out"), plots: true }), |o| {
        Ok::<_, ConfigError>(OutputConfig { dir: o.dir.unwrap_or_else(|| PathBuf::from("out")), plots: o.plots.unwrap_or(true) })
    })?;

    if let Err(e) = stack.check_guiding() {
        return invalid("stack", format!("LayerStack invariant: {e}"));
    }
    if let Some(chip) = &chip {
        let report = crate::stark::validate_schedule(
            chip,
            chip.sequence.excitation_bandwidth_hz(),
            ensemble.homogeneous_linewidth_hz(),
        );
        for o in &report.overlaps {
            warnings.push(format!("stark: devices {:?} share pulse {}", o.resonant_devices, o.pulse_index));
        }
        for m in &report.margin_warnings {
            warnings.push(format!(
                "stark: device {} idles {:.0} Hz from the laser, below {:.0} Hz",
                m.device_id, m.margin_hz, m.required_hz
            ));
        }
        for id in &report.uncovered {
            warnings.push(format!("stark: device {id} timeline does not cover the pulse train"));
        }
    }

    Ok(LoadedConfig { config: RunConfig { seed, stack, ensemble, probe, sequence, chip, output }, warnings })
}

fn build_stack(raw: Option<RawStack>) -> Result<LayerStack, ConfigError> {
    let Some(raw) = raw else { return invalid("stack", "missing required table") };
    let wavelength_nm = positive(required(raw.wavelength_nm, "stack.wavelength_nm")?, "stack.wavelength_nm")?;
    let cover = required(raw.cover_index, "stack.cover_index")?;
    let substrate = required(raw.substrate_index, "stack.substrate_index")?;
    let Some(raw_films) = raw.films else { return invalid("stack.films", "missing required key") };
    if raw_films.is_empty() {
        return invalid("stack.films", "LayerStack invariant: at least one film is required");
    }
    let mut films = Vec::with_capacity(raw_films.len());
    for (i, f) in raw_films.iter().enumerate() {
        let key = |k: &str| format!("stack.films[{i}].{k}");
        let index = required(f.index, &key("index"))?;
        let thickness_nm = required(f.thickness_nm, &key("thickness_nm"))?;
        if !(thickness_nm > 0.0 && thickness_nm.is_finite()) {
            return invalid(key("thickness_nm"), format!("LayerStack invariant: film thickness {thickness_nm} nm must be > 0"));
        }
        if !(index >= 1.0 && index.is_finite()) {
            return invalid(key("index"), format!("LayerStack invariant: refractive index {index} must be >= 1"));
        }
        films.push(Film { index, thickness_nm });
    }
    for (k, v) in [("stack.cover_index", cover), ("stack.substrate_index", substrate)] {
        if !(v >= 1.0 && v.is_finite()) {
            return invalid(k, format!("LayerStack invariant: refractive index {v} must be >= 1"));
        }
    }
    LayerStack::new(cover, films, substrate, wavelength_nm)
        .or_else(|e| invalid("stack", format!("LayerStack invariant: {e}")))
}

fn build_ensemble(raw: Option<RawEnsemble>, warnings: &mut Vec<String>) -> Result<(IonEnsembleSpec, ProbeConfig), ConfigError> {
    let Some(r) = raw else { return invalid("ensemble", "missing required table") };
    let spec = IonEnsembleSpec {
        concentration: fraction(required(r.concentration, "ensemble.concentration")?, "ensemble.concentration")?,
        cation_density_per_cm3: positive(
            r.cation_density_per_cm3.unwrap_or(DEFAULT_CATION_DENSITY_PER_CM3),
            "ensemble.cation_density_per_cm3",
        )?,
        site1_fraction: fraction(r.site1_fraction.unwrap_or(DEFAULT_SITE1_FRACTION), "ensemble.site1_fraction")?,
        inhom_fwhm_hz: positive(required(r.inhom_fwhm_ghz, "ensemble.inhom_fwhm_ghz")?, "ensemble.inhom_fwhm_ghz")? * 1e9,
        lineshape: r.lineshape.unwrap_or(Lineshape::Gaussian),
        center_offset_hz: r.center_offset_ghz.unwrap_or(0.0) * 1e9,
        bulk_absorption_db_per_mm: positive(
            required(r.bulk_absorption_db_per_mm, "ensemble.bulk_absorption_db_per_mm")?,
            "ensemble.bulk_absorption_db_per_mm",
        )?,
        t2_s: positive(required(r.t2_us, "ensemble.t2_us")?, "ensemble.t2_us")? * 1e-6,
        spin_lifetime_fast_s: positive(r.spin_lifetime_fast_s.unwrap_or(9.8), "ensemble.spin_lifetime_fast_s")?,
        spin_lifetime_slow_s: positive(r.spin_lifetime_slow_s.unwrap_or(1e4), "ensemble.spin_lifetime_slow_s")?,
        spin_fraction_fast: fraction(r.spin_fraction_fast.unwrap_or(0.5), "ensemble.spin_fraction_fast")?,
        isd_coefficient_hz_cm3: positive(
            required(r.isd_coefficient_hz_cm3, "ensemble.isd_coefficient_hz_cm3")?,
            "ensemble.isd_coefficient_hz_cm3",
        )?,
    };
    if !spec.center_offset_hz.is_finite() {
        return invalid("ensemble.center_offset_ghz", "must be finite");
    }
    if spec.spin_lifetime_slow_s < spec.spin_lifetime_fast_s {
        return invalid("ensemble.spin_lifetime_slow_s", "must not be shorter than spin_lifetime_fast_s");
    }
    if let Err(e) = spec.validate() {
        return invalid("ensemble", e.to_string());
    }
    let probe = ProbeConfig {
        excitation_bandwidth_hz: positive(r.excitation_bandwidth_mhz.unwrap_or(1.0), "ensemble.excitation_bandwidth_mhz")? * 1e6,
        apply_site_fraction: r.apply_site_fraction.unwrap_or(false),
        interaction_length_mm: positive(required(r.interaction_length_mm, "ensemble.interaction_length_mm")?, "ensemble.interaction_length_mm")?,
        dead_layer_headroom: r.dead_layer_headroom.unwrap_or(0.25),
        spectrum_span_hz: positive(r.spectrum_span_ghz.unwrap_or(8.0), "ensemble.spectrum_span_ghz")? * 1e9,
        spectrum_points: r.spectrum_points.unwrap_or(4001),
    };
    if !(probe.dead_layer_headroom > 0.0 && probe.dead_layer_headroom < 1.0) {
        return invalid("ensemble.dead_layer_headroom", format!("{} must lie in (0, 1)", probe.dead_layer_headroom));
    }
    if probe.spectrum_points < 3 {
        return invalid("ensemble.spectrum_points", "at least 3 points are required");
    }
    if probe.spectrum_span_hz < 3.0 * spec.inhom_fwhm_hz {
        return invalid("ensemble.spectrum_span_ghz", "must cover at least 3 inhomogeneous linewidths");
    }
    if crate::ensemble::excitation_density(&spec, probe.excitation_bandwidth_hz, probe.apply_site_fraction).wide_band_warning {
        warnings.push("ensemble.excitation_bandwidth_mhz exceeds 10% of the inhomogeneous linewidth".into());
    }
    Ok((spec, probe))
}

fn sweep(v: [f64; 3], key: &str) -> Result<Sweep, ConfigError> {
    if v[2] < 1.0 || v[2].fract() != 0.0 {
        return invalid(key, format!("count {} must be a positive integer", v[2]));
    }
    Sweep::new(v[0], v[1], v[2] as usize).or_else(|e| invalid(key, e))
}

fn build_sequence(raw: Option<RawSequence>) -> Result<SequenceConfig, ConfigError> {
    let Some(r) = raw else { return invalid("sequence", "missing required table") };
    let d1 = positive(r.pi_half_duration_us.unwrap_or(3.0), "sequence.pi_half_duration_us")? * 1e-6;
    let d2 = positive(r.pi_duration_us.unwrap_or(6.0), "sequence.pi_duration_us")? * 1e-6;
    let step = positive(r.record_step_us.unwrap_or(0.5), "sequence.record_step_us")? * 1e-6;
    let template = EchoTemplate::from_durations(d1, d2, step);
    let tau_s = positive(r.tau_us.unwrap_or(20.0), "sequence.tau_us")? * 1e-6;
    if tau_s < 0.5 * (d1 + d2) {
        return invalid("sequence.tau_us", "pulses overlap: tau is shorter than half the summed pulse durations");
    }
    let taus = sweep(r.tau_sweep_us.unwrap_or([10.0, 150.0, 20.0]), "sequence.tau_sweep_us")?;
    if taus.start * 1e-6 < 0.5 * (d1 + d2) {
        return invalid("sequence.tau_sweep_us", "sweep start makes the pulses overlap");
    }
    let tau_sweep_s = Sweep { start: taus.start * 1e-6, stop: taus.stop * 1e-6, count: taus.count };
    let storage_sweep_s = sweep(r.storage_sweep_s.unwrap_or([0.1, 1000.0, 25.0]), "sequence.storage_sweep_s")?;
    if storage_sweep_s.start <= d1 {
        return invalid("sequence.storage_sweep_s", "storage delays must exceed the pi/2 duration");
    }
    let n_detuning = r.n_detuning.unwrap_or(512);
    let n_depth = r.n_depth.unwrap_or(16);
    if n_detuning == 0 {
        return invalid("sequence.n_detuning", "must be >= 1");
    }
    if n_depth == 0 {
        return invalid("sequence.n_depth", "must be >= 1");
    }
    let grating_pairs = r.grating_pairs.unwrap_or(1000);
    if grating_pairs == 0 {
        return invalid("sequence.grating_pairs", "must be >= 1");
    }
    let laser_coherence_s = r.laser_coherence_us.map(|v| positive(v, "sequence.laser_coherence_us").map(|v| v * 1e-6)).transpose()?;
    let noise_fraction = r.noise_fraction.unwrap_or(0.0);
    if !(0.0..1.0).contains(&noise_fraction) {
        return invalid("sequence.noise_fraction", format!("{noise_fraction} must lie in [0, 1)"));
    }
    Ok(SequenceConfig {
        template,
        tau_s,
        tau_sweep_s,
        storage_sweep_s,
        n_detuning,
        n_depth,
        grating_pairs,
        grating_contrast: positive(r.grating_contrast.unwrap_or(1.0), "sequence.grating_contrast")?,
        laser_coherence_s,
        noise_fraction,
    })
}

fn build_chip(raw: RawStark, template: &EchoTemplate) -> Result<ChipLayout, ConfigError> {
    let laser_offset_hz = raw.laser_offset_mhz.unwrap_or(0.0) * 1e6;
    let Some(raw_pulses) = raw.pulses else { return invalid("stark.pulses", "missing required key") };
    if raw_pulses.is_empty() {
        return invalid("stark.pulses", "at least one pulse is required");
    }
    let mut pulses = Vec::new();
    for (i, p) in raw_pulses.iter().enumerate() {
        let center = required(p.center_us, &format!("stark.pulses[{i}].center_us"))? * 1e-6;
        let kind = p.kind.ok_or_else(|| ConfigError::Validation {
            key: format!("stark.pulses[{i}].kind"),
            message: "missing required key".into(),
        })?;
        let d = match kind {
            PulseKind::PiHalf => template.pi_half_duration_s,
            PulseKind::Pi => template.pi_duration_s,
        };
        pulses.push(Pulse::new(center - 0.5 * d, d, template.rabi_rad_s, 0.0));
    }
    let end = positive(required(raw.record_end_us, "stark.record_end_us")?, "stark.record_end_us")? * 1e-6;
    let sequence = PulseSequence::spanning(pulses, (0.0, end), template.record_step_s)
        .or_else(|e| invalid("stark.pulses", e.to_string()))?;
    let Some(raw_devices) = raw.devices else { return invalid("stark.devices", "missing required key") };
    let mut devices = Vec::new();
    for (i, d) in raw_devices.into_iter().enumerate() {
        let key = |k: &str| format!("stark.devices[{i}].{k}");
        let Some(id) = d.id else { return invalid(key("id"), "missing required key") };
        let coeff = required(d.coeff_khz_per_v_cm, &key("coeff_khz_per_v_cm"))? * 1e3;
        if coeff == 0.0 || !coeff.is_finite() {
            return invalid(key("coeff_khz_per_v_cm"), "must be finite and non-zero");
        }
        let gap = positive(d.gap_cm.unwrap_or(0.01), &key("gap_cm"))?;
        let offset = d.idle_offset_mhz.unwrap_or(10.0) * 1e6;
        let Some(raw_steps) = d.timeline else { return invalid(key("timeline"), "missing required key") };
        let mut steps = Vec::new();
        for (j, s) in raw_steps.iter().enumerate() {
            let t = required(s.t_us, &format!("stark.devices[{i}].timeline[{j}].t_us"))? * 1e-6;
            let v = required(s.volts, &format!("stark.devices[{i}].timeline[{j}].volts"))?;
            steps.push((t, v));
        }
        let timeline = VoltageTimeline::new(steps).or_else(|e| invalid(key("timeline"), e))?;
        let device = StarkDevice { id, coefficient_hz_per_v_cm: coeff, electrode_gap_cm: gap, detuned_offset_hz: offset, timeline };
        device.validate().or_else(|e| invalid(key("id"), e.to_string()))?;
        devices.push(device);
    }
    let layout = ChipLayout { devices, laser_offset_hz, sequence };
    layout.validate().or_else(|e| invalid("stark.devices", e.to_string()))?;
    Ok(layout)
}
