//! Subcommand implementations. Each command returns its CSV files and plot
//! scripts as in-memory artifacts so that callers can compare them byte for
//! byte before writing.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::config::{RunConfig, Sweep};
use crate::dynamics::{
    fit_stimulated_decay, fit_two_pulse_decay, simulate_sequence, stimulated_sweep, two_pulse_sweep, GridSpec,
    LaserPhaseNoise, PulseSequence, RecordWindow,
};
use crate::ensemble::{
    absorption_spectrum, dead_layer_bound, excitation_density, intensity_decay_depth_nm, isd_broadening, linspace,
};
use crate::stark::simulate_chip;
use crate::waveguide::{solve_te_fundamental, solve_te_modes, substrate_decay_length};

#[derive(Debug, Error)]
pub enum RunError {
    /// Bad or missing configuration for the requested command.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("physics error: {0}")]
    Physics(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl RunError {
    fn physics(e: impl std::fmt::Display) -> Self {
        RunError::Physics(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub file_name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommandOutput {
    pub artifacts: Vec<Artifact>,
    pub summary: Vec<String>,
}

impl CommandOutput {
    fn push_csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) {
        self.artifacts.push(Artifact { file_name: name.into(), contents: csv_text(header, rows) });
    }

    fn push_plot(&mut self, cfg: &RunConfig, name: &str, body: &str) {
        if cfg.output.plots {
            self.artifacts.push(Artifact { file_name: format!("plot_{name}.py"), contents: plot_script(name, body) });
        }
    }

    pub fn extend(&mut self, other: CommandOutput) {
        self.artifacts.extend(other.artifacts);
        self.summary.extend(other.summary);
    }

    pub fn find(&self, file_name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.file_name == file_name)
    }
}

/// Command-line overrides of the configured sweeps and noise.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub tau_sweep_us: Option<Sweep>,
    pub storage_sweep_s: Option<Sweep>,
    pub noise_fraction: Option<f64>,
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("write to memory");
    for r in rows {
        w.write_record(&r).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 csv")
}

fn plot_script(name: &str, body: &str) -> String {
    format!(
        "import csv\nimport os\n\nimport matplotlib\n\nmatplotlib.use(\"Agg\")\nimport matplotlib.pyplot as plt\n\n\
         HERE = os.path.dirname(os.path.abspath(__file__))\n\n\n\
         def load(name):\n    with open(os.path.join(HERE, name), newline=\"\") as f:\n        return list(csv.DictReader(f))\n\n\n\
         {body}\nplt.tight_layout()\nplt.savefig(os.path.join(HERE, \"{name}.png\"), dpi=150)\n"
    )
}

fn f(v: f64) -> String {
    format!("{v:.10e}")
}

fn us(t: f64) -> String {
    format!("{:.4}", t * 1e6)
}

/// Simulation grid from the configuration.
pub fn grid_for(cfg: &RunConfig) -> GridSpec {
    GridSpec {
        phase_noise: cfg.sequence.laser_coherence_s.map(|c| LaserPhaseNoise { coherence_time_s: c, seed: cfg.seed }),
        ..GridSpec::new(cfg.sequence.n_detuning, cfg.sequence.n_depth)
    }
}

/// Multiplies each value by `1 + fraction * N(0, 1)`, floored at the smallest
/// positive float. `stream` separates independent uses of one seed.
pub fn add_noise(values: &[f64], fraction: f64, seed: u64, stream: u64) -> Vec<f64> {
    if fraction == 0.0 {
        return values.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let n = Normal::new(0.0, fraction).expect("finite noise level");
    values.iter().map(|v| (v * (1.0 + n.sample(&mut rng))).max(f64::MIN_POSITIVE)).collect()
}

pub fn run_modes(cfg: &RunConfig) -> Result<CommandOutput, RunError> {
    let modes = solve_te_modes(&cfg.stack).map_err(RunError::physics)?;
    let mut out = CommandOutput::default();
    let rows = modes
        .iter()
        .map(|m| {
            let pf = &m.power_fractions;
            vec![
                m.mode_index.to_string(),
                format!("{:.12}", m.n_eff),
                format!("{:.9}", m.kappa_film),
                format!("{:.9}", m.gamma_cover),
                format!("{:.9}", m.gamma_substrate),
                format!("{:.9}", pf.cover),
                format!("{:.9}", pf.film_total()),
                format!("{:.9}", pf.substrate),
                format!("{:.6}", m.substrate_decay_length),
            ]
        })
        .collect();
    out.push_csv(
        "modes.csv",
        &[
            "mode_index",
            "n_eff",
            "kappa_film_per_um",
            "gamma_cover_per_um",
            "gamma_sub_per_um",
            "frac_cover",
            "frac_film",
            "frac_sub",
            "decay_len_nm",
        ],
        rows,
    );
    for m in &modes {
        let d = substrate_decay_length(m);
        out.summary.push(format!(
            "TE{}: n_eff = {:.6}, substrate decay length = {:.1} nm{}, substrate power fraction = {:.2} %",
            m.mode_index,
            m.n_eff,
            d.nm,
            if d.near_cutoff { " (near cutoff)" } else { "" },
            100.0 * m.power_fractions.substrate
        ));
    }
    out.push_plot(
        cfg,
        "modes",
        "rows = load(\"modes.csv\")\nplt.bar([r[\"mode_index\"] for r in rows], [float(r[\"frac_sub\"]) for r in rows])\n\
         plt.xlabel(\"TE mode index\")\nplt.ylabel(\"substrate power fraction\")",
    );
    Ok(out)
}

pub fn run_absorption(cfg: &RunConfig) -> Result<CommandOutput, RunError> {
    let mode = solve_te_fundamental(&cfg.stack).map_err(RunError::physics)?;
    let p = &cfg.probe;
    let center = cfg.ensemble.center_offset_hz;
    let grid = linspace(center - 0.5 * p.spectrum_span_hz, center + 0.5 * p.spectrum_span_hz, p.spectrum_points);
    let spectrum = absorption_spectrum(&cfg.ensemble, &mode, p.interaction_length_mm, &grid).map_err(RunError::physics)?;
    let mut out = CommandOutput::default();
    let rows = spectrum
        .frequencies_hz
        .iter()
        .zip(&spectrum.attenuation_db)
        .map(|(&nu, &a)| vec![format!("{:.6}", nu * 1e-9), format!("{a:.9}")])
        .collect();
    out.push_csv("absorption.csv", &["freq_ghz", "attenuation_db"], rows);

    let (_, peak) = spectrum.peak();
    let fwhm = spectrum.fwhm().map_or("n/a".to_string(), |w| format!("{:.4} GHz", w * 1e-9));
    let dead = dead_layer_bound(&mode, p.dead_layer_headroom).map_err(RunError::physics)?;
    let rho = excitation_density(&cfg.ensemble, p.excitation_bandwidth_hz, p.apply_site_fraction);
    out.summary.push(format!("peak attenuation = {peak:.4} dB over {} mm, FWHM = {fwhm}", p.interaction_length_mm));
    out.summary.push(format!(
        "intensity decay depth = {:.1} nm, dead-layer bound = {dead:.1} nm (headroom {})",
        intensity_decay_depth_nm(&mode),
        p.dead_layer_headroom
    ));
    out.summary.push(format!(
        "excitation density = {:.3e} cm^-3, ISD broadening = {:.1} Hz",
        rho.per_cm3,
        isd_broadening(cfg.ensemble.isd_coefficient_hz_cm3, rho.per_cm3)
    ));
    out.push_plot(
        cfg,
        "absorption",
        "rows = load(\"absorption.csv\")\nplt.plot([float(r[\"freq_ghz\"]) for r in rows], [float(r[\"attenuation_db\"]) for r in rows])\n\
         plt.xlabel(\"detuning (GHz)\")\nplt.ylabel(\"attenuation (dB)\")",
    );
    Ok(out)
}

fn trace_rows(times: &[f64], intensity: &[f64]) -> Vec<Vec<String>> {
    times.iter().zip(intensity).map(|(&t, &i)| vec![us(t), f(i)]).collect()
}

fn full_window(seq: &PulseSequence) -> Result<PulseSequence, RunError> {
    PulseSequence::spanning(seq.pulses.clone(), (0.0, seq.record_end_s), seq.record_step_s)
        .and_then(|s| s.with_grating(seq.grating_pairs, seq.emission_scale))
        .map_err(RunError::physics)
}

pub fn run_echo2p(cfg: &RunConfig, overrides: &Overrides) -> Result<CommandOutput, RunError> {
    let mode = solve_te_fundamental(&cfg.stack).map_err(RunError::physics)?;
    let s = &cfg.sequence;
    let t = &s.template;
    let taus = match overrides.tau_sweep_us {
        Some(w) => Sweep { start: w.start * 1e-6, stop: w.stop * 1e-6, count: w.count },
        None => s.tau_sweep_s,
    };
    if taus.start < 0.5 * (t.pi_half_duration_s + t.pi_duration_s) {
        return Err(RunError::Config("tau sweep start makes the pulses overlap".into()));
    }
    let grid = grid_for(cfg);
    let mut out = CommandOutput::default();

    let seq = t.two_pulse(s.tau_s, RecordWindow::AfterLastPulse { extent_s: 2.0 * s.tau_s }).map_err(RunError::physics)?;
    let seq = full_window(&seq)?;
    let trace = simulate_sequence(&cfg.ensemble, &mode, &seq, &grid.resolved_for(&seq, cfg.ensemble.t2_s))
        .map_err(RunError::physics)?;
    out.push_csv("echo2p_trace.csv", &["time_us", "intensity"], trace_rows(&trace.times_s, &trace.intensity));
    if let Some(p) = trace.dominant_peak() {
        out.summary.push(format!("tau = {} us: echo peak at {} us", us(s.tau_s), us(p.time_s)));
    }

    let tau_values = taus.linear();
    let points = two_pulse_sweep(&cfg.ensemble, &mode, t, &tau_values, &grid, t.pi_half_duration_s)
        .map_err(RunError::physics)?;
    let noise = overrides.noise_fraction.unwrap_or(s.noise_fraction);
    let peaks: Vec<f64> = points.iter().map(|p| p.peak_intensity).collect();
    let peaks = add_noise(&peaks, noise, cfg.seed, 2);
    out.push_csv(
        "echo2p_decay.csv",
        &["tau_us", "peak_intensity"],
        tau_values.iter().zip(&peaks).map(|(&tau, &v)| vec![us(tau), f(v)]).collect(),
    );
    let fit = fit_two_pulse_decay(&tau_values, &peaks).map_err(RunError::physics)?;
    out.push_csv(
        "echo2p_fit.csv",
        &["t2_us", "homogeneous_linewidth_hz"],
        vec![vec![format!("{:.6}", fit.t2_s * 1e6), format!("{:.3}", fit.homogeneous_linewidth_hz)]],
    );
    out.summary.push(format!(
        "fitted T2 = {:.3} us (configured {:.3} us), homogeneous linewidth = {:.1} Hz",
        fit.t2_s * 1e6,
        cfg.ensemble.t2_s * 1e6,
        fit.homogeneous_linewidth_hz
    ));
    out.push_plot(
        cfg,
        "echo2p",
        "trace = load(\"echo2p_trace.csv\")\ndecay = load(\"echo2p_decay.csv\")\nfig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))\n\
         a.plot([float(r[\"time_us\"]) for r in trace], [float(r[\"intensity\"]) for r in trace], \".-\")\n\
         a.set_xlabel(\"time (us)\")\na.set_ylabel(\"intensity (a.u.)\")\n\
         b.semilogy([float(r[\"tau_us\"]) for r in decay], [float(r[\"peak_intensity\"]) for r in decay], \"o\")\n\
         b.set_xlabel(\"tau (us)\")\nb.set_ylabel(\"echo intensity (a.u.)\")",
    );
    Ok(out)
}

pub fn run_echo3p(cfg: &RunConfig, overrides: &Overrides) -> Result<CommandOutput, RunError> {
    let mode = solve_te_fundamental(&cfg.stack).map_err(RunError::physics)?;
    let s = &cfg.sequence;
    let t = &s.template;
    let waits_sweep = overrides.storage_sweep_s.unwrap_or(s.storage_sweep_s);
    if !(waits_sweep.start > t.pi_half_duration_s) {
        return Err(RunError::Config("storage delays must exceed the pi/2 duration".into()));
    }
    let waits = waits_sweep.logarithmic();
    let grid = grid_for(cfg);
    let grating = (s.grating_pairs, s.grating_contrast);
    let mut out = CommandOutput::default();

    let seq = t
        .stimulated(s.tau_s, waits[0], RecordWindow::AfterLastPulse { extent_s: 2.0 * s.tau_s })
        .and_then(|q| q.with_grating(grating.0, grating.1))
        .map_err(RunError::physics)?;
    let last_end = seq.pulses[2].end_s();
    let window = PulseSequence::spanning(seq.pulses.clone(), (last_end, seq.record_end_s), seq.record_step_s)
        .and_then(|q| q.with_grating(grating.0, grating.1))
        .map_err(RunError::physics)?;
    let trace = simulate_sequence(&cfg.ensemble, &mode, &window, &grid.resolved_for(&window, cfg.ensemble.t2_s))
        .map_err(RunError::physics)?;
    out.push_csv("echo3p_trace.csv", &["time_us", "intensity"], trace_rows(&trace.times_s, &trace.intensity));

    let points = stimulated_sweep(&cfg.ensemble, &mode, t, s.tau_s, &waits, &grid, t.pi_half_duration_s, grating)
        .map_err(RunError::physics)?;
    let noise = overrides.noise_fraction.unwrap_or(s.noise_fraction);
    let peaks: Vec<f64> = points.iter().map(|p| p.peak_intensity).collect();
    let peaks = add_noise(&peaks, noise, cfg.seed, 3);
    out.push_csv(
        "echo3p_decay.csv",
        &["T_s", "peak_intensity"],
        waits.iter().zip(&peaks).map(|(&w, &v)| vec![format!("{w:.6e}"), f(v)]).collect(),
    );
    let fit = fit_stimulated_decay(&waits, &peaks).map_err(RunError::physics)?;
    out.push_csv(
        "echo3p_fit.csv",
        &["t_fast_s", "t_slow_s", "ambiguous_separation", "slow_at_upper_bound"],
        vec![vec![
            format!("{:.6}", fit.t_fast_s),
            format!("{:.6e}", fit.t_slow_s),
            fit.ambiguous_separation.to_string(),
            fit.slow_at_upper_bound.to_string(),
        ]],
    );
    out.summary.push(format!(
        "fitted spin lifetimes: t_fast = {:.3} s, t_slow = {:.4e} s{}{}",
        fit.t_fast_s,
        fit.t_slow_s,
        if fit.ambiguous_separation { " [ambiguous separation]" } else { "" },
        if fit.slow_at_upper_bound { " [slow lifetime at search bound]" } else { "" }
    ));
    out.push_plot(
        cfg,
        "echo3p",
        "decay = load(\"echo3p_decay.csv\")\nplt.loglog([float(r[\"T_s\"]) for r in decay], [float(r[\"peak_intensity\"]) for r in decay], \"o\")\n\
         plt.xlabel(\"storage delay T (s)\")\nplt.ylabel(\"stimulated echo intensity (a.u.)\")",
    );
    Ok(out)
}

pub fn run_chip(cfg: &RunConfig) -> Result<CommandOutput, RunError> {
    let layout = cfg.chip.as_ref().ok_or_else(|| RunError::Config("the configuration has no [stark] table".into()))?;
    let mode = solve_te_fundamental(&cfg.stack).map_err(RunError::physics)?;
    let grid = grid_for(cfg).resolved_for(&layout.sequence, cfg.ensemble.t2_s);
    let chip = simulate_chip(layout, &cfg.ensemble, &mode, &grid, cfg.ensemble.homogeneous_linewidth_hz())
        .map_err(RunError::physics)?;
    let mut out = CommandOutput::default();
    let mut rows = Vec::new();
    for d in &chip.devices {
        for (&t, &i) in d.trace.times_s.iter().zip(&d.trace.intensity) {
            rows.push(vec![us(t), f(i), d.device_id.clone()]);
        }
        let peaks: Vec<String> = d.trace.peaks.iter().map(|p| us(p.time_s)).collect();
        out.summary.push(format!("device {}: echoes at [{}] us", d.device_id, peaks.join(", ")));
    }
    out.push_csv("chip_devices.csv", &["time_us", "intensity", "device_id"], rows);
    out.push_csv("chip_total.csv", &["time_us", "intensity"], trace_rows(&chip.times_s, &chip.total_intensity));
    for a in &chip.schedule.pulses {
        out.summary.push(format!("pulse {}: resonant devices {:?}", a.pulse_index, a.resonant_devices));
    }
    if chip.schedule.is_clean() {
        out.summary.push("schedule: no conflicts".into());
    }
    for o in &chip.schedule.overlaps {
        out.summary.push(format!("schedule conflict: devices {:?} share pulse {}", o.resonant_devices, o.pulse_index));
    }
    for m in &chip.schedule.margin_warnings {
        out.summary.push(format!("idle margin warning: device {} at {:.0} Hz", m.device_id, m.margin_hz));
    }
    out.push_plot(
        cfg,
        "chip",
        "rows = load(\"chip_devices.csv\")\ntotal = load(\"chip_total.csv\")\n\
         for dev in sorted({r[\"device_id\"] for r in rows}):\n    sel = [r for r in rows if r[\"device_id\"] == dev]\n    \
         plt.plot([float(r[\"time_us\"]) for r in sel], [float(r[\"intensity\"]) for r in sel], label=dev)\n\
         plt.plot([float(r[\"time_us\"]) for r in total], [float(r[\"intensity\"]) for r in total], \"k:\", label=\"total\")\n\
         plt.xlabel(\"time (us)\")\nplt.ylabel(\"output intensity (a.u.)\")\nplt.legend()",
    );
    Ok(out)
}

/// Writes every artifact into `dir`, creating it if needed.
pub fn write_artifacts(dir: &Path, output: &CommandOutput) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
    for a in &output.artifacts {
        let path = dir.join(&a.file_name);
        std::fs::write(&path, &a.contents).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
