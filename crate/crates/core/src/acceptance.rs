//! End-to-end acceptance checks shared by the `verify` subcommand and the
//! acceptance test target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dynamics::{
    bloch_rhs, detect_peaks, fit_stimulated_decay, fit_two_pulse_decay, free_evolution, propagate_pulse,
    simulate_sequence, stimulated_decay_model, two_pulse_sweep, BlochVector, Pulse, RecordWindow,
};
use crate::ensemble::{
    absorption_spectrum_for_fraction, bulk_absorption_from_peak, dead_layer_bound, excitation_density,
    isd_broadening, linspace,
};
use crate::numerics::integrate_ode_final;
use crate::oracle::{dense_scan_neff, quadrature_power_fractions};
use crate::runner::{add_noise, grid_for, run_absorption, run_chip, run_echo2p, run_echo3p, run_modes, CommandOutput, Overrides};
use crate::stark::{simulate_chip, two_device_demo, ChipLayout, VoltageTimeline};
use crate::waveguide::{solve_te_fundamental, substrate_decay_length, ModeSolution};

/// Measured reference values the model is checked against.
pub mod reference {
    pub const SUBSTRATE_FRACTION: f64 = 0.072;
    pub const PEAK_ABSORPTION_DB: f64 = 2.25;
    pub const INTERACTION_LENGTH_MM: f64 = 4.0;
    pub const INHOM_FWHM_HZ: f64 = 2e9;
    pub const DEAD_LAYER_HEADROOM: f64 = 0.25;
    pub const ISD_COEFFICIENT_HZ_CM3: f64 = 1.2e-11;
    pub const EXCITATION_DENSITY_PER_CM3: f64 = 4e14;
    pub const T2_S: f64 = 70e-6;
    pub const T_FAST_S: f64 = 9.8;
    pub const T_SLOW_S: f64 = 1e4;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u32,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!("[{}] {:>2}. {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.id, self.title, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceReport {
    pub results: Vec<CriterionResult>,
    /// CSV artifacts produced by the determinism check.
    pub artifacts: CommandOutput,
}

impl AcceptanceReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn table(&self) -> String {
        self.results.iter().map(|r| r.line() + "\n").collect()
    }
}

fn result(id: u32, title: &'static str, outcome: Result<(bool, String), String>) -> CriterionResult {
    match outcome {
        Ok((passed, detail)) => CriterionResult { id, title, passed, detail },
        Err(e) => CriterionResult { id, title, passed: false, detail: format!("error: {e}") },
    }
}

type Outcome = Result<(bool, String), String>;

pub fn mode_solution(cfg: &RunConfig) -> Outcome {
    let m = solve_te_fundamental(&cfg.stack).map_err(|e| e.to_string())?;
    let decay = substrate_decay_length(&m).nm;
    let frac = m.power_fractions.substrate;
    let residual = cfg.stack.dispersion_residual(m.n_eff, 0).abs();
    let mismatch = m.boundary_mismatch();
    let ok = m.n_eff > cfg.stack.cladding_index()
        && m.n_eff < cfg.stack.max_film_index()
        && (115.0..=145.0).contains(&decay)
        && (0.05..=0.09).contains(&frac)
        && residual < 1e-10
        && mismatch < 1e-6;
    Ok((
        ok,
        format!(
            "n_eff = {:.6}, decay length = {decay:.1} nm, substrate fraction = {:.2} %, residual = {residual:.1e}, continuity = {mismatch:.1e}",
            m.n_eff,
            100.0 * frac
        ),
    ))
}

pub fn oracle_equivalence(cfg: &RunConfig) -> Outcome {
    let m = solve_te_fundamental(&cfg.stack).map_err(|e| e.to_string())?;
    let n = dense_scan_neff(&cfg.stack, 0, 1e-5).ok_or("dense scan found no root")?;
    let dn = (n - m.n_eff).abs();
    let q = quadrature_power_fractions(&m, 40_000);
    let pf = &m.power_fractions;
    let df = q
        .films
        .iter()
        .zip(&pf.films)
        .map(|(a, b)| (a - b).abs())
        .fold((q.cover - pf.cover).abs().max((q.substrate - pf.substrate).abs()), f64::max);
    Ok((dn <= 1e-9 && df <= 1e-6, format!("|dn_eff| = {dn:.1e}, max |d fraction| = {df:.1e}")))
}

pub fn absorption(cfg: &RunConfig, mode: &ModeSolution) -> Outcome {
    use reference::*;
    let bulk = bulk_absorption_from_peak(PEAK_ABSORPTION_DB, INTERACTION_LENGTH_MM, SUBSTRATE_FRACTION);
    let spec = crate::ensemble::IonEnsembleSpec { bulk_absorption_db_per_mm: bulk, ..cfg.ensemble.clone() };
    let span = cfg.probe.spectrum_span_hz;
    let grid = linspace(-0.5 * span, 0.5 * span, cfg.probe.spectrum_points);
    let s = absorption_spectrum_for_fraction(&spec, SUBSTRATE_FRACTION, INTERACTION_LENGTH_MM, &grid)
        .map_err(|e| e.to_string())?;
    let (_, peak) = s.peak();
    let fwhm = s.fwhm().ok_or("no FWHM on grid")?;
    let step = s.grid_step_hz();
    let solved = absorption_spectrum_for_fraction(&spec, mode.power_fractions.substrate, INTERACTION_LENGTH_MM, &grid)
        .map_err(|e| e.to_string())?
        .peak()
        .1;
    Ok((
        (peak - PEAK_ABSORPTION_DB).abs() <= 0.01 && (fwhm - INHOM_FWHM_HZ).abs() <= step,
        format!(
            "bulk = {bulk:.4} dB/mm, peak = {peak:.4} dB, FWHM = {:.4} GHz (grid step {:.1} MHz); solved-mode fraction gives {solved:.3} dB",
            fwhm * 1e-9,
            step * 1e-6
        ),
    ))
}

pub fn dead_layer(mode: &ModeSolution) -> Outcome {
    let d = dead_layer_bound(mode, reference::DEAD_LAYER_HEADROOM).map_err(|e| e.to_string())?;
    Ok(((12.0..=24.0).contains(&d), format!("dead-layer bound = {d:.2} nm")))
}

pub fn isd_arithmetic(cfg: &RunConfig) -> Outcome {
    let b = isd_broadening(reference::ISD_COEFFICIENT_HZ_CM3, reference::EXCITATION_DENSITY_PER_CM3);
    let spec = crate::ensemble::IonEnsembleSpec { lineshape: crate::ensemble::Lineshape::Gaussian, ..cfg.ensemble.clone() };
    let rho = excitation_density(&spec, 1e6, false).per_cm3;
    Ok((b == 4800.0 && (3e14..=5e14).contains(&rho), format!("ISD = {b} Hz, excitation density = {rho:.3e} cm^-3")))
}

pub fn coherence_arithmetic() -> Outcome {
    let g = 1.0 / (std::f64::consts::PI * reference::T2_S);
    Ok((g.round() == 4547.0 && (4200.0..=4800.0).contains(&g), format!("1/(pi T2) = {g:.2} Hz")))
}

pub fn echo_simulation(cfg: &RunConfig, mode: &ModeSolution) -> Outcome {
    let spec = &cfg.ensemble;
    let t = &cfg.sequence.template;
    let grid = grid_for(cfg);
    let mut details = Vec::new();
    let mut ok = true;
    for tau in [20e-6, 40e-6, 80e-6] {
        let seq = t.two_pulse(tau, RecordWindow::AfterLastPulse { extent_s: 2.0 * tau }).map_err(|e| e.to_string())?;
        let trace = simulate_sequence(spec, mode, &seq, &grid.resolved_for(&seq, spec.t2_s)).map_err(|e| e.to_string())?;
        let peak = trace.dominant_peak().ok_or("no echo peak")?;
        let err = peak.time_s - t.two_pulse_echo_time(tau);
        ok &= err.abs() <= t.record_step_s + 1e-12;
        details.push(format!("{:.0}us:{:+.1}", tau * 1e6, err * 1e6));
    }
    let taus = cfg.sequence.tau_sweep_s.linear();
    let pts = two_pulse_sweep(spec, mode, t, &taus, &grid, t.pi_half_duration_s).map_err(|e| e.to_string())?;
    let peaks: Vec<f64> = pts.iter().map(|p| p.peak_intensity).collect();
    let clean = fit_two_pulse_decay(&taus, &peaks).map_err(|e| e.to_string())?;
    let clean_err = (clean.t2_s - spec.t2_s).abs() / spec.t2_s;
    ok &= clean_err <= 0.02;
    let trials = 200;
    let hits = (0..trials)
        .filter(|&k| {
            let noisy = add_noise(&peaks, 0.02, cfg.seed, 1000 + k);
            fit_two_pulse_decay(&taus, &noisy).is_ok_and(|f| ((f.t2_s - spec.t2_s) / spec.t2_s).abs() <= 0.05)
        })
        .count();
    ok &= hits * 100 >= 95 * trials as usize;
    Ok((
        ok,
        format!(
            "peak offsets [{}] us, noiseless T2 = {:.3} us ({:.2} %), noisy {hits}/{trials} within 5 %",
            details.join(", "),
            clean.t2_s * 1e6,
            100.0 * clean_err
        ),
    ))
}

pub fn propagator_oracle(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let rabi = rng.gen_range(0.0..2.0e6);
        let delta = rng.gen_range(-2.0e6..2.0e6);
        let phase = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let duration = rng.gen_range(0.2e-6..5e-6);
        let pulse = Pulse { detuning_offset_rad_s: 0.0, ..Pulse::new(0.0, duration, rabi, phase) };
        let exact = propagate_pulse(BlochVector::GROUND, &pulse, delta, 1.0);
        let steps = 4000;
        let y = integrate_ode_final(
            bloch_rhs(rabi, phase, delta),
            &BlochVector::GROUND.as_array(),
            (0.0, duration),
            duration / steps as f64,
        )
        .map_err(|e| e.to_string())?;
        for (a, b) in exact.as_array().iter().zip(&y) {
            worst = worst.max((a - b).abs());
        }
    }
    let mut state = BlochVector::GROUND;
    let mut drift: f64 = 0.0;
    for _ in 0..200 {
        let pulse = Pulse::new(0.0, rng.gen_range(0.1e-6..6e-6), rng.gen_range(0.0..1e6), rng.gen_range(0.0..6.3));
        state = propagate_pulse(state, &pulse, rng.gen_range(-1e6..1e6), rng.gen_range(0.2..1.0));
        state = free_evolution(state, rng.gen_range(0.0..1e-4), rng.gen_range(-1e6..1e6), f64::INFINITY);
        drift = drift.max((state.norm() - 1.0).abs());
    }
    Ok((worst <= 1e-6 && drift <= 1e-9, format!("max component error = {worst:.1e}, norm drift = {drift:.1e}")))
}

pub fn stimulated_fit(cfg: &RunConfig) -> Outcome {
    use reference::*;
    let waits = cfg.sequence.storage_sweep_s.logarithmic();
    let f = cfg.ensemble.spin_fraction_fast;
    let clean = stimulated_decay_model(&waits, f, T_FAST_S, 1.0 - f, T_SLOW_S);
    let trials = 200;
    let hits = (0..trials)
        .filter(|&k| {
            let noisy = add_noise(&clean, 0.05, cfg.seed, 5000 + k);
            fit_stimulated_decay(&waits, &noisy).is_ok_and(|fit| (fit.t_fast_s - T_FAST_S).abs() <= 0.5)
        })
        .count();
    Ok((
        hits * 100 >= 90 * trials as usize,
        format!(
            "{hits}/{trials} noisy fits within 0.5 s of {T_FAST_S} s over T = {:.1}..{:.0} s ({} points), fast fraction {f}",
            waits[0],
            waits[waits.len() - 1],
            waits.len()
        ),
    ))
}

fn chip_layout(cfg: &RunConfig) -> Result<ChipLayout, String> {
    match &cfg.chip {
        Some(c) => Ok(c.clone()),
        None => two_device_demo(&cfg.sequence.template, cfg.sequence.tau_s, 112e3, 0.01, 10e6).map_err(|e| e.to_string()),
    }
}

pub fn stark_chip(cfg: &RunConfig, mode: &ModeSolution) -> Outcome {
    let spec = &cfg.ensemble;
    let layout = chip_layout(cfg)?;
    let grid = grid_for(cfg).resolved_for(&layout.sequence, spec.t2_s);
    let gamma = spec.homogeneous_linewidth_hz();
    let chip = simulate_chip(&layout, spec, mode, &grid, gamma).map_err(|e| e.to_string())?;
    let total_peaks = detect_peaks(&chip.times_s, &chip.total_intensity, &layout.sequence);
    let mut own_window = true;
    for (d, trace) in layout.devices.iter().zip(&chip.devices) {
        let [p] = trace.trace.peaks.as_slice() else {
            own_window = false;
            continue;
        };
        let volts = d.timeline.voltage(p.time_s).unwrap_or(f64::NAN);
        own_window &= d.detuning_at_voltage(volts) == layout.laser_offset_hz;
    }
    let resonant_max = chip.total_intensity.iter().copied().fold(0.0, f64::max);

    let mut dark = layout.clone();
    for d in &mut dark.devices {
        let (a, b) = d.timeline.domain();
        d.timeline = VoltageTimeline::new(vec![(a, 0.0), (b, 0.0)]).map_err(|e| e.to_string())?;
    }
    let dark_max = simulate_chip(&dark, spec, mode, &grid, gamma)
        .map_err(|e| e.to_string())?
        .total_intensity
        .into_iter()
        .fold(0.0, f64::max);

    let mut single = layout.clone();
    single.devices.truncate(1);
    let d = &mut single.devices[0];
    let v = d.resonance_voltage();
    let (a, b) = d.timeline.domain();
    d.timeline = VoltageTimeline::new(vec![(a, v), (b, v)]).map_err(|e| e.to_string())?;
    single.laser_offset_hz = 0.0;
    let one = simulate_chip(&single, spec, mode, &grid, gamma).map_err(|e| e.to_string())?;
    let bare = simulate_sequence(spec, mode, &single.sequence, &grid).map_err(|e| e.to_string())?;
    let identical = one.devices[0].trace == bare && one.total_intensity == bare.intensity;

    let ok = total_peaks.len() == 2 && own_window && dark_max < 1e-6 * resonant_max && identical;
    Ok((
        ok,
        format!(
            "{} echoes on the bus at [{}] us, each in its own window: {own_window}, all-detuned/resonant = {:.1e}, single device bit-identical: {identical}",
            total_peaks.len(),
            total_peaks.iter().map(|p| format!("{:.1}", p.time_s * 1e6)).collect::<Vec<_>>().join(", "),
            dark_max / resonant_max
        ),
    ))
}

/// All CSV artifacts of the physics commands.
pub fn generate_artifacts(cfg: &RunConfig) -> Result<CommandOutput, String> {
    let mut cfg = cfg.clone();
    if cfg.chip.is_none() {
        cfg.chip = Some(chip_layout(&cfg)?);
    }
    let overrides = Overrides::default();
    let mut out = CommandOutput::default();
    out.extend(run_modes(&cfg).map_err(|e| e.to_string())?);
    out.extend(run_absorption(&cfg).map_err(|e| e.to_string())?);
    out.extend(run_echo2p(&cfg, &overrides).map_err(|e| e.to_string())?);
    out.extend(run_echo3p(&cfg, &overrides).map_err(|e| e.to_string())?);
    out.extend(run_chip(&cfg).map_err(|e| e.to_string())?);
    Ok(out)
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
    Ok(pool.install(f))
}

pub fn determinism(cfg: &RunConfig) -> Result<(bool, String, CommandOutput), String> {
    let a = in_pool(1, || generate_artifacts(cfg))??;
    let b = in_pool(4, || generate_artifacts(cfg))??;
    let c = in_pool(4, || generate_artifacts(cfg))??;
    let csvs = a.artifacts.iter().filter(|x| x.file_name.ends_with(".csv")).count();
    let same = a.artifacts == b.artifacts && b.artifacts == c.artifacts;
    let bytes: usize = a.artifacts.iter().map(|x| x.contents.len()).sum();
    Ok((same, format!("{csvs} CSVs ({bytes} bytes) identical across runs with 1 and 4 workers: {same}"), a))
}

/// Runs criteria 1 to 11 against `cfg`.
pub fn run_acceptance(cfg: &RunConfig) -> AcceptanceReport {
    let mode = solve_te_fundamental(&cfg.stack);
    let with_mode = |f: &dyn Fn(&ModeSolution) -> Outcome| match &mode {
        Ok(m) => f(m),
        Err(e) => Err(e.to_string()),
    };
    let mut results = vec![
        result(1, "mode solution", mode_solution(cfg)),
        result(2, "oracle equivalence", oracle_equivalence(cfg)),
        result(3, "absorption", with_mode(&|m| absorption(cfg, m))),
        result(4, "dead layer", with_mode(&dead_layer)),
        result(5, "ISD arithmetic", isd_arithmetic(cfg)),
        result(6, "coherence arithmetic", coherence_arithmetic()),
        result(7, "echo simulation", with_mode(&|m| echo_simulation(cfg, m))),
        result(8, "propagator oracle", propagator_oracle(cfg.seed)),
        result(9, "stimulated echo fit", stimulated_fit(cfg)),
        result(10, "Stark chip", with_mode(&|m| stark_chip(cfg, m))),
    ];
    let (r11, artifacts) = match determinism(cfg) {
        Ok((ok, detail, out)) => (CriterionResult { id: 11, title: "determinism", passed: ok, detail }, out),
        Err(e) => (
            CriterionResult { id: 11, title: "determinism", passed: false, detail: format!("error: {e}") },
            CommandOutput::default(),
        ),
    };
    results.push(r11);
    AcceptanceReport { results, artifacts }
}
