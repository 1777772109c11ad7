use std::path::PathBuf;

use echoguide::config::{load_config, parse_config, ConfigError, RunConfig, Sweep};
use echoguide::dynamics::fit_two_pulse_decay;
use echoguide::runner::{run_chip, run_echo2p, run_echo3p, run_modes, write_artifacts, Overrides, RunError};

fn shipped() -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../paper.cfg");
    load_config(&path).expect("shipped config loads").config
}

fn column(csv_text: &str, index: usize) -> Vec<f64> {
    csv_text.lines().skip(1).map(|l| l.split(',').nth(index).unwrap().parse().unwrap()).collect()
}

#[test]
fn modes_csv_has_fundamental_row() {
    let out = run_modes(&shipped()).unwrap();
    let text = &out.find("modes.csv").unwrap().contents;
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "mode_index,n_eff,kappa_film_per_um,gamma_cover_per_um,gamma_sub_per_um,frac_cover,frac_film,frac_sub,decay_len_nm"
    );
    let frac_sub = column(text, 7)[0];
    assert!((0.05..=0.09).contains(&frac_sub), "{frac_sub}");
}

#[test]
fn echo2p_decay_refits_configured_t2() {
    let cfg = shipped();
    let overrides = Overrides { tau_sweep_us: Some(Sweep::new(10.0, 150.0, 20).unwrap()), ..Overrides::default() };
    let out = run_echo2p(&cfg, &overrides).unwrap();
    let decay = &out.find("echo2p_decay.csv").unwrap().contents;
    let taus: Vec<f64> = column(decay, 0).iter().map(|t| t * 1e-6).collect();
    let peaks = column(decay, 1);
    assert_eq!(taus.len(), 20);
    let fit = fit_two_pulse_decay(&taus, &peaks).unwrap();
    assert!((fit.t2_s / cfg.ensemble.t2_s - 1.0).abs() < 0.01, "{}", fit.t2_s);
}

#[test]
fn echo3p_recovers_fast_lifetime_without_noise() {
    let cfg = shipped();
    let out = run_echo3p(&cfg, &Overrides::default()).unwrap();
    let fit = &out.find("echo3p_fit.csv").unwrap().contents;
    let t_fast = column(fit, 0)[0];
    assert!((t_fast / cfg.ensemble.spin_lifetime_fast_s - 1.0).abs() < 1e-3, "{t_fast}");
}

#[test]
fn noise_is_seeded() {
    let cfg = shipped();
    let noisy = Overrides { noise_fraction: Some(0.05), ..Overrides::default() };
    let a = run_echo2p(&cfg, &noisy).unwrap();
    let b = run_echo2p(&cfg, &noisy).unwrap();
    assert_eq!(a.artifacts, b.artifacts);
    let mut other = cfg.clone();
    other.seed += 1;
    let c = run_echo2p(&other, &noisy).unwrap();
    assert_ne!(a.find("echo2p_decay.csv"), c.find("echo2p_decay.csv"));
}

#[test]
fn outputs_match_across_pool_sizes() {
    let cfg = shipped();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_chip(&cfg).unwrap())
    };
    assert_eq!(run(1).artifacts, run(3).artifacts);
}

#[test]
fn chip_requires_stark_table() {
    let mut cfg = shipped();
    cfg.chip = None;
    assert!(matches!(run_chip(&cfg), Err(RunError::Config(_))));
}

#[test]
fn artifacts_land_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_modes(&shipped()).unwrap();
    write_artifacts(dir.path(), &out).unwrap();
    for a in &out.artifacts {
        assert_eq!(std::fs::read_to_string(dir.path().join(&a.file_name)).unwrap(), a.contents);
    }
}

#[test]
fn config_errors_are_located() {
    let text = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../paper.cfg")).unwrap();
    let broken = text.replacen("seed = ", "seed = \"x", 1);
    assert!(matches!(parse_config(&broken), Err(ConfigError::Parse { .. })));
    let unknown = format!("{text}\n[extra]\nfoo = 1\n");
    match parse_config(&unknown) {
        Err(ConfigError::Parse { line, .. }) => assert!(line > text.lines().count()),
        other => panic!("{other:?}"),
    }
    let missing = load_config(std::path::Path::new("/nonexistent/run.cfg"));
    assert!(matches!(missing, Err(ConfigError::Io { .. })));
}
