//! Rare-earth ion ensemble probed by the evanescent tail of a guided mode.
//!
//! Host-crystal defaults (`cation_density_per_cm3`, `site1_fraction`) come
//! from Y2SiO5 crystallography rather than from any measurement here: 1.83e22
//! yttrium sites per cm^3 split evenly over two crystallographic sites.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveguide::{substrate_decay_length, ModeSolution};

pub const DEFAULT_CATION_DENSITY_PER_CM3: f64 = 1.83e22;
pub const DEFAULT_SITE1_FRACTION: f64 = 0.5;

/// Excitation bandwidths above this fraction of the inhomogeneous width are flagged.
pub const NARROW_BAND_LIMIT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("invalid ensemble parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("frequency grid spans {span_hz:e} Hz, less than 3x the {fwhm_hz:e} Hz linewidth")]
    GridTooNarrow { span_hz: f64, fwhm_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lineshape {
    Gaussian,
    Lorentzian,
}

impl Lineshape {
    /// Area-normalized profile (1/Hz) at offset `nu` from line center.
    pub fn density(self, nu: f64, fwhm: f64) -> f64 {
        match self {
            Lineshape::Gaussian => {
                let x = nu / fwhm;
                self.peak(fwhm) * (-4.0 * LN_2 * x * x).exp()
            }
            Lineshape::Lorentzian => {
                let half = 0.5 * fwhm;
                half / (PI * (nu * nu + half * half))
            }
        }
    }

    /// g(0) for the normalized profile.
    pub fn peak(self, fwhm: f64) -> f64 {
        match self {
            Lineshape::Gaussian => 2.0 / fwhm * (LN_2 / PI).sqrt(),
            Lineshape::Lorentzian => 2.0 / (PI * fwhm),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IonEnsembleSpec {
    /// Dopant fraction of cation sites (0.005 % -> 5e-5).
    pub concentration: f64,
    pub cation_density_per_cm3: f64,
    pub site1_fraction: f64,
    pub inhom_fwhm_hz: f64,
    pub lineshape: Lineshape,
    /// Line center relative to the laser reference, Hz.
    pub center_offset_hz: f64,
    /// Bulk line-center absorption for the probed polarization, dB/mm.
    pub bulk_absorption_db_per_mm: f64,
    /// Optical coherence time, s. `f64::INFINITY` disables dephasing.
    pub t2_s: f64,
    pub spin_lifetime_fast_s: f64,
    pub spin_lifetime_slow_s: f64,
    /// Share of the spin grating held by the short-lived states.
    pub spin_fraction_fast: f64,
    pub isd_coefficient_hz_cm3: f64,
}

impl IonEnsembleSpec {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        let positive = |field: &'static str, v: f64| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(EnsembleError::InvalidParameter { field, reason: format!("{v} must be > 0") })
            }
        };
        let finite_positive = |field: &'static str, v: f64| {
            positive(field, v)?;
            if v.is_finite() {
                Ok(())
            } else {
                Err(EnsembleError::InvalidParameter { field, reason: "must be finite".into() })
            }
        };
        let fraction = |field: &'static str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(EnsembleError::InvalidParameter { field, reason: format!("{v} must lie in (0, 1]") })
            }
        };
        fraction("concentration", self.concentration)?;
        finite_positive("cation_density_per_cm3", self.cation_density_per_cm3)?;
        fraction("site1_fraction", self.site1_fraction)?;
        finite_positive("inhom_fwhm_hz", self.inhom_fwhm_hz)?;
        if !self.center_offset_hz.is_finite() {
            return Err(EnsembleError::InvalidParameter {
                field: "center_offset_hz",
                reason: "must be finite".into(),
            });
        }
        finite_positive("bulk_absorption_db_per_mm", self.bulk_absorption_db_per_mm)?;
        positive("t2_s", self.t2_s)?;
        positive("spin_lifetime_fast_s", self.spin_lifetime_fast_s)?;
        positive("spin_lifetime_slow_s", self.spin_lifetime_slow_s)?;
        fraction("spin_fraction_fast", self.spin_fraction_fast)?;
        finite_positive("isd_coefficient_hz_cm3", self.isd_coefficient_hz_cm3)?;
        Ok(())
    }

    /// Normalized lineshape at laser-frame frequency `nu` (Hz).
    pub fn lineshape_density(&self, nu: f64) -> f64 {
        self.lineshape.density(nu - self.center_offset_hz, self.inhom_fwhm_hz)
    }

    /// Fraction of the stored spin grating that survives a wait of `t` seconds.
    pub fn spin_survival(&self, t: f64) -> f64 {
        let f = self.spin_fraction_fast;
        f * (-t / self.spin_lifetime_fast_s).exp() + (1.0 - f) * (-t / self.spin_lifetime_slow_s).exp()
    }

    /// Homogeneous linewidth `1 / (pi T2)`, Hz.
    pub fn homogeneous_linewidth_hz(&self) -> f64 {
        1.0 / (PI * self.t2_s)
    }
}

/// Bulk absorption (dB/mm) that reproduces a measured waveguide peak.
pub fn bulk_absorption_from_peak(peak_db: f64, length_mm: f64, substrate_fraction: f64) -> f64 {
    peak_db / (length_mm * substrate_fraction)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionSpectrum {
    pub frequencies_hz: Vec<f64>,
    pub attenuation_db: Vec<f64>,
    pub interaction_length_mm: f64,
    pub substrate_power_fraction: f64,
}

impl AbsorptionSpectrum {
    /// (frequency, attenuation) of the largest sample.
    pub fn peak(&self) -> (f64, f64) {
        self.frequencies_hz
            .iter()
            .zip(&self.attenuation_db)
            .fold((f64::NAN, f64::NEG_INFINITY), |best, (&f, &a)| if a > best.1 { (f, a) } else { best })
    }

    /// Full width at half maximum from linearly interpolated half-power crossings.
    /// `None` if either crossing lies outside the grid or the spectrum is flat zero.
    pub fn fwhm(&self) -> Option<f64> {
        let (_, peak) = self.peak();
        if !(peak > 0.0) {
            return None;
        }
        let half = 0.5 * peak;
        let a = &self.attenuation_db;
        let f = &self.frequencies_hz;
        let imax = a.iter().position(|&v| v == peak)?;
        let left = (0..imax).rev().find(|&i| a[i] < half)?;
        let right = (imax + 1..a.len()).find(|&i| a[i] < half)?;
        let cross = |i: usize, j: usize| f[i] + (half - a[i]) * (f[j] - f[i]) / (a[j] - a[i]);
        Some(cross(right - 1, right) - cross(left, left + 1))
    }

    pub fn grid_step_hz(&self) -> f64 {
        match self.frequencies_hz.as_slice() {
            [a, b, ..] => (b - a).abs(),
            _ => f64::NAN,
        }
    }
}

/// Waveguide attenuation spectrum for a given substrate power fraction:
/// `bulk * g(nu) / g(center) * fraction * length`, in dB.
pub fn absorption_spectrum_for_fraction(
    spec: &IonEnsembleSpec,
    substrate_fraction: f64,
    length_mm: f64,
    grid_hz: &[f64],
) -> Result<AbsorptionSpectrum, EnsembleError> {
    if !(length_mm > 0.0 && length_mm.is_finite()) {
        return Err(EnsembleError::InvalidParameter {
            field: "interaction_length_mm",
            reason: format!("{length_mm} must be > 0"),
        });
    }
    if !(0.0..=1.0).contains(&substrate_fraction) {
        return Err(EnsembleError::InvalidParameter {
            field: "substrate_fraction",
            reason: format!("{substrate_fraction} must lie in [0, 1]"),
        });
    }
    let (lo, hi) = grid_hz
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if grid_hz.is_empty() { 0.0 } else { hi - lo };
    if !(span >= 3.0 * spec.inhom_fwhm_hz) {
        return Err(EnsembleError::GridTooNarrow { span_hz: span, fwhm_hz: spec.inhom_fwhm_hz });
    }
    let peak_density = spec.lineshape.peak(spec.inhom_fwhm_hz);
    let scale = spec.bulk_absorption_db_per_mm * substrate_fraction * length_mm;
    let attenuation_db = grid_hz.iter().map(|&nu| scale * spec.lineshape_density(nu) / peak_density).collect();
    Ok(AbsorptionSpectrum {
        frequencies_hz: grid_hz.to_vec(),
        attenuation_db,
        interaction_length_mm: length_mm,
        substrate_power_fraction: substrate_fraction,
    })
}

/// [`absorption_spectrum_for_fraction`] with the substrate fraction of `mode`.
pub fn absorption_spectrum(
    spec: &IonEnsembleSpec,
    mode: &ModeSolution,
    length_mm: f64,
    grid_hz: &[f64],
) -> Result<AbsorptionSpectrum, EnsembleError> {
    absorption_spectrum_for_fraction(spec, mode.power_fractions.substrate, length_mm, grid_hz)
}

/// Intensity e^-1 depth in the substrate, nm (half the field decay length).
pub fn intensity_decay_depth_nm(mode: &ModeSolution) -> f64 {
    0.5 * substrate_decay_length(mode).nm
}

/// Deepest surface layer of dark ions (step model) compatible with an
/// absorption deficit of `relative_headroom`: `-d_I ln(1 - headroom)`.
pub fn dead_layer_bound(mode: &ModeSolution, relative_headroom: f64) -> Result<f64, EnsembleError> {
    dead_layer_depth(intensity_decay_depth_nm(mode), relative_headroom)
}

pub fn dead_layer_depth(intensity_depth_nm: f64, relative_headroom: f64) -> Result<f64, EnsembleError> {
    if !(relative_headroom > 0.0 && relative_headroom < 1.0) {
        return Err(EnsembleError::InvalidParameter {
            field: "relative_headroom",
            reason: format!("{relative_headroom} must lie in (0, 1)"),
        });
    }
    Ok(-intensity_depth_nm * (-relative_headroom).ln_1p())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitationDensity {
    pub per_cm3: f64,
    /// Set when the bandwidth exceeds [`NARROW_BAND_LIMIT`] of the inhomogeneous width.
    pub wide_band_warning: bool,
}

/// Density of ions excited within `bandwidth_hz` at line center,
/// `concentration * cation_density * (site fraction) * g(0) * bandwidth`.
pub fn excitation_density(spec: &IonEnsembleSpec, bandwidth_hz: f64, apply_site_fraction: bool) -> ExcitationDensity {
    let site = if apply_site_fraction { spec.site1_fraction } else { 1.0 };
    let g0 = spec.lineshape.peak(spec.inhom_fwhm_hz);
    ExcitationDensity {
        per_cm3: spec.concentration * spec.cation_density_per_cm3 * site * g0 * bandwidth_hz,
        wide_band_warning: bandwidth_hz > NARROW_BAND_LIMIT * spec.inhom_fwhm_hz,
    }
}

/// Instantaneous-spectral-diffusion broadening, Hz.
pub fn isd_broadening(isd_coefficient_hz_cm3: f64, excitation_density_per_cm3: f64) -> f64 {
    isd_coefficient_hz_cm3 * excitation_density_per_cm3
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthBin {
    /// Mass centroid of the bin below the film/substrate interface, nm.
    pub depth_nm: f64,
    pub weight: f64,
}

/// Splits the substrate intensity profile `exp(-z / d_I)` into `n_bins`
/// equal-mass bins.
pub fn depth_weights(mode: &ModeSolution, n_bins: usize) -> Vec<DepthBin> {
    depth_bins(intensity_decay_depth_nm(mode), n_bins)
}

pub fn depth_bins(intensity_depth_nm: f64, n_bins: usize) -> Vec<DepthBin> {
    let n = n_bins.max(1);
    let d = intensity_depth_nm;
    let weight = 1.0 / n as f64;
    (0..n)
        .map(|k| {
            // Mass above z is 1 - exp(-z/d); bin k covers mass [k/n, (k+1)/n).
            let a = -d * (-(k as f64) / n as f64).ln_1p();
            let ea = 1.0 - k as f64 / n as f64;
            let depth_nm = if k + 1 == n {
                a + d
            } else {
                let eb = 1.0 - (k + 1) as f64 / n as f64;
                let b = -d * eb.ln();
                d + (a * ea - b * eb) / (ea - eb)
            };
            DepthBin { depth_nm, weight }
        })
        .collect()
}

/// Rabi-frequency reduction at `depth_nm` below the interface: the field
/// factor `exp(-z / (2 d_I))`.
pub fn rabi_depth_scale(depth_nm: f64, intensity_depth_nm: f64) -> f64 {
    (-depth_nm / (2.0 * intensity_depth_nm)).exp()
}

pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![start],
        _ => (0..count).map(|i| start + (stop - start) * i as f64 / (count - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveguide::{solve_te_fundamental, LayerStack};

    pub(crate) fn reference_spec() -> IonEnsembleSpec {
        IonEnsembleSpec {
            concentration: 5e-5,
            cation_density_per_cm3: DEFAULT_CATION_DENSITY_PER_CM3,
            site1_fraction: DEFAULT_SITE1_FRACTION,
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

    fn reference_mode() -> ModeSolution {
        solve_te_fundamental(&LayerStack::slab(1.0, 2.05, 400.0, 1.806, 605.977).unwrap()).unwrap()
    }

    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn lineshapes_are_normalized() {
        let fwhm = 2e9;
        let g = simpson(|nu| Lineshape::Gaussian.density(nu, fwhm), -10.0 * fwhm, 10.0 * fwhm, 20_000);
        assert!((g - 1.0).abs() < 1e-6, "{g}");
        // Lorentzian tails are heavy; integrate over the whole line via nu = (fwhm/2) tan(theta).
        let half = 0.5 * fwhm;
        let l = simpson(
            |t| {
                let c = t.cos();
                if c == 0.0 {
                    return 0.0;
                }
                Lineshape::Lorentzian.density(half * t.tan(), fwhm) * half / (c * c)
            },
            -PI / 2.0,
            PI / 2.0,
            20_000,
        );
        assert!((l - 1.0).abs() < 1e-9, "{l}");
    }

    #[test]
    fn peak_ratio_lorentzian_to_gaussian() {
        let r = Lineshape::Lorentzian.peak(2e9) / Lineshape::Gaussian.peak(2e9);
        let expected = (2.0 / PI) / (2.0 * (LN_2 / PI).sqrt());
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 0.6777).abs() < 1e-4);
    }

    #[test]
    fn absorption_calibration() {
        let spec = reference_spec();
        assert!((spec.bulk_absorption_db_per_mm - 7.8125).abs() < 1e-12);
        let grid = linspace(-10e9, 10e9, 2001);
        let s = absorption_spectrum_for_fraction(&spec, 0.072, 4.0, &grid).unwrap();
        let (f, peak) = s.peak();
        assert_eq!(f, 0.0);
        assert!((peak - 2.25).abs() < 1e-12);
        let fwhm = s.fwhm().unwrap();
        assert!((fwhm - 2e9).abs() <= s.grid_step_hz(), "{fwhm}");
        assert!(s.attenuation_db.iter().all(|&a| a >= 0.0));
    }

    #[test]
    fn zero_overlap_gives_zero_absorption() {
        let grid = linspace(-10e9, 10e9, 201);
        let s = absorption_spectrum_for_fraction(&reference_spec(), 0.0, 4.0, &grid).unwrap();
        assert!(s.attenuation_db.iter().all(|&a| a == 0.0));
        assert_eq!(s.fwhm(), None);
    }

    #[test]
    fn narrow_grid_rejected() {
        let grid = linspace(-2e9, 2e9, 101);
        assert!(matches!(
            absorption_spectrum(&reference_spec(), &reference_mode(), 4.0, &grid),
            Err(EnsembleError::GridTooNarrow { .. })
        ));
    }

    #[test]
    fn dead_layer_examples() {
        assert!((dead_layer_depth(65.0, 0.25).unwrap() - 18.7).abs() < 0.01);
        assert!(dead_layer_depth(65.0, 1e-12).unwrap() < 1e-9);
        assert!(dead_layer_depth(65.0, 0.0).is_err());
        assert!(dead_layer_depth(65.0, 1.0).is_err());
        let d = dead_layer_bound(&reference_mode(), 0.25).unwrap();
        assert!((12.0..=24.0).contains(&d), "{d}");
    }

    #[test]
    fn dead_layer_matches_quadrature_and_bisection() {
        let d_i = intensity_decay_depth_nm(&reference_mode());
        let headroom = 0.25;
        // Fraction of the absorbing intensity integral lying above depth delta.
        let dark_fraction = |delta: f64| {
            let total = simpson(|z| (-z / d_i).exp(), 0.0, 60.0 * d_i, 200_000);
            simpson(|z| (-z / d_i).exp(), 0.0, delta, 20_000) / total
        };
        let (mut lo, mut hi) = (0.0, 10.0 * d_i);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if dark_fraction(mid) < headroom {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let closed = dead_layer_depth(d_i, headroom).unwrap();
        assert!((0.5 * (lo + hi) - closed).abs() < 1e-6, "{} vs {closed}", 0.5 * (lo + hi));
    }

    #[test]
    fn excitation_density_examples() {
        let spec = reference_spec();
        let rho = excitation_density(&spec, 1e6, false);
        assert!((rho.per_cm3 - 4.3e14).abs() < 0.05e14, "{}", rho.per_cm3);
        assert!(!rho.wide_band_warning);
        assert_eq!(excitation_density(&spec, 0.0, false).per_cm3, 0.0);
        let half = excitation_density(&spec, 1e6, true);
        assert!((half.per_cm3 / rho.per_cm3 - 0.5).abs() < 1e-12);
        assert!(excitation_density(&spec, 0.5e9, false).wide_band_warning);
        let lor = IonEnsembleSpec { lineshape: Lineshape::Lorentzian, ..spec };
        let ratio = excitation_density(&lor, 1e6, false).per_cm3 / rho.per_cm3;
        assert!((ratio - 0.6777).abs() < 1e-4);
    }

    #[test]
    fn isd_examples() {
        assert_eq!(isd_broadening(1.2e-11, 4e14), 4800.0);
        assert_eq!(isd_broadening(3.0, 0.0), 0.0);
        assert_eq!(isd_broadening(1.2e-11, 8e14), 2.0 * isd_broadening(1.2e-11, 4e14));
    }

    #[test]
    fn depth_bins_examples() {
        let one = depth_bins(60.0, 1);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].weight, 1.0);
        assert!((one[0].depth_nm - 60.0).abs() < 1e-12);
        for n in [1, 2, 7, 64, 500] {
            let sum: f64 = depth_bins(60.0, n).iter().map(|b| b.weight).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let bins = depth_bins(60.0, 64);
        assert!(bins.windows(2).all(|w| w[0].depth_nm < w[1].depth_nm));
    }

    #[test]
    fn depth_bins_reproduce_continuous_averages() {
        let d = intensity_decay_depth_nm(&reference_mode());
        let bins = depth_weights(&reference_mode(), 64);
        // Continuous averages over the normalized profile exp(-z/d)/d.
        let intensity_factor: f64 = bins.iter().map(|b| b.weight * (-b.depth_nm / d).exp()).sum();
        let exact = simpson(|z| (-z / d).exp() * (-z / d).exp() / d, 0.0, 80.0 * d, 400_000);
        assert!((intensity_factor - exact).abs() < 1e-4, "{intensity_factor} vs {exact}");
        let rabi: f64 = bins.iter().map(|b| b.weight * rabi_depth_scale(b.depth_nm, d)).sum();
        let exact_rabi = simpson(|z| (-z / d).exp() * rabi_depth_scale(z, d) / d, 0.0, 80.0 * d, 400_000);
        assert!((rabi - exact_rabi).abs() < 2e-4, "{rabi} vs {exact_rabi}");
    }

    #[test]
    fn spec_validation() {
        assert!(reference_spec().validate().is_ok());
        let bad = IonEnsembleSpec { inhom_fwhm_hz: -1.0, ..reference_spec() };
        assert!(bad.validate().is_err());
        let bad = IonEnsembleSpec { spin_fraction_fast: 1.5, ..reference_spec() };
        assert!(bad.validate().is_err());
        let ok = IonEnsembleSpec { t2_s: f64::INFINITY, ..reference_spec() };
        assert!(ok.validate().is_ok());
        assert!((reference_spec().homogeneous_linewidth_hz() - 4547.28).abs() < 0.01);
    }

    proptest::proptest! {
        #[test]
        fn absorption_is_linear(len in 0.1f64..20.0, frac in 0.001f64..0.5, k in 0.1f64..5.0) {
            let spec = reference_spec();
            let grid = linspace(-8e9, 8e9, 81);
            let a = absorption_spectrum_for_fraction(&spec, frac, len, &grid).unwrap();
            let b = absorption_spectrum_for_fraction(&spec, frac, len * k, &grid).unwrap();
            let c = absorption_spectrum_for_fraction(&spec, (frac * k).min(1.0), len, &grid).unwrap();
            let kf = (frac * k).min(1.0) / frac;
            for i in 0..grid.len() {
                proptest::prop_assert!((b.attenuation_db[i] - k * a.attenuation_db[i]).abs() <= 1e-12 * (1.0 + b.attenuation_db[i]));
                proptest::prop_assert!((c.attenuation_db[i] - kf * a.attenuation_db[i]).abs() <= 1e-12 * (1.0 + c.attenuation_db[i]));
            }
        }

        #[test]
        fn dead_layer_monotone(h1 in 0.001f64..0.998, dh in 1e-6f64..0.001) {
            let a = dead_layer_depth(60.0, h1).unwrap();
            let b = dead_layer_depth(60.0, h1 + dh).unwrap();
            proptest::prop_assert!(b > a);
        }

        #[test]
        fn excitation_density_linear(bw in 1.0f64..1e7, c in 1e-6f64..1e-2, k in 0.1f64..10.0) {
            let spec = IonEnsembleSpec { concentration: c, ..reference_spec() };
            let base = excitation_density(&spec, bw, false).per_cm3;
            let wider = excitation_density(&spec, bw * k, false).per_cm3;
            let denser = excitation_density(&IonEnsembleSpec { concentration: (c * k).min(1.0), ..spec.clone() }, bw, false).per_cm3;
            proptest::prop_assert!((wider / base - k).abs() < 1e-9 * k);
            proptest::prop_assert!((denser / base - (c * k).min(1.0) / c).abs() < 1e-9 * k);
        }
    }
}
