//! Guided TE modes of planar dielectric stacks.
//!
//! Geometry: the cover occupies `z < 0`, films follow in order starting at
//! `z = 0` and the substrate fills everything below the last film. Lengths are
//! in nm and transverse wavenumbers are reported in 1/µm.
//!
//! The film index that sets up the reference stack (2.05) is treated as the
//! bulk refractive index of the film. It cannot be the effective index of the
//! guided mode, which must lie below the film index.

use std::f64::consts::PI;

use thiserror::Error;

use crate::numerics::{find_root_bracketed, Bracket, NumericsError};

/// Spacing of the coarse effective-index scan used to bracket mode roots.
pub const SCAN_STEP: f64 = 1e-4;
/// Brent tolerance on the effective index.
pub const NEFF_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveguideError {
    #[error("invalid layer stack: {0}")]
    InvalidStack(String),
    #[error("no guided mode: highest film index {film_index} does not exceed cladding index {cladding_index}")]
    NoGuidedMode { film_index: f64, cladding_index: f64 },
    #[error("film thickness {thickness_nm} nm is below the cutoff thickness {cutoff_nm} nm of TE mode {mode_index}")]
    Degenerate { mode_index: usize, thickness_nm: f64, cutoff_nm: f64 },
    #[error("TE mode {0} is not guided by this stack")]
    ModeNotFound(usize),
    #[error("no propagating solution: {0}")]
    NoSolution(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Film {
    pub index: f64,
    pub thickness_nm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub cover_index: f64,
    pub films: Vec<Film>,
    pub substrate_index: f64,
    pub wavelength_nm: f64,
}

impl LayerStack {
    /// Checks indices, thicknesses and wavelength. Whether the stack can guide
    /// anything is checked separately by [`LayerStack::check_guiding`].
    pub fn new(
        cover_index: f64,
        films: Vec<Film>,
        substrate_index: f64,
        wavelength_nm: f64,
    ) -> Result<Self, WaveguideError> {
        let stack = Self { cover_index, films, substrate_index, wavelength_nm };
        stack.check_basic()?;
        Ok(stack)
    }

    /// Single film between cover and substrate.
    pub fn slab(
        cover_index: f64,
        film_index: f64,
        thickness_nm: f64,
        substrate_index: f64,
        wavelength_nm: f64,
    ) -> Result<Self, WaveguideError> {
        Self::new(
            cover_index,
            vec![Film { index: film_index, thickness_nm }],
            substrate_index,
            wavelength_nm,
        )
    }

    fn check_basic(&self) -> Result<(), WaveguideError> {
        let bad = |msg: String| Err(WaveguideError::InvalidStack(msg));
        if self.films.is_empty() {
            return bad("at least one film is required".into());
        }
        for (name, n) in [("cover", self.cover_index), ("substrate", self.substrate_index)] {
            if !(n >= 1.0 && n.is_finite()) {
                return bad(format!("{name} index {n} must be >= 1"));
            }
        }
        for (i, film) in self.films.iter().enumerate() {
            if !(film.index >= 1.0 && film.index.is_finite()) {
                return bad(format!("film {i} index {} must be >= 1", film.index));
            }
            if !(film.thickness_nm > 0.0 && film.thickness_nm.is_finite()) {
                return bad(format!("film {i} thickness {} nm must be > 0", film.thickness_nm));
            }
        }
        if !(self.wavelength_nm > 0.0 && self.wavelength_nm.is_finite()) {
            return bad(format!("wavelength {} nm must be > 0", self.wavelength_nm));
        }
        Ok(())
    }

    pub fn cladding_index(&self) -> f64 {
        self.cover_index.max(self.substrate_index)
    }

    pub fn max_film_index(&self) -> f64 {
        self.films.iter().map(|f| f.index).fold(f64::MIN, f64::max)
    }

    pub fn total_thickness_nm(&self) -> f64 {
        self.films.iter().map(|f| f.thickness_nm).sum()
    }

    /// At least one film must have a higher index than both claddings.
    pub fn check_guiding(&self) -> Result<(), WaveguideError> {
        self.check_basic()?;
        if self.max_film_index() <= self.cladding_index() {
            return Err(WaveguideError::NoGuidedMode {
                film_index: self.max_film_index(),
                cladding_index: self.cladding_index(),
            });
        }
        Ok(())
    }

    /// Vacuum wavenumber in 1/nm.
    pub fn k0(&self) -> f64 {
        2.0 * PI / self.wavelength_nm
    }

    /// TE dispersion residual for a single-film stack,
    /// `kappa d - atan(gamma_s / kappa) - atan(gamma_c / kappa) - m pi`.
    /// Multi-film stacks fall back to [`LayerStack::transfer_residual`].
    pub fn dispersion_residual(&self, n_eff: f64, mode_index: usize) -> f64 {
        if let [film] = self.films.as_slice() {
            let k0 = self.k0();
            let kappa = k0 * (film.index * film.index - n_eff * n_eff).sqrt();
            let gs = k0 * (n_eff * n_eff - self.substrate_index * self.substrate_index).sqrt();
            let gc = k0 * (n_eff * n_eff - self.cover_index * self.cover_index).sqrt();
            kappa * film.thickness_nm - (gs / kappa).atan() - (gc / kappa).atan() - mode_index as f64 * PI
        } else {
            self.transfer_residual(n_eff)
        }
    }

    /// Launches `E = 1, E' = gamma_c` at the cover interface, propagates through
    /// the films and returns `E' + gamma_s E` at the substrate interface,
    /// normalized by the field magnitude. Zero exactly at guided modes.
    pub fn transfer_residual(&self, n_eff: f64) -> f64 {
        let k0 = self.k0();
        let gc = k0 * (n_eff * n_eff - self.cover_index * self.cover_index).sqrt();
        let gs = k0 * (n_eff * n_eff - self.substrate_index * self.substrate_index).sqrt();
        let (mut e, mut de) = (1.0, gc);
        for film in &self.films {
            let layer = LayerKind::new(film.index, n_eff, k0);
            let (e1, de1) = layer.propagate(e, de, film.thickness_nm);
            let scale = e1.abs().max(de1.abs() / k0).max(f64::MIN_POSITIVE);
            e = e1 / scale;
            de = de1 / scale;
        }
        (de + gs * e) / k0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarization {
    Te,
    /// Not solved yet; kept so mode records carry an explicit tag.
    Tm,
}

/// Field shape inside one film.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerProfile {
    /// `E = amplitude * cos(kappa (z - z_top) - phase)`; kappa in 1/nm.
    Oscillatory { amplitude: f64, phase: f64, kappa: f64 },
    /// `E = e_top cosh(g s) + de_top sinh(g s) / g` with `s = z - z_top`; g in 1/nm.
    Evanescent { e_top: f64, de_top: f64, gamma: f64 },
}

#[derive(Debug, Clone, Copy)]
enum LayerKind {
    Osc(f64),
    Eva(f64),
}

impl LayerKind {
    fn new(n: f64, n_eff: f64, k0: f64) -> Self {
        if n > n_eff {
            LayerKind::Osc(k0 * (n * n - n_eff * n_eff).sqrt())
        } else {
            LayerKind::Eva(k0 * (n_eff * n_eff - n * n).sqrt())
        }
    }

    fn propagate(self, e: f64, de: f64, d: f64) -> (f64, f64) {
        match self {
            LayerKind::Osc(k) => {
                let (s, c) = (k * d).sin_cos();
                (e * c + de * s / k, -e * k * s + de * c)
            }
            LayerKind::Eva(0.0) => (e + de * d, de),
            LayerKind::Eva(g) => {
                let (s, c) = ((g * d).sinh(), (g * d).cosh());
                (e * c + de * s / g, e * g * s + de * c)
            }
        }
    }

    fn profile(self, e: f64, de: f64) -> LayerProfile {
        match self {
            LayerKind::Osc(k) => {
                let amplitude = (e * e + (de / k) * (de / k)).sqrt();
                let phase = (de / k).atan2(e);
                LayerProfile::Oscillatory { amplitude, phase, kappa: k }
            }
            LayerKind::Eva(g) => LayerProfile::Evanescent { e_top: e, de_top: de, gamma: g },
        }
    }
}

impl LayerProfile {
    fn value(&self, s: f64) -> f64 {
        match *self {
            LayerProfile::Oscillatory { amplitude, phase, kappa } => amplitude * (kappa * s - phase).cos(),
            LayerProfile::Evanescent { e_top, de_top, gamma } => {
                if gamma == 0.0 {
                    e_top + de_top * s
                } else {
                    e_top * (gamma * s).cosh() + de_top * (gamma * s).sinh() / gamma
                }
            }
        }
    }

    fn derivative(&self, s: f64) -> f64 {
        match *self {
            LayerProfile::Oscillatory { amplitude, phase, kappa } => -amplitude * kappa * (kappa * s - phase).sin(),
            LayerProfile::Evanescent { e_top, de_top, gamma } => {
                e_top * gamma * (gamma * s).sinh() + de_top * (gamma * s).cosh()
            }
        }
    }

    fn max_abs(&self, d: f64) -> f64 {
        let mut best = self.value(0.0).abs().max(self.value(d).abs());
        if let LayerProfile::Oscillatory { amplitude, phase, kappa } = *self {
            // Extrema where kappa s - phase is a multiple of pi.
            let k = (-phase / PI).ceil();
            if (k * PI + phase) / kappa <= d {
                best = best.max(amplitude);
            }
        }
        best
    }

    /// Integral of `E^2` over `[0, d]`.
    fn power(&self, d: f64) -> f64 {
        match *self {
            LayerProfile::Oscillatory { amplitude, phase, kappa } => {
                0.5 * amplitude * amplitude
                    * (d + ((2.0 * (kappa * d - phase)).sin() + (2.0 * phase).sin()) / (2.0 * kappa))
            }
            LayerProfile::Evanescent { e_top, de_top, gamma } => {
                if gamma == 0.0 {
                    return e_top * e_top * d + e_top * de_top * d * d + de_top * de_top * d * d * d / 3.0;
                }
                let s2 = (2.0 * gamma * d).sinh() / (4.0 * gamma);
                let cosh2 = 0.5 * d + s2;
                let sinh2 = -0.5 * d + s2;
                let cross = ((2.0 * gamma * d).cosh() - 1.0) / (4.0 * gamma);
                e_top * e_top * cosh2 + 2.0 * e_top * de_top / gamma * cross + de_top * de_top / (gamma * gamma) * sinh2
            }
        }
    }
}

/// Fraction of guided power in each region.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFractions {
    pub cover: f64,
    /// One entry per film.
    pub films: Vec<f64>,
    pub substrate: f64,
}

impl PowerFractions {
    pub fn film_total(&self) -> f64 {
        self.films.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSolution {
    pub mode_index: usize,
    pub polarization: Polarization,
    pub n_eff: f64,
    pub stack: LayerStack,
    /// Transverse wavenumber in the highest-index film, 1/µm.
    pub kappa_film: f64,
    /// Cover decay constant, 1/µm.
    pub gamma_cover: f64,
    /// Substrate decay constant, 1/µm.
    pub gamma_substrate: f64,
    /// Field at the cover side of the first interface (normalized).
    pub cover_amplitude: f64,
    /// Field at the last film / substrate interface (normalized).
    pub substrate_amplitude: f64,
    pub profile_coefficients: Vec<LayerProfile>,
    pub power_fractions: PowerFractions,
    /// Field e^-1 depth in the substrate, nm.
    pub substrate_decay_length: f64,
}

/// Substrate decay length with a flag for modes that sit close to cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayLength {
    pub nm: f64,
    pub near_cutoff: bool,
}

/// Decay lengths longer than this many wavelengths are flagged as near cutoff.
pub const CUTOFF_WARNING_WAVELENGTHS: f64 = 10.0;

/// m = 0 TE mode.
pub fn solve_te_fundamental(stack: &LayerStack) -> Result<ModeSolution, WaveguideError> {
    solve_te_mode(stack, 0)
}

/// All guided TE modes, in order of decreasing effective index.
pub fn solve_te_modes(stack: &LayerStack) -> Result<Vec<ModeSolution>, WaveguideError> {
    let roots = bracket_roots(stack)?;
    if roots.is_empty() {
        return Err(cutoff_error(stack, 0));
    }
    roots.iter().enumerate().map(|(m, &n)| build_mode(stack, m, n)).collect()
}

pub fn solve_te_mode(stack: &LayerStack, mode_index: usize) -> Result<ModeSolution, WaveguideError> {
    let roots = bracket_roots(stack)?;
    match roots.get(mode_index) {
        Some(&n) => build_mode(stack, mode_index, n),
        None if roots.is_empty() => Err(cutoff_error(stack, mode_index)),
        None => Err(WaveguideError::ModeNotFound(mode_index)),
    }
}

fn cutoff_error(stack: &LayerStack, mode_index: usize) -> WaveguideError {
    let cutoff_nm = match stack.films.as_slice() {
        [film] => {
            let k0 = stack.k0();
            let (lo, hi) = if stack.substrate_index >= stack.cover_index {
                (stack.cover_index, stack.substrate_index)
            } else {
                (stack.substrate_index, stack.cover_index)
            };
            let kappa = k0 * (film.index * film.index - hi * hi).sqrt();
            let gamma = k0 * (hi * hi - lo * lo).sqrt();
            ((gamma / kappa).atan() + mode_index as f64 * PI) / kappa
        }
        _ => f64::NAN,
    };
    WaveguideError::Degenerate { mode_index, thickness_nm: stack.total_thickness_nm(), cutoff_nm }
}

/// Scans the effective index downward from the film index on a
/// [`SCAN_STEP`] grid and refines every sign change with Brent's method.
fn bracket_roots(stack: &LayerStack) -> Result<Vec<f64>, WaveguideError> {
    stack.check_guiding()?;
    let lo = stack.cladding_index();
    let hi = stack.max_film_index();
    let eps = 1e-12 * hi;
    let (lo, hi) = (lo + eps, hi - eps);
    let single = stack.films.len() == 1;

    // The single-film residual for mode m is monotone in n_eff; walking mode
    // numbers until the residual at the cladding index goes negative finds them all.
    let mut roots = Vec::new();
    if single {
        let mut m = 0;
        loop {
            let f = |n: f64| stack.dispersion_residual(n, m);
            if f(lo) <= 0.0 {
                break;
            }
            let n = refine_scan(f, lo, hi)?;
            roots.push(n);
            m += 1;
        }
        return Ok(roots);
    }

    let f = |n: f64| stack.transfer_residual(n);
    let steps = ((hi - lo) / SCAN_STEP).ceil() as usize;
    let mut upper = hi;
    let mut f_upper = f(upper);
    for k in 1..=steps {
        let lower = (hi - k as f64 * SCAN_STEP).max(lo);
        let f_lower = f(lower);
        if f_lower == 0.0 {
            roots.push(lower);
        } else if f_upper != 0.0 && f_lower.signum() != f_upper.signum() {
            let root = find_root_bracketed(f, Bracket::new(lower, upper)?, NEFF_TOL)?;
            roots.push(root.x);
        }
        upper = lower;
        f_upper = f_lower;
    }
    Ok(roots)
}

fn refine_scan<F: Fn(f64) -> f64 + Copy>(f: F, lo: f64, hi: f64) -> Result<f64, WaveguideError> {
    let steps = ((hi - lo) / SCAN_STEP).ceil() as usize;
    let mut upper = hi;
    let mut f_upper = f(upper);
    for k in 1..=steps {
        let lower = (hi - k as f64 * SCAN_STEP).max(lo);
        let f_lower = f(lower);
        if f_lower == 0.0 {
            return Ok(lower);
        }
        if f_lower.signum() != f_upper.signum() {
            return Ok(find_root_bracketed(f, Bracket::new(lower, upper)?, NEFF_TOL)?.x);
        }
        upper = lower;
        f_upper = f_lower;
    }
    Err(NumericsError::NoSignChange { lo, hi, f_lo: f(lo), f_hi: f(hi) }.into())
}

fn build_mode(stack: &LayerStack, mode_index: usize, n_eff: f64) -> Result<ModeSolution, WaveguideError> {
    let k0 = stack.k0();
    let gc = k0 * (n_eff * n_eff - stack.cover_index.powi(2)).sqrt();
    let gs = k0 * (n_eff * n_eff - stack.substrate_index.powi(2)).sqrt();

    let mut profiles = Vec::with_capacity(stack.films.len());
    let (mut e, mut de) = (1.0, gc);
    for film in &stack.films {
        let kind = LayerKind::new(film.index, n_eff, k0);
        profiles.push(kind.profile(e, de));
        (e, de) = kind.propagate(e, de, film.thickness_nm);
    }
    let e_bottom = e;

    let peak = stack
        .films
        .iter()
        .zip(&profiles)
        .map(|(film, p)| p.max_abs(film.thickness_nm))
        .fold(0.0, f64::max);
    let scale = 1.0 / peak;
    let profiles: Vec<LayerProfile> = profiles.into_iter().map(|p| scale_profile(p, scale)).collect();
    let cover_amplitude = scale;
    let substrate_amplitude = e_bottom * scale;

    let cover_power = cover_amplitude * cover_amplitude / (2.0 * gc);
    let film_powers: Vec<f64> = stack.films.iter().zip(&profiles).map(|(f, p)| p.power(f.thickness_nm)).collect();
    let substrate_power = substrate_amplitude * substrate_amplitude / (2.0 * gs);
    let total = cover_power + film_powers.iter().sum::<f64>() + substrate_power;
    let power_fractions = PowerFractions {
        cover: cover_power / total,
        films: film_powers.iter().map(|p| p / total).collect(),
        substrate: substrate_power / total,
    };

    let guiding = stack
        .films
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.index.total_cmp(&b.1.index))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let kappa_film = k0 * (stack.films[guiding].index.powi(2) - n_eff * n_eff).max(0.0).sqrt();

    Ok(ModeSolution {
        mode_index,
        polarization: Polarization::Te,
        n_eff,
        stack: stack.clone(),
        kappa_film: kappa_film * 1e3,
        gamma_cover: gc * 1e3,
        gamma_substrate: gs * 1e3,
        cover_amplitude,
        substrate_amplitude,
        profile_coefficients: profiles,
        power_fractions,
        substrate_decay_length: 1.0 / gs,
    })
}

fn scale_profile(p: LayerProfile, s: f64) -> LayerProfile {
    match p {
        LayerProfile::Oscillatory { amplitude, phase, kappa } => {
            LayerProfile::Oscillatory { amplitude: amplitude * s, phase, kappa }
        }
        LayerProfile::Evanescent { e_top, de_top, gamma } => {
            LayerProfile::Evanescent { e_top: e_top * s, de_top: de_top * s, gamma }
        }
    }
}

impl ModeSolution {
    /// Depth of each film top below the cover interface, plus the substrate start.
    fn interfaces(&self) -> Vec<f64> {
        let mut z = 0.0;
        let mut out = vec![0.0];
        for film in &self.stack.films {
            z += film.thickness_nm;
            out.push(z);
        }
        out
    }

    fn gamma_cover_nm(&self) -> f64 {
        self.gamma_cover * 1e-3
    }

    fn gamma_substrate_nm(&self) -> f64 {
        self.gamma_substrate * 1e-3
    }

    /// Field value and derivative evaluated with the expression of region
    /// `region` (0 = cover, 1..=films, films+1 = substrate) even outside it.
    pub fn region_field(&self, region: usize, z: f64) -> (f64, f64) {
        let interfaces = self.interfaces();
        let n_films = self.stack.films.len();
        if region == 0 {
            let g = self.gamma_cover_nm();
            let e = self.cover_amplitude * (g * z).exp();
            (e, g * e)
        } else if region <= n_films {
            let p = &self.profile_coefficients[region - 1];
            let s = z - interfaces[region - 1];
            (p.value(s), p.derivative(s))
        } else {
            let g = self.gamma_substrate_nm();
            let e = self.substrate_amplitude * (-g * (z - interfaces[n_films])).exp();
            (e, -g * e)
        }
    }

    fn region_of(&self, z: f64) -> usize {
        if z < 0.0 {
            return 0;
        }
        let interfaces = self.interfaces();
        interfaces[1..].iter().position(|&b| z < b).map_or(interfaces.len(), |i| i + 1)
    }

    /// Largest relative mismatch of E and dE/dz across all interfaces,
    /// comparing the expressions of the two adjoining regions.
    pub fn boundary_mismatch(&self) -> f64 {
        let interfaces = self.interfaces();
        let mut worst: f64 = 0.0;
        for (i, &z) in interfaces.iter().enumerate() {
            let (e_a, de_a) = self.region_field(i, z);
            let (e_b, de_b) = self.region_field(i + 1, z);
            let e_scale = e_a.abs().max(e_b.abs()).max(1e-300);
            let de_scale = de_a.abs().max(de_b.abs()).max(self.gamma_cover_nm() * e_scale);
            worst = worst.max((e_a - e_b).abs() / e_scale).max((de_a - de_b).abs() / de_scale);
        }
        worst
    }

    /// z of the last film / substrate interface, nm.
    pub fn substrate_interface_nm(&self) -> f64 {
        self.stack.total_thickness_nm()
    }
}

/// E_x at depth `z` (nm, measured from the cover/film interface, positive into
/// the film and substrate). Normalized so the largest film field is 1.
pub fn field_amplitude(mode: &ModeSolution, z: f64) -> f64 {
    mode.region_field(mode.region_of(z), z).0
}

/// dE_x/dz at depth `z`, 1/nm.
pub fn field_derivative(mode: &ModeSolution, z: f64) -> f64 {
    mode.region_field(mode.region_of(z), z).1
}

pub fn power_fractions(mode: &ModeSolution) -> &PowerFractions {
    &mode.power_fractions
}

/// Field e^-1 depth in the substrate, `1 / gamma_substrate`. The intensity
/// e^-1 depth is half of this.
pub fn substrate_decay_length(mode: &ModeSolution) -> DecayLength {
    let gamma_nm = mode.gamma_substrate * 1e-3;
    let nm = if gamma_nm > 0.0 { 1.0 / gamma_nm } else { f64::MAX };
    DecayLength { nm, near_cutoff: nm > CUTOFF_WARNING_WAVELENGTHS * mode.stack.wavelength_nm }
}

/// External (air-side) incidence angle in degrees that phase-matches a prism of
/// index `n_prism` and apex angle `apex_deg` to a mode of index `n_eff`.
///
/// The ray inside the prism must meet the base at `asin(n_eff / n_prism)` from
/// the base normal. The returned angle is measured from the entrance-face
/// normal and is positive when that internal base angle is smaller than the
/// apex angle (the beam arrives from the apex side of the normal).
pub fn phase_match_angle(n_prism: f64, apex_deg: f64, n_eff: f64) -> Result<f64, WaveguideError> {
    if !(apex_deg > 0.0 && apex_deg < 90.0) {
        return Err(WaveguideError::InvalidStack(format!("apex angle {apex_deg} deg outside (0, 90)")));
    }
    if !(n_prism > 0.0 && n_eff > 0.0) {
        return Err(WaveguideError::InvalidStack("indices must be positive".into()));
    }
    if n_eff >= n_prism {
        return Err(WaveguideError::NoSolution(format!(
            "prism index {n_prism} must exceed the effective index {n_eff} (internal angle would reach 90 deg)"
        )));
    }
    let internal = (n_eff / n_prism).asin();
    let arg = n_prism * (apex_deg.to_radians() - internal).sin();
    if arg.abs() > 1.0 {
        return Err(WaveguideError::NoSolution(format!(
            "required refraction at the entrance face is beyond grazing (sin = {arg})"
        )));
    }
    Ok(arg.asin().to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_stack() -> LayerStack {
        LayerStack::slab(1.0, 2.05, 400.0, 1.806, 605.977).unwrap()
    }

    #[test]
    fn reference_stack_fundamental() {
        let mode = solve_te_fundamental(&reference_stack()).unwrap();
        assert!((mode.n_eff - 1.97737).abs() < 1e-4, "{}", mode.n_eff);
        assert!(mode.n_eff > 1.806 && mode.n_eff < 2.05);
        assert!(mode.stack.dispersion_residual(mode.n_eff, 0).abs() < 1e-10);
        let decay = substrate_decay_length(&mode);
        assert!((115.0..145.0).contains(&decay.nm), "{}", decay.nm);
        assert!(!decay.near_cutoff);
        let sub = mode.power_fractions.substrate;
        assert!((0.05..0.09).contains(&sub), "{sub}");
    }

    #[test]
    fn only_one_te_mode_in_reference_stack() {
        assert_eq!(solve_te_modes(&reference_stack()).unwrap().len(), 1);
        assert!(matches!(solve_te_mode(&reference_stack(), 1), Err(WaveguideError::ModeNotFound(1))));
    }

    #[test]
    fn symmetric_guide_has_equal_cladding_fractions() {
        let stack = LayerStack::slab(1.5, 2.0, 500.0, 1.5, 605.977).unwrap();
        let mode = solve_te_fundamental(&stack).unwrap();
        let pf = power_fractions(&mode);
        assert!((pf.cover - pf.substrate).abs() < 1e-9);
        let total = pf.cover + pf.film_total() + pf.substrate;
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unguided_stack() {
        let stack = LayerStack::slab(1.0, 1.806, 400.0, 1.806, 605.977).unwrap();
        assert!(matches!(solve_te_fundamental(&stack), Err(WaveguideError::NoGuidedMode { .. })));
    }

    #[test]
    fn below_cutoff_is_reported() {
        let stack = LayerStack::slab(1.0, 2.05, 20.0, 1.806, 605.977).unwrap();
        match solve_te_fundamental(&stack) {
            Err(WaveguideError::Degenerate { cutoff_nm, thickness_nm, .. }) => {
                assert!(cutoff_nm > thickness_nm);
                // At the reported cutoff the mode sits at the substrate index.
                let at_cutoff = LayerStack::slab(1.0, 2.05, cutoff_nm * 1.001, 1.806, 605.977).unwrap();
                let mode = solve_te_fundamental(&at_cutoff).unwrap();
                assert!(mode.n_eff - 1.806 < 1e-3);
            }
            other => panic!("expected Degenerate, got {other:?}"),
        }
    }

    #[test]
    fn invalid_stacks_are_rejected() {
        assert!(LayerStack::slab(1.0, 2.05, -1.0, 1.806, 605.977).is_err());
        assert!(LayerStack::slab(0.5, 2.05, 400.0, 1.806, 605.977).is_err());
        assert!(LayerStack::slab(1.0, 2.05, 400.0, 1.806, 0.0).is_err());
        assert!(LayerStack::new(1.0, vec![], 1.806, 605.977).is_err());
    }

    #[test]
    fn field_profile_shape() {
        let mode = solve_te_fundamental(&reference_stack()).unwrap();
        assert!(field_amplitude(&mode, -1e5).abs() < 1e-300);
        let d = mode.substrate_interface_nm();
        let at_interface = field_amplitude(&mode, d);
        let decay = substrate_decay_length(&mode).nm;
        let ratio = field_amplitude(&mode, d + decay) / at_interface;
        assert!((ratio - (-1.0f64).exp()).abs() < 1e-9);
        let film_max = (0..=4000).map(|i| field_amplitude(&mode, d * i as f64 / 4000.0).abs()).fold(0.0, f64::max);
        assert!((film_max - 1.0).abs() < 1e-6);
        assert!(mode.boundary_mismatch() < 1e-9);
        for z in [0.0, d] {
            let h = 1e-7;
            assert!((field_amplitude(&mode, z - h) - field_amplitude(&mode, z + h)).abs() < 1e-6);
            let (l, r) = (field_derivative(&mode, z - h), field_derivative(&mode, z + h));
            assert!((l - r).abs() <= 1e-6 * l.abs().max(r.abs()));
        }
    }

    #[test]
    fn decay_length_definition() {
        let mut mode = solve_te_fundamental(&reference_stack()).unwrap();
        let base = substrate_decay_length(&mode).nm;
        mode.gamma_substrate *= 2.0;
        assert!((substrate_decay_length(&mode).nm - base / 2.0).abs() < 1e-9);
    }

    #[test]
    fn decay_length_diverges_near_cutoff() {
        let stack = LayerStack::slab(1.0, 2.05, 400.0, 1.806, 605.977).unwrap();
        let cutoff = match solve_te_fundamental(&LayerStack { films: vec![Film { index: 2.05, thickness_nm: 1.0 }], ..stack.clone() }) {
            Err(WaveguideError::Degenerate { cutoff_nm, .. }) => cutoff_nm,
            other => panic!("{other:?}"),
        };
        let near = LayerStack::slab(1.0, 2.05, cutoff * 1.0001, 1.806, 605.977).unwrap();
        let d = substrate_decay_length(&solve_te_fundamental(&near).unwrap());
        assert!(d.nm.is_finite() && d.nm > 10.0 * 605.977);
        assert!(d.near_cutoff);
    }

    #[test]
    fn multi_film_stack_matches_single_film_split() {
        let single = solve_te_fundamental(&reference_stack()).unwrap();
        let split = LayerStack::new(
            1.0,
            vec![Film { index: 2.05, thickness_nm: 150.0 }, Film { index: 2.05, thickness_nm: 250.0 }],
            1.806,
            605.977,
        )
        .unwrap();
        let mode = solve_te_fundamental(&split).unwrap();
        assert!((mode.n_eff - single.n_eff).abs() < 1e-11);
        assert!((mode.power_fractions.substrate - single.power_fractions.substrate).abs() < 1e-9);
        assert!(mode.boundary_mismatch() < 1e-9);
    }

    #[test]
    fn multi_film_with_low_index_buffer() {
        let stack = LayerStack::new(
            1.0,
            vec![Film { index: 2.05, thickness_nm: 400.0 }, Film { index: 1.45, thickness_nm: 30.0 }],
            1.806,
            605.977,
        )
        .unwrap();
        let mode = solve_te_fundamental(&stack).unwrap();
        assert!(mode.boundary_mismatch() < 1e-9);
        let pf = &mode.power_fractions;
        assert!((pf.cover + pf.film_total() + pf.substrate - 1.0).abs() < 1e-12);
        assert!(pf.films.iter().all(|f| (0.0..=1.0).contains(f)));
    }

    #[test]
    fn phase_match_examples() {
        let n_eff = solve_te_fundamental(&reference_stack()).unwrap().n_eff;
        let theta = phase_match_angle(2.87, 45.0, n_eff).unwrap();
        let expected = (2.87 * (45f64.to_radians() - (n_eff / 2.87).asin()).sin()).asin().to_degrees();
        assert_eq!(theta, expected);
        assert!((theta - 4.17).abs() < 0.05, "{theta}");

        let internal = (n_eff / 2.87).asin().to_degrees();
        assert!(phase_match_angle(2.87, internal, n_eff).unwrap().abs() < 1e-12);

        for apex in [10.0, 45.0, 80.0] {
            assert!(matches!(phase_match_angle(2.0, apex, 2.0), Err(WaveguideError::NoSolution(_))));
        }
        assert!(matches!(phase_match_angle(2.87, 89.0, 1.0), Err(WaveguideError::NoSolution(_))));
        assert!(phase_match_angle(2.87, 0.0, 1.9).is_err());
    }

    proptest::proptest! {
        #[test]
        fn neff_increases_with_thickness(d in 150.0f64..2000.0, extra in 1.0f64..200.0) {
            let a = solve_te_fundamental(&LayerStack::slab(1.0, 2.05, d, 1.806, 605.977).unwrap()).unwrap();
            let b = solve_te_fundamental(&LayerStack::slab(1.0, 2.05, d + extra, 1.806, 605.977).unwrap()).unwrap();
            proptest::prop_assert!(b.n_eff > a.n_eff);
        }

        #[test]
        fn mode_invariants(nc in 1.0f64..1.5, ns in 1.4f64..1.9, dn in 0.05f64..0.8, d in 200.0f64..1500.0) {
            let nf = ns.max(nc) + dn;
            let stack = LayerStack::slab(nc, nf, d, ns, 800.0).unwrap();
            if let Ok(mode) = solve_te_fundamental(&stack) {
                proptest::prop_assert!(mode.n_eff > ns.max(nc) && mode.n_eff < nf);
                proptest::prop_assert!(stack.dispersion_residual(mode.n_eff, 0).abs() < 1e-10);
                let pf = &mode.power_fractions;
                let sum = pf.cover + pf.film_total() + pf.substrate;
                proptest::prop_assert!((sum - 1.0).abs() < 1e-9);
                for f in [pf.cover, pf.film_total(), pf.substrate] {
                    proptest::prop_assert!((0.0..=1.0).contains(&f));
                }
                proptest::prop_assert!(mode.boundary_mismatch() < 1e-9);
            }
        }
    }
}
