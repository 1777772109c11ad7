//! Slow, independent reference computations used to cross-check the fast
//! solvers.

use crate::waveguide::{field_amplitude, LayerStack, ModeSolution, PowerFractions};

/// Effective index of TE mode `mode_index` by scanning the residual on a
/// uniform grid of `step` and bisecting the bracketing cell to machine width.
pub fn dense_scan_neff(stack: &LayerStack, mode_index: usize, step: f64) -> Option<f64> {
    let lo = stack.cladding_index() * (1.0 + 1e-12);
    let hi = stack.max_film_index() * (1.0 - 1e-12);
    let f = |n: f64| stack.dispersion_residual(n, mode_index);
    let single = stack.films.len() == 1;
    let n_steps = ((hi - lo) / step).ceil() as usize;
    let mut roots = Vec::new();
    let mut prev = (hi, f(hi));
    for k in 1..=n_steps {
        let n = (hi - k as f64 * step).max(lo);
        let v = f(n);
        if v == 0.0 {
            roots.push(n);
        } else if v.signum() != prev.1.signum() && prev.1 != 0.0 {
            roots.push(bisect(&f, n, prev.0));
        }
        prev = (n, v);
    }
    if single {
        roots.first().copied()
    } else {
        roots.get(mode_index).copied()
    }
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    loop {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            return m;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// Power fractions from Simpson quadrature of `E^2`, with the evanescent tails
/// integrated out to 40 decay lengths.
pub fn quadrature_power_fractions(mode: &ModeSolution, intervals: usize) -> PowerFractions {
    let e2 = |z: f64| field_amplitude(mode, z).powi(2);
    let tail_cover = 40.0 / (mode.gamma_cover * 1e-3);
    let tail_sub = 40.0 / (mode.gamma_substrate * 1e-3);
    let cover = simpson(e2, -tail_cover, 0.0, intervals);
    let mut z = 0.0;
    let films: Vec<f64> = mode
        .stack
        .films
        .iter()
        .map(|film| {
            let v = simpson(e2, z, z + film.thickness_nm, intervals);
            z += film.thickness_nm;
            v
        })
        .collect();
    let substrate = simpson(e2, z, z + tail_sub, intervals);
    let total = cover + substrate + films.iter().sum::<f64>();
    PowerFractions {
        cover: cover / total,
        films: films.iter().map(|v| v / total).collect(),
        substrate: substrate / total,
    }
}
