//! Single-class two-level dynamics on the Bloch sphere.
//!
//! Convention: `dR/dt = W x R` with `W = (Omega cos(phi), Omega sin(phi), Delta)`
//! and `R = (u, v, w)`, so free precession turns the coherence `u + i v` as
//! `exp(i Delta t)`. The ground state is `w = -1`.

use num_complex::Complex64;

use super::Pulse;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl BlochVector {
    pub const GROUND: Self = Self { u: 0.0, v: 0.0, w: -1.0 };

    pub fn new(u: f64, v: f64, w: f64) -> Self {
        Self { u, v, w }
    }

    pub fn norm(&self) -> f64 {
        (self.u * self.u + self.v * self.v + self.w * self.w).sqrt()
    }

    pub fn coherence(&self) -> Complex64 {
        Complex64::new(self.u, self.v)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.u, self.v, self.w]
    }

    /// Rotation by `angle` about the unit axis `n` (right-hand rule).
    pub fn rotate(self, n: [f64; 3], angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let r = self.as_array();
        let dot = n[0] * r[0] + n[1] * r[1] + n[2] * r[2];
        let cross = [n[1] * r[2] - n[2] * r[1], n[2] * r[0] - n[0] * r[2], n[0] * r[1] - n[1] * r[0]];
        let k = dot * (1.0 - c);
        Self {
            u: r[0] * c + cross[0] * s + n[0] * k,
            v: r[1] * c + cross[1] * s + n[1] * k,
            w: r[2] * c + cross[2] * s + n[2] * k,
        }
    }
}

/// Exact constant-field rotation for a rectangular pulse.
///
/// `detuning` is the class detuning (rad/s) from the reference laser frequency;
/// the pulse's own `detuning_offset` is subtracted from it. `depth_scale`
/// scales the Rabi frequency. Relaxation during the pulse is neglected.
pub fn propagate_pulse(state: BlochVector, pulse: &Pulse, detuning: f64, depth_scale: f64) -> BlochVector {
    rotate_for(state, pulse.rabi_rad_s * depth_scale, pulse.phase_rad, detuning - pulse.detuning_offset_rad_s, pulse.duration_s)
}

/// Constant drive of amplitude `rabi`, phase `phase` and detuning `delta` for `duration`.
pub fn rotate_for(state: BlochVector, rabi: f64, phase: f64, delta: f64, duration: f64) -> BlochVector {
    let (sp, cp) = phase.sin_cos();
    let axis = [rabi * cp, rabi * sp, delta];
    let magnitude = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if magnitude == 0.0 || duration == 0.0 {
        return state;
    }
    let n = [axis[0] / magnitude, axis[1] / magnitude, axis[2] / magnitude];
    state.rotate(n, magnitude * duration)
}

/// Free precession at `detuning` for `duration` with coherence decay
/// `exp(-duration / t2)`. Populations are left untouched.
pub fn free_evolution(state: BlochVector, duration: f64, detuning: f64, t2: f64) -> BlochVector {
    if duration == 0.0 {
        return state;
    }
    let decay = (-duration / t2).exp();
    let (s, c) = (detuning * duration).sin_cos();
    BlochVector {
        u: decay * (state.u * c - state.v * s),
        v: decay * (state.u * s + state.v * c),
        w: state.w,
    }
}

/// Relaxes the population toward the ground state, keeping a fraction
/// `survival` of the deviation `w + 1`. The coherence shrinks by
/// `sqrt(survival)` so the vector stays inside the unit ball.
pub fn relax_population(state: BlochVector, survival: f64) -> BlochVector {
    if survival == 1.0 {
        return state;
    }
    let k = survival.sqrt();
    BlochVector { u: state.u * k, v: state.v * k, w: -1.0 + (state.w + 1.0) * survival }
}

/// Right-hand side of the Bloch equations for a constant drive, for use with
/// the RK4 integrator.
pub fn bloch_rhs(rabi: f64, phase: f64, delta: f64) -> impl Fn(f64, &[f64], &mut [f64]) + Copy {
    let (sp, cp) = phase.sin_cos();
    let wx = rabi * cp;
    let wy = rabi * sp;
    move |_t, r, dr| {
        dr[0] = wy * r[2] - delta * r[1];
        dr[1] = delta * r[0] - wx * r[2];
        dr[2] = wx * r[1] - wy * r[0];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::integrate_ode_final;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn pulse(rabi: f64, duration: f64, phase: f64) -> Pulse {
        Pulse { t_start_s: 0.0, duration_s: duration, rabi_rad_s: rabi, phase_rad: phase, detuning_offset_rad_s: 0.0 }
    }

    fn ode_oracle(state: BlochVector, rabi: f64, phase: f64, delta: f64, duration: f64, steps: usize) -> BlochVector {
        let y = integrate_ode_final(bloch_rhs(rabi, phase, delta), &state.as_array(), (0.0, duration), duration / steps as f64)
            .unwrap();
        BlochVector::new(y[0], y[1], y[2])
    }

    #[test]
    fn pi_pulse_inverts() {
        let p = pulse(PI / 6e-6, 6e-6, 0.0);
        let out = propagate_pulse(BlochVector::GROUND, &p, 0.0, 1.0);
        assert!((out.w - 1.0).abs() < 1e-9);
    }

    #[test]
    fn half_pi_pulse_about_x_creates_positive_v() {
        let p = pulse(PI / 6e-6, 3e-6, 0.0);
        let out = propagate_pulse(BlochVector::GROUND, &p, 0.0, 1.0);
        assert!((out.v - 1.0).abs() < 1e-12 && out.u.abs() < 1e-12 && out.w.abs() < 1e-12);
    }

    #[test]
    fn zero_rabi_is_pure_precession() {
        let s = BlochVector::new(0.6, 0.0, 0.8);
        let delta = 2.0 * PI * 1e5;
        let out = propagate_pulse(s, &pulse(0.0, 2e-6, 0.3), delta, 1.0);
        let free = free_evolution(s, 2e-6, delta, f64::INFINITY);
        assert!((out.u - free.u).abs() < 1e-12 && (out.v - free.v).abs() < 1e-12);
        assert_eq!(out.w, 0.8);
    }

    #[test]
    fn far_detuned_pi_pulse_barely_moves_population() {
        let rabi = PI / 6e-6;
        let p = pulse(rabi, 6e-6, 0.0);
        let delta = 100.0 * rabi;
        let exact = propagate_pulse(BlochVector::GROUND, &p, delta, 1.0);
        let oracle = ode_oracle(BlochVector::GROUND, rabi, 0.0, delta, 6e-6, 100_000);
        assert!((exact.w + 1.0).abs() < 2e-4);
        assert!((oracle.w + 1.0).abs() < 2e-4);
        assert!((exact.w - oracle.w).abs() < 1e-9);
    }

    #[test]
    fn matches_ode_oracle_on_random_pulses() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let rabi = rng.gen_range(1e4..2e6);
            let delta = rng.gen_range(-3e6..3e6);
            let phase = rng.gen_range(-PI..PI);
            let duration = rng.gen_range(0.5e-6..8e-6);
            let start = BlochVector::new(0.0, 0.0, -1.0).rotate([1.0, 0.0, 0.0], rng.gen_range(0.0..PI));
            let exact = rotate_for(start, rabi, phase, delta, duration);
            let oracle = ode_oracle(start, rabi, phase, delta, duration, 20_000);
            for (a, b) in exact.as_array().iter().zip(oracle.as_array()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn free_evolution_properties() {
        let s = BlochVector::new(0.3, -0.4, 0.2);
        assert_eq!(free_evolution(s, 0.0, 1e6, 70e-6), s);
        let decayed = free_evolution(s, 70e-6, 0.0, 70e-6);
        assert!((decayed.coherence().norm() - s.coherence().norm() * (-1.0f64).exp()).abs() < 1e-15);
        let ab = free_evolution(free_evolution(s, 3e-6, 2e6, 70e-6), 5e-6, 2e6, 70e-6);
        let whole = free_evolution(s, 8e-6, 2e6, 70e-6);
        for (a, b) in ab.as_array().iter().zip(whole.as_array()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn relaxation_stays_in_ball() {
        for s in [0.0, 0.01, 0.3, 0.99, 1.0] {
            for theta in [0.1, 0.7, 1.5, 2.5, 3.1] {
                let state = BlochVector::GROUND.rotate([0.0, 1.0, 0.0], theta);
                assert!(relax_population(state, s).norm() <= 1.0 + 1e-12);
            }
        }
    }
}
