use super::NumericsError;

/// Iteration cap for [`find_root_bracketed`].
pub const ROOT_MAX_ITERATIONS: usize = 200;

/// Closed interval known to contain a sign change of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    pub fn new(lo: f64, hi: f64) -> Result<Self, NumericsError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(NumericsError::InvalidBracket { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// A refined root together with the final enclosing interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub bracket: Bracket,
    pub iterations: usize,
}

/// Brent's method (inverse quadratic interpolation, secant and bisection).
///
/// Every evaluation point lies inside `bracket`, and on success the returned
/// enclosing interval is no wider than `tol`.
pub fn find_root_bracketed<F>(f: F, bracket: Bracket, tol: f64) -> Result<Root, NumericsError>
where
    F: FnMut(f64) -> f64,
{
    find_root_with_cap(f, bracket, tol, ROOT_MAX_ITERATIONS)
}

pub fn find_root_with_cap<F>(
    mut f: F,
    bracket: Bracket,
    tol: f64,
    max_iterations: usize,
) -> Result<Root, NumericsError>
where
    F: FnMut(f64) -> f64,
{
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(NumericsError::InvalidTolerance(tol));
    }
    let Bracket { lo, hi } = bracket;
    let mut eval = |x: f64| -> Result<f64, NumericsError> {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(NumericsError::NonFiniteObjective(x))
        }
    };

    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (eval(a)?, eval(b)?);
    if fa == 0.0 {
        return Ok(exact(a, 0));
    }
    if fb == 0.0 {
        return Ok(exact(b, 0));
    }
    if fa.signum() == fb.signum() {
        return Err(NumericsError::NoSignChange { lo, hi, f_lo: fa, f_hi: fb });
    }

    // Invariant: the root lies between b and c, and |f(b)| <= |f(c)|.
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    let half_tol = 0.5 * tol;

    for iteration in 0..max_iterations {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }

        let xm = 0.5 * (c - b);
        if (c - b).abs() <= tol {
            let (l, h) = if b < c { (b, c) } else { (c, b) };
            return Ok(Root { x: b, bracket: Bracket { lo: l, hi: h }, iterations: iteration });
        }

        if e.abs() >= half_tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (half_tol * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }

        a = b;
        fa = fb;
        b += if d.abs() > half_tol { d } else { half_tol.copysign(xm) };
        fb = eval(b)?;
        if fb == 0.0 {
            return Ok(exact(b, iteration + 1));
        }
    }
    Err(NumericsError::MaxIterations { tol, iterations: max_iterations })
}

fn exact(x: f64, iterations: usize) -> Root {
    Root { x, bracket: Bracket { lo: x, hi: x }, iterations }
}
