//! Bracketing scalar root finders shared by the solvers.

/// Outcome of a bracketed root search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RootError {
    /// f(a) and f(b) have the same strict sign.
    NotBracketed { fa: f64, fb: f64 },
    /// Iteration cap reached; carries the best iterate.
    IterationLimit(Root),
}

/// Stopping rule for [`brent`].
#[derive(Debug, Clone, Copy)]
pub struct Stop {
    /// Absolute bracket width below which the search ends.
    pub xtol: f64,
    /// Accept as soon as |f(x)| <= ftol.
    pub ftol: f64,
    pub max_iter: usize,
}

impl Default for Stop {
    fn default() -> Self {
        Stop {
            xtol: 0.0,
            ftol: 0.0,
            max_iter: 200,
        }
    }
}

/// Brent-Dekker root search on `[a, b]`: inverse quadratic interpolation and
/// secant steps, falling back to bisection whenever an interpolated step would
/// leave the bracket or shrink it too slowly.
pub fn brent<F>(mut f: F, a: f64, b: f64, stop: Stop) -> Result<Root, RootError>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(Root { x: a, fx: fa, iterations: 0 });
    }
    if fb == 0.0 {
        return Ok(Root { x: b, fx: fb, iterations: 0 });
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(RootError::NotBracketed { fa, fb });
    }

    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for iter in 1..=stop.max_iter {
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
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * stop.xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 || fb.abs() <= stop.ftol {
            return Ok(Root { x: b, fx: fb, iterations: iter });
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
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
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Err(RootError::IterationLimit(Root {
        x: b,
        fx: fb,
        iterations: stop.max_iter,
    }))
}

/// Plain bisection to full double precision. Slow but assumption-free; the
/// oracle uses it where independence from the fast paths matters more than
/// speed.
pub fn bisect<F>(mut f: F, a: f64, b: f64, max_iter: usize) -> Result<Root, RootError>
where
    F: FnMut(f64) -> f64,
{
    let (mut lo, mut hi) = (a, b);
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(Root { x: lo, fx: flo, iterations: 0 });
    }
    if fhi == 0.0 {
        return Ok(Root { x: hi, fx: fhi, iterations: 0 });
    }
    if flo.signum() == fhi.signum() || flo.is_nan() || fhi.is_nan() {
        return Err(RootError::NotBracketed { fa: flo, fb: fhi });
    }
    let mut best = if flo.abs() < fhi.abs() {
        Root { x: lo, fx: flo, iterations: 0 }
    } else {
        Root { x: hi, fx: fhi, iterations: 0 }
    };
    for iter in 1..=max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo.min(hi) || mid >= lo.max(hi) {
            return Ok(Root { iterations: iter, ..best });
        }
        let fm = f(mid);
        if fm.abs() < best.fx.abs() {
            best = Root { x: mid, fx: fm, iterations: iter };
        }
        if fm == 0.0 {
            return Ok(best);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Err(RootError::IterationLimit(best))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_sqrt2() {
        let r = brent(|x| x * x - 2.0, 0.0, 2.0, Stop::default()).unwrap();
        assert!((r.x - 2f64.sqrt()).abs() < 1e-15);
        assert!(r.iterations < 15);
    }

    #[test]
    fn brent_rejects_non_bracket() {
        let err = brent(|x| x * x + 1.0, -1.0, 1.0, Stop::default()).unwrap_err();
        assert!(matches!(err, RootError::NotBracketed { .. }));
    }

    #[test]
    fn brent_stops_on_ftol() {
        let stop = Stop { ftol: 1e-3, ..Stop::default() };
        let r = brent(|x| x - 0.3, 0.0, 1.0, stop).unwrap();
        assert!(r.fx.abs() <= 1e-3);
    }

    #[test]
    fn bisect_reaches_full_precision() {
        let r = bisect(|x| x.exp() - 3.0, 0.0, 2.0, 200).unwrap();
        assert!((r.x - 3f64.ln()).abs() < 4.0 * f64::EPSILON);
    }

    #[test]
    fn decreasing_functions_work() {
        let r = brent(|x| 1.0 / x - 4.0, 0.1, 1.0, Stop::default()).unwrap();
        assert!((r.x - 0.25).abs() < 1e-15);
    }
}
