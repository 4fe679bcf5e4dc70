//! Risk-constrained logarithmic optimum on the fixed Kelly prefix.
//!
//! With the multiplier rescaled to `s = eta * lambda * c^(-lambda)`, every
//! active state reduces to an independent scalar equation for its wealth
//! ratio `z_i = W_i / c`:
//!
//! ```text
//! r_i (z^-1 + s z^-(lambda+1)) = 1 + s,   r_i = L_i / tau*
//! ```
//!
//! The budget then fixes `c(s) = 1 / B(s)` with `B(s) = 1 + sum q_i (z_i - 1)`,
//! and the risk along this path,
//! `R(s) = c^-lambda ((1 - P*) + sum p_i z_i^-lambda)`, decreases strictly
//! from its Kelly value `R(0)` to a limit below one. The binding optimum is the
//! unique root of `R(s) = 1`.

use log::debug;
use serde::Serialize;

use crate::crra::{self, check_positive, PrefixOutcome, PrefixSelection, SolverParams};
use crate::error::{Error, Result};
use crate::market::{Allocation, Regime, SortedMarket};
use crate::par;
use crate::roots::{self, RootError, Stop};

/// Largest supported risk exponent.
pub const MAX_LAMBDA: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Relative residual accepted for an inner solve.
    pub inner: f64,
    /// Accepted `|R(s*) - 1|`.
    pub outer: f64,
    pub max_outer_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            inner: 1e-13,
            outer: 1e-12,
            max_outer_iter: 200,
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    check_positive("lambda", lambda)?;
    if lambda > MAX_LAMBDA {
        return Err(Error::OutOfRange {
            name: "lambda",
            value: lambda,
            range: "(0, 1000]",
        });
    }
    Ok(())
}

/// Relative residual `|r (z^-1 + s z^-(lambda+1)) - (1 + s)| / (1 + s)`.
pub fn inner_residual(r: f64, s: f64, lambda: f64, z: f64) -> f64 {
    let lz = z.ln();
    let lhs = r * ((-lz).exp() + s * (-(lambda + 1.0) * lz).exp());
    (lhs - (1.0 + s)).abs() / (1.0 + s)
}

/// The unique `z in (1, r]` solving the active-state equation.
pub fn inner_solve(r: f64, s: f64, lambda: f64) -> Result<f64> {
    inner_solve_with(r, s, lambda, Tolerances::default().inner)
}

pub fn inner_solve_with(r: f64, s: f64, lambda: f64, tol: f64) -> Result<f64> {
    if !(r > 1.0) || !r.is_finite() {
        return Err(Error::DomainError(r));
    }
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::InvalidParameter {
            name: "s",
            value: s,
            reason: "must be nonnegative and finite",
        });
    }
    check_positive("lambda", lambda)?;
    if s == 0.0 {
        return Ok(r);
    }
    let z = if lambda == 1.0 {
        quadratic_root(r, s)
    } else {
        newton_bracketed(r, s, lambda)
    };
    let residual = inner_residual(r, s, lambda, z);
    if residual > tol.max(residual_floor(lambda)) {
        return Err(Error::ConvergenceFailure {
            what: "inner solve",
            iterations: MAX_INNER_ITER,
            residual,
        });
    }
    Ok(z)
}

/// Smallest relative residual that double precision can certify: one ulp in
/// `z` moves the scaled equation by about `(lambda + 1) eps`.
pub fn residual_floor(lambda: f64) -> f64 {
    4.0 * (lambda + 2.0) * f64::EPSILON
}

/// Positive root of `(1+s) z^2 - r z - r s = 0`.
pub fn quadratic_root(r: f64, s: f64) -> f64 {
    (r + (r * r + 4.0 * r * s * (1.0 + s)).sqrt()) / (2.0 * (1.0 + s))
}

const MAX_INNER_ITER: usize = 200;

/// Newton on `G(z) = r/z + r s z^-(lambda+1) - (1+s)`, the active-state
/// equation divided through by `z^(lambda+1)`. `G` is convex and decreasing,
/// positive at `r^(1/(lambda+1))` and negative at `r`; iterates that leave the
/// bracket are replaced by bisection.
fn newton_bracketed(r: f64, s: f64, lambda: f64) -> f64 {
    let g = |z: f64| -> (f64, f64) {
        let lz = z.ln();
        let inv = (-lz).exp();
        let tail = (-(lambda + 1.0) * lz).exp();
        let val = r * inv + r * s * tail - (1.0 + s);
        let deriv = -r * inv * inv - r * s * (lambda + 1.0) * tail * inv;
        (val, deriv)
    };
    let mut lo = (r.ln() / (lambda + 1.0)).exp().max(1.0);
    let mut hi = r;
    let mut z = lo;
    for _ in 0..MAX_INNER_ITER {
        let (val, deriv) = g(z);
        if val == 0.0 {
            return z;
        }
        if val > 0.0 {
            lo = lo.max(z);
        } else {
            hi = hi.min(z);
        }
        let mut next = z - val / deriv;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - z).abs() <= 2.0 * f64::EPSILON * z || hi - lo <= 2.0 * f64::EPSILON * hi {
            return next;
        }
        z = next;
    }
    z
}

/// The calibration path evaluated at one value of `s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationState {
    pub s: f64,
    /// Active wealth ratios, in prefix order.
    pub z: Vec<f64>,
    pub b: f64,
    pub c: f64,
    pub risk: f64,
}

pub fn eval_state(sel: &PrefixSelection, lambda: f64, s: f64) -> Result<CalibrationState> {
    eval_state_with(sel, lambda, s, &Tolerances::default())
}

pub fn eval_state_with(sel: &PrefixSelection, lambda: f64, s: f64, tol: &Tolerances) -> Result<CalibrationState> {
    let z = sel
        .r
        .iter()
        .map(|&r| inner_solve_with(r, s, lambda, tol.inner))
        .collect::<Result<Vec<f64>>>()?;
    let b = 1.0
        + sel
            .q_active
            .iter()
            .zip(&z)
            .map(|(q, z)| q * (z - 1.0))
            .sum::<f64>();
    let c = 1.0 / b;
    let lc = c.ln();
    let risk = (1.0 - sel.p_star) * (-lambda * lc).exp()
        + sel
            .p_active
            .iter()
            .zip(&z)
            .map(|(p, z)| p * (-lambda * (lc + z.ln())).exp())
            .sum::<f64>();
    Ok(CalibrationState { s, z, b, c, risk })
}

/// `R(0)`: the risk of the ordinary Kelly point,
/// `tau*^-lambda (1 - P*) + sum p_i L_i^-lambda`.
pub fn kelly_risk(sel: &PrefixSelection, lambda: f64) -> f64 {
    (1.0 - sel.p_star) * (-lambda * sel.tau_star.ln()).exp()
        + sel
            .p_active
            .iter()
            .zip(&sel.l_active)
            .map(|(p, l)| p * (-lambda * l.ln()).exp())
            .sum::<f64>()
}

/// `lim R(s) = tau* C^(lambda+1)` with `C = (1 - Q*) + sum q_i r_i^(1/(lambda+1))`.
pub fn risk_limit(sel: &PrefixSelection, lambda: f64) -> f64 {
    let e = 1.0 / (lambda + 1.0);
    let big_c = (1.0 - sel.q_star)
        + sel
            .q_active
            .iter()
            .zip(&sel.r)
            .map(|(q, r)| q * (r.ln() * e).exp())
            .sum::<f64>();
    sel.tau_star * ((lambda + 1.0) * big_c.ln()).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub lambda: f64,
    pub binding: bool,
    pub s_star: f64,
    pub eta_star: f64,
    pub nu_star: f64,
    /// Risk at the Kelly point.
    pub r0: f64,
    /// Active wealth ratios at `s*`, in prefix order.
    pub z: Vec<f64>,
    pub allocation: Allocation,
    pub outer_iterations: usize,
}

pub fn calibrate(sel: &PrefixSelection, sm: &SortedMarket, lambda: f64) -> Result<CalibrationResult> {
    calibrate_with(sel, sm, lambda, &Tolerances::default())
}

/// Constrained logarithmic optimum on the prefix `sel`.
///
/// Returns the Kelly point when `R(0) <= 1 + 1e-12`. Otherwise brackets the
/// root of `R(s) = 1` by doubling from `s = 1` and refines it with Brent's
/// method to `|R - 1| <= tol.outer`.
pub fn calibrate_with(
    sel: &PrefixSelection,
    sm: &SortedMarket,
    lambda: f64,
    tol: &Tolerances,
) -> Result<CalibrationResult> {
    if sm.regime() != Regime::Overround {
        return Err(Error::NotOverround {
            price_sum: sm.market().price_sum(),
        });
    }
    check_lambda(lambda)?;
    let r0 = kelly_risk(sel, lambda);
    if r0 <= 1.0 + 1e-12 {
        debug!("lambda = {lambda}: R(0) = {r0}, constraint slack");
        return Ok(CalibrationResult {
            lambda,
            binding: false,
            s_star: 0.0,
            eta_star: 0.0,
            nu_star: 1.0,
            r0,
            z: sel.r.clone(),
            allocation: crra::solve_kelly(sel, sm, lambda),
            outer_iterations: 0,
        });
    }

    let mut failure: Option<Error> = None;
    let mut excess = |s: f64| match eval_state_with(sel, lambda, s, tol) {
        Ok(st) => st.risk - 1.0,
        Err(e) => {
            failure.get_or_insert(e);
            f64::NAN
        }
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut expansions = 0;
    loop {
        let f = excess(hi);
        if f.is_nan() {
            break;
        }
        if f < 0.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions >= tol.max_outer_iter {
            return Err(Error::ConvergenceFailure {
                what: "outer bracket",
                iterations: expansions,
                residual: f,
            });
        }
    }
    let root = roots::brent(
        &mut excess,
        lo,
        hi,
        Stop {
            xtol: 0.0,
            ftol: tol.outer,
            max_iter: tol.max_outer_iter,
        },
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let root = match root {
        Ok(r) => r,
        Err(RootError::IterationLimit(r)) => {
            return Err(Error::ConvergenceFailure {
                what: "outer calibration",
                iterations: r.iterations,
                residual: r.fx.abs(),
            })
        }
        Err(RootError::NotBracketed { fa, fb }) => {
            return Err(Error::ConvergenceFailure {
                what: "outer bracket",
                iterations: expansions,
                residual: fa.abs().min(fb.abs()),
            })
        }
    };

    let state = eval_state_with(sel, lambda, root.x, tol)?;
    if (state.risk - 1.0).abs() > tol.outer {
        return Err(Error::ConvergenceFailure {
            what: "outer calibration",
            iterations: root.iterations,
            residual: (state.risk - 1.0).abs(),
        });
    }
    debug!(
        "lambda = {lambda}: s* = {} after {} expansions and {} refinements",
        root.x, expansions, root.iterations
    );

    let s = state.s;
    let c = state.c;
    let mut stakes = vec![0.0; sm.len()];
    for ((&i, &q), &z) in sel.active.iter().zip(&sel.q_active).zip(&state.z) {
        stakes[i] = q * c * (z - 1.0);
    }
    let allocation = Allocation::evaluate(sm.market(), c, stakes, 1.0, lambda);
    Ok(CalibrationResult {
        lambda,
        binding: true,
        s_star: s,
        eta_star: s * (lambda * c.ln()).exp() / lambda,
        nu_star: sel.tau_star * (1.0 + s) / c,
        r0,
        z: state.z,
        allocation,
        outer_iterations: expansions + root.iterations,
    })
}

/// Calibrates every `lambda` in the grid. Entries are independent; errors are
/// reported per entry. Runs on the rayon pool when the `parallel` feature is
/// enabled, with results identical to [`sweep_sequential`].
pub fn sweep(sel: &PrefixSelection, sm: &SortedMarket, lambda_grid: &[f64]) -> Vec<Result<CalibrationResult>> {
    par::map(lambda_grid, |&lambda| calibrate(sel, sm, lambda))
}

pub fn sweep_sequential(
    sel: &PrefixSelection,
    sm: &SortedMarket,
    lambda_grid: &[f64],
) -> Vec<Result<CalibrationResult>> {
    lambda_grid.iter().map(|&lambda| calibrate(sel, sm, lambda)).collect()
}

/// The complete logarithmic solver for an overround market: sort, find the
/// prefix, evaluate `R(0)`, calibrate if binding.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSolution {
    /// `None` when holding only cash is optimal.
    pub prefix: Option<PrefixSelection>,
    pub result: CalibrationResult,
}

pub fn solve_log(sm: &SortedMarket, lambda: f64, tol: &Tolerances) -> Result<LogSolution> {
    check_lambda(lambda)?;
    match crra::find_prefix(sm)? {
        PrefixOutcome::Active(sel) => {
            let result = calibrate_with(&sel, sm, lambda, tol)?;
            Ok(LogSolution {
                prefix: Some(sel),
                result,
            })
        }
        PrefixOutcome::AllCash => Ok(LogSolution {
            prefix: None,
            result: CalibrationResult {
                lambda,
                binding: false,
                s_star: 0.0,
                eta_star: 0.0,
                nu_star: 1.0,
                r0: 1.0,
                z: Vec::new(),
                allocation: crra::all_cash(sm, SolverParams { gamma: 1.0, lambda }),
                outer_iterations: 0,
            },
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{sort_market, Market};

    fn reference() -> (SortedMarket, PrefixSelection) {
        let sm = sort_market(&Market::new(vec![0.5, 0.3, 0.2], vec![0.45, 0.35, 0.3]).unwrap());
        match crra::find_prefix(&sm).unwrap() {
            PrefixOutcome::Active(sel) => (sm, sel),
            _ => unreachable!(),
        }
    }

    #[test]
    fn inner_at_zero_is_r() {
        for r in [1.0001, 1.5, 7.0, 49.0] {
            for lambda in [0.3, 1.0, 2.0, 40.0] {
                assert_eq!(inner_solve(r, 0.0, lambda).unwrap(), r);
            }
        }
    }

    #[test]
    fn inner_lambda_one_closed_form() {
        let z = inner_solve(2.0, 1.0, 1.0).unwrap();
        assert!((z - (2.0 + 20f64.sqrt()) / 4.0).abs() < 1e-15);
        assert!((z - 1.618_033_988_749_895).abs() < 1e-15);
    }

    #[test]
    fn inner_reference_value() {
        let r = 11.0 / 9.0;
        let z = inner_solve(r, 0.3794, 2.0).unwrap();
        assert!((z - 1.1433).abs() < 1e-4);
    }

    #[test]
    fn inner_limit() {
        let r: f64 = 11.0 / 9.0;
        let z = inner_solve(r, 1e8, 2.0).unwrap();
        let lim = r.powf(1.0 / 3.0);
        assert!((lim - 1.069_178_109_998_609).abs() < 1e-14);
        assert!(z > lim && z - lim < 1e-8);
    }

    #[test]
    fn inner_general_matches_quadratic() {
        // the general Newton path reproduces the closed form at lambda = 1
        for (r, s) in [(1.2, 0.1), (3.0, 2.5), (40.0, 1e5)] {
            let newton = newton_bracketed(r, s, 1.0);
            assert!((newton - quadratic_root(r, s)).abs() <= 4.0 * f64::EPSILON * newton);
        }
    }

    #[test]
    fn inner_rejects_domain() {
        assert!(matches!(inner_solve(1.0, 1.0, 2.0), Err(Error::DomainError(_))));
        assert!(matches!(inner_solve(0.5, 1.0, 2.0), Err(Error::DomainError(_))));
        assert!(inner_solve(2.0, -1.0, 2.0).is_err());
    }

    #[test]
    fn inner_large_lambda() {
        let z = inner_solve(50.0, 1e6, 1000.0).unwrap();
        assert!(inner_residual(50.0, 1e6, 1000.0, z) <= residual_floor(1000.0));
    }

    #[test]
    fn state_at_zero() {
        let (_, sel) = reference();
        let st = eval_state(&sel, 2.0, 0.0).unwrap();
        assert!((st.c - sel.tau_star).abs() < 1e-15);
        assert!((st.risk - 1.01).abs() < 1e-12);
        assert!((kelly_risk(&sel, 2.0) - 1.01).abs() < 1e-12);
        assert!((kelly_risk(&sel, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reference_calibration() {
        let (sm, sel) = reference();
        let res = calibrate(&sel, &sm, 2.0).unwrap();
        assert!(res.binding);
        assert!((res.s_star - 0.3794).abs() < 1e-3);
        assert!((res.z[0] - 1.1433).abs() < 1e-3);
        let a = &res.allocation;
        assert!((a.cash - 0.9394).abs() < 1e-3);
        assert!((a.wealth[0] - 1.0740).abs() < 1e-3);
        assert!((a.stakes[0] - 0.0606).abs() < 1e-3);
        assert!((a.risk - 1.0).abs() < 1e-12);
        assert!(a.budget_residual().abs() < 1e-15);
        assert_eq!(&a.stakes[1..], &[0.0, 0.0]);
    }

    #[test]
    fn reference_lambda_one_is_kelly() {
        let (sm, sel) = reference();
        let res = calibrate(&sel, &sm, 1.0).unwrap();
        assert!(!res.binding);
        assert!((res.allocation.cash - 0.9091).abs() < 5e-5);
        assert!((res.allocation.stakes[0] - 0.0909).abs() < 5e-5);
    }

    #[test]
    fn slack_for_small_lambda() {
        let (sm, sel) = reference();
        let r0 = kelly_risk(&sel, 0.5);
        assert!(r0 <= 1.0);
        let res = calibrate(&sel, &sm, 0.5).unwrap();
        assert!(!res.binding);
        assert_eq!(res.allocation, crra::solve_kelly(&sel, &sm, 0.5));
    }

    #[test]
    fn lambda_range() {
        let (sm, sel) = reference();
        assert!(matches!(calibrate(&sel, &sm, 2000.0), Err(Error::OutOfRange { .. })));
        assert!(calibrate(&sel, &sm, 0.0).is_err());
        let res = calibrate(&sel, &sm, 1000.0).unwrap();
        assert!((res.allocation.risk - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_matches_calibrate() {
        let (sm, sel) = reference();
        let grid = [1.0, 2.0, 3.0, 5.0];
        let par = sweep(&sel, &sm, &grid);
        let seq = sweep_sequential(&sel, &sm, &grid);
        assert_eq!(par, seq);
        assert!(!par[0].as_ref().unwrap().binding);
        assert_eq!(par[1].as_ref().unwrap(), &calibrate(&sel, &sm, 2.0).unwrap());
        for r in &par[1..] {
            let r = r.as_ref().unwrap();
            assert!(r.s_star >= 0.0);
            assert!((r.allocation.risk - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sweep_collects_errors() {
        let (sm, sel) = reference();
        let out = sweep(&sel, &sm, &[2.0, -1.0]);
        assert!(out[0].is_ok());
        assert!(out[1].is_err());
    }

    #[test]
    fn solve_log_all_cash() {
        let sm = sort_market(&Market::new(vec![0.5, 0.5], vec![0.55, 0.55]).unwrap());
        let sol = solve_log(&sm, 2.0, &Tolerances::default()).unwrap();
        assert!(sol.prefix.is_none());
        assert_eq!(sol.result.allocation.cash, 1.0);
    }
}
