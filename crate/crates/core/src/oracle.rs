//! Brute-force reference solver and KKT auditor.
//!
//! The oracle makes no use of the prefix structure. It enumerates every
//! candidate support, solves the first-order system for that support directly
//! in `(c, eta)` coordinates, keeps the candidates whose multiplier signs are
//! consistent, and returns the best one. A coarse grid over the budget simplex
//! then checks that nothing beats it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{crra_objective, risk_unchecked, Allocation, Market};
use crate::par;
use crate::roots::{self, RootError, Stop};

/// Largest market handled by enumeration (`2^8` supports).
pub const MAX_OUTCOMES: usize = 8;
/// Stakes at or below this are treated as zero when reading off a support.
pub const SUPPORT_TOL: f64 = 1e-9;
/// Residual bound for an audit to pass.
pub const AUDIT_TOL: f64 = 1e-8;
pub const MIN_RESOLUTION: usize = 50;

const GRID_SLACK: f64 = 1e-8;
const FULL_GRID_LIMIT: usize = 40_000;

pub fn brute_force_solve(m: &Market, gamma: f64, lambda: f64, resolution: usize) -> Result<Allocation> {
    Ok(solve_detailed(m, gamma, lambda, resolution)?.allocation)
}

/// Oracle optimum together with the multipliers of its support system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSolution {
    pub allocation: Allocation,
    pub eta: f64,
    pub nu: f64,
}

pub fn solve_detailed(m: &Market, gamma: f64, lambda: f64, resolution: usize) -> Result<OracleSolution> {
    let best = best_candidate(m, gamma, lambda, resolution)?;
    grid_check(m, gamma, lambda, resolution, &best.allocation)?;
    Ok(OracleSolution {
        allocation: best.allocation,
        eta: best.eta,
        nu: best.nu,
    })
}

/// A KKT-consistent point for one support.
#[derive(Debug, Clone)]
struct Candidate {
    support_size: usize,
    eta: f64,
    nu: f64,
    allocation: Allocation,
}

fn best_candidate(m: &Market, gamma: f64, lambda: f64, resolution: usize) -> Result<Candidate> {
    let n = m.len();
    if n > MAX_OUTCOMES {
        return Err(Error::TooManyOutcomes { n, max: MAX_OUTCOMES });
    }
    if resolution < MIN_RESOLUTION {
        return Err(Error::ResolutionTooCoarse(resolution));
    }
    crate::crra::SolverParams::new(gamma, lambda)?;
    let problem = Problem::new(m, gamma, lambda);

    // proper subsets with positive cash, plus full support at zero cash
    let mut shapes: Vec<Shape> = (0..(1u32 << n) - 1).map(Shape::Cash).collect();
    shapes.push(Shape::NoCash);
    let found: Vec<Option<Candidate>> = par::map(&shapes, |&shape| problem.candidate(shape));

    let mut best: Option<Candidate> = None;
    for c in found.into_iter().flatten() {
        best = match best {
            None => Some(c),
            Some(b) => {
                let diff = c.allocation.objective - b.allocation.objective;
                let tie = diff.abs() <= 1e-12 * (1.0 + b.allocation.objective.abs());
                if diff > 0.0 && !tie || tie && c.support_size > b.support_size {
                    Some(c)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.ok_or(Error::InfeasibleModel)
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    /// Stakes positive exactly on the bitmask, cash positive.
    Cash(u32),
    /// Every stake positive and zero cash.
    NoCash,
}

struct Problem<'a> {
    market: &'a Market,
    ratios: Vec<f64>,
    gamma: f64,
    lambda: f64,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn root_x(r: std::result::Result<roots::Root, RootError>) -> Option<f64> {
    match r {
        Ok(r) => Some(r.x),
        Err(RootError::IterationLimit(r)) => Some(r.x),
        Err(RootError::NotBracketed { .. }) => None,
    }
}

const STOP: Stop = Stop {
    xtol: 0.0,
    ftol: 0.0,
    max_iter: 300,
};

impl<'a> Problem<'a> {
    fn new(market: &'a Market, gamma: f64, lambda: f64) -> Self {
        Problem {
            market,
            ratios: market.likelihood_ratios(),
            gamma,
            lambda,
        }
    }

    /// `ln(w^-gamma + eta lambda w^-(lambda+1))` at `lw = ln w`.
    fn ln_marginal(&self, lw: f64, eta: f64) -> f64 {
        let a = -self.gamma * lw;
        if eta == 0.0 {
            return a;
        }
        log_add_exp(a, (eta * self.lambda).ln() - (self.lambda + 1.0) * lw)
    }

    /// Inverts the (decreasing) marginal: `ln w` with `ln_marginal(ln w) = target`.
    fn invert_marginal(&self, target: f64, eta: f64) -> f64 {
        let lo = -target / self.gamma;
        if eta == 0.0 {
            return lo;
        }
        let ln2 = std::f64::consts::LN_2;
        let hi = ((ln2 - target) / self.gamma).max(((eta * self.lambda).ln() + ln2 - target) / (self.lambda + 1.0));
        root_x(roots::brent(|lw| self.ln_marginal(lw, eta) - target, lo, hi.max(lo), STOP)).unwrap_or(lo)
    }

    fn candidate(&self, shape: Shape) -> Option<Candidate> {
        match shape {
            Shape::Cash(mask) => self.cash_candidate(mask),
            Shape::NoCash => self.no_cash_candidate(),
        }
    }

    fn cash_candidate(&self, mask: u32) -> Option<Candidate> {
        let n = self.market.len();
        let p = self.market.probabilities();
        let q = self.market.prices();
        let inside = |i: usize| mask & (1 << i) != 0;
        let p_in: f64 = (0..n).filter(|&i| inside(i)).map(|i| p[i]).sum();
        let q_in: f64 = (0..n).filter(|&i| inside(i)).map(|i| q[i]).sum();
        if !(q_in < 1.0 - 1e-12) {
            return None;
        }
        let threshold = if mask == 0 { 1.0 } else { (1.0 - p_in) / (1.0 - q_in) };
        // complementary slackness pins the support to {L > threshold}
        let consistent = (0..n).all(|i| {
            if inside(i) {
                self.ratios[i] > threshold
            } else {
                self.ratios[i] <= threshold * (1.0 + 1e-12)
            }
        });
        if !consistent {
            return None;
        }

        let path = |eta: f64| -> Option<(f64, Vec<f64>)> {
            // wealth on the support for cash level e^lc
            let wealth_at = |lc: f64| -> Vec<f64> {
                let base = self.ln_marginal(lc, eta);
                (0..n)
                    .map(|i| {
                        if inside(i) {
                            self.invert_marginal((threshold / self.ratios[i]).ln() + base, eta).exp()
                        } else {
                            lc.exp()
                        }
                    })
                    .collect()
            };
            let budget = |lc: f64| -> f64 {
                let w = wealth_at(lc);
                (1.0 - q_in) * lc.exp() + (0..n).filter(|&i| inside(i)).map(|i| q[i] * w[i]).sum::<f64>() - 1.0
            };
            if mask == 0 {
                return Some((1.0, vec![1.0; n]));
            }
            let mut lo = -1.0;
            let mut steps = 0;
            while budget(lo) >= 0.0 {
                lo *= 2.0;
                steps += 1;
                if steps > 60 {
                    return None;
                }
            }
            let lc = root_x(roots::brent(budget, lo, 0.0, STOP))?;
            Some((lc.exp(), wealth_at(lc)))
        };
        let nu_at = |eta: f64, c: f64| threshold * self.ln_marginal(c.ln(), eta).exp();

        let (eta, (cash, wealth)) = self.calibrate_eta(path)?;
        let stakes = (0..n)
            .map(|i| if inside(i) { q[i] * (wealth[i] - cash) } else { 0.0 })
            .collect();
        Some(Candidate {
            support_size: mask.count_ones() as usize,
            eta,
            nu: nu_at(eta, cash),
            allocation: Allocation::evaluate(self.market, cash, stakes, self.gamma, self.lambda),
        })
    }

    fn no_cash_candidate(&self) -> Option<Candidate> {
        let n = self.market.len();
        let q = self.market.prices();
        if self.market.price_sum() > 1.0 + 1e-12 {
            return None;
        }
        let wealth_for = |eta: f64, ln_nu: f64| -> Vec<f64> {
            self.ratios
                .iter()
                .map(|l| self.invert_marginal(ln_nu - l.ln(), eta).exp())
                .collect()
        };
        let ln_nu_for = |eta: f64| -> Option<f64> {
            let budget = |ln_nu: f64| wealth_for(eta, ln_nu).iter().zip(q).map(|(w, q)| q * w).sum::<f64>() - 1.0;
            let (mut lo, mut hi) = (-1.0, 1.0);
            let mut steps = 0;
            while budget(lo) <= 0.0 || budget(hi) >= 0.0 {
                lo *= 2.0;
                hi *= 2.0;
                steps += 1;
                if steps > 60 {
                    return None;
                }
            }
            root_x(roots::brent(budget, lo, hi, STOP))
        };
        let path = |eta: f64| -> Option<(f64, Vec<f64>)> {
            let ln_nu = ln_nu_for(eta)?;
            Some((0.0, wealth_for(eta, ln_nu)))
        };
        let (eta, (_, wealth)) = self.calibrate_eta(path)?;
        let nu = ln_nu_for(eta)?.exp();
        let stakes = wealth.iter().zip(q).map(|(w, q)| q * w).collect();
        Some(Candidate {
            support_size: n,
            eta,
            nu,
            allocation: Allocation::evaluate(self.market, 0.0, stakes, self.gamma, self.lambda),
        })
    }

    /// Smallest `eta >= 0` whose point on `path` satisfies the risk constraint:
    /// `eta = 0` if already feasible, otherwise the root of `risk = 1`.
    fn calibrate_eta<F>(&self, path: F) -> Option<(f64, (f64, Vec<f64>))>
    where
        F: Fn(f64) -> Option<(f64, Vec<f64>)>,
    {
        let p = self.market.probabilities();
        let excess = |eta: f64| -> f64 {
            match path(eta) {
                Some((_, w)) => risk_unchecked(&w, p, self.lambda) - 1.0,
                None => f64::NAN,
            }
        };
        let free = path(0.0)?;
        if risk_unchecked(&free.1, p, self.lambda) <= 1.0 + 1e-12 {
            return Some((0.0, free));
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut steps = 0;
        loop {
            let f = excess(hi);
            if f.is_nan() {
                return None;
            }
            if f < 0.0 {
                break;
            }
            lo = hi;
            hi *= 2.0;
            steps += 1;
            if steps > 1100 {
                return None;
            }
        }
        let eta = root_x(roots::brent(
            excess,
            lo,
            hi,
            Stop {
                ftol: 1e-14,
                ..STOP
            },
        ))?;
        Some((eta, path(eta)?))
    }
}

/// Checks that no feasible grid point beats `winner` by more than `1e-8`.
///
/// Small markets are checked on the full simplex grid with spacing
/// `1/resolution`; larger ones along every pairwise exchange direction from
/// the winner, in steps of `1/resolution` of the donor coordinate.
fn grid_check(m: &Market, gamma: f64, lambda: f64, resolution: usize, winner: &Allocation) -> Result<()> {
    let n = m.len();
    let p = m.probabilities();
    let q = m.prices();
    let best = winner.objective;
    let score = |v: &[f64]| -> Option<f64> {
        let w: Vec<f64> = (0..n).map(|i| v[0] + v[i + 1] / q[i]).collect();
        if w.iter().any(|&x| x <= 0.0) {
            return None;
        }
        (risk_unchecked(&w, p, lambda) <= 1.0).then(|| crra_objective(&w, p, gamma))
    };
    let fail = |grid: f64| Err(Error::OracleDisagreement { winner: best, grid });

    if simplex_points(resolution, n + 1) <= FULL_GRID_LIMIT {
        let mut counts = vec![0usize; n + 1];
        let mut worst = f64::NEG_INFINITY;
        walk_simplex(&mut counts, 0, resolution, &mut |c| {
            let v: Vec<f64> = c.iter().map(|&k| k as f64 / resolution as f64).collect();
            if let Some(s) = score(&v) {
                worst = worst.max(s);
            }
        });
        if worst > best + GRID_SLACK {
            return fail(worst);
        }
        return Ok(());
    }

    let mut base = vec![winner.cash];
    base.extend_from_slice(&winner.stakes);
    for a in 0..=n {
        for b in 0..=n {
            if a == b || base[a] <= 0.0 {
                continue;
            }
            for t in 1..=resolution {
                let delta = base[a] * t as f64 / resolution as f64;
                let mut v = base.clone();
                v[a] -= delta;
                v[b] += delta;
                if let Some(s) = score(&v) {
                    if s > best + GRID_SLACK {
                        return fail(s);
                    }
                }
            }
        }
    }
    Ok(())
}

fn simplex_points(resolution: usize, dims: usize) -> usize {
    // C(resolution + dims - 1, dims - 1), saturating
    let mut acc: u128 = 1;
    for k in 1..dims as u128 {
        acc = acc * (resolution as u128 + k) / k;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

fn walk_simplex(counts: &mut Vec<usize>, pos: usize, left: usize, visit: &mut impl FnMut(&[usize])) {
    if pos + 1 == counts.len() {
        counts[pos] = left;
        visit(counts);
        return;
    }
    for k in 0..=left {
        counts[pos] = k;
        walk_simplex(counts, pos + 1, left - k, visit);
    }
}

/// True when the oracle optimum leaves at least one outcome unbet.
pub fn check_full_support_obstruction(m: &Market, gamma: f64, lambda: f64, resolution: usize) -> Result<bool> {
    let a = brute_force_solve(m, gamma, lambda, resolution)?;
    Ok(a.stakes.iter().any(|&x| x <= SUPPORT_TOL))
}

/// Multipliers and residuals of the KKT system at an allocation.
///
/// Stationarity residuals are listed per stake, then for cash. Complementarity
/// products are `mu_i x_i` per stake, then `rho c`, then `eta (risk - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    pub nu: f64,
    pub eta: f64,
    pub rho: f64,
    pub mu: Vec<f64>,
    pub stationarity_residuals: Vec<f64>,
    pub complementarity_residuals: Vec<f64>,
    pub budget_residual: f64,
    pub risk: Option<f64>,
    pub feasible: bool,
    pub max_residual: f64,
    pub pass: bool,
}

/// Audits `alloc` against the KKT conditions of the CRRA problem, with the
/// risk constraint at `lambda` or without it when `lambda` is `None`.
///
/// `eta` and `nu` are fitted by least squares to the stationarity equations of
/// the positive variables; `mu` and `rho` follow from the remaining ones. The
/// audit passes when every residual is within [`AUDIT_TOL`] and the point is
/// feasible.
pub fn audit_kkt(m: &Market, gamma: f64, lambda: Option<f64>, alloc: &Allocation) -> KktReport {
    let n = m.len();
    let p = m.probabilities();
    let l = m.likelihood_ratios();
    let q = m.prices();
    let wealth: Vec<f64> = (0..n).map(|i| alloc.cash + alloc.stakes[i] / q[i]).collect();
    let positive = wealth.iter().all(|&w| w > 0.0);
    let lam = lambda.unwrap_or(0.0);
    let risk = lambda.map(|lam| risk_unchecked(&wealth, p, lam));

    let util: Vec<f64> = wealth.iter().map(|w| (-gamma * w.ln()).exp()).collect();
    let pen: Vec<f64> = wealth.iter().map(|w| lam * (-(lam + 1.0) * w.ln()).exp()).collect();

    const ACTIVE: f64 = 1e-12;
    let binding = matches!(risk, Some(r) if r >= 1.0 - AUDIT_TOL);
    // rows: a * eta - nu = y
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for i in 0..n {
        if alloc.stakes[i] > ACTIVE {
            rows.push((l[i] * pen[i], -l[i] * util[i]));
        }
    }
    if alloc.cash > ACTIVE {
        let a: f64 = (0..n).map(|i| p[i] * pen[i]).sum();
        let y: f64 = -(0..n).map(|i| p[i] * util[i]).sum::<f64>();
        rows.push((a, y));
    }
    let (eta, nu) = fit_multipliers(&rows, binding);

    let marg: Vec<f64> = (0..n).map(|i| util[i] + eta * pen[i]).collect();
    let mut mu = vec![0.0; n];
    let mut stationarity = Vec::with_capacity(n + 1);
    for i in 0..n {
        let g = l[i] * marg[i];
        if alloc.stakes[i] > ACTIVE {
            stationarity.push(g - nu);
        } else {
            mu[i] = (nu - g).max(0.0);
            stationarity.push(g - nu + mu[i]);
        }
    }
    let cash_marg: f64 = (0..n).map(|i| p[i] * marg[i]).sum();
    let rho = if alloc.cash > ACTIVE { 0.0 } else { (nu - cash_marg).max(0.0) };
    stationarity.push(cash_marg - nu + rho);

    let mut complementarity: Vec<f64> = (0..n).map(|i| mu[i] * alloc.stakes[i]).collect();
    complementarity.push(rho * alloc.cash);
    complementarity.push(eta * (risk.unwrap_or(1.0) - 1.0));

    let budget_residual = alloc.cash + alloc.stakes.iter().sum::<f64>() - 1.0;
    let nonneg = alloc.cash >= -ACTIVE && alloc.stakes.iter().all(|&x| x >= -ACTIVE);
    let feasible = positive
        && nonneg
        && budget_residual.abs() <= AUDIT_TOL
        && risk.is_none_or(|r| r <= 1.0 + AUDIT_TOL);
    let max_residual = stationarity
        .iter()
        .chain(&complementarity)
        .fold(budget_residual.abs(), |acc, r| acc.max(r.abs()));
    let pass = feasible && max_residual <= AUDIT_TOL && max_residual.is_finite();

    KktReport {
        nu,
        eta,
        rho,
        mu,
        stationarity_residuals: stationarity,
        complementarity_residuals: complementarity,
        budget_residual,
        risk,
        feasible,
        max_residual,
        pass,
    }
}

/// Least squares for `(eta, nu)` over rows `a eta - nu = y`, with `eta`
/// clamped at zero and fixed to zero when the constraint is slack or the
/// rows cannot separate the two multipliers.
fn fit_multipliers(rows: &[(f64, f64)], binding: bool) -> (f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0);
    }
    let m = rows.len() as f64;
    let nu_only = || -rows.iter().map(|r| r.1).sum::<f64>() / m;
    if !binding {
        return (0.0, nu_only());
    }
    // centred least squares for a eta - nu = y; avoids the cancellation in
    // the normal equations when the rows are nearly parallel
    let a_bar = rows.iter().map(|r| r.0).sum::<f64>() / m;
    let y_bar = rows.iter().map(|r| r.1).sum::<f64>() / m;
    let sxx: f64 = rows.iter().map(|r| (r.0 - a_bar).powi(2)).sum();
    let sxy: f64 = rows.iter().map(|r| (r.0 - a_bar) * (r.1 - y_bar)).sum();
    let saa: f64 = rows.iter().map(|r| r.0 * r.0).sum();
    if !(sxx > 1e-14 * saa) {
        return (0.0, nu_only());
    }
    let eta = sxy / sxx;
    let nu = eta * a_bar - y_bar;
    if eta < 0.0 {
        (0.0, nu_only())
    } else {
        (eta, nu)
    }
}
