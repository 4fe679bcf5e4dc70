//! Fair-market (`Q_n = 1`) logarithmic benchmark.
//!
//! The unconstrained Kelly point is `W_i = L_i` with full support. For
//! `lambda <= 1` it always satisfies the risk constraint; for `lambda > 1` it
//! may not, and the constrained optimum then solves the interior system
//!
//! ```text
//! L_i (W_i^-1 + eta lambda W_i^-(lambda+1)) = nu   for all i
//! sum q_i W_i = 1,   sum p_i W_i^-lambda = 1
//! ```

use log::debug;
use serde::Serialize;

use crate::crra::check_positive;
use crate::error::{Error, Result};
use crate::market::{risk_unchecked, Allocation, Market, Regime, SortedMarket};
use crate::roots::{self, Stop};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairSolution {
    /// Terminal wealth in original order.
    pub wealth: Vec<f64>,
    pub eta: f64,
    pub nu: f64,
    pub feasible_at_kelly: bool,
}

impl FairSolution {
    /// The allocation with zero cash and `x_i = q_i W_i`. In a fair market any
    /// cash level up to `min W` funds the same wealth profile; zero cash is
    /// the full-support representative.
    pub fn allocation(&self, market: &Market, lambda: f64) -> Allocation {
        let stakes = self.wealth.iter().zip(market.prices()).map(|(w, q)| q * w).collect();
        Allocation::evaluate(market, 0.0, stakes, 1.0, lambda)
    }

    pub fn budget_residual(&self, market: &Market) -> f64 {
        self.wealth.iter().zip(market.prices()).map(|(w, q)| q * w).sum::<f64>() - 1.0
    }

    pub fn risk_residual(&self, market: &Market, lambda: f64) -> f64 {
        risk_unchecked(&self.wealth, market.probabilities(), lambda) - 1.0
    }
}

fn require_fair(sm: &SortedMarket) -> Result<()> {
    if sm.regime() == Regime::Fair {
        Ok(())
    } else {
        Err(Error::NotFair {
            price_sum: sm.market().price_sum(),
        })
    }
}

/// Kelly wealth `W_i = p_i / q_i`, original order.
pub fn fair_kelly(sm: &SortedMarket) -> Result<Vec<f64>> {
    require_fair(sm)?;
    Ok(sm.market().likelihood_ratios())
}

/// Risk of the fair Kelly point, `sum p_i^(1-lambda) q_i^lambda`.
pub fn fair_kelly_risk(sm: &SortedMarket, lambda: f64) -> Result<f64> {
    require_fair(sm)?;
    check_positive("lambda", lambda)?;
    let m = sm.market();
    Ok(m.probabilities()
        .iter()
        .zip(m.prices())
        .map(|(p, q)| ((1.0 - lambda) * p.ln() + lambda * q.ln()).exp())
        .sum())
}

pub fn fair_feasibility(sm: &SortedMarket, lambda: f64) -> Result<bool> {
    Ok(fair_kelly_risk(sm, lambda)? <= 1.0 + 1e-12)
}

/// Target accuracy on both residuals.
const RESIDUAL_TOL: f64 = 1e-12;

/// Solves the constrained fair benchmark for `lambda > 1`.
///
/// If the Kelly point is already feasible it is returned with `eta = 0`,
/// `nu = 1`. Otherwise a damped Newton iteration on `(eta, nu)` with a
/// finite-difference Jacobian is tried first; if it stalls, nested monotone
/// root searches take over (`nu` from the budget for fixed `eta`, then `eta`
/// from the risk).
pub fn fair_constrained_solve(sm: &SortedMarket, lambda: f64) -> Result<FairSolution> {
    require_fair(sm)?;
    check_positive("lambda", lambda)?;
    if lambda <= 1.0 {
        return Err(Error::PreconditionViolated(format!(
            "interior solve needs lambda > 1, got {lambda}"
        )));
    }
    if fair_feasibility(sm, lambda)? {
        return Ok(FairSolution {
            wealth: fair_kelly(sm)?,
            eta: 0.0,
            nu: 1.0,
            feasible_at_kelly: true,
        });
    }
    let system = System::new(sm.market(), lambda);
    let (eta, nu) = match system.newton() {
        Some(x) => x,
        None => {
            debug!("fair solve: Newton stalled, using nested search");
            system.nested()?
        }
    };
    let sol = FairSolution {
        wealth: system.wealth(eta, nu),
        eta,
        nu,
        feasible_at_kelly: false,
    };
    let worst = sol
        .budget_residual(sm.market())
        .abs()
        .max(sol.risk_residual(sm.market(), lambda).abs());
    if worst > 1e-9 {
        return Err(Error::ConvergenceFailure {
            what: "fair interior system",
            iterations: 0,
            residual: worst,
        });
    }
    Ok(sol)
}

pub(crate) struct System<'a> {
    market: &'a Market,
    ratios: Vec<f64>,
    lambda: f64,
}

impl<'a> System<'a> {
    pub(crate) fn new(market: &'a Market, lambda: f64) -> Self {
        System {
            market,
            ratios: market.likelihood_ratios(),
            lambda,
        }
    }

    /// Solves `1/W + eta lambda W^-(lambda+1) = nu / L` for `W`. The left side
    /// is strictly decreasing, so the root is unique; search is in `ln W`.
    fn state_wealth(&self, l: f64, eta: f64, nu: f64) -> f64 {
        let t = nu / l;
        if eta == 0.0 {
            return 1.0 / t;
        }
        let a = eta * self.lambda;
        let k = self.lambda + 1.0;
        let lo = -t.ln();
        let hi = lo.max(((2.0 * a / t).ln()) / k) + std::f64::consts::LN_2;
        let f = |u: f64| (-u).exp() + a * (-k * u).exp() - t;
        match roots::brent(f, lo, hi, Stop::default()) {
            Ok(r) => r.x.exp(),
            Err(roots::RootError::IterationLimit(r)) => r.x.exp(),
            Err(roots::RootError::NotBracketed { .. }) => lo.exp(),
        }
    }

    pub(crate) fn wealth(&self, eta: f64, nu: f64) -> Vec<f64> {
        self.ratios.iter().map(|&l| self.state_wealth(l, eta, nu)).collect()
    }

    fn residuals(&self, eta: f64, nu: f64) -> [f64; 2] {
        let w = self.wealth(eta, nu);
        let budget = w.iter().zip(self.market.prices()).map(|(w, q)| q * w).sum::<f64>() - 1.0;
        let risk = risk_unchecked(&w, self.market.probabilities(), self.lambda) - 1.0;
        [budget, risk]
    }

    pub(crate) fn newton(&self) -> Option<(f64, f64)> {
        let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());
        let (mut eta, mut nu) = (1e-3, 1.0);
        let mut res = self.residuals(eta, nu);
        for _ in 0..100 {
            if norm(res) <= RESIDUAL_TOL {
                return Some((eta, nu));
            }
            let he = 1e-7 * eta.max(1e-3);
            let hn = 1e-7 * nu.max(1.0);
            let re = self.residuals(eta + he, nu);
            let rn = self.residuals(eta, nu + hn);
            let j = [
                [(re[0] - res[0]) / he, (rn[0] - res[0]) / hn],
                [(re[1] - res[1]) / he, (rn[1] - res[1]) / hn],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if !det.is_finite() || det == 0.0 {
                return None;
            }
            let de = -(j[1][1] * res[0] - j[0][1] * res[1]) / det;
            let dn = -(-j[1][0] * res[0] + j[0][0] * res[1]) / det;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let (e2, n2) = (eta + step * de, nu + step * dn);
                if e2 >= 0.0 && n2 > 0.0 {
                    let r2 = self.residuals(e2, n2);
                    if norm(r2) < norm(res) {
                        eta = e2;
                        nu = n2;
                        res = r2;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                return None;
            }
        }
        (norm(res) <= RESIDUAL_TOL).then_some((eta, nu))
    }

    /// `nu` making the budget exact at fixed `eta`. The budget residual is
    /// decreasing in `nu` and nonnegative at `nu = 1`.
    fn nu_for(&self, eta: f64) -> Result<f64> {
        let budget = |nu: f64| self.residuals(eta, nu)[0];
        let mut hi = 2.0;
        let mut n = 0;
        while budget(hi) > 0.0 {
            hi *= 2.0;
            n += 1;
            if n > 1100 {
                return Err(Error::ConvergenceFailure {
                    what: "fair budget bracket",
                    iterations: n,
                    residual: budget(hi),
                });
            }
        }
        root_or_fail(roots::brent(budget, 1.0, hi, Stop { ftol: 1e-15, ..Stop::default() }), "fair budget")
    }

    pub(crate) fn nested(&self) -> Result<(f64, f64)> {
        let risk = |eta: f64| -> f64 {
            match self.nu_for(eta) {
                Ok(nu) => self.residuals(eta, nu)[1],
                Err(_) => f64::NAN,
            }
        };
        let mut hi = 1.0;
        let mut n = 0;
        loop {
            let r = risk(hi);
            if r.is_nan() {
                return Err(Error::ConvergenceFailure {
                    what: "fair risk bracket",
                    iterations: n,
                    residual: r,
                });
            }
            if r < 0.0 {
                break;
            }
            hi *= 2.0;
            n += 1;
            if n > 1100 {
                return Err(Error::ConvergenceFailure {
                    what: "fair risk bracket",
                    iterations: n,
                    residual: r,
                });
            }
        }
        let eta = root_or_fail(
            roots::brent(risk, 0.0, hi, Stop { ftol: RESIDUAL_TOL, ..Stop::default() }),
            "fair risk calibration",
        )?;
        Ok((eta, self.nu_for(eta)?))
    }
}

fn root_or_fail(r: std::result::Result<roots::Root, roots::RootError>, what: &'static str) -> Result<f64> {
    match r {
        Ok(r) => Ok(r.x),
        Err(roots::RootError::IterationLimit(r)) => Err(Error::ConvergenceFailure {
            what,
            iterations: r.iterations,
            residual: r.fx.abs(),
        }),
        Err(roots::RootError::NotBracketed { fa, fb }) => Err(Error::ConvergenceFailure {
            what,
            iterations: 0,
            residual: fa.abs().min(fb.abs()),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::sort_market;

    fn sm(p: &[f64], q: &[f64]) -> SortedMarket {
        sort_market(&Market::new(p.to_vec(), q.to_vec()).unwrap())
    }

    #[test]
    fn kelly_is_likelihood_ratio() {
        assert_eq!(fair_kelly(&sm(&[0.5, 0.5], &[0.5, 0.5])).unwrap(), vec![1.0, 1.0]);
        let w = fair_kelly(&sm(&[0.6, 0.4], &[0.5, 0.5])).unwrap();
        assert!((w[0] - 1.2).abs() < 1e-15 && (w[1] - 0.8).abs() < 1e-15);
        let w = fair_kelly(&sm(&[0.5, 0.3, 0.2], &[0.5, 0.3, 0.2])).unwrap();
        assert_eq!(w, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn not_fair_rejected() {
        let m = sm(&[0.5, 0.3, 0.2], &[0.45, 0.35, 0.3]);
        assert!(matches!(fair_kelly(&m), Err(Error::NotFair { .. })));
        assert!(matches!(fair_feasibility(&m, 1.0), Err(Error::NotFair { .. })));
    }

    #[test]
    fn feasibility_values() {
        let m = sm(&[0.6, 0.4], &[0.5, 0.5]);
        assert!((fair_kelly_risk(&m, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(fair_feasibility(&m, 1.0).unwrap());
        let half = fair_kelly_risk(&m, 0.5).unwrap();
        assert!((half - (0.3f64.sqrt() + 0.2f64.sqrt())).abs() < 1e-15);
        assert!((half - 0.994_936_153_005_124).abs() < 1e-14);
        assert!(fair_feasibility(&m, 0.5).unwrap());
        // 0.6^-2 0.5^3 + 0.4^-2 0.5^3
        let three = fair_kelly_risk(&m, 3.0).unwrap();
        assert!((three - 1.128_472_222_222_222).abs() < 1e-14);
        assert!(!fair_feasibility(&m, 3.0).unwrap());
    }

    #[test]
    fn symmetric_is_degenerate() {
        let sol = fair_constrained_solve(&sm(&[0.3, 0.7], &[0.3, 0.7]), 3.0).unwrap();
        assert!(sol.feasible_at_kelly);
        assert_eq!(sol.eta, 0.0);
        assert_eq!(sol.nu, 1.0);
        assert!(sol.wealth.iter().all(|&w| (w - 1.0).abs() < 1e-15));
    }

    #[test]
    fn interior_solve_two_states() {
        let m = sm(&[0.6, 0.4], &[0.5, 0.5]);
        let sol = fair_constrained_solve(&m, 3.0).unwrap();
        assert!(!sol.feasible_at_kelly);
        assert!(sol.eta > 0.0);
        assert!(sol.budget_residual(m.market()).abs() <= 1e-9);
        assert!(sol.risk_residual(m.market(), 3.0).abs() <= 1e-9);
        assert!(sol.wealth[0] > sol.wealth[1]);
        let kelly = Allocation::evaluate(m.market(), 0.0, vec![0.6, 0.4], 1.0, 3.0);
        assert!(sol.allocation(m.market(), 3.0).objective < kelly.objective);
    }

    #[test]
    fn newton_and_nested_agree() {
        let m = Market::new(vec![0.5, 0.3, 0.2], vec![0.3, 0.3, 0.4]).unwrap();
        let sys = System::new(&m, 4.0);
        let (e1, n1) = sys.newton().expect("newton converges here");
        let (e2, n2) = sys.nested().unwrap();
        assert!((e1 - e2).abs() < 1e-8 * e1.max(1.0));
        assert!((n1 - n2).abs() < 1e-9);
    }

    #[test]
    fn precondition_checked() {
        let m = sm(&[0.6, 0.4], &[0.5, 0.5]);
        assert!(matches!(
            fair_constrained_solve(&m, 0.8),
            Err(Error::PreconditionViolated(_))
        ));
    }
}
