//! Unconstrained CRRA optimum in the overround regime: locate the unique
//! likelihood-ratio prefix and evaluate the closed-form wealth profile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{Allocation, Regime, SortedMarket, REGIME_TOL};

/// CRRA and risk exponents, both strictly positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub gamma: f64,
    pub lambda: f64,
}

impl SolverParams {
    pub fn new(gamma: f64, lambda: f64) -> Result<SolverParams> {
        check_positive("gamma", gamma)?;
        check_positive("lambda", lambda)?;
        Ok(SolverParams { gamma, lambda })
    }

    pub fn log(lambda: f64) -> Result<SolverParams> {
        SolverParams::new(1.0, lambda)
    }
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}

/// The active prefix `{1, ..., k*}` together with its statistics.
///
/// Per-state vectors cover the active prefix only and are in sorted order;
/// `active[k]` is the original index of the `k`-th active state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefixSelection {
    pub k_star: usize,
    pub tau_star: f64,
    pub p_star: f64,
    pub q_star: f64,
    pub active: Vec<usize>,
    pub p_active: Vec<f64>,
    pub q_active: Vec<f64>,
    pub l_active: Vec<f64>,
    /// `r_i = L_i / tau*`, each above one.
    pub r: Vec<f64>,
}

impl PrefixSelection {
    /// `1 - P*`, summed directly from the inactive probabilities.
    pub fn inactive_mass(&self, sm: &SortedMarket) -> f64 {
        sm.sorted_probabilities()[self.k_star..].iter().sum()
    }
}

/// Result of the prefix search.
#[derive(Debug, Clone, PartialEq)]
pub enum PrefixOutcome {
    Active(PrefixSelection),
    /// No likelihood ratio beats its threshold: holding only cash is optimal.
    AllCash,
}

/// All `k` in `1..n` (1-based) with `Q_k < 1` and `L_k > tau_k >= L_{k+1}`.
pub fn prefix_candidates(sm: &SortedMarket) -> Vec<usize> {
    let l = sm.ratios();
    (1..sm.len())
        .filter(|&k| {
            match sm.tau()[k - 1] {
                Some(t) if sm.prefix_q()[k - 1] < 1.0 - REGIME_TOL => l[k - 1] > t && t >= l[k],
                _ => false,
            }
        })
        .collect()
}

/// Finds the unique active prefix of an overround market.
pub fn find_prefix(sm: &SortedMarket) -> Result<PrefixOutcome> {
    if sm.regime() != Regime::Overround {
        return Err(Error::NotOverround {
            price_sum: sm.market().price_sum(),
        });
    }
    let candidates = prefix_candidates(sm);
    match candidates.as_slice() {
        [k] => Ok(PrefixOutcome::Active(selection(sm, *k))),
        [] => {
            let l = sm.ratios();
            let any_edge = (1..sm.len()).any(|k| {
                matches!(sm.tau()[k - 1], Some(t) if t > 0.0 && l[k - 1] > t)
            });
            if any_edge {
                Err(Error::NoPrefix)
            } else {
                Ok(PrefixOutcome::AllCash)
            }
        }
        _ => Err(Error::NonUniquePrefix { candidates }),
    }
}

fn selection(sm: &SortedMarket, k: usize) -> PrefixSelection {
    let tau_star = sm.tau()[k - 1].expect("candidate has tau defined");
    let l_active = sm.ratios()[..k].to_vec();
    PrefixSelection {
        k_star: k,
        tau_star,
        p_star: sm.prefix_p()[k - 1],
        q_star: sm.prefix_q()[k - 1],
        active: sm.perm()[..k].to_vec(),
        p_active: sm.sorted_probabilities()[..k].to_vec(),
        q_active: sm.sorted_prices()[..k].to_vec(),
        r: l_active.iter().map(|l| l / tau_star).collect(),
        l_active,
    }
}

/// `c = 1`, no stakes.
pub fn all_cash(sm: &SortedMarket, params: SolverParams) -> Allocation {
    Allocation::evaluate(sm.market(), 1.0, vec![0.0; sm.len()], params.gamma, params.lambda)
}

/// Closed-form unconstrained CRRA optimum on the prefix:
/// `W_i = c (L_i / tau*)^(1/gamma)` on the active states, `W_i = c` elsewhere,
/// with `c` fixed by the budget.
pub fn solve_unconstrained_crra(sel: &PrefixSelection, sm: &SortedMarket, params: SolverParams) -> Allocation {
    let inv_gamma = 1.0 / params.gamma;
    let growth: Vec<f64> = sel.r.iter().map(|r| (r.ln() * inv_gamma).exp()).collect();
    let denom = (1.0 - sel.q_star)
        + sel
            .q_active
            .iter()
            .zip(&growth)
            .map(|(q, g)| q * g)
            .sum::<f64>();
    let cash = 1.0 / denom;
    let mut stakes = vec![0.0; sm.len()];
    for ((&i, &q), &g) in sel.active.iter().zip(&sel.q_active).zip(&growth) {
        stakes[i] = q * cash * (g - 1.0);
    }
    Allocation::evaluate(sm.market(), cash, stakes, params.gamma, params.lambda)
}

/// Ordinary Kelly: `c = tau*`, `x_i = q_i (L_i - tau*)` on the prefix.
/// Risk is reported at `lambda`.
pub fn solve_kelly(sel: &PrefixSelection, sm: &SortedMarket, lambda: f64) -> Allocation {
    let mut stakes = vec![0.0; sm.len()];
    for ((&i, &q), &l) in sel.active.iter().zip(&sel.q_active).zip(&sel.l_active) {
        stakes[i] = q * (l - sel.tau_star);
    }
    Allocation::evaluate(sm.market(), sel.tau_star, stakes, 1.0, lambda)
}
