//! Market data model: outcome probabilities, state prices, likelihood-ratio
//! ordering, prefix statistics and the drawdown-surrogate risk functional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accepted deviation of the probability mass from 1.
pub const PROBABILITY_TOL: f64 = 1e-9;
/// Accepted budget residual `|c + sum x - 1|` for a solver output.
pub const BUDGET_TOL: f64 = 1e-10;
/// Tolerance on `Q_n - 1` when classifying the regime, and on `1 - Q_k` when
/// deciding whether `tau_k` is defined.
pub const REGIME_TOL: f64 = 1e-12;

/// Pricing regime of a market, decided by the total state-price mass `Q_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `Q_n > 1`: the bookmaker case; no optimizer bets on every outcome.
    Overround,
    /// `Q_n = 1`.
    Fair,
    /// `Q_n < 1`.
    Subfair,
}

impl Regime {
    pub fn classify(price_sum: f64) -> Regime {
        if price_sum > 1.0 + REGIME_TOL {
            Regime::Overround
        } else if (price_sum - 1.0).abs() <= REGIME_TOL {
            Regime::Fair
        } else {
            Regime::Subfair
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Overround => "Overround",
            Regime::Fair => "Fair",
            Regime::Subfair => "Subfair",
        })
    }
}

/// A validated market over `n >= 2` mutually exclusive outcomes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Market {
    p: Vec<f64>,
    q: Vec<f64>,
}

/// Validates raw probability and price vectors.
///
/// Probabilities whose sum lies within [`PROBABILITY_TOL`] of one are
/// rescaled to sum to one; anything further off is rejected.
pub fn validate(p: &[f64], q: &[f64]) -> Result<Market> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { p: p.len(), q: q.len() });
    }
    if p.len() < 2 {
        return Err(Error::TooFewOutcomes(p.len()));
    }
    for (field, v) in [("p", p), ("q", q)] {
        if let Some((index, &value)) = v
            .iter()
            .enumerate()
            .find(|(_, x)| !(x.is_finite() && **x > 0.0))
        {
            return Err(Error::NonPositiveEntry { field, index, value });
        }
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_TOL {
        return Err(Error::ProbabilityMassError { sum });
    }
    let p = if sum == 1.0 {
        p.to_vec()
    } else {
        p.iter().map(|x| x / sum).collect()
    };
    Ok(Market { p, q: q.to_vec() })
}

impl Market {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Market> {
        validate(&p, &q)
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn prices(&self) -> &[f64] {
        &self.q
    }

    /// `L_i = p_i / q_i` in original order.
    pub fn likelihood_ratios(&self) -> Vec<f64> {
        self.p.iter().zip(&self.q).map(|(p, q)| p / q).collect()
    }

    /// `Q_n`, summed in original order.
    pub fn price_sum(&self) -> f64 {
        self.q.iter().sum()
    }

    pub fn regime(&self) -> Regime {
        Regime::classify(self.price_sum())
    }

    /// Reorders the outcomes; `order[k]` is the old index placed at position `k`.
    pub fn permuted(&self, order: &[usize]) -> Market {
        Market {
            p: order.iter().map(|&i| self.p[i]).collect(),
            q: order.iter().map(|&i| self.q[i]).collect(),
        }
    }
}

/// Likelihood-ratio ordered view of a [`Market`] with prefix statistics.
///
/// All vectors are indexed by sorted position; position `k` (0-based) holds
/// the `(k+1)`-th largest likelihood ratio, and `prefix_p[k]` is `P_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedMarket {
    base: Market,
    perm: Vec<usize>,
    ratios: Vec<f64>,
    p_sorted: Vec<f64>,
    q_sorted: Vec<f64>,
    prefix_p: Vec<f64>,
    prefix_q: Vec<f64>,
    tau: Vec<Option<f64>>,
    regime: Regime,
}

/// Sorts outcomes by nonincreasing likelihood ratio. Ties keep the original
/// index order.
pub fn sort_market(m: &Market) -> SortedMarket {
    let ratios = m.likelihood_ratios();
    let mut perm: Vec<usize> = (0..m.len()).collect();
    // stable: equal ratios stay in index order
    perm.sort_by(|&a, &b| ratios[b].total_cmp(&ratios[a]));

    let p_sorted: Vec<f64> = perm.iter().map(|&i| m.p[i]).collect();
    let q_sorted: Vec<f64> = perm.iter().map(|&i| m.q[i]).collect();
    let prefix_p = prefix_sums(&p_sorted);
    let prefix_q = prefix_sums(&q_sorted);
    let tau = prefix_p
        .iter()
        .zip(&prefix_q)
        .map(|(&pk, &qk)| {
            let denom = 1.0 - qk;
            (denom.abs() > REGIME_TOL).then(|| (1.0 - pk) / denom)
        })
        .collect();

    SortedMarket {
        regime: m.regime(),
        ratios: perm.iter().map(|&i| ratios[i]).collect(),
        base: m.clone(),
        perm,
        p_sorted,
        q_sorted,
        prefix_p,
        prefix_q,
        tau,
    }
}

fn prefix_sums(v: &[f64]) -> Vec<f64> {
    v.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

impl SortedMarket {
    pub fn market(&self) -> &Market {
        &self.base
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// Sorted position -> original index.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Likelihood ratios, nonincreasing.
    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn sorted_probabilities(&self) -> &[f64] {
        &self.p_sorted
    }

    pub fn sorted_prices(&self) -> &[f64] {
        &self.q_sorted
    }

    pub fn prefix_p(&self) -> &[f64] {
        &self.prefix_p
    }

    pub fn prefix_q(&self) -> &[f64] {
        &self.prefix_q
    }

    /// Thresholds `tau_k`; `None` where `Q_k` is within tolerance of 1.
    pub fn tau(&self) -> &[Option<f64>] {
        &self.tau
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// Maps a vector in sorted order back to original order.
    pub fn to_original(&self, sorted: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; sorted.len()];
        for (k, &i) in self.perm.iter().enumerate() {
            out[i] = sorted[k];
        }
        out
    }
}

/// Expected utility under CRRA parameter `gamma`; logarithmic at `gamma = 1`.
/// Returns `-inf` if any wealth is not positive.
pub fn crra_objective(wealth: &[f64], p: &[f64], gamma: f64) -> f64 {
    if wealth.iter().any(|&w| w <= 0.0) {
        return f64::NEG_INFINITY;
    }
    wealth
        .iter()
        .zip(p)
        .map(|(&w, &pi)| pi * crra_utility(w, gamma))
        .sum()
}

pub fn crra_utility(w: f64, gamma: f64) -> f64 {
    if gamma == 1.0 {
        w.ln()
    } else {
        (w.ln() * (1.0 - gamma)).exp() / (1.0 - gamma)
    }
}

/// The drawdown surrogate `sum p_i W_i^(-lambda)`.
pub fn risk_functional(wealth: &[f64], p: &[f64], lambda: f64) -> Result<f64> {
    if let Some((index, &value)) = wealth.iter().enumerate().find(|(_, w)| !(**w > 0.0)) {
        return Err(Error::NonPositiveWealth { index, value });
    }
    Ok(risk_unchecked(wealth, p, lambda))
}

pub(crate) fn risk_unchecked(wealth: &[f64], p: &[f64], lambda: f64) -> f64 {
    wealth
        .iter()
        .zip(p)
        .map(|(&w, &pi)| {
            if w <= 0.0 {
                f64::INFINITY
            } else {
                pi * (-lambda * w.ln()).exp()
            }
        })
        .sum()
}

/// A budget allocation with its terminal wealth profile.
///
/// Stakes and wealths are in original outcome order. `objective` and `risk`
/// are evaluated at the `gamma` and `lambda` stored alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub cash: f64,
    pub stakes: Vec<f64>,
    pub wealth: Vec<f64>,
    pub objective: f64,
    pub risk: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Allocation {
    /// Builds an allocation from cash and stakes, computing `W_i = c + x_i/q_i`.
    pub fn evaluate(market: &Market, cash: f64, stakes: Vec<f64>, gamma: f64, lambda: f64) -> Allocation {
        let wealth: Vec<f64> = stakes
            .iter()
            .zip(market.prices())
            .map(|(x, q)| cash + x / q)
            .collect();
        Allocation {
            objective: crra_objective(&wealth, market.probabilities(), gamma),
            risk: risk_unchecked(&wealth, market.probabilities(), lambda),
            cash,
            stakes,
            wealth,
            gamma,
            lambda,
        }
    }

    /// Re-evaluates objective and risk at other parameters.
    pub fn reevaluate(&self, market: &Market, gamma: f64, lambda: f64) -> Allocation {
        Allocation::evaluate(market, self.cash, self.stakes.clone(), gamma, lambda)
    }

    pub fn budget_residual(&self) -> f64 {
        self.cash + self.stakes.iter().sum::<f64>() - 1.0
    }

    /// Original indices with stake above `tol`.
    pub fn support(&self, tol: f64) -> Vec<usize> {
        self.stakes
            .iter()
            .enumerate()
            .filter(|(_, &x)| x > tol)
            .map(|(i, _)| i)
            .collect()
    }
}

/// A strictly feasible point `c = 1 - eps`, `x_top = eps` on the outcome with
/// the largest likelihood ratio, or `None` when no ratio exceeds one.
///
/// `eps` starts at 0.1 and is halved until the risk drops below `1 - 1e-12`.
/// The objective is evaluated with logarithmic utility.
pub fn slater_witness(sm: &SortedMarket, lambda: f64) -> Option<Allocation> {
    if !(sm.ratios()[0] > 1.0) {
        return None;
    }
    let top = sm.perm()[0];
    let market = sm.market();
    let mut eps = 0.1;
    for _ in 0..64 {
        let mut stakes = vec![0.0; market.len()];
        stakes[top] = eps;
        let alloc = Allocation::evaluate(market, 1.0 - eps, stakes, 1.0, lambda);
        if alloc.risk < 1.0 - 1e-12 {
            return Some(alloc);
        }
        eps *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn section7() -> Market {
        Market::new(vec![0.50, 0.30, 0.20], vec![0.45, 0.35, 0.30]).unwrap()
    }

    #[test]
    fn validates_reference_market() {
        let m = section7();
        assert_eq!(m.len(), 3);
        assert_eq!(m.regime(), Regime::Overround);
    }

    #[test]
    fn symmetric_market_is_fair() {
        let m = Market::new(vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
        assert_eq!(m.regime(), Regime::Fair);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            validate(&[0.5, 0.4], &[0.5, 0.5]),
            Err(Error::ProbabilityMassError { .. })
        ));
        assert!(matches!(
            validate(&[0.5, 0.5], &[0.5]),
            Err(Error::LengthMismatch { p: 2, q: 1 })
        ));
        assert!(matches!(validate(&[1.0], &[1.0]), Err(Error::TooFewOutcomes(1))));
        assert!(matches!(
            validate(&[0.5, 0.5], &[0.5, 0.0]),
            Err(Error::NonPositiveEntry { field: "q", index: 1, .. })
        ));
        assert!(matches!(
            validate(&[1.5, -0.5], &[0.5, 0.5]),
            Err(Error::NonPositiveEntry { field: "p", index: 1, .. })
        ));
        assert!(matches!(
            validate(&[0.5, f64::NAN], &[0.5, 0.5]),
            Err(Error::NonPositiveEntry { .. })
        ));
    }

    #[test]
    fn renormalizes_only_within_tolerance() {
        let m = validate(&[0.5 + 4e-10, 0.5], &[0.5, 0.6]).unwrap();
        assert!((m.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(validate(&[0.5 + 2e-9, 0.5], &[0.5, 0.6]).is_err());
    }

    #[test]
    fn sorts_reference_market() {
        let sm = sort_market(&section7());
        let l = sm.ratios();
        assert!((l[0] - 0.5 / 0.45).abs() < 1e-15);
        assert!((l[1] - 0.3 / 0.35).abs() < 1e-15);
        assert!((l[2] - 0.2 / 0.3).abs() < 1e-15);
        assert!((sm.prefix_q()[2] - 1.10).abs() < 1e-15);
        assert_eq!(sm.regime(), Regime::Overround);
        assert_eq!(sm.perm(), &[0, 1, 2]);
        assert!((sm.tau()[0].unwrap() - 0.50 / 0.55).abs() < 1e-15);
    }

    #[test]
    fn sorts_unordered_market() {
        let m = Market::new(vec![0.1, 0.5, 0.4], vec![0.35, 0.4, 0.35]).unwrap();
        let sm = sort_market(&m);
        assert_eq!(sm.perm(), &[1, 2, 0]);
        let l = sm.ratios();
        assert!((l[0] - 1.25).abs() < 1e-15);
        assert!((l[1] - 0.4 / 0.35).abs() < 1e-15);
        assert!((l[2] - 0.1 / 0.35).abs() < 1e-15);
        assert!((sm.prefix_q()[2] - 1.10).abs() < 1e-15);
    }

    #[test]
    fn ties_keep_index_order() {
        let m = Market::new(vec![0.25, 0.25, 0.5], vec![0.25, 0.25, 0.5]).unwrap();
        let sm = sort_market(&m);
        assert_eq!(sm.perm(), &[0, 1, 2]);
        assert!(sm.ratios().iter().all(|&l| l == 1.0));
        assert_eq!(sm.regime(), Regime::Fair);
        // Q_n = 1 leaves tau_n undefined
        assert!(sm.tau()[2].is_none());
    }

    #[test]
    fn risk_functional_cases() {
        let p = [0.5, 0.3, 0.2];
        assert_eq!(risk_functional(&[1.0; 3], &p, 3.7).unwrap(), 1.0);

        let tau = 0.5 / 0.55;
        let w = [0.5 / 0.45, tau, tau];
        let r = risk_functional(&w, &p, 2.0).unwrap();
        assert!((r - 1.01).abs() < 1e-12);

        let r = risk_functional(&[1.2, 0.8], &[0.6, 0.4], 1.0).unwrap();
        assert!((r - 1.0).abs() < 1e-15);

        assert!(matches!(
            risk_functional(&[1.0, 0.0], &[0.5, 0.5], 1.0),
            Err(Error::NonPositiveWealth { index: 1, .. })
        ));
    }

    #[test]
    fn slater_reference_market() {
        let sm = sort_market(&section7());
        let w = slater_witness(&sm, 2.0).unwrap();
        assert!(w.risk < 1.0 - 1e-12);
        assert!(w.budget_residual().abs() < 1e-15);
        assert_eq!(w.support(0.0), vec![0]);
    }

    #[test]
    fn slater_none_without_edge() {
        let m = Market::new(vec![0.5, 0.5], vec![0.55, 0.55]).unwrap();
        assert!(slater_witness(&sort_market(&m), 1.0).is_none());
    }

    #[test]
    fn slater_two_state_value() {
        let m = Market::new(vec![0.9, 0.1], vec![0.5, 0.6]).unwrap();
        let sm = sort_market(&m);
        let w = slater_witness(&sm, 1.0).unwrap();
        // the first trial eps = 0.1 already works here
        assert!((w.cash - 0.9).abs() < 1e-15);
        let expected = 0.9 / (0.9 + 0.1 / 0.5) + 0.1 / 0.9;
        assert!((w.risk - expected).abs() < 1e-15);
        // the smaller eps = 0.05 from the hand calculation is also strictly feasible
        let e = 0.05;
        let r = risk_functional(&[1.0 - e + e / 0.5, 1.0 - e], m.probabilities(), 1.0).unwrap();
        assert!((r - (0.9 / 1.05 + 0.1 / 0.95)).abs() < 1e-15);
        assert!(r < 1.0);
    }

    #[test]
    fn allocation_wealth_reproducible() {
        let m = section7();
        let a = Allocation::evaluate(&m, 0.9, vec![0.1, 0.0, 0.0], 1.0, 2.0);
        assert!((a.wealth[0] - (0.9 + 0.1 / 0.45)).abs() < 1e-12);
        assert_eq!(a.wealth[1], 0.9);
        assert!(a.objective.is_finite());
    }
}
