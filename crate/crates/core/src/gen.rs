//! Seeded random market generators for tests, benchmarks and the acceptance
//! suite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::crra::{find_prefix, PrefixOutcome, PrefixSelection};
use crate::market::{sort_market, Market, Regime, SortedMarket};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn probabilities<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

/// Prices `q_i = p_i exp(e_i)` with `e_i` uniform in `(-0.5, 0.5)`, rescaled
/// so that their sum is `price_sum`.
fn prices<R: Rng>(rng: &mut R, p: &[f64], price_sum: f64) -> Vec<f64> {
    let raw: Vec<f64> = p.iter().map(|p| p * rng.gen_range(-0.5f64..0.5).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x * price_sum / total).collect()
}

/// An overround market with `Q_n` in `[1.02, 1.25)`.
pub fn overround_market<R: Rng>(rng: &mut R, n: usize) -> Market {
    let p = probabilities(rng, n);
    let price_sum = rng.gen_range(1.02..1.25);
    let q = prices(rng, &p, price_sum);
    Market::new(p, q).expect("generated market is valid")
}

/// An overround market with a unique, nonempty active prefix, drawn by
/// rejection.
pub fn overround_with_prefix<R: Rng>(rng: &mut R, n: usize) -> (SortedMarket, PrefixSelection) {
    loop {
        let sm = sort_market(&overround_market(rng, n));
        if let Ok(PrefixOutcome::Active(sel)) = find_prefix(&sm) {
            return (sm, sel);
        }
    }
}

/// A fair market: prices normalised to sum to one.
pub fn fair_market<R: Rng>(rng: &mut R, n: usize) -> Market {
    loop {
        let p = probabilities(rng, n);
        let q = prices(rng, &p, 1.0);
        let m = Market::new(p, q).expect("generated market is valid");
        if m.regime() == Regime::Fair {
            return m;
        }
    }
}
