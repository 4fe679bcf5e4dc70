//! Risk-constrained Kelly betting over mutually exclusive outcomes with
//! explicit state prices.
//!
//! An outcome `i` has probability `p_i` and state price `q_i`; the bettor
//! keeps cash `c` and spends `x_i` on claim `i`, ending with wealth
//! `W_i = c + x_i / q_i` and subject to the drawdown surrogate
//! `sum p_i W_i^(-lambda) <= 1`.
//!
//! * [`market`]: validation, likelihood-ratio ordering, regimes, risk.
//! * [`crra`]: unique active prefix and closed-form unconstrained optima.
//! * [`logcal`]: constrained logarithmic optimum by one-dimensional calibration.
//! * [`fairbench`]: fair-market logarithmic benchmark.
//! * [`oracle`]: brute-force enumeration solver and KKT auditor.

// Negated comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crra;
pub mod error;
pub mod fairbench;
pub mod gen;
pub mod logcal;
pub mod market;
pub mod oracle;
pub mod par;
pub mod roots;

pub use crra::{find_prefix, solve_kelly, solve_unconstrained_crra, PrefixOutcome, PrefixSelection, SolverParams};
pub use error::{Error, Result};
pub use logcal::{calibrate, eval_state, inner_solve, sweep, CalibrationResult, CalibrationState, Tolerances};
pub use market::{risk_functional, slater_witness, sort_market, validate, Allocation, Market, Regime, SortedMarket};
pub use oracle::{audit_kkt, brute_force_solve, check_full_support_obstruction, KktReport};
