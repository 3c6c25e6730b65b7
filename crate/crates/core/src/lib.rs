//! Toolkit for repeated second-price auctions with recency-dependent values:
//! exact Bellman solving via shooting/bisection, a ground-truth episode
//! simulator, plug-in estimators for the market primitives, four learning
//! algorithms with pseudo-regret accounting, and an experiment runner.

pub mod algorithms;
pub mod curve;
pub mod env;
pub mod estimators;
pub mod experiment;
pub mod rng;
pub mod solver;

pub use algorithms::{
    calibrate_bonus, pseudo_regret, run_confidence_bounds, run_offline_loop, run_three_phase,
    run_two_phase, AlgorithmError, RegretTrace,
};
pub use curve::{interpolate_uniform, CurveError, PwlCurve, ValueCurveK, WinCurveQ};
pub use env::{AuctionRecord, EnvError, EnvModel, EpisodeKRecord, EpisodeOutcome};
pub use estimators::{
    estimate_k, estimate_k_auto, estimate_q, lcb_q, ucb_k, BonusSchedule, EstimatorError,
    KEstimate, QEstimate,
};
pub use experiment::{
    build_environment, reference_config, run_experiment, AlgorithmSpec, ConfigError, EnvSpec,
    ExperimentConfig, GridRule, SweepReport,
};
pub use solver::{
    asymptotic_bid, bellman_rhs, discrete_dp_oracle, evaluate_policy, evaluate_policy_mc,
    solve_bellman, synthesize_policy, MarketRates, Policy, Provenance, SolverError,
    SolverSettings, ValueCurve,
};
