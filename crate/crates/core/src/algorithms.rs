//! The four learning strategies and pseudo-regret accounting.
//!
//! All runners share the same plug-in skeleton: generate episodes, fit the
//! primitives from the accumulated feedback, plug the estimates into the
//! exact solver, repeat. Regret is measured against the optimal value as
//! `V*(0) - V_{pi_n}(0)` per episode, with policy values cached by content.

use std::collections::HashMap;

use thiserror::Error;

use crate::curve::{ValueCurveK, WinCurveQ};
use crate::env::{AuctionRecord, EnvModel, EpisodeKRecord};
use crate::estimators::{
    self, estimate_k_auto, estimate_q_warm, lcb_q, lift_and_cap, saturated_k, ucb_k,
    BonusSchedule, EstimatorError, KEstimate, QEstimate,
};
use crate::rng;
use crate::solver::{
    evaluate_policy, solve_bellman, synthesize_policy, Policy, SolverError, SolverSettings,
};

#[derive(Debug, Error)]
pub enum AlgorithmError {
    #[error("estimation failed in round {round}: {source}")]
    Estimation {
        round: usize,
        source: EstimatorError,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid parameters: {0}")]
    BadParams(String),
}

/// Default fit configuration shared by all runners.
#[derive(Debug, Clone, Copy)]
pub struct FitConfig {
    /// Ridge for the k regression; `None` means the scale-relative default.
    pub ridge: Option<f64>,
    pub c_floor: f64,
    pub eta_fit: f64,
    pub opt_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            ridge: None,
            c_floor: 1e-4,
            eta_fit: 0.01,
            opt_tol: 1e-8,
        }
    }
}

/// Per-episode pseudo-regret trace of one run.
#[derive(Debug, Clone, Default)]
pub struct RegretTrace {
    /// V*(0) - V_{pi_n}(0) per episode.
    pub per_episode_gap: Vec<f64>,
    /// Running sum of the gaps.
    pub cumulative: Vec<f64>,
    /// Content key of the policy deployed in each episode.
    pub policy_log: Vec<u64>,
    /// Realized net payoff per episode (diagnostics only).
    pub realized: Vec<f64>,
}

impl RegretTrace {
    fn push(&mut self, gap: f64, key: u64, realized: f64) {
        let total = self.cumulative.last().copied().unwrap_or(0.0) + gap;
        self.per_episode_gap.push(gap);
        self.cumulative.push(total);
        self.policy_log.push(key);
        self.realized.push(realized);
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.per_episode_gap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_episode_gap.is_empty()
    }
}

/// Caches V_pi(0) by policy content; phases reuse one policy across many
/// episodes, so each distinct policy costs one solve.
pub struct GapTracker<'a> {
    env: &'a EnvModel,
    settings: SolverSettings,
    pub vstar0: f64,
    values: HashMap<u64, f64>,
}

impl<'a> GapTracker<'a> {
    pub fn new(env: &'a EnvModel, settings: SolverSettings) -> Result<Self, SolverError> {
        let vstar = solve_bellman(&env.k_true, &env.q_true, &env.rates, &settings)?;
        Ok(GapTracker {
            env,
            settings,
            vstar0: vstar.v0,
            values: HashMap::new(),
        })
    }

    pub fn gap(&mut self, pi: &Policy) -> Result<f64, SolverError> {
        let key = pi.content_key();
        if let Some(&v) = self.values.get(&key) {
            return Ok(self.vstar0 - v);
        }
        let v = evaluate_policy(
            &self.env.k_true,
            &self.env.q_true,
            &self.env.rates,
            pi,
            &self.settings,
        )?
        .v0;
        self.values.insert(key, v);
        Ok(self.vstar0 - v)
    }
}

/// Expected pseudo-regret of a per-episode policy sequence:
/// `sum_n V*(0) - V_{pi_n}(0)`.
pub fn pseudo_regret(
    env: &EnvModel,
    policies: &[Policy],
    settings: &SolverSettings,
) -> Result<RegretTrace, AlgorithmError> {
    let mut tracker = GapTracker::new(env, *settings)?;
    let mut trace = RegretTrace::default();
    for pi in policies {
        let gap = tracker.gap(pi)?;
        trace.push(gap, pi.content_key(), f64::NAN);
    }
    Ok(trace)
}

/// Accumulated feedback datasets (append-only).
#[derive(Default)]
struct Datasets {
    k: Vec<EpisodeKRecord>,
    q: Vec<AuctionRecord>,
}

/// One plug-in fit: capped k estimate and q estimate from the accumulated
/// data. The k estimate is capped pointwise at the known envelope `k(inf)`;
/// uncapped noisy fits can exceed the competition domain, where the solver is
/// undefined.
fn fit_plugin(
    data: &Datasets,
    env: &EnvModel,
    fit: &FitConfig,
    round: usize,
    warm_q: Option<&[f64]>,
) -> Result<(ValueCurveK, QEstimate, KEstimate), AlgorithmError> {
    let k_grid = env.k_true.breakpoints();
    let q_grid = env.q_true.curve().knots();
    let wrap = |source| AlgorithmError::Estimation { round, source };
    let k_est = match fit.ridge {
        Some(r) => estimators::estimate_k(&data.k, k_grid, r),
        None => estimate_k_auto(&data.k, k_grid),
    }
    .map_err(wrap)?;
    let q_est = estimate_q_warm(
        &data.q,
        q_grid,
        fit.c_floor,
        fit.eta_fit,
        fit.opt_tol,
        warm_q,
    )
    .map_err(wrap)?;
    let capped = lift_and_cap(&k_est.curve, 0.0, env.k_true.k_inf());
    Ok((capped, q_est, k_est))
}

/// Run `count` episodes of `pi`, appending feedback and trace rows.
fn roll(
    env: &EnvModel,
    pi: &Policy,
    count: u64,
    seed: u64,
    episode_base: u64,
    data: &mut Datasets,
    tracker: &mut GapTracker,
    trace: &mut RegretTrace,
) -> Result<(), AlgorithmError> {
    let gap = tracker.gap(pi)?;
    let key = pi.content_key();
    for ep in 0..count {
        let mut stream = rng::episode_stream(seed, 0, episode_base + ep);
        let outcome = env.run_episode(pi, &mut stream);
        if let Some(rec) = &outcome.k_record {
            data.k.push(rec.clone());
        }
        data.q.extend(outcome.auctions.iter().copied());
        trace.push(gap, key, outcome.net_payoff);
    }
    Ok(())
}

/// Iterated plug-in learning without explicit exploration: each round rolls
/// the current policy, refits on the union of all data, and re-solves.
pub fn run_offline_loop(
    env: &EnvModel,
    init_policy: &Policy,
    rounds: u32,
    episodes_per_round: u64,
    seed: u64,
) -> Result<(RegretTrace, Policy), AlgorithmError> {
    if rounds == 0 || episodes_per_round == 0 {
        return Err(AlgorithmError::BadParams(
            "rounds and episodes_per_round must be positive".into(),
        ));
    }
    if !(init_policy.beta() > 0.0) {
        return Err(AlgorithmError::BadParams(
            "offline loop needs an initial policy with positive asymptotic bid".into(),
        ));
    }
    let settings = SolverSettings::default();
    let fit = FitConfig::default();
    let mut tracker = GapTracker::new(env, settings)?;
    let mut trace = RegretTrace::default();
    let mut data = Datasets::default();
    let mut policy = init_policy.clone();
    let mut warm: Option<Vec<f64>> = None;
    for round in 0..rounds {
        roll(
            env,
            &policy,
            episodes_per_round,
            seed,
            round as u64 * episodes_per_round,
            &mut data,
            &mut tracker,
            &mut trace,
        )?;
        let (k_capped, q_est, _) = fit_plugin(&data, env, &fit, round as usize, warm.as_deref())?;
        warm = Some(q_est.curve.curve().slopes().to_vec());
        let value = solve_bellman(&k_capped, &q_est.curve, &env.rates, &settings)?;
        policy = synthesize_policy(&k_capped, &value)?;
    }
    Ok((trace, policy))
}

/// Learn-then-rollout: explore at the maximal value for ceil(c1 sqrt(N))
/// episodes, fit both primitives, then roll out the plug-in policy.
pub fn run_two_phase(
    env: &EnvModel,
    n_total: u64,
    c1: f64,
    seed: u64,
) -> Result<RegretTrace, AlgorithmError> {
    if n_total < 4 {
        return Err(AlgorithmError::BadParams("two-phase needs N >= 4".into()));
    }
    let n1 = two_phase_split(n_total, c1);
    if n1 >= n_total {
        return Err(AlgorithmError::BadParams(format!(
            "exploration budget {n1} consumes the whole horizon {n_total}"
        )));
    }
    let settings = SolverSettings::default();
    let fit = FitConfig::default();
    let mut tracker = GapTracker::new(env, settings)?;
    let mut trace = RegretTrace::default();
    let mut data = Datasets::default();

    let explorer = Policy::constant(env.k_true.k_inf());
    roll(env, &explorer, n1, seed, 0, &mut data, &mut tracker, &mut trace)?;
    let (k_capped, q_est, _) = fit_plugin(&data, env, &fit, 0, None)?;
    let value = solve_bellman(&k_capped, &q_est.curve, &env.rates, &settings)?;
    let exploit = synthesize_policy(&k_capped, &value)?;
    roll(
        env,
        &exploit,
        n_total - n1,
        seed,
        n1,
        &mut data,
        &mut tracker,
        &mut trace,
    )?;
    Ok(trace)
}

/// Exploration length of the two-phase schedule: ceil(c1 sqrt(N)).
pub fn two_phase_split(n_total: u64, c1: f64) -> u64 {
    (c1 * (n_total as f64).sqrt()).ceil() as u64
}

/// Learn-k-then-q-then-rollout: bid a constant b0 to learn k, bid the learned
/// curve to learn q, then roll out the plug-in policy.
pub fn run_three_phase(
    env: &EnvModel,
    n_total: u64,
    b0: f64,
    c1: f64,
    seed: u64,
) -> Result<RegretTrace, AlgorithmError> {
    if n_total < 9 {
        return Err(AlgorithmError::BadParams("three-phase needs N >= 9".into()));
    }
    if !(b0 > 0.0) {
        return Err(AlgorithmError::BadParams(
            "three-phase needs a positive exploration bid b0".into(),
        ));
    }
    if !env.rates.supports_three_phase() {
        log::warn!(
            "three-phase analysis assumes mu > 2 gamma; got mu = {}, gamma = {}",
            env.rates.mu,
            env.rates.gamma
        );
    }
    let n1 = two_phase_split(n_total, c1);
    if 2 * n1 >= n_total {
        return Err(AlgorithmError::BadParams(format!(
            "exploration budget {} consumes the whole horizon {n_total}",
            2 * n1
        )));
    }
    let settings = SolverSettings::default();
    let fit = FitConfig::default();
    let k_grid = env.k_true.breakpoints();
    let q_grid = env.q_true.curve().knots();
    let mut tracker = GapTracker::new(env, settings)?;
    let mut trace = RegretTrace::default();

    // Phase 1: constant bid, k data only.
    let mut phase1 = Datasets::default();
    let probe = Policy::constant(b0);
    roll(env, &probe, n1, seed, 0, &mut phase1, &mut tracker, &mut trace)?;
    let k_est = match fit.ridge {
        Some(r) => estimators::estimate_k(&phase1.k, k_grid, r),
        None => estimate_k_auto(&phase1.k, k_grid),
    }
    .map_err(|source| AlgorithmError::Estimation { round: 0, source })?;
    let k_capped = lift_and_cap(&k_est.curve, 0.0, env.k_true.k_inf());

    // Phase 2: value-bidding with the learned curve, q data only.
    let mut phase2 = Datasets::default();
    let value_bidder = Policy::from_curve(&k_capped);
    roll(
        env,
        &value_bidder,
        n1,
        seed,
        n1,
        &mut phase2,
        &mut tracker,
        &mut trace,
    )?;
    let q_est = estimate_q_warm(&phase2.q, q_grid, fit.c_floor, fit.eta_fit, fit.opt_tol, None)
        .map_err(|source| AlgorithmError::Estimation { round: 1, source })?;

    // Phase 3: rollout.
    let value = solve_bellman(&k_capped, &q_est.curve, &env.rates, &settings)?;
    let exploit = synthesize_policy(&k_capped, &value)?;
    let mut rest = Datasets::default();
    roll(
        env,
        &exploit,
        n_total - 2 * n1,
        seed,
        2 * n1,
        &mut rest,
        &mut tracker,
        &mut trace,
    )?;
    Ok(trace)
}

/// Sup distance between two value curves on their merged knot grid.
fn sup_diff_k(a: &ValueCurveK, b: &ValueCurveK) -> f64 {
    let mut worst = 0.0f64;
    for &t in a.breakpoints().iter().chain(b.breakpoints()) {
        worst = worst.max((a.eval(t) - b.eval(t)).abs());
    }
    worst.max((a.k_inf() - b.k_inf()).abs())
}

fn sup_diff_q(a: &WinCurveQ, b: &WinCurveQ) -> f64 {
    let mut worst = 0.0f64;
    for &t in a.curve().knots().iter().chain(b.curve().knots()) {
        worst = worst.max((a.eval(t) - b.eval(t)).abs());
    }
    worst
}

/// Confidence-bounds learner: optimistic value curve and pessimistic
/// competition curve plugged into the solver every episode.
pub fn run_confidence_bounds(
    env: &EnvModel,
    n_total: u64,
    sched: &BonusSchedule,
    seed: u64,
) -> Result<RegretTrace, AlgorithmError> {
    if n_total == 0 {
        return Err(AlgorithmError::BadParams(
            "confidence bounds needs N >= 1".into(),
        ));
    }
    let settings = SolverSettings::default();
    let fit = FitConfig::default();
    let k_cap = env.k_true.k_inf();
    let t_final = env.k_true.t_final().max(1.0);
    let b_max = env.q_true.domain_end();
    let k_grid = env.k_true.breakpoints();
    let q_grid = env.q_true.curve().knots();

    let mut tracker = GapTracker::new(env, settings)?;
    let mut trace = RegretTrace::default();
    let mut data = Datasets::default();

    // Reference behavior refits every episode; beyond 2000 episodes the refit
    // cadence is batched.
    let refit_every = if n_total <= 2000 {
        1
    } else {
        n_total.div_ceil(2000)
    };

    let saturated = saturated_k(k_cap, t_final);
    let mut policy = Policy::from_curve(&saturated);
    let mut warm_q: Option<Vec<f64>> = None;
    let mut last_solved: Option<(ValueCurveK, WinCurveQ)> = None;

    for n in 1..=n_total {
        let due = n >= sched.warmup_c0 && (n - sched.warmup_c0) % refit_every == 0;
        if due {
            // Fit whatever channels have data; a channel without data keeps
            // its bound saturated (coverage by construction).
            let k_ucb = if data.k.is_empty() {
                saturated.clone()
            } else {
                let est = match fit.ridge {
                    Some(r) => estimators::estimate_k(&data.k, k_grid, r),
                    None => estimate_k_auto(&data.k, k_grid),
                }
                .map_err(|source| AlgorithmError::Estimation {
                    round: n as usize,
                    source,
                })?;
                ucb_k(&est, n, sched, k_cap)
            };
            let q_lcb = if data.q.is_empty() {
                WinCurveQ::zero(b_max)
            } else {
                let est = estimate_q_warm(
                    &data.q,
                    q_grid,
                    fit.c_floor,
                    fit.eta_fit,
                    fit.opt_tol,
                    warm_q.as_deref(),
                )
                .map_err(|source| AlgorithmError::Estimation {
                    round: n as usize,
                    source,
                })?;
                warm_q = Some(est.curve.curve().slopes().to_vec());
                lcb_q(&est, n, sched)
            };
            // Re-solve only when an estimate moved.
            let moved = last_solved.as_ref().map_or(true, |(lk, lq)| {
                sup_diff_k(lk, &k_ucb) > 1e-4 || sup_diff_q(lq, &q_lcb) > 1e-4
            });
            if moved {
                policy = if q_lcb.eval(q_lcb.domain_end()) <= 0.0 {
                    // Degenerate pessimism: any bid is value-equivalent under
                    // q = 0; bid the optimistic value curve to keep coverage.
                    Policy::from_curve(&k_ucb)
                } else {
                    match solve_bellman(&k_ucb, &q_lcb, &env.rates, &settings)
                        .and_then(|v| synthesize_policy(&k_ucb, &v))
                    {
                        Ok(pi) => pi,
                        Err(err) => {
                            log::warn!("episode {n}: solver failed ({err}); bidding the cap");
                            Policy::constant(k_cap)
                        }
                    }
                };
                last_solved = Some((k_ucb, q_lcb));
            }
        }
        roll(env, &policy.clone(), 1, seed, n - 1, &mut data, &mut tracker, &mut trace)?;
    }
    Ok(trace)
}

/// Calibrate bonus coefficients from short exploratory pre-runs: the bonus at
/// n = C0 is set to twice the median sup-error measured when fitting after C0
/// episodes of maximal-value bidding.
pub fn calibrate_bonus(env: &EnvModel, warmup_c0: u64, seed: u64) -> BonusSchedule {
    const REPS: u64 = 5;
    let fit = FitConfig::default();
    let k_grid = env.k_true.breakpoints();
    let q_grid = env.q_true.curve().knots();
    let explorer = Policy::constant(env.k_true.k_inf());
    let mut k_errs = Vec::new();
    let mut q_errs = Vec::new();
    for rep in 0..REPS {
        let (k_data, q_data, _) =
            env.run_batch(&explorer, warmup_c0.max(1), rng::mix_key(&[seed, rep]), 1);
        if let Ok(est) = estimate_k_auto(&k_data, k_grid) {
            k_errs.push(sup_diff_k(&est.curve, &env.k_true));
        }
        if let Ok(est) = estimate_q_warm(&q_data, q_grid, fit.c_floor, fit.eta_fit, fit.opt_tol, None)
        {
            q_errs.push(sup_diff_q(&est.curve, &env.q_true));
        }
    }
    let median = |xs: &mut Vec<f64>| -> f64 {
        if xs.is_empty() {
            return 0.5;
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs[xs.len() / 2]
    };
    // Convert the target bonus at C0 into the schedule coefficient.
    let shape = BonusSchedule::bonus(1.0, warmup_c0.max(3));
    BonusSchedule {
        lambda_k: 2.0 * median(&mut k_errs) / shape,
        lambda_q: 2.0 * median(&mut q_errs) / shape,
        warmup_c0,
    }
}
