//! Bellman solver for the age-reset bidding problem.
//!
//! The optimal value V* is the unique bounded solution of the Cauchy family
//! Y'(t) = gamma Y - mu f(k(t) + y0 - Y), Y(0) = y0, where f is the win
//! integral of the competition curve. The solver shoots on y0: a guess that is
//! too low sends the trajectory to -inf, too high to +inf, so bisection on the
//! divergence direction pins the bounded solution. Beyond the last value
//! breakpoint the dynamics are autonomous with a repulsive fixed point, so the
//! bounded solution is exactly constant there; the fixed point gives the
//! asymptotic value and the final curve is recovered by integrating backward
//! from it (the numerically stable direction).

mod oracle;
mod rk45;

pub use oracle::discrete_dp_oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{ValueCurveK, WinCurveQ};
use crate::env::EnvModel;
use crate::rng;
use rk45::{integrate, IntegrationEnd, StepControl};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("market rates must be positive: mu = {mu}, gamma = {gamma}")]
    InvalidRates { mu: f64, gamma: f64 },
    #[error("solver setting {name} must be positive, got {value}")]
    InvalidSetting { name: &'static str, value: f64 },
    #[error("competition curve ends at {q_end} but the value curve reaches {k_inf}")]
    CompetitionDomainTooShort { q_end: f64, k_inf: f64 },
    #[error(
        "shooting bracket never separates (both endpoints diverge the same way); \
         environment is invalid"
    )]
    BracketDegenerate,
    #[error("bisection did not converge within {iters} iterations, bracket [{lo}, {hi}]")]
    BisectionExceeded { iters: u32, lo: f64, hi: f64 },
    #[error("value curve grid ends at {grid_end} before the last value breakpoint {t_final}")]
    GridMismatch { grid_end: f64, t_final: f64 },
    #[error("policy bids must be nonnegative and finite")]
    InvalidBids,
    #[error("policy grid must be nonnegative, strictly increasing and match the bid count")]
    InvalidPolicyGrid,
    #[error("discrete oracle requires (mu + gamma) dt < 0.1, got {0}")]
    OracleStepTooCoarse(f64),
    #[error("discrete oracle horizon {t_max} is shorter than the last breakpoint {t_final}")]
    OracleHorizonTooShort { t_max: f64, t_final: f64 },
    #[error("discrete oracle did not converge after {0} sweeps")]
    OracleDiverged(u32),
}

/// Auction arrival rate `mu` and episode termination rate `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketRates {
    pub mu: f64,
    pub gamma: f64,
}

impl MarketRates {
    pub fn new(mu: f64, gamma: f64) -> Result<Self, SolverError> {
        if !(mu > 0.0) || !(gamma > 0.0) || !mu.is_finite() || !gamma.is_finite() {
            return Err(SolverError::InvalidRates { mu, gamma });
        }
        Ok(MarketRates { mu, gamma })
    }

    /// The three-phase analysis assumes mu > 2 gamma; callers warn when the
    /// flag is false.
    pub fn supports_three_phase(&self) -> bool {
        self.mu > 2.0 * self.gamma
    }
}

/// Numerical knobs for the shooting solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative integration tolerance.
    pub ode_rel_tol: f64,
    /// Absolute integration tolerance.
    pub ode_abs_tol: f64,
    /// Width threshold on the y0 bracket.
    pub bisect_tol: f64,
    /// Extra horizon beyond the last breakpoint before divergence is
    /// classified by the autonomous drift; `None` means 5 / gamma.
    pub horizon_pad: Option<f64>,
    /// Blow-up band multiplier on mu k(inf) / gamma.
    pub value_cap_factor: f64,
    pub max_bisect_iters: u32,
    /// Step cap, doubling as the densest output spacing of the value grid.
    pub max_step: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            ode_rel_tol: 1e-8,
            ode_abs_tol: 1e-10,
            bisect_tol: 1e-8,
            horizon_pad: None,
            value_cap_factor: 3.0,
            max_bisect_iters: 200,
            max_step: f64::INFINITY,
        }
    }
}

impl SolverSettings {
    fn validate(&self) -> Result<(), SolverError> {
        let checks = [
            ("ode_rel_tol", self.ode_rel_tol),
            ("ode_abs_tol", self.ode_abs_tol),
            ("bisect_tol", self.bisect_tol),
            ("value_cap_factor", self.value_cap_factor),
            ("max_step", self.max_step),
            ("horizon_pad", self.horizon_pad.unwrap_or(1.0)),
        ];
        for (name, value) in checks {
            if !(value > 0.0) {
                return Err(SolverError::InvalidSetting { name, value });
            }
        }
        Ok(())
    }

    fn step_control(&self) -> StepControl {
        StepControl {
            rel_tol: self.ode_rel_tol,
            abs_tol: self.ode_abs_tol,
            max_step: self.max_step,
        }
    }
}

/// Sampled Bellman value: grid on [0, t_final] plus the exact asymptotic
/// constant `v_inf` that the bounded solution keeps beyond the last
/// breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Value at age 0.
    pub v0: f64,
    /// Asymptotic value, attained for all ages past the grid end.
    pub v_inf: f64,
}

impl ValueCurve {
    pub fn value_at(&self, t: f64) -> f64 {
        assert!(t >= 0.0, "value curve evaluated at negative age {t}");
        let last = *self.grid.last().unwrap();
        if t >= last {
            return self.v_inf;
        }
        let i = self.grid.partition_point(|&g| g <= t) - 1;
        let (t0, t1) = (self.grid[i], self.grid[i + 1]);
        let w = (t - t0) / (t1 - t0);
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    fn constant(v: f64, t_final: f64) -> Self {
        let end = if t_final > 0.0 { t_final } else { 1.0 };
        ValueCurve {
            grid: vec![0.0, end],
            values: vec![v, v],
            v0: v,
            v_inf: v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Optimal,
    Constant,
    EstimateDerived,
}

/// Bidding policy: bid as a function of the age since the last win, linear
/// between grid samples and exactly `beta` beyond the grid end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    grid: Vec<f64>,
    bids: Vec<f64>,
    beta: f64,
    provenance: Provenance,
}

impl Policy {
    pub fn new(
        grid: Vec<f64>,
        bids: Vec<f64>,
        beta: f64,
        provenance: Provenance,
    ) -> Result<Self, SolverError> {
        if grid.is_empty()
            || grid.len() != bids.len()
            || grid[0] < 0.0
            || grid.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(SolverError::InvalidPolicyGrid);
        }
        if bids.iter().any(|b| !b.is_finite() || *b < 0.0) || !beta.is_finite() || beta < 0.0 {
            return Err(SolverError::InvalidBids);
        }
        Ok(Policy {
            grid,
            bids,
            beta,
            provenance,
        })
    }

    /// Policy bidding `b` at every age.
    pub fn constant(b: f64) -> Self {
        Policy::new(vec![0.0], vec![b], b, Provenance::Constant).unwrap()
    }

    /// Value-bidding policy: bid the curve itself.
    pub fn from_curve(k: &ValueCurveK) -> Self {
        Policy::new(
            k.breakpoints().to_vec(),
            k.curve().knot_values().to_vec(),
            k.k_inf(),
            Provenance::EstimateDerived,
        )
        .unwrap()
    }

    pub fn bid_at(&self, tau: f64) -> f64 {
        assert!(tau >= 0.0, "policy evaluated at negative age {tau}");
        let last = *self.grid.last().unwrap();
        if tau >= last {
            return self.beta;
        }
        if tau <= self.grid[0] {
            return self.bids[0];
        }
        let i = self.grid.partition_point(|&g| g <= tau) - 1;
        let (t0, t1) = (self.grid[i], self.grid[i + 1]);
        let w = (tau - t0) / (t1 - t0);
        self.bids[i] * (1.0 - w) + self.bids[i + 1] * w
    }

    /// Asymptotic bid, reached at the grid end.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn bids(&self) -> &[f64] {
        &self.bids
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn max_bid(&self) -> f64 {
        self.bids.iter().copied().fold(self.beta, f64::max)
    }

    /// Content-based identity (FNV-1a over the exact bit patterns); used for
    /// caching policy values and as the trace identifier.
    pub fn content_key(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |bits: u64| {
            for byte in bits.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for &g in &self.grid {
            mix(g.to_bits());
        }
        for &b in &self.bids {
            mix(b.to_bits());
        }
        mix(self.beta.to_bits());
        h
    }

    /// Pointwise-perturbed copy with bids clamped at 0; used by the value-gap
    /// experiments.
    pub fn perturbed<F: Fn(f64) -> f64>(&self, delta: F) -> Policy {
        let bids = self
            .grid
            .iter()
            .zip(&self.bids)
            .map(|(&t, &b)| (b + delta(t)).max(0.0))
            .collect();
        let beta = (self.beta + delta(*self.grid.last().unwrap())).max(0.0);
        Policy {
            grid: self.grid.clone(),
            bids,
            beta,
            provenance: Provenance::EstimateDerived,
        }
    }
}

/// Right-hand side of the Bellman family:
/// `Phi(t, v, y0) = gamma v - mu Q(max(0, k(t) + y0 - v))`.
///
/// The argument of the win integral is clamped below at 0: a negative implied
/// bid means bidding nothing, which wins nothing and pays nothing.
pub fn bellman_rhs(
    t: f64,
    v: f64,
    y0: f64,
    k: &ValueCurveK,
    q: &WinCurveQ,
    rates: &MarketRates,
) -> f64 {
    rates.gamma * v - rates.mu * q.win_integral((k.eval(t) + y0 - v).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shot {
    DivergesDown,
    DivergesUp,
    Balanced,
}

struct Shooting<'a, R: Fn(f64, f64, f64) -> f64, D: Fn(f64, f64) -> f64> {
    /// rhs(t, v, y0)
    rhs: R,
    /// Autonomous drift beyond `t_auto` as a function of (y, y0).
    tail_drift: D,
    /// Segment boundaries where the rhs has kinks in t (curve breakpoints).
    segments: &'a [f64],
    t_auto: f64,
    horizon: f64,
    band: (f64, f64),
    ctrl: StepControl,
}

impl<R: Fn(f64, f64, f64) -> f64, D: Fn(f64, f64) -> f64> Shooting<'_, R, D> {
    /// Integrate one guess forward and classify its divergence direction.
    fn classify(&self, y0: f64) -> Shot {
        let (lo, hi) = self.band;
        let mut y = y0;
        let mut t = 0.0;
        let mut bounds: Vec<f64> = self
            .segments
            .iter()
            .copied()
            .filter(|&s| s > 0.0 && s < self.horizon)
            .collect();
        bounds.push(self.horizon);
        for end in bounds {
            match integrate(
                |t, v| (self.rhs)(t, v, y0),
                t,
                end,
                y,
                &self.ctrl,
                |_, _| {},
                |_, v| v < lo || v > hi,
            ) {
                IntegrationEnd::Stopped(_, v) => {
                    return if v > hi {
                        Shot::DivergesUp
                    } else {
                        Shot::DivergesDown
                    };
                }
                IntegrationEnd::Completed(v) => {
                    y = v;
                    t = end;
                }
            }
        }
        let drift = (self.tail_drift)(y, y0);
        let eps = 1e-13 * (1.0 + y.abs());
        if drift > eps {
            Shot::DivergesUp
        } else if drift < -eps {
            Shot::DivergesDown
        } else {
            Shot::Balanced
        }
    }

    /// Bisect on y0 within [lo, hi] until the bracket is narrower than `tol`.
    fn bisect(&self, mut lo: f64, mut hi: f64, tol: f64, max_iters: u32) -> Result<f64, SolverError> {
        match self.classify(lo) {
            Shot::DivergesUp => return Err(SolverError::BracketDegenerate),
            Shot::Balanced => return Ok(lo),
            Shot::DivergesDown => {}
        }
        match self.classify(hi) {
            Shot::DivergesDown => return Err(SolverError::BracketDegenerate),
            Shot::Balanced => return Ok(hi),
            Shot::DivergesUp => {}
        }
        let mut iters = 0;
        while hi - lo >= tol {
            if iters >= max_iters {
                return Err(SolverError::BisectionExceeded {
                    iters,
                    lo,
                    hi,
                });
            }
            iters += 1;
            let mid = 0.5 * (lo + hi);
            match self.classify(mid) {
                Shot::DivergesDown => lo = mid,
                Shot::DivergesUp => hi = mid,
                Shot::Balanced => return Ok(mid),
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Reconstruct the bounded trajectory by integrating backward from the
    /// tail fixed point (t_auto, v_inf); this direction is contracting, so the
    /// curve is accurate to integrator tolerance. Returns (grid, values).
    fn backward_curve(&self, y0: f64, v_inf: f64) -> (Vec<f64>, Vec<f64>) {
        let mut ts = vec![self.t_auto];
        let mut ys = vec![v_inf];
        let mut bounds: Vec<f64> = self
            .segments
            .iter()
            .copied()
            .filter(|&s| s > 0.0 && s < self.t_auto)
            .collect();
        bounds.push(0.0);
        bounds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        bounds.dedup();
        // The output grid doubles as the policy grid, whose linear
        // interpolation error must stay well below the bisection tolerance.
        let ctrl = StepControl {
            rel_tol: self.ctrl.rel_tol,
            abs_tol: self.ctrl.abs_tol,
            max_step: self.ctrl.max_step.min((self.t_auto / 1500.0).max(1e-3)),
        };
        let mut t = self.t_auto;
        let mut y = v_inf;
        for end in bounds {
            let res = integrate(
                |t, v| (self.rhs)(t, v, y0),
                t,
                end,
                y,
                &ctrl,
                |tt, vv| {
                    ts.push(tt);
                    ys.push(vv);
                },
                |_, _| false,
            );
            y = match res {
                IntegrationEnd::Completed(v) => v,
                IntegrationEnd::Stopped(_, v) => v,
            };
            t = end;
        }
        if *ts.last().unwrap() != 0.0 {
            ts.push(0.0);
            ys.push(y);
        }
        ts.reverse();
        ys.reverse();
        // Collapse near-duplicates introduced at segment boundaries.
        let mut grid: Vec<f64> = Vec::with_capacity(ts.len());
        let mut values = Vec::with_capacity(ts.len());
        for (t, v) in ts.into_iter().zip(ys) {
            if grid.last().map_or(true, |&g| t > g + 1e-11 * (1.0 + g.abs())) {
                grid.push(t);
                values.push(v);
            }
        }
        (grid, values)
    }
}

/// Root of the increasing function `drift(v)` on [0, hi]; used for the
/// autonomous tail fixed point.
fn fixed_point<D: Fn(f64) -> f64>(drift: D, mut lo: f64, mut hi: f64) -> f64 {
    debug_assert!(drift(lo) <= 0.0 && drift(hi) >= 0.0);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if drift(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Shooting/bisection solve of the Bellman value for primitives (k, q).
pub fn solve_bellman(
    k: &ValueCurveK,
    q: &WinCurveQ,
    rates: &MarketRates,
    settings: &SolverSettings,
) -> Result<ValueCurve, SolverError> {
    settings.validate()?;
    let k_inf = k.k_inf();
    if q.domain_end() < k_inf - 1e-12 {
        return Err(SolverError::CompetitionDomainTooShort {
            q_end: q.domain_end(),
            k_inf,
        });
    }
    let cap = rates.mu * k_inf / rates.gamma;
    if cap <= 0.0 {
        return Ok(ValueCurve::constant(0.0, k.t_final()));
    }
    let t_final = k.t_final();
    let pad = settings.horizon_pad.unwrap_or(5.0 / rates.gamma);
    let shooting = Shooting {
        rhs: |t, v, y0| bellman_rhs(t, v, y0, k, q, rates),
        tail_drift: |y: f64, y0: f64| {
            rates.gamma * y - rates.mu * q.win_integral((k_inf + y0 - y).max(0.0))
        },
        segments: k.breakpoints(),
        t_auto: t_final,
        horizon: t_final + pad,
        band: (-0.1 * cap, settings.value_cap_factor * cap),
        ctrl: settings.step_control(),
    };
    let y0 = shooting.bisect(0.0, cap, settings.bisect_tol, settings.max_bisect_iters)?;
    // Beyond t_final the bounded solution sits exactly at the repulsive fixed
    // point of the autonomous drift.
    let v_inf = fixed_point(
        |v| rates.gamma * v - rates.mu * q.win_integral((k_inf + y0 - v).max(0.0)),
        0.0,
        rates.mu * q.win_integral(k_inf + y0) / rates.gamma + 1.0,
    );
    if t_final <= 0.0 {
        return Ok(ValueCurve::constant(v_inf, 1.0));
    }
    let (grid, values) = shooting.backward_curve(y0, v_inf);
    let v0 = values[0];
    Ok(ValueCurve {
        grid,
        values,
        v0,
        v_inf,
    })
}

/// Optimal-policy synthesis: `pi(tau) = max(0, k(tau) + V(0) - V(tau))`, with
/// asymptotic bid `beta = k(inf) + V(0) - V(inf)`.
pub fn synthesize_policy(k: &ValueCurveK, v: &ValueCurve) -> Result<Policy, SolverError> {
    let grid_end = *v.grid.last().unwrap();
    if grid_end < k.t_final() - 1e-9 {
        return Err(SolverError::GridMismatch {
            grid_end,
            t_final: k.t_final(),
        });
    }
    let grid = merge_grids(&v.grid, k.breakpoints());
    let bids: Vec<f64> = grid
        .iter()
        .map(|&t| (k.eval(t) + v.v0 - v.value_at(t)).max(0.0))
        .collect();
    let beta = (k.k_inf() + v.v0 - v.v_inf).max(0.0);
    Policy::new(grid, bids, beta, Provenance::Optimal)
}

/// Asymptotic bid of a policy (its constant level past the last breakpoint).
pub fn asymptotic_bid(pi: &Policy) -> f64 {
    pi.beta()
}

/// Expected value of an arbitrary policy, via the bounded solution of the
/// fixed-policy payoff ODE
/// `V' = gamma V + mu q(pi) V - mu q(pi)(k + V(0)) + mu p(pi)`.
pub fn evaluate_policy(
    k: &ValueCurveK,
    q: &WinCurveQ,
    rates: &MarketRates,
    pi: &Policy,
    settings: &SolverSettings,
) -> Result<ValueCurve, SolverError> {
    settings.validate()?;
    let k_inf = k.k_inf();
    let cap = rates.mu * k_inf / rates.gamma;
    let p_max = q.expected_payment(pi.max_bid());
    let v_lo = -rates.mu * p_max / rates.gamma - 1e-9;
    let v_hi = cap.max(0.0) + 1e-9;
    let span = v_hi - v_lo + 1.0;
    let t_auto = k.t_final().max(*pi.grid().last().unwrap());
    let pad = settings.horizon_pad.unwrap_or(5.0 / rates.gamma);
    let beta = pi.beta();
    let (q_beta, p_beta) = (q.eval(beta), q.expected_payment(beta));

    let rhs = |t: f64, v: f64, y0: f64| {
        let b = pi.bid_at(t);
        rates.gamma * v + rates.mu * (q.eval(b) * (v - k.eval(t) - y0) + q.expected_payment(b))
    };
    let shooting = Shooting {
        rhs,
        tail_drift: |y: f64, y0: f64| {
            rates.gamma * y + rates.mu * (q_beta * (y - k_inf - y0) + p_beta)
        },
        segments: k.breakpoints(),
        t_auto: t_auto.max(1e-12),
        horizon: t_auto + pad,
        band: (
            v_lo - 0.5 * span,
            v_hi + 0.5 * span * settings.value_cap_factor,
        ),
        ctrl: settings.step_control(),
    };
    let y0 = shooting.bisect(v_lo, v_hi, settings.bisect_tol, settings.max_bisect_iters)?;
    // Autonomous tail is linear in v; its fixed point is closed-form.
    let v_inf = rates.mu * (q_beta * (k_inf + y0) - p_beta) / (rates.gamma + rates.mu * q_beta);
    let (grid, values) = shooting.backward_curve(y0, v_inf);
    let v0 = values[0];
    Ok(ValueCurve {
        grid,
        values,
        v0,
        v_inf,
    })
}

/// Monte-Carlo estimate of a policy's expected episode payoff: sample mean and
/// 95% normal-approximation confidence half-width over `n_episodes` episodes.
pub fn evaluate_policy_mc(
    env: &EnvModel,
    pi: &Policy,
    n_episodes: u64,
    seed: u64,
) -> (f64, f64) {
    assert!(n_episodes >= 1);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for ep in 0..n_episodes {
        let mut stream = rng::episode_stream(seed, 0, ep);
        let payoff = env.run_episode(pi, &mut stream).net_payoff;
        sum += payoff;
        sum_sq += payoff * payoff;
    }
    let n = n_episodes as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0).max(1.0)).max(0.0);
    let ci = 1.96 * (var / n).sqrt();
    (mean, ci)
}

/// Sorted union of two grids with near-duplicates collapsed.
fn merge_grids(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for t in all {
        if out.last().map_or(true, |&last| t - last > 1e-12) {
            out.push(t);
        }
    }
    out
}
