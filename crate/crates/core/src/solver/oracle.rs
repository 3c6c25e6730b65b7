//! Brute-force discrete-time oracle for the Bellman value at age 0,
//! independent of the ODE solver: value iteration on the chain where each step
//! of length `dt` ends the episode w.p. `gamma dt` and sees an auction w.p.
//! `mu dt`, with bids restricted to a finite grid.

use super::{MarketRates, SolverError};
use crate::curve::{ValueCurveK, WinCurveQ};

/// Upper envelope of the lines `g -> q_j g - p_j` over the bid grid, queried
/// many times per sweep.
struct BidEnvelope {
    /// Kept lines, sorted by increasing slope.
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
    /// Crossover abscissa between consecutive kept lines.
    cuts: Vec<f64>,
}

impl BidEnvelope {
    fn build(q: &WinCurveQ, n_bids: usize) -> Self {
        let b_max = q.domain_end();
        let mut lines: Vec<(f64, f64)> = (0..n_bids)
            .map(|j| {
                let b = b_max * j as f64 / (n_bids - 1).max(1) as f64;
                (q.eval(b), -q.expected_payment(b))
            })
            .collect();
        lines.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // For equal win probability the cheapest payment dominates.
        lines.dedup_by(|b, a| {
            if b.0 == a.0 {
                a.1 = a.1.max(b.1);
                true
            } else {
                false
            }
        });
        let mut slopes: Vec<f64> = Vec::new();
        let mut intercepts: Vec<f64> = Vec::new();
        let mut cuts: Vec<f64> = Vec::new();
        for (s, c) in lines {
            // Pop lines whose valid interval vanished, then record the
            // crossover with the surviving top.
            loop {
                let n = slopes.len();
                if n == 0 {
                    break;
                }
                let x = (intercepts[n - 1] - c) / (s - slopes[n - 1]);
                if n >= 2 && x <= cuts[n - 2] {
                    slopes.pop();
                    intercepts.pop();
                    cuts.pop();
                } else {
                    cuts.push(x);
                    break;
                }
            }
            slopes.push(s);
            intercepts.push(c);
        }
        BidEnvelope {
            slopes,
            intercepts,
            cuts,
        }
    }

    /// max_j (q_j g - p_j)
    fn max_at(&self, g: f64) -> f64 {
        let i = self.cuts.partition_point(|&x| x < g);
        self.slopes[i] * g + self.intercepts[i]
    }
}

/// Value iteration on the discretized chain; returns V(0).
///
/// Ages above `t_max` are merged into one absorbing bucket. The per-age gain
/// of an auction is `max_b q(b)(k(tau) + V(0) - V(tau)) - p(b)`, maximized
/// over `n_bids` uniform grid points of the bid domain; sweeps run until the
/// sup change drops below 1e-9.
pub fn discrete_dp_oracle(
    k: &ValueCurveK,
    q: &WinCurveQ,
    rates: &MarketRates,
    dt: f64,
    t_max: f64,
    n_bids: usize,
) -> Result<f64, SolverError> {
    let step_mass = (rates.mu + rates.gamma) * dt;
    if !(step_mass < 0.1) || !(dt > 0.0) {
        return Err(SolverError::OracleStepTooCoarse(step_mass));
    }
    if t_max < k.t_final() {
        return Err(SolverError::OracleHorizonTooShort {
            t_max,
            t_final: k.t_final(),
        });
    }
    let envelope = BidEnvelope::build(q, n_bids.max(2));
    let n_ages = (t_max / dt).ceil() as usize + 1;
    let k_at: Vec<f64> = (0..n_ages).map(|i| k.eval(i as f64 * dt)).collect();

    let survive = 1.0 - rates.gamma * dt;
    let arrive = rates.mu * dt;
    let mut v = vec![0.0f64; n_ages];
    const MAX_SWEEPS: u32 = 200_000;
    for _ in 0..MAX_SWEEPS {
        let v0 = v[0];
        let mut delta = 0.0f64;
        // Backward Gauss-Seidel sweep; the last age is absorbing.
        for i in (0..n_ages).rev() {
            let v_next = if i + 1 < n_ages { v[i + 1] } else { v[i] };
            let mut x = v[i];
            // The auction gain references the state's own value; two fixed
            // point passes suffice (contraction factor mu dt q < 0.01).
            for _ in 0..2 {
                let gain = envelope.max_at(k_at[i] + v0 - x).max(0.0);
                x = survive * (v_next + arrive * gain);
            }
            delta = delta.max((x - v[i]).abs());
            v[i] = x;
        }
        if delta < 1e-9 {
            return Ok(v[0]);
        }
    }
    Err(SolverError::OracleDiverged(MAX_SWEEPS))
}

#[cfg(test)]
mod tests {
    use super::super::tests::ramp_k;
    use super::*;
    use crate::curve::PwlCurve;

    #[test]
    fn static_case_recovers_closed_form() {
        let k = ramp_k(0.5);
        let q = WinCurveQ::ground_truth(
            PwlCurve::new(vec![0.0, 1.0], vec![1.0], 0.0).unwrap(),
            0.0,
        )
        .unwrap();
        let rates = MarketRates::new(0.5, 0.1).unwrap();
        let v0 = discrete_dp_oracle(&k, &q, &rates, 0.01, 10.0, 201).unwrap();
        assert!((v0 - 0.625).abs() < 0.01, "v0 = {v0}");
    }

    #[test]
    fn zero_curve_is_worthless() {
        let k = ValueCurveK::zero();
        let q = WinCurveQ::ground_truth(
            PwlCurve::new(vec![0.0, 1.0], vec![0.9], 0.0).unwrap(),
            0.05,
        )
        .unwrap();
        let rates = MarketRates::new(0.5, 0.1).unwrap();
        let v0 = discrete_dp_oracle(&k, &q, &rates, 0.01, 5.0, 101).unwrap();
        assert!(v0.abs() < 1e-9);
    }

    #[test]
    fn parameter_validation() {
        let k = ramp_k(0.5);
        let q = WinCurveQ::ground_truth(
            PwlCurve::new(vec![0.0, 1.0], vec![0.9], 0.0).unwrap(),
            0.05,
        )
        .unwrap();
        let rates = MarketRates::new(5.0, 5.0).unwrap();
        assert!(matches!(
            discrete_dp_oracle(&k, &q, &rates, 0.05, 5.0, 11),
            Err(SolverError::OracleStepTooCoarse(_))
        ));
        let rates = MarketRates::new(0.5, 0.1).unwrap();
        assert!(matches!(
            discrete_dp_oracle(&k, &q, &rates, 0.01, 1e-9, 11),
            Err(SolverError::OracleHorizonTooShort { .. })
        ));
    }

    #[test]
    fn envelope_matches_naive_max() {
        let q = WinCurveQ::ground_truth(
            PwlCurve::new(vec![0.0, 0.4, 1.0], vec![0.5, 1.2], 0.0).unwrap(),
            0.0,
        )
        .unwrap();
        let env = BidEnvelope::build(&q, 101);
        for i in -20..=60 {
            let g = i as f64 * 0.05;
            let naive = (0..101)
                .map(|j| {
                    let b = j as f64 / 100.0;
                    q.eval(b) * g - q.expected_payment(b)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((env.max_at(g) - naive).abs() < 1e-12, "g = {g}");
        }
    }
}
