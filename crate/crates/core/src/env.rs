//! Ground-truth episode simulator: exponential session length, Poisson
//! auction arrivals, i.i.d. price-to-beat drawn from the competition CDF,
//! age resets on wins, Gaussian reward noise, and the two feedback channels
//! (aggregated value feedback and per-auction win/price feedback).

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{ValueCurveK, WinCurveQ};
use crate::solver::{MarketRates, Policy};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("noise_sigma must be nonnegative and finite, got {0}")]
    BadNoise(f64),
    #[error("max_auctions must be positive")]
    ZeroAuctionCap,
    #[error(
        "identifiability violated: q({bid}) = {q} is not above alpha_floor * bid = {floor}"
    )]
    IdentifiabilityViolated { bid: f64, q: f64, floor: f64 },
    #[error("competition curve leaves no headroom: q({bid}) = {q} > 1 - {eta}")]
    NoHeadroom { bid: f64, q: f64, eta: f64 },
}

/// Ground-truth environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvModel {
    pub k_true: ValueCurveK,
    pub q_true: WinCurveQ,
    pub rates: MarketRates,
    /// Std. dev. of the zero-mean Gaussian reward noise.
    pub noise_sigma: f64,
    /// Per-episode cap on the number of auctions.
    pub max_auctions: u32,
    /// Identifiability constant: q(b) must exceed alpha_floor * b on the
    /// relevant bid range.
    pub alpha_floor: f64,
}

pub const DEFAULT_MAX_AUCTIONS: u32 = 500;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;

impl EnvModel {
    pub fn new(
        k_true: ValueCurveK,
        q_true: WinCurveQ,
        rates: MarketRates,
        noise_sigma: f64,
        max_auctions: u32,
        alpha_floor: f64,
    ) -> Result<Self, EnvError> {
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(EnvError::BadNoise(noise_sigma));
        }
        if max_auctions == 0 {
            return Err(EnvError::ZeroAuctionCap);
        }
        let env = EnvModel {
            k_true,
            q_true,
            rates,
            noise_sigma,
            max_auctions,
            alpha_floor,
        };
        env.validate()?;
        Ok(env)
    }

    /// Dense-grid checks of the standing assumptions: q(b) > alpha_floor * b
    /// on (0, k(inf)], and q <= 1 - eta everywhere.
    fn validate(&self) -> Result<(), EnvError> {
        let eta = self.q_true.headroom();
        let b_end = self.q_true.domain_end();
        if self.q_true.eval(b_end) > 1.0 - eta + 1e-12 {
            return Err(EnvError::NoHeadroom {
                bid: b_end,
                q: self.q_true.eval(b_end),
                eta,
            });
        }
        let k_inf = self.k_true.k_inf();
        if k_inf > 0.0 && self.alpha_floor > 0.0 {
            const GRID: usize = 512;
            for j in 1..=GRID {
                let b = k_inf * j as f64 / GRID as f64;
                let q = self.q_true.eval(b);
                let floor = self.alpha_floor * b;
                if q <= floor {
                    return Err(EnvError::IdentifiabilityViolated { bid: b, q, floor });
                }
            }
        }
        Ok(())
    }

    /// Expected bound on the per-episode value, mu k(inf) / gamma.
    pub fn value_cap(&self) -> f64 {
        self.rates.mu * self.k_true.k_inf() / self.rates.gamma
    }

    /// Simulate one episode under `pi`, consuming the given random stream.
    pub fn run_episode<R: Rng>(&self, pi: &Policy, rng: &mut R) -> EpisodeOutcome {
        let session = Exp::new(self.rates.gamma).unwrap().sample(rng);
        let gap = Exp::new(self.rates.mu).unwrap();
        let noise = if self.noise_sigma > 0.0 {
            Some(Normal::new(0.0, self.noise_sigma).unwrap())
        } else {
            None
        };

        let mut outcome = EpisodeOutcome::default();
        let mut win_ages: Vec<f64> = Vec::new();
        let mut gross = 0.0;
        let mut payments = 0.0;
        let mut t = 0.0;
        let mut last_win = 0.0;
        loop {
            t += gap.sample(rng);
            if t > session {
                break;
            }
            if outcome.auctions.len() as u32 >= self.max_auctions {
                outcome.truncated = true;
                break;
            }
            let age = t - last_win;
            let bid = pi.bid_at(age);
            let price = self.q_true.quantile(rng.gen::<f64>());
            // Second-price rule: win iff the bid beats the price-to-beat.
            let won = matches!(price, Some(p) if bid > p);
            if won {
                let p = price.unwrap();
                let eps = noise.map_or(0.0, |n| n.sample(rng));
                gross += self.k_true.eval(age) + eps;
                payments += p;
                win_ages.push(age);
                last_win = t;
                outcome.auctions.push(AuctionRecord {
                    t,
                    bid,
                    won: true,
                    price: p,
                });
            } else {
                outcome.auctions.push(AuctionRecord {
                    t,
                    bid,
                    won: false,
                    price: 0.0,
                });
            }
        }
        if !win_ages.is_empty() {
            outcome.k_record = Some(EpisodeKRecord {
                win_ages,
                gross_value: gross,
            });
            outcome.net_payoff = gross - payments;
        }
        outcome
    }

    /// Simulate `n` independent episodes (streams derived from
    /// (seed, episode index)); returns the two dataset channels plus the raw
    /// outcomes.
    pub fn run_batch(
        &self,
        pi: &Policy,
        n: u64,
        seed: u64,
        run_index: u64,
    ) -> (Vec<EpisodeKRecord>, Vec<AuctionRecord>, Vec<EpisodeOutcome>) {
        assert!(n >= 1);
        let mut k_data = Vec::new();
        let mut q_data = Vec::new();
        let mut outcomes = Vec::with_capacity(n as usize);
        for ep in 0..n {
            let mut stream = crate::rng::episode_stream(seed, run_index, ep);
            let outcome = self.run_episode(pi, &mut stream);
            if let Some(rec) = &outcome.k_record {
                k_data.push(rec.clone());
            }
            q_data.extend(outcome.auctions.iter().copied());
            outcomes.push(outcome);
        }
        (k_data, q_data, outcomes)
    }
}

/// Aggregated per-episode value feedback: the ages of won auctions and the
/// total gross value they generated. Only episodes with at least one win
/// produce a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeKRecord {
    pub win_ages: Vec<f64>,
    pub gross_value: f64,
}

/// Per-auction competition feedback; `price` is 0 on lost auctions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuctionRecord {
    /// Auction time within the episode.
    pub t: f64,
    pub bid: f64,
    pub won: bool,
    pub price: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub k_record: Option<EpisodeKRecord>,
    pub auctions: Vec<AuctionRecord>,
    /// Realized value minus payments (0 when nothing was won).
    pub net_payoff: f64,
    /// Whether the auction cap cut the episode short.
    pub truncated: bool,
}
