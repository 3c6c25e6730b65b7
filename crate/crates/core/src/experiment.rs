//! Experiment orchestration: JSON configuration, environment construction
//! (explicit curves or the smooth family interpolated onto uniform grids),
//! the sweep runner with its manifest, and the CSV/JSON file formats.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::algorithms::{
    calibrate_bonus, run_confidence_bounds, run_offline_loop, run_three_phase, run_two_phase,
    AlgorithmError, RegretTrace,
};
use crate::curve::{interpolate_uniform, PwlCurve, ValueCurveK, WinCurveQ};
use crate::env::{AuctionRecord, EnvModel, EpisodeKRecord, DEFAULT_MAX_AUCTIONS};
use crate::estimators::BonusSchedule;
use crate::rng;
use crate::solver::{MarketRates, Policy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Invalid(String),
    #[error("config violates environment condition: {0}")]
    Environment(#[from] crate::env::EnvError),
    #[error("config curve is invalid: {0}")]
    Curve(#[from] crate::curve::CurveError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Environment primitives: either explicit curves or the smooth reference
/// family `k(t) = 1 - exp(-theta t)`, `q(v) = v^alpha_exp` interpolated onto
/// uniform grids.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum EnvSpec {
    Smooth { theta: f64, alpha_exp: f64 },
    Explicit {
        k: PwlCurve,
        q: PwlCurve,
        #[serde(default = "default_eta")]
        eta: f64,
    },
}

fn default_eta() -> f64 {
    0.05
}

/// Breakpoint count for smooth primitives: a fixed interval count or the
/// horizon-adaptive rule ceil(N^(1/6)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridRule {
    Fixed(usize),
    Adaptive(AdaptiveTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptiveTag {
    Adaptive,
}

impl GridRule {
    pub fn intervals(&self, horizon: u64) -> usize {
        match self {
            GridRule::Fixed(m) => (*m).max(1),
            GridRule::Adaptive(_) => (horizon as f64).powf(1.0 / 6.0).ceil() as usize,
        }
    }
}

/// One algorithm entry of the sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum AlgorithmSpec {
    OfflineLoop {
        rounds: u32,
        episodes_per_round: u64,
        /// Constant initial bid; defaults to k(inf).
        #[serde(default)]
        init_bid: Option<f64>,
    },
    TwoPhase {
        #[serde(default = "default_c1")]
        c1: f64,
    },
    ThreePhase {
        #[serde(default = "default_c1")]
        c1: f64,
        /// Phase-1 exploration bid; defaults to 0.3 k(inf).
        #[serde(default)]
        b0: Option<f64>,
    },
    ConfidenceBounds {
        /// Bonus coefficients; absent values are calibrated by a pre-run.
        #[serde(default)]
        lambda_k: Option<f64>,
        #[serde(default)]
        lambda_q: Option<f64>,
        #[serde(default = "default_warmup")]
        warmup_c0: u64,
    },
}

fn default_c1() -> f64 {
    1.0
}

fn default_warmup() -> u64 {
    50
}

impl AlgorithmSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::OfflineLoop { .. } => "offline-loop",
            AlgorithmSpec::TwoPhase { .. } => "two-phase",
            AlgorithmSpec::ThreePhase { .. } => "three-phase",
            AlgorithmSpec::ConfidenceBounds { .. } => "confidence-bounds",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub rates: MarketRates,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "default_max_auctions")]
    pub max_auctions: u32,
    #[serde(default)]
    pub alpha_floor: f64,
    #[serde(default = "default_grid")]
    pub grid_m: GridRule,
    pub horizons: Vec<u64>,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<AlgorithmSpec>,
    pub output_dir: PathBuf,
}

fn default_noise() -> f64 {
    crate::env::DEFAULT_NOISE_SIGMA
}

fn default_max_auctions() -> u32 {
    DEFAULT_MAX_AUCTIONS
}

fn default_grid() -> GridRule {
    GridRule::Fixed(10)
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizons.is_empty() {
            return Err(ConfigError::Invalid("horizons must be nonempty".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must be nonempty".into()));
        }
        if let EnvSpec::Smooth { theta, .. } = self.env {
            if !(theta > 0.0) {
                return Err(ConfigError::Invalid("smooth env needs theta > 0".into()));
            }
        }
        Ok(())
    }

    /// Content hash of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex_digest(canonical.as_bytes())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reference experiment configuration: the smooth family with theta = 0.1,
/// exponent 2, mu = 0.5, gamma = 0.1 and 10 uniform breakpoints.
pub fn reference_config(output_dir: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        env: EnvSpec::Smooth {
            theta: 0.1,
            alpha_exp: 2.0,
        },
        rates: MarketRates::new(0.5, 0.1).unwrap(),
        noise_sigma: 0.1,
        max_auctions: DEFAULT_MAX_AUCTIONS,
        alpha_floor: 0.05,
        grid_m: GridRule::Fixed(10),
        horizons: vec![625, 2500, 10_000],
        seeds: (0..20).collect(),
        algorithms: vec![
            AlgorithmSpec::TwoPhase { c1: 1.0 },
            AlgorithmSpec::ThreePhase { c1: 1.0, b0: None },
            AlgorithmSpec::ConfidenceBounds {
                lambda_k: None,
                lambda_q: None,
                warmup_c0: 50,
            },
        ],
        output_dir,
    }
}

/// Domain cutoff for the smooth value curve: wide enough that the truncated
/// tail is below 1e-3.
pub fn smooth_t_final(theta: f64) -> f64 {
    (1e3f64).ln() / theta
}

/// Materialize the environment for one horizon (the grid may be
/// horizon-adaptive).
pub fn build_environment(cfg: &ExperimentConfig, horizon: u64) -> Result<EnvModel, ConfigError> {
    let m = cfg.grid_m.intervals(horizon);
    let (k, q) = match &cfg.env {
        EnvSpec::Smooth { theta, alpha_exp } => {
            let theta = *theta;
            let alpha = *alpha_exp;
            let t_final = smooth_t_final(theta);
            let k_curve = interpolate_uniform(|t| 1.0 - (-theta * t).exp(), 0.0, t_final, m)?;
            let q_curve = interpolate_uniform(|v| v.powf(alpha), 0.0, 1.0, m)?;
            // The smooth family reaches q(1) = 1, so it carries no headroom.
            (
                ValueCurveK::new(k_curve)?,
                WinCurveQ::ground_truth(q_curve, 0.0)?,
            )
        }
        EnvSpec::Explicit { k, q, eta } => (
            ValueCurveK::new(k.clone())?,
            WinCurveQ::ground_truth(q.clone(), *eta)?,
        ),
    };
    Ok(EnvModel::new(
        k,
        q,
        cfg.rates,
        cfg.noise_sigma,
        cfg.max_auctions,
        cfg.alpha_floor,
    )?)
}

/// Run one algorithm cell. The per-cell stream key mixes the sweep seed with
/// the cell coordinates so scheduling order is irrelevant.
pub fn run_cell(
    cfg: &ExperimentConfig,
    algo_idx: usize,
    horizon: u64,
    seed: u64,
) -> Result<RegretTrace, ConfigError> {
    let env = build_environment(cfg, horizon)?;
    let cell_seed = rng::mix_key(&[seed, algo_idx as u64, horizon]);
    let spec = &cfg.algorithms[algo_idx];
    let trace = match spec {
        AlgorithmSpec::OfflineLoop {
            rounds,
            episodes_per_round,
            init_bid,
        } => {
            // Honor the horizon: enough rounds to cover N episodes.
            let epr = (*episodes_per_round).max(1);
            let rounds = (*rounds).max(1).max(horizon.div_ceil(epr) as u32);
            let init = Policy::constant(init_bid.unwrap_or(env.k_true.k_inf()));
            run_offline_loop(&env, &init, rounds, epr, cell_seed).map(|(trace, _)| trace)
        }
        AlgorithmSpec::TwoPhase { c1 } => run_two_phase(&env, horizon, *c1, cell_seed),
        AlgorithmSpec::ThreePhase { c1, b0 } => {
            let b0 = b0.unwrap_or(0.3 * env.k_true.k_inf());
            run_three_phase(&env, horizon, b0, *c1, cell_seed)
        }
        AlgorithmSpec::ConfidenceBounds {
            lambda_k,
            lambda_q,
            warmup_c0,
        } => {
            let sched = match (lambda_k, lambda_q) {
                (Some(lk), Some(lq)) => BonusSchedule {
                    lambda_k: *lk,
                    lambda_q: *lq,
                    warmup_c0: *warmup_c0,
                },
                _ => {
                    let mut cal =
                        calibrate_bonus(&env, *warmup_c0, rng::mix_key(&[cell_seed, 0x0ca1]));
                    if let Some(lk) = lambda_k {
                        cal.lambda_k = *lk;
                    }
                    if let Some(lq) = lambda_q {
                        cal.lambda_q = *lq;
                    }
                    cal
                }
            };
            run_confidence_bounds(&env, horizon, &sched, cell_seed)
        }
    }
    .map_err(|e: AlgorithmError| ConfigError::Invalid(e.to_string()))?;
    Ok(trace)
}

#[derive(Debug, Serialize)]
struct ManifestCell {
    variant: String,
    n: u64,
    seed: u64,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_regret: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Manifest {
    config_hash: String,
    package_version: String,
    rng_scheme: String,
    grid_intervals: Vec<(u64, usize)>,
    cells: Vec<ManifestCell>,
    failures: usize,
}

/// Sweep outcome summary.
#[derive(Debug)]
pub struct SweepReport {
    pub cells_ok: usize,
    pub cells_failed: usize,
    pub manifest_path: PathBuf,
    pub sweep_csv_path: PathBuf,
}

/// Execute the full sweep: every (algorithm, horizon, seed) cell, trace CSVs,
/// the sweep summary CSV and a manifest with content hashes. Individual cell
/// failures are recorded and do not abort the sweep.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SweepReport, ConfigError> {
    fs::create_dir_all(&cfg.output_dir)?;
    let mut cells: Vec<(usize, u64, u64)> = Vec::new();
    for (ai, _) in cfg.algorithms.iter().enumerate() {
        for &n in &cfg.horizons {
            for &seed in &cfg.seeds {
                cells.push((ai, n, seed));
            }
        }
    }
    let outcomes: Vec<(usize, u64, u64, Result<RegretTrace, String>, f64)> = cells
        .par_iter()
        .map(|&(ai, n, seed)| {
            let start = Instant::now();
            let res = run_cell(cfg, ai, n, seed).map_err(|e| e.to_string());
            (ai, n, seed, res, start.elapsed().as_secs_f64())
        })
        .collect();

    let mut manifest_cells = Vec::with_capacity(outcomes.len());
    let mut sweep_rows = Vec::with_capacity(outcomes.len());
    let mut failures = 0usize;
    for (ai, n, seed, res, wall) in outcomes {
        let variant = cfg.algorithms[ai].name().to_string();
        match res {
            Ok(trace) => {
                let file = format!("trace_{variant}_{n}_{seed}.csv");
                let path = cfg.output_dir.join(&file);
                write_trace_csv(&path, &variant, seed, &trace)?;
                let digest = hex_digest(&fs::read(&path)?);
                sweep_rows.push((variant.clone(), n, seed, trace.total(), wall));
                manifest_cells.push(ManifestCell {
                    variant,
                    n,
                    seed,
                    status: "ok".into(),
                    error: None,
                    file: Some(file),
                    sha256: Some(digest),
                    final_regret: Some(trace.total()),
                });
            }
            Err(err) => {
                failures += 1;
                manifest_cells.push(ManifestCell {
                    variant,
                    n,
                    seed,
                    status: "failed".into(),
                    error: Some(err),
                    file: None,
                    sha256: None,
                    final_regret: None,
                });
            }
        }
    }

    let sweep_csv_path = cfg.output_dir.join("sweep.csv");
    {
        let mut w = csv::Writer::from_path(&sweep_csv_path)?;
        w.write_record(["variant", "N", "seed", "final_regret", "wallclock_s"])?;
        for (variant, n, seed, regret, wall) in &sweep_rows {
            w.write_record([
                variant.as_str(),
                &n.to_string(),
                &seed.to_string(),
                &format!("{regret}"),
                &format!("{wall:.3}"),
            ])?;
        }
        w.flush()?;
    }

    let manifest = Manifest {
        config_hash: cfg.hash(),
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        rng_scheme: "chacha8(splitmix64(seed, run, episode))".into(),
        grid_intervals: cfg
            .horizons
            .iter()
            .map(|&n| (n, cfg.grid_m.intervals(n)))
            .collect(),
        cells: manifest_cells,
        failures,
    };
    let manifest_path = cfg.output_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    Ok(SweepReport {
        cells_ok: sweep_rows.len(),
        cells_failed: failures,
        manifest_path,
        sweep_csv_path,
    })
}

/// Trace CSV: `episode,variant,seed,gap,cumulative_regret,policy_id`.
pub fn write_trace_csv(
    path: &Path,
    variant: &str,
    seed: u64,
    trace: &RegretTrace,
) -> Result<(), ConfigError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "episode",
        "variant",
        "seed",
        "gap",
        "cumulative_regret",
        "policy_id",
    ])?;
    for i in 0..trace.len() {
        w.write_record([
            &(i + 1).to_string(),
            variant,
            &seed.to_string(),
            &format!("{}", trace.per_episode_gap[i]),
            &format!("{}", trace.cumulative[i]),
            &format!("{:016x}", trace.policy_log[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Value-feedback dataset CSV: one row per win age plus one aggregate row per
/// episode (`age` empty on the aggregate row, `gross_value` empty otherwise).
pub fn write_k_csv(path: &Path, records: &[EpisodeKRecord]) -> Result<(), ConfigError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode_id", "age", "gross_value"])?;
    for (id, rec) in records.iter().enumerate() {
        for age in &rec.win_ages {
            w.write_record([&id.to_string(), &format!("{age}"), ""])?;
        }
        w.write_record([&id.to_string(), "", &format!("{}", rec.gross_value)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_k_csv(path: &Path) -> Result<Vec<EpisodeKRecord>, ConfigError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<EpisodeKRecord> = Vec::new();
    let mut current: Option<(usize, EpisodeKRecord)> = None;
    for row in r.records() {
        let row = row?;
        let id: usize = row
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ConfigError::Invalid("bad episode_id".into()))?;
        match current.as_mut() {
            Some((cid, rec)) if *cid == id => {
                append_k_row(&row, rec)?;
            }
            _ => {
                if let Some((_, rec)) = current.take() {
                    out.push(rec);
                }
                let mut rec = EpisodeKRecord {
                    win_ages: Vec::new(),
                    gross_value: 0.0,
                };
                append_k_row(&row, &mut rec)?;
                current = Some((id, rec));
            }
        }
    }
    if let Some((_, rec)) = current {
        out.push(rec);
    }
    Ok(out)
}

fn append_k_row(row: &csv::StringRecord, rec: &mut EpisodeKRecord) -> Result<(), ConfigError> {
    let age = row.get(1).unwrap_or("");
    let gross = row.get(2).unwrap_or("");
    if !age.is_empty() {
        rec.win_ages.push(
            age.parse()
                .map_err(|_| ConfigError::Invalid(format!("bad age {age}")))?,
        );
    } else if !gross.is_empty() {
        rec.gross_value = gross
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("bad gross_value {gross}")))?;
    }
    Ok(())
}

/// Auction dataset CSV: `episode_id,t,bid,won,price`.
pub fn write_q_csv(
    path: &Path,
    records: &[(usize, AuctionRecord)],
) -> Result<(), ConfigError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode_id", "t", "bid", "won", "price"])?;
    for (id, a) in records {
        w.write_record([
            id.to_string(),
            format!("{}", a.t),
            format!("{}", a.bid),
            String::from(if a.won { "1" } else { "0" }),
            format!("{}", a.price),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_q_csv(path: &Path) -> Result<Vec<AuctionRecord>, ConfigError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let get = |i: usize| -> Result<f64, ConfigError> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ConfigError::Invalid(format!("bad field {i} in auction csv")))
        };
        out.push(AuctionRecord {
            t: get(1)?,
            bid: get(2)?,
            won: row.get(3) == Some("1"),
            price: get(4)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rule_examples() {
        assert_eq!(GridRule::Fixed(10).intervals(625), 10);
        assert_eq!(GridRule::Adaptive(AdaptiveTag::Adaptive).intervals(1_000_000), 10);
        assert_eq!(GridRule::Adaptive(AdaptiveTag::Adaptive).intervals(625), 3);
        // ceil(N^(1/6)) exactly.
        for n in [1u64, 2, 63, 64, 65, 729, 10_000] {
            let expect = (n as f64).powf(1.0 / 6.0).ceil() as usize;
            assert_eq!(GridRule::Adaptive(AdaptiveTag::Adaptive).intervals(n), expect);
        }
    }

    #[test]
    fn reference_environment_grids() {
        let cfg = reference_config(PathBuf::from("unused"));
        let env = build_environment(&cfg, 625).unwrap();
        let t_final = smooth_t_final(0.1);
        // k knots at 10 uniform points of [0, T_f].
        assert_eq!(env.k_true.breakpoints().len(), 11);
        assert!((env.k_true.t_final() - t_final).abs() < 1e-12);
        for (j, &t) in env.k_true.breakpoints().iter().enumerate() {
            assert!((t - t_final * j as f64 / 10.0).abs() < 1e-9);
            let expect = 1.0 - (-0.1 * t).exp();
            assert!((env.k_true.eval(t) - expect).abs() < 1e-12);
        }
        // q knots at 10 uniform points of [0, 1] matching v^2.
        let qk = env.q_true.curve().knots();
        assert_eq!(qk.len(), 11);
        for (j, &b) in qk.iter().enumerate() {
            assert!((b - j as f64 / 10.0).abs() < 1e-12);
            assert!((env.q_true.eval(b) - b * b).abs() < 1e-12);
        }
        // k(inf) - k(T_f) < 1e-3 by the cutoff rule.
        assert!(1.0 - env.k_true.k_inf() < 1e-3);
    }

    #[test]
    fn explicit_env_passes_through() {
        let k = PwlCurve::new(vec![0.0, 1.0, 3.0], vec![0.4, 0.1], 0.0).unwrap();
        let q = PwlCurve::new(vec![0.0, 1.0], vec![0.9], 0.0).unwrap();
        let cfg = ExperimentConfig {
            env: EnvSpec::Explicit {
                k: k.clone(),
                q: q.clone(),
                eta: 0.1,
            },
            rates: MarketRates::new(0.5, 0.1).unwrap(),
            noise_sigma: 0.1,
            max_auctions: 100,
            alpha_floor: 0.2,
            grid_m: GridRule::Fixed(10),
            horizons: vec![100],
            seeds: vec![0],
            algorithms: vec![],
            output_dir: PathBuf::from("unused"),
        };
        let env = build_environment(&cfg, 100).unwrap();
        assert_eq!(env.k_true.curve(), &k);
        assert_eq!(env.q_true.curve(), &q);
    }

    #[test]
    fn invalid_configs_are_named() {
        // Headroom violation in an explicit ground-truth curve.
        let k = PwlCurve::new(vec![0.0, 1.0], vec![0.5], 0.0).unwrap();
        let q = PwlCurve::new(vec![0.0, 1.0], vec![0.99], 0.0).unwrap();
        let cfg = ExperimentConfig {
            env: EnvSpec::Explicit { k, q, eta: 0.05 },
            rates: MarketRates::new(0.5, 0.1).unwrap(),
            noise_sigma: 0.1,
            max_auctions: 100,
            alpha_floor: 0.0,
            grid_m: GridRule::Fixed(10),
            horizons: vec![10],
            seeds: vec![0],
            algorithms: vec![],
            output_dir: PathBuf::from("unused"),
        };
        let err = build_environment(&cfg, 10).unwrap_err();
        assert!(err.to_string().contains("eta") || err.to_string().contains("headroom"));
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = reference_config(PathBuf::from("out"));
        let js = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&js).unwrap();
        assert_eq!(cfg.hash(), back.hash());
        // grid_m accepts the literal string form.
        let js = js.replace("\"grid_m\": 10", "\"grid_m\": \"adaptive\"");
        let adaptive: ExperimentConfig = serde_json::from_str(&js).unwrap();
        assert_eq!(adaptive.grid_m, GridRule::Adaptive(AdaptiveTag::Adaptive));
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let k_path = dir.path().join("k.csv");
        let records = vec![
            EpisodeKRecord {
                win_ages: vec![0.5, 1.25],
                gross_value: 0.8,
            },
            EpisodeKRecord {
                win_ages: vec![2.0],
                gross_value: 0.4,
            },
        ];
        write_k_csv(&k_path, &records).unwrap();
        let back = read_k_csv(&k_path).unwrap();
        assert_eq!(records, back);

        let q_path = dir.path().join("q.csv");
        let auctions = vec![
            (0usize, AuctionRecord { t: 0.7, bid: 0.5, won: true, price: 0.3 }),
            (0usize, AuctionRecord { t: 1.9, bid: 0.5, won: false, price: 0.0 }),
            (1usize, AuctionRecord { t: 0.2, bid: 0.9, won: true, price: 0.85 }),
        ];
        write_q_csv(&q_path, &auctions).unwrap();
        let back = read_q_csv(&q_path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0], auctions[0].1);
        assert_eq!(back[2], auctions[2].1);
    }

    #[test]
    fn small_sweep_is_deterministic_and_manifested() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = reference_config(dir.path().join("a"));
        cfg.horizons = vec![30];
        cfg.seeds = vec![1, 2];
        cfg.algorithms = vec![AlgorithmSpec::TwoPhase { c1: 1.0 }];
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.cells_ok, 2);
        assert_eq!(report.cells_failed, 0);
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&report.manifest_path).unwrap()).unwrap();
        assert_eq!(manifest["failures"], 0);
        assert_eq!(manifest["cells"].as_array().unwrap().len(), 2);

        // Re-run into a fresh directory: trace files byte-identical.
        let mut cfg2 = cfg.clone();
        cfg2.output_dir = dir.path().join("b");
        run_experiment(&cfg2).unwrap();
        for seed in [1, 2] {
            let f = format!("trace_two-phase_30_{seed}.csv");
            let a = fs::read(dir.path().join("a").join(&f)).unwrap();
            let b = fs::read(dir.path().join("b").join(&f)).unwrap();
            assert_eq!(a, b, "trace {f} differs between runs");
        }
    }

    #[test]
    fn empty_algorithms_writes_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = reference_config(dir.path().to_path_buf());
        cfg.algorithms = vec![];
        cfg.horizons = vec![10];
        cfg.seeds = vec![0];
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.cells_ok, 0);
        assert!(report.manifest_path.exists());
        let sweep = fs::read_to_string(&report.sweep_csv_path).unwrap();
        assert_eq!(sweep.lines().count(), 1); // header only
    }
}
