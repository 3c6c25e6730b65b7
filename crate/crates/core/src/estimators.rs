//! Plug-in estimation of the market primitives from the two feedback
//! channels: cone-projected ridge OLS on aggregated episode values for `k`,
//! and maximum likelihood over piecewise-linear densities for `q`, plus the
//! optimistic/pessimistic adjustments used by the confidence-bounds learner.

use thiserror::Error;

use crate::curve::{PwlCurve, ValueCurveK, WinCurveQ};
use crate::env::{AuctionRecord, EpisodeKRecord};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("estimation needs at least one record")]
    EmptyData,
    #[error("breakpoint grid must start at 0 and be strictly increasing, with >= 2 knots")]
    InvalidGrid,
    #[error("design matrix is singular; pass a ridge > 0")]
    SingularDesign,
    #[error("won price {0} falls outside the breakpoint grid domain")]
    PriceOutOfDomain(f64),
    #[error("constraints are infeasible: c_floor {c_floor} with budget {budget}")]
    InfeasibleConstraints { c_floor: f64, budget: f64 },
    #[error("likelihood optimizer did not converge within {0} iterations")]
    OptimizerStalled(u32),
    #[error("curve construction failed: {0}")]
    Curve(#[from] crate::curve::CurveError),
}

/// Width of the anchor ramp used to represent curves with a nonzero value
/// arbitrarily close to age 0 (the curve class pins the value at 0 to 0).
pub const ANCHOR_RAMP: f64 = 1e-6;

/// Confidence-bonus coefficients for the online learner.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BonusSchedule {
    pub lambda_k: f64,
    pub lambda_q: f64,
    /// Episodes during which the bounds stay saturated (UCB at k(inf), LCB
    /// at 0).
    pub warmup_c0: u64,
}

impl Default for BonusSchedule {
    fn default() -> Self {
        BonusSchedule {
            lambda_k: 0.5,
            lambda_q: 0.5,
            warmup_c0: 50,
        }
    }
}

impl BonusSchedule {
    /// `lambda sqrt((1 + log log max(n, 3)) / n)`; the additive guard keeps
    /// the radical positive for small n.
    pub fn bonus(lambda: f64, n: u64) -> f64 {
        let nn = n.max(3) as f64;
        lambda * ((1.0 + nn.ln().ln()) / n.max(1) as f64).sqrt()
    }
}

/// Projected OLS estimate of the value curve.
#[derive(Debug, Clone)]
pub struct KEstimate {
    pub curve: ValueCurveK,
    /// Pre-projection ridge OLS slopes.
    pub raw_slopes: Vec<f64>,
    pub n_episodes_used: usize,
}

/// Maximum-likelihood estimate of the competition curve.
#[derive(Debug, Clone)]
pub struct QEstimate {
    pub curve: WinCurveQ,
    /// Log-likelihood at the optimum (sum over auctions).
    pub loglik: f64,
    pub n_auctions_used: usize,
    /// Set when the data carried no information about the slopes (e.g. losses
    /// at zero bids only); the floor curve is returned.
    pub flat_likelihood: bool,
}

fn validate_grid(grid: &[f64]) -> Result<(), EstimatorError> {
    if grid.len() < 2 || grid[0] != 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(EstimatorError::InvalidGrid);
    }
    Ok(())
}

/// Euclidean projection onto the nonincreasing-nonnegative cone
/// `{a_1 >= a_2 >= ... >= a_d >= 0}`: pool-adjacent-violators followed by a
/// clamp at 0 (the lower bound is constant, so clamping preserves optimality).
pub fn project_to_cone(raw: &[f64]) -> Vec<f64> {
    // PAVA for a nonincreasing fit: pool blocks whose mean order is violated.
    let mut means: Vec<f64> = Vec::with_capacity(raw.len());
    let mut counts: Vec<usize> = Vec::with_capacity(raw.len());
    for &x in raw {
        means.push(x);
        counts.push(1);
        while means.len() >= 2 && means[means.len() - 2] < means[means.len() - 1] {
            let (m2, c2) = (means.pop().unwrap(), counts.pop().unwrap());
            let last = means.len() - 1;
            let c1 = counts[last];
            means[last] = (means[last] * c1 as f64 + m2 * c2 as f64) / (c1 + c2) as f64;
            counts[last] = c1 + c2;
        }
    }
    let mut out = Vec::with_capacity(raw.len());
    for (m, c) in means.into_iter().zip(counts) {
        for _ in 0..c {
            out.push(m.max(0.0));
        }
    }
    out
}

/// Solve the symmetric positive-definite system `a x = b` in place.
fn cholesky_solve(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<(), EstimatorError> {
    let n = b.len();
    // Lower-triangular factorization.
    for j in 0..n {
        let mut diag = a[j][j];
        for k in 0..j {
            diag -= a[j][k] * a[j][k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(EstimatorError::SingularDesign);
        }
        let diag = diag.sqrt();
        a[j][j] = diag;
        for i in j + 1..n {
            let mut v = a[i][j];
            for k in 0..j {
                v -= a[i][k] * a[j][k];
            }
            a[i][j] = v / diag;
        }
    }
    // Forward then backward substitution.
    for i in 0..n {
        for k in 0..i {
            b[i] -= a[i][k] * b[k];
        }
        b[i] /= a[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            b[i] -= a[k][i] * b[k];
        }
        b[i] /= a[i][i];
    }
    Ok(())
}

/// Design row for one episode: overlap of each grid interval with [0, age],
/// summed over win ages.
fn design_row(grid: &[f64], record: &EpisodeKRecord, out: &mut [f64]) {
    out.fill(0.0);
    for &age in &record.win_ages {
        for i in 0..out.len() {
            let lo = grid[i].min(age);
            let hi = grid[i + 1].min(age);
            if hi <= lo {
                break;
            }
            out[i] += hi - lo;
        }
    }
}

/// Ridge OLS on the aggregated episode feedback followed by projection onto
/// the concave-nondecreasing cone. The slope past the final breakpoint is
/// identically 0 and is held out of the regression.
pub fn estimate_k(
    data: &[EpisodeKRecord],
    grid: &[f64],
    ridge: f64,
) -> Result<KEstimate, EstimatorError> {
    validate_grid(grid)?;
    if data.is_empty() {
        return Err(EstimatorError::EmptyData);
    }
    let d = grid.len() - 1;
    let mut gram = vec![vec![0.0f64; d]; d];
    let mut rhs = vec![0.0f64; d];
    let mut z = vec![0.0f64; d];
    for rec in data {
        design_row(grid, rec, &mut z);
        for i in 0..d {
            if z[i] == 0.0 {
                continue;
            }
            rhs[i] += z[i] * rec.gross_value;
            for j in 0..=i {
                gram[i][j] += z[i] * z[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[j][i] = gram[i][j];
        }
        gram[i][i] += ridge;
    }
    cholesky_solve(&mut gram, &mut rhs)?;
    let raw_slopes = rhs;
    let projected = project_to_cone(&raw_slopes);
    let curve = ValueCurveK::new(PwlCurve::new(grid.to_vec(), projected, 0.0)?)?;
    Ok(KEstimate {
        curve,
        raw_slopes,
        n_episodes_used: data.len(),
    })
}

/// Scale-relative ridge default: 1e-6 trace(Z'Z) / d.
pub fn default_ridge(data: &[EpisodeKRecord], grid: &[f64]) -> f64 {
    let d = grid.len().saturating_sub(1).max(1);
    let mut z = vec![0.0f64; d];
    let mut trace = 0.0;
    for rec in data {
        design_row(grid, rec, &mut z);
        trace += z.iter().map(|v| v * v).sum::<f64>();
    }
    1e-6 * trace / d as f64
}

/// Ridge OLS with the scale-relative default ridge.
pub fn estimate_k_auto(
    data: &[EpisodeKRecord],
    grid: &[f64],
) -> Result<KEstimate, EstimatorError> {
    estimate_k(data, grid, default_ridge(data, grid))
}

/// Sufficient statistics of the q likelihood.
struct QStats {
    /// Win counts per grid segment.
    wins: Vec<f64>,
    /// Lost auctions as (segment of the bid, bid) with bids clamped to the
    /// domain end.
    losses: Vec<(usize, f64)>,
    n_used: usize,
}

fn segment_of(grid: &[f64], x: f64) -> usize {
    // Half-open convention (b_{i-1}, b_i]; x = 0 goes to the first segment.
    grid[1..].partition_point(|&b| b < x).min(grid.len() - 2)
}

fn collect_q_stats(data: &[AuctionRecord], grid: &[f64]) -> Result<QStats, EstimatorError> {
    let d = grid.len() - 1;
    let b_end = grid[d];
    let mut wins = vec![0.0f64; d];
    let mut losses = Vec::new();
    for rec in data {
        if rec.won {
            if rec.price > b_end + 1e-12 || rec.price < 0.0 {
                return Err(EstimatorError::PriceOutOfDomain(rec.price));
            }
            wins[segment_of(grid, rec.price)] += 1.0;
        } else if rec.bid > 0.0 {
            let b = rec.bid.min(b_end);
            losses.push((segment_of(grid, b), b));
        }
    }
    Ok(QStats {
        wins,
        losses,
        n_used: data.len(),
    })
}

/// Mean log-likelihood at slopes `c`, with gradient and (optionally) the
/// negative Hessian. All loss terms aggregate per segment, so one pass over
/// the losses covers value, gradient and curvature.
fn q_objective(
    stats: &QStats,
    grid: &[f64],
    c: &[f64],
    grad: &mut [f64],
    mut hess: Option<&mut Vec<Vec<f64>>>,
) -> f64 {
    let d = c.len();
    let inv_n = 1.0 / stats.n_used as f64;
    let mut value = 0.0;
    grad.fill(0.0);
    if let Some(h) = hess.as_deref_mut() {
        for row in h.iter_mut() {
            row.fill(0.0);
        }
    }
    for i in 0..d {
        if stats.wins[i] > 0.0 {
            value += stats.wins[i] * c[i].ln();
            grad[i] += stats.wins[i] / c[i];
            if let Some(h) = hess.as_deref_mut() {
                h[i][i] += stats.wins[i] / (c[i] * c[i]);
            }
        }
    }
    // Prefix values of q at the knots.
    let mut prefix = vec![0.0f64; d + 1];
    for i in 0..d {
        prefix[i + 1] = prefix[i] + c[i] * (grid[i + 1] - grid[i]);
    }
    // Per-segment accumulators of the loss weights w = 1 / (1 - q(b)).
    let mut w_sum = vec![0.0f64; d];
    let mut wb_sum = vec![0.0f64; d];
    let mut w2_sum = vec![0.0f64; d];
    let mut w2b_sum = vec![0.0f64; d];
    let mut w2bb_sum = vec![0.0f64; d];
    for &(seg, bid) in &stats.losses {
        let q = prefix[seg] + c[seg] * (bid - grid[seg]);
        let one_minus = (1.0 - q).max(1e-300);
        value += one_minus.ln();
        let w = 1.0 / one_minus;
        let x = bid - grid[seg];
        w_sum[seg] += w;
        wb_sum[seg] += w * x;
        w2_sum[seg] += w * w;
        w2b_sum[seg] += w * w * x;
        w2bb_sum[seg] += w * w * x * x;
    }
    // grad_i -= Delta_i * sum_{s > i} w_sum[s] + wb_sum[i]
    let mut suffix = 0.0;
    for i in (0..d).rev() {
        grad[i] -= (grid[i + 1] - grid[i]) * suffix + wb_sum[i];
        suffix += w_sum[i];
    }
    for g in grad.iter_mut() {
        *g *= inv_n;
    }
    if let Some(h) = hess {
        // Negative-Hessian entries of the loss part, i <= j:
        //   s > j contributes Delta_i Delta_j w^2,
        //   s = j contributes Delta_i w^2 (b - b_{j-1})    (i < j)
        //                     w^2 (b - b_{j-1})^2          (i = j).
        let mut suf2 = vec![0.0f64; d + 1];
        for i in (0..d).rev() {
            suf2[i] = suf2[i + 1] + w2_sum[i];
        }
        for j in 0..d {
            let dj = grid[j + 1] - grid[j];
            for i in 0..=j {
                let di = grid[i + 1] - grid[i];
                let mut v = di * dj * suf2[j + 1];
                if i < j {
                    v += di * w2b_sum[j];
                } else {
                    v += w2bb_sum[j];
                }
                h[i][j] += v;
                if i < j {
                    h[j][i] += v;
                }
            }
        }
        for row in h.iter_mut() {
            for v in row.iter_mut() {
                *v *= inv_n;
            }
        }
    }
    value * inv_n
}

/// Minimize `0.5 d' H d - g' d` over `{d >= lower, a' d <= r}` by a primal
/// active-set method; H must be positive definite. Dimensions stay tiny
/// (one slope per grid segment), so dense solves are fine.
fn qp_step(h: &[Vec<f64>], g: &[f64], lower: &[f64], a: &[f64], r: f64) -> Vec<f64> {
    let d = g.len();
    let mut x = vec![0.0f64; d];
    // Start from the origin (feasible: the current iterate satisfies the
    // constraints, so lower <= 0 and r >= 0 up to fp slack).
    let mut at_bound = vec![false; d];
    let mut budget_active = false;
    for _round in 0..(2 * d + 4) {
        // Equality-constrained KKT solve on the free block.
        let free: Vec<usize> = (0..d).filter(|&i| !at_bound[i]).collect();
        let nf = free.len();
        let m = nf + budget_active as usize;
        let mut kkt = vec![vec![0.0f64; m + 1]; m];
        for (ri, &i) in free.iter().enumerate() {
            for (ci, &j) in free.iter().enumerate() {
                kkt[ri][ci] = h[i][j];
            }
            if budget_active {
                kkt[ri][nf] = a[i];
            }
            let mut rhs = g[i];
            for j in 0..d {
                if at_bound[j] {
                    rhs -= h[i][j] * lower[j];
                }
            }
            kkt[ri][m] = rhs;
        }
        if budget_active {
            for (ci, &j) in free.iter().enumerate() {
                kkt[nf][ci] = a[j];
            }
            let mut rhs = r;
            for j in 0..d {
                if at_bound[j] {
                    rhs -= a[j] * lower[j];
                }
            }
            kkt[nf][m] = rhs;
        }
        let sol = solve_dense(&mut kkt);
        let mut target = vec![0.0f64; d];
        for (ri, &i) in free.iter().enumerate() {
            target[i] = sol[ri];
        }
        for j in 0..d {
            if at_bound[j] {
                target[j] = lower[j];
            }
        }
        let nu = if budget_active { sol[nf] } else { 0.0 };

        // Longest feasible step from x toward the target.
        let mut alpha = 1.0f64;
        let mut blocker: Option<usize> = None;
        let mut budget_blocks = false;
        for i in 0..d {
            let dir = target[i] - x[i];
            if dir < -1e-300 {
                let step = (lower[i] - x[i]) / dir;
                if step < alpha {
                    alpha = step;
                    blocker = Some(i);
                }
            }
        }
        if !budget_active {
            let load: f64 = (0..d).map(|i| a[i] * (target[i] - x[i])).sum();
            let head: f64 = r - (0..d).map(|i| a[i] * x[i]).sum::<f64>();
            if load > head + 1e-300 && load > 0.0 {
                let step = (head / load).max(0.0);
                if step < alpha {
                    alpha = step;
                    blocker = None;
                    budget_blocks = true;
                }
            }
        }
        for i in 0..d {
            x[i] += alpha * (target[i] - x[i]);
        }
        if alpha < 1.0 {
            if budget_blocks {
                budget_active = true;
            } else if let Some(i) = blocker {
                at_bound[i] = true;
                x[i] = lower[i];
            }
            continue;
        }
        // Full step taken: check multipliers for release.
        // Lagrangian multiplier of x_i = lower_i is (H x - g + nu a)_i.
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..d {
            if at_bound[i] {
                let mut lam = -g[i] + nu * a[i];
                for j in 0..d {
                    lam += h[i][j] * x[j];
                }
                if lam < worst.map_or(-1e-12, |(_, w)| w) {
                    worst = Some((i, lam));
                }
            }
        }
        if nu < -1e-12 && worst.is_none() {
            budget_active = false;
            continue;
        }
        match worst {
            Some((i, _)) => {
                at_bound[i] = false;
            }
            None => return x,
        }
    }
    x
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(aug: &mut [Vec<f64>]) -> Vec<f64> {
    let n = aug.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| aug[a][col].abs().partial_cmp(&aug[b][col].abs()).unwrap())
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        if p.abs() < 1e-300 {
            continue;
        }
        for row in 0..n {
            if row != col {
                let f = aug[row][col] / p;
                if f != 0.0 {
                    for k in col..=n {
                        aug[row][k] -= f * aug[col][k];
                    }
                }
            }
        }
    }
    (0..n)
        .map(|i| {
            let p = aug[i][i];
            if p.abs() < 1e-300 {
                0.0
            } else {
                aug[i][n] / p
            }
        })
        .collect()
}

/// Euclidean projection onto `{c >= floor, <delta, c> <= budget}`.
fn project_feasible(c: &[f64], floor: f64, delta: &[f64], budget: f64) -> Vec<f64> {
    let clamped: Vec<f64> = c.iter().map(|&x| x.max(floor)).collect();
    let load: f64 = clamped.iter().zip(delta).map(|(x, d)| x * d).sum();
    if load <= budget {
        return clamped;
    }
    // Budget is active: c_i = max(floor, c_i - theta delta_i) with theta > 0
    // chosen so the budget binds; the load is nonincreasing in theta.
    let mut lo = 0.0;
    let mut hi = c
        .iter()
        .zip(delta)
        .map(|(&x, &d)| (x - floor) / d.max(1e-300))
        .fold(0.0f64, f64::max)
        + 1.0;
    for _ in 0..200 {
        let theta = 0.5 * (lo + hi);
        let load: f64 = c
            .iter()
            .zip(delta)
            .map(|(&x, &d)| (x - theta * d).max(floor) * d)
            .sum();
        if load > budget {
            lo = theta;
        } else {
            hi = theta;
        }
    }
    let theta = 0.5 * (lo + hi);
    c.iter()
        .zip(delta)
        .map(|(&x, &d)| (x - theta * d).max(floor))
        .collect()
}

const Q_MAX_ITERS: u32 = 100_000;

/// Maximum-likelihood fit of the competition slopes by projected gradient
/// ascent with Armijo backtracking over
/// `{c_i >= c_floor, sum c_i Delta_i <= 1 - eta_fit}`.
pub fn estimate_q(
    data: &[AuctionRecord],
    grid: &[f64],
    c_floor: f64,
    eta_fit: f64,
    opt_tol: f64,
) -> Result<QEstimate, EstimatorError> {
    estimate_q_warm(data, grid, c_floor, eta_fit, opt_tol, None)
}

/// As `estimate_q`, warm-started from a previous slope vector when available.
pub fn estimate_q_warm(
    data: &[AuctionRecord],
    grid: &[f64],
    c_floor: f64,
    eta_fit: f64,
    opt_tol: f64,
    warm: Option<&[f64]>,
) -> Result<QEstimate, EstimatorError> {
    validate_grid(grid)?;
    if data.is_empty() {
        return Err(EstimatorError::EmptyData);
    }
    let d = grid.len() - 1;
    let delta: Vec<f64> = grid.windows(2).map(|w| w[1] - w[0]).collect();
    let budget = 1.0 - eta_fit;
    let total: f64 = delta.iter().sum();
    if !(c_floor > 0.0) || c_floor * total > budget {
        return Err(EstimatorError::InfeasibleConstraints {
            c_floor,
            budget,
        });
    }
    let stats = collect_q_stats(data, grid)?;

    let floor_curve = |flat: bool, loglik: f64| -> Result<QEstimate, EstimatorError> {
        let curve = WinCurveQ::from_estimate(PwlCurve::new(
            grid.to_vec(),
            vec![c_floor; d],
            0.0,
        )?)?;
        Ok(QEstimate {
            curve,
            loglik,
            n_auctions_used: stats.n_used,
            flat_likelihood: flat,
        })
    };
    let informative = stats.wins.iter().any(|&w| w > 0.0) || !stats.losses.is_empty();
    if !informative {
        log::warn!("q likelihood is flat (no wins, losses only at zero bids); returning floor");
        return floor_curve(true, 0.0);
    }

    let mut c: Vec<f64> = match warm {
        Some(w) if w.len() == d => project_feasible(w, c_floor, &delta, budget),
        _ => vec![(0.5 * budget / total).max(c_floor); d],
    };
    let mut grad = vec![0.0f64; d];
    let mut hess = vec![vec![0.0f64; d]; d];
    let mut f = q_objective(&stats, grid, &c, &mut grad, Some(&mut hess));
    let mut converged = false;
    for _ in 0..Q_MAX_ITERS {
        // Gradient-mapping termination at unit step.
        let mapped = project_feasible(
            &c.iter().zip(&grad).map(|(x, g)| x + g).collect::<Vec<_>>(),
            c_floor,
            &delta,
            budget,
        );
        let gm: f64 = mapped
            .iter()
            .zip(&c)
            .map(|(m, x)| (m - x) * (m - x))
            .sum::<f64>()
            .sqrt();
        if gm < opt_tol {
            converged = true;
            break;
        }
        log::trace!("q-mle: gm={gm:.3e} f={f:.12} c={c:?}");
        // Projected Newton step: the objective differences sink below fp
        // noise long before the gradient does, so the step must come from
        // derivatives alone near the optimum.
        let ridge = 1e-12 * (1.0 + hess.iter().enumerate().map(|(i, r)| r[i]).sum::<f64>());
        for (i, row) in hess.iter_mut().enumerate() {
            row[i] += ridge;
        }
        let lower: Vec<f64> = c.iter().map(|x| c_floor - x).collect();
        let head = budget - c.iter().zip(&delta).map(|(x, dl)| x * dl).sum::<f64>();
        let dir = qp_step(&hess, &grad, &lower, &delta, head.max(0.0));
        let ascent: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        if ascent <= 0.0 {
            // No feasible ascent in the quadratic model; the gradient
            // mapping above is the authority, so stop here.
            converged = gm < opt_tol.max(1e-7);
            break;
        }
        // Backtrack while improvements are resolvable; once the predicted
        // gain is at noise level, trust the Newton model and take the step.
        let noise = 1e-13 * (1.0 + f.abs());
        let mut t = 1.0f64;
        loop {
            let cand: Vec<f64> = c.iter().zip(&dir).map(|(x, d)| x + t * d).collect();
            let cand = project_feasible(&cand, c_floor, &delta, budget);
            let cand_f = q_objective(&stats, grid, &cand, &mut grad, Some(&mut hess));
            if cand_f >= f - noise + 1e-4 * t * ascent || t < 1e-8 {
                c = cand;
                f = cand_f;
                break;
            }
            t *= 0.5;
        }
    }
    if !converged {
        return Err(EstimatorError::OptimizerStalled(Q_MAX_ITERS));
    }
    let curve = WinCurveQ::from_estimate(PwlCurve::new(grid.to_vec(), c, 0.0)?)?;
    Ok(QEstimate {
        curve,
        loglik: f * stats.n_used as f64,
        n_auctions_used: stats.n_used,
        flat_likelihood: false,
    })
}

/// Constant curve at `level` over `[0, t_final]`, anchored through the ramp.
pub fn saturated_k(level: f64, t_final: f64) -> ValueCurveK {
    let ramp = ANCHOR_RAMP.min(t_final / 2.0);
    let curve = if level > 0.0 && t_final > ramp {
        PwlCurve::new(vec![0.0, ramp, t_final], vec![level / ramp, 0.0], 0.0).unwrap()
    } else {
        PwlCurve::zero(t_final)
    };
    ValueCurveK::new(curve).unwrap()
}

/// `min(base + bonus, cap)` pointwise as a member of the value-curve class.
/// A positive bonus is carried by a steep anchor ramp (value 0 at age 0 is
/// pinned by the class); the cap crossing becomes an explicit knot.
pub fn lift_and_cap(base: &ValueCurveK, bonus: f64, cap: f64) -> ValueCurveK {
    let inner = base.curve();
    let mut pts: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    let ramp = ANCHOR_RAMP.min(inner.knots().get(1).copied().unwrap_or(1.0) / 2.0);
    if bonus > 0.0 {
        pts.push((ramp, (base.eval(ramp) + bonus).min(cap)));
    }
    for (&t, &v) in inner.knots().iter().zip(inner.knot_values()).skip(1) {
        let lifted = v + bonus;
        if lifted >= cap {
            // Insert the exact cap crossing and flatten from there.
            let (pt, pv) = *pts.last().unwrap();
            if pv < cap && t > pt {
                let slope = (lifted - pv) / (t - pt);
                let cross = pt + (cap - pv) / slope;
                if cross > pt + 1e-12 {
                    pts.push((cross, cap));
                }
            }
            pts.push((t, cap));
        } else {
            pts.push((t, lifted));
        }
    }
    // Deduplicate and rebuild slopes.
    let mut knots = Vec::with_capacity(pts.len());
    let mut vals: Vec<f64> = Vec::with_capacity(pts.len());
    for (t, v) in pts {
        if knots.last().map_or(true, |&g: &f64| t > g + 1e-12) {
            knots.push(t);
            vals.push(v.min(cap));
        }
    }
    if knots.len() == 1 {
        return ValueCurveK::zero();
    }
    let slopes: Vec<f64> = (0..knots.len() - 1)
        .map(|i| ((vals[i + 1] - vals[i]) / (knots[i + 1] - knots[i])).max(0.0))
        .collect();
    // Monotonize against fp wobble; the construction is concave by shape.
    let slopes = project_to_cone(&slopes);
    ValueCurveK::new(PwlCurve::new(knots, slopes, 0.0).unwrap()).unwrap()
}

/// Optimistic value curve: `min(k_est + bonus, k_cap)` pointwise, saturated at
/// `k_cap` during warmup.
pub fn ucb_k(est: &KEstimate, n: u64, sched: &BonusSchedule, k_cap: f64) -> ValueCurveK {
    if n < sched.warmup_c0 {
        return saturated_k(k_cap, est.curve.t_final().max(1.0));
    }
    lift_and_cap(&est.curve, BonusSchedule::bonus(sched.lambda_k, n), k_cap)
}

/// Pessimistic competition curve: `max(q_est - bonus, 0)` pointwise, with the
/// leading flat-at-zero region represented exactly via a knot at the crossing
/// point; identically 0 during warmup.
pub fn lcb_q(est: &QEstimate, n: u64, sched: &BonusSchedule) -> WinCurveQ {
    let base = est.curve.curve();
    let b_max = base.domain_end();
    if n < sched.warmup_c0 {
        return WinCurveQ::zero(b_max);
    }
    let bonus = BonusSchedule::bonus(sched.lambda_q, n);
    if bonus <= 0.0 {
        return est.curve.clone();
    }
    if base.value_end() <= bonus {
        return WinCurveQ::zero(b_max);
    }
    // First knot index whose value exceeds the bonus.
    let vals = base.knot_values();
    let idx = vals.partition_point(|&v| v <= bonus);
    let slope = base.slopes()[idx - 1];
    let cross = base.knots()[idx - 1] + (bonus - vals[idx - 1]) / slope;
    let mut knots = vec![0.0];
    let mut slopes = vec![0.0];
    if cross > 1e-12 {
        knots.push(cross);
    } else {
        // Crossing essentially at the origin: drop the flat lead-in.
        knots[0] = 0.0;
        slopes.clear();
    }
    for (&t, &s) in base.knots()[idx..].iter().zip(&base.slopes()[idx - 1..]) {
        // Slope of the segment ending at t survives unchanged.
        if t > knots.last().unwrap() + 1e-12 {
            knots.push(t);
            slopes.push(s);
        }
    }
    WinCurveQ::from_estimate(PwlCurve::new(knots, slopes, 0.0).unwrap()).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn krec(ages: &[f64], v: f64) -> EpisodeKRecord {
        EpisodeKRecord {
            win_ages: ages.to_vec(),
            gross_value: v,
        }
    }

    #[test]
    fn one_dimensional_normal_equation() {
        // Two episodes, one learnable slope on [0, 1]:
        // a = (0.5*0.2 + 1.0*0.8) / (0.25 + 1.0) = 0.72 at ridge 0.
        let data = vec![krec(&[0.5], 0.2), krec(&[2.0], 0.8)];
        let est = estimate_k(&data, &[0.0, 1.0], 0.0).unwrap();
        assert!((est.raw_slopes[0] - 0.72).abs() < 1e-12);
        assert!((est.curve.eval(1.0) - 0.72).abs() < 1e-12);
        assert_eq!(est.n_episodes_used, 2);
    }

    #[test]
    fn projection_identity_inside_cone() {
        let raw = [0.9, 0.5, 0.2, 0.0];
        assert_eq!(project_to_cone(&raw), raw.to_vec());
    }

    #[test]
    fn projection_pools_violators() {
        // Enumeration oracle fixes (0.4, 0.6) -> (0.5, 0.5).
        assert_eq!(project_to_cone(&[0.4, 0.6]), vec![0.5, 0.5]);
        assert_eq!(project_to_cone(&[-0.3, -0.8]), vec![0.0, 0.0]);
        assert_eq!(project_to_cone(&[0.2, -0.4]), vec![0.2, 0.0]);
    }

    /// Exhaustive active-set QP oracle for the cone projection (d <= 6):
    /// every optimum pools indices into contiguous blocks, each valued at its
    /// mean or pinned at 0.
    fn qp_oracle(raw: &[f64]) -> Vec<f64> {
        let d = raw.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        // Bitmask over "merge with next" plus a zero-suffix cut point.
        for mask in 0..(1u32 << (d - 1)) {
            let mut blocks: Vec<Vec<usize>> = vec![vec![0]];
            for i in 1..d {
                if mask & (1 << (i - 1)) != 0 {
                    blocks.last_mut().unwrap().push(i);
                } else {
                    blocks.push(vec![i]);
                }
            }
            for zero_from in 0..=blocks.len() {
                let mut cand = vec![0.0f64; d];
                for (b, idxs) in blocks.iter().enumerate() {
                    let value = if b >= zero_from {
                        0.0
                    } else {
                        idxs.iter().map(|&i| raw[i]).sum::<f64>() / idxs.len() as f64
                    };
                    for &i in idxs {
                        cand[i] = value;
                    }
                }
                let feasible = cand.windows(2).all(|w| w[0] >= w[1] - 1e-12)
                    && cand.last().map_or(true, |&v| v >= 0.0);
                if !feasible {
                    continue;
                }
                let obj: f64 = cand
                    .iter()
                    .zip(raw)
                    .map(|(c, r)| (c - r) * (c - r))
                    .sum();
                if best.as_ref().map_or(true, |(b, _)| obj < *b - 1e-15) {
                    best = Some((obj, cand));
                }
            }
        }
        best.unwrap().1
    }

    #[test]
    fn projection_matches_qp_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let d = rng.gen_range(1..=6);
            let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.5)).collect();
            let ours = project_to_cone(&raw);
            let oracle = qp_oracle(&raw);
            for (a, b) in ours.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9, "{raw:?}: {ours:?} vs {oracle:?}");
            }
            // KKT: the residual points away from every feasible direction.
            let feas: Vec<f64> = (0..d).map(|i| (d - i) as f64 / d as f64).collect();
            let inner: f64 = raw
                .iter()
                .zip(&ours)
                .zip(feas.iter().zip(&ours))
                .map(|((r, p), (f, p2))| (r - p) * (f - p2))
                .sum();
            assert!(inner <= 1e-9);
        }
    }

    #[test]
    fn empty_or_singular_inputs() {
        assert!(matches!(
            estimate_k(&[], &[0.0, 1.0], 0.0),
            Err(EstimatorError::EmptyData)
        ));
        // Two identical design rows on a 2-interval grid are rank deficient.
        let data = vec![krec(&[0.5], 0.2), krec(&[0.5], 0.25)];
        assert!(matches!(
            estimate_k(&data, &[0.0, 1.0, 2.0], 0.0),
            Err(EstimatorError::SingularDesign)
        ));
        assert!(estimate_k(&data, &[0.0, 1.0, 2.0], 1e-6).is_ok());
        assert!(matches!(
            estimate_k(&data, &[1.0, 2.0], 0.0),
            Err(EstimatorError::InvalidGrid)
        ));
    }

    fn arec(bid: f64, won: bool, price: f64) -> AuctionRecord {
        AuctionRecord {
            t: 0.0,
            bid,
            won,
            price,
        }
    }

    #[test]
    fn single_segment_mle_closed_form() {
        // 30 wins, 70 losses at bid 1.0 on one segment: c = 0.3.
        let mut data = Vec::new();
        for i in 0..30 {
            data.push(arec(1.0, true, 0.2 + 0.02 * i as f64));
        }
        for _ in 0..70 {
            data.push(arec(1.0, false, 0.0));
        }
        let est = estimate_q(&data, &[0.0, 1.0], 1e-4, 0.01, 1e-8).unwrap();
        let c = est.curve.curve().slopes()[0];
        assert!((c - 0.3).abs() < 1e-6, "c = {c}");
        assert_eq!(est.n_auctions_used, 100);
        assert!(!est.flat_likelihood);

        // 1-D likelihood grid-search oracle.
        let grid_best = (1..1000)
            .map(|j| j as f64 / 1000.0)
            .filter(|c| *c <= 0.99)
            .max_by(|a, b| {
                let ll = |c: f64| 30.0 * c.ln() + 70.0 * (1.0 - c).ln();
                ll(*a).partial_cmp(&ll(*b)).unwrap()
            })
            .unwrap();
        assert!((grid_best - 0.3).abs() < 1e-3);
    }

    #[test]
    fn win_only_data_pushes_to_the_budget_boundary() {
        let data = vec![arec(0.8, true, 0.3)];
        let (c_floor, eta_fit) = (1e-4, 0.01);
        let est = estimate_q(&data, &[0.0, 0.5, 1.0], c_floor, eta_fit, 1e-8).unwrap();
        let c = est.curve.curve().slopes();
        // All budget goes to the winning segment, the rest sits at the floor.
        let expect = (1.0 - eta_fit - c_floor * 0.5) / 0.5;
        assert!((c[0] - expect).abs() < 1e-5, "c = {c:?}");
        assert!((c[1] - c_floor).abs() < 1e-9);
    }

    #[test]
    fn flat_likelihood_returns_floor() {
        let data = vec![arec(0.0, false, 0.0); 5];
        let est = estimate_q(&data, &[0.0, 1.0], 1e-4, 0.01, 1e-8).unwrap();
        assert!(est.flat_likelihood);
        assert_eq!(est.curve.curve().slopes(), &[1e-4]);
    }

    #[test]
    fn q_error_paths() {
        assert!(matches!(
            estimate_q(&[], &[0.0, 1.0], 1e-4, 0.01, 1e-8),
            Err(EstimatorError::EmptyData)
        ));
        let data = vec![arec(1.0, true, 2.0)];
        assert!(matches!(
            estimate_q(&data, &[0.0, 1.0], 1e-4, 0.01, 1e-8),
            Err(EstimatorError::PriceOutOfDomain(_))
        ));
        let data = vec![arec(1.0, true, 0.5)];
        assert!(matches!(
            estimate_q(&data, &[0.0, 1.0], 2.0, 0.01, 1e-8),
            Err(EstimatorError::InfeasibleConstraints { .. })
        ));
    }

    #[test]
    fn feasible_projection_properties() {
        let delta = [0.5, 0.5];
        let p = project_feasible(&[3.0, 0.2], 0.1, &delta, 0.9);
        let load: f64 = p.iter().zip(&delta).map(|(x, d)| x * d).sum();
        assert!(load <= 0.9 + 1e-9);
        assert!(p.iter().all(|&x| x >= 0.1 - 1e-12));
        // Interior points survive unchanged.
        let p = project_feasible(&[0.4, 0.3], 0.1, &delta, 0.9);
        assert_eq!(p, vec![0.4, 0.3]);
    }

    fn k_estimate_from(curve: ValueCurveK) -> KEstimate {
        KEstimate {
            raw_slopes: curve.curve().slopes().to_vec(),
            curve,
            n_episodes_used: 1,
        }
    }

    #[test]
    fn ucb_examples() {
        let k = ValueCurveK::new(
            PwlCurve::new(vec![0.0, 1.0, 2.0], vec![0.4, 0.2], 0.0).unwrap(),
        )
        .unwrap();
        let est = k_estimate_from(k.clone());
        let sched = BonusSchedule {
            lambda_k: 0.5,
            lambda_q: 0.5,
            warmup_c0: 50,
        };
        // Warmup saturates at the cap.
        let cap = 0.9;
        let warm = ucb_k(&est, 10, &sched, cap);
        assert!((warm.eval(0.5) - cap).abs() < 1e-9);
        assert!((warm.k_inf() - cap).abs() < 1e-9);

        // Zero bonus: estimate unchanged (up to the cap).
        let zero = BonusSchedule {
            lambda_k: 0.0,
            ..sched
        };
        let same = ucb_k(&est, 100, &zero, cap);
        for i in 0..=20 {
            let t = i as f64 * 0.1;
            assert!((same.eval(t) - k.eval(t).min(cap)).abs() < 1e-12);
        }

        // Fixed bonus: min(k + bonus, cap) pointwise beyond the anchor ramp.
        let n = 100;
        let bonus = BonusSchedule::bonus(0.5, n);
        let lifted = ucb_k(&est, n, &sched, cap);
        for i in 1..=40 {
            let t = i as f64 * 0.05;
            let expect = (k.eval(t) + bonus).min(cap);
            assert!(
                (lifted.eval(t) - expect).abs() < 1e-9,
                "t = {t}: {} vs {expect}",
                lifted.eval(t)
            );
        }
        assert_eq!(lifted.eval(0.0), 0.0);
    }

    fn q_estimate_from(curve: WinCurveQ) -> QEstimate {
        QEstimate {
            curve,
            loglik: 0.0,
            n_auctions_used: 1,
            flat_likelihood: false,
        }
    }

    #[test]
    fn lcb_examples() {
        let q = WinCurveQ::from_estimate(
            PwlCurve::new(vec![0.0, 1.0], vec![1.0], 0.0).unwrap(),
        )
        .unwrap();
        let est = q_estimate_from(q.clone());
        let sched = BonusSchedule {
            lambda_k: 0.5,
            lambda_q: 0.5,
            warmup_c0: 50,
        };
        // Warmup: identically zero.
        let warm = lcb_q(&est, 5, &sched);
        assert_eq!(warm.eval(0.7), 0.0);

        // Zero bonus: unchanged.
        let zero = BonusSchedule {
            lambda_q: 0.0,
            ..sched
        };
        assert_eq!(lcb_q(&est, 100, &zero).curve(), q.curve());

        // q(v) = v with bonus 0.2: flat on [0, 0.2], slope 1 after.
        let sched_fixed = BonusSchedule {
            lambda_q: 0.2 / BonusSchedule::bonus(1.0, 100),
            ..sched
        };
        let low = lcb_q(&est, 100, &sched_fixed);
        assert!(low.eval(0.1) < 1e-12);
        assert!((low.eval(0.2) - 0.0).abs() < 1e-9);
        assert!((low.eval(0.6) - 0.4).abs() < 1e-9);
        assert!((low.eval(1.0) - 0.8).abs() < 1e-9);

        // Bonus above the whole curve: zero curve.
        let sched_big = BonusSchedule {
            lambda_q: 2.0 / BonusSchedule::bonus(1.0, 100),
            ..sched
        };
        assert_eq!(lcb_q(&est, 100, &sched_big).eval(1.0), 0.0);
    }
}
