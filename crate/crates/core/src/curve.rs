//! Piecewise-linear curve algebra for the two market primitives: the value
//! curve `k` (reward as a function of the age since the last win) and the
//! competition CDF `q` (win probability as a function of the bid).
//!
//! Curves are parameterized by slopes over a knot grid, so the value at 0 is
//! always 0 and evaluation is continuous. Cumulative values and integrals at
//! the knots are precomputed, making `eval` and the win integral O(log n).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    #[error("curve needs at least one knot")]
    Empty,
    #[error("first knot must be 0, got {0}")]
    NonzeroOrigin(f64),
    #[error("knots must be strictly increasing and finite")]
    BadKnots,
    #[error("expected {expected} slopes for {knots} knots, got {got}")]
    SlopeCount {
        knots: usize,
        expected: usize,
        got: usize,
    },
    #[error("slopes must be finite")]
    BadSlopes,
    #[error("value curve slopes must be nonincreasing and nonnegative")]
    NotConcaveIncreasing,
    #[error("win curve slopes must be nonnegative")]
    Decreasing,
    #[error("win curve slopes must be strictly positive for a ground-truth curve")]
    FlatSegment,
    #[error("win curve exceeds 1 - eta: q({bid}) = {value} with eta = {eta}")]
    HeadroomViolated { bid: f64, value: f64, eta: f64 },
    #[error("tail slope must be 0 for this curve class, got {0}")]
    NonzeroTail(f64),
    #[error("interpolation needs at least one interval")]
    ZeroIntervals,
    #[error("interpolation domain [{0}, {1}] is invalid")]
    BadInterval(f64, f64),
}

/// Continuous piecewise-linear function anchored at the origin: value 0 at
/// knot 0, one slope per interval, and an explicit slope beyond the last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PwlCurveRepr", into = "PwlCurveRepr")]
pub struct PwlCurve {
    knots: Vec<f64>,
    slopes: Vec<f64>,
    tail_slope: f64,
    /// Cumulative value at each knot.
    values: Vec<f64>,
    /// Cumulative integral of the curve at each knot.
    integrals: Vec<f64>,
}

/// Wire format: `{"knots": [...], "slopes": [...], "tail_slope": x}`.
#[derive(Serialize, Deserialize)]
struct PwlCurveRepr {
    knots: Vec<f64>,
    slopes: Vec<f64>,
    tail_slope: f64,
}

impl TryFrom<PwlCurveRepr> for PwlCurve {
    type Error = CurveError;
    fn try_from(r: PwlCurveRepr) -> Result<Self, CurveError> {
        PwlCurve::new(r.knots, r.slopes, r.tail_slope)
    }
}

impl From<PwlCurve> for PwlCurveRepr {
    fn from(c: PwlCurve) -> Self {
        PwlCurveRepr {
            knots: c.knots,
            slopes: c.slopes,
            tail_slope: c.tail_slope,
        }
    }
}

impl PwlCurve {
    pub fn new(knots: Vec<f64>, slopes: Vec<f64>, tail_slope: f64) -> Result<Self, CurveError> {
        if knots.is_empty() {
            return Err(CurveError::Empty);
        }
        if knots[0] != 0.0 {
            return Err(CurveError::NonzeroOrigin(knots[0]));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|k| !k.is_finite()) {
            return Err(CurveError::BadKnots);
        }
        if slopes.len() != knots.len() - 1 {
            return Err(CurveError::SlopeCount {
                knots: knots.len(),
                expected: knots.len() - 1,
                got: slopes.len(),
            });
        }
        if slopes.iter().any(|s| !s.is_finite()) || !tail_slope.is_finite() {
            return Err(CurveError::BadSlopes);
        }
        let mut values = Vec::with_capacity(knots.len());
        let mut integrals = Vec::with_capacity(knots.len());
        values.push(0.0);
        integrals.push(0.0);
        for i in 0..slopes.len() {
            let dx = knots[i + 1] - knots[i];
            let v0 = values[i];
            let v1 = v0 + slopes[i] * dx;
            values.push(v1);
            integrals.push(integrals[i] + 0.5 * (v0 + v1) * dx);
        }
        Ok(PwlCurve {
            knots,
            slopes,
            tail_slope,
            values,
            integrals,
        })
    }

    /// Constant-zero curve on `[0, end]` (or the single knot 0 when `end` is 0).
    pub fn zero(end: f64) -> Self {
        if end > 0.0 {
            PwlCurve::new(vec![0.0, end], vec![0.0], 0.0).unwrap()
        } else {
            PwlCurve::new(vec![0.0], vec![], 0.0).unwrap()
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn tail_slope(&self) -> f64 {
        self.tail_slope
    }

    /// Value at each knot (same length as `knots`).
    pub fn knot_values(&self) -> &[f64] {
        &self.values
    }

    /// Last finite knot.
    pub fn domain_end(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Value at the last finite knot.
    pub fn value_end(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn max_slope(&self) -> f64 {
        self.slopes
            .iter()
            .copied()
            .chain(std::iter::once(self.tail_slope))
            .fold(0.0, f64::max)
    }

    /// Index of the interval containing `x`, i.e. the largest `i` with
    /// `knots[i] <= x`, capped at the last interval.
    fn segment(&self, x: f64) -> usize {
        let i = self.knots.partition_point(|&k| k <= x);
        i.saturating_sub(1).min(self.slopes.len().saturating_sub(1))
    }

    /// Piecewise-linear value at `x >= 0`; beyond the last knot the curve
    /// extends with `tail_slope`.
    pub fn eval(&self, x: f64) -> f64 {
        assert!(x >= 0.0, "curve evaluated at negative input {x}");
        let end = self.domain_end();
        if x >= end {
            return self.value_end() + self.tail_slope * (x - end);
        }
        if self.slopes.is_empty() {
            return 0.0;
        }
        let i = self.segment(x);
        self.values[i] + self.slopes[i] * (x - self.knots[i])
    }

    /// Integral of the curve over `[0, x]`, in closed form per segment.
    pub fn integral(&self, x: f64) -> f64 {
        assert!(x >= 0.0, "curve integrated to negative input {x}");
        let end = self.domain_end();
        if x >= end {
            let dx = x - end;
            return *self.integrals.last().unwrap()
                + self.value_end() * dx
                + 0.5 * self.tail_slope * dx * dx;
        }
        if self.slopes.is_empty() {
            return 0.0;
        }
        let i = self.segment(x);
        let dx = x - self.knots[i];
        self.integrals[i] + self.values[i] * dx + 0.5 * self.slopes[i] * dx * dx
    }
}

/// Concave, nondecreasing value curve: slopes nonincreasing and nonnegative,
/// constant beyond the last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PwlCurve", into = "PwlCurve")]
pub struct ValueCurveK {
    curve: PwlCurve,
}

impl TryFrom<PwlCurve> for ValueCurveK {
    type Error = CurveError;
    fn try_from(curve: PwlCurve) -> Result<Self, CurveError> {
        ValueCurveK::new(curve)
    }
}

impl From<ValueCurveK> for PwlCurve {
    fn from(k: ValueCurveK) -> PwlCurve {
        k.curve
    }
}

impl ValueCurveK {
    pub fn new(curve: PwlCurve) -> Result<Self, CurveError> {
        if curve.tail_slope != 0.0 {
            return Err(CurveError::NonzeroTail(curve.tail_slope));
        }
        let ok = curve.slopes.windows(2).all(|w| w[1] <= w[0])
            && curve.slopes.last().map_or(true, |&s| s >= 0.0);
        if !ok {
            return Err(CurveError::NotConcaveIncreasing);
        }
        Ok(ValueCurveK { curve })
    }

    pub fn zero() -> Self {
        ValueCurveK {
            curve: PwlCurve::zero(0.0),
        }
    }

    pub fn curve(&self) -> &PwlCurve {
        &self.curve
    }

    pub fn eval(&self, tau: f64) -> f64 {
        self.curve.eval(tau)
    }

    /// Asymptotic value `k(inf)`, reached at the last breakpoint.
    pub fn k_inf(&self) -> f64 {
        self.curve.value_end()
    }

    /// Last breakpoint, after which the curve is constant.
    pub fn t_final(&self) -> f64 {
        self.curve.domain_end()
    }

    pub fn breakpoints(&self) -> &[f64] {
        self.curve.knots()
    }
}

/// Nondecreasing win-probability curve over the bid domain `[0, b_max]`,
/// clamped to its final value for bids beyond the domain (an out-of-domain
/// bid cannot beat the residual competition mass).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinCurveQ {
    curve: PwlCurve,
    /// Headroom eta: the curve promises q <= 1 - eta.
    headroom: f64,
    /// True when bids beyond the domain are clamped to the final value
    /// (always the case for this class; recorded explicitly).
    clamped_tail: bool,
}

impl WinCurveQ {
    /// Ground-truth competition curve: strictly increasing (all slopes
    /// positive) and bounded away from 1 by `headroom`.
    pub fn ground_truth(curve: PwlCurve, headroom: f64) -> Result<Self, CurveError> {
        if curve.tail_slope != 0.0 {
            return Err(CurveError::NonzeroTail(curve.tail_slope));
        }
        if curve.slopes.iter().any(|&s| s <= 0.0) {
            return Err(CurveError::FlatSegment);
        }
        if curve.value_end() > 1.0 - headroom {
            return Err(CurveError::HeadroomViolated {
                bid: curve.domain_end(),
                value: curve.value_end(),
                eta: headroom,
            });
        }
        Ok(WinCurveQ {
            curve,
            headroom,
            clamped_tail: true,
        })
    }

    /// Estimated or confidence-bound curve: flat segments allowed, only
    /// monotonicity is enforced.
    pub fn from_estimate(curve: PwlCurve) -> Result<Self, CurveError> {
        if curve.tail_slope != 0.0 {
            return Err(CurveError::NonzeroTail(curve.tail_slope));
        }
        if curve.slopes.iter().any(|&s| s < 0.0) {
            return Err(CurveError::Decreasing);
        }
        let headroom = (1.0 - curve.value_end()).max(0.0);
        Ok(WinCurveQ {
            curve,
            headroom,
            clamped_tail: true,
        })
    }

    /// Identically-zero curve on the given bid domain.
    pub fn zero(b_max: f64) -> Self {
        WinCurveQ {
            curve: PwlCurve::zero(b_max),
            headroom: 1.0,
            clamped_tail: true,
        }
    }

    pub fn curve(&self) -> &PwlCurve {
        &self.curve
    }

    pub fn headroom(&self) -> f64 {
        self.headroom
    }

    pub fn is_clamped_tail(&self) -> bool {
        self.clamped_tail
    }

    /// Upper end of the bid domain.
    pub fn domain_end(&self) -> f64 {
        self.curve.domain_end()
    }

    /// Largest slope, `c_max` in the technical conditions.
    pub fn max_slope(&self) -> f64 {
        self.curve.max_slope()
    }

    /// Win probability of bid `b`; clamps to the final value beyond the domain.
    pub fn eval(&self, b: f64) -> f64 {
        self.curve.eval(b)
    }

    /// `Q(v) = \int_0^v q`, the expected surplus of a truthful win and the `f`
    /// appearing in the Bellman dynamics.
    pub fn win_integral(&self, v: f64) -> f64 {
        self.curve.integral(v)
    }

    /// Expected second-price payment `p(b) = q(b) b - Q(b)`.
    pub fn expected_payment(&self, b: f64) -> f64 {
        self.eval(b) * b - self.win_integral(b)
    }

    /// Bregman divergence of the win integral,
    /// `D_Q(x; y) = Q(x) - Q(y) - q(y)(x - y)`.
    pub fn bregman(&self, x: f64, y: f64) -> f64 {
        (self.win_integral(x) - self.win_integral(y) - self.eval(y) * (x - y)).max(0.0)
    }

    /// Inverse-CDF sample of the price-to-beat for uniform `u` in [0, 1).
    /// Returns `None` for the unbeatable mass above the bid domain.
    pub fn quantile(&self, u: f64) -> Option<f64> {
        debug_assert!((0.0..1.0).contains(&u));
        if u >= self.curve.value_end() {
            return None;
        }
        if u <= 0.0 {
            return Some(0.0);
        }
        let values = &self.curve.values;
        // Smallest i with values[i + 1] >= u; flat segments carry no mass.
        let i = values[1..].partition_point(|&v| v < u);
        let s = self.curve.slopes[i];
        if s > 0.0 {
            Some(self.curve.knots[i] + (u - values[i]) / s)
        } else {
            Some(self.curve.knots[i])
        }
    }
}

/// Piecewise-linear interpolant of `f` on a uniform grid of `m` intervals over
/// `[a, b]`. The curve reproduces `f - f(a)` at the grid points; for the curve
/// classes used here `f(0) = 0`, so it matches `f` exactly there. The sup
/// error is at most `L (b-a)^2 / (8 m^2)` when `f'` is L-Lipschitz.
pub fn interpolate_uniform<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    m: usize,
) -> Result<PwlCurve, CurveError> {
    if m == 0 {
        return Err(CurveError::ZeroIntervals);
    }
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(CurveError::BadInterval(a, b));
    }
    let h = (b - a) / m as f64;
    let mut knots = Vec::with_capacity(m + 1);
    let mut vals = Vec::with_capacity(m + 1);
    for j in 0..=m {
        // Hit the endpoint exactly.
        let x = if j == m { b } else { a + h * j as f64 };
        knots.push(x);
        vals.push(f(x));
    }
    let slopes = (0..m)
        .map(|j| (vals[j + 1] - vals[j]) / (knots[j + 1] - knots[j]))
        .collect();
    PwlCurve::new(knots, slopes, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(knots: &[f64], slopes: &[f64], tail: f64) -> PwlCurve {
        PwlCurve::new(knots.to_vec(), slopes.to_vec(), tail).unwrap()
    }

    /// q(v) = v on [0, 1].
    fn q_linear() -> WinCurveQ {
        WinCurveQ::ground_truth(curve(&[0.0, 1.0], &[1.0], 0.0), 0.0).unwrap()
    }

    /// q with knots [0, 0.5, 1], slopes [1, 0].
    fn q_kinked() -> WinCurveQ {
        WinCurveQ::from_estimate(curve(&[0.0, 0.5, 1.0], &[1.0, 0.0], 0.0)).unwrap()
    }

    #[test]
    fn eval_examples() {
        let c = curve(&[0.0, 1.0, 2.0], &[1.0, 0.5], 0.0);
        assert_eq!(c.eval(0.5), 0.5);
        assert_eq!(c.eval(1.5), 1.25);
        assert_eq!(c.eval(10.0), 1.5);
    }

    #[test]
    #[should_panic(expected = "negative input")]
    fn eval_rejects_negative() {
        curve(&[0.0, 1.0], &[1.0], 0.0).eval(-0.1);
    }

    #[test]
    fn win_integral_examples() {
        let q = q_linear();
        assert!((q.win_integral(0.6) - 0.18).abs() < 1e-15);
        assert_eq!(q.win_integral(0.0), 0.0);
        let q = q_kinked();
        assert!((q.win_integral(0.75) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn expected_payment_examples() {
        let q = q_linear();
        assert!((q.expected_payment(0.6) - 0.18).abs() < 1e-15);
        assert_eq!(q.expected_payment(0.0), 0.0);
        let q = q_kinked();
        assert!((q.expected_payment(0.75) - 0.125).abs() < 1e-15);
    }

    /// Trapezoid-rule oracle for the win integral on a dense grid.
    fn quadrature(q: &WinCurveQ, x: f64) -> f64 {
        let n = 200_000;
        let h = x / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let a = h * i as f64;
            acc += 0.5 * (q.eval(a) + q.eval(a + h)) * h;
        }
        acc
    }

    #[test]
    fn bregman_examples() {
        let q = q_linear();
        assert!((q.bregman(0.8, 0.5) - 0.045).abs() < 1e-15);
        assert_eq!(q.bregman(0.5, 0.5), 0.0);

        // Quadrature oracle for the kinked curve at x = 1.0, y = 0.25.
        let q = q_kinked();
        let (x, y) = (1.0, 0.25);
        let oracle = quadrature(&q, x) - quadrature(&q, y) - q.eval(y) * (x - y);
        assert!((oracle - 0.15625).abs() < 1e-9, "oracle = {oracle}");
        assert!((q.bregman(x, y) - 0.15625).abs() < 1e-12);
    }

    #[test]
    fn interpolation_exact_for_linear() {
        let c = interpolate_uniform(|x| 2.0 * x, 0.0, 3.0, 7).unwrap();
        for j in 0..=20 {
            let x = 3.0 * j as f64 / 20.0;
            assert!((c.eval(x) - 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_reference_grid() {
        let theta = 0.1;
        let c = interpolate_uniform(|t| 1.0 - (-theta * t).exp(), 0.0, 10.0, 10).unwrap();
        assert_eq!(c.knots().len(), 11);
        for j in 0..=10 {
            let expect = 1.0 - (-theta * j as f64).exp();
            assert!((c.knots()[j] - j as f64).abs() < 1e-12);
            assert!((c.eval(j as f64) - expect).abs() < 1e-12);
        }
    }

    /// Dense-scan oracle of the interpolation sup error.
    fn sup_error<F: Fn(f64) -> f64>(f: &F, c: &PwlCurve, a: f64, b: f64) -> f64 {
        let n = 100_000;
        (0..=n)
            .map(|i| {
                let x = a + (b - a) * i as f64 / n as f64;
                (f(x) - c.eval(x)).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn interpolation_error_bounds() {
        // x^2 on [0, 1] with m = 2: scan oracle gives L (b-a)^2 / (8 m^2)
        // exactly, with L = 2.
        let f = |x: f64| x * x;
        let c = interpolate_uniform(f, 0.0, 1.0, 2).unwrap();
        let err = sup_error(&f, &c, 0.0, 1.0);
        assert!((err - 0.0625).abs() < 1e-6, "err = {err}");

        // Bound holds for sin (L = 1) and 1 - exp(-theta t) (L = theta^2).
        let cases: Vec<(Box<dyn Fn(f64) -> f64>, f64, f64, usize)> = vec![
            (Box::new(f64::sin), 1.0, 3.0, 11),
            (Box::new(|t: f64| 1.0 - (-0.1 * t).exp()), 0.01, 30.0, 13),
            (Box::new(|x: f64| x * x), 2.0, 1.0, 5),
        ];
        for (f, lip, b, m) in cases {
            let c = interpolate_uniform(&f, 0.0, b, m).unwrap();
            let bound = lip * b * b / (8.0 * (m * m) as f64);
            assert!(sup_error(&f, &c, 0.0, b) <= bound + 1e-9);
        }
    }

    #[test]
    fn constructor_errors() {
        assert_eq!(
            PwlCurve::new(vec![], vec![], 0.0).unwrap_err(),
            CurveError::Empty
        );
        assert_eq!(
            PwlCurve::new(vec![0.5, 1.0], vec![1.0], 0.0).unwrap_err(),
            CurveError::NonzeroOrigin(0.5)
        );
        assert_eq!(
            PwlCurve::new(vec![0.0, 1.0, 1.0], vec![1.0, 1.0], 0.0).unwrap_err(),
            CurveError::BadKnots
        );
        assert!(matches!(
            PwlCurve::new(vec![0.0, 1.0], vec![], 0.0).unwrap_err(),
            CurveError::SlopeCount { .. }
        ));
        assert!(interpolate_uniform(|x| x, 0.0, 1.0, 0).is_err());
        assert!(interpolate_uniform(|x| x, 1.0, 0.0, 3).is_err());

        // Value class rejects convex or decreasing shapes.
        assert!(ValueCurveK::new(curve(&[0.0, 1.0, 2.0], &[0.5, 1.0], 0.0)).is_err());
        assert!(ValueCurveK::new(curve(&[0.0, 1.0, 2.0], &[0.5, -0.1], 0.0)).is_err());
        assert!(ValueCurveK::new(curve(&[0.0, 1.0, 2.0], &[1.0, 0.5], 0.0)).is_ok());

        // Ground-truth win curves must be strictly increasing and leave headroom.
        assert!(WinCurveQ::ground_truth(curve(&[0.0, 1.0, 2.0], &[0.3, 0.0], 0.0), 0.05).is_err());
        assert!(WinCurveQ::ground_truth(curve(&[0.0, 1.0], &[0.98], 0.0), 0.05).is_err());
        assert!(WinCurveQ::ground_truth(curve(&[0.0, 1.0], &[0.9], 0.0), 0.05).is_ok());
        // The relaxed constructor accepts flat segments.
        assert!(WinCurveQ::from_estimate(curve(&[0.0, 1.0, 2.0], &[0.3, 0.0], 0.0)).is_ok());
    }

    #[test]
    fn serde_roundtrip_schema() {
        let q = q_kinked();
        let js = serde_json::to_value(q.curve()).unwrap();
        assert_eq!(js["knots"], serde_json::json!([0.0, 0.5, 1.0]));
        assert_eq!(js["slopes"], serde_json::json!([1.0, 0.0]));
        assert_eq!(js["tail_slope"], serde_json::json!(0.0));
        let back: PwlCurve = serde_json::from_value(js).unwrap();
        assert_eq!(&back, q.curve());
    }

    #[test]
    fn quantile_inverts_cdf() {
        let q = WinCurveQ::ground_truth(curve(&[0.0, 0.5, 1.0], &[0.4, 1.2], 0.0), 0.0).unwrap();
        for i in 1..100 {
            let u = i as f64 / 100.0;
            match q.quantile(u) {
                Some(p) => assert!((q.eval(p) - u).abs() < 1e-12),
                None => assert!(u >= q.eval(1.0)),
            }
        }
        assert_eq!(q.quantile(0.999), None);
    }

    fn arb_pwl() -> impl Strategy<Value = PwlCurve> {
        (
            proptest::collection::vec(0.01f64..2.0, 1..6),
            proptest::collection::vec(0.0f64..3.0, 6),
        )
            .prop_map(|(gaps, slopes)| {
                let mut knots = vec![0.0];
                for g in &gaps {
                    knots.push(knots.last().unwrap() + g);
                }
                let slopes = slopes[..knots.len() - 1].to_vec();
                PwlCurve::new(knots, slopes, 0.0).unwrap()
            })
    }

    proptest! {
        #[test]
        fn eval_is_lipschitz(c in arb_pwl(), x in 0.0f64..12.0, y in 0.0f64..12.0) {
            let lhs = (c.eval(x) - c.eval(y)).abs();
            prop_assert!(lhs <= c.max_slope() * (x - y).abs() + 1e-12);
        }

        #[test]
        fn integral_convex_with_matching_derivative(c in arb_pwl(), x in 0.0f64..10.0, h in 1e-4f64..0.5) {
            let q = WinCurveQ::from_estimate(c).unwrap();
            // Nondecreasing and convex.
            prop_assert!(q.win_integral(x + h) >= q.win_integral(x) - 1e-12);
            let d1 = q.win_integral(x + h) - q.win_integral(x);
            let d2 = q.win_integral(x + 2.0 * h) - q.win_integral(x + h);
            prop_assert!(d2 >= d1 - 1e-10);
            // Exact trapezoid identity: the increment equals h * q(midpoint)
            // whenever [x, x+h] stays inside one segment.
            let seg_ok = !q.curve().knots().iter().any(|&k| k > x && k < x + h);
            if seg_ok {
                let mid = q.eval(x + 0.5 * h) * h;
                prop_assert!((d1 - mid).abs() < 1e-12 * (1.0 + mid.abs()));
            }
        }

        #[test]
        fn payment_identity(c in arb_pwl(), b in 0.0f64..12.0) {
            let q = WinCurveQ::from_estimate(c).unwrap();
            let lhs = q.eval(b) * b - q.expected_payment(b);
            prop_assert!((lhs - q.win_integral(b)).abs() <= 1e-12 * (1.0 + lhs.abs()));
            prop_assert!(q.expected_payment(b) >= -1e-12);
            prop_assert!(q.expected_payment(b) <= q.eval(b) * b + 1e-12);
        }

        #[test]
        fn bregman_nonnegative(c in arb_pwl(), x in 0.0f64..10.0, y in 0.0f64..10.0) {
            let q = WinCurveQ::from_estimate(c).unwrap();
            let d = q.win_integral(x) - q.win_integral(y) - q.eval(y) * (x - y);
            prop_assert!(d >= -1e-12);
            let (lo, hi) = if x < y { (x, y) } else { (y, x) };
            let flat = (q.eval(hi) - q.eval(lo)).abs() < 1e-15;
            if !flat && (x - y).abs() > 1e-9 {
                prop_assert!(d > 0.0);
            }
            if flat || x == y {
                prop_assert!(d.abs() < 1e-12);
            }
        }

        #[test]
        fn payment_nondecreasing(c in arb_pwl(), b in 0.0f64..10.0, db in 0.0f64..2.0) {
            let q = WinCurveQ::from_estimate(c).unwrap();
            prop_assert!(q.expected_payment(b + db) >= q.expected_payment(b) - 1e-12);
        }
    }
}
