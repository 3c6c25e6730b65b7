//! Embedded Dormand–Prince 4(5) integrator for the scalar initial-value
//! problems of this crate, with adaptive step control, optional step cap and
//! an early-exit predicate used for divergence classification.

/// Outcome of one integration pass.
#[derive(Debug, Clone, PartialEq)]
pub enum IntegrationEnd {
    /// Reached the end of the interval; final value attached.
    Completed(f64),
    /// The early-exit predicate fired at (t, y).
    Stopped(f64, f64),
}

pub struct StepControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on the step size (also the densest output spacing).
    pub max_step: f64,
}

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// Integrate `y' = rhs(t, y)` from `t0` to `t1` (either direction). Every
/// accepted step is reported through `record(t, y)`; `stop` is checked after
/// each accepted step and halts integration when it returns true.
pub fn integrate<R, S, F>(
    rhs: R,
    t0: f64,
    t1: f64,
    y0: f64,
    ctrl: &StepControl,
    mut record: F,
    mut stop: S,
) -> IntegrationEnd
where
    R: Fn(f64, f64) -> f64,
    S: FnMut(f64, f64) -> bool,
    F: FnMut(f64, f64),
{
    let span = t1 - t0;
    if span == 0.0 {
        return IntegrationEnd::Completed(y0);
    }
    let dir = span.signum();
    let mut t = t0;
    let mut y = y0;
    let mut h = (span.abs() / 50.0).min(ctrl.max_step).max(1e-14);

    // Dormand-Prince coefficients.
    const A21: f64 = 1.0 / 5.0;
    const A31: f64 = 3.0 / 40.0;
    const A32: f64 = 9.0 / 40.0;
    const A41: f64 = 44.0 / 45.0;
    const A42: f64 = -56.0 / 15.0;
    const A43: f64 = 32.0 / 9.0;
    const A51: f64 = 19372.0 / 6561.0;
    const A52: f64 = -25360.0 / 2187.0;
    const A53: f64 = 64448.0 / 6561.0;
    const A54: f64 = -212.0 / 729.0;
    const A61: f64 = 9017.0 / 3168.0;
    const A62: f64 = -355.0 / 33.0;
    const A63: f64 = 46732.0 / 5247.0;
    const A64: f64 = 49.0 / 176.0;
    const A65: f64 = -5103.0 / 18656.0;
    const B1: f64 = 35.0 / 384.0;
    const B3: f64 = 500.0 / 1113.0;
    const B4: f64 = 125.0 / 192.0;
    const B5: f64 = -2187.0 / 6784.0;
    const B6: f64 = 11.0 / 84.0;
    // 4th-order weights for the error estimate.
    const E1: f64 = 71.0 / 57600.0;
    const E3: f64 = -71.0 / 16695.0;
    const E4: f64 = 71.0 / 1920.0;
    const E5: f64 = -17253.0 / 339200.0;
    const E6: f64 = 22.0 / 525.0;
    const E7: f64 = -1.0 / 40.0;

    loop {
        let remaining = (t1 - t).abs();
        if remaining <= 1e-14 * (1.0 + t.abs()) {
            return IntegrationEnd::Completed(y);
        }
        h = h.min(remaining).min(ctrl.max_step);
        // Land exactly on the endpoint rather than leaving an fp-residue step.
        let last_step = h >= remaining - 1e-12 * (1.0 + t1.abs());
        let hs = if last_step { t1 - t } else { dir * h };

        let k1 = rhs(t, y);
        let k2 = rhs(t + 0.2 * hs, y + hs * A21 * k1);
        let k3 = rhs(t + 0.3 * hs, y + hs * (A31 * k1 + A32 * k2));
        let k4 = rhs(t + 0.8 * hs, y + hs * (A41 * k1 + A42 * k2 + A43 * k3));
        let k5 = rhs(
            t + 8.0 / 9.0 * hs,
            y + hs * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4),
        );
        let t_new = if last_step { t1 } else { t + hs };
        let y6 = y + hs * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5);
        let k6 = rhs(t_new, y6);
        let y_new = y + hs * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
        let k7 = rhs(t_new, y_new);

        let err_est =
            hs * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
        let scale = ctrl.abs_tol + ctrl.rel_tol * y.abs().max(y_new.abs());
        let err = (err_est / scale).abs();

        if err <= 1.0 || h <= 1e-13 * (1.0 + t.abs()) {
            t = t_new;
            y = y_new;
            record(t, y);
            if stop(t, y) {
                return IntegrationEnd::Stopped(t, y);
            }
            let factor = if err > 0.0 {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            } else {
                MAX_FACTOR
            };
            h *= factor;
        } else {
            h *= (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctrl() -> StepControl {
        StepControl {
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            max_step: f64::INFINITY,
        }
    }

    #[test]
    fn exponential_growth() {
        let end = integrate(|_, y| y, 0.0, 1.0, 1.0, &ctrl(), |_, _| {}, |_, _| false);
        match end {
            IntegrationEnd::Completed(y) => assert!((y - 1.0f64.exp()).abs() < 1e-8),
            _ => panic!("unexpected stop"),
        }
    }

    #[test]
    fn backward_direction() {
        // y' = y integrated backward from e at t=1 recovers 1 at t=0.
        let end = integrate(|_, y| y, 1.0, 0.0, 1.0f64.exp(), &ctrl(), |_, _| {}, |_, _| false);
        match end {
            IntegrationEnd::Completed(y) => assert!((y - 1.0).abs() < 1e-8),
            _ => panic!("unexpected stop"),
        }
    }

    #[test]
    fn early_exit_fires() {
        let end = integrate(|_, y| y, 0.0, 50.0, 1.0, &ctrl(), |_, _| {}, |_, y| y > 100.0);
        match end {
            IntegrationEnd::Stopped(t, y) => {
                assert!(y > 100.0);
                assert!(t < 6.0);
            }
            _ => panic!("should have stopped"),
        }
    }

    #[test]
    fn nonsmooth_rhs_still_accurate() {
        // y' = |sin t| has kinks; compare against the closed-form integral.
        let end = integrate(
            |t: f64, _| t.sin().abs(),
            0.0,
            10.0,
            0.0,
            &ctrl(),
            |_, _| {},
            |_, _| false,
        );
        // integral of |sin| over [0, 10] = 2*3 + (1 - cos(10 - 3pi))
        let exact = 6.0 + 1.0 - (10.0 - 3.0 * std::f64::consts::PI).cos();
        match end {
            IntegrationEnd::Completed(y) => assert!((y - exact).abs() < 1e-6, "y = {y}"),
            _ => panic!("unexpected stop"),
        }
    }
}
