//! ODE integration primitives: an adaptive embedded Runge-Kutta 5(4) pair
//! (Dormand-Prince) and a fixed-step classical RK4 for bitwise-reproducible
//! runs. Both enforce a blow-up threshold on the state norm; crossing it is
//! reported as a domain-boundary event with an escape-time estimate.

use nalgebra::DVector;

use crate::{Error, Result};

/// Integration method selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Adaptive Dormand-Prince 5(4) with PI-free step control.
    Rk45,
    /// Classical fixed-step RK4; `step` is the nominal step, shrunk so the
    /// span divides evenly. Deterministic to the bit for identical inputs.
    Rk4 { step: f64 },
}

/// Integrator settings shared by every flow in the crate.
#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub method: Method,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
    /// State-norm threshold treated as "the trajectory escaped the domain".
    pub blow_up: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk45,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_steps: 1_000_000,
            blow_up: 1e8,
        }
    }
}

impl IntegratorConfig {
    /// Fixed-step RK4 configuration with the default tolerances kept for the
    /// routines that consult them (they do not affect stepping).
    pub fn fixed(step: f64) -> Self {
        Self {
            method: Method::Rk4 { step },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::InvalidArgument(
                "integrator tolerances must be positive".into(),
            ));
        }
        if !(self.blow_up >= 1e6) {
            return Err(Error::InvalidArgument(
                "blow-up threshold must be at least 1e6".into(),
            ));
        }
        if let Method::Rk4 { step } = self.method {
            if !(step > 0.0) {
                return Err(Error::InvalidArgument("RK4 step must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Observer verdict after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepFlow {
    Continue,
    Stop,
}

/// Result of an integration run.
#[derive(Debug, Clone)]
pub struct Solution {
    pub t: f64,
    pub state: DVector<f64>,
    pub steps: usize,
    /// True when the observer requested an early stop.
    pub stopped: bool,
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order solution weights equal the last A row (FSAL); E is b5 - b4 for
// the embedded error estimate.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `dy/dt = field(t, y)` from `t0` to `t1` (`t1 >= t0`).
///
/// `observe` runs after every accepted step and may stop the run early.
/// Errors: blow-up (state norm above `cfg.blow_up`, with escape-time
/// estimate), step exhaustion, or a persistently non-finite right-hand side.
pub fn integrate<F, O>(
    mut field: F,
    y0: &DVector<f64>,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
    mut observe: O,
) -> Result<Solution>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    O: FnMut(f64, &DVector<f64>) -> Result<StepFlow>,
{
    cfg.validate()?;
    if !(t1 >= t0) || !t1.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "integration span must satisfy t1 >= t0, got [{t0}, {t1}]"
        )));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "integration initial state".into(),
        });
    }
    if t1 == t0 {
        return Ok(Solution {
            t: t0,
            state: y0.clone(),
            steps: 0,
            stopped: false,
        });
    }
    match cfg.method {
        Method::Rk4 { step } => rk4_fixed(&mut field, y0, t0, t1, step, cfg, &mut observe),
        Method::Rk45 => rk45_adaptive(&mut field, y0, t0, t1, cfg, &mut observe),
    }
}

/// Convenience wrapper returning only the final state.
pub fn integrate_to<F>(
    field: F,
    y0: &DVector<f64>,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    integrate(field, y0, t0, t1, cfg, |_, _| Ok(StepFlow::Continue)).map(|s| s.state)
}

fn rk4_fixed<F, O>(
    field: &mut F,
    y0: &DVector<f64>,
    t0: f64,
    t1: f64,
    step: f64,
    cfg: &IntegratorConfig,
    observe: &mut O,
) -> Result<Solution>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    O: FnMut(f64, &DVector<f64>) -> Result<StepFlow>,
{
    let span = t1 - t0;
    let n = (span / step).ceil().max(1.0) as usize;
    if n > cfg.max_steps {
        return Err(Error::StepExhausted {
            max_steps: cfg.max_steps,
        });
    }
    let h = span / n as f64;
    let mut y = y0.clone();
    let mut t = t0;
    for i in 0..n {
        let k1 = field(t, &y);
        let k2 = field(t + 0.5 * h, &(&y + &k1 * (0.5 * h)));
        let k3 = field(t + 0.5 * h, &(&y + &k2 * (0.5 * h)));
        let k4 = field(t + h, &(&y + &k3 * h));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        t = t0 + (i + 1) as f64 * h;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("RK4 state at t = {t:.6e}"),
            });
        }
        if y.norm() > cfg.blow_up {
            return Err(Error::BlowUp { t_escape: t });
        }
        if let StepFlow::Stop = observe(t, &y)? {
            return Ok(Solution {
                t,
                state: y,
                steps: i + 1,
                stopped: true,
            });
        }
    }
    Ok(Solution {
        t: t1,
        state: y,
        steps: n,
        stopped: false,
    })
}

fn rk45_adaptive<F, O>(
    field: &mut F,
    y0: &DVector<f64>,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
    observe: &mut O,
) -> Result<Solution>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    O: FnMut(f64, &DVector<f64>) -> Result<StepFlow>,
{
    let dim = y0.len();
    let mut t = t0;
    let mut y = y0.clone();
    let mut k1 = field(t, &y);
    let mut h = initial_step(field, &y, &k1, t, t1 - t0, cfg);
    let mut steps = 0usize;
    let mut ks: Vec<DVector<f64>> = vec![DVector::zeros(dim); 7];

    while t < t1 {
        if steps >= cfg.max_steps {
            return Err(Error::StepExhausted {
                max_steps: cfg.max_steps,
            });
        }
        let h_floor = 16.0 * f64::EPSILON * t.abs().max(1.0);
        if t1 - t <= h_floor {
            // Within roundoff of the endpoint; the remaining sliver is below
            // error-control resolution.
            t = t1;
            break;
        }
        if h < h_floor {
            // Error control drove the step below time resolution. A large
            // state means a finite-time escape too steep to reach the norm
            // threshold within floating point; otherwise it is a failure.
            if y.norm() >= 0.01 * cfg.blow_up {
                return Err(Error::BlowUp { t_escape: t });
            }
            return Err(Error::NonFinite {
                context: format!("step size underflow at t = {t:.6e}"),
            });
        }
        h = h.min(t1 - t);

        ks[0] = k1.clone();
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in ks.iter().enumerate().take(s) {
                let a = A[s - 1][j];
                if a != 0.0 {
                    ys.axpy(a * h, kj, 1.0);
                }
            }
            ks[s] = field(t + C[s] * h, &ys);
        }
        // Fifth-order solution: y + h * sum(A[5][j] k_j) is already stage 7's
        // argument; rebuild it explicitly for clarity.
        let mut y_new = y.clone();
        for (j, kj) in ks.iter().enumerate().take(6) {
            let a = A[5][j];
            if a != 0.0 {
                y_new.axpy(a * h, kj, 1.0);
            }
        }

        // Weighted RMS error of the embedded 4th-order difference.
        let mut err_sq = 0.0;
        let mut finite = y_new.iter().all(|v| v.is_finite());
        if finite {
            for i in 0..dim {
                let mut e = 0.0;
                for (j, kj) in ks.iter().enumerate() {
                    e += E[j] * kj[i];
                }
                e *= h;
                let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y_new[i].abs());
                err_sq += (e / sc) * (e / sc);
                if !e.is_finite() {
                    finite = false;
                    break;
                }
            }
        }
        let err = if finite {
            (err_sq / dim as f64).sqrt()
        } else {
            f64::INFINITY
        };

        steps += 1;
        if err <= 1.0 {
            t += h;
            y = y_new;
            // FSAL: stage 7 is the derivative at the accepted point.
            k1 = ks[6].clone();
            if y.norm() > cfg.blow_up {
                return Err(Error::BlowUp { t_escape: t });
            }
            if let StepFlow::Stop = observe(t, &y)? {
                return Ok(Solution {
                    t,
                    state: y,
                    steps,
                    stopped: true,
                });
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
        } else {
            let factor = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 1.0)
            } else {
                0.1
            };
            h *= factor;
        }
    }
    Ok(Solution {
        t,
        state: y,
        steps,
        stopped: false,
    })
}

/// Hairer-style starting step: balances the scaled state and derivative
/// magnitudes, refined with one explicit Euler probe.
fn initial_step<F>(
    field: &mut F,
    y0: &DVector<f64>,
    f0: &DVector<f64>,
    t0: f64,
    span: f64,
    cfg: &IntegratorConfig,
) -> f64
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let dim = y0.len() as f64;
    let sc = |y: &DVector<f64>, i: usize| cfg.abs_tol + cfg.rel_tol * y[i].abs();
    let d0 = (y0
        .iter()
        .enumerate()
        .map(|(i, v)| (v / sc(y0, i)).powi(2))
        .sum::<f64>()
        / dim)
        .sqrt();
    let d1 = (f0
        .iter()
        .enumerate()
        .map(|(i, v)| (v / sc(y0, i)).powi(2))
        .sum::<f64>()
        / dim)
        .sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(span);
    let y1 = y0 + f0 * h0;
    let f1 = field(t0 + h0, &y1);
    let d2 = ((&f1 - f0)
        .iter()
        .enumerate()
        .map(|(i, v)| (v / sc(y0, i)).powi(2))
        .sum::<f64>()
        / dim)
        .sqrt()
        / h0;
    let d_max = d1.max(d2);
    let h1 = if d_max <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d_max).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn decay(_: f64, y: &DVector<f64>) -> DVector<f64> {
        -y.clone()
    }

    #[test]
    fn rk45_matches_exponential_decay() {
        let y0 = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let cfg = IntegratorConfig::default();
        let y = integrate_to(decay, &y0, 0.0, 1.0, &cfg).unwrap();
        for i in 0..3 {
            assert_relative_eq!(y[i], y0[i] * (-1.0f64).exp(), max_relative = 1e-9);
        }
    }

    #[test]
    fn rk4_matches_exponential_decay() {
        let y0 = DVector::from_vec(vec![1.0]);
        let cfg = IntegratorConfig::fixed(1e-3);
        let y = integrate_to(decay, &y0, 0.0, 1.0, &cfg).unwrap();
        assert_relative_eq!(y[0], (-1.0f64).exp(), max_relative = 1e-11);
    }

    #[test]
    fn rk4_is_bitwise_deterministic() {
        let y0 = DVector::from_vec(vec![1.0, 0.3]);
        let cfg = IntegratorConfig::fixed(1e-2);
        let field = |_: f64, y: &DVector<f64>| {
            DVector::from_vec(vec![-y[1] * y[0], y[0] * y[0] - 0.5 * y[1]])
        };
        let a = integrate_to(field, &y0, 0.0, 2.0, &cfg).unwrap();
        let b = integrate_to(field, &y0, 0.0, 2.0, &cfg).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn semigroup_property_holds() {
        let y0 = DVector::from_vec(vec![1.0, 2.0]);
        let cfg = IntegratorConfig::default();
        let full = integrate_to(decay, &y0, 0.0, 2.0, &cfg).unwrap();
        let half = integrate_to(decay, &y0, 0.0, 0.7, &cfg).unwrap();
        let rest = integrate_to(decay, &half, 0.7, 2.0, &cfg).unwrap();
        assert!((full - rest).norm() <= 10.0 * 1e-10);
    }

    #[test]
    fn detects_blow_up_with_escape_time() {
        // dx/dt = 3 x^2 from 1 explodes at t* = 1/3.
        let field = |_: f64, y: &DVector<f64>| DVector::from_vec(vec![3.0 * y[0] * y[0]]);
        let y0 = DVector::from_vec(vec![1.0]);
        let cfg = IntegratorConfig::default();
        let err = integrate_to(field, &y0, 0.0, 1.0, &cfg).unwrap_err();
        match err {
            Error::BlowUp { t_escape } => {
                assert_relative_eq!(t_escape, 1.0 / 3.0, max_relative = 1e-4);
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn observer_can_stop_early() {
        let y0 = DVector::from_vec(vec![1.0]);
        let cfg = IntegratorConfig::default();
        let sol = integrate(decay, &y0, 0.0, 50.0, &cfg, |_, y| {
            Ok(if y[0] < 0.5 {
                StepFlow::Stop
            } else {
                StepFlow::Continue
            })
        })
        .unwrap();
        assert!(sol.stopped);
        assert!(sol.t < 1.0);
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = IntegratorConfig::default();
        cfg.blow_up = 10.0;
        let y0 = DVector::from_vec(vec![1.0]);
        assert!(integrate_to(decay, &y0, 0.0, 1.0, &cfg).is_err());
    }
}
