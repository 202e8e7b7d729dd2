//! The three dynamics under comparison: gradient flow of a reparametrized
//! loss in x-space, mirror flow in dual coordinates, and the Riemannian flow
//! on w-space with metric hess R. All three sample on a shared time grid
//! (200 uniform points plus every loss breakpoint) so trajectories can be
//! compared pointwise.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::geometry::grad_component_raw;
use crate::legendre::LegendreFunction;
use crate::ode::{self, IntegratorConfig, StepFlow};
use crate::param::{self, Parametrization};
use crate::{Error, Result};

/// Uniform sample count of a trajectory grid (breakpoints are added on top).
pub const GRID_SAMPLES: usize = 200;

/// A loss on w-space with value and gradient.
pub trait LossFn: Send + Sync {
    fn value(&self, w: &DVector<f64>) -> f64;
    fn grad(&self, w: &DVector<f64>) -> DVector<f64>;
}

/// L(w) = <direction, w>. Gradient flow under this loss moves x along
/// -direction_i grad G_i; the commutator-loop driver uses it to realize
/// single-coordinate flow legs.
pub struct LinearLoss {
    direction: DVector<f64>,
}

impl LinearLoss {
    pub fn new(direction: DVector<f64>) -> Self {
        Self { direction }
    }
}

impl LossFn for LinearLoss {
    fn value(&self, w: &DVector<f64>) -> f64 {
        self.direction.dot(w)
    }
    fn grad(&self, _w: &DVector<f64>) -> DVector<f64> {
        self.direction.clone()
    }
}

/// L(w) = 0.5 ||Z w - y||^2.
pub struct QuadraticRegressionLoss {
    z: DMatrix<f64>,
    y: DVector<f64>,
}

impl QuadraticRegressionLoss {
    pub fn new(z: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if z.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows but target has length {}",
                z.nrows(),
                y.len()
            )));
        }
        Ok(Self { z, y })
    }

    pub fn residual(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.z * w - &self.y
    }
}

impl LossFn for QuadraticRegressionLoss {
    fn value(&self, w: &DVector<f64>) -> f64 {
        0.5 * self.residual(w).norm_squared()
    }
    fn grad(&self, w: &DVector<f64>) -> DVector<f64> {
        self.z.transpose() * self.residual(w)
    }
}

/// The zero loss: flows are stationary under it.
pub struct ZeroLoss {
    dim: usize,
}

impl ZeroLoss {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl LossFn for ZeroLoss {
    fn value(&self, _w: &DVector<f64>) -> f64 {
        0.0
    }
    fn grad(&self, _w: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
}

/// A piecewise-constant-in-time loss schedule: segment i is active on
/// [starts[i], starts[i+1]), and the last segment extends to infinity.
pub struct TimeDependentLoss {
    starts: Vec<f64>,
    segments: Vec<Arc<dyn LossFn>>,
}

impl TimeDependentLoss {
    /// A single loss active for all time.
    pub fn constant(loss: Arc<dyn LossFn>) -> Self {
        Self {
            starts: vec![0.0],
            segments: vec![loss],
        }
    }

    pub fn piecewise(starts: Vec<f64>, losses: Vec<Arc<dyn LossFn>>) -> Result<Self> {
        if starts.is_empty() || starts.len() != losses.len() {
            return Err(Error::InvalidArgument(format!(
                "schedule needs matching nonempty starts/losses, got {} and {}",
                starts.len(),
                losses.len()
            )));
        }
        if starts[0] != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "first segment must start at 0, got {}",
                starts[0]
            )));
        }
        if starts.windows(2).any(|p| !(p[1] > p[0])) || starts.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(
                "segment starts must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self {
            starts,
            segments: losses,
        })
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    /// Index of the segment active at time t (the last start <= t).
    pub fn segment_index(&self, t: f64) -> usize {
        match self
            .starts
            .binary_search_by(|s| s.partial_cmp(&t).expect("finite starts"))
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    pub fn loss_at(&self, t: f64) -> &Arc<dyn LossFn> {
        &self.segments[self.segment_index(t)]
    }

    pub fn value_at(&self, t: f64, w: &DVector<f64>) -> f64 {
        self.loss_at(t).value(w)
    }

    pub fn grad_at(&self, t: f64, w: &DVector<f64>) -> DVector<f64> {
        self.loss_at(t).grad(w)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.starts
    }
}

/// A sampled trajectory. `w` and `mu` are always present; `x` only for
/// gradient flow (it lives in x-space), `theta` only for mirror flow.
/// `mu` is the accumulated driving signal integral of -grad L_t(w(t)) dt.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Option<Vec<DVector<f64>>>,
    pub w: Vec<DVector<f64>>,
    pub theta: Option<Vec<DVector<f64>>>,
    pub mu: Vec<DVector<f64>>,
    /// Accepted integrator steps over the whole horizon.
    pub steps: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// The shared trajectory grid: GRID_SAMPLES uniform points on [0, t_final]
/// plus every schedule breakpoint strictly inside the horizon.
pub fn sample_times(t_final: f64, breakpoints: &[f64]) -> Vec<f64> {
    let mut ts: Vec<f64> = (0..GRID_SAMPLES)
        .map(|i| t_final * i as f64 / (GRID_SAMPLES - 1) as f64)
        .collect();
    for b in breakpoints {
        if *b > 0.0 && *b < t_final {
            ts.push(*b);
        }
    }
    ts.sort_by(f64::total_cmp);
    let tol = f64::EPSILON * t_final.max(1.0);
    ts.dedup_by(|a, b| (*a - *b).abs() <= tol);
    ts
}

/// Drive an augmented state from sample time to sample time, freezing the
/// active loss segment per window (every breakpoint is a grid point, so no
/// window straddles a segment change). Calls `record` at t = 0 and after
/// each window.
fn integrate_on_grid<Fld, Rec>(
    times: &[f64],
    loss: &TimeDependentLoss,
    y0: DVector<f64>,
    cfg: &IntegratorConfig,
    mut field: Fld,
    mut record: Rec,
) -> Result<usize>
where
    Fld: FnMut(&Arc<dyn LossFn>, f64, &DVector<f64>) -> DVector<f64>,
    Rec: FnMut(f64, &DVector<f64>) -> Result<()>,
{
    cfg.validate()?;
    let mut y = y0;
    record(times[0], &y)?;
    let mut steps = 0usize;
    for k in 1..times.len() {
        let (a, b) = (times[k - 1], times[k]);
        let seg = Arc::clone(loss.loss_at(0.5 * (a + b)));
        let sol = ode::integrate(
            |t, yy| field(&seg, t, yy),
            &y,
            a,
            b,
            cfg,
            |_, _| Ok(StepFlow::Continue),
        )?;
        steps += sol.steps;
        y = sol.state;
        record(b, &y)?;
    }
    Ok(steps)
}

/// Gradient flow of L_t(G(x)) in x-space, with the driving signal mu
/// co-integrated: dx = -dG(x)^T grad L_t(G(x)) dt, dmu = -grad L_t(G(x)) dt.
pub fn gradient_flow(
    g: &dyn Parametrization,
    loss: &TimeDependentLoss,
    x_init: &DVector<f64>,
    t_final: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_horizon(t_final)?;
    let (dim_x, d) = (g.dim_x(), g.dim_w());
    if x_init.len() != dim_x {
        return Err(Error::DimensionMismatch(format!(
            "init has length {}, parametrization expects {}",
            x_init.len(),
            dim_x
        )));
    }
    if !g.domain().contains(x_init) {
        return Err(Error::DomainViolation {
            name: g.name().to_string(),
            detail: "initialization outside the parametrization domain".into(),
        });
    }
    let times = sample_times(t_final, loss.breakpoints());
    let mut xs = Vec::with_capacity(times.len());
    let mut ws = Vec::with_capacity(times.len());
    let mut mus = Vec::with_capacity(times.len());
    let mut y0 = DVector::zeros(dim_x + d);
    y0.rows_mut(0, dim_x).copy_from(x_init);
    let steps = integrate_on_grid(
        &times,
        loss,
        y0,
        cfg,
        |seg, _t, y| {
            let x = y.rows(0, dim_x).into_owned();
            let gl = seg.grad(&g.eval(&x));
            let mut dy = DVector::zeros(dim_x + d);
            for i in 0..d {
                let gi = grad_component_raw(g, i, &x);
                dy.rows_mut(0, dim_x).axpy(-gl[i], &gi, 1.0);
            }
            dy.rows_mut(dim_x, d).copy_from(&(-gl));
            dy
        },
        |_t, y| {
            let x = y.rows(0, dim_x).into_owned();
            if !g.domain().contains(&x) {
                return Err(Error::DomainViolation {
                    name: g.name().to_string(),
                    detail: "trajectory left the parametrization domain".into(),
                });
            }
            ws.push(g.eval(&x));
            mus.push(y.rows(dim_x, d).into_owned());
            xs.push(x);
            Ok(())
        },
    )?;
    Ok(Trajectory {
        times,
        x: Some(xs),
        w: ws,
        theta: None,
        mu: mus,
        steps,
    })
}

/// Mirror flow in dual coordinates: theta(0) = grad R(w_init),
/// dtheta = -grad L_t(grad Q(theta)) dt, w(t) = grad Q(theta(t)).
/// The driving signal is theta(t) - theta(0), so mu needs no extra state.
pub fn mirror_flow(
    f: &LegendreFunction,
    loss: &TimeDependentLoss,
    w_init: &DVector<f64>,
    t_final: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_horizon(t_final)?;
    let theta0 = f.grad_r(w_init)?;
    let times = sample_times(t_final, loss.breakpoints());
    let mut ws = Vec::with_capacity(times.len());
    let mut thetas = Vec::with_capacity(times.len());
    let mut mus = Vec::with_capacity(times.len());
    let t0 = theta0.clone();
    let steps = integrate_on_grid(
        &times,
        loss,
        theta0,
        cfg,
        |seg, _t, th| {
            let w = f.grad_q(th).expect("dual potential is total");
            -seg.grad(&w)
        },
        |_t, th| {
            ws.push(f.grad_q(th)?);
            mus.push(th - &t0);
            thetas.push(th.clone());
            Ok(())
        },
    )?;
    Ok(Trajectory {
        times,
        x: None,
        w: ws,
        theta: Some(thetas),
        mu: mus,
        steps,
    })
}

/// Riemannian flow on w-space with metric hess R:
/// dw = -hess R(w)^{-1} grad L_t(w) dt, mu co-integrated.
/// Conjugate points warm-start the numeric potential kind along the path.
pub fn riemannian_flow(
    f: &LegendreFunction,
    loss: &TimeDependentLoss,
    w_init: &DVector<f64>,
    t_final: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_horizon(t_final)?;
    let d = f.dim();
    if w_init.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "w_init has length {}, potential expects {}",
            w_init.len(),
            d
        )));
    }
    if !f.primal_interior_contains(w_init) {
        return Err(Error::DomainViolation {
            name: f.name().to_string(),
            detail: "w_init outside int(dom R)".into(),
        });
    }
    let times = sample_times(t_final, loss.breakpoints());
    let mut ws = Vec::with_capacity(times.len());
    let mut mus = Vec::with_capacity(times.len());
    let mut warm: Option<DVector<f64>> = None;
    let mut y0 = DVector::zeros(2 * d);
    y0.rows_mut(0, d).copy_from(w_init);
    let steps = integrate_on_grid(
        &times,
        loss,
        y0,
        cfg,
        |seg, _t, y| {
            let w = y.rows(0, d).into_owned();
            // Outside int(dom R) the metric is undefined; a non-finite
            // field makes the adaptive integrator shrink the step.
            match f.riemannian_metric_inv(&w, warm.as_ref()) {
                Ok((inv, mu_hat)) => {
                    warm = Some(mu_hat);
                    let gl = seg.grad(&w);
                    let mut dy = DVector::zeros(2 * d);
                    dy.rows_mut(0, d).copy_from(&(-(inv * &gl)));
                    dy.rows_mut(d, d).copy_from(&(-gl));
                    dy
                }
                Err(_) => DVector::from_element(2 * d, f64::NAN),
            }
        },
        |_t, y| {
            let w = y.rows(0, d).into_owned();
            if !f.primal_interior_contains(&w) {
                return Err(Error::DomainViolation {
                    name: f.name().to_string(),
                    detail: "trajectory left int(dom R)".into(),
                });
            }
            mus.push(y.rows(d, d).into_owned());
            ws.push(w);
            Ok(())
        },
    )?;
    Ok(Trajectory {
        times,
        x: None,
        w: ws,
        theta: None,
        mu: mus,
        steps,
    })
}

fn check_horizon(t_final: f64) -> Result<()> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive and finite, got {t_final}"
        )));
    }
    Ok(())
}

/// Pointwise comparison of the three dynamics on the shared grid.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub times: Vec<f64>,
    /// ||grad R(G(x_init))||: must be <= 1e-6 for the comparison to be
    /// meaningful (the potential is induced at this initialization).
    pub initial_dual_gradient_norm: f64,
    pub grad_vs_mirror: Vec<f64>,
    pub grad_vs_riemannian: Vec<f64>,
    pub mirror_vs_riemannian: Vec<f64>,
    pub max_grad_vs_mirror: f64,
    pub max_grad_vs_riemannian: f64,
    pub max_mirror_vs_riemannian: f64,
    /// max_t ||grad R(w(t)) - grad R(w(0)) - mu(t)|| along the gradient-flow
    /// trajectory (conservation of the dual update rule).
    pub max_dual_conservation_residual: f64,
    /// Largest increase of L(w) between consecutive samples inside one
    /// segment (0 for a perfect descent curve).
    pub max_monotonicity_violation: f64,
}

/// An equivalence run: the report plus the three trajectories that
/// produced it.
pub struct EquivalenceRun {
    pub report: EquivalenceReport,
    pub gradient: Trajectory,
    pub mirror: Trajectory,
    pub riemannian: Trajectory,
}

/// Guard threshold: the initialization must be the potential's reference
/// point for the three dynamics to coincide.
pub const INIT_GRAD_TOL: f64 = 1e-6;

/// Run all three dynamics from matched initializations and compare
/// pointwise on the shared grid. Refuses when grad R(G(x_init)) is not
/// (numerically) zero, since then the mirror flow solves a different
/// problem than the reparametrized gradient flow.
pub fn equivalence_report(
    g: &dyn Parametrization,
    f: &LegendreFunction,
    loss: &TimeDependentLoss,
    x_init: &DVector<f64>,
    t_final: f64,
    cfg: &IntegratorConfig,
) -> Result<EquivalenceRun> {
    let w_init = g.eval(x_init);
    let init_grad = f.grad_r(&w_init)?.norm();
    if init_grad > INIT_GRAD_TOL {
        return Err(Error::InvalidArgument(format!(
            "grad R(G(x_init)) has norm {init_grad:.3e} > {INIT_GRAD_TOL:.0e}; \
             the potential is not induced at this initialization"
        )));
    }
    let gradient = gradient_flow(g, loss, x_init, t_final, cfg)?;
    let mirror = mirror_flow(f, loss, &w_init, t_final, cfg)?;
    let riemannian = riemannian_flow(f, loss, &w_init, t_final, cfg)?;
    let n = gradient.len();
    debug_assert_eq!(mirror.len(), n);
    debug_assert_eq!(riemannian.len(), n);

    let theta0 = f.grad_r(&w_init)?;
    let mut gm = Vec::with_capacity(n);
    let mut gr = Vec::with_capacity(n);
    let mut mr = Vec::with_capacity(n);
    let mut max_cons = 0.0f64;
    for k in 0..n {
        gm.push((&gradient.w[k] - &mirror.w[k]).norm());
        gr.push((&gradient.w[k] - &riemannian.w[k]).norm());
        mr.push((&mirror.w[k] - &riemannian.w[k]).norm());
        let cons = (f.grad_r(&gradient.w[k])? - &theta0 - &gradient.mu[k]).norm();
        max_cons = max_cons.max(cons);
    }
    let max = |v: &[f64]| v.iter().cloned().fold(0.0f64, f64::max);

    let mut max_violation = 0.0f64;
    for k in 1..n {
        let (a, b) = (gradient.times[k - 1], gradient.times[k]);
        if loss.segment_index(a) == loss.segment_index(0.5 * (a + b)) {
            let la = loss.value_at(a, &gradient.w[k - 1]);
            let lb = loss.value_at(a, &gradient.w[k]);
            max_violation = max_violation.max(lb - la);
        }
    }

    let report = EquivalenceReport {
        times: gradient.times.clone(),
        initial_dual_gradient_norm: init_grad,
        max_grad_vs_mirror: max(&gm),
        max_grad_vs_riemannian: max(&gr),
        max_mirror_vs_riemannian: max(&mr),
        grad_vs_mirror: gm,
        grad_vs_riemannian: gr,
        mirror_vs_riemannian: mr,
        max_dual_conservation_residual: max_cons,
        max_monotonicity_violation: max_violation,
    };
    Ok(EquivalenceRun {
        report,
        gradient,
        mirror,
        riemannian,
    })
}

/// Residuals of reconstructing a gradient-flow trajectory through the
/// composed flow map: psi(x_init; mu(t)) should reproduce x(t), and
/// G(psi(x_init; mu(t))) should reproduce w(t).
#[derive(Debug, Clone, Serialize)]
pub struct PsiReconstruction {
    pub times: Vec<f64>,
    pub w_residuals: Vec<f64>,
    pub x_residuals: Vec<f64>,
    pub max_w_residual: f64,
    pub max_x_residual: f64,
}

pub fn psi_reconstruction_check(
    g: &dyn Parametrization,
    traj: &Trajectory,
    checks: usize,
    cfg: &IntegratorConfig,
) -> Result<PsiReconstruction> {
    let xs = traj.x.as_ref().ok_or_else(|| {
        Error::InvalidArgument("psi reconstruction needs an x-space trajectory".into())
    })?;
    if traj.is_empty() || checks == 0 {
        return Err(Error::InvalidArgument(
            "psi reconstruction needs a nonempty trajectory and checks >= 1".into(),
        ));
    }
    let x0 = &xs[0];
    let n = traj.len();
    let picks: Vec<usize> = if checks >= n {
        (0..n).collect()
    } else {
        (0..checks)
            .map(|k| (k as f64 / (checks - 1).max(1) as f64 * (n - 1) as f64).round() as usize)
            .collect()
    };
    let mut times = Vec::with_capacity(picks.len());
    let mut wr = Vec::with_capacity(picks.len());
    let mut xr = Vec::with_capacity(picks.len());
    for &k in &picks {
        let rec = param::psi(g, x0, &traj.mu[k], cfg)?;
        times.push(traj.times[k]);
        wr.push((g.eval(&rec) - &traj.w[k]).norm());
        xr.push((&rec - &xs[k]).norm());
    }
    let max = |v: &[f64]| v.iter().cloned().fold(0.0f64, f64::max);
    Ok(PsiReconstruction {
        max_w_residual: max(&wr),
        max_x_residual: max(&xr),
        times,
        w_residuals: wr,
        x_residuals: xr,
    })
}

/// Stop rule for long-horizon runs: the flow counts as converged when
/// ||dw/dt|| stays below `velocity_tol` for at least `sustain_fraction` of
/// the elapsed time, or when `extra_stop` (e.g. a residual test) fires.
#[derive(Clone)]
pub struct ConvergenceSpec {
    pub velocity_tol: f64,
    pub sustain_fraction: f64,
    pub extra_stop: Option<Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>>,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self {
            velocity_tol: 1e-8,
            sustain_fraction: 0.01,
            extra_stop: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceInfo {
    pub converged: bool,
    pub t_stop: f64,
    pub final_w_velocity: f64,
}

/// Gradient flow with early stopping. Samples at accepted integrator steps
/// (an irregular grid) up to t_max or convergence, whichever comes first.
pub fn gradient_flow_converged(
    g: &dyn Parametrization,
    loss: &TimeDependentLoss,
    x_init: &DVector<f64>,
    t_max: f64,
    spec: &ConvergenceSpec,
    cfg: &IntegratorConfig,
) -> Result<(Trajectory, ConvergenceInfo)> {
    check_horizon(t_max)?;
    cfg.validate()?;
    let (dim_x, d) = (g.dim_x(), g.dim_w());
    if x_init.len() != dim_x {
        return Err(Error::DimensionMismatch(format!(
            "init has length {}, parametrization expects {}",
            x_init.len(),
            dim_x
        )));
    }
    let mut times = Vec::new();
    let mut xs = Vec::new();
    let mut ws = Vec::new();
    let mut mus = Vec::new();
    let mut steps = 0usize;

    let x_velocity = |seg: &Arc<dyn LossFn>, x: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let gl = seg.grad(&g.eval(x));
        let mut dx = DVector::zeros(dim_x);
        for i in 0..d {
            dx.axpy(-gl[i], &grad_component_raw(g, i, x), 1.0);
        }
        (dx, gl)
    };

    // w-rate ||dw/dt|| with dw_i = <grad G_i, dx>.
    let w_rate = |x: &DVector<f64>, dx: &DVector<f64>| -> f64 {
        (0..d)
            .map(|i| grad_component_raw(g, i, x).dot(dx).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    let mut y = DVector::zeros(dim_x + d);
    y.rows_mut(0, dim_x).copy_from(x_init);
    let record =
        |times: &mut Vec<f64>, xs: &mut Vec<_>, ws: &mut Vec<_>, mus: &mut Vec<_>, t: f64, y: &DVector<f64>| {
            let x = y.rows(0, dim_x).into_owned();
            times.push(t);
            ws.push(g.eval(&x));
            mus.push(y.rows(dim_x, d).into_owned());
            xs.push(x);
        };
    record(&mut times, &mut xs, &mut ws, &mut mus, 0.0, &y);

    let mut low_since: Option<f64> = None;
    let mut converged = false;
    let mut t_now = 0.0;
    let mut final_rate = f64::NAN;

    let starts = loss.breakpoints();
    for si in 0..loss.segment_count() {
        let a = starts[si];
        let b = if si + 1 < starts.len() {
            starts[si + 1].min(t_max)
        } else {
            t_max
        };
        if b <= a {
            continue;
        }
        let seg = Arc::clone(&loss.segments[si]);
        let field_seg = Arc::clone(&seg);
        let sol = ode::integrate(
            move |_t, yy: &DVector<f64>| {
                let x = yy.rows(0, dim_x).into_owned();
                let (dx, gl) = {
                    let gl = field_seg.grad(&g.eval(&x));
                    let mut dx = DVector::zeros(dim_x);
                    for i in 0..d {
                        dx.axpy(-gl[i], &grad_component_raw(g, i, &x), 1.0);
                    }
                    (dx, gl)
                };
                let mut dy = DVector::zeros(dim_x + d);
                dy.rows_mut(0, dim_x).copy_from(&dx);
                dy.rows_mut(dim_x, d).copy_from(&(-gl));
                dy
            },
            &y,
            a,
            b,
            cfg,
            |t, yy| {
                let x = yy.rows(0, dim_x).into_owned();
                if !g.domain().contains(&x) {
                    return Err(Error::DomainViolation {
                        name: g.name().to_string(),
                        detail: "trajectory left the parametrization domain".into(),
                    });
                }
                record(&mut times, &mut xs, &mut ws, &mut mus, t, yy);
                let (dx, _) = x_velocity(&seg, &x);
                let rate = w_rate(&x, &dx);
                final_rate = rate;
                if let Some(stop) = &spec.extra_stop {
                    if stop(ws.last().expect("just recorded")) {
                        converged = true;
                        return Ok(StepFlow::Stop);
                    }
                }
                if rate <= spec.velocity_tol {
                    let since = *low_since.get_or_insert(t);
                    if t > 0.0 && t - since >= spec.sustain_fraction * t {
                        converged = true;
                        return Ok(StepFlow::Stop);
                    }
                } else {
                    low_since = None;
                }
                Ok(StepFlow::Continue)
            },
        )?;
        steps += sol.steps;
        y = sol.state;
        t_now = sol.t;
        if converged {
            break;
        }
    }
    if times.last() != Some(&t_now) {
        record(&mut times, &mut xs, &mut ws, &mut mus, t_now, &y);
    }
    Ok((
        Trajectory {
            times,
            x: Some(xs),
            w: ws,
            theta: None,
            mu: mus,
            steps,
        },
        ConvergenceInfo {
            converged,
            t_stop: t_now,
            final_w_velocity: final_rate,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::{Identity, UvSquare};
    use approx::assert_relative_eq;

    fn quad_loss_1d(target: f64) -> Arc<dyn LossFn> {
        Arc::new(
            QuadraticRegressionLoss::new(
                DMatrix::identity(1, 1),
                DVector::from_element(1, target),
            )
            .unwrap(),
        )
    }

    #[test]
    fn identity_gradient_flow_is_exponential_decay() {
        let g = Identity::new(1);
        let loss = TimeDependentLoss::constant(quad_loss_1d(0.0));
        let x0 = DVector::from_element(1, 1.0);
        let traj = gradient_flow(&g, &loss, &x0, 1.0, &IntegratorConfig::default()).unwrap();
        let w_end = traj.w.last().unwrap()[0];
        assert_relative_eq!(w_end, (-1.0f64).exp(), epsilon = 1e-8);
        // mu(t) = -int grad L = -int (w - 0) = e^{-t} - 1.
        assert_relative_eq!(
            traj.mu.last().unwrap()[0],
            (-1.0f64).exp() - 1.0,
            epsilon = 1e-8
        );
        assert_eq!(traj.times.len(), GRID_SAMPLES);
    }

    #[test]
    fn zero_loss_keeps_everything_stationary() {
        let g = UvSquare::new(2);
        let loss = TimeDependentLoss::constant(Arc::new(ZeroLoss::new(2)));
        let x0 = DVector::from_vec(vec![0.5, 1.0, 0.3, 0.8]);
        let traj = gradient_flow(&g, &loss, &x0, 2.0, &IntegratorConfig::default()).unwrap();
        for k in 0..traj.len() {
            assert!((traj.x.as_ref().unwrap()[k].clone() - &x0).norm() < 1e-12);
            assert!(traj.mu[k].norm() < 1e-12);
        }
    }

    #[test]
    fn schedule_lookup_and_validation() {
        let l0: Arc<dyn LossFn> = Arc::new(ZeroLoss::new(1));
        let l1: Arc<dyn LossFn> = Arc::new(LinearLoss::new(DVector::from_element(1, 1.0)));
        let s =
            TimeDependentLoss::piecewise(vec![0.0, 1.0, 2.5], vec![l0.clone(), l1.clone(), l0.clone()])
                .unwrap();
        assert_eq!(s.segment_index(0.0), 0);
        assert_eq!(s.segment_index(0.999), 0);
        assert_eq!(s.segment_index(1.0), 1);
        assert_eq!(s.segment_index(2.5), 2);
        assert_eq!(s.segment_index(1e9), 2);
        assert!(TimeDependentLoss::piecewise(vec![0.5], vec![l0.clone()]).is_err());
        assert!(TimeDependentLoss::piecewise(vec![0.0, 0.0], vec![l0.clone(), l1.clone()]).is_err());
        assert!(TimeDependentLoss::piecewise(vec![0.0], vec![l0.clone(), l1.clone()]).is_err());
        assert!(TimeDependentLoss::piecewise(vec![], vec![]).is_err());
    }

    #[test]
    fn grid_contains_breakpoints() {
        let ts = sample_times(10.0, &[0.0, 3.33, 7.77]);
        assert!(ts.iter().any(|t| *t == 3.33));
        assert!(ts.iter().any(|t| *t == 7.77));
        assert_eq!(ts[0], 0.0);
        assert_eq!(*ts.last().unwrap(), 10.0);
        assert!(ts.windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn mirror_flow_under_linear_loss_moves_theta_linearly() {
        // Euclidean potential: theta = w, dtheta = -e1.
        let f = crate::legendre::LegendreFunction::euclidean(DVector::zeros(2));
        let dir = DVector::from_vec(vec![1.0, 0.0]);
        let loss = TimeDependentLoss::constant(Arc::new(LinearLoss::new(dir)));
        let w0 = DVector::from_vec(vec![0.3, -0.2]);
        let traj = mirror_flow(&f, &loss, &w0, 2.0, &IntegratorConfig::default()).unwrap();
        let th = traj.theta.as_ref().unwrap();
        for k in 0..traj.len() {
            let expect = DVector::from_vec(vec![0.3 - traj.times[k], -0.2]);
            assert!((th[k].clone() - &expect).norm() < 1e-9);
            assert!((traj.mu[k].clone() - DVector::from_vec(vec![-traj.times[k], 0.0])).norm() < 1e-9);
        }
    }

    #[test]
    fn piecewise_schedule_round_trip_returns_to_start() {
        let f = crate::legendre::LegendreFunction::euclidean(DVector::zeros(1));
        let up: Arc<dyn LossFn> = Arc::new(LinearLoss::new(DVector::from_element(1, 1.0)));
        let down: Arc<dyn LossFn> = Arc::new(LinearLoss::new(DVector::from_element(1, -1.0)));
        let loss = TimeDependentLoss::piecewise(vec![0.0, 1.0], vec![up, down]).unwrap();
        let w0 = DVector::from_element(1, 0.5);
        let traj = mirror_flow(&f, &loss, &w0, 2.0, &IntegratorConfig::default()).unwrap();
        assert_relative_eq!(traj.w.last().unwrap()[0], 0.5, epsilon = 1e-9);
        // At the breakpoint the state is w0 - 1.
        let k = traj.times.iter().position(|t| *t == 1.0).unwrap();
        assert_relative_eq!(traj.w[k][0], -0.5, epsilon = 1e-9);
    }

    #[test]
    fn three_dynamics_coincide_for_euclidean_identity() {
        let g = Identity::new(2);
        let f = crate::legendre::LegendreFunction::euclidean(DVector::zeros(2));
        let z = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let y = DVector::from_element(1, 1.0);
        let loss = TimeDependentLoss::constant(Arc::new(
            QuadraticRegressionLoss::new(z, y).unwrap(),
        ));
        let x0 = DVector::zeros(2);
        let run =
            equivalence_report(&g, &f, &loss, &x0, 5.0, &IntegratorConfig::default()).unwrap();
        assert!(run.report.max_grad_vs_mirror < 1e-8);
        assert!(run.report.max_grad_vs_riemannian < 1e-8);
        assert!(run.report.max_mirror_vs_riemannian < 1e-8);
        assert!(run.report.max_dual_conservation_residual < 1e-8);
        assert!(run.report.max_monotonicity_violation <= 1e-10);
    }

    #[test]
    fn three_dynamics_coincide_for_uv_square_and_hypentropy() {
        let g = UvSquare::new(2);
        let x0 = DVector::from_vec(vec![0.7, 0.4, 0.5, 0.9]);
        let f = crate::legendre::LegendreFunction::hypentropy_from_init(
            DVector::from_vec(vec![0.7, 0.4]),
            DVector::from_vec(vec![0.5, 0.9]),
        )
        .unwrap();
        let z = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let y = DVector::from_element(1, 0.8);
        let loss = TimeDependentLoss::constant(Arc::new(
            QuadraticRegressionLoss::new(z, y).unwrap(),
        ));
        let run =
            equivalence_report(&g, &f, &loss, &x0, 10.0, &IntegratorConfig::default()).unwrap();
        assert!(
            run.report.max_grad_vs_mirror < 1e-6,
            "gradient vs mirror deviation {}",
            run.report.max_grad_vs_mirror
        );
        assert!(run.report.max_grad_vs_riemannian < 1e-6);
        assert!(run.report.max_dual_conservation_residual < 1e-8);
        assert!(run.report.max_monotonicity_violation <= 1e-10);
    }

    #[test]
    fn equivalence_refuses_mismatched_initialization() {
        let g = UvSquare::new(1);
        let f = crate::legendre::LegendreFunction::hypentropy_from_init(
            DVector::from_element(1, 0.5),
            DVector::from_element(1, 0.5),
        )
        .unwrap();
        let loss = TimeDependentLoss::constant(quad_loss_1d(1.0));
        // G(x) = 0.75 but the potential is centered at 0.
        let x0 = DVector::from_vec(vec![1.0, 0.5]);
        let got = equivalence_report(&g, &f, &loss, &x0, 1.0, &IntegratorConfig::default());
        assert!(matches!(got, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn psi_reconstruction_matches_uv_trajectory() {
        let g = UvSquare::new(2);
        let x0 = DVector::from_vec(vec![0.7, 0.4, 0.5, 0.9]);
        let z = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let y = DVector::from_element(1, 0.8);
        let loss = TimeDependentLoss::constant(Arc::new(
            QuadraticRegressionLoss::new(z, y).unwrap(),
        ));
        let traj = gradient_flow(&g, &loss, &x0, 5.0, &IntegratorConfig::default()).unwrap();
        let rec = psi_reconstruction_check(&g, &traj, 10, &IntegratorConfig::default()).unwrap();
        assert_eq!(rec.times.len(), 10);
        assert!(rec.max_w_residual < 1e-7, "w residual {}", rec.max_w_residual);
        assert!(rec.max_x_residual < 1e-7, "x residual {}", rec.max_x_residual);
    }

    #[test]
    fn converged_run_stops_early_at_equilibrium() {
        let g = Identity::new(1);
        let loss = TimeDependentLoss::constant(quad_loss_1d(0.0));
        let x0 = DVector::from_element(1, 1.0);
        let spec = ConvergenceSpec::default();
        let (traj, info) =
            gradient_flow_converged(&g, &loss, &x0, 1e3, &spec, &IntegratorConfig::default())
                .unwrap();
        assert!(info.converged);
        assert!(info.t_stop < 100.0, "stopped at t = {}", info.t_stop);
        assert!(traj.w.last().unwrap().norm() < 1e-6);
    }

    #[test]
    fn non_converging_run_reaches_the_horizon() {
        let g = Identity::new(1);
        let loss = TimeDependentLoss::constant(Arc::new(LinearLoss::new(
            DVector::from_element(1, 1.0),
        )));
        let x0 = DVector::from_element(1, 0.0);
        let spec = ConvergenceSpec::default();
        let (traj, info) =
            gradient_flow_converged(&g, &loss, &x0, 2.0, &spec, &IntegratorConfig::default())
                .unwrap();
        assert!(!info.converged);
        assert_relative_eq!(info.t_stop, 2.0);
        assert_relative_eq!(traj.w.last().unwrap()[0], -2.0, epsilon = 1e-9);
    }
}
