//! Derivative and flow primitives: central finite differences, Jacobians,
//! Hessian-vector products, Lie brackets of the gradient fields ∇G_i, and the
//! descent flow of a scalar potential.
//!
//! All routines dispatch to a parametrization's analytic derivatives when it
//! provides them and fall back to central differences otherwise.

use nalgebra::{DMatrix, DVector};

use crate::ode::{integrate_to, IntegratorConfig};
use crate::param::Parametrization;
use crate::{Error, Result};

/// Step-size scale for central differences: cube root of machine epsilon
/// balances O(h^2) truncation against O(eps/h) roundoff.
pub fn fd_scale() -> f64 {
    f64::EPSILON.cbrt()
}

/// Central-difference gradient of a scalar function.
/// Per-coordinate step h_k = eps^(1/3) * max(1, |x_k|).
pub fn fd_gradient<F>(f: F, x: &DVector<f64>) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let s = fd_scale();
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    let mut xm = x.clone();
    for k in 0..x.len() {
        let h = s * x[k].abs().max(1.0);
        xp[k] = x[k] + h;
        xm[k] = x[k] - h;
        g[k] = (f(&xp) - f(&xm)) / (2.0 * h);
        xp[k] = x[k];
        xm[k] = x[k];
    }
    g
}

/// Central-difference Jacobian of a vector map g: R^D -> R^d, returned as the
/// d x D matrix whose column k differences coordinate k.
pub fn fd_jacobian<F>(g: F, x: &DVector<f64>, out_dim: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let s = fd_scale();
    let mut jac = DMatrix::zeros(out_dim, x.len());
    let mut xp = x.clone();
    let mut xm = x.clone();
    for k in 0..x.len() {
        let h = s * x[k].abs().max(1.0);
        xp[k] = x[k] + h;
        xm[k] = x[k] - h;
        let col = (g(&xp) - g(&xm)) / (2.0 * h);
        jac.set_column(k, &col);
        xp[k] = x[k];
        xm[k] = x[k];
    }
    jac
}

/// Central-difference directional derivative of a vector map along v,
/// with step h = eps^(1/3) * max(1, ||x||) / ||v||.
pub fn fd_directional<F>(g: F, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let vn = v.norm();
    if vn == 0.0 {
        return DVector::zeros(g(x).len());
    }
    let h = fd_scale() * x.norm().max(1.0) / vn;
    let xp = x + v * h;
    let xm = x - v * h;
    (g(&xp) - g(&xm)) / (2.0 * h)
}

fn check_domain(g: &dyn Parametrization, x: &DVector<f64>) -> Result<()> {
    if x.len() != g.dim_x() {
        return Err(Error::DimensionMismatch(format!(
            "{}: expected x of length {}, got {}",
            g.name(),
            g.dim_x(),
            x.len()
        )));
    }
    if !g.domain().contains(x) {
        return Err(Error::DomainViolation {
            name: g.name().to_string(),
            detail: format!("point outside domain: {:?}", x.as_slice()),
        });
    }
    Ok(())
}

/// Gradient of G_i with analytic-or-FD dispatch and no domain checks; for
/// use inside ODE field closures where the integrator handles bad values.
pub(crate) fn grad_component_raw(
    g: &dyn Parametrization,
    i: usize,
    x: &DVector<f64>,
) -> DVector<f64> {
    match g.grad_component_analytic(i, x) {
        Some(v) => v,
        None => fd_gradient(|p| g.eval(p)[i], x),
    }
}

/// Hessian-vector product of G_i, analytic-or-FD, no domain checks.
pub(crate) fn hessian_vec_raw(
    g: &dyn Parametrization,
    i: usize,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> DVector<f64> {
    match g.hessian_vec_analytic(i, x, v) {
        Some(out) => out,
        None => fd_directional(|p| grad_component_raw(g, i, p), x, v),
    }
}

/// Gradient of the i-th coordinate function G_i at x.
pub fn grad_component(g: &dyn Parametrization, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_domain(g, x)?;
    if i >= g.dim_w() {
        return Err(Error::InvalidArgument(format!(
            "component index {i} out of range for d = {}",
            g.dim_w()
        )));
    }
    let out = grad_component_raw(g, i, x);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("gradient of {} component {i}", g.name()),
        });
    }
    Ok(out)
}

/// Jacobian of G at x; row i is the gradient of G_i.
pub fn jacobian(g: &dyn Parametrization, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_domain(g, x)?;
    let (d, dd) = (g.dim_w(), g.dim_x());
    let mut jac = DMatrix::zeros(d, dd);
    let mut fully_analytic = true;
    for i in 0..d {
        match g.grad_component_analytic(i, x) {
            Some(row) => jac.row_mut(i).copy_from(&row.transpose()),
            None => {
                fully_analytic = false;
                break;
            }
        }
    }
    if !fully_analytic {
        jac = fd_jacobian(|p| g.eval(p), x, d);
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("Jacobian of {}", g.name()),
        });
    }
    Ok(jac)
}

/// Hessian-vector product (Hess G_i)(x) v; analytic when the parametrization
/// provides one, otherwise a directional central difference of the gradient.
pub fn hessian_vec(
    g: &dyn Parametrization,
    i: usize,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_domain(g, x)?;
    let out = hessian_vec_raw(g, i, x, v);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("Hessian-vector product of {} component {i}", g.name()),
        });
    }
    Ok(out)
}

/// Lie bracket of the gradient fields of components i and j:
/// [grad G_i, grad G_j](x) = (Hess G_j) grad G_i - (Hess G_i) grad G_j.
pub fn lie_bracket(
    g: &dyn Parametrization,
    i: usize,
    j: usize,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let gi = grad_component(g, i, x)?;
    let gj = grad_component(g, j, x)?;
    Ok(hessian_vec(g, j, x, &gi)? - hessian_vec(g, i, x, &gj)?)
}

/// Descent flow of a scalar potential: integrates dx/dt = -grad(x) for
/// duration |t|; negative t integrates the reversed field (+grad).
pub fn descent_flow_with_grad<Gr>(
    grad: Gr,
    x0: &DVector<f64>,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<DVector<f64>>
where
    Gr: Fn(&DVector<f64>) -> DVector<f64>,
{
    let sign = if t < 0.0 { 1.0 } else { -1.0 };
    integrate_to(|_, y| grad(y) * sign, x0, 0.0, t.abs(), cfg)
}

/// Descent flow of a scalar potential given only pointwise values; the
/// gradient is formed by central differences at every evaluation.
pub fn descent_flow<F>(
    f: F,
    x0: &DVector<f64>,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    descent_flow_with_grad(|x| fd_gradient(&f, x), x0, t, cfg)
}

/// Flow along the raw gradient field s * grad G_i for duration t >= 0.
/// `sign` selects +grad (s = 1) or -grad (s = -1).
pub fn flow_along_component(
    g: &dyn Parametrization,
    i: usize,
    sign: f64,
    x0: &DVector<f64>,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<DVector<f64>> {
    check_domain(g, x0)?;
    integrate_to(|_, y| grad_component_raw(g, i, y) * sign, x0, 0.0, t, cfg)
}
