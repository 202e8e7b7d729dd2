//! Parametrization families, the composed flow map `psi`, regularity checks,
//! and per-axis domain probes.
//!
//! A parametrization G maps x-space (dimension D) to w-space (dimension d).
//! Families provide analytic derivatives where available; everything else
//! falls back to the central differences in [`crate::geometry`].

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry;
use crate::ode::{self, IntegratorConfig, StepFlow};
use crate::{Error, Result};

/// Points closer than this to the positive-orthant boundary are rejected:
/// boundary behavior is outside the open-domain setting.
pub const ORTHANT_MARGIN: f64 = 1e-12;

/// Where a parametrization's map and derivatives are defined.
#[derive(Clone)]
pub enum Domain {
    /// All of R^D.
    All,
    /// Strictly positive coordinates (open positive orthant).
    PositiveOrthant,
    /// Caller-supplied membership predicate.
    Predicate(Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>),
}

impl Domain {
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        match self {
            Domain::All => x.iter().all(|v| v.is_finite()),
            Domain::PositiveOrthant => x.iter().all(|v| v.is_finite() && *v > ORTHANT_MARGIN),
            Domain::Predicate(p) => x.iter().all(|v| v.is_finite()) && p(x),
        }
    }
}

impl std::fmt::Debug for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::All => write!(f, "All"),
            Domain::PositiveOrthant => write!(f, "PositiveOrthant"),
            Domain::Predicate(_) => write!(f, "Predicate(..)"),
        }
    }
}

/// A differentiable map G from x-space R^D to w-space R^d.
///
/// `grad_component_analytic` / `hessian_vec_analytic` return `None` when the
/// family has no closed-form derivatives; callers then use finite
/// differences. Implementations must be pure: same inputs, same outputs.
pub trait Parametrization: Send + Sync {
    /// D, the x-space dimension.
    fn dim_x(&self) -> usize;
    /// d, the w-space dimension.
    fn dim_w(&self) -> usize;
    fn name(&self) -> &str;
    fn domain(&self) -> &Domain;
    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;
    fn grad_component_analytic(&self, _i: usize, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
    fn hessian_vec_analytic(
        &self,
        _i: usize,
        _x: &DVector<f64>,
        _v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        None
    }
}

// ---------------------------------------------------------------------------
// Built-in families
// ---------------------------------------------------------------------------

/// G(x) = x.
pub struct Identity {
    dim: usize,
}

impl Identity {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Parametrization for Identity {
    fn dim_x(&self) -> usize {
        self.dim
    }
    fn dim_w(&self) -> usize {
        self.dim
    }
    fn name(&self) -> &str {
        "identity"
    }
    fn domain(&self) -> &Domain {
        &Domain::All
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn grad_component_analytic(&self, i: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        let mut g = DVector::zeros(x.len());
        g[i] = 1.0;
        Some(g)
    }
    fn hessian_vec_analytic(
        &self,
        _i: usize,
        x: &DVector<f64>,
        _v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        Some(DVector::zeros(x.len()))
    }
}

/// Elementwise square G(x) = x^{.2} on the open positive orthant.
pub struct Square {
    dim: usize,
}

impl Square {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Parametrization for Square {
    fn dim_x(&self) -> usize {
        self.dim
    }
    fn dim_w(&self) -> usize {
        self.dim
    }
    fn name(&self) -> &str {
        "square"
    }
    fn domain(&self) -> &Domain {
        &Domain::PositiveOrthant
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        x.map(|v| v * v)
    }
    fn grad_component_analytic(&self, i: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        let mut g = DVector::zeros(x.len());
        g[i] = 2.0 * x[i];
        Some(g)
    }
    fn hessian_vec_analytic(
        &self,
        i: usize,
        x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        let mut out = DVector::zeros(x.len());
        out[i] = 2.0 * v[i];
        Some(out)
    }
}

/// G(u, v) = u^{.2} - v^{.2} on the open positive orthant of R^{2d};
/// x stacks u then v.
pub struct UvSquare {
    d: usize,
}

impl UvSquare {
    pub fn new(d: usize) -> Self {
        Self { d }
    }

    /// Closed-form flow composition: each coordinate pair evolves as
    /// (u_i e^{2 mu_i}, v_i e^{-2 mu_i}).
    pub fn psi_closed_form(&self, x: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        let d = self.d;
        let mut out = x.clone();
        for i in 0..d {
            out[i] = x[i] * (2.0 * mu[i]).exp();
            out[d + i] = x[d + i] * (-2.0 * mu[i]).exp();
        }
        out
    }
}

impl Parametrization for UvSquare {
    fn dim_x(&self) -> usize {
        2 * self.d
    }
    fn dim_w(&self) -> usize {
        self.d
    }
    fn name(&self) -> &str {
        "uv-square"
    }
    fn domain(&self) -> &Domain {
        &Domain::PositiveOrthant
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.d, |i, _| x[i] * x[i] - x[self.d + i] * x[self.d + i])
    }
    fn grad_component_analytic(&self, i: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        let mut g = DVector::zeros(2 * self.d);
        g[i] = 2.0 * x[i];
        g[self.d + i] = -2.0 * x[self.d + i];
        Some(g)
    }
    fn hessian_vec_analytic(
        &self,
        i: usize,
        _x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        let mut out = DVector::zeros(2 * self.d);
        out[i] = 2.0 * v[i];
        out[self.d + i] = -2.0 * v[self.d + i];
        Some(out)
    }
}

/// Diagonal family G_i(x) = lambda_i^T x^{.2}; coincides with the quadratic
/// family for A_i = 2 diag(lambda_i).
pub struct DiagQuadratic {
    lambdas: Vec<DVector<f64>>,
    dim: usize,
}

impl DiagQuadratic {
    pub fn new(lambdas: Vec<DVector<f64>>) -> Result<Self> {
        let dim = lambdas
            .first()
            .ok_or_else(|| Error::InvalidArgument("need at least one lambda".into()))?
            .len();
        if lambdas.iter().any(|l| l.len() != dim) {
            return Err(Error::DimensionMismatch(
                "lambda vectors must share one length".into(),
            ));
        }
        Ok(Self { lambdas, dim })
    }
}

impl Parametrization for DiagQuadratic {
    fn dim_x(&self) -> usize {
        self.dim
    }
    fn dim_w(&self) -> usize {
        self.lambdas.len()
    }
    fn name(&self) -> &str {
        "diag-quadratic"
    }
    fn domain(&self) -> &Domain {
        &Domain::All
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.lambdas.len(),
            self.lambdas
                .iter()
                .map(|l| l.iter().zip(x.iter()).map(|(a, b)| a * b * b).sum()),
        )
    }
    fn grad_component_analytic(&self, i: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::from_fn(self.dim, |k, _| {
            2.0 * self.lambdas[i][k] * x[k]
        }))
    }
    fn hessian_vec_analytic(
        &self,
        i: usize,
        _x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        Some(DVector::from_fn(self.dim, |k, _| {
            2.0 * self.lambdas[i][k] * v[k]
        }))
    }
}

/// Quadratic family G_i(x) = 0.5 x^T A_i x with symmetric A_i; no
/// commutation requirement (see [`CommutingQuadraticFamily`] for that).
pub struct QuadraticFamily {
    mats: Vec<DMatrix<f64>>,
    dim: usize,
    name: String,
}

impl QuadraticFamily {
    pub fn new(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        let dim = mats
            .first()
            .ok_or_else(|| Error::InvalidArgument("need at least one matrix".into()))?
            .nrows();
        for (i, a) in mats.iter().enumerate() {
            if a.nrows() != dim || a.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "matrix {i} is {}x{}, expected {dim}x{dim}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            let asym = (a - a.transpose()).norm();
            if asym > 1e-12 * a.norm().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "matrix {i} is not symmetric (asymmetry {asym:.3e})"
                )));
            }
        }
        let name = format!("quadratic-family(d={}, D={dim})", mats.len());
        Ok(Self { mats, dim, name })
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.mats
    }
}

impl Parametrization for QuadraticFamily {
    fn dim_x(&self) -> usize {
        self.dim
    }
    fn dim_w(&self) -> usize {
        self.mats.len()
    }
    fn name(&self) -> &str {
        &self.name
    }
    fn domain(&self) -> &Domain {
        &Domain::All
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.mats.len(), self.mats.iter().map(|a| 0.5 * x.dot(&(a * x))))
    }
    fn grad_component_analytic(&self, i: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(&self.mats[i] * x)
    }
    fn hessian_vec_analytic(
        &self,
        i: usize,
        _x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        Some(&self.mats[i] * v)
    }
}

/// Quadratic family whose matrices pairwise commute; for these the gradient
/// fields commute and the composed flow map has the closed form
/// exp(sum mu_i A_i) x.
pub struct CommutingQuadraticFamily {
    inner: QuadraticFamily,
}

impl CommutingQuadraticFamily {
    /// Commutation tolerance: relative Frobenius residual of each pair.
    pub const COMMUTATION_TOL: f64 = 1e-10;

    pub fn new(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        let inner = QuadraticFamily::new(mats)?;
        let mats = inner.matrices();
        for i in 0..mats.len() {
            for j in (i + 1)..mats.len() {
                let resid = (&mats[i] * &mats[j] - &mats[j] * &mats[i]).norm();
                let scale = mats[i].norm() * mats[j].norm();
                if resid > Self::COMMUTATION_TOL * scale.max(1e-300) {
                    return Err(Error::InvalidArgument(format!(
                        "matrices {i} and {j} do not commute \
                         (residual {resid:.3e} vs scale {scale:.3e})"
                    )));
                }
            }
        }
        Ok(Self { inner })
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        self.inner.matrices()
    }

    /// exp(scale * sum_i mu_i A_i) applied to x, via eigendecomposition of
    /// the symmetric sum.
    pub fn exp_apply(
        &self,
        mu: &DVector<f64>,
        scale: f64,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let m = self.weighted_sum(mu)? * scale;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "weighted matrix sum in exp_apply".into(),
            });
        }
        let eig = m.symmetric_eigen();
        let scaled = DVector::from_iterator(
            x.len(),
            eig.eigenvalues.iter().map(|l| l.exp()),
        );
        let y = eig.eigenvectors.transpose() * x;
        let y = y.component_mul(&scaled);
        Ok(&eig.eigenvectors * y)
    }

    /// sum_i mu_i A_i.
    pub fn weighted_sum(&self, mu: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mats = self.matrices();
        if mu.len() != mats.len() {
            return Err(Error::DimensionMismatch(format!(
                "mu has length {}, family has d = {}",
                mu.len(),
                mats.len()
            )));
        }
        let dim = self.inner.dim;
        let mut m = DMatrix::zeros(dim, dim);
        for (c, a) in mu.iter().zip(mats.iter()) {
            m += a * *c;
        }
        Ok(m)
    }

    /// psi(x; mu) = exp(sum mu_i A_i) x.
    pub fn psi_closed_form(&self, x: &DVector<f64>, mu: &DVector<f64>) -> Result<DVector<f64>> {
        self.exp_apply(mu, 1.0, x)
    }
}

impl Parametrization for CommutingQuadraticFamily {
    fn dim_x(&self) -> usize {
        self.inner.dim_x()
    }
    fn dim_w(&self) -> usize {
        self.inner.dim_w()
    }
    fn name(&self) -> &str {
        "commuting-quadratic-family"
    }
    fn domain(&self) -> &Domain {
        &Domain::All
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.eval(x)
    }
    fn grad_component_analytic(&self, i: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        self.inner.grad_component_analytic(i, x)
    }
    fn hessian_vec_analytic(
        &self,
        i: usize,
        x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        self.inner.hessian_vec_analytic(i, x, v)
    }
}

/// Symmetric matrix factorization G(U) = U U^T with U of size d x r.
///
/// x is vec(U) in column-major order; w lists the upper triangle of U U^T
/// row by row, off-diagonal entries stored once. The coordinate functions
/// are quadratic forms, so the Hessians are constant, but the family is
/// non-commuting for d >= 2. Note the w-dimension d(d+1)/2 exceeds the
/// x-dimension d*r for small r; the map is then nowhere regular and serves
/// as the standing counterexample.
pub struct MatrixFactorizationSym {
    d: usize,
    r: usize,
    pairs: Vec<(usize, usize)>,
    name: String,
}

impl MatrixFactorizationSym {
    pub fn new(d: usize, r: usize) -> Result<Self> {
        if d == 0 || r == 0 {
            return Err(Error::InvalidArgument(
                "matrix factorization needs d >= 1 and r >= 1".into(),
            ));
        }
        let pairs = (0..d)
            .flat_map(|i| (i..d).map(move |j| (i, j)))
            .collect::<Vec<_>>();
        let name = format!("uu-transpose(d={d}, r={r})");
        Ok(Self { d, r, pairs, name })
    }

    /// Upper-triangle index pairs (i, j), i <= j, in w order.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn index_of(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // Row-major upper triangle offset.
        i * self.d - i * (i + 1) / 2 + j
    }

    #[inline]
    fn at(&self, x: &DVector<f64>, row: usize, col: usize) -> f64 {
        x[row + col * self.d]
    }
}

impl Parametrization for MatrixFactorizationSym {
    fn dim_x(&self) -> usize {
        self.d * self.r
    }
    fn dim_w(&self) -> usize {
        self.pairs.len()
    }
    fn name(&self) -> &str {
        &self.name
    }
    fn domain(&self) -> &Domain {
        &Domain::All
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.pairs.len(),
            self.pairs.iter().map(|&(i, j)| {
                (0..self.r).map(|b| self.at(x, i, b) * self.at(x, j, b)).sum()
            }),
        )
    }
    fn grad_component_analytic(&self, k: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        let (i, j) = self.pairs[k];
        let mut g = DVector::zeros(self.d * self.r);
        for b in 0..self.r {
            g[i + b * self.d] += self.at(x, j, b);
            g[j + b * self.d] += self.at(x, i, b);
        }
        Some(g)
    }
    fn hessian_vec_analytic(
        &self,
        k: usize,
        _x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        let (i, j) = self.pairs[k];
        let mut out = DVector::zeros(self.d * self.r);
        for b in 0..self.r {
            out[i + b * self.d] += v[j + b * self.d];
            out[j + b * self.d] += v[i + b * self.d];
        }
        Some(out)
    }
}

/// Asymmetric factorization G(U, V) = U V^T with U: d1 x r, V: d2 x r;
/// x stacks vec(U) then vec(V), both column-major; w is row-major over the
/// d1 x d2 output.
pub struct MatrixFactorizationAsym {
    d1: usize,
    d2: usize,
    r: usize,
    name: String,
}

impl MatrixFactorizationAsym {
    pub fn new(d1: usize, d2: usize, r: usize) -> Result<Self> {
        if d1 == 0 || d2 == 0 || r == 0 {
            return Err(Error::InvalidArgument(
                "matrix factorization needs positive dimensions".into(),
            ));
        }
        let name = format!("uv-transpose(d1={d1}, d2={d2}, r={r})");
        Ok(Self { d1, d2, r, name })
    }

    #[inline]
    fn u(&self, x: &DVector<f64>, row: usize, col: usize) -> f64 {
        x[row + col * self.d1]
    }

    #[inline]
    fn v_idx(&self, row: usize, col: usize) -> usize {
        self.d1 * self.r + row + col * self.d2
    }
}

impl Parametrization for MatrixFactorizationAsym {
    fn dim_x(&self) -> usize {
        (self.d1 + self.d2) * self.r
    }
    fn dim_w(&self) -> usize {
        self.d1 * self.d2
    }
    fn name(&self) -> &str {
        &self.name
    }
    fn domain(&self) -> &Domain {
        &Domain::All
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.d1 * self.d2, |k, _| {
            let (i, j) = (k / self.d2, k % self.d2);
            (0..self.r)
                .map(|b| self.u(x, i, b) * x[self.v_idx(j, b)])
                .sum()
        })
    }
    fn grad_component_analytic(&self, k: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        let (i, j) = (k / self.d2, k % self.d2);
        let mut g = DVector::zeros(self.dim_x());
        for b in 0..self.r {
            g[i + b * self.d1] += x[self.v_idx(j, b)];
            g[self.v_idx(j, b)] += self.u(x, i, b);
        }
        Some(g)
    }
    fn hessian_vec_analytic(
        &self,
        k: usize,
        _x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        let (i, j) = (k / self.d2, k % self.d2);
        let mut out = DVector::zeros(self.dim_x());
        for b in 0..self.r {
            out[i + b * self.d1] += v[self.v_idx(j, b)];
            out[self.v_idx(j, b)] += v[i + b * self.d1];
        }
        Some(out)
    }
}

// ---------------------------------------------------------------------------
// Family construction from declarative specs (used by the config layer)
// ---------------------------------------------------------------------------

/// Declarative description of a built-in family; mirrors the CLI config
/// schema's `parametrization` table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    Identity { dim: usize },
    Square { dim: usize },
    UvSquare { d: usize },
    DiagQuadratic { lambdas: Vec<Vec<f64>> },
    Quadratic { matrices: Vec<Vec<Vec<f64>>> },
    CommutingQuadratic { matrices: Vec<Vec<Vec<f64>>> },
    Uut { d: usize, r: usize },
    Uvt { d1: usize, d2: usize, r: usize },
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config("matrix rows must form a square matrix".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Construct a built-in parametrization from its declarative spec.
pub fn builtin(spec: &FamilySpec) -> Result<Box<dyn Parametrization>> {
    Ok(match spec {
        FamilySpec::Identity { dim } => Box::new(Identity::new(*dim)),
        FamilySpec::Square { dim } => Box::new(Square::new(*dim)),
        FamilySpec::UvSquare { d } => Box::new(UvSquare::new(*d)),
        FamilySpec::DiagQuadratic { lambdas } => Box::new(DiagQuadratic::new(
            lambdas.iter().map(|l| DVector::from_vec(l.clone())).collect(),
        )?),
        FamilySpec::Quadratic { matrices } => Box::new(QuadraticFamily::new(
            matrices
                .iter()
                .map(|m| matrix_from_rows(m))
                .collect::<Result<Vec<_>>>()?,
        )?),
        FamilySpec::CommutingQuadratic { matrices } => Box::new(CommutingQuadraticFamily::new(
            matrices
                .iter()
                .map(|m| matrix_from_rows(m))
                .collect::<Result<Vec<_>>>()?,
        )?),
        FamilySpec::Uut { d, r } => Box::new(MatrixFactorizationSym::new(*d, *r)?),
        FamilySpec::Uvt { d1, d2, r } => Box::new(MatrixFactorizationAsym::new(*d1, *d2, *r)?),
    })
}

// ---------------------------------------------------------------------------
// psi, regularity, domain probe
// ---------------------------------------------------------------------------

/// Composed flow map psi(x; mu): flows along +grad G_i for time mu_i, applied
/// in order i = d down to 1 (innermost last coordinate). Negative mu_i flows
/// along -grad G_i for |mu_i|.
///
/// The + orientation makes d psi / d mu_j = grad G_j(psi) hold, which is the
/// identity every downstream construction relies on.
pub fn psi(
    g: &dyn Parametrization,
    x: &DVector<f64>,
    mu: &DVector<f64>,
    cfg: &IntegratorConfig,
) -> Result<DVector<f64>> {
    let order: Vec<usize> = (0..g.dim_w()).rev().collect();
    psi_ordered(g, x, mu, &order, cfg)
}

/// `psi` with an explicit composition order (first entry applied first).
/// For commuting families the order is immaterial; exposed for order-
/// independence tests.
pub fn psi_ordered(
    g: &dyn Parametrization,
    x: &DVector<f64>,
    mu: &DVector<f64>,
    order: &[usize],
    cfg: &IntegratorConfig,
) -> Result<DVector<f64>> {
    if mu.len() != g.dim_w() {
        return Err(Error::DimensionMismatch(format!(
            "mu has length {}, expected d = {}",
            mu.len(),
            g.dim_w()
        )));
    }
    if !g.domain().contains(x) {
        return Err(Error::DomainViolation {
            name: g.name().to_string(),
            detail: "psi start point outside domain".into(),
        });
    }
    let mut state = x.clone();
    for &i in order {
        if mu[i] == 0.0 {
            continue;
        }
        let sign = mu[i].signum();
        state = flow_leg(g, i, sign, &state, mu[i].abs(), cfg).map_err(|e| match e {
            Error::BlowUp { t_escape } => Error::PsiBlowUp {
                axis: i,
                direction: sign as i8,
                t_escape,
            },
            other => other,
        })?;
    }
    Ok(state)
}

/// One psi leg: flow along sign * grad G_i for duration t, enforcing domain
/// membership at every accepted step (orthant families error at the
/// boundary rather than clamping).
fn flow_leg(
    g: &dyn Parametrization,
    i: usize,
    sign: f64,
    x0: &DVector<f64>,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<DVector<f64>> {
    ode::integrate(
        |_, y| geometry::grad_component_raw(g, i, y) * sign,
        x0,
        0.0,
        t,
        cfg,
        |_, y| {
            if g.domain().contains(y) {
                Ok(StepFlow::Continue)
            } else {
                Err(Error::DomainViolation {
                    name: g.name().to_string(),
                    detail: format!("flow leg along coordinate {i} left the domain"),
                })
            }
        },
    )
    .map(|s| s.state)
}

/// Rank report for the Jacobian at a point.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub regular: bool,
    pub sigma_min: f64,
    pub rank: usize,
    pub d: usize,
}

/// A parametrization is regular at x when its Jacobian has full row rank d;
/// `sigma_min` is the d-th singular value (zero when d exceeds D).
pub fn check_regular(
    g: &dyn Parametrization,
    x: &DVector<f64>,
    sigma_min_tol: f64,
) -> Result<RegularityReport> {
    let jac = geometry::jacobian(g, x)?;
    let d = g.dim_w();
    let svals = jac.singular_values();
    let rank = svals.iter().filter(|s| **s > sigma_min_tol).count();
    let sigma_min = if svals.len() < d {
        0.0
    } else {
        svals.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    Ok(RegularityReport {
        regular: sigma_min > sigma_min_tol,
        sigma_min,
        rank,
        d,
    })
}

/// How far a probe got along one direction of one axis.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reach {
    /// The flow hit the blow-up threshold (or the domain boundary) at this
    /// time; for genuinely explosive fields the estimate is sharp, for
    /// merely growing ones it marks where the norm crossed the threshold.
    Escaped { t: f64 },
    /// No escape within the budget; the true extent is at least this.
    AtLeast { budget: f64 },
}

/// Per-axis extents of the set of mu for which psi legs from x exist.
#[derive(Debug, Clone, Serialize)]
pub struct AxisProbe {
    pub axis: usize,
    pub negative: Reach,
    pub positive: Reach,
}

#[derive(Debug, Clone, Serialize)]
pub struct Hyperrectangle {
    pub axes: Vec<AxisProbe>,
}

/// Probe each axis of the flow domain around x: integrate +/- grad G_j until
/// blow-up or budget exhaustion. By construction every reported interval
/// contains 0.
pub fn domain_probe(
    g: &dyn Parametrization,
    x: &DVector<f64>,
    per_axis_budget: f64,
    cfg: &IntegratorConfig,
) -> Result<Hyperrectangle> {
    if !(per_axis_budget > 0.0) {
        return Err(Error::InvalidArgument("probe budget must be positive".into()));
    }
    if !g.domain().contains(x) {
        return Err(Error::DomainViolation {
            name: g.name().to_string(),
            detail: "probe start point outside domain".into(),
        });
    }
    let mut axes = Vec::with_capacity(g.dim_w());
    for j in 0..g.dim_w() {
        let probe = |sign: f64| -> Result<Reach> {
            match flow_leg(g, j, sign, x, per_axis_budget, cfg) {
                Ok(_) => Ok(Reach::AtLeast {
                    budget: per_axis_budget,
                }),
                Err(Error::BlowUp { t_escape }) => Ok(Reach::Escaped { t: t_escape }),
                Err(Error::DomainViolation { .. }) => Ok(Reach::Escaped {
                    t: per_axis_budget,
                }),
                Err(other) => Err(other),
            }
        };
        axes.push(AxisProbe {
            axis: j,
            negative: probe(-1.0)?,
            positive: probe(1.0)?,
        });
    }
    Ok(Hyperrectangle { axes })
}
