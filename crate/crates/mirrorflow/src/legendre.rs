//! Legendre-function machinery: closed-form convex potentials induced by the
//! built-in parametrizations, numeric convex conjugation by damped Newton,
//! Bregman divergences, and a sampled validator for the Legendre/Bregman
//! properties.
//!
//! Each [`LegendreFunction`] carries both sides of the conjugate pair: the
//! primal potential R on w-space and the dual potential Q on mu-space, with
//! grad R and grad Q inverse to each other.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::param::{builtin, check_regular, CommutingQuadraticFamily, FamilySpec, Parametrization};
use crate::{Error, Result};

/// Newton tolerance for numeric conjugation.
const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 100;

#[derive(Clone)]
enum Kind {
    /// R(w) = 0.5 ||w - w_ref||^2.
    Euclidean { w_ref: DVector<f64> },
    /// The arcsinh potential induced by u^{.2} - v^{.2} at init (u0, v0).
    Hypentropy { u0: DVector<f64>, v0: DVector<f64> },
    /// Scaled negative entropy induced by x^{.2} at init x0 (stored squared).
    Entropy { x0_sq: DVector<f64> },
    /// Dual in closed form from a commuting quadratic family at init x0;
    /// primal side via numeric conjugation.
    Quadratic {
        fam: Arc<CommutingQuadraticFamily>,
        x0: DVector<f64>,
    },
}

/// A conjugate pair (R, Q) with gradients and Hessians on both sides.
#[derive(Clone)]
pub struct LegendreFunction {
    kind: Kind,
    d: usize,
    name: String,
    /// When set, primal-side evaluations go through Newton inversion of
    /// grad Q even if a closed form exists (used to cross-check the closed
    /// forms, and the only path for the quadratic kind).
    force_numeric: bool,
}

impl LegendreFunction {
    pub fn euclidean(w_ref: DVector<f64>) -> Self {
        let d = w_ref.len();
        Self {
            kind: Kind::Euclidean { w_ref },
            d,
            name: "euclidean".into(),
            force_numeric: false,
        }
    }

    /// The potential induced by u^{.2} - v^{.2} started at (u0, v0):
    /// R(w) = 1/4 sum_i [ w_i asinh(w_i / (2 u0_i v0_i))
    ///                    - sqrt(w_i^2 + 4 u0_i^2 v0_i^2)
    ///                    - w_i ln(u0_i / v0_i) ].
    pub fn hypentropy_from_init(u0: DVector<f64>, v0: DVector<f64>) -> Result<Self> {
        if u0.len() != v0.len() {
            return Err(Error::DimensionMismatch(
                "u0 and v0 must have equal length".into(),
            ));
        }
        if u0.iter().chain(v0.iter()).any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(
                "hypentropy needs strictly positive initialization".into(),
            ));
        }
        let d = u0.len();
        Ok(Self {
            kind: Kind::Hypentropy { u0, v0 },
            d,
            name: "hypentropy".into(),
            force_numeric: false,
        })
    }

    /// The potential induced by x^{.2} started at x0:
    /// R(w) = 1/4 sum_i w_i (ln(w_i / x0_i^2) - 1) on the positive orthant.
    /// The 1/4 scale and the init shift are forced by the metric identity
    /// hess R(w)^{-1} = dG dG^T = 4 diag(w) and grad R(x0^{.2}) = 0.
    pub fn entropy_from_init(x0: DVector<f64>) -> Result<Self> {
        if x0.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(
                "entropy needs strictly positive initialization".into(),
            ));
        }
        let d = x0.len();
        Ok(Self {
            kind: Kind::Entropy {
                x0_sq: x0.map(|v| v * v),
            },
            d,
            name: "entropy".into(),
            force_numeric: false,
        })
    }

    /// Dual potential of a commuting quadratic family at init x0:
    /// Q(mu) = 1/4 ||exp(sum mu_i A_i) x0||^2. Requires {A_i x0} linearly
    /// independent (the family is regular at x0), otherwise Q is not
    /// strictly convex and the construction is refused.
    pub fn quadratic_family_potential(
        fam: Arc<CommutingQuadraticFamily>,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let rep = check_regular(fam.as_ref(), &x0, 1e-8)?;
        if !rep.regular {
            return Err(Error::NotRegular {
                rank: rep.rank,
                d: rep.d,
                sigma_min: rep.sigma_min,
            });
        }
        let d = fam.dim_w();
        Ok(Self {
            kind: Kind::Quadratic { fam, x0 },
            d,
            name: "quadratic-family".into(),
            force_numeric: true,
        })
    }

    /// Route primal-side evaluations through Newton inversion of grad Q.
    pub fn with_numeric_primal(mut self) -> Self {
        self.force_numeric = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn provenance(&self) -> &'static str {
        if self.force_numeric {
            "numeric-conjugate"
        } else {
            "closed-form"
        }
    }

    /// grad Q(0): the image of the initialization, and the point where
    /// grad R vanishes.
    pub fn w_ref(&self) -> DVector<f64> {
        self.grad_q(&DVector::zeros(self.d))
            .expect("grad Q is total at 0")
    }

    /// True when w lies in the interior of dom R (where the closed forms
    /// are differentiable). The quadratic kind has no cheap test; Newton
    /// failure is the detector there.
    pub fn primal_interior_contains(&self, w: &DVector<f64>) -> bool {
        match &self.kind {
            Kind::Entropy { .. } => w.iter().all(|v| *v > 0.0),
            _ => w.iter().all(|v| v.is_finite()),
        }
    }

    // -- dual side (closed form for every kind) ---------------------------

    pub fn q_value(&self, th: &DVector<f64>) -> Result<f64> {
        self.check_dim(th)?;
        Ok(match &self.kind {
            Kind::Euclidean { w_ref } => 0.5 * th.norm_squared() + th.dot(w_ref),
            Kind::Hypentropy { u0, v0 } => (0..self.d)
                .map(|i| {
                    let z = 4.0 * th[i] + (u0[i] / v0[i]).ln();
                    0.5 * u0[i] * v0[i] * z.cosh()
                })
                .sum(),
            Kind::Entropy { x0_sq } => (0..self.d)
                .map(|i| 0.25 * x0_sq[i] * (4.0 * th[i]).exp())
                .sum(),
            Kind::Quadratic { fam, x0 } => {
                let psi = fam.exp_apply(th, 1.0, x0)?;
                0.25 * psi.norm_squared()
            }
        })
    }

    pub fn grad_q(&self, th: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(th)?;
        Ok(match &self.kind {
            Kind::Euclidean { w_ref } => th + w_ref,
            Kind::Hypentropy { u0, v0 } => DVector::from_fn(self.d, |i, _| {
                let z = 4.0 * th[i] + (u0[i] / v0[i]).ln();
                2.0 * u0[i] * v0[i] * z.sinh()
            }),
            Kind::Entropy { x0_sq } => {
                DVector::from_fn(self.d, |i, _| x0_sq[i] * (4.0 * th[i]).exp())
            }
            Kind::Quadratic { fam, x0 } => {
                // grad Q_j = 0.5 psi^T A_j psi = G_j(psi).
                let psi = fam.exp_apply(th, 1.0, x0)?;
                fam.eval(&psi)
            }
        })
    }

    pub fn hess_q(&self, th: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(th)?;
        Ok(match &self.kind {
            Kind::Euclidean { .. } => DMatrix::identity(self.d, self.d),
            Kind::Hypentropy { u0, v0 } => DMatrix::from_diagonal(&DVector::from_fn(
                self.d,
                |i, _| {
                    let z = 4.0 * th[i] + (u0[i] / v0[i]).ln();
                    8.0 * u0[i] * v0[i] * z.cosh()
                },
            )),
            Kind::Entropy { x0_sq } => DMatrix::from_diagonal(&DVector::from_fn(
                self.d,
                |i, _| 4.0 * x0_sq[i] * (4.0 * th[i]).exp(),
            )),
            Kind::Quadratic { fam, x0 } => {
                // hess Q_jk = (A_j psi)^T (A_k psi).
                let psi = fam.exp_apply(th, 1.0, x0)?;
                let cols: Vec<DVector<f64>> =
                    fam.matrices().iter().map(|a| a * &psi).collect();
                DMatrix::from_fn(self.d, self.d, |j, k| cols[j].dot(&cols[k]))
            }
        })
    }

    // -- primal side -------------------------------------------------------

    pub fn r_value(&self, w: &DVector<f64>) -> Result<f64> {
        self.check_dim(w)?;
        if self.force_numeric {
            let mu = self.grad_r_numeric(w, None)?;
            return Ok(mu.dot(w) - self.q_value(&mu)?);
        }
        match &self.kind {
            Kind::Euclidean { w_ref } => Ok(0.5 * (w - w_ref).norm_squared()),
            Kind::Hypentropy { u0, v0 } => Ok((0..self.d)
                .map(|i| {
                    let a = 2.0 * u0[i] * v0[i];
                    0.25
                        * (w[i] * (w[i] / a).asinh()
                            - (w[i] * w[i] + a * a).sqrt()
                            - w[i] * (u0[i] / v0[i]).ln())
                })
                .sum()),
            Kind::Entropy { x0_sq } => {
                let mut total = 0.0;
                for i in 0..self.d {
                    if w[i] < 0.0 {
                        return Err(self.domain_err(w));
                    }
                    // w ln w extends continuously by 0 at w = 0.
                    if w[i] > 0.0 {
                        total += 0.25 * w[i] * ((w[i] / x0_sq[i]).ln() - 1.0);
                    }
                }
                Ok(total)
            }
            Kind::Quadratic { .. } => unreachable!("quadratic kind is always numeric"),
        }
    }

    pub fn grad_r(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.grad_r_warm(w, None)
    }

    /// grad R with an optional warm start for the numeric path (ignored by
    /// closed forms).
    pub fn grad_r_warm(
        &self,
        w: &DVector<f64>,
        warm: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        self.check_dim(w)?;
        if self.force_numeric {
            return self.grad_r_numeric(w, warm);
        }
        match &self.kind {
            Kind::Euclidean { w_ref } => Ok(w - w_ref),
            Kind::Hypentropy { u0, v0 } => Ok(DVector::from_fn(self.d, |i, _| {
                0.25 * (w[i] / (2.0 * u0[i] * v0[i])).asinh() + 0.25 * (v0[i] / u0[i]).ln()
            })),
            Kind::Entropy { x0_sq } => {
                if w.iter().any(|v| !(*v > 0.0)) {
                    return Err(self.domain_err(w));
                }
                Ok(DVector::from_fn(self.d, |i, _| {
                    0.25 * (w[i] / x0_sq[i]).ln()
                }))
            }
            Kind::Quadratic { .. } => unreachable!("quadratic kind is always numeric"),
        }
    }

    pub fn hess_r(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(w)?;
        if self.force_numeric {
            let mu = self.grad_r_numeric(w, None)?;
            let hq = self.hess_q(&mu)?;
            return hq.clone().try_inverse().ok_or(Error::NonFinite {
                context: "singular dual Hessian in hess_r".into(),
            });
        }
        match &self.kind {
            Kind::Euclidean { .. } => Ok(DMatrix::identity(self.d, self.d)),
            Kind::Hypentropy { u0, v0 } => {
                Ok(DMatrix::from_diagonal(&DVector::from_fn(self.d, |i, _| {
                    let a = 2.0 * u0[i] * v0[i];
                    0.25 / (w[i] * w[i] + a * a).sqrt()
                })))
            }
            Kind::Entropy { .. } => {
                if w.iter().any(|v| !(*v > 0.0)) {
                    return Err(self.domain_err(w));
                }
                Ok(DMatrix::from_diagonal(&w.map(|v| 0.25 / v)))
            }
            Kind::Quadratic { .. } => unreachable!("quadratic kind is always numeric"),
        }
    }

    /// The inverse Hessian metric hess R(w)^{-1} together with grad R(w);
    /// this is the pair the Riemannian integrator consumes. For the numeric
    /// kind the inverse is hess Q at the conjugate point (no linear solve).
    pub fn riemannian_metric_inv(
        &self,
        w: &DVector<f64>,
        warm: Option<&DVector<f64>>,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if self.force_numeric {
            let mu = self.grad_r_numeric(w, warm)?;
            let hq = self.hess_q(&mu)?;
            return Ok((hq, mu));
        }
        let mu = self.grad_r_warm(w, warm)?;
        let inv = match &self.kind {
            Kind::Euclidean { .. } => DMatrix::identity(self.d, self.d),
            Kind::Hypentropy { u0, v0 } => {
                DMatrix::from_diagonal(&DVector::from_fn(self.d, |i, _| {
                    let a = 2.0 * u0[i] * v0[i];
                    4.0 * (w[i] * w[i] + a * a).sqrt()
                }))
            }
            Kind::Entropy { .. } => DMatrix::from_diagonal(&w.map(|v| 4.0 * v)),
            Kind::Quadratic { .. } => unreachable!(),
        };
        Ok((inv, mu))
    }

    /// Numeric conjugation: solve grad Q(mu) = w by damped Newton (tol 1e-10,
    /// at most 100 iterations, step halving on non-decrease). A failure means
    /// w is outside range(grad Q) = int(dom R).
    pub fn grad_r_numeric(
        &self,
        w: &DVector<f64>,
        warm: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        self.check_dim(w)?;
        let init = warm.cloned().unwrap_or_else(|| DVector::zeros(self.d));
        newton_invert(
            |mu| self.grad_q(mu),
            |mu| self.hess_q(mu),
            w,
            &init,
            NEWTON_TOL,
            NEWTON_MAX_ITERS,
        )
    }

    /// R obtained from the dual side: <mu*, w> - Q(mu*) with
    /// mu* = grad R(w) found by Newton. Independent of the closed-form path.
    pub fn r_value_numeric(&self, w: &DVector<f64>) -> Result<f64> {
        let mu = self.grad_r_numeric(w, None)?;
        Ok(mu.dot(w) - self.q_value(&mu)?)
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "{}: expected dimension {}, got {}",
                self.name,
                self.d,
                v.len()
            )));
        }
        Ok(())
    }

    fn domain_err(&self, w: &DVector<f64>) -> Error {
        Error::DomainViolation {
            name: self.name.clone(),
            detail: format!("point outside int(dom R): {:?}", w.as_slice()),
        }
    }
}

/// Damped Newton for grad(mu) = target. Non-finite trial residuals count as
/// non-decreasing and trigger halving. Also backs the KKT oracle, where the
/// map is lambda -> Z grad Q(offset + Z^T lambda).
pub(crate) fn newton_invert<FG, FH>(
    grad: FG,
    hess: FH,
    target: &DVector<f64>,
    init: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<DVector<f64>>
where
    FG: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    FH: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let mut mu = init.clone();
    let mut res = grad(&mu)? - target;
    let mut rn = res.norm();
    for it in 0..max_iters {
        if rn <= tol {
            return Ok(mu);
        }
        let h = hess(&mu)?;
        let step = h.lu().solve(&res).ok_or(Error::NewtonNonConvergence {
            iters: it,
            residual: rn,
        })?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &mu - &step * alpha;
            if let Ok(g) = grad(&cand) {
                let r2 = g - target;
                let r2n = r2.norm();
                if r2n.is_finite() && r2n < rn {
                    mu = cand;
                    res = r2;
                    rn = r2n;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonNonConvergence {
                iters: it,
                residual: rn,
            });
        }
    }
    if rn <= tol {
        Ok(mu)
    } else {
        Err(Error::NewtonNonConvergence {
            iters: max_iters,
            residual: rn,
        })
    }
}

/// Bregman divergence D_R(w, w_ref) = R(w) - R(w_ref) - <grad R(w_ref), w - w_ref>.
pub fn bregman(f: &LegendreFunction, w: &DVector<f64>, w_ref: &DVector<f64>) -> Result<f64> {
    if !f.primal_interior_contains(w_ref) {
        return Err(Error::DomainViolation {
            name: f.name().to_string(),
            detail: "Bregman reference point outside int(dom R)".into(),
        });
    }
    let g = f.grad_r(w_ref)?;
    Ok(f.r_value(w)? - f.r_value(w_ref)? - g.dot(&(w - w_ref)))
}

/// The potential induced by a built-in family at an initialization, per the
/// construction R = Q* with Q assembled from the composed flow map.
pub fn induced_potential(spec: &FamilySpec, x_init: &DVector<f64>) -> Result<LegendreFunction> {
    match spec {
        FamilySpec::Identity { .. } => {
            let g = builtin(spec)?;
            Ok(LegendreFunction::euclidean(g.eval(x_init)))
        }
        FamilySpec::Square { .. } => LegendreFunction::entropy_from_init(x_init.clone()),
        FamilySpec::UvSquare { d } => {
            if x_init.len() != 2 * d {
                return Err(Error::DimensionMismatch(format!(
                    "uv-square init needs length {}, got {}",
                    2 * d,
                    x_init.len()
                )));
            }
            let u0 = DVector::from_fn(*d, |i, _| x_init[i]);
            let v0 = DVector::from_fn(*d, |i, _| x_init[d + i]);
            LegendreFunction::hypentropy_from_init(u0, v0)
        }
        FamilySpec::DiagQuadratic { lambdas } => {
            // Equivalent commuting quadratic family A_i = 2 diag(lambda_i).
            let mats = lambdas
                .iter()
                .map(|l| DMatrix::from_diagonal(&(DVector::from_vec(l.clone()) * 2.0)))
                .collect();
            let fam = Arc::new(CommutingQuadraticFamily::new(mats)?);
            LegendreFunction::quadratic_family_potential(fam, x_init.clone())
        }
        FamilySpec::CommutingQuadratic { matrices } => {
            let mats = matrices
                .iter()
                .map(|rows| {
                    let n = rows.len();
                    DMatrix::from_fn(n, n, |i, j| rows[i][j])
                })
                .collect();
            let fam = Arc::new(CommutingQuadraticFamily::new(mats)?);
            LegendreFunction::quadratic_family_potential(fam, x_init.clone())
        }
        other => Err(Error::InvalidArgument(format!(
            "no induced potential for non-commuting family {other:?}"
        ))),
    }
}

/// Sampled evidence for the Legendre and Bregman properties of a pair (R, Q).
#[derive(Debug, Clone, Serialize)]
pub struct LegendreReport {
    /// Smallest eigenvalue of hess Q seen over the mu samples (> 0 certifies
    /// sampled strict convexity).
    pub min_dual_hessian_eig: f64,
    /// max ||grad R(grad Q(mu)) - mu|| over samples.
    pub max_primal_inversion_residual: f64,
    /// max ||grad Q(grad R(w)) - w|| over samples (w = grad Q(mu)).
    pub max_dual_inversion_residual: f64,
    /// max ||hess R(grad Q(mu)) hess Q(mu) - I|| over samples.
    pub max_hessian_reciprocity_residual: f64,
    /// Boundary probe result when dom R has a boundary: grad-norm growth
    /// along a geometric sequence approaching the boundary.
    pub boundary_grad_monotone: Option<bool>,
    pub boundary_final_grad_norm: Option<f64>,
    /// D_R(w, w) over samples (should be exactly 0) and the most negative
    /// divergence seen (should be >= -1e-10).
    pub max_self_divergence: f64,
    pub min_divergence: f64,
    /// D_R(w_k, w*) along a sequence w_k -> w*: last value (continuity
    /// evidence; should approach 0).
    pub divergence_continuity_gap: f64,
    /// Largest divergence on the sampled sublevel ring (level-set
    /// boundedness evidence: finite).
    pub max_level_divergence: f64,
    /// grad-R surjectivity cannot be sampled; recorded, never asserted.
    pub surjectivity: &'static str,
}

/// Deterministic low-discrepancy-ish sample points in [-scale, scale]^d.
fn mu_samples(d: usize, n: usize, scale: f64) -> Vec<DVector<f64>> {
    // Weyl sequence on irrational multiples: reproducible and spread out.
    let alphas = [
        0.618_033_988_749_895,
        0.414_213_562_373_095,
        0.259_921_049_894_873,
        0.321_997_085_163_245,
        0.146_446_609_406_726,
        0.552_786_404_500_042,
        0.381_966_011_250_105,
        0.732_050_807_568_877,
    ];
    (0..n)
        .map(|k| {
            DVector::from_fn(d, |i, _| {
                let frac = ((k + 1) as f64 * alphas[i % alphas.len()]).fract();
                scale * (2.0 * frac - 1.0)
            })
        })
        .collect()
}

/// Validate the Legendre-function properties on samples: strict convexity of
/// Q, conjugate inversion both ways, Hessian reciprocity, boundary growth of
/// ||grad R|| (when dom R has a boundary), and the sampled Bregman-function
/// conditions.
pub fn legendre_validate(f: &LegendreFunction, boundary_probes: usize) -> Result<LegendreReport> {
    let d = f.dim();
    let samples = mu_samples(d, 24, 1.0);
    let mut min_eig = f64::INFINITY;
    let mut max_inv = 0.0f64;
    let mut max_dual_inv = 0.0f64;
    let mut max_recip = 0.0f64;
    let mut max_self_div = 0.0f64;
    let mut min_div = f64::INFINITY;
    let mut max_level_div = 0.0f64;
    let eye = DMatrix::<f64>::identity(d, d);
    let w_ref = f.w_ref();
    for mu in &samples {
        let hq = f.hess_q(mu)?;
        let eigs = hq.clone().symmetric_eigen().eigenvalues;
        min_eig = min_eig.min(eigs.iter().cloned().fold(f64::INFINITY, f64::min));
        let w = f.grad_q(mu)?;
        let back = f.grad_r(&w)?;
        max_inv = max_inv.max((&back - mu).norm());
        let w_back = f.grad_q(&back)?;
        max_dual_inv = max_dual_inv.max((&w_back - &w).norm());
        let hr = f.hess_r(&w)?;
        max_recip = max_recip.max((&hr * &hq - &eye).norm());
        max_self_div = max_self_div.max(bregman(f, &w, &w)?.abs());
        let div = bregman(f, &w, &w_ref)?;
        min_div = min_div.min(div);
        max_level_div = max_level_div.max(div);
    }

    // Boundary growth: only the entropy kind has a primal boundary among the
    // built-ins; probe along w = 2^{-k} e_1 + 1 off-axis.
    let (boundary_grad_monotone, boundary_final_grad_norm) = match &f.kind {
        Kind::Entropy { .. } => {
            let mut monotone = true;
            let mut prev = -f64::INFINITY;
            let mut last = 0.0;
            for k in 0..boundary_probes.max(1) {
                let mut w = DVector::from_element(d, 1.0);
                w[0] = 0.5f64.powi(k as i32);
                let n = f.grad_r(&w)?.norm();
                if n <= prev {
                    monotone = false;
                }
                prev = n;
                last = n;
            }
            (Some(monotone), Some(last))
        }
        _ => (None, None),
    };

    // Divergence continuity: w_k -> w* along a straight line.
    let target = f.grad_q(&mu_samples(d, 1, 0.3)[0])?;
    let start = f.grad_q(&mu_samples(d, 2, 0.7)[1])?;
    let mut gap = f64::INFINITY;
    for k in 1..=12 {
        let t = 1.0 - 0.5f64.powi(k);
        let w = &start + (&target - &start) * t;
        if f.primal_interior_contains(&w) {
            gap = bregman(f, &w, &target)?;
        }
    }

    Ok(LegendreReport {
        min_dual_hessian_eig: min_eig,
        max_primal_inversion_residual: max_inv,
        max_dual_inversion_residual: max_dual_inv,
        max_hessian_reciprocity_residual: max_recip,
        boundary_grad_monotone,
        boundary_final_grad_norm,
        max_self_divergence: max_self_div,
        min_divergence: min_div,
        divergence_continuity_gap: gap,
        max_level_divergence: max_level_div,
        surjectivity: "not checked",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hyp_half() -> LegendreFunction {
        LegendreFunction::hypentropy_from_init(
            DVector::from_element(1, 0.5),
            DVector::from_element(1, 0.5),
        )
        .unwrap()
    }

    #[test]
    fn hypentropy_gradients_invert_each_other() {
        let f = LegendreFunction::hypentropy_from_init(
            DVector::from_vec(vec![0.5, 1.2, 0.3]),
            DVector::from_vec(vec![0.7, 0.4, 0.9]),
        )
        .unwrap();
        for k in 0..10 {
            let mu = DVector::from_fn(3, |i, _| 0.3 * ((k * 3 + i) as f64 * 0.37).sin());
            let w = f.grad_q(&mu).unwrap();
            let back = f.grad_r(&w).unwrap();
            assert!((back - &mu).norm() < 1e-10);
        }
    }

    #[test]
    fn hypentropy_reference_point_zeroes_the_gradient() {
        let u0 = DVector::from_vec(vec![0.5, 1.2]);
        let v0 = DVector::from_vec(vec![0.7, 0.4]);
        let f = LegendreFunction::hypentropy_from_init(u0.clone(), v0.clone()).unwrap();
        let w0 = DVector::from_fn(2, |i, _| u0[i] * u0[i] - v0[i] * v0[i]);
        assert!((f.w_ref() - &w0).norm() < 1e-12);
        assert!(f.grad_r(&w0).unwrap().norm() < 1e-12);
    }

    #[test]
    fn hypentropy_fenchel_identity_is_exact() {
        let f = LegendreFunction::hypentropy_from_init(
            DVector::from_vec(vec![0.5, 0.9]),
            DVector::from_vec(vec![1.1, 0.6]),
        )
        .unwrap();
        for k in 0..5 {
            let mu = DVector::from_fn(2, |i, _| 0.4 * ((k * 2 + i) as f64 * 0.61).cos());
            let w = f.grad_q(&mu).unwrap();
            let lhs = f.r_value(&w).unwrap() + f.q_value(&mu).unwrap();
            assert_relative_eq!(lhs, mu.dot(&w), epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn hypentropy_closed_gradient_matches_newton() {
        let f = LegendreFunction::hypentropy_from_init(
            DVector::from_vec(vec![0.5, 1.2, 0.3]),
            DVector::from_vec(vec![0.7, 0.4, 0.9]),
        )
        .unwrap();
        for k in 0..10 {
            let w = DVector::from_fn(3, |i, _| 2.0 * ((k * 3 + i) as f64 * 0.53).sin());
            let closed = f.grad_r(&w).unwrap();
            let numeric = f.grad_r_numeric(&w, None).unwrap();
            assert!((closed - numeric).norm() < 1e-8);
        }
    }

    #[test]
    fn entropy_metric_and_reference() {
        let x0 = DVector::from_vec(vec![0.5, 2.0]);
        let f = LegendreFunction::entropy_from_init(x0.clone()).unwrap();
        let w0 = x0.map(|v| v * v);
        assert!(f.grad_r(&w0).unwrap().norm() < 1e-12);
        let w = DVector::from_vec(vec![0.8, 3.0]);
        let (inv, _) = f.riemannian_metric_inv(&w, None).unwrap();
        let expect = DMatrix::from_diagonal(&(w.clone() * 4.0));
        assert!((inv - expect).norm() < 1e-12);
        let hr = f.hess_r(&w).unwrap();
        let prod = hr * DMatrix::from_diagonal(&(w * 4.0));
        assert!((prod - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn entropy_rejects_points_outside_the_orthant() {
        let f = LegendreFunction::entropy_from_init(DVector::from_element(2, 1.0)).unwrap();
        let w = DVector::from_vec(vec![1.0, -0.5]);
        assert!(f.grad_r(&w).is_err());
        match f.grad_r_numeric(&w, None) {
            Err(Error::NewtonNonConvergence { .. }) => {}
            other => panic!("expected Newton failure, got {other:?}"),
        }
    }

    #[test]
    fn euclidean_is_self_conjugate() {
        let f = LegendreFunction::euclidean(DVector::zeros(2));
        let w = DVector::from_vec(vec![0.3, -1.7]);
        assert!((f.grad_r(&w).unwrap() - &w).norm() < 1e-14);
        let numeric = f.grad_r_numeric(&w, None).unwrap();
        assert!((numeric - &w).norm() < 1e-10);
        assert_relative_eq!(f.r_value(&w).unwrap(), 0.5 * w.norm_squared());
    }

    #[test]
    fn quadratic_family_scalar_matches_entropy() {
        // d = 1, A = 2 on R^1, x0 = 1: Q(mu) = e^{4 mu} / 4, the same dual
        // as the entropy family at x0 = 1.
        let fam = Arc::new(
            CommutingQuadraticFamily::new(vec![DMatrix::from_element(1, 1, 2.0)]).unwrap(),
        );
        let f =
            LegendreFunction::quadratic_family_potential(fam, DVector::from_element(1, 1.0))
                .unwrap();
        let ent = LegendreFunction::entropy_from_init(DVector::from_element(1, 1.0)).unwrap();
        let mu = DVector::from_element(1, 0.3);
        assert_relative_eq!(
            f.q_value(&mu).unwrap(),
            ent.q_value(&mu).unwrap(),
            max_relative = 1e-12
        );
        let w = DVector::from_element(1, 1.7);
        let a = f.grad_r(&w).unwrap();
        let b = ent.grad_r(&w).unwrap();
        assert!((a - b).norm() < 1e-9);
    }

    #[test]
    fn quadratic_family_rejects_dependent_directions() {
        let fam = Arc::new(
            CommutingQuadraticFamily::new(vec![
                DMatrix::identity(2, 2),
                DMatrix::identity(2, 2) * 2.0,
            ])
            .unwrap(),
        );
        let got =
            LegendreFunction::quadratic_family_potential(fam, DVector::from_element(2, 1.0));
        assert!(matches!(got, Err(Error::NotRegular { .. })));
    }

    #[test]
    fn bregman_matches_reference_value() {
        // Frozen by an independent evaluation of the closed form.
        let f = hyp_half();
        let d = bregman(
            &f,
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, 0.0),
        )
        .unwrap();
        assert_relative_eq!(d, 2.0640037160722885e-1, epsilon = 1e-12);
        let same = bregman(
            &f,
            &DVector::from_element(1, 0.7),
            &DVector::from_element(1, 0.7),
        )
        .unwrap();
        assert_eq!(same, 0.0);
    }

    #[test]
    fn validator_passes_hypentropy_and_flags_entropy_boundary() {
        let f = LegendreFunction::hypentropy_from_init(
            DVector::from_vec(vec![0.5, 0.8]),
            DVector::from_vec(vec![0.6, 0.4]),
        )
        .unwrap();
        let rep = legendre_validate(&f, 20).unwrap();
        assert!(rep.min_dual_hessian_eig > 0.0);
        assert!(rep.max_primal_inversion_residual < 1e-8);
        assert!(rep.max_dual_inversion_residual < 1e-8);
        assert!(rep.max_hessian_reciprocity_residual < 1e-6);
        assert!(rep.min_divergence >= -1e-10);
        assert!(rep.boundary_grad_monotone.is_none());

        let ent = LegendreFunction::entropy_from_init(DVector::from_vec(vec![1.0, 0.5])).unwrap();
        let rep = legendre_validate(&ent, 20).unwrap();
        assert_eq!(rep.boundary_grad_monotone, Some(true));
        assert!(rep.boundary_final_grad_norm.unwrap() > 1.0);
    }
}
