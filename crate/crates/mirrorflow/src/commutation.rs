//! Commutation diagnostics for a parametrization's coordinate gradient
//! fields: pairwise Lie-bracket checks, flow-order commutation, the
//! nested-bracket kernel condition, the commutator-loop experiment, and a
//! joint-diagonalization separability probe.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::sync::Arc;

use crate::flows::{self, LinearLoss, TimeDependentLoss};
use crate::geometry;
use crate::ode::IntegratorConfig;
use crate::param::Parametrization;
use crate::{Error, Result};

/// Max bracket norm over samples for one index pair.
#[derive(Debug, Clone, Serialize)]
pub struct PairStat {
    pub i: usize,
    pub j: usize,
    pub max_norm: f64,
}

/// Worst pair at one sample point.
#[derive(Debug, Clone, Serialize)]
pub struct WorstAtSample {
    pub sample: usize,
    pub pair: (usize, usize),
    pub norm: f64,
}

/// Nested-bracket statistics at one depth.
#[derive(Debug, Clone, Serialize)]
pub struct DepthStat {
    pub depth: usize,
    pub max_bracket_norm: f64,
    /// Largest norm of a nested bracket's projection onto span{grad G_i(x)};
    /// nonzero projection violates the kernel condition required for
    /// mirror-flow equivalence.
    pub max_projection_residual: f64,
    /// Index sequence attaining the max projection residual.
    pub argmax_seq: Vec<usize>,
}

/// Outcome of bracket-based commutation diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct BracketReport {
    pub commuting: bool,
    pub tol: f64,
    pub samples: usize,
    pub max_bracket_norm: f64,
    pub pairwise: Vec<PairStat>,
    pub per_sample_worst: Vec<WorstAtSample>,
    /// Present for necessary-condition checks: whether the Jacobian at the
    /// probe point has full row rank. Projection residuals are only a valid
    /// obstruction where this holds.
    pub regular: Option<bool>,
    pub sigma_min: Option<f64>,
    /// Projection residuals by nesting depth (necessary-condition checks).
    pub nested: Vec<DepthStat>,
}

/// Evaluate all d(d-1)/2 pairwise brackets at every sample; the verdict is
/// "commuting" only when every bracket norm stays at or below `tol`.
pub fn commuting_check(
    g: &dyn Parametrization,
    samples: &[DVector<f64>],
    tol: f64,
) -> Result<BracketReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "commuting_check needs at least one sample".into(),
        ));
    }
    let d = g.dim_w();
    let mut pairwise: Vec<PairStat> = (0..d)
        .flat_map(|i| ((i + 1)..d).map(move |j| PairStat { i, j, max_norm: 0.0 }))
        .collect();
    let mut per_sample_worst = Vec::with_capacity(samples.len());
    let mut max_norm = 0.0f64;
    for (si, x) in samples.iter().enumerate() {
        let mut worst = WorstAtSample {
            sample: si,
            pair: (0, 0),
            norm: 0.0,
        };
        let mut pk = 0;
        for i in 0..d {
            for j in (i + 1)..d {
                let norm = geometry::lie_bracket(g, i, j, x)?.norm();
                if norm > pairwise[pk].max_norm {
                    pairwise[pk].max_norm = norm;
                }
                if norm > worst.norm {
                    worst = WorstAtSample {
                        sample: si,
                        pair: (i, j),
                        norm,
                    };
                }
                max_norm = max_norm.max(norm);
                pk += 1;
            }
        }
        per_sample_worst.push(worst);
    }
    Ok(BracketReport {
        commuting: max_norm <= tol,
        tol,
        samples: samples.len(),
        max_bracket_norm: max_norm,
        pairwise,
        per_sample_worst,
        regular: None,
        sigma_min: None,
        nested: Vec::new(),
    })
}

/// Compare the two orders of composing the descent flows of G_i and G_j:
/// returns the norm of the endpoint discrepancy. Zero (up to integrator
/// tolerance) iff the fields commute along the swept region.
pub fn flow_commutation_test(
    g: &dyn Parametrization,
    x: &DVector<f64>,
    i: usize,
    j: usize,
    s: f64,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let ij = {
        let mid = geometry::flow_along_component(g, j, -1.0, x, t, cfg)?;
        geometry::flow_along_component(g, i, -1.0, &mid, s, cfg)?
    };
    let ji = {
        let mid = geometry::flow_along_component(g, i, -1.0, x, s, cfg)?;
        geometry::flow_along_component(g, j, -1.0, &mid, t, cfg)?
    };
    Ok((ij - ji).norm())
}

/// The nested bracket field value Lie_G(seq) at x, built left-to-right:
/// B_2 = [grad G_{s0}, grad G_{s1}], B_k = [B_{k-1}, grad G_{s_{k-1}}].
///
/// Depth 2 is semi-analytic (Hessian-vector products of the family); deeper
/// levels difference the lower-level bracket field directionally.
pub fn nested_bracket(g: &dyn Parametrization, seq: &[usize], x: &DVector<f64>) -> DVector<f64> {
    assert!(seq.len() >= 2, "nested bracket needs at least two indices");
    bracket_of_field(g, &seq[..seq.len() - 1], seq[seq.len() - 1], x)
}

/// [B, grad G_j](x) where B is the nested bracket field over `prefix`.
fn bracket_of_field(
    g: &dyn Parametrization,
    prefix: &[usize],
    j: usize,
    x: &DVector<f64>,
) -> DVector<f64> {
    let b_field = |p: &DVector<f64>| nested_field_value(g, prefix, p);
    let b_here = b_field(x);
    let gj = geometry::grad_component_raw(g, j, x);
    // [B, gradG_j] = d(gradG_j)[B] - dB[gradG_j].
    geometry::hessian_vec_raw(g, j, x, &b_here) - geometry::fd_directional(b_field, x, &gj)
}

fn nested_field_value(g: &dyn Parametrization, seq: &[usize], x: &DVector<f64>) -> DVector<f64> {
    if seq.len() == 1 {
        return geometry::grad_component_raw(g, seq[0], x);
    }
    if seq.len() == 2 {
        let gi = geometry::grad_component_raw(g, seq[0], x);
        let gj = geometry::grad_component_raw(g, seq[1], x);
        return geometry::hessian_vec_raw(g, seq[1], x, &gi)
            - geometry::hessian_vec_raw(g, seq[0], x, &gj);
    }
    bracket_of_field(g, &seq[..seq.len() - 1], seq[seq.len() - 1], x)
}

/// Check the kernel condition for nested brackets up to `max_depth` (2 or 3)
/// at one point: every bracket in Lie^{>=2} must be orthogonal to
/// span{grad G_i(x)}. Reports the worst projection residual per depth; a
/// rank-deficient Jacobian is reported in the `regular`/`sigma_min` fields
/// (the premise of the condition fails there), never silently passed.
pub fn necessary_condition_check(
    g: &dyn Parametrization,
    x: &DVector<f64>,
    max_depth: usize,
) -> Result<BracketReport> {
    if !(2..=3).contains(&max_depth) {
        return Err(Error::InvalidArgument(
            "necessary_condition_check supports depth 2 or 3".into(),
        ));
    }
    let d = g.dim_w();
    let jac = geometry::jacobian(g, x)?;
    let svd = jac.clone().svd(false, true);
    let sv = &svd.singular_values;
    let rank_tol = 1e-10 * sv.iter().cloned().fold(0.0f64, f64::max).max(1.0);
    let rank = sv.iter().filter(|s| **s > rank_tol).count();
    let sigma_min = if sv.len() < d {
        0.0
    } else {
        sv.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    // Orthonormal basis of span{grad G_i(x)} = row space of the Jacobian:
    // the first `rank` rows of V^T from the SVD.
    let vt = svd.v_t.as_ref().expect("svd requested v_t");
    let project = |b: &DVector<f64>| -> f64 {
        let mut s = 0.0;
        for r in 0..rank {
            let c: f64 = vt.row(r).transpose().dot(b);
            s += c * c;
        }
        s.sqrt()
    };

    let mut nested = Vec::new();
    let mut max_norm = 0.0f64;
    let mut pairwise = Vec::new();
    for depth in 2..=max_depth {
        let mut stat = DepthStat {
            depth,
            max_bracket_norm: 0.0,
            max_projection_residual: 0.0,
            argmax_seq: Vec::new(),
        };
        for seq in sequences(d, depth) {
            let b = nested_bracket(g, &seq, x);
            let norm = b.norm();
            let resid = project(&b);
            if depth == 2 {
                pairwise.push(PairStat {
                    i: seq[0],
                    j: seq[1],
                    max_norm: norm,
                });
                max_norm = max_norm.max(norm);
            }
            stat.max_bracket_norm = stat.max_bracket_norm.max(norm);
            if resid > stat.max_projection_residual {
                stat.max_projection_residual = resid;
                stat.argmax_seq = seq.clone();
            }
        }
        nested.push(stat);
    }
    let worst_proj = nested
        .iter()
        .map(|s| s.max_projection_residual)
        .fold(0.0f64, f64::max);
    Ok(BracketReport {
        commuting: max_norm <= 1e-8,
        tol: 1e-8,
        samples: 1,
        max_bracket_norm: max_norm,
        pairwise,
        per_sample_worst: vec![WorstAtSample {
            sample: 0,
            pair: (0, 0),
            norm: worst_proj,
        }],
        regular: Some(sigma_min > 1e-8),
        sigma_min: Some(sigma_min),
        nested,
    })
}

/// Index sequences for nested brackets: innermost pair deduplicated by
/// antisymmetry (i < j), outer indices unrestricted.
fn sequences(d: usize, depth: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            if depth == 2 {
                out.push(vec![i, j]);
            } else {
                for k in 0..d {
                    out.push(vec![i, j, k]);
                }
            }
        }
    }
    out
}

/// Commutator-loop outcome over a delta sweep.
#[derive(Debug, Clone, Serialize)]
pub struct LoopResult {
    pub j_seq: Vec<usize>,
    pub deltas: Vec<f64>,
    /// Per-delta w-space displacement of the loop endpoint.
    pub displacements: Vec<f64>,
    /// Least-squares slope of log displacement vs log delta.
    pub slope: f64,
    /// True when the largest-delta point was dropped from the fit (its
    /// residual exceeded 3 sigma; the o(delta) term contaminates large
    /// delta).
    pub dropped_largest: bool,
    /// Unit w-space displacement direction at the smallest delta.
    pub leading_direction: Vec<f64>,
    /// Cosine between `leading_direction` and the pushed-forward nested
    /// bracket dG(x) Lie_G(j_seq)(x).
    pub pushforward_cosine: f64,
    /// Total schedule duration at each delta.
    pub durations: Vec<f64>,
}

/// Total duration of the depth-k loop schedule:
/// iota_1(d) = d, iota_i(d) = 2 sqrt(d) + 2 iota_{i-1}(sqrt(d)).
pub fn iota(k: usize, delta: f64) -> f64 {
    if k <= 1 {
        delta
    } else {
        2.0 * delta.sqrt() + 2.0 * iota(k - 1, delta.sqrt())
    }
}

#[derive(Clone, Copy)]
struct Seg {
    j: usize,
    /// Sign of the flow field: the segment's loss is -(sign) * <e_j, w>, so
    /// the induced x-space field is +sign * grad G_j.
    sign: f64,
    dur: f64,
}

/// Segments of the depth-i loop schedule at scale delta. Base case is a
/// single +grad G_{j1} leg; each level wraps the previous one as
/// prev || +leg_i || reverse-negate(prev) || -leg_i at sqrt(delta).
fn loop_segments(j_seq: &[usize], level: usize, delta: f64) -> Vec<Seg> {
    if level == 1 {
        return vec![Seg {
            j: j_seq[0],
            sign: 1.0,
            dur: delta,
        }];
    }
    let s = delta.sqrt();
    let prev = loop_segments(j_seq, level - 1, s);
    let mut out = prev.clone();
    out.push(Seg {
        j: j_seq[level - 1],
        sign: 1.0,
        dur: s,
    });
    out.extend(prev.iter().rev().map(|g| Seg {
        j: g.j,
        sign: -g.sign,
        dur: g.dur,
    }));
    out.push(Seg {
        j: j_seq[level - 1],
        sign: -1.0,
        dur: s,
    });
    out
}

/// Run the commutator-loop experiment: for each delta, build the nested
/// piecewise-constant loss schedule whose legs flow along +/- grad G_j,
/// run gradient flow for the full schedule duration, and record the w-space
/// displacement. For commuting families the displacement vanishes; otherwise
/// it is delta times the pushed-forward nested bracket at leading order.
pub fn commutator_loop(
    g: &dyn Parametrization,
    x: &DVector<f64>,
    j_seq: &[usize],
    delta_sweep: &[f64],
    cfg: &IntegratorConfig,
) -> Result<LoopResult> {
    let k = j_seq.len();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "loop needs at least two bracket indices".into(),
        ));
    }
    if j_seq.iter().any(|&j| j >= g.dim_w()) {
        return Err(Error::InvalidArgument("bracket index out of range".into()));
    }
    let mut deltas: Vec<f64> = delta_sweep.to_vec();
    deltas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let w0 = g.eval(x);
    let mut displacements = Vec::with_capacity(deltas.len());
    let mut durations = Vec::with_capacity(deltas.len());
    let mut leading_direction = DVector::zeros(g.dim_w());

    for (di, &delta) in deltas.iter().enumerate() {
        let segs = loop_segments(j_seq, k, delta);
        let total: f64 = segs.iter().map(|s| s.dur).sum();
        // Piecewise-constant loss: segment with field sign*grad G_j has loss
        // -(sign) <e_j, w>.
        let mut starts = Vec::with_capacity(segs.len());
        let mut losses: Vec<Arc<dyn flows::LossFn>> = Vec::with_capacity(segs.len());
        let mut t_acc = 0.0;
        for seg in &segs {
            starts.push(t_acc);
            let mut dir = DVector::zeros(g.dim_w());
            dir[seg.j] = -seg.sign;
            losses.push(Arc::new(LinearLoss::new(dir)));
            t_acc += seg.dur;
        }
        let loss = TimeDependentLoss::piecewise(starts, losses)?;
        let traj = flows::gradient_flow(g, &loss, x, total, cfg)?;
        let w_end = traj.w.last().expect("trajectory has samples");
        let disp = w_end - &w0;
        displacements.push(disp.norm());
        durations.push(total);
        if di == deltas.len() - 1 {
            leading_direction = disp;
        }
    }

    let (slope, dropped_largest) = fit_loglog_slope(&deltas, &displacements)?;

    let bracket = nested_bracket(g, j_seq, x);
    let jac = geometry::jacobian(g, x)?;
    let push = &jac * &bracket;
    let cos = {
        let a = leading_direction.norm();
        let b = push.norm();
        if a == 0.0 || b == 0.0 {
            0.0
        } else {
            leading_direction.dot(&push) / (a * b)
        }
    };
    let lead_unit = if leading_direction.norm() > 0.0 {
        (&leading_direction / leading_direction.norm())
            .iter()
            .cloned()
            .collect()
    } else {
        vec![0.0; g.dim_w()]
    };

    Ok(LoopResult {
        j_seq: j_seq.to_vec(),
        deltas,
        displacements,
        slope,
        dropped_largest,
        leading_direction: lead_unit,
        pushforward_cosine: cos,
        durations,
    })
}

/// Least-squares slope of ln(disp) vs ln(delta); the largest-delta point is
/// dropped and the fit redone when its residual exceeds 3 sigma of the fit.
fn fit_loglog_slope(deltas: &[f64], disps: &[f64]) -> Result<(f64, bool)> {
    if deltas.len() < 3 {
        return Err(Error::InvalidArgument(
            "slope fit needs at least 3 sweep points".into(),
        ));
    }
    let pts: Vec<(f64, f64)> = deltas
        .iter()
        .zip(disps.iter())
        .map(|(d, y)| (d.ln(), y.max(1e-300).ln()))
        .collect();
    let (slope, resid) = least_squares(&pts);
    // deltas are sorted descending; index 0 is the largest.
    let n = pts.len() as f64;
    let sigma = (resid.iter().map(|r| r * r).sum::<f64>() / (n - 2.0)).sqrt();
    if resid[0].abs() > 3.0 * sigma && pts.len() > 3 {
        let (slope2, _) = least_squares(&pts[1..]);
        return Ok((slope2, true));
    }
    Ok((slope, false))
}

fn least_squares(pts: &[(f64, f64)]) -> (f64, Vec<f64>) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let b = my - slope * mx;
    let resid = pts.iter().map(|p| p.1 - (slope * p.0 + b)).collect();
    (slope, resid)
}

/// Separability probe result: how close the sampled pushforward metrics
/// dG dG^T come to being simultaneously diagonalizable.
#[derive(Debug, Clone, Serialize)]
pub struct SeparabilityReport {
    /// Max over samples of off-diagonal Frobenius mass relative to the
    /// matrix norm, after the joint rotation.
    pub residual: f64,
    /// The orthogonal basis (columns) that approximately diagonalizes all
    /// sampled metrics.
    pub basis: Vec<Vec<f64>>,
    pub samples: usize,
    pub sweeps_used: usize,
}

/// Jointly diagonalize the metrics dG(x_k) dG(x_k)^T over the samples with
/// Jacobi-style rotations. A small residual is evidence that G becomes
/// separable in the recovered basis; it is a probe, not a decision
/// procedure.
pub fn separability_probe(
    g: &dyn Parametrization,
    samples: &[DVector<f64>],
    sweeps: usize,
) -> Result<SeparabilityReport> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(
            "separability probe needs at least 2 samples".into(),
        ));
    }
    let mats = samples
        .iter()
        .map(|x| {
            let j = geometry::jacobian(g, x)?;
            Ok(&j * j.transpose())
        })
        .collect::<Result<Vec<_>>>()?;
    let (basis, residual, used) = joint_diagonalize(&mats, sweeps);
    Ok(SeparabilityReport {
        residual,
        basis: basis
            .column_iter()
            .map(|c| c.iter().cloned().collect())
            .collect(),
        samples: samples.len(),
        sweeps_used: used,
    })
}

/// Joint approximate diagonalization of symmetric matrices by Jacobi
/// rotations; returns (V, residual, sweeps_used) with V^T M V approximately
/// diagonal for every input M. The per-pair angle maximizes the summed
/// diagonal mass (leading eigenvector of the 2x2 accumulation of
/// (m_pp - m_qq, 2 m_pq) outer products).
pub fn joint_diagonalize(mats: &[DMatrix<f64>], sweeps: usize) -> (DMatrix<f64>, f64, usize) {
    let n = mats[0].nrows();
    let mut work: Vec<DMatrix<f64>> = mats.to_vec();
    let mut rot = DMatrix::<f64>::identity(n, n);
    let mut used = 0;
    for _ in 0..sweeps.max(1) {
        used += 1;
        let mut max_s = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let (c, s) = joint_rotation(&work, p, q);
                if s.abs() < 1e-15 {
                    continue;
                }
                max_s = max_s.max(s.abs());
                let mut r = DMatrix::<f64>::identity(n, n);
                r[(p, p)] = c;
                r[(p, q)] = s;
                r[(q, p)] = -s;
                r[(q, q)] = c;
                for m in &mut work {
                    *m = &r * (m as &DMatrix<f64>) * r.transpose();
                }
                rot = &r * rot;
            }
        }
        if max_s < 1e-14 {
            break;
        }
    }
    let mut residual = 0.0f64;
    for m in &work {
        let total = m.norm();
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m[(i, j)] * m[(i, j)];
                }
            }
        }
        residual = residual.max(off.sqrt() / total.max(1e-300));
    }
    // rot * M * rot^T is diagonal, so V = rot^T has V^T M V diagonal.
    (rot.transpose(), residual, used)
}

/// Rotation (c, s) for the (p, q) plane maximizing the joint diagonal mass;
/// reduces to the classical single-matrix Jacobi angle when one matrix is
/// given.
fn joint_rotation(mats: &[DMatrix<f64>], p: usize, q: usize) -> (f64, f64) {
    let (mut gxx, mut gxy, mut gyy) = (0.0f64, 0.0f64, 0.0f64);
    for m in mats {
        let hx = m[(p, p)] - m[(q, q)];
        let hy = 2.0 * m[(p, q)];
        gxx += hx * hx;
        gxy += hx * hy;
        gyy += hy * hy;
    }
    // Leading eigenvector (x, y) of [[gxx, gxy], [gxy, gyy]], x >= 0.
    let disc = (0.5 * (gxx - gyy)).hypot(gxy);
    let l1 = 0.5 * (gxx + gyy) + disc;
    let (ex, ey) = {
        let v1 = (gxy, l1 - gxx);
        let v2 = (l1 - gyy, gxy);
        if v1.0.hypot(v1.1) >= v2.0.hypot(v2.1) {
            v1
        } else {
            v2
        }
    };
    let (ex, ey) = if ex < 0.0 { (-ex, -ey) } else { (ex, ey) };
    let r = ex.hypot(ey);
    if r < 1e-300 {
        return (1.0, 0.0);
    }
    let c = ((ex + r) / (2.0 * r)).sqrt();
    let denom = 2.0 * r * (ex + r);
    if denom <= 0.0 {
        return (1.0, 0.0);
    }
    (c, ey / denom.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::{CommutingQuadraticFamily, MatrixFactorizationSym, UvSquare};

    fn uut21() -> MatrixFactorizationSym {
        MatrixFactorizationSym::new(2, 1).unwrap()
    }

    #[test]
    fn uv_square_is_commuting() {
        let g = UvSquare::new(2);
        let samples: Vec<DVector<f64>> = (0..20)
            .map(|k| DVector::from_fn(4, |i, _| 0.2 + 0.13 * ((k * 4 + i) % 7) as f64))
            .collect();
        let rep = commuting_check(&g, &samples, 1e-8).unwrap();
        assert!(rep.commuting, "max bracket {}", rep.max_bracket_norm);
    }

    #[test]
    fn uut_is_not_commuting() {
        let g = uut21();
        let samples = vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.7, -0.4]),
            DVector::from_vec(vec![1.0, 1.0]),
        ];
        let rep = commuting_check(&g, &samples, 1e-8).unwrap();
        assert!(!rep.commuting);
        assert!(rep.max_bracket_norm > 0.1);
    }

    #[test]
    fn depth2_bracket_matches_closed_form_on_uut() {
        // [grad G_11, grad G_12](U) = (-2 u2, 2 u1).
        let g = uut21();
        for u in [
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![-0.3, 0.8]),
        ] {
            let b = nested_bracket(&g, &[0, 1], &u);
            let exact = DVector::from_vec(vec![-2.0 * u[1], 2.0 * u[0]]);
            assert!((b - exact).norm() < 1e-9);
        }
    }

    #[test]
    fn depth3_bracket_matches_closed_form_on_uut() {
        // [[grad G_11, grad G_12], grad G_11] = -(4 u2, 4 u1).
        let g = uut21();
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let b = nested_bracket(&g, &[0, 1, 0], &u);
        let exact = DVector::from_vec(vec![0.0, -4.0]);
        assert!((b - exact).norm() < 1e-6);
    }

    #[test]
    fn necessary_condition_flags_uut_at_unit_point() {
        let g = uut21();
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let rep = necessary_condition_check(&g, &u, 3).unwrap();
        assert_eq!(rep.regular, Some(false));
        let d2 = &rep.nested[0];
        let d3 = &rep.nested[1];
        assert!((d2.max_projection_residual - 2.0).abs() < 1e-8);
        assert!((d3.max_projection_residual - 4.0).abs() < 1e-5);
    }

    #[test]
    fn necessary_condition_passes_commuting_family() {
        let fam = CommutingQuadraticFamily::new(vec![
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 0.5])),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 0.9, -0.4])),
        ])
        .unwrap();
        let x = DVector::from_vec(vec![0.8, -0.5, 1.2]);
        let rep = necessary_condition_check(&fam, &x, 3).unwrap();
        for stat in &rep.nested {
            assert!(
                stat.max_projection_residual < 1e-5,
                "depth {} residual {}",
                stat.depth,
                stat.max_projection_residual
            );
        }
    }

    #[test]
    fn iota_matches_schedule_duration() {
        for k in 2..=3 {
            for delta in [1e-1, 1e-2] {
                let segs = loop_segments(&vec![0; k], k, delta);
                let total: f64 = segs.iter().map(|s| s.dur).sum();
                assert!((total - iota(k, delta)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loop_schedule_unfolds_to_four_legs_at_depth_two() {
        let segs = loop_segments(&[0, 1], 2, 0.04);
        let signs: Vec<(usize, f64)> = segs.iter().map(|s| (s.j, s.sign)).collect();
        assert_eq!(signs, vec![(0, 1.0), (1, 1.0), (0, -1.0), (1, -1.0)]);
        for s in &segs {
            assert!((s.dur - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn joint_diagonalization_recovers_common_eigenbasis() {
        // Two matrices sharing a random rotation's eigenbasis.
        let theta = 0.7f64;
        let (c, s) = (theta.cos(), theta.sin());
        let v = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let d1 = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let d2 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        let m1 = &v * d1 * v.transpose();
        let m2 = &v * d2 * v.transpose();
        let (basis, resid, _) = joint_diagonalize(&[m1.clone(), m2.clone()], 20);
        assert!(resid < 1e-10, "residual {resid}");
        // Columns of basis match columns of v up to sign/permutation.
        for bc in basis.column_iter() {
            let best = v
                .column_iter()
                .map(|vc| bc.dot(&vc).abs())
                .fold(0.0f64, f64::max);
            assert!(best > 1.0 - 1e-8);
        }
    }

    #[test]
    fn joint_diagonalization_fails_for_incompatible_pair() {
        let m1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let m2 = DMatrix::from_row_slice(2, 2, &[1.5, 0.9, 0.9, 1.1]);
        // m1 and m2 do not commute, so no orthogonal basis diagonalizes both.
        let comm = (&m1 * &m2 - &m2 * &m1).norm();
        assert!(comm > 1e-3);
        let (_, resid, _) = joint_diagonalize(&[m1, m2], 30);
        assert!(resid > 1e-2, "residual {resid}");
    }
}
