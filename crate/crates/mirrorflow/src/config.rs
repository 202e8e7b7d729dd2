//! Config-driven experiment definitions. A single TOML file declares the
//! scenario, the parametrization, the potential, the loss schedule, and the
//! integrator; dotted-path `--set` overrides edit the parsed tree before
//! deserialization, so the effective config (and its hash) always reflects
//! what actually ran.
//!
//! Key schema (flat dotted paths):
//!   scenario.{name, t_final, seed, seeds, tolerance, out}
//!   parametrization.{family, dim|d|r|d1|d2, lambdas, matrices, x_init}
//!   potential.{kind, numeric, u0, v0, x0, w_ref, matrices}
//!   loss.segments[i].{kind, start, direction, z, y, n, d, seed}
//!   integrator.{method, step, abs_tol, rel_tol, max_steps, blow_up}
//!   bias.{t_max, w_rate_tol, residual_tol, certificate_samples, n, d, z, y}
//!   commutation.{samples, tol, max_depth, box_half_width, at}
//!   loop.{j_seq, delta_min, delta_max, points, deltas, expect, closure_tol}
//!   domain.{budget}
//!   legendre.{boundary_probes}

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bias::RegressionProblem;
use crate::flows::{LinearLoss, LossFn, QuadraticRegressionLoss, TimeDependentLoss, ZeroLoss};
use crate::legendre::{induced_potential, LegendreFunction};
use crate::ode::{IntegratorConfig, Method};
use crate::param::{builtin, FamilySpec, Parametrization};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub scenario: ScenarioCfg,
    #[serde(default)]
    pub parametrization: Option<ParamCfg>,
    #[serde(default)]
    pub potential: Option<PotentialCfg>,
    #[serde(default)]
    pub loss: LossCfg,
    #[serde(default)]
    pub integrator: IntegratorCfg,
    #[serde(default)]
    pub bias: BiasCfg,
    #[serde(default)]
    pub commutation: CommutationCfg,
    #[serde(default, rename = "loop")]
    pub loop_: LoopCfg,
    #[serde(default)]
    pub domain: DomainCfg,
    #[serde(default)]
    pub legendre: LegendreCfg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioCfg {
    pub name: String,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default)]
    pub seed: u64,
    /// Optional sweep: run once per seed (bias/equivalence).
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Pass/fail bar for quantitative subcommands.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub out: Option<String>,
}

fn default_t_final() -> f64 {
    10.0
}

fn default_tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamCfg {
    #[serde(flatten)]
    pub family: FamilySpec,
    #[serde(default)]
    pub x_init: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    /// Built from the parametrization family and its initialization.
    Induced,
    Euclidean {
        w_ref: Vec<f64>,
    },
    Hypentropy {
        u0: Vec<f64>,
        v0: Vec<f64>,
    },
    Entropy {
        x0: Vec<f64>,
    },
    QuadraticFamily {
        matrices: Vec<Vec<Vec<f64>>>,
        x0: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialCfg {
    #[serde(flatten)]
    pub kind: PotentialKind,
    /// Route primal-side evaluations through Newton conjugation even when a
    /// closed form exists.
    #[serde(default)]
    pub numeric: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LossCfg {
    #[serde(default)]
    pub segments: Vec<SegmentCfg>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentKind {
    Zero,
    Linear {
        direction: Vec<f64>,
    },
    QuadraticRegression {
        z: Vec<Vec<f64>>,
        y: Vec<f64>,
    },
    /// Random underdetermined regression with a planted solution; the seed
    /// defaults to the scenario seed.
    GaussianRegression {
        n: usize,
        d: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentCfg {
    #[serde(default)]
    pub start: f64,
    #[serde(flatten)]
    pub kind: SegmentKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegratorCfg {
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_blow_up")]
    pub blow_up: f64,
}

fn default_method() -> String {
    "rk45".into()
}
fn default_step() -> f64 {
    1e-3
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_steps() -> usize {
    1_000_000
}
fn default_blow_up() -> f64 {
    1e8
}

impl Default for IntegratorCfg {
    fn default() -> Self {
        Self {
            method: default_method(),
            step: default_step(),
            abs_tol: default_tol(),
            rel_tol: default_tol(),
            max_steps: default_max_steps(),
            blow_up: default_blow_up(),
        }
    }
}

impl IntegratorCfg {
    pub fn build(&self) -> Result<IntegratorConfig> {
        let method = match self.method.as_str() {
            "rk45" => Method::Rk45,
            "rk4" => Method::Rk4 { step: self.step },
            other => {
                return Err(Error::Config(format!(
                    "integrator.method must be rk45 or rk4, got {other:?}"
                )))
            }
        };
        let cfg = IntegratorConfig {
            method,
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_steps: self.max_steps,
            blow_up: self.blow_up,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasCfg {
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_w_rate_tol")]
    pub w_rate_tol: f64,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    #[serde(default = "default_certificate_samples")]
    pub certificate_samples: usize,
    /// Gaussian problem shape (used when z/y are absent).
    #[serde(default = "default_bias_n")]
    pub n: usize,
    #[serde(default = "default_bias_d")]
    pub d: usize,
    #[serde(default)]
    pub z: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub y: Option<Vec<f64>>,
}

fn default_t_max() -> f64 {
    1e3
}
fn default_w_rate_tol() -> f64 {
    1e-9
}
fn default_residual_tol() -> f64 {
    1e-10
}
fn default_certificate_samples() -> usize {
    10_000
}
fn default_bias_n() -> usize {
    2
}
fn default_bias_d() -> usize {
    4
}

impl Default for BiasCfg {
    fn default() -> Self {
        Self {
            t_max: default_t_max(),
            w_rate_tol: default_w_rate_tol(),
            residual_tol: default_residual_tol(),
            certificate_samples: default_certificate_samples(),
            n: default_bias_n(),
            d: default_bias_d(),
            z: None,
            y: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommutationCfg {
    #[serde(default = "default_commutation_samples")]
    pub samples: usize,
    #[serde(default = "default_commutation_tol")]
    pub tol: f64,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    /// Half-width of the sampling box around the initialization.
    #[serde(default = "default_box")]
    pub box_half_width: f64,
    /// Explicit evaluation point for the necessary-condition check.
    #[serde(default)]
    pub at: Option<Vec<f64>>,
}

fn default_commutation_samples() -> usize {
    16
}
fn default_commutation_tol() -> f64 {
    1e-8
}
fn default_max_depth() -> usize {
    2
}
fn default_box() -> f64 {
    1.5
}

impl Default for CommutationCfg {
    fn default() -> Self {
        Self {
            samples: default_commutation_samples(),
            tol: default_commutation_tol(),
            max_depth: default_max_depth(),
            box_half_width: default_box(),
            at: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopCfg {
    #[serde(default = "default_j_seq")]
    pub j_seq: Vec<usize>,
    #[serde(default = "default_delta_min")]
    pub delta_min: f64,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Explicit deltas override the log-spaced range.
    #[serde(default)]
    pub deltas: Option<Vec<f64>>,
    /// "bracket": displacement should scale like delta along the pushed
    /// bracket; "closure": displacement should vanish (commuting family).
    #[serde(default = "default_expect")]
    pub expect: String,
    #[serde(default = "default_closure_tol")]
    pub closure_tol: f64,
}

fn default_j_seq() -> Vec<usize> {
    vec![0, 1]
}
fn default_delta_min() -> f64 {
    1e-3
}
fn default_delta_max() -> f64 {
    1e-1
}
fn default_points() -> usize {
    5
}
fn default_expect() -> String {
    "bracket".into()
}
fn default_closure_tol() -> f64 {
    1e-8
}

impl Default for LoopCfg {
    fn default() -> Self {
        Self {
            j_seq: default_j_seq(),
            delta_min: default_delta_min(),
            delta_max: default_delta_max(),
            points: default_points(),
            deltas: None,
            expect: default_expect(),
            closure_tol: default_closure_tol(),
        }
    }
}

impl LoopCfg {
    pub fn deltas(&self) -> Result<Vec<f64>> {
        if let Some(ds) = &self.deltas {
            if ds.is_empty() || ds.iter().any(|d| !(*d > 0.0)) {
                return Err(Error::Config("loop.deltas must be positive".into()));
            }
            return Ok(ds.clone());
        }
        if !(self.delta_min > 0.0 && self.delta_max > self.delta_min && self.points >= 2) {
            return Err(Error::Config(
                "loop range needs 0 < delta_min < delta_max and points >= 2".into(),
            ));
        }
        let (lo, hi) = (self.delta_min.log10(), self.delta_max.log10());
        Ok((0..self.points)
            .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (self.points - 1) as f64))
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainCfg {
    #[serde(default = "default_budget")]
    pub budget: f64,
}

fn default_budget() -> f64 {
    5.0
}

impl Default for DomainCfg {
    fn default() -> Self {
        Self {
            budget: default_budget(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LegendreCfg {
    #[serde(default = "default_boundary_probes")]
    pub boundary_probes: usize,
}

fn default_boundary_probes() -> usize {
    20
}

impl Default for LegendreCfg {
    fn default() -> Self {
        Self {
            boundary_probes: default_boundary_probes(),
        }
    }
}

impl ExperimentConfig {
    /// Parse a TOML file and apply dotted-path overrides, then deserialize.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut value = toml::Value::Table(table);
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (this build reads {})",
                cfg.schema_version, SCHEMA_VERSION
            )));
        }
        Ok(cfg)
    }

    /// Hex SHA-256 of the effective config serialized as JSON (stable field
    /// order), truncated to 16 characters for artifact embedding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(16);
        for b in digest.iter().take(8) {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }

    pub fn parametrization(&self) -> Result<Box<dyn Parametrization>> {
        let p = self.parametrization.as_ref().ok_or_else(|| {
            Error::Config("this subcommand needs a [parametrization] table".into())
        })?;
        builtin(&p.family)
    }

    pub fn x_init(&self, g: &dyn Parametrization) -> Result<DVector<f64>> {
        let p = self.parametrization.as_ref().ok_or_else(|| {
            Error::Config("this subcommand needs a [parametrization] table".into())
        })?;
        let raw = p.x_init.as_ref().ok_or_else(|| {
            Error::Config("parametrization.x_init is required here".into())
        })?;
        if raw.len() != g.dim_x() {
            return Err(Error::Config(format!(
                "parametrization.x_init has length {}, family {:?} expects {}",
                raw.len(),
                g.name(),
                g.dim_x()
            )));
        }
        Ok(DVector::from_vec(raw.clone()))
    }

    pub fn potential(&self, x_init: &DVector<f64>) -> Result<LegendreFunction> {
        let pot = self.potential.as_ref().ok_or_else(|| {
            Error::Config("this subcommand needs a [potential] table".into())
        })?;
        build_potential(pot, self.parametrization.as_ref().map(|p| &p.family), x_init)
    }

    /// Assemble the loss schedule; `d` is the w-dimension it must act on.
    pub fn loss(&self, d: usize, seed: u64) -> Result<TimeDependentLoss> {
        if self.loss.segments.is_empty() {
            return Err(Error::Config(
                "this subcommand needs at least one [[loss.segments]] entry".into(),
            ));
        }
        let mut starts = Vec::with_capacity(self.loss.segments.len());
        let mut losses: Vec<Arc<dyn LossFn>> = Vec::with_capacity(self.loss.segments.len());
        for seg in &self.loss.segments {
            starts.push(seg.start);
            losses.push(build_segment(&seg.kind, d, seed)?);
        }
        TimeDependentLoss::piecewise(starts, losses)
    }

    /// The regression problem for bias runs: explicit z/y when given,
    /// otherwise a seeded Gaussian problem of the configured shape.
    pub fn bias_problem(&self, seed: u64) -> Result<RegressionProblem> {
        match (&self.bias.z, &self.bias.y) {
            (Some(z), Some(y)) => {
                let zm = matrix_from(z)?;
                RegressionProblem::new(zm, DVector::from_vec(y.clone()))
            }
            (None, None) => Ok(RegressionProblem::gaussian(self.bias.n, self.bias.d, seed)?.0),
            _ => Err(Error::Config(
                "bias.z and bias.y must be given together".into(),
            )),
        }
    }
}

/// Resolve a potential spec into a Legendre function. `family` and `x_init`
/// back the "induced" kind; the standalone kinds ignore them.
pub fn build_potential(
    pot: &PotentialCfg,
    family: Option<&FamilySpec>,
    x_init: &DVector<f64>,
) -> Result<LegendreFunction> {
    let f = match &pot.kind {
        PotentialKind::Induced => {
            let spec = family.ok_or_else(|| {
                Error::Config("potential.kind = induced needs a parametrization".into())
            })?;
            induced_potential(spec, x_init)?
        }
        PotentialKind::Euclidean { w_ref } => {
            LegendreFunction::euclidean(DVector::from_vec(w_ref.clone()))
        }
        PotentialKind::Hypentropy { u0, v0 } => LegendreFunction::hypentropy_from_init(
            DVector::from_vec(u0.clone()),
            DVector::from_vec(v0.clone()),
        )?,
        PotentialKind::Entropy { x0 } => {
            LegendreFunction::entropy_from_init(DVector::from_vec(x0.clone()))?
        }
        PotentialKind::QuadraticFamily { matrices, x0 } => {
            let mats = matrices_from(matrices)?;
            let fam = Arc::new(crate::param::CommutingQuadraticFamily::new(mats)?);
            LegendreFunction::quadratic_family_potential(fam, DVector::from_vec(x0.clone()))?
        }
    };
    Ok(if pot.numeric { f.with_numeric_primal() } else { f })
}

fn matrix_from(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Config("matrix literal has no rows".into()));
    }
    let m = rows[0].len();
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config("matrix literal rows have unequal lengths".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn matrices_from(mats: &[Vec<Vec<f64>>]) -> Result<Vec<DMatrix<f64>>> {
    mats.iter().map(|m| matrix_from(m)).collect()
}

fn build_segment(kind: &SegmentKind, d: usize, seed: u64) -> Result<Arc<dyn LossFn>> {
    Ok(match kind {
        SegmentKind::Zero => Arc::new(ZeroLoss::new(d)),
        SegmentKind::Linear { direction } => {
            if direction.len() != d {
                return Err(Error::Config(format!(
                    "linear segment direction has length {}, expected {d}",
                    direction.len()
                )));
            }
            Arc::new(LinearLoss::new(DVector::from_vec(direction.clone())))
        }
        SegmentKind::QuadraticRegression { z, y } => {
            let zm = matrix_from(z)?;
            if zm.ncols() != d {
                return Err(Error::Config(format!(
                    "regression design has {} columns, expected {d}",
                    zm.ncols()
                )));
            }
            Arc::new(QuadraticRegressionLoss::new(zm, DVector::from_vec(y.clone()))?)
        }
        SegmentKind::GaussianRegression {
            n,
            d: want_d,
            seed: seg_seed,
        } => {
            if *want_d != d {
                return Err(Error::Config(format!(
                    "gaussian segment declares d = {want_d}, scenario needs {d}"
                )));
            }
            let (prob, _) = RegressionProblem::gaussian(*n, *want_d, seg_seed.unwrap_or(seed))?;
            Arc::new(prob.loss()?)
        }
    })
}

/// Apply one `key.path[i]=value` override to a parsed TOML tree. The value
/// side is parsed as TOML (so numbers, booleans, arrays, and strings all
/// work); bare words fall back to strings.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        Error::Config(format!("override {spec:?} is not of the form key=value"))
    })?;
    let value = parse_override_value(raw.trim())?;
    let segments = parse_path(path.trim())?;
    if segments.is_empty() {
        return Err(Error::Config("override path is empty".into()));
    }
    let mut node = root;
    for (idx, seg) in segments.iter().enumerate() {
        let last = idx + 1 == segments.len();
        match seg {
            PathSeg::Key(k) => {
                let table = node.as_table_mut().ok_or_else(|| {
                    Error::Config(format!("override {path:?}: {k:?} is not inside a table"))
                })?;
                if last {
                    table.insert(k.clone(), value);
                    return Ok(());
                }
                node = table
                    .entry(k.clone())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
            PathSeg::Index(i) => {
                let arr = node.as_array_mut().ok_or_else(|| {
                    Error::Config(format!("override {path:?}: [{i}] is not inside an array"))
                })?;
                if *i >= arr.len() {
                    return Err(Error::Config(format!(
                        "override {path:?}: index {i} out of bounds (len {})",
                        arr.len()
                    )));
                }
                if last {
                    arr[*i] = value;
                    return Ok(());
                }
                node = &mut arr[*i];
            }
        }
    }
    unreachable!("loop returns on the last segment");
}

enum PathSeg {
    Key(String),
    Index(usize),
}

fn parse_path(path: &str) -> Result<Vec<PathSeg>> {
    let mut out = Vec::new();
    for part in path.split('.') {
        if part.is_empty() {
            return Err(Error::Config(format!("override path {path:?} has an empty segment")));
        }
        let mut rest = part;
        // Leading key, then any number of [i] suffixes.
        if let Some(open) = rest.find('[') {
            let (key, idx_part) = rest.split_at(open);
            if !key.is_empty() {
                out.push(PathSeg::Key(key.to_string()));
            }
            rest = idx_part;
            while let Some(stripped) = rest.strip_prefix('[') {
                let close = stripped.find(']').ok_or_else(|| {
                    Error::Config(format!("override path {path:?} has an unclosed index"))
                })?;
                let idx: usize = stripped[..close].parse().map_err(|_| {
                    Error::Config(format!("override path {path:?} has a non-numeric index"))
                })?;
                out.push(PathSeg::Index(idx));
                rest = &stripped[close + 1..];
            }
            if !rest.is_empty() {
                return Err(Error::Config(format!(
                    "override path {path:?} has trailing characters after an index"
                )));
            }
        } else {
            out.push(PathSeg::Key(rest.to_string()));
        }
    }
    Ok(out)
}

fn parse_override_value(raw: &str) -> Result<toml::Value> {
    if let Ok(v) = raw.parse::<toml::Value>() {
        return Ok(v);
    }
    // Bare word: treat as a string.
    Ok(toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
        let path = dir.join("cfg.toml");
        std::fs::write(&path, body).unwrap();
        path
    }

    const BASE: &str = r#"
[scenario]
name = "demo"
t_final = 2.0
seed = 7

[parametrization]
family = "uv_square"
d = 2
x_init = [0.5, 0.5, 0.5, 0.5]

[potential]
kind = "induced"

[[loss.segments]]
kind = "quadratic_regression"
start = 0.0
z = [[1.0, -0.5]]
y = [0.3]

[integrator]
method = "rk45"
"#;

    #[test]
    fn round_trips_and_builds() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), BASE);
        let cfg = ExperimentConfig::load(&path, &[]).unwrap();
        assert_eq!(cfg.scenario.name, "demo");
        let g = cfg.parametrization().unwrap();
        assert_eq!(g.dim_x(), 4);
        let x0 = cfg.x_init(g.as_ref()).unwrap();
        let f = cfg.potential(&x0).unwrap();
        assert_eq!(f.name(), "hypentropy");
        let loss = cfg.loss(2, cfg.scenario.seed).unwrap();
        assert_eq!(loss.segment_count(), 1);
        cfg.integrator.build().unwrap();
    }

    #[test]
    fn overrides_edit_nested_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), BASE);
        let cfg = ExperimentConfig::load(
            &path,
            &[
                "scenario.t_final=9.5".into(),
                "integrator.abs_tol=1e-12".into(),
                "loss.segments[0].y=[0.9]".into(),
                "scenario.name=renamed".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.scenario.t_final, 9.5);
        assert_eq!(cfg.integrator.abs_tol, 1e-12);
        assert_eq!(cfg.scenario.name, "renamed");
        match &cfg.loss.segments[0].kind {
            SegmentKind::QuadraticRegression { y, .. } => assert_eq!(y, &vec![0.9]),
            other => panic!("unexpected segment {other:?}"),
        }
    }

    #[test]
    fn hash_tracks_effective_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), BASE);
        let a = ExperimentConfig::load(&path, &[]).unwrap();
        let b = ExperimentConfig::load(&path, &[]).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::load(&path, &["scenario.seed=8".into()]).unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn bad_overrides_and_bad_configs_are_diagnosed() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), BASE);
        assert!(matches!(
            ExperimentConfig::load(&path, &["no_equals_sign".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::load(&path, &["loss.segments[7].start=1".into()]),
            Err(Error::Config(_))
        ));
        let missing = dir.path().join("absent.toml");
        assert!(matches!(
            ExperimentConfig::load(&missing, &[]),
            Err(Error::Config(_))
        ));
        let bad = write_config(dir.path(), "scenario = 3");
        assert!(matches!(
            ExperimentConfig::load(&bad, &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn loop_deltas_are_log_spaced() {
        let lc = LoopCfg::default();
        let ds = lc.deltas().unwrap();
        assert_eq!(ds.len(), 5);
        assert!((ds[0] - 1e-3).abs() < 1e-15);
        assert!((ds[4] - 1e-1).abs() < 1e-12);
        // Log-spacing: constant ratio.
        let r = ds[1] / ds[0];
        for k in 1..4 {
            assert!((ds[k + 1] / ds[k] - r).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_bias_problem_uses_the_seed() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), BASE);
        let cfg = ExperimentConfig::load(&path, &[]).unwrap();
        let p1 = cfg.bias_problem(3).unwrap();
        let p2 = cfg.bias_problem(3).unwrap();
        assert_eq!(p1.design(), p2.design());
        assert_eq!(p1.seed(), Some(3));
    }
}
