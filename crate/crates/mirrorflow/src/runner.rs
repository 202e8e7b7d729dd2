//! CLI dispatch: a config file in, CSV/JSON artifacts out, and an exit code
//! summarizing the verdict. Exit 0 means the run passed its quantitative
//! checks (or the subcommand only reports data), 2 means a check failed its
//! tolerance, 1 means the run itself could not execute.
//!
//! Every artifact embeds the schema version, the hash of the effective
//! config (file + `--set` overrides + `--seed`), and the seed of the run
//! that produced it. With a fixed-step integrator the artifacts are
//! byte-identical across repeated runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bias::{self, BiasOptions};
use crate::commutation;
use crate::config::{ExperimentConfig, PotentialKind, SCHEMA_VERSION};
use crate::flows::{self, Trajectory};
use crate::legendre::{self, LegendreFunction};
use crate::param;
use crate::{Error, Result};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_EXEC_ERROR: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "mirrorflow",
    version,
    about = "Gradient flow under reparametrizations: commutation checks, mirror-flow equivalence, and implicit-bias experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pairwise bracket verdict plus the nested-bracket necessary condition.
    CheckCommuting(RunArgs),
    /// Integrate reparametrized gradient flow and write the trajectory.
    Simulate(RunArgs),
    /// Compare gradient, mirror, and Riemannian trajectories pointwise.
    Equivalence(RunArgs),
    /// Underdetermined regression: flow limit against the KKT oracle.
    Bias(RunArgs),
    /// Commutator-loop displacement sweep with log-log slope fit.
    LoopTest(RunArgs),
    /// Sampled Legendre-pair diagnostics for the configured potential.
    LegendreProbe(RunArgs),
    /// Per-axis reach of the coordinate flows from the initialization.
    DomainProbe(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment definition (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Dotted-path override, repeatable: --set integrator.abs_tol=1e-12
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (default: scenario.out, then "artifacts").
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Replaces scenario.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for seed sweeps (scenario.seeds).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Parse argv and run; returns the process exit code. Help and version
/// requests exit 0; malformed invocations are execution errors.
pub fn main_from_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_PASS,
                _ => EXIT_EXEC_ERROR,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_EXEC_ERROR
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sub {
    CheckCommuting,
    Simulate,
    Equivalence,
    Bias,
    LoopTest,
    LegendreProbe,
    DomainProbe,
}

impl Sub {
    fn name(self) -> &'static str {
        match self {
            Sub::CheckCommuting => "check-commuting",
            Sub::Simulate => "simulate",
            Sub::Equivalence => "equivalence",
            Sub::Bias => "bias",
            Sub::LoopTest => "loop-test",
            Sub::LegendreProbe => "legendre-probe",
            Sub::DomainProbe => "domain-probe",
        }
    }
}

/// Run a subcommand end to end; Ok(pass?) or an execution error.
pub fn execute(cmd: &Command) -> Result<bool> {
    let (sub, args) = match cmd {
        Command::CheckCommuting(a) => (Sub::CheckCommuting, a),
        Command::Simulate(a) => (Sub::Simulate, a),
        Command::Equivalence(a) => (Sub::Equivalence, a),
        Command::Bias(a) => (Sub::Bias, a),
        Command::LoopTest(a) => (Sub::LoopTest, a),
        Command::LegendreProbe(a) => (Sub::LegendreProbe, a),
        Command::DomainProbe(a) => (Sub::DomainProbe, a),
    };
    let mut cfg = ExperimentConfig::load(&args.config, &args.set)?;
    if let Some(seed) = args.seed {
        cfg.scenario.seed = seed;
    }
    let hash = cfg.hash();
    let out = args
        .out
        .clone()
        .or_else(|| cfg.scenario.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("artifacts"));
    std::fs::create_dir_all(&out)?;

    let seeds: Vec<u64> = match &cfg.scenario.seeds {
        Some(list) if !list.is_empty() => list.clone(),
        _ => vec![cfg.scenario.seed],
    };
    let sweep = seeds.len() > 1;
    let jobs = args.jobs.max(1).min(seeds.len());

    let outcomes = if jobs == 1 {
        let mut acc = Vec::with_capacity(seeds.len());
        for (idx, &seed) in seeds.iter().enumerate() {
            acc.push((idx, run_one(sub, &cfg, &hash, seed, &out, sweep)?));
        }
        acc
    } else {
        run_sweep(sub, &cfg, &hash, &seeds, &out, jobs)?
    };

    let mut all_pass = true;
    for (_, oc) in &outcomes {
        println!("{}", oc.line);
        all_pass &= oc.pass;
    }
    if sweep {
        let per_seed: Vec<_> = outcomes
            .iter()
            .map(|(_, oc)| {
                serde_json::json!({
                    "seed": oc.seed,
                    "pass": oc.pass,
                    "artifacts": oc.artifacts,
                })
            })
            .collect();
        let summary = Envelope {
            schema_version: SCHEMA_VERSION,
            subcommand: sub.name(),
            scenario: cfg.scenario.name.clone(),
            config_hash: hash.clone(),
            seed: cfg.scenario.seed,
            pass: all_pass,
            report: serde_json::json!({ "runs": per_seed }),
        };
        let path = out.join(format!("{}-{}-summary.json", slug(&cfg.scenario.name), sub.name()));
        write_json(&path, &summary)?;
        println!(
            "[{}] sweep of {} seeds: pass={all_pass} summary={}",
            sub.name(),
            seeds.len(),
            path.display()
        );
    }
    Ok(all_pass)
}

/// Fan seeds across worker threads round-robin; merge outcomes by index so
/// reports read in seed-list order no matter which worker ran them.
fn run_sweep(
    sub: Sub,
    cfg: &ExperimentConfig,
    hash: &str,
    seeds: &[u64],
    out: &Path,
    jobs: usize,
) -> Result<Vec<(usize, Outcome)>> {
    let results = std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(jobs);
        for worker in 0..jobs {
            let seeds = seeds.to_vec();
            handles.push(scope.spawn(move || -> Result<Vec<(usize, Outcome)>> {
                let mut acc = Vec::new();
                for (idx, &seed) in seeds.iter().enumerate() {
                    if idx % jobs == worker {
                        acc.push((idx, run_one(sub, cfg, hash, seed, out, true)?));
                    }
                }
                Ok(acc)
            }));
        }
        let mut merged = Vec::with_capacity(seeds.len());
        let mut first_err = None;
        for h in handles {
            match h.join().expect("worker thread panicked") {
                Ok(part) => merged.extend(part),
                Err(e) => first_err = first_err.or(Some(e)),
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(merged),
        }
    })?;
    let mut merged = results;
    merged.sort_by_key(|(idx, _)| *idx);
    Ok(merged)
}

struct Outcome {
    seed: u64,
    pass: bool,
    line: String,
    artifacts: Vec<String>,
}

fn run_one(
    sub: Sub,
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    out: &Path,
    sweep: bool,
) -> Result<Outcome> {
    let suffix = if sweep { format!("-seed{seed}") } else { String::new() };
    let base = format!("{}-{}{}", slug(&cfg.scenario.name), sub.name(), suffix);
    match sub {
        Sub::CheckCommuting => check_commuting(cfg, hash, seed, out, &base),
        Sub::Simulate => simulate(cfg, hash, seed, out, &base),
        Sub::Equivalence => equivalence(cfg, hash, seed, out, &base),
        Sub::Bias => bias_run(cfg, hash, seed, out, &base),
        Sub::LoopTest => loop_test(cfg, hash, seed, out, &base),
        Sub::LegendreProbe => legendre_probe(cfg, hash, seed, out, &base),
        Sub::DomainProbe => domain_probe(cfg, hash, seed, out, &base),
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn check_commuting(
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    out: &Path,
    base: &str,
) -> Result<Outcome> {
    let g = cfg.parametrization()?;
    let x0 = cfg.x_init(g.as_ref())?;
    let cc = &cfg.commutation;

    let mut samples = vec![x0.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attempts = 0;
    while samples.len() < cc.samples.max(1) && attempts < 100 * cc.samples.max(1) {
        attempts += 1;
        let cand = DVector::from_fn(x0.len(), |i, _| {
            x0[i] + rng.random_range(-cc.box_half_width..cc.box_half_width)
        });
        if g.domain().contains(&cand) {
            samples.push(cand);
        }
    }
    let bracket = commutation::commuting_check(g.as_ref(), &samples, cc.tol)?;
    let at = match &cc.at {
        Some(v) => DVector::from_vec(v.clone()),
        None => x0.clone(),
    };
    let necessary = commutation::necessary_condition_check(g.as_ref(), &at, cc.max_depth)?;

    let verdict = if bracket.commuting { "commuting" } else { "non-commuting" };
    let max_proj = necessary
        .nested
        .iter()
        .map(|d| d.max_projection_residual)
        .fold(0.0f64, f64::max);
    let report = serde_json::json!({
        "family": g.name(),
        "verdict": verdict,
        "bracket": bracket,
        "necessary_condition": necessary,
    });
    // The verdict itself is data, not a pass/fail bar: a non-commuting
    // family is a correct answer to the question being asked.
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        subcommand: "check-commuting",
        scenario: cfg.scenario.name.clone(),
        config_hash: hash.to_string(),
        seed,
        pass: true,
        report,
    };
    let path = out.join(format!("{base}.json"));
    write_json(&path, &env)?;
    Ok(Outcome {
        seed,
        pass: true,
        line: format!(
            "[check-commuting] scenario={} seed={seed} verdict={verdict} max_bracket_norm={:.6e} max_projection_residual={:.6e} pass=true",
            cfg.scenario.name, bracket.max_bracket_norm, max_proj
        ),
        artifacts: vec![path.display().to_string()],
    })
}

fn simulate(
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    out: &Path,
    base: &str,
) -> Result<Outcome> {
    let g = cfg.parametrization()?;
    let x0 = cfg.x_init(g.as_ref())?;
    let loss = cfg.loss(g.dim_w(), seed)?;
    let icfg = cfg.integrator.build()?;
    let traj = flows::gradient_flow(g.as_ref(), &loss, &x0, cfg.scenario.t_final, &icfg)?;

    let csv_path = out.join(format!("{base}-trajectory.csv"));
    write_trajectory_csv(&csv_path, &traj, hash, seed)?;

    let w_final = traj.w.last().expect("trajectory has samples");
    let final_loss = loss.value_at(cfg.scenario.t_final, w_final);
    let report = serde_json::json!({
        "family": g.name(),
        "t_final": cfg.scenario.t_final,
        "grid_points": traj.len(),
        "integrator_steps": traj.steps,
        "final_w": w_final.as_slice(),
        "final_loss": final_loss,
    });
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        subcommand: "simulate",
        scenario: cfg.scenario.name.clone(),
        config_hash: hash.to_string(),
        seed,
        pass: true,
        report,
    };
    let json_path = out.join(format!("{base}.json"));
    write_json(&json_path, &env)?;
    Ok(Outcome {
        seed,
        pass: true,
        line: format!(
            "[simulate] scenario={} seed={seed} steps={} final_loss={final_loss:.6e} pass=true",
            cfg.scenario.name, traj.steps
        ),
        artifacts: vec![csv_path.display().to_string(), json_path.display().to_string()],
    })
}

fn equivalence(
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    out: &Path,
    base: &str,
) -> Result<Outcome> {
    let g = cfg.parametrization()?;
    let x0 = cfg.x_init(g.as_ref())?;
    let f = cfg.potential(&x0)?;
    let loss = cfg.loss(g.dim_w(), seed)?;
    let icfg = cfg.integrator.build()?;
    let run = flows::equivalence_report(g.as_ref(), &f, &loss, &x0, cfg.scenario.t_final, &icfg)?;

    let mut artifacts = Vec::new();
    for (tag, traj) in [
        ("gradient", &run.gradient),
        ("mirror", &run.mirror),
        ("riemannian", &run.riemannian),
    ] {
        let p = out.join(format!("{base}-{tag}.csv"));
        write_trajectory_csv(&p, traj, hash, seed)?;
        artifacts.push(p.display().to_string());
    }

    let tol = cfg.scenario.tolerance;
    let worst = run
        .report
        .max_grad_vs_mirror
        .max(run.report.max_grad_vs_riemannian)
        .max(run.report.max_mirror_vs_riemannian);
    let pass = worst <= tol;
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        subcommand: "equivalence",
        scenario: cfg.scenario.name.clone(),
        config_hash: hash.to_string(),
        seed,
        pass,
        report: serde_json::json!({
            "family": g.name(),
            "potential": f.name(),
            "potential_provenance": f.provenance(),
            "tolerance": tol,
            "report": run.report,
        }),
    };
    let json_path = out.join(format!("{base}.json"));
    write_json(&json_path, &env)?;
    artifacts.push(json_path.display().to_string());
    Ok(Outcome {
        seed,
        pass,
        line: format!(
            "[equivalence] scenario={} seed={seed} max_grad_vs_mirror={:.6e} max_grad_vs_riemannian={:.6e} max_mirror_vs_riemannian={:.6e} dual_conservation={:.6e} tol={tol:.1e} pass={pass}",
            cfg.scenario.name,
            run.report.max_grad_vs_mirror,
            run.report.max_grad_vs_riemannian,
            run.report.max_mirror_vs_riemannian,
            run.report.max_dual_conservation_residual
        ),
        artifacts,
    })
}

fn bias_run(
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    out: &Path,
    base: &str,
) -> Result<Outcome> {
    let g = cfg.parametrization()?;
    let x0 = cfg.x_init(g.as_ref())?;
    let f = cfg.potential(&x0)?;
    let prob = cfg.bias_problem(seed)?;
    let opts = BiasOptions {
        t_max: cfg.bias.t_max,
        w_rate_tol: cfg.bias.w_rate_tol,
        residual_tol: cfg.bias.residual_tol,
        certificate_samples: cfg.bias.certificate_samples,
        certificate_seed: seed,
    };
    let icfg = cfg.integrator.build()?;
    let rep = bias::run_bias_experiment(g.as_ref(), &f, &prob, &x0, &opts, &icfg)?;

    let tol = cfg.scenario.tolerance;
    let cert_ok = rep
        .certificate
        .as_ref()
        .map(|c| c.min_excess >= -1e-10)
        .unwrap_or(true);
    let pass = rep.interpolation_residual <= tol
        && rep.r_gap.abs() <= tol
        && rep.kkt_residual <= 1e-8
        && rep.max_dual_containment_residual <= 1e-6
        && rep.residual_monotone_tail
        && cert_ok;
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        subcommand: "bias",
        scenario: cfg.scenario.name.clone(),
        config_hash: hash.to_string(),
        seed,
        pass,
        report: serde_json::json!({
            "family": g.name(),
            "potential": f.name(),
            "tolerance": tol,
            "report": rep,
        }),
    };
    let json_path = out.join(format!("{base}.json"));
    write_json(&json_path, &env)?;
    Ok(Outcome {
        seed,
        pass,
        line: format!(
            "[bias] scenario={} seed={seed} converged={} interpolation_residual={:.6e} r_gap={:+.6e} kkt_residual={:.6e} dual_containment={:.6e} pass={pass}",
            cfg.scenario.name,
            rep.converged,
            rep.interpolation_residual,
            rep.r_gap,
            rep.kkt_residual,
            rep.max_dual_containment_residual
        ),
        artifacts: vec![json_path.display().to_string()],
    })
}

fn loop_test(
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    out: &Path,
    base: &str,
) -> Result<Outcome> {
    let g = cfg.parametrization()?;
    let x0 = cfg.x_init(g.as_ref())?;
    let lc = &cfg.loop_;
    let deltas = lc.deltas()?;
    let icfg = cfg.integrator.build()?;
    let res = commutation::commutator_loop(g.as_ref(), &x0, &lc.j_seq, &deltas, &icfg)?;

    let max_disp = res.displacements.iter().cloned().fold(0.0f64, f64::max);
    let (pass, detail) = match lc.expect.as_str() {
        "bracket" => {
            let ok = (0.9..=1.1).contains(&res.slope) && res.pushforward_cosine >= 0.95;
            (ok, format!("slope={:.4} cosine={:.4}", res.slope, res.pushforward_cosine))
        }
        "closure" => {
            let ok = max_disp <= lc.closure_tol;
            (ok, format!("max_displacement={max_disp:.6e} closure_tol={:.1e}", lc.closure_tol))
        }
        other => {
            return Err(Error::Config(format!(
                "loop.expect must be \"bracket\" or \"closure\", got {other:?}"
            )))
        }
    };
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        subcommand: "loop-test",
        scenario: cfg.scenario.name.clone(),
        config_hash: hash.to_string(),
        seed,
        pass,
        report: serde_json::json!({
            "family": g.name(),
            "expect": lc.expect,
            "result": res,
        }),
    };
    let json_path = out.join(format!("{base}.json"));
    write_json(&json_path, &env)?;
    Ok(Outcome {
        seed,
        pass,
        line: format!(
            "[loop-test] scenario={} seed={seed} expect={} {detail} pass={pass}",
            cfg.scenario.name, lc.expect
        ),
        artifacts: vec![json_path.display().to_string()],
    })
}

fn legendre_probe(
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    out: &Path,
    base: &str,
) -> Result<Outcome> {
    let f = standalone_potential(cfg)?;
    let rep = legendre::legendre_validate(&f, cfg.legendre.boundary_probes)?;

    let pass = rep.min_dual_hessian_eig > 0.0
        && rep.max_primal_inversion_residual <= 1e-8
        && rep.max_dual_inversion_residual <= 1e-8
        && rep.max_hessian_reciprocity_residual <= 1e-6
        && rep.max_self_divergence <= 1e-12
        && rep.min_divergence >= -1e-10
        && rep.boundary_grad_monotone != Some(false);
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        subcommand: "legendre-probe",
        scenario: cfg.scenario.name.clone(),
        config_hash: hash.to_string(),
        seed,
        pass,
        report: serde_json::json!({
            "potential": f.name(),
            "provenance": f.provenance(),
            "report": rep,
        }),
    };
    let json_path = out.join(format!("{base}.json"));
    write_json(&json_path, &env)?;
    Ok(Outcome {
        seed,
        pass,
        line: format!(
            "[legendre-probe] scenario={} seed={seed} potential={} min_hessian_eig={:.6e} max_inversion_residual={:.6e} pass={pass}",
            cfg.scenario.name,
            f.name(),
            rep.min_dual_hessian_eig,
            rep.max_primal_inversion_residual.max(rep.max_dual_inversion_residual)
        ),
        artifacts: vec![json_path.display().to_string()],
    })
}

fn domain_probe(
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    out: &Path,
    base: &str,
) -> Result<Outcome> {
    let g = cfg.parametrization()?;
    let x0 = cfg.x_init(g.as_ref())?;
    let icfg = cfg.integrator.build()?;
    let rect = param::domain_probe(g.as_ref(), &x0, cfg.domain.budget, &icfg)?;

    let escapes = rect
        .axes
        .iter()
        .flat_map(|a| [&a.negative, &a.positive])
        .filter(|r| matches!(r, param::Reach::Escaped { .. }))
        .count();
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        subcommand: "domain-probe",
        scenario: cfg.scenario.name.clone(),
        config_hash: hash.to_string(),
        seed,
        pass: true,
        report: serde_json::json!({
            "family": g.name(),
            "budget": cfg.domain.budget,
            "extent": rect,
        }),
    };
    let json_path = out.join(format!("{base}.json"));
    write_json(&json_path, &env)?;
    Ok(Outcome {
        seed,
        pass: true,
        line: format!(
            "[domain-probe] scenario={} seed={seed} axes={} escaped_directions={escapes} budget={:.3} pass=true",
            cfg.scenario.name,
            rect.axes.len(),
            cfg.domain.budget
        ),
        artifacts: vec![json_path.display().to_string()],
    })
}

/// Potentials that do not depend on a parametrization can be probed without
/// one; induced potentials pull in the family and its initialization.
fn standalone_potential(cfg: &ExperimentConfig) -> Result<LegendreFunction> {
    let needs_param = matches!(
        cfg.potential.as_ref().map(|p| &p.kind),
        Some(PotentialKind::Induced)
    );
    if needs_param {
        let g = cfg.parametrization()?;
        let x0 = cfg.x_init(g.as_ref())?;
        cfg.potential(&x0)
    } else {
        cfg.potential(&DVector::zeros(0))
    }
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct Envelope<T: Serialize> {
    schema_version: u32,
    subcommand: &'static str,
    scenario: String,
    config_hash: String,
    seed: u64,
    pass: bool,
    report: T,
}

fn write_json<T: Serialize>(path: &Path, env: &Envelope<T>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(env)
        .map_err(|e| Error::InvalidArgument(format!("report serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Column layout: t, then x_1..x_D (when the trajectory carries x), then
/// w_1..w_d, then theta_1..theta_d (when present), then mu_1..mu_d. UTF-8,
/// '.' decimal separator, '\n' line endings; floats in shortest
/// round-trippable scientific form, so fixed-step runs are byte-identical.
fn write_trajectory_csv(path: &Path, traj: &Trajectory, hash: &str, seed: u64) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "# schema_version={SCHEMA_VERSION} config_hash={hash} seed={seed}"
    )
    .expect("string write");
    out.push('t');
    if let Some(xs) = &traj.x {
        for i in 1..=xs[0].len() {
            write!(out, ",x_{i}").expect("string write");
        }
    }
    let d = traj.w.first().map(|w| w.len()).unwrap_or(0);
    for i in 1..=d {
        write!(out, ",w_{i}").expect("string write");
    }
    if let Some(ths) = &traj.theta {
        for i in 1..=ths[0].len() {
            write!(out, ",theta_{i}").expect("string write");
        }
    }
    for i in 1..=d {
        write!(out, ",mu_{i}").expect("string write");
    }
    out.push('\n');

    for (k, &t) in traj.times.iter().enumerate() {
        write!(out, "{t:e}").expect("string write");
        if let Some(xs) = &traj.x {
            for v in xs[k].iter() {
                write!(out, ",{v:e}").expect("string write");
            }
        }
        for v in traj.w[k].iter() {
            write!(out, ",{v:e}").expect("string write");
        }
        if let Some(ths) = &traj.theta {
            for v in ths[k].iter() {
                write!(out, ",{v:e}").expect("string write");
            }
        }
        for v in traj.mu[k].iter() {
            write!(out, ",{v:e}").expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn slug(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect();
    while s.contains("--") {
        s = s.replace("--", "-");
    }
    s.trim_matches('-').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    const UV_EQUIV: &str = r#"
[scenario]
name = "uv demo"
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
"#;

    fn run(cmd: Command) -> Result<bool> {
        execute(&cmd)
    }

    #[test]
    fn slugging() {
        assert_eq!(slug("uv demo"), "uv-demo");
        assert_eq!(slug("A__B??c"), "a-b-c");
    }

    #[test]
    fn equivalence_run_passes_and_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_cfg(dir.path(), "cfg.toml", UV_EQUIV);
        let out = dir.path().join("artifacts");
        let pass = run(Command::Equivalence(RunArgs {
            config: cfg,
            set: vec![],
            out: Some(out.clone()),
            seed: None,
            jobs: 1,
        }))
        .unwrap();
        assert!(pass);
        for tag in ["gradient", "mirror", "riemannian"] {
            let p = out.join(format!("uv-demo-equivalence-{tag}.csv"));
            assert!(p.exists(), "missing {}", p.display());
        }
        let report = std::fs::read_to_string(out.join("uv-demo-equivalence.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&report).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["pass"], true);
        assert!(v["config_hash"].as_str().unwrap().len() == 16);
    }

    #[test]
    fn simulate_fixed_step_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_cfg(dir.path(), "cfg.toml", UV_EQUIV);
        let read_csv = |out: &Path| {
            std::fs::read(out.join("uv-demo-simulate-trajectory.csv")).unwrap()
        };
        let mut bytes = Vec::new();
        for k in 0..2 {
            let out = dir.path().join(format!("run{k}"));
            let pass = run(Command::Simulate(RunArgs {
                config: cfg.clone(),
                set: vec![
                    "integrator.method=\"rk4\"".into(),
                    "integrator.step=0.01".into(),
                ],
                out: Some(out.clone()),
                seed: None,
                jobs: 1,
            }))
            .unwrap();
            assert!(pass);
            bytes.push(read_csv(&out));
        }
        assert_eq!(bytes[0], bytes[1]);
        let text = String::from_utf8(bytes[0].clone()).unwrap();
        let mut lines = text.lines();
        let meta = lines.next().unwrap();
        assert!(meta.starts_with("# schema_version=1 config_hash="));
        let header = lines.next().unwrap();
        assert_eq!(
            header,
            "t,x_1,x_2,x_3,x_4,w_1,w_2,mu_1,mu_2"
        );
        assert!(!text.contains('\r'));
    }

    #[test]
    fn check_commuting_verdict_is_data_not_failure() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"
[scenario]
name = "uut"
seed = 0

[parametrization]
family = "uut"
d = 2
r = 1
x_init = [1.0, 0.0]

[commutation]
samples = 8
max_depth = 3
"#;
        let cfg = write_cfg(dir.path(), "cfg.toml", body);
        let out = dir.path().join("a");
        let pass = run(Command::CheckCommuting(RunArgs {
            config: cfg,
            set: vec![],
            out: Some(out.clone()),
            seed: None,
            jobs: 1,
        }))
        .unwrap();
        assert!(pass, "non-commuting verdict still exits 0");
        let report = std::fs::read_to_string(out.join("uut-check-commuting.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&report).unwrap();
        assert_eq!(v["report"]["verdict"], "non-commuting");
    }

    #[test]
    fn missing_config_is_an_execution_error() {
        let code = main_from_args([
            "mirrorflow",
            "simulate",
            "--config",
            "/nonexistent/definitely-absent.toml",
        ]);
        assert_eq!(code, EXIT_EXEC_ERROR);
    }

    #[test]
    fn failed_tolerance_yields_exit_2() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_cfg(dir.path(), "cfg.toml", UV_EQUIV);
        let out = dir.path().join("a");
        let code = main_from_args([
            "mirrorflow".to_string(),
            "equivalence".into(),
            "--config".into(),
            cfg.display().to_string(),
            "--set".into(),
            "scenario.tolerance=1e-16".into(),
            "--out".into(),
            out.display().to_string(),
        ]);
        assert_eq!(code, EXIT_CHECK_FAILED);
    }

    #[test]
    fn seed_sweep_merges_by_index() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"
[scenario]
name = "sweep"
seed = 0
seeds = [0, 1, 2, 3]
tolerance = 1e-6

[parametrization]
family = "uv_square"
d = 4
x_init = [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]

[potential]
kind = "induced"

[bias]
n = 2
d = 4

[integrator]
abs_tol = 1e-12
rel_tol = 1e-12
"#;
        let cfg = write_cfg(dir.path(), "cfg.toml", body);
        let out = dir.path().join("a");
        let pass = run(Command::Bias(RunArgs {
            config: cfg,
            set: vec![],
            out: Some(out.clone()),
            seed: None,
            jobs: 3,
        }))
        .unwrap();
        assert!(pass);
        let summary = std::fs::read_to_string(out.join("sweep-bias-summary.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
        let runs = v["report"]["runs"].as_array().unwrap();
        assert_eq!(runs.len(), 4);
        for (k, r) in runs.iter().enumerate() {
            assert_eq!(r["seed"], k as u64, "runs merged in seed-list order");
            assert_eq!(r["pass"], true);
        }
        for s in 0..4 {
            assert!(out.join(format!("sweep-bias-seed{s}.json")).exists());
        }
    }
}
