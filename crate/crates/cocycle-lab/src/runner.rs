//! Command dispatch: builds the base map and cocycle from a config, runs one
//! experiment, and emits a JSON report plus CSV data files.
//!
//! Exit-code contract: config/build problems are `RunnerError::Invalid` or
//! `RunnerError::Config` (exit 1); numeric failures such as a missing
//! invariant pair map to `RunnerError::Numeric` with a machine-readable kind
//! (exit 2).

use crate::cocycle::{example46_family, uniform_grid, CocycleError, CocycleKind, CocycleSpec};
use crate::config::{ConfigError, ExperimentConfig};
use crate::conformal::ConformalStructure;
use crate::expr::Expr;
use crate::holonomy::{log_slope, HolonomyEngine, HolonomyError};
use crate::lyapunov::{self, LyapunovError};
use crate::reduction::{self, BarycenterKind, ReductionError};
use crate::report::{write_csv, ReportRecord};
use crate::subadditive::{self, SubadditiveError, SubadditiveFamily};
use crate::torus::{Lattice, ToralAutomorphism, TorusError, TorusPoint};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Exponents,
    PeriodicExponents,
    Distortion,
    HolonomyCheck,
    InvariantPairs,
    InvariantStructure,
    SubaddCert,
    GrowthFit,
    Example46,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Exponents => "exponents",
            Command::PeriodicExponents => "periodic-exponents",
            Command::Distortion => "distortion",
            Command::HolonomyCheck => "holonomy-check",
            Command::InvariantPairs => "invariant-pairs",
            Command::InvariantStructure => "invariant-structure",
            Command::SubaddCert => "subadd-cert",
            Command::GrowthFit => "growth-fit",
            Command::Example46 => "example46",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{kind}: {detail}")]
    Numeric { kind: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunnerError {
    pub fn machine_kind(&self) -> &'static str {
        match self {
            RunnerError::Config(_) => "ConfigParse",
            RunnerError::Invalid(_) => "InvalidInput",
            RunnerError::Numeric { kind, .. } => kind,
            RunnerError::Io(_) => "Io",
        }
    }

    /// Process exit code contract: 1 for config problems, 2 for numeric
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) | RunnerError::Invalid(_) | RunnerError::Io(_) => 1,
            RunnerError::Numeric { .. } => 2,
        }
    }
}

fn numeric(kind: &'static str, err: impl std::fmt::Display) -> RunnerError {
    RunnerError::Numeric {
        kind,
        detail: err.to_string(),
    }
}

impl From<TorusError> for RunnerError {
    fn from(e: TorusError) -> RunnerError {
        let kind = match &e {
            TorusError::NotUnimodular(_) => "NotUnimodular",
            TorusError::NotHyperbolic(_) => "NotHyperbolic",
            TorusError::LatticeNotInvariant(_) => "LatticeNotInvariant",
            TorusError::IterateOverflow(..) => "IterateOverflow",
            TorusError::LeafRadiusExceeded { .. } => "LeafRadiusExceeded",
            TorusError::OutsideProductChart { .. } => "OutsideProductChart",
            TorusError::TooManyPeriodicPoints { .. } => "TooManyPeriodicPoints",
            TorusError::LatticeMismatch { .. } => "LatticeMismatch",
            TorusError::NotACover(_) => "NotACover",
            TorusError::RationalOverflow => "RationalOverflow",
        };
        numeric(kind, e)
    }
}

impl From<CocycleError> for RunnerError {
    fn from(e: CocycleError) -> RunnerError {
        let kind = match &e {
            CocycleError::SingularFiberMap(..) => "SingularFiberMap",
            CocycleError::CongruenceViolated => "CongruenceViolated",
            CocycleError::EpsilonOutOfRange(_) => "EpsilonOutOfRange",
            CocycleError::IterateBudget(..) => "IterateOverflow",
            CocycleError::WrongEntryCount(..) => "WrongEntryCount",
            CocycleError::UnsupportedFiberDim(_) => "UnsupportedFiberDim",
            CocycleError::Torus(_) => return numeric("Torus", e),
        };
        numeric(kind, e)
    }
}

impl From<HolonomyError> for RunnerError {
    fn from(e: HolonomyError) -> RunnerError {
        let kind = match &e {
            HolonomyError::NotFiberBunched { .. } => "NotFiberBunched",
            HolonomyError::NotOnLeaf { .. } => "NotOnLeaf",
            HolonomyError::ToleranceUnreachable { .. } => "ToleranceUnreachable",
            HolonomyError::LeafEscape(_) => "LeafEscape",
            HolonomyError::Cocycle(_) => return numeric("Cocycle", e),
            HolonomyError::Torus(_) => return numeric("Torus", e),
        };
        numeric(kind, e)
    }
}

impl From<LyapunovError> for RunnerError {
    fn from(e: LyapunovError) -> RunnerError {
        let kind = match &e {
            LyapunovError::NotPeriodic(_) => "NotPeriodic",
            LyapunovError::Cocycle(_) => return numeric("Cocycle", e),
            LyapunovError::Torus(_) => return numeric("Torus", e),
        };
        numeric(kind, e)
    }
}

impl From<SubadditiveError> for RunnerError {
    fn from(e: SubadditiveError) -> RunnerError {
        match &e {
            SubadditiveError::NotFound { .. } => numeric("NotFound", e),
            SubadditiveError::Cocycle(_) => numeric("Cocycle", e),
        }
    }
}

impl From<ReductionError> for RunnerError {
    fn from(e: ReductionError) -> RunnerError {
        let kind = match &e {
            ReductionError::NoInvariantPair { .. } => "NoInvariantPair",
            ReductionError::NotQuasiconformalOnWindow { .. } => "NotQuasiconformalOnWindow",
            ReductionError::NoConvergence { .. } => "NoConvergence",
            ReductionError::ObstructionNonzero { .. } => "ObstructionNonzero",
            ReductionError::LineFieldNotInvariant { .. } => "LineFieldNotInvariant",
            ReductionError::GridNotInvariant => "GridNotInvariant",
            ReductionError::Holonomy(_) => return numeric("Holonomy", e),
            ReductionError::Cocycle(_) => return numeric("Cocycle", e),
            ReductionError::Conformal(_) => return numeric("Conformal", e),
            ReductionError::Torus(_) => return numeric("Torus", e),
            ReductionError::Lyapunov(_) => return numeric("Lyapunov", e),
            ReductionError::Subadditive(_) => return numeric("Subadditive", e),
        };
        numeric(kind, e)
    }
}

/// Rejects parameter combinations that would otherwise trip library
/// preconditions; these are config mistakes, not numeric outcomes.
fn validate_run(cfg: &ExperimentConfig) -> Result<(), RunnerError> {
    let r = &cfg.run;
    if r.orbit_length < 1 {
        return Err(RunnerError::Invalid(
            "orbit_length must be at least 1".into(),
        ));
    }
    if r.grid[0] < 1 || r.grid[1] < 1 {
        return Err(RunnerError::Invalid(
            "grid dimensions must be at least 1".into(),
        ));
    }
    if r.seeds < 1 {
        return Err(RunnerError::Invalid("seeds must be at least 1".into()));
    }
    if r.n_max < 4 {
        return Err(RunnerError::Invalid("n_max must be at least 4".into()));
    }
    if r.window < 1 {
        return Err(RunnerError::Invalid("window must be at least 1".into()));
    }
    if r.max_period < 1 {
        return Err(RunnerError::Invalid("max_period must be at least 1".into()));
    }
    let beta = cfg.cocycle.beta;
    if beta.is_nan() || beta <= 0.0 || beta > 1.0 {
        return Err(RunnerError::Invalid("beta must lie in (0, 1]".into()));
    }
    if r.tolerance.is_nan() || r.tolerance <= 0.0 {
        return Err(RunnerError::Invalid("tolerance must be positive".into()));
    }
    Ok(())
}

pub fn build_base(cfg: &ExperimentConfig) -> Result<ToralAutomorphism, RunnerError> {
    let lattice = Lattice::new(cfg.base.lattice[0], cfg.base.lattice[1])
        .ok_or_else(|| RunnerError::Invalid("lattice periods must be positive".into()))?;
    ToralAutomorphism::new(cfg.base.matrix, lattice)
        .map_err(|e| RunnerError::Invalid(format!("base matrix rejected: {e}")))
}

pub fn build_cocycle(cfg: &ExperimentConfig) -> Result<CocycleSpec, RunnerError> {
    let base = build_base(cfg)?;
    let c = &cfg.cocycle;
    let parse_exprs = |raw: &str| -> Result<Vec<Expr>, RunnerError> {
        raw.split(';')
            .map(|s| {
                Expr::parse(s.trim()).map_err(|e| RunnerError::Invalid(format!("entry `{s}`: {e}")))
            })
            .collect()
    };
    let kind =
        match c.kind.as_str() {
            "constant" => {
                let raw = c.entries.as_deref().ok_or_else(|| {
                    RunnerError::Invalid("constant cocycle needs `entries`".into())
                })?;
                let values: Vec<f64> = raw
                    .split(';')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| RunnerError::Invalid(format!("constant entries: {e}")))?;
                let dim = c
                    .dim
                    .unwrap_or_else(|| (values.len() as f64).sqrt() as usize);
                if dim * dim != values.len() {
                    return Err(RunnerError::Invalid(format!(
                        "constant cocycle needs dim² entries, got {}",
                        values.len()
                    )));
                }
                CocycleKind::Constant {
                    matrix: nalgebra::DMatrix::from_row_slice(dim, dim, &values),
                }
            }
            "diagonal" => {
                let raw = c.entries.as_deref().ok_or_else(|| {
                    RunnerError::Invalid("diagonal cocycle needs `entries`".into())
                })?;
                let diag = parse_exprs(raw)?;
                let dim = diag.len();
                let zero = Expr::parse("0").expect("literal");
                let mut entries = vec![zero; dim * dim];
                for (i, e) in diag.into_iter().enumerate() {
                    entries[i * dim + i] = e;
                }
                CocycleKind::ExprMatrix {
                    dim,
                    entries,
                    sources: vec![raw.to_string()],
                }
            }
            "expr" => {
                let raw = c
                    .entries
                    .as_deref()
                    .ok_or_else(|| RunnerError::Invalid("expr cocycle needs `entries`".into()))?;
                let entries = parse_exprs(raw)?;
                let dim = c
                    .dim
                    .unwrap_or_else(|| (entries.len() as f64).sqrt() as usize);
                CocycleKind::ExprMatrix {
                    dim,
                    entries,
                    sources: vec![raw.to_string()],
                }
            }
            "conformal" => {
                let scale_src = c.scale.as_deref().ok_or_else(|| {
                    RunnerError::Invalid("conformal cocycle needs `scale`".into())
                })?;
                let angle_src = c.angle.as_deref().ok_or_else(|| {
                    RunnerError::Invalid("conformal cocycle needs `angle`".into())
                })?;
                CocycleKind::Conformal {
                    scale: Expr::parse(scale_src)
                        .map_err(|e| RunnerError::Invalid(e.to_string()))?,
                    angle: Expr::parse(angle_src)
                        .map_err(|e| RunnerError::Invalid(e.to_string()))?,
                    sources: vec![scale_src.to_string(), angle_src.to_string()],
                }
            }
            "example46" | "example46_cover" | "example46_diagonal" => {
                let epsilon = c
                    .epsilon
                    .ok_or_else(|| RunnerError::Invalid("example46 kinds need `epsilon`".into()))?;
                match c.kind.as_str() {
                    "example46" => CocycleKind::Example46 { epsilon },
                    "example46_cover" => CocycleKind::Example46Cover { epsilon },
                    _ => CocycleKind::Example46Diagonal { epsilon },
                }
            }
            other => {
                return Err(RunnerError::Invalid(format!(
                    "unknown cocycle kind `{other}`"
                )))
            }
        };
    CocycleSpec::new(base, kind, c.beta)
        .map_err(|e| RunnerError::Invalid(format!("cocycle rejected: {e}")))
}

fn seed_points(rng: &mut ChaCha8Rng, count: usize, lattice: Lattice) -> Vec<TorusPoint> {
    (0..count)
        .map(|_| {
            TorusPoint::from_f64(
                rng.gen_range(0.0..lattice.period(0) as f64),
                rng.gen_range(0.0..lattice.period(1) as f64),
                lattice,
            )
        })
        .collect()
}

/// Uniform grid plus every periodic orbit whose total count fits the cap.
pub fn default_subadd_grid(
    base: &ToralAutomorphism,
    nx: usize,
    ny: usize,
    max_period: u32,
) -> Vec<TorusPoint> {
    let mut grid = uniform_grid(base.lattice(), nx, ny);
    let mut seen: std::collections::HashSet<TorusPoint> = grid.iter().cloned().collect();
    for period in 1..=max_period {
        match base.periodic_points(period) {
            Ok(points) => {
                for p in points {
                    if seen.insert(p.clone()) {
                        grid.push(p);
                    }
                }
            }
            Err(TorusError::TooManyPeriodicPoints { .. }) => break,
            Err(_) => break,
        }
    }
    grid
}

/// Runs one command and returns its report; CSV side files land in
/// `out_dir`.
pub fn run(
    command: Command,
    cfg: &ExperimentConfig,
    out_dir: &Path,
    seed: u64,
) -> Result<ReportRecord, RunnerError> {
    validate_run(cfg)?;
    let start = std::time::Instant::now();
    let mut report = ReportRecord::new(command.name(), cfg.serialize(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match command {
        Command::Exponents => cmd_exponents(cfg, out_dir, &mut rng, &mut report)?,
        Command::PeriodicExponents => cmd_periodic(cfg, out_dir, &mut report)?,
        Command::Distortion => cmd_distortion(cfg, out_dir, &mut report)?,
        Command::HolonomyCheck => cmd_holonomy(cfg, out_dir, &mut rng, &mut report)?,
        Command::InvariantPairs => cmd_pairs(cfg, out_dir, &mut report)?,
        Command::InvariantStructure => cmd_structure(cfg, out_dir, &mut report)?,
        Command::SubaddCert => cmd_subadd(cfg, out_dir, &mut report)?,
        Command::GrowthFit => cmd_growth(cfg, out_dir, &mut report)?,
        Command::Example46 => cmd_example46(cfg, out_dir, &mut rng, &mut report)?,
    }
    report.wall_time_ms = start.elapsed().as_millis() as u64;
    Ok(report)
}

fn cmd_exponents(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    rng: &mut ChaCha8Rng,
    report: &mut ReportRecord,
) -> Result<(), RunnerError> {
    let c = build_cocycle(cfg)?;
    let n = cfg.run.orbit_length;
    let seeds = seed_points(rng, cfg.run.seeds as usize, c.base().lattice());
    let results: Vec<(f64, f64)> = {
        use rayon::prelude::*;
        seeds
            .par_iter()
            .map(|x| lyapunov::top_bottom_exponents(&c, x, n))
            .collect::<Result<_, _>>()?
    };
    let tops: Vec<f64> = results.iter().map(|r| r.0).collect();
    let bottoms: Vec<f64> = results.iter().map(|r| r.1).collect();
    report.put("lambda_plus", serde_json::json!(tops));
    report.put("lambda_minus", serde_json::json!(bottoms));
    report.put_f64(
        "lambda_plus_mean",
        tops.iter().sum::<f64>() / tops.len() as f64,
    );
    report.put_f64(
        "lambda_minus_mean",
        bottoms.iter().sum::<f64>() / bottoms.len() as f64,
    );
    let spread = tops
        .iter()
        .zip(&bottoms)
        .map(|(t, b)| t - b)
        .fold(0.0f64, f64::max);
    report.put_f64("max_top_bottom_spread", spread);
    report.put("orbit_length", n);
    let history = lyapunov::top_bottom_history(&c, &seeds[0], n, cfg.run.history_samples)?;
    // Convergence diagnostic: the gap between the full-length and
    // half-length estimates against the 10/√n heuristic band (reported,
    // not asserted).
    let last = history.last().copied();
    let half = history
        .iter()
        .min_by_key(|(k, _, _)| (2 * k - n).unsigned_abs())
        .copied();
    if let (Some((_, top_n, _)), Some((_, top_half, _))) = (last, half) {
        report.put_f64("half_length_gap", (top_n - top_half).abs());
        report.put_f64("heuristic_band", 10.0 / (n as f64).sqrt());
    }
    let rows: Vec<Vec<f64>> = history
        .into_iter()
        .map(|(k, top, bottom)| vec![k as f64, top, bottom, top - bottom])
        .collect();
    let file = write_csv(
        out_dir,
        "convergence.csv",
        &["n", "lambda_plus", "lambda_minus", "logK_over_n"],
        &rows,
    )?;
    report.files.push(file);
    Ok(())
}

fn cmd_periodic(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    report: &mut ReportRecord,
) -> Result<(), RunnerError> {
    let c = build_cocycle(cfg)?;
    let scan = lyapunov::one_exponent_test(&c, cfg.run.max_period, cfg.run.tolerance)?;
    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for period in 1..=cfg.run.max_period {
        for p in c.base().periodic_points(period)? {
            if !seen.insert(p.clone()) {
                continue;
            }
            let exps = lyapunov::periodic_exponents(&c, &p, period)?;
            let [x1, x2] = p.coords_f64();
            rows.push(vec![
                period as f64,
                x1,
                x2,
                exps[0],
                *exps.last().unwrap(),
                exps[0] - exps.last().unwrap(),
            ]);
        }
    }
    let file = write_csv(
        out_dir,
        "periodic_exponents.csv",
        &["period", "x1", "x2", "lambda_top", "lambda_bottom", "gap"],
        &rows,
    )?;
    report.files.push(file);
    report.put("pass", scan.pass);
    report.put_f64("max_gap", scan.gap);
    report.put("points_checked", scan.points_checked);
    if let Some(worst) = &scan.worst_point {
        let [x1, x2] = worst.coords_f64();
        report.put("worst_point", serde_json::json!([x1, x2]));
        report.put("worst_period", scan.worst_period);
    }
    let origin = TorusPoint::origin(c.base().lattice());
    if c.base().apply(&origin, 1)? == origin {
        let exps = lyapunov::periodic_exponents(&c, &origin, 1)?;
        report.put("fixed_point_exponents", serde_json::json!(exps));
    }
    Ok(())
}

fn cmd_distortion(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    report: &mut ReportRecord,
) -> Result<(), RunnerError> {
    let c = build_cocycle(cfg)?;
    let grid = uniform_grid(c.base().lattice(), cfg.run.grid[0], cfg.run.grid[1]);
    let cert = subadditive::distortion_growth_certificate(
        &c,
        cfg.run.xi,
        cfg.run.eps_rate,
        &grid,
        cfg.run.n_max,
    )?;
    let rows: Vec<Vec<f64>> = cert
        .profile
        .iter()
        .map(|(n, log_k)| vec![*n as f64, *log_k])
        .collect();
    let file = write_csv(out_dir, "distortion.csv", &["n", "max_log_K"], &rows)?;
    report.files.push(file);
    report.put("pass", cert.pass);
    report.put_f64("c_eps", cert.c_eps);
    report.put_f64("measured_rate", cert.measured_rate);
    report.put_f64("xi", cfg.run.xi);
    report.put_f64("eps_rate", cfg.run.eps_rate);
    Ok(())
}

fn cmd_holonomy(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    rng: &mut ChaCha8Rng,
    report: &mut ReportRecord,
) -> Result<(), RunnerError> {
    let c = build_cocycle(cfg)?;
    let grid = uniform_grid(c.base().lattice(), cfg.run.grid[0], cfg.run.grid[1]);
    let engine = HolonomyEngine::new(&c, &grid)?;
    let lattice = c.base().lattice();
    let d = cfg.run.leaf_distance;
    let triples: Vec<(TorusPoint, f64, f64)> = (0..cfg.run.triples)
        .map(|_| {
            (
                TorusPoint::from_f64(
                    rng.gen_range(0.0..lattice.period(0) as f64),
                    rng.gen_range(0.0..lattice.period(1) as f64),
                    lattice,
                ),
                rng.gen_range(-d..d),
                rng.gen_range(-d..d),
            )
        })
        .collect();
    let axioms = engine.verify_axioms(&triples, cfg.run.tolerance)?;
    let sample = engine.stable_holonomy(
        &triples[0].0,
        &c.base().stable_point(&triples[0].0, triples[0].1)?,
        cfg.run.tolerance * 1e-2,
    )?;
    let slope = log_slope(&sample.increment_norms);
    let rows: Vec<Vec<f64>> = sample
        .increment_norms
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i as f64, *v])
        .collect();
    let file = write_csv(out_dir, "increments.csv", &["i", "increment_norm"], &rows)?;
    report.files.push(file);
    report.put("pass", axioms.pass);
    report.put("triples", axioms.triples);
    report.put_f64("max_composition_defect", axioms.max_composition_defect);
    report.put_f64("max_equivariance_defect", axioms.max_equivariance_defect);
    report.put_f64("holder_constant", axioms.holder_constant);
    report.put_f64("max_uniqueness_defect", axioms.max_uniqueness_defect);
    report.put_f64("theta", engine.theta());
    report.put_f64("bunching_margin", engine.margin());
    if let Some(slope) = slope {
        report.put_f64("increment_slope", slope);
        report.put_f64("increment_slope_bound", engine.theta().ln() + 0.05);
    }
    if !axioms.pass {
        return Err(RunnerError::Numeric {
            kind: "HolonomyAxiomDefect",
            detail: format!(
                "composition {:.3e} / equivariance {:.3e} above tolerance {:.3e}",
                axioms.max_composition_defect, axioms.max_equivariance_defect, axioms.tolerance
            ),
        });
    }
    Ok(())
}

fn cmd_pairs(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    report: &mut ReportRecord,
) -> Result<(), RunnerError> {
    let c = build_cocycle(cfg)?;
    if c.fiber_dim() != 2 {
        return Err(RunnerError::Invalid(
            "invariant-pairs needs a 2D fiber".into(),
        ));
    }
    let field = reduction::invariant_line_pair_field(
        &c,
        cfg.run.grid[0],
        cfg.run.grid[1],
        cfg.run.tolerance,
    )?;
    let rows: Vec<Vec<f64>> = field
        .grid
        .iter()
        .zip(&field.pairs)
        .zip(&field.per_point_residual)
        .map(|((p, pair), res)| {
            let [x1, x2] = p.coords_f64();
            vec![x1, x2, pair[0], pair[1], *res]
        })
        .collect();
    let file = write_csv(
        out_dir,
        "pair_field.csv",
        &["x1", "x2", "angle1", "angle2", "residual"],
        &rows,
    )?;
    report.files.push(file);
    let monodromy = field.monodromy();
    report.put_f64("residual", field.residual);
    report.put("x1_cycle_swaps", monodromy.x1_swaps);
    report.put("x2_cycle_swaps", monodromy.x2_swaps);
    report.put_f64("max_step_jump", monodromy.max_step_jump);
    Ok(())
}

fn cmd_structure(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    report: &mut ReportRecord,
) -> Result<(), RunnerError> {
    let c = build_cocycle(cfg)?;
    let barycenter = match cfg.run.barycenter.as_str() {
        "ball" => BarycenterKind::MinimalBall,
        "mean" => BarycenterKind::KarcherMean,
        other => {
            return Err(RunnerError::Invalid(format!(
                "unknown barycenter `{other}`"
            )))
        }
    };
    let field = reduction::invariant_conformal_structure(
        &c,
        &ConformalStructure::identity(c.fiber_dim()),
        cfg.run.grid[0],
        cfg.run.grid[1],
        cfg.run.window,
        cfg.run.distortion_cap,
        cfg.run.tolerance,
        barycenter,
    )?;
    let rows: Vec<Vec<f64>> = field
        .grid
        .iter()
        .zip(&field.structures)
        .map(|(p, tau)| {
            let [x1, x2] = p.coords_f64();
            let m = tau.matrix();
            vec![x1, x2, m[(0, 0)], m[(0, 1)], m[(1, 1)]]
        })
        .collect();
    let file = write_csv(
        out_dir,
        "structure_field.csv",
        &["x1", "x2", "m11", "m12", "m22"],
        &rows,
    )?;
    report.files.push(file);
    report.put_f64("max_defect", field.max_defect);
    report.put_f64("max_window_distortion", field.max_window_distortion);
    Ok(())
}

fn cmd_subadd(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    report: &mut ReportRecord,
) -> Result<(), RunnerError> {
    let c = build_cocycle(cfg)?;
    let drift = -(cfg.run.xi + cfg.run.eps_rate);
    let family = match cfg.run.subadd_family.as_str() {
        "logk" => SubadditiveFamily::LogDistortion { cocycle: &c, drift },
        "lognorm" => SubadditiveFamily::LogNorm { cocycle: &c, drift },
        other => {
            return Err(RunnerError::Invalid(format!(
                "unknown subadd_family `{other}`"
            )))
        }
    };
    let grid = default_subadd_grid(
        c.base(),
        cfg.run.grid[0],
        cfg.run.grid[1],
        cfg.run.max_period,
    );
    report.put("grid_points", grid.len());
    report.put_f64("drift", drift);
    let (level, profile) = match subadditive::find_negative_level(&family, &grid, cfg.run.n_max) {
        Ok(found) => found,
        Err(e @ SubadditiveError::NotFound { .. }) => {
            // Still emit the diagnostic profile before reporting failure.
            let profile = subadditive::negativity_profile(&family, &grid, cfg.run.n_max)?;
            let rows: Vec<Vec<f64>> = profile
                .iter()
                .enumerate()
                .map(|(i, v)| vec![(i + 1) as f64, *v])
                .collect();
            let file = write_csv(out_dir, "subadd.csv", &["n", "max_a_n"], &rows)?;
            report.files.push(file);
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let rows: Vec<Vec<f64>> = profile
        .iter()
        .enumerate()
        .map(|(i, v)| vec![(i + 1) as f64, *v])
        .collect();
    let file = write_csv(out_dir, "subadd.csv", &["n", "max_a_n"], &rows)?;
    report.files.push(file);
    report.put("negative_level", level);
    report.put_f64("max_at_level", profile[level - 1]);
    Ok(())
}

fn cmd_growth(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    report: &mut ReportRecord,
) -> Result<(), RunnerError> {
    let c = build_cocycle(cfg)?;
    if cfg.run.growth_min_pow >= cfg.run.growth_max_pow {
        return Err(RunnerError::Invalid(
            "growth_min_pow must be below growth_max_pow".into(),
        ));
    }
    let n_list: Vec<i64> = (cfg.run.growth_min_pow..=cfg.run.growth_max_pow)
        .map(|k| 1i64 << k)
        .collect();
    let grid = uniform_grid(c.base().lattice(), cfg.run.grid[0], cfg.run.grid[1]);
    let fit = reduction::polynomial_growth_fit(&c, &grid, &n_list)?;
    let rows: Vec<Vec<f64>> = fit
        .rows
        .iter()
        .map(|(n, norm, k)| vec![*n as f64, *norm, *k])
        .collect();
    let file = write_csv(
        out_dir,
        "growth.csv",
        &["n", "max_log_norm", "max_log_K"],
        &rows,
    )?;
    report.files.push(file);
    report.put_f64("norm_slope", fit.norm_slope);
    report.put_f64("distortion_slope", fit.distortion_slope);
    report.put("fiber_dim", c.fiber_dim());
    report.put(
        "norm_slope_below_dim",
        fit.norm_slope < c.fiber_dim() as f64,
    );
    Ok(())
}

fn cmd_example46(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    rng: &mut ChaCha8Rng,
    report: &mut ReportRecord,
) -> Result<(), RunnerError> {
    if cfg.cocycle.kind != "example46" {
        return Err(RunnerError::Invalid(
            "the example46 battery needs kind = example46".into(),
        ));
    }
    let epsilon = cfg
        .cocycle
        .epsilon
        .ok_or_else(|| RunnerError::Invalid("example46 needs `epsilon`".into()))?;
    let fam = example46_family(cfg.base.matrix, epsilon)?;
    let plane = &fam.plane;

    // Exact fixed-point exponents.
    let origin = TorusPoint::origin(plane.base().lattice());
    let exps = lyapunov::periodic_exponents(plane, &origin, 1)?;
    report.put("fixed_point_exponents", serde_json::json!(exps));
    report.put_f64("log_one_plus_eps", (1.0 + epsilon).ln());
    report.put_f64("log_one_minus_eps", (1.0 - epsilon).ln());

    // Fiber bunching margin on the config grid.
    let grid = uniform_grid(plane.base().lattice(), cfg.run.grid[0], cfg.run.grid[1]);
    let margin = plane.fiber_bunching_margin(&grid, plane.beta())?;
    report.put_f64("bunching_margin", margin.margin);

    // Almost-everywhere exponents against the quadrature value.
    let oracle = ((1.0 + (1.0 - epsilon * epsilon).sqrt()) / 2.0).ln();
    let seeds = seed_points(rng, cfg.run.seeds as usize, plane.base().lattice());
    let results: Vec<(f64, f64)> = {
        use rayon::prelude::*;
        seeds
            .par_iter()
            .map(|x| lyapunov::top_bottom_exponents(plane, x, cfg.run.orbit_length))
            .collect::<Result<_, _>>()?
    };
    let tops: Vec<f64> = results.iter().map(|r| r.0).collect();
    let bottoms: Vec<f64> = results.iter().map(|r| r.1).collect();
    let worst_top = tops
        .iter()
        .map(|t| (t - oracle).abs())
        .fold(0.0f64, f64::max);
    let worst_bottom = bottoms
        .iter()
        .map(|b| (b - oracle).abs())
        .fold(0.0f64, f64::max);
    report.put("lambda_plus", serde_json::json!(tops));
    report.put("lambda_minus", serde_json::json!(bottoms));
    report.put_f64("ae_exponent_oracle", oracle);
    report.put_f64("max_deviation_from_oracle", worst_top.max(worst_bottom));

    // Periodic exponent gaps: the fixed point carries two exponents even
    // though the volume carries one.
    let scan = lyapunov::one_exponent_test(plane, 1, cfg.run.tolerance)?;
    report.put_f64("periodic_exponent_gap", scan.gap);
    report.put_f64(
        "expected_fixed_point_gap",
        ((1.0 + epsilon) / (1.0 - epsilon)).ln(),
    );

    // Distortion growth rate at the fixed point.
    let mut rate_grid = vec![origin.clone()];
    rate_grid.push(TorusPoint::from_f64(0.37, 0.61, plane.base().lattice()));
    let cert = subadditive::distortion_growth_certificate(
        plane,
        cfg.run.xi,
        cfg.run.eps_rate,
        &rate_grid,
        cfg.run.n_max.max(64),
    )?;
    report.put("distortion_certificate_pass", cert.pass);
    report.put_f64("distortion_growth_rate", cert.measured_rate);

    // Plane form against the cover product form on a cover grid.
    let cover_grid = uniform_grid(fam.cover4_product.base().lattice(), 50, 50);
    let mut cover_defect: f64 = 0.0;
    for x in &cover_grid {
        let projected =
            TorusPoint::from_rationals(x.coords()[0], x.coords()[1], plane.base().lattice());
        let diff = (plane.eval(&projected) - fam.cover4_product.eval(x)).norm();
        cover_defect = cover_defect.max(diff);
    }
    report.put_f64("cover_consistency_defect", cover_defect);

    // Invariant pair field and its monodromy.
    let field = reduction::invariant_line_pair_field(
        plane,
        cfg.run.grid[0],
        cfg.run.grid[1],
        cfg.run.tolerance,
    )?;
    let mut analytic_error: f64 = 0.0;
    for (x, pair) in field.grid.iter().zip(&field.pairs) {
        analytic_error = analytic_error.max(reduction::pair_dist(
            *pair,
            reduction::example46_expected_pair(x),
        ));
    }
    let monodromy = field.monodromy();
    report.put_f64("pair_field_residual", field.residual);
    report.put_f64("pair_field_analytic_error", analytic_error);
    report.put("x1_cycle_swaps", monodromy.x1_swaps);
    report.put("x2_cycle_swaps", monodromy.x2_swaps);
    let rows: Vec<Vec<f64>> = field
        .grid
        .iter()
        .zip(&field.pairs)
        .zip(&field.per_point_residual)
        .map(|((p, pair), res)| {
            let [x1, x2] = p.coords_f64();
            vec![x1, x2, pair[0], pair[1], *res]
        })
        .collect();
    let file = write_csv(
        out_dir,
        "pair_field.csv",
        &["x1", "x2", "angle1", "angle2", "residual"],
        &rows,
    )?;
    report.files.push(file);
    Ok(())
}
