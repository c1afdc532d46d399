//! Experiment runner: model calibration, walks, branching-random-walk
//! replications, tail curves, moment comparisons, Green sums, the two-stage
//! rare-event estimator and the acceptance selftest.
//!
//! Every run is seeded explicitly and replications derive per-index RNG
//! streams, so identical invocations produce byte-identical artifacts
//! regardless of the worker count (`KBRW_WORKERS`).
//!
//! Exit codes: 0 success, 1 selftest failure, 2 validation error,
//! 3 resource/censoring error, 4 solver non-convergence.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use kbrw_core::acceptance::{run_all, AcceptanceConfig};
use kbrw_core::brw::{run_brw, BrwConfig, Caps};
use kbrw_core::error::Error as CoreError;
use kbrw_core::estimators::{
    exact_tail_curve_m, moment_h_direct, moment_h_exact, moment_h_many_to_one, moment_zak_direct,
    moment_zak_exact, moment_zak_many_to_one, tail_curve_m, tail_curve_z, two_stage_tail,
    TailCurve,
};
use kbrw_core::seed::replication_rng;
use kbrw_core::step_model::{CriticalFamily, StepModel, TiltedStep};
use kbrw_core::walk::{run_two_barrier_walk, AffineMap, GreenWeight, LatticeStrip};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "kbrw",
    version,
    about = "Critical killed branching random walk: calibration, simulation, tail estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate a family to criticality and print rho, phi(rho) and the
    /// criticality residual.
    Calibrate(CalibrateArgs),
    /// Simulate two-barrier walks and emit their functionals as CSV.
    Walk(WalkArgs),
    /// Simulate killed branching random walk replications; one CSV row each.
    Brw(BrwArgs),
    /// Empirical tail curve of the total progeny.
    TailZ(TailZArgs),
    /// Tail curve of the maximum position (Monte Carlo or exact lattice).
    TailMax(TailMaxArgs),
    /// Compare moment sources (exact lattice, direct tree, many-to-one).
    Moments(MomentsArgs),
    /// Exact weighted Green sums of the centered lattice walk over a grid.
    Green(GreenArgs),
    /// Two-stage lower-bound estimate of P(Z > n).
    TwoStage(TwoStageArgs),
    /// Run the full acceptance suite; one PASS/FAIL line per criterion.
    Selftest(SelftestArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Model config file (JSON: {family, params, b}).
    #[arg(long, conflicts_with_all = ["family", "b", "sigma"])]
    model: Option<PathBuf>,
    /// Build a critical model of this family instead of loading a file.
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// Branching factor for --family.
    #[arg(long)]
    b: Option<u32>,
    /// Standard deviation for --family gaussian.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    TwoPoint,
    Gaussian,
}

impl ModelArgs {
    fn load(&self) -> Result<StepModel, CoreError> {
        if let Some(path) = &self.model {
            let text = fs::read_to_string(path).map_err(|e| {
                CoreError::Parameter(format!("cannot read model file {}: {e}", path.display()))
            })?;
            return serde_json::from_str(&text)
                .map_err(|e| CoreError::Parameter(format!("bad model file: {e}")));
        }
        let family = self.family.ok_or_else(|| {
            CoreError::Parameter("either --model FILE or --family is required".to_string())
        })?;
        let b = self
            .b
            .ok_or_else(|| CoreError::Parameter("--family requires --b".to_string()))?;
        match family {
            FamilyArg::TwoPoint => StepModel::calibrate_critical(CriticalFamily::TwoPoint, b),
            FamilyArg::Gaussian => {
                StepModel::calibrate_critical(CriticalFamily::Gaussian { sigma: self.sigma }, b)
            }
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long)]
    b: u32,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

#[derive(Args)]
struct WalkArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Walk the tilted (centered) law or the base law.
    #[arg(long, value_enum, default_value_t = LawArg::Tilted)]
    law: LawArg,
    #[arg(long)]
    start: f64,
    #[arg(long)]
    lower: f64,
    #[arg(long)]
    upper: f64,
    #[arg(long)]
    reps: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = kbrw_core::walk::DEFAULT_MAX_STEPS)]
    max_steps: u64,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LawArg {
    Base,
    Tilted,
}

#[derive(Args)]
struct BrwArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Root position.
    #[arg(long)]
    x: f64,
    /// Counting level a.
    #[arg(long)]
    a: Option<f64>,
    /// Absorbing top level k.
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    reps: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = Caps::default().max_generations)]
    max_generations: u64,
    #[arg(long, default_value_t = Caps::default().max_population)]
    max_population: u64,
    #[arg(long, default_value_t = Caps::default().max_total_counted)]
    max_counted: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TailZArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.0)]
    x: f64,
    /// Comma-separated ascending thresholds, e.g. 10,100,1000.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<u64>,
    #[arg(long)]
    reps: u64,
    #[arg(long)]
    seed: u64,
    /// Write the CSV curve here and print a JSON summary on stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TailMaxArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.0)]
    x: f64,
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the exact lattice solver instead of Monte Carlo.
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MomentsArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Which count to compare: the strip progeny Z(a,k) or the
    /// top-absorption count H(k).
    #[arg(long, value_enum, default_value_t = QuantityArg::Zak)]
    quantity: QuantityArg,
    /// Start level for zak.
    #[arg(long)]
    y: Option<i64>,
    /// Count level for zak.
    #[arg(long, default_value_t = 0)]
    a: i64,
    /// Root position for hk.
    #[arg(long)]
    x: Option<i64>,
    #[arg(long)]
    k: i64,
    #[arg(long, default_value_t = 100_000)]
    reps: u64,
    /// Direct tree replications (defaults to reps).
    #[arg(long)]
    direct_reps: Option<u64>,
    #[arg(long)]
    seed: u64,
    /// Also report the exact second moment (zak only).
    #[arg(long)]
    second: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum QuantityArg {
    Zak,
    Hk,
}

#[derive(Args)]
struct GreenArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    k_grid: Vec<i64>,
    #[arg(long, default_value_t = 2)]
    x: i64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TwoStageArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    x: i64,
    #[arg(long, default_value_t = 0)]
    a: i64,
    #[arg(long)]
    n: f64,
    #[arg(long, default_value_t = 50_000)]
    reps1: u64,
    #[arg(long, default_value_t = 1_000)]
    reps2: u64,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct SelftestArgs {
    /// Master seed of the suite.
    #[arg(long)]
    seed: Option<u64>,
    /// Replications for the Monte Carlo tail band.
    #[arg(long)]
    theorem_reps: Option<u64>,
}

/// FNV-1a over the canonical config JSON; embedded in every artifact.
fn config_hash(config: &serde_json::Value) -> String {
    let bytes = config.to_string();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn artifact_header(config: &serde_json::Value) -> String {
    format!("# kbrw {VERSION} config_hash={}\n", config_hash(config))
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), CoreError> {
    match out {
        Some(path) => fs::write(path, content)
            .map_err(|e| CoreError::Parameter(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn model_json(model: &StepModel) -> serde_json::Value {
    serde_json::to_value(model).expect("model serializes")
}

fn curve_summary(
    curve: &TailCurve,
    config: &serde_json::Value,
    seed: u64,
    started: Instant,
    out: &Option<PathBuf>,
) -> serde_json::Value {
    json!({
        "model": config["model"],
        "rho": curve.rho,
        "seed": seed,
        "reps": curve.reps,
        "censored_reps": curve.censored_reps,
        "excluded": curve.excluded,
        "runtime_s": started.elapsed().as_secs_f64(),
        "config_hash": config_hash(config),
        "version": VERSION,
        "out": out.as_ref().map(|p| p.display().to_string()),
    })
}

fn run(cli: Cli) -> Result<i32, CoreError> {
    match cli.command {
        Command::Calibrate(args) => {
            let model = match args.family {
                FamilyArg::TwoPoint => {
                    StepModel::calibrate_critical(CriticalFamily::TwoPoint, args.b)?
                }
                FamilyArg::Gaussian => StepModel::calibrate_critical(
                    CriticalFamily::Gaussian { sigma: args.sigma },
                    args.b,
                )?,
            };
            let config = model_json(&model);
            let out = json!({
                "model": config,
                "rho": model.rho_solved(),
                "phi_at_rho": model.phi_at_rho(),
                "residual": model.criticality_residual()?,
                "residual_convention":
                    "positive = supercritical (survival has positive probability), \
                     negative = subcritical (almost-sure extinction), zero = critical",
                "version": VERSION,
                "config_hash": config_hash(&config),
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            Ok(0)
        }
        Command::Walk(args) => {
            let model = args.model.load()?;
            let config = json!({
                "cmd": "walk", "model": model_json(&model),
                "law": match args.law { LawArg::Base => "base", LawArg::Tilted => "tilted" },
                "start": args.start, "lower": args.lower, "upper": args.upper,
                "reps": args.reps, "seed": args.seed, "max_steps": args.max_steps,
            });
            let tilted = TiltedStep::new(&model)?;
            let mut csv = artifact_header(&config);
            csv.push_str("rep,exit,steps,overshoot,undershoot,green_top,green_bottom\n");
            for i in 0..args.reps {
                let mut rng = replication_rng(args.seed, i);
                let result = match args.law {
                    LawArg::Tilted => run_two_barrier_walk(
                        &tilted,
                        args.start,
                        args.lower,
                        args.upper,
                        AffineMap::identity(),
                        &mut rng,
                        args.max_steps,
                    ),
                    LawArg::Base => run_two_barrier_walk(
                        &model,
                        args.start,
                        args.lower,
                        args.upper,
                        AffineMap::identity(),
                        &mut rng,
                        args.max_steps,
                    ),
                };
                match result {
                    Ok(w) => {
                        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                        let _ = writeln!(
                            csv,
                            "{i},{},{},{},{},{},{}",
                            w.exit,
                            w.steps_taken,
                            opt(w.overshoot),
                            opt(w.undershoot),
                            opt(w.green_top),
                            opt(w.green_bottom)
                        );
                    }
                    Err(CoreError::CensoredWalk { steps, .. }) => {
                        let _ = writeln!(csv, "{i},censored,{steps},,,,");
                    }
                    Err(e) => return Err(e),
                }
            }
            emit(&args.out, &csv)?;
            Ok(0)
        }
        Command::Brw(args) => {
            let model = args.model.load()?;
            let caps = Caps {
                max_generations: args.max_generations,
                max_population: args.max_population,
                max_total_counted: args.max_counted,
            };
            let mut config_builder = BrwConfig::new(model.clone(), args.x)?.with_caps(caps);
            if let Some(a) = args.a {
                config_builder = config_builder.with_count_level(a)?;
            }
            if let Some(k) = args.k {
                config_builder = config_builder.with_top_level(k)?;
            }
            let brw_config = config_builder;
            let config = json!({
                "cmd": "brw", "model": model_json(&model), "x": args.x,
                "a": args.a, "k": args.k, "reps": args.reps, "seed": args.seed,
                "caps": {"max_generations": caps.max_generations,
                          "max_population": caps.max_population,
                          "max_total_counted": caps.max_total_counted},
            });
            let mut csv = artifact_header(&config);
            csv.push_str("rep,z,z0,zak,hk,m,t_ext,censored\n");
            for i in 0..args.reps {
                let mut rng = replication_rng(args.seed, i);
                let run = run_brw(&brw_config, &mut rng)?;
                let censored = run
                    .censored
                    .map(|c| format!("{c:?}"))
                    .unwrap_or_default();
                let _ = writeln!(
                    csv,
                    "{i},{},{},{},{},{},{},{}",
                    run.z, run.z0, run.zak, run.hk, run.m, run.t_ext, censored
                );
            }
            emit(&args.out, &csv)?;
            Ok(0)
        }
        Command::TailZ(args) => {
            let started = Instant::now();
            let model = args.model.load()?;
            let brw_config = BrwConfig::new(model.clone(), args.x)?;
            let config = json!({
                "cmd": "tail-z", "model": model_json(&model), "x": args.x,
                "grid": args.grid, "reps": args.reps, "seed": args.seed,
            });
            let curve = tail_curve_z(&brw_config, &args.grid, args.reps, args.seed)?;
            let csv = format!("{}{}", artifact_header(&config), curve.to_csv());
            emit(&args.out, &csv)?;
            if args.out.is_some() {
                let summary = curve_summary(&curve, &config, args.seed, started, &args.out);
                println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
            }
            Ok(0)
        }
        Command::TailMax(args) => {
            let started = Instant::now();
            let model = args.model.load()?;
            let config = json!({
                "cmd": "tail-max", "model": model_json(&model), "x": args.x,
                "grid": args.grid, "reps": args.reps, "seed": args.seed,
                "exact": args.exact,
            });
            let curve = if args.exact {
                let grid: Vec<i64> = args.grid.iter().map(|&k| k as i64).collect();
                exact_tail_curve_m(&model, args.x as i64, &grid)?
            } else {
                if args.reps == 0 {
                    return Err(CoreError::Parameter(
                        "--reps required without --exact".to_string(),
                    ));
                }
                let brw_config = BrwConfig::new(model.clone(), args.x)?;
                tail_curve_m(&brw_config, &args.grid, args.reps, args.seed)?
            };
            let csv = format!("{}{}", artifact_header(&config), curve.to_csv());
            emit(&args.out, &csv)?;
            if args.out.is_some() {
                let summary = curve_summary(&curve, &config, args.seed, started, &args.out);
                println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
            }
            Ok(0)
        }
        Command::Moments(args) => {
            let model = args.model.load()?;
            let direct_reps = args.direct_reps.unwrap_or(args.reps);
            let config = json!({
                "cmd": "moments", "model": model_json(&model),
                "quantity": match args.quantity { QuantityArg::Zak => "zak", QuantityArg::Hk => "hk" },
                "y": args.y, "a": args.a, "x": args.x, "k": args.k,
                "reps": args.reps, "direct_reps": direct_reps, "seed": args.seed,
            });
            let mut reports = Vec::new();
            match args.quantity {
                QuantityArg::Zak => {
                    let y = args.y.ok_or_else(|| {
                        CoreError::Parameter("--y required for zak".to_string())
                    })?;
                    reports.push(("exact", moment_zak_exact(&model, y, args.a, args.k)?));
                    reports.push((
                        "many_to_one",
                        moment_zak_many_to_one(
                            &model,
                            y as f64,
                            args.a as f64,
                            args.k as f64,
                            args.reps,
                            args.seed,
                            kbrw_core::walk::DEFAULT_MAX_STEPS,
                        )?,
                    ));
                    reports.push((
                        "direct",
                        moment_zak_direct(
                            &model,
                            y as f64,
                            args.a as f64,
                            args.k as f64,
                            Caps::default(),
                            direct_reps,
                            args.seed ^ 0xd1,
                        )?,
                    ));
                    if args.second {
                        let m2 = kbrw_core::brw::exact_brw_second_moment(
                            &model, args.a, args.k, y,
                        )?;
                        let mut report = kbrw_core::estimators::MomentReport::exact(m2, 1e-10);
                        report.scaled = Some(
                            (args.k * args.k) as f64
                                * (-2.0 * model.rho_solved() * (args.k - args.a) as f64).exp()
                                * m2,
                        );
                        reports.push(("exact_second", report));
                    }
                }
                QuantityArg::Hk => {
                    let x = args.x.ok_or_else(|| {
                        CoreError::Parameter("--x required for hk".to_string())
                    })?;
                    reports.push(("exact", moment_h_exact(&model, x, args.k)?));
                    reports.push((
                        "many_to_one",
                        moment_h_many_to_one(
                            &model,
                            x as f64,
                            args.k as f64,
                            args.reps,
                            args.seed,
                            kbrw_core::walk::DEFAULT_MAX_STEPS,
                        )?,
                    ));
                    reports.push((
                        "direct",
                        moment_h_direct(
                            &model,
                            x as f64,
                            args.k as f64,
                            Caps::default(),
                            direct_reps,
                            args.seed ^ 0xd1,
                        )?,
                    ));
                }
            }
            let out = json!({
                "config": config,
                "reports": reports
                    .iter()
                    .map(|(label, r)| json!({"label": label, "report": r}))
                    .collect::<Vec<_>>(),
                "version": VERSION,
                "config_hash": config_hash(&config),
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            Ok(0)
        }
        Command::Green(args) => {
            let model = args.model.load()?;
            let tilted = TiltedStep::new(&model)?;
            let law = tilted.lattice_law().ok_or_else(|| {
                CoreError::Parameter("green sums need a lattice model".to_string())
            })?;
            let config = json!({
                "cmd": "green", "model": model_json(&model),
                "k_grid": args.k_grid, "x": args.x,
            });
            let mut csv = artifact_header(&config);
            csv.push_str("k,which,value,scaled\n");
            for &k in &args.k_grid {
                let strip = LatticeStrip::new(0, k, law.clone())?;
                let q_a = strip.exact_green_sum(0, GreenWeight::TopExit)?;
                let q_b = strip.exact_green_sum(k - args.x, GreenWeight::TopExit)?;
                let q_c = strip.exact_green_sum(k - args.x, GreenWeight::BottomExit)?;
                let xf = args.x as f64;
                let _ = writeln!(csv, "{k},from_zero_top,{q_a},{}", q_a * k as f64);
                let _ = writeln!(
                    csv,
                    "{k},from_top_top,{q_b},{}",
                    q_b * (k * k) as f64 / (1.0 + xf)
                );
                let _ = writeln!(csv, "{k},from_top_bottom,{q_c},{}", q_c / (1.0 + xf));
            }
            emit(&args.out, &csv)?;
            Ok(0)
        }
        Command::TwoStage(args) => {
            let model = args.model.load()?;
            let config = json!({
                "cmd": "two-stage", "model": model_json(&model), "x": args.x,
                "a": args.a, "n": args.n, "reps1": args.reps1, "reps2": args.reps2,
                "seed": args.seed,
            });
            let est = two_stage_tail(
                &model,
                args.x,
                args.a,
                args.n,
                args.reps1,
                args.reps2,
                Caps::default(),
                args.seed,
            )?;
            let out = json!({
                "estimate": est,
                "note": "certified lower-bound construction, not a consistent tail estimator",
                "version": VERSION,
                "config_hash": config_hash(&config),
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            Ok(0)
        }
        Command::Selftest(args) => {
            let mut cfg = AcceptanceConfig::default();
            if let Some(seed) = args.seed {
                cfg.master_seed = seed;
            }
            if let Some(reps) = args.theorem_reps {
                cfg.theorem_reps = reps;
            }
            let results = run_all(&cfg);
            let mut failed = 0;
            for r in &results {
                println!("{}", r.line());
                if !r.passed {
                    failed += 1;
                }
            }
            println!(
                "{}/{} criteria passed",
                results.len() - failed,
                results.len()
            );
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}

fn exit_code(err: &CoreError) -> i32 {
    match err {
        CoreError::Domain(_)
        | CoreError::Parameter(_)
        | CoreError::Calibration(_)
        | CoreError::InfimumNotInterior(_) => 2,
        CoreError::Resource(_) | CoreError::CensoredWalk { .. } => 3,
        CoreError::Solver(_) | CoreError::Convergence(_) => 4,
    }
}

fn error_kind(err: &CoreError) -> &'static str {
    match err {
        CoreError::Domain(_) => "domain",
        CoreError::Parameter(_) => "parameter",
        CoreError::Calibration(_) => "calibration",
        CoreError::InfimumNotInterior(_) => "infimum_not_interior",
        CoreError::Solver(_) => "solver",
        CoreError::Convergence(_) => "convergence",
        CoreError::Resource(_) => "resource",
        CoreError::CensoredWalk { .. } => "censored_walk",
    }
}

fn main() -> ExitCode {
    if let Ok(workers) = std::env::var("KBRW_WORKERS") {
        match workers.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!(
                    "{}",
                    json!({"error": {"kind": "parameter",
                                      "message": format!("bad KBRW_WORKERS value {workers:?}")}})
                );
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(u8::try_from(code).unwrap_or(1)),
        Err(err) => {
            eprintln!(
                "{}",
                json!({"error": {"kind": error_kind(&err), "message": err.to_string()}})
            );
            ExitCode::from(u8::try_from(exit_code(&err)).unwrap_or(1))
        }
    }
}
