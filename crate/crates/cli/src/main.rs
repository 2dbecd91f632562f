//! emkit: energy-minimization toolkit command line.
//!
//! Subcommands: `ljopt` (cluster optimization), `em` (force-field
//! refinement pipelines), `analyze` (noncovalent-interaction reports from
//! PDB files), and `bench` (cluster benchmark against the reference table).
//!
//! Exit codes: 0 on success, 1 for numeric/runtime failures inside an
//! otherwise valid run, 2 for usage and input errors (bad flags, unreadable
//! or malformed files).

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use emkit_core::analysis::{analyze, parse_pdb, InteractionCriteria, Sections};
use emkit_core::bench::{run_benchmark, BenchOptions, ReferenceMinimaTable};
use emkit_core::config::{write_xyz, Configuration, XyzFrame};
use emkit_core::forcefield::{load_topology, FfForm, ForceFieldModel};
use emkit_core::global_opt::{
    basin_hopping, hybrid_sandwich, simulated_annealing, AnnealSchedule, BasinHopOptions,
};
use emkit_core::local_opt::{
    minimize_model, run_pipeline, Method, OptimizerOptions, PipelineReport, Stage, StageOutcome,
};
use emkit_core::potential::{LjCluster, PotentialModel};
use emkit_core::seeding::{make_seed, SeedMode, SeedSpec};

#[derive(Parser)]
#[command(
    name = "emkit",
    version,
    about = "Energy-minimization toolkit: cluster optimization, force-field refinement, and structure analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a Lennard-Jones cluster with a local or global method
    Ljopt(LjoptArgs),
    /// Run a force-field minimization pipeline on a topology + coordinates
    Em(EmArgs),
    /// Report noncovalent interactions found in a PDB structure
    Analyze(AnalyzeArgs),
    /// Basin-hop a range of cluster sizes against the reference minima
    Bench(BenchArgs),
}

#[derive(Args)]
struct LjoptArgs {
    /// Cluster size (number of atoms)
    #[arg(long)]
    n: usize,
    /// Initial structure: build_up, icosahedral, random_sphere, or big_bang
    #[arg(long, default_value = "icosahedral")]
    seed_mode: String,
    /// Seed for every stochastic part of the run
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    /// sd, cg, lbfgs, sa, bh, or sandwich
    #[arg(long, default_value = "lbfgs")]
    method: String,
    /// Write the best structure as XYZ
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the energy trace
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Local-method step budget
    #[arg(long, default_value_t = 10_000)]
    max_steps: usize,
    /// Local-method force tolerance
    #[arg(long, default_value_t = 1e-8)]
    force_tol: f64,
    /// Local-method energy-gain tolerance (0 disables)
    #[arg(long, default_value_t = 0.0)]
    energy_tol: f64,
    /// Annealing sweeps (sa, sandwich)
    #[arg(long, default_value_t = 120)]
    sa_sweeps: usize,
    /// Moves per sweep (sa, sandwich); 0 means one per atom
    #[arg(long, default_value_t = 0)]
    sa_moves: usize,
    /// Initial temperature (sa, sandwich)
    #[arg(long, default_value_t = 1.5)]
    sa_t0: f64,
    /// Final temperature (sa, sandwich)
    #[arg(long, default_value_t = 1e-3)]
    sa_t1: f64,
    /// Per-sweep geometric decay (sa, sandwich)
    #[arg(long, default_value_t = 0.95)]
    sa_decay: f64,
    /// Single-atom move radius (sa, sandwich)
    #[arg(long, default_value_t = 0.3)]
    sa_disp: f64,
    /// Basin-hopping iterations (bh)
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    /// Basin-hopping temperature (bh)
    #[arg(long, default_value_t = 0.8)]
    temperature: f64,
    /// Basin-hopping kick radius (bh)
    #[arg(long, default_value_t = 0.35)]
    disp: f64,
    /// Local pipeline before the annealing stage (sandwich)
    #[arg(long, default_value = "sd:3000")]
    pre: String,
    /// Local pipeline after the annealing stage (sandwich)
    #[arg(long, default_value = "cg:3000")]
    post: String,
}

#[derive(Args)]
struct EmArgs {
    /// Topology file
    #[arg(long)]
    topology: PathBuf,
    /// Starting coordinates (XYZ)
    #[arg(long)]
    coords: PathBuf,
    /// Stages as method:steps, comma separated
    #[arg(long, default_value = "sd:3000,cg:3000,sd:3000")]
    pipeline: String,
    /// Nonbonded cutoff distance
    #[arg(long, default_value_t = 12.0)]
    cutoff: f64,
    /// Per-step energy-gain stopping tolerance
    #[arg(long, default_value_t = 0.005)]
    de_tol: f64,
    /// Per-atom force stopping tolerance
    #[arg(long, default_value_t = 1.0)]
    force_tol: f64,
    /// Force-field functional form: amber or charmm
    #[arg(long, default_value = "amber")]
    form: String,
    /// Row label in the report (defaults to the coords file stem)
    #[arg(long)]
    label: Option<String>,
    /// Write the refined coordinates as XYZ
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Structure to analyze (PDB format)
    #[arg(long)]
    pdb: PathBuf,
    /// Comma-separated subset of hbond,salt,pi,helix,clique,circle
    #[arg(long, default_value = "hbond,salt,pi,helix,clique,circle")]
    sections: String,
    /// Line-oriented key-value output instead of the text report
    #[arg(long)]
    machine: bool,
    /// Hydrogen-acceptor distance ceiling
    #[arg(long, default_value_t = 2.5)]
    hbond_max: f64,
    /// Donor-hydrogen-acceptor angle floor (degrees)
    #[arg(long, default_value_t = 120.0)]
    hbond_angle: f64,
    /// Salt-bridge atom-pair ceiling
    #[arg(long, default_value_t = 5.0)]
    salt_max: f64,
    /// Ring-centroid ceiling for pi-pi stacks
    #[arg(long, default_value_t = 7.0)]
    pipi_max: f64,
    /// Cation-to-centroid ceiling for pi-cation contacts
    #[arg(long, default_value_t = 6.0)]
    pication_max: f64,
    /// Closest-charged-atom ceiling for clique edges
    #[arg(long, default_value_t = 10.0)]
    clique_max: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Smallest cluster size
    #[arg(long, default_value_t = 4)]
    n_min: usize,
    /// Largest cluster size
    #[arg(long, default_value_t = 15)]
    n_max: usize,
    /// Basin-hopping iterations per size
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    /// Basin-hopping temperature
    #[arg(long, default_value_t = 0.8)]
    temperature: f64,
    /// Basin-hopping kick radius
    #[arg(long, default_value_t = 0.35)]
    disp: f64,
    /// Run seed; each size derives its own stream from it
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    /// Relative gap under which a size counts as hit
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Include wall times (makes output non-reproducible)
    #[arg(long)]
    timings: bool,
    /// Reference table CSV; defaults to the bundled table
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Worker threads (also settable via EMKIT_THREADS)
    #[arg(long)]
    threads: Option<usize>,
}

/// Input and flag problems exit 2; numeric/runtime problems exit 1.
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ljopt(args) => cmd_ljopt(args),
        Command::Em(args) => cmd_em(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

/// Parses "sd:3000,cg:3000" into pipeline stages.
fn parse_pipeline(text: &str, energy_tol: f64, force_tol: f64) -> Result<Vec<Stage>, CliError> {
    let mut stages = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (method_str, steps_str) = part.split_once(':').ok_or_else(|| {
            usage(format!(
                "bad pipeline stage {part:?}, expected method:steps"
            ))
        })?;
        let method: Method = method_str.trim().parse().map_err(usage)?;
        let steps: usize = steps_str
            .trim()
            .parse()
            .map_err(|_| usage(format!("bad step count {:?}", steps_str.trim())))?;
        if steps == 0 {
            return Err(usage(format!("stage {part:?} has a zero step budget")));
        }
        stages.push(Stage::new(
            method,
            OptimizerOptions {
                max_steps: steps,
                energy_tol,
                force_tol,
                ..Default::default()
            },
        ));
    }
    if stages.is_empty() {
        return Err(usage("pipeline must contain at least one stage"));
    }
    Ok(stages)
}

fn write_structure(path: &PathBuf, config: &Configuration) -> Result<(), CliError> {
    let frame = XyzFrame::with_symbol(config.clone(), "Ar");
    write_xyz(path, &frame).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn write_text(path: &PathBuf, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn pipeline_trace_text(report: &PipelineReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# initial {:.9}", report.initial_energy);
    for stage in &report.stages {
        match &stage.outcome {
            StageOutcome::Completed(t) => {
                let _ = writeln!(out, "# stage {}", stage.name);
                for (i, e) in t.energies.iter().enumerate() {
                    let _ = writeln!(out, "{i} {e:.9}");
                }
            }
            StageOutcome::Failed { error } => {
                let _ = writeln!(out, "# stage {} failed: {error}", stage.name);
            }
        }
    }
    out
}

fn cmd_ljopt(args: LjoptArgs) -> Result<(), CliError> {
    if args.n < 2 {
        return Err(usage(format!("--n must be at least 2, got {}", args.n)));
    }
    if !["sd", "cg", "lbfgs", "sa", "bh", "sandwich"].contains(&args.method.as_str()) {
        return Err(usage(format!(
            "unknown method {:?}, expected sd, cg, lbfgs, sa, bh, or sandwich",
            args.method
        )));
    }
    let seed_mode: SeedMode = args.seed_mode.parse().map_err(usage)?;
    let seed = make_seed(&SeedSpec {
        n_atoms: args.n,
        mode: seed_mode,
        rng_seed: args.rng_seed,
        scale: 1.0,
    })
    .map_err(|e| usage(e.to_string()))?;
    let model = LjCluster::reduced(args.n);
    let initial_energy = model.energy(&seed).map_err(|e| runtime(e.to_string()))?;

    println!(
        "ljopt: n {}, seed {}, method {}, rng_seed {}",
        args.n,
        seed_mode.name(),
        args.method,
        args.rng_seed
    );
    println!("initial_energy {initial_energy:.9}");

    let local_opts = OptimizerOptions {
        max_steps: args.max_steps,
        energy_tol: args.energy_tol,
        force_tol: args.force_tol,
        ..Default::default()
    };

    match args.method.as_str() {
        "sd" | "cg" | "lbfgs" => {
            let method: Method = args.method.parse().map_err(usage)?;
            let trace = minimize_model(&model, &seed, method, &local_opts)
                .map_err(|e| runtime(e.to_string()))?;
            println!("final_energy {:.9}", trace.final_energy);
            println!("iterations {}", trace.iterations);
            println!("reason {}", trace.reason.name());
            if let Some(path) = &args.out {
                write_structure(path, &trace.final_config)?;
            }
            if let Some(path) = &args.trace {
                let mut text = String::new();
                for (i, e) in trace.energies.iter().enumerate() {
                    let _ = writeln!(text, "{i} {e:.9}");
                }
                write_text(path, &text)?;
            }
        }
        "sa" => {
            let schedule = AnnealSchedule {
                t_initial: args.sa_t0,
                t_final: args.sa_t1,
                decay: args.sa_decay,
                sweeps: args.sa_sweeps,
                moves_per_sweep: if args.sa_moves == 0 {
                    args.n
                } else {
                    args.sa_moves
                },
                max_displacement: args.sa_disp,
            };
            let trace = simulated_annealing(&model, &seed, &schedule, args.rng_seed)
                .map_err(|e| runtime(e.to_string()))?;
            let accepted = trace.steps.iter().filter(|s| s.accepted).count();
            println!("final_energy {:.9}", trace.best_energy);
            println!("moves {}", trace.steps.len());
            println!("accepted {accepted}");
            if let Some(path) = &args.out {
                write_structure(path, &trace.best_config)?;
            }
            if let Some(path) = &args.trace {
                write_text(path, &trace.summary_text())?;
            }
        }
        "bh" => {
            let opts = BasinHopOptions {
                iterations: args.iterations,
                temperature: args.temperature,
                max_displacement: args.disp,
                local_method: Method::Lbfgs,
                local_opts,
                rng_seed: args.rng_seed,
            };
            let trace = basin_hopping(&model, &seed, &opts).map_err(|e| runtime(e.to_string()))?;
            let accepted = trace.steps.iter().filter(|s| s.accepted).count();
            println!("final_energy {:.9}", trace.best_energy);
            println!("hops {}", trace.steps.len());
            println!("accepted {accepted}");
            if let Some(path) = &args.out {
                write_structure(path, &trace.best_config)?;
            }
            if let Some(path) = &args.trace {
                write_text(path, &trace.summary_text())?;
            }
        }
        "sandwich" => {
            let pre = parse_pipeline(&args.pre, args.energy_tol, args.force_tol)?;
            let post = parse_pipeline(&args.post, args.energy_tol, args.force_tol)?;
            let schedule = AnnealSchedule {
                t_initial: args.sa_t0,
                t_final: args.sa_t1,
                decay: args.sa_decay,
                sweeps: args.sa_sweeps,
                moves_per_sweep: if args.sa_moves == 0 {
                    args.n
                } else {
                    args.sa_moves
                },
                max_displacement: args.sa_disp,
            };
            let report = hybrid_sandwich(&model, &seed, &pre, &schedule, &post, args.rng_seed)
                .map_err(|e| runtime(e.to_string()))?;
            for stage in &report.stages {
                match &stage.outcome {
                    StageOutcome::Completed(t) => println!(
                        "stage {} {:.9} ({})",
                        stage.name, t.final_energy, t.iterations
                    ),
                    StageOutcome::Failed { error } => {
                        println!("stage {} failed: {error}", stage.name)
                    }
                }
            }
            println!("final_energy {:.9}", report.final_energy);
            if let Some(path) = &args.out {
                write_structure(path, &report.final_config)?;
            }
            if let Some(path) = &args.trace {
                write_text(path, &pipeline_trace_text(&report))?;
            }
        }
        other => {
            return Err(usage(format!(
                "unknown method {other:?}, expected sd, cg, lbfgs, sa, bh, or sandwich"
            )))
        }
    }
    Ok(())
}

fn cmd_em(args: EmArgs) -> Result<(), CliError> {
    let form: FfForm = args.form.parse().map_err(usage)?;
    let topology = load_topology(&args.topology).map_err(|e| usage(e.to_string()))?;
    let frame = emkit_core::config::read_xyz(&args.coords).map_err(|e| usage(e.to_string()))?;
    let start = frame.config;
    let stages = parse_pipeline(&args.pipeline, args.de_tol, args.force_tol)?;
    if !(args.cutoff > 0.0 && args.cutoff.is_finite()) {
        return Err(usage(format!(
            "--cutoff must be positive, got {}",
            args.cutoff
        )));
    }
    let model = ForceFieldModel::new(topology, form, Some(args.cutoff))
        .map_err(|e| usage(e.to_string()))?;

    let label = args.label.clone().unwrap_or_else(|| {
        args.coords
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "input".to_string())
    });

    println!(
        "em: topology {}, coords {}, form {}",
        args.topology.display(),
        args.coords.display(),
        form
    );
    println!("pipeline {}", args.pipeline);
    println!("cutoff {:.3}", args.cutoff);
    println!("de_tol {:.3}", args.de_tol);
    println!("force_tol {:.3}", args.force_tol);

    let report = run_pipeline(&model, &start, &stages).map_err(|e| runtime(e.to_string()))?;
    println!("initial_energy {:.9}", report.initial_energy);

    let mut row = label;
    for stage in &report.stages {
        match &stage.outcome {
            StageOutcome::Completed(t) => {
                let _ = write!(row, " | {:.9} ({})", t.final_energy, t.iterations);
            }
            StageOutcome::Failed { error } => {
                return Err(runtime(format!("stage {} failed: {error}", stage.name)));
            }
        }
    }
    println!("{row}");
    println!("final_energy {:.9}", report.final_energy);
    if let Some(path) = &args.out {
        write_structure(path, &report.final_config)?;
    }
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let criteria = InteractionCriteria {
        hbond_max_ha: args.hbond_max,
        hbond_min_dha_angle: args.hbond_angle,
        salt_max_dist: args.salt_max,
        pipi_max_centroid: args.pipi_max,
        pication_max: args.pication_max,
        clique_max_dist: args.clique_max,
    };
    criteria.validate().map_err(usage)?;
    let sections = Sections::from_list(&args.sections).map_err(usage)?;
    let structure = parse_pdb(&args.pdb).map_err(|e| usage(e.to_string()))?;
    let report = analyze(&structure, &criteria);
    if args.machine {
        print!("{}", report.render_machine_sections(sections));
    } else {
        print!("{}", report.render_text_sections(sections));
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    if args.n_min < 2 {
        return Err(usage(format!(
            "--n-min must be at least 2, got {}",
            args.n_min
        )));
    }
    let table = match &args.reference {
        Some(path) => ReferenceMinimaTable::load(path).map_err(|e| usage(e.to_string()))?,
        None => ReferenceMinimaTable::builtin(),
    };
    let opts = BenchOptions {
        iterations: args.iterations,
        temperature: args.temperature,
        max_displacement: args.disp,
        rng_seed: args.rng_seed,
        hit_tolerance: args.tol,
        timings: args.timings,
        threads: args.threads,
    };
    println!(
        "bench: N {}..{}, iterations {}, rng_seed {}",
        args.n_min, args.n_max, args.iterations, args.rng_seed
    );
    let report = run_benchmark(args.n_min..=args.n_max, &table, &opts)
        .map_err(|e| runtime(e.to_string()))?;
    print!("{}", report.render_text());
    Ok(())
}
