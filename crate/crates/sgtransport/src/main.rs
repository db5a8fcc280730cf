//! Command-line front end: experiment runners, property verification, and
//! snapshot inspection. Exit codes: 0 success, 2 solver non-convergence,
//! 3 configuration error.

use clap::{Args, Parser, Subcommand};
use sgtransport::config::{ExperimentConfig, ExperimentKind};
use sgtransport::error::Error;
use sgtransport::experiments::{
    landau_to_csv, run_advect_const, run_custom, run_landau_experiment, run_lshape, sci3,
    table_to_csv,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sgtransport", version, about = "Sparse-grid transport equation solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// JSON configuration file; flags below override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// single sparse-grid level
    #[arg(short = 'L', long)]
    level: Option<usize>,
    /// inclusive level range, e.g. 1:6
    #[arg(long, value_parser = parse_range)]
    levels: Option<(usize, usize)>,
    /// polynomial order of the ansatz functions
    #[arg(short = 'r', long)]
    order: Option<usize>,
    /// spatial dimension per factor
    #[arg(short = 'd', long)]
    dim: Option<usize>,
    /// strip count override
    #[arg(long)]
    steps: Option<usize>,
    /// output CSV path
    #[arg(short = 'o', long)]
    out: Option<PathBuf>,
    /// worker threads
    #[arg(long)]
    threads: Option<usize>,
    /// seed for randomized suites
    #[arg(long)]
    seed: Option<u64>,
    /// Richardson tolerance
    #[arg(long)]
    tolerance: Option<f64>,
    /// simulated horizon (Landau)
    #[arg(long)]
    horizon: Option<f64>,
    /// memory budget per level run in MB
    #[arg(long)]
    memory_budget_mb: Option<usize>,
    /// write the final-trace snapshot here
    #[arg(long)]
    snapshot_out: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 2 {
        return Err("expected a:b".into());
    }
    let a = parts[0].parse().map_err(|e| format!("{e}"))?;
    let b = parts[1].parse().map_err(|e| format!("{e}"))?;
    Ok((a, b))
}

#[derive(Subcommand)]
enum Command {
    /// Constant-coefficient advection convergence study
    AdvectConst(CommonArgs),
    /// Transport on the L-shaped spatial domain
    Lshape(CommonArgs),
    /// Landau damping (kind from config: landau1d or landau2d; default 1d)
    Landau {
        #[command(flatten)]
        common: CommonArgs,
        /// 1d or 2d
        #[arg(long, default_value = "1d")]
        kind: String,
    },
    /// Custom constant-coefficient run from config
    Custom(CommonArgs),
    /// Run the property suites
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Save or inspect block-vector snapshots
    Snapshot {
        #[command(subcommand)]
        action: SnapshotAction,
    },
}

#[derive(Subcommand)]
enum SnapshotAction {
    /// Run the configured experiment and write the final trace
    Save {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Print the header of a snapshot file
    Load {
        #[arg(long, short = 'i')]
        input: PathBuf,
    },
}

fn build_config(kind: ExperimentKind, common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::new(kind),
    };
    if common.config.is_none() {
        cfg.experiment = kind;
    }
    if let Some(l) = common.level {
        cfg.level = Some(l);
        cfg.levels = None;
    }
    if let Some((a, b)) = common.levels {
        cfg.levels = Some([a, b]);
    }
    if let Some(r) = common.order {
        cfg.order = r;
    }
    if let Some(d) = common.dim {
        cfg.dim = d;
    }
    if let Some(s) = common.steps {
        cfg.steps = Some(s);
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.tolerance {
        cfg.tolerance = t;
    }
    if let Some(h) = common.horizon {
        cfg.horizon = Some(h);
    }
    if let Some(m) = common.memory_budget_mb {
        cfg.memory_budget_mb = m;
    }
    if let Some(s) = &common.snapshot_out {
        cfg.snapshot_out = Some(s.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads(cfg: &ExperimentConfig) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
}

fn emit(cfg: &ExperimentConfig, contents: &str) -> Result<(), Error> {
    match &cfg.out {
        Some(path) => {
            std::fs::write(path, contents)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{contents}"),
    }
    Ok(())
}

fn run_table_command(kind: ExperimentKind, common: &CommonArgs) -> Result<bool, Error> {
    let cfg = build_config(kind, common)?;
    init_threads(&cfg);
    let (rows, ok, final_trace) = match kind {
        ExperimentKind::AdvectConst => {
            let out = run_advect_const(&cfg)?;
            (out.rows, out.solver_converged, out.final_trace)
        }
        ExperimentKind::Lshape => {
            let out = run_lshape(&cfg)?;
            // density dump next to the table when requested
            if let (Some(path), false) = (&cfg.out, out.density_dump.is_empty()) {
                let mut dump = String::from("x1,x2,rho\n");
                for (x1, x2, v) in &out.density_dump {
                    dump.push_str(&format!("{x1},{x2},{v:e}\n"));
                }
                let dump_path = path.with_extension("density.csv");
                std::fs::write(&dump_path, dump)?;
                eprintln!("wrote {}", dump_path.display());
            }
            (out.rows, out.solver_converged, None)
        }
        ExperimentKind::Custom => {
            let out = run_custom(&cfg)?;
            (out.rows, out.solver_converged, out.final_trace)
        }
        _ => unreachable!(),
    };
    if let (Some(path), Some((trace, space, _level))) = (&cfg.snapshot_out, &final_trace) {
        sgtransport::snapshot::write_snapshot(path, trace, space)?;
        eprintln!("wrote snapshot {}", path.display());
    }
    for row in &rows {
        match &row.skipped {
            Some(why) => eprintln!("L={} skipped ({why})", row.level),
            None => eprintln!(
                "L={} h={} rel_err={} order={}",
                row.level,
                sci3(row.h),
                sci3(row.rel_err),
                row.order.map_or(String::from("-"), |o| format!("{o:.2}")),
            ),
        }
    }
    emit(&cfg, &table_to_csv(&rows))?;
    Ok(ok)
}

fn run_landau_command(common: &CommonArgs, kind: &str) -> Result<bool, Error> {
    let exp_kind = match kind {
        "1d" => ExperimentKind::Landau1d,
        "2d" => ExperimentKind::Landau2d,
        other => return Err(Error::Config(format!("unknown Landau kind {other:?}"))),
    };
    let mut cfg = build_config(exp_kind, common)?;
    if cfg.experiment != ExperimentKind::Landau1d && cfg.experiment != ExperimentKind::Landau2d {
        cfg.experiment = exp_kind;
    }
    init_threads(&cfg);
    let out = run_landau_experiment(&cfg)?;
    if let Some(gamma) = out.fitted_rate {
        eprintln!("fitted field decay rate: {gamma:.4}");
    }
    emit(&cfg, &landau_to_csv(&out.rows))?;
    Ok(out.converged)
}

fn dispatch(cli: Cli) -> Result<bool, Error> {
    match &cli.command {
        Command::AdvectConst(c) => run_table_command(ExperimentKind::AdvectConst, c),
        Command::Lshape(c) => run_table_command(ExperimentKind::Lshape, c),
        Command::Custom(c) => run_table_command(ExperimentKind::Custom, c),
        Command::Landau { common, kind } => run_landau_command(common, kind),
        Command::Verify { seed } => {
            let mut all = true;
            for suite in sgtransport::verify::run_all(*seed) {
                println!(
                    "{}: {} ({})",
                    suite.name,
                    if suite.passed { "PASS" } else { "FAIL" },
                    suite.metric
                );
                all &= suite.passed;
            }
            Ok(all)
        }
        Command::Snapshot { action } => match action {
            SnapshotAction::Save { common } => {
                let mut c = common.clone();
                if c.snapshot_out.is_none() {
                    c.snapshot_out = Some(PathBuf::from("trace.snap"));
                }
                run_table_command(ExperimentKind::AdvectConst, &c)
            }
            SnapshotAction::Load { input } => {
                let header = sgtransport::snapshot::inspect(input)?;
                println!(
                    "level {} time_dim {} strip {:?} x_dofs {:?} v_dofs {:?}",
                    header.level, header.time_dim, header.strip, header.x_dofs, header.v_dofs
                );
                Ok(true)
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("solver did not converge");
            ExitCode::from(2)
        }
        Err(Error::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
