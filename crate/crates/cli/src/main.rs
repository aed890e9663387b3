use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use supershape_cli::{
    evolve_target, median_curve, median_reaching, render, CliError, EvolveTarget, Export,
    GenomeSource, Render, RUN_ROOT_ENV,
};
use supershape_session::{RunStore, Session};

#[derive(Parser)]
#[command(name = "supershape", version, about = "Evolve and render superformula shapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a shape toward one of the voxel targets (cube, star, heart).
    EvolveTarget(EvolveArgs),
    /// Render a genome to STL or to a voxel file.
    Render(RenderArgs),
    /// Serve the operator session API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct EvolveArgs {
    #[arg(long)]
    target: String,
    /// Evaluations per run, initial population included.
    #[arg(long, default_value_t = 20_000)]
    budget: u64,
    /// Seed of the first run; run i uses seed + i.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Worker threads; independent runs execute in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Stop a run once its best fitness reaches this value.
    #[arg(long)]
    stop_at: Option<f64>,
    /// JSON file of GA settings layered over the target-mode defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = RUN_ROOT_ENV, default_value = "runs")]
    out: PathBuf,
    /// Edge length of the cubic target grid.
    #[arg(long, default_value_t = 50)]
    dims: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportArg {
    Stl,
    Vox,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("genome").required(true).args(["file", "builtin"]))]
struct RenderArgs {
    /// Genome JSON: a tagged genome or an array of 8 or 16 genes.
    file: Option<PathBuf>,
    #[arg(long)]
    builtin: Option<String>,
    /// Laplacian smoothing passes applied to the mesh.
    #[arg(long, default_value_t = 0)]
    smooth: usize,
    /// Render in the turbine workspace and add the mounting platform.
    #[arg(long)]
    platform: bool,
    /// Fill enclosed cavities.
    #[arg(long)]
    fill: bool,
    /// Grid size as N or XxYxZ.
    #[arg(long, value_parser = parse_dims)]
    dims: Option<[usize; 3]>,
    /// Voxels per model unit instead of the default placement.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, value_enum, default_value = "stl")]
    export: ExportArg,
    /// ASCII instead of binary STL.
    #[arg(long)]
    ascii: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    #[arg(long, env = RUN_ROOT_ENV, default_value = "runs")]
    run_dir: PathBuf,
    /// Directory of UI files served at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    jobs: usize,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [n] => Ok([n; 3]),
        [x, y, z] => Ok([x, y, z]),
        _ => Err("expected N or XxYxZ".into()),
    }
}

fn run_evolve(a: EvolveArgs) -> Result<(), CliError> {
    let args = EvolveTarget {
        target: a.target,
        budget: a.budget,
        seed: a.seed,
        runs: a.runs,
        jobs: a.jobs,
        stop_at: a.stop_at,
        config: a.config,
        out: a.out,
        dims: a.dims,
    };
    let outcomes = evolve_target(&args)?;
    for o in &outcomes {
        println!(
            "seed {}: best {} after {} evaluations -> {}",
            o.seed,
            o.best_fitness,
            o.curve.last().map_or(0, |p| p.evaluations),
            o.dir.display()
        );
    }
    if outcomes.len() > 1 {
        let curves: Vec<_> = outcomes.iter().map(|o| &o.curve[..]).collect();
        let median = median_curve(&curves);
        for t in [0.99, 0.995] {
            match median_reaching(&median, t) {
                Some(e) => println!("median reaches {t} at {e} evaluations"),
                None => println!("median does not reach {t}"),
            }
        }
    }
    Ok(())
}

fn run_render(a: RenderArgs) -> Result<(), CliError> {
    let genome = match (a.builtin, a.file) {
        (Some(name), _) => GenomeSource::Builtin(name),
        (None, Some(path)) => GenomeSource::File(path),
        (None, None) => unreachable!("clap requires one genome source"),
    };
    let out = render(&Render {
        genome,
        smooth: a.smooth,
        platform: a.platform,
        fill: a.fill,
        dims: a.dims,
        scale: a.scale,
        export: match a.export {
            ExportArg::Stl => Export::Stl,
            ExportArg::Vox => Export::Vox,
        },
        ascii: a.ascii,
        out: a.out,
    })?;
    println!("{}", out.display());
    Ok(())
}

fn run_serve(a: ServeArgs) -> Result<(), CliError> {
    let store = RunStore::open(&a.run_dir).map_err(|e| CliError::Runtime(e.to_string()))?;
    let session = Session::open(store, a.jobs)
        .map_err(|e| CliError::Runtime(format!("refusing to start: {e}")))?;
    let addr = SocketAddr::new(a.bind, a.port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    eprintln!("serving {} on http://{addr}", a.run_dir.display());
    rt.block_on(supershape_session::serve(Arc::new(session), addr, a.static_dir))
        .map_err(|e| CliError::Runtime(format!("{addr}: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::EvolveTarget(a) => run_evolve(a),
        Command::Render(a) => run_render(a),
        Command::Serve(a) => run_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
