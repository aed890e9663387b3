//! Commands behind the `supershape` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use supershape_core::evolve::{run_target, ConfigOverrides, ConvergencePoint, TargetRunLimits};
use supershape_core::targets::{builtin, TARGET_NAMES};
use supershape_core::voxelize::format;
use supershape_core::{
    export_stl, extract_mesh, laplacian_smooth, render_grid, GAConfig, Genome, Placement,
    RenderOptions, RunState, StlMode, TargetMatch, Workspace,
};
use thiserror::Error;

/// Default root for run directories when no flag is given.
pub const RUN_ROOT_ENV: &str = "SUPERSHAPE_RUN_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Writes through a temporary sibling so a failed command leaves no file.
fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}


#[derive(Debug, Clone)]
pub struct EvolveTarget {
    pub target: String,
    pub budget: u64,
    pub seed: u64,
    pub runs: usize,
    pub jobs: usize,
    pub stop_at: Option<f64>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub dims: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub curve: Vec<ConvergencePoint>,
    pub best_fitness: f64,
    pub best_genome: Genome,
}

impl RunOutcome {
    /// Evaluations spent when the best fitness first reached `threshold`.
    pub fn reached(&self, threshold: f64) -> Option<u64> {
        first_reaching(&self.curve, threshold)
    }
}

pub fn first_reaching(curve: &[ConvergencePoint], threshold: f64) -> Option<u64> {
    curve
        .iter()
        .find(|p| p.best_fitness >= threshold)
        .map(|p| p.evaluations)
}

/// Target-mode configuration: defaults, then the config file, then `seed`.
pub fn target_config(file: Option<&Path>, seed: u64) -> Result<GAConfig, CliError> {
    let overrides = match file {
        None => ConfigOverrides::default(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
    };
    let mut cfg = overrides
        .apply(GAConfig::target())
        .map_err(|e| CliError::Config(e.to_string()))?;
    cfg.rng_seed = seed;
    Ok(cfg)
}

fn check_target_args(args: &EvolveTarget) -> Result<(), CliError> {
    if !TARGET_NAMES.contains(&args.target.as_str()) {
        return Err(CliError::Config(format!(
            "unknown target {:?}; choose one of {}",
            args.target,
            TARGET_NAMES.join(", ")
        )));
    }
    if args.runs == 0 || args.budget == 0 || args.dims == 0 {
        return Err(CliError::Config(
            "--runs, --budget and --dims must be positive".into(),
        ));
    }
    if let Some(t) = args.stop_at {
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::Config(format!("--stop-at {t} is outside [0, 1]")));
        }
    }
    Ok(())
}

/// One steady-state run per seed `args.seed .. args.seed + runs`, each in
/// its own directory under `args.out`. Runs share the `jobs` worker threads.
pub fn evolve_target(args: &EvolveTarget) -> Result<Vec<RunOutcome>, CliError> {
    check_target_args(args)?;
    let base = target_config(args.config.as_deref(), args.seed)?;
    let tm = TargetMatch::builtin(&args.target, [args.dims; 3])
        .map_err(|e| CliError::Config(e.to_string()))?;
    let dirs: Vec<PathBuf> = (0..args.runs as u64)
        .map(|i| args.out.join(format!("{}-seed{}", args.target, args.seed + i)))
        .collect();
    for d in &dirs {
        if d.exists() {
            return Err(CliError::Config(format!("{} already exists", d.display())));
        }
    }
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunOutcome, CliError>>>> =
        Mutex::new((0..args.runs).map(|_| None).collect());
    let workers = args.jobs.clamp(1, args.runs);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= args.runs {
                    break;
                }
                let mut cfg = base.clone();
                cfg.rng_seed = args.seed + i as u64;
                let limits = TargetRunLimits {
                    budget: args.budget,
                    stop_at: args.stop_at,
                    jobs: 1,
                };
                let outcome = single_run(cfg, &tm, limits, &dirs[i]);
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });
    let outcomes: Vec<RunOutcome> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every run finishes"))
        .collect::<Result<_, _>>()?;
    if outcomes.len() > 1 {
        let curves: Vec<&[ConvergencePoint]> = outcomes.iter().map(|o| &o.curve[..]).collect();
        write_aggregate(&args.out.join("aggregate.csv"), &median_curve(&curves))?;
    }
    Ok(outcomes)
}

fn single_run(
    cfg: GAConfig,
    tm: &TargetMatch,
    limits: TargetRunLimits,
    dir: &Path,
) -> Result<RunOutcome, CliError> {
    let seed = cfg.rng_seed;
    let mut state = RunState::new(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let curve =
        run_target(&mut state, tm, limits).map_err(|e| CliError::Runtime(e.to_string()))?;
    let best = state.best().expect("a finished run has evaluated members").clone();

    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_json(&dir.join("config.json"), state.config())?;
    let mut log = Vec::new();
    for e in state.events() {
        serde_json::to_writer(&mut log, e).expect("events serialize");
        log.push(b'\n');
    }
    write_file(&dir.join("events.jsonl"), &log)?;
    write_json(&dir.join("best_genome.json"), &best.genome)?;
    let grid = render_grid(&best.genome, tm.workspace(), &RenderOptions::target())
        .map_err(runtime_err("rendering the best genome"))?;
    let mesh = extract_mesh(&grid).map_err(runtime_err("meshing the best genome"))?;
    let stl = export_stl(&mesh, StlMode::Binary).map_err(runtime_err("exporting STL"))?;
    write_file(&dir.join("best.stl"), &stl)?;
    write_convergence(&dir.join("convergence.csv"), &curve)?;
    Ok(RunOutcome {
        seed,
        dir: dir.to_owned(),
        best_fitness: best.fitness.expect("best is evaluated"),
        best_genome: best.genome,
        curve,
    })
}

fn runtime_err<E: std::fmt::Display>(context: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("values serialize");
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Vec<u8>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    fill(&mut w).expect("in-memory write");
    w.into_inner().expect("in-memory flush")
}

pub fn write_convergence(path: &Path, curve: &[ConvergencePoint]) -> Result<(), CliError> {
    let bytes = csv_bytes(&["evaluations", "best_fitness", "mean_fitness"], |w| {
        for p in curve {
            w.write_record([
                p.evaluations.to_string(),
                p.best_fitness.to_string(),
                p.mean_fitness.to_string(),
            ])?;
        }
        Ok(())
    });
    write_file(path, &bytes)
}

fn write_aggregate(path: &Path, median: &[(u64, f64)]) -> Result<(), CliError> {
    let bytes = csv_bytes(&["evaluations", "median_best_fitness"], |w| {
        for (e, f) in median {
            w.write_record([e.to_string(), f.to_string()])?;
        }
        Ok(())
    });
    write_file(path, &bytes)
}

/// Median best fitness across runs at every evaluation count. A run that
/// stopped early keeps its final value.
pub fn median_curve(curves: &[&[ConvergencePoint]]) -> Vec<(u64, f64)> {
    let last = curves
        .iter()
        .filter_map(|c| c.last().map(|p| p.evaluations))
        .max()
        .unwrap_or(0);
    let first = curves
        .iter()
        .filter_map(|c| c.first().map(|p| p.evaluations))
        .max()
        .unwrap_or(1);
    let mut cursor = vec![0usize; curves.len()];
    let mut out = Vec::new();
    for e in first..=last {
        let mut values: Vec<f64> = curves
            .iter()
            .zip(&mut cursor)
            .map(|(c, k)| {
                while *k + 1 < c.len() && c[*k + 1].evaluations <= e {
                    *k += 1;
                }
                c[*k].best_fitness
            })
            .collect();
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let m = if n % 2 == 1 {
            values[n / 2]
        } else {
            (values[n / 2 - 1] + values[n / 2]) / 2.0
        };
        out.push((e, m));
    }
    out
}

/// First evaluation count at which the median curve reaches `threshold`.
pub fn median_reaching(median: &[(u64, f64)], threshold: f64) -> Option<u64> {
    median.iter().find(|(_, f)| *f >= threshold).map(|(e, _)| *e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Export {
    Stl,
    Vox,
}

#[derive(Debug, Clone)]
pub struct Render {
    pub genome: GenomeSource,
    pub smooth: usize,
    pub platform: bool,
    pub fill: bool,
    pub dims: Option<[usize; 3]>,
    pub scale: Option<f64>,
    pub export: Export,
    pub ascii: bool,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum GenomeSource {
    Builtin(String),
    File(PathBuf),
}

/// Reads a genome file: either a tagged genome object or a plain array of
/// 8 or 16 genes.
pub fn load_genome(path: &Path) -> Result<Genome, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let genome = if value.is_array() {
        let genes: Vec<f64> = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Genome::from_genes(&genes)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    } else {
        serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    };
    genome
        .validate()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let bounds = GAConfig::default_bounds(genome.kind());
    for (i, (g, [lo, hi])) in genome.genes().iter().zip(&bounds).enumerate() {
        if !(lo <= g && g <= hi) {
            return Err(CliError::Config(format!(
                "{}: gene {i} = {g} is outside [{lo}, {hi}]",
                path.display()
            )));
        }
    }
    Ok(genome)
}

/// Full pipeline for one genome. Returns the path written.
pub fn render(args: &Render) -> Result<PathBuf, CliError> {
    let (genome, stem) = match &args.genome {
        GenomeSource::Builtin(name) => (
            builtin(name)
                .map_err(|e| CliError::Config(e.to_string()))?
                .genome,
            name.clone(),
        ),
        GenomeSource::File(path) => (
            load_genome(path)?,
            path.file_stem()
                .map(|s| s.to_string_lossy().trim_end_matches(".genome").to_owned())
                .unwrap_or_else(|| "genome".into()),
        ),
    };
    let base = if args.platform {
        Workspace::vawt_default()
    } else {
        Workspace::target_default()
    };
    let size = base.voxel_size();
    let grid_dims = args.dims.unwrap_or(base.grid_dims);
    if grid_dims.contains(&0) {
        return Err(CliError::Config("--dims must be positive".into()));
    }
    let ws = Workspace {
        grid_dims,
        physical_size: [0, 1, 2].map(|k| grid_dims[k] as f64 * size[k]),
        platform_enabled: args.platform,
        fill_interior: args.fill,
    };
    let mut opts = if args.platform {
        RenderOptions::vawt_for(&genome)
    } else {
        RenderOptions::target()
    };
    if let Some(s) = args.scale {
        if !(s.is_finite() && s > 0.0) {
            return Err(CliError::Config(format!("--scale {s} must be positive")));
        }
        opts.raster.placement = Placement::Scaled { voxels_per_unit: s };
    }
    let grid = render_grid(&genome, &ws, &opts).map_err(runtime_err("rendering"))?;
    let (bytes, ext) = match args.export {
        Export::Vox => (format::encode(&grid), "vox"),
        Export::Stl => {
            let mesh = extract_mesh(&grid).map_err(runtime_err("meshing"))?;
            let mesh = laplacian_smooth(&mesh, args.smooth, 1.0);
            let mode = if args.ascii {
                StlMode::Ascii
            } else {
                StlMode::Binary
            };
            (export_stl(&mesh, mode).map_err(runtime_err("exporting"))?, "stl")
        }
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{stem}.{ext}")));
    write_file(&out, &bytes)?;
    Ok(out)
}
