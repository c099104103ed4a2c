//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dbprobe::active::{self, ActiveConfig, Policy};
use dbprobe::backend::{self, BackendDescriptor, Mode};
use dbprobe::experiment::render::{curves_csv, curves_from_records, render_curves_svg, render_map_svg, MapStyle};
use dbprobe::experiment::runner::{self, latest_records, read_ledger, RunStatus, LEDGER_FILE};
use dbprobe::experiment::{self, exit_code, parse_backend_spec, ExperimentConfig, Overrides, ScaleSpec, TaskTemplate};
use dbprobe::metrics::map_metrics;
use dbprobe::probe::DecisionMap;
use dbprobe::promptfmt::PromptConfig;
use dbprobe::taskgen::{self, Regime, TaskInstance, TaskKind};
use dbprobe::{Error, Result};

#[derive(Parser)]
#[command(name = "dbprobe", version, about = "Probe decision boundaries of in-context classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write task files.
    Gen(GenArgs),
    /// Probe one decision map.
    Probe(ProbeArgs),
    /// Run every combination in a config.
    Sweep(SweepArgs),
    /// Run the active-learning loop.
    Active(ActiveArgs),
    /// Render a map file, or accuracy curves from a run directory.
    Render(RenderArgs),
    /// Write report.md for a run directory.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// A backend name from --config, or kind:value (baseline:knn,
    /// mock:centroid, numeric:URL, completion:MODEL@URL).
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    grid: Option<usize>,
    /// One size for probe, a comma list for sweep.
    #[arg(long, value_delimiter = ',')]
    n_context: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    order_seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Args, Clone)]
struct TaskArgs {
    #[arg(long, default_value = "linear")]
    kind: TaskKind,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value = "train")]
    regime: String,
    #[arg(long)]
    class_sep: Option<f64>,
    #[arg(long)]
    factor: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 100)]
    n_test: usize,
    /// Read the task from a file written by `gen` instead.
    #[arg(long)]
    task: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long)]
    n_points: Option<usize>,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    task: TaskArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ActiveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long)]
    policy: Option<Policy>,
    #[arg(long, value_delimiter = ',')]
    schedule: Option<Vec<usize>>,
    #[arg(long)]
    min_separation: Option<f64>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    common: Common,
    /// Map file to render.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Run directory whose ledger feeds an accuracy-curve figure.
    #[arg(long)]
    runs: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    runs: Option<PathBuf>,
}

fn parse_regime(s: &str) -> Result<Regime> {
    match s {
        "train" => Ok(Regime::Train),
        "test" => Ok(Regime::Test),
        other => Err(Error::Config(format!("unknown regime {other:?}"))),
    }
}

fn load_config(common: &Common) -> Result<Option<ExperimentConfig>> {
    common.config.as_ref().map(ExperimentConfig::load).transpose()
}

fn resolve_backend(common: &Common, config: Option<&ExperimentConfig>) -> Result<BackendDescriptor> {
    let name = common.backend.as_deref();
    let mut d = match (name, config) {
        (Some(n), Some(cfg)) if cfg.backends.iter().any(|b| b.name == n) => {
            cfg.backends.iter().find(|b| b.name == n).cloned().expect("checked")
        }
        (Some(n), _) => parse_backend_spec(n)?,
        (None, Some(cfg)) if !cfg.backends.is_empty() => cfg.backends[0].clone(),
        (None, _) => return Err(Error::Config("no backend given (use --backend)".into())),
    };
    if let Some(mode) = common.mode {
        d.mode = mode;
    }
    Ok(d)
}

fn prompt_of(common: &Common, config: Option<&ExperimentConfig>) -> PromptConfig {
    let mut p = config
        .and_then(|c| c.prompt_variants.first())
        .map(|v| v.prompt.clone())
        .unwrap_or_default();
    if let Some(l) = &common.labels {
        p.labels = l.clone();
    }
    if common.order_seed.is_some() {
        p.ordering_seed = common.order_seed;
    }
    p
}

fn template_of(args: &TaskArgs, seed: u64) -> Result<TaskTemplate> {
    let mut t = TaskTemplate::new(args.kind, [seed]);
    t.num_classes = args.classes;
    t.regime = parse_regime(&args.regime)?;
    t.class_sep = args.class_sep;
    t.factor = args.factor;
    t.noise = args.noise;
    Ok(t)
}

/// The task to probe: from `--task`, else generated, scaled and split.
fn task_of(args: &TaskArgs, seed: u64, n_context: usize, scale: &ScaleSpec) -> Result<TaskInstance> {
    if let Some(path) = &args.task {
        let task = taskgen::task_from_json(&std::fs::read_to_string(path)?)?;
        let task = if task.scale.is_some() {
            task
        } else {
            taskgen::scale_to_prompt_space(&task, scale.lo, scale.hi, scale.integer)
        };
        return taskgen::split_balanced(&task, n_context, args.n_test, task.spec.seed);
    }
    let t = template_of(args, seed)?;
    let spec = t.spec(seed, t.required_points(n_context, args.n_test));
    runner::prepare_task(&spec, scale, n_context, args.n_test)
}

fn out_dir(common: &Common, default: &str) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn gen(args: GenArgs) -> Result<i32> {
    let config = load_config(&args.common)?;
    let dir = out_dir(&args.common, "tasks")?;
    let mut jobs: Vec<(TaskTemplate, u64, usize)> = Vec::new();
    match &config {
        Some(cfg) => {
            for t in &cfg.tasks {
                for &s in &t.seeds {
                    jobs.push((t.clone(), s, t.required_points(cfg.max_context(), cfg.n_test)));
                }
            }
        }
        None => {
            let seed = args.common.seed.unwrap_or(0);
            let t = template_of(&args.task, seed)?;
            let n = args
                .n_points
                .unwrap_or_else(|| t.required_points(args.common.n_context.as_ref().and_then(|v| v.first().copied()).unwrap_or(256), args.task.n_test));
            jobs.push((t, seed, n));
        }
    }
    for (t, seed, n) in jobs {
        let task = taskgen::scale_default(&taskgen::generate(&t.spec(seed, n))?);
        let path = dir.join(format!("task_{}_{seed}.json", t.kind.name()));
        std::fs::write(&path, taskgen::task_to_json(&task)?)?;
        println!("{}", path.display());
    }
    Ok(0)
}

fn probe(args: ProbeArgs) -> Result<i32> {
    let config = load_config(&args.common)?;
    let descriptor = resolve_backend(&args.common, config.as_ref())?;
    let backend = backend::from_descriptor(&descriptor)?;
    let prompt = prompt_of(&args.common, config.as_ref());
    let n = args.common.n_context.as_ref().and_then(|v| v.first().copied()).unwrap_or(32);
    let g = args.common.grid.or(config.as_ref().map(|c| c.grid_g)).unwrap_or(50);
    let scale = config.as_ref().map(|c| c.scale).unwrap_or_default();
    let task = task_of(&args.task, args.common.seed.unwrap_or(0), n, &scale)?;
    let (map, status) = runner::probe_task(backend.as_ref(), &task, &prompt, g)?;
    let dir = out_dir(&args.common, "probe")?;
    map.save(dir.join("map.map"))?;
    std::fs::write(dir.join("map.svg"), render_map_svg(&map, &MapStyle::default()))?;
    let metrics = map_metrics(&map, None)?;
    println!(
        "{}",
        serde_json::json!({
            "backend": descriptor.name,
            "n_context": n,
            "accuracy": map.accuracy,
            "fragmentation": metrics.fragmentation,
            "region_count": metrics.region_count,
            "abstain_fraction": metrics.abstain_fraction,
            "map": dir.join("map.map"),
        })
    );
    Ok(if status == RunStatus::Degraded { 4 } else { 0 })
}

fn sweep(args: SweepArgs) -> Result<i32> {
    let c = &args.common;
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("sweep needs --config".into()))?;
    let json = path.extension().is_some_and(|e| e == "json");
    let mut config = ExperimentConfig::parse(&std::fs::read_to_string(path)?, json)?;
    config.apply(&Overrides {
        seed: c.seed,
        outputs: c.out.clone(),
        grid_g: c.grid,
        n_context: c.n_context.clone(),
        labels: c.labels.clone(),
        ordering_seed: c.order_seed,
        mode: c.mode,
        backends: c.backend.clone().map(|b| vec![b]),
    });
    let summary = experiment::run(&config)?;
    println!(
        "{} runs: {} executed, {} from ledger, {} failed, {} degraded; ledger at {}",
        summary.records.len(),
        summary.executed,
        summary.skipped,
        summary.failed(),
        summary.degraded(),
        config.outputs.join(LEDGER_FILE).display()
    );
    Ok(if summary.any_unavailable() {
        3
    } else if summary.degraded() > 0 {
        4
    } else if summary.failed() > 0 {
        1
    } else {
        0
    })
}

fn run_active(args: ActiveArgs) -> Result<i32> {
    let config = load_config(&args.common)?;
    let section = config.as_ref().and_then(|c| c.active.clone());
    let mut common = args.common.clone();
    if common.backend.is_none() {
        common.backend = section.as_ref().map(|s| s.backend.clone());
    }
    let descriptor = resolve_backend(&common, config.as_ref())?;
    let backend = backend::from_descriptor(&descriptor)?;
    let prompt = prompt_of(&common, config.as_ref());
    let mut cfg = section.map(|s| s.config).unwrap_or_else(ActiveConfig::default);
    if let Some(p) = args.policy {
        cfg.policy = p;
    }
    if let Some(s) = &args.schedule {
        cfg.schedule = s.clone();
    }
    if let Some(m) = args.min_separation {
        cfg.min_separation = m;
    }
    if let Some(g) = common.grid {
        cfg.grid_g = g;
    }
    let seed = common.seed.unwrap_or(cfg.seed);
    cfg.seed = seed;
    cfg.validate()?;
    let scale = config.as_ref().map(|c| c.scale).unwrap_or_default();
    let task = task_of(&args.task, seed, cfg.schedule[0], &scale)?;
    let dir = out_dir(&common, "active")?;
    let trajectory = match active::run_for_task(backend.as_ref(), &task, &prompt, &cfg) {
        Ok(t) => t,
        Err(Error::ActiveLoop { source, partial }) => {
            partial.dump(&dir)?;
            eprintln!("partial trajectory written to {}", dir.display());
            return Err(*source);
        }
        Err(e) => return Err(e),
    };
    trajectory.dump(&dir)?;
    for (t, step) in trajectory.steps.iter().enumerate() {
        let style = MapStyle {
            title: Some(format!("{:?} step {t}, n={}", trajectory.policy, step.context.len())),
            ..MapStyle::default()
        };
        std::fs::write(dir.join(format!("step_{t:02}.svg")), render_map_svg(&step.map, &style))?;
        println!("step {t}: n={} accuracy {:.3}", step.context.len(), step.accuracy);
    }
    Ok(0)
}

fn render(args: RenderArgs) -> Result<i32> {
    if let Some(map_path) = &args.map {
        let map = DecisionMap::load(map_path)?;
        let out = args.common.out.clone().unwrap_or_else(|| map_path.with_extension("svg"));
        std::fs::write(&out, render_map_svg(&map, &MapStyle::default()))?;
        println!("{}", out.display());
        return Ok(0);
    }
    let runs = runs_dir(args.runs.as_deref(), &args.common)?;
    let records = latest_records(&read_ledger(runs.join(LEDGER_FILE))?);
    if records.is_empty() {
        return Err(Error::EmptyLedger);
    }
    let series = curves_from_records(&records);
    let out = args.common.out.clone().unwrap_or_else(|| runs.join("figures").join("curves.svg"));
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&out, render_curves_svg(&series, "test accuracy"))?;
    std::fs::write(out.with_extension("csv"), curves_csv(&series))?;
    println!("{}", out.display());
    Ok(0)
}

fn runs_dir(runs: Option<&Path>, common: &Common) -> Result<PathBuf> {
    if let Some(r) = runs {
        return Ok(r.to_path_buf());
    }
    if let Some(cfg) = load_config(common)? {
        return Ok(common.out.clone().unwrap_or(cfg.outputs));
    }
    common
        .out
        .clone()
        .ok_or_else(|| Error::Config("give --runs, --config or --out".into()))
}

fn report(args: ReportArgs) -> Result<i32> {
    let runs = runs_dir(args.runs.as_deref(), &args.common)?;
    let path = experiment::report::write_report(&runs)?;
    println!("{}", path.display());
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Probe(a) => probe(a),
        Command::Sweep(a) => sweep(a),
        Command::Active(a) => run_active(a),
        Command::Render(a) => render(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
