use clap::{Args, Parser, Subcommand, ValueEnum};
use fastdemo::campaign::{
    self, CampaignError, CompareRequest, DatasetRequest, DemoRequest, Emit, RefineRequest, ScenarioConfig,
    DEFAULT_SIGMA_POS, DEFAULT_SIGMA_ROT, EXIT_CONFIG, EXIT_OK,
};
use fastdemo::refinement::{IterationBudget, Mode, RefinementConfig};
use fastdemo::TaskKind;
use std::path::PathBuf;
use std::process::ExitCode;

/// Accelerate slow contact-rich demonstrations by iterative reference refinement.
#[derive(Parser)]
#[command(name = "fastdemo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a 1x demonstration for a task.
    Demo(DemoArgs),
    /// Refine a demonstration for faster execution.
    Refine(RefineArgs),
    /// Tabulate final DTW and RMS force across results files.
    Compare(CompareArgs),
    /// Replay a refined reference with pose noise to build a rollout dataset.
    Dataset(DatasetArgs),
}

#[derive(Args)]
struct DemoArgs {
    /// flat_erase, curved_erase or peg_in_hole.
    #[arg(long, required_unless_present = "config")]
    task: Option<String>,
    /// Scenario TOML; its task section is used unless --task is also given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Protective-stop threshold (N).
    #[arg(long)]
    force_limit: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Playback,
    Irlc,
    I2rlc,
}

#[derive(Clone, Copy, ValueEnum)]
enum BudgetArg {
    Matched,
    Strict,
}

#[derive(Args)]
struct RefineArgs {
    /// Directory written by `fastdemo demo`.
    #[arg(long)]
    demo: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Speeds for playback and irlc: `10`, `3,5,10` or `3..10`.
    #[arg(long)]
    speed: Option<String>,
    /// Highest stage of an i2rlc campaign.
    #[arg(long)]
    max_speed: Option<usize>,
    /// Iterations per speed (I).
    #[arg(long)]
    iters: Option<usize>,
    /// Learning gain in (0, 1].
    #[arg(long)]
    gain: Option<f64>,
    #[arg(long, value_enum)]
    budget: Option<BudgetArg>,
    /// Noise seed for the plant; defaults to the demo's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force_limit: Option<f64>,
    /// Scenario TOML replacing the demo's plant and safety settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Refinement TOML; explicit flags take precedence.
    #[arg(long)]
    refinement: Option<PathBuf>,
    /// Comma-separated subset of tables,curves,plots, or none.
    #[arg(long, default_value = "tables,curves,plots")]
    emit: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Two or more results.json files.
    #[arg(required = true, num_args = 2..)]
    results: Vec<PathBuf>,
    #[arg(long, default_value = "tables,plots")]
    emit: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    demo: PathBuf,
    /// Refined reference trajectory to perturb.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = 10)]
    rollouts: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA_POS)]
    sigma_pos: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA_ROT)]
    sigma_rot: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    force_limit: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_task(s: &str) -> Result<TaskKind, CampaignError> {
    TaskKind::parse(s).ok_or_else(|| {
        let known: Vec<&str> = TaskKind::ALL.iter().map(|k| k.name()).collect();
        CampaignError::Schema(format!("unknown task kind `{s}` (expected one of {})", known.join(", ")))
    })
}

/// Parses `10`, `3,5,10` or an inclusive range `3..10`.
fn parse_speeds(s: &str) -> Result<Vec<usize>, CampaignError> {
    let bad = || CampaignError::Config(format!("invalid speed list `{s}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.contains(&0) {
        return Err(CampaignError::Config("speeds must be at least 1".into()));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn load_refinement(path: &PathBuf) -> Result<RefinementConfig, CampaignError> {
    let text = std::fs::read_to_string(path).map_err(|source| CampaignError::Io {
        path: path.clone(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| CampaignError::Schema(format!("{}: {e}", path.display())))
}

fn fmt_mm(x: Option<f64>) -> String {
    x.map(|v| format!("{:.3} mm", v * 1000.0)).unwrap_or_else(|| "-".into())
}

fn demo(a: DemoArgs) -> Result<i32, CampaignError> {
    let mut scenario = match &a.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::for_task(parse_task(a.task.as_deref().expect("required by clap"))?),
    };
    if let (Some(t), Some(_)) = (&a.task, &a.config) {
        let kind = parse_task(t)?;
        if kind != scenario.task.kind {
            scenario.task = fastdemo::scenarios::default_task(kind);
        }
    }
    if let Some(f) = a.force_limit {
        scenario.safety.force_limit = f;
    }
    let (d, _) = campaign::cmd_demo(&DemoRequest {
        scenario,
        seed: a.seed,
        out: a.out.clone(),
    })?;
    println!(
        "demo: {} samples at {} Hz written to {}",
        d.reference.len(),
        d.reference.rate_hz(),
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn refine(a: RefineArgs) -> Result<i32, CampaignError> {
    let mut cfg = match &a.refinement {
        Some(p) => load_refinement(p)?,
        None => RefinementConfig::default(),
    };
    cfg.mode = match a.mode {
        ModeArg::Playback => Mode::PlaybackOnly,
        ModeArg::Irlc => Mode::Irlc,
        ModeArg::I2rlc => Mode::I2rlc,
    };
    if let Some(n) = a.max_speed {
        cfg.max_speed = n;
    }
    if let Some(i) = a.iters {
        cfg.iterations_per_speed = i;
    }
    if let Some(g) = a.gain {
        cfg.learning_gain = g;
    }
    if let Some(b) = a.budget {
        cfg.budget = match b {
            BudgetArg::Matched => IterationBudget::Matched,
            BudgetArg::Strict => IterationBudget::Strict,
        };
    }
    let speeds = match &a.speed {
        Some(s) => parse_speeds(s)?,
        None => Vec::new(),
    };
    if matches!(cfg.mode, Mode::I2rlc) && a.max_speed.is_none() {
        if let Some(&n) = speeds.last() {
            cfg.max_speed = n;
        }
    }
    let scenario = a.config.as_ref().map(|p| ScenarioConfig::load(p)).transpose()?;
    let outcome = campaign::cmd_refine(&RefineRequest {
        demo_dir: a.demo,
        scenario,
        refinement: cfg,
        speeds,
        force_limit: a.force_limit,
        seed: a.seed,
        out: a.out.clone(),
        emit: Emit::parse(&a.emit)?,
    })?;
    for r in &outcome.results.runs {
        let mut line = format!(
            "{} x{}: {} playbacks, final DTW {}, max DTW {}",
            outcome.results.mode.name(),
            r.speed,
            r.playbacks,
            fmt_mm(r.final_dtw),
            fmt_mm(r.max_dtw)
        );
        if let Some(s) = &r.stop {
            line.push_str(&format!(
                ", stopped at x{} iteration {}: {:?}",
                s.speed, s.iteration, s.event.kind
            ));
        }
        println!("{line}");
    }
    println!("results written to {}", a.out.display());
    Ok(outcome.status().exit_code())
}

fn compare(a: CompareArgs) -> Result<i32, CampaignError> {
    let c = campaign::cmd_compare(&CompareRequest {
        results: a.results,
        out: a.out.clone(),
        emit: Emit::parse(&a.emit)?,
    })?;
    let mut header = format!("{:<10}", "DTW (mm)");
    for n in &c.speeds {
        header.push_str(&format!("{:>9}", format!("x{n}")));
    }
    println!("{header}");
    for (m, row) in c.methods.iter().zip(&c.dtw) {
        let mut line = format!("{m:<10}");
        for v in row {
            line.push_str(&format!("{:>9}", v.map(|x| format!("{:.3}", x * 1000.0)).unwrap_or("-".into())));
        }
        println!("{line}");
    }
    println!("comparison written to {}", a.out.display());
    Ok(EXIT_OK)
}

fn dataset(a: DatasetArgs) -> Result<i32, CampaignError> {
    let scenario = a.config.as_ref().map(|p| ScenarioConfig::load(p)).transpose()?;
    let idx = campaign::cmd_dataset(&DatasetRequest {
        demo_dir: a.demo,
        scenario,
        reference: a.reference,
        rollouts: a.rollouts,
        sigma_pos: a.sigma_pos,
        sigma_rot: a.sigma_rot,
        seed: a.seed,
        force_limit: a.force_limit,
        out: a.out.clone(),
    })?;
    println!(
        "dataset: {} episodes written to {} ({} excluded after a protective stop)",
        idx.episode_count,
        a.out.display(),
        idx.excluded.len()
    );
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Demo(a) => demo(a),
        Command::Refine(a) => refine(a),
        Command::Compare(a) => compare(a),
        Command::Dataset(a) => dataset(a),
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(u8::try_from(code).unwrap_or(EXIT_CONFIG as u8))
}
