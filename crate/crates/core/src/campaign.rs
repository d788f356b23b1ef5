//! Command implementations behind the CLI: demo synthesis, refinement
//! campaigns, comparison grids and noisy rollout datasets.
//!
//! Every output directory receives a `manifest.json` echoing the config and
//! seed, with the SHA-256 of each input read and each file written.

use crate::metrics::{learning_curve, CurveRow};
use crate::plant::{
    playback, ControllerParams, IntegratorOptions, PlantContext, PlantError, PlantState, SafetyConfig, StopEvent,
};
use crate::plot::{line_chart, Series};
use crate::refinement::{self, Mode, RefinementConfig, RefinementError, RefinementRun};
use crate::scenarios::{default_task, generate_demo, Demo, ScenarioError, TaskKind, TaskSpec};
use crate::trajectory::{add_pose_noise, Trajectory, TrajectoryError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STOPPED: i32 = 3;
pub const EXIT_FAULT: i32 = 4;

/// Default per-axis noise for dataset rollouts.
pub const DEFAULT_SIGMA_POS: f64 = 0.001;
pub const DEFAULT_SIGMA_ROT: f64 = 0.005;

pub const SCENARIO_FILE: &str = "scenario.toml";
pub const DEMO_REF_FILE: &str = "demo_ref.traj";
pub const DEMO_MEASURED_FILE: &str = "demo_measured.traj";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULTS_FILE: &str = "results.json";

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("SchemaError: {0}")]
    Schema(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: TrajectoryError },
    #[error("demonstration stopped: {0:?}")]
    DemoStopped(StopEvent),
    #[error(transparent)]
    Refinement(#[from] RefinementError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

impl CampaignError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CampaignError::Io { .. } => EXIT_IO,
            CampaignError::File {
                source: TrajectoryError::Io(_),
                ..
            } => EXIT_IO,
            CampaignError::DemoStopped(s) if s.is_fault() => EXIT_FAULT,
            CampaignError::DemoStopped(_) => EXIT_STOPPED,
            CampaignError::Plant(PlantError::SimFault(_)) => EXIT_FAULT,
            _ => EXIT_CONFIG,
        }
    }
}

impl From<ScenarioError> for CampaignError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Stopped(s) => CampaignError::DemoStopped(s),
            ScenarioError::InvalidTask(m) => CampaignError::Config(m),
            ScenarioError::Plant(p) => CampaignError::Plant(p),
            ScenarioError::Trajectory(t) => CampaignError::Trajectory(t),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, CampaignError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn load_traj(path: &Path) -> Result<Trajectory, CampaignError> {
    Trajectory::load(path).map_err(|source| CampaignError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Plant and task configuration, stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub format_version: u32,
    #[serde(default)]
    pub controller: ControllerParams,
    #[serde(default)]
    pub safety: SafetyConfig,
    #[serde(default)]
    pub integrator: IntegratorOptions,
    pub task: TaskSpec,
}

impl ScenarioConfig {
    pub fn for_task(kind: TaskKind) -> Self {
        ScenarioConfig {
            format_version: FORMAT_VERSION,
            controller: ControllerParams::default(),
            safety: SafetyConfig::default(),
            integrator: IntegratorOptions::default(),
            task: default_task(kind),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CampaignError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| CampaignError::Schema(e.to_string()))?;
        if cfg.format_version != FORMAT_VERSION {
            return Err(CampaignError::Schema(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                cfg.format_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        Self::from_toml(&read_text(path)?).map_err(|e| match e {
            CampaignError::Schema(m) => CampaignError::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config is representable in TOML")
    }

    pub fn context(&self) -> PlantContext {
        PlantContext {
            params: self.controller.clone(),
            contact: self.task.contact.clone(),
            safety: self.safety.clone(),
            integrator: self.integrator.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        self.task.validate()?;
        self.context().validate()?;
        Ok(())
    }
}

/// Optional outputs of `refine` and `compare`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Emit {
    pub tables: bool,
    pub curves: bool,
    pub plots: bool,
}

impl Default for Emit {
    fn default() -> Self {
        Emit {
            tables: true,
            curves: true,
            plots: true,
        }
    }
}

impl Emit {
    pub fn none() -> Self {
        Emit {
            tables: false,
            curves: false,
            plots: false,
        }
    }

    /// Parses a comma-separated list of `tables`, `curves`, `plots`, or `none`.
    pub fn parse(s: &str) -> Result<Self, CampaignError> {
        let mut e = Emit::none();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "tables" => e.tables = true,
                "curves" => e.curves = true,
                "plots" => e.plots = true,
                "none" => {}
                other => return Err(CampaignError::Config(format!("unknown emit flag `{other}`"))),
            }
        }
        Ok(e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_input(path: &Path) -> Result<FileEntry, CampaignError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(FileEntry {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileEntry>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, CampaignError> {
        let path = dir.join(MANIFEST_FILE);
        serde_json::from_str(&read_text(&path)?).map_err(|e| CampaignError::Schema(format!("{}: {e}", path.display())))
    }
}

/// Output directory that records a hash for everything written to it.
struct Output {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl Output {
    fn create(root: &Path) -> Result<Self, CampaignError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Output {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CampaignError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn write_traj(&mut self, rel: &str, traj: &Trajectory) -> Result<(), CampaignError> {
        self.write(rel, traj.to_text().as_bytes())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CampaignError> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    fn finish(self, command: &str, seed: u64, config: serde_json::Value, inputs: Vec<FileEntry>) -> Result<Manifest, CampaignError> {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            command: command.to_string(),
            seed,
            config,
            inputs,
            files: self.files,
        };
        let path = self.root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(manifest)
    }
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

// ---------------------------------------------------------------- demo

#[derive(Debug, Clone)]
pub struct DemoRequest {
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub out: PathBuf,
}

/// Synthesizes a 1x demonstration and writes `demo_ref.traj`,
/// `demo_measured.traj` and the scenario it came from.
pub fn cmd_demo(req: &DemoRequest) -> Result<(Demo, Manifest), CampaignError> {
    req.scenario.validate()?;
    let demo = generate_demo(&req.scenario.task, &req.scenario.context(), req.seed)?;
    let mut out = Output::create(&req.out)?;
    out.write(SCENARIO_FILE, req.scenario.to_toml().as_bytes())?;
    out.write_traj(DEMO_REF_FILE, &demo.reference)?;
    out.write_traj(DEMO_MEASURED_FILE, &demo.measured)?;
    let manifest = out.finish("demo", req.seed, to_json(&req.scenario), Vec::new())?;
    Ok((demo, manifest))
}

/// A demonstration directory written by [`cmd_demo`].
#[derive(Debug, Clone)]
pub struct LoadedDemo {
    pub scenario: ScenarioConfig,
    pub demo: Demo,
    pub seed: u64,
    pub inputs: Vec<FileEntry>,
}

pub fn load_demo(dir: &Path) -> Result<LoadedDemo, CampaignError> {
    let scenario_path = dir.join(SCENARIO_FILE);
    let ref_path = dir.join(DEMO_REF_FILE);
    let measured_path = dir.join(DEMO_MEASURED_FILE);
    let scenario = ScenarioConfig::load(&scenario_path)?;
    let reference = load_traj(&ref_path)?;
    let measured = load_traj(&measured_path)?;
    let seed = Manifest::load(dir).map(|m| m.seed).unwrap_or(0);
    let demo = Demo::new(reference, measured)?;
    let inputs = vec![hash_input(&scenario_path)?, hash_input(&ref_path)?, hash_input(&measured_path)?];
    Ok(LoadedDemo {
        scenario,
        demo,
        seed,
        inputs,
    })
}

// ---------------------------------------------------------------- refine

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Stopped,
    Fault,
}

impl RunStatus {
    fn of(run: &RefinementRun) -> Self {
        match run.stop() {
            None => RunStatus::Completed,
            Some((_, _, s)) if s.is_fault() => RunStatus::Fault,
            Some(_) => RunStatus::Stopped,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            RunStatus::Completed => EXIT_OK,
            RunStatus::Stopped => EXIT_STOPPED,
            RunStatus::Fault => EXIT_FAULT,
        }
    }

    /// The worse of two statuses.
    fn max(self, other: RunStatus) -> RunStatus {
        let rank = |s: RunStatus| match s {
            RunStatus::Completed => 0,
            RunStatus::Stopped => 1,
            RunStatus::Fault => 2,
        };
        if rank(other) > rank(self) {
            other
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationResult {
    #[serde(flatten)]
    pub row: CurveRow,
    pub stop: Option<StopEvent>,
    pub reference: String,
    pub measured: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub speed: usize,
    pub samples: usize,
    pub target: String,
    /// Normalized DTW of the stage's last completed playback (m).
    pub final_dtw: Option<f64>,
    pub final_rms_force: Option<f64>,
    pub refined: Option<String>,
    pub iterations: Vec<IterationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopSummary {
    pub speed: usize,
    /// 1-based across the run.
    pub iteration: usize,
    pub event: StopEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Speed of a fixed-speed run, or the highest stage of an incremental one.
    pub speed: usize,
    pub playbacks: usize,
    pub status: RunStatus,
    pub stop: Option<StopSummary>,
    pub final_dtw: Option<f64>,
    pub final_rms_force: Option<f64>,
    pub max_dtw: Option<f64>,
    pub stages: Vec<StageResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoDigest {
    pub reference_sha256: String,
    pub measured_sha256: String,
    pub samples: usize,
}

/// Contents of `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub format_version: u32,
    pub task: TaskKind,
    pub mode: Mode,
    pub seed: u64,
    pub refinement: RefinementConfig,
    pub scenario: ScenarioConfig,
    pub demo: DemoDigest,
    pub runs: Vec<RunResult>,
}

impl ResultsFile {
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let r: ResultsFile =
            serde_json::from_str(&read_text(path)?).map_err(|e| CampaignError::Schema(format!("{}: {e}", path.display())))?;
        if r.format_version != FORMAT_VERSION {
            return Err(CampaignError::Schema(format!(
                "{}: unsupported format_version {}",
                path.display(),
                r.format_version
            )));
        }
        Ok(r)
    }

    pub fn status(&self) -> RunStatus {
        self.runs.iter().fold(RunStatus::Completed, |acc, r| acc.max(r.status))
    }

    /// Final DTW and RMS force of the stage at `speed`, from whichever run has it.
    pub fn stage_final(&self, speed: usize) -> Option<&StageResult> {
        self.runs.iter().flat_map(|r| r.stages.iter()).rev().find(|s| s.speed == speed)
    }

    pub fn speeds(&self) -> BTreeSet<usize> {
        self.runs.iter().flat_map(|r| r.stages.iter().map(|s| s.speed)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RefineRequest {
    pub demo_dir: PathBuf,
    /// Replaces the demo's own scenario (plant and safety settings) when set.
    pub scenario: Option<ScenarioConfig>,
    pub refinement: RefinementConfig,
    /// Speeds for playback and IRLC sweeps; empty means `refinement.target_speed`.
    pub speeds: Vec<usize>,
    pub force_limit: Option<f64>,
    /// Seed for any plant noise; defaults to the demo's seed.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub emit: Emit,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub results: ResultsFile,
    pub runs: Vec<RefinementRun>,
    pub manifest: Manifest,
}

impl RefineOutcome {
    pub fn status(&self) -> RunStatus {
        self.results.status()
    }
}

fn stage_final(stage: &refinement::StageRecord) -> (Option<f64>, Option<f64>) {
    let last = stage.iterations.iter().rev().find(|i| i.stop.is_none());
    (
        last.and_then(|i| i.dtw.map(|d| d.normalized())),
        last.and_then(|i| i.rms_force),
    )
}

/// Writes one run's trajectories and returns its result record.
fn record_run(out: &mut Output, run: &RefinementRun, run_speed: usize) -> Result<RunResult, CampaignError> {
    let rows = learning_curve(run);
    let prefix = format!("runs/{}_x{run_speed:02}", run.mode.name());
    let mut k = 0;
    let mut stages = Vec::with_capacity(run.stages.len());
    for stage in &run.stages {
        let mut iterations = Vec::with_capacity(stage.iterations.len());
        for it in &stage.iterations {
            let base = format!("{prefix}/stage_x{:02}_iter_{:02}", stage.speed, it.iteration);
            let reference = format!("{base}_reference.traj");
            out.write_traj(&reference, &it.reference)?;
            let measured = match &it.measured {
                Some(m) => {
                    let p = format!("{base}_measured.traj");
                    out.write_traj(&p, m)?;
                    Some(p)
                }
                None => None,
            };
            iterations.push(IterationResult {
                row: rows[k].clone(),
                stop: it.stop.clone(),
                reference,
                measured,
            });
            k += 1;
        }
        let refined = match &stage.refined {
            Some(r) => {
                let p = format!("{prefix}/refined_x{:02}.traj", stage.speed);
                out.write_traj(&p, r)?;
                Some(p)
            }
            None => None,
        };
        let target = format!("{prefix}/target_x{:02}.traj", stage.speed);
        out.write_traj(&target, &stage.target)?;
        let (final_dtw, final_rms_force) = stage_final(stage);
        stages.push(StageResult {
            speed: stage.speed,
            samples: stage.target.len(),
            target,
            final_dtw,
            final_rms_force,
            refined,
            iterations,
        });
    }
    let last = stages.iter().rev().find(|s| s.final_dtw.is_some());
    Ok(RunResult {
        speed: run_speed,
        playbacks: run.playback_count(),
        status: RunStatus::of(run),
        stop: run.stop().map(|(speed, iteration, e)| StopSummary {
            speed,
            iteration,
            event: e.clone(),
        }),
        final_dtw: last.and_then(|s| s.final_dtw),
        final_rms_force: last.and_then(|s| s.final_rms_force),
        max_dtw: run.max_dtw(),
        stages,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.9}")).unwrap_or_default()
}

fn curve_table(results: &ResultsFile) -> String {
    let mut s = String::from("run_speed,iteration,speed,stage_iteration,dtw,dtw_unnormalized,rms_force,peak_force,stopped\n");
    for run in &results.runs {
        for st in &run.stages {
            for it in &st.iterations {
                let r = &it.row;
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{:.9},{}\n",
                    run.speed,
                    r.iteration,
                    r.speed,
                    r.stage_iteration,
                    fmt_opt(r.dtw),
                    fmt_opt(r.dtw_unnormalized),
                    fmt_opt(r.rms_force),
                    r.peak_force,
                    r.stopped
                ));
            }
        }
    }
    s
}

fn final_table(results: &ResultsFile) -> String {
    let mut s = String::from("speed,playbacks,status,final_dtw,final_rms_force,max_dtw\n");
    for r in &results.runs {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.speed,
            r.playbacks,
            serde_json::to_value(r.status).expect("enum").as_str().unwrap_or_default(),
            fmt_opt(r.final_dtw),
            fmt_opt(r.final_rms_force),
            fmt_opt(r.max_dtw)
        ));
    }
    s
}

fn curve_series(run: &RunResult, name: String) -> Series {
    let points = run
        .stages
        .iter()
        .flat_map(|s| s.iterations.iter())
        .filter_map(|it| it.row.dtw.map(|d| (it.row.iteration as f64, d * 1000.0)))
        .collect();
    Series { name, points }
}

/// Runs a playback, IRLC or I2RLC campaign on a saved demonstration.
///
/// Playback and IRLC modes run once per requested speed. The results file
/// refers to every reference and measured trajectory by relative path.
pub fn cmd_refine(req: &RefineRequest) -> Result<RefineOutcome, CampaignError> {
    let loaded = load_demo(&req.demo_dir)?;
    let mut scenario = req.scenario.clone().unwrap_or(loaded.scenario.clone());
    if let Some(limit) = req.force_limit {
        scenario.safety.force_limit = limit;
    }
    let seed = req.seed.unwrap_or(loaded.seed);
    scenario.integrator.noise_seed = seed;
    scenario.validate()?;
    req.refinement.validate()?;
    let ctx = scenario.context();
    let demo = &loaded.demo;

    let speeds: Vec<usize> = match req.refinement.mode {
        Mode::I2rlc => vec![req.refinement.max_speed],
        _ if req.speeds.is_empty() => vec![req.refinement.target_speed],
        _ => req.speeds.clone(),
    };
    let mut runs = Vec::with_capacity(speeds.len());
    for &n in &speeds {
        let cfg = RefinementConfig {
            target_speed: n,
            ..req.refinement.clone()
        };
        runs.push(refinement::run(demo, &cfg, &ctx)?);
    }

    let mut out = Output::create(&req.out)?;
    let mut run_results = Vec::with_capacity(runs.len());
    for (run, &n) in runs.iter().zip(&speeds) {
        run_results.push(record_run(&mut out, run, n)?);
    }
    let results = ResultsFile {
        format_version: FORMAT_VERSION,
        task: scenario.task.kind,
        mode: req.refinement.mode,
        seed,
        refinement: req.refinement.clone(),
        scenario: scenario.clone(),
        demo: DemoDigest {
            reference_sha256: loaded.inputs[1].sha256.clone(),
            measured_sha256: loaded.inputs[2].sha256.clone(),
            samples: demo.reference.len(),
        },
        runs: run_results,
    };
    out.write_json(RESULTS_FILE, &results)?;
    if req.emit.curves {
        out.write("learning_curve.csv", curve_table(&results).as_bytes())?;
    }
    if req.emit.tables {
        out.write("final.csv", final_table(&results).as_bytes())?;
    }
    if req.emit.plots {
        let series: Vec<Series> = results
            .runs
            .iter()
            .map(|r| curve_series(r, format!("{} x{}", results.mode.name(), r.speed)))
            .collect();
        let svg = line_chart(
            &format!("{} learning curve", results.task),
            "iteration",
            "DTW (mm)",
            &series,
            false,
        );
        out.write("learning_curve.svg", svg.as_bytes())?;
    }
    let config = serde_json::json!({
        "demo_dir": req.demo_dir.display().to_string(),
        "refinement": to_json(&req.refinement),
        "speeds": speeds,
        "scenario": to_json(&scenario),
        "emit": to_json(&req.emit),
    });
    let manifest = out.finish("refine", seed, config, loaded.inputs)?;
    Ok(RefineOutcome {
        results,
        runs,
        manifest,
    })
}

// ---------------------------------------------------------------- compare

#[derive(Debug, Clone)]
pub struct CompareRequest {
    pub results: Vec<PathBuf>,
    pub out: PathBuf,
    pub emit: Emit,
}

/// Method by speed grids of final DTW and RMS contact force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub format_version: u32,
    pub task: TaskKind,
    pub methods: Vec<String>,
    pub speeds: Vec<usize>,
    /// `dtw[method][speed]`, meters.
    pub dtw: Vec<Vec<Option<f64>>>,
    /// `rms_force[method][speed]`, newtons.
    pub rms_force: Vec<Vec<Option<f64>>>,
}

impl Comparison {
    pub fn cell(&self, method: &str, speed: usize) -> Option<f64> {
        let m = self.methods.iter().position(|x| x == method)?;
        let s = self.speeds.iter().position(|x| *x == speed)?;
        self.dtw[m][s]
    }
}

fn grid_csv(c: &Comparison, grid: &[Vec<Option<f64>>]) -> String {
    let mut s = String::from("method");
    for n in &c.speeds {
        s.push_str(&format!(",x{n}"));
    }
    s.push('\n');
    for (m, row) in c.methods.iter().zip(grid) {
        s.push_str(m);
        for v in row {
            s.push(',');
            s.push_str(&fmt_opt(*v));
        }
        s.push('\n');
    }
    s
}

pub fn cmd_compare(req: &CompareRequest) -> Result<Comparison, CampaignError> {
    if req.results.len() < 2 {
        return Err(CampaignError::Config("compare needs at least two results files".into()));
    }
    let files = req
        .results
        .iter()
        .map(|p| ResultsFile::load(p).map(|r| (p.clone(), r)))
        .collect::<Result<Vec<_>, _>>()?;
    let task = files[0].1.task;
    if let Some((p, r)) = files.iter().find(|(_, r)| r.task != task) {
        return Err(CampaignError::Mismatch(format!(
            "{} is for task {} but {} is for task {}",
            p.display(),
            r.task,
            req.results[0].display(),
            task
        )));
    }
    if let Some((p, _)) = files.iter().find(|(_, r)| r.demo != files[0].1.demo) {
        return Err(CampaignError::Mismatch(format!(
            "{} was computed from a different demonstration",
            p.display()
        )));
    }
    let speeds: Vec<usize> = files
        .iter()
        .flat_map(|(_, r)| r.speeds())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut methods: Vec<String> = Vec::new();
    for (_, r) in &files {
        let base = r.mode.name().to_string();
        let mut name = base.clone();
        let mut k = 2;
        while methods.contains(&name) {
            name = format!("{base}#{k}");
            k += 1;
        }
        methods.push(name);
    }
    let grid = |f: fn(&StageResult) -> Option<f64>| -> Vec<Vec<Option<f64>>> {
        files
            .iter()
            .map(|(_, r)| speeds.iter().map(|&n| r.stage_final(n).and_then(f)).collect())
            .collect()
    };
    let comparison = Comparison {
        format_version: FORMAT_VERSION,
        task,
        dtw: grid(|s| s.final_dtw),
        rms_force: grid(|s| s.final_rms_force),
        methods,
        speeds,
    };

    let mut out = Output::create(&req.out)?;
    out.write_json("comparison.json", &comparison)?;
    if req.emit.tables {
        out.write("table_dtw.csv", grid_csv(&comparison, &comparison.dtw).as_bytes())?;
        out.write("table_rms_force.csv", grid_csv(&comparison, &comparison.rms_force).as_bytes())?;
    }
    if req.emit.plots {
        let curves: Vec<Series> = files
            .iter()
            .zip(&comparison.methods)
            .filter_map(|((_, r), name)| {
                let run = r.runs.iter().max_by_key(|run| run.speed)?;
                Some(curve_series(run, format!("{name} x{}", run.speed)))
            })
            .collect();
        let svg = line_chart(&format!("{task} learning curves"), "iteration", "DTW (mm)", &curves, false);
        out.write("learning_curves.svg", svg.as_bytes())?;

        // XY overlay at the fastest speed every method reached
        let common = comparison
            .speeds
            .iter()
            .rev()
            .find(|&&n| files.iter().all(|(_, r)| r.stage_final(n).and_then(|s| s.final_dtw).is_some()))
            .copied();
        if let Some(n) = common {
            let mut overlay = Vec::new();
            for ((path, r), name) in files.iter().zip(&comparison.methods) {
                let dir = path.parent().unwrap_or(Path::new("."));
                let stage = r.stage_final(n).expect("checked above");
                if overlay.is_empty() {
                    let target = load_traj(&dir.join(&stage.target))?;
                    overlay.push(Series {
                        name: "target".into(),
                        points: target.positions().iter().map(|p| (p.x, p.y)).collect(),
                    });
                }
                let last = stage.iterations.iter().rev().find(|i| i.stop.is_none());
                if let Some(m) = last.and_then(|i| i.measured.as_ref()) {
                    let traj = load_traj(&dir.join(m))?;
                    overlay.push(Series {
                        name: format!("{name} x{n}"),
                        points: traj.positions().iter().map(|p| (p.x, p.y)).collect(),
                    });
                }
            }
            let svg = line_chart(&format!("{task} executed XY at x{n}"), "x (m)", "y (m)", &overlay, true);
            out.write(&format!("xy_overlay_x{n:02}.svg"), svg.as_bytes())?;
        }
    }
    let inputs = req.results.iter().map(|p| hash_input(p)).collect::<Result<Vec<_>, _>>()?;
    let config = serde_json::json!({
        "results": req.results.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "emit": to_json(&req.emit),
    });
    let seed = files[0].1.seed;
    out.finish("compare", seed, config, inputs)?;
    Ok(comparison)
}

// ---------------------------------------------------------------- dataset

#[derive(Debug, Clone)]
pub struct DatasetRequest {
    /// Demonstration the reference was refined from; supplies the plant and the start state.
    pub demo_dir: PathBuf,
    pub scenario: Option<ScenarioConfig>,
    pub reference: PathBuf,
    pub rollouts: usize,
    pub sigma_pos: f64,
    pub sigma_rot: f64,
    pub seed: u64,
    pub force_limit: Option<f64>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub index: usize,
    pub seed: u64,
    pub observation: Option<String>,
    pub action: Option<String>,
    pub rms_force: Option<f64>,
    pub stop: Option<StopEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format_version: u32,
    pub task: TaskKind,
    pub reference_sha256: String,
    pub sigma_pos: f64,
    pub sigma_rot: f64,
    pub seed: u64,
    pub episode_count: usize,
    pub episodes: Vec<EpisodeEntry>,
    /// Rollouts that tripped the safety monitor; not counted and not written.
    pub excluded: Vec<EpisodeEntry>,
}

/// Seed of rollout `k`.
pub fn episode_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(k as u64)
}

/// Replays `rollouts` noise-perturbed copies of a refined reference and
/// saves each as an (observation, action) trajectory pair.
pub fn cmd_dataset(req: &DatasetRequest) -> Result<DatasetIndex, CampaignError> {
    if !(req.sigma_pos >= 0.0 && req.sigma_rot >= 0.0) {
        return Err(CampaignError::Config("noise sigmas must be non-negative".into()));
    }
    let loaded = load_demo(&req.demo_dir)?;
    let mut scenario = req.scenario.clone().unwrap_or(loaded.scenario.clone());
    if let Some(limit) = req.force_limit {
        scenario.safety.force_limit = limit;
    }
    scenario.validate()?;
    let ctx = scenario.context();
    let reference = load_traj(&req.reference)?.without_wrench();
    let ref_entry = hash_input(&req.reference)?;
    let initial = PlantState::at_rest(*loaded.demo.reference.pose(0), &ctx.contact);

    let mut out = Output::create(&req.out)?;
    let mut episodes = Vec::new();
    let mut excluded = Vec::new();
    for k in 0..req.rollouts {
        let seed = episode_seed(req.seed, k);
        let action = add_pose_noise(&reference, req.sigma_pos, req.sigma_rot, seed).with_label(format!("episode_{k:03}/action"));
        let result = playback(&action, &ctx, &initial)?;
        if let Some(stop) = result.stop {
            excluded.push(EpisodeEntry {
                index: k,
                seed,
                observation: None,
                action: None,
                rms_force: None,
                stop: Some(stop),
            });
            continue;
        }
        let observation = result
            .measured
            .expect("completed playback")
            .with_label(format!("episode_{k:03}/observation"));
        let obs_path = format!("episodes/episode_{k:03}/observation.traj");
        let act_path = format!("episodes/episode_{k:03}/action.traj");
        out.write_traj(&obs_path, &observation)?;
        out.write_traj(&act_path, &action)?;
        episodes.push(EpisodeEntry {
            index: k,
            seed,
            observation: Some(obs_path),
            action: Some(act_path),
            rms_force: crate::metrics::rms_contact_force(&observation).ok(),
            stop: None,
        });
    }
    let index = DatasetIndex {
        format_version: FORMAT_VERSION,
        task: scenario.task.kind,
        reference_sha256: ref_entry.sha256.clone(),
        sigma_pos: req.sigma_pos,
        sigma_rot: req.sigma_rot,
        seed: req.seed,
        episode_count: episodes.len(),
        episodes,
        excluded,
    };
    out.write_json("dataset.json", &index)?;
    let mut inputs = loaded.inputs;
    inputs.push(ref_entry);
    let config = serde_json::json!({
        "demo_dir": req.demo_dir.display().to_string(),
        "reference": req.reference.display().to_string(),
        "rollouts": req.rollouts,
        "sigma_pos": req.sigma_pos,
        "sigma_rot": req.sigma_rot,
        "episode_count": index.episode_count,
        "scenario": to_json(&scenario),
    });
    out.finish("dataset", req.seed, config, inputs)?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_toml_roundtrip() {
        for kind in TaskKind::ALL {
            let cfg = ScenarioConfig::for_task(kind);
            let text = cfg.to_toml();
            assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), cfg, "{text}");
        }
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let full = ScenarioConfig::for_task(TaskKind::FlatErase);
        let task_only: String = full
            .to_toml()
            .split("\n[")
            .filter(|s| s.starts_with("task"))
            .map(|s| format!("[{s}\n"))
            .collect();
        let text = format!("format_version = 1\n{task_only}");
        assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), full, "{text}");
    }

    #[test]
    fn unknown_task_kind_is_schema_error() {
        let text = ScenarioConfig::for_task(TaskKind::FlatErase)
            .to_toml()
            .replace("kind = \"flat_erase\"", "kind = \"window_cleaning\"");
        let err = ScenarioConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, CampaignError::Schema(_)), "{err}");
        assert!(err.to_string().starts_with("SchemaError"));
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = ScenarioConfig::for_task(TaskKind::PegInHole)
            .to_toml()
            .replace("format_version = 1", "format_version = 7");
        assert!(matches!(ScenarioConfig::from_toml(&text), Err(CampaignError::Schema(_))));
    }

    #[test]
    fn emit_parsing() {
        assert_eq!(Emit::parse("tables,plots").unwrap(), Emit { tables: true, curves: false, plots: true });
        assert_eq!(Emit::parse("none").unwrap(), Emit::none());
        assert!(Emit::parse("movies").is_err());
    }

    #[test]
    fn hashes_are_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
