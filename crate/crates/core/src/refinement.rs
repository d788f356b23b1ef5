//! Reference refinement at fixed speed (IRLC), with an incremental speed
//! schedule and warm starts (I2RLC), and the naive playback baseline.

use crate::geometry::{compose, inverse, pose_exp_with, pose_log_with, GeometryError, LieMap};
use crate::metrics::{dtw, rms_contact_force, DtwResult};
use crate::plant::{playback, PlantContext, PlantError, StopEvent, StopKind};
use crate::scenarios::Demo;
use crate::trajectory::{downsample, subsample_uniform, Trajectory, TrajectoryError};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RefinementError {
    #[error("trajectory lengths differ: reference {reference}, measured {measured}, target {target}")]
    LengthMismatch {
        reference: usize,
        measured: usize,
        target: usize,
    },
    #[error("tracking error rotation at sample {index} is {angle} rad, too close to pi")]
    RotationNearPi { index: usize, angle: f64 },
    #[error("invalid refinement config: {0}")]
    Config(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    PlaybackOnly,
    Irlc,
    #[default]
    I2rlc,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::PlaybackOnly => "playback",
            Mode::Irlc => "irlc",
            Mode::I2rlc => "i2rlc",
        }
    }
}

/// How many iterations IRLC gets at speed `n`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationBudget {
    /// `I (n - 1)`, the same total as an incremental campaign up to `n`.
    #[default]
    Matched,
    /// `I` iterations.
    Strict,
}

/// Side on which the correction is composed with the previous reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionSide {
    /// `ref * exp(l log(measured^-1 target))`, body frame.
    #[default]
    Right,
    /// `exp(l log(target measured^-1)) * ref`, spatial frame.
    Left,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AfterStop {
    /// End the campaign with what has been recorded.
    #[default]
    Abort,
    /// Move on to the next stage from the last reference that played back safely.
    Continue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    pub mode: Mode,
    /// Highest speedup of an incremental campaign.
    pub max_speed: usize,
    pub iterations_per_speed: usize,
    pub learning_gain: f64,
    /// Speed for IRLC and playback runs.
    pub target_speed: usize,
    pub budget: IterationBudget,
    pub correction_side: CorrectionSide,
    pub lie_map: LieMap,
    pub after_stop: AfterStop,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            mode: Mode::I2rlc,
            max_speed: 10,
            iterations_per_speed: 3,
            learning_gain: 0.4,
            target_speed: 10,
            budget: IterationBudget::Matched,
            correction_side: CorrectionSide::Right,
            lie_map: LieMap::Coupled,
            after_stop: AfterStop::Abort,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<(), RefinementError> {
        let bad = |m: String| Err(RefinementError::Config(m));
        if self.iterations_per_speed < 1 {
            return bad("iterations_per_speed must be at least 1".into());
        }
        if !(self.learning_gain > 0.0 && self.learning_gain <= 1.0) {
            return bad(format!("learning_gain must lie in (0, 1], got {}", self.learning_gain));
        }
        match self.mode {
            Mode::I2rlc if self.max_speed < 2 => bad("max_speed must be at least 2".into()),
            Mode::Irlc if self.target_speed < 1 => bad("target_speed must be at least 1".into()),
            Mode::PlaybackOnly if self.target_speed < 1 => bad("target_speed must be at least 1".into()),
            _ => Ok(()),
        }
    }

    /// Playbacks an IRLC run performs at speed `n`.
    pub fn irlc_iterations(&self, n: usize) -> usize {
        match self.budget {
            IterationBudget::Matched => self.iterations_per_speed * n.saturating_sub(1).max(1),
            IterationBudget::Strict => self.iterations_per_speed,
        }
    }
}

/// One correction step. Every timestep is corrected independently by a
/// fraction `l` of its tangent-space tracking error. The output has no wrench channel.
pub fn irlc_update(
    prev_ref: &Trajectory,
    measured: &Trajectory,
    target: &Trajectory,
    l: f64,
) -> Result<Trajectory, RefinementError> {
    irlc_update_with(prev_ref, measured, target, l, CorrectionSide::Right, LieMap::Coupled)
}

pub fn irlc_update_with(
    prev_ref: &Trajectory,
    measured: &Trajectory,
    target: &Trajectory,
    l: f64,
    side: CorrectionSide,
    map: LieMap,
) -> Result<Trajectory, RefinementError> {
    if prev_ref.len() != measured.len() || prev_ref.len() != target.len() {
        return Err(RefinementError::LengthMismatch {
            reference: prev_ref.len(),
            measured: measured.len(),
            target: target.len(),
        });
    }
    if !(l > 0.0 && l <= 1.0) {
        return Err(RefinementError::Config(format!("learning gain must lie in (0, 1], got {l}")));
    }
    let poses = (0..prev_ref.len())
        .map(|t| {
            let (p, m, g) = (prev_ref.pose(t), measured.pose(t), target.pose(t));
            let err = match side {
                CorrectionSide::Right => compose(&inverse(m), g),
                CorrectionSide::Left => compose(g, &inverse(m)),
            };
            let xi = pose_log_with(&err, map).map_err(|e| match e {
                GeometryError::RotationNearPi { angle } => RefinementError::RotationNearPi { index: t, angle },
                other => RefinementError::Trajectory(other.into()),
            })?;
            let step = pose_exp_with(&xi.scale(l), map);
            Ok(match side {
                CorrectionSide::Right => compose(p, &step),
                CorrectionSide::Left => compose(&step, p),
            })
        })
        .collect::<Result<Vec<_>, RefinementError>>()?;
    Ok(Trajectory::from_poses(poses, prev_ref.rate_hz(), prev_ref.label())?)
}

/// One playback and its metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based within the stage.
    pub iteration: usize,
    pub reference: Trajectory,
    /// Executed motion; truncated if the playback stopped.
    pub measured: Option<Trajectory>,
    /// Against the stage target.
    pub dtw: Option<DtwResult>,
    pub rms_force: Option<f64>,
    pub peak_force: f64,
    /// Safety trip or fault during playback, or a failed update after it.
    pub stop: Option<StopEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub speed: usize,
    /// Downsampled demonstration measurement the stage tracks.
    pub target: Trajectory,
    pub iterations: Vec<IterationRecord>,
    /// Reference of the last playback; `None` if the stage stopped.
    pub refined: Option<Trajectory>,
}

impl StageRecord {
    pub fn stop(&self) -> Option<&StopEvent> {
        self.iterations.iter().find_map(|i| i.stop.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementRun {
    pub mode: Mode,
    pub config: RefinementConfig,
    pub stages: Vec<StageRecord>,
}

impl RefinementRun {
    pub fn iterations(&self) -> impl Iterator<Item = &IterationRecord> {
        self.stages.iter().flat_map(|s| s.iterations.iter())
    }

    pub fn playback_count(&self) -> usize {
        self.iterations().count()
    }

    /// First stop of the campaign, with the speed it happened at.
    pub fn stop(&self) -> Option<(usize, usize, &StopEvent)> {
        let mut k = 0;
        for s in &self.stages {
            for it in &s.iterations {
                k += 1;
                if let Some(st) = &it.stop {
                    return Some((s.speed, k, st));
                }
            }
        }
        None
    }

    pub fn stopped(&self) -> bool {
        self.stop().is_some()
    }

    /// Normalized DTW of the last playback that completed.
    pub fn final_dtw(&self) -> Option<f64> {
        let last = self.stages.last()?.iterations.iter().rev().find(|i| i.stop.is_none())?;
        last.dtw.map(|d| d.normalized())
    }

    /// Largest normalized DTW over every playback of the campaign.
    pub fn max_dtw(&self) -> Option<f64> {
        self.iterations()
            .filter_map(|i| i.dtw.map(|d| d.normalized()))
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))))
    }

    pub fn max_speed(&self) -> Option<usize> {
        self.stages.last().map(|s| s.speed)
    }

    /// Refined reference per completed stage.
    pub fn refined_references(&self) -> Vec<(usize, &Trajectory)> {
        self.stages
            .iter()
            .filter_map(|s| s.refined.as_ref().map(|r| (s.speed, r)))
            .collect()
    }
}

fn fault(message: String, sample: usize) -> StopEvent {
    StopEvent {
        kind: StopKind::Fault { message },
        sample,
        control_step: 0,
    }
}

/// Plays `reference` back and scores it against `target`.
fn execute(
    iteration: usize,
    reference: Trajectory,
    target: &Trajectory,
    demo: &Demo,
    ctx: &PlantContext,
) -> Result<IterationRecord, RefinementError> {
    let out = playback(&reference, ctx, &demo.initial_state(ctx))?;
    let dtw = out
        .measured
        .as_ref()
        .map(|m| dtw(&m.positions(), &target.positions(), None));
    let rms_force = out.measured.as_ref().and_then(|m| rms_contact_force(m).ok());
    Ok(IterationRecord {
        iteration,
        reference,
        measured: out.measured,
        dtw,
        rms_force,
        peak_force: out.peak_force,
        stop: out.stop,
    })
}

/// Runs `iterations` playbacks at one speed starting from `initial`, updating
/// the reference between consecutive playbacks. Returns the stage and the last
/// reference that played back without a stop.
fn run_stage(
    speed: usize,
    initial: Trajectory,
    target: Trajectory,
    iterations: usize,
    demo: &Demo,
    ctx: &PlantContext,
    config: &RefinementConfig,
) -> Result<(StageRecord, Option<Trajectory>), RefinementError> {
    let mut records: Vec<IterationRecord> = Vec::with_capacity(iterations);
    let mut reference = initial;
    let mut last_safe = None;
    for i in 1..=iterations {
        if let Some(prev) = records.last_mut() {
            let measured = prev.measured.as_ref().expect("completed playback");
            match irlc_update_with(
                &prev.reference,
                measured,
                &target,
                config.learning_gain,
                config.correction_side,
                config.lie_map,
            ) {
                Ok(next) => reference = next,
                Err(RefinementError::RotationNearPi { index, angle }) => {
                    prev.stop = Some(fault(format!("update failed: rotation {angle} rad near pi"), index));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let rec = execute(i, reference.clone(), &target, demo, ctx)?;
        let stopped = rec.stop.is_some();
        records.push(rec);
        if stopped {
            break;
        }
        last_safe = Some(reference.clone());
    }
    let complete = records.len() == iterations && records.iter().all(|r| r.stop.is_none());
    let stage = StageRecord {
        speed,
        target,
        iterations: records,
        refined: if complete { last_safe.clone() } else { None },
    };
    Ok((stage, last_safe))
}

fn stage_pair(demo: &Demo, n: usize) -> Result<(Trajectory, Trajectory), RefinementError> {
    let reference = downsample(&demo.reference, n)?.with_label(format!("ref_x{n}"));
    let target = downsample(&demo.measured, n)?.with_label(format!("target_x{n}"));
    Ok((reference, target))
}

fn checked(config: &RefinementConfig, ctx: &PlantContext) -> Result<(), RefinementError> {
    config.validate()?;
    ctx.validate()?;
    Ok(())
}

/// Fixed-speed refinement at speed `n`, starting from the downsampled demonstration reference.
pub fn run_irlc(
    demo: &Demo,
    n: usize,
    config: &RefinementConfig,
    ctx: &PlantContext,
) -> Result<RefinementRun, RefinementError> {
    checked(config, ctx)?;
    if n < 1 {
        return Err(RefinementError::Config("speed must be at least 1".into()));
    }
    let (reference, target) = stage_pair(demo, n)?;
    let (stage, _) = run_stage(n, reference, target, config.irlc_iterations(n), demo, ctx, config)?;
    Ok(RefinementRun {
        mode: Mode::Irlc,
        config: RefinementConfig {
            mode: Mode::Irlc,
            target_speed: n,
            ..config.clone()
        },
        stages: vec![stage],
    })
}

/// Incremental campaign over speeds `2..=max_speed`, `I` iterations each. Every
/// stage after the first starts from the previous stage's refined reference,
/// resampled to the new length.
pub fn run_i2rlc(demo: &Demo, config: &RefinementConfig, ctx: &PlantContext) -> Result<RefinementRun, RefinementError> {
    checked(config, ctx)?;
    if config.max_speed < 2 {
        return Err(RefinementError::Config("max_speed must be at least 2".into()));
    }
    let pairs = (2..=config.max_speed)
        .map(|n| stage_pair(demo, n).map(|p| (n, p)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut stages = Vec::with_capacity(pairs.len());
    let mut carry: Option<Trajectory> = None;
    for (n, (downsampled_ref, target)) in pairs {
        let initial = match &carry {
            None => downsampled_ref,
            Some(prev) => subsample_uniform(prev, target.len())?.with_label(format!("ref_x{n}")),
        };
        let (stage, last_safe) = run_stage(n, initial, target, config.iterations_per_speed, demo, ctx, config)?;
        let stopped = stage.stop().is_some();
        carry = last_safe.or(carry);
        stages.push(stage);
        if stopped && config.after_stop == AfterStop::Abort {
            break;
        }
    }
    Ok(RefinementRun {
        mode: Mode::I2rlc,
        config: RefinementConfig {
            mode: Mode::I2rlc,
            ..config.clone()
        },
        stages,
    })
}

/// A single playback of the downsampled demonstration reference.
pub fn run_playback_baseline(demo: &Demo, n: usize, ctx: &PlantContext) -> Result<RefinementRun, RefinementError> {
    ctx.validate()?;
    if n < 1 {
        return Err(RefinementError::Config("speed must be at least 1".into()));
    }
    let (reference, target) = stage_pair(demo, n)?;
    let rec = execute(1, reference, &target, demo, ctx)?;
    Ok(RefinementRun {
        mode: Mode::PlaybackOnly,
        config: RefinementConfig {
            mode: Mode::PlaybackOnly,
            target_speed: n,
            ..RefinementConfig::default()
        },
        stages: vec![StageRecord {
            speed: n,
            target,
            iterations: vec![rec],
            refined: None,
        }],
    })
}

/// Dispatches on `config.mode`.
pub fn run(demo: &Demo, config: &RefinementConfig, ctx: &PlantContext) -> Result<RefinementRun, RefinementError> {
    match config.mode {
        Mode::PlaybackOnly => run_playback_baseline(demo, config.target_speed, ctx),
        Mode::Irlc => run_irlc(demo, config.target_speed, config, ctx),
        Mode::I2rlc => run_i2rlc(demo, config, ctx),
    }
}
