//! Task setups and synthetic slow demonstrations.
//!
//! A demonstration is a scripted reference that follows the task's nominal
//! path with minimum-jerk phase timing plus seeded low-frequency jitter, and
//! the plant's response to it. All tasks keep the tool frame aligned with the
//! local surface frame; the curved task rolls the tool about the cylinder axis
//! to follow the surface normal.

use crate::geometry::Pose;
use crate::plant::{playback, ContactGeometry, ContactModel, PlantContext, PlantError, PlantState, StopEvent};
use crate::trajectory::{Trajectory, TrajectoryError};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Rate at which demonstrations are recorded (Hz).
pub const RECORD_RATE_HZ: f64 = 50.0;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("demonstration tripped the safety monitor: {0:?}")]
    Stopped(StopEvent),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    FlatErase,
    CurvedErase,
    PegInHole,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::FlatErase, TaskKind::CurvedErase, TaskKind::PegInHole];

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::FlatErase => "flat_erase",
            TaskKind::CurvedErase => "curved_erase",
            TaskKind::PegInHole => "peg_in_hole",
        }
    }

    pub fn parse(s: &str) -> Option<TaskKind> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parametric path of the demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NominalPath {
    /// Circular arc in surface coordinates: in-plane axes for a plane,
    /// `(axial, arc length around the axis)` for a cylinder. Angles in degrees.
    Arc {
        center: [f64; 2],
        radius: f64,
        start_deg: f64,
        end_deg: f64,
        /// Height above the surface at which the demonstration starts (m).
        hover_height: f64,
    },
    /// Free-space approach to a point above the hole, then insertion along the axis.
    Insertion {
        start: [f64; 3],
        hover_height: f64,
        insert_depth: f64,
    },
}

/// Seeded band-limited in-surface wobble, a stand-in for operator hand jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterSpec {
    /// RMS amplitude per axis (m).
    pub amplitude: f64,
    /// Highest frequency component (Hz).
    pub max_frequency_hz: f64,
    pub components: usize,
}

impl Default for JitterSpec {
    fn default() -> Self {
        JitterSpec {
            amplitude: 0.0005,
            max_frequency_hz: 0.5,
            components: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub contact: ContactModel,
    pub path: NominalPath,
    pub demo_duration_s: f64,
    /// Commanded depth of the reference below the surface while erasing (m).
    #[serde(default)]
    pub press_depth: f64,
    #[serde(default)]
    pub jitter: JitterSpec,
}

/// Fraction of the demonstration spent on each phase: lead-in, main motion, final hold.
const PHASES: [f64; 3] = [0.15, 0.80, 0.05];
const PEG_PHASES: [f64; 3] = [0.45, 0.45, 0.10];

impl TaskSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.contact.validate()?;
        let bad = |m: &str| Err(ScenarioError::InvalidTask(m.to_string()));
        if !(self.demo_duration_s > 0.0) {
            return bad("demo_duration_s must be positive");
        }
        if !(self.jitter.amplitude >= 0.0) || !(self.jitter.max_frequency_hz > 0.0) {
            return bad("jitter needs amplitude >= 0 and max_frequency_hz > 0");
        }
        match (&self.kind, &self.path, &self.contact.geometry) {
            (TaskKind::FlatErase, NominalPath::Arc { radius, .. }, ContactGeometry::Plane { .. })
            | (TaskKind::CurvedErase, NominalPath::Arc { radius, .. }, ContactGeometry::Cylinder { .. }) => {
                if !(*radius > 0.0) {
                    return bad("arc radius must be positive");
                }
                if !(self.press_depth > 0.0) {
                    return bad("erasing needs press_depth > 0");
                }
            }
            (
                TaskKind::PegInHole,
                NominalPath::Insertion { insert_depth, .. },
                ContactGeometry::Hole { depth, .. },
            ) => {
                if !(*insert_depth > 0.0 && insert_depth < depth) {
                    return bad("insert_depth must lie within the hole depth");
                }
            }
            _ => return bad("task kind, path and contact geometry do not match"),
        }
        Ok(())
    }

    /// Number of recorded samples in the demonstration.
    pub fn sample_count(&self) -> usize {
        (self.demo_duration_s * RECORD_RATE_HZ).round() as usize
    }

    /// Radial hole clearance, for peg tasks.
    pub fn clearance(&self) -> Option<f64> {
        match self.contact.geometry {
            ContactGeometry::Hole {
                hole_radius,
                peg_radius,
                ..
            } => Some(hole_radius - peg_radius),
            _ => None,
        }
    }

    /// The reference pose at normalized progress `s` in `[0, 1]` with an
    /// in-surface offset `(du, dw)`.
    fn pose_at(&self, s: f64, offset: [f64; 2]) -> Pose {
        let phases = if self.kind == TaskKind::PegInHole { PEG_PHASES } else { PHASES };
        let (phase, u) = phase_progress(s, &phases);
        match (&self.path, &self.contact.geometry) {
            (
                NominalPath::Arc {
                    center,
                    radius,
                    start_deg,
                    end_deg,
                    hover_height,
                },
                geometry,
            ) => {
                let angle = |u: f64| (start_deg + (end_deg - start_deg) * u).to_radians();
                let (theta, height) = match phase {
                    0 => (angle(0.0), hover_height + (-self.press_depth - hover_height) * u),
                    1 => (angle(u), -self.press_depth),
                    _ => (angle(1.0), -self.press_depth),
                };
                let coords = [
                    center[0] + radius * theta.cos() + offset[0],
                    center[1] + radius * theta.sin() + offset[1],
                ];
                surface_pose(geometry, coords, height)
            }
            (
                NominalPath::Insertion {
                    start,
                    hover_height,
                    insert_depth,
                },
                ContactGeometry::Hole { center, axis, .. },
            ) => {
                let a = Vector3::from(*axis).normalize();
                let above = Vector3::from(*center) + a * *hover_height;
                let bottom = Vector3::from(*center) - a * *insert_depth;
                let (e1, e2) = perpendicular_basis(&a);
                let p = match phase {
                    0 => Vector3::from(*start) + (above - Vector3::from(*start)) * u + e1 * offset[0] + e2 * offset[1],
                    1 => above + (bottom - above) * u,
                    _ => bottom,
                };
                Pose::new(UnitQuaternion::identity(), p)
            }
            _ => unreachable!("validated task"),
        }
    }

    /// Normalized progress interval of the main motion phase.
    pub fn main_phase(&self) -> (f64, f64) {
        let phases = if self.kind == TaskKind::PegInHole { PEG_PHASES } else { PHASES };
        (phases[0], phases[0] + phases[1])
    }
}

fn min_jerk(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
}

/// Phase index and min-jerk progress within it.
fn phase_progress(s: f64, phases: &[f64; 3]) -> (usize, f64) {
    let mut start = 0.0;
    for (i, len) in phases.iter().enumerate() {
        if s <= start + len || i == phases.len() - 1 {
            return (i, min_jerk((s - start) / len));
        }
        start += len;
    }
    unreachable!()
}

fn perpendicular_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let seed = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (seed - n * seed.dot(n)).normalize();
    (e1, n.cross(&e1))
}

/// Pose at surface coordinates `coords`, `height` along the outward normal.
fn surface_pose(geometry: &ContactGeometry, coords: [f64; 2], height: f64) -> Pose {
    match geometry {
        ContactGeometry::Plane { point, normal } => {
            let n = Vector3::from(*normal).normalize();
            let (e1, e2) = perpendicular_basis(&n);
            let p = Vector3::from(*point) + e1 * coords[0] + e2 * coords[1] + n * height;
            Pose::new(UnitQuaternion::identity(), p)
        }
        ContactGeometry::Cylinder {
            axis_point,
            axis_dir,
            radius,
        } => {
            let a = Vector3::from(*axis_dir).normalize();
            let z = Vector3::z();
            let up = {
                let u = z - a * z.dot(&a);
                if u.norm() > 1e-9 {
                    u.normalize()
                } else {
                    perpendicular_basis(&a).0
                }
            };
            let side = a.cross(&up);
            let phi = coords[1] / radius;
            let normal = up * phi.cos() + side * phi.sin();
            let p = Vector3::from(*axis_point) + a * coords[0] + normal * (radius + height);
            let rot = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(a), phi);
            Pose::new(rot, p)
        }
        _ => unreachable!("arc paths need a plane or cylinder"),
    }
}

/// Slow demonstration: the reference that produced it and the executed motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Demo {
    pub reference: Trajectory,
    pub measured: Trajectory,
}

impl Demo {
    pub fn new(reference: Trajectory, measured: Trajectory) -> Result<Self, ScenarioError> {
        if reference.len() != measured.len() {
            return Err(ScenarioError::InvalidTask(format!(
                "demo reference has {} samples but measured has {}",
                reference.len(),
                measured.len()
            )));
        }
        Ok(Demo { reference, measured })
    }

    /// Plant state every playback starts from: at rest on the first reference pose.
    pub fn initial_state(&self, ctx: &PlantContext) -> PlantState {
        PlantState::at_rest(*self.reference.pose(0), &ctx.contact)
    }
}

/// Two-channel sum of sinusoids with random frequencies and phases,
/// scaled so that each channel has the requested RMS.
fn jitter_fn(spec: &JitterSpec, seed: u64) -> impl Fn(f64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.components.max(1);
    let comps: Vec<[(f64, f64); 2]> = (0..k)
        .map(|_| {
            std::array::from_fn(|_| {
                let f = rng.random_range(0.05..spec.max_frequency_hz.max(0.05 + 1e-9));
                let ph = rng.random_range(0.0..2.0 * PI);
                (f, ph)
            })
        })
        .collect();
    // each unit sinusoid has RMS 1/sqrt(2)
    let scale = spec.amplitude * (2.0 / k as f64).sqrt();
    move |t: f64| {
        let mut out = [0.0; 2];
        for c in &comps {
            for ch in 0..2 {
                let (f, ph) = c[ch];
                out[ch] += scale * (2.0 * PI * f * t + ph).sin();
            }
        }
        out
    }
}

/// The scripted reference of a demonstration, recorded at [`RECORD_RATE_HZ`].
pub fn demo_reference(task: &TaskSpec, seed: u64) -> Result<Trajectory, ScenarioError> {
    task.validate()?;
    let count = task.sample_count();
    if count < 2 {
        return Err(ScenarioError::InvalidTask("demonstration shorter than two samples".into()));
    }
    let jitter = jitter_fn(&task.jitter, seed);
    let (s0, s1) = task.main_phase();
    let lead = if task.kind == TaskKind::PegInHole { (0.0, s0) } else { (s0, s1) };
    let poses = (0..count)
        .map(|k| {
            let s = k as f64 / (count - 1) as f64;
            let t = k as f64 / RECORD_RATE_HZ;
            // wobble only during the free approach (peg) or the arc (erasing), faded in and out
            let offset = if s > lead.0 && s < lead.1 {
                let w = (PI * (s - lead.0) / (lead.1 - lead.0)).sin().powi(2);
                let j = jitter(t);
                [j[0] * w, j[1] * w]
            } else {
                [0.0, 0.0]
            };
            task.pose_at(s, offset)
        })
        .collect();
    Ok(Trajectory::from_poses(poses, RECORD_RATE_HZ, format!("{}/demo_ref", task.kind))?)
}

/// Synthesizes a 1x demonstration and executes it on the plant.
pub fn generate_demo(task: &TaskSpec, ctx: &PlantContext, seed: u64) -> Result<Demo, ScenarioError> {
    let reference = demo_reference(task, seed)?;
    let initial = PlantState::at_rest(*reference.pose(0), &ctx.contact);
    let out = playback(&reference, ctx, &initial)?;
    if let Some(stop) = out.stop {
        return Err(ScenarioError::Stopped(stop));
    }
    let measured = out
        .measured
        .expect("completed playback has every sample")
        .with_label(format!("{}/demo_measured", task.kind));
    Demo::new(reference, measured)
}

/// The three canonical tasks.
///
/// * flat erase: whiteboard plane `z = 0`, 90 degree arc of radius 0.1 m
/// * curved erase: cylinder of radius 0.15 m along x, top line at `z = 0`
/// * peg in hole: 9 mm peg, 10 mm hole, 30 mm deep, 1 mm chamfer
pub fn default_tasks() -> Vec<TaskSpec> {
    TaskKind::ALL.into_iter().map(default_task).collect()
}

pub fn default_task(kind: TaskKind) -> TaskSpec {
    match kind {
        TaskKind::FlatErase => TaskSpec {
            kind,
            contact: ContactModel::with_geometry(
                ContactGeometry::Plane {
                    point: [0.4, 0.0, 0.0],
                    normal: [0.0, 0.0, 1.0],
                },
                0.3,
            ),
            path: NominalPath::Arc {
                center: [0.0, 0.0],
                radius: 0.1,
                start_deg: 0.0,
                end_deg: 90.0,
                hover_height: 0.02,
            },
            demo_duration_s: 20.0,
            press_depth: DEFAULT_PRESS_DEPTH,
            jitter: JitterSpec::default(),
        },
        TaskKind::CurvedErase => TaskSpec {
            kind,
            contact: ContactModel::with_geometry(
                ContactGeometry::Cylinder {
                    axis_point: [0.4, 0.0, -0.15],
                    axis_dir: [1.0, 0.0, 0.0],
                    radius: 0.15,
                },
                0.3,
            ),
            path: NominalPath::Arc {
                center: [0.0, 0.0],
                radius: 0.1,
                start_deg: 0.0,
                end_deg: 90.0,
                hover_height: 0.02,
            },
            demo_duration_s: 20.0,
            press_depth: DEFAULT_PRESS_DEPTH,
            jitter: JitterSpec::default(),
        },
        TaskKind::PegInHole => TaskSpec {
            kind,
            contact: ContactModel::with_geometry(
                ContactGeometry::Hole {
                    center: [0.4, 0.1, 0.0],
                    axis: [0.0, 0.0, 1.0],
                    hole_radius: 0.010,
                    peg_radius: 0.009,
                    depth: 0.030,
                    chamfer: 0.001,
                },
                0.1,
            ),
            path: NominalPath::Insertion {
                start: [0.45, 0.05, 0.04],
                hover_height: 0.01,
                insert_depth: 0.025,
            },
            demo_duration_s: 15.0,
            press_depth: 0.0,
            jitter: JitterSpec::default(),
        },
    }
}

/// Commanded depth below the surface for erasing. With the default 300 N/m
/// stiffness this gives about 5 N of steady contact force.
pub const DEFAULT_PRESS_DEPTH: f64 = 0.017;
