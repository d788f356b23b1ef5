//! Fixed-rate pose/wrench sequences and the resampling used by refinement.
//!
//! # File format
//!
//! Trajectories are stored as line-oriented text. A block of `key=value`
//! header lines is followed by one comma-separated column header and one row
//! per sample:
//!
//! ```text
//! # fastdemo trajectory
//! format_version=1
//! rate_hz=5.0000000000000000e1
//! label=flat_erase/demo_measured
//! has_wrench=true
//! index,tx,ty,tz,qw,qx,qy,qz,fx,fy,fz,mx,my,mz
//! 0,1.0000000000000000e-1,...
//! ```
//!
//! Lines starting with `#` are comments. Every number is written with 17
//! significant digits so that a save/load/save cycle is byte-identical.
//! Quaternions are written with `qw >= 0`. Without wrench data the last six
//! columns are omitted. In labels, backslash and newline are escaped as `\\`
//! and `\n`.

use crate::geometry::{compose, geodesic_interpolate, pose_exp, GeometryError, Pose, Twist};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt::Write as _;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

const POSE_COLUMNS: [&str; 8] = ["index", "tx", "ty", "tz", "qw", "qx", "qy", "qz"];
const WRENCH_COLUMNS: [&str; 6] = ["fx", "fy", "fz", "mx", "my", "mz"];

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("trajectory needs at least {min} samples, got {len}")]
    TooShort { len: usize, min: usize },
    #[error("rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("wrench channel has {wrenches} entries for {poses} poses")]
    WrenchMismatch { poses: usize, wrenches: usize },
    #[error("non-finite value in sample {0}")]
    NonFinite(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing or invalid header field `{field}`")]
    Schema { field: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Force (N) and torque (N m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Wrench { force, torque }
    }

    pub fn zero() -> Self {
        Wrench::default()
    }

    pub fn from_force(force: Vector3<f64>) -> Self {
        Wrench { force, torque: Vector3::zeros() }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Wrench {
            force: Vector3::new(a[0], a[1], a[2]),
            torque: Vector3::new(a[3], a[4], a[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    fn lerp(&self, other: &Wrench, s: f64) -> Wrench {
        Wrench {
            force: self.force + (other.force - self.force) * s,
            torque: self.torque + (other.torque - self.torque) * s,
        }
    }
}

/// Time-indexed pose sequence sampled at a fixed rate, with an optional
/// wrench reading per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
    wrenches: Option<Vec<Wrench>>,
    rate_hz: f64,
    label: String,
}

impl Trajectory {
    pub fn new(
        poses: Vec<Pose>,
        wrenches: Option<Vec<Wrench>>,
        rate_hz: f64,
        label: impl Into<String>,
    ) -> Result<Self, TrajectoryError> {
        if poses.len() < 2 {
            return Err(TrajectoryError::TooShort { len: poses.len(), min: 2 });
        }
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(TrajectoryError::InvalidRate(rate_hz));
        }
        if let Some(w) = &wrenches {
            if w.len() != poses.len() {
                return Err(TrajectoryError::WrenchMismatch {
                    poses: poses.len(),
                    wrenches: w.len(),
                });
            }
            if let Some(i) = w.iter().position(|w| !w.is_finite()) {
                return Err(TrajectoryError::NonFinite(i));
            }
        }
        if let Some(i) = poses.iter().position(|p| {
            !(p.translation().iter().all(|x| x.is_finite())
                && p.quaternion_wxyz().iter().all(|x| x.is_finite()))
        }) {
            return Err(TrajectoryError::NonFinite(i));
        }
        Ok(Trajectory {
            poses,
            wrenches,
            rate_hz,
            label: label.into(),
        })
    }

    pub fn from_poses(poses: Vec<Pose>, rate_hz: f64, label: impl Into<String>) -> Result<Self, TrajectoryError> {
        Self::new(poses, None, rate_hz, label)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn pose(&self, i: usize) -> &Pose {
        &self.poses[i]
    }

    pub fn wrenches(&self) -> Option<&[Wrench]> {
        self.wrenches.as_deref()
    }

    pub fn has_wrench(&self) -> bool {
        self.wrenches.is_some()
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn duration_s(&self) -> f64 {
        (self.len() - 1) as f64 / self.rate_hz
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Drops the wrench channel.
    pub fn without_wrench(mut self) -> Self {
        self.wrenches = None;
        self
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| *p.translation()).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrajectoryError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrajectoryError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(64 + self.len() * 200);
        out.push_str("# fastdemo trajectory\n");
        let _ = writeln!(out, "format_version={FORMAT_VERSION}");
        let _ = writeln!(out, "rate_hz={}", fmt_num(self.rate_hz));
        let _ = writeln!(out, "label={}", escape_label(&self.label));
        let _ = writeln!(out, "has_wrench={}", self.has_wrench());
        let mut cols: Vec<&str> = POSE_COLUMNS.to_vec();
        if self.has_wrench() {
            cols.extend(WRENCH_COLUMNS);
        }
        out.push_str(&cols.join(","));
        out.push('\n');
        for (i, p) in self.poses.iter().enumerate() {
            let _ = write!(out, "{i}");
            let t = p.translation();
            for x in [t.x, t.y, t.z].into_iter().chain(p.quaternion_wxyz()) {
                out.push(',');
                out.push_str(&fmt_num(x));
            }
            if let Some(w) = &self.wrenches {
                for x in w[i].to_array() {
                    out.push(',');
                    out.push_str(&fmt_num(x));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TrajectoryError> {
        let mut version = None;
        let mut rate = None;
        let mut label = None;
        let mut has_wrench = None;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

        // header block, terminated by the column line
        let columns_line = loop {
            let Some((n, line)) = lines.next() else {
                return Err(missing_header(version, rate, label.is_some(), has_wrench).unwrap_or(
                    TrajectoryError::Schema { field: "columns".into() },
                ));
            };
            let line = line.trim_end_matches('\r');
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if line.starts_with("index,") || line == "index" {
                break (n, line);
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(parse_err(n, format!("expected key=value header, got `{line}`")));
            };
            match key.trim() {
                "format_version" => {
                    let v: u32 = value
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(n, format!("bad format_version `{value}`")))?;
                    if v != FORMAT_VERSION {
                        return Err(TrajectoryError::Schema {
                            field: format!("format_version (unsupported {v})"),
                        });
                    }
                    version = Some(v);
                }
                "rate_hz" => rate = Some(parse_num(value.trim(), n)?),
                "label" => label = Some(unescape_label(value)),
                "has_wrench" => {
                    has_wrench = Some(match value.trim() {
                        "true" => true,
                        "false" => false,
                        other => return Err(parse_err(n, format!("bad has_wrench `{other}`"))),
                    })
                }
                other => return Err(parse_err(n, format!("unknown header field `{other}`"))),
            }
        };
        if let Some(e) = missing_header(version, rate, label.is_some(), has_wrench) {
            return Err(e);
        }
        let (rate, label, has_wrench) = (rate.unwrap(), label.unwrap(), has_wrench.unwrap());

        let mut expected: Vec<&str> = POSE_COLUMNS.to_vec();
        if has_wrench {
            expected.extend(WRENCH_COLUMNS);
        }
        let (cn, cl) = columns_line;
        if cl.split(',').map(str::trim).ne(expected.iter().copied()) {
            return Err(parse_err(cn, format!("expected columns `{}`", expected.join(","))));
        }

        let mut poses = Vec::new();
        let mut wrenches = has_wrench.then(Vec::new);
        for (n, line) in lines {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != expected.len() {
                return Err(parse_err(
                    n,
                    format!("expected {} fields, got {}", expected.len(), fields.len()),
                ));
            }
            let idx: usize = fields[0]
                .trim()
                .parse()
                .map_err(|_| parse_err(n, format!("bad index `{}`", fields[0])))?;
            if idx != poses.len() {
                return Err(parse_err(n, format!("index {idx} out of sequence, expected {}", poses.len())));
            }
            let mut vals = [0.0; 13];
            for (k, f) in fields[1..].iter().enumerate() {
                vals[k] = parse_num(f.trim(), n)?;
            }
            let t = Vector3::new(vals[0], vals[1], vals[2]);
            let q = [vals[3], vals[4], vals[5], vals[6]];
            let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !((qn - 1.0).abs() < 1e-6) {
                return Err(parse_err(n, format!("quaternion norm {qn} is not unit")));
            }
            poses.push(Pose::from_quaternion_wxyz(q, t));
            if let Some(w) = wrenches.as_mut() {
                w.push(Wrench::from_array([vals[7], vals[8], vals[9], vals[10], vals[11], vals[12]]));
            }
        }
        Trajectory::new(poses, wrenches, rate, label)
    }
}

fn missing_header(
    version: Option<u32>,
    rate: Option<f64>,
    label: bool,
    has_wrench: Option<bool>,
) -> Option<TrajectoryError> {
    let field = if version.is_none() {
        "format_version"
    } else if rate.is_none() {
        "rate_hz"
    } else if !label {
        "label"
    } else if has_wrench.is_none() {
        "has_wrench"
    } else {
        return None;
    };
    Some(TrajectoryError::Schema { field: field.into() })
}

fn parse_err(line: usize, message: String) -> TrajectoryError {
    TrajectoryError::Parse { line, message }
}

fn parse_num(s: &str, line: usize) -> Result<f64, TrajectoryError> {
    let v: f64 = s.parse().map_err(|_| parse_err(line, format!("bad number `{s}`")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite number `{s}`")));
    }
    Ok(v)
}

/// 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{:.16e}", x + 0.0)
}

fn escape_label(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\r', "")
}

fn unescape_label(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Keeps every `n`-th sample starting at index 0, producing `floor(T / n)`
/// samples at the original rate.
pub fn downsample(traj: &Trajectory, n: usize) -> Result<Trajectory, TrajectoryError> {
    assert!(n >= 1, "speedup factor must be at least 1");
    let len = traj.len() / n;
    if len < 2 {
        return Err(TrajectoryError::TooShort { len, min: 2 });
    }
    let last = traj.len() - 1;
    let idx = |k: usize| (k * n).min(last);
    let poses = (0..len).map(|k| traj.poses[idx(k)]).collect();
    let wrenches = traj
        .wrenches
        .as_ref()
        .map(|w| (0..len).map(|k| w[idx(k)]).collect());
    Trajectory::new(poses, wrenches, traj.rate_hz, traj.label.clone())
}

/// Resamples to `target_len` samples along SE(3) geodesics between
/// neighbours. Output sample `k` sits at fractional input index
/// `k (L - 1) / (target_len - 1)`; the end samples are copied exactly.
pub fn subsample_uniform(traj: &Trajectory, target_len: usize) -> Result<Trajectory, TrajectoryError> {
    if target_len < 2 {
        return Err(TrajectoryError::TooShort { len: target_len, min: 2 });
    }
    let src = traj.len() - 1;
    let den = target_len - 1;
    let mut poses = Vec::with_capacity(target_len);
    let mut wrenches = traj.wrenches.as_ref().map(|_| Vec::with_capacity(target_len));
    for k in 0..target_len {
        let num = k * src;
        let (i, rem) = (num / den, num % den);
        if rem == 0 {
            poses.push(traj.poses[i]);
            if let (Some(out), Some(w)) = (wrenches.as_mut(), traj.wrenches.as_ref()) {
                out.push(w[i]);
            }
        } else {
            let s = rem as f64 / den as f64;
            poses.push(geodesic_interpolate(&traj.poses[i], &traj.poses[i + 1], s)?);
            if let (Some(out), Some(w)) = (wrenches.as_mut(), traj.wrenches.as_ref()) {
                out.push(w[i].lerp(&w[i + 1], s));
            }
        }
    }
    Trajectory::new(poses, wrenches, traj.rate_hz, traj.label.clone())
}

/// Right-multiplies every pose by `exp` of a zero-mean Gaussian twist with
/// per-axis standard deviations `sigma_pos` (translation) and `sigma_rot`
/// (rotation). The wrench channel is left untouched.
pub fn add_pose_noise(traj: &Trajectory, sigma_pos: f64, sigma_rot: f64, seed: u64) -> Trajectory {
    assert!(sigma_pos >= 0.0 && sigma_rot >= 0.0, "noise sigmas must be non-negative");
    if sigma_pos == 0.0 && sigma_rot == 0.0 {
        return traj.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = Normal::new(0.0, sigma_pos).expect("finite sigma");
    let rot = Normal::new(0.0, sigma_rot).expect("finite sigma");
    let poses = traj
        .poses
        .iter()
        .map(|p| {
            let v = Vector3::from_fn(|_, _| pos.sample(&mut rng));
            let w = Vector3::from_fn(|_, _| rot.sample(&mut rng));
            compose(p, &pose_exp(&Twist::new(v, w)))
        })
        .collect();
    Trajectory {
        poses,
        wrenches: traj.wrenches.clone(),
        rate_hz: traj.rate_hz,
        label: traj.label.clone(),
    }
}
