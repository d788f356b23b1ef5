//! Cartesian surrogate of a forward-dynamics compliance controlled arm.
//!
//! The end effector is a 6-DoF rigid body with diagonal virtual inertia. Each
//! control step computes the body-frame pose error to the reference, forms the
//! net wrench from the Cartesian stiffness and the environment reaction, passes
//! it through the PD stage, and integrates the resulting acceleration with
//! semi-implicit Euler. Contact is a penalty model against a plane, a convex
//! cylinder, or a chamfered hole.

use crate::geometry::{compose, geodesic_interpolate, inverse, pose_exp, pose_log, Pose, Twist};
use crate::trajectory::{Trajectory, TrajectoryError, Wrench};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlantError {
    #[error("simulation fault: {0}")]
    SimFault(String),
    #[error("invalid plant configuration: {0}")]
    Config(String),
}

/// Gains of the compliance controller, ordered `x, y, z, rx, ry, rz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerParams {
    /// Cartesian stiffness (N/m, N m/rad).
    pub k_c: [f64; 6],
    /// Proportional gain on the net wrench.
    pub k_p: [f64; 6],
    /// Derivative gain on the net wrench (s).
    pub k_d: [f64; 6],
    /// Diagonal virtual inertia (kg, kg m^2).
    pub m_vm: [f64; 6],
    pub control_rate_hz: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        let k_c = [300.0, 300.0, 300.0, 100.0, 100.0, 100.0];
        let k_p = [0.0252, 0.0252, 0.0252, 0.36, 0.36, 0.36];
        let k_d = [0.0072; 6];
        ControllerParams {
            k_c,
            k_p,
            k_d,
            m_vm: critically_damped_inertia(&k_c, &k_p, &k_d),
            control_rate_hz: 500.0,
        }
    }
}

/// Per-axis inertia at which the free-space loop
/// `m a = k_p k_c e - k_d k_c v` is critically damped: `m = k_d^2 k_c / (4 k_p)`.
/// About 0.154 kg and 0.0036 kg m^2 for the default gains.
pub fn critically_damped_inertia(k_c: &[f64; 6], k_p: &[f64; 6], k_d: &[f64; 6]) -> [f64; 6] {
    std::array::from_fn(|i| k_d[i] * k_d[i] * k_c[i] / (4.0 * k_p[i]))
}

impl ControllerParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        for (name, g) in [("k_c", &self.k_c), ("k_p", &self.k_p), ("k_d", &self.k_d), ("m_vm", &self.m_vm)] {
            if let Some(x) = g.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
                return Err(PlantError::Config(format!("{name} entries must be positive, got {x}")));
            }
        }
        if !(self.control_rate_hz > 0.0 && self.control_rate_hz.is_finite()) {
            return Err(PlantError::Config("control_rate_hz must be positive".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.control_rate_hz
    }
}

/// Task surface the end effector can touch. Vectors are world-frame `[x, y, z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContactGeometry {
    /// No environment.
    Free,
    /// Half-space below a plane; material lies opposite to `normal`.
    Plane { point: [f64; 3], normal: [f64; 3] },
    /// Solid convex cylinder; the end effector stays outside.
    Cylinder {
        axis_point: [f64; 3],
        axis_dir: [f64; 3],
        radius: f64,
    },
    /// Flat plate with a round hole. `center` lies on the top face and `axis`
    /// points out of the hole. The end effector point is the peg tip centre.
    Hole {
        center: [f64; 3],
        axis: [f64; 3],
        hole_radius: f64,
        peg_radius: f64,
        depth: f64,
        chamfer: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactModel {
    pub geometry: ContactGeometry,
    /// Normal penalty stiffness (N/m).
    pub k_env: f64,
    /// Normal damping (N s/m).
    pub d_env: f64,
    /// Coulomb coefficient.
    pub mu: f64,
    /// Tangential speed below which friction ramps linearly to zero (m/s).
    #[serde(default = "default_friction_smoothing")]
    pub friction_smoothing: f64,
}

fn default_friction_smoothing() -> f64 {
    0.01
}

impl ContactModel {
    pub fn free() -> Self {
        ContactModel {
            geometry: ContactGeometry::Free,
            k_env: 1e4,
            d_env: 50.0,
            mu: 0.0,
            friction_smoothing: default_friction_smoothing(),
        }
    }

    pub fn with_geometry(geometry: ContactGeometry, mu: f64) -> Self {
        ContactModel {
            geometry,
            k_env: 1e4,
            d_env: 50.0,
            mu,
            friction_smoothing: default_friction_smoothing(),
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.k_env > 0.0) || !(self.d_env >= 0.0) || !(self.mu >= 0.0) || !(self.friction_smoothing > 0.0) {
            return Err(PlantError::Config(
                "contact needs k_env > 0, d_env >= 0, mu >= 0, friction_smoothing > 0".into(),
            ));
        }
        match &self.geometry {
            ContactGeometry::Free => {}
            ContactGeometry::Plane { normal, .. } => nonzero(normal, "plane normal")?,
            ContactGeometry::Cylinder { axis_dir, radius, .. } => {
                nonzero(axis_dir, "cylinder axis")?;
                if !(*radius > 0.0) {
                    return Err(PlantError::Config("cylinder radius must be positive".into()));
                }
            }
            ContactGeometry::Hole {
                axis,
                hole_radius,
                peg_radius,
                depth,
                chamfer,
                ..
            } => {
                nonzero(axis, "hole axis")?;
                if !(hole_radius - peg_radius > 0.0) || !(*peg_radius > 0.0) {
                    return Err(PlantError::Config("hole clearance must be positive".into()));
                }
                if !(*depth > 0.0) || !(*chamfer >= 0.0) || *chamfer >= *depth {
                    return Err(PlantError::Config("need depth > chamfer >= 0".into()));
                }
            }
        }
        Ok(())
    }
}

fn nonzero(v: &[f64; 3], what: &str) -> Result<(), PlantError> {
    if Vector3::from(*v).norm() > 0.0 {
        Ok(())
    } else {
        Err(PlantError::Config(format!("{what} must be non-zero")))
    }
}

/// How each recorded reference sample is turned into per-step setpoints.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceInterpolation {
    #[default]
    ZeroOrderHold,
    /// Geodesic ramp from the previous sample, reaching the current one at
    /// the end of its hold window.
    Linear,
}

/// Sign with which the measured environment wrench enters the net wrench.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WrenchSign {
    #[default]
    Add,
    Subtract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorOptions {
    pub reference_interpolation: ReferenceInterpolation,
    /// Hard limit on translational speed (m/s).
    pub velocity_limit: f64,
    pub wrench_sign: WrenchSign,
    /// Standard deviation of Gaussian noise on the sensed force (N); 0 disables it.
    pub wrench_noise_std: f64,
    pub noise_seed: u64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            reference_interpolation: ReferenceInterpolation::ZeroOrderHold,
            velocity_limit: 5.0,
            wrench_sign: WrenchSign::Add,
            wrench_noise_std: 0.0,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyConfig {
    /// Force magnitude (N) above which the protective stop arms.
    pub force_limit: f64,
    /// Consecutive control steps above the limit needed to trip.
    pub dwell_steps: u32,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig {
            force_limit: 100.0,
            dwell_steps: 2,
        }
    }
}

/// Everything a playback needs besides the reference and the start state.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantContext {
    pub params: ControllerParams,
    pub contact: ContactModel,
    pub safety: SafetyConfig,
    pub integrator: IntegratorOptions,
}

impl PlantContext {
    pub fn new(contact: ContactModel) -> Self {
        PlantContext {
            params: ControllerParams::default(),
            contact,
            safety: SafetyConfig::default(),
            integrator: IntegratorOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        self.params.validate()?;
        self.contact.validate()?;
        if !(self.safety.force_limit > 0.0) || self.safety.dwell_steps == 0 {
            return Err(PlantError::Config("safety needs force_limit > 0 and dwell_steps >= 1".into()));
        }
        if !(self.integrator.velocity_limit > 0.0) || !(self.integrator.wrench_noise_std >= 0.0) {
            return Err(PlantError::Config("velocity_limit must be positive, noise non-negative".into()));
        }
        Ok(())
    }
}

/// Pose, body-frame twist and the world-frame environment wrench.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub pose: Pose,
    pub twist: Twist,
    pub f_ext: Wrench,
}

impl PlantState {
    /// Resting at `pose`, with the contact wrench evaluated there.
    pub fn at_rest(pose: Pose, contact: &ContactModel) -> Self {
        PlantState {
            pose,
            twist: Twist::zero(),
            f_ext: contact_wrench(&pose, &Twist::zero(), contact),
        }
    }
}

/// World-frame linear velocity of the end-effector origin.
fn world_velocity(pose: &Pose, twist: &Twist) -> Vector3<f64> {
    pose.rotation() * twist.v
}

/// Normal penalty plus regularized Coulomb friction for one contact.
fn penalty(pen: f64, normal: &Vector3<f64>, vel: &Vector3<f64>, c: &ContactModel) -> Vector3<f64> {
    if pen <= 0.0 {
        return Vector3::zeros();
    }
    let vn = vel.dot(normal);
    let fn_mag = (c.k_env * pen - c.d_env * vn).max(0.0);
    if fn_mag == 0.0 {
        return Vector3::zeros();
    }
    let vt = vel - normal * vn;
    let speed = vt.norm();
    let friction = if speed > c.friction_smoothing {
        -vt * (c.mu * fn_mag / speed)
    } else {
        -vt * (c.mu * fn_mag / c.friction_smoothing)
    };
    normal * fn_mag + friction
}

/// Environment reaction on the end effector, in the world frame, applied at
/// the tool point (no torque).
pub fn contact_wrench(pose: &Pose, twist: &Twist, contact: &ContactModel) -> Wrench {
    let p = *pose.translation();
    let vel = world_velocity(pose, twist);
    let force = match &contact.geometry {
        ContactGeometry::Free => Vector3::zeros(),
        ContactGeometry::Plane { point, normal } => {
            let n = Vector3::from(*normal).normalize();
            let pen = -(p - Vector3::from(*point)).dot(&n);
            penalty(pen, &n, &vel, contact)
        }
        ContactGeometry::Cylinder {
            axis_point,
            axis_dir,
            radius,
        } => {
            let a = Vector3::from(*axis_dir).normalize();
            let rel = p - Vector3::from(*axis_point);
            let radial = rel - a * rel.dot(&a);
            let d = radial.norm();
            if d == 0.0 {
                // on the axis: deepest point, push along an arbitrary perpendicular is ill-defined
                Vector3::zeros()
            } else {
                penalty(radius - d, &(radial / d), &vel, contact)
            }
        }
        ContactGeometry::Hole {
            center,
            axis,
            hole_radius,
            peg_radius,
            depth,
            chamfer,
        } => hole_force(
            &p,
            &vel,
            &Vector3::from(*center),
            &Vector3::from(*axis).normalize(),
            hole_radius - peg_radius,
            *depth,
            *chamfer,
            contact,
        ),
    };
    Wrench::from_force(force)
}

#[allow(clippy::too_many_arguments)]
fn hole_force(
    p: &Vector3<f64>,
    vel: &Vector3<f64>,
    center: &Vector3<f64>,
    axis: &Vector3<f64>,
    clearance: f64,
    depth: f64,
    chamfer: f64,
    contact: &ContactModel,
) -> Vector3<f64> {
    let rel = p - center;
    let below = -rel.dot(axis);
    if below <= 0.0 {
        return Vector3::zeros();
    }
    let radial = rel + axis * below;
    let rho = radial.norm();
    // opening radius available to the peg tip at this depth (45 degree chamfer)
    let opening = clearance + (chamfer - below).max(0.0);
    if rho <= opening {
        // inside the bore: only the bottom can push
        return if below > depth {
            penalty(below - depth, axis, vel, contact)
        } else {
            Vector3::zeros()
        };
    }
    let out = radial / rho;
    // inside the plate material: resolve against the nearest surface
    let mut best = (below, *axis);
    if below >= chamfer {
        let wall = rho - clearance;
        if wall < best.0 {
            best = (wall, -out);
        }
    } else {
        let cone = (rho + below - clearance - chamfer) / std::f64::consts::SQRT_2;
        if cone < best.0 {
            best = (cone, (axis - out) / std::f64::consts::SQRT_2);
        }
    }
    let mut f = penalty(best.0, &best.1, vel, contact);
    if below > depth && rho <= clearance + chamfer {
        f += penalty(below - depth, axis, vel, contact);
    }
    f
}

/// Tracks consecutive over-limit control steps.
#[derive(Debug, Clone)]
pub struct SafetyMonitor {
    limit: f64,
    dwell: u32,
    over: u32,
}

/// Whether a single wrench reading exceeds the force limit.
pub fn exceeds_limit(wrench: &Wrench, limit: f64) -> bool {
    wrench.force.norm() > limit
}

impl SafetyMonitor {
    pub fn new(config: &SafetyConfig) -> Self {
        SafetyMonitor {
            limit: config.force_limit,
            dwell: config.dwell_steps.max(1),
            over: 0,
        }
    }

    /// Feeds one control-step reading; returns `true` once the force has
    /// exceeded the limit on `dwell` consecutive steps.
    pub fn observe(&mut self, wrench: &Wrench) -> bool {
        if exceeds_limit(wrench, self.limit) {
            self.over += 1;
        } else {
            self.over = 0;
        }
        self.over >= self.dwell
    }
}

/// One control step of the compliant plant.
pub fn step(
    state: &PlantState,
    ref_pose: &Pose,
    params: &ControllerParams,
    contact: &ContactModel,
    dt: f64,
) -> Result<PlantState, PlantError> {
    step_with(state, ref_pose, params, contact, &IntegratorOptions::default(), &state.f_ext, dt)
}

fn step_with(
    state: &PlantState,
    ref_pose: &Pose,
    params: &ControllerParams,
    contact: &ContactModel,
    opts: &IntegratorOptions,
    sensed: &Wrench,
    dt: f64,
) -> Result<PlantState, PlantError> {
    let error = pose_log(&compose(&inverse(&state.pose), ref_pose))
        .map_err(|e| PlantError::SimFault(format!("pose error undefined: {e}")))?
        .to_array();
    let r_inv = state.pose.rotation().inverse();
    let f_body = r_inv * sensed.force;
    let t_body = r_inv * sensed.torque;
    let ext = [f_body.x, f_body.y, f_body.z, t_body.x, t_body.y, t_body.z];
    let sign = match opts.wrench_sign {
        WrenchSign::Add => 1.0,
        WrenchSign::Subtract => -1.0,
    };
    let tw = state.twist.to_array();
    let mut next = [0.0; 6];
    for i in 0..6 {
        let f_net = params.k_c[i] * error[i] + sign * ext[i];
        // PD on the net wrench; under a held reference d(k_c e)/dt = -k_c * twist
        let f_c = params.k_p[i] * f_net - params.k_d[i] * params.k_c[i] * tw[i];
        next[i] = tw[i] + dt * f_c / params.m_vm[i];
    }
    let twist = Twist::from_array(next);
    if !twist.is_finite() {
        return Err(PlantError::SimFault("non-finite velocity".into()));
    }
    let speed = twist.v.norm();
    if speed > opts.velocity_limit {
        return Err(PlantError::SimFault(format!(
            "speed {speed:.3} m/s exceeds limit {} m/s",
            opts.velocity_limit
        )));
    }
    let pose = compose(&state.pose, &pose_exp(&twist.scale(dt)));
    let f_ext = contact_wrench(&pose, &twist, contact);
    Ok(PlantState { pose, twist, f_ext })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopKind {
    /// Contact force above the safety limit for the dwell time.
    ProtectiveStop { force: f64 },
    /// Integration or geometry failure.
    Fault { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopEvent {
    #[serde(flatten)]
    pub kind: StopKind,
    /// Reference sample being executed when the run stopped.
    pub sample: usize,
    /// Control step counted from the start of the playback.
    pub control_step: usize,
}

impl StopEvent {
    pub fn is_fault(&self) -> bool {
        matches!(self.kind, StopKind::Fault { .. })
    }
}

#[derive(Debug, Clone)]
pub struct PlaybackOutcome {
    /// One sample per completed reference sample, each carrying the
    /// environment wrench. `None` only if the run stopped before two samples.
    pub measured: Option<Trajectory>,
    pub stop: Option<StopEvent>,
    /// Largest contact force magnitude seen at any control step (N).
    pub peak_force: f64,
    pub final_state: PlantState,
}

impl PlaybackOutcome {
    pub fn completed(&self) -> bool {
        self.stop.is_none()
    }
}

/// Executes a reference recorded at `ref.rate_hz()` on the plant running at
/// the control rate, holding each sample for `control_rate / rate` steps.
pub fn playback(
    reference: &Trajectory,
    ctx: &PlantContext,
    initial: &PlantState,
) -> Result<PlaybackOutcome, PlantError> {
    ctx.validate()?;
    let ratio = ctx.params.control_rate_hz / reference.rate_hz();
    let hold = ratio.round() as usize;
    if hold == 0 || (ratio - hold as f64).abs() > 1e-9 {
        return Err(PlantError::Config(format!(
            "control rate {} Hz is not an integer multiple of reference rate {} Hz",
            ctx.params.control_rate_hz,
            reference.rate_hz()
        )));
    }
    let dt = ctx.params.dt();
    let mut monitor = SafetyMonitor::new(&ctx.safety);
    let mut noise = (ctx.integrator.wrench_noise_std > 0.0).then(|| {
        (
            ChaCha8Rng::seed_from_u64(ctx.integrator.noise_seed),
            Normal::new(0.0, ctx.integrator.wrench_noise_std).expect("finite std"),
        )
    });
    let mut sense = |w: &Wrench| -> Wrench {
        match noise.as_mut() {
            Some((rng, dist)) => {
                let n = Vector3::from_fn(|_, _| dist.sample(rng));
                Wrench::new(w.force + n, w.torque)
            }
            None => *w,
        }
    };

    let mut state = *initial;
    let mut sensed = sense(&state.f_ext);
    let mut poses = Vec::with_capacity(reference.len());
    let mut wrenches = Vec::with_capacity(reference.len());
    let mut peak = state.f_ext.force.norm();
    let mut stop = None;
    let mut control_step = 0;

    'samples: for (t, target) in reference.poses().iter().enumerate() {
        for j in 0..hold {
            let setpoint = match ctx.integrator.reference_interpolation {
                ReferenceInterpolation::ZeroOrderHold => *target,
                ReferenceInterpolation::Linear if t > 0 => {
                    let s = (j + 1) as f64 / hold as f64;
                    match geodesic_interpolate(&reference.poses()[t - 1], target, s) {
                        Ok(p) => p,
                        Err(e) => {
                            stop = Some(fault(e.to_string(), t, control_step));
                            break 'samples;
                        }
                    }
                }
                ReferenceInterpolation::Linear => *target,
            };
            match step_with(&state, &setpoint, &ctx.params, &ctx.contact, &ctx.integrator, &sensed, dt) {
                Ok(next) => state = next,
                Err(PlantError::SimFault(msg)) | Err(PlantError::Config(msg)) => {
                    stop = Some(fault(msg, t, control_step));
                    break 'samples;
                }
            }
            control_step += 1;
            sensed = sense(&state.f_ext);
            let force = state.f_ext.force.norm();
            peak = peak.max(force);
            if monitor.observe(&state.f_ext) {
                stop = Some(StopEvent {
                    kind: StopKind::ProtectiveStop { force },
                    sample: t,
                    control_step,
                });
                poses.push(state.pose);
                wrenches.push(sensed);
                break 'samples;
            }
        }
        poses.push(state.pose);
        wrenches.push(sensed);
    }

    let measured = if poses.len() >= 2 {
        let label = format!("{}/measured", reference.label());
        Some(
            Trajectory::new(poses, Some(wrenches), reference.rate_hz(), label)
                .map_err(|e: TrajectoryError| PlantError::SimFault(e.to_string()))?,
        )
    } else {
        None
    };
    Ok(PlaybackOutcome {
        measured,
        stop,
        peak_force: peak,
        final_state: state,
    })
}

fn fault(message: String, sample: usize, control_step: usize) -> StopEvent {
    StopEvent {
        kind: StopKind::Fault { message },
        sample,
        control_step,
    }
}

/// `1/2 v^T M v + 1/2 e^T (k_p k_c) e` with the plant at `state` and a fixed reference.
pub fn lyapunov_energy(state: &PlantState, reference: &Pose, params: &ControllerParams) -> f64 {
    let e = pose_log(&compose(&inverse(&state.pose), reference))
        .map(|t| t.to_array())
        .unwrap_or([f64::INFINITY; 6]);
    let v = state.twist.to_array();
    (0..6)
        .map(|i| 0.5 * params.m_vm[i] * v[i] * v[i] + 0.5 * params.k_p[i] * params.k_c[i] * e[i] * e[i])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn plane() -> ContactModel {
        ContactModel::with_geometry(
            ContactGeometry::Plane {
                point: [0.0; 3],
                normal: [0.0, 0.0, 1.0],
            },
            0.3,
        )
    }

    fn hole() -> ContactModel {
        ContactModel::with_geometry(
            ContactGeometry::Hole {
                center: [0.0; 3],
                axis: [0.0, 0.0, 1.0],
                hole_radius: 0.010,
                peg_radius: 0.009,
                depth: 0.03,
                chamfer: 0.002,
            },
            0.1,
        )
    }

    fn run_to_rest(ref_pose: &Pose, contact: &ContactModel, start: Pose, steps: usize) -> PlantState {
        let params = ControllerParams::default();
        let mut s = PlantState::at_rest(start, contact);
        for _ in 0..steps {
            s = step(&s, ref_pose, &params, contact, params.dt()).unwrap();
        }
        s
    }

    #[test]
    fn equilibrium_is_fixed() {
        let p = Pose::rot_z(0.3, Vector3::new(0.1, 0.2, 0.3));
        let c = ContactModel::free();
        let s = PlantState::at_rest(p, &c);
        let params = ControllerParams::default();
        let n = step(&s, &p, &params, &c, params.dt()).unwrap();
        assert_eq!(n.twist, Twist::zero());
        let (d, a) = n.pose.distance(&p);
        assert!(d < 1e-15 && a < 1e-15);
    }

    #[test]
    fn free_space_converges_to_reference() {
        let target = Pose::from_axis_angle(&Vector3::new(0.0, 1.0, 1.0), 0.2, Vector3::new(0.02, -0.01, 0.03));
        let s = run_to_rest(&target, &ContactModel::free(), Pose::identity(), 20_000);
        let (d, a) = s.pose.distance(&target);
        assert!(d < 1e-6, "position error {d}");
        assert!(a < 1e-6, "angle error {a}");
    }

    #[test]
    fn plane_static_force_balance() {
        // k_c (depth - pen) = k_env pen
        let depth = 0.005;
        let c = plane();
        let s = run_to_rest(&Pose::from_translation(0.0, 0.0, -depth), &c, Pose::from_translation(0.0, 0.0, 0.0), 20_000);
        let pen = depth * 300.0 / (300.0 + c.k_env);
        assert_relative_eq!(-s.pose.translation().z, pen, epsilon = 1e-9);
        assert_relative_eq!(s.f_ext.force.z, c.k_env * pen, epsilon = 1e-4);
    }

    #[test]
    fn contact_wrench_cases() {
        let c = plane();
        assert_eq!(contact_wrench(&Pose::from_translation(0.0, 0.0, 0.01), &Twist::zero(), &c), Wrench::zero());
        let w = contact_wrench(&Pose::from_translation(0.3, 0.1, -0.001), &Twist::zero(), &c);
        assert_relative_eq!(w.force, Vector3::new(0.0, 0.0, 10.0), epsilon = 1e-12);
        // moving away faster than the spring pushes: no pulling force
        let w = contact_wrench(
            &Pose::from_translation(0.0, 0.0, -0.001),
            &Twist::new(Vector3::new(0.0, 0.0, 1.0), Vector3::zeros()),
            &c,
        );
        assert_eq!(w, Wrench::zero());
    }

    #[test]
    fn friction_bounded_by_coulomb() {
        let c = plane();
        let w = contact_wrench(
            &Pose::from_translation(0.0, 0.0, -0.001),
            &Twist::new(Vector3::new(0.5, 0.2, 0.0), Vector3::zeros()),
            &c,
        );
        let tangential = Vector3::new(w.force.x, w.force.y, 0.0);
        assert_relative_eq!(tangential.norm(), c.mu * w.force.z, epsilon = 1e-12);
        assert!(tangential.dot(&Vector3::new(0.5, 0.2, 0.0)) < 0.0);
    }

    #[test]
    fn cylinder_contact_is_radial() {
        let c = ContactModel::with_geometry(
            ContactGeometry::Cylinder {
                axis_point: [0.0, 0.0, -0.15],
                axis_dir: [1.0, 0.0, 0.0],
                radius: 0.15,
            },
            0.3,
        );
        let w = contact_wrench(&Pose::from_translation(0.2, 0.0, -0.001), &Twist::zero(), &c);
        assert_relative_eq!(w.force, Vector3::new(0.0, 0.0, 10.0), epsilon = 1e-9);
        assert_eq!(contact_wrench(&Pose::from_translation(0.0, 0.0, 0.001), &Twist::zero(), &c), Wrench::zero());
    }

    #[test]
    fn centered_peg_has_no_contact_inside_hole() {
        let c = hole();
        for k in 0..30 {
            let z = -(k as f64) * 0.001;
            assert_eq!(contact_wrench(&Pose::from_translation(0.0, 0.0, z), &Twist::zero(), &c), Wrench::zero());
        }
        // within clearance, off axis
        assert_eq!(
            contact_wrench(&Pose::from_translation(0.0009, 0.0, -0.01), &Twist::zero(), &c),
            Wrench::zero()
        );
        // bottom
        let w = contact_wrench(&Pose::from_translation(0.0, 0.0, -0.031), &Twist::zero(), &c);
        assert_relative_eq!(w.force.z, 10.0, epsilon = 1e-9);
        assert_eq!(w.force.x, 0.0);
    }

    #[test]
    fn hole_wall_pushes_towards_axis() {
        let c = hole();
        let w = contact_wrench(&Pose::from_translation(0.0015, 0.0, -0.01), &Twist::zero(), &c);
        assert_relative_eq!(w.force.x, -5.0, epsilon = 1e-9);
        assert_relative_eq!(w.force.z, 0.0, epsilon = 1e-12);
        // landing beside the hole on the top face
        let w = contact_wrench(&Pose::from_translation(0.03, 0.0, -0.001), &Twist::zero(), &c);
        assert_relative_eq!(w.force, Vector3::new(0.0, 0.0, 10.0), epsilon = 1e-9);
        // on the chamfer: pushed up and inward
        let w = contact_wrench(&Pose::from_translation(0.0028, 0.0, -0.0005), &Twist::zero(), &c);
        assert!(w.force.x < 0.0 && w.force.z > 0.0);
    }

    #[test]
    fn safety_monitor_dwell() {
        let cfg = SafetyConfig::default();
        let mut m = SafetyMonitor::new(&cfg);
        assert!(!m.observe(&Wrench::zero()));
        let big = Wrench::from_force(Vector3::new(150.0, 0.0, 0.0));
        assert!(!m.observe(&big));
        assert!(!m.observe(&Wrench::zero()));
        assert!(!m.observe(&big));
        assert!(m.observe(&big));
    }

    #[test]
    fn velocity_limit_faults() {
        let params = ControllerParams::default();
        let c = ContactModel::free();
        let s = PlantState {
            pose: Pose::identity(),
            twist: Twist::new(Vector3::new(5.5, 0.0, 0.0), Vector3::zeros()),
            f_ext: Wrench::zero(),
        };
        assert!(matches!(step(&s, &Pose::identity(), &params, &c, params.dt()), Err(PlantError::SimFault(_))));
    }

    #[test]
    fn params_default_match_table() {
        let p = ControllerParams::default();
        assert_eq!(p.k_c, [300.0, 300.0, 300.0, 100.0, 100.0, 100.0]);
        assert_eq!(p.k_p, [0.0252, 0.0252, 0.0252, 0.36, 0.36, 0.36]);
        assert_eq!(p.k_d, [0.0072; 6]);
        assert_eq!(p.control_rate_hz, 500.0);
        let mut bad = p.clone();
        bad.m_vm[4] = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn constant_reference_playback_stays_put() {
        let p = Pose::rot_z(0.2, Vector3::new(0.1, 0.0, 0.05));
        let r = Trajectory::from_poses(vec![p; 50], 50.0, "hold").unwrap();
        let ctx = PlantContext::new(ContactModel::free());
        let out = playback(&r, &ctx, &PlantState::at_rest(p, &ctx.contact)).unwrap();
        assert!(out.completed());
        let m = out.measured.unwrap();
        assert_eq!(m.len(), 50);
        for q in m.poses() {
            let (d, a) = q.distance(&p);
            assert!(d < 1e-9 && a < 1e-9);
        }
    }

    #[test]
    fn playback_rejects_non_integer_rate_ratio() {
        let r = Trajectory::from_poses(vec![Pose::identity(); 3], 30.0, "").unwrap();
        let ctx = PlantContext::new(ContactModel::free());
        assert!(matches!(
            playback(&r, &ctx, &PlantState::at_rest(Pose::identity(), &ctx.contact)),
            Err(PlantError::Config(_))
        ));
    }

    #[test]
    fn protective_stop_truncates() {
        // reference driven deep into the plane
        let c = plane();
        let mut ctx = PlantContext::new(c);
        ctx.safety.force_limit = 5.0;
        let r = Trajectory::from_poses(vec![Pose::from_translation(0.0, 0.0, -0.1); 100], 50.0, "").unwrap();
        let out = playback(&r, &ctx, &PlantState::at_rest(Pose::from_translation(0.0, 0.0, 0.01), &ctx.contact)).unwrap();
        let stop = out.stop.expect("should trip");
        assert!(matches!(stop.kind, StopKind::ProtectiveStop { force } if force > 5.0));
        assert!(out.measured.map_or(0, |m| m.len()) < 100);
    }
}
