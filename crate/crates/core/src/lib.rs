//! Refinement of time-accelerated contact-rich demonstrations.
//!
//! A slow demonstration is downsampled to an `n`-fold speedup, replayed through
//! a simulated compliance-controlled end effector, and its reference pose
//! trajectory is corrected from the observed tracking error until the fast
//! execution retraces the original path. Two refinement schedules are
//! provided: fixed-speed iterative reference learning ([`refinement::run_irlc`])
//! and the incremental-speed variant with warm starts ([`refinement::run_i2rlc`]).

pub mod campaign;
pub mod geometry;
pub mod metrics;
pub mod plant;
pub mod plot;
pub mod refinement;
pub mod scenarios;
pub mod trajectory;

pub use geometry::{LieMap, Pose, Twist};
pub use plant::{ControllerParams, ContactModel, PlantContext, PlantState, StopEvent};
pub use refinement::{RefinementConfig, RefinementRun};
pub use scenarios::{Demo, TaskKind, TaskSpec};
pub use trajectory::{Trajectory, Wrench};
