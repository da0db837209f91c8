//! The coupled element operator, its eigen-system, per-element mode families
//! and the weak-coupling expansion of slow modes.

mod eigen;
mod expansion;
mod modes;
mod operator;

pub use eigen::{subspace_distance, EigenSystem, InsulatedMode, CLUSTER_GAP, RESIDUAL_TOLERANCE};
pub use expansion::{expand_ground_mode, expand_localized_modes, GroundModeExpansion, SlowMode};
pub use modes::ElementModes;
pub use operator::CoupledOperator;

pub(crate) use operator::{csc_add_scaled, dot, solve_in_place};
