//! Data association: assignment solver, motion model and the tracker.

mod cost;
mod kalman;
mod lap;
mod tracker;

pub use cost::{build_cost_matrix, detection_features, AssocConfig, AttrSource, CostMode, DetFeature};
pub use kalman::{mahalanobis_sq, KalmanState, CHI2_95_4DOF};
pub use lap::{solve_assignment, Assignment, CostMatrix};
pub use tracker::{run_sequence, Track, TrackStatus, Tracker};
