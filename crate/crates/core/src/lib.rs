//! Low-dimensional optical-flow subspaces for multi-object motion
//! segmentation.
//!
//! The pipeline builds per-pixel basis flow fields from a disparity map,
//! restricts them to soft region masks, projects an observed flow onto their
//! span and uses the residual as a loss. [`fitter`] minimizes that loss over
//! disparity and masks directly; [`metrics`] and [`io`] cover evaluation and
//! file interchange.

pub mod basis;
pub mod camera;
pub mod error;
pub mod field;
pub mod fitter;
pub mod gradient;
pub mod io;
pub mod masks;
pub mod metrics;
pub mod projector;
pub mod synth;

pub use basis::{BasisFamily, BasisKind, BasisStack, FieldId, RegionBases};
pub use camera::CameraModel;
pub use error::{Error, Result};
pub use field::{DisparityField, FlowField, Grid, LabelGrid};
pub use fitter::{FitConfig, FitResult, FitState};
pub use masks::SoftMaskStack;
pub use projector::{ProjectionResult, SystemMatrix};
pub use synth::{RigidMotionSpec, SceneInstance, SceneSpec};
