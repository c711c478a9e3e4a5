//! Monte Carlo samplers for √(8/3)-Liouville quantum gravity surfaces and the
//! Brownian, Bessel and stable processes that encode them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brownian;
pub mod config;
pub mod error;
pub mod field;
pub mod io;
pub mod params;
pub mod path;
pub mod quadrant;
pub mod rng;
pub mod sphere;
pub mod stable;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use params::{make_params, GammaParams, ScalingAction, Tagged};
pub use path::{PathDim, SampledPath};
pub use rng::{ModuleId, StreamKey};
