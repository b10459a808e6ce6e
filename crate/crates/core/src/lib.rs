//! Fast-moving-object (FMO) toolkit: synthesis of motion-blurred frames,
//! trajectory machinery, a classical detector, training losses, the
//! constrained deblurring solver, curve fitting and evaluation metrics.

pub mod deblur;
pub mod detect;
pub mod error;
pub mod evalkit;
pub mod fitcurve;
pub mod formation;
pub mod geom;
pub mod imgcore;
pub mod losses;
pub mod pipeline;
pub mod synthgen;
pub mod trajectory;

pub use error::{Error, Result};
pub use geom::{BBox, Vec2};
