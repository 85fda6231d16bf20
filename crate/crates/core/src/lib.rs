//! MPCA-based domain adaptation for CNN damage localisation on ultrasonic
//! guided-wave grayscale images.
//!
//! The crate covers the whole experiment: a synthetic pitch-catch acquisition
//! generator ([`signal`]), a joint mode-2 MPCA fit ([`mpca`]) on top of a small
//! tensor core ([`tensor`], [`eigen`]), histogram distances for auditing domain
//! similarity ([`metrics`]), a from-scratch CNN regression engine ([`nn`]), the
//! end-to-end adaptation procedure ([`pipeline`]) and the on-disk formats used
//! by the `tda` command-line tool ([`io`]).

pub mod eigen;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mpca;
pub mod nn;
mod par;
pub mod pipeline;
pub mod seed;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
