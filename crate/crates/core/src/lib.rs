//! Class-conditioned acoustic event selection and removal.
//!
//! The crate covers the whole pipeline: synthesising polyphonic event
//! mixtures ([`scene`]), the conditioned Conv-TasNet style selector and the
//! permutation-invariant baseline ([`nn`], [`selector`], [`pit`]), training
//! ([`train`]), removal ([`removal`]) and table-style evaluation ([`eval`]).

pub mod audio;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pit;
pub mod removal;
pub mod rng;
pub mod scene;
pub mod selector;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
pub use signal::{ClassVector, StemSet, Waveform};
