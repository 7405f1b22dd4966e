//! Deep recurrent NMF (DR-NMF) speech separation.
//!
//! The crate covers the whole pipeline: STFT front end and synthetic corpus
//! ([`signal`]), sparse NMF dictionary learning ([`snmf`]), ISTA and its
//! warm-start sequential variant ([`ista`]), the unfolded trainable network
//! ([`network`]) and its end-to-end training ([`train`]).

pub mod error;
pub mod signal;
pub mod snmf;
pub mod ista;
pub mod network;
pub mod train;
pub mod model;
pub mod pipeline;

pub use error::{Error, Result};
