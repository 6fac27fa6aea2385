//! Detection and parameterization of frequency-hopping emitters in wideband IQ captures.
//!
//! The processing chain is STFT power spectrogram, a global dynamic threshold,
//! morphological closing, rectangle extraction and an autocorrelation-based
//! period estimate that groups hops into sources. A synthesizer produces
//! controller-style hop patterns with ground truth so each stage can be scored.

pub mod classification;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod grid;
pub mod iq_io;
pub mod par;
pub mod pipeline;
pub mod spectrogram;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use grid::Grid;
pub use par::Parallelism;
