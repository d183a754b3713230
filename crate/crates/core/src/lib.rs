//! Monte-Carlo simulation and analysis toolkit for correlation (ghost)
//! imaging with twin-beam and split-thermal light.
//!
//! * [`statcore`] — photon-count sampling kernels and deterministic RNG streams
//! * [`scene`] — transmission maps and binary test objects
//! * [`simulator`] — paired probe/reference frame generation
//! * [`estimators`] — GI / DGI / optimized-DGI reconstruction, SNR and NRF
//! * [`analytic`] — closed-form moments, signals, SNR and optimal coefficients
//! * [`calib`] — efficiency estimation and curve fitting
//! * [`io`] — frame-stack, image, mask and table file formats

pub mod analytic;
pub mod calib;
pub mod error;
pub mod estimators;
pub mod io;
pub mod scene;
pub mod simulator;
pub mod statcore;

pub use error::{Error, ErrorClass, Result};
pub use estimators::{KSource, Protocol, Reconstruction};
pub use scene::{make_binary_scene, Layout, PixelMask, TransmissionMap};
pub use simulator::{simulate_pair, FrameStack, SourceKind, SourceParams};
