//! Item calibration and item-writing-flaw analysis for multiple-choice banks.
//!
//! The crate covers the whole chain from raw responses to screening models:
//!
//! * [`irt`] fits per-concept 2PL parameters by marginal maximum likelihood.
//! * [`iwf`] annotates item text with the 19 item-writing-flaw criteria.
//! * [`stats`] relates flaw annotations to the fitted parameters
//!   (correlations, robust regression, diagnostics, Holm correction).
//! * [`screen`] trains cross-validated models that predict parameters or
//!   problem flags from the flaw vector alone.
//! * [`sim`] generates synthetic banks and responses with known ground truth.
//! * [`io`] reads and writes the on-disk formats shared by the CLI.

pub mod model;
pub mod io;
pub mod irt;
pub mod iwf;
pub mod screen;
pub mod stats;
pub mod sim;

pub use model::*;
