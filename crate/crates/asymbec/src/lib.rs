//! Mean-field simulations of a double-well Bose-Einstein condensate with
//! asymmetric particle gain and loss.
//!
//! The crate covers a two-mode approximation ([`two_mode`]) and a spatially
//! extended one-dimensional Gross-Pitaevskii model ([`extended`]), together
//! with parameter-space drivers ([`scan`]), shared numerical kernels
//! ([`numerics`]) and the file/CLI layer ([`io`], [`cli`]).

pub mod cli;
pub mod extended;
pub mod io;
pub mod numerics;
pub mod scan;
pub mod two_mode;
