//! Mondrian random forests with EGOP-driven data transforms.
//!
//! A [`mondrian::MondrianForest`] is fitted, the expected gradient outer
//! product of the fit is estimated by symmetric difference quotients
//! ([`egop`]), and the data are linearly transformed by the normalized
//! estimate before refitting ([`trim`]). [`subspace`] measures how well the
//! estimate recovers the relevant feature subspace, [`datasets`] provides the
//! synthetic and SEIR studies, and [`harness`] runs the experiments.

pub mod cv;
pub mod datasets;
pub mod egop;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mondrian;
pub mod regressor;
pub mod rng;
pub mod subspace;
pub mod trim;

pub use error::{Error, Result};
