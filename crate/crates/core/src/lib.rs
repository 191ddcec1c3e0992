//! Identification of discrete-time linear switched systems from one
//! trajectory: simulation, empirical Markov parameters, Ho-Kalman
//! realization over a reduced basis, and finite-sample error bounds.
//!
//! ```
//! use lssid::benchmark::{two_mode_model, two_mode_selection};
//! use lssid::hokalman::reference_realization;
//!
//! let model = two_mode_model(0.27);
//! let rr = reference_realization(&model, &two_mode_selection()).unwrap();
//! assert!(rr.sigma_n > 0.0);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod bounds;
pub mod error;
pub mod experiment;
pub mod hokalman;
pub mod linalg;
pub mod markov;
pub mod model;
pub mod plot;
pub mod simulate;

pub use error::{LssError, Result};
pub use hokalman::{ColumnIndex, RealizationResult, Selection};
pub use markov::MarkovMap;
pub use model::{LssModel, ModelSpec, SignalSpec, SwitchingDistribution, Word};
pub use simulate::{SampleSet, SimConfig};
