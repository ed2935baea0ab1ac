//! Community detection among interdependent signals without observed edges.
//!
//! Series are modelled by a latent factor model whose loadings are drawn from
//! a Gaussian mixture; communities are the mixture components. The posterior
//! is approximated by mean-field variational inference, and the evidence
//! lower bound drives the choice of the number of factors and of the
//! community scale.

pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod io;
pub mod kmeans;
pub mod linalg;
pub mod model;
pub mod par;
pub mod sweep;
pub mod synthesis;

pub use error::{Error, Result};
pub use inference::{fit, FitConfig};
pub use model::{Dataset, FitResult, Hyperparameters, PosteriorState};
