//! Certified `L`-Lipschitz residual blocks.
//!
//! Each block `x' = A x + B w_n` is built from unconstrained raw parameters
//! by a closed-form sweep ([`param::backward_pass`]) whose output makes every
//! Gershgorin disc of the block's linear matrix inequality non-positive.
//! The [`lmi`] module assembles that matrix and checks the certificate with
//! discs and an eigensolver; [`network`] runs inference, [`training`] fits
//! models by gradient descent through the sweep, and [`cli`] exposes it all
//! as the `gresnet` binary.
//!
//! ```
//! use gresnet::activations::ActivationSpec;
//! use gresnet::param::{backward_pass, init_raw, BlockShape, MaterializeConfig};
//! use gresnet::lmi::{verify_block, Tolerances};
//!
//! let shape = BlockShape::new(2, vec![8, 2]).unwrap();
//! let acts = vec![ActivationSpec::new("tanh").unwrap(), ActivationSpec::new("relu").unwrap()];
//! let raw = init_raw(&shape, 1.0, acts, 7).unwrap();
//! let block = backward_pass(&raw, &MaterializeConfig::default()).unwrap();
//! let report = verify_block(&block, &Tolerances::default());
//! assert!(report.disc_pass && report.eig_pass);
//! ```

pub mod activations;
pub mod autodiff;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod lmi;
pub mod network;
pub mod param;
pub mod plot;
pub mod training;

pub use error::{Error, Result};
