//! Batch-to-online conversion for the random-order model with an adaptive
//! approximation parameter, plus two stable offline oracles (submodular
//! minimization through cut sparsifiers, ℓ1 regression through Lewis-weight
//! sampling) and audits for the identities behind the regret bound.

pub mod adversary;
pub mod calibrate;
pub mod conjugate;
pub mod controller;
pub mod engine;
pub mod error;
pub mod instances;
pub mod lewis_l1;
pub mod sparsify;
pub mod submodular;
pub mod tvtools;

pub use conjugate::{eps_min, eval_phi, phi_star, ConjugatePoint, CustomPhi, PhiSpec};
pub use controller::ControllerState;
pub use error::{Error, Result};
pub use submodular::{SetFunction, Subset, SubmodularHypergraph};
