//! Options with a deliberation cost on finite MDPs: exact evaluation,
//! analytic gradients, brute-force oracles and a tabular A2OC learner.

pub mod a2oc;
pub mod deliberation;
pub mod error;
pub mod gradients;
pub mod gridworld;
mod linalg;
pub mod mdp;
pub mod options;
pub mod oracle;
pub mod table;

pub use deliberation::{CostTables, DeliberationConfig, LambdaSpec};
pub use error::{Error, Result};
pub use mdp::Mdp;
pub use options::{OptionProbs, Theta, ValueTables};
pub use table::StateOptionTable;
