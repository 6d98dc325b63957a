pub mod block;
pub mod dyadic;
pub mod error;
pub mod experiment;
pub mod factorization;
pub mod haar;
pub mod io;
pub mod norms;
pub mod operators;
pub mod randomization;
mod solver;

pub use block::{BlockCollection, SignAssignment};
pub use dyadic::{Dyadic, DyadicInterval, IndexSet};
pub use error::{Error, Result};
pub use haar::{HaarVector, StepFunction};
pub use norms::SpaceTag;
pub use operators::{HaarMap, HaarOperator};
pub use solver::SolverOptions;
