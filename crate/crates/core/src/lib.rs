//! Max-plus fundamental solution semigroup for differential Riccati equations
//! `P' = A'P + PA + PBB'P + C'C`.

pub mod error;
pub mod matrix;
pub mod oracle;
pub mod semigroup;
pub mod solver;
pub mod symplectic;
pub mod system;
pub mod transforms;
pub mod validate;

pub use error::{Error, Result};
pub use matrix::{Matrix, SymmetricMatrix};
pub use semigroup::{SemigroupTable, Strategy};
pub use system::{BasisMatrix, LinearSystem};
pub use transforms::BlockSym2n;
