//! Dense linear algebra, seeded random generation and dual-number arithmetic.

pub mod dual;
pub mod matrix;
pub mod rng;

pub use dual::{dual_primitive, DualTensor, Lane, Primitive};
pub use matrix::{frobenius_inner, frobenius_norm, matmul, Matrix, Vector};
pub use rng::{random_matrix, SeededRng, RNG_ALGORITHM};
