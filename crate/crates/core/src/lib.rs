pub mod conditions;
pub mod error;
pub mod experiments;
pub mod norms;
pub mod operators;
pub mod solver;
pub mod widths;
pub mod rng;
pub mod signal;
