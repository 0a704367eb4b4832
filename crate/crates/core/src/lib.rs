pub mod boosting;
pub mod cli;
pub mod data;
pub mod dgp;
pub mod ensemble;
pub mod error;
pub mod linear;
pub mod mars;
pub mod persist;
pub mod rng;
pub mod simulation;
pub mod tree;
