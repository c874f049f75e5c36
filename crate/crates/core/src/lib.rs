pub mod cli;
pub mod config;
pub mod data;
pub mod detector;
pub mod eval;
pub mod geometry;
pub mod rpn;
pub mod tensor;
