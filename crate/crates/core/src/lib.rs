//! Data-free structured pruning from batch-normalization parameters.

pub mod activation;
pub mod container;
pub mod criteria;
pub mod engine;
pub mod importance;
pub mod ir;
pub mod median;
pub mod normal;
pub mod pruner;
pub mod quadrature;
pub mod search;
