pub mod geometry;
pub mod dataset;
pub mod reasoner;
pub mod partseg;
pub mod grasp;
pub mod eval;
pub mod config;
pub mod pipeline;
