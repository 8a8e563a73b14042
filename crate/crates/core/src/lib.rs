pub mod ndtensor;
pub mod graph;
pub mod model;
pub mod training;
pub mod baselines;
pub mod evaluation;
pub mod datagen;
pub mod analytics;
pub mod cli;
