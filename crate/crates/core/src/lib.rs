pub mod autonet;
pub mod cli;
pub mod datagen;
pub mod harness;
pub mod matrix;
pub mod metrics;
pub mod rls;
