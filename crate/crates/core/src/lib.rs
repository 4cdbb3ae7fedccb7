pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod image;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod preproc;
pub mod synthetic;
