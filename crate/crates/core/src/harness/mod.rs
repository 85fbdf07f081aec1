//! Configuration, archives, experiment orchestration and reports.

pub mod archive;
pub mod config;
pub mod perturbation;
pub mod report;
pub mod run;
pub mod verify;

