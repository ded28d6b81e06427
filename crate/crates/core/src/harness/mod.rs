//! Experiment configuration, checkpoints, the run matrix and the CLI.

pub mod checkpoint;
pub mod cli;
pub mod config;

pub use checkpoint::{
    agent_checkpoint, load_agent, restore_agent, resume_trainer, trainer_checkpoint, Checkpoint, Record,
};
pub use config::{parse_config, parse_config_str, AnalysisConfig, ExperimentConfig, NoiseConfig};
pub mod matrix;

pub use matrix::{analyze_agent, cell_dir, run_matrix, state_pool, train_cell, CellMetrics, MatrixReport};
