//! Experiment runner: configuration presets and the command implementations
//! behind the `symsde` binary.

pub mod config;
pub mod run;

pub use config::{config_hash, gp_preset, Resolved, RunConfig, Scale, VERSION};
pub use run::{
    cmd_evaluate, cmd_fit, cmd_generate_data, cmd_report, cmd_sample, exit_code, fit_seed, load_run, model_text,
    parse_model_text, seed_data, write_atomic, FrontMember, FrontRecord, Manifest, SampleOutput, SeedOutcome,
};
