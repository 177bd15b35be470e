//! Command-line harness for the demonstration-bootstrapping pipeline: scenario configuration,
//! the telemetry/teleoperation wire protocol and service, and the
//! subcommands behind the `absdl` binary.

pub mod commands;
pub mod config;
pub mod service;
pub mod wire;
