//! Sandbox engine and experiment harness for studying how conversations,
//! memory and attitude injection shape the preferences and personality of
//! language-model agents.

pub mod config;
pub mod dialogue;
pub mod gateway;
pub mod mind;
pub mod prompt;
pub mod world;
pub mod harness;
pub mod psychometrics;
