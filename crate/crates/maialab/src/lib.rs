//! Agent runtime, tools, evaluation harness, audit pipelines and the
//! storage behind the `maialab` CLI.

pub mod adapter;
pub mod cache;
pub mod clients;
pub mod exemplars;
pub mod fsutil;
pub mod image;
pub mod log;
pub mod system;
pub mod tools;
pub mod sandbox;
pub mod prompts;
pub mod transcript;
pub mod backbone;
pub mod session;
pub mod eval;
pub mod audit;
pub mod config;
pub mod manifest;
pub mod run;
pub mod ablation;
