pub mod captain;
pub mod chat;
pub mod config;
pub mod embedding;
pub mod harness;
mod json;
pub mod library;
pub mod llm;
pub mod model;
pub mod reflection;
pub mod rundir;
pub mod sandbox;
pub mod team;
pub mod tools;
