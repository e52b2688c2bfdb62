pub mod agent;
pub mod analyzer;
pub mod cli;
pub mod configurator;
pub mod model;
pub mod rewards;
pub mod rollout;
pub mod sandbox;
pub mod service;
pub mod task;
pub mod tokens;
pub mod tools;
pub mod toy;
