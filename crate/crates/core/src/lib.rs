pub mod backends;
pub mod dataset;
pub mod types;
pub mod parse;
pub mod exec;
pub mod metrics;
pub mod prompts;
pub mod analytics;
pub mod ask;
pub mod proposer;
pub mod grouper;
pub mod pipeline;
