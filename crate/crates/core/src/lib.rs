pub mod calltrace;
pub mod change;
pub mod config;
pub mod coverage;
pub mod exec;
pub mod generation;
pub mod integration;
pub mod llm;
pub mod pipeline;
pub mod pr_context;
pub mod provenance;
pub mod pysource;
pub mod report;
pub mod test_context;
pub mod util;
