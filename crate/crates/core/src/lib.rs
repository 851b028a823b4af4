pub mod harness;
pub mod kb;
pub mod llm;
pub mod metrics;
pub mod retrieve_table;
pub mod retrieve_text;
pub mod router;
pub mod synth;
