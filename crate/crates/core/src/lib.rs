pub mod btparse;
pub mod comprehension;
pub mod config;
pub mod contracts;
pub mod eval;
pub mod example_store;
pub mod llm;
pub mod orchestrator;
pub mod safety;
pub mod symexec;
pub mod synthesis;
pub mod templates;
