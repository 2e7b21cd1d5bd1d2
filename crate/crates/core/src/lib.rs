//! Distilling fine-grained sentiment understanding from teacher LLMs into
//! seq2seq pretraining corpora, and benchmarking students and teachers on
//! targeted (TSA) and aspect-level (ASA) sentiment analysis.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod datasets;
pub mod eval;
pub mod jsonl;
pub mod llm_client;
pub mod parser;
pub mod prompts;
pub mod report;
pub mod sampler;
