//! Multi-role auditing of Solidity functions.
//!
//! A function flows through four stages:
//!
//! ```text
//! extract ─► detector (5 prompts, majority vote)
//!         ─► reasoner (10 explanations, with / without call context)
//!         ─► ranker ⇄ critic (bounded deliberation)
//!         ─► final finding
//! ```
//!
//! Every model call goes through [`backend::Endpoint`], so the whole pipeline
//! runs offline against a [`backend::ScriptedBackend`].

pub mod backend;
pub mod clock;
pub mod config;
pub mod dataset;
pub mod deliberation;
pub mod detector;
pub mod eval;
pub mod extract;
pub mod pipeline;
pub mod prompts;
pub mod reasoner;

mod digest;

pub use digest::sha256_hex;
pub use prompts::Label;
