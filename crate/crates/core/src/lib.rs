//! Agent engine for communication-system design tasks.
//!
//! Requests pass through retrieval ([`mdr`]), planning and tool execution
//! ([`mcp`]) and evaluation with tiered memory ([`mer`]). The
//! semantic-communication case harness lives in [`sc_case`], the channel
//! and metric tools in [`comtools`].

pub mod comtools;
pub mod glob;
pub mod knowledge;
pub mod mcp;
pub mod mdr;
pub mod mer;
pub mod provider;
pub mod sc_case;
pub mod transcript;
