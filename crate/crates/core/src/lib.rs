//! Core of the tiller coding agent: wire protocol, model driver interface,
//! orchestration engine, executor-side tools, guardrails and event-sourced state.

pub mod maestro;
pub mod model;
pub mod protocol;
pub mod safety;
pub mod state;
pub mod tools;
