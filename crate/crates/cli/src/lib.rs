//! The tiller executor client: runs tools on the developer's machine, streams
//! progress to the terminal and collects approval and plan decisions.

pub mod api;
pub mod app;
pub mod cache;
pub mod executor;
pub mod prompt;
pub mod render;

pub use api::{Api, ApiError, NewTask};
pub use app::{exit_code, logs, Run, RunOptions, RunReport, Target};
pub use executor::{Activity, Executor, Fault, FaultHook, SessionEnd, Trigger};
pub use prompt::{Answer, FailSafe, LinePrompter, Prompter, Scripted};
