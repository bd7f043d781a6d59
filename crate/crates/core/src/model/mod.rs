//! Model-facing side of the loop: history turns, payload assembly and the
//! driver interface with its scripted implementation.

mod driver;
mod payload;
mod script;
mod turn;

pub use driver::{DriverError, DriverFactory, ModelDriver, ScriptedDriver};
pub use payload::{
    assemble_payload, ModelPayload, PayloadError, PLAN_PROMPT, READ_BEFORE_EDIT_RULE,
    SYSTEM_PROMPT,
};
pub use script::{load_script, parse_script, Script, ScriptEntry, ScriptError};
pub use turn::{ModelTurn, Role, ThinkingEffort, Turn};
