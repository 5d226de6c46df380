//! Shared synchronization flags.
//!
//! The [`GlobalBlackboard`] is the only state shared between machine trees.
//! Every value-changing write bumps the version by one and appends a
//! [`FlagEvent`] to the history, so the history is a total order of all
//! changes and can be replayed onto a fresh board.

mod blackboard;
mod name;
mod registry;

pub use blackboard::{read_history, FlagEvent, FlagSource, GlobalBlackboard, Snapshot, Subscription};
pub use name::FlagName;
pub use registry::{
    default_registry, load_registry, sensing_at_flag, FlagKind, FlagRegistryEntry, SENSING_ARRIVAL,
    SENSING_LOADED,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlagError {
    #[error("flag `{0}` is registered more than once")]
    DuplicateFlag(FlagName),
    #[error("flag `{0}` is not registered")]
    UnknownFlag(String),
    #[error("invalid flag name `{0}`: expected upper-case letters, digits and underscores ending in `_FLG`")]
    InvalidName(String),
    #[error("registry file: {0}")]
    Registry(String),
}
