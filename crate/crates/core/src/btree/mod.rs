//! Behavior tree engine: node set, tick/halt semantics and schedulers.
//!
//! Trees read the global blackboard only through `DbReader` nodes, which
//! copy one flag into the tree's local blackboard; `ConditionalExpression`
//! nodes then evaluate over those copies. Actions run in an
//! [`ActionExecutor`] supplied by the caller.

mod engine;
mod exec;
mod node;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flagcore::FlagName;

pub use engine::{LocalBlackboard, NodeState, TickStatus, TreeInstance, WaitState};
pub use exec::{
    run_round_robin, tick_all, tick_all_concurrent, ActionExecutor, ActionProgress, LockedWorld,
    RunOutcome, TimerWorld, WorldCall,
};
pub use node::{action_gates, count_nodes, BtNode, NodeId, NodeKind, PrimitiveAction};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BtError {
    #[error("malformed tree: {0}")]
    MalformedTree(String),
    #[error("flag {0} is not registered")]
    UnknownFlag(FlagName),
    #[error("no node {0}")]
    UnknownNode(NodeId),
}

/// One node tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub machine: String,
    pub node_id: NodeId,
    pub status: TickStatus,
}

/// Writes records as JSON lines.
pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
