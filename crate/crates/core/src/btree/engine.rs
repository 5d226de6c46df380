use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::exec::{ActionExecutor, ActionProgress};
use super::node::{BtNode, NodeId, NodeKind};
use super::{BtError, TraceRecord};
use crate::actionseq::FlagExpr;
use crate::flagcore::{FlagName, FlagSource, GlobalBlackboard};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TickStatus {
    Success,
    Failure,
    Running,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeState {
    Idle,
    Running,
    Done(TickStatus),
}

/// What a tree is doing after its latest tick.
#[derive(Debug, Clone, PartialEq)]
pub enum WaitState {
    Finished(TickStatus),
    /// An action is in flight.
    Acting(NodeId),
    /// Parked on conditions that evaluated false, expressed over global flags.
    Waiting(Vec<FlagExpr>),
}

/// Flag copies made by DBReader nodes.
pub type LocalBlackboard = BTreeMap<FlagName, bool>;

/// One machine's tree plus its runtime state.
#[derive(Debug, Clone)]
pub struct TreeInstance {
    machine: String,
    root: BtNode,
    rt: Runtime,
}

#[derive(Debug, Clone)]
struct Runtime {
    states: Vec<NodeState>,
    cursor: Vec<usize>,
    attempts: Vec<u32>,
    local: LocalBlackboard,
    /// local key -> global flag, from the tree's DBReaders.
    readers: BTreeMap<FlagName, FlagName>,
    failed_conditions: Vec<FlagExpr>,
    trace: Option<Vec<TraceRecord>>,
    now: u64,
}

impl TreeInstance {
    /// Checks structure and flag registration, then renumbers ids in preorder.
    pub fn new(machine: impl Into<String>, root: BtNode, bb: &GlobalBlackboard) -> Result<Self, BtError> {
        let root = root.finalize();
        let mut readers = BTreeMap::new();
        let mut err = None;
        root.walk(&mut |n| {
            if err.is_some() {
                return;
            }
            err = check_node(n, bb, &mut readers).err();
        });
        if let Some(e) = err {
            return Err(e);
        }
        let n = super::count_nodes(&root);
        Ok(Self {
            machine: machine.into(),
            root,
            rt: Runtime {
                states: vec![NodeState::Idle; n],
                cursor: vec![0; n],
                attempts: vec![0; n],
                local: LocalBlackboard::new(),
                readers,
                failed_conditions: Vec::new(),
                trace: None,
                now: 0,
            },
        })
    }

    pub fn machine(&self) -> &str {
        &self.machine
    }

    pub fn root(&self) -> &BtNode {
        &self.root
    }

    pub fn local(&self) -> &LocalBlackboard {
        &self.rt.local
    }

    pub fn state(&self, id: NodeId) -> Option<NodeState> {
        self.rt.states.get(id.0).copied()
    }

    pub fn attempts(&self, id: NodeId) -> u32 {
        self.rt.attempts.get(id.0).copied().unwrap_or(0)
    }

    /// Starts recording every node tick.
    pub fn enable_trace(&mut self) {
        self.rt.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.rt.trace.as_deref().unwrap_or(&[])
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.rt.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.rt.states[0], NodeState::Done(_))
    }

    pub fn running_actions(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.root.walk(&mut |n| {
            if matches!(n.kind, NodeKind::Action { .. }) && self.rt.states[n.id.0] == NodeState::Running {
                out.push(n.id);
            }
        });
        out
    }

    pub fn wait_state(&self) -> WaitState {
        if let NodeState::Done(s) = self.rt.states[0] {
            return WaitState::Finished(s);
        }
        if let Some(&a) = self.running_actions().first() {
            return WaitState::Acting(a);
        }
        WaitState::Waiting(self.rt.failed_conditions.clone())
    }

    /// Propagates one tick from the root.
    pub fn tick(&mut self, bb: &GlobalBlackboard, world: &mut dyn ActionExecutor, now: u64) -> TickStatus {
        self.rt.now = now;
        self.rt.failed_conditions.clear();
        if let NodeState::Done(_) = self.rt.states[0] {
            self.rt.clear(&self.root);
        }
        let mut ctx = Ctx {
            machine: &self.machine,
            bb,
            world,
        };
        self.rt.tick(&self.root, &mut ctx)
    }

    /// Returns `node` and its descendants to Idle, cancelling in-flight actions.
    pub fn halt(&mut self, node: NodeId, world: &mut dyn ActionExecutor) -> Result<(), BtError> {
        let n = self.root.find(node).ok_or(BtError::UnknownNode(node))?;
        self.rt.halt(n, &self.machine, world);
        Ok(())
    }

    /// Forgets all runtime state without touching the world or the global
    /// blackboard. Halt first if actions may be in flight.
    pub fn reset(&mut self) {
        self.rt.states.fill(NodeState::Idle);
        self.rt.cursor.fill(0);
        self.rt.attempts.fill(0);
        self.rt.local.clear();
        self.rt.failed_conditions.clear();
    }
}

fn check_node(
    n: &BtNode,
    bb: &GlobalBlackboard,
    readers: &mut BTreeMap<FlagName, FlagName>,
) -> Result<(), BtError> {
    let malformed = |msg: String| Err(BtError::MalformedTree(format!("{} {}: {msg}", n.kind.tag(), n.id)));
    if n.kind.is_composite() {
        if n.children.is_empty() {
            return malformed("composite without children".into());
        }
    } else if !n.children.is_empty() {
        return malformed("leaf with children".into());
    }
    match &n.kind {
        NodeKind::RetryUntilSuccessful { max_attempts } => {
            if n.children.len() != 1 {
                return malformed(format!("{} children, want 1", n.children.len()));
            }
            if *max_attempts == Some(0) {
                return malformed("max_attempts must be at least 1".into());
            }
        }
        NodeKind::DbReader { flag, local_key } => {
            if !bb.is_registered(flag.as_str()) {
                return Err(BtError::UnknownFlag(flag.clone()));
            }
            if let Some(prev) = readers.insert(local_key.clone(), flag.clone()) {
                if &prev != flag {
                    return malformed(format!("local key {local_key} bound to {prev} and {flag}"));
                }
            }
        }
        NodeKind::SetFlag { flag, .. } => {
            if !bb.is_registered(flag.as_str()) {
                return Err(BtError::UnknownFlag(flag.clone()));
            }
        }
        NodeKind::Action { action } if action.duration() == 0 => {
            return malformed("duration must be at least 1".into());
        }
        _ => {}
    }
    Ok(())
}

struct Ctx<'a> {
    machine: &'a str,
    bb: &'a GlobalBlackboard,
    world: &'a mut dyn ActionExecutor,
}

impl Runtime {
    fn record(&mut self, machine: &str, id: NodeId, status: TickStatus) {
        if let Some(t) = &mut self.trace {
            t.push(TraceRecord {
                tick: self.now,
                machine: machine.to_string(),
                node_id: id,
                status,
            });
        }
    }

    fn finish(&mut self, node: &BtNode, machine: &str, status: TickStatus) -> TickStatus {
        let i = node.id.0;
        self.states[i] = match status {
            TickStatus::Running => NodeState::Running,
            s => {
                self.cursor[i] = 0;
                NodeState::Done(s)
            }
        };
        self.record(machine, node.id, status);
        status
    }

    fn tick(&mut self, node: &BtNode, ctx: &mut Ctx) -> TickStatus {
        let i = node.id.0;
        let status = match &node.kind {
            NodeKind::Sequence => {
                let start = if self.states[i] == NodeState::Running { self.cursor[i] } else { 0 };
                let mut out = TickStatus::Success;
                for (k, child) in node.children.iter().enumerate().skip(start) {
                    match self.tick(child, ctx) {
                        TickStatus::Success => {}
                        other => {
                            self.cursor[i] = k;
                            out = other;
                            break;
                        }
                    }
                }
                out
            }
            NodeKind::ReactiveSequence => {
                let mut out = TickStatus::Success;
                for (k, child) in node.children.iter().enumerate() {
                    match self.tick(child, ctx) {
                        TickStatus::Success => {}
                        other => {
                            for later in &node.children[k + 1..] {
                                self.halt(later, ctx.machine, ctx.world);
                            }
                            out = other;
                            break;
                        }
                    }
                }
                out
            }
            NodeKind::Fallback => {
                let start = if self.states[i] == NodeState::Running { self.cursor[i] } else { 0 };
                let mut out = TickStatus::Failure;
                for (k, child) in node.children.iter().enumerate().skip(start) {
                    match self.tick(child, ctx) {
                        TickStatus::Failure => {}
                        other => {
                            self.cursor[i] = k;
                            out = other;
                            break;
                        }
                    }
                }
                out
            }
            NodeKind::RetryUntilSuccessful { max_attempts } => {
                let child = &node.children[0];
                match self.tick(child, ctx) {
                    TickStatus::Failure => {
                        self.attempts[i] += 1;
                        self.halt(child, ctx.machine, ctx.world);
                        match max_attempts {
                            Some(max) if self.attempts[i] >= *max => {
                                self.attempts[i] = 0;
                                TickStatus::Failure
                            }
                            _ => TickStatus::Running,
                        }
                    }
                    TickStatus::Success => {
                        self.attempts[i] = 0;
                        TickStatus::Success
                    }
                    TickStatus::Running => TickStatus::Running,
                }
            }
            NodeKind::DbReader { flag, local_key } => match ctx.bb.get_flag(flag.as_str()) {
                Ok(v) => {
                    self.local.insert(local_key.clone(), v);
                    TickStatus::Success
                }
                Err(_) => TickStatus::Failure,
            },
            NodeKind::ConditionalExpression { expr } => {
                match expr.eval_with(&|k: &FlagName| self.local.get(k).copied()) {
                    Ok(true) => TickStatus::Success,
                    _ => {
                        self.failed_conditions.push(expr.rename(&self.readers));
                        TickStatus::Failure
                    }
                }
            }
            NodeKind::Action { action } => {
                let progress = if self.states[i] == NodeState::Running {
                    ctx.world.poll(ctx.machine, node.id)
                } else {
                    ctx.world.start(ctx.machine, node.id, action)
                };
                match progress {
                    ActionProgress::Running => TickStatus::Running,
                    ActionProgress::Completed => TickStatus::Success,
                    ActionProgress::Faulted(_) => TickStatus::Failure,
                }
            }
            NodeKind::SetFlag { flag, value } => {
                match ctx.bb.set_flag(flag.as_str(), *value, FlagSource::Action, self.now) {
                    Ok(_) => TickStatus::Success,
                    Err(_) => TickStatus::Failure,
                }
            }
        };
        self.finish(node, ctx.machine, status)
    }

    fn halt(&mut self, node: &BtNode, machine: &str, world: &mut dyn ActionExecutor) {
        let i = node.id.0;
        if self.states[i] == NodeState::Running {
            if let NodeKind::Action { .. } = node.kind {
                world.cancel(machine, node.id);
            }
            for c in &node.children {
                self.halt(c, machine, world);
            }
        }
        self.states[i] = NodeState::Idle;
        self.cursor[i] = 0;
        self.attempts[i] = 0;
    }

    /// Returns a finished subtree to Idle so the next tick replays it.
    fn clear(&mut self, node: &BtNode) {
        node.walk(&mut |n| {
            self.states[n.id.0] = NodeState::Idle;
            self.cursor[n.id.0] = 0;
            self.attempts[n.id.0] = 0;
        });
    }
}
