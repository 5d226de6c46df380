use std::collections::{BTreeMap, BTreeSet};
use std::thread;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::engine::{TickStatus, TreeInstance};
use super::node::{NodeId, PrimitiveAction};
use crate::flagcore::GlobalBlackboard;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionProgress {
    Running,
    Completed,
    Faulted(String),
}

/// The world side of action leaves. Calls are keyed by machine and node id;
/// a tree never has two actions in flight.
pub trait ActionExecutor {
    fn start(&mut self, machine: &str, node: NodeId, action: &PrimitiveAction) -> ActionProgress;
    fn poll(&mut self, machine: &str, node: NodeId) -> ActionProgress;
    fn cancel(&mut self, machine: &str, node: NodeId);
}

/// Lets trees on several threads share one executor.
pub struct LockedWorld<'a, W>(pub &'a Mutex<W>);

impl<W: ActionExecutor> ActionExecutor for LockedWorld<'_, W> {
    fn start(&mut self, machine: &str, node: NodeId, action: &PrimitiveAction) -> ActionProgress {
        self.0.lock().start(machine, node, action)
    }

    fn poll(&mut self, machine: &str, node: NodeId) -> ActionProgress {
        self.0.lock().poll(machine, node)
    }

    fn cancel(&mut self, machine: &str, node: NodeId) {
        self.0.lock().cancel(machine, node)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorldCall {
    Start { machine: String, node: NodeId },
    Poll { machine: String, node: NodeId },
    Cancel { machine: String, node: NodeId },
}

/// Completes each action after `duration` ticks of its own (the starting
/// tick counts as the first). Records every call.
#[derive(Debug, Clone, Default)]
pub struct TimerWorld {
    remaining: BTreeMap<(String, NodeId), u32>,
    faults: BTreeSet<(String, NodeId)>,
    pub calls: Vec<WorldCall>,
}

impl TimerWorld {
    /// Makes the action at `node` fault when started.
    pub fn fail_on(&mut self, machine: &str, node: NodeId) {
        self.faults.insert((machine.to_string(), node));
    }

    pub fn remaining(&self, machine: &str, node: NodeId) -> Option<u32> {
        self.remaining.get(&(machine.to_string(), node)).copied()
    }

    pub fn cancels(&self) -> usize {
        self.calls
            .iter()
            .filter(|c| matches!(c, WorldCall::Cancel { .. }))
            .count()
    }

    fn step(&mut self, key: (String, NodeId)) -> ActionProgress {
        match self.remaining.get_mut(&key) {
            Some(0) | None => {
                self.remaining.remove(&key);
                ActionProgress::Completed
            }
            Some(r) => {
                *r -= 1;
                if *r == 0 {
                    self.remaining.remove(&key);
                    ActionProgress::Completed
                } else {
                    ActionProgress::Running
                }
            }
        }
    }
}

impl ActionExecutor for TimerWorld {
    fn start(&mut self, machine: &str, node: NodeId, action: &PrimitiveAction) -> ActionProgress {
        self.calls.push(WorldCall::Start {
            machine: machine.into(),
            node,
        });
        let key = (machine.to_string(), node);
        if self.faults.contains(&key) {
            return ActionProgress::Faulted(format!("injected fault at {node}"));
        }
        self.remaining.insert(key.clone(), action.duration());
        self.step(key)
    }

    fn poll(&mut self, machine: &str, node: NodeId) -> ActionProgress {
        self.calls.push(WorldCall::Poll {
            machine: machine.into(),
            node,
        });
        self.step((machine.to_string(), node))
    }

    fn cancel(&mut self, machine: &str, node: NodeId) {
        self.calls.push(WorldCall::Cancel {
            machine: machine.into(),
            node,
        });
        self.remaining.remove(&(machine.to_string(), node));
    }
}

/// Ticks every unfinished tree once, in slice order. Finished trees report
/// their final status without being ticked.
pub fn tick_all(
    trees: &mut [TreeInstance],
    bb: &GlobalBlackboard,
    world: &mut dyn ActionExecutor,
    now: u64,
) -> Vec<TickStatus> {
    trees
        .iter_mut()
        .map(|t| match t.wait_state() {
            super::WaitState::Finished(s) => s,
            _ => t.tick(bb, world, now),
        })
        .collect()
}

/// Same contract as [`tick_all`] with each tree ticked on its own thread.
/// Trees still tick once each; the interleaving of their blackboard writes
/// within the tick is up to the OS.
pub fn tick_all_concurrent<W: ActionExecutor + Send>(
    trees: &mut [TreeInstance],
    bb: &GlobalBlackboard,
    world: &Mutex<W>,
    now: u64,
) -> Vec<TickStatus> {
    thread::scope(|s| {
        let handles: Vec<_> = trees
            .iter_mut()
            .map(|t| {
                s.spawn(move || match t.wait_state() {
                    super::WaitState::Finished(st) => st,
                    _ => t.tick(bb, &mut LockedWorld(world), now),
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("tree thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    /// Ticks consumed.
    pub ticks: u64,
    pub statuses: Vec<TickStatus>,
}

impl RunOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.statuses.iter().all(|s| *s == TickStatus::Success)
    }
}

/// Deterministic round-robin loop until every tree finishes or the budget
/// runs out.
pub fn run_round_robin(
    trees: &mut [TreeInstance],
    bb: &GlobalBlackboard,
    world: &mut dyn ActionExecutor,
    max_ticks: u64,
) -> RunOutcome {
    let mut statuses = vec![TickStatus::Running; trees.len()];
    let mut now = 0;
    while now < max_ticks && statuses.contains(&TickStatus::Running) {
        statuses = tick_all(trees, bb, world, now);
        now += 1;
    }
    RunOutcome {
        ticks: now,
        statuses,
    }
}
