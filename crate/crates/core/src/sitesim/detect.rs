//! Deadlock detection over the flag wait-for graph.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::btree::{BtNode, NodeKind, TreeInstance, WaitState};
use crate::flagcore::{FlagName, GlobalBlackboard};

/// Edges run from a waiting tree to every unfinished tree holding a
/// `SetFlag` that would satisfy one of its false leaves.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaitForGraph {
    pub edges: BTreeMap<String, BTreeSet<String>>,
    /// Waits on flags no unfinished tree writes (sensing flags included;
    /// they only move while actions are in flight).
    pub dead_waits: Vec<(String, FlagName)>,
}

fn writes(root: &BtNode, flag: &FlagName, value: bool) -> bool {
    let mut found = false;
    root.walk(&mut |n| {
        if let NodeKind::SetFlag { flag: f, value: v } = &n.kind {
            found |= f == flag && *v == value;
        }
    });
    found
}

impl WaitForGraph {
    pub fn build(trees: &[TreeInstance], bb: &GlobalBlackboard) -> Self {
        let mut g = WaitForGraph::default();
        for t in trees {
            let WaitState::Waiting(conds) = t.wait_state() else {
                continue;
            };
            let entry = g.edges.entry(t.machine().to_string()).or_default();
            for expr in &conds {
                for (flag, expected) in expr.leaves() {
                    if bb.get_flag(flag.as_str()).ok() == Some(expected) {
                        continue;
                    }
                    let writers: Vec<&str> = trees
                        .iter()
                        .filter(|w| !w.is_finished() && writes(w.root(), flag, expected))
                        .map(TreeInstance::machine)
                        .collect();
                    if writers.is_empty() {
                        g.dead_waits.push((t.machine().to_string(), flag.clone()));
                    }
                    entry.extend(writers.into_iter().map(str::to_string));
                }
            }
        }
        g
    }

    /// A cycle of trees each waiting on the next, first found in id order.
    pub fn find_cycle(&self) -> Option<Vec<String>> {
        fn dfs<'a>(
            g: &'a BTreeMap<String, BTreeSet<String>>,
            at: &'a str,
            path: &mut Vec<&'a str>,
            done: &mut BTreeSet<&'a str>,
        ) -> Option<Vec<String>> {
            if let Some(pos) = path.iter().position(|p| *p == at) {
                let mut cycle: Vec<String> = path[pos..].iter().map(|s| s.to_string()).collect();
                cycle.push(at.to_string());
                return Some(cycle);
            }
            if !done.insert(at) {
                return None;
            }
            path.push(at);
            for next in g.get(at).into_iter().flatten() {
                if let Some(c) = dfs(g, next, path, done) {
                    return Some(c);
                }
            }
            path.pop();
            None
        }
        let mut done = BTreeSet::new();
        for start in self.edges.keys() {
            if let Some(c) = dfs(&self.edges, start, &mut Vec::new(), &mut done) {
                return Some(c);
            }
        }
        None
    }

    /// Human-readable reason the waiting trees cannot move.
    pub fn explain(&self) -> String {
        let mut parts = Vec::new();
        if let Some(c) = self.find_cycle() {
            parts.push(format!("wait cycle {}", c.join(" -> ")));
        }
        for (m, f) in &self.dead_waits {
            parts.push(format!("{m} waits on {f} with no writer left"));
        }
        if parts.is_empty() {
            parts.push("no tree can make progress".into());
        }
        parts.join("; ")
    }
}

/// Stuck iff some tree is unfinished, every unfinished tree is parked on a
/// false condition, nothing is in flight, and no flag changed while the trees
/// ticked.
pub fn is_stuck(trees: &[TreeInstance], in_flight: bool, flags_changed: bool) -> bool {
    let mut any_open = false;
    for t in trees {
        match t.wait_state() {
            WaitState::Finished(_) => {}
            WaitState::Waiting(_) => any_open = true,
            WaitState::Acting(_) => return false,
        }
    }
    any_open && !in_flight && !flags_changed
}
