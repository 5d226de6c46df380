use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::actionseq::FlagExpr;
use crate::flagcore::FlagName;

/// Preorder position of a node in its tree; assigned by [`BtNode::finalize`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Low-level motion executed by a machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case")]
pub enum PrimitiveAction {
    /// Follow a stored path. `target` is where the machine ends up; when it
    /// names the current place or a machine the motion happens in place.
    MoveAlongPath {
        path: String,
        target: String,
        duration: u32,
    },
    /// Drive the joints to a named pose. `target` is the place or machine the
    /// pose acts on, when it acts on one.
    SetJointTargets {
        pose: String,
        joints: Vec<f64>,
        target: Option<String>,
        duration: u32,
    },
    DumpBed { duration: u32 },
    Wait { duration: u32 },
}

impl PrimitiveAction {
    pub fn duration(&self) -> u32 {
        match self {
            PrimitiveAction::MoveAlongPath { duration, .. }
            | PrimitiveAction::SetJointTargets { duration, .. }
            | PrimitiveAction::DumpBed { duration }
            | PrimitiveAction::Wait { duration } => *duration,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            PrimitiveAction::MoveAlongPath { .. } => "MoveAlongPath",
            PrimitiveAction::SetJointTargets { .. } => "SetJointTargets",
            PrimitiveAction::DumpBed { .. } => "DumpBed",
            PrimitiveAction::Wait { .. } => "Wait",
        }
    }
}

impl fmt::Display for PrimitiveAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrimitiveAction::MoveAlongPath { path, target, .. } => {
                write!(f, "MoveAlongPath({path} -> {target})")
            }
            PrimitiveAction::SetJointTargets { pose, target, .. } => match target {
                Some(t) => write!(f, "SetJointTargets({pose} @ {t})"),
                None => write!(f, "SetJointTargets({pose})"),
            },
            PrimitiveAction::DumpBed { .. } => f.write_str("DumpBed"),
            PrimitiveAction::Wait { duration } => write!(f, "Wait({duration})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    Sequence,
    ReactiveSequence,
    Fallback,
    /// `None` retries forever.
    RetryUntilSuccessful { max_attempts: Option<u32> },
    DbReader { flag: FlagName, local_key: FlagName },
    /// Evaluated over the local blackboard only.
    ConditionalExpression { expr: FlagExpr },
    Action { action: PrimitiveAction },
    SetFlag { flag: FlagName, value: bool },
}

impl NodeKind {
    pub fn is_composite(&self) -> bool {
        matches!(
            self,
            NodeKind::Sequence
                | NodeKind::ReactiveSequence
                | NodeKind::Fallback
                | NodeKind::RetryUntilSuccessful { .. }
        )
    }

    pub fn tag(&self) -> &'static str {
        match self {
            NodeKind::Sequence => "Sequence",
            NodeKind::ReactiveSequence => "ReactiveSequence",
            NodeKind::Fallback => "Fallback",
            NodeKind::RetryUntilSuccessful { .. } => "RetryUntilSuccessful",
            NodeKind::DbReader { .. } => "DBReader",
            NodeKind::ConditionalExpression { .. } => "ConditionalExpression",
            NodeKind::Action { action } => action.tag(),
            NodeKind::SetFlag { .. } => "SetFlag",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtNode {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<BtNode>,
}

impl BtNode {
    pub fn new(kind: NodeKind, children: Vec<BtNode>) -> Self {
        Self {
            id: NodeId(0),
            kind,
            children,
        }
    }

    pub fn leaf(kind: NodeKind) -> Self {
        Self::new(kind, Vec::new())
    }

    pub fn sequence(children: Vec<BtNode>) -> Self {
        Self::new(NodeKind::Sequence, children)
    }

    pub fn reactive_sequence(children: Vec<BtNode>) -> Self {
        Self::new(NodeKind::ReactiveSequence, children)
    }

    pub fn fallback(children: Vec<BtNode>) -> Self {
        Self::new(NodeKind::Fallback, children)
    }

    pub fn retry(max_attempts: Option<u32>, child: BtNode) -> Self {
        Self::new(NodeKind::RetryUntilSuccessful { max_attempts }, vec![child])
    }

    pub fn db_reader(flag: FlagName) -> Self {
        Self::leaf(NodeKind::DbReader {
            local_key: flag.clone(),
            flag,
        })
    }

    pub fn condition(expr: FlagExpr) -> Self {
        Self::leaf(NodeKind::ConditionalExpression { expr })
    }

    pub fn action(action: PrimitiveAction) -> Self {
        Self::leaf(NodeKind::Action { action })
    }

    pub fn set_flag(flag: FlagName, value: bool) -> Self {
        Self::leaf(NodeKind::SetFlag { flag, value })
    }

    /// Assigns preorder ids starting at 0.
    pub fn finalize(mut self) -> Self {
        let mut next = 0;
        self.number(&mut next);
        self
    }

    fn number(&mut self, next: &mut usize) {
        self.id = NodeId(*next);
        *next += 1;
        for c in &mut self.children {
            c.number(next);
        }
    }

    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a BtNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    pub fn find(&self, id: NodeId) -> Option<&BtNode> {
        if self.id == id {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(id))
    }

    /// Flags written by SetFlag nodes in this subtree, with the value written.
    pub fn flags_written(&self) -> Vec<(FlagName, bool)> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let NodeKind::SetFlag { flag, value } = &n.kind {
                out.push((flag.clone(), *value));
            }
        });
        out
    }

    pub fn flags_read(&self) -> Vec<FlagName> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let NodeKind::DbReader { flag, .. } = &n.kind {
                out.push(flag.clone());
            }
        });
        out
    }
}

/// Total node count, composites and leaves alike.
pub fn count_nodes(root: &BtNode) -> usize {
    1 + root.children.iter().map(count_nodes).sum::<usize>()
}

/// For every action node, the gate expressions guarding it, rewritten over
/// global flag names.
///
/// A gate is the condition part (first child) of an enclosing
/// ReactiveSequence or Sequence that contains a ConditionalExpression, when
/// the action lies in a later child. Local keys are mapped back to flags
/// through the DBReaders of that condition part.
pub fn action_gates(root: &BtNode) -> BTreeMap<NodeId, Vec<FlagExpr>> {
    let mut out = BTreeMap::new();
    collect_gates(root, &mut Vec::new(), &mut out);
    out
}

fn collect_gates(
    node: &BtNode,
    stack: &mut Vec<FlagExpr>,
    out: &mut BTreeMap<NodeId, Vec<FlagExpr>>,
) {
    if let NodeKind::Action { .. } = node.kind {
        out.insert(node.id, stack.clone());
        return;
    }
    let gate = match node.kind {
        NodeKind::ReactiveSequence | NodeKind::Sequence => {
            node.children.first().and_then(condition_part_gate)
        }
        _ => None,
    };
    for (i, c) in node.children.iter().enumerate() {
        let pushed = match &gate {
            Some(g) if i > 0 => {
                stack.push(g.clone());
                true
            }
            _ => false,
        };
        collect_gates(c, stack, out);
        if pushed {
            stack.pop();
        }
    }
}

/// The conjunction of a subtree's conditional expressions over global flags,
/// if the subtree is a pure condition part (no actions).
fn condition_part_gate(part: &BtNode) -> Option<FlagExpr> {
    let mut readers = BTreeMap::new();
    let mut exprs = Vec::new();
    let mut has_action = false;
    part.walk(&mut |n| match &n.kind {
        NodeKind::DbReader { flag, local_key } => {
            readers.insert(local_key.clone(), flag.clone());
        }
        NodeKind::ConditionalExpression { expr } => exprs.push(expr.clone()),
        NodeKind::Action { .. } => has_action = true,
        _ => {}
    });
    if has_action || exprs.is_empty() {
        return None;
    }
    let exprs: Vec<FlagExpr> = exprs.iter().map(|e| e.rename(&readers)).collect();
    Some(FlagExpr::and(exprs))
}
