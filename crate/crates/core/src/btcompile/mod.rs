//! Template compiler from an Action Sequence to one behavior tree per machine.
//!
//! Each statement becomes
//!
//! ```text
//! ReactiveSequence
//! ├── RetryUntilSuccessful(unbounded)
//! │   └── Sequence
//! │       ├── DBReader   (one per flag, left to right)
//! │       └── ConditionalExpression(precondition)
//! └── Sequence
//!     ├── primitive actions of the skill
//!     └── SetFlag        (one per flag the statement's completion sets)
//! ```
//!
//! and an always-true precondition keeps only the inner action Sequence.

mod paramdb;
mod xml;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actionseq::{bind_flags, validate, ActionSequence, ActionStatement, Skill, ValidationReport};
use crate::btree::{count_nodes, BtNode, NodeId, PrimitiveAction};
use crate::flagcore::{default_registry, FlagName, FlagRegistryEntry};

pub use paramdb::{MachineEntry, ParamDbError, PathEntry, TaskParamDb, TRAVEL_SPEED};
pub use xml::{emit_tree_xml, emit_xml, parse_xml, XmlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Path,
    Pose,
    Duration,
    Machine,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamKind::Path => "path",
            ParamKind::Pose => "pose",
            ParamKind::Duration => "duration",
            ParamKind::Machine => "machine",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("sequence does not validate: {}", summarize(.0))]
    Unvalidated(ValidationReport),
    #[error("task parameter database has no {kind} for {key}")]
    MissingParam { kind: ParamKind, key: String },
}

fn summarize(r: &ValidationReport) -> String {
    r.errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlagBoundary {
    OnCompletion,
    /// Not produced by [`compile`]; available to hand-written plans.
    OnStart,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagSetter {
    pub statement: usize,
    pub machine: String,
    pub value: bool,
    pub boundary: FlagBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledPlan {
    pub trees: BTreeMap<String, BtNode>,
    pub flag_contract: BTreeMap<FlagName, FlagSetter>,
    pub xml: BTreeMap<String, String>,
    /// Default sensing flags plus the sequence's generated flags.
    pub registry: Vec<FlagRegistryEntry>,
    /// Statement index -> (machine, root of its subtree).
    pub statement_roots: BTreeMap<usize, (String, NodeId)>,
}

impl CompiledPlan {
    /// The statement whose subtree contains `node` of `machine`'s tree.
    pub fn statement_of(&self, machine: &str, node: NodeId) -> Option<usize> {
        self.statement_roots
            .iter()
            .filter(|(_, (m, root))| m == machine && root.0 <= node.0)
            .max_by_key(|(_, (_, root))| root.0)
            .map(|(i, _)| *i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStats {
    pub nn_total: usize,
    pub nn_per_machine: BTreeMap<String, usize>,
    pub flag_count: usize,
}

pub fn plan_stats(plan: &CompiledPlan) -> PlanStats {
    let nn_per_machine: BTreeMap<String, usize> = plan
        .trees
        .iter()
        .map(|(m, t)| (m.clone(), count_nodes(t)))
        .collect();
    PlanStats {
        nn_total: nn_per_machine.values().sum(),
        nn_per_machine,
        flag_count: plan.flag_contract.len(),
    }
}

pub fn compile(seq: &ActionSequence, db: &TaskParamDb) -> Result<CompiledPlan, CompileError> {
    let places: BTreeSet<String> = db.places().map(str::to_string).collect();
    let kinds = db.machine_kinds();
    let mut registry = default_registry(places.iter().map(String::as_str));
    let report = validate(seq, &kinds, &places, &registry);
    if !report.is_ok() {
        return Err(CompileError::Unvalidated(report));
    }
    let bindings = bind_flags(seq);

    let mut location: BTreeMap<&str, &str> = BTreeMap::new();
    let mut per_machine: BTreeMap<String, Vec<BtNode>> = BTreeMap::new();
    let mut flag_contract = BTreeMap::new();
    let mut order: BTreeMap<String, Vec<usize>> = BTreeMap::new();

    for stmt in &seq.statements {
        let here = match location.get(stmt.machine.as_str()) {
            Some(p) => *p,
            None => db.initial_place(&stmt.machine).ok_or_else(|| CompileError::MissingParam {
                kind: ParamKind::Machine,
                key: stmt.machine.clone(),
            })?,
        };
        let (mut actions, now_at) = expand(stmt, here, db)?;
        location.insert(&stmt.machine, now_at);

        for flag in bindings.flags_set_by(seq, stmt.index) {
            actions.push(BtNode::set_flag(flag.clone(), true));
            flag_contract.insert(
                flag.clone(),
                FlagSetter {
                    statement: stmt.index,
                    machine: stmt.machine.clone(),
                    value: true,
                    boundary: FlagBoundary::OnCompletion,
                },
            );
        }
        let action_part = BtNode::sequence(actions);
        let subtree = if stmt.precondition.is_always() {
            action_part
        } else {
            let mut gate: Vec<BtNode> = stmt
                .precondition
                .leaves()
                .into_iter()
                .map(|(flag, _)| BtNode::db_reader(flag.clone()))
                .collect();
            gate.push(BtNode::condition(stmt.precondition.clone()));
            BtNode::reactive_sequence(vec![
                BtNode::retry(None, BtNode::sequence(gate)),
                action_part,
            ])
        };
        per_machine.entry(stmt.machine.clone()).or_default().push(subtree);
        order.entry(stmt.machine.clone()).or_default().push(stmt.index);
    }

    for g in &seq.generated_flags {
        registry.push(FlagRegistryEntry::generated(g.name.clone(), g.description.clone()));
    }

    let mut trees = BTreeMap::new();
    let mut statement_roots = BTreeMap::new();
    for (machine, subtrees) in per_machine {
        let root = BtNode::sequence(subtrees).finalize();
        for (child, idx) in root.children.iter().zip(&order[&machine]) {
            statement_roots.insert(*idx, (machine.clone(), child.id));
        }
        trees.insert(machine, root);
    }
    let mut plan = CompiledPlan {
        trees,
        flag_contract,
        xml: BTreeMap::new(),
        registry,
        statement_roots,
    };
    plan.xml = emit_xml(&plan);
    Ok(plan)
}

/// Primitive actions for one statement and where the machine ends up.
fn expand<'a>(
    stmt: &'a ActionStatement,
    here: &'a str,
    db: &TaskParamDb,
) -> Result<(Vec<BtNode>, &'a str), CompileError> {
    let pose = |name: &str, target: Option<&str>| -> Result<BtNode, CompileError> {
        Ok(BtNode::action(PrimitiveAction::SetJointTargets {
            pose: name.to_string(),
            joints: db.joints(name)?.to_vec(),
            target: target.map(str::to_string),
            duration: db.duration(name)?,
        }))
    };
    let p = |i: usize| stmt.params[i].as_str();
    let mut at = here;
    let nodes = match stmt.skill {
        Skill::Move => {
            let dest = p(0);
            let path = db.path(here, dest)?;
            at = dest;
            vec![BtNode::action(PrimitiveAction::MoveAlongPath {
                path: path.id.clone(),
                target: dest.to_string(),
                duration: path.length,
            })]
        }
        Skill::InitialPose => vec![pose("initial", None)?],
        Skill::ExcavateAndRelease => vec![
            pose("dig_ready", None)?,
            pose("dig", Some(p(0)))?,
            pose("scoop", Some(p(0)))?,
            pose("swing", Some(p(1)))?,
            pose("release", Some(p(1)))?,
        ],
        Skill::Level => vec![
            pose("level_start", Some(p(0)))?,
            BtNode::action(PrimitiveAction::MoveAlongPath {
                path: "level_pass".into(),
                target: p(0).to_string(),
                duration: db.duration("level_pass")?,
            }),
        ],
        Skill::Gather => vec![pose("gather_start", Some(p(0)))?, pose("gather_pull", Some(p(0)))?],
        Skill::DumpSoil => vec![BtNode::action(PrimitiveAction::DumpBed {
            duration: db.duration("dump")?,
        })],
    };
    Ok((nodes, at))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actionseq::{parse, FlagExpr, LOAD_SOIL_EXAMPLE};
    use crate::btree::NodeKind;

    fn db() -> TaskParamDb {
        TaskParamDb::example()
    }

    fn figure() -> CompiledPlan {
        compile(&parse(LOAD_SOIL_EXAMPLE).unwrap(), &db()).unwrap()
    }

    fn f(n: &str) -> FlagName {
        FlagName::new(n).unwrap()
    }

    #[test]
    fn figure_partition_and_contract() {
        let plan = figure();
        assert_eq!(plan.trees.len(), 2);
        assert_eq!(plan.trees["excavator"].children.len(), 2);
        assert_eq!(plan.trees["dump_truck"].children.len(), 1);
        let s = &plan.flag_contract[&f("EXCAVATOR_INITIAL_POSE_FLG")];
        assert_eq!((s.statement, s.boundary), (1, FlagBoundary::OnCompletion));
        let s = &plan.flag_contract[&f("DUMPTRUCK_AT_LOADING_SITE_FLG")];
        assert_eq!((s.statement, s.machine.as_str()), (2, "dump_truck"));
        assert_eq!(plan.statement_roots[&3], ("excavator".to_string(), NodeId(4)));
        assert_eq!(plan.statement_of("excavator", NodeId(14)), Some(3));
        assert_eq!(plan.statement_of("excavator", NodeId(2)), Some(1));
    }

    #[test]
    fn figure_node_counts() {
        // excavator: root + [Seq(pose, SetFlag)] + [RS(Retry(Seq(2 DBR, Cond)), Seq(5 actions))]
        //   = 1 + 3 + (1 + 1 + 1 + 3 + 1 + 5) = 16
        // dump_truck: root + RS(Retry(Seq(DBR, Cond)), Seq(move, SetFlag)) = 1 + 8 = 9
        let st = plan_stats(&figure());
        assert_eq!(st.nn_per_machine["excavator"], 16);
        assert_eq!(st.nn_per_machine["dump_truck"], 9);
        assert_eq!(st.nn_total, 25);
        assert_eq!(st.flag_count, 2);
    }

    #[test]
    fn single_dump() {
        let plan = compile(&parse("1. dump_soil(dump_truck)").unwrap(), &db()).unwrap();
        let root = &plan.trees["dump_truck"];
        assert_eq!(root.children.len(), 1);
        let stmt = &root.children[0];
        assert_eq!(stmt.kind, NodeKind::Sequence);
        assert_eq!(stmt.children.len(), 1);
        assert!(matches!(
            stmt.children[0].kind,
            NodeKind::Action { action: PrimitiveAction::DumpBed { .. } }
        ));
        assert_eq!(plan_stats(&plan).nn_total, 3);
        assert!(!plan.xml.contains_key("excavator"));
    }

    #[test]
    fn missing_path() {
        let seq = parse("1. move(dump_truck, mound)").unwrap();
        assert_eq!(
            compile(&seq, &db()).unwrap_err(),
            CompileError::MissingParam {
                kind: ParamKind::Path,
                key: "(truck_yard, mound)".into()
            }
        );
    }

    #[test]
    fn invalid_sequence_is_rejected() {
        let seq = parse("1. dump_soil(excavator)").unwrap();
        assert!(matches!(compile(&seq, &db()), Err(CompileError::Unvalidated(_))));
    }

    #[test]
    fn gate_completeness() {
        let plan = figure();
        let stmt3 = &plan.trees["excavator"].children[1];
        let readers: Vec<FlagName> = stmt3.flags_read();
        assert_eq!(
            readers,
            [f("DUMPTRUCK_AT_LOADING_SITE_FLG"), f("SENSING_ARRIVAL_FLG")]
        );
        let mut conds = Vec::new();
        stmt3.walk(&mut |n| {
            if let NodeKind::ConditionalExpression { expr } = &n.kind {
                conds.push(expr.clone());
            }
        });
        let seq = parse(LOAD_SOIL_EXAMPLE).unwrap();
        assert_eq!(conds, [seq.statements[2].precondition.clone()]);
        assert!(!conds[0].is_always());
        assert_ne!(conds[0], FlagExpr::always());
    }

    #[test]
    fn moves_track_location() {
        let seq = parse(
            "1. move(dump_truck, loading_site)\n2. move(dump_truck, dumping_site)\n3. move(dump_truck, loading_site)",
        )
        .unwrap();
        let plan = compile(&seq, &db()).unwrap();
        let paths: Vec<String> = plan.trees["dump_truck"]
            .children
            .iter()
            .map(|s| match &s.children[0].kind {
                NodeKind::Action { action: PrimitiveAction::MoveAlongPath { path, .. } } => path.clone(),
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(
            paths,
            [
                "truck_yard__loading_site",
                "loading_site__dumping_site",
                "dumping_site__loading_site"
            ]
        );
    }
}
