use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::PlannerError;
use crate::actionseq::skills_table;
use crate::btcompile::{emit_tree_xml, TaskParamDb};
use crate::btree::{BtNode, PrimitiveAction};
use crate::actionseq::FlagExpr;
use crate::flagcore::{FlagName, FlagRegistryEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ActionSequence,
    BehaviorTree,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::ActionSequence => "action_sequence",
            Stage::BehaviorTree => "behavior_tree",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentKind {
    SkillsTable,
    DefaultFlags,
    FlagRules,
    ActionSequence,
    Template,
    TreeExample,
    CustomNodes,
    TaskParams,
}

impl AttachmentKind {
    pub fn title(self) -> &'static str {
        match self {
            AttachmentKind::SkillsTable => "Available skills",
            AttachmentKind::DefaultFlags => "Default flags and initial states",
            AttachmentKind::FlagRules => "Rules for synchronization flags",
            AttachmentKind::ActionSequence => "Action Sequence",
            AttachmentKind::Template => "Template structure",
            AttachmentKind::TreeExample => "Behavior Tree example",
            AttachmentKind::CustomNodes => "Custom node definitions",
            AttachmentKind::TaskParams => "Task parameters",
        }
    }
}

impl fmt::Display for AttachmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("enum serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

impl Stage {
    /// Attachments a bundle for this stage must carry, in prompt order.
    pub fn required(self) -> &'static [AttachmentKind] {
        use AttachmentKind::*;
        match self {
            Stage::ActionSequence => &[SkillsTable, DefaultFlags, FlagRules],
            Stage::BehaviorTree => &[ActionSequence, Template, TreeExample, CustomNodes, TaskParams],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub kind: AttachmentKind,
    pub body: String,
}

/// Everything sent to the model for one stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub stage: Stage,
    pub system_text: String,
    pub user_text: String,
    pub attachments: Vec<Attachment>,
    /// 1 for the first request, 2 after feedback.
    pub attempt: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl PromptBundle {
    pub fn attachment(&self, kind: AttachmentKind) -> Option<&str> {
        self.attachments
            .iter()
            .find(|a| a.kind == kind)
            .map(|a| a.body.as_str())
    }

    /// System message, then one user message: the request followed by each
    /// attachment under its own heading.
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut user = self.user_text.clone();
        for a in &self.attachments {
            user.push_str(&format!("\n\n## {}\n\n{}", a.kind.title(), a.body.trim_end()));
        }
        vec![
            ChatMessage {
                role: "system".into(),
                content: self.system_text.clone(),
            },
            ChatMessage {
                role: "user".into(),
                content: user,
            },
        ]
    }

    /// Whitespace-separated words across all messages.
    pub fn word_count(&self) -> u64 {
        self.messages()
            .iter()
            .map(|m| m.content.split_whitespace().count() as u64)
            .sum()
    }
}

/// Attachment bodies keyed by kind.
pub type PromptContext = BTreeMap<AttachmentKind, String>;

pub const FLAG_RULES: &str = "\
- Add a synchronization flag only when a statement of one machine must wait for a state reached by another machine.
- Name a flag <MACHINE>_<STATE>_FLG in uppercase letters, digits and underscores, leading with the machine it describes (DUMPTRUCK for dump_truck, EXCAVATOR for excavator).
- When the same state is reached more than once, append an ordinal before _FLG: EXCAVATOR_INITIAL_POSE_2_FLG is the second initial pose.
- A flag becomes true when the statement reaching that state completes.
- Declare every generated flag after the statements as `NAME: description`, stating when it is true and when it is false.
- Do not add a flag that only orders statements of a single machine, and do not add two flags for the same state.";

const SEQUENCE_SYSTEM: &str = "\
You plan work for construction machines. Turn the instruction into an Action Sequence: one statement per line, \
`<n>. <skill>(<machine>, <params>) [depends_on <condition>] [# <reasoning>]`, where a condition combines \
`FLAG==true|false` terms with `and`, `or` and parentheses. Use only the listed skills. \
Answer with the Action Sequence inside a single fenced code block.";

const TREE_SYSTEM: &str = "\
You write Behavior Trees in BehaviorTree.CPP v4 XML for construction machines. Produce one tree per machine \
from the Action Sequence, following the template structure and the custom node definitions, with parameters \
taken from the task parameters. Answer with each machine's XML inside its own fenced code block, preceded by \
the machine id.";

pub const TEMPLATE_TEXT: &str = "\
Each statement becomes one subtree under the machine's root Sequence:

ReactiveSequence
  RetryUntilSuccessful num_attempts=-1
    Sequence
      DBReader (one per flag in the precondition)
      ConditionalExpression (the precondition)
  Sequence
    primitive actions of the skill
    SetFlag (one per flag the statement's completion makes true)

A statement without a precondition keeps only the inner action Sequence. The ReactiveSequence re-checks \
the condition on every tick, so an action stops as soon as its precondition turns false.";

pub const CUSTOM_NODES: &str = "\
DBReader flag output_key: copy a global flag into the local blackboard.
ConditionalExpression expr: evaluate a condition over local copies, e.g. A_FLG==true && B_FLG==true.
SetFlag flag value: write a global flag.
MoveAlongPath path target duration: drive along a stored path.
SetJointTargets pose joints [target] duration: move the arm to stored joint angles.
DumpBed duration: tip the truck bed.
Wait duration: idle.";

/// Example tree for one gated statement.
pub fn tree_example() -> String {
    let gate = FlagName::new("EXCAVATOR_INITIAL_POSE_FLG").unwrap();
    let arrived = FlagName::new("DUMPTRUCK_AT_LOADING_SITE_FLG").unwrap();
    let root = BtNode::sequence(vec![BtNode::reactive_sequence(vec![
        BtNode::retry(
            None,
            BtNode::sequence(vec![
                BtNode::db_reader(gate.clone()),
                BtNode::condition(FlagExpr::leaf(gate, true)),
            ]),
        ),
        BtNode::sequence(vec![
            BtNode::action(PrimitiveAction::MoveAlongPath {
                path: "truck_yard__loading_site".into(),
                target: "loading_site".into(),
                duration: 14,
            }),
            BtNode::set_flag(arrived, true),
        ]),
    ])]);
    emit_tree_xml(&root.finalize())
}

pub fn render_default_flags(registry: &[FlagRegistryEntry]) -> String {
    registry
        .iter()
        .map(|e| format!("{} (initial: {}): {}", e.name, e.initial, e.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Stage-one context: skills, default flags, flag rules.
pub fn sequence_context(default_flags: &[FlagRegistryEntry]) -> PromptContext {
    PromptContext::from([
        (AttachmentKind::SkillsTable, skills_table()),
        (AttachmentKind::DefaultFlags, render_default_flags(default_flags)),
        (AttachmentKind::FlagRules, FLAG_RULES.to_string()),
    ])
}

/// Stage-two context for a generated sequence.
pub fn tree_context(sequence_text: &str, db: &TaskParamDb) -> PromptContext {
    PromptContext::from([
        (AttachmentKind::ActionSequence, sequence_text.to_string()),
        (AttachmentKind::Template, TEMPLATE_TEXT.to_string()),
        (AttachmentKind::TreeExample, tree_example()),
        (AttachmentKind::CustomNodes, CUSTOM_NODES.to_string()),
        (AttachmentKind::TaskParams, db.to_json()),
    ])
}

pub fn build_prompt(stage: Stage, instruction: &str, context: &PromptContext) -> Result<PromptBundle, PlannerError> {
    let mut attachments = Vec::new();
    for &kind in stage.required() {
        let body = context
            .get(&kind)
            .filter(|b| !b.trim().is_empty())
            .ok_or(PlannerError::MissingContext(kind))?;
        attachments.push(Attachment {
            kind,
            body: body.clone(),
        });
    }
    let (system_text, user_text) = match stage {
        Stage::ActionSequence => (SEQUENCE_SYSTEM, format!("Instruction: {}", instruction.trim())),
        Stage::BehaviorTree => (
            TREE_SYSTEM,
            format!("Generate the Behavior Trees for this instruction: {}", instruction.trim()),
        ),
    };
    Ok(PromptBundle {
        stage,
        system_text: system_text.to_string(),
        user_text,
        attachments,
        attempt: 1,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitlFeedback {
    pub stage: Stage,
    pub feedback: String,
    /// The artifact the feedback is about.
    pub artifact: String,
}

/// The bundle for a second attempt: prior artifact and feedback appended.
/// One refinement per stage.
pub fn refine(bundle: &PromptBundle, feedback: &HitlFeedback) -> Result<PromptBundle, PlannerError> {
    if bundle.attempt >= 2 {
        return Err(PlannerError::BudgetExhausted(bundle.stage));
    }
    if feedback.feedback.trim().is_empty() {
        return Err(PlannerError::EmptyFeedback);
    }
    if feedback.stage != bundle.stage {
        return Err(PlannerError::StageMismatch {
            bundle: bundle.stage,
            feedback: feedback.stage,
        });
    }
    let mut next = bundle.clone();
    next.user_text = format!(
        "{}\n\nYour previous answer was:\n```\n{}\n```\n\nRevise it according to this feedback:\n{}",
        bundle.user_text,
        feedback.artifact.trim_end(),
        feedback.feedback
    );
    next.attempt = 2;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flagcore::default_registry;

    fn ctx() -> PromptContext {
        sequence_context(&default_registry(["loading_site", "mound"]))
    }

    #[test]
    fn sequence_bundle_carries_skills_and_flags() {
        let b = build_prompt(Stage::ActionSequence, "Load the soil onto a dump truck.", &ctx()).unwrap();
        let user = &b.messages()[1].content;
        assert!(user.starts_with("Instruction: Load the soil onto a dump truck."));
        assert!(user.contains("excavate_and_release"));
        assert!(user.contains("SENSING_LOADED_FLG"));
        assert!(user.contains("SENSING_ARRIVAL_FLG"));
        assert_eq!(b.attempt, 1);
    }

    #[test]
    fn tree_stage_needs_template() {
        let mut c = tree_context("1. initial_pose(excavator)", &TaskParamDb::default());
        c.remove(&AttachmentKind::Template);
        assert_eq!(
            build_prompt(Stage::BehaviorTree, "x", &c),
            Err(PlannerError::MissingContext(AttachmentKind::Template))
        );
    }

    #[test]
    fn deterministic() {
        let a = build_prompt(Stage::ActionSequence, "Dig.", &ctx()).unwrap();
        let b = build_prompt(Stage::ActionSequence, "Dig.", &ctx()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.messages(), b.messages());
    }

    #[test]
    fn one_refinement_per_stage() {
        let b = build_prompt(Stage::ActionSequence, "Dig.", &ctx()).unwrap();
        let fb = HitlFeedback {
            stage: Stage::ActionSequence,
            feedback: "statement 2 must also wait on SENSING_ARRIVAL_FLG".into(),
            artifact: "1. initial_pose(excavator)".into(),
        };
        let r = refine(&b, &fb).unwrap();
        assert!(r.user_text.contains("statement 2 must also wait on SENSING_ARRIVAL_FLG"));
        assert!(r.user_text.contains("1. initial_pose(excavator)"));
        assert_eq!((r.stage, &r.attachments, r.attempt), (b.stage, &b.attachments, 2));
        assert_eq!(refine(&r, &fb), Err(PlannerError::BudgetExhausted(Stage::ActionSequence)));
    }

    #[test]
    fn empty_feedback_rejected() {
        let b = build_prompt(Stage::ActionSequence, "Dig.", &ctx()).unwrap();
        let fb = HitlFeedback {
            stage: Stage::ActionSequence,
            feedback: "  ".into(),
            artifact: String::new(),
        };
        assert_eq!(refine(&b, &fb), Err(PlannerError::EmptyFeedback));
    }
}
