//! The Action Sequence plan DSL.
//!
//! A sequence is an ordered list of skill calls, one per line, each with an
//! optional `depends_on` precondition and `#` reasoning comment, followed by
//! declarations of the synchronization flags the plan introduces:
//!
//! ```text
//! 1. initial_pose(excavator) # Return excavator to initial pose.
//! 2. move(dump_truck, loading_site) depends_on EXCAVATOR_INITIAL_POSE_FLG==true
//!
//! EXCAVATOR_INITIAL_POSE_FLG: True when the excavator is in its initial pose; False otherwise.
//! ```

mod analysis;
mod binding;
mod expr;
mod parser;
mod skills;
mod validate;

pub use analysis::{analyze_flags, AnalysisError, FlagAnalysis, RedundancyReason, RedundantFlag};
pub use binding::{bind_flags, BindingIssue, FlagBindings};
pub use expr::{eval_expr, Dialect, ExprError, FlagExpr};
pub use parser::{parse, ParseError};
pub use skills::{skills_table, MachineKind, ParamKind, ParamSpec, Skill, SkillSignature, SKILLS};
pub use validate::{validate, Issue, IssueCode, Subject, ValidationReport};

use serde::{Deserialize, Serialize};

use crate::flagcore::FlagName;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionStatement {
    /// 1-based position in the sequence.
    pub index: usize,
    pub skill: Skill,
    pub machine: String,
    /// Arguments after the machine, in signature order.
    pub params: Vec<String>,
    pub precondition: FlagExpr,
    #[serde(default)]
    pub reasoning: String,
}

impl ActionStatement {
    pub fn new(index: usize, skill: Skill, machine: &str, params: &[&str]) -> Self {
        Self {
            index,
            skill,
            machine: machine.to_string(),
            params: params.iter().map(|s| s.to_string()).collect(),
            precondition: FlagExpr::always(),
            reasoning: String::new(),
        }
    }

    pub fn depends_on(mut self, expr: FlagExpr) -> Self {
        self.precondition = expr;
        self
    }

    pub fn because(mut self, reasoning: impl Into<String>) -> Self {
        self.reasoning = reasoning.into();
        self
    }

    /// The canonical single-line DSL form.
    pub fn to_line(&self) -> String {
        let mut args = vec![self.machine.as_str()];
        args.extend(self.params.iter().map(String::as_str));
        let mut line = format!("{}. {}({})", self.index, self.skill, args.join(", "));
        if !self.precondition.is_always() {
            line.push_str(" depends_on ");
            line.push_str(&self.precondition.render(Dialect::Plan));
        }
        if !self.reasoning.is_empty() {
            line.push_str(" # ");
            line.push_str(&self.reasoning);
        }
        line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedFlag {
    pub name: FlagName,
    pub description: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSequence {
    pub statements: Vec<ActionStatement>,
    pub generated_flags: Vec<GeneratedFlag>,
}

impl ActionSequence {
    pub fn statement(&self, index: usize) -> Option<&ActionStatement> {
        index
            .checked_sub(1)
            .and_then(|i| self.statements.get(i))
            .filter(|s| s.index == index)
    }

    /// Machines in order of first appearance.
    pub fn machines(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.statements {
            if !out.contains(&s.machine.as_str()) {
                out.push(&s.machine);
            }
        }
        out
    }

    pub fn is_generated(&self, flag: &FlagName) -> bool {
        self.generated_flags.iter().any(|g| &g.name == flag)
    }

    /// Statements whose precondition mentions `flag`.
    pub fn consumers(&self, flag: &FlagName) -> Vec<usize> {
        self.statements
            .iter()
            .filter(|s| s.precondition.mentions(flag))
            .map(|s| s.index)
            .collect()
    }

    pub fn push(&mut self, mut stmt: ActionStatement) -> usize {
        stmt.index = self.statements.len() + 1;
        self.statements.push(stmt);
        self.statements.len()
    }

    pub fn declare(&mut self, name: FlagName, description: impl Into<String>) {
        self.generated_flags.push(GeneratedFlag {
            name,
            description: description.into(),
        });
    }
}

/// Canonical DSL text; `parse(&serialize(s)) == s` for every well-formed `s`.
pub fn serialize(seq: &ActionSequence) -> String {
    let mut out = String::new();
    for s in &seq.statements {
        out.push_str(&s.to_line());
        out.push('\n');
    }
    if !seq.generated_flags.is_empty() {
        if !seq.statements.is_empty() {
            out.push('\n');
        }
        for g in &seq.generated_flags {
            out.push_str(&format!("{}: {}\n", g.name, g.description));
        }
    }
    out
}

/// The sequence shown for the instruction "Load the soil onto a dump truck."
pub const LOAD_SOIL_EXAMPLE: &str = include_str!("../../data/load_soil_onto_dump_truck.aseq");
