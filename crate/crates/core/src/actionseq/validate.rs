use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::binding::{bind_flags, BindingIssue};
use super::{ActionSequence, MachineKind, ParamKind};
use crate::flagcore::{FlagName, FlagRegistryEntry};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Statement(usize),
    Flag(FlagName),
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Statement(i) => write!(f, "statement {i}"),
            Subject::Flag(n) => write!(f, "flag {n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IssueCode {
    SkillKindMismatch,
    UnknownMachine,
    UnknownPlace,
    ParamKindMismatch,
    UndeclaredFlag,
    DuplicateFlag,
    UnboundFlag,
    AmbiguousFlag,
    /// Warning: the awaited flag is only set by this or a later statement of
    /// the same machine.
    NeverSettable,
    /// Warning: declared but no precondition reads it.
    UnusedFlag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub subject: Subject,
    pub code: IssueCode,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}: {}", self.subject, self.code, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn has(&self, code: IssueCode) -> bool {
        self.errors.iter().chain(&self.warnings).any(|i| i.code == code)
    }

    fn error(&mut self, subject: Subject, code: IssueCode, message: String) {
        self.errors.push(Issue {
            subject,
            code,
            message,
        });
    }

    fn warn(&mut self, subject: Subject, code: IssueCode, message: String) {
        self.warnings.push(Issue {
            subject,
            code,
            message,
        });
    }
}

/// Checks a sequence against the site's machines, places and default flags.
pub fn validate(
    seq: &ActionSequence,
    machines: &BTreeMap<String, MachineKind>,
    places: &BTreeSet<String>,
    registry: &[FlagRegistryEntry],
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let defaults: BTreeSet<&FlagName> = registry.iter().map(|e| &e.name).collect();

    let mut declared: BTreeSet<&FlagName> = BTreeSet::new();
    for g in &seq.generated_flags {
        let subject = Subject::Flag(g.name.clone());
        if !declared.insert(&g.name) {
            report.error(subject, IssueCode::DuplicateFlag, "declared more than once".into());
        } else if defaults.contains(&g.name) {
            report.error(
                subject,
                IssueCode::DuplicateFlag,
                "shadows a default sensing flag".into(),
            );
        } else if g.description.trim().is_empty() {
            report.error(subject, IssueCode::UndeclaredFlag, "missing description".into());
        }
    }

    for s in &seq.statements {
        let subject = || Subject::Statement(s.index);
        let sig = s.skill.signature();
        match machines.get(&s.machine) {
            None => report.error(
                subject(),
                IssueCode::UnknownMachine,
                format!("unknown machine `{}`", s.machine),
            ),
            Some(kind) if !s.skill.allowed_for(*kind) => report.error(
                subject(),
                IssueCode::SkillKindMismatch,
                format!("{} is not a {} skill", s.skill, kind.label()),
            ),
            Some(_) => {}
        }
        for (spec, arg) in sig.params[1..].iter().zip(&s.params) {
            debug_assert_eq!(spec.kind, ParamKind::Place);
            if places.contains(arg) {
                continue;
            }
            match machines.get(arg) {
                Some(MachineKind::DumpTruck) if spec.accepts_truck => {}
                Some(_) => report.error(
                    subject(),
                    IssueCode::ParamKindMismatch,
                    format!("{} `{}` must be a place", spec.name, arg),
                ),
                None => report.error(
                    subject(),
                    IssueCode::UnknownPlace,
                    format!("unknown place `{arg}` for {}", spec.name),
                ),
            }
        }
        for flag in s.precondition.flags() {
            if !declared.contains(flag) && !defaults.contains(flag) {
                report.error(
                    subject(),
                    IssueCode::UndeclaredFlag,
                    format!("precondition reads undeclared flag {flag}"),
                );
            }
        }
    }

    let bindings = bind_flags(seq);
    for issue in &bindings.issues {
        let subject = Subject::Flag(issue.flag().clone());
        match issue {
            BindingIssue::Unbound { .. } => report.error(
                subject,
                IssueCode::UnboundFlag,
                "no statement's machine and skill match the flag name".into(),
            ),
            BindingIssue::Ambiguous { candidates, .. } => report.error(
                subject,
                IssueCode::AmbiguousFlag,
                format!("matches statements {candidates:?}; add an ordinal suffix"),
            ),
        }
    }

    for s in &seq.statements {
        for flag in s.precondition.flags() {
            let Some(&setter) = bindings.setters.get(flag) else {
                continue;
            };
            let setter_machine = &seq.statements[setter - 1].machine;
            if setter >= s.index && setter_machine == &s.machine {
                report.warn(
                    Subject::Statement(s.index),
                    IssueCode::NeverSettable,
                    format!("{flag} is only set by statement {setter} of the same machine"),
                );
            }
        }
    }
    for g in &seq.generated_flags {
        if seq.consumers(&g.name).is_empty() {
            report.warn(
                Subject::Flag(g.name.clone()),
                IssueCode::UnusedFlag,
                "no precondition reads this flag".into(),
            );
        }
    }
    report
}
