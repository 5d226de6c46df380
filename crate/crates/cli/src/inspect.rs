//! Human-readable views of sequences, trees and scenarios.

use std::fmt::Write as _;

use sitebt::actionseq::{analyze_flags, ActionSequence, Dialect};
use sitebt::btree::{count_nodes, BtNode, NodeKind};
use sitebt::scenario::Scenario;

pub fn sequence(seq: &ActionSequence) -> String {
    let mut out = String::new();
    for machine in seq.machines() {
        let mine: Vec<String> = seq
            .statements
            .iter()
            .filter(|s| s.machine == machine)
            .map(|s| s.to_line())
            .collect();
        let _ = writeln!(out, "{machine} ({} statements)", mine.len());
        for line in mine {
            let _ = writeln!(out, "  {line}");
        }
    }
    if !seq.generated_flags.is_empty() {
        let _ = writeln!(out, "generated flags");
        for f in &seq.generated_flags {
            let consumers: Vec<String> = seq.consumers(&f.name).iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "  {} read by [{}]: {}", f.name, consumers.join(", "), f.description);
        }
    }
    match analyze_flags(seq) {
        Ok(a) => {
            let _ = writeln!(out, "nrf {}", a.nrf);
            for r in &a.redundant {
                let _ = writeln!(out, "  redundant {} ({:?})", r.flag, r.reason);
            }
        }
        Err(e) => {
            let _ = writeln!(out, "flag analysis unavailable: {e}");
        }
    }
    out
}

fn label(node: &BtNode) -> String {
    match &node.kind {
        NodeKind::RetryUntilSuccessful { max_attempts } => match max_attempts {
            Some(n) => format!("RetryUntilSuccessful x{n}"),
            None => "RetryUntilSuccessful forever".into(),
        },
        NodeKind::DbReader { flag, .. } => format!("DBReader {flag}"),
        NodeKind::ConditionalExpression { expr } => format!("Condition {}", expr.render(Dialect::Script)),
        NodeKind::Action { action } => format!("{action} [{} ticks]", action.duration()),
        NodeKind::SetFlag { flag, value } => format!("SetFlag {flag}={value}"),
        other => other.tag().to_string(),
    }
}

pub fn tree(root: &BtNode) -> String {
    fn walk(n: &BtNode, depth: usize, out: &mut String) {
        let _ = writeln!(out, "{:>4} {}{}", n.id.to_string(), "  ".repeat(depth), label(n));
        for c in &n.children {
            walk(c, depth + 1, out);
        }
    }
    let mut out = String::new();
    walk(root, 0, &mut out);
    let _ = writeln!(out, "{} nodes", count_nodes(root));
    out
}

pub fn scenario(s: &Scenario) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario {} ({:?}, {:?})", s.id, s.category, s.origin);
    let _ = writeln!(out, "  {}", s.instruction);
    let _ = writeln!(out, "machines");
    for m in &s.site.machines {
        let _ = writeln!(out, "  {} {:?} at {}", m.id, m.kind, m.place);
    }
    let _ = writeln!(out, "places");
    for p in &s.site.places {
        let _ = writeln!(out, "  {} slots {} soil {}", p.name, p.slots, p.soil);
    }
    let _ = writeln!(out, "goal");
    for g in &s.goal {
        let _ = writeln!(out, "  {}", serde_json::to_string(g).unwrap_or_default());
    }
    out
}
