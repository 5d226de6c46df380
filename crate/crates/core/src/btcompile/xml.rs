use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};
use thiserror::Error;

use super::CompiledPlan;
use crate::actionseq::{Dialect, FlagExpr};
use crate::btree::{BtNode, NodeKind, PrimitiveAction};
use crate::flagcore::FlagName;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XmlError {
    #[error("xml syntax: {0}")]
    XmlSyntax(String),
    #[error("unknown tag <{0}>")]
    UnknownTag(String),
    #[error("<{tag}> attribute `{attr}`: {reason}")]
    BadAttribute {
        tag: String,
        attr: String,
        reason: String,
    },
}

/// One document per machine that has a tree.
pub fn emit_xml(plan: &CompiledPlan) -> BTreeMap<String, String> {
    plan.trees
        .iter()
        .map(|(m, root)| (m.clone(), emit_tree_xml(root)))
        .collect()
}

pub fn emit_tree_xml(root: &BtNode) -> String {
    let mut out = String::new();
    out.push_str("<root BTCPP_format=\"4\" main_tree_to_execute=\"MainTree\">\n");
    out.push_str("  <BehaviorTree ID=\"MainTree\">\n");
    emit_node(root, 2, &mut out);
    out.push_str("  </BehaviorTree>\n</root>\n");
    out
}

fn attributes(kind: &NodeKind) -> Vec<(&'static str, String)> {
    match kind {
        NodeKind::Sequence | NodeKind::ReactiveSequence | NodeKind::Fallback => vec![],
        NodeKind::RetryUntilSuccessful { max_attempts } => vec![(
            "num_attempts",
            max_attempts.map_or("-1".to_string(), |n| n.to_string()),
        )],
        NodeKind::DbReader { flag, local_key } => vec![
            ("flag", flag.to_string()),
            ("output_key", local_key.to_string()),
        ],
        NodeKind::ConditionalExpression { expr } => vec![("expr", expr.render(Dialect::Script))],
        NodeKind::SetFlag { flag, value } => {
            vec![("flag", flag.to_string()), ("value", value.to_string())]
        }
        NodeKind::Action { action } => match action {
            PrimitiveAction::MoveAlongPath {
                path,
                target,
                duration,
            } => vec![
                ("path", path.clone()),
                ("target", target.clone()),
                ("duration", duration.to_string()),
            ],
            PrimitiveAction::SetJointTargets {
                pose,
                joints,
                target,
                duration,
            } => {
                let joints = joints
                    .iter()
                    .map(f64::to_string)
                    .collect::<Vec<_>>()
                    .join(",");
                let mut v = vec![("pose", pose.clone()), ("joints", joints)];
                if let Some(t) = target {
                    v.push(("target", t.clone()));
                }
                v.push(("duration", duration.to_string()));
                v
            }
            PrimitiveAction::DumpBed { duration } | PrimitiveAction::Wait { duration } => {
                vec![("duration", duration.to_string())]
            }
        },
    }
}

fn emit_node(node: &BtNode, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    let tag = node.kind.tag();
    let _ = write!(out, "{pad}<{tag}");
    for (k, v) in attributes(&node.kind) {
        let _ = write!(out, " {k}=\"{}\"", escape(v.as_str()));
    }
    if node.children.is_empty() {
        out.push_str("/>\n");
        return;
    }
    out.push_str(">\n");
    for c in &node.children {
        emit_node(c, depth + 1, out);
    }
    let _ = writeln!(out, "{pad}</{tag}>");
}

/// Reads a document in the dialect [`emit_tree_xml`] writes and returns the
/// main tree with ids assigned.
pub fn parse_xml(doc: &str) -> Result<BtNode, XmlError> {
    let mut reader = Reader::from_str(doc);
    reader.config_mut().trim_text(true);
    let syntax = |e: &dyn std::fmt::Display| XmlError::XmlSyntax(e.to_string());

    let mut main: Option<String> = None;
    let mut in_root = false;
    let mut tree_id: Option<String> = None;
    let mut trees: BTreeMap<String, BtNode> = BTreeMap::new();
    let mut current: Option<BtNode> = None;
    let mut stack: Vec<BtNode> = Vec::new();

    loop {
        let event = reader.read_event().map_err(|e| syntax(&e))?;
        let (start, empty) = match &event {
            Event::Start(e) => (Some(e), false),
            Event::Empty(e) => (Some(e), true),
            _ => (None, false),
        };
        if let Some(e) = start {
            let name = tag_name(e)?;
            let attrs = read_attrs(e, &name)?;
            match name.as_str() {
                "root" => {
                    if in_root || tree_id.is_some() {
                        return Err(XmlError::XmlSyntax("nested <root>".into()));
                    }
                    in_root = !empty;
                    main = attrs.get("main_tree_to_execute").cloned();
                }
                "BehaviorTree" => {
                    if !in_root || tree_id.is_some() {
                        return Err(XmlError::XmlSyntax("<BehaviorTree> outside <root>".into()));
                    }
                    let id = attrs.get("ID").cloned().unwrap_or_default();
                    if empty {
                        return Err(XmlError::XmlSyntax(format!("tree {id} is empty")));
                    }
                    tree_id = Some(id);
                }
                _ => {
                    if tree_id.is_none() {
                        return Err(XmlError::XmlSyntax(format!("<{name}> outside <BehaviorTree>")));
                    }
                    let node = BtNode::leaf(node_kind(&name, &attrs)?);
                    if empty {
                        attach(node, &mut stack, &mut current)?;
                    } else {
                        stack.push(node);
                    }
                }
            }
            continue;
        }
        match event {
            Event::End(e) => match e.name().as_ref() {
                "root" => in_root = false,
                "BehaviorTree" => {
                    let id = tree_id.take().unwrap_or_default();
                    let root = current
                        .take()
                        .ok_or_else(|| XmlError::XmlSyntax(format!("tree {id} is empty")))?;
                    trees.insert(id, root);
                }
                _ => {
                    let node = stack
                        .pop()
                        .ok_or_else(|| XmlError::XmlSyntax("unbalanced end tag".into()))?;
                    attach(node, &mut stack, &mut current)?;
                }
            },
            Event::Text(t) => {
                let raw = t.as_ref().to_string();
                if !raw.trim().is_empty() {
                    return Err(XmlError::XmlSyntax(format!("unexpected text `{}`", raw.trim())));
                }
            }
            Event::CData(_) | Event::GeneralRef(_) => {
                return Err(XmlError::XmlSyntax("unexpected character data".into()))
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if in_root || tree_id.is_some() || !stack.is_empty() {
        return Err(XmlError::XmlSyntax("unexpected end of document".into()));
    }
    let root = match main {
        Some(id) => trees.remove(&id),
        None if trees.len() == 1 => trees.into_values().next(),
        None => None,
    };
    root.map(BtNode::finalize)
        .ok_or_else(|| XmlError::XmlSyntax("no main tree".into()))
}

fn attach(node: BtNode, stack: &mut [BtNode], current: &mut Option<BtNode>) -> Result<(), XmlError> {
    if node.kind.is_composite() && node.children.is_empty() {
        return Err(XmlError::XmlSyntax(format!("<{}> has no children", node.kind.tag())));
    }
    if !node.kind.is_composite() && !node.children.is_empty() {
        return Err(XmlError::XmlSyntax(format!("<{}> cannot have children", node.kind.tag())));
    }
    match stack.last_mut() {
        Some(parent) => parent.children.push(node),
        None if current.is_none() => *current = Some(node),
        None => return Err(XmlError::XmlSyntax("tree has more than one root node".into())),
    }
    Ok(())
}

fn tag_name(e: &BytesStart) -> Result<String, XmlError> {
    Ok(e.name().as_ref().to_string())
}

fn read_attrs(e: &BytesStart, tag: &str) -> Result<BTreeMap<String, String>, XmlError> {
    let mut out = BTreeMap::new();
    for a in e.attributes() {
        let a = a.map_err(|err| XmlError::XmlSyntax(err.to_string()))?;
        let key = a.key.as_ref().to_string();
        let value = a
            .normalized_value(XmlVersion::Implicit1_0)
            .map_err(|err| XmlError::BadAttribute {
                tag: tag.into(),
                attr: key.clone(),
                reason: err.to_string(),
            })?
            .into_owned();
        out.insert(key, value);
    }
    Ok(out)
}

struct Attrs<'a> {
    tag: &'a str,
    map: &'a BTreeMap<String, String>,
}

impl Attrs<'_> {
    fn bad(&self, attr: &str, reason: impl Into<String>) -> XmlError {
        XmlError::BadAttribute {
            tag: self.tag.into(),
            attr: attr.into(),
            reason: reason.into(),
        }
    }

    fn get(&self, attr: &str) -> Result<&str, XmlError> {
        self.map
            .get(attr)
            .map(String::as_str)
            .ok_or_else(|| self.bad(attr, "missing"))
    }

    fn num<T: FromStr>(&self, attr: &str) -> Result<T, XmlError> {
        let v = self.get(attr)?;
        v.parse().map_err(|_| self.bad(attr, format!("`{v}` is not a number")))
    }

    fn duration(&self) -> Result<u32, XmlError> {
        let d: u32 = self.num("duration")?;
        if d == 0 {
            return Err(self.bad("duration", "must be at least 1"));
        }
        Ok(d)
    }

    fn flag(&self, attr: &str) -> Result<FlagName, XmlError> {
        let v = self.get(attr)?;
        FlagName::new(v).map_err(|e| self.bad(attr, e.to_string()))
    }
}

fn node_kind(tag: &str, map: &BTreeMap<String, String>) -> Result<NodeKind, XmlError> {
    let a = Attrs { tag, map };
    Ok(match tag {
        "Sequence" => NodeKind::Sequence,
        "ReactiveSequence" => NodeKind::ReactiveSequence,
        "Fallback" => NodeKind::Fallback,
        "RetryUntilSuccessful" => {
            let n: i64 = a.num("num_attempts")?;
            let max_attempts = match n {
                -1 => None,
                n if n >= 1 && n <= u32::MAX as i64 => Some(n as u32),
                _ => return Err(a.bad("num_attempts", "must be -1 or positive")),
            };
            NodeKind::RetryUntilSuccessful { max_attempts }
        }
        "DBReader" => NodeKind::DbReader {
            flag: a.flag("flag")?,
            local_key: a.flag("output_key")?,
        },
        "ConditionalExpression" => {
            let text = a.get("expr")?;
            let expr = FlagExpr::parse(text, Dialect::Script).map_err(|e| a.bad("expr", e.to_string()))?;
            NodeKind::ConditionalExpression { expr }
        }
        "SetFlag" => NodeKind::SetFlag {
            flag: a.flag("flag")?,
            value: match a.get("value")? {
                "true" => true,
                "false" => false,
                other => return Err(a.bad("value", format!("`{other}` is not a boolean"))),
            },
        },
        "MoveAlongPath" => NodeKind::Action {
            action: PrimitiveAction::MoveAlongPath {
                path: a.get("path")?.to_string(),
                target: a.get("target")?.to_string(),
                duration: a.duration()?,
            },
        },
        "SetJointTargets" => {
            let raw = a.get("joints")?;
            let joints = if raw.trim().is_empty() {
                Vec::new()
            } else {
                raw.split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| a.bad("joints", format!("`{raw}` is not a list of angles")))?
            };
            NodeKind::Action {
                action: PrimitiveAction::SetJointTargets {
                    pose: a.get("pose")?.to_string(),
                    joints,
                    target: map.get("target").cloned(),
                    duration: a.duration()?,
                },
            }
        }
        "DumpBed" => NodeKind::Action {
            action: PrimitiveAction::DumpBed { duration: a.duration()? },
        },
        "Wait" => NodeKind::Action {
            action: PrimitiveAction::Wait { duration: a.duration()? },
        },
        other => return Err(XmlError::UnknownTag(other.to_string())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actionseq::{parse, LOAD_SOIL_EXAMPLE};
    use crate::btcompile::{compile, TaskParamDb};

    fn figure() -> CompiledPlan {
        compile(&parse(LOAD_SOIL_EXAMPLE).unwrap(), &TaskParamDb::example()).unwrap()
    }

    #[test]
    fn header_and_escaping() {
        let plan = figure();
        let doc = &plan.xml["excavator"];
        assert!(doc.starts_with(
            "<root BTCPP_format=\"4\" main_tree_to_execute=\"MainTree\">\n  <BehaviorTree ID=\"MainTree\">\n"
        ));
        assert!(doc.contains(
            "<ConditionalExpression expr=\"DUMPTRUCK_AT_LOADING_SITE_FLG==true &amp;&amp; SENSING_ARRIVAL_FLG==true\"/>"
        ));
        assert!(doc.contains("<RetryUntilSuccessful num_attempts=\"-1\">"));
    }

    #[test]
    fn truck_document_reads_one_flag() {
        let doc = &figure().xml["dump_truck"];
        assert_eq!(doc.matches("<DBReader").count(), 1);
        assert!(doc.contains("<DBReader flag=\"EXCAVATOR_INITIAL_POSE_FLG\" output_key=\"EXCAVATOR_INITIAL_POSE_FLG\"/>"));
    }

    #[test]
    fn emission_is_deterministic() {
        let plan = figure();
        assert_eq!(emit_xml(&plan), emit_xml(&plan));
        assert_eq!(emit_xml(&plan), plan.xml);
    }

    #[test]
    fn round_trip() {
        let plan = figure();
        for (m, doc) in &plan.xml {
            assert_eq!(&parse_xml(doc).unwrap(), &plan.trees[m], "{m}");
        }
    }

    #[test]
    fn rejects_unknown_tags_and_bad_attributes() {
        let wrap = |body: &str| {
            format!("<root BTCPP_format=\"4\" main_tree_to_execute=\"MainTree\"><BehaviorTree ID=\"MainTree\">{body}</BehaviorTree></root>")
        };
        assert_eq!(
            parse_xml(&wrap("<Teleport/>")).unwrap_err(),
            XmlError::UnknownTag("Teleport".into())
        );
        assert!(matches!(
            parse_xml(&wrap("<RetryUntilSuccessful><Wait duration=\"1\"/></RetryUntilSuccessful>")),
            Err(XmlError::BadAttribute { attr, .. }) if attr == "num_attempts"
        ));
        assert!(matches!(
            parse_xml(&wrap("<Wait duration=\"0\"/>")),
            Err(XmlError::BadAttribute { .. })
        ));
        assert!(matches!(
            parse_xml(&wrap("<SetFlag flag=\"lower_FLG\" value=\"true\"/>")),
            Err(XmlError::BadAttribute { .. })
        ));
        assert!(matches!(parse_xml("<root><BehaviorTree>"), Err(XmlError::XmlSyntax(_))));
        assert!(matches!(parse_xml(&wrap("<Sequence></Fallback>")), Err(XmlError::XmlSyntax(_))));
        assert!(matches!(parse_xml(&wrap("<Sequence/>")), Err(XmlError::XmlSyntax(_))));
        assert_eq!(
            parse_xml(&wrap("<Wait duration=\"3\"/>")).unwrap(),
            BtNode::action(PrimitiveAction::Wait { duration: 3 })
        );
    }
}
