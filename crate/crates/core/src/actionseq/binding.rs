//! Binds each generated flag to the statement whose completion sets it.
//!
//! Flag names lead with the machine they describe and then name a state,
//! optionally followed by an ordinal: `DUMP_TRUCK_1_AT_LOADING_SITE_2_FLG`
//! is the second arrival of `dump_truck_1` at `loading_site`. The machine
//! prefix is matched against the sequence's machine identifiers with
//! underscores ignored (`DUMPTRUCK` matches `dump_truck`), falling back to
//! the machine kind when exactly one machine of that kind is present.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ActionSequence, ActionStatement, Skill};
use crate::flagcore::FlagName;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum BindingIssue {
    /// No statement matches the flag name.
    Unbound { flag: FlagName },
    /// Several statements match and no ordinal picks one.
    Ambiguous {
        flag: FlagName,
        candidates: Vec<usize>,
    },
}

impl BindingIssue {
    pub fn flag(&self) -> &FlagName {
        match self {
            BindingIssue::Unbound { flag } | BindingIssue::Ambiguous { flag, .. } => flag,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlagBindings {
    /// Generated flag -> index of the statement that sets it on completion.
    pub setters: BTreeMap<FlagName, usize>,
    pub issues: Vec<BindingIssue>,
}

impl FlagBindings {
    /// Flags set on completion of statement `index`, in declaration order.
    pub fn flags_set_by<'a>(&'a self, seq: &'a ActionSequence, index: usize) -> Vec<&'a FlagName> {
        seq.generated_flags
            .iter()
            .map(|g| &g.name)
            .filter(|f| self.setters.get(*f) == Some(&index))
            .collect()
    }
}

fn compact(s: &str) -> String {
    s.chars()
        .filter(|c| *c != '_')
        .map(|c| c.to_ascii_uppercase())
        .collect()
}

pub fn bind_flags(seq: &ActionSequence) -> FlagBindings {
    let mut out = FlagBindings::default();
    for g in &seq.generated_flags {
        match bind_one(seq, &g.name) {
            Ok(idx) => {
                out.setters.insert(g.name.clone(), idx);
            }
            Err(issue) => out.issues.push(issue),
        }
    }
    out
}

fn bind_one(seq: &ActionSequence, flag: &FlagName) -> Result<usize, BindingIssue> {
    let unbound = || BindingIssue::Unbound { flag: flag.clone() };
    let tokens: Vec<&str> = flag.stem().split('_').collect();
    let (machine, consumed) = match_machine(seq, &tokens).ok_or_else(unbound)?;
    let rest = &tokens[consumed..];
    if rest.is_empty() {
        return Err(unbound());
    }

    let own: Vec<&ActionStatement> = seq
        .statements
        .iter()
        .filter(|s| s.machine == machine)
        .collect();

    let ordinal = match rest {
        [head @ .., last] if !head.is_empty() && last.chars().all(|c| c.is_ascii_digit()) => {
            last.parse::<usize>().ok().map(|n| (n, head))
        }
        _ => None,
    };

    let pick = |state: &str| -> Vec<usize> {
        own.iter()
            .filter(|s| state_matches(s, state))
            .map(|s| s.index)
            .collect()
    };

    if let Some((n, head)) = ordinal {
        let candidates = pick(&head.concat());
        if !candidates.is_empty() {
            return candidates.get(n.wrapping_sub(1)).copied().ok_or_else(unbound);
        }
    }
    let candidates = pick(&rest.concat());
    match candidates.as_slice() {
        [] => Err(unbound()),
        [one] => Ok(*one),
        _ => Err(BindingIssue::Ambiguous {
            flag: flag.clone(),
            candidates,
        }),
    }
}

/// Finds the machine a flag name starts with. Returns the machine id and the
/// number of name tokens its prefix consumed.
fn match_machine<'a>(seq: &'a ActionSequence, tokens: &[&str]) -> Option<(&'a str, usize)> {
    let machines = seq.machines();
    let mut best: Option<(&str, usize)> = None;
    let mut tie = false;
    for m in &machines {
        let want = compact(m);
        let mut prefix = String::new();
        for (i, t) in tokens.iter().enumerate() {
            prefix.push_str(t);
            if prefix.len() > want.len() {
                break;
            }
            if prefix == want {
                let used = i + 1;
                match best {
                    Some((_, n)) if n > used => {}
                    Some((_, n)) if n == used => tie = true,
                    _ => {
                        best = Some((m, used));
                        tie = false;
                    }
                }
                break;
            }
        }
    }
    if best.is_some() {
        return if tie { None } else { best };
    }

    // Kind fallback: `EXCAVATOR_...` when the excavator is `excavator_1`.
    for kind in ["EXCAVATOR", "DUMPTRUCK"] {
        let mut prefix = String::new();
        for (i, t) in tokens.iter().enumerate() {
            prefix.push_str(t);
            if prefix.len() > kind.len() {
                break;
            }
            if prefix == kind {
                let of_kind: Vec<&str> = machines
                    .iter()
                    .copied()
                    .filter(|m| compact(m).starts_with(kind))
                    .collect();
                return match of_kind.as_slice() {
                    [one] => Some((one, i + 1)),
                    _ => None,
                };
            }
        }
    }
    None
}

fn contains_any(state: &str, words: &[&str]) -> bool {
    words.iter().any(|w| state.contains(w))
}

fn state_matches(stmt: &ActionStatement, state: &str) -> bool {
    match stmt.skill {
        Skill::InitialPose => contains_any(state, &["INITIALPOSE", "INITPOSE", "READY"]),
        Skill::Move => stmt
            .params
            .first()
            .is_some_and(|dest| state.contains(&compact(dest))),
        Skill::ExcavateAndRelease => {
            contains_any(state, &["EXCAVAT", "RELEAS", "LOADED", "LOADCOMPLETE", "LOADDONE"])
        }
        Skill::Level => state.contains("LEVEL"),
        Skill::Gather => state.contains("GATHER"),
        Skill::DumpSoil => contains_any(
            state,
            &["DUMPED", "DUMPCOMPLETE", "DUMPDONE", "SOILDUMP", "UNLOADED"],
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actionseq::{parse, LOAD_SOIL_EXAMPLE};

    fn f(n: &str) -> FlagName {
        FlagName::new(n).unwrap()
    }

    #[test]
    fn figure_flags_bind_to_their_statements() {
        let seq = parse(LOAD_SOIL_EXAMPLE).unwrap();
        let b = bind_flags(&seq);
        assert!(b.issues.is_empty(), "{:?}", b.issues);
        assert_eq!(b.setters[&f("EXCAVATOR_INITIAL_POSE_FLG")], 1);
        assert_eq!(b.setters[&f("DUMPTRUCK_AT_LOADING_SITE_FLG")], 2);
        assert_eq!(b.flags_set_by(&seq, 3), Vec::<&FlagName>::new());
    }

    #[test]
    fn ordinals_pick_among_repeats() {
        let text = "\
1. initial_pose(excavator)
2. move(dump_truck, loading_site) depends_on EXCAVATOR_INITIAL_POSE_1_FLG==true
3. excavate_and_release(excavator, mound, dump_truck) depends_on DUMP_TRUCK_AT_LOADING_SITE_1_FLG==true
4. initial_pose(excavator)
5. move(dump_truck, dumping_site) depends_on EXCAVATOR_INITIAL_POSE_2_FLG==true

EXCAVATOR_INITIAL_POSE_1_FLG: first pose.
DUMP_TRUCK_AT_LOADING_SITE_1_FLG: arrived.
EXCAVATOR_INITIAL_POSE_2_FLG: second pose.
";
        let seq = parse(text).unwrap();
        let b = bind_flags(&seq);
        assert!(b.issues.is_empty(), "{:?}", b.issues);
        assert_eq!(b.setters[&f("EXCAVATOR_INITIAL_POSE_1_FLG")], 1);
        assert_eq!(b.setters[&f("EXCAVATOR_INITIAL_POSE_2_FLG")], 4);
        assert_eq!(b.setters[&f("DUMP_TRUCK_AT_LOADING_SITE_1_FLG")], 2);
    }

    #[test]
    fn ambiguous_without_ordinal() {
        let text = "\
1. initial_pose(excavator)
2. initial_pose(excavator)

EXCAVATOR_INITIAL_POSE_FLG: pose.
";
        let b = bind_flags(&parse(text).unwrap());
        assert_eq!(
            b.issues,
            [BindingIssue::Ambiguous {
                flag: f("EXCAVATOR_INITIAL_POSE_FLG"),
                candidates: vec![1, 2]
            }]
        );
    }

    #[test]
    fn out_of_range_ordinal_is_unbound() {
        let text = "1. initial_pose(excavator)\n\nEXCAVATOR_INITIAL_POSE_3_FLG: pose.\n";
        let b = bind_flags(&parse(text).unwrap());
        assert!(matches!(b.issues[..], [BindingIssue::Unbound { .. }]));
    }

    #[test]
    fn numbered_machines_prefer_longest_prefix() {
        let text = "\
1. move(dump_truck_1, loading_site)
2. move(dump_truck_2, loading_site)

DUMP_TRUCK_2_AT_LOADING_SITE_FLG: arrived.
DUMPTRUCK1_AT_LOADING_SITE_FLG: arrived.
";
        let b = bind_flags(&parse(text).unwrap());
        assert!(b.issues.is_empty(), "{:?}", b.issues);
        assert_eq!(b.setters[&f("DUMP_TRUCK_2_AT_LOADING_SITE_FLG")], 2);
        assert_eq!(b.setters[&f("DUMPTRUCK1_AT_LOADING_SITE_FLG")], 1);
    }

    #[test]
    fn kind_fallback_needs_a_unique_machine() {
        let one = "1. move(dump_truck_7, loading_site)\n\nDUMPTRUCK_AT_LOADING_SITE_FLG: x.\n";
        assert_eq!(bind_flags(&parse(one).unwrap()).setters.len(), 1);
        let two = "1. move(dump_truck_1, loading_site)\n2. move(dump_truck_2, loading_site)\n\nDUMPTRUCK_AT_LOADING_SITE_FLG: x.\n";
        assert!(matches!(
            bind_flags(&parse(two).unwrap()).issues[..],
            [BindingIssue::Unbound { .. }]
        ));
    }

    #[test]
    fn digits_in_place_names_are_not_ordinals() {
        let text = "1. move(excavator, point_2)\n\nEXCAVATOR_AT_POINT_2_FLG: there.\n";
        let b = bind_flags(&parse(text).unwrap());
        assert_eq!(b.setters[&f("EXCAVATOR_AT_POINT_2_FLG")], 1);
    }
}
