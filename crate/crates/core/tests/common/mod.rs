//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Barrier;
use std::thread;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use sitebt::actionseq::{ActionSequence, ActionStatement, FlagExpr, MachineKind, Skill};
use sitebt::flagcore::{FlagName, FlagRegistryEntry, FlagSource, GlobalBlackboard};
use sitebt::planner::flag_prefix;

/// Machines and places of catalog scenario 9.
pub const MACHINES: [(&str, MachineKind); 3] = [
    ("excavator", MachineKind::Excavator),
    ("dump_truck_1", MachineKind::DumpTruck),
    ("dump_truck_2", MachineKind::DumpTruck),
];
pub const PLACES: [&str; 6] = [
    "mound",
    "loading_site",
    "temporary_site",
    "dumping_site",
    "truck_yard",
    "parking_area",
];
pub const SENSING: [&str; 2] = ["SENSING_ARRIVAL_FLG", "SENSING_LOADED_FLG"];

pub fn flag(name: &str) -> FlagName {
    FlagName::new(name).unwrap()
}

#[derive(Debug, Clone)]
pub struct StmtSpec {
    machine: usize,
    choice: usize,
    place: usize,
    target: usize,
    /// 0: no flag, 1: one flag, 2: the flag plus a synonym.
    declare: u8,
    reasoning: String,
}

fn arb_spec() -> impl Strategy<Value = StmtSpec> {
    (
        0..MACHINES.len(),
        0..4usize,
        0..PLACES.len(),
        0..PLACES.len() + 2,
        0..3u8,
        prop_oneof![Just(String::new()), "[a-z][a-z #]{0,12}[a-z]"],
    )
        .prop_map(|(machine, choice, place, target, declare, reasoning)| StmtSpec {
            machine,
            choice,
            place,
            target,
            declare,
            reasoning,
        })
}

/// Sequence built from specs, plus for each declared flag the statement
/// index it was generated from.
pub fn build(specs: &[StmtSpec]) -> (ActionSequence, BTreeMap<FlagName, usize>) {
    let mut seq = ActionSequence::default();
    let mut origin = BTreeMap::new();
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
    // trucks start at the yard; a move must go somewhere else
    let mut at: BTreeMap<&str, &str> = BTreeMap::new();
    for spec in specs {
        let (machine, kind) = MACHINES[spec.machine];
        let here = *at.entry(machine).or_insert("truck_yard");
        let mut place = PLACES[spec.place];
        if kind == MachineKind::DumpTruck && spec.choice < 2 {
            if place == here {
                place = PLACES[(spec.place + 1) % PLACES.len()];
            }
            at.insert(machine, place);
        }
        let target = match spec.target {
            i if i < PLACES.len() => PLACES[i],
            i => MACHINES[i - PLACES.len() + 1].0,
        };
        let (skill, params, state, synonym): (Skill, Vec<&str>, String, String) = match (kind, spec.choice) {
            (MachineKind::Excavator, 0) => (Skill::InitialPose, vec![], "INITIAL_POSE".into(), "READY".into()),
            (MachineKind::Excavator, 1) => (
                Skill::ExcavateAndRelease,
                vec![place, target],
                "EXCAVATED".into(),
                "LOADED".into(),
            ),
            (MachineKind::Excavator, 2) => (Skill::Level, vec![target], "LEVELED".into(), "LEVEL_DONE".into()),
            (MachineKind::Excavator, _) => (Skill::Gather, vec![place], "GATHERED".into(), "GATHER_DONE".into()),
            (MachineKind::DumpTruck, 0 | 1) => {
                let up = place.to_ascii_uppercase();
                (Skill::Move, vec![place], format!("AT_{up}"), format!("REACHED_{up}"))
            }
            (MachineKind::DumpTruck, _) => (Skill::DumpSoil, vec![], "DUMPED".into(), "DUMP_DONE".into()),
        };
        let index = seq.push(ActionStatement::new(0, skill, machine, &params).because(spec.reasoning.clone()));
        let n = seen.entry((machine.to_string(), state.clone())).or_default();
        *n += 1;
        for word in [&state, &synonym].into_iter().take(spec.declare as usize) {
            let name = flag(&format!("{}_{}_{}_FLG", flag_prefix(machine), word, n));
            seq.declare(name.clone(), format!("True once statement {index} is done; False otherwise."));
            origin.insert(name, index);
        }
    }
    (seq, origin)
}

/// Random expression over `pool`.
pub fn arb_expr(pool: Vec<FlagName>) -> impl Strategy<Value = FlagExpr> {
    let leaf = (prop::sample::select(pool), any::<bool>()).prop_map(|(f, e)| FlagExpr::leaf(f, e));
    leaf.prop_recursive(3, 12, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..=3).prop_map(FlagExpr::and),
            prop::collection::vec(inner, 2..=3).prop_map(FlagExpr::or),
        ]
    })
}

/// A valid sequence on the scenario 9 site with random flags and
/// preconditions, together with the generating statement of each flag.
pub fn arb_sequence() -> impl Strategy<Value = (ActionSequence, BTreeMap<FlagName, usize>)> {
    prop::collection::vec(arb_spec(), 1..8)
        .prop_flat_map(|specs| {
            let (seq, origin) = build(&specs);
            let mut pool: Vec<FlagName> = origin.keys().cloned().collect();
            pool.extend(SENSING.iter().map(|s| flag(s)));
            let n = seq.statements.len();
            (
                Just(seq),
                Just(origin),
                prop::collection::vec(prop::option::weighted(0.6, arb_expr(pool)), n),
            )
        })
        .prop_map(|(mut seq, origin, pres)| {
            for (s, p) in seq.statements.iter_mut().zip(pres) {
                if let Some(p) = p {
                    s.precondition = p;
                }
            }
            (seq, origin)
        })
}

/// NRF recomputed from the generator's own bookkeeping: setters come from
/// `origin`, consumers from scanning each statement's rendered line.
pub fn nrf_oracle(seq: &ActionSequence, origin: &BTreeMap<FlagName, usize>) -> usize {
    let line_mentions = |line: &str, name: &str| {
        line.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .any(|tok| tok == name)
    };
    let consumers = |name: &FlagName| -> BTreeSet<usize> {
        seq.statements
            .iter()
            .filter(|s| {
                let line = s.to_line();
                let cond = line.split(" # ").next().unwrap();
                cond.split_once("depends_on").is_some_and(|(_, c)| line_mentions(c, name.as_str()))
            })
            .map(|s| s.index)
            .collect()
    };
    let mut count = 0;
    let mut earlier: Vec<(usize, BTreeSet<usize>)> = Vec::new();
    for g in &seq.generated_flags {
        let setter = origin[&g.name];
        let uses = consumers(&g.name);
        let dup = earlier.iter().any(|(s, u)| *s == setter && *u == uses);
        let machine = &seq.statements[setter - 1].machine;
        let intra = !uses.is_empty()
            && uses
                .iter()
                .all(|&u| u > setter && &seq.statements[u - 1].machine == machine);
        if dup || intra {
            count += 1;
        }
        earlier.push((setter, uses));
    }
    count
}

/// Brute-force search over completion orders. A statement may complete once
/// every earlier statement of its machine has, and its precondition holds
/// with generated flags set by completed statements and sensing flags taken
/// optimistically. Returns the statements no order ever completes.
pub fn never_completable(seq: &ActionSequence, setters: &BTreeMap<FlagName, usize>) -> BTreeSet<usize> {
    let n = seq.statements.len();
    assert!(n <= 20, "search space too large");
    let ready = |done: u32, i: usize| -> bool {
        let s = &seq.statements[i];
        let earlier_done = seq.statements[..i]
            .iter()
            .enumerate()
            .filter(|(_, o)| o.machine == s.machine)
            .all(|(j, _)| done & (1 << j) != 0);
        fn holds(e: &FlagExpr, done: u32, setters: &BTreeMap<FlagName, usize>) -> bool {
            match e {
                FlagExpr::Leaf { flag, expected } => match setters.get(flag) {
                    Some(&k) => (done & (1 << (k - 1)) != 0) == *expected,
                    None => true,
                },
                FlagExpr::And(v) => v.iter().all(|x| holds(x, done, setters)),
                FlagExpr::Or(v) => v.iter().any(|x| holds(x, done, setters)),
            }
        }
        let holds = holds(&s.precondition, done, setters);
        earlier_done && holds
    };
    let mut visited = BTreeSet::from([0u32]);
    let mut queue = VecDeque::from([0u32]);
    let mut ever = 0u32;
    while let Some(done) = queue.pop_front() {
        ever |= done;
        for i in 0..n {
            if done & (1 << i) == 0 && ready(done, i) {
                let next = done | (1 << i);
                if visited.insert(next) {
                    queue.push_back(next);
                }
            }
        }
    }
    (0..n).filter(|i| ever & (1 << i) == 0).map(|i| i + 1).collect()
}

pub struct StressOutcome {
    pub ops: usize,
    pub writers: usize,
    pub readers: usize,
    pub problems: Vec<String>,
}

/// Hammers a blackboard with concurrent writers and readers, then checks
/// every reader observation against the recorded history and replays the
/// history onto a fresh board.
pub fn stress_blackboard(writers: usize, readers: usize, ops_each: usize, seed: u64) -> StressOutcome {
    let per_writer = 3;
    let names: Vec<String> = (0..writers * per_writer).map(|i| format!("STRESS_{i}_FLG")).collect();
    let registry: Vec<FlagRegistryEntry> = names
        .iter()
        .map(|n| FlagRegistryEntry::generated(flag(n), "stress"))
        .collect();
    let bb = GlobalBlackboard::new(registry.clone()).unwrap();
    let barrier = Barrier::new(writers + readers);

    type Reads = Vec<(u64, String, bool, u64)>;
    type Snaps = Vec<(u64, BTreeMap<FlagName, bool>)>;
    type Writes = Vec<(String, bool)>;
    let (changes, observed): (Vec<Writes>, Vec<(Reads, Snaps)>) = thread::scope(|s| {
        let w: Vec<_> = (0..writers)
            .map(|w| {
                let (bb, barrier, names) = (&bb, &barrier, &names);
                s.spawn(move || {
                    let mut rng = StdRng::seed_from_u64(seed ^ (w as u64 + 1));
                    let mine = &names[w * per_writer..(w + 1) * per_writer];
                    let mut current = vec![false; per_writer];
                    let mut changes = Vec::new();
                    barrier.wait();
                    for op in 0..ops_each {
                        let k = rng.random_range(0..per_writer);
                        let v = rng.random_bool(0.5);
                        bb.set_flag(&mine[k], v, FlagSource::Action, op as u64).unwrap();
                        if current[k] != v {
                            current[k] = v;
                            changes.push((mine[k].clone(), v));
                        }
                    }
                    changes
                })
            })
            .collect();
        let r: Vec<_> = (0..readers)
            .map(|r| {
                let (bb, barrier, names) = (&bb, &barrier, &names);
                s.spawn(move || {
                    let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(31) ^ (r as u64 + 100));
                    let mut reads = Vec::new();
                    let mut snaps = Vec::new();
                    barrier.wait();
                    for op in 0..ops_each {
                        if op % 2 == 0 {
                            let name = &names[rng.random_range(0..names.len())];
                            let before = bb.version();
                            let v = bb.get_flag(name).unwrap();
                            let after = bb.version();
                            reads.push((before, name.clone(), v, after));
                        } else {
                            let snap = bb.snapshot();
                            snaps.push((snap.version, snap.values));
                        }
                    }
                    (reads, snaps)
                })
            })
            .collect();
        (
            w.into_iter().map(|h| h.join().unwrap()).collect(),
            r.into_iter().map(|h| h.join().unwrap()).collect(),
        )
    });

    let mut problems = Vec::new();
    let history = bb.history();
    for (i, e) in history.iter().enumerate() {
        if e.version != i as u64 + 1 {
            problems.push(format!("event {i} has version {}", e.version));
        }
        if e.old == e.new {
            problems.push(format!("event {i} changes nothing"));
        }
    }
    let total_changes: usize = changes.iter().map(Vec::len).sum();
    if total_changes != history.len() {
        problems.push(format!("{total_changes} value changes but {} events", history.len()));
    }
    // per-writer program order survives in the history
    for (w, ch) in changes.iter().enumerate() {
        let mine: BTreeSet<&String> = names[w * per_writer..(w + 1) * per_writer].iter().collect();
        let seen: Vec<(String, bool)> = history
            .iter()
            .filter(|e| mine.contains(&e.name.as_str().to_string()))
            .map(|e| (e.name.as_str().to_string(), e.new))
            .collect();
        if &seen != ch {
            problems.push(format!("writer {w}: history order differs from program order"));
        }
    }

    // states[v] = board contents after version v
    let mut states = Vec::with_capacity(history.len() + 1);
    let mut cur: BTreeMap<FlagName, bool> = names.iter().map(|n| (flag(n), false)).collect();
    states.push(cur.clone());
    for e in &history {
        cur.insert(e.name.clone(), e.new);
        states.push(cur.clone());
    }
    let mut reader_ops = 0;
    for (r, (reads, snaps)) in observed.iter().enumerate() {
        reader_ops += reads.len() + snaps.len();
        for (v, values) in snaps {
            match states.get(*v as usize) {
                Some(expect) if expect == values => {}
                _ => problems.push(format!("reader {r}: snapshot at version {v} matches no prefix")),
            }
        }
        for (before, name, value, after) in reads {
            let fits = (*before..=*after).any(|v| states[v as usize][&flag(name)] == *value);
            if !fits {
                problems.push(format!("reader {r}: read {name}={value} outside versions {before}..={after}"));
            }
        }
    }

    let replayed = GlobalBlackboard::replay(registry, &history).unwrap();
    if replayed.snapshot() != bb.snapshot() {
        problems.push("replay does not reproduce the final snapshot".into());
    }
    StressOutcome {
        ops: writers * ops_each + reader_ops,
        writers,
        readers,
        problems,
    }
}

/// Confirms a deadlock reported at `at_tick` without the wait-for graph:
/// the same plan run with detection off must idle from `at_tick` on, with
/// no event of any kind, until a timeout.
pub fn confirm_deadlock(
    plan: &sitebt::btcompile::CompiledPlan,
    scenario: &sitebt::scenario::Scenario,
    at_tick: u64,
) -> Result<(), String> {
    use sitebt::sitesim::{run, RunConfig, ViolationKind};
    let bb = GlobalBlackboard::new(plan.registry.clone()).map_err(|e| e.to_string())?;
    let config = RunConfig {
        budget: at_tick + 60,
        deadlock_check: false,
        ..RunConfig::default()
    };
    let report = run(&plan.trees, scenario, &bb, &config).map_err(|e| e.to_string())?;
    if report.violations.len() != 1 || report.violations[0].kind != ViolationKind::Timeout {
        return Err(format!("continuation ended with {:?}", report.violations));
    }
    if let Some(e) = report.event_log.iter().find(|e| e.tick > at_tick) {
        return Err(format!("activity after the reported deadlock: {e:?}"));
    }
    Ok(())
}
