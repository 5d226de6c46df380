//! Discrete-event earthwork site simulator.
//!
//! Each tick runs, in order: the sensing update, one tick of every
//! unfinished tree (in the site's machine order), one step of every
//! in-flight action, then the detectors. An action of duration `d` started
//! on tick `t` takes effect during the world step of tick `t + d - 1`; its
//! tree sees it complete on tick `t + d`.

mod detect;
mod goal;
mod state;
mod world;

use std::collections::BTreeMap;
use std::io::{self, Write};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::btcompile::CompiledPlan;
use crate::btree::{action_gates, count_nodes, tick_all_concurrent, BtError, BtNode, NodeKind, TickStatus, TreeInstance, WaitState};
use crate::flagcore::{
    default_registry, sensing_at_flag, FlagError, FlagName, FlagRegistryEntry, FlagSource, GlobalBlackboard,
    SENSING_ARRIVAL, SENSING_LOADED,
};
use crate::scenario::{Goal, Scenario};

pub use detect::{is_stuck, WaitForGraph};
pub use goal::{check_goal, completed_count, goal_met, unmet_goals};
pub use state::{Location, MachineState, PlaceState, SiteState};
pub use world::{SimEvent, SimWorld, TickCtx, LEVEL_PASS};

pub const DEFAULT_BUDGET: u64 = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    Collision,
    Deadlock,
    SyncViolation,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub tick: u64,
    pub machines: Vec<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub tick: u64,
    /// Machine id, or `sensing` / `external` for flag writes from outside
    /// the trees.
    pub machine: String,
    #[serde(flatten)]
    pub event: SimEvent,
}

/// Plan metrics carried alongside a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nn: usize,
    pub nrf: usize,
    pub tu: u64,
    pub gt: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Deterministic,
    /// Trees tick on their own threads; detectors run at tick barriers.
    Concurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub budget: u64,
    pub mode: Mode,
    /// Off only for diagnostics: a stuck run then idles until the budget.
    #[serde(default = "yes")]
    pub deadlock_check: bool,
}

fn yes() -> bool {
    true
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            budget: DEFAULT_BUDGET,
            mode: Mode::Deterministic,
            deadlock_check: true,
        }
    }
}

/// Flag values and machine locations at one tick boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub tick: u64,
    pub flags: BTreeMap<FlagName, bool>,
    pub locations: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: u32,
    pub success: bool,
    pub violations: Vec<Violation>,
    pub ticks_used: u64,
    pub statuses: BTreeMap<String, TickStatus>,
    pub unmet_goals: Vec<Goal>,
    pub metrics: Metrics,
    pub final_state: SiteState,
    pub event_log: Vec<LogEntry>,
    #[serde(skip)]
    pub timeline: Vec<TimelineRow>,
}

impl RunReport {
    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    /// Event log as JSON lines.
    pub fn write_event_log<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.event_log {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Flag timelines and machine locations, one row per tick, for plotting.
    pub fn write_timeline_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let Some(first) = self.timeline.first() else {
            return writeln!(out, "tick");
        };
        let flags: Vec<&FlagName> = first.flags.keys().collect();
        let machines: Vec<&String> = first.locations.keys().collect();
        let mut header = vec!["tick".to_string()];
        header.extend(flags.iter().map(|f| f.to_string()));
        header.extend(machines.iter().map(|m| m.to_string()));
        writeln!(out, "{}", header.join(","))?;
        for row in &self.timeline {
            let mut cells = vec![row.tick.to_string()];
            cells.extend(flags.iter().map(|f| u8::from(row.flags.get(*f) == Some(&true)).to_string()));
            cells.extend(machines.iter().map(|m| row.locations.get(*m).cloned().unwrap_or_default()));
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("plan drives {0}, which is not on the site")]
    UnknownMachine(String),
    #[error("budget must be at least one tick")]
    ZeroBudget,
    #[error(transparent)]
    Tree(#[from] BtError),
    #[error(transparent)]
    Flag(#[from] FlagError),
}

/// Default sensing flags for the site plus every other flag the trees read
/// or write.
pub fn registry_for(trees: &BTreeMap<String, BtNode>, scenario: &Scenario) -> Vec<FlagRegistryEntry> {
    let mut reg = default_registry(scenario.place_names());
    for (machine, root) in trees {
        root.walk(&mut |n| {
            let flag = match &n.kind {
                NodeKind::DbReader { flag, .. } | NodeKind::SetFlag { flag, .. } => flag,
                _ => return,
            };
            if !reg.iter().any(|e| &e.name == flag) {
                reg.push(FlagRegistryEntry::generated(flag.clone(), format!("Used by {machine}.")));
            }
        });
    }
    reg
}

/// Writes every default flag to its world predicate. Unregistered flags are
/// skipped; unchanged values write nothing.
pub fn sensing_update(state: &SiteState, bb: &GlobalBlackboard, tick: u64) {
    let put = |name: &str, value: bool| {
        if bb.is_registered(name) {
            bb.set_flag(name, value, FlagSource::Sensing, tick)
                .expect("registered flag accepts writes");
        }
    };
    put(SENSING_ARRIVAL, state.truck_at_loading_place());
    put(SENSING_LOADED, state.any_truck_loaded());
    for place in state.places.keys() {
        put(sensing_at_flag(place).as_str(), !state.occupants(place).is_empty());
    }
}

fn location_label(m: &MachineState) -> String {
    match &m.at {
        Location::Place { place } => place.clone(),
        Location::Edge { target, .. } => format!("->{target}"),
    }
}

/// Appends flag changes since `*seen` to the log.
fn flush_flags(
    bb: &GlobalBlackboard,
    seen: &mut u64,
    writers: &BTreeMap<FlagName, String>,
    log: &mut Vec<LogEntry>,
) {
    for ev in bb.history_since(*seen) {
        let machine = match ev.source {
            FlagSource::Sensing => "sensing".to_string(),
            FlagSource::External => "external".to_string(),
            FlagSource::Action => writers.get(&ev.name).cloned().unwrap_or_else(|| "unknown".into()),
        };
        log.push(LogEntry {
            tick: ev.tick,
            machine,
            event: SimEvent::FlagChanged {
                flag: ev.name.to_string(),
                value: ev.new,
                version: ev.version,
            },
        });
    }
    *seen = bb.version();
}

/// Runs `plan`'s trees on a fresh blackboard built from its
/// registry.
pub fn run_plan(plan: &CompiledPlan, scenario: &Scenario, config: &RunConfig) -> Result<RunReport, SimError> {
    let bb = GlobalBlackboard::new(plan.registry.clone())?;
    run(&plan.trees, scenario, &bb, config)
}

pub fn run(
    trees: &BTreeMap<String, BtNode>,
    scenario: &Scenario,
    bb: &GlobalBlackboard,
    config: &RunConfig,
) -> Result<RunReport, SimError> {
    run_observed(trees, scenario, bb, config, &mut |_, _| {})
}

/// [`run`], calling `observer` at every tick boundary right after the
/// sensing update.
pub fn run_observed(
    trees: &BTreeMap<String, BtNode>,
    scenario: &Scenario,
    bb: &GlobalBlackboard,
    config: &RunConfig,
    observer: &mut dyn FnMut(&SiteState, &GlobalBlackboard),
) -> Result<RunReport, SimError> {
    if config.budget == 0 {
        return Err(SimError::ZeroBudget);
    }
    if let Some(m) = trees.keys().find(|m| scenario.site.machine(m).is_none()) {
        return Err(SimError::UnknownMachine(m.clone()));
    }

    // Site listing order fixes the tick order.
    let mut instances = Vec::new();
    let mut gates = BTreeMap::new();
    let mut writers = BTreeMap::new();
    for spec in &scenario.site.machines {
        let Some(root) = trees.get(&spec.id) else { continue };
        let inst = TreeInstance::new(spec.id.clone(), root.clone(), bb)?;
        gates.insert(spec.id.clone(), action_gates(inst.root()));
        inst.root().walk(&mut |n| {
            if let NodeKind::SetFlag { flag, .. } = &n.kind {
                writers.entry(flag.clone()).or_insert_with(|| spec.id.clone());
            }
        });
        instances.push(inst);
    }

    let mut world = SimWorld::new(SiteState::from_scenario(scenario), gates);
    let mut timeline = Vec::new();
    let mut seen = bb.version();
    let mut tick = 0;

    while !instances.is_empty() && instances.iter().any(|t| !t.is_finished()) {
        if tick >= config.budget {
            world.violations.push(Violation {
                kind: ViolationKind::Timeout,
                tick,
                machines: instances
                    .iter()
                    .filter(|t| !t.is_finished())
                    .map(|t| t.machine().to_string())
                    .collect(),
                detail: format!("budget of {} ticks exhausted", config.budget),
            });
            break;
        }
        world.state.tick = tick;

        sensing_update(&world.state, bb, tick);
        flush_flags(bb, &mut seen, &writers, &mut world.log);
        observer(&world.state, bb);
        timeline.push(TimelineRow {
            tick,
            flags: bb.snapshot().values,
            locations: world
                .state
                .machines
                .values()
                .map(|m| (m.id.clone(), location_label(m)))
                .collect(),
        });

        let before_trees = bb.version();
        let was_finished: Vec<bool> = instances.iter().map(TreeInstance::is_finished).collect();
        match config.mode {
            Mode::Deterministic => {
                for t in instances.iter_mut().filter(|t| !t.is_finished()) {
                    t.tick(bb, &mut TickCtx { world: &mut world, bb }, tick);
                    flush_flags(bb, &mut seen, &writers, &mut world.log);
                }
            }
            Mode::Concurrent => {
                let ctx = Mutex::new(TickCtx { world: &mut world, bb });
                tick_all_concurrent(&mut instances, bb, &ctx, tick);
                flush_flags(bb, &mut seen, &writers, &mut world.log);
            }
        }
        for (t, was) in instances.iter().zip(was_finished) {
            if let (false, WaitState::Finished(s)) = (was, t.wait_state()) {
                world.log.push(LogEntry {
                    tick,
                    machine: t.machine().to_string(),
                    event: SimEvent::TreeFinished {
                        success: s == TickStatus::Success,
                    },
                });
            }
        }
        let flags_changed = bb.version() != before_trees;

        world.advance();

        if config.deadlock_check && is_stuck(&instances, world.has_in_flight(), flags_changed) {
            let graph = WaitForGraph::build(&instances, bb);
            world.violations.push(Violation {
                kind: ViolationKind::Deadlock,
                tick,
                machines: graph.edges.keys().cloned().collect(),
                detail: graph.explain(),
            });
        }
        tick += 1;
        if !world.violations.is_empty() {
            break;
        }
    }

    let statuses: BTreeMap<String, TickStatus> = instances
        .iter()
        .map(|t| {
            let s = match t.wait_state() {
                WaitState::Finished(s) => s,
                _ => TickStatus::Running,
            };
            (t.machine().to_string(), s)
        })
        .collect();
    let unmet = unmet_goals(scenario, &world.state, &world.log);
    let success = world.violations.is_empty()
        && statuses.values().all(|s| *s == TickStatus::Success)
        && unmet.is_empty();
    Ok(RunReport {
        scenario: scenario.id,
        success,
        violations: world.violations,
        ticks_used: tick,
        statuses,
        unmet_goals: unmet,
        metrics: Metrics {
            nn: trees.values().map(count_nodes).sum(),
            ..Metrics::default()
        },
        final_state: world.state,
        event_log: world.log,
        timeline,
    })
}
