//! Action effects on the site and the executor trees tick against.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::state::{Location, SiteState};
use super::{LogEntry, Violation, ViolationKind};
use crate::actionseq::{Dialect, FlagExpr, MachineKind};
use crate::btree::{ActionExecutor, ActionProgress, NodeId, PrimitiveAction};
use crate::flagcore::GlobalBlackboard;

/// Path id the compiler uses for an excavator's leveling pass. It moves the
/// bucket, not the machine.
pub const LEVEL_PASS: &str = "level_pass";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    ActionStart { node: NodeId, action: PrimitiveAction },
    ActionDone { node: NodeId },
    ActionCancelled { node: NodeId },
    ActionFault { node: NodeId, reason: String },
    FlagChanged { flag: String, value: bool, version: u64 },
    Departed { place: String },
    Arrived { place: String },
    PoseReached { pose: String },
    Excavated { from: String, into: String },
    Dumped { place: String, units: u32 },
    Leveled { place: String },
    Gathered { place: String },
    TreeFinished { success: bool },
}

#[derive(Debug, Clone)]
struct InFlight {
    node: NodeId,
    action: PrimitiveAction,
    remaining: u32,
    outcome: Option<ActionProgress>,
    yielded: bool,
}

enum Completion {
    Done,
    Fault(String),
    /// Lost a same-tick tie for a slot; retry next tick.
    Yield,
}

/// The simulated site plus everything in flight on it.
#[derive(Debug, Clone)]
pub struct SimWorld {
    pub state: SiteState,
    in_flight: BTreeMap<String, InFlight>,
    /// Per machine: action node -> enclosing gates over global flags.
    gates: BTreeMap<String, BTreeMap<NodeId, Vec<FlagExpr>>>,
    pub log: Vec<LogEntry>,
    pub violations: Vec<Violation>,
}

impl SimWorld {
    pub fn new(state: SiteState, gates: BTreeMap<String, BTreeMap<NodeId, Vec<FlagExpr>>>) -> Self {
        SimWorld {
            state,
            in_flight: BTreeMap::new(),
            gates,
            log: Vec::new(),
            violations: Vec::new(),
        }
    }

    pub fn has_in_flight(&self) -> bool {
        !self.in_flight.is_empty()
    }

    fn emit(&mut self, machine: &str, event: SimEvent) {
        self.log.push(LogEntry {
            tick: self.state.tick,
            machine: machine.to_string(),
            event,
        });
    }

    fn violation(&mut self, kind: ViolationKind, machines: Vec<String>, detail: String) {
        self.violations.push(Violation {
            kind,
            tick: self.state.tick,
            machines,
            detail,
        });
    }

    fn check_gates(&mut self, bb: &GlobalBlackboard, machine: &str, node: NodeId) {
        let Some(gates) = self.gates.get(machine).and_then(|g| g.get(&node)) else {
            return;
        };
        let closed: Vec<String> = gates
            .iter()
            .filter(|g| g.eval_with(&|f| bb.get_flag(f.as_str()).ok()) != Ok(true))
            .map(|g| g.render(Dialect::Plan))
            .collect();
        if !closed.is_empty() {
            self.violation(
                ViolationKind::SyncViolation,
                vec![machine.to_string()],
                format!("{node} started while {} was false", closed.join(" and ")),
            );
        }
    }

    fn start(&mut self, bb: &GlobalBlackboard, machine: &str, node: NodeId, action: &PrimitiveAction) -> ActionProgress {
        self.check_gates(bb, machine, node);
        self.emit(
            machine,
            SimEvent::ActionStart {
                node,
                action: action.clone(),
            },
        );
        if let Err(reason) = self.begin(machine, action) {
            self.emit(
                machine,
                SimEvent::ActionFault {
                    node,
                    reason: reason.clone(),
                },
            );
            return ActionProgress::Faulted(reason);
        }
        self.in_flight.insert(
            machine.to_string(),
            InFlight {
                node,
                action: action.clone(),
                remaining: action.duration(),
                outcome: None,
                yielded: false,
            },
        );
        ActionProgress::Running
    }

    /// Start-of-action effects: departures and joints leaving their pose.
    fn begin(&mut self, machine: &str, action: &PrimitiveAction) -> Result<(), String> {
        let places_known = |p: &str| self.state.places.contains_key(p);
        let m = self
            .state
            .machines
            .get(machine)
            .ok_or_else(|| format!("no machine {machine} on site"))?;
        match action {
            PrimitiveAction::MoveAlongPath { path, .. } if path == LEVEL_PASS => {
                if m.kind != MachineKind::Excavator || m.place().is_none() {
                    return Err(format!("{machine} cannot make a leveling pass"));
                }
            }
            PrimitiveAction::MoveAlongPath { path, target, duration } => {
                if !places_known(target) {
                    return Err(format!("unknown destination {target}"));
                }
                let from = m.place().map(str::to_string);
                let m = self.state.machines.get_mut(machine).unwrap();
                m.at = Location::Edge {
                    path: path.clone(),
                    target: target.clone(),
                    progress: 0,
                    length: *duration,
                };
                if let Some(place) = from {
                    self.emit(machine, SimEvent::Departed { place });
                }
            }
            PrimitiveAction::SetJointTargets { .. } => {
                if m.kind != MachineKind::Excavator {
                    return Err(format!("{machine} has no arm"));
                }
                self.state.machines.get_mut(machine).unwrap().pose = "moving".into();
            }
            PrimitiveAction::DumpBed { .. } => {
                if m.kind != MachineKind::DumpTruck || m.place().is_none() {
                    return Err(format!("{machine} cannot dump here"));
                }
            }
            PrimitiveAction::Wait { .. } => {}
        }
        self.state.machines.get_mut(machine).unwrap().busy = Some(action.clone());
        Ok(())
    }

    fn poll(&mut self, machine: &str, node: NodeId) -> ActionProgress {
        let ready = match self.in_flight.get(machine) {
            Some(f) if f.node == node => f.outcome.clone(),
            _ => {
                let reason = format!("no action {node} in flight");
                self.emit(
                    machine,
                    SimEvent::ActionFault {
                        node,
                        reason: reason.clone(),
                    },
                );
                return ActionProgress::Faulted(reason);
            }
        };
        match ready {
            None => ActionProgress::Running,
            Some(done) => {
                self.in_flight.remove(machine);
                if let Some(m) = self.state.machines.get_mut(machine) {
                    m.busy = None;
                }
                let event = match &done {
                    ActionProgress::Faulted(reason) => SimEvent::ActionFault {
                        node,
                        reason: reason.clone(),
                    },
                    _ => SimEvent::ActionDone { node },
                };
                self.emit(machine, event);
                done
            }
        }
    }

    fn cancel(&mut self, machine: &str, node: NodeId) {
        if self.in_flight.get(machine).is_some_and(|f| f.node == node) {
            self.in_flight.remove(machine);
            if let Some(m) = self.state.machines.get_mut(machine) {
                m.busy = None;
            }
            self.emit(machine, SimEvent::ActionCancelled { node });
        }
    }

    /// Moves every in-flight action one tick forward, in machine id order,
    /// applying completion effects.
    pub fn advance(&mut self) {
        let mut arrivals: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let machines: Vec<String> = self.in_flight.keys().cloned().collect();
        for machine in machines {
            let mut f = self.in_flight[&machine].clone();
            if f.outcome.is_some() {
                continue;
            }
            if !f.yielded {
                f.remaining = f.remaining.saturating_sub(1);
                if let Some(m) = self.state.machines.get_mut(&machine) {
                    if let Location::Edge { progress, length, .. } = &mut m.at {
                        *progress = (*progress + 1).min(*length);
                    }
                }
            }
            if f.remaining == 0 {
                match self.complete(&machine, &f, &mut arrivals) {
                    Completion::Done => f.outcome = Some(ActionProgress::Completed),
                    Completion::Fault(r) => f.outcome = Some(ActionProgress::Faulted(r)),
                    Completion::Yield => f.yielded = true,
                }
            }
            self.in_flight.insert(machine, f);
        }
    }

    fn complete(
        &mut self,
        machine: &str,
        f: &InFlight,
        arrivals: &mut BTreeMap<String, Vec<String>>,
    ) -> Completion {
        match &f.action {
            PrimitiveAction::MoveAlongPath { path, target, .. } if path == LEVEL_PASS => {
                self.emit(machine, SimEvent::Leveled { place: target.clone() });
                Completion::Done
            }
            PrimitiveAction::MoveAlongPath { target, .. } => self.arrive(machine, target, f.yielded, arrivals),
            PrimitiveAction::SetJointTargets { pose, target, .. } => {
                let effect = self.pose_effect(machine, pose, target.as_deref());
                if let Err(reason) = effect {
                    return Completion::Fault(reason);
                }
                self.state.machines.get_mut(machine).unwrap().pose = pose.clone();
                self.emit(machine, SimEvent::PoseReached { pose: pose.clone() });
                if let Ok(Some(event)) = effect {
                    self.emit(machine, event);
                }
                Completion::Done
            }
            PrimitiveAction::DumpBed { .. } => {
                let m = self.state.machines.get_mut(machine).unwrap();
                let Some(place) = m.place().map(str::to_string) else {
                    return Completion::Fault("dumping while driving".into());
                };
                let units = std::mem::take(&mut m.bed_load);
                *self.state.soil.entry(place.clone()).or_default() += units;
                self.emit(machine, SimEvent::Dumped { place, units });
                Completion::Done
            }
            PrimitiveAction::Wait { .. } => Completion::Done,
        }
    }

    fn arrive(
        &mut self,
        machine: &str,
        target: &str,
        yielded: bool,
        arrivals: &mut BTreeMap<String, Vec<String>>,
    ) -> Completion {
        let slots = self.state.places[target].slots as usize;
        let occupants: Vec<String> = self
            .state
            .occupants(target)
            .into_iter()
            .map(str::to_string)
            .collect();
        if occupants.len() >= slots {
            let tie = arrivals.get(target).is_some_and(|a| !a.is_empty());
            if tie && !yielded {
                return Completion::Yield;
            }
            let mut involved = occupants.clone();
            involved.push(machine.to_string());
            self.violation(
                ViolationKind::Collision,
                involved,
                format!("{machine} entered {target}, already holding {}", occupants.join(", ")),
            );
        }
        let m = self.state.machines.get_mut(machine).unwrap();
        m.at = Location::Place {
            place: target.to_string(),
        };
        let is_truck = m.kind == MachineKind::DumpTruck;
        self.emit(machine, SimEvent::Arrived { place: target.to_string() });
        arrivals.entry(target.to_string()).or_default().push(machine.to_string());

        if is_truck {
            let unsafe_arms: Vec<(String, String)> = self
                .state
                .swing_zone_owners(target)
                .into_iter()
                .filter(|e| e.pose != "initial")
                .map(|e| (e.id.clone(), e.pose.clone()))
                .collect();
            for (exc, pose) in unsafe_arms {
                self.violation(
                    ViolationKind::Collision,
                    vec![exc.clone(), machine.to_string()],
                    format!("{machine} entered the swing zone of {exc} at {target} while its pose was {pose}"),
                );
            }
        }
        Completion::Done
    }

    /// Soil effects of reaching a pose; returns the event to log after the
    /// pose itself.
    fn pose_effect(&mut self, machine: &str, pose: &str, target: Option<&str>) -> Result<Option<SimEvent>, String> {
        let needs_target = matches!(pose, "dig" | "release" | "gather_pull");
        if !needs_target {
            return Ok(None);
        }
        let target = target.ok_or_else(|| format!("{pose} needs a target"))?;
        let at = self
            .state
            .machines
            .get(machine)
            .and_then(|m| m.place())
            .ok_or_else(|| format!("{machine} is not standing at a place"))?
            .to_string();
        match pose {
            "dig" => {
                if !self.state.in_reach(&at, target) {
                    return Err(format!("{target} is out of reach from {at}"));
                }
                if self.state.soil.get(target).copied().unwrap_or(0) == 0 {
                    return Err(format!("no soil at {target}"));
                }
                self.state.machines.get_mut(machine).unwrap().bucket = Some(target.to_string());
                Ok(None)
            }
            "release" => {
                let from = self
                    .state
                    .machines
                    .get(machine)
                    .and_then(|m| m.bucket.clone())
                    .ok_or_else(|| "bucket is empty".to_string())?;
                if self.state.soil.get(&from).copied().unwrap_or(0) == 0 {
                    return Err(format!("no soil left at {from}"));
                }
                if let Some(truck) = self.state.machines.get(target) {
                    let Some(truck_at) = truck.place() else {
                        return Err(format!("{target} is driving"));
                    };
                    if truck.kind != MachineKind::DumpTruck || !self.state.in_reach(&at, truck_at) {
                        return Err(format!("{target} is not loadable from {at}"));
                    }
                    self.state.machines.get_mut(target).unwrap().bed_load += 1;
                } else {
                    if !self.state.in_reach(&at, target) {
                        return Err(format!("{target} is out of reach from {at}"));
                    }
                    *self.state.soil.entry(target.to_string()).or_default() += 1;
                }
                *self.state.soil.get_mut(&from).unwrap() -= 1;
                self.state.machines.get_mut(machine).unwrap().bucket = None;
                Ok(Some(SimEvent::Excavated {
                    from,
                    into: target.to_string(),
                }))
            }
            _ => {
                if !self.state.in_reach(&at, target) {
                    return Err(format!("{target} is out of reach from {at}"));
                }
                Ok(Some(SimEvent::Gathered {
                    place: target.to_string(),
                }))
            }
        }
    }
}

/// The world as seen from inside one tick.
pub struct TickCtx<'a> {
    pub world: &'a mut SimWorld,
    pub bb: &'a GlobalBlackboard,
}

impl ActionExecutor for TickCtx<'_> {
    fn start(&mut self, machine: &str, node: NodeId, action: &PrimitiveAction) -> ActionProgress {
        self.world.start(self.bb, machine, node, action)
    }

    fn poll(&mut self, machine: &str, node: NodeId) -> ActionProgress {
        self.world.poll(machine, node)
    }

    fn cancel(&mut self, machine: &str, node: NodeId) {
        self.world.cancel(machine, node)
    }
}
