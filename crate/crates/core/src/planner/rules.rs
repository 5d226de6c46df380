//! Deterministic planner for the catalog's task schema.

use std::collections::BTreeMap;

use crate::actionseq::{ActionSequence, ActionStatement, FlagExpr, MachineKind, Skill};
use crate::flagcore::{FlagName, SENSING_ARRIVAL};
use crate::scenario::{Scenario, Step, Task, Trip};

use super::PlannerError;

/// Flag-name prefix for a machine id: `dump_truck_2` -> `DUMPTRUCK_2`.
pub fn flag_prefix(machine: &str) -> String {
    machine.to_ascii_uppercase().replace("DUMP_TRUCK", "DUMPTRUCK")
}

fn flag(name: String) -> FlagName {
    FlagName::new(name).expect("generated flag names follow the naming rule")
}

fn reasoning(step: &Step) -> String {
    let p = |i: usize| step.params.get(i).map(String::as_str).unwrap_or("?");
    match step.skill {
        Skill::Move => format!("Move {} to {}.", step.machine, p(0)),
        Skill::InitialPose => format!("Return {} to its initial pose.", step.machine),
        Skill::ExcavateAndRelease => format!("Excavate at {} and release the soil into {}.", p(0), p(1)),
        Skill::Level => format!("Level the soil at {}.", p(0)),
        Skill::Gather => format!("Gather the soil at {}.", p(0)),
        Skill::DumpSoil => format!("Dump the soil carried by {}.", step.machine),
    }
}

struct Builder<'a> {
    scenario: &'a Scenario,
    seq: ActionSequence,
    /// (machine, skill, first param) -> statements so far, for ordinals.
    counts: BTreeMap<(String, Skill, String), usize>,
}

impl<'a> Builder<'a> {
    fn kind(&self, machine: &str) -> Result<MachineKind, PlannerError> {
        self.scenario
            .site
            .machine(machine)
            .map(|m| m.kind)
            .ok_or_else(|| PlannerError::UnsupportedScenario(format!("{machine} is not on the site")))
    }

    /// Appends a statement; returns its ordinal among same-skill statements
    /// of that machine with the same first parameter.
    fn push(&mut self, step: &Step, gate: FlagExpr, why: String) -> usize {
        let params: Vec<&str> = step.params.iter().map(String::as_str).collect();
        self.seq
            .push(ActionStatement::new(0, step.skill, &step.machine, &params).depends_on(gate).because(why));
        let key = (
            step.machine.clone(),
            step.skill,
            step.params.first().cloned().unwrap_or_default(),
        );
        let n = self.counts.entry(key).or_default();
        *n += 1;
        *n
    }

    fn plain(&mut self, step: &Step) -> Result<usize, PlannerError> {
        let kind = self.kind(&step.machine)?;
        if !step.skill.allowed_for(kind) {
            return Err(PlannerError::UnsupportedScenario(format!(
                "{} cannot {}",
                step.machine, step.skill
            )));
        }
        let why = reasoning(step);
        Ok(self.push(step, FlagExpr::always(), why))
    }

    fn declare(&mut self, name: &FlagName, description: String) {
        if !self.seq.is_generated(name) {
            self.seq.declare(name.clone(), description);
        }
    }
}

fn step(skill: Skill, machine: &str, params: &[&str]) -> Step {
    Step {
        skill,
        machine: machine.to_string(),
        params: params.iter().map(|s| s.to_string()).collect(),
    }
}

/// Plans a catalog scenario without a model.
///
/// Step tasks come out in order with no preconditions. Haul tasks expand
/// each trip into: truck approach gated on the excavator's initial pose,
/// loading gated on the truck's arrival and the arrival sensor, an optional
/// leveling pass, a return to the initial pose, and the truck's departure
/// gated on that pose.
pub fn rule_planner(scenario: &Scenario) -> Result<ActionSequence, PlannerError> {
    let mut b = Builder {
        scenario,
        seq: ActionSequence::default(),
        counts: BTreeMap::new(),
    };
    match &scenario.task {
        Task::Steps { steps } => {
            for s in steps {
                b.plain(s)?;
            }
        }
        Task::Haul {
            excavator,
            dig_from,
            load_at,
            dump_at,
            trips,
            level_bed,
            before,
            after,
        } => {
            if trips.is_empty() {
                return Err(PlannerError::UnsupportedScenario("haul without trips".into()));
            }
            if b.kind(excavator)? != MachineKind::Excavator {
                return Err(PlannerError::UnsupportedScenario(format!("{excavator} is not an excavator")));
            }
            for s in before {
                b.plain(s)?;
            }
            let exc = flag_prefix(excavator);
            let pose_flag = |n: usize| flag(format!("{exc}_INITIAL_POSE_{n}_FLG"));
            let arrival = flag(SENSING_ARRIVAL.to_string());

            let n = b.push(
                &step(Skill::InitialPose, excavator, &[]),
                FlagExpr::always(),
                format!("Return {excavator} to its initial pose so a truck can approach safely."),
            );
            let mut pose = pose_flag(n);
            b.declare(
                &pose,
                format!("True when {excavator} has completed initial pose number {n}; False otherwise."),
            );

            for Trip { truck, loads } in trips {
                if b.kind(truck)? != MachineKind::DumpTruck {
                    return Err(PlannerError::UnsupportedScenario(format!("{truck} is not a dump truck")));
                }
                if *loads == 0 {
                    return Err(PlannerError::UnsupportedScenario("trip without loads".into()));
                }
                let k = b.push(
                    &step(Skill::Move, truck, &[load_at]),
                    FlagExpr::leaf(pose.clone(), true),
                    format!("Move {truck} to {load_at} once {excavator} is in its initial pose."),
                );
                let at_loading = flag(format!(
                    "{}_AT_{}_{k}_FLG",
                    flag_prefix(truck),
                    load_at.to_ascii_uppercase()
                ));
                b.declare(
                    &at_loading,
                    format!("True when {truck} has reached {load_at} for trip {k}; False otherwise."),
                );

                for i in 0..*loads {
                    let gate = if i == 0 {
                        FlagExpr::and(vec![
                            FlagExpr::leaf(at_loading.clone(), true),
                            FlagExpr::leaf(arrival.clone(), true),
                        ])
                    } else {
                        FlagExpr::always()
                    };
                    b.push(
                        &step(Skill::ExcavateAndRelease, excavator, &[dig_from, truck]),
                        gate,
                        format!("Excavate at {dig_from} and load {truck}."),
                    );
                }
                if *level_bed {
                    b.push(
                        &step(Skill::Level, excavator, &[truck]),
                        FlagExpr::always(),
                        format!("Level the soil on the bed of {truck}."),
                    );
                }
                let n = b.push(
                    &step(Skill::InitialPose, excavator, &[]),
                    FlagExpr::always(),
                    format!("Return {excavator} to its initial pose so {truck} can leave."),
                );
                pose = pose_flag(n);
                b.declare(
                    &pose,
                    format!("True when {excavator} has completed initial pose number {n}; False otherwise."),
                );
                b.push(
                    &step(Skill::Move, truck, &[dump_at]),
                    FlagExpr::leaf(pose.clone(), true),
                    format!("Drive {truck} to {dump_at} after {excavator} is back in its initial pose."),
                );
                b.push(
                    &step(Skill::DumpSoil, truck, &[]),
                    FlagExpr::always(),
                    format!("Dump the soil at {dump_at}."),
                );
            }
            for s in after {
                b.plain(s)?;
            }
        }
    }
    Ok(b.seq)
}
