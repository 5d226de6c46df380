use super::state::SiteState;
use super::world::SimEvent;
use super::LogEntry;
use crate::actionseq::Skill;
use crate::scenario::{Goal, Scenario};

fn completes(skill: Skill, event: &SimEvent) -> bool {
    match (skill, event) {
        (Skill::Move, SimEvent::Arrived { .. }) => true,
        (Skill::InitialPose, SimEvent::PoseReached { pose }) => pose == "initial",
        (Skill::ExcavateAndRelease, SimEvent::Excavated { .. }) => true,
        (Skill::Level, SimEvent::Leveled { .. }) => true,
        (Skill::Gather, SimEvent::Gathered { .. }) => true,
        (Skill::DumpSoil, SimEvent::Dumped { .. }) => true,
        _ => false,
    }
}

/// Completed calls of `skill` according to the world events in the log.
pub fn completed_count(log: &[LogEntry], skill: Skill) -> u32 {
    log.iter().filter(|e| completes(skill, &e.event)).count() as u32
}

pub fn goal_met(goal: &Goal, state: &SiteState, log: &[LogEntry]) -> bool {
    match goal {
        Goal::SoilAt { place, units } => state.soil.get(place).copied().unwrap_or(0) == *units,
        Goal::MachineAt { machine, place } => state
            .machines
            .get(machine)
            .is_some_and(|m| m.place() == Some(place.as_str())),
        Goal::BedLoad { truck, units } => state.machines.get(truck).is_some_and(|m| m.bed_load == *units),
        Goal::Completed { skill, count } => completed_count(log, *skill) == *count,
    }
}

/// Goals of `scenario` that do not hold.
pub fn unmet_goals(scenario: &Scenario, state: &SiteState, log: &[LogEntry]) -> Vec<Goal> {
    scenario
        .goal
        .iter()
        .filter(|g| !goal_met(g, state, log))
        .cloned()
        .collect()
}

pub fn check_goal(scenario: &Scenario, state: &SiteState, log: &[LogEntry]) -> bool {
    unmet_goals(scenario, state, log).is_empty()
}
