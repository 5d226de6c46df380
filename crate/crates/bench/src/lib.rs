//! Inputs shared by the criterion benches in `benches/pipeline.rs`.

use sitebt::actionseq::{serialize, ActionSequence};
use sitebt::btcompile::{compile, CompiledPlan};
use sitebt::planner::rule_planner;
use sitebt::scenario::{catalog, Scenario};

/// One catalog scenario with its rule plan, serialized and compiled.
pub struct Prepared {
    pub scenario: Scenario,
    pub sequence: ActionSequence,
    pub text: String,
    pub plan: CompiledPlan,
}

pub fn prepare(scenario: Scenario) -> Prepared {
    let sequence = rule_planner(&scenario).expect("catalog scenarios are supported");
    let plan = compile(&sequence, &scenario.param_db()).expect("rule plans compile");
    Prepared {
        text: serialize(&sequence),
        scenario,
        sequence,
        plan,
    }
}

pub fn prepared_catalog() -> Vec<Prepared> {
    catalog().into_iter().map(prepare).collect()
}

/// The catalog entry with the most statements in its rule plan.
pub fn largest(all: &[Prepared]) -> &Prepared {
    all.iter()
        .max_by_key(|p| p.sequence.statements.len())
        .expect("catalog is not empty")
}
