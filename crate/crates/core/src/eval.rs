//! Batch evaluation over a scenario catalog: plan, compile, run, and
//! aggregate SR / NN / NRF / TU / GT per category.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::actionseq::{analyze_flags, ActionSequence};
use crate::btcompile::compile;
use crate::planner::{totals, UsageRecord};
use crate::scenario::{Category, Origin, Scenario};
use crate::sitesim::{run_plan, RunConfig, RunReport};

/// JSON schema for [`EvalReport`].
pub const EVAL_REPORT_SCHEMA: &str = include_str!("../schema/eval_report.schema.json");

/// Below this success rate the mean node count is shown in parentheses.
pub const NN_INTERPRETABLE_SR: f64 = 0.5;

/// What a planner hands back for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanAttempt {
    pub sequence: ActionSequence,
    pub usage: Vec<UsageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub id: u32,
    pub category: Category,
    pub origin: Origin,
    pub success: bool,
    /// Planner or compiler failure; the run never happened.
    pub error: Option<String>,
    pub nn: Option<usize>,
    pub nrf: Option<usize>,
    pub tu: u64,
    pub gt: f64,
    /// Simulation wall time.
    pub sim_seconds: f64,
    pub report: Option<RunReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub scenarios: usize,
    pub successes: usize,
    pub sr: f64,
    /// Over successful scenarios only.
    pub mean_nn: Option<f64>,
    pub nn_interpretable: bool,
    /// Over scenarios that produced a sequence.
    pub mean_nrf: Option<f64>,
    pub total_tu: u64,
    pub total_gt: f64,
    pub mean_tu: Option<f64>,
    pub mean_gt: Option<f64>,
}

impl CategorySummary {
    pub fn of<'a>(results: impl IntoIterator<Item = &'a ScenarioResult>) -> Self {
        let results: Vec<&ScenarioResult> = results.into_iter().collect();
        let n = results.len();
        let successes = results.iter().filter(|r| r.success).count();
        let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let sr = if n == 0 { 0.0 } else { successes as f64 / n as f64 };
        let total_tu = results.iter().map(|r| r.tu).sum();
        let total_gt = results.iter().fold(0.0, |acc, r| acc + r.gt);
        CategorySummary {
            scenarios: n,
            successes,
            sr,
            mean_nn: mean(results.iter().filter(|r| r.success).filter_map(|r| r.nn).map(|v| v as f64).collect()),
            nn_interpretable: n > 0 && sr >= NN_INTERPRETABLE_SR,
            mean_nrf: mean(results.iter().filter_map(|r| r.nrf).map(|v| v as f64).collect()),
            total_tu,
            total_gt,
            mean_tu: (n > 0).then(|| total_tu as f64 / n as f64),
            mean_gt: (n > 0).then(|| total_gt / n as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub planner: String,
    pub results: Vec<ScenarioResult>,
    pub single: CategorySummary,
    pub coordinated: CategorySummary,
    pub overall: CategorySummary,
}

impl EvalReport {
    pub fn from_results(planner: &str, mut results: Vec<ScenarioResult>) -> Self {
        results.sort_by_key(|r| r.id);
        let single = CategorySummary::of(results.iter().filter(|r| r.category == Category::Single));
        let coordinated = CategorySummary::of(results.iter().filter(|r| r.category == Category::Coordinated));
        let overall = CategorySummary::of(&results);
        EvalReport {
            planner: planner.to_string(),
            results,
            single,
            coordinated,
            overall,
        }
    }

    /// Plain-text table: one row per category, then failed scenarios.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or("--".to_string(), |v| format!("{v:.2}"));
        let _ = writeln!(
            out,
            "{:<12} {:>5} {:>6} {:>6} {:>8} {:>10} {:>9}",
            "category", "n", "SR", "NRF", "NN", "TU", "GT"
        );
        for (name, c) in [("single", &self.single), ("coordinated", &self.coordinated), ("all", &self.overall)] {
            let nn = match (c.mean_nn, c.nn_interpretable) {
                (Some(v), true) => format!("{v:.2}"),
                (Some(v), false) => format!("({v:.2})"),
                (None, _) => "--".into(),
            };
            let _ = writeln!(
                out,
                "{:<12} {:>5} {:>6.2} {:>6} {:>8} {:>10} {:>9}",
                name,
                c.scenarios,
                c.sr,
                opt(c.mean_nrf),
                nn,
                opt(c.mean_tu),
                opt(c.mean_gt),
            );
        }
        for r in self.results.iter().filter(|r| !r.success) {
            let why = match (&r.error, &r.report) {
                (Some(e), _) => e.clone(),
                (None, Some(rep)) if !rep.violations.is_empty() => {
                    let v = &rep.violations[0];
                    format!("{:?} at tick {}: {}", v.kind, v.tick, v.detail)
                }
                (None, Some(rep)) => format!("{} goal(s) unmet", rep.unmet_goals.len()),
                (None, None) => "no run".into(),
            };
            let _ = writeln!(out, "scenario {:>2} failed: {why}", r.id);
        }
        out
    }
}

/// Full pipeline for one scenario. Planner errors are recorded, not raised.
pub fn evaluate_one(
    scenario: &Scenario,
    planner: &(dyn Fn(&Scenario) -> Result<PlanAttempt, String> + Sync),
    config: &RunConfig,
) -> ScenarioResult {
    let mut result = ScenarioResult {
        id: scenario.id,
        category: scenario.category,
        origin: scenario.origin,
        success: false,
        error: None,
        nn: None,
        nrf: None,
        tu: 0,
        gt: 0.0,
        sim_seconds: 0.0,
        report: None,
    };
    let attempt = match planner(scenario) {
        Ok(a) => a,
        Err(e) => {
            result.error = Some(format!("planner: {e}"));
            return result;
        }
    };
    (result.tu, result.gt) = totals(&attempt.usage);
    result.nrf = analyze_flags(&attempt.sequence).ok().map(|a| a.nrf);
    let plan = match compile(&attempt.sequence, &scenario.param_db()) {
        Ok(p) => p,
        Err(e) => {
            result.error = Some(format!("compile: {e}"));
            return result;
        }
    };
    let started = Instant::now();
    match run_plan(&plan, scenario, config) {
        Ok(mut report) => {
            result.sim_seconds = started.elapsed().as_secs_f64();
            report.metrics.nrf = result.nrf.unwrap_or(0);
            report.metrics.tu = result.tu;
            report.metrics.gt = result.gt;
            result.nn = Some(report.metrics.nn);
            result.success = report.success;
            result.report = Some(report);
        }
        Err(e) => result.error = Some(format!("run: {e}")),
    }
    result
}

/// Evaluates every scenario, spreading them over `workers` threads.
pub fn evaluate(
    planner_name: &str,
    scenarios: &[Scenario],
    planner: &(dyn Fn(&Scenario) -> Result<PlanAttempt, String> + Sync),
    config: &RunConfig,
    workers: usize,
) -> EvalReport {
    let workers = workers.max(1);
    let mut results = Vec::with_capacity(scenarios.len());
    if workers == 1 || scenarios.len() < 2 {
        results.extend(scenarios.iter().map(|s| evaluate_one(s, planner, config)));
    } else {
        let chunk = scenarios.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = scenarios
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|s| evaluate_one(s, planner, config))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                results.extend(h.join().expect("evaluation worker panicked"));
            }
        });
    }
    EvalReport::from_results(planner_name, results)
}

/// The rule planner as a [`PlanAttempt`] source. It uses no tokens.
pub fn rules_attempt(scenario: &Scenario) -> Result<PlanAttempt, String> {
    crate::planner::rule_planner(scenario)
        .map(|sequence| PlanAttempt {
            sequence,
            usage: Vec::new(),
        })
        .map_err(|e| e.to_string())
}
