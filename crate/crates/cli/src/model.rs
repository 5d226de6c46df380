//! Model-backed planning: endpoint config, replay files and human review.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;
use serde::Deserialize;
use sitebt::flagcore::default_registry;
use sitebt::planner::{
    plan_with_model, sequence_context, FakeTransport, HttpTransport, LlmEndpointConfig, Review, SequenceOutcome,
    Transcript, Transport,
};
use sitebt::scenario::Scenario;

use crate::fail::{planner_code, Code, Fail, INPUT};

/// Token variable used when replaying without an endpoint config.
pub const REPLAY_AUTH_ENV: &str = "SITEBT_LLM_TOKEN";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Hitl {
    Interactive,
    /// A feedback file for `plan`, a directory of them for `eval`.
    Scripted(PathBuf),
    Off,
}

impl FromStr for Hitl {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interactive" => Ok(Hitl::Interactive),
            "off" => Ok(Hitl::Off),
            _ => match s.strip_prefix("scripted:") {
                Some(p) if !p.is_empty() => Ok(Hitl::Scripted(PathBuf::from(p))),
                _ => Err(format!("expected interactive, off or scripted:PATH, got {s:?}")),
            },
        }
    }
}

/// Replay files hold either saved transcripts or bare reply texts.
#[derive(Deserialize)]
#[serde(untagged)]
enum ReplayEntry {
    Raw(String),
    Saved(Transcript),
}

pub fn load_replay(path: &Path) -> Result<FakeTransport, Fail> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .code(INPUT)?;
    let entries: Vec<ReplayEntry> = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a replay file", path.display()))
        .code(INPUT)?;
    Ok(entries.iter().fold(FakeTransport::new(), |t, e| match e {
        ReplayEntry::Raw(raw) => t.reply(raw),
        ReplayEntry::Saved(tr) => t.reply(&tr.raw),
    }))
}

/// Where model answers come from.
pub struct ModelSource {
    pub config: LlmEndpointConfig,
    pub replay: Option<PathBuf>,
}

impl ModelSource {
    pub fn new(config: Option<&Path>, replay: Option<PathBuf>) -> Result<Self, Fail> {
        let config = match (config, &replay) {
            (Some(p), _) => LlmEndpointConfig::load(p).map_err(|e| Fail {
                code: planner_code(&e),
                error: e.into(),
            })?,
            (None, Some(_)) => LlmEndpointConfig {
                base_url: "http://replay.invalid/v1".into(),
                model: "replay".into(),
                auth_env: REPLAY_AUTH_ENV.into(),
                max_tokens: 4096,
                timeout_secs: 60.0,
                retries: 0,
            },
            (None, None) => return Err(Fail::input("--planner llm needs --llm-config or --replay")),
        };
        if replay.is_some() && std::env::var(&config.auth_env).map_or(true, |v| v.is_empty()) {
            // nothing leaves the process during a replay
            std::env::set_var(&config.auth_env, "replay");
        }
        Ok(ModelSource { config, replay })
    }

    /// Plans one instruction. `replay` overrides the source's own path,
    /// for per-scenario replay files.
    pub fn plan(
        &self,
        instruction: &str,
        scenario: &Scenario,
        replay: Option<&Path>,
        review: &mut dyn FnMut(&Review) -> Option<String>,
    ) -> Result<SequenceOutcome, Fail> {
        let transport: Box<dyn Transport> = match replay.or(self.replay.as_deref()) {
            Some(p) => Box::new(load_replay(p)?),
            None => Box::new(HttpTransport),
        };
        let ctx = sequence_context(&default_registry(scenario.place_names()));
        plan_with_model(instruction, &ctx, &self.config, transport.as_ref(), review).map_err(|e| Fail {
            code: planner_code(&e),
            error: e.into(),
        })
    }
}

/// Feedback lines in file order; a blank line or the end of the file
/// accepts the answer.
pub fn scripted(path: &Path) -> Result<impl FnMut(&Review) -> Option<String>, Fail> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading feedback {}", path.display()))
        .code(INPUT)?;
    let mut lines: Vec<String> = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .map(|l| l.trim().to_string())
        .collect();
    lines.reverse();
    Ok(move |_: &Review| lines.pop().filter(|l| !l.is_empty()))
}

/// Shows the answer on stderr and reads one feedback line from stdin.
pub fn interactive(review: &Review) -> Option<String> {
    let mut err = io::stderr().lock();
    let _ = writeln!(err, "--- proposed action sequence ---");
    let _ = writeln!(err, "{}", review.artifact.unwrap_or("(no fenced block in the answer)").trim_end());
    if let Some(p) = &review.problem {
        let _ = writeln!(err, "problem: {p}");
    }
    let _ = write!(err, "feedback (empty line accepts): ");
    let _ = err.flush();
    let mut line = String::new();
    io::stdin().lock().read_line(&mut line).ok()?;
    let line = line.trim();
    (!line.is_empty()).then(|| line.to_string())
}

pub fn no_review(_: &Review) -> Option<String> {
    None
}
