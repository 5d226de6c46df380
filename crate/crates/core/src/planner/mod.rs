//! Planning front end: prompt assembly and a chat-completions client for
//! model-generated plans, one round of human feedback per stage, and a
//! deterministic rule planner for the scenario catalog.

mod llm;
mod prompt;
mod rules;

use thiserror::Error;

use crate::actionseq::{parse, ActionSequence};

pub use llm::{
    extract_fenced, request, totals, FakeTransport, HttpRequest, HttpResponse, HttpTransport, LlmEndpointConfig,
    Transcript, Transport, TransportError, UsageRecord,
};
pub use prompt::{
    build_prompt, refine, render_default_flags, sequence_context, tree_context, tree_example, Attachment,
    AttachmentKind, ChatMessage, HitlFeedback, PromptBundle, PromptContext, Stage, CUSTOM_NODES, FLAG_RULES,
    TEMPLATE_TEXT,
};
pub use rules::{flag_prefix, rule_planner};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlannerError {
    #[error("scenario not supported by the rule planner: {0}")]
    UnsupportedScenario(String),
    #[error("prompt context is missing {0}")]
    MissingContext(AttachmentKind),
    #[error("the {0} stage already used its refinement")]
    BudgetExhausted(Stage),
    #[error("feedback is empty")]
    EmptyFeedback,
    #[error("feedback for {feedback} given to a {bundle} prompt")]
    StageMismatch { bundle: Stage, feedback: Stage },
    #[error("environment variable {0} holds no token")]
    AuthMissing(String),
    #[error("endpoint answered HTTP {0}")]
    HttpError(u16),
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed completion: {0}")]
    MalformedResponse(String),
    #[error("bad endpoint config: {0}")]
    Config(String),
    #[error("no usable artifact: {0}")]
    NoArtifact(String),
}

/// What the reviewer sees after a model answer.
pub struct Review<'a> {
    /// The extracted artifact, if any.
    pub artifact: Option<&'a str>,
    /// Why the artifact did not parse, if it did not.
    pub problem: Option<String>,
}

/// Result of a model-planned sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutcome {
    pub sequence: ActionSequence,
    pub text: String,
    pub usage: Vec<UsageRecord>,
    pub transcripts: Vec<Transcript>,
}

fn parse_artifact(raw: &str) -> (Option<String>, Result<ActionSequence, String>) {
    match extract_fenced(raw) {
        None => (None, Err("the answer has no fenced code block".into())),
        Some(text) => {
            let parsed = parse(&text).map_err(|e| e.to_string());
            (Some(text), parsed)
        }
    }
}

/// Stage one through the model. After the first answer, `review` may return
/// feedback; if it does, one refined request follows. An answer that does
/// not parse goes to review too, and is an error if no feedback fixes it.
pub fn plan_with_model(
    instruction: &str,
    context: &PromptContext,
    config: &LlmEndpointConfig,
    transport: &dyn Transport,
    review: &mut dyn FnMut(&Review) -> Option<String>,
) -> Result<SequenceOutcome, PlannerError> {
    let mut bundle = build_prompt(Stage::ActionSequence, instruction, context)?;
    let mut usage = Vec::new();
    let mut transcripts = Vec::new();
    loop {
        let (raw, u) = request(config, &bundle, transport)?;
        usage.push(u.clone());
        transcripts.push(Transcript {
            bundle: bundle.clone(),
            raw: raw.clone(),
            usage: u,
        });
        let (artifact, parsed) = parse_artifact(&raw);
        let feedback = if bundle.attempt < 2 {
            review(&Review {
                artifact: artifact.as_deref(),
                problem: parsed.as_ref().err().cloned(),
            })
        } else {
            None
        };
        match (feedback, parsed) {
            (Some(fb), _) => {
                bundle = refine(
                    &bundle,
                    &HitlFeedback {
                        stage: Stage::ActionSequence,
                        feedback: fb,
                        artifact: artifact.unwrap_or(raw),
                    },
                )?;
            }
            (None, Ok(sequence)) => {
                return Ok(SequenceOutcome {
                    sequence,
                    text: artifact.unwrap_or_default(),
                    usage,
                    transcripts,
                })
            }
            (None, Err(problem)) => return Err(PlannerError::NoArtifact(problem)),
        }
    }
}
