//! Scripted replays scored by cosine similarity to a reference sentence.
//!
//! A scenario file:
//!
//! ```toml
//! name = "sufhongkey"
//! reference_sentence = "Verify whether SuHongKey is a real and identifiable piece of software."
//! trials = 20
//! fixture = "../fixtures/mock.toml"   # relative to this file
//!
//! [[steps]]
//! kind = "prompt"
//! label = "NoMethod"
//! text = "..."
//!
//! [[steps]]
//! kind = "teach"
//! text = "..."
//!
//! [[steps]]
//! kind = "rank"
//! ordering = [2, 1]
//! ```
//!
//! Every `prompt` and `teach` step runs in a fresh session. A `rank` step
//! ranks the outputs of the step before it. `reset` clears the repository.
//! The chosen output of a labelled prompt is scored for that label.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::gateway::{cosine, Embedder, Gateway};
use crate::orchestrator::{build_gateway, Orchestrator, OrchestratorError, SessionTranscript};
use crate::prompts::Prompts;
use crate::repository::Repository;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Prompt,
    Teach,
    Rank,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub kind: StepKind,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub ordering: Option<Vec<usize>>,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub reference_sentence: String,
    pub trials: usize,
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    pub steps: Vec<Step>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("setup failed: {0}")]
    Setup(#[from] OrchestratorError),
    #[error("every trial failed; first error: {0}")]
    AllTrialsFailed(String),
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| EvalError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Loads a scenario; a relative fixture path is resolved against the
    /// scenario file's directory.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut scenario = Self::parse(&text)?;
        if let (Some(fixture), Some(dir)) = (&mut scenario.fixture, path.parent()) {
            if fixture.is_relative() {
                *fixture = dir.join(&*fixture);
            }
        }
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let invalid = |m: String| Err(EvalError::Invalid(m));
        if self.trials == 0 {
            return invalid("trials must be at least 1".into());
        }
        if self.reference_sentence.trim().is_empty() {
            return invalid("reference_sentence must not be empty".into());
        }
        let mut labels = Vec::new();
        let mut rankable = false;
        for (i, step) in self.steps.iter().enumerate() {
            let n = i + 1;
            match step.kind {
                StepKind::Prompt | StepKind::Teach => {
                    if step.text.as_deref().is_none_or(|t| t.trim().is_empty()) {
                        return invalid(format!("step {n}: text is required"));
                    }
                    if step.ordering.is_some() {
                        return invalid(format!("step {n}: ordering only applies to rank steps"));
                    }
                    if let Some(label) = &step.label {
                        if step.kind == StepKind::Teach {
                            return invalid(format!("step {n}: teach steps are not scored"));
                        }
                        if labels.contains(label) {
                            return invalid(format!("step {n}: label {label:?} used twice"));
                        }
                        labels.push(label.clone());
                    }
                    rankable = true;
                }
                StepKind::Rank => {
                    if step.ordering.as_ref().is_none_or(Vec::is_empty) {
                        return invalid(format!("step {n}: ordering is required"));
                    }
                    if !rankable {
                        return invalid(format!("step {n}: nothing to rank"));
                    }
                    if step.text.is_some() || step.label.is_some() {
                        return invalid(format!("step {n}: rank steps take only an ordering"));
                    }
                    rankable = false;
                }
                StepKind::Reset => {
                    if step.text.is_some() || step.ordering.is_some() || step.label.is_some() {
                        return invalid(format!("step {n}: reset takes no fields"));
                    }
                    rankable = false;
                }
            }
        }
        if labels.is_empty() {
            return invalid("no step carries a label, so nothing is scored".into());
        }
        Ok(())
    }

    /// Condition labels in step order.
    pub fn labels(&self) -> Vec<String> {
        self.steps.iter().filter_map(|s| s.label.clone()).collect()
    }
}

/// Raw cosine between the embeddings of two texts, in `[-1, 1]`.
pub fn score(embedder: &Embedder, response: &str, reference: &str) -> f64 {
    cosine(&embedder.embed(response), &embedder.embed(reference))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub label: String,
    pub mean: f64,
    pub per_trial: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub reference_sentence: String,
    pub trials: usize,
    pub conditions: Vec<ConditionResult>,
    pub failures: Vec<TrialFailure>,
}

impl EvalReport {
    pub fn condition(&self, label: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    /// `(label, chosen output text, score)` in step order.
    pub scored: Vec<(String, String, f64)>,
    pub transcripts: Vec<SessionTranscript>,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvalReport,
    pub trials: Vec<TrialOutcome>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Run trials on separate threads, each with its own repository.
    pub parallel: bool,
}

fn run_trial(
    scenario: &Scenario,
    orchestrator: &mut Orchestrator,
    trial: usize,
) -> Result<TrialOutcome, OrchestratorError> {
    orchestrator.reset_all()?;
    let embedder = orchestrator.repository().embedder();
    let mut scored = Vec::new();
    let mut last: Option<(String, usize)> = None;
    for step in &scenario.steps {
        match step.kind {
            StepKind::Prompt | StepKind::Teach => {
                let session = orchestrator.create_session(None);
                let text = step.text.as_deref().expect("validated");
                let response = orchestrator.handle_query(&session, text)?;
                if let Some(label) = &step.label {
                    let chosen = &response.outputs[0].text;
                    let s = score(&embedder, chosen, &scenario.reference_sentence);
                    scored.push((label.clone(), chosen.clone(), s));
                }
                last = Some((session, response.turn));
            }
            StepKind::Rank => {
                let (session, turn) = last.take().expect("validated");
                orchestrator.submit_ranking(&session, turn, step.ordering.as_deref().expect("validated"))?;
            }
            StepKind::Reset => {
                orchestrator.reset()?;
                last = None;
            }
        }
    }
    Ok(TrialOutcome {
        trial,
        scored,
        transcripts: orchestrator.sessions().cloned().collect(),
    })
}

/// Replays the scenario `scenario.trials` times, clearing the repository at
/// the start of each trial. The scenario's fixture, if any, replaces the
/// configured one. The configured repository file is never touched.
pub fn run_scenario(scenario: &Scenario, config: &Config, options: RunOptions) -> Result<EvalRun, EvalError> {
    scenario.validate()?;
    let mut config = config.clone();
    config.repository = None;
    if let Some(f) = &scenario.fixture {
        config.fixture = Some(f.clone());
    }
    let gateway = build_gateway(&config)?;
    let prompts = match &config.prompt_dir {
        Some(dir) => Prompts::load_overrides(dir).map_err(OrchestratorError::from)?,
        None => Prompts::default(),
    };
    let make = |gateway: Arc<dyn Gateway>| {
        Orchestrator::new(
            config.clone(),
            gateway,
            prompts.clone(),
            Repository::new(config.embedder(), config.tree_params()),
        )
    };

    let results: Vec<Result<TrialOutcome, OrchestratorError>> = if options.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..scenario.trials)
                .map(|t| {
                    let mut orch = make(gateway.clone());
                    s.spawn(move || run_trial(scenario, &mut orch, t))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("trial thread panicked")).collect()
        })
    } else {
        let mut orch = make(gateway);
        (0..scenario.trials).map(|t| run_trial(scenario, &mut orch, t)).collect()
    };

    let mut trials = Vec::new();
    let mut failures = Vec::new();
    for (t, r) in results.into_iter().enumerate() {
        match r {
            Ok(outcome) => trials.push(outcome),
            Err(e) => {
                tracing::warn!(trial = t, "trial aborted: {e}");
                failures.push(TrialFailure {
                    trial: t,
                    message: e.to_string(),
                });
            }
        }
    }
    if trials.is_empty() {
        return Err(EvalError::AllTrialsFailed(failures[0].message.clone()));
    }
    let conditions = scenario
        .labels()
        .into_iter()
        .map(|label| {
            let per_trial: Vec<f64> = trials
                .iter()
                .filter_map(|t| t.scored.iter().find(|(l, _, _)| *l == label).map(|(_, _, s)| *s))
                .collect();
            let mean = per_trial.iter().sum::<f64>() / per_trial.len() as f64;
            ConditionResult { label, mean, per_trial }
        })
        .collect();
    Ok(EvalRun {
        report: EvalReport {
            scenario: scenario.name.clone(),
            reference_sentence: scenario.reference_sentence.clone(),
            trials: scenario.trials,
            conditions,
            failures,
        },
        trials,
    })
}

pub const REPORT_HEADER: &str = "Scores are raw cosine similarities between each chosen response and the reference sentence, \
using the deterministic hashed embedder. The ordering between conditions is meaningful; absolute values depend \
on the scripted fixture and are not comparable to scores from a hosted model and embedding service.";

/// An aligned text table and the JSON results document.
pub fn report_render(report: &EvalReport) -> (String, String) {
    let width = report
        .conditions
        .iter()
        .map(|c| c.label.len())
        .max()
        .unwrap_or(0)
        .max("condition".len());
    let mut table = format!("scenario: {}\nreference: {}\n{REPORT_HEADER}\n\n", report.scenario, report.reference_sentence);
    table.push_str(&format!("{:<width$}  {:>6}  {:>8}  {:>8}  {:>8}\n", "condition", "trials", "mean", "min", "max"));
    for c in &report.conditions {
        let min = c.per_trial.iter().copied().fold(f64::INFINITY, f64::min);
        let max = c.per_trial.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        table.push_str(&format!(
            "{:<width$}  {:>6}  {:>8.4}  {:>8.4}  {:>8.4}\n",
            c.label,
            c.per_trial.len(),
            c.mean,
            min,
            max
        ));
    }
    for f in &report.failures {
        table.push_str(&format!("trial {} failed: {}\n", f.trial, f.message));
    }
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    (table, json)
}
