//! Always-on method mining.
//!
//! Every piece of content (user input, model output, training text) is sent
//! to the model with the extraction prompt. The reply is a line-delimited
//! record:
//!
//! ```text
//! IS_METHOD: yes
//! PROBLEM: questions about re-creating projects in a named software
//! SOLUTION: first check whether the software exists
//! CONFIDENCE: 0.9
//! ```
//!
//! Positive judgments become [`Method`]s with an unrated score card; the
//! extractor's confidence is kept as metadata only.

use std::borrow::Borrow;

use regex::Regex;

use crate::gateway::{Gateway, GatewayError, GatewayRequest};
use crate::model::{ContentSource, ExternalRef, Method, MethodId, Scope, Solution, SolutionPart};
use crate::model::{validate_method, EFFECTIVENESS_PRIOR};
use crate::prompts::Prompts;
use crate::repository::{Repository, RepositoryError};
use crate::tree::PlacementAdvice;

#[derive(Debug, Clone, PartialEq)]
pub struct MethodJudgment {
    pub is_method: bool,
    pub problem_text: Option<String>,
    pub solution_text: Option<String>,
    pub confidence: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractionError {
    #[error("content is empty")]
    EmptyContent,
    #[error(transparent)]
    Transport(#[from] GatewayError),
    #[error("cannot parse extraction reply: {0}")]
    Parse(String),
    #[error("extracted method is invalid: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    IsMethod,
    Problem,
    Solution,
    Confidence,
}

fn field_of(line: &str) -> Option<(Field, &str)> {
    let line = line.trim_start_matches(['-', '*', ' ']);
    let (key, value) = line.split_once(':')?;
    let field = match key.trim().trim_matches('*').to_ascii_uppercase().as_str() {
        "IS_METHOD" => Field::IsMethod,
        "PROBLEM" => Field::Problem,
        "SOLUTION" => Field::Solution,
        "CONFIDENCE" => Field::Confidence,
        _ => return None,
    };
    Some((field, value.trim()))
}

/// Parses a delimited extraction reply. Lines that do not start with a key
/// continue the previous field.
pub fn parse_judgment(reply: &str) -> Result<MethodJudgment, ExtractionError> {
    let mut is_method = None;
    let mut problem: Option<String> = None;
    let mut solution: Option<String> = None;
    let mut confidence = None;
    let mut current = None;

    for line in reply.lines() {
        if let Some((field, value)) = field_of(line) {
            current = Some(field);
            match field {
                Field::IsMethod => {
                    is_method = Some(match value.to_ascii_lowercase().trim_end_matches('.') {
                        "yes" | "true" | "y" => true,
                        "no" | "false" | "n" => false,
                        other => return Err(ExtractionError::Parse(format!("IS_METHOD value {other:?}"))),
                    })
                }
                Field::Problem => problem = Some(value.to_string()),
                Field::Solution => solution = Some(value.to_string()),
                Field::Confidence => {
                    let c: f64 = value
                        .parse()
                        .map_err(|_| ExtractionError::Parse(format!("CONFIDENCE value {value:?}")))?;
                    if !(0.0..=1.0).contains(&c) {
                        return Err(ExtractionError::Parse(format!("CONFIDENCE {c} outside [0,1]")));
                    }
                    confidence = Some(c);
                }
            }
        } else if !line.trim().is_empty() {
            let target = match current {
                Some(Field::Problem) => &mut problem,
                Some(Field::Solution) => &mut solution,
                _ => continue,
            };
            if let Some(text) = target {
                if !text.is_empty() {
                    text.push('\n');
                }
                text.push_str(line.trim());
            }
        }
    }

    let is_method = is_method.ok_or_else(|| ExtractionError::Parse("missing IS_METHOD".into()))?;
    let nonempty = |s: Option<String>| s.filter(|s| !s.trim().is_empty());
    let problem = nonempty(problem);
    let solution = nonempty(solution);
    if is_method {
        if problem.is_none() || solution.is_none() {
            return Err(ExtractionError::Parse("positive judgment without PROBLEM and SOLUTION".into()));
        }
        let confidence =
            confidence.ok_or_else(|| ExtractionError::Parse("missing CONFIDENCE".into()))?;
        Ok(MethodJudgment {
            is_method,
            problem_text: problem,
            solution_text: solution,
            confidence,
        })
    } else {
        Ok(MethodJudgment {
            is_method,
            problem_text: None,
            solution_text: None,
            confidence: confidence.unwrap_or(0.0),
        })
    }
}

/// Asks the model whether `content` carries a method.
pub fn classify_content(
    gateway: &dyn Gateway,
    prompts: &Prompts,
    content: &str,
) -> Result<MethodJudgment, ExtractionError> {
    if content.trim().is_empty() {
        return Err(ExtractionError::EmptyContent);
    }
    let reply = gateway.complete(&GatewayRequest::user(prompts.render_extract(content)))?;
    parse_judgment(&reply)
}

fn url_regex() -> Regex {
    Regex::new(r"https?://[^\s)>\]]+").expect("static regex")
}

fn step_regex() -> Regex {
    Regex::new(r"^\s*(?:\d+[.)]|[-*])\s+(.*)$").expect("static regex")
}

/// Turns solution text into parts. Numbered or bulleted lines become one part
/// each; anything else is a single part with role `whole`. URLs become
/// external references.
pub fn solution_from_text(text: &str) -> Solution {
    let step = step_regex();
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let steps: Vec<&str> = lines
        .iter()
        .filter_map(|l| step.captures(l).map(|c| c.get(1).expect("group").as_str().trim()))
        .filter(|s| !s.is_empty())
        .collect();
    let parts = if steps.len() >= 2 && steps.len() == lines.len() {
        steps
            .iter()
            .enumerate()
            .map(|(i, s)| SolutionPart::new(format!("step{}", i + 1), *s, EFFECTIVENESS_PRIOR))
            .collect()
    } else {
        vec![SolutionPart::new("whole", lines.join(" "), EFFECTIVENESS_PRIOR)]
    };
    let urls = url_regex();
    let mut solution = Solution::new(parts);
    for part in &solution.parts {
        for m in urls.find_iter(&part.text) {
            let descriptor = part.text.replace(m.as_str(), "").trim().to_string();
            solution.external_refs.push(ExternalRef {
                descriptor: if descriptor.is_empty() { part.role.clone() } else { descriptor },
                link: m.as_str().to_string(),
            });
        }
    }
    solution
}

fn build_method(
    gateway: &dyn Gateway,
    judgment: &MethodJudgment,
    source: ContentSource,
    scope: &Scope,
) -> Result<Method, ExtractionError> {
    let problem = judgment.problem_text.as_deref().expect("positive judgment");
    let solution = solution_from_text(judgment.solution_text.as_deref().expect("positive judgment"));
    let mut method = Method::new(gateway.problem(problem), solution, scope.clone(), source)
        .map_err(|e| ExtractionError::Invalid(e.to_string()))?;
    method.extraction_confidence = Some(judgment.confidence);
    let violations = validate_method(&method);
    if !violations.is_empty() {
        return Err(ExtractionError::Invalid(
            violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
        ));
    }
    Ok(method)
}

#[derive(Debug, Default)]
pub struct CandidateSet {
    pub candidates: Vec<Method>,
    /// Items that could not be judged, by input position.
    pub skipped: Vec<(usize, String)>,
}

/// Classifies every item and builds a method from each positive judgment.
/// Per-item failures are recorded in `skipped`, never returned.
pub fn extract_candidates(
    gateway: &dyn Gateway,
    prompts: &Prompts,
    contents: &[(&str, ContentSource)],
    scope: &Scope,
) -> CandidateSet {
    let mut set = CandidateSet::default();
    for (i, (text, source)) in contents.iter().enumerate() {
        let result = classify_content(gateway, prompts, text)
            .and_then(|j| j.is_method.then(|| build_method(gateway, &j, *source, scope)).transpose());
        match result {
            Ok(Some(method)) => set.candidates.push(method),
            Ok(None) => {}
            Err(e) => {
                tracing::warn!(item = i, "extraction skipped: {e}");
                set.skipped.push((i, e.to_string()));
            }
        }
    }
    set
}

/// Whether a method survives the external filter. Unrated methods always do.
pub fn passes_filter(method: &Method, tau: f64) -> bool {
    !method.score.rated || method.score.effectiveness >= tau
}

/// Keeps rated methods scoring at least `tau` and every unrated method, in
/// input order.
pub fn filter_candidates<M: Borrow<Method>>(candidates: Vec<M>, tau: f64) -> Vec<M> {
    candidates
        .into_iter()
        .filter(|m| passes_filter(m.borrow(), tau))
        .collect()
}

/// Extracts, filters and stores methods found in `content`. Returns the ids
/// that were newly stored.
pub fn ingest(
    repository: &mut Repository,
    gateway: &dyn Gateway,
    prompts: &Prompts,
    content: &str,
    source: ContentSource,
    scope: &Scope,
    tau: f64,
) -> Result<Vec<MethodId>, RepositoryError> {
    let set = extract_candidates(gateway, prompts, &[(content, source)], scope);
    let mut stored = Vec::new();
    for method in filter_candidates(set.candidates, tau) {
        if repository.contains(&method.id) {
            continue;
        }
        let id = method.id.clone();
        let (_, inserted) = repository.insert(method, &PlacementAdvice::Automatic)?;
        if inserted {
            stored.push(id);
        }
    }
    Ok(stored)
}
