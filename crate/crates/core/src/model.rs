//! Domain types shared by every module.
//!
//! A [`Method`] pairs a problem statement with an ordered solution. Methods
//! are immutable values; the [`Repository`](crate::Repository) owns them and
//! is the only place they change.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::floatfmt;

/// Effectiveness assigned to a method that has never been ranked.
pub const EFFECTIVENESS_PRIOR: f64 = 0.5;

/// Tolerance on the L2 norm of a feature vector.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Content-hash identifier of a method (lowercase hex SHA-256).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MethodId(String);

impl MethodId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// First 12 hex digits, enough for display.
    pub fn short(&self) -> &str {
        &self.0[..self.0.len().min(12)]
    }

    /// Wraps an already computed digest string. No validation is done.
    pub fn from_hex(hex: impl Into<String>) -> Self {
        Self(hex.into())
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("problem text must not be empty")]
    EmptyProblem,
}

/// Computes the identifier of a method from its problem text and the texts of
/// its solution parts, in order.
///
/// Every field is written with a little-endian `u64` length prefix, so no two
/// distinct field sequences produce the same byte stream.
pub fn method_id<S: AsRef<str>>(problem_text: &str, parts: &[S]) -> Result<MethodId, ModelError> {
    if problem_text.trim().is_empty() {
        return Err(ModelError::EmptyProblem);
    }
    let mut hasher = Sha256::new();
    hasher.update(b"methodforge/v1");
    write_field(&mut hasher, problem_text.as_bytes());
    hasher.update((parts.len() as u64).to_le_bytes());
    for part in parts {
        write_field(&mut hasher, part.as_ref().as_bytes());
    }
    Ok(MethodId(hex::encode(hasher.finalize())))
}

fn write_field(hasher: &mut Sha256, bytes: &[u8]) {
    hasher.update((bytes.len() as u64).to_le_bytes());
    hasher.update(bytes);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodFormat {
    /// Structured prompt processed entirely by the model.
    InternalPrompt,
    /// Implemented outside the model; only its descriptors are sent along.
    ExternalExecutable,
}

/// Storage visibility of a method.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    User(String),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Global => f.write_str("global"),
            Scope::User(user) => write!(f, "user:{user}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentSource {
    TrainingData,
    LlmOutput,
    UserInput,
}

/// Embedding and token bag of a problem text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFeatures {
    #[serde(with = "floatfmt::vec")]
    pub vector: Vec<f64>,
    pub tokens: BTreeMap<String, u32>,
}

impl ProblemFeatures {
    pub fn dimension(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.vector.iter().all(|x| *x == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemStatement {
    pub text: String,
    pub features: ProblemFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPart {
    pub role: String,
    pub text: String,
    #[serde(with = "floatfmt::scalar")]
    pub part_score: f64,
}

impl SolutionPart {
    pub fn new(role: impl Into<String>, text: impl Into<String>, part_score: f64) -> Self {
        Self {
            role: role.into(),
            text: text.into(),
            part_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalRef {
    pub descriptor: String,
    pub link: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub parts: Vec<SolutionPart>,
    #[serde(default)]
    pub external_refs: Vec<ExternalRef>,
}

impl Solution {
    pub fn new(parts: Vec<SolutionPart>) -> Self {
        Self {
            parts,
            external_refs: Vec::new(),
        }
    }

    pub fn part_texts(&self) -> Vec<&str> {
        self.parts.iter().map(|p| p.text.as_str()).collect()
    }

    /// Parts joined with single spaces.
    pub fn summary(&self) -> String {
        self.part_texts().join(" ")
    }
}

/// Feedback bookkeeping for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    #[serde(with = "floatfmt::scalar")]
    pub effectiveness: f64,
    pub rated: bool,
    pub times_used: u64,
    pub times_top_ranked: u64,
}

impl Default for ScoreCard {
    fn default() -> Self {
        Self {
            effectiveness: EFFECTIVENESS_PRIOR,
            rated: false,
            times_used: 0,
            times_top_ranked: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub id: MethodId,
    pub problem: ProblemStatement,
    pub solution: Solution,
    pub format: MethodFormat,
    pub scope: Scope,
    pub source: ContentSource,
    /// Repository-scoped insertion sequence number.
    pub created_at: u64,
    pub score: ScoreCard,
    /// Self-reported confidence of the extractor. Metadata only.
    #[serde(default, with = "floatfmt::option")]
    pub extraction_confidence: Option<f64>,
}

impl Method {
    /// Builds a method and derives its id. Format is external-executable iff
    /// the solution carries external references.
    pub fn new(
        problem: ProblemStatement,
        solution: Solution,
        scope: Scope,
        source: ContentSource,
    ) -> Result<Self, ModelError> {
        let id = method_id(&problem.text, &solution.part_texts())?;
        let format = if solution.external_refs.is_empty() {
            MethodFormat::InternalPrompt
        } else {
            MethodFormat::ExternalExecutable
        };
        Ok(Self {
            id,
            problem,
            solution,
            format,
            scope,
            source,
            created_at: 0,
            score: ScoreCard::default(),
            extraction_confidence: None,
        })
    }
}

/// `refiner ⇒ target`: the refiner method refines or validates the target.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RefinementEdge {
    pub refiner_id: MethodId,
    pub target_id: MethodId,
}

/// A broken invariant reported by [`validate_method`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyProblemText,
    EmptyParts,
    EmptyPartText(usize),
    EmptyPartRole(usize),
    PartScoreOutOfRange(usize),
    ExternalRefRequired,
    IdMismatch,
    FeatureNorm,
    EffectivenessOutOfRange,
    UnratedNotPrior,
    TopRankedExceedsUsed,
    ConfidenceOutOfRange,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyProblemText => f.write_str("problem text non-empty"),
            Violation::EmptyParts => f.write_str("parts non-empty"),
            Violation::EmptyPartText(i) => write!(f, "part {i} text non-empty"),
            Violation::EmptyPartRole(i) => write!(f, "part {i} role non-empty"),
            Violation::PartScoreOutOfRange(i) => write!(f, "part {i} score in [0,1]"),
            Violation::ExternalRefRequired => f.write_str("external ref required"),
            Violation::IdMismatch => f.write_str("id matches content"),
            Violation::FeatureNorm => f.write_str("features unit norm or zero"),
            Violation::EffectivenessOutOfRange => f.write_str("effectiveness in [0,1]"),
            Violation::UnratedNotPrior => f.write_str("unrated effectiveness equals prior"),
            Violation::TopRankedExceedsUsed => f.write_str("times_top_ranked <= times_used"),
            Violation::ConfidenceOutOfRange => f.write_str("extraction confidence in [0,1]"),
        }
    }
}

fn in_unit_interval(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// Lists every invariant the method breaks. An empty list means the method is
/// well formed.
pub fn validate_method(method: &Method) -> Vec<Violation> {
    let mut out = Vec::new();
    if method.problem.text.trim().is_empty() {
        out.push(Violation::EmptyProblemText);
    }
    if method.solution.parts.is_empty() {
        out.push(Violation::EmptyParts);
    }
    for (i, part) in method.solution.parts.iter().enumerate() {
        if part.text.trim().is_empty() {
            out.push(Violation::EmptyPartText(i));
        }
        if part.role.trim().is_empty() {
            out.push(Violation::EmptyPartRole(i));
        }
        if !in_unit_interval(part.part_score) {
            out.push(Violation::PartScoreOutOfRange(i));
        }
    }
    if method.format == MethodFormat::ExternalExecutable && method.solution.external_refs.is_empty()
    {
        out.push(Violation::ExternalRefRequired);
    }
    match method_id(&method.problem.text, &method.solution.part_texts()) {
        Ok(id) if id == method.id => {}
        Ok(_) => out.push(Violation::IdMismatch),
        // already reported as EmptyProblemText
        Err(_) => {}
    }
    let features = &method.problem.features;
    if !features.is_zero() && (features.norm() - 1.0).abs() > NORM_TOLERANCE {
        out.push(Violation::FeatureNorm);
    }
    let score = &method.score;
    if !in_unit_interval(score.effectiveness) {
        out.push(Violation::EffectivenessOutOfRange);
    }
    if !score.rated && score.effectiveness != EFFECTIVENESS_PRIOR {
        out.push(Violation::UnratedNotPrior);
    }
    if score.times_top_ranked > score.times_used {
        out.push(Violation::TopRankedExceedsUsed);
    }
    if let Some(c) = method.extraction_confidence {
        if !in_unit_interval(c) {
            out.push(Violation::ConfidenceOutOfRange);
        }
    }
    out
}
