//! The query loop: retrieve, filter, select, apply, rank, learn.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::composition::{apply_method, ApplicationRecord, CompositionError};
use crate::config::Config;
use crate::extraction::{filter_candidates, ingest};
use crate::gateway::{BackendKind, Gateway, GatewayError, GatewayRequest, LiveBackend, MockBackend, MockFixture};
use crate::model::{ContentSource, Method, MethodId, ProblemStatement, Scope, ScoreCard};
use crate::persistence::{self, PersistenceError};
use crate::prompts::Prompts;
use crate::ranking::{internal_select, rank_by_utility, record_feedback, FeedbackError, RankedOutcome, SelectionError};
use crate::repository::{Repository, RepositoryError};
use crate::tree::{NodeId, PlacementAdvice};

/// Fixture used by the mock backend when the config names none.
pub const BUNDLED_FIXTURE: &str = include_str!("../fixtures/mock.toml");

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("session {session} has no turn {turn}")]
    TurnNotFound { session: String, turn: usize },
    #[error("turn {turn} of session {session} is already ranked")]
    AlreadyRanked { session: String, turn: usize },
    #[error("invalid ordering: {0}")]
    InvalidOrdering(String),
    #[error("method {0} not found")]
    MethodNotFound(MethodId),
    #[error("query text is empty")]
    EmptyQuery,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Repository(#[from] RepositoryError),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<CompositionError> for OrchestratorError {
    fn from(e: CompositionError) -> Self {
        match e {
            CompositionError::Gateway(g) => Self::Gateway(g),
            CompositionError::Repository(r) => Self::Repository(r),
            other => Self::InvalidOrdering(other.to_string()),
        }
    }
}

impl OrchestratorError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::SessionNotFound(_) => "session_not_found",
            Self::TurnNotFound { .. } => "turn_not_found",
            Self::AlreadyRanked { .. } => "already_ranked",
            Self::InvalidOrdering(_) => "invalid_ordering",
            Self::MethodNotFound(_) => "method_not_found",
            Self::EmptyQuery => "empty_query",
            Self::Gateway(_) => "gateway_error",
            Self::Selection(_) => "selection_error",
            Self::Feedback(_) => "invalid_ordering",
            Self::Repository(_) => "repository_error",
            Self::Persistence(_) => "persistence_error",
            Self::Config(_) => "invalid_config",
            Self::Io(_) => "io_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutput {
    /// Method behind the output; `None` for a plain completion.
    pub method_id: Option<MethodId>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub user_input: String,
    /// Ids returned by retrieval, before filtering.
    pub retrieved_ids: Vec<MethodId>,
    /// Ids that survived the external filter.
    pub filtered_ids: Vec<MethodId>,
    pub internal_choice: Option<MethodId>,
    pub injected_method_ids: Vec<MethodId>,
    pub candidate_outputs: Vec<CandidateOutput>,
    /// 0-based index into `candidate_outputs`.
    pub chosen_output: usize,
    pub fallback_used: bool,
    /// Ids newly stored by extraction during this turn.
    pub extracted_ids: Vec<MethodId>,
    /// Output numbers (1-based) best first, as submitted.
    pub ordering: Option<Vec<usize>>,
    pub ranking: Option<RankedOutcome>,
    #[serde(skip)]
    applied: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub session_id: String,
    pub user: Option<String>,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// 1-based number used when ranking.
    pub tag: usize,
    pub method_id: Option<MethodId>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub turn: usize,
    pub outputs: Vec<OutputEntry>,
    pub applied_method_ids: Vec<MethodId>,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReceipt {
    pub updated: Vec<(MethodId, ScoreCard)>,
    /// Set when the winning method had to be stored again.
    pub reinserted: Option<MethodId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub id: MethodId,
    pub problem: String,
    pub scope: Scope,
    pub format: crate::model::MethodFormat,
    pub source: ContentSource,
    pub score: ScoreCard,
    pub node: Option<NodeId>,
    pub created_at: u64,
}

impl MethodSummary {
    fn new(repo: &Repository, m: &Method) -> Self {
        Self {
            id: m.id.clone(),
            problem: m.problem.text.clone(),
            scope: m.scope.clone(),
            format: m.format,
            source: m.source,
            score: m.score.clone(),
            node: repo.placement(&m.id).map(|(_, n)| n),
            created_at: m.created_at,
        }
    }
}

/// Builds the backend named by the config. The mock uses the configured
/// fixture, or the bundled one if none is set.
pub fn build_gateway(config: &Config) -> Result<Arc<dyn Gateway>, OrchestratorError> {
    match config.backend {
        BackendKind::Mock => {
            let fixture = match &config.fixture {
                Some(path) => MockFixture::load(path)?,
                None => MockFixture::parse(BUNDLED_FIXTURE)?,
            };
            Ok(Arc::new(MockBackend::new(fixture, config.embedder())?))
        }
        BackendKind::Live => Ok(Arc::new(LiveBackend::from_env(config.live.clone(), config.embedder())?)),
    }
}

pub struct Orchestrator {
    repo: Repository,
    gateway: Arc<dyn Gateway>,
    config: Config,
    prompts: Prompts,
    sessions: BTreeMap<String, SessionTranscript>,
    next_session: u64,
    next_application: u64,
    applications: Vec<ApplicationRecord>,
}

impl Orchestrator {
    pub fn new(config: Config, gateway: Arc<dyn Gateway>, prompts: Prompts, repo: Repository) -> Self {
        Self {
            repo,
            gateway,
            config,
            prompts,
            sessions: BTreeMap::new(),
            next_session: 1,
            next_application: 0,
            applications: Vec::new(),
        }
    }

    /// Gateway, prompts and repository as described by `config`. An existing
    /// repository file is loaded; a missing one starts empty.
    pub fn from_config(config: Config) -> Result<Self, OrchestratorError> {
        config.validate()?;
        let gateway = build_gateway(&config)?;
        let prompts = match &config.prompt_dir {
            Some(dir) => Prompts::load_overrides(dir)?,
            None => Prompts::default(),
        };
        let repo = match &config.repository {
            Some(path) if path.exists() => persistence::load(path, config.tree_params())?,
            _ => Repository::new(config.embedder(), config.tree_params()),
        };
        if repo.embedder() != config.embedder() {
            tracing::warn!("repository embedder differs from config; keeping the repository's");
        }
        Ok(Self::new(config, gateway, prompts, repo))
    }

    pub fn repository(&self) -> &Repository {
        &self.repo
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn gateway(&self) -> &Arc<dyn Gateway> {
        &self.gateway
    }

    pub fn prompts(&self) -> &Prompts {
        &self.prompts
    }

    pub fn applications(&self) -> &[ApplicationRecord] {
        &self.applications
    }

    fn autosave(&self) -> Result<(), OrchestratorError> {
        if let Some(path) = &self.config.repository {
            persistence::save(&self.repo, path)?;
        }
        Ok(())
    }

    pub fn save_to(&self, path: &Path) -> Result<(), OrchestratorError> {
        Ok(persistence::save(&self.repo, path)?)
    }

    pub fn create_session(&mut self, user: Option<String>) -> String {
        let id = format!("s{}", self.next_session);
        self.next_session += 1;
        self.sessions.insert(
            id.clone(),
            SessionTranscript {
                session_id: id.clone(),
                user,
                turns: Vec::new(),
            },
        );
        id
    }

    pub fn session(&self, id: &str) -> Result<&SessionTranscript, OrchestratorError> {
        self.sessions
            .get(id)
            .ok_or_else(|| OrchestratorError::SessionNotFound(id.to_string()))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionTranscript> {
        self.sessions.values()
    }

    fn apply_all(
        &mut self,
        methods: &[Method],
        query: &str,
    ) -> Result<Vec<CandidateOutput>, OrchestratorError> {
        let mut outputs: Vec<CandidateOutput> = Vec::new();
        let mut last_err = None;
        for method in methods {
            let seq = self.next_application;
            match apply_method(self.gateway.as_ref(), &self.prompts, method, query, seq) {
                Ok((text, record)) => {
                    self.next_application += 1;
                    self.applications.push(record);
                    if outputs.iter().any(|o| o.text == text) {
                        tracing::debug!(method = %method.id.short(), "duplicate output dropped");
                        continue;
                    }
                    outputs.push(CandidateOutput {
                        method_id: Some(method.id.clone()),
                        text,
                    });
                }
                Err(e) => {
                    tracing::warn!(method = %method.id.short(), "application failed: {e}");
                    last_err = Some(e);
                }
            }
        }
        match (outputs.is_empty(), last_err) {
            (true, Some(e)) => Err(e.into()),
            _ => Ok(outputs),
        }
    }

    /// Chosen method first, then the remaining survivors by utility.
    fn application_order(&self, filtered: &[&Method], chosen: &MethodId, query: &ProblemStatement) -> Vec<Method> {
        let mut order = vec![self.repo.get(chosen).expect("chosen is stored").clone()];
        let ranked = rank_by_utility(filtered, query).unwrap_or_default();
        for (m, _) in ranked {
            if &m.id != chosen && order.len() < self.config.n_out {
                order.push(m.clone());
            }
        }
        order
    }

    pub fn handle_query(&mut self, session_id: &str, user_input: &str) -> Result<QueryResponse, OrchestratorError> {
        let user = self.session(session_id)?.user.clone();
        if user_input.trim().is_empty() {
            return Err(OrchestratorError::EmptyQuery);
        }
        let query = self.repo.embedder().problem(user_input);
        let retrieved = self.repo.find_candidates(&query.features, self.config.k, self.config.theta, user.as_deref())?;
        let retrieved_ids: Vec<MethodId> = retrieved.iter().map(|c| c.id.clone()).collect();
        let methods: Vec<&Method> = retrieved_ids.iter().filter_map(|id| self.repo.get(id)).collect();
        let filtered = filter_candidates(methods, self.config.tau);
        let filtered_ids: Vec<MethodId> = filtered.iter().map(|m| m.id.clone()).collect();

        let mut internal_choice = None;
        let mut fallback_used = false;
        let to_apply: Vec<Method> = if filtered.is_empty() {
            fallback_used = true;
            self.fallback_methods(&query, user.as_deref())?
        } else {
            let choice = internal_select(self.gateway.as_ref(), &self.prompts, &filtered, &query, self.config.k)?;
            let order = self.application_order(&filtered, &choice.id, &query);
            internal_choice = Some(choice.id);
            order
        };

        let mut candidate_outputs = if to_apply.is_empty() {
            Vec::new()
        } else {
            self.apply_all(&to_apply, user_input)?
        };
        if candidate_outputs.is_empty() {
            let text = self.gateway.complete(&GatewayRequest::user(user_input))?;
            fallback_used = true;
            candidate_outputs.push(CandidateOutput { method_id: None, text });
        }
        let injected_method_ids: Vec<MethodId> = candidate_outputs.iter().filter_map(|o| o.method_id.clone()).collect();
        let applied: Vec<Method> = to_apply
            .into_iter()
            .filter(|m| injected_method_ids.contains(&m.id))
            .collect();

        let scope = user.clone().map_or(Scope::Global, Scope::User);
        let mut extracted_ids = ingest(
            &mut self.repo,
            self.gateway.as_ref(),
            &self.prompts,
            user_input,
            ContentSource::UserInput,
            &scope,
            self.config.tau,
        )?;
        for output in &candidate_outputs {
            extracted_ids.extend(ingest(
                &mut self.repo,
                self.gateway.as_ref(),
                &self.prompts,
                &output.text,
                ContentSource::LlmOutput,
                &scope,
                self.config.tau,
            )?);
        }

        let session = self.sessions.get_mut(session_id).expect("checked above");
        let turn_index = session.turns.len();
        let response = QueryResponse {
            turn: turn_index,
            outputs: candidate_outputs
                .iter()
                .enumerate()
                .map(|(i, o)| OutputEntry {
                    tag: i + 1,
                    method_id: o.method_id.clone(),
                    text: o.text.clone(),
                })
                .collect(),
            applied_method_ids: injected_method_ids.clone(),
            fallback_used,
        };
        session.turns.push(Turn {
            user_input: user_input.to_string(),
            retrieved_ids,
            filtered_ids,
            internal_choice,
            injected_method_ids,
            candidate_outputs,
            chosen_output: 0,
            fallback_used,
            extracted_ids,
            ordering: None,
            ranking: None,
            applied,
        });
        self.autosave()?;
        Ok(response)
    }

    /// Methods along the root path of the most relevant node, most specific
    /// first, that pass the external filter.
    fn fallback_methods(&self, query: &ProblemStatement, user: Option<&str>) -> Result<Vec<Method>, OrchestratorError> {
        let Some((scope, node, _)) = self.repo.most_relevant_node(&query.features, user)? else {
            return Ok(Vec::new());
        };
        let mut ids = self.repo.path_methods(&scope, node)?;
        ids.reverse();
        let methods: Vec<&Method> = ids.iter().filter_map(|id| self.repo.get(id)).collect();
        Ok(filter_candidates(methods, self.config.tau)
            .into_iter()
            .take(self.config.n_out)
            .cloned()
            .collect())
    }

    /// Records a ranking of a turn's outputs. `ordering` lists 1-based output
    /// numbers best first and must be a permutation of the turn's outputs.
    pub fn submit_ranking(
        &mut self,
        session_id: &str,
        turn_index: usize,
        ordering: &[usize],
    ) -> Result<RankingReceipt, OrchestratorError> {
        let session = self
            .sessions
            .get(session_id)
            .ok_or_else(|| OrchestratorError::SessionNotFound(session_id.to_string()))?;
        let turn = session.turns.get(turn_index).ok_or_else(|| OrchestratorError::TurnNotFound {
            session: session_id.to_string(),
            turn: turn_index,
        })?;
        if turn.ranking.is_some() || turn.ordering.is_some() {
            return Err(OrchestratorError::AlreadyRanked {
                session: session_id.to_string(),
                turn: turn_index,
            });
        }
        let n = turn.candidate_outputs.len();
        let mut sorted = ordering.to_vec();
        sorted.sort_unstable();
        if sorted != (1..=n).collect::<Vec<_>>() {
            return Err(OrchestratorError::InvalidOrdering(format!(
                "{ordering:?} is not a permutation of 1..={n}"
            )));
        }

        let mut reinserted = None;
        let winner = turn.candidate_outputs[ordering[0] - 1].method_id.clone();
        if let Some(id) = &winner {
            if !self.repo.contains(id) {
                let method = turn
                    .applied
                    .iter()
                    .find(|m| &m.id == id)
                    .cloned()
                    .ok_or_else(|| OrchestratorError::MethodNotFound(id.clone()))?;
                self.repo.insert(method, &PlacementAdvice::Automatic)?;
                reinserted = Some(id.clone());
            }
        }
        let ranked_ids: Vec<MethodId> = ordering
            .iter()
            .filter_map(|&tag| turn.candidate_outputs[tag - 1].method_id.clone())
            .filter(|id| self.repo.contains(id))
            .collect();
        let (updated, ranking) = if ranked_ids.is_empty() {
            (Vec::new(), None)
        } else {
            let outcome = RankedOutcome::from_best_first(ranked_ids);
            let updated = record_feedback(&mut self.repo, &outcome, self.config.alpha)?;
            (updated, Some(outcome))
        };

        let turn = &mut self.sessions.get_mut(session_id).expect("checked").turns[turn_index];
        turn.ordering = Some(ordering.to_vec());
        turn.ranking = ranking;
        self.autosave()?;
        Ok(RankingReceipt { updated, reinserted })
    }

    /// Runs extraction over arbitrary content, storing methods globally.
    pub fn ingest_text(&mut self, content: &str, source: ContentSource) -> Result<Vec<MethodId>, OrchestratorError> {
        let ids = ingest(
            &mut self.repo,
            self.gateway.as_ref(),
            &self.prompts,
            content,
            source,
            &Scope::Global,
            self.config.tau,
        )?;
        self.autosave()?;
        Ok(ids)
    }

    pub fn list_methods(&self) -> Vec<MethodSummary> {
        self.repo.methods().values().map(|m| MethodSummary::new(&self.repo, m)).collect()
    }

    pub fn method(&self, id: &MethodId) -> Result<(&Method, MethodSummary), OrchestratorError> {
        let m = self.repo.get(id).ok_or_else(|| OrchestratorError::MethodNotFound(id.clone()))?;
        Ok((m, MethodSummary::new(&self.repo, m)))
    }

    /// Accepts a full id or a unique prefix.
    pub fn resolve_method(&self, id_or_prefix: &str) -> Result<MethodId, OrchestratorError> {
        let mut hits = self.repo.methods().keys().filter(|id| id.as_str().starts_with(id_or_prefix));
        match (hits.next(), hits.next()) {
            (Some(id), None) if !id_or_prefix.is_empty() => Ok(id.clone()),
            _ => Err(OrchestratorError::MethodNotFound(MethodId::from_hex(id_or_prefix))),
        }
    }

    pub fn remove_method(&mut self, id: &MethodId) -> Result<Method, OrchestratorError> {
        let m = self.repo.remove(id).map_err(|e| match e {
            RepositoryError::UnknownMethod(id) => OrchestratorError::MethodNotFound(id),
            other => other.into(),
        })?;
        self.autosave()?;
        Ok(m)
    }

    /// Clears the repository. Sessions are kept.
    pub fn reset(&mut self) -> Result<(), OrchestratorError> {
        persistence::reset(&mut self.repo);
        self.autosave()
    }

    /// Clears the repository and drops every session.
    pub fn reset_all(&mut self) -> Result<(), OrchestratorError> {
        self.sessions.clear();
        self.next_session = 1;
        self.next_application = 0;
        self.applications.clear();
        self.reset()
    }
}
