//! Relevance, utility, selection and feedback.
//!
//! Utility of a method for a problem is `relevance × effectiveness`, where
//! relevance is cosine similarity mapped to `[0, 1]` and effectiveness is the
//! method's feedback score. External feedback arrives as an ordering of
//! candidate outputs; each position is turned into a normalized score
//! `(n − r) / (n − 1)` and folded into effectiveness with an exponential
//! moving average.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use regex::Regex;

use crate::gateway::{cosine, Gateway, GatewayError, GatewayRequest};
use crate::model::{Method, MethodId, ProblemFeatures, ProblemStatement, ScoreCard};
use crate::prompts::Prompts;
use crate::repository::Repository;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("feature dimensions differ ({0} vs {1})")]
pub struct DimensionMismatch(pub usize, pub usize);

/// Cosine similarity mapped from `[-1, 1]` to `[0, 1]`. A zero vector has
/// cosine 0 with anything, hence relevance 0.5.
pub fn relevance(a: &ProblemFeatures, b: &ProblemFeatures) -> Result<f64, DimensionMismatch> {
    if a.dimension() != b.dimension() {
        return Err(DimensionMismatch(a.dimension(), b.dimension()));
    }
    Ok(((cosine(&a.vector, &b.vector) + 1.0) / 2.0).clamp(0.0, 1.0))
}

/// Whether a stored method may be applied to a new problem.
pub fn is_applicable(method: &Method, new_problem: &ProblemStatement, theta: f64) -> bool {
    relevance(&method.problem.features, &new_problem.features).is_ok_and(|r| r >= theta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityBreakdown {
    pub relevance: f64,
    pub effectiveness: f64,
    pub utility: f64,
}

impl UtilityBreakdown {
    pub fn new(relevance: f64, effectiveness: f64) -> Self {
        Self {
            relevance,
            effectiveness,
            utility: relevance * effectiveness,
        }
    }
}

pub fn utility(method: &Method, problem: &ProblemStatement) -> Result<UtilityBreakdown, DimensionMismatch> {
    let r = relevance(&method.problem.features, &problem.features)?;
    Ok(UtilityBreakdown::new(r, method.score.effectiveness))
}

#[derive(Debug, thiserror::Error)]
pub enum SelectionError {
    #[error("no candidates to select from")]
    Empty,
    #[error("{got} candidates exceed the limit of {limit}")]
    TooMany { got: usize, limit: usize },
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Orders methods best-first: utility, then effectiveness, then recency,
/// then id.
fn compare(a: &(&Method, UtilityBreakdown), b: &(&Method, UtilityBreakdown)) -> Ordering {
    b.1.utility
        .total_cmp(&a.1.utility)
        .then(b.1.effectiveness.total_cmp(&a.1.effectiveness))
        .then(b.0.created_at.cmp(&a.0.created_at))
        .then(a.0.id.cmp(&b.0.id))
}

/// Ranks methods by utility for `problem`. The first element is the argmax.
pub fn rank_by_utility<'a>(
    methods: &[&'a Method],
    problem: &ProblemStatement,
) -> Result<Vec<(&'a Method, UtilityBreakdown)>, DimensionMismatch> {
    let mut scored = methods
        .iter()
        .map(|m| utility(m, problem).map(|u| (*m, u)))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(compare);
    Ok(scored)
}

/// Argmax of utility plus the remaining methods in utility order.
pub fn select_best<'a>(
    filtered: &[&'a Method],
    problem: &ProblemStatement,
) -> Result<(&'a Method, Vec<&'a Method>), SelectionError> {
    if filtered.is_empty() {
        return Err(SelectionError::Empty);
    }
    let ranked = rank_by_utility(filtered, problem)?;
    let mut it = ranked.into_iter().map(|(m, _)| m);
    let best = it.next().expect("non-empty");
    Ok((best, it.collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InternalChoice {
    pub id: MethodId,
    pub rationale: String,
    /// False when the reply could not be parsed and the utility winner was used.
    pub from_model: bool,
}

/// Asks the model to pick one of the candidates for `query`.
///
/// A single candidate is returned without a round-trip. An unparsable or
/// out-of-range reply falls back to [`select_best`].
pub fn internal_select(
    gateway: &dyn Gateway,
    prompts: &Prompts,
    candidates: &[&Method],
    query: &ProblemStatement,
    limit: usize,
) -> Result<InternalChoice, SelectionError> {
    match candidates.len() {
        0 => return Err(SelectionError::Empty),
        n if n > limit => return Err(SelectionError::TooMany { got: n, limit }),
        1 => {
            return Ok(InternalChoice {
                id: candidates[0].id.clone(),
                rationale: "only candidate".into(),
                from_model: false,
            })
        }
        _ => {}
    }
    let prompt = prompts.render_select(candidates, &query.text);
    let reply = gateway.complete(&GatewayRequest::user(prompt))?;
    if let Some(index) = parse_choice(&reply, candidates.len()) {
        return Ok(InternalChoice {
            id: candidates[index - 1].id.clone(),
            rationale: reply.trim().to_string(),
            from_model: true,
        });
    }
    tracing::debug!(reply = %reply, "unparsable selection reply, using utility winner");
    let (best, _) = select_best(candidates, query)?;
    Ok(InternalChoice {
        id: best.id.clone(),
        rationale: format!("fallback to utility argmax; reply was {:?}", reply.trim()),
        from_model: false,
    })
}

/// First integer in the reply, if it names a candidate (1-based).
fn parse_choice(reply: &str, n: usize) -> Option<usize> {
    let re = Regex::new(r"\d+").expect("static regex");
    let index: usize = re.find(reply)?.as_str().parse().ok()?;
    (1..=n).contains(&index).then_some(index)
}

/// An ordering of candidates: `(id, rank)` with ranks a permutation of 1..=n.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RankedOutcome {
    pub ordering: Vec<(MethodId, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FeedbackError {
    #[error("ranking is empty")]
    Empty,
    #[error("ranks are not a permutation of 1..={0}")]
    NotPermutation(usize),
    #[error("method {0} appears more than once")]
    DuplicateMethod(MethodId),
    #[error("unknown method {0}")]
    UnknownMethod(MethodId),
}

impl RankedOutcome {
    /// Builds an outcome from ids listed best first.
    pub fn from_best_first(ids: impl IntoIterator<Item = MethodId>) -> Self {
        Self {
            ordering: ids.into_iter().enumerate().map(|(i, id)| (id, i + 1)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.ordering.len()
    }

    pub fn validate(&self) -> Result<(), FeedbackError> {
        let n = self.n();
        if n == 0 {
            return Err(FeedbackError::Empty);
        }
        let ranks: BTreeSet<usize> = self.ordering.iter().map(|(_, r)| *r).collect();
        if ranks.len() != n || ranks.first() != Some(&1) || ranks.last() != Some(&n) {
            return Err(FeedbackError::NotPermutation(n));
        }
        let mut ids = BTreeSet::new();
        for (id, _) in &self.ordering {
            if !ids.insert(id) {
                return Err(FeedbackError::DuplicateMethod(id.clone()));
            }
        }
        Ok(())
    }
}

/// Normalized score of rank `r` among `n ≥ 2`: 1 for first, 0 for last.
pub fn rank_score(rank: usize, n: usize) -> f64 {
    debug_assert!(n >= 2 && (1..=n).contains(&rank));
    (n - rank) as f64 / (n - 1) as f64
}

/// One feedback step applied to a score card.
pub fn apply_rank(card: &mut ScoreCard, rank: usize, n: usize, alpha: f64) {
    if n >= 2 {
        let s = rank_score(rank, n);
        card.effectiveness = ((1.0 - alpha) * card.effectiveness + alpha * s).clamp(0.0, 1.0);
        card.rated = true;
    }
    card.times_used += 1;
    if rank == 1 {
        card.times_top_ranked += 1;
    }
}

/// Folds a ranking into the score cards of the ranked methods and returns the
/// updated cards in ranking order. Nothing is changed on error.
pub fn record_feedback(
    repository: &mut Repository,
    outcome: &RankedOutcome,
    alpha: f64,
) -> Result<Vec<(MethodId, ScoreCard)>, FeedbackError> {
    outcome.validate()?;
    for (id, _) in &outcome.ordering {
        if !repository.contains(id) {
            return Err(FeedbackError::UnknownMethod(id.clone()));
        }
    }
    let n = outcome.n();
    let mut updated = Vec::with_capacity(n);
    for (id, rank) in &outcome.ordering {
        let method = repository.get_mut(id).expect("checked above");
        apply_rank(&mut method.score, *rank, n, alpha);
        updated.push((id.clone(), method.score.clone()));
    }
    Ok(updated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Embedder, MockBackend, MockFixture};
    use crate::model::{ContentSource, Scope, Solution, SolutionPart};
    use crate::tree::{PlacementAdvice, TreeParams};
    use std::collections::BTreeMap;

    fn features(v: &[f64]) -> ProblemFeatures {
        ProblemFeatures {
            vector: v.to_vec(),
            tokens: BTreeMap::new(),
        }
    }

    fn method(problem: &str, effectiveness: f64, created_at: u64) -> Method {
        let mut m = Method::new(
            Embedder::default().problem(problem),
            Solution::new(vec![SolutionPart::new("whole", format!("solve {problem}"), 0.5)]),
            Scope::Global,
            ContentSource::UserInput,
        )
        .unwrap();
        m.score.effectiveness = effectiveness;
        m.score.rated = true;
        m.created_at = created_at;
        m
    }

    #[test]
    fn relevance_examples() {
        let x = features(&[1.0, 0.0]);
        let y = features(&[0.0, 1.0]);
        let s = 0.5f64.sqrt();
        let diag = features(&[s, s]);
        assert_eq!(relevance(&x, &x).unwrap(), 1.0);
        assert_eq!(relevance(&x, &y).unwrap(), 0.5);
        // (cos 45° + 1) / 2
        assert!((relevance(&x, &diag).unwrap() - 0.853_553_39).abs() < 1e-8);
        assert_eq!(relevance(&features(&[0.0, 0.0]), &x).unwrap(), 0.5);
        assert_eq!(relevance(&x, &features(&[1.0])), Err(DimensionMismatch(2, 1)));
    }

    #[test]
    fn utility_is_product() {
        let u = UtilityBreakdown::new(0.8, 0.5);
        assert!((u.utility - 0.4).abs() < 1e-12);
        assert_eq!(UtilityBreakdown::new(0.0, 0.9).utility, 0.0);
    }

    #[test]
    fn select_best_argmax() {
        let p = Embedder::default().problem("p");
        let mut ms = vec![method("a", 0.4, 0), method("b", 0.7, 1), method("c", 0.1, 2)];
        for m in &mut ms {
            m.problem.features = p.features.clone();
        }
        let refs: Vec<&Method> = ms.iter().collect();
        let (best, alts) = select_best(&refs, &p).unwrap();
        assert_eq!(best.id, ms[1].id);
        assert_eq!(alts.iter().map(|m| &m.id).collect::<Vec<_>>(), vec![&ms[0].id, &ms[2].id]);
    }

    #[test]
    fn select_best_singleton_and_empty() {
        let m = method("a", 0.5, 0);
        let p = Embedder::default().problem("a");
        let (best, alts) = select_best(&[&m], &p).unwrap();
        assert_eq!(best.id, m.id);
        assert!(alts.is_empty());
        assert!(matches!(select_best(&[], &p), Err(SelectionError::Empty)));
    }

    #[test]
    fn select_best_tie_prefers_newer() {
        let p = Embedder::default().problem("same problem");
        let mut old = method("x", 0.6, 1);
        let mut new = method("y", 0.6, 5);
        old.problem.features = p.features.clone();
        new.problem.features = p.features.clone();
        // oracle: utilities and effectiveness tie exactly, so created_at decides
        assert_eq!(utility(&old, &p).unwrap(), utility(&new, &p).unwrap());
        let (best, _) = select_best(&[&old, &new], &p).unwrap();
        assert_eq!(best.id, new.id);
        let (best, _) = select_best(&[&new, &old], &p).unwrap();
        assert_eq!(best.id, new.id);
    }

    fn mock(fixture: MockFixture) -> MockBackend {
        MockBackend::new(fixture, Embedder::default()).unwrap()
    }

    #[test]
    fn internal_select_short_circuits_single_candidate() {
        let gw = mock(MockFixture::new("1"));
        let m = method("a", 0.5, 0);
        let q = Embedder::default().problem("a");
        let choice = internal_select(&gw, &Prompts::default(), &[&m], &q, 5).unwrap();
        assert_eq!(choice.id, m.id);
        assert_eq!(gw.calls(), 0);
    }

    #[test]
    fn internal_select_follows_reply() {
        let gw = mock(MockFixture::new("I pick 2."));
        let ms = [method("a", 0.5, 0), method("b", 0.5, 1), method("c", 0.5, 2)];
        let refs: Vec<&Method> = ms.iter().collect();
        let q = Embedder::default().problem("a");
        let choice = internal_select(&gw, &Prompts::default(), &refs, &q, 5).unwrap();
        assert_eq!(choice.id, ms[1].id);
        assert!(choice.from_model);
        assert_eq!(gw.calls(), 1);
        let prompt = &gw.prompts()[0];
        assert!(prompt.contains("[1]") && prompt.contains("[3]"), "{prompt}");
    }

    #[test]
    fn internal_select_garbage_falls_back() {
        let gw = mock(MockFixture::new("no idea, maybe the 9th?"));
        let ms = [method("a", 0.2, 0), method("b", 0.9, 1)];
        let refs: Vec<&Method> = ms.iter().collect();
        let q = Embedder::default().problem("unrelated query");
        let choice = internal_select(&gw, &Prompts::default(), &refs, &q, 5).unwrap();
        let (best, _) = select_best(&refs, &q).unwrap();
        assert_eq!(choice.id, best.id);
        assert!(!choice.from_model);
    }

    #[test]
    fn internal_select_limit() {
        let gw = mock(MockFixture::new("1"));
        let ms = [method("a", 0.5, 0), method("b", 0.5, 1)];
        let refs: Vec<&Method> = ms.iter().collect();
        let q = Embedder::default().problem("a");
        assert!(matches!(
            internal_select(&gw, &Prompts::default(), &refs, &q, 1),
            Err(SelectionError::TooMany { got: 2, limit: 1 })
        ));
    }

    fn repo_with(n: usize) -> (Repository, Vec<MethodId>) {
        let mut repo = Repository::new(Embedder::default(), TreeParams::default());
        let mut ids = Vec::new();
        for i in 0..n {
            let m = Method::new(
                repo.embedder().problem(&format!("problem number {i}")),
                Solution::new(vec![SolutionPart::new("whole", format!("solution {i}"), 0.5)]),
                Scope::Global,
                ContentSource::UserInput,
            )
            .unwrap();
            ids.push(m.id.clone());
            repo.insert(m, &PlacementAdvice::Automatic).unwrap();
        }
        (repo, ids)
    }

    #[test]
    fn two_way_ranking_from_prior() {
        let (mut repo, ids) = repo_with(2);
        let out = RankedOutcome::from_best_first(ids.clone());
        record_feedback(&mut repo, &out, 0.3).unwrap();
        // oracle: 0.7·0.5 + 0.3·1 = 0.65; 0.7·0.5 + 0.3·0 = 0.35
        let a = &repo.get(&ids[0]).unwrap().score;
        let b = &repo.get(&ids[1]).unwrap().score;
        assert!((a.effectiveness - 0.65).abs() < 1e-12);
        assert!((b.effectiveness - 0.35).abs() < 1e-12);
        assert!(a.rated && b.rated);
        assert_eq!((a.times_used, a.times_top_ranked), (1, 1));
        assert_eq!((b.times_used, b.times_top_ranked), (1, 0));
    }

    #[test]
    fn single_candidate_updates_counters_only() {
        let (mut repo, ids) = repo_with(1);
        record_feedback(&mut repo, &RankedOutcome::from_best_first(ids.clone()), 0.3).unwrap();
        let card = &repo.get(&ids[0]).unwrap().score;
        assert_eq!(card.effectiveness, 0.5);
        assert!(!card.rated);
        assert_eq!((card.times_used, card.times_top_ranked), (1, 1));
    }

    #[test]
    fn repeated_last_place_closed_form() {
        let (mut repo, ids) = repo_with(2);
        let out = RankedOutcome::from_best_first(vec![ids[1].clone(), ids[0].clone()]);
        for k in 1..=5 {
            record_feedback(&mut repo, &out, 0.3).unwrap();
            let e = repo.get(&ids[0]).unwrap().score.effectiveness;
            assert!((e - 0.5 * 0.7f64.powi(k)).abs() < 1e-12);
            assert_eq!(e < 0.3, k >= 2, "k={k} e={e}");
        }
    }

    #[test]
    fn malformed_outcomes_rejected() {
        let (mut repo, ids) = repo_with(2);
        let bad = RankedOutcome {
            ordering: vec![(ids[0].clone(), 1), (ids[1].clone(), 3)],
        };
        assert_eq!(record_feedback(&mut repo, &bad, 0.3), Err(FeedbackError::NotPermutation(2)));
        let dup = RankedOutcome {
            ordering: vec![(ids[0].clone(), 1), (ids[0].clone(), 2)],
        };
        assert!(matches!(record_feedback(&mut repo, &dup, 0.3), Err(FeedbackError::DuplicateMethod(_))));
        let unknown = RankedOutcome::from_best_first(vec![MethodId::from_hex("00")]);
        assert!(matches!(record_feedback(&mut repo, &unknown, 0.3), Err(FeedbackError::UnknownMethod(_))));
        assert_eq!(record_feedback(&mut repo, &RankedOutcome { ordering: vec![] }, 0.3), Err(FeedbackError::Empty));
        // nothing changed
        assert!(repo.methods().values().all(|m| m.score == ScoreCard::default()));
    }

    #[test]
    fn applicability_gate() {
        let e = Embedder::default();
        let m = method("re-create a project in SuHongKey software", 0.5, 0);
        let same = e.problem("re-create a project in SuHongKey software");
        let other = e.problem("the weather is nice today");
        assert!(is_applicable(&m, &same, 0.9));
        assert!(relevance(&m.problem.features, &other.features).unwrap() < 0.9);
        assert!(!is_applicable(&m, &other, 0.9));
        assert!(is_applicable(&m, &other, 0.0));
    }
}
