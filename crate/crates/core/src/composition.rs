//! Applying methods, refining methods with meta-methods, and part-wise
//! solution updates.

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError, GatewayRequest};
use crate::model::{Method, MethodFormat, MethodId, RefinementEdge, Solution, SolutionPart, EFFECTIVENESS_PRIOR};
use crate::prompts::Prompts;
use crate::repository::{Repository, RepositoryError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationRecord {
    pub method_id: MethodId,
    pub query_text: String,
    pub output_text: String,
    pub meta_of: Option<MethodId>,
    pub sequence: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CompositionError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Repository(#[from] RepositoryError),
    #[error("a method cannot be applied to itself")]
    SelfApplication,
    #[error("solution text is empty")]
    EmptySolution,
    #[error("part index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no candidate parts supplied")]
    NoCandidates,
}

/// Renders the method as numbered instructions ahead of the query and sends
/// it to the model. External-executable methods are described through their
/// reference links; nothing is executed locally.
pub fn apply_method(
    gateway: &dyn Gateway,
    prompts: &Prompts,
    method: &Method,
    query: &str,
    sequence: u64,
) -> Result<(String, ApplicationRecord), CompositionError> {
    if method.format == MethodFormat::ExternalExecutable {
        tracing::info!(method = %method.id.short(), "external method sent as description only");
    }
    let prompt = prompts.render_apply(method, query);
    let output = gateway.complete(&GatewayRequest::user(prompt))?;
    let record = ApplicationRecord {
        method_id: method.id.clone(),
        query_text: query.to_string(),
        output_text: output.clone(),
        meta_of: None,
        sequence,
    };
    Ok((output, record))
}

/// Applies `refiner` to `target` in the context of `query`, recording the
/// refinement edge `refiner ⇒ target` first. An edge that would close a
/// cycle is rejected before the model is called.
pub fn apply_meta_method(
    gateway: &dyn Gateway,
    prompts: &Prompts,
    repository: &mut Repository,
    refiner: &MethodId,
    target: &MethodId,
    query: &str,
    sequence: u64,
) -> Result<(String, ApplicationRecord), CompositionError> {
    if refiner == target {
        return Err(CompositionError::SelfApplication);
    }
    let edge = RefinementEdge {
        refiner_id: refiner.clone(),
        target_id: target.clone(),
    };
    let added = repository.add_edge(edge.clone())?;
    let m2 = repository.get(refiner).expect("edge endpoints exist");
    let m1 = repository.get(target).expect("edge endpoints exist");
    let prompt = prompts.render_meta(m2, m1, query);
    let output = match gateway.complete(&GatewayRequest::user(prompt)) {
        Ok(output) => output,
        Err(e) => {
            if added {
                repository.remove_edge(&edge);
            }
            return Err(e.into());
        }
    };
    let record = ApplicationRecord {
        method_id: refiner.clone(),
        query_text: query.to_string(),
        output_text: output.clone(),
        meta_of: Some(target.clone()),
        sequence,
    };
    Ok((output, record))
}

/// Parses `STEP <role>: <text>` lines, ignoring everything else.
fn parse_steps(reply: &str) -> Vec<SolutionPart> {
    reply
        .lines()
        .filter_map(|line| {
            let rest = line.trim().strip_prefix("STEP")?;
            let (role, text) = rest.split_once(':')?;
            let (role, text) = (role.trim(), text.trim());
            (!role.is_empty() && !text.is_empty())
                .then(|| SolutionPart::new(role, text, EFFECTIVENESS_PRIOR))
        })
        .collect()
}

/// Asks the model to segment a solution into ordered, labeled parts. An
/// unusable reply yields the whole text as one part with role `whole`.
pub fn split_solution(
    gateway: &dyn Gateway,
    prompts: &Prompts,
    solution_text: &str,
) -> Result<Vec<SolutionPart>, CompositionError> {
    let text = solution_text.trim();
    if text.is_empty() {
        return Err(CompositionError::EmptySolution);
    }
    let reply = gateway.complete(&GatewayRequest::user(prompts.render_split(text)))?;
    let parts = parse_steps(&reply);
    if parts.is_empty() {
        return Ok(vec![SolutionPart::new("whole", text, EFFECTIVENESS_PRIOR)]);
    }
    Ok(parts)
}

/// Returns a copy of `solution` whose part at 1-based position `index` is the
/// best-scoring of the incumbent and the candidates. The incumbent is kept on
/// ties; among candidates the first maximum wins.
pub fn update_part(
    solution: &Solution,
    index: usize,
    candidates: &[SolutionPart],
) -> Result<Solution, CompositionError> {
    let len = solution.parts.len();
    if index == 0 || index > len {
        return Err(CompositionError::IndexOutOfRange { index, len });
    }
    if candidates.is_empty() {
        return Err(CompositionError::NoCandidates);
    }
    let incumbent = &solution.parts[index - 1];
    let mut best = incumbent;
    for c in candidates {
        if c.part_score > best.part_score {
            best = c;
        }
    }
    let mut out = solution.clone();
    out.parts[index - 1] = best.clone();
    Ok(out)
}
