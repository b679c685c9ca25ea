//! The method repository: stored methods, one storage tree per scope, and the
//! refinement graph between methods.

use std::collections::{BTreeMap, BTreeSet};

use crate::gateway::Embedder;
use crate::model::{validate_method, Method, MethodId, ProblemFeatures, RefinementEdge, Scope};
use crate::tree::{MethodTree, NodeId, PlacementAdvice, TreeError, TreeParams};

#[derive(Debug, thiserror::Error)]
pub enum RepositoryError {
    #[error("method {id} fails validation: {violations}")]
    Invalid { id: MethodId, violations: String },
    #[error("unknown method {0}")]
    UnknownMethod(MethodId),
    #[error("a method cannot refine itself ({0})")]
    SelfRefinement(MethodId),
    #[error("refinement edge {refiner} => {target} would create a cycle")]
    Cycle { refiner: MethodId, target: MethodId },
    #[error("no tree for scope {0}")]
    UnknownScope(Scope),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// A retrieval hit.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: MethodId,
    pub relevance: f64,
    pub scope: Scope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Repository {
    embedder: Embedder,
    params: TreeParams,
    methods: BTreeMap<MethodId, Method>,
    trees: BTreeMap<Scope, MethodTree>,
    edges: BTreeSet<RefinementEdge>,
    next_seq: u64,
}

impl Repository {
    pub fn new(embedder: Embedder, params: TreeParams) -> Self {
        Self {
            embedder,
            params,
            methods: BTreeMap::new(),
            trees: BTreeMap::from([(Scope::Global, MethodTree::new(Scope::Global, embedder.dimension))]),
            edges: BTreeSet::new(),
            next_seq: 0,
        }
    }

    pub(crate) fn from_parts(
        embedder: Embedder,
        params: TreeParams,
        methods: BTreeMap<MethodId, Method>,
        trees: BTreeMap<Scope, MethodTree>,
        edges: BTreeSet<RefinementEdge>,
        next_seq: u64,
    ) -> Self {
        Self {
            embedder,
            params,
            methods,
            trees,
            edges,
            next_seq,
        }
    }

    pub fn embedder(&self) -> Embedder {
        self.embedder
    }

    pub fn params(&self) -> TreeParams {
        self.params
    }

    pub fn set_params(&mut self, params: TreeParams) {
        self.params = params;
    }

    pub fn len(&self) -> usize {
        self.methods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.methods.is_empty()
    }

    pub fn contains(&self, id: &MethodId) -> bool {
        self.methods.contains_key(id)
    }

    pub fn get(&self, id: &MethodId) -> Option<&Method> {
        self.methods.get(id)
    }

    pub(crate) fn get_mut(&mut self, id: &MethodId) -> Option<&mut Method> {
        self.methods.get_mut(id)
    }

    pub fn methods(&self) -> &BTreeMap<MethodId, Method> {
        &self.methods
    }

    pub fn trees(&self) -> &BTreeMap<Scope, MethodTree> {
        &self.trees
    }

    pub fn tree(&self, scope: &Scope) -> Option<&MethodTree> {
        self.trees.get(scope)
    }

    pub fn edges(&self) -> &BTreeSet<RefinementEdge> {
        &self.edges
    }

    /// High-water mark of the creation sequence.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Stores a method in the tree of its scope. Returns the holding node and
    /// whether anything was inserted; a method whose id is already stored is
    /// left untouched.
    pub fn insert(
        &mut self,
        mut method: Method,
        placement: &PlacementAdvice,
    ) -> Result<(NodeId, bool), RepositoryError> {
        if let Some(existing) = self.methods.get(&method.id) {
            let node = self.trees[&existing.scope]
                .node_of(&existing.id)
                .expect("stored method is placed");
            return Ok((node, false));
        }
        let violations = validate_method(&method);
        if !violations.is_empty() {
            return Err(RepositoryError::Invalid {
                id: method.id,
                violations: violations
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; "),
            });
        }
        let dimension = self.embedder.dimension;
        let tree = self
            .trees
            .entry(method.scope.clone())
            .or_insert_with(|| MethodTree::new(method.scope.clone(), dimension));
        let node = tree.insert_method(&method, placement, &self.params)?;
        method.created_at = self.next_seq;
        self.next_seq += 1;
        self.methods.insert(method.id.clone(), method);
        Ok((node, true))
    }

    /// Deletes a method together with the refinement edges that touch it.
    pub fn remove(&mut self, id: &MethodId) -> Result<Method, RepositoryError> {
        let method = self
            .methods
            .remove(id)
            .ok_or_else(|| RepositoryError::UnknownMethod(id.clone()))?;
        self.trees
            .get_mut(&method.scope)
            .expect("scope tree exists")
            .remove_method(id)?;
        self.edges
            .retain(|e| &e.refiner_id != id && &e.target_id != id);
        Ok(method)
    }

    /// Node and scope holding a method.
    pub fn placement(&self, id: &MethodId) -> Option<(Scope, NodeId)> {
        let method = self.methods.get(id)?;
        let node = self.trees.get(&method.scope)?.node_of(id)?;
        Some((method.scope.clone(), node))
    }

    /// Trees consulted for a user: the user's own tree first, then global.
    fn lookup_scopes(&self, user: Option<&str>) -> Vec<&MethodTree> {
        let mut out = Vec::new();
        if let Some(user) = user {
            if let Some(t) = self.trees.get(&Scope::User(user.to_string())) {
                out.push(t);
            }
        }
        out.push(&self.trees[&Scope::Global]);
        out
    }

    /// Retrieval over the user tree then the global tree. Sorted by relevance,
    /// then user scope before global, then recency.
    pub fn find_candidates(
        &self,
        features: &ProblemFeatures,
        k: usize,
        theta: f64,
        user: Option<&str>,
    ) -> Result<Vec<Candidate>, RepositoryError> {
        let mut all = Vec::new();
        for (rank, tree) in self.lookup_scopes(user).into_iter().enumerate() {
            for (id, relevance) in tree.find_candidates(features, k, theta, &self.methods)? {
                all.push((rank, self.methods[&id].created_at, id, relevance));
            }
        }
        all.sort_by(|a, b| {
            b.3.total_cmp(&a.3)
                .then(a.0.cmp(&b.0))
                .then(b.1.cmp(&a.1))
                .then(a.2.cmp(&b.2))
        });
        Ok(all
            .into_iter()
            .take(k)
            .map(|(_, _, id, relevance)| {
                let scope = self.methods[&id].scope.clone();
                Candidate { id, relevance, scope }
            })
            .collect())
    }

    /// Union of same-problem solution lists across the visible scopes.
    pub fn solutions_for(
        &self,
        features: &ProblemFeatures,
        user: Option<&str>,
    ) -> Result<BTreeSet<MethodId>, RepositoryError> {
        let mut out = BTreeSet::new();
        for tree in self.lookup_scopes(user) {
            out.extend(tree.solutions_for(features, self.params.mu)?);
        }
        Ok(out)
    }

    /// Most relevant content node whose relevance is strictly above 0.5
    /// (positive cosine), user scope winning ties.
    pub fn most_relevant_node(
        &self,
        features: &ProblemFeatures,
        user: Option<&str>,
    ) -> Result<Option<(Scope, NodeId, f64)>, RepositoryError> {
        let mut best: Option<(Scope, NodeId, f64)> = None;
        for tree in self.lookup_scopes(user) {
            if let Some((node, r)) = tree.most_relevant_node(features)? {
                if r > 0.5 && best.as_ref().is_none_or(|b| r > b.2) {
                    best = Some((tree.scope.clone(), node, r));
                }
            }
        }
        Ok(best)
    }

    pub fn path_methods(&self, scope: &Scope, node: NodeId) -> Result<Vec<MethodId>, RepositoryError> {
        let tree = self
            .trees
            .get(scope)
            .ok_or_else(|| RepositoryError::UnknownScope(scope.clone()))?;
        Ok(tree.path_methods(node)?)
    }

    /// True if `to` is reachable from `from` along refinement edges.
    fn reaches(&self, from: &MethodId, to: &MethodId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(cur) = stack.pop() {
            if cur == to {
                return true;
            }
            if !seen.insert(cur) {
                continue;
            }
            stack.extend(
                self.edges
                    .iter()
                    .filter(|e| &e.refiner_id == cur)
                    .map(|e| &e.target_id),
            );
        }
        false
    }

    /// Records `refiner ⇒ target`, keeping the refinement graph acyclic.
    /// Returns false if the edge already existed.
    pub fn add_edge(&mut self, edge: RefinementEdge) -> Result<bool, RepositoryError> {
        if edge.refiner_id == edge.target_id {
            return Err(RepositoryError::SelfRefinement(edge.refiner_id));
        }
        for id in [&edge.refiner_id, &edge.target_id] {
            if !self.methods.contains_key(id) {
                return Err(RepositoryError::UnknownMethod(id.clone()));
            }
        }
        if self.edges.contains(&edge) {
            return Ok(false);
        }
        if self.reaches(&edge.target_id, &edge.refiner_id) {
            return Err(RepositoryError::Cycle {
                refiner: edge.refiner_id,
                target: edge.target_id,
            });
        }
        self.edges.insert(edge);
        Ok(true)
    }

    pub fn remove_edge(&mut self, edge: &RefinementEdge) -> bool {
        self.edges.remove(edge)
    }

    /// Drops every method, tree and edge; keeps the embedder seed.
    pub fn reset(&mut self) {
        *self = Self::new(self.embedder, self.params);
    }

    /// Validates every cross-structure invariant. Used after loading.
    pub fn check_invariants(&self) -> Result<(), RepositoryError> {
        if !self.trees.contains_key(&Scope::Global) {
            return Err(TreeError::Invariant("global tree missing".into()).into());
        }
        let mut placed = BTreeSet::new();
        for (scope, tree) in &self.trees {
            if &tree.scope != scope {
                return Err(TreeError::Invariant(format!("tree keyed {scope} has scope {}", tree.scope)).into());
            }
            if tree.dimension != self.embedder.dimension {
                return Err(TreeError::Dimension {
                    expected: self.embedder.dimension,
                    got: tree.dimension,
                }
                .into());
            }
            tree.check_invariants()?;
            for id in tree.method_ids() {
                if !placed.insert(id.clone()) {
                    return Err(TreeError::Invariant(format!("one node per method: {id}")).into());
                }
                let method = self
                    .methods
                    .get(id)
                    .ok_or_else(|| RepositoryError::UnknownMethod(id.clone()))?;
                if &method.scope != scope {
                    return Err(TreeError::Invariant(format!("method {id} stored outside its scope")).into());
                }
            }
        }
        for (id, method) in &self.methods {
            if &method.id != id {
                return Err(TreeError::Invariant(format!("method keyed {id} has id {}", method.id)).into());
            }
            let violations = validate_method(method);
            if !violations.is_empty() {
                return Err(RepositoryError::Invalid {
                    id: id.clone(),
                    violations: violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
                });
            }
            if method.problem.features.dimension() != self.embedder.dimension {
                return Err(TreeError::Dimension {
                    expected: self.embedder.dimension,
                    got: method.problem.features.dimension(),
                }
                .into());
            }
            if !placed.contains(id) {
                return Err(TreeError::Invariant(format!("method {id} is not placed in any tree")).into());
            }
            if method.created_at >= self.next_seq {
                return Err(TreeError::Invariant(format!("method {id} created after the high-water mark")).into());
            }
        }
        let mut check = Self::new(self.embedder, self.params);
        check.methods = self.methods.clone();
        for edge in &self.edges {
            check.add_edge(edge.clone())?;
        }
        Ok(())
    }
}
