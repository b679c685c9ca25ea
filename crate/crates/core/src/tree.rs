//! Method storage tree.
//!
//! Each node holds one problem and the ordered list of methods (solution
//! variants) stored for it. Problems whose relevance reaches `mu` share a
//! node; otherwise a new node is created under the most relevant node whose
//! relevance reaches `theta`, or under the root. The root is a contentless
//! sentinel unless a method is explicitly placed there.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{Method, MethodId, ProblemFeatures, ProblemStatement, Scope};
use crate::ranking::relevance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// Merge threshold: relevance at which a problem joins an existing node.
    pub mu: f64,
    /// Placement threshold: minimum relevance for nesting under a node.
    pub theta: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { mu: 0.95, theta: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlacementAdvice {
    Automatic,
    /// Suggested parent, e.g. from the model. Merging still takes precedence.
    UnderNode(NodeId),
    /// Store as a general-purpose method on the root.
    Root,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub node_id: NodeId,
    pub parent: Option<NodeId>,
    pub problem: ProblemStatement,
    pub solutions: Vec<MethodId>,
    pub children: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TreeError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown method {0}")]
    UnknownMethod(MethodId),
    #[error("feature dimension {got} does not match repository dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("tree invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodTree {
    pub scope: Scope,
    pub dimension: usize,
    pub root_id: NodeId,
    pub next_node: u64,
    pub nodes: BTreeMap<NodeId, TreeNode>,
    #[serde(skip)]
    index: BTreeMap<MethodId, NodeId>,
}

impl PartialEq for MethodTree {
    fn eq(&self, other: &Self) -> bool {
        self.scope == other.scope
            && self.dimension == other.dimension
            && self.root_id == other.root_id
            && self.next_node == other.next_node
            && self.nodes == other.nodes
    }
}

impl MethodTree {
    pub fn new(scope: Scope, dimension: usize) -> Self {
        let root_id = NodeId(0);
        let root = TreeNode {
            node_id: root_id,
            parent: None,
            problem: ProblemStatement {
                text: String::new(),
                features: ProblemFeatures {
                    vector: vec![0.0; dimension],
                    tokens: BTreeMap::new(),
                },
            },
            solutions: Vec::new(),
            children: Vec::new(),
        };
        Self {
            scope,
            dimension,
            root_id,
            next_node: 1,
            nodes: BTreeMap::from([(root_id, root)]),
            index: BTreeMap::new(),
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[&self.root_id]
    }

    pub fn node(&self, id: NodeId) -> Option<&TreeNode> {
        self.nodes.get(&id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn method_count(&self) -> usize {
        self.index.len()
    }

    pub fn contains(&self, id: &MethodId) -> bool {
        self.index.contains_key(id)
    }

    pub fn node_of(&self, id: &MethodId) -> Option<NodeId> {
        self.index.get(id).copied()
    }

    /// Every stored method id, in node order.
    pub fn method_ids(&self) -> impl Iterator<Item = &MethodId> {
        self.nodes.values().flat_map(|n| n.solutions.iter())
    }

    fn content_nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.values().filter(move |n| n.node_id != self.root_id)
    }

    fn check_dimension(&self, features: &ProblemFeatures) -> Result<(), TreeError> {
        if features.dimension() != self.dimension {
            return Err(TreeError::Dimension {
                expected: self.dimension,
                got: features.dimension(),
            });
        }
        Ok(())
    }

    /// Most relevant non-root node; ties go to the lowest node id.
    pub fn most_relevant_node(
        &self,
        features: &ProblemFeatures,
    ) -> Result<Option<(NodeId, f64)>, TreeError> {
        self.check_dimension(features)?;
        let mut best: Option<(NodeId, f64)> = None;
        for node in self.content_nodes() {
            let r = relevance(&node.problem.features, features).expect("dimension checked");
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((node.node_id, r));
            }
        }
        Ok(best)
    }

    /// Stores `method` and returns the node holding it. Inserting a method
    /// that is already present changes nothing.
    pub fn insert_method(
        &mut self,
        method: &Method,
        placement: &PlacementAdvice,
        params: &TreeParams,
    ) -> Result<NodeId, TreeError> {
        if let Some(node) = self.index.get(&method.id) {
            return Ok(*node);
        }
        let features = &method.problem.features;
        self.check_dimension(features)?;

        let parent = match placement {
            PlacementAdvice::Root => {
                let root = self.root_id;
                self.attach(root, method.id.clone());
                return Ok(root);
            }
            PlacementAdvice::UnderNode(id) => {
                if !self.nodes.contains_key(id) {
                    return Err(TreeError::UnknownNode(*id));
                }
                Some(*id)
            }
            PlacementAdvice::Automatic => None,
        };

        let best = self.most_relevant_node(features)?;
        if let Some((node, r)) = best {
            if r >= params.mu {
                self.attach(node, method.id.clone());
                return Ok(node);
            }
        }
        let parent = parent.unwrap_or(match best {
            Some((node, r)) if r >= params.theta => node,
            _ => self.root_id,
        });

        let id = NodeId(self.next_node);
        self.next_node += 1;
        self.nodes.insert(
            id,
            TreeNode {
                node_id: id,
                parent: Some(parent),
                problem: method.problem.clone(),
                solutions: Vec::new(),
                children: Vec::new(),
            },
        );
        self.nodes
            .get_mut(&parent)
            .expect("parent exists")
            .children
            .push(id);
        self.attach(id, method.id.clone());
        Ok(id)
    }

    fn attach(&mut self, node: NodeId, method: MethodId) {
        self.nodes
            .get_mut(&node)
            .expect("node exists")
            .solutions
            .push(method.clone());
        self.index.insert(method, node);
    }

    /// Union of the solution lists of every node whose relevance to the
    /// problem reaches `mu`.
    pub fn solutions_for(
        &self,
        features: &ProblemFeatures,
        mu: f64,
    ) -> Result<BTreeSet<MethodId>, TreeError> {
        self.check_dimension(features)?;
        let mut out = BTreeSet::new();
        for node in self.content_nodes() {
            if relevance(&node.problem.features, features).expect("dimension checked") >= mu {
                out.extend(node.solutions.iter().cloned());
            }
        }
        Ok(out)
    }

    /// Up to `k` stored methods whose problem relevance reaches `theta`,
    /// most relevant first, ties broken by recency then id.
    pub fn find_candidates(
        &self,
        features: &ProblemFeatures,
        k: usize,
        theta: f64,
        methods: &BTreeMap<MethodId, Method>,
    ) -> Result<Vec<(MethodId, f64)>, TreeError> {
        self.check_dimension(features)?;
        let mut scored = Vec::new();
        for id in self.method_ids() {
            let method = methods
                .get(id)
                .ok_or_else(|| TreeError::UnknownMethod(id.clone()))?;
            let r = relevance(&method.problem.features, features).map_err(|_| TreeError::Dimension {
                expected: self.dimension,
                got: method.problem.features.dimension(),
            })?;
            if r >= theta {
                scored.push((method, r));
            }
        }
        scored.sort_by(|(ma, ra), (mb, rb)| {
            rb.total_cmp(ra)
                .then(mb.created_at.cmp(&ma.created_at))
                .then(ma.id.cmp(&mb.id))
        });
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(m, r)| (m.id.clone(), r))
            .collect())
    }

    /// Node ids from the root down to `node`, root first.
    pub fn path_to(&self, node: NodeId) -> Result<Vec<NodeId>, TreeError> {
        let mut path = vec![node];
        let mut cur = self.nodes.get(&node).ok_or(TreeError::UnknownNode(node))?;
        while let Some(parent) = cur.parent {
            path.push(parent);
            cur = &self.nodes[&parent];
        }
        path.reverse();
        Ok(path)
    }

    /// Methods stored along the root→node path, root first.
    pub fn path_methods(&self, node: NodeId) -> Result<Vec<MethodId>, TreeError> {
        Ok(self
            .path_to(node)?
            .into_iter()
            .flat_map(|n| self.nodes[&n].solutions.iter().cloned())
            .collect())
    }

    /// Removes a method. Non-root nodes left without methods or children are
    /// pruned, walking up the tree.
    pub fn remove_method(&mut self, id: &MethodId) -> Result<(), TreeError> {
        let node = self
            .index
            .remove(id)
            .ok_or_else(|| TreeError::UnknownMethod(id.clone()))?;
        self.nodes
            .get_mut(&node)
            .expect("indexed node exists")
            .solutions
            .retain(|m| m != id);

        let mut cur = node;
        while cur != self.root_id {
            let n = &self.nodes[&cur];
            if !n.solutions.is_empty() || !n.children.is_empty() {
                break;
            }
            let parent = n.parent.expect("non-root has parent");
            self.nodes.remove(&cur);
            self.nodes
                .get_mut(&parent)
                .expect("parent exists")
                .children
                .retain(|c| *c != cur);
            cur = parent;
        }
        Ok(())
    }

    /// Recomputes the method→node index from the node table.
    pub(crate) fn rebuild_index(&mut self) -> Result<(), TreeError> {
        self.index.clear();
        for node in self.nodes.values() {
            for id in &node.solutions {
                if self.index.insert(id.clone(), node.node_id).is_some() {
                    return Err(TreeError::Invariant(format!("one node per method: {id}")));
                }
            }
        }
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<(), TreeError> {
        let fail = |msg: String| Err(TreeError::Invariant(msg));
        let Some(root) = self.nodes.get(&self.root_id) else {
            return fail("root node missing".into());
        };
        if root.parent.is_some() {
            return fail("root has a parent".into());
        }
        let mut child_refs: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut seen_methods: BTreeSet<&MethodId> = BTreeSet::new();
        for (id, node) in &self.nodes {
            if *id != node.node_id {
                return fail(format!("node key {id} holds node {}", node.node_id));
            }
            if node.node_id.0 >= self.next_node {
                return fail(format!("node {id} not below next_node"));
            }
            if node.problem.features.dimension() != self.dimension {
                return fail(format!("node {id} has wrong feature dimension"));
            }
            let unique: BTreeSet<_> = node.solutions.iter().collect();
            if unique.len() != node.solutions.len() {
                return fail(format!("node {id} has duplicate solutions"));
            }
            let unique: BTreeSet<_> = node.children.iter().collect();
            if unique.len() != node.children.len() {
                return fail(format!("node {id} has duplicate children"));
            }
            for m in &node.solutions {
                if !seen_methods.insert(m) {
                    return fail(format!("one node per method: {m}"));
                }
            }
            for c in &node.children {
                let Some(child) = self.nodes.get(c) else {
                    return fail(format!("node {id} lists missing child {c}"));
                };
                if child.parent != Some(*id) {
                    return fail(format!("child {c} does not point back to {id}"));
                }
                *child_refs.entry(*c).or_default() += 1;
            }
            if *id != self.root_id {
                let Some(parent) = node.parent else {
                    return fail(format!("node {id} has no parent"));
                };
                if !self.nodes.contains_key(&parent) {
                    return fail(format!("node {id} has missing parent {parent}"));
                }
            }
        }
        for id in self.nodes.keys() {
            let refs = child_refs.get(id).copied().unwrap_or(0);
            let expected = usize::from(*id != self.root_id);
            if refs != expected {
                return fail(format!("node {id} is listed as a child {refs} times"));
            }
        }
        // every node must reach the root
        for id in self.nodes.keys() {
            let mut cur = *id;
            let mut steps = 0;
            while let Some(p) = self.nodes[&cur].parent {
                cur = p;
                steps += 1;
                if steps > self.nodes.len() {
                    return fail(format!("parent cycle through {id}"));
                }
            }
            if cur != self.root_id {
                return fail(format!("node {id} does not reach the root"));
            }
        }
        if seen_methods.len() != self.index.len()
            || seen_methods
                .iter()
                .any(|m| self.index.get(*m).is_none_or(|n| !self.nodes[n].solutions.contains(m)))
        {
            return fail("method index out of sync".into());
        }
        Ok(())
    }

    /// Structure of the tree with node ids erased and sibling order
    /// normalized. Two trees are isomorphic iff their shapes are equal.
    pub fn shape(&self) -> String {
        fn go(tree: &MethodTree, id: NodeId) -> String {
            let node = &tree.nodes[&id];
            let mut solutions: Vec<&str> = node.solutions.iter().map(MethodId::as_str).collect();
            solutions.sort_unstable();
            let mut children: Vec<String> = node.children.iter().map(|c| go(tree, *c)).collect();
            children.sort();
            format!(
                "({:?}[{}]{{{}}})",
                node.problem.text,
                solutions.join(","),
                children.join("")
            )
        }
        go(self, self.root_id)
    }
}
