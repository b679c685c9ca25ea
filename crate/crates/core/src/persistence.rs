//! Single-file JSON snapshots of a repository.
//!
//! The encoding is canonical: struct fields in declaration order, methods
//! sorted by id, trees by scope, edges by (refiner, target), floats as
//! `{:.16e}` strings. Saving a loaded snapshot reproduces the same bytes.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::Embedder;
use crate::model::{Method, RefinementEdge};
use crate::repository::{Repository, RepositoryError};
use crate::tree::{MethodTree, TreeParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepositorySnapshot {
    pub format_version: u32,
    pub embedder_seed: u64,
    pub dimension: usize,
    pub methods: Vec<Method>,
    pub trees: Vec<MethodTree>,
    pub edges: Vec<RefinementEdge>,
    pub counters: Counters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counters {
    pub next_seq: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum PersistenceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("snapshot parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("snapshot format version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { found: u64 },
    #[error("snapshot invariant violated: {0}")]
    Invariant(#[from] RepositoryError),
}

impl RepositorySnapshot {
    pub fn capture(repo: &Repository) -> Self {
        let embedder = repo.embedder();
        Self {
            format_version: FORMAT_VERSION,
            embedder_seed: embedder.seed,
            dimension: embedder.dimension,
            methods: repo.methods().values().cloned().collect(),
            trees: repo.trees().values().cloned().collect(),
            edges: repo.edges().iter().cloned().collect(),
            counters: Counters {
                next_seq: repo.next_seq(),
            },
        }
    }

    /// Rebuilds a repository and re-validates every invariant.
    pub fn restore(self, params: TreeParams) -> Result<Repository, PersistenceError> {
        if self.format_version != FORMAT_VERSION {
            return Err(PersistenceError::Version {
                found: self.format_version.into(),
            });
        }
        let embedder = Embedder::new(self.embedder_seed, self.dimension);
        let mut methods = std::collections::BTreeMap::new();
        for m in self.methods {
            if let Some(dup) = methods.insert(m.id.clone(), m) {
                return Err(RepositoryError::from(crate::tree::TreeError::Invariant(format!(
                    "duplicate method record {}",
                    dup.id
                )))
                .into());
            }
        }
        let mut trees = std::collections::BTreeMap::new();
        for mut t in self.trees {
            t.rebuild_index().map_err(RepositoryError::from)?;
            if trees.contains_key(&t.scope) {
                return Err(RepositoryError::from(crate::tree::TreeError::Invariant(format!(
                    "duplicate tree for scope {}",
                    t.scope
                )))
                .into());
            }
            trees.insert(t.scope.clone(), t);
        }
        let edges = self.edges.into_iter().collect();
        let repo = Repository::from_parts(embedder, params, methods, trees, edges, self.counters.next_seq);
        repo.check_invariants()?;
        Ok(repo)
    }
}

pub fn to_bytes(repo: &Repository) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(&RepositorySnapshot::capture(repo)).expect("snapshot serializes");
    bytes.push(b'\n');
    bytes
}

pub fn from_bytes(bytes: &[u8], params: TreeParams) -> Result<Repository, PersistenceError> {
    // Read the version first so an old or future file is refused as such
    // instead of failing on a schema difference.
    let value: serde_json::Value = serde_json::from_slice(bytes)?;
    match value.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(found) => return Err(PersistenceError::Version { found }),
        None => {}
    }
    let snapshot: RepositorySnapshot = serde_json::from_value(value)?;
    snapshot.restore(params)
}

/// Writes to a temporary file in the target directory, then renames it over
/// `path`.
pub fn save(repo: &Repository, path: &Path) -> Result<(), PersistenceError> {
    let io = |source| PersistenceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(&to_bytes(repo)).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn load(path: &Path, params: TreeParams) -> Result<Repository, PersistenceError> {
    let bytes = std::fs::read(path).map_err(|source| PersistenceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes, params)
}

/// Clears all methods, trees and edges. The embedder seed is kept.
pub fn reset(repo: &mut Repository) {
    repo.reset();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ContentSource, Scope, Solution, SolutionPart};
    use crate::ranking::relevance;
    use crate::tree::PlacementAdvice;

    fn repo() -> Repository {
        Repository::new(Embedder::default(), TreeParams::default())
    }

    fn add(r: &mut Repository, problem: &str, scope: Scope) -> Method {
        let m = Method::new(
            r.embedder().problem(problem),
            Solution::new(vec![SolutionPart::new("whole", format!("solve {problem}"), 0.5)]),
            scope,
            ContentSource::UserInput,
        )
        .unwrap();
        r.insert(m.clone(), &PlacementAdvice::Automatic).unwrap();
        m
    }

    #[test]
    fn empty_snapshot_has_version() {
        let bytes = to_bytes(&repo());
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["methods"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = repo();
        let a = add(&mut r, "bake sourdough bread", Scope::Global);
        let b = add(&mut r, "fix a flat bicycle tire", Scope::User("ann".into()));
        let _ = add(&mut r, "brew green tea", Scope::Global);
        let c = add(&mut r, "knead dough by hand", Scope::Global);
        r.add_edge(RefinementEdge {
            refiner_id: a.id.clone(),
            target_id: c.id,
        })
        .unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        save(&r, &p1).unwrap();
        let loaded = load(&p1, TreeParams::default()).unwrap();
        save(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded, r);
        assert_eq!(loaded.placement(&b.id), r.placement(&b.id));
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let mut r = repo();
        add(&mut r, "bake bread", Scope::Global);
        let bytes = to_bytes(&r);
        let err = from_bytes(&bytes[..bytes.len() / 2], TreeParams::default()).unwrap_err();
        assert!(matches!(err, PersistenceError::Parse(_)), "{err}");
    }

    #[test]
    fn version_mismatch_refused() {
        let mut v: serde_json::Value = serde_json::from_slice(&to_bytes(&repo())).unwrap();
        v["format_version"] = 2.into();
        let err = from_bytes(&serde_json::to_vec(&v).unwrap(), TreeParams::default()).unwrap_err();
        assert!(matches!(err, PersistenceError::Version { found: 2 }));
    }

    #[test]
    fn duplicate_placement_names_invariant() {
        let mut r = repo();
        let m = add(&mut r, "bake bread", Scope::Global);
        add(&mut r, "fix bicycle tire", Scope::Global);
        let mut v: serde_json::Value = serde_json::from_slice(&to_bytes(&r)).unwrap();
        let nodes = v["trees"][0]["nodes"].as_object_mut().unwrap();
        let other = nodes
            .values_mut()
            .find(|n| {
                let sols = n["solutions"].as_array().unwrap();
                !sols.is_empty() && sols[0] != m.id.as_str()
            })
            .unwrap();
        other["solutions"].as_array_mut().unwrap().push(m.id.as_str().into());
        let err = from_bytes(&serde_json::to_vec(&v).unwrap(), TreeParams::default()).unwrap_err();
        assert!(err.to_string().contains("one node per method"), "{err}");
    }

    #[test]
    fn tampered_method_text_is_caught() {
        let mut r = repo();
        add(&mut r, "bake bread", Scope::Global);
        let mut v: serde_json::Value = serde_json::from_slice(&to_bytes(&r)).unwrap();
        v["methods"][0]["problem"]["text"] = "something else".into();
        let err = from_bytes(&serde_json::to_vec(&v).unwrap(), TreeParams::default()).unwrap_err();
        assert!(matches!(err, PersistenceError::Invariant(_)), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load(&dir.path().join("absent.json"), TreeParams::default()).unwrap_err();
        assert!(matches!(err, PersistenceError::Io { .. }));
    }

    #[test]
    fn reset_keeps_seed_and_is_idempotent() {
        let mut r = Repository::new(Embedder::new(99, 256), TreeParams::default());
        let m = add(&mut r, "bake bread", Scope::Global);
        let probe = r.embedder().features("baking bread at home");
        let before = relevance(&m.problem.features, &probe).unwrap();
        reset(&mut r);
        assert!(r.find_candidates(&probe, 5, 0.0, None).unwrap().is_empty());
        assert_eq!(r.tree(&Scope::Global).unwrap().node_count(), 1);
        assert_eq!(r.next_seq(), 0);
        let after = relevance(&r.embedder().features("bake bread"), &probe).unwrap();
        assert_eq!(before, after);
        let snapshot = r.clone();
        reset(&mut r);
        assert_eq!(r, snapshot);
    }
}
