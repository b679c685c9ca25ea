//! Synthetic workloads shared by the criterion benches.

use methodforge::gateway::Embedder;
use methodforge::model::{ContentSource, Method, Scope, Solution, SolutionPart};
use methodforge::repository::Repository;
use methodforge::tree::{PlacementAdvice, TreeParams};

const VERBS: &[&str] = &[
    "create", "delete", "rename", "export", "import", "configure", "debug", "install", "migrate", "backup",
];
const OBJECTS: &[&str] = &[
    "project", "database", "user account", "spreadsheet", "printer", "router", "calendar", "repository",
    "invoice", "playlist", "container", "certificate",
];
const CONTEXTS: &[&str] = &[
    "on linux", "in the office suite", "from the command line", "with a script", "for a small team",
    "after an upgrade", "without admin rights", "in the cloud console",
];

/// The `i`-th synthetic problem statement. Distinct for every `i` below
/// `VERBS × OBJECTS × CONTEXTS × 7`.
pub fn problem_text(i: usize) -> String {
    let v = VERBS[i % VERBS.len()];
    let o = OBJECTS[(i / VERBS.len()) % OBJECTS.len()];
    let c = CONTEXTS[(i / (VERBS.len() * OBJECTS.len())) % CONTEXTS.len()];
    let variant = i / (VERBS.len() * OBJECTS.len() * CONTEXTS.len());
    format!("how to {v} a {o} {c} variant {variant}")
}

pub fn method(embedder: &Embedder, i: usize) -> Method {
    let problem = problem_text(i);
    let parts = vec![
        SolutionPart::new("step1", format!("Open the tool used to {problem}."), 0.5),
        SolutionPart::new("step2", "Follow the documented procedure and verify the result.", 0.5),
    ];
    Method::new(embedder.problem(&problem), Solution::new(parts), Scope::Global, ContentSource::UserInput)
        .expect("non-empty problem")
}

/// A repository holding `n` synthetic methods.
pub fn repository(n: usize) -> Repository {
    let embedder = Embedder::default();
    let mut repo = Repository::new(embedder, TreeParams::default());
    for i in 0..n {
        repo.insert(method(&embedder, i), &PlacementAdvice::Automatic)
            .expect("synthetic method is valid");
    }
    repo
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn problems_are_distinct() {
        let texts: std::collections::BTreeSet<_> = (0..500).map(problem_text).collect();
        assert_eq!(texts.len(), 500);
    }

    #[test]
    fn repository_holds_all_methods() {
        let r = repository(50);
        assert_eq!(r.len(), 50);
        r.check_invariants().unwrap();
    }
}
