//! Prompt templates.
//!
//! Defaults are compiled in from `prompts/*.txt`. A directory containing any
//! of `extract.txt`, `select.txt`, `split.txt`, `apply.txt` or `meta.txt`
//! overrides the matching template. Placeholders are `{name}`; substitution
//! is a single pass, so braces inside substituted text are left alone.

use std::path::Path;

use crate::model::{Method, Solution};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub extract: String,
    pub select: String,
    pub split: String,
    pub apply: String,
    pub meta: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            extract: include_str!("../prompts/extract.txt").to_string(),
            select: include_str!("../prompts/select.txt").to_string(),
            split: include_str!("../prompts/split.txt").to_string(),
            apply: include_str!("../prompts/apply.txt").to_string(),
            meta: include_str!("../prompts/meta.txt").to_string(),
        }
    }
}

/// Replaces `{key}` occurrences with the matching value. Unknown
/// placeholders are kept verbatim.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let value = after.find('}').and_then(|end| {
            let key = &after[..end];
            vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (end, *v))
        });
        match value {
            Some((end, v)) => {
                out.push_str(v);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Solution parts as numbered instructions, one per line.
pub fn numbered_steps(solution: &Solution) -> String {
    solution
        .parts
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{}. {}", i + 1, p.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn references(solution: &Solution) -> String {
    if solution.external_refs.is_empty() {
        return String::new();
    }
    let mut out = String::from("\nExternal references (described, not executed):\n");
    for r in &solution.external_refs {
        out.push_str(&format!("- {}: {}\n", r.descriptor, r.link));
    }
    out
}

impl Prompts {
    pub fn load_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut prompts = Self::default();
        for (name, slot) in [
            ("extract.txt", &mut prompts.extract),
            ("select.txt", &mut prompts.select),
            ("split.txt", &mut prompts.split),
            ("apply.txt", &mut prompts.apply),
            ("meta.txt", &mut prompts.meta),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(prompts)
    }

    pub fn render_extract(&self, content: &str) -> String {
        render(&self.extract, &[("content", content)])
    }

    pub fn render_select(&self, candidates: &[&Method], query: &str) -> String {
        let listing = candidates
            .iter()
            .enumerate()
            .map(|(i, m)| {
                format!(
                    "[{}] Problem: {}\n    Solution: {}",
                    i + 1,
                    m.problem.text,
                    m.solution.summary()
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        render(&self.select, &[("query", query), ("candidates", &listing)])
    }

    pub fn render_split(&self, text: &str) -> String {
        render(&self.split, &[("text", text)])
    }

    pub fn render_apply(&self, method: &Method, query: &str) -> String {
        render(
            &self.apply,
            &[
                ("problem", &method.problem.text),
                ("steps", &numbered_steps(&method.solution)),
                ("references", &references(&method.solution)),
                ("query", query),
            ],
        )
    }

    pub fn render_meta(&self, refiner: &Method, target: &Method, query: &str) -> String {
        render(
            &self.meta,
            &[
                ("steps", &numbered_steps(&refiner.solution)),
                ("target_problem", &target.problem.text),
                ("target_steps", &numbered_steps(&target.solution)),
                ("query", query),
            ],
        )
    }
}
