//! Scripted backend for offline runs.
//!
//! A fixture is an ordered rule list. Each rule matches the last user message
//! either by substring (`contains`) or by regular expression (`pattern`); the
//! first matching rule supplies the reply. Replies of pattern rules may refer
//! to capture groups (`$1`, `${name}`); write `$$` for a literal dollar sign.
//!
//! ```toml
//! default_reply = "I am not sure."
//!
//! [[rules]]
//! contains = "SuHongKey"
//! reply = "I could not find any software named SuHongKey."
//!
//! [[rules]]
//! pattern = "in (\\w+) software"
//! reply = "Is $1 real?"
//!
//! [embeddings]
//! "some exact text" = [1.0, 0.0, 0.0]
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use regex::Regex;
use serde::Deserialize;

use super::{l2_normalize, Embedder, Gateway, GatewayError, GatewayRequest};

#[derive(Debug, Clone)]
pub enum Matcher {
    Contains(String),
    Pattern(Regex),
}

impl Matcher {
    fn reply(&self, message: &str, template: &str) -> Option<String> {
        match self {
            Matcher::Contains(needle) => message.contains(needle.as_str()).then(|| template.to_string()),
            Matcher::Pattern(re) => re.captures(message).map(|caps| {
                let mut out = String::new();
                caps.expand(template, &mut out);
                out
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockRule {
    pub matcher: Matcher,
    pub reply: String,
}

#[derive(Debug, Clone, Default)]
pub struct MockFixture {
    pub rules: Vec<MockRule>,
    pub default_reply: String,
    pub embeddings: BTreeMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    contains: Option<String>,
    pattern: Option<String>,
    reply: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFixture {
    #[serde(default)]
    default_reply: String,
    #[serde(default)]
    rules: Vec<RawRule>,
    #[serde(default)]
    embeddings: BTreeMap<String, Vec<f64>>,
}

impl MockFixture {
    pub fn new(default_reply: impl Into<String>) -> Self {
        Self {
            default_reply: default_reply.into(),
            ..Self::default()
        }
    }

    pub fn contains(mut self, needle: impl Into<String>, reply: impl Into<String>) -> Self {
        self.rules.push(MockRule {
            matcher: Matcher::Contains(needle.into()),
            reply: reply.into(),
        });
        self
    }

    pub fn pattern(mut self, pattern: &str, reply: impl Into<String>) -> Result<Self, GatewayError> {
        let re = Regex::new(pattern).map_err(|e| GatewayError::Fixture(e.to_string()))?;
        self.rules.push(MockRule {
            matcher: Matcher::Pattern(re),
            reply: reply.into(),
        });
        Ok(self)
    }

    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let raw: RawFixture = toml::from_str(text).map_err(|e| GatewayError::Fixture(e.to_string()))?;
        let mut rules = Vec::with_capacity(raw.rules.len());
        for (i, rule) in raw.rules.into_iter().enumerate() {
            let matcher = match (rule.contains, rule.pattern) {
                (Some(needle), None) => Matcher::Contains(needle),
                (None, Some(pattern)) => Matcher::Pattern(
                    Regex::new(&pattern)
                        .map_err(|e| GatewayError::Fixture(format!("rule {}: {e}", i + 1)))?,
                ),
                _ => {
                    return Err(GatewayError::Fixture(format!(
                        "rule {}: exactly one of `contains` or `pattern` is required",
                        i + 1
                    )))
                }
            };
            rules.push(MockRule {
                matcher,
                reply: rule.reply,
            });
        }
        Ok(Self {
            rules,
            default_reply: raw.default_reply,
            embeddings: raw.embeddings,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Reply for a message: the first matching rule, else the default.
    pub fn reply_for(&self, message: &str) -> String {
        self.rules
            .iter()
            .find_map(|rule| rule.matcher.reply(message, &rule.reply))
            .unwrap_or_else(|| self.default_reply.clone())
    }
}

#[derive(Debug)]
pub struct MockBackend {
    fixture: MockFixture,
    embedder: Embedder,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl MockBackend {
    /// Fails if an embedding override has the wrong dimension or is zero.
    pub fn new(mut fixture: MockFixture, embedder: Embedder) -> Result<Self, GatewayError> {
        for (text, v) in fixture.embeddings.iter_mut() {
            if v.len() != embedder.dimension {
                return Err(GatewayError::Fixture(format!(
                    "embedding override for {text:?} has dimension {} (expected {})",
                    v.len(),
                    embedder.dimension
                )));
            }
            if v.iter().all(|x| *x == 0.0) || v.iter().any(|x| !x.is_finite()) {
                return Err(GatewayError::Fixture(format!(
                    "embedding override for {text:?} must be finite and non-zero"
                )));
            }
            l2_normalize(v);
        }
        Ok(Self {
            fixture,
            embedder,
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        })
    }

    pub fn fixture(&self) -> &MockFixture {
        &self.fixture
    }

    /// Number of `complete` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Last user messages of every request served, in order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("mock prompt log poisoned").clone()
    }
}

impl Gateway for MockBackend {
    fn complete(&self, request: &GatewayRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let message = request.last_user_message().unwrap_or_default();
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts
            .lock()
            .expect("mock prompt log poisoned")
            .push(message.to_string());
        Ok(self.fixture.reply_for(message))
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        match self.fixture.embeddings.get(text) {
            Some(v) => v.clone(),
            None => self.embedder.embed(text),
        }
    }

    fn embedder(&self) -> Embedder {
        self.embedder
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn backend(fixture: MockFixture) -> MockBackend {
        MockBackend::new(fixture, Embedder::default()).unwrap()
    }

    #[test]
    fn first_matching_rule_wins() {
        let mock = backend(
            MockFixture::new("default")
                .contains("SuHongKey", "check existence first")
                .contains("Key", "generic"),
        );
        let reply = mock
            .complete(&GatewayRequest::user("how to re-create a project in SuHongKey"))
            .unwrap();
        assert_eq!(reply, "check existence first");
        assert_eq!(mock.complete(&GatewayRequest::user("HongHanKey")).unwrap(), "generic");
    }

    #[test]
    fn no_match_uses_default() {
        let mock = backend(MockFixture::new("default").contains("x", "y"));
        assert_eq!(mock.complete(&GatewayRequest::user("abc")).unwrap(), "default");
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn pattern_replies_expand_captures() {
        let mock = backend(
            MockFixture::new("d")
                .pattern(r"in (\w+) software", "Is $1 real? costs $$5")
                .unwrap(),
        );
        let reply = mock
            .complete(&GatewayRequest::user("create a project in HongHanKey software"))
            .unwrap();
        assert_eq!(reply, "Is HongHanKey real? costs $5");
    }

    #[test]
    fn matches_only_last_user_message() {
        let mock = backend(MockFixture::new("default").contains("secret", "found"));
        let mut req = GatewayRequest::user("secret");
        req.messages.push(super::super::ChatMessage {
            role: super::super::Role::User,
            content: "nothing here".into(),
        });
        assert_eq!(mock.complete(&req).unwrap(), "default");
    }

    #[test]
    fn parses_toml_fixture() {
        let fixture = MockFixture::parse(
            r#"
default_reply = "fallback"

[[rules]]
contains = "alpha"
reply = "A"

[[rules]]
pattern = "b(e+)ta"
reply = "B$1"

[embeddings]
"exact text" = [3.0, 4.0, 0.0]
"#,
        )
        .unwrap();
        assert_eq!(fixture.rules.len(), 2);
        assert_eq!(fixture.reply_for("alpha"), "A");
        assert_eq!(fixture.reply_for("beeeta"), "Beee");
        assert_eq!(fixture.reply_for("gamma"), "fallback");

        let mock = MockBackend::new(fixture, Embedder::new(1, 3)).unwrap();
        let v = mock.embed("exact text");
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
        assert_eq!(mock.embed("other"), Embedder::new(1, 3).embed("other"));
    }

    #[test]
    fn rejects_malformed_rules() {
        assert!(MockFixture::parse("[[rules]]\nreply = \"x\"\n").is_err());
        assert!(MockFixture::parse("[[rules]]\ncontains = \"a\"\npattern = \"b\"\nreply = \"x\"\n").is_err());
        assert!(MockFixture::parse("[[rules]]\npattern = \"(\"\nreply = \"x\"\n").is_err());
        assert!(MockFixture::parse("bogus = 1").is_err());
    }

    #[test]
    fn rejects_bad_embedding_dimension() {
        let mut fixture = MockFixture::new("d");
        fixture.embeddings.insert("t".into(), vec![1.0, 0.0]);
        assert!(MockBackend::new(fixture, Embedder::new(1, 3)).is_err());
    }

    #[test]
    fn rejects_empty_request() {
        let mock = backend(MockFixture::new("d"));
        let req = GatewayRequest {
            messages: vec![],
            temperature: 0.0,
            max_tokens: 1,
        };
        assert!(matches!(mock.complete(&req), Err(GatewayError::InvalidRequest(_))));
    }
}
