use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use methodforge::eval::{report_render, run_scenario, RunOptions, Scenario};
use methodforge::gateway::BackendKind;
use methodforge::{Config, ContentSource, Orchestrator};

/// Repository file used when neither the config nor `--repo` names one.
pub const DEFAULT_REPOSITORY: &str = "methodforge-repo.json";

#[derive(Debug, Parser)]
#[command(name = "methodforge", version, about = "Learn, store and reuse problem-solving methods across LLM chats")]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Repository snapshot file.
    #[arg(long, global = true)]
    pub repo: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<Backend>,
    /// Mock fixture file.
    #[arg(long, global = true)]
    pub fixture: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Mock,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Source {
    User,
    Llm,
    Training,
}

impl From<Source> for ContentSource {
    fn from(s: Source) -> Self {
        match s {
            Source::User => ContentSource::UserInput,
            Source::Llm => ContentSource::LlmOutput,
            Source::Training => ContentSource::TrainingData,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        /// Address to listen on; overrides the config.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Interactive chat. Type `rank 2 1 3` to rank the last answers, `quit` to leave.
    Chat {
        /// Store learned methods under this user's scope.
        #[arg(long)]
        user: Option<String>,
    },
    /// Extract methods from a text file.
    Ingest {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "user")]
        source: Source,
    },
    /// Inspect or edit stored methods.
    Methods {
        #[command(subcommand)]
        action: MethodsAction,
    },
    /// Replay a scenario file and print the score table.
    Eval {
        scenario: PathBuf,
        /// Write the JSON results here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run trials on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Delete every stored method.
    Reset,
}

#[derive(Debug, Subcommand)]
pub enum MethodsAction {
    List,
    Show { id: String },
    Rm { id: String },
}

impl Cli {
    /// Config file (or defaults) with command-line overrides applied.
    pub fn resolve_config(&self) -> anyhow::Result<Config> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(repo) = &self.repo {
            config.repository = Some(repo.clone());
        }
        if config.repository.is_none() {
            config.repository = Some(PathBuf::from(DEFAULT_REPOSITORY));
        }
        if let Some(b) = self.backend {
            config.backend = match b {
                Backend::Mock => BackendKind::Mock,
                Backend::Live => BackendKind::Live,
            };
        }
        if let Some(f) = &self.fixture {
            config.fixture = Some(f.clone());
        }
        config.validate()?;
        Ok(config)
    }
}

fn print_response(out: &mut impl Write, r: &methodforge::QueryResponse) -> std::io::Result<()> {
    if r.fallback_used {
        writeln!(out, "(no stored method matched)")?;
    }
    for o in &r.outputs {
        let tag = o.method_id.as_ref().map_or_else(|| "plain".to_string(), |id| format!("method {}", id.short()));
        writeln!(out, "[{}] ({tag})", o.tag)?;
        writeln!(out, "{}", o.text)?;
    }
    Ok(())
}

/// Reads lines from `input` until EOF or `quit`. Each line is a query
/// unless it is a command: `rank <n>...`, `methods`, `help`.
pub fn chat(
    orchestrator: &mut Orchestrator,
    user: Option<String>,
    input: impl BufRead,
    mut out: impl Write,
) -> anyhow::Result<()> {
    let session = orchestrator.create_session(user);
    let mut last_turn: Option<usize> = None;
    writeln!(out, "session {session}; type `help` for commands")?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut words = line.split_whitespace();
        match words.next() {
            Some("quit" | "exit") => break,
            Some("help") => {
                writeln!(out, "rank <n> <n> ...  rank the last answers, best first")?;
                writeln!(out, "methods           list stored methods")?;
                writeln!(out, "quit              leave")?;
            }
            Some("methods") => {
                for m in orchestrator.list_methods() {
                    writeln!(out, "{}  eff {:.3}  {}", m.id.short(), m.score.effectiveness, m.problem)?;
                }
            }
            Some("rank") => {
                let Some(turn) = last_turn else {
                    writeln!(out, "nothing to rank yet")?;
                    continue;
                };
                let ordering: Result<Vec<usize>, _> = words.map(str::parse).collect();
                match ordering {
                    Ok(ordering) => match orchestrator.submit_ranking(&session, turn, &ordering) {
                        Ok(receipt) => {
                            for (id, card) in receipt.updated {
                                writeln!(out, "{}  effectiveness {:.3}", id.short(), card.effectiveness)?;
                            }
                        }
                        Err(e) => writeln!(out, "error: {e}")?,
                    },
                    Err(_) => writeln!(out, "usage: rank 2 1 3")?,
                }
            }
            _ => match orchestrator.handle_query(&session, line) {
                Ok(r) => {
                    last_turn = Some(r.turn);
                    print_response(&mut out, &r)?;
                }
                Err(e) => writeln!(out, "error: {e}")?,
            },
        }
    }
    Ok(())
}

fn eval(config: Config, scenario: &Path, out: Option<&Path>, parallel: bool) -> anyhow::Result<String> {
    let scenario = Scenario::load(scenario)?;
    let run = run_scenario(&scenario, &config, RunOptions { parallel })?;
    let (table, json) = report_render(&run.report);
    if let Some(path) = out {
        std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(table)
}

/// Executes a parsed command line, writing human-readable output to `out`.
pub fn run(cli: Cli, mut out: impl Write) -> anyhow::Result<()> {
    let config = cli.resolve_config()?;
    match cli.command {
        Command::Serve { bind } => {
            let bind = bind.unwrap_or_else(|| config.bind.clone());
            let orchestrator = Orchestrator::from_config(config)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::api::serve(orchestrator, &bind))?;
        }
        Command::Chat { user } => {
            let mut orchestrator = Orchestrator::from_config(config)?;
            let stdin = std::io::stdin();
            chat(&mut orchestrator, user, stdin.lock(), out)?;
        }
        Command::Ingest { file, source } => {
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let mut orchestrator = Orchestrator::from_config(config)?;
            let ids = orchestrator.ingest_text(&text, source.into())?;
            if ids.is_empty() {
                writeln!(out, "no new method found")?;
            }
            for id in ids {
                writeln!(out, "stored {id}")?;
            }
        }
        Command::Methods { action } => {
            let mut orchestrator = Orchestrator::from_config(config)?;
            match action {
                MethodsAction::List => {
                    for m in orchestrator.list_methods() {
                        let node = m.node.map_or_else(|| "-".into(), |n| n.to_string());
                        writeln!(
                            out,
                            "{}  {:<8} {:>4}  eff {:.3}  used {}  {}",
                            m.id.short(),
                            m.scope,
                            node,
                            m.score.effectiveness,
                            m.score.times_used,
                            m.problem
                        )?;
                    }
                }
                MethodsAction::Show { id } => {
                    let id = orchestrator.resolve_method(&id)?;
                    let (method, _) = orchestrator.method(&id)?;
                    writeln!(out, "{}", serde_json::to_string_pretty(method)?)?;
                }
                MethodsAction::Rm { id } => {
                    let id = orchestrator.resolve_method(&id)?;
                    orchestrator.remove_method(&id)?;
                    writeln!(out, "removed {id}")?;
                }
            }
        }
        Command::Eval { scenario, out: results, parallel } => {
            let table = eval(config, &scenario, results.as_deref(), parallel)?;
            write!(out, "{table}")?;
        }
        Command::Reset => {
            let mut orchestrator = Orchestrator::from_config(config)?;
            orchestrator.reset()?;
            writeln!(out, "repository cleared")?;
        }
    }
    Ok(())
}
