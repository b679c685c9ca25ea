use std::io::Cursor;
use std::path::Path;

use clap::Parser;
use methodforge::{Config, Orchestrator};
use methodforge_cli::cli::{chat, run, Cli};

const CS2: &str = "For this kind of question, you should first check whether the SuHongKey software exists or not.";
const CS3: &str = "When we create a project, then we try to create another project. Please tell how to re-create a project in HongHanKey software.";

fn run_args(args: &[&str]) -> String {
    let cli = Cli::try_parse_from(std::iter::once("methodforge").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    run(cli, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn chat_session_learns_and_ranks() {
    let mut o = Orchestrator::from_config(Config::default()).unwrap();
    let input = format!("help\nrank 1\n{CS2}\n{CS3}\nrank 1\nrank x\nmethods\nquit\nnever read\n");
    let mut out = Vec::new();
    chat(&mut o, None, Cursor::new(input), &mut out).unwrap();
    let out = String::from_utf8(out).unwrap();
    assert!(out.starts_with("session s1;"));
    assert!(out.contains("nothing to rank yet"));
    assert!(out.contains("verify whether HongHanKey is a real and identifiable piece of software"));
    assert!(out.contains("usage: rank 2 1 3"));
    assert!(!out.contains("never read"));
    assert_eq!(o.session("s1").unwrap().turns.len(), 2);
    let m = &o.list_methods()[0];
    assert_eq!((m.score.times_used, m.score.times_top_ranked), (1, 1));
}

#[test]
fn ingest_list_show_remove_reset() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("repo.json");
    let repo = repo.to_str().unwrap();
    let note = dir.path().join("note.txt");
    std::fs::write(&note, CS2).unwrap();

    let out = run_args(&["--repo", repo, "ingest", note.to_str().unwrap()]);
    let id = out.trim().strip_prefix("stored ").unwrap().to_string();
    assert_eq!(id.len(), 64);

    let again = run_args(&["--repo", repo, "ingest", note.to_str().unwrap()]);
    assert_eq!(again.trim(), "no new method found");

    let list = run_args(&["--repo", repo, "methods", "list"]);
    assert_eq!(list.lines().count(), 1);
    assert!(list.starts_with(&id[..12]));

    let show = run_args(&["--repo", repo, "methods", "show", &id[..8]]);
    let v: serde_json::Value = serde_json::from_str(&show).unwrap();
    assert_eq!(v["id"], id.as_str());

    let rm = run_args(&["--repo", repo, "methods", "rm", &id]);
    assert_eq!(rm.trim(), format!("removed {id}"));
    assert_eq!(run_args(&["--repo", repo, "methods", "list"]), "");

    run_args(&["--repo", repo, "ingest", note.to_str().unwrap()]);
    assert_eq!(run_args(&["--repo", repo, "reset"]).trim(), "repository cleared");
    assert_eq!(run_args(&["--repo", repo, "methods", "list"]), "");
}

#[test]
fn eval_writes_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios/sufhongkey.toml");
    let json = dir.path().join("results.json");
    let repo = dir.path().join("unused.json");
    let table = run_args(&[
        "--repo",
        repo.to_str().unwrap(),
        "eval",
        scenario.to_str().unwrap(),
        "--out",
        json.to_str().unwrap(),
    ]);
    assert!(table.contains("method1"));
    assert!(table.contains("NoMethod"));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(v["trials"], 20);
    assert!(!repo.exists());
}

#[test]
fn bad_arguments_are_rejected() {
    assert!(Cli::try_parse_from(["methodforge", "--backend", "cloud", "reset"]).is_err());
    assert!(Cli::try_parse_from(["methodforge", "methods", "show"]).is_err());
}
