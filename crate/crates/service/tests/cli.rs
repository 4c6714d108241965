use std::path::Path;
use std::process::{Command, Output};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/esg_fixture.json");

fn docqa(library: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docqa"))
        .arg("--library")
        .arg(library)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("DOCQA_GENERATOR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn ingest_then_ask() {
    let dir = tempfile::tempdir().unwrap();
    let out = docqa(dir.path(), &["ingest", FIXTURE, "--format", "pages_json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).trim(), "acme-esg-2022");
    assert!(dir.path().join("acme-esg-2022.dsvx").exists());
    assert!(dir.path().join("acme-esg-2022.doc.json").exists());
    assert!(dir.path().join("library.json").exists());

    let out = docqa(dir.path(), &["ask", "acme-esg-2022", "What was the total energy consumption in 2021?"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("FY21 Total energy consumption (MWh) = 2,491,543"), "{text}");
    assert!(text.contains("[p1.b2]"), "{text}");

    let out = docqa(dir.path(), &["ask", "acme-esg-2022", "Energy 2021?", "-k", "3"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(docqa(dir.path(), &["ask", "missing", "What?"]).status.code(), Some(3));
    assert_eq!(docqa(dir.path(), &["ingest", "/no/such/file"]).status.code(), Some(4));
    assert_eq!(docqa(dir.path(), &["ingest", FIXTURE, "--format", "pdf"]).status.code(), Some(4));

    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(docqa(dir.path(), &["ingest", empty.to_str().unwrap()]).status.code(), Some(4));

    assert_eq!(docqa(dir.path(), &["ingest", FIXTURE]).status.code(), Some(0));
    assert_eq!(docqa(dir.path(), &["ask", "acme-esg-2022", "  "]).status.code(), Some(4));
    assert_eq!(docqa(dir.path(), &["ask", "acme-esg-2022", "Energy?", "-k", "0"]).status.code(), Some(4));

    // A wordlist hit withholds the answer.
    let wordlist = dir.path().join("words.txt");
    std::fs::write(&wordlist, "energy\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_docqa"))
        .args(["--library", dir.path().to_str().unwrap(), "ask", "acme-esg-2022", "Total energy in 2021?"])
        .env("DOCQA_WORDLIST", &wordlist)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stdout(&out));
    assert!(stdout(&out).starts_with("no answer (Refused): moderation flags: energy"), "{}", stdout(&out));

    let out = Command::new(env!("CARGO_BIN_EXE_docqa"))
        .args(["--library", dir.path().to_str().unwrap(), "ask", "acme-esg-2022", "Energy?"])
        .env("DOCQA_EMBED_DIM", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}
