use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CHALLENGE: &str = "000102030405060708090a0b0c0d0e0f";

fn dfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfa")).args(args).output().expect("spawn dfa")
}

fn corpus(app: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus").join(app)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn demo_attacks_exit_with_verdict_codes() {
    let o = dfa(&["demo-attack", "syringe_df", "data"]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stdout(&o).contains("verdict=DataOnlyAttack"));
    let o = dfa(&["demo-attack", "syringe_cf", "cf"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("verdict=ControlFlowAttack"));
}

#[test]
fn demo_attack_rejects_inapplicable_and_unknown() {
    assert_eq!(dfa(&["demo-attack", "syringe_df", "cf"]).status.code(), Some(65));
    assert_eq!(dfa(&["demo-attack", "toaster", "cf"]).status.code(), Some(64));
    assert_eq!(dfa(&["demo-attack", "syringe_df", "sideways"]).status.code(), Some(64));
}

/// Instruments, attests and verifies one corpus app through files only.
fn pipeline(dir: &Path, app: &str, trace: &Path) -> Output {
    let c = corpus(app);
    let layout = c.join("layout.toml");
    let inst = dir.join(format!("{app}.dfa.s"));
    let key = dir.join("key");
    let report = dir.join(format!("{app}.report"));
    std::fs::write(&key, "11".repeat(32)).unwrap();
    let o = dfa(&["instrument", s(&c.join("app.s")), "--mode", "dfa", "--layout", s(&layout), "-o", s(&inst)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = dfa(&[
        "attest",
        s(&inst),
        "--layout",
        s(&layout),
        "--trace",
        s(trace),
        "--key",
        s(&key),
        "--challenge",
        CHALLENGE,
        "-o",
        s(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains(&format!("challenge={CHALLENGE}")));
    dfa(&[
        "verify",
        "--program",
        s(&inst),
        "--layout",
        s(&layout),
        "--key",
        s(&key),
        "--report",
        s(&report),
        "--challenge",
        CHALLENGE,
        "--cfg-policy",
        "--data-policy",
        s(&c.join("objects")),
    ])
}

#[test]
fn file_pipeline_verifies_every_benign_trace() {
    let dir = tempfile::tempdir().unwrap();
    for app in ["syringe_cf", "syringe_df", "fire_sensor", "ultrasonic_ranger"] {
        for entry in std::fs::read_dir(corpus(app)).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "trace") {
                let o = pipeline(dir.path(), app, &path);
                assert_eq!(o.status.code(), Some(0), "{app} {}: {}", path.display(), stdout(&o));
                assert_eq!(stdout(&o).trim(), "verdict=Verified");
            }
        }
    }
}

#[test]
fn nonce_store_rejects_replayed_report() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus("syringe_df");
    let trace = c.join("benign-0.trace");
    assert_eq!(pipeline(dir.path(), "syringe_df", &trace).status.code(), Some(0));
    let store = dir.path().join("nonces");
    let verify = |store: &Path| {
        dfa(&[
            "verify",
            "--program",
            s(&dir.path().join("syringe_df.dfa.s")),
            "--layout",
            s(&c.join("layout.toml")),
            "--key",
            s(&dir.path().join("key")),
            "--report",
            s(&dir.path().join("syringe_df.report")),
            "--nonce-store",
            s(store),
        ])
    };
    assert_eq!(verify(&store).status.code(), Some(0));
    assert_eq!(verify(&store).status.code(), Some(2));
}

#[test]
fn wrong_key_is_token_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus("ultrasonic_ranger");
    pipeline(dir.path(), "ultrasonic_ranger", &c.join("benign-0.trace"));
    let other = dir.path().join("other");
    std::fs::write(&other, "22".repeat(32)).unwrap();
    let o = dfa(&[
        "verify",
        "--program",
        s(&dir.path().join("ultrasonic_ranger.dfa.s")),
        "--layout",
        s(&c.join("layout.toml")),
        "--key",
        s(&other),
        "--report",
        s(&dir.path().join("ultrasonic_ranger.report")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stdout(&o).trim(), "verdict=TokenInvalid");
}

#[test]
fn usage_and_io_errors() {
    assert_eq!(dfa(&["verify"]).status.code(), Some(64));
    assert_eq!(dfa(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(dfa(&["run", "/nonexistent.s", "--layout", "/nonexistent.toml"]).status.code(), Some(74));
    assert_eq!(dfa(&["--help"]).status.code(), Some(0));
    let c = corpus("syringe_cf");
    let nine = "1,2,3,4,5,6,7,8,9";
    let o = dfa(&["run", s(&c.join("app.s")), "--layout", s(&c.join("layout.toml")), "--args", nine]);
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn bad_input_file_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.s");
    std::fs::write(&bad, "frob r1, r2\n").unwrap();
    assert_eq!(dfa(&["asm", s(&bad)]).status.code(), Some(65));
}

#[test]
fn run_and_asm() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus("ultrasonic_ranger");
    let o = dfa(&[
        "run",
        s(&c.join("app.s")),
        "--layout",
        s(&c.join("layout.toml")),
        "--trace",
        s(&c.join("benign-0.trace")),
    ]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("halt=Completed"), "{out}");
    // 1750 us of echo is 30 cm.
    assert!(out.contains("addr=0x001b value=0x001e"), "{out}");
    let bin = dir.path().join("a.bin");
    assert!(dfa(&["asm", s(&c.join("app.s")), "-o", s(&bin)]).status.success());
    assert!(!std::fs::read(&bin).unwrap().is_empty());
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("results.csv");
    let corpus_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus");
    let o = dfa(&["bench", "--corpus", s(&corpus_dir), "-o", s(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("app,variant,code_bytes,cycles,cflog_bytes,ilog_bytes"));
    assert_eq!(text.lines().count(), 13);
}
