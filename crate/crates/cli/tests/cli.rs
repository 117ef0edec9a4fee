use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use blockfuse::frontend::{parse_program, Program, ProgramFile};
use blockfuse::ir::ScalarExpr;
use blockfuse::lower::{ArrayOpKind, ArrayProgram};

fn run(args: &[&str], stdin: &[u8]) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_blockfuse"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin).unwrap();
    child.wait_with_output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the lowered `name` example into `dir` and returns its path.
fn lowered(dir: &Path, name: &str) -> String {
    let ex = run(&["examples", name], b"");
    assert!(ex.status.success());
    let out = dir.join(format!("{name}.json"));
    let low = run(&["lower", "-", "-o", path(&out)], &ex.stdout);
    assert!(low.status.success(), "{}", stderr(&low));
    path(&out).to_string()
}

fn single(expr: ScalarExpr) -> String {
    let mut ap = ArrayProgram::new();
    let x = ap.input("X", "M", "N");
    let y = ap.op(ArrayOpKind::elementwise(expr), &[x]);
    ap.output("Y", y);
    ProgramFile::array(ap).to_json()
}

#[test]
fn examples_emit_parseable_array_programs() {
    for name in ["attention", "layernorm-matmul", "rms-swiglu", "matmul-relu"] {
        let o = run(&["examples", name], b"");
        assert!(o.status.success());
        let parsed = parse_program(&String::from_utf8(o.stdout).unwrap()).unwrap();
        assert!(matches!(parsed.file.program, Program::Array(_)));
    }
}

#[test]
fn fuse_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let input = lowered(dir.path(), "rms-swiglu");
    let out = dir.path().join("out");
    let o = run(&["fuse", &input, "--out-dir", path(&out)], b"");
    assert!(o.status.success(), "{}", stderr(&o));
    for k in 0..3 {
        for ext in ["json", "dot", "txt"] {
            assert!(out.join(format!("snapshot_{k}.{ext}")).exists(), "snapshot_{k}.{ext}");
        }
    }
    assert!(!out.join("snapshot_3.json").exists());
    let log = fs::read_to_string(out.join("trace.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("# snapshot")).count(), 3);
    assert!(fs::read_to_string(out.join("snapshot_2.dot")).unwrap().starts_with("digraph"));
}

#[test]
fn fuse_accepts_array_programs_and_rule_flags() {
    let dir = tempfile::tempdir().unwrap();
    let ex = run(&["examples", "matmul-relu"], b"");
    let out = dir.path().join("out");
    let o = run(&["fuse", "-", "--out-dir", path(&out), "--rules", "R1,R2", "--no-extend"], &ex.stdout);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(out.join("trace.log")).unwrap();
    let rules: Vec<&str> = log.lines().filter(|l| !l.starts_with('#')).map(|l| &l[..2]).collect();
    assert_eq!(rules, ["R1", "R1"]);
}

#[test]
fn verify_self_and_fused_pass() {
    let dir = tempfile::tempdir().unwrap();
    let input = lowered(dir.path(), "layernorm-matmul");
    let o = run(&["verify", &input, &input, "--dims", "M=2,K=2,N=2"], b"");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let out = dir.path().join("out");
    assert!(run(&["fuse", &input, "--out-dir", path(&out)], b"").status.success());
    let fused = out.join("snapshot_1.json");
    let args = [
        "verify",
        &input,
        path(&fused),
        "--dims",
        "M=2,K=2,N=2",
        "--block",
        "4x4",
        "--trials",
        "20",
        "--seed",
        "42",
        "--tol",
        "1e-8",
    ];
    let o = run(&args, b"");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["trials"], 20);
}

#[test]
fn verify_mismatch_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    fs::write(&a, single(ScalarExpr::x().exp())).unwrap();
    fs::write(&b, single(ScalarExpr::x().square())).unwrap();
    let o = run(&["verify", path(&a), path(&b), "--dims", "M=1,N=1", "--trials", "3"], b"");
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("programs differ"));
}

#[test]
fn metrics_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let input = lowered(dir.path(), "attention");
    let o = run(&["metrics", &input, "--dims", "M=2,N=2,D=2,L=2", "--elem-bytes", "8"], b"");
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["kernel_count"], 7);
    assert_eq!(r["elem_bytes"], 8);
    assert!(r["internal_buffered_edges"].as_u64().unwrap() > 0);
    assert!(r["traffic_bytes"].as_u64().unwrap() > 0);
}

#[test]
fn errors_exit_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let o = run(&["lower", path(&missing)], b"");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.json"));

    let o = run(&["lower", "-"], b"{\n  \"version\": 1,\n  oops\n}");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let input = lowered(dir.path(), "matmul-relu");
    let o = run(&["lower", &input], b"");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("already a block program"));

    let o = run(&["verify", &input, &input, "--dims", "M=2"], b"");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no binding"), "{}", stderr(&o));

    for bad in [
        &["examples", "conv"][..],
        &["metrics", &input, "--dims", "M=0"],
        &["verify", &input, &input, "--dims", "M=2", "--block", "4x8"],
    ] {
        let o = run(bad, b"");
        assert_eq!(o.status.code(), Some(2), "{bad:?}");
    }
}
