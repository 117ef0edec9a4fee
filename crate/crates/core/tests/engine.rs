mod common;

use blockfuse::engine::{
    bfs_extend, bfs_fuse_no_extend, fuse, fuse_no_extend, replay, EngineConfig, EngineError, Snapshot,
};
use blockfuse::examples::Example;
use blockfuse::interp::{check_equivalence, execute, Tolerance};
use blockfuse::ir::{isomorphic, validate_program, BlockProgram};
use blockfuse::lower::{lower, ArrayOpKind, ArrayProgram};
use blockfuse::metrics::{internal_buffered_edges, kernel_count};
use blockfuse::rules::RuleMatch;
use common::{assert_close, binding, logical_inputs};

fn summary(trace: &[RuleMatch]) -> String {
    trace
        .iter()
        .map(|m| match &m.dim {
            Some(d) => format!("{}:{d}", m.rule),
            None => m.rule.to_string(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn run(ex: Example) -> (BlockProgram, Vec<Snapshot>) {
    let p = lower(&ex.program()).unwrap();
    let snaps = fuse(&p, &EngineConfig::default()).unwrap();
    (p, snaps)
}

const ATTENTION: [&str; 2] =
    ["R1:M R1:M R1:M R1:M R1:M R1:M R4:N R3:N R1:N R1:N R1:N R1:L R9 R3:D R3:N", "R6(a):L R1:N"];
const LAYERNORM_MATMUL: [&str; 2] = [
    "R1:M R1:M R1:M R1:M R1:M R1:M R1:M R4:K R5:K R3:K R3:K R1:K R1:N R1:N R1:N R1:N R2:K R3:K R3:K R2:K",
    "R6(b):N R2:K",
];
const RMS_SWIGLU: [&str; 3] = [
    "R1:M R1:M R1:M R1:M R1:M R1:M R1:M R1:M R8:D R4:D R4:D R3:D R1:D R1:K R1:K R1:K R1:K R1:K R3:D R3:D R2:D R3:K",
    "R6(a):N R1:K",
    "R6(b):K R2:D",
];

#[test]
fn golden_traces() {
    for (ex, want) in [
        (Example::Attention, &ATTENTION[..]),
        (Example::LayernormMatmul, &LAYERNORM_MATMUL[..]),
        (Example::RmsSwiglu, &RMS_SWIGLU[..]),
        (Example::MatmulRelu, &["R1:M R1:N R3:K"][..]),
    ] {
        let (_, snaps) = run(ex);
        let got: Vec<String> = snaps.iter().map(|s| summary(&s.trace)).collect();
        assert_eq!(got, want, "{ex}");
        for (i, s) in snaps.iter().enumerate() {
            assert_eq!(s.round_index, i);
        }
    }
}

#[test]
fn final_snapshots_have_no_internal_buffered_edges() {
    for ex in Example::ALL {
        let (p, snaps) = run(ex);
        assert!(internal_buffered_edges(&p) > 0, "{ex}");
        assert_eq!(internal_buffered_edges(&snaps.last().unwrap().program), 0, "{ex}");
        assert_eq!(kernel_count(&snaps.last().unwrap().program), 1, "{ex}");
    }
}

#[test]
fn every_snapshot_matches_the_unfused_program_and_the_formula() {
    for ex in Example::ALL {
        let (p, snaps) = run(ex);
        let ap = ex.program();
        for (count, edge) in [(2, 4), (1, 3), (3, 2)] {
            let b = binding(ex.dims(), count, edge);
            for s in &snaps {
                assert_eq!(validate_program(&s.program), vec![]);
                let r = check_equivalence(&p, &s.program, &b, 5, 11, Tolerance::default()).unwrap();
                assert!(r.passed, "{ex} round {}: {:?}", s.round_index, r.mismatches);
            }
            let last = &snaps.last().unwrap().program;
            for seed in 0..3 {
                let logical = logical_inputs(&ap, &b, seed);
                let got = execute(last, &ap.block_inputs(&logical).unwrap(), &b).unwrap();
                for (k, want) in ex.reference(&logical).unwrap() {
                    assert_close(&got[&k], &want, 1e-8, &format!("{ex} {k}"));
                }
            }
        }
    }
}

#[test]
fn replaying_each_trace_reproduces_its_snapshot() {
    for ex in Example::ALL {
        let (p, snaps) = run(ex);
        let mut prev = p;
        for s in &snaps {
            let again = replay(&prev, &s.trace).unwrap();
            assert!(isomorphic(&again.graph, &s.program.graph), "{ex} round {}", s.round_index);
            assert_eq!(again, s.program, "{ex} round {}", s.round_index);
            prev = s.program.clone();
        }
    }
}

#[test]
fn fusion_is_deterministic() {
    for ex in Example::ALL {
        let (_, a) = run(ex);
        let (_, b) = run(ex);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap(), "{ex}");
    }
}

#[test]
fn fixpoints_are_stable() {
    let cfg = EngineConfig::default();
    for ex in Example::ALL {
        let (_, snaps) = run(ex);
        let mut last = snaps.last().unwrap().program.clone();
        let before = last.clone();
        assert!(fuse_no_extend(&mut last, &[], &cfg).unwrap().is_empty());
        assert!(bfs_fuse_no_extend(&mut last, &cfg).unwrap().is_empty());
        assert_eq!(bfs_extend(&mut last, &cfg).unwrap(), None);
        assert_eq!(last, before);
    }
}

#[test]
fn top_level_fixpoint_is_a_single_map() {
    for (ex, steps) in [(Example::Attention, 6), (Example::LayernormMatmul, 7), (Example::RmsSwiglu, 8)] {
        let mut p = lower(&ex.program()).unwrap();
        let trace = fuse_no_extend(&mut p, &[], &EngineConfig::default()).unwrap();
        assert_eq!(trace.len(), steps, "{ex}");
        assert_eq!(kernel_count(&p), 1, "{ex}");
    }
}

#[test]
fn misc_operators_are_left_alone() {
    let mut ap = ArrayProgram::new();
    let x = ap.input("X", "M", "N");
    let a = ap.op(ArrayOpKind::Misc { name: "sort".into() }, &[x]);
    let b = ap.op(ArrayOpKind::Misc { name: "topk".into() }, &[a]);
    ap.output("Y", b);
    let p = lower(&ap).unwrap();
    let snaps = fuse(&p, &EngineConfig::default()).unwrap();
    assert_eq!(snaps.len(), 1);
    assert!(snaps[0].trace.is_empty());
    assert_eq!(snaps[0].program, p);
}

#[test]
fn round_cap_reports_the_trace() {
    let p = lower(&Example::Attention.program()).unwrap();
    let cfg = EngineConfig { max_rounds: 2, ..EngineConfig::default() };
    match fuse(&p, &cfg) {
        Err(EngineError::MaxRounds { rounds, trace, .. }) => {
            assert_eq!(rounds, 2);
            assert_eq!(trace.len(), 2);
        }
        other => panic!("expected a round-cap error, got {other:?}"),
    }
}

#[test]
fn peeling_can_be_enabled() {
    let p = lower(&Example::MatmulRelu.program()).unwrap();
    let cfg = EngineConfig { enable_peel: true, ..EngineConfig::default() };
    let snaps = fuse(&p, &cfg).unwrap();
    let b = binding(Example::MatmulRelu.dims(), 3, 2);
    for s in &snaps {
        assert!(check_equivalence(&p, &s.program, &b, 3, 5, Tolerance::default()).unwrap().passed);
    }
}

#[test]
fn restricted_rule_sets_do_not_extend() {
    use blockfuse::rules::Rule;
    let p = lower(&Example::Attention.program()).unwrap();
    let snaps = fuse(&p, &EngineConfig::only(&[Rule::R1, Rule::R2])).unwrap();
    assert_eq!(snaps.len(), 1);
    assert!(snaps[0].trace.iter().all(|m| matches!(m.rule.rule(), Rule::R1 | Rule::R2)));
}
