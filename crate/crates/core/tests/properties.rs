//! Invariants over randomly generated array programs.

mod common;

use blockfuse::engine::{fuse, replay, EngineConfig};
use blockfuse::frontend::{parse_program, to_dot, to_pseudocode, Program, ProgramFile};
use blockfuse::interp::{check_equivalence, Tolerance};
use blockfuse::ir::ScalarExpr as E;
use blockfuse::ir::{isomorphic, validate_program};
use blockfuse::lower::{lower, ArrayOpKind, ArrayProgram};
use blockfuse::metrics::internal_buffered_edges;
use common::binding;
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Step {
    Unary(u8),
    Hadamard(usize),
    Binary(usize),
    Softmax,
    Layernorm,
    Rmsnorm,
    Matmul,
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        3 => (0u8..4).prop_map(Step::Unary),
        2 => any::<prop::sample::Index>().prop_map(|i| Step::Hadamard(i.index(usize::MAX))),
        1 => any::<prop::sample::Index>().prop_map(|i| Step::Binary(i.index(usize::MAX))),
        1 => Just(Step::Softmax),
        1 => Just(Step::Layernorm),
        1 => Just(Step::Rmsnorm),
        2 => Just(Step::Matmul),
    ]
}

/// A program over `X: M×N`, `Y: M×N`, `W: N×K`, `Z: K×K`. Each step
/// consumes the latest value; binary steps also take an earlier value of
/// the same shape. The last one or two values become outputs.
fn build(steps: &[Step]) -> ArrayProgram {
    let mut ap = ArrayProgram::new();
    let x = ap.input("X", "M", "N");
    let y = ap.input("Y", "M", "N");
    let w = ap.input("W", "N", "K");
    let z = ap.input("Z", "K", "K");
    let mut vals: Vec<(usize, &str)> = vec![(x, "N"), (y, "N")];
    for s in steps {
        let (cur, cols) = *vals.last().unwrap();
        let same: Vec<usize> = vals.iter().filter(|v| v.1 == cols).map(|v| v.0).collect();
        let next = match s {
            Step::Unary(k) => {
                let e = match k {
                    0 => E::x().sigmoid(),
                    1 => E::x().mul(E::constant(0.5)),
                    2 => E::x().square().add(E::constant(1.0)),
                    _ => E::swish(),
                };
                (ap.op(ArrayOpKind::elementwise(e), &[cur]), cols)
            }
            Step::Hadamard(i) => (ap.op(ArrayOpKind::Hadamard, &[cur, same[i % same.len()]]), cols),
            Step::Binary(i) => {
                let e = E::var(0).sub(E::var(1).mul(E::constant(0.25)));
                (ap.op(ArrayOpKind::elementwise(e), &[same[i % same.len()], cur]), cols)
            }
            Step::Softmax => (ap.op(ArrayOpKind::Softmax, &[cur]), cols),
            Step::Layernorm => (ap.op(ArrayOpKind::Layernorm, &[cur]), cols),
            Step::Rmsnorm => (ap.op(ArrayOpKind::Rmsnorm { eps: 1e-6 }, &[cur]), cols),
            Step::Matmul => (ap.op(ArrayOpKind::Matmul, &[cur, if cols == "N" { w } else { z }]), "K"),
        };
        vals.push(next);
    }
    ap.output("O", vals.last().unwrap().0);
    if vals.len() > 3 {
        ap.output("P", vals[vals.len() - 2].0);
    }
    ap
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fusion_invariants(steps in prop::collection::vec(step(), 1..9)) {
        let ap = build(&steps);
        let p = lower(&ap).unwrap();
        prop_assert_eq!(validate_program(&p), vec![]);
        let snaps = fuse(&p, &EngineConfig::default()).unwrap();
        prop_assert!(!snaps.is_empty());
        if steps.len() > 1 {
            prop_assert!(snaps.iter().any(|s| !s.trace.is_empty()), "nothing fused in {:?}", steps);
        }
        let b = binding(&["M", "N", "K"], 2, 2);
        let mut prev = p.clone();
        for s in &snaps {
            prop_assert_eq!(validate_program(&s.program), vec![]);
            let r = check_equivalence(&p, &s.program, &b, 2, 5, Tolerance::default()).unwrap();
            prop_assert!(r.passed, "{:?}: {} mismatches", steps, r.mismatches);
            let back = parse_program(&ProgramFile::block(s.program.clone()).to_json()).unwrap().file.program;
            let Program::Block(q) = back else { panic!("kind changed") };
            prop_assert!(isomorphic(&q.graph, &s.program.graph));
            prop_assert_eq!(to_dot(&q), to_dot(&s.program));
            prop_assert_eq!(to_pseudocode(&q), to_pseudocode(&s.program));
            let replayed = replay(&prev, &s.trace).unwrap();
            prop_assert!(isomorphic(&replayed.graph, &s.program.graph));
            prev = s.program.clone();
        }
        prop_assert!(internal_buffered_edges(&prev) <= internal_buffered_edges(&p));
    }
}
