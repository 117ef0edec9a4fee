mod common;

use blockfuse::examples::Example;
use blockfuse::interp::{execute, DimBinding};
use blockfuse::ir::{validate_program, NodeKind, ScalarExpr};
use blockfuse::lower::{lower, ArrayOpKind, ArrayProgram};
use common::{assert_close, logical_inputs};

fn top_level_maps(ap: &ArrayProgram) -> usize {
    let p = lower(ap).unwrap();
    p.graph.nodes.values().filter(|n| matches!(n.kind, NodeKind::Map(_))).count()
}

fn bindings(dims: &[&str]) -> Vec<DimBinding> {
    let uniform = DimBinding::uniform(&dims.iter().map(|d| (*d, 2)).collect::<Vec<_>>(), 4);
    let mut ragged = DimBinding::new();
    for (i, d) in dims.iter().enumerate() {
        ragged = ragged.with_count(d, 1 + i % 3).with_edge(d, 2 + i % 2);
    }
    vec![uniform, ragged, DimBinding::uniform(&dims.iter().map(|d| (*d, 1)).collect::<Vec<_>>(), 3)]
}

fn check_against_formula(
    ap: &ArrayProgram,
    dims: &[&str],
    oracle: impl Fn(
        &std::collections::BTreeMap<String, ndarray::Array2<f64>>,
    ) -> std::collections::BTreeMap<String, ndarray::Array2<f64>>,
) {
    let p = lower(ap).unwrap();
    assert_eq!(validate_program(&p), vec![]);
    for b in bindings(dims) {
        for seed in 0..5 {
            let logical = logical_inputs(ap, &b, seed);
            let got = execute(&p, &ap.block_inputs(&logical).unwrap(), &b).unwrap();
            let want = oracle(&logical);
            assert_eq!(got.keys().collect::<Vec<_>>(), want.keys().collect::<Vec<_>>());
            for (k, w) in &want {
                assert_close(&got[k], w, 1e-8, k);
            }
        }
    }
}

#[test]
fn examples_match_dense_formulas() {
    for ex in Example::ALL {
        check_against_formula(&ex.program(), ex.dims(), |i| ex.reference(i).unwrap());
    }
}

#[test]
fn examples_lower_to_expected_operator_counts() {
    assert_eq!(top_level_maps(&Example::Attention.program()), 7);
    assert_eq!(top_level_maps(&Example::LayernormMatmul.program()), 8);
    assert_eq!(top_level_maps(&Example::RmsSwiglu.program()), 9);
    assert_eq!(top_level_maps(&Example::MatmulRelu.program()), 2);
}

fn single(op: ArrayOpKind, arity: usize) -> ArrayProgram {
    let mut ap = ArrayProgram::new();
    let args: Vec<usize> = (0..arity).map(|i| ap.input(&format!("X{i}"), "R", "C")).collect();
    let y = ap.op(op, &args);
    ap.output("Y", y);
    ap
}

#[test]
fn each_template_matches_array_evaluation() {
    let cases = [
        (ArrayOpKind::elementwise(ScalarExpr::x().exp()), 1, 1),
        (ArrayOpKind::elementwise(ScalarExpr::var(0).mul(ScalarExpr::var(1)).add(ScalarExpr::var(2))), 3, 1),
        (ArrayOpKind::divide_by(ScalarExpr::extent("C").sqrt()), 1, 1),
        (ArrayOpKind::swish(), 1, 1),
        (ArrayOpKind::Hadamard, 2, 1),
        (ArrayOpKind::Softmax, 1, 4),
        (ArrayOpKind::Layernorm, 1, 7),
        (ArrayOpKind::Rmsnorm { eps: 0.0 }, 1, 4),
        (ArrayOpKind::Rmsnorm { eps: 1e-3 }, 1, 4),
    ];
    for (op, arity, maps) in cases {
        let ap = single(op.clone(), arity);
        assert_eq!(top_level_maps(&ap), maps, "{}", op.name());
        check_against_formula(&ap, &["R", "C"], |i| ap.evaluate(i).unwrap());
    }
}

#[test]
fn matmul_is_one_top_level_map() {
    let mut ap = ArrayProgram::new();
    let a = ap.input("A", "M", "K");
    let b = ap.input("B", "K", "N");
    let c = ap.op(ArrayOpKind::Matmul, &[a, b]);
    ap.output("C", c);
    assert_eq!(top_level_maps(&ap), 1);
    let p = lower(&ap).unwrap();
    let bt = p.graph.nodes.values().find_map(|n| match &n.kind {
        NodeKind::Input { name, transposed, .. } if name == "B" => Some(*transposed),
        _ => None,
    });
    assert_eq!(bt, Some(true));
    check_against_formula(&ap, &["M", "K", "N"], |i| ap.evaluate(i).unwrap());
}

#[test]
fn unregistered_op_becomes_misc() {
    let ap = single(ArrayOpKind::Misc { name: "sort_rows".into() }, 1);
    let p = lower(&ap).unwrap();
    assert_eq!(validate_program(&p), vec![]);
    let miscs: Vec<_> = p.graph.nodes.values().filter(|n| matches!(n.kind, NodeKind::Misc { .. })).collect();
    assert_eq!(miscs.len(), 1);
}

#[test]
fn lowering_is_structurally_deterministic() {
    for ex in Example::ALL {
        let (a, b) = (lower(&ex.program()).unwrap(), lower(&ex.program()).unwrap());
        assert!(blockfuse::ir::isomorphic(&a.graph, &b.graph));
        assert_eq!(a, b);
    }
}
