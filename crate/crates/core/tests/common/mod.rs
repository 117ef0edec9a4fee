#![allow(dead_code)]

use std::collections::BTreeMap;

use blockfuse::interp::DimBinding;
use blockfuse::lower::{ArrayNode, ArrayProgram};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Logical inputs for `ap`, uniform in [-1, 1).
pub fn logical_inputs(ap: &ArrayProgram, b: &DimBinding, seed: u64) -> BTreeMap<String, Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for n in &ap.nodes {
        if let ArrayNode::Input { name, rows, cols, .. } = n {
            let shape = (b.extent(rows).unwrap(), b.extent(cols).unwrap());
            out.insert(name.clone(), Array2::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0)));
        }
    }
    out
}

/// Asserts `|a - b| <= rel * max(|a|, |b|) + 1e-12` elementwise.
pub fn assert_close(a: &Array2<f64>, b: &Array2<f64>, rel: f64, what: &str) {
    assert_eq!(a.dim(), b.dim(), "{what}: shapes differ");
    for ((idx, x), y) in a.indexed_iter().zip(b.iter()) {
        let tol = rel * x.abs().max(y.abs()) + 1e-12;
        assert!((x - y).abs() <= tol, "{what}: element {idx:?} differs: {x} vs {y}");
    }
}

/// A named array program with the dims it uses.
pub struct Case {
    pub name: &'static str,
    pub program: ArrayProgram,
    pub dims: Vec<&'static str>,
}

/// Every dim bound to `count` blocks with edge `edge`.
pub fn binding(dims: &[&str], count: usize, edge: usize) -> DimBinding {
    DimBinding::uniform(&dims.iter().map(|d| (*d, count)).collect::<Vec<_>>(), edge)
}

/// The built-in examples plus small programs that exercise each rule in
/// other surroundings.
pub fn corpus() -> Vec<Case> {
    use blockfuse::examples::Example;
    use blockfuse::ir::ScalarExpr as E;
    use blockfuse::lower::ArrayOpKind as Op;

    let mut out: Vec<Case> = Example::ALL
        .into_iter()
        .map(|e| Case { name: e.name(), program: e.program(), dims: e.dims().to_vec() })
        .collect();

    let mut ap = ArrayProgram::new();
    let a = ap.input("A", "M", "K");
    let b = ap.input("B", "K", "N");
    let c = ap.op(Op::Matmul, &[a, b]);
    let s = ap.op(Op::elementwise(E::x().mul(E::constant(0.5))), &[c]);
    let e = ap.op(Op::elementwise(E::x().exp()), &[s]);
    let r = ap.op(Op::elementwise(E::x().relu()), &[e]);
    ap.output("C", r);
    out.push(Case { name: "elementwise-chain", program: ap, dims: vec!["M", "K", "N"] });

    let mut ap = ArrayProgram::new();
    let a = ap.input("A", "M", "N");
    let b = ap.input("B", "M", "N");
    let g = ap.op(Op::elementwise(E::x().sigmoid()), &[a]);
    let h = ap.op(Op::elementwise(E::var(0).mul(E::var(1)).add(E::constant(1.0))), &[g, b]);
    let q = ap.op(Op::elementwise(E::x().square()), &[h]);
    ap.output("C", q);
    out.push(Case { name: "binary-elementwise", program: ap, dims: vec!["M", "N"] });

    let mut ap = ArrayProgram::new();
    let x = ap.input("X", "M", "K");
    let y = ap.input("Y", "K", "N");
    let n = ap.op(Op::Layernorm, &[x]);
    let o = ap.op(Op::Matmul, &[n, y]);
    let r = ap.op(Op::elementwise(E::x().relu()), &[o]);
    ap.output("O", r);
    out.push(Case { name: "layernorm-matmul-relu", program: ap, dims: vec!["M", "K", "N"] });

    let mut ap = ArrayProgram::new();
    let x = ap.input("X", "M", "D");
    let w = ap.input("W", "D", "K");
    let y = ap.input("Y", "K", "N");
    let h = ap.op(Op::Matmul, &[x, w]);
    let n = ap.op(Op::Layernorm, &[h]);
    let o = ap.op(Op::Matmul, &[n, y]);
    ap.output("O", o);
    out.push(Case { name: "matmul-layernorm-matmul", program: ap, dims: vec!["M", "D", "K", "N"] });

    let mut ap = ArrayProgram::new();
    let x = ap.input("X", "M", "D");
    let w = ap.input("W", "D", "K");
    let v = ap.input("V", "D", "N");
    let n = ap.op(Op::Rmsnorm { eps: 1e-6 }, &[x]);
    let o1 = ap.op(Op::Matmul, &[n, w]);
    let o2 = ap.op(Op::Matmul, &[n, v]);
    ap.output("O1", o1);
    ap.output("O2", o2);
    out.push(Case { name: "rmsnorm-two-heads", program: ap, dims: vec!["M", "D", "K", "N"] });

    let mut ap = ArrayProgram::new();
    let x = ap.input("X", "M", "K");
    let a = ap.input("A", "K", "N");
    let b = ap.input("B", "K", "L");
    let p = ap.op(Op::Softmax, &[x]);
    let o1 = ap.op(Op::Matmul, &[p, a]);
    let o2 = ap.op(Op::Matmul, &[p, b]);
    ap.output("O1", o1);
    ap.output("O2", o2);
    out.push(Case { name: "softmax-two-heads", program: ap, dims: vec!["M", "K", "N", "L"] });

    out
}
