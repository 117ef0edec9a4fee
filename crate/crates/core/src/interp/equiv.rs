use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{execute, DimBinding, ExecError};
use crate::ir::{BlockProgram, NodeKind};

/// Elements `a`, `b` agree when `|a - b| <= rel * max(|a|, |b|) + abs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rel: 1e-8, abs: 1e-12 }
    }
}

impl Tolerance {
    pub fn relative(rel: f64) -> Self {
        Tolerance { rel, ..Self::default() }
    }

    pub fn accepts(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.rel * a.abs().max(b.abs()) + self.abs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivReport {
    pub trials: usize,
    pub tol: Tolerance,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Elements outside tolerance, over all trials and outputs.
    pub mismatches: usize,
    pub passed: bool,
}

/// Dense input matrices for every `Input` node of `p`, uniform in [-1, 1).
pub fn random_inputs(
    p: &BlockProgram,
    binding: &DimBinding,
    rng: &mut impl Rng,
) -> Result<BTreeMap<String, Array2<f64>>, ExecError> {
    let mut out = BTreeMap::new();
    for n in p.graph.nodes.values() {
        if let NodeKind::Input { name, desc, .. } = &n.kind {
            let shape = binding.matrix_shape(desc)?;
            out.insert(name.clone(), Array2::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0)));
        }
    }
    Ok(out)
}

/// Input and output names with their dense shapes.
type Interface = BTreeMap<String, (bool, (usize, usize))>;

fn interface(p: &BlockProgram, binding: &DimBinding) -> Result<Interface, ExecError> {
    let mut out = BTreeMap::new();
    for n in p.graph.nodes.values() {
        match &n.kind {
            NodeKind::Input { name, desc, .. } => {
                out.insert(format!("in:{name}"), (true, binding.matrix_shape(desc)?));
            }
            NodeKind::Output { name, desc } => {
                out.insert(format!("out:{name}"), (false, binding.matrix_shape(desc)?));
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Run both programs on `trials` seeded random inputs and compare outputs.
pub fn check_equivalence(
    p1: &BlockProgram,
    p2: &BlockProgram,
    binding: &DimBinding,
    trials: usize,
    seed: u64,
    tol: Tolerance,
) -> Result<EquivReport, ExecError> {
    let (i1, i2) = (interface(p1, binding)?, interface(p2, binding)?);
    if i1 != i2 {
        return Err(ExecError::Interface(format!("{:?} vs {:?}", i1, i2)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = EquivReport { trials, tol, max_rel_err: 0.0, max_abs_err: 0.0, mismatches: 0, passed: true };
    for _ in 0..trials {
        let inputs = random_inputs(p1, binding, &mut rng)?;
        let (o1, o2) = (execute(p1, &inputs, binding)?, execute(p2, &inputs, binding)?);
        for (name, a) in &o1 {
            let b = &o2[name];
            for (x, y) in a.iter().zip(b.iter()) {
                let d = (x - y).abs();
                let m = x.abs().max(y.abs());
                if d.is_nan() {
                    report.max_abs_err = f64::INFINITY;
                    report.max_rel_err = f64::INFINITY;
                } else {
                    report.max_abs_err = report.max_abs_err.max(d);
                    if m > 0.0 {
                        report.max_rel_err = report.max_rel_err.max(d / m);
                    }
                }
                if !tol.accepts(*x, *y) {
                    report.mismatches += 1;
                }
            }
        }
    }
    report.passed = report.mismatches == 0;
    Ok(report)
}
