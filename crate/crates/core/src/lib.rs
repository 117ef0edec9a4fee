//! Block-program IR, rule-based operator fusion and a reference interpreter.
//!
//! Array programs (DAGs of whole-matrix operators) are lowered into
//! hierarchical block programs whose edges say whether a value lives in
//! local memory or must round-trip through global memory. A fixed set of
//! logic-preserving substitution rules, driven in priority order, removes
//! global-memory intermediates; the interpreter checks every step.

pub mod engine;
pub mod examples;
pub mod frontend;
pub mod interp;
pub mod ir;
pub mod lower;
pub mod metrics;
pub mod rules;
pub mod safe;
