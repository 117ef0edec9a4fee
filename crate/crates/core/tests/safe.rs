use blockfuse::interp::reference;
use blockfuse::safe::{safe_attention, safe_softmax_rows, softmax_rows_with, Exponent, Granularity, SeBlock, SeScalar};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(got: f64, want: f64, scale: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * scale + 1e-300
}

fn pair() -> impl Strategy<Value = SeScalar> {
    (-4.0f64..4.0, -50.0f64..50.0).prop_map(|(s, t)| SeScalar { s, t })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn add_is_a_homomorphism(a in pair(), b in pair()) {
        let (x, y) = (a.to_real(), b.to_real());
        let got = (a + b).to_real();
        prop_assert!(close(got, x + y, x.abs() + y.abs(), 1e-12), "{got} vs {}", x + y);
    }

    #[test]
    fn mul_is_a_homomorphism(a in pair(), b in pair()) {
        let (x, y) = (a.to_real(), b.to_real());
        prop_assert!(close((a * b).to_real(), x * y, (x * y).abs(), 1e-12));
    }

    #[test]
    fn inv_is_a_homomorphism(a in pair()) {
        prop_assume!(a.s.abs() > 1e-3);
        let x = a.to_real();
        prop_assert!(close(a.inv().unwrap().to_real(), 1.0 / x, (1.0 / x).abs(), 1e-12));
        prop_assert!(close((a * a.inv().unwrap()).to_real(), 1.0, 1.0, 1e-12));
    }
}

#[test]
fn addition_at_small_exponents_matches_direct_arithmetic() {
    let a = SeScalar::exp(10.0) + SeScalar::exp(9.0);
    assert!(close(a.to_real(), 10f64.exp() + 9f64.exp(), 10f64.exp(), 1e-14));
    assert_eq!(a.t, 10.0);
    let z = SeScalar { s: 0.0, t: 30.0 } + SeScalar { s: 2.5, t: -3.0 };
    assert!(close(z.to_real(), 2.5 * (-3f64).exp(), 1.0, 1e-15));
    assert_eq!(SeScalar::from_real(1.0) + SeScalar::from_real(1.0), SeScalar { s: 2.0, t: 0.0 });
}

fn random_block(rng: &mut ChaCha8Rng, r: usize, c: usize, lim: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.gen_range(-lim..lim))
}

#[test]
fn block_arithmetic_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (t1, t2) = (rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
        let a = SeBlock { s: random_block(&mut rng, 3, 4, 1.0), t: Exponent::Shared(t1) };
        let b = SeBlock { s: random_block(&mut rng, 3, 4, 1.0), t: Exponent::Shared(t2) };
        let sum = a.add(&b).unwrap();
        let want = a.to_dense() + b.to_dense();
        let scale = a.to_dense().mapv(f64::abs) + b.to_dense().mapv(f64::abs);
        for ((g, w), s) in sum.to_dense().iter().zip(&want).zip(&scale) {
            assert!(close(*g, *w, *s, 1e-12));
        }
        let rows = Array1::from_shape_fn(3, |_| rng.gen_range(-20.0..20.0));
        let ar = SeBlock { s: a.s.clone(), t: Exponent::RowWise(rows.clone()) };
        let br = SeBlock { s: b.s.clone(), t: Exponent::RowWise(rows.mapv(|v| v - 3.0)) };
        let sum = ar.add(&br).unwrap().to_dense();
        let want = ar.to_dense() + br.to_dense();
        let scale = ar.to_dense().mapv(f64::abs) + br.to_dense().mapv(f64::abs);
        for ((g, w), s) in sum.iter().zip(&want).zip(&scale) {
            assert!(close(*g, *w, *s, 1e-12));
        }

        let c = SeBlock { s: random_block(&mut rng, 4, 2, 1.0), t: Exponent::Shared(t2) };
        for lhs in [&a, &ar] {
            let prod = lhs.matmul(&c).unwrap();
            let want = lhs.to_dense().dot(&c.to_dense());
            let scale = lhs.to_dense().mapv(f64::abs).dot(&c.to_dense().mapv(f64::abs));
            for ((g, w), s) in prod.to_dense().iter().zip(&want).zip(&scale) {
                assert!(close(*g, *w, *s, 1e-10));
            }
        }
        assert_eq!(a.matmul(&c).unwrap().t, Exponent::Shared(t1 + t2));
    }
}

#[test]
fn identity_significand_returns_the_other_operand() {
    let b = SeBlock { s: array![[1.0, 2.0], [3.0, 4.0]], t: Exponent::Shared(7.0) };
    let id = SeBlock::from_real(Array2::eye(2));
    assert_eq!(id.matmul(&b).unwrap(), b);
    let zero = SeBlock::from_real(Array2::zeros((2, 2)));
    assert_eq!(zero.add(&b).unwrap().to_dense(), b.to_dense());
}

#[test]
fn softmax_survives_huge_entries() {
    let y = safe_softmax_rows(&array![[1000.0, 1001.0]]);
    let e = 1f64.exp();
    assert!((y[[0, 0]] - 1.0 / (1.0 + e)).abs() < 1e-12);
    assert!((y[[0, 1]] - e / (1.0 + e)).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_block(&mut rng, 16, 37, 1e6);
    let y = safe_softmax_rows(&x);
    assert!(y.iter().all(|v| v.is_finite()));
    for row in y.rows() {
        assert!((row.sum() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn softmax_matches_naive_on_a_safe_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let x = random_block(&mut rng, 5, 13, 5.0);
        let naive = reference::softmax_rows(&x);
        assert!(reference::max_rel_diff(&safe_softmax_rows(&x), &naive) <= 1e-12);
    }
}

#[test]
fn granularities_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        // One offset for the whole block keeps the dynamic range within 30.
        let offset = rng.gen_range(-500.0..500.0);
        let x = random_block(&mut rng, 6, 10, 15.0).mapv(|v| v + offset);
        let outs: Vec<_> = [Granularity::PerElement, Granularity::RowWise, Granularity::BlockShared]
            .into_iter()
            .map(|g| softmax_rows_with(&x, g, 3).unwrap())
            .collect();
        assert!(reference::max_rel_diff(&outs[0], &outs[1]) <= 1e-9);
        assert!(reference::max_rel_diff(&outs[0], &outs[2]) <= 1e-9);
    }
}

#[test]
fn safe_attention_matches_plain_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for block in [1, 3, 4, 8] {
        let q = random_block(&mut rng, 8, 6, 10.0);
        let kt = random_block(&mut rng, 6, 8, 10.0);
        let v = random_block(&mut rng, 8, 5, 10.0);
        let want = reference::attention(&q, &kt, &v).unwrap();
        let got = safe_attention(&q, &kt, &v, block).unwrap();
        assert!(reference::max_rel_diff(&got, &want) <= 1e-8, "block {block}");
    }
    let huge = Array2::from_elem((2, 2), 1e4);
    assert!(safe_attention(&huge, &huge, &huge, 1).unwrap().iter().all(|v| v.is_finite()));
}
