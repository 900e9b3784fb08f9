use proptest::prelude::*;

use voxalign::objectives::entropy;
use voxalign::tensor::{grad_check, ReduceKind, Tape, Tensor, Var};
use voxalign::Result;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn affine_hand_example() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let w = tape.constant(t(&[2, 3], &[1., 0., -1., 0., 1., 2.]));
    let b = tape.constant(t(&[3], &[0.5, 0.5, 0.5]));
    let y = tape.affine(x, w, Some(b)).unwrap();
    assert_eq!(tape.shape(y), [2, 3]);
    assert_eq!(tape.value(y).data(), [1.5, 2.5, 3.5, 3.5, 4.5, 5.5]);
}

#[test]
fn affine_rejects_mismatched_weight() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let w = tape.constant(t(&[3, 1], &[1., 1., 1.]));
    assert!(tape.affine(x, w, None).is_err());
}

#[test]
fn softmax_of_zero_and_ln3() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[0.0, 3f64.ln()]));
    let y = tape.softmax_positions(x, 1.0).unwrap();
    assert!(close(tape.value(y).data(), &[0.25, 0.75], 1e-15));
}

#[test]
fn softmax_rejects_nonpositive_temperature() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[0.0, 1.0]));
    assert!(tape.softmax_positions(x, 0.0).is_err());
    assert!(tape.softmax_positions(x, -1.0).is_err());
    assert!(tape.softmax_positions(x, f64::INFINITY).is_err());
}

#[test]
fn sigmoid_slope_at_zero_is_a_quarter() {
    let mut tape = Tape::new();
    let x = tape.variable(t(&[1], &[0.0]));
    let y = tape.sigmoid(x);
    let s = tape.sum_all(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(tape.value(y).data(), [0.5]);
    assert!((g.wrt(x).data()[0] - 0.25).abs() < 1e-15);
}

#[test]
fn tanh_and_relu_slopes() {
    let mut tape = Tape::new();
    let x = tape.variable(t(&[3], &[-1.0, 0.5, 2.0]));
    let a = tape.tanh(x);
    let r = tape.relu(x);
    let s = tape.add(a, r).unwrap();
    let l = tape.sum_all(s).unwrap();
    let g = tape.backward(l).unwrap().wrt(x);
    let want: Vec<f64> = [-1.0f64, 0.5, 2.0]
        .iter()
        .map(|&v| 1.0 - v.tanh().powi(2) + if v > 0.0 { 1.0 } else { 0.0 })
        .collect();
    assert!(close(g.data(), &want, 1e-15));
}

#[test]
fn l2_normalize_rows_have_unit_norm() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 2], &[3., 4., 0., 2.]));
    let y = tape.l2_normalize(x, 1e-12).unwrap();
    assert!(close(tape.value(y).data(), &[0.6, 0.8, 0.0, 1.0], 1e-15));
}

#[test]
fn zero_row_normalizes_to_zero() {
    let mut tape = Tape::new();
    let x = tape.variable(t(&[3], &[0., 0., 0.]));
    let y = tape.l2_normalize(x, 1e-12).unwrap();
    assert_eq!(tape.value(y).data(), [0., 0., 0.]);
    let l = tape.sum_all(y).unwrap();
    let g = tape.backward(l).unwrap().wrt(x);
    assert!(g.all_finite());
}

#[test]
fn reduce_mean_over_leading_axis() {
    let mut tape = Tape::new();
    let x = tape.variable(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
    let m = tape.reduce(x, ReduceKind::Mean, &[0]).unwrap();
    assert_eq!(tape.value(m).data(), [3., 4.]);
    let l = tape.sum_all(m).unwrap();
    let g = tape.backward(l).unwrap().wrt(x);
    assert!(close(g.data(), &[1. / 3.; 6], 1e-15));
}

#[test]
fn concat_and_select_rows_route_gradients() {
    let mut tape = Tape::new();
    let a = tape.variable(t(&[2, 1], &[1., 2.]));
    let b = tape.variable(t(&[2, 2], &[3., 4., 5., 6.]));
    let c = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.value(c).data(), [1., 3., 4., 2., 5., 6.]);
    let s = tape.select_rows(c, &[1, 1, 0]).unwrap();
    assert_eq!(tape.value(s).data(), [2., 5., 6., 2., 5., 6., 1., 3., 4.]);
    let l = tape.sum_all(s).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.wrt(a).data(), [1., 2.]);
    assert_eq!(g.wrt(b).data(), [1., 1., 2., 2.]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[1., 2.]));
    let y = tape.variable(t(&[2], &[3., 4.]));
    let p = tape.mul(x, y).unwrap();
    let l = tape.sum_all(p).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.wrt(y).data(), [1., 2.]);
    assert_eq!(g.wrt(x).data(), [0., 0.]);
}

#[test]
fn backward_needs_a_scalar() {
    let mut tape = Tape::new();
    let x = tape.variable(t(&[2], &[1., 2.]));
    assert!(tape.backward(x).is_err());
}

#[test]
fn relu_kink_is_skipped_by_grad_check() {
    let mut params = vec![t(&[2], &[0.0, 1.0])];
    let r = grad_check(&mut params, 1e-5, |tape, v| {
        let y = tape.relu(v[0]);
        tape.sum_all(y)
    })
    .unwrap();
    assert_eq!(r.skipped, 1);
    assert_eq!(r.checked, 1);
    assert!(r.passes(1e-8));
}

/// A small network touching every differentiable op.
fn composite(tape: &mut Tape<f64>, v: &[Var]) -> Result<Var> {
    let (x, w, b, c) = (v[0], v[1], v[2], v[3]);
    let h = tape.affine(x, w, Some(b))?;
    let h = tape.tanh(h);
    let s = tape.sigmoid(h);
    let hn = tape.l2_normalize(s, 1e-12)?;
    let sc = tape.cosine_rows(h, c, 1e-12)?;
    let m = tape.softmax_positions(sc, 0.7)?;
    let ht = tape.transpose(hn)?;
    let ht = tape.transpose(ht)?;
    let cat = tape.concat(&[hn, ht], 1)?;
    let pooled = tape.reduce(cat, ReduceKind::Mean, &[0])?;
    let sel = tape.select_rows(m, &[0, 0])?;
    let a = tape.sum_all(sel)?;
    let b2 = tape.mul(pooled, pooled)?;
    let b2 = tape.sum_all(b2)?;
    let b2 = tape.scale(b2, 1.5);
    let out = tape.add(a, b2)?;
    Ok(tape.add_scalar(out, 0.25))
}

fn finite_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.5f64..1.5, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn composite_gradients_match_finite_differences(
        x in finite_vec(6), w in finite_vec(9), b in finite_vec(3), c in finite_vec(3)
    ) {
        let mut params = vec![t(&[2, 3], &x), t(&[3, 3], &w), t(&[3], &b), t(&[3], &c)];
        let r = grad_check(&mut params, 1e-5, composite).unwrap();
        prop_assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn softmax_entropy_grows_with_temperature(x in finite_vec(7), b1 in 0.05f64..3.0, k in 1.0f64..4.0) {
        let mut tape = Tape::new();
        let xv = tape.constant(t(&[7], &x));
        let lo = tape.softmax_positions(xv, b1).unwrap();
        let hi = tape.softmax_positions(xv, b1 * k).unwrap();
        let (e_lo, e_hi) = (entropy(tape.value(lo).data()), entropy(tape.value(hi).data()));
        prop_assert!(e_hi + 1e-12 >= e_lo, "{e_lo} > {e_hi}");
    }

    #[test]
    fn softmax_is_exactly_permutation_equivariant(x in finite_vec(9), seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<usize> = (0..9).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let mut px = vec![0.0; 9];
        for (i, &p) in perm.iter().enumerate() {
            px[p] = x[i];
        }
        let mut tape = Tape::new();
        let a = tape.constant(t(&[9], &x));
        let b = tape.constant(t(&[9], &px));
        let ya = tape.softmax_positions(a, 0.3).unwrap();
        let yb = tape.softmax_positions(b, 0.3).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(tape.value(ya).data()[i], tape.value(yb).data()[p]);
        }
    }

    #[test]
    fn softmax_sums_to_one(x in proptest::collection::vec(-50f64..50.0, 1..40), beta in 0.01f64..10.0) {
        let n = x.len();
        let mut tape = Tape::new();
        let xv = tape.constant(t(&[n], &x));
        let y = tape.softmax_positions(xv, beta).unwrap();
        let s: f64 = tape.value(y).data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(tape.value(y).data().iter().all(|&p| p >= 0.0));
    }
}
