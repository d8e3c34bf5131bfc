use proptest::prelude::*;

use super::*;
use crate::error::Error;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn mat(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn matmul_identity_and_hand_product() {
    let tape = Tape::new();
    let i = tape.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let b = tape.constant(mat(&[&[3.0], &[4.0]]));
    assert_eq!(i.matmul(b).unwrap().to_tensor().data(), &[3.0, 4.0]);

    let a = tape.constant(mat(&[&[1.0, 2.0]]));
    let out = a.matmul(b).unwrap();
    assert_eq!(out.shape(), vec![1, 1]);
    assert_eq!(out.item(), 11.0);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::zeros(vec![2, 3]));
    match a.matmul(b) {
        Err(Error::Shape { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn matmul_gradient_is_b_transpose_broadcast() {
    let a = mat(&[&[0.3, -1.2, 0.7], &[2.0, 0.1, -0.4]]);
    let b = mat(&[&[1.0, 2.0], &[-0.5, 0.25], &[3.0, -1.0]]);
    let tape = Tape::new();
    let (av, bv) = (tape.param(&a), tape.constant(b.clone()));
    let root = av.matmul(bv).unwrap().sum_all();
    tape.backward(root).unwrap();
    let g = tape.grad(av).unwrap();
    // d/dA_ip sum_ij (AB)_ij = sum_j B_pj
    for i in 0..2 {
        for p in 0..3 {
            let expect: f64 = b.row(p).iter().sum();
            assert!(close(g.get(i, p), expect, 1e-12));
        }
    }
    let err = grad_check(
        |_, v| Ok(v[0].matmul(v[1])?.sum_all()),
        &[a, b],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn elementwise_examples() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    assert_eq!(x.relu().to_tensor().data(), &[0.0, 0.0, 2.0]);
    assert_eq!(tape.scalar(0.0).sigmoid().item(), 0.5);

    let t2 = Tape::new();
    let z = t2.param(&Tensor::scalar(0.0));
    let s = z.sigmoid();
    t2.backward(s).unwrap();
    assert!(close(t2.grad(z).unwrap().item(), 0.25, 1e-15));
    let err = grad_check(|_, v| Ok(v[0].sigmoid()), &[Tensor::scalar(0.0)], 1e-5).unwrap();
    assert!(err < 1e-9);
}

#[test]
fn log_rejects_non_positive_entry() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![1.0, 2.0, 0.0, 3.0]));
    match x.log() {
        Err(Error::Domain { index, .. }) => assert_eq!(index, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn binary_ops_reject_mismatched_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(vec![2]));
    let b = tape.constant(Tensor::zeros(vec![3]));
    assert!(matches!(a.add(b), Err(Error::Shape { .. })));
    let s = tape.scalar(2.0);
    assert_eq!(a.add_const(1.0).mul(s).unwrap().to_tensor().data(), &[2.0, 2.0]);
}

#[test]
fn reductions() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![2.0, 4.0, 6.0]));
    assert_eq!(x.mean(None).unwrap().item(), 4.0);
    let y = tape.param(&Tensor::vector(vec![3.0, 4.0]));
    let n = y.l2_norm(None).unwrap();
    assert_eq!(n.item(), 5.0);
    tape.backward(n).unwrap();
    let g = tape.grad(y).unwrap();
    assert!(close(g.data()[0], 0.6, 1e-15) && close(g.data()[1], 0.8, 1e-15));
    let err = grad_check(|_, v| v[0].l2_norm(None), &[Tensor::vector(vec![3.0, 4.0])], 1e-5).unwrap();
    assert!(err < 1e-8);

    let m = tape.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
    assert_eq!(m.sum(Some(0)).unwrap().to_tensor().data(), &[4.0, 6.0]);
    assert_eq!(m.mean(Some(1)).unwrap().to_tensor().data(), &[1.5, 3.5]);
    assert!(matches!(m.sum(Some(2)), Err(Error::Axis { axis: 2, .. })));
}

#[test]
fn softmax_examples() {
    let tape = Tape::new();
    let a = tape.constant(mat(&[&[0.0, 0.0]])).softmax_rows().to_tensor();
    assert_eq!(a.data(), &[0.5, 0.5]);
    let b = tape
        .constant(mat(&[&[1f64.ln(), 3f64.ln()]]))
        .softmax_rows()
        .to_tensor();
    assert!(close(b.data()[0], 0.25, 1e-15) && close(b.data()[1], 0.75, 1e-15));
}

#[test]
fn rbf_examples() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.3, -2.0, 5.0]));
    assert_eq!(x.rbf_kernel(x, 0.7).unwrap().item(), 1.0);
    let a = tape.constant(Tensor::vector(vec![0.0]));
    let b = tape.constant(Tensor::vector(vec![1.0]));
    assert!(close(a.rbf_kernel(b, 1.0).unwrap().item(), 0.367879441171, 1e-12));
    assert!(a.rbf_kernel(b, 0.0).is_err());
    assert!(a.rbf_kernel(x, 1.0).is_err());
}

#[test]
fn backward_examples() {
    let tape = Tape::new();
    let x = tape.param(&Tensor::vector(vec![1.0, 2.0, 3.0]));
    let root = x.sum_all();
    tape.backward(root).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    assert!(matches!(tape.backward(root), Err(Error::BackwardTwice)));
    tape.zero_grad();
    tape.backward(root).unwrap();

    let tape = Tape::new();
    let x = tape.param(&Tensor::vector(vec![1.0, 2.0]));
    let root = x.square().sum_all();
    tape.backward(root).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);

    let tape = Tape::new();
    let x = tape.param(&Tensor::vector(vec![1.0, 2.0, 3.0]));
    let y = x.add(x).unwrap();
    tape.backward(y.sum_all()).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0, 2.0]);

    let tape = Tape::new();
    let x = tape.param(&Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(Error::NonScalarRoot(_))));
}

#[test]
fn grad_check_examples() {
    let x = Tensor::vector(vec![0.5, -1.5, 2.0, 3.25]);
    let err = grad_check(|_, v| Ok(v[0].square().sum_all()), &[x.clone()], 1e-5).unwrap();
    assert!(err < 1e-8);
    let err = grad_check(|t, _| Ok(t.scalar(4.2)), &[x.clone()], 1e-5).unwrap();
    assert_eq!(err, 0.0);
    assert!(grad_check(|_, v| Ok(v[0].sum_all()), &[x], 0.1).is_err());
}

#[test]
fn segment_ops_and_gathers() {
    let tape = Tape::new();
    let e = tape.constant(Tensor::vector(vec![0.0, 0.0, 5.0, 1.0, 2.0, 3.0]));
    let a = e.segment_softmax(vec![0usize, 2, 3, 6]).unwrap().to_tensor();
    assert_eq!(&a.data()[..3], &[0.5, 0.5, 1.0]);
    let s: f64 = a.data()[3..].iter().sum();
    assert!(close(s, 1.0, 1e-15));

    let m = tape.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
    let g = m.gather_rows(vec![2usize, 0, 2]).unwrap().to_tensor();
    assert_eq!(g.data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
    let seg = m.segment_sum(vec![0usize, 2, 3]).unwrap().to_tensor();
    assert_eq!(seg.data(), &[4.0, 6.0, 5.0, 6.0]);
    assert!(m.segment_sum(vec![0usize, 4]).is_err());
}

fn arb_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, len)
}

fn arb_matrix(max_r: usize, max_c: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_r, 1..=max_c).prop_flat_map(|(r, c)| {
        arb_vec(r * c).prop_map(move |d| Tensor::matrix(r, c, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unary_ops_match_finite_differences(x in arb_matrix(8, 8)) {
        // Avoid relu kinks within eps of zero.
        let x = Tensor::matrix(x.shape()[0], x.shape()[1],
            x.data().iter().map(|v| if v.abs() < 1e-3 { 0.1 } else { *v }).collect()).unwrap();
        let err = grad_check(|t, v| {
            let y = v[0].sigmoid().add(v[0].relu())?.add(v[0].exp().scale(0.3))?;
            let z = y.add(v[0].leaky_relu(0.2))?.add(v[0].softplus())?;
            let w = z.mul(t.constant(Tensor::full(z.shape(), 0.7)))?;
            Ok(w.softmax_rows().square().sum_all().add(v[0].square().add_const(1.0).log()?.sum_all())?)
        }, &[x], 1e-5).unwrap();
        prop_assert!(err < 1e-5, "rel err {}", err);
    }

    #[test]
    fn matrix_ops_match_finite_differences(a in arb_matrix(6, 5), seed in 0u64..1000) {
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let b: Vec<f64> = (0..c * 3).map(|i| ((i as f64 + seed as f64) * 0.37).sin()).collect();
        let b = Tensor::matrix(c, 3, b).unwrap();
        let row = Tensor::vector(vec![0.1, -0.2, 0.3]);
        let scales = Tensor::vector((0..r).map(|i| 0.5 + i as f64 * 0.1).collect());
        let err = grad_check(|_, v| {
            let p = v[0].matmul(v[1])?.add_row(v[2])?.scale_rows(v[3])?;
            let k = p.rbf_kernel_matrix(p, 0.3)?;
            let norms = p.l2_norm(Some(1))?;
            Ok(k.sum_all().add(norms.sum_all())?.add(p.transpose()?.mean(Some(0))?.square().sum_all())?)
        }, &[a, b, row, scales], 1e-5).unwrap();
        prop_assert!(err < 1e-5, "rel err {}", err);
    }

    #[test]
    fn graph_ops_match_finite_differences(x in arb_matrix(6, 4)) {
        let n = x.shape()[0];
        let last = x.len() - 1;
        let idx: Vec<usize> = (0..2 * n).map(|i| (i * 7 + 3) % n).collect();
        let offsets: Vec<usize> = (0..=n).map(|i| 2 * i).collect();
        let err = grad_check(|_, v| {
            let g = v[0].gather_rows(idx.clone())?;
            let logits = g.sum(Some(1))?;
            let a = logits.segment_softmax(offsets.clone())?;
            let agg = g.scale_rows(a)?.segment_sum(offsets.clone())?;
            Ok(agg.square().sum_all().add(agg.select(vec![0usize, last])?.sum_all())?)
        }, &[x], 1e-5).unwrap();
        prop_assert!(err < 1e-5, "rel err {}", err);
    }

    #[test]
    fn softmax_rows_normalized_and_shift_invariant(x in arb_matrix(5, 7), shift in -50.0f64..50.0) {
        let tape = Tape::new();
        let a = tape.constant(x.clone()).softmax_rows().to_tensor();
        let b = tape.constant(x).add_const(shift).softmax_rows().to_tensor();
        for i in 0..a.rows() {
            let s: f64 = a.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(a.row(i).iter().all(|&v| v >= 0.0));
        }
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn rbf_symmetric_and_bounded(x in arb_vec(5), y in arb_vec(5), gamma in 0.01f64..3.0) {
        let tape = Tape::new();
        let (a, b) = (tape.constant(Tensor::vector(x.clone())), tape.constant(Tensor::vector(y.clone())));
        let kab = a.rbf_kernel(b, gamma).unwrap().item();
        let kba = b.rbf_kernel(a, gamma).unwrap().item();
        prop_assert_eq!(kab, kba);
        prop_assert!(kab > 0.0 && kab <= 1.0);
        prop_assert_eq!(kab == 1.0, x == y || gamma * x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() < 1e-16);
    }

    #[test]
    fn backward_is_linear(x in arb_vec(6), ca in -3.0f64..3.0, cb in -3.0f64..3.0) {
        let grad_of = |which: u8| {
            let tape = Tape::new();
            let v = tape.param(&Tensor::vector(x.clone()));
            let f = v.sigmoid().square().sum_all();
            let g = v.exp().sum_all();
            let root = match which {
                0 => f,
                1 => g,
                _ => f.scale(ca).add(g.scale(cb)).unwrap(),
            };
            tape.backward(root).unwrap();
            tape.grad(v).unwrap().into_data()
        };
        let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..x.len() {
            prop_assert!((gc[i] - (ca * gf[i] + cb * gg[i])).abs() < 1e-10);
        }
    }
}
