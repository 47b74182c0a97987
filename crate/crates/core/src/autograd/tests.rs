use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn tensor_rejects_bad_shapes() {
    assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    assert_eq!(Tensor::scalar(3.0).item().unwrap(), 3.0);
}

#[test]
fn matmul_identity_and_dot() {
    let mut g = Graph::new();
    let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let c = g.matmul(i, b).unwrap();
    assert_eq!(g.value(c).data(), &[5.0, 6.0, 7.0, 8.0]);

    let r = g.constant(t(&[1, 2], &[1.0, 2.0]));
    let col = g.constant(t(&[2, 1], &[3.0, 4.0]));
    let d = g.matmul(r, col).unwrap();
    assert_eq!(g.value(d).shape(), &[1, 1]);
    assert_eq!(g.value(d).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_reports_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(Error::Shape { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn matmul_sum_gradient_is_row_broadcast_of_column_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Tensor::randn(&[4, 3], &mut rng);
    let b = Tensor::randn(&[3, 2], &mut rng);
    let mut g = Graph::new();
    let va = g.param(a);
    let vb = g.constant(b.clone());
    let c = g.matmul(va, vb).unwrap();
    let s = g.reduce_sum(c);
    g.backward(s).unwrap();
    let row_sums: Vec<f64> = b.data().chunks(2).map(|r| r.iter().sum()).collect();
    for row in g.grad(va).unwrap().chunks(3) {
        for (x, y) in row.iter().zip(&row_sums) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn hadamard_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
    let ones = g.constant(t(&[3], &[1.0; 3]));
    let zeros = g.constant(t(&[3], &[0.0; 3]));
    let a = g.hadamard(x, ones).unwrap();
    let b = g.hadamard(x, zeros).unwrap();
    assert_eq!(g.value(a).data(), &[1.0, 2.0, 3.0]);
    assert_eq!(g.value(b).data(), &[0.0, 0.0, 0.0]);
    let p = g.constant(t(&[2], &[2.0, 3.0]));
    let q = g.constant(t(&[2], &[5.0, 7.0]));
    let r = g.hadamard(p, q).unwrap();
    assert_eq!(g.value(r).data(), &[10.0, 21.0]);
    assert!(matches!(g.hadamard(x, p), Err(Error::Shape { .. })));
}

#[test]
fn softmax_layernorm_gelu_examples() {
    let mut g = Graph::new();
    let z = g.constant(t(&[2], &[0.0, 0.0]));
    let s = g.softmax(z).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);

    let c = g.constant(t(&[4], &[3.0; 4]));
    let ln = g.layer_norm(c, LAYER_NORM_EPS).unwrap();
    assert!(g.value(ln).data().iter().all(|&v| v == 0.0));
    assert!(g.layer_norm(c, 0.0).is_err());
    assert!(g.layer_norm(c, -1.0).is_err());

    let zero = g.constant(t(&[1], &[0.0]));
    let ge = g.gelu(zero);
    assert_eq!(g.value(ge).data(), &[0.0]);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = Graph::new();
    let x = g.constant(Tensor::randn(&[5, 9], &mut rng).map(|v| v * 30.0));
    let s = g.softmax(x).unwrap();
    for row in g.value(s).data().chunks(9) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::new();
    let logits = g.constant(Tensor::full(&[3, 4], 0.7));
    let l = g.cross_entropy(logits, &[0, 1, 3]).unwrap();
    assert!((g.value(l).item().unwrap() - 4f64.ln()).abs() < 1e-12);

    let mut prev = f64::INFINITY;
    for margin in [1.0, 5.0, 20.0, 100.0] {
        let lg = g.constant(t(&[1, 3], &[margin, 0.0, 0.0]));
        let lv = g.cross_entropy(lg, &[0]).unwrap();
        let l = g.value(lv).item().unwrap();
        assert!(l >= 0.0 && l < prev);
        prev = l;
    }
    assert!(prev < 1e-40);

    assert!(matches!(
        g.cross_entropy(logits, &[0, 4, 1]),
        Err(Error::LabelOutOfRange { label: 4, classes: 4 })
    ));
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(Error::NonScalar(_))));
}

#[test]
fn diamond_graph_accumulates_both_paths() {
    let mut g = Graph::new();
    let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
    let y = g.hadamard(x, x).unwrap();
    let s = g.reduce_sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 1.0]);
}

#[test]
fn repeated_backward_accumulates() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let y = g.scale(x, 3.0);
    let s = g.reduce_sum(y);
    g.backward(s).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0, 6.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let c = g.constant(t(&[2], &[4.0, 5.0]));
    let y = g.hadamard(x, c).unwrap();
    let s = g.reduce_sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0, 5.0]);
    assert!(g.grad(c).is_none());
}

#[test]
fn permute_transpose_reshape_mean_axis_values() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let tr = g.transpose(x).unwrap();
    assert_eq!(g.value(tr).shape(), &[3, 2]);
    assert_eq!(g.value(tr).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    let r = g.reshape(x, &[3, 2]).unwrap();
    assert_eq!(g.value(r).data(), g.value(x).data());
    assert!(g.reshape(x, &[4, 2]).is_err());
    let m0 = g.mean_axis(x, 0).unwrap();
    assert_eq!(g.value(m0).data(), &[2.5, 3.5, 4.5]);
    let m1 = g.mean_axis(x, 1).unwrap();
    assert_eq!(g.value(m1).data(), &[2.0, 5.0]);
    assert!(g.permute(x, &[0, 0]).is_err());
}
