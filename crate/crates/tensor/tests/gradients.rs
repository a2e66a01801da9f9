use std::collections::BTreeMap;

use pat_tensor::gradcheck::{check_gradients, max_rel_err, op_suite};
use pat_tensor::{Graph, Tensor};

#[test]
fn every_op_matches_finite_differences() {
    let cases = op_suite(20240611).unwrap();
    let mut per_op: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for c in &cases {
        let e = per_op.entry(c.op).or_default();
        e.0 += 1;
        e.1 = e.1.max(c.rel_err);
        assert!(c.rel_err <= 1e-4, "{} on {:?}: rel err {:.3e}", c.op, c.shape, c.rel_err);
    }
    for (op, (n, worst)) in &per_op {
        assert!(*n >= 5, "{op} checked on only {n} shapes");
        assert!(*worst <= 1e-4);
    }
}

#[test]
fn chained_conv_relu_sum_gradient() {
    // Relu kinks are avoided by a positive bias and positive inputs.
    let x = Tensor::from_f64(&[1, 1, 4, 4], &(0..16).map(|i| 0.1 + 0.05 * i as f64).collect::<Vec<_>>()).unwrap();
    let w = Tensor::from_f64(&[2, 1, 3, 3], &(0..18).map(|i| 0.3 - 0.02 * i as f64).collect::<Vec<_>>()).unwrap();
    let b = Tensor::from_f64(&[2], &[0.5, 0.4]).unwrap();
    let r = check_gradients(&[x, w, b], &|g: &mut Graph<f64>, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
        let y = g.relu(y);
        Ok(g.sum(y))
    }, 1e-5)
    .unwrap();
    assert!(max_rel_err(&r) <= 1e-4);
}
