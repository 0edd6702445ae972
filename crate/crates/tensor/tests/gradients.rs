//! Finite-difference checks for every differentiable primitive.

use docrel_tensor::{grad_check, CellGroup, Graph, NodeId, ParamStore, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weighted sum of all entries with fixed non-uniform weights, so the
/// upstream gradient is not constant.
fn weighted_sum(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    let w = Tensor::from_fn(&shape, |i| ((i * 37 % 11) as f64 - 5.0) * 0.13);
    let y = g.mul_const(x, w)?;
    g.sum(y)
}

#[test]
fn matmul_gradient_matches_central_differences() {
    let mut r = rng(1);
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::uniform(&[3, 4], 1.0, &mut r));
    let b = store.add("b", Tensor::uniform(&[4, 2], 1.0, &mut r));
    let err = grad_check(
        |g| {
            let (an, bn) = (g.param(a), g.param(b));
            let c = g.matmul(an, bn)?;
            g.sum(c)
        },
        &store,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "matmul rel err {err}");
}

#[test]
fn layer_norm_gradient() {
    let mut r = rng(2);
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::uniform(&[3, 5], 2.0, &mut r));
    let gain = store.add("gain", Tensor::uniform(&[5], 1.0, &mut r));
    let bias = store.add("bias", Tensor::uniform(&[5], 1.0, &mut r));
    let err = grad_check(
        |g| {
            let (xn, gn, bn) = (g.param(x), g.param(gain), g.param(bias));
            let y = g.layer_norm(xn, gn, bn)?;
            weighted_sum(g, y)
        },
        &store,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-5, "layer_norm rel err {err}");
}

#[test]
fn conv1d_gradient() {
    let mut r = rng(3);
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::uniform(&[6, 3], 1.0, &mut r));
    let k = store.add("k", Tensor::uniform(&[5, 3, 2], 1.0, &mut r));
    let b = store.add("b", Tensor::uniform(&[2], 1.0, &mut r));
    let err = grad_check(
        |g| {
            let (xn, kn, bn) = (g.param(x), g.param(k), g.param(b));
            let y = g.conv1d(xn, kn, bn)?;
            weighted_sum(g, y)
        },
        &store,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "conv1d rel err {err}");
}

#[test]
fn softmax_rows_gradient_with_mask() {
    let mut r = rng(4);
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::uniform(&[4, 5], 2.0, &mut r));
    let keep = [true, false, true, true, false];
    let err = grad_check(
        |g| {
            let xn = g.param(x);
            let y = g.softmax_rows(xn, Some(&keep))?;
            weighted_sum(g, y)
        },
        &store,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "softmax rel err {err}");
}

#[test]
fn relu_bias_gather_slice_concat_gradients() {
    let mut r = rng(5);
    let mut store = ParamStore::new();
    let table = store.add("table", Tensor::uniform(&[7, 4], 1.0, &mut r));
    let bias = store.add("bias", Tensor::uniform(&[4], 1.0, &mut r));
    let other = store.add("other", Tensor::uniform(&[2, 4], 1.0, &mut r));
    let err = grad_check(
        |g| {
            let t = g.param(table);
            let rows = g.gather_rows(t, &[3, 0, 3, 6])?;
            let bn = g.param(bias);
            let shifted = g.add_bias(rows, bn)?;
            let act = g.relu(shifted)?;
            let left = g.slice_cols(act, 0, 2)?;
            let right = g.slice_cols(act, 2, 4)?;
            let swapped = g.concat_cols(&[right, left])?;
            let on = g.param(other);
            let stacked = g.concat_rows(&[swapped, on])?;
            let tr = g.transpose(stacked)?;
            let flat = g.reshape(tr, &[24])?;
            let scaled = g.scale(flat, 0.7)?;
            g.logsumexp(scaled)
        },
        &store,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "composite rel err {err}");
}

#[test]
fn pool_lse_gradient() {
    let mut r = rng(6);
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::uniform(&[5, 3, 5], 2.0, &mut r));
    let groups = vec![
        CellGroup::new(vec![0, 1], vec![3, 4]),
        CellGroup::new(vec![2], vec![0]),
        CellGroup::new(vec![4, 1], vec![1, 2, 0]),
    ];
    let err = grad_check(
        |g| {
            let an = g.param(a);
            let pooled = g.pool_lse(an, groups.clone())?;
            weighted_sum(g, pooled)
        },
        &store,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "pool_lse rel err {err}");
}

#[test]
fn cross_entropy_gradient_with_excluded_rows() {
    let mut r = rng(7);
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::uniform(&[4, 3], 2.0, &mut r));
    let err = grad_check(
        |g| {
            let xn = g.param(x);
            g.cross_entropy(xn, &[Some(2), None, Some(0), Some(1)], 3.0)
        },
        &store,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "cross_entropy rel err {err}");
}

#[test]
fn mul_and_add_gradient() {
    let mut r = rng(8);
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::uniform(&[3, 3], 1.0, &mut r));
    let b = store.add("b", Tensor::uniform(&[3, 3], 1.0, &mut r));
    let err = grad_check(
        |g| {
            let (an, bn) = (g.param(a), g.param(b));
            let p = g.mul(an, bn)?;
            let s = g.add(p, an)?;
            weighted_sum(g, s)
        },
        &store,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "mul/add rel err {err}");
}

/// Central differences trade truncation error (shrinks with eps) against
/// round-off (grows as eps shrinks); the sweep must bottom out inside.
/// Small arguments make the cubic's truncation term visible and the added
/// constant makes round-off visible.
#[test]
fn eps_sweep_has_interior_minimum() {
    let mut r = rng(9);
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::uniform(&[40], 0.05, &mut r).map(|v| v + 0.1));
    let f = |g: &mut Graph| -> Result<NodeId> {
        let xn = g.param(x);
        let sq = g.mul(xn, xn)?;
        let cube = g.mul(sq, xn)?;
        let offset = g.constant(Tensor::filled(&[40], 2.5));
        let shifted = g.add(cube, offset)?;
        g.sum(shifted)
    };
    let errs: Vec<f64> = [1e-4, 1e-5, 1e-6]
        .iter()
        .map(|&eps| grad_check(f, &store, eps).unwrap())
        .collect();
    assert!(
        errs[1] < errs[0] && errs[1] < errs[2],
        "eps sweep errors {errs:?}"
    );
}
