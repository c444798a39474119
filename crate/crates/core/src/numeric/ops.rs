//! Forward primitives and their hand-written adjoints.
//!
//! Matrices are `out x in`, row-major; vectors are plain slices. Backward
//! helpers accumulate into the gradient buffers they are handed.

use crate::error::{Error, Result};

use super::Tensor;

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

/// `w x + b`.
pub fn affine(w: &Tensor, b: Option<&Tensor>, x: &[f64]) -> Result<Vec<f64>> {
    if w.rank() != 2 || w.cols() != x.len() {
        return Err(mismatch("affine", w.dims(), &[x.len()]));
    }
    let mut y = match b {
        Some(b) if b.len() == w.rows() => b.values().to_vec(),
        Some(b) => return Err(mismatch("affine bias", w.dims(), b.dims())),
        None => vec![0.0; w.rows()],
    };
    for (i, yi) in y.iter_mut().enumerate() {
        *yi += dot(w.row(i), x);
    }
    Ok(y)
}

/// Adjoint of [`affine`]: accumulates `dw += dy x^T`, `db += dy`, and
/// returns `w^T dy`.
pub fn affine_backward(
    w: &Tensor,
    x: &[f64],
    dy: &[f64],
    dw: &mut Tensor,
    db: Option<&mut Tensor>,
) -> Vec<f64> {
    let cols = w.cols();
    let mut dx = vec![0.0; cols];
    for (i, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let wr = w.row(i);
        for (dxj, wij) in dx.iter_mut().zip(wr) {
            *dxj += g * wij;
        }
        for (dwij, xj) in dw.row_mut(i).iter_mut().zip(x) {
            *dwij += g * xj;
        }
    }
    if let Some(db) = db {
        for (a, g) in db.values_mut().iter_mut().zip(dy) {
            *a += g;
        }
    }
    dx
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through ReLU given the pre-activation.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(dy)
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect()
}

pub fn tanh(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Gradient through tanh given the activation output.
pub fn tanh_backward(out: &[f64], dy: &[f64]) -> Vec<f64> {
    out.iter().zip(dy).map(|(&y, &g)| g * (1.0 - y * y)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Adjoint of softmax: `ds_i = p_i (dp_i - sum_j p_j dp_j)`.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    let inner = dot(probs, dprobs);
    probs
        .iter()
        .zip(dprobs)
        .map(|(p, g)| p * (g - inner))
        .collect()
}

/// Mean over rows of equal-width vectors.
pub fn mean_rows(rows: &[&[f64]]) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Empty("mean over zero rows".into()))?;
    let mut out = vec![0.0; first.len()];
    for r in rows {
        if r.len() != out.len() {
            return Err(mismatch("mean_rows", &[out.len()], &[r.len()]));
        }
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// `sum_i weights[i] * rows[i]`.
pub fn weighted_sum(weights: &[f64], rows: &[&[f64]]) -> Result<Vec<f64>> {
    if weights.len() != rows.len() {
        return Err(mismatch("weighted_sum", &[weights.len()], &[rows.len()]));
    }
    let first = rows
        .first()
        .ok_or_else(|| Error::Empty("weighted sum over zero rows".into()))?;
    let mut out = vec![0.0; first.len()];
    for (w, r) in weights.iter().zip(rows) {
        if r.len() != out.len() {
            return Err(mismatch("weighted_sum", &[out.len()], &[r.len()]));
        }
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o += w * v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid_grad(0.0), 0.25);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        assert_eq!(softmax(&[3.7, 3.7]), vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 1000.0, 1000.0]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn affine_with_identity_returns_input() {
        let x = [0.3, -1.2, 4.0];
        let y = affine(&Tensor::identity(3), Some(&Tensor::zeros(&[3])), &x).unwrap();
        assert_eq!(y, x.to_vec());
    }

    #[test]
    fn affine_rejects_bad_shapes() {
        let err = affine(&Tensor::identity(3), None, &[1.0, 2.0]).unwrap_err();
        match err {
            Error::ShapeMismatch { op, left, right } => {
                assert_eq!(op, "affine");
                assert_eq!(left, vec![3, 3]);
                assert_eq!(right, vec![2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn affine_backward_matches_manual_products() {
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap();
        let x = [0.5, -1.0, 2.0];
        let dy = [1.0, -2.0];
        let mut dw = Tensor::zeros(&[2, 3]);
        let mut db = Tensor::zeros(&[2]);
        let dx = affine_backward(&w, &x, &dy, &mut dw, Some(&mut db));
        assert_eq!(dx, vec![1.0 + 2.0, 2.0 - 1.0, 3.0]);
        assert_eq!(dw.values(), &[0.5, -1.0, 2.0, -1.0, 2.0, -4.0]);
        assert_eq!(db.values(), &[1.0, -2.0]);
    }

    #[test]
    fn mean_and_weighted_sum() {
        let a = [1.0, 2.0];
        let b = [3.0, -2.0];
        assert_eq!(mean_rows(&[&a, &b]).unwrap(), vec![2.0, 0.0]);
        assert_eq!(weighted_sum(&[0.25, 0.75], &[&a, &b]).unwrap(), vec![2.5, -1.0]);
        assert!(mean_rows(&[]).is_err());
    }

    #[test]
    fn softmax_backward_sums_to_zero() {
        let p = softmax(&[0.1, -0.4, 2.0]);
        let ds = softmax_backward(&p, &[1.0, 3.0, -2.0]);
        assert!(ds.iter().sum::<f64>().abs() < 1e-12);
    }
}
