//! Training objectives with hand-derived gradients.
//!
//! Embedding batches are row-major `rows x dim` slices. Each loss returns its
//! value together with the gradient for every argument that receives one;
//! stop-gradient arguments are documented and get no gradient.

use crate::error::{Error, Result};
use crate::model::{Scalar, Tensor};

/// Loss value and gradient with respect to one batch argument.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<T> {
    pub loss: f64,
    pub grad: Vec<T>,
}

/// Loss value and gradients for a two-view objective.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoViewGrad<T> {
    pub loss: f64,
    pub grad_p1: Vec<T>,
    pub grad_p2: Vec<T>,
    /// Gradients reaching the stop-gradient targets; all zero by construction.
    pub grad_z1: Vec<T>,
    pub grad_z2: Vec<T>,
}

/// Mean squared error over every element; gradient is `2 (pred - target) / N`.
pub fn loss_l2<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossGrad<T>> {
    if pred.shape != target.shape {
        return Err(Error::Contract(format!(
            "l2 loss on shapes {:?} and {:?}",
            pred.shape, target.shape
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            loss += d * d;
            T::from_f64(2.0 * d / n)
        })
        .collect();
    Ok(LossGrad { loss: loss / n, grad })
}

fn check_rows<T>(x: &[T], dim: usize, what: &str) -> Result<usize> {
    if dim == 0 || x.len() % dim != 0 {
        return Err(Error::Contract(format!("{what}: {} values is not a multiple of {dim}", x.len())));
    }
    Ok(x.len() / dim)
}

/// Unit-length rows and the original norms, in `f64`.
fn normalize_rows<T: Scalar>(x: &[T], dim: usize, what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut unit = Vec::with_capacity(x.len());
    let mut norms = Vec::with_capacity(x.len() / dim);
    for row in x.chunks(dim) {
        let norm = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Degenerate(format!("{what}: cannot normalize a zero or non-finite vector")));
        }
        unit.extend(row.iter().map(|v| v.as_f64() / norm));
        norms.push(norm);
    }
    Ok((unit, norms))
}

/// Maps a gradient with respect to unit rows back through the normalization.
fn through_normalization<T: Scalar>(unit: &[f64], norms: &[f64], grad_unit: &[f64], dim: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(unit.len());
    for ((u, g), &norm) in unit.chunks(dim).zip(grad_unit.chunks(dim)).zip(norms) {
        let dot: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
        out.extend(u.iter().zip(g).map(|(a, b)| T::from_f64((b - a * dot) / norm)));
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Positive partner of every row when two views of `n` images are stacked
/// as `[view1; view2]`.
pub fn view_pairs(n: usize) -> Vec<usize> {
    (0..2 * n).map(|i| (i + n) % (2 * n)).collect()
}

/// NT-Xent: mean over rows `i` of
/// `-log(exp(cos(z_i, z_p(i)) / tau) / sum_{k != i} exp(cos(z_i, z_k) / tau))`.
pub fn loss_ntxent<T: Scalar>(z: &[T], dim: usize, partner: &[usize], tau: f64) -> Result<LossGrad<T>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let rows = check_rows(z, dim, "nt-xent")?;
    if rows < 4 || rows % 2 != 0 || partner.len() != rows {
        return Err(Error::Contract(format!(
            "nt-xent needs an even batch of at least 4 rows with one partner each, got {rows}"
        )));
    }
    for (i, &p) in partner.iter().enumerate() {
        if p >= rows || p == i || partner[p] != i {
            return Err(Error::Contract(format!("nt-xent partner map is not a pairing at row {i}")));
        }
    }
    let (u, norms) = normalize_rows(z, dim, "nt-xent")?;
    let row = |i: usize| &u[i * dim..(i + 1) * dim];
    let mut sim = vec![0.0; rows * rows];
    for i in 0..rows {
        for k in 0..rows {
            sim[i * rows + k] = dot(row(i), row(k)) / tau;
        }
    }
    let scale = 1.0 / rows as f64;
    let mut loss = 0.0;
    // g[i][k] = dL / d sim[i][k]
    let mut g = vec![0.0; rows * rows];
    for i in 0..rows {
        let others = (0..rows).filter(|&k| k != i).map(|k| sim[i * rows + k]);
        let lse = log_sum_exp(others);
        loss += lse - sim[i * rows + partner[i]];
        for k in (0..rows).filter(|&k| k != i) {
            g[i * rows + k] = scale * (sim[i * rows + k] - lse).exp();
        }
        g[i * rows + partner[i]] -= scale;
    }
    let mut grad_u = vec![0.0; rows * dim];
    for i in 0..rows {
        for k in 0..rows {
            let w = (g[i * rows + k] + g[k * rows + i]) / tau;
            if w != 0.0 {
                for (d, &v) in grad_u[i * dim..(i + 1) * dim].iter_mut().zip(row(k)) {
                    *d += w * v;
                }
            }
        }
    }
    Ok(LossGrad {
        loss: loss * scale,
        grad: through_normalization(&u, &norms, &grad_u, dim),
    })
}

/// InfoNCE against a queue of negatives: mean over queries of
/// `-log(exp(q.k / tau) / (exp(q.k / tau) + sum_j exp(q.n_j / tau)))` on unit
/// vectors. Keys and queue are constants; the gradient is for `q` only.
pub fn loss_infonce_queue<T: Scalar>(q: &[T], k: &[T], queue: &[T], dim: usize, tau: f64) -> Result<LossGrad<T>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let rows = check_rows(q, dim, "infonce query")?;
    if check_rows(k, dim, "infonce key")? != rows || rows == 0 {
        return Err(Error::Contract("infonce needs one key per query".into()));
    }
    let negs = check_rows(queue, dim, "infonce queue")?;
    let (uq, nq) = normalize_rows(q, dim, "infonce query")?;
    let (uk, _) = normalize_rows(k, dim, "infonce key")?;
    let (un, _) = normalize_rows(queue, dim, "infonce queue")?;
    let scale = 1.0 / rows as f64;
    let mut loss = 0.0;
    let mut grad_u = vec![0.0; rows * dim];
    for i in 0..rows {
        let qi = &uq[i * dim..(i + 1) * dim];
        let key = &uk[i * dim..(i + 1) * dim];
        let mut logits = Vec::with_capacity(negs + 1);
        logits.push(dot(qi, key) / tau);
        logits.extend(un.chunks(dim).map(|n| dot(qi, n) / tau));
        let lse = log_sum_exp(logits.iter().copied());
        loss += lse - logits[0];
        let gi = &mut grad_u[i * dim..(i + 1) * dim];
        for (j, &l) in logits.iter().enumerate() {
            let mut w = (l - lse).exp();
            if j == 0 {
                w -= 1.0;
            }
            let target = if j == 0 { key } else { &un[(j - 1) * dim..j * dim] };
            let w = w * scale / tau;
            for (d, &v) in gi.iter_mut().zip(target) {
                *d += w * v;
            }
        }
    }
    Ok(LossGrad {
        loss: loss * scale,
        grad: through_normalization(&uq, &nq, &grad_u, dim),
    })
}

/// Mean over rows of `cos(p_i, z_i)` and its gradient with respect to `p`.
fn mean_cosine<T: Scalar>(p: &[T], z: &[T], dim: usize, what: &str) -> Result<(f64, Vec<T>)> {
    let rows = check_rows(p, dim, what)?;
    if check_rows(z, dim, what)? != rows || rows == 0 {
        return Err(Error::Contract(format!("{what}: prediction and target batches differ")));
    }
    let (up, np) = normalize_rows(p, dim, what)?;
    let (uz, _) = normalize_rows(z, dim, what)?;
    let scale = 1.0 / rows as f64;
    let mut total = 0.0;
    let mut grad_u = vec![0.0; rows * dim];
    for i in 0..rows {
        let zi = &uz[i * dim..(i + 1) * dim];
        total += dot(&up[i * dim..(i + 1) * dim], zi);
        for (d, &v) in grad_u[i * dim..(i + 1) * dim].iter_mut().zip(zi) {
            *d = scale * v;
        }
    }
    Ok((total * scale, through_normalization(&up, &np, &grad_u, dim)))
}

fn negate<T: Scalar>(v: Vec<T>, factor: f64) -> Vec<T> {
    v.into_iter().map(|x| T::from_f64(-factor * x.as_f64())).collect()
}

/// Symmetric BYOL objective
/// `mean_i [(2 - 2 cos(p1_i, z2_i)) + (2 - 2 cos(p2_i, z1_i))]`.
/// `z1`, `z2` come from the target network and receive no gradient.
pub fn loss_byol<T: Scalar>(p1: &[T], p2: &[T], z1: &[T], z2: &[T], dim: usize) -> Result<TwoViewGrad<T>> {
    let (c12, g1) = mean_cosine(p1, z2, dim, "byol")?;
    let (c21, g2) = mean_cosine(p2, z1, dim, "byol")?;
    Ok(TwoViewGrad {
        loss: (2.0 - 2.0 * c12) + (2.0 - 2.0 * c21),
        grad_p1: negate(g1, 2.0),
        grad_p2: negate(g2, 2.0),
        grad_z1: vec![T::zero(); z1.len()],
        grad_z2: vec![T::zero(); z2.len()],
    })
}

/// SimSiam objective `-(cos(p1, z2) + cos(p2, z1)) / 2` averaged over rows,
/// with `z1`, `z2` held constant.
pub fn loss_simsiam<T: Scalar>(p1: &[T], p2: &[T], z1: &[T], z2: &[T], dim: usize) -> Result<TwoViewGrad<T>> {
    let (c12, g1) = mean_cosine(p1, z2, dim, "simsiam")?;
    let (c21, g2) = mean_cosine(p2, z1, dim, "simsiam")?;
    Ok(TwoViewGrad {
        loss: -0.5 * (c12 + c21),
        grad_p1: negate(g1, 0.5),
        grad_p2: negate(g2, 0.5),
        grad_z1: vec![T::zero(); z1.len()],
        grad_z2: vec![T::zero(); z2.len()],
    })
}

/// Numerically stable sigmoid cross-entropy, averaged over the batch:
/// `max(l, 0) - l y + log(1 + exp(-|l|))`. Gradient is `(sigmoid(l) - y) / n`.
pub fn loss_bce<T: Scalar>(logits: &[T], labels: &[f64]) -> Result<LossGrad<T>> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::Contract("bce needs one label per logit".into()));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Contract("bce labels must be 0 or 1".into()));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&l, &y)| {
            let l = l.as_f64();
            loss += l.max(0.0) - l * y + (-l.abs()).exp().ln_1p();
            T::from_f64((crate::model::sigmoid(l) - y) / n)
        })
        .collect();
    Ok(LossGrad { loss: loss / n, grad })
}
