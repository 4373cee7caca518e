//! Forward kernels and vector-Jacobian products for every op kind.
//!
//! Both executors (the recording [`Tape`](super::Tape) and the
//! non-recording [`Eager`](super::Eager)) call [`forward`], so the two paths
//! produce bit-identical values for the same inputs.

use crate::error::{Error, Result};

use super::Tensor;

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul,
    /// `[m,k] x [n,k]^T -> [m,n]`
    MatMulTransB,
    Add,
    /// `[r,c] + [c]` broadcast over rows.
    BiasAdd,
    /// Column-wise concatenation of rank-2 inputs with equal row counts.
    Concat,
    Tanh,
    Relu,
    Sigmoid,
    /// Row-wise softmax. With `lengths`, row `i` only covers its first
    /// `lengths[i]` entries; the rest of the row is zero.
    Softmax { lengths: Option<Vec<usize>> },
    /// Row gather from a `[rows, d]` table.
    Gather { indices: Vec<usize> },
    ReduceMean,
    Sum,
    Scale(f64),
    Mul,
    Reshape(Vec<usize>),
    SliceCols { start: usize, end: usize },
    /// Per-row vector times per-row matrix: `x[B,m]`, `M[B,m*n]` -> `[B,n]`.
    BatchedVecMat { m: usize, n: usize },
    /// Per-row matrix times per-row vector: `M[B,n*m]`, `x[B,m]` -> `[B,n]`.
    BatchedMatVec { n: usize, m: usize },
    /// Elementwise pointwise cross-entropy on logits against fixed labels.
    BceWithLogits { labels: Vec<f64> },
    /// Elementwise `KL(Bern(p) || Bern(sigmoid(z)))` with detached teacher `p`.
    KlBernoulliLogits { teacher: Vec<f64> },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::MatMulTransB => "matmul_transb",
            OpKind::Add => "add",
            OpKind::BiasAdd => "bias_add",
            OpKind::Concat => "concat",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax { .. } => "softmax",
            OpKind::Gather { .. } => "gather",
            OpKind::ReduceMean => "reduce_mean",
            OpKind::Sum => "sum",
            OpKind::Scale(_) => "scale",
            OpKind::Mul => "mul",
            OpKind::Reshape(_) => "reshape",
            OpKind::SliceCols { .. } => "slice_cols",
            OpKind::BatchedVecMat { .. } => "batched_vecmat",
            OpKind::BatchedMatVec { .. } => "batched_matvec",
            OpKind::BceWithLogits { .. } => "bce_with_logits",
            OpKind::KlBernoulliLogits { .. } => "kl_bernoulli",
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Pointwise cross-entropy `-(y ln s(z) + (1-y) ln(1-s(z)))` in a form that is
/// stable for large `|z|`.
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

/// `KL(Bern(p) || Bern(q))` with both arguments clamped to `[eps, 1-eps]`.
pub fn kl_bernoulli(p: f64, q: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let q = q.clamp(PROB_EPS, 1.0 - PROB_EPS);
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// `KL(Bern(p) || Bern(sigmoid(z)))`, computed from the logit as cross-entropy
/// minus entropy so it keeps its precision when `sigmoid(z)` is close to 0 or
/// 1. The logit is clamped to the range matching the probability clamp.
pub fn kl_bernoulli_logit(p: f64, z: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let zmax = ((1.0 - PROB_EPS) / PROB_EPS).ln();
    let z = z.clamp(-zmax, zmax);
    bce_with_logits(z, p) + p * p.ln() + (1.0 - p) * (1.0 - p).ln()
}

fn rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected rank-2 input, got {s:?}"))),
    }
}

fn arity(kind: &OpKind, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::shape(
            kind.name(),
            format!("expected {n} inputs, got {}", inputs.len()),
        ));
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `out[m,n] = a[m,k] * b[k,n]`
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m,n] = a[m,k] * b[n,k]^T`
fn matmul_tb_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = dot(arow, brow);
        }
    }
    out
}

/// `out[k,n] = a[m,k]^T * b[m,n]`
fn matmul_ta_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn forward(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    let op = kind.name();
    match kind {
        OpKind::MatMul => {
            arity(kind, inputs, 2)?;
            let (m, k) = rank2(op, inputs[0])?;
            let (k2, n) = rank2(op, inputs[1])?;
            if k != k2 {
                return Err(Error::shape(
                    op,
                    format!("{:?} x {:?}", inputs[0].shape(), inputs[1].shape()),
                ));
            }
            Tensor::new(vec![m, n], matmul_raw(inputs[0].data(), inputs[1].data(), m, k, n))
        }
        OpKind::MatMulTransB => {
            arity(kind, inputs, 2)?;
            let (m, k) = rank2(op, inputs[0])?;
            let (n, k2) = rank2(op, inputs[1])?;
            if k != k2 {
                return Err(Error::shape(
                    op,
                    format!("{:?} x {:?}^T", inputs[0].shape(), inputs[1].shape()),
                ));
            }
            Tensor::new(vec![m, n], matmul_tb_raw(inputs[0].data(), inputs[1].data(), m, k, n))
        }
        OpKind::Add | OpKind::Mul => {
            arity(kind, inputs, 2)?;
            same_shape(op, inputs[0], inputs[1])?;
            let data = inputs[0]
                .data()
                .iter()
                .zip(inputs[1].data())
                .map(|(a, b)| if *kind == OpKind::Add { a + b } else { a * b })
                .collect();
            Tensor::new(inputs[0].shape().to_vec(), data)
        }
        OpKind::BiasAdd => {
            arity(kind, inputs, 2)?;
            let (r, c) = rank2(op, inputs[0])?;
            if inputs[1].len() != c || inputs[1].shape().len() > 2 {
                return Err(Error::shape(
                    op,
                    format!("{:?} + bias {:?}", inputs[0].shape(), inputs[1].shape()),
                ));
            }
            let b = inputs[1].data();
            let mut data = inputs[0].data().to_vec();
            for i in 0..r {
                for (o, bv) in data[i * c..(i + 1) * c].iter_mut().zip(b) {
                    *o += bv;
                }
            }
            Tensor::new(vec![r, c], data)
        }
        OpKind::Concat => {
            if inputs.is_empty() {
                return Err(Error::shape(op, "no inputs"));
            }
            let mut rows = None;
            let mut widths = Vec::with_capacity(inputs.len());
            for t in inputs {
                let (r, c) = rank2(op, t)?;
                if *rows.get_or_insert(r) != r {
                    let shapes: Vec<_> = inputs.iter().map(|t| t.shape().to_vec()).collect();
                    return Err(Error::shape(op, format!("row counts differ: {shapes:?}")));
                }
                widths.push(c);
            }
            let r = rows.unwrap_or(0);
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(r * total);
            for i in 0..r {
                for (t, &c) in inputs.iter().zip(&widths) {
                    data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
                }
            }
            Tensor::new(vec![r, total], data)
        }
        OpKind::Tanh => {
            arity(kind, inputs, 1)?;
            Ok(map(inputs[0], f64::tanh))
        }
        OpKind::Relu => {
            arity(kind, inputs, 1)?;
            Ok(map(inputs[0], |v| if v > 0.0 { v } else { 0.0 }))
        }
        OpKind::Sigmoid => {
            arity(kind, inputs, 1)?;
            Ok(map(inputs[0], sigmoid))
        }
        OpKind::Softmax { lengths } => {
            arity(kind, inputs, 1)?;
            let (r, c) = rank2(op, inputs[0])?;
            if let Some(lens) = lengths {
                if lens.len() != r || lens.iter().any(|&l| l > c) {
                    return Err(Error::shape(
                        op,
                        format!("lengths {lens:?} incompatible with {:?}", inputs[0].shape()),
                    ));
                }
            }
            let x = inputs[0].data();
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                let len = lengths.as_ref().map_or(c, |l| l[i]);
                softmax_row(&x[i * c..i * c + len], &mut data[i * c..i * c + len]);
            }
            Tensor::new(vec![r, c], data)
        }
        OpKind::Gather { indices } => {
            arity(kind, inputs, 1)?;
            let (rows, d) = rank2(op, inputs[0])?;
            let table = inputs[0].data();
            let mut data = Vec::with_capacity(indices.len() * d);
            for &ix in indices {
                if ix >= rows {
                    return Err(Error::IndexOutOfRange {
                        op,
                        index: ix,
                        size: rows,
                    });
                }
                data.extend_from_slice(&table[ix * d..(ix + 1) * d]);
            }
            Tensor::new(vec![indices.len(), d], data)
        }
        OpKind::ReduceMean => {
            arity(kind, inputs, 1)?;
            let n = inputs[0].len();
            if n == 0 {
                return Err(Error::shape(op, "mean of an empty tensor"));
            }
            let s: f64 = inputs[0].data().iter().sum();
            Ok(Tensor::scalar(s / n as f64))
        }
        OpKind::Sum => {
            arity(kind, inputs, 1)?;
            Ok(Tensor::scalar(inputs[0].data().iter().sum()))
        }
        OpKind::Scale(c) => {
            arity(kind, inputs, 1)?;
            Ok(map(inputs[0], |v| v * c))
        }
        OpKind::Reshape(shape) => {
            arity(kind, inputs, 1)?;
            inputs[0].clone().reshaped(shape.clone())
        }
        OpKind::SliceCols { start, end } => {
            arity(kind, inputs, 1)?;
            let (r, c) = rank2(op, inputs[0])?;
            if start > end || *end > c {
                return Err(Error::shape(
                    op,
                    format!("columns {start}..{end} of {:?}", inputs[0].shape()),
                ));
            }
            let w = end - start;
            let x = inputs[0].data();
            let mut data = Vec::with_capacity(r * w);
            for i in 0..r {
                data.extend_from_slice(&x[i * c + start..i * c + end]);
            }
            Tensor::new(vec![r, w], data)
        }
        OpKind::BatchedVecMat { m, n } => {
            arity(kind, inputs, 2)?;
            let (b, xm) = rank2(op, inputs[0])?;
            let (b2, mn) = rank2(op, inputs[1])?;
            if xm != *m || b != b2 || mn != m * n {
                return Err(Error::shape(
                    op,
                    format!(
                        "x {:?}, mats {:?}, m={m}, n={n}",
                        inputs[0].shape(),
                        inputs[1].shape()
                    ),
                ));
            }
            let x = inputs[0].data();
            let mats = inputs[1].data();
            let mut data = vec![0.0; b * n];
            for r in 0..b {
                let out = &mut data[r * n..(r + 1) * n];
                let mat = &mats[r * m * n..(r + 1) * m * n];
                for i in 0..*m {
                    let xv = x[r * m + i];
                    if xv == 0.0 {
                        continue;
                    }
                    for (o, mv) in out.iter_mut().zip(&mat[i * n..(i + 1) * n]) {
                        *o += xv * mv;
                    }
                }
            }
            Tensor::new(vec![b, *n], data)
        }
        OpKind::BatchedMatVec { n, m } => {
            arity(kind, inputs, 2)?;
            let (b, nm) = rank2(op, inputs[0])?;
            let (b2, xm) = rank2(op, inputs[1])?;
            if xm != *m || b != b2 || nm != m * n {
                return Err(Error::shape(
                    op,
                    format!(
                        "mats {:?}, x {:?}, n={n}, m={m}",
                        inputs[0].shape(),
                        inputs[1].shape()
                    ),
                ));
            }
            let mats = inputs[0].data();
            let x = inputs[1].data();
            let mut data = vec![0.0; b * n];
            for r in 0..b {
                let xr = &x[r * m..(r + 1) * m];
                let mat = &mats[r * n * m..(r + 1) * n * m];
                for i in 0..*n {
                    data[r * n + i] = dot(&mat[i * m..(i + 1) * m], xr);
                }
            }
            Tensor::new(vec![b, *n], data)
        }
        OpKind::BceWithLogits { labels } => {
            arity(kind, inputs, 1)?;
            if labels.len() != inputs[0].len() {
                return Err(Error::shape(
                    op,
                    format!("{} logits vs {} labels", inputs[0].len(), labels.len()),
                ));
            }
            let data = inputs[0]
                .data()
                .iter()
                .zip(labels)
                .map(|(&z, &y)| bce_with_logits(z, y))
                .collect();
            Ok(Tensor::vector(data))
        }
        OpKind::KlBernoulliLogits { teacher } => {
            arity(kind, inputs, 1)?;
            if teacher.len() != inputs[0].len() {
                return Err(Error::shape(
                    op,
                    format!("{} logits vs {} teacher probs", inputs[0].len(), teacher.len()),
                ));
            }
            let data = inputs[0]
                .data()
                .iter()
                .zip(teacher)
                .map(|(&z, &p)| kl_bernoulli_logit(p, z))
                .collect();
            Ok(Tensor::vector(data))
        }
    }
}

/// Vector-Jacobian product: gradients for each input given the gradient of
/// the output. Inputs whose `needs` flag is false get `None`.
pub fn backward(
    kind: &OpKind,
    inputs: &[&Tensor],
    output: &Tensor,
    grad: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let shaped = |like: &Tensor, data: Vec<f64>| {
        Tensor::new(like.shape().to_vec(), data).expect("gradient matches input shape")
    };
    let g = grad.data();
    match kind {
        OpKind::MatMul => {
            let (m, k) = inputs[0].dims2().unwrap();
            let (_, n) = inputs[1].dims2().unwrap();
            let da = needs[0].then(|| shaped(inputs[0], matmul_tb_raw(g, inputs[1].data(), m, n, k)));
            let db = needs[1].then(|| shaped(inputs[1], matmul_ta_raw(inputs[0].data(), g, m, k, n)));
            vec![da, db]
        }
        OpKind::MatMulTransB => {
            let (m, k) = inputs[0].dims2().unwrap();
            let (n, _) = inputs[1].dims2().unwrap();
            let da = needs[0].then(|| shaped(inputs[0], matmul_raw(g, inputs[1].data(), m, n, k)));
            let db = needs[1].then(|| shaped(inputs[1], matmul_ta_raw(g, inputs[0].data(), m, n, k)));
            vec![da, db]
        }
        OpKind::Add => vec![
            needs[0].then(|| grad.clone()),
            needs[1].then(|| shaped(inputs[1], g.to_vec())),
        ],
        OpKind::Mul => {
            let a = inputs[0].data();
            let b = inputs[1].data();
            vec![
                needs[0].then(|| shaped(inputs[0], g.iter().zip(b).map(|(g, b)| g * b).collect())),
                needs[1].then(|| shaped(inputs[1], g.iter().zip(a).map(|(g, a)| g * a).collect())),
            ]
        }
        OpKind::BiasAdd => {
            let (r, c) = inputs[0].dims2().unwrap();
            let db = needs[1].then(|| {
                let mut acc = vec![0.0; c];
                for i in 0..r {
                    for (a, gv) in acc.iter_mut().zip(&g[i * c..(i + 1) * c]) {
                        *a += gv;
                    }
                }
                shaped(inputs[1], acc)
            });
            vec![needs[0].then(|| grad.clone()), db]
        }
        OpKind::Concat => {
            let (r, total) = output.dims2().unwrap();
            let mut offset = 0;
            let mut out = Vec::with_capacity(inputs.len());
            for (t, &need) in inputs.iter().zip(needs) {
                let (_, c) = t.dims2().unwrap();
                if need {
                    let mut d = Vec::with_capacity(r * c);
                    for i in 0..r {
                        d.extend_from_slice(&g[i * total + offset..i * total + offset + c]);
                    }
                    out.push(Some(shaped(t, d)));
                } else {
                    out.push(None);
                }
                offset += c;
            }
            out
        }
        OpKind::Tanh => {
            let y = output.data();
            vec![needs[0].then(|| shaped(inputs[0], g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect()))]
        }
        OpKind::Relu => {
            let x = inputs[0].data();
            vec![needs[0].then(|| {
                shaped(inputs[0], g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect())
            })]
        }
        OpKind::Sigmoid => {
            let y = output.data();
            vec![needs[0].then(|| shaped(inputs[0], g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect()))]
        }
        OpKind::Softmax { lengths } => {
            let (r, c) = inputs[0].dims2().unwrap();
            let y = output.data();
            vec![needs[0].then(|| {
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let len = lengths.as_ref().map_or(c, |l| l[i]);
                    let yr = &y[i * c..i * c + len];
                    let gr = &g[i * c..i * c + len];
                    let s = dot(yr, gr);
                    for j in 0..len {
                        d[i * c + j] = yr[j] * (gr[j] - s);
                    }
                }
                shaped(inputs[0], d)
            })]
        }
        OpKind::Gather { indices } => {
            let (_, d) = inputs[0].dims2().unwrap();
            vec![needs[0].then(|| {
                let mut acc = vec![0.0; inputs[0].len()];
                for (row, &ix) in indices.iter().enumerate() {
                    for (a, gv) in acc[ix * d..(ix + 1) * d].iter_mut().zip(&g[row * d..(row + 1) * d]) {
                        *a += gv;
                    }
                }
                shaped(inputs[0], acc)
            })]
        }
        OpKind::ReduceMean => {
            let n = inputs[0].len() as f64;
            vec![needs[0].then(|| shaped(inputs[0], vec![g[0] / n; inputs[0].len()]))]
        }
        OpKind::Sum => vec![needs[0].then(|| shaped(inputs[0], vec![g[0]; inputs[0].len()]))],
        OpKind::Scale(c) => vec![needs[0].then(|| shaped(inputs[0], g.iter().map(|v| v * c).collect()))],
        OpKind::Reshape(_) => vec![needs[0].then(|| shaped(inputs[0], g.to_vec()))],
        OpKind::SliceCols { start, end } => {
            let (r, c) = inputs[0].dims2().unwrap();
            let w = end - start;
            vec![needs[0].then(|| {
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    d[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                shaped(inputs[0], d)
            })]
        }
        OpKind::BatchedVecMat { m, n } => {
            let (b, _) = inputs[0].dims2().unwrap();
            let x = inputs[0].data();
            let mats = inputs[1].data();
            let dx = needs[0].then(|| {
                let mut d = vec![0.0; b * m];
                for r in 0..b {
                    let gr = &g[r * n..(r + 1) * n];
                    let mat = &mats[r * m * n..(r + 1) * m * n];
                    for i in 0..*m {
                        d[r * m + i] = dot(&mat[i * n..(i + 1) * n], gr);
                    }
                }
                shaped(inputs[0], d)
            });
            let dm = needs[1].then(|| {
                let mut d = vec![0.0; b * m * n];
                for r in 0..b {
                    let gr = &g[r * n..(r + 1) * n];
                    for i in 0..*m {
                        let xv = x[r * m + i];
                        let dst = &mut d[r * m * n + i * n..r * m * n + (i + 1) * n];
                        for (o, gv) in dst.iter_mut().zip(gr) {
                            *o = xv * gv;
                        }
                    }
                }
                shaped(inputs[1], d)
            });
            vec![dx, dm]
        }
        OpKind::BatchedMatVec { n, m } => {
            let (b, _) = inputs[1].dims2().unwrap();
            let mats = inputs[0].data();
            let x = inputs[1].data();
            let dm = needs[0].then(|| {
                let mut d = vec![0.0; b * n * m];
                for r in 0..b {
                    let xr = &x[r * m..(r + 1) * m];
                    for i in 0..*n {
                        let gv = g[r * n + i];
                        let dst = &mut d[r * n * m + i * m..r * n * m + (i + 1) * m];
                        for (o, xv) in dst.iter_mut().zip(xr) {
                            *o = gv * xv;
                        }
                    }
                }
                shaped(inputs[0], d)
            });
            let dx = needs[1].then(|| {
                let mut d = vec![0.0; b * m];
                for r in 0..b {
                    let mat = &mats[r * n * m..(r + 1) * n * m];
                    let dr = &mut d[r * m..(r + 1) * m];
                    for i in 0..*n {
                        let gv = g[r * n + i];
                        if gv == 0.0 {
                            continue;
                        }
                        for (o, mv) in dr.iter_mut().zip(&mat[i * m..(i + 1) * m]) {
                            *o += gv * mv;
                        }
                    }
                }
                shaped(inputs[1], d)
            });
            vec![dm, dx]
        }
        OpKind::BceWithLogits { labels } => {
            let z = inputs[0].data();
            vec![needs[0].then(|| {
                shaped(
                    inputs[0],
                    z.iter().zip(labels).zip(g).map(|((&z, &y), gv)| gv * (sigmoid(z) - y)).collect(),
                )
            })]
        }
        OpKind::KlBernoulliLogits { teacher } => {
            let z = inputs[0].data();
            vec![needs[0].then(|| {
                shaped(
                    inputs[0],
                    z.iter()
                        .zip(teacher)
                        .zip(g)
                        .map(|((&z, &p), gv)| {
                            let q = sigmoid(z);
                            if q <= PROB_EPS || q >= 1.0 - PROB_EPS {
                                0.0
                            } else {
                                gv * (q - p.clamp(PROB_EPS, 1.0 - PROB_EPS))
                            }
                        })
                        .collect(),
                )
            })]
        }
    }
}
