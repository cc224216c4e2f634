//! Minimal reverse-mode tape over dense matrices: exactly the operations the
//! message-passing model needs, with deterministic (fixed-order) reductions.

use std::sync::Arc;

use crate::mat::Mat;

const LAYER_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

enum Op {
    Leaf,
    /// C = A B
    MatMul(Var, Var),
    /// Y = X + 1 b (bias broadcast over rows)
    AddBias(Var, Var),
    /// Y = A + B
    Add(Var, Var),
    /// y = x sigmoid(x), elementwise
    Silu(Var),
    /// Row-wise layer normalization with learned scale and shift.
    LayerNorm { x: Var, gamma: Var, beta: Var },
    /// Column-wise concatenation.
    ConcatCols(Vec<Var>),
    /// out[i] = x[idx[i]]
    GatherRows { x: Var, idx: Arc<Vec<u32>> },
    /// out[r] = sum over i with idx[i] = r of x[i]; accumulation runs in
    /// ascending i so the reduction order is fixed.
    ScatterAddRows { x: Var, idx: Arc<Vec<u32>> },
    /// out = base, then out[idx[i]] = rows[i] (idx entries distinct).
    OverwriteRows { base: Var, rows: Var, idx: Arc<Vec<u32>> },
    /// Scalar mean Huber loss against a constant target.
    HuberMean { pred: Var, target: Mat, delta: f64 },
}

struct Node {
    value: Arc<Mat>,
    op: Op,
}

/// Eager-forward autodiff tape.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Arc::new(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn leaf_shared(&mut self, value: Arc<Mat>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let xm = self.value(x);
        let bm = self.value(bias);
        debug_assert_eq!(bm.rows, 1);
        debug_assert_eq!(bm.cols, xm.cols);
        let mut out = xm.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&bm.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(x, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let am = self.value(a);
        let bm = self.value(b);
        debug_assert_eq!((am.rows, am.cols), (bm.rows, bm.cols));
        let mut out = am.clone();
        out.add_assign(bm);
        self.push(out, Op::Add(a, b))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let mut out = xm.clone();
        for v in out.data.iter_mut() {
            *v = *v * sigmoid(*v);
        }
        self.push(out, Op::Silu(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xm = self.value(x);
        let gm = self.value(gamma);
        let bm = self.value(beta);
        debug_assert_eq!(gm.cols, xm.cols);
        debug_assert_eq!(bm.cols, xm.cols);
        let mut out = Mat::zeros(xm.rows, xm.cols);
        for i in 0..xm.rows {
            let row = xm.row(i);
            let (hat, _, _) = normalize_row(row);
            for (j, h) in hat.iter().enumerate() {
                out.set(i, j, gm.data[j] * h + bm.data[j]);
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        debug_assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pm = self.value(p);
            debug_assert_eq!(pm.rows, rows);
            for i in 0..rows {
                out.row_mut(i)[offset..offset + pm.cols].copy_from_slice(pm.row(i));
            }
            offset += pm.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Arc<Vec<u32>>) -> Var {
        let xm = self.value(x);
        let mut out = Mat::zeros(idx.len(), xm.cols);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(xm.row(r as usize));
        }
        self.push(out, Op::GatherRows { x, idx })
    }

    pub fn scatter_add_rows(&mut self, x: Var, idx: Arc<Vec<u32>>, out_rows: usize) -> Var {
        let xm = self.value(x);
        debug_assert_eq!(xm.rows, idx.len());
        let mut out = Mat::zeros(out_rows, xm.cols);
        for (i, &r) in idx.iter().enumerate() {
            for (o, v) in out.row_mut(r as usize).iter_mut().zip(xm.row(i)) {
                *o += v;
            }
        }
        self.push(out, Op::ScatterAddRows { x, idx })
    }

    pub fn overwrite_rows(&mut self, base: Var, rows: Var, idx: Arc<Vec<u32>>) -> Var {
        let bm = self.value(base);
        let rm = self.value(rows);
        debug_assert_eq!(rm.rows, idx.len());
        debug_assert_eq!(rm.cols, bm.cols);
        let mut out = bm.clone();
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(r as usize).copy_from_slice(rm.row(i));
        }
        self.push(out, Op::OverwriteRows { base, rows, idx })
    }

    pub fn huber_mean(&mut self, pred: Var, target: Mat, delta: f64) -> Var {
        let pm = self.value(pred);
        assert_eq!(
            (pm.rows, pm.cols),
            (target.rows, target.cols),
            "loss shape mismatch"
        );
        let n = (pm.rows * pm.cols) as f64;
        let mut acc = 0.0;
        for (p, t) in pm.data.iter().zip(&target.data) {
            let r = p - t;
            acc += if r.abs() <= delta {
                0.5 * r * r
            } else {
                delta * (r.abs() - 0.5 * delta)
            };
        }
        let value = Mat::from_flat(1, 1, vec![acc / n]);
        self.push(value, Op::HuberMean { pred, target, delta })
    }

    /// Reverse pass from scalar `loss`; returns one gradient slot per node.
    pub fn backward(&mut self, loss: Var) -> Vec<Option<Mat>> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat>> = (0..n).map(|_| None).collect();
        {
            let lm = &self.nodes[loss.0].value;
            assert_eq!((lm.rows, lm.cols), (1, 1), "backward needs a scalar loss");
        }
        grads[loss.0] = Some(Mat::from_flat(1, 1, vec![1.0]));

        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(grad);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = grad.matmul_nt(&self.nodes[b.0].value);
                    let db = self.nodes[a.0].value.matmul_tn(&grad);
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::AddBias(x, bias) => {
                    let (x, bias) = (*x, *bias);
                    let mut db = Mat::zeros(1, grad.cols);
                    for i in 0..grad.rows {
                        for (d, g) in db.data.iter_mut().zip(grad.row(i)) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, bias, db);
                    accumulate(&mut grads, x, grad);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, grad.clone());
                    accumulate(&mut grads, b, grad);
                }
                Op::Silu(x) => {
                    let x = *x;
                    let xm = Arc::clone(&self.nodes[x.0].value);
                    let mut dx = grad;
                    for (d, &v) in dx.data.iter_mut().zip(&xm.data) {
                        let s = sigmoid(v);
                        *d *= s * (1.0 + v * (1.0 - s));
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let xm = Arc::clone(&self.nodes[x.0].value);
                    let gm = Arc::clone(&self.nodes[gamma.0].value);
                    let cols = xm.cols as f64;
                    let mut dx = Mat::zeros(xm.rows, xm.cols);
                    let mut dgamma = Mat::zeros(1, xm.cols);
                    let mut dbeta = Mat::zeros(1, xm.cols);
                    for i in 0..xm.rows {
                        let row = xm.row(i);
                        let (hat, _, sigma) = normalize_row(row);
                        let gr = grad.row(i);
                        // d beta and d gamma accumulate over rows.
                        for j in 0..xm.cols {
                            dbeta.data[j] += gr[j];
                            dgamma.data[j] += gr[j] * hat[j];
                        }
                        // dx = (dhat - mean(dhat) - hat * mean(dhat . hat)) / sigma
                        let dhat: Vec<f64> =
                            (0..xm.cols).map(|j| gr[j] * gm.data[j]).collect();
                        let mean_dhat: f64 = dhat.iter().sum::<f64>() / cols;
                        let mean_dhat_hat: f64 =
                            dhat.iter().zip(&hat).map(|(d, h)| d * h).sum::<f64>() / cols;
                        for j in 0..xm.cols {
                            dx.set(
                                i,
                                j,
                                (dhat[j] - mean_dhat - hat[j] * mean_dhat_hat) / sigma,
                            );
                        }
                    }
                    accumulate(&mut grads, x, dx);
                    accumulate(&mut grads, gamma, dgamma);
                    accumulate(&mut grads, beta, dbeta);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.nodes[p.0].value.cols;
                        let mut dp = Mat::zeros(grad.rows, pc);
                        for i in 0..grad.rows {
                            dp.row_mut(i).copy_from_slice(&grad.row(i)[offset..offset + pc]);
                        }
                        offset += pc;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::GatherRows { x, idx } => {
                    let x = *x;
                    let idx = Arc::clone(idx);
                    let xm_rows = self.nodes[x.0].value.rows;
                    let mut dx = Mat::zeros(xm_rows, grad.cols);
                    for (i, &r) in idx.iter().enumerate() {
                        for (d, g) in dx.row_mut(r as usize).iter_mut().zip(grad.row(i)) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::ScatterAddRows { x, idx } => {
                    let x = *x;
                    let idx = Arc::clone(idx);
                    let mut dx = Mat::zeros(idx.len(), grad.cols);
                    for (i, &r) in idx.iter().enumerate() {
                        dx.row_mut(i).copy_from_slice(grad.row(r as usize));
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::OverwriteRows { base, rows, idx } => {
                    let (base, rows) = (*base, *rows);
                    let idx = Arc::clone(idx);
                    let mut drows = Mat::zeros(idx.len(), grad.cols);
                    let mut dbase = grad;
                    for (i, &r) in idx.iter().enumerate() {
                        drows.row_mut(i).copy_from_slice(dbase.row(r as usize));
                        dbase.row_mut(r as usize).fill(0.0);
                    }
                    accumulate(&mut grads, rows, drows);
                    accumulate(&mut grads, base, dbase);
                }
                Op::HuberMean { pred, target, delta } => {
                    let pred = *pred;
                    let delta = *delta;
                    let scale = grad.data[0]
                        / (self.nodes[pred.0].value.rows * self.nodes[pred.0].value.cols) as f64;
                    let pm = Arc::clone(&self.nodes[pred.0].value);
                    let mut dp = Mat::zeros(pm.rows, pm.cols);
                    for ((d, p), t) in dp.data.iter_mut().zip(&pm.data).zip(&target.data) {
                        let r = p - t;
                        *d = scale * if r.abs() <= delta { r } else { delta * r.signum() };
                    }
                    accumulate(&mut grads, pred, dp);
                }
            }
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row layer-norm internals: normalized row, mean, sigma.
fn normalize_row(row: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sigma = (var + LAYER_NORM_EPS).sqrt();
    (row.iter().map(|v| (v - mean) / sigma).collect(), mean, sigma)
}
