//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Graph`] borrows a [`ParamStore`] and records every operation eagerly:
//! values are computed on construction, gradients on [`Graph::backward`].
//! Vectors are `1 × n` rows. The only broadcast is a row vector added to
//! every row of a matrix ([`Graph::add_row`]).

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{check_finite, gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Down the rows (the token axis).
    Rows,
    /// Across the columns (the feature axis).
    Cols,
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    Mean(Var, Axis),
    Concat(Vec<Var>, Axis),
    Sigmoid(Var),
    Silu(Var),
    Softmax(Var, Axis),
    Scale(Var, f64),
    RowBlockMatMul(Var, Var),
    SquaredError(Var, Tensor),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).expect2(op)
    }

    fn push(&mut self, op_name: &'static str, dims: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        check_finite(op_name, &data)?;
        self.nodes.push(Node {
            value: Value::Owned(Tensor::from_parts(dims, data)),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Constant,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<Var> {
        let id = self.params.id(name)?;
        Ok(self.param(id))
    }

    /// Copies the value of `v` into a constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (da, db) = (self.value(a).dims(), self.value(b).dims());
        if da != db {
            return Err(Error::shape(op, da, db));
        }
        Ok(da.to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let dims = self.same_dims("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        self.push("add", dims, data, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let dims = self.same_dims("sub", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x - y).collect();
        self.push("sub", dims, data, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let dims = self.same_dims("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        self.push("mul", dims, data, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.value(a).dims(), self.value(b).dims()));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push("transpose", vec![c, r], out, Op::Transpose(a))
    }

    /// Adds the `1 × d` row `row` to every row of the `n × d` matrix `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, d) = self.dims2(a, "add_row")?;
        let (r1, d2) = self.dims2(row, "add_row")?;
        if r1 != 1 || d != d2 {
            return Err(Error::shape("add_row", self.value(a).dims(), self.value(row).dims()));
        }
        let rv = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..n {
            for (o, r) in out[i * d..(i + 1) * d].iter_mut().zip(rv) {
                *o += r;
            }
        }
        self.push("add_row", vec![n, d], out, Op::AddRow(a, row))
    }

    /// Mean over `axis`: `Rows` pools `n × d` to `1 × d`, `Cols` to `n × 1`.
    pub fn mean(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let (n, d) = self.dims2(a, "mean")?;
        let src = self.value(a).data();
        let (dims, out) = match axis {
            Axis::Rows => {
                let mut out = vec![0.0; d];
                for i in 0..n {
                    for (o, v) in out.iter_mut().zip(&src[i * d..(i + 1) * d]) {
                        *o += v;
                    }
                }
                out.iter_mut().for_each(|o| *o /= n as f64);
                (vec![1, d], out)
            }
            Axis::Cols => {
                let out = (0..n).map(|i| src[i * d..(i + 1) * d].iter().sum::<f64>() / d as f64).collect();
                (vec![n, 1], out)
            }
        };
        self.push("mean", dims, out, Op::Mean(a, axis))
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let (_, c0) = self.dims2(first, "concat")?;
        let (r0, _) = self.dims2(first, "concat")?;
        let mut shapes = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat")?;
            let ok = match axis {
                Axis::Rows => c == c0,
                Axis::Cols => r == r0,
            };
            if !ok {
                return Err(Error::shape("concat", self.value(first).dims(), self.value(p).dims()));
            }
            shapes.push((r, c));
        }
        let (dims, out) = match axis {
            Axis::Rows => {
                let rows: usize = shapes.iter().map(|s| s.0).sum();
                let mut out = Vec::with_capacity(rows * c0);
                for &p in parts {
                    out.extend_from_slice(self.value(p).data());
                }
                (vec![rows, c0], out)
            }
            Axis::Cols => {
                let cols: usize = shapes.iter().map(|s| s.1).sum();
                let mut out = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for (&p, &(_, c)) in parts.iter().zip(&shapes) {
                        out.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
                    }
                }
                (vec![r0, cols], out)
            }
        };
        self.push("concat", dims, out, Op::Concat(parts.to_vec(), axis))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let dims = self.value(a).dims().to_vec();
        let out = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        self.push("sigmoid", dims, out, Op::Sigmoid(a))
    }

    /// `x · sigmoid(x)`
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let dims = self.value(a).dims().to_vec();
        let out = self.value(a).data().iter().map(|&x| x * sigmoid(x)).collect();
        self.push("silu", dims, out, Op::Silu(a))
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let (n, d) = self.dims2(a, "softmax")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; n * d];
        let (lanes, len, stride, step) = match axis {
            Axis::Rows => (d, n, d, 1),
            Axis::Cols => (n, d, 1, d),
        };
        for lane in 0..lanes {
            let base = lane * step;
            let idx = |j: usize| base + j * stride;
            let max = (0..len).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (src[idx(j)] - max).exp();
                out[idx(j)] = e;
                total += e;
            }
            for j in 0..len {
                out[idx(j)] /= total;
            }
        }
        self.push("softmax", vec![n, d], out, Op::Softmax(a, axis))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let dims = self.value(a).dims().to_vec();
        let out = self.value(a).data().iter().map(|x| x * c).collect();
        self.push("scale", dims, out, Op::Scale(a, c))
    }

    /// Row `i` of the `n × k` input is multiplied by its own `k × d` block,
    /// rows `i·k .. (i+1)·k` of the `(n·k) × d` weight.
    pub fn row_block_matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, k) = self.dims2(x, "row_block_matmul")?;
        let (nk, d) = self.dims2(w, "row_block_matmul")?;
        if nk != n * k {
            return Err(Error::shape("row_block_matmul", self.value(x).dims(), self.value(w).dims()));
        }
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            gemm_nn(
                &xv[i * k..(i + 1) * k],
                &wv[i * k * d..(i + 1) * k * d],
                &mut out[i * d..(i + 1) * d],
                1,
                k,
                d,
            );
        }
        self.push("row_block_matmul", vec![n, d], out, Op::RowBlockMatMul(x, w))
    }

    /// Mean of `(a − target)²` over all elements, as a `1 × 1` scalar.
    pub fn squared_error(&mut self, a: Var, target: Tensor) -> Result<Var> {
        if self.value(a).dims() != target.dims() {
            return Err(Error::shape("squared_error", self.value(a).dims(), target.dims()));
        }
        let n = target.len() as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(target.data())
            .map(|(x, t)| (x - t) * (x - t))
            .sum();
        self.push("squared_error", vec![1, 1], vec![s / n], Op::SquaredError(a, target))
    }

    /// Reverse pass from a `1 × 1` node. Returns gradients for every parameter reached.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).dims() != [1, 1] {
            return Err(Error::shape("backward", self.value(loss).dims(), &[1, 1]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::new(self.params.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.add(*id, &g),
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, |d| axpy(d, &g, 1.0));
                    self.acc(&mut grads, *b, |d| axpy(d, &g, 1.0));
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, |d| axpy(d, &g, 1.0));
                    self.acc(&mut grads, *b, |d| axpy(d, &g, -1.0));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    self.acc(&mut grads, *a, |d| {
                        d.iter_mut().zip(&g).zip(bv).for_each(|((d, g), b)| *d += g * b)
                    });
                    self.acc(&mut grads, *b, |d| {
                        d.iter_mut().zip(&g).zip(av).for_each(|((d, g), a)| *d += g * a)
                    });
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).shape2().unwrap();
                    let (_, n) = self.value(*b).shape2().unwrap();
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    // dA = dC · Bᵀ, dB = Aᵀ · dC
                    self.acc(&mut grads, *a, |d| gemm_nt(&g, bv, d, m, n, k));
                    self.acc(&mut grads, *b, |d| gemm_tn(av, &g, d, m, k, n));
                }
                Op::Transpose(a) => {
                    let (r, c) = self.value(*a).shape2().unwrap();
                    self.acc(&mut grads, *a, |d| {
                        for i in 0..r {
                            for j in 0..c {
                                d[i * c + j] += g[j * r + i];
                            }
                        }
                    });
                }
                Op::AddRow(a, row) => {
                    let (n, dcols) = self.value(*a).shape2().unwrap();
                    self.acc(&mut grads, *a, |d| axpy(d, &g, 1.0));
                    self.acc(&mut grads, *row, |d| {
                        for i in 0..n {
                            axpy(d, &g[i * dcols..(i + 1) * dcols], 1.0);
                        }
                    });
                }
                Op::Mean(a, axis) => {
                    let (n, dcols) = self.value(*a).shape2().unwrap();
                    let axis = *axis;
                    self.acc(&mut grads, *a, |d| match axis {
                        Axis::Rows => {
                            for i in 0..n {
                                axpy(&mut d[i * dcols..(i + 1) * dcols], &g, 1.0 / n as f64);
                            }
                        }
                        Axis::Cols => {
                            for i in 0..n {
                                let gi = g[i] / dcols as f64;
                                d[i * dcols..(i + 1) * dcols].iter_mut().for_each(|x| *x += gi);
                            }
                        }
                    });
                }
                Op::Concat(parts, axis) => match axis {
                    Axis::Rows => {
                        let mut offset = 0;
                        for &p in parts {
                            let len = self.value(p).len();
                            self.acc(&mut grads, p, |d| axpy(d, &g[offset..offset + len], 1.0));
                            offset += len;
                        }
                    }
                    Axis::Cols => {
                        let (rows, total) = node_shape(self, i);
                        let mut col = 0;
                        for &p in parts {
                            let (_, c) = self.value(p).shape2().unwrap();
                            self.acc(&mut grads, p, |d| {
                                for r in 0..rows {
                                    axpy(
                                        &mut d[r * c..(r + 1) * c],
                                        &g[r * total + col..r * total + col + c],
                                        1.0,
                                    );
                                }
                            });
                            col += c;
                        }
                    }
                },
                Op::Sigmoid(a) => {
                    let y = self.value(Var(i)).data();
                    self.acc(&mut grads, *a, |d| {
                        d.iter_mut()
                            .zip(&g)
                            .zip(y)
                            .for_each(|((d, g), y)| *d += g * y * (1.0 - y))
                    });
                }
                Op::Silu(a) => {
                    let x = self.value(*a).data();
                    self.acc(&mut grads, *a, |d| {
                        d.iter_mut().zip(&g).zip(x).for_each(|((d, g), &x)| {
                            let s = sigmoid(x);
                            *d += g * (s + x * s * (1.0 - s));
                        })
                    });
                }
                Op::Softmax(a, axis) => {
                    let (n, dcols) = self.value(*a).shape2().unwrap();
                    let y = self.value(Var(i)).data();
                    let (lanes, len, stride, step) = match axis {
                        Axis::Rows => (dcols, n, dcols, 1),
                        Axis::Cols => (n, dcols, 1, dcols),
                    };
                    self.acc(&mut grads, *a, |d| {
                        for lane in 0..lanes {
                            let idx = |j: usize| lane * step + j * stride;
                            let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..len {
                                d[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    });
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    self.acc(&mut grads, *a, |d| axpy(d, &g, c));
                }
                Op::RowBlockMatMul(x, w) => {
                    let (n, k) = self.value(*x).shape2().unwrap();
                    let (_, dcols) = self.value(*w).shape2().unwrap();
                    let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                    self.acc(&mut grads, *x, |d| {
                        for r in 0..n {
                            gemm_nt(
                                &g[r * dcols..(r + 1) * dcols],
                                &wv[r * k * dcols..(r + 1) * k * dcols],
                                &mut d[r * k..(r + 1) * k],
                                1,
                                dcols,
                                k,
                            );
                        }
                    });
                    self.acc(&mut grads, *w, |d| {
                        for r in 0..n {
                            gemm_tn(
                                &xv[r * k..(r + 1) * k],
                                &g[r * dcols..(r + 1) * dcols],
                                &mut d[r * k * dcols..(r + 1) * k * dcols],
                                1,
                                k,
                                dcols,
                            );
                        }
                    });
                }
                Op::SquaredError(a, target) => {
                    let scale = 2.0 * g[0] / target.len() as f64;
                    let av = self.value(*a).data();
                    self.acc(&mut grads, *a, |d| {
                        d.iter_mut()
                            .zip(av)
                            .zip(target.data())
                            .for_each(|((d, x), t)| *d += scale * (x - t))
                    });
                }
            }
        }
        for g in out.by_param.iter().flatten() {
            check_finite("backward", g)?;
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if matches!(self.nodes[v.0].op, Op::Constant) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
        f(slot);
    }
}

fn node_shape(g: &Graph<'_>, i: usize) -> (usize, usize) {
    g.value(Var(i)).shape2().unwrap()
}

fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}
