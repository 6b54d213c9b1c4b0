//! Reverse-mode tape. Each recorded node keeps its forward value and whatever
//! its backward kernel needs; [`Tape::backward`] walks the nodes in reverse.

use std::sync::Arc;

use super::attention::{scaled_dot_product_attention, scaled_dot_product_attention_backward};
use super::ops::{self, GeluVariant, LayerNormCache};
use super::{AttentionPlan, Float, ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        cache: LayerNormCache<T>,
    },
    Gelu(Var, GeluVariant),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        plan: Arc<AttentionPlan>,
        weights: Vec<Vec<T>>,
        visits: Vec<usize>,
    },
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
    MaskedMse {
        pred: Var,
        target: Tensor<T>,
        mask: Vec<bool>,
    },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T: Float> {
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Constant input; receives a gradient but is not a parameter.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_vars.get(id.0) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        let mut out = x.clone();
        out.add_scaled(y, T::one());
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        let mut out = x.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(y.data()) {
            *o *= v;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `x[m×n] + bias[n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = ops::add_row(self.value(x), self.value(bias))?;
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    /// `x·W + b`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        self.add_row(y, bias)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (out, cache) = ops::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                cache,
            },
        ))
    }

    pub fn gelu(&mut self, x: Var, variant: GeluVariant) -> Var {
        let out = ops::gelu(self.value(x), variant);
        self.push(out, Op::Gelu(x, variant))
    }

    /// Scaled dot-product attention of already-projected `q`, `k`, `v`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, plan: Arc<AttentionPlan>) -> Result<Var> {
        let out =
            scaled_dot_product_attention(self.value(q), self.value(k), self.value(v), &plan)?;
        Ok(self.push(
            out.context,
            Op::Attention {
                q,
                k,
                v,
                plan,
                weights: out.weights,
                visits: out.visits,
            },
        ))
    }

    /// Attention weights and per-query comparison counts of an attention node.
    pub fn attention_stats(&self, v: Var) -> Option<(&AttentionPlan, &[Vec<T>], &[usize])> {
        match &self.nodes[v.0].op {
            Op::Attention {
                plan,
                weights,
                visits,
                ..
            } => Some((plan, weights, visits)),
            _ => None,
        }
    }

    /// All attention nodes recorded so far, in order.
    pub fn attention_nodes(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].op, Op::Attention { .. }))
            .map(Var)
            .collect()
    }

    /// Selects rows (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let src = self.value(x);
        if rows.is_empty() {
            return Err(TensorError::InvalidShape {
                shape: src.shape().to_vec(),
                reason: "gather of zero rows".into(),
            });
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= src.rows()) {
            return Err(TensorError::InvalidShape {
                shape: src.shape().to_vec(),
                reason: format!("row {r} out of range"),
            });
        }
        let c = src.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in &rows {
            data.extend_from_slice(src.row(r));
        }
        let out = Tensor::new(vec![rows.len(), c], data)?;
        Ok(self.push(out, Op::GatherRows(x, rows)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.ndim() != 2 || t.cols() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.value(parts[0]).shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, c], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Mean over rows, giving `[1×d]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        let inv = T::one() / T::of(r as f64);
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
        let out = Tensor::new(vec![1, c], out).expect("valid shape");
        self.push(out, Op::MeanRows(x))
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = ops::softmax(t, t.ndim() - 1).expect("trailing axis exists");
        self.push(out, Op::Softmax(x))
    }

    /// `−log softmax(logits)[target]` for a single logit row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        let k = t.len();
        if target >= k {
            return Err(TensorError::Config(format!(
                "target class {target} out of range for {k} logits"
            )));
        }
        let mut probs = t.data().to_vec();
        ops::softmax_slice(&mut probs);
        let z = t.data();
        let top = (0..k).fold(0, |b, i| if z[i] > z[b] { i } else { b });
        let rest: T = (0..k).filter(|&i| i != top).map(|i| (z[i] - z[top]).exp()).sum();
        let loss = (z[top] - z[target]) + rest.ln_1p();
        Ok(self.push(
            Tensor::full(vec![1], loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// Mean squared error over the rows where `mask` is true.
    pub fn masked_mse(&mut self, pred: Var, target: Tensor<T>, mask: Vec<bool>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() || mask.len() != p.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_mse",
                left: p.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::Config(
                "masked_mse over an empty mask is undefined".into(),
            ));
        }
        let c = p.cols();
        let mut total = T::zero();
        for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            for (a, b) in p.row(r).iter().zip(target.row(r)) {
                total += (*a - *b) * (*a - *b);
            }
        }
        let loss = total / T::of((count * c) as f64);
        Ok(self.push(Tensor::full(vec![1], loss), Op::MaskedMse { pred, target, mask }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::full(vec![1], s), Op::Sum(x))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape().to_vec()));

        fn acc<T: Float>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_scaled(&g, T::one()),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf | Op::Param => {}
                Op::MatMul(a, b) => {
                    let (da, db) = ops::matmul_backward(self.value(*a), self.value(*b), &g)
                        .expect("shapes checked in forward");
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    let mut da = g.clone();
                    for (d, &v) in da.data_mut().iter_mut().zip(self.value(*b).data()) {
                        *d *= v;
                    }
                    let mut db = g.clone();
                    for (d, &v) in db.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *d *= v;
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddRow(x, bias) => {
                    let c = g.cols();
                    let mut db = vec![T::zero(); c];
                    for row in g.data().chunks(c) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    acc(&mut grads, *bias, Tensor::new(shape, db).expect("bias shape"));
                    acc(&mut grads, *x, g.clone());
                }
                Op::Scale(x, c) => acc(&mut grads, *x, g.map(|v| v * *c)),
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    cache,
                } => {
                    let (dx, dg, db) = ops::layer_norm_backward(cache, self.value(*gain), &g);
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gain, dg);
                    acc(&mut grads, *bias, db);
                }
                Op::Gelu(x, variant) => {
                    acc(&mut grads, *x, ops::gelu_backward(self.value(*x), &g, *variant));
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    plan,
                    weights,
                    ..
                } => {
                    let (dq, dk, dv) = scaled_dot_product_attention_backward(
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        plan,
                        weights,
                        &g,
                    )
                    .expect("shapes checked in forward");
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *v, dv);
                }
                Op::GatherRows(x, rows) => {
                    let mut dx = Tensor::zeros(self.value(*x).shape().to_vec());
                    for (j, &r) in rows.iter().enumerate() {
                        for (d, &v) in dx.row_mut(r).iter_mut().zip(g.row(j)) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::ConcatRows(parts) => {
                    let c = g.cols();
                    let mut start = 0;
                    for p in parts {
                        let shape = self.value(*p).shape().to_vec();
                        let n = shape[0] * c;
                        let part = Tensor::new(shape, g.data()[start..start + n].to_vec())
                            .expect("part shape");
                        start += n;
                        acc(&mut grads, *p, part);
                    }
                }
                Op::MeanRows(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    let inv = T::one() / T::of(shape[0] as f64);
                    let c = shape[1];
                    let dx = Tensor::from_fn(shape, |i| g.data()[i % c] * inv);
                    acc(&mut grads, *x, dx);
                }
                Op::Softmax(x) => {
                    acc(&mut grads, *x, ops::softmax_backward(&self.nodes[i].value, &g));
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let scale = g.data()[0];
                    let mut d = probs.clone();
                    d[*target] -= T::one();
                    d.iter_mut().for_each(|v| *v *= scale);
                    let shape = self.value(*logits).shape().to_vec();
                    acc(&mut grads, *logits, Tensor::new(shape, d).expect("logit shape"));
                }
                Op::MaskedMse { pred, target, mask } => {
                    let p = self.value(*pred);
                    let c = p.cols();
                    let count = mask.iter().filter(|&&m| m).count();
                    let k = g.data()[0] * T::of(2.0) / T::of((count * c) as f64);
                    let mut d = Tensor::zeros(p.shape().to_vec());
                    for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                        for j in 0..c {
                            d.row_mut(r)[j] = k * (p.row(r)[j] - target.row(r)[j]);
                        }
                    }
                    acc(&mut grads, *pred, d);
                }
                Op::Sum(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    acc(&mut grads, *x, Tensor::full(shape, g.data()[0]));
                }
            }
            grads[i] = Some(g);
        }

        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        Gradients { grads, params }
    }
}

/// Gradients of one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Float> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// `(parameter, gradient)` for every parameter that received one.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|(id, v)| self.grads[v.0].as_ref().map(|g| (*id, g)))
    }
}
