//! Scaled dot-product attention over an explicit sparsity plan.
//!
//! A plan partitions the query tokens into blocks, each with its own key set,
//! separately for every group of heads. Spatial, temporal, joint, axial and
//! split-head attention are all expressed as plans over the same kernel.

use super::ops::softmax_slice;
use super::{Float, Result, Tensor, TensorError};

/// Queries that attend to the same key set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionBlock {
    pub queries: Vec<usize>,
    pub keys: Vec<usize>,
}

/// Heads `heads.start..heads.end` use `blocks`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadSegment {
    pub heads: std::ops::Range<usize>,
    pub blocks: Vec<AttentionBlock>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionPlan {
    pub tokens: usize,
    pub heads: usize,
    pub segments: Vec<HeadSegment>,
}

impl AttentionPlan {
    /// Every query attends to every token.
    pub fn dense(tokens: usize, heads: usize) -> Self {
        let all: Vec<usize> = (0..tokens).collect();
        Self::uniform(
            tokens,
            heads,
            vec![AttentionBlock {
                queries: all.clone(),
                keys: all,
            }],
        )
    }

    /// All heads share one set of blocks.
    pub fn uniform(tokens: usize, heads: usize, blocks: Vec<AttentionBlock>) -> Self {
        Self {
            tokens,
            heads,
            segments: vec![HeadSegment {
                heads: 0..heads,
                blocks,
            }],
        }
    }

    /// Checks that head segments tile `0..heads` and that each segment's
    /// blocks give every query exactly one non-empty key set.
    pub fn validate(&self) -> Result<()> {
        let mut next_head = 0;
        for seg in &self.segments {
            if seg.heads.start != next_head || seg.heads.end <= seg.heads.start {
                return Err(TensorError::Config(format!(
                    "head segments must tile 0..{} in order",
                    self.heads
                )));
            }
            next_head = seg.heads.end;
            let mut seen = vec![false; self.tokens];
            for block in &seg.blocks {
                if block.keys.is_empty() {
                    return Err(TensorError::Config("attention block with no keys".into()));
                }
                if let Some(&k) = block.keys.iter().find(|&&k| k >= self.tokens) {
                    return Err(TensorError::Config(format!("key {k} out of range")));
                }
                for &q in &block.queries {
                    if q >= self.tokens || seen[q] {
                        return Err(TensorError::Config(format!(
                            "query {q} is out of range or appears twice"
                        )));
                    }
                    seen[q] = true;
                }
            }
            if let Some(q) = seen.iter().position(|s| !s) {
                return Err(TensorError::Config(format!("query {q} has no block")));
            }
        }
        if next_head != self.heads {
            return Err(TensorError::Config(format!(
                "head segments cover {next_head} of {} heads",
                self.heads
            )));
        }
        Ok(())
    }
}

/// Result of [`scaled_dot_product_attention`].
#[derive(Clone, Debug)]
pub struct AttentionOutput<T> {
    /// Per-head contexts concatenated along the feature axis, `[L×d]`.
    pub context: Tensor<T>,
    /// Attention weights, one `|queries|×|keys|` row-major buffer per
    /// (segment, head, block) in that nesting order.
    pub weights: Vec<Vec<T>>,
    /// Query-key comparisons performed per query token, counted once per
    /// head segment.
    pub visits: Vec<usize>,
}

fn check_qkv<T: Float>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    plan: &AttentionPlan,
) -> Result<usize> {
    if q.shape() != k.shape() || q.shape() != v.shape() || q.ndim() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            left: q.shape().to_vec(),
            right: k.shape().to_vec(),
        });
    }
    if q.rows() != plan.tokens {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            left: q.shape().to_vec(),
            right: vec![plan.tokens],
        });
    }
    let d = q.cols();
    if plan.heads == 0 || d % plan.heads != 0 {
        return Err(TensorError::Config(format!(
            "hidden size {d} is not divisible by {} heads",
            plan.heads
        )));
    }
    Ok(d / plan.heads)
}

/// Multi-head scaled dot-product attention with scale `1/√(d/heads)`.
pub fn scaled_dot_product_attention<T: Float>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    plan: &AttentionPlan,
) -> Result<AttentionOutput<T>> {
    plan.validate()?;
    let dh = check_qkv(q, k, v, plan)?;
    let d = q.cols();
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut context = Tensor::zeros(q.shape().to_vec());
    let mut weights = Vec::new();
    let mut visits = vec![0usize; plan.tokens];
    for seg in &plan.segments {
        for h in seg.heads.clone() {
            let off = h * dh;
            for block in &seg.blocks {
                let nk = block.keys.len();
                let mut w = vec![T::zero(); block.queries.len() * nk];
                for (qi, &query) in block.queries.iter().enumerate() {
                    let qrow = &q.row(query)[off..off + dh];
                    let scores = &mut w[qi * nk..(qi + 1) * nk];
                    for (s, &key) in scores.iter_mut().zip(&block.keys) {
                        let krow = &k.row(key)[off..off + dh];
                        *s = qrow.iter().zip(krow).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    }
                    if h == seg.heads.start {
                        visits[query] += nk;
                    }
                    softmax_slice(scores);
                    let out = &mut context.data_mut()[query * d + off..query * d + off + dh];
                    for (&p, &key) in scores.iter().zip(&block.keys) {
                        let vrow = &v.row(key)[off..off + dh];
                        for (o, &x) in out.iter_mut().zip(vrow) {
                            *o += p * x;
                        }
                    }
                }
                weights.push(w);
            }
        }
    }
    Ok(AttentionOutput {
        context,
        weights,
        visits,
    })
}

/// Returns `(dq, dk, dv)` for the upstream context gradient `g`.
pub fn scaled_dot_product_attention_backward<T: Float>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    plan: &AttentionPlan,
    weights: &[Vec<T>],
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let dh = check_qkv(q, k, v, plan)?;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut dq = Tensor::zeros(q.shape().to_vec());
    let mut dk = Tensor::zeros(q.shape().to_vec());
    let mut dv = Tensor::zeros(q.shape().to_vec());
    let mut buffers = weights.iter();
    let mut dscore = Vec::new();
    for seg in &plan.segments {
        for h in seg.heads.clone() {
            let off = h * dh;
            for block in &seg.blocks {
                let w = buffers.next().expect("one weight buffer per block");
                let nk = block.keys.len();
                for (qi, &query) in block.queries.iter().enumerate() {
                    let probs = &w[qi * nk..(qi + 1) * nk];
                    let grow = &g.row(query)[off..off + dh];
                    dscore.clear();
                    for (&p, &key) in probs.iter().zip(&block.keys) {
                        let vrow = &v.row(key)[off..off + dh];
                        dscore.push(grow.iter().zip(vrow).map(|(&a, &b)| a * b).sum::<T>());
                        for (dvx, &gx) in dv.row_mut(key)[off..off + dh].iter_mut().zip(grow) {
                            *dvx += p * gx;
                        }
                    }
                    let dot: T = probs.iter().zip(&dscore).map(|(&p, &s)| p * s).sum();
                    for ((&p, ds), &key) in probs.iter().zip(dscore.iter_mut()).zip(&block.keys) {
                        *ds = p * (*ds - dot) * scale;
                        let ds = *ds;
                        let qrow = &q.row(query)[off..off + dh];
                        for (dkx, &qx) in dk.row_mut(key)[off..off + dh].iter_mut().zip(qrow) {
                            *dkx += ds * qx;
                        }
                        let krow = &k.row(key)[off..off + dh];
                        for (dqx, &kx) in dq.row_mut(query)[off..off + dh].iter_mut().zip(krow) {
                            *dqx += ds * kx;
                        }
                    }
                }
            }
        }
    }
    Ok((dq, dk, dv))
}
