//! Attention variants expressed as sparsity plans over a token grid.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GridDims, ModelError};
use crate::tensor::{scaled_dot_product_attention, AttentionBlock, AttentionPlan, HeadSegment, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    Spatial,
    JointSpaceTime,
    DividedSpaceTime,
    Axial,
    FactorizedEncoder,
    FactorizedSelfAttn,
    FactorizedDotProduct,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 7] = [
        AttentionVariant::Spatial,
        AttentionVariant::JointSpaceTime,
        AttentionVariant::DividedSpaceTime,
        AttentionVariant::Axial,
        AttentionVariant::FactorizedEncoder,
        AttentionVariant::FactorizedSelfAttn,
        AttentionVariant::FactorizedDotProduct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionVariant::Spatial => "spatial",
            AttentionVariant::JointSpaceTime => "joint_spacetime",
            AttentionVariant::DividedSpaceTime => "divided_spacetime",
            AttentionVariant::Axial => "axial",
            AttentionVariant::FactorizedEncoder => "factorized_encoder",
            AttentionVariant::FactorizedSelfAttn => "factorized_selfattn",
            AttentionVariant::FactorizedDotProduct => "factorized_dotproduct",
        }
    }

    pub fn is_factorized(self) -> bool {
        matches!(
            self,
            AttentionVariant::FactorizedEncoder
                | AttentionVariant::FactorizedSelfAttn
                | AttentionVariant::FactorizedDotProduct
        )
    }

    /// Closed-form query-key comparisons per patch token, where one exists.
    pub fn closed_form_count(self, n: usize, f: usize) -> Option<usize> {
        match self {
            AttentionVariant::Spatial => Some(n + 1),
            AttentionVariant::JointSpaceTime => Some(n * f + 1),
            AttentionVariant::DividedSpaceTime => Some(n + f + 2),
            _ => None,
        }
    }
}

impl std::str::FromStr for AttentionVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        AttentionVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown attention variant {s:?}"))
    }
}

/// Token positions of a `t × h × w` grid, laid out t-major after an optional
/// leading class token.
#[derive(Clone, Copy, Debug)]
struct Layout {
    dims: GridDims,
    cls: bool,
}

impl Layout {
    fn index(&self, t: usize, h: usize, w: usize) -> usize {
        usize::from(self.cls) + (t * self.dims.h + h) * self.dims.w + w
    }

    fn tokens(&self) -> usize {
        usize::from(self.cls) + self.dims.len()
    }

    /// One block per group; the class token is an extra key of every block and
    /// attends to all tokens itself.
    fn blocks(&self, groups: Vec<Vec<usize>>) -> Vec<AttentionBlock> {
        let mut blocks: Vec<AttentionBlock> = groups
            .into_iter()
            .map(|queries| {
                let mut keys = queries.clone();
                if self.cls {
                    keys.push(0);
                }
                AttentionBlock { queries, keys }
            })
            .collect();
        if self.cls {
            blocks.push(AttentionBlock {
                queries: vec![0],
                keys: (0..self.tokens()).collect(),
            });
        }
        blocks
    }

    fn per_frame(&self) -> Vec<Vec<usize>> {
        let d = self.dims;
        (0..d.t)
            .map(|t| {
                (0..d.h)
                    .flat_map(|h| (0..d.w).map(move |w| (h, w)))
                    .map(|(h, w)| self.index(t, h, w))
                    .collect()
            })
            .collect()
    }

    fn along_t(&self) -> Vec<Vec<usize>> {
        let d = self.dims;
        (0..d.h)
            .flat_map(|h| (0..d.w).map(move |w| (h, w)))
            .map(|(h, w)| (0..d.t).map(|t| self.index(t, h, w)).collect())
            .collect()
    }

    fn along_w(&self) -> Vec<Vec<usize>> {
        let d = self.dims;
        (0..d.t)
            .flat_map(|t| (0..d.h).map(move |h| (t, h)))
            .map(|(t, h)| (0..d.w).map(|w| self.index(t, h, w)).collect())
            .collect()
    }

    fn along_h(&self) -> Vec<Vec<usize>> {
        let d = self.dims;
        (0..d.t)
            .flat_map(|t| (0..d.w).map(move |w| (t, w)))
            .map(|(t, w)| (0..d.h).map(|h| self.index(t, h, w)).collect())
            .collect()
    }

    fn uniform(&self, heads: usize, groups: Vec<Vec<usize>>) -> Arc<AttentionPlan> {
        Arc::new(AttentionPlan::uniform(self.tokens(), heads, self.blocks(groups)))
    }
}

/// Plans of the attention sublayers of one encoder block, in execution order.
///
/// For the factorized encoder this is the plan of its spatial stage; its
/// temporal stage attends densely over one pooled token per time index.
pub fn block_plans(
    variant: AttentionVariant,
    dims: GridDims,
    cls: bool,
    heads: usize,
) -> Result<Vec<Arc<AttentionPlan>>, ModelError> {
    if cls && variant.is_factorized() {
        return Err(ModelError::Config(format!(
            "{} attention does not use a class token",
            variant.name()
        )));
    }
    let layout = Layout { dims, cls };
    let plans = match variant {
        AttentionVariant::JointSpaceTime => {
            vec![Arc::new(AttentionPlan::dense(layout.tokens(), heads))]
        }
        AttentionVariant::Spatial | AttentionVariant::FactorizedEncoder => {
            vec![layout.uniform(heads, layout.per_frame())]
        }
        AttentionVariant::DividedSpaceTime => vec![
            layout.uniform(heads, layout.along_t()),
            layout.uniform(heads, layout.per_frame()),
        ],
        AttentionVariant::FactorizedSelfAttn => vec![
            layout.uniform(heads, layout.per_frame()),
            layout.uniform(heads, layout.along_t()),
        ],
        AttentionVariant::Axial => vec![
            layout.uniform(heads, layout.along_t()),
            layout.uniform(heads, layout.along_w()),
            layout.uniform(heads, layout.along_h()),
        ],
        AttentionVariant::FactorizedDotProduct => {
            if heads < 2 {
                return Err(ModelError::Config(
                    "factorized_dotproduct needs at least 2 heads".into(),
                ));
            }
            let split = heads / 2;
            vec![Arc::new(AttentionPlan {
                tokens: layout.tokens(),
                heads,
                segments: vec![
                    HeadSegment {
                        heads: 0..split,
                        blocks: layout.blocks(layout.per_frame()),
                    },
                    HeadSegment {
                        heads: split..heads,
                        blocks: layout.blocks(layout.along_t()),
                    },
                ],
            })]
        }
    };
    Ok(plans)
}

/// Query-key comparisons per patch token for one encoder block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComparisonCount {
    /// Formula value, for variants that have one.
    pub closed_form: Option<usize>,
    /// Key visits tallied by running the attention kernel.
    pub instrumented: usize,
}

/// Counts comparisons for `n` patches per frame and `f` frames by running one
/// block's attention on random inputs and tallying the keys each patch query
/// visits. TimeSformer-style variants carry a class token; factorizations do
/// not.
pub fn comparison_count(
    variant: AttentionVariant,
    n: usize,
    f: usize,
) -> Result<ComparisonCount, ModelError> {
    if n == 0 || f == 0 {
        return Err(ModelError::Config("N and F must be at least 1".into()));
    }
    let dims = GridDims { t: f, h: 1, w: n };
    let cls = !variant.is_factorized();
    let heads = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let tokens = usize::from(cls) + dims.len();
    let x = Tensor::<f32>::from_fn(vec![tokens, heads], |_| rng.gen_range(-1.0..1.0));
    let mut visits = vec![0usize; tokens];
    let mut run = |plan: &AttentionPlan| -> Result<(), ModelError> {
        let out = scaled_dot_product_attention(&x, &x, &x, plan)?;
        visits.iter_mut().zip(&out.visits).for_each(|(a, b)| *a += b);
        Ok(())
    };
    for plan in block_plans(variant, dims, cls, heads)? {
        run(&plan)?;
    }
    if variant == AttentionVariant::FactorizedEncoder {
        let pooled = AttentionPlan::dense(f, heads);
        let px = Tensor::<f32>::from_fn(vec![f, heads], |i| i as f32);
        let out = scaled_dot_product_attention(&px, &px, &px, &pooled)?;
        // every patch feeds one pooled token of the temporal stage
        visits.iter_mut().for_each(|v| *v += out.visits[0]);
    }
    let first = usize::from(cls);
    let instrumented = visits[first];
    if let Some(other) = visits[first..].iter().find(|&&v| v != instrumented) {
        return Err(ModelError::Config(format!(
            "{} visits are not uniform across patch tokens ({instrumented} vs {other})",
            variant.name()
        )));
    }
    Ok(ComparisonCount {
        closed_form: variant.closed_form_count(n, f),
        instrumented,
    })
}
