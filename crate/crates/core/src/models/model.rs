use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    block_plans, patchify, AttentionVariant, DecoderConfig, Family, GridDims, MaskPlan,
    ModelConfig, ModelError, Pooling, TokenGrid,
};
use crate::tensor::ops::GeluVariant;
use crate::tensor::{AttentionPlan, Float, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct AttnIds {
    norm: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

#[derive(Clone, Debug)]
struct BlockIds {
    attn: Vec<AttnIds>,
    norm: Norm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
struct DecoderIds {
    embed: Linear,
    mask_token: ParamId,
    pos: ParamId,
    blocks: Vec<BlockIds>,
    norm: Norm,
    head: Linear,
}

#[derive(Clone, Debug)]
struct Ids {
    embed: Linear,
    pos: ParamId,
    cls: Option<ParamId>,
    blocks: Vec<BlockIds>,
    temporal_pos: Option<ParamId>,
    temporal_blocks: Vec<BlockIds>,
    norm: Norm,
    head: Linear,
    decoder: Option<DecoderIds>,
}

struct Init<'a, T: Float> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl<T: Float> Init<'_, T> {
    fn normal(&mut self, name: String, shape: Vec<usize>) -> ParamId {
        let (rng, normal) = (&mut self.rng, self.normal);
        let value = Tensor::from_fn(shape, |_| T::of(normal.sample(rng)));
        self.store.add(name, value)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            weight: self.normal(format!("{name}.weight"), vec![fan_in, fan_out]),
            bias: self.store.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out])),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gain: self.store.add(format!("{name}.gain"), Tensor::ones(vec![d])),
            bias: self.store.add(format!("{name}.bias"), Tensor::zeros(vec![d])),
        }
    }

    fn block(&mut self, name: &str, sublayers: usize, d: usize, inter: usize) -> BlockIds {
        let attn = (0..sublayers)
            .map(|j| {
                let p = format!("{name}.attn{j}");
                AttnIds {
                    norm: self.norm(&format!("{p}.norm"), d),
                    q: self.linear(&format!("{p}.q"), d, d),
                    k: self.linear(&format!("{p}.k"), d, d),
                    v: self.linear(&format!("{p}.v"), d, d),
                    out: self.linear(&format!("{p}.out"), d, d),
                }
            })
            .collect();
        BlockIds {
            attn,
            norm: self.norm(&format!("{name}.mlp.norm"), d),
            fc1: self.linear(&format!("{name}.mlp.fc1"), d, inter),
            fc2: self.linear(&format!("{name}.mlp.fc2"), inter, d),
        }
    }
}

/// One of the three video transformer families at configurable scale.
#[derive(Clone, Debug)]
pub struct VideoModel<T: Float = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    ids: Ids,
}

/// Output of [`mae_reconstruct`].
#[derive(Clone, Copy, Debug)]
pub struct MaeOutput {
    /// Predicted pixels of every cube, `[t·h·w × token_dim]` in grid order.
    pub reconstruction: Var,
    /// Mean squared error over masked cubes only.
    pub loss: Var,
}

impl<T: Float> VideoModel<T> {
    /// Weights `N(0, init_range)`, biases zero, norms identity.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let grid = config.grid();
        let d = config.hidden;
        let cls = config.has_cls();
        let mut params = ParamStore::new();
        let mut init = Init {
            store: &mut params,
            rng: crate::seed::rng(seed),
            normal: Normal::new(0.0, config.init_range)
                .map_err(|e| ModelError::Config(format!("init_range: {e}")))?,
        };
        let embed = init.linear("embed", config.token_dim(), d);
        let cls_id = cls.then(|| init.normal("cls_token".into(), vec![1, d]));
        let pos = init.normal("pos_embed".into(), vec![usize::from(cls) + grid.len(), d]);
        let sublayers = block_plans(config.attention, grid, cls, config.heads)?.len();
        let blocks = (0..config.layers)
            .map(|i| init.block(&format!("blocks.{i}"), sublayers, d, config.intermediate))
            .collect();
        let (temporal_pos, temporal_blocks) = if config.attention == AttentionVariant::FactorizedEncoder {
            let pos = init.normal("temporal_pos_embed".into(), vec![grid.t, d]);
            let blocks = (0..config.temporal_layers)
                .map(|i| init.block(&format!("temporal_blocks.{i}"), 1, d, config.intermediate))
                .collect();
            (Some(pos), blocks)
        } else {
            (None, Vec::new())
        };
        let norm = init.norm("norm", d);
        let head = init.linear("head", d, config.num_classes);
        let decoder = config.decoder.map(|dc: DecoderConfig| DecoderIds {
            embed: init.linear("decoder.embed", d, dc.hidden),
            mask_token: init.normal("decoder.mask_token".into(), vec![1, dc.hidden]),
            pos: init.normal("decoder.pos_embed".into(), vec![grid.len(), dc.hidden]),
            blocks: (0..dc.layers)
                .map(|i| init.block(&format!("decoder.blocks.{i}"), 1, dc.hidden, dc.intermediate))
                .collect(),
            norm: init.norm("decoder.norm", dc.hidden),
            head: init.linear("decoder.head", dc.hidden, config.token_dim()),
        });
        let ids = Ids {
            embed,
            pos,
            cls: cls_id,
            blocks,
            temporal_pos,
            temporal_blocks,
            norm,
            head,
            decoder,
        };
        Ok(Self {
            config,
            params,
            ids,
        })
    }

    /// Builds a model and copies `values` into it by name; every parameter
    /// must be present with a matching shape.
    pub fn from_named(
        config: ModelConfig,
        values: impl IntoIterator<Item = (String, Tensor<T>)>,
    ) -> Result<Self, ModelError> {
        let mut model = Self::new(config, 0)?;
        let mut filled = vec![false; model.params.len()];
        for (name, value) in values {
            let id = model
                .params
                .find(&name)
                .ok_or_else(|| ModelError::Format(format!("unexpected tensor {name:?}")))?;
            let p = model.params.get_mut(id);
            if p.value.shape() != value.shape() {
                return Err(ModelError::Format(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value;
            filled[id.index()] = true;
        }
        if let Some(i) = filled.iter().position(|f| !f) {
            let name = &model.params.iter().nth(i).expect("index in range").name;
            return Err(ModelError::Format(format!("missing tensor {name:?}")));
        }
        Ok(model)
    }

    /// Same model in another precision.
    pub fn cast<U: Float>(&self) -> VideoModel<U> {
        let mut params = ParamStore::new();
        for p in self.params.iter() {
            params.add(p.name.clone(), p.value.cast());
        }
        VideoModel {
            config: self.config.clone(),
            params,
            ids: self.ids.clone(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Embeds `[T×H×W×C]` frames with the family's tokenizer.
    pub fn embed(&self, tape: &mut Tape<T>, frames: &Tensor<T>) -> Result<TokenGrid, ModelError> {
        match self.config.family {
            Family::Timesformer => patch_embed(tape, self, frames),
            _ => tubelet_embed(tape, self, frames),
        }
    }

    /// Logits `[1×K]`: embed, encoder, final norm, classify.
    pub fn forward(&self, tape: &mut Tape<T>, frames: &Tensor<T>) -> Result<Var, ModelError> {
        let grid = self.embed(tape, frames)?;
        let grid = encoder_forward(tape, self, grid)?;
        let grid = final_norm(tape, self, grid)?;
        classify(tape, self, grid)
    }

    /// Logits for one clip, without keeping the tape.
    pub fn predict(&self, frames: &Tensor<T>) -> Result<Vec<T>, ModelError> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, frames)?;
        Ok(tape.value(logits).data().to_vec())
    }

    fn p(&self, tape: &mut Tape<T>, id: ParamId) -> Var {
        tape.param(&self.params, id)
    }

    fn linear(&self, tape: &mut Tape<T>, x: Var, l: Linear) -> Result<Var, ModelError> {
        let w = self.p(tape, l.weight);
        let b = self.p(tape, l.bias);
        Ok(tape.linear(x, w, b)?)
    }

    fn norm(&self, tape: &mut Tape<T>, x: Var, n: Norm) -> Result<Var, ModelError> {
        let g = self.p(tape, n.gain);
        let b = self.p(tape, n.bias);
        Ok(tape.layer_norm(x, g, b, T::of(self.config.layer_norm_eps))?)
    }

    /// Pre-norm block: `x + Attn(LN(x))` per attention sublayer, then
    /// `x + MLP(LN(x))`.
    fn block(
        &self,
        tape: &mut Tape<T>,
        ids: &BlockIds,
        mut x: Var,
        plans: &[Arc<AttentionPlan>],
    ) -> Result<Var, ModelError> {
        for (a, plan) in ids.attn.iter().zip(plans) {
            let h = self.norm(tape, x, a.norm)?;
            let q = self.linear(tape, h, a.q)?;
            let k = self.linear(tape, h, a.k)?;
            let v = self.linear(tape, h, a.v)?;
            let ctx = tape.attention(q, k, v, plan.clone())?;
            let o = self.linear(tape, ctx, a.out)?;
            x = tape.add(x, o)?;
        }
        let h = self.norm(tape, x, ids.norm)?;
        let h = self.linear(tape, h, ids.fc1)?;
        let h = tape.gelu(h, self.activation());
        let h = self.linear(tape, h, ids.fc2)?;
        Ok(tape.add(x, h)?)
    }

    fn activation(&self) -> GeluVariant {
        self.config.activation
    }
}

fn embed_with<T: Float>(
    tape: &mut Tape<T>,
    model: &VideoModel<T>,
    frames: &Tensor<T>,
    extent: [usize; 3],
) -> Result<TokenGrid, ModelError> {
    let cfg = &model.config;
    if extent != cfg.token_extent() {
        return Err(ModelError::Config(format!(
            "{} embeds {:?} cubes, not {extent:?}",
            cfg.family.name(),
            cfg.token_extent()
        )));
    }
    let patches = patchify(frames, extent)?;
    let shape = frames.shape();
    let dims = GridDims::of(shape[0], shape[1], shape[2], extent);
    if dims != cfg.grid() || shape[3] != cfg.channels {
        return Err(ModelError::Config(format!(
            "frames {shape:?} do not match the configured {}×{s}×{s}×{} input",
            cfg.num_frames,
            cfg.channels,
            s = cfg.image_size
        )));
    }
    let x = tape.input(patches);
    let mut tokens = model.linear(tape, x, model.ids.embed)?;
    if let Some(cls) = model.ids.cls {
        let cls = model.p(tape, cls);
        tokens = tape.concat_rows(&[cls, tokens])?;
    }
    let pos = model.p(tape, model.ids.pos);
    Ok(TokenGrid {
        tokens: tape.add(tokens, pos)?,
        dims,
        cls: model.ids.cls.is_some(),
    })
}

/// Per-frame patch embedding: `E·x + e_pos`, class token first when the
/// model pools from it.
pub fn patch_embed<T: Float>(
    tape: &mut Tape<T>,
    model: &VideoModel<T>,
    frames: &Tensor<T>,
) -> Result<TokenGrid, ModelError> {
    let p = model.config.patch_size;
    embed_with(tape, model, frames, [1, p, p])
}

/// Embedding of non-overlapping `t×h×w` cubes.
pub fn tubelet_embed<T: Float>(
    tape: &mut Tape<T>,
    model: &VideoModel<T>,
    frames: &Tensor<T>,
) -> Result<TokenGrid, ModelError> {
    embed_with(tape, model, frames, model.config.tubelet)
}

/// Runs the encoder blocks with the configured attention variant.
///
/// The factorized encoder runs its spatial blocks, averages each temporal
/// index's tokens and runs the temporal blocks over those `t` tokens; the
/// result is a `t × 1 × 1` grid.
pub fn encoder_forward<T: Float>(
    tape: &mut Tape<T>,
    model: &VideoModel<T>,
    grid: TokenGrid,
) -> Result<TokenGrid, ModelError> {
    let cfg = &model.config;
    let plans = block_plans(cfg.attention, grid.dims, grid.cls, cfg.heads)?;
    let mut x = grid.tokens;
    for ids in &model.ids.blocks {
        x = model.block(tape, ids, x, &plans)?;
    }
    if cfg.attention != AttentionVariant::FactorizedEncoder {
        return Ok(TokenGrid { tokens: x, ..grid });
    }
    let n = grid.dims.patches();
    let mut pooled = Vec::with_capacity(grid.dims.t);
    for t in 0..grid.dims.t {
        let frame = tape.gather_rows(x, (t * n..(t + 1) * n).collect())?;
        pooled.push(tape.mean_rows(frame));
    }
    let mut x = tape.concat_rows(&pooled)?;
    let pos = model.ids.temporal_pos.expect("factorized encoder has temporal positions");
    let pos = model.p(tape, pos);
    x = tape.add(x, pos)?;
    let dense = [Arc::new(AttentionPlan::dense(grid.dims.t, cfg.heads))];
    for ids in &model.ids.temporal_blocks {
        x = model.block(tape, ids, x, &dense)?;
    }
    Ok(TokenGrid {
        tokens: x,
        dims: GridDims {
            t: grid.dims.t,
            h: 1,
            w: 1,
        },
        cls: false,
    })
}

/// Layer norm applied to every token after the encoder.
pub fn final_norm<T: Float>(
    tape: &mut Tape<T>,
    model: &VideoModel<T>,
    grid: TokenGrid,
) -> Result<TokenGrid, ModelError> {
    Ok(TokenGrid {
        tokens: model.norm(tape, grid.tokens, model.ids.norm)?,
        ..grid
    })
}

/// Pools the tokens (mean over grid tokens, or the class token) and applies
/// the linear head, giving `[1×K]` logits.
pub fn classify<T: Float>(
    tape: &mut Tape<T>,
    model: &VideoModel<T>,
    grid: TokenGrid,
) -> Result<Var, ModelError> {
    let pooled = match model.config.pooling {
        Pooling::Cls => {
            if !grid.cls {
                return Err(ModelError::Config(
                    "class-token pooling on a grid without a class token".into(),
                ));
            }
            tape.gather_rows(grid.tokens, vec![0])?
        }
        Pooling::Mean if grid.cls => {
            let rows = (1..grid.num_tokens()).collect();
            let body = tape.gather_rows(grid.tokens, rows)?;
            tape.mean_rows(body)
        }
        Pooling::Mean => tape.mean_rows(grid.tokens),
    };
    model.linear(tape, pooled, model.ids.head)
}

/// Masked-autoencoder pass: the encoder sees visible cubes only, the decoder
/// sees their encodings plus mask tokens in grid order and predicts every
/// cube's pixels.
pub fn mae_reconstruct<T: Float>(
    tape: &mut Tape<T>,
    model: &VideoModel<T>,
    frames: &Tensor<T>,
    mask: &MaskPlan,
) -> Result<MaeOutput, ModelError> {
    let cfg = &model.config;
    let dec = match (&model.ids.decoder, cfg.decoder) {
        (Some(ids), Some(dc)) => (ids, dc),
        _ => {
            return Err(ModelError::Config(format!(
                "{} has no reconstruction decoder",
                cfg.family.name()
            )))
        }
    };
    let (dec_ids, dec_cfg) = dec;
    if mask.dims != cfg.grid() {
        return Err(ModelError::Config(format!(
            "mask grid {:?} does not match model grid {:?}",
            mask.dims,
            cfg.grid()
        )));
    }
    let masked = mask.masked_indices();
    if masked.is_empty() {
        return Err(ModelError::Config(
            "reconstruction loss needs at least one masked cube".into(),
        ));
    }
    let visible = mask.visible_indices();
    let target = patchify(frames, cfg.token_extent())?;
    let grid = tubelet_embed(tape, model, frames)?;
    let offset = usize::from(grid.cls);
    let mut x = tape.gather_rows(grid.tokens, visible.iter().map(|i| i + offset).collect())?;
    let dense = [Arc::new(AttentionPlan::dense(visible.len(), cfg.heads))];
    for ids in &model.ids.blocks {
        x = model.block(tape, ids, x, &dense)?;
    }
    x = model.norm(tape, x, model.ids.norm)?;

    let enc = model.linear(tape, x, dec_ids.embed)?;
    let mask_token = model.p(tape, dec_ids.mask_token);
    let fill = tape.gather_rows(mask_token, vec![0; masked.len()])?;
    let stacked = tape.concat_rows(&[enc, fill])?;
    let mut order = vec![0; mask.dims.len()];
    for (rank, &i) in visible.iter().chain(&masked).enumerate() {
        order[i] = rank;
    }
    let mut y = tape.gather_rows(stacked, order)?;
    let pos = model.p(tape, dec_ids.pos);
    y = tape.add(y, pos)?;
    let dense = [Arc::new(AttentionPlan::dense(mask.dims.len(), dec_cfg.heads))];
    for ids in &dec_ids.blocks {
        y = model.block(tape, ids, y, &dense)?;
    }
    y = model.norm(tape, y, dec_ids.norm)?;
    let reconstruction = model.linear(tape, y, dec_ids.head)?;
    let loss = tape.masked_mse(reconstruction, target, mask.token_mask())?;
    Ok(MaeOutput {
        reconstruction,
        loss,
    })
}

/// Random `[T×H×W×C]` frames in `[0,1)` matching a config.
pub fn random_frames<T: Float>(config: &ModelConfig, rng: &mut impl Rng) -> Tensor<T> {
    let s = config.image_size;
    Tensor::from_fn(vec![config.num_frames, s, s, config.channels], |_| {
        T::of(rng.gen::<f64>())
    })
}
