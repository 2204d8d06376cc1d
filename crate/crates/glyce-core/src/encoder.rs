//! Contextual encoder, glyph fusion, and task output layers.
//!
//! The pipeline is: token + position embeddings -> a small pre-norm
//! transformer (the contextual encoder) -> fusion, which adds glyph
//! position embeddings to the glyph vectors and concatenates them onto
//! the contextual vectors (no projection; the fused width is always
//! d_ctx + d_glyph) -> a task output layer over the fused width.
//!
//! Sequences use three reserved token ids (CLS, SEP, PAD); character c
//! maps to token id c + N_SPECIAL. Special tokens have no bitmap, so the
//! fusion layer owns a small learned table standing in for their glyph
//! embeddings. PAD is handled by masking attention columns.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::cnn::uniform_init;
use crate::error::{GlyceError, Result};
use crate::graph::{Graph, NodeId};
use crate::math::sqrt;
use crate::params::{ParamGroup, ParamId, ParamSet};
use crate::rng::GlyceRng;
use crate::tensor::Tensor;

pub const CLS: usize = 0;
pub const SEP: usize = 1;
pub const PAD: usize = 2;
pub const N_SPECIAL: usize = 3;

/// Token id of character `c`.
pub fn char_token(c: u32) -> usize {
    c as usize + N_SPECIAL
}

pub const LN_EPS: f64 = 1e-5;

/// One pre-norm transformer layer: x + attn(ln(x)), then y + ff(ln(y)).
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    d: usize,
    n_heads: usize,
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
}

fn add_linear(
    ps: &mut ParamSet,
    prefix: &str,
    d_out: usize,
    d_in: usize,
    group: ParamGroup,
    rng: &mut GlyceRng,
) -> Result<(ParamId, ParamId)> {
    let w = ps.add(&format!("{prefix}.w"), group, uniform_init(&[d_out, d_in], d_in, rng))?;
    let b = ps.add(&format!("{prefix}.b"), group, Tensor::zeros(&[d_out]))?;
    Ok((w, b))
}

fn add_layer_norm(
    ps: &mut ParamSet,
    prefix: &str,
    d: usize,
    group: ParamGroup,
) -> Result<(ParamId, ParamId)> {
    let ones = Tensor::from_values(&[d], vec![1.0; d])?;
    let g = ps.add(&format!("{prefix}.g"), group, ones)?;
    let b = ps.add(&format!("{prefix}.b"), group, Tensor::zeros(&[d]))?;
    Ok((g, b))
}

impl TransformerLayer {
    pub fn register(
        ps: &mut ParamSet,
        prefix: &str,
        d: usize,
        d_ff: usize,
        n_heads: usize,
        group: ParamGroup,
        rng: &mut GlyceRng,
    ) -> Result<TransformerLayer> {
        if n_heads == 0 || d % n_heads != 0 {
            return Err(GlyceError::Config(format!(
                "transformer: {n_heads} heads do not divide width {d}"
            )));
        }
        let (ln1_g, ln1_b) = add_layer_norm(ps, &format!("{prefix}.ln1"), d, group)?;
        let (wq, bq) = add_linear(ps, &format!("{prefix}.q"), d, d, group, rng)?;
        let (wk, bk) = add_linear(ps, &format!("{prefix}.k"), d, d, group, rng)?;
        let (wv, bv) = add_linear(ps, &format!("{prefix}.v"), d, d, group, rng)?;
        let (wo, bo) = add_linear(ps, &format!("{prefix}.o"), d, d, group, rng)?;
        let (ln2_g, ln2_b) = add_layer_norm(ps, &format!("{prefix}.ln2"), d, group)?;
        let (ff1_w, ff1_b) = add_linear(ps, &format!("{prefix}.ff1"), d_ff, d, group, rng)?;
        let (ff2_w, ff2_b) = add_linear(ps, &format!("{prefix}.ff2"), d, d_ff, group, rng)?;
        Ok(TransformerLayer {
            d,
            n_heads,
            ln1_g,
            ln1_b,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            ln2_g,
            ln2_b,
            ff1_w,
            ff1_b,
            ff2_w,
            ff2_b,
        })
    }

    fn linear(&self, g: &mut Graph, ps: &ParamSet, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
        let wn = g.param(ps, w);
        let bn = g.param(ps, b);
        let y = g.matmul(x, wn, true)?;
        g.row_bias(y, bn)
    }

    fn norm(&self, g: &mut Graph, ps: &ParamSet, x: NodeId, gamma: ParamId, beta: ParamId) -> Result<NodeId> {
        let gn = g.param(ps, gamma);
        let bn = g.param(ps, beta);
        g.layer_norm(x, gn, bn, LN_EPS)
    }

    /// `mask[j] = true` hides column j from every attention query.
    pub fn apply(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        x: NodeId,
        mask: Option<&[bool]>,
    ) -> Result<NodeId> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.d {
            return Err(GlyceError::Shape(format!(
                "transformer: input {shape:?}, expected [len, {}]",
                self.d
            )));
        }
        let dh = self.d / self.n_heads;
        let scale = 1.0 / sqrt(dh as f64);

        let normed = self.norm(g, ps, x, self.ln1_g, self.ln1_b)?;
        let q = self.linear(g, ps, normed, self.wq, self.bq)?;
        let k = self.linear(g, ps, normed, self.wk, self.bk)?;
        let v = self.linear(g, ps, normed, self.wv, self.bv)?;
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let scores = g.matmul(qh, kh, true)?;
            let scaled = g.scale(scores, scale);
            let attn = g.softmax_rows(scaled, mask)?;
            heads.push(g.matmul(attn, vh, false)?);
        }
        let merged = g.concat(&heads, 1)?;
        let attended = self.linear(g, ps, merged, self.wo, self.bo)?;
        let x1 = g.add(x, attended)?;

        let normed2 = self.norm(g, ps, x1, self.ln2_g, self.ln2_b)?;
        let hidden = self.linear(g, ps, normed2, self.ff1_w, self.ff1_b)?;
        let active = g.relu(hidden);
        let ff = self.linear(g, ps, active, self.ff2_w, self.ff2_b)?;
        g.add(x1, ff)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoderConfig {
    /// Character vocabulary size; the token table adds N_SPECIAL rows.
    pub vocab_chars: usize,
    pub d_ctx: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for ContextEncoderConfig {
    fn default() -> Self {
        ContextEncoderConfig {
            vocab_chars: 100,
            d_ctx: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_len: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContextEncoder {
    pub config: ContextEncoderConfig,
    token_table: ParamId,
    pos_table: ParamId,
    layers: Vec<TransformerLayer>,
    final_g: ParamId,
    final_b: ParamId,
}

impl ContextEncoder {
    pub fn register(
        ps: &mut ParamSet,
        config: ContextEncoderConfig,
        rng: &mut GlyceRng,
    ) -> Result<ContextEncoder> {
        if config.vocab_chars == 0 || config.d_ctx == 0 || config.max_len < 3 {
            return Err(GlyceError::Config(String::from(
                "context encoder: vocab, width, and max_len (>= 3) must be positive",
            )));
        }
        let vocab = N_SPECIAL + config.vocab_chars;
        let token_table = ps.add(
            "ctx.tokens",
            ParamGroup::Context,
            uniform_init(&[vocab, config.d_ctx], config.d_ctx, rng),
        )?;
        let pos_table = ps.add(
            "ctx.positions",
            ParamGroup::Context,
            uniform_init(&[config.max_len, config.d_ctx], config.d_ctx, rng),
        )?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            layers.push(TransformerLayer::register(
                ps,
                &format!("ctx.l{i}"),
                config.d_ctx,
                config.d_ff,
                config.n_heads,
                ParamGroup::Context,
                rng,
            )?);
        }
        let (final_g, final_b) = add_layer_norm(ps, "ctx.final", config.d_ctx, ParamGroup::Context)?;
        Ok(ContextEncoder { config, token_table, pos_table, layers, final_g, final_b })
    }

    /// PAD mask for a token sequence: true marks columns attention must
    /// skip.
    pub fn pad_mask(token_ids: &[usize]) -> Vec<bool> {
        token_ids.iter().map(|&t| t == PAD).collect()
    }

    /// Last-layer contextual vectors, `[len, d_ctx]`.
    pub fn encode(&self, g: &mut Graph, ps: &ParamSet, token_ids: &[usize]) -> Result<NodeId> {
        if token_ids.is_empty() {
            return Err(GlyceError::Contract(String::from("encode: empty token sequence")));
        }
        if token_ids.len() > self.config.max_len {
            return Err(GlyceError::Contract(format!(
                "encode: sequence length {} exceeds max_len {}",
                token_ids.len(),
                self.config.max_len
            )));
        }
        let table = g.param(ps, self.token_table);
        let tokens = g.embedding(table, token_ids)?;
        let positions: Vec<usize> = (0..token_ids.len()).collect();
        let pos_param = g.param(ps, self.pos_table);
        let pos = g.embedding(pos_param, &positions)?;
        let mut x = g.add(tokens, pos)?;
        let mask = Self::pad_mask(token_ids);
        let mask_opt = if mask.iter().any(|&b| b) { Some(mask.as_slice()) } else { None };
        for layer in &self.layers {
            x = layer.apply(g, ps, x, mask_opt)?;
        }
        let gn = g.param(ps, self.final_g);
        let bn = g.param(ps, self.final_b);
        g.layer_norm(x, gn, bn, LN_EPS)
    }
}

/// Glyph-side fusion: adds glyph position embeddings, substitutes learned
/// vectors for special tokens, concatenates onto the contextual vectors.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub d_glyph: usize,
    pub max_len: usize,
    glyph_pos: ParamId,
    special: ParamId,
}

impl Fusion {
    pub fn register(
        ps: &mut ParamSet,
        d_glyph: usize,
        max_len: usize,
        rng: &mut GlyceRng,
    ) -> Result<Fusion> {
        if d_glyph == 0 || max_len == 0 {
            return Err(GlyceError::Config(String::from(
                "fusion: d_glyph and max_len must be positive",
            )));
        }
        let glyph_pos = ps.add(
            "fuse.positions",
            ParamGroup::Glyph,
            uniform_init(&[max_len, d_glyph], d_glyph, rng),
        )?;
        let special = ps.add(
            "fuse.special",
            ParamGroup::Glyph,
            uniform_init(&[N_SPECIAL, d_glyph], d_glyph, rng),
        )?;
        Ok(Fusion { d_glyph, max_len, glyph_pos, special })
    }

    /// Learned stand-in glyph vector of a special token, `[1, d_glyph]`.
    pub fn special_row(&self, g: &mut Graph, ps: &ParamSet, token: usize) -> Result<NodeId> {
        if token >= N_SPECIAL {
            return Err(GlyceError::Index(format!(
                "fusion: token {token} is not a special token"
            )));
        }
        let table = g.param(ps, self.special);
        g.embedding(table, &[token])
    }

    /// `out[i] = concat(ctx[i], glyph[i] + glyph_pos[positions[i]])`.
    pub fn fuse(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        ctx: NodeId,
        glyph: NodeId,
        positions: &[usize],
    ) -> Result<NodeId> {
        let cs = g.shape(ctx).to_vec();
        let gs = g.shape(glyph).to_vec();
        if cs.len() != 2 || gs.len() != 2 || cs[0] != gs[0] || gs[1] != self.d_glyph {
            return Err(GlyceError::Shape(format!(
                "fusion: ctx {cs:?} and glyph {gs:?} must share rows, glyph width {}",
                self.d_glyph
            )));
        }
        if positions.len() != cs[0] {
            return Err(GlyceError::Shape(format!(
                "fusion: {} positions for {} rows",
                positions.len(),
                cs[0]
            )));
        }
        for &p in positions {
            if p >= self.max_len {
                return Err(GlyceError::Index(format!(
                    "fusion: position {p} exceeds max_len {}",
                    self.max_len
                )));
            }
        }
        let table = g.param(ps, self.glyph_pos);
        let pos = g.embedding(table, positions)?;
        let located = g.add(glyph, pos)?;
        g.concat(&[ctx, located], 1)
    }
}

/// Output-layer structure over the fused width, one of four shapes that
/// share the same `[len, d] -> [len, d]` signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskLayerKind {
    Transformer,
    Recurrent,
    Conv,
    None,
}

impl TaskLayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskLayerKind::Transformer => "transformer",
            TaskLayerKind::Recurrent => "recurrent",
            TaskLayerKind::Conv => "conv",
            TaskLayerKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<TaskLayerKind> {
        match s {
            "transformer" => Ok(TaskLayerKind::Transformer),
            "recurrent" => Ok(TaskLayerKind::Recurrent),
            "conv" => Ok(TaskLayerKind::Conv),
            "none" => Ok(TaskLayerKind::None),
            other => Err(GlyceError::Config(format!(
                "unknown task layer '{other}' (want transformer | recurrent | conv | none)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
struct RecurrentCell {
    w_in: ParamId,
    w_rec: ParamId,
    b: ParamId,
}

impl RecurrentCell {
    fn register(
        ps: &mut ParamSet,
        prefix: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut GlyceRng,
    ) -> Result<RecurrentCell> {
        let w_in = ps.add(
            &format!("{prefix}.w_in"),
            ParamGroup::Head,
            uniform_init(&[d_h, d_in], d_in, rng),
        )?;
        let w_rec = ps.add(
            &format!("{prefix}.w_rec"),
            ParamGroup::Head,
            uniform_init(&[d_h, d_h], d_h, rng),
        )?;
        let b = ps.add(&format!("{prefix}.b"), ParamGroup::Head, Tensor::zeros(&[d_h]))?;
        Ok(RecurrentCell { w_in, w_rec, b })
    }

    /// One tanh step; `x_t [1, d_in]`, `h_prev [1, d_h]`.
    fn step(&self, g: &mut Graph, ps: &ParamSet, x_t: NodeId, h_prev: NodeId) -> Result<NodeId> {
        let w_in = g.param(ps, self.w_in);
        let w_rec = g.param(ps, self.w_rec);
        let b = g.param(ps, self.b);
        let from_x = g.matmul(x_t, w_in, true)?;
        let from_h = g.matmul(h_prev, w_rec, true)?;
        let sum = g.add(from_x, from_h)?;
        let biased = g.row_bias(sum, b)?;
        Ok(g.tanh(biased))
    }
}

#[derive(Debug, Clone)]
enum TaskLayerParts {
    Transformer { layers: Vec<TransformerLayer>, final_g: ParamId, final_b: ParamId },
    Recurrent { fw: RecurrentCell, bw: RecurrentCell },
    Conv { w_prev: ParamId, w_cur: ParamId, w_next: ParamId, b: ParamId },
    None,
}

#[derive(Debug, Clone)]
pub struct TaskLayers {
    pub kind: TaskLayerKind,
    pub d: usize,
    parts: TaskLayerParts,
}

impl TaskLayers {
    pub fn register(
        ps: &mut ParamSet,
        kind: TaskLayerKind,
        d: usize,
        rng: &mut GlyceRng,
    ) -> Result<TaskLayers> {
        let parts = match kind {
            TaskLayerKind::Transformer => {
                let n_heads = 4;
                if d % n_heads != 0 {
                    return Err(GlyceError::Config(format!(
                        "task transformer: width {d} not divisible by {n_heads} heads"
                    )));
                }
                let mut layers = Vec::new();
                for i in 0..2 {
                    layers.push(TransformerLayer::register(
                        ps,
                        &format!("task.l{i}"),
                        d,
                        2 * d,
                        n_heads,
                        ParamGroup::Head,
                        rng,
                    )?);
                }
                let (final_g, final_b) = add_layer_norm(ps, "task.final", d, ParamGroup::Head)?;
                TaskLayerParts::Transformer { layers, final_g, final_b }
            }
            TaskLayerKind::Recurrent => {
                if d % 2 != 0 {
                    return Err(GlyceError::Config(format!(
                        "task recurrent: width {d} must be even to split directions"
                    )));
                }
                let fw = RecurrentCell::register(ps, "task.fw", d, d / 2, rng)?;
                let bw = RecurrentCell::register(ps, "task.bw", d, d / 2, rng)?;
                TaskLayerParts::Recurrent { fw, bw }
            }
            TaskLayerKind::Conv => {
                let w_prev = ps.add(
                    "task.conv.prev.w",
                    ParamGroup::Head,
                    uniform_init(&[d, d], d, rng),
                )?;
                let w_cur = ps.add(
                    "task.conv.cur.w",
                    ParamGroup::Head,
                    uniform_init(&[d, d], d, rng),
                )?;
                let w_next = ps.add(
                    "task.conv.next.w",
                    ParamGroup::Head,
                    uniform_init(&[d, d], d, rng),
                )?;
                let b = ps.add("task.conv.b", ParamGroup::Head, Tensor::zeros(&[d]))?;
                TaskLayerParts::Conv { w_prev, w_cur, w_next, b }
            }
            TaskLayerKind::None => TaskLayerParts::None,
        };
        Ok(TaskLayers { kind, d, parts })
    }

    /// Applies the structure; output shape equals input shape.
    pub fn apply(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        x: NodeId,
        mask: Option<&[bool]>,
    ) -> Result<NodeId> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.d {
            return Err(GlyceError::Shape(format!(
                "task layer: input {shape:?}, expected [len, {}]",
                self.d
            )));
        }
        let len = shape[0];
        match &self.parts {
            TaskLayerParts::Transformer { layers, final_g, final_b } => {
                let mut h = x;
                for layer in layers {
                    h = layer.apply(g, ps, h, mask)?;
                }
                let gn = g.param(ps, *final_g);
                let bn = g.param(ps, *final_b);
                g.layer_norm(h, gn, bn, LN_EPS)
            }
            TaskLayerParts::Recurrent { fw, bw } => {
                let zero = g.input(&[1, self.d / 2], vec![0.0; self.d / 2])?;
                let mut fw_states = vec![NodeId(0); len];
                let mut h = zero;
                for t in 0..len {
                    let x_t = g.slice_rows(x, t, 1)?;
                    h = fw.step(g, ps, x_t, h)?;
                    fw_states[t] = h;
                }
                let mut bw_states = vec![NodeId(0); len];
                let mut h = zero;
                for t in (0..len).rev() {
                    let x_t = g.slice_rows(x, t, 1)?;
                    h = bw.step(g, ps, x_t, h)?;
                    bw_states[t] = h;
                }
                let mut rows = Vec::with_capacity(len);
                for t in 0..len {
                    rows.push(g.concat(&[fw_states[t], bw_states[t]], 1)?);
                }
                g.concat(&rows, 0)
            }
            TaskLayerParts::Conv { w_prev, w_cur, w_next, b } => {
                let wp = g.param(ps, *w_prev);
                let wc = g.param(ps, *w_cur);
                let wn = g.param(ps, *w_next);
                let bn = g.param(ps, *b);
                let from_prev = g.matmul(x, wp, true)?;
                let from_cur = g.matmul(x, wc, true)?;
                let from_next = g.matmul(x, wn, true)?;
                let zero_row = g.input(&[1, self.d], vec![0.0; self.d])?;
                // Width-3 window: row i sees rows i-1, i, i+1 with zero
                // padding at the sequence boundary.
                let shifted_prev = if len == 1 {
                    zero_row
                } else {
                    let head = g.slice_rows(from_prev, 0, len - 1)?;
                    g.concat(&[zero_row, head], 0)?
                };
                let shifted_next = if len == 1 {
                    zero_row
                } else {
                    let tail = g.slice_rows(from_next, 1, len - 1)?;
                    g.concat(&[tail, zero_row], 0)?
                };
                let sum1 = g.add(from_cur, shifted_prev)?;
                let sum2 = g.add(sum1, shifted_next)?;
                let biased = g.row_bias(sum2, bn)?;
                Ok(g.relu(biased))
            }
            TaskLayerParts::None => Ok(x),
        }
    }
}
