//! Task heads: sequence packing, CLS classification, CRF tagging.
//!
//! Sentences are packed as [CLS, s..., SEP]; sentence pairs as
//! [CLS, s1..., SEP, s2..., SEP] with segment 0 covering CLS through the
//! first SEP and segment 1 the rest. Classification heads read only the
//! CLS row; the tagging head projects the character rows to per-label
//! emission scores and scores paths with a linear-chain CRF.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::cnn::uniform_init;
use crate::crf;
use crate::encoder::{char_token, CLS, SEP};
use crate::error::{GlyceError, Result};
use crate::graph::{Graph, NodeId};
use crate::math::exp;
use crate::params::{ParamGroup, ParamId, ParamSet};
use crate::rng::GlyceRng;
use crate::tensor::Tensor;

/// A token sequence ready for the context encoder. `char_rows` locates
/// the original characters inside `token_ids` (for emission slicing).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedInput {
    pub token_ids: Vec<usize>,
    pub segments: Vec<usize>,
    pub char_start: usize,
    pub char_len: usize,
}

/// `[CLS, s..., SEP]`, all segment 0.
pub fn pack_single(chars: &[u32], max_len: usize) -> Result<PackedInput> {
    let need = chars.len() + 2;
    if need > max_len {
        return Err(GlyceError::Contract(format!(
            "pack: {} chars need {need} tokens, limit is {max_len}"
        , chars.len())));
    }
    let mut token_ids = Vec::with_capacity(need);
    token_ids.push(CLS);
    token_ids.extend(chars.iter().map(|&c| char_token(c)));
    token_ids.push(SEP);
    Ok(PackedInput {
        segments: vec![0; token_ids.len()],
        char_start: 1,
        char_len: chars.len(),
        token_ids,
    })
}

/// `[CLS, s1..., SEP, s2..., SEP]`; segment 1 starts after the first SEP.
pub fn pack_pair(s1: &[u32], s2: &[u32], max_len: usize) -> Result<PackedInput> {
    let need = s1.len() + s2.len() + 3;
    if need > max_len {
        return Err(GlyceError::Contract(format!(
            "pack: pair of {} + {} chars needs {need} tokens, limit is {max_len}",
            s1.len(),
            s2.len()
        )));
    }
    let mut token_ids = Vec::with_capacity(need);
    let mut segments = Vec::with_capacity(need);
    token_ids.push(CLS);
    segments.push(0);
    for &c in s1 {
        token_ids.push(char_token(c));
        segments.push(0);
    }
    token_ids.push(SEP);
    segments.push(0);
    for &c in s2 {
        token_ids.push(char_token(c));
        segments.push(1);
    }
    token_ids.push(SEP);
    segments.push(1);
    Ok(PackedInput { token_ids, segments, char_start: 1, char_len: s1.len() })
}

/// Softmax over the CLS row.
#[derive(Debug, Clone)]
pub struct ClassificationHead {
    pub n_classes: usize,
    pub d: usize,
    w: ParamId,
    b: ParamId,
}

impl ClassificationHead {
    pub fn register(
        ps: &mut ParamSet,
        n_classes: usize,
        d: usize,
        rng: &mut GlyceRng,
    ) -> Result<ClassificationHead> {
        if n_classes < 2 || d == 0 {
            return Err(GlyceError::Config(format!(
                "classification head: need >= 2 classes and positive width, got {n_classes} x {d}"
            )));
        }
        let w = ps.add("head.cls.w", ParamGroup::Head, uniform_init(&[n_classes, d], d, rng))?;
        let b = ps.add("head.cls.b", ParamGroup::Head, Tensor::zeros(&[n_classes]))?;
        Ok(ClassificationHead { n_classes, d, w, b })
    }

    /// Class logits from the CLS row (row 0) of `task_out [len, d]`.
    pub fn logits(&self, g: &mut Graph, ps: &ParamSet, task_out: NodeId) -> Result<NodeId> {
        let shape = g.shape(task_out).to_vec();
        if shape.len() != 2 || shape[1] != self.d {
            return Err(GlyceError::Shape(format!(
                "classification head: input {shape:?}, expected [len, {}]",
                self.d
            )));
        }
        let cls_row = g.slice_rows(task_out, 0, 1)?;
        let flat = g.reshape(cls_row, &[self.d])?;
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        g.dense(flat, w, b)
    }

    /// Probability vector over classes (forward values only).
    pub fn distribution(&self, g: &mut Graph, ps: &ParamSet, task_out: NodeId) -> Result<Vec<f64>> {
        let logits = self.logits(g, ps, task_out)?;
        let values = g.value(logits);
        let mx = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = values.iter().map(|&v| exp(v - mx)).collect();
        let z: f64 = exps.iter().sum();
        Ok(exps.iter().map(|e| e / z).collect())
    }
}

/// Emission projection plus CRF transitions.
#[derive(Debug, Clone)]
pub struct TaggingHead {
    pub n_labels: usize,
    pub d: usize,
    w: ParamId,
    b: ParamId,
    transitions: ParamId,
}

impl TaggingHead {
    pub fn register(
        ps: &mut ParamSet,
        n_labels: usize,
        d: usize,
        rng: &mut GlyceRng,
    ) -> Result<TaggingHead> {
        if n_labels == 0 || d == 0 {
            return Err(GlyceError::Config(format!(
                "tagging head: need positive label count and width, got {n_labels} x {d}"
            )));
        }
        let w = ps.add("head.tag.w", ParamGroup::Head, uniform_init(&[n_labels, d], d, rng))?;
        let b = ps.add("head.tag.b", ParamGroup::Head, Tensor::zeros(&[n_labels]))?;
        // Transitions start flat; START/STOP rows are learned like the rest.
        let transitions = ps.add(
            "head.tag.transitions",
            ParamGroup::Head,
            Tensor::zeros(&[n_labels + 2, n_labels + 2]),
        )?;
        Ok(TaggingHead { n_labels, d, w, b, transitions })
    }

    /// Per-character emission scores `[char_len, n_labels]`, sliced out of
    /// the packed sequence rows.
    pub fn emissions(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        task_out: NodeId,
        char_start: usize,
        char_len: usize,
    ) -> Result<NodeId> {
        let shape = g.shape(task_out).to_vec();
        if shape.len() != 2 || shape[1] != self.d {
            return Err(GlyceError::Shape(format!(
                "tagging head: input {shape:?}, expected [len, {}]",
                self.d
            )));
        }
        let rows = g.slice_rows(task_out, char_start, char_len)?;
        let w = g.param(ps, self.w);
        let scores = g.matmul(rows, w, true)?;
        let b = g.param(ps, self.b);
        g.row_bias(scores, b)
    }

    /// CRF negative log likelihood of the gold labels.
    pub fn nll(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        emissions: NodeId,
        labels: &[usize],
    ) -> Result<NodeId> {
        let trans = g.param(ps, self.transitions);
        g.crf_nll(emissions, trans, labels)
    }

    /// Viterbi decode over emission values.
    pub fn decode(&self, ps: &ParamSet, emissions: &Tensor) -> Result<(Vec<usize>, f64)> {
        crf::crf_viterbi(emissions, ps.get(self.transitions))
    }
}
