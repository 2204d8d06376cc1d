//! Reverse-mode autodiff over a flat tape.
//!
//! A [`Graph`] records one forward pass as a topologically ordered list of
//! nodes; operations compute eagerly at construction time and `backward`
//! walks the tape in reverse. Parameters bind into a graph through
//! [`Graph::param`], which caches the node per parameter so a tensor used
//! twice accumulates both gradient contributions.
//!
//! There is no broadcasting. Every constructor checks shapes and reports
//! the offending dimensions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::crf;
use crate::error::{GlyceError, Result};
use crate::math;
use crate::params::{ParamId, ParamSet};
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: f64,
    },
    Relu {
        x: NodeId,
    },
    Tanh {
        x: NodeId,
    },
    /// `a [m,k] * b [k,n]`, or `a [m,k] * b^T` with `b [n,k]`.
    MatMul {
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
        transpose_b: bool,
    },
    /// `w [m,n] * x [n] + b [m]`.
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        m: usize,
        n: usize,
    },
    /// `x [m,n] + b [n]` on every row.
    RowBias {
        x: NodeId,
        b: NodeId,
        m: usize,
        n: usize,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        stride: usize,
        groups: usize,
    },
    /// `x [c,h,w] + b [c]` on every channel plane.
    ChannelBias {
        x: NodeId,
        b: NodeId,
    },
    MaxPool2d {
        x: NodeId,
        argmax: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        target: usize,
        probs: Vec<f64>,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        d: usize,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
    },
    Embedding {
        table: NodeId,
        ids: Vec<usize>,
        d: usize,
    },
    SliceRows {
        x: NodeId,
        start: usize,
        cols: usize,
    },
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
        rows: usize,
        cols: usize,
    },
    /// Row-wise softmax; masked columns carry zero output, so backward
    /// needs no record of the mask.
    SoftmaxRows {
        x: NodeId,
    },
    MeanScalars {
        parts: Vec<NodeId>,
    },
    StackRows {
        parts: Vec<NodeId>,
        n: usize,
    },
    Reshape {
        x: NodeId,
    },
    Transpose {
        x: NodeId,
        rows: usize,
        cols: usize,
    },
    GlobalAvgPool {
        x: NodeId,
        hw: usize,
    },
    /// Negative log-likelihood of a linear-chain CRF; gradients for the
    /// emissions and transitions are computed by forward-backward at
    /// construction time.
    CrfNll {
        emissions: NodeId,
        transitions: NodeId,
        d_emissions: Vec<f64>,
        d_transitions: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: alloc::collections::BTreeMap<usize, NodeId>,
    backward_done: bool,
}

fn shape_err(msg: alloc::string::String) -> GlyceError {
    GlyceError::Shape(msg)
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> NodeId {
        debug_assert_eq!(numel(&shape), values.len());
        let n = values.len();
        self.nodes.push(Node {
            shape,
            values,
            grad: vec![0.0; n],
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf holding externally supplied values (inputs, constants).
    pub fn input(&mut self, shape: &[usize], values: Vec<f64>) -> Result<NodeId> {
        if numel(shape) != values.len() {
            return Err(shape_err(format!(
                "input shape {:?} wants {} values, got {}",
                shape,
                numel(shape),
                values.len()
            )));
        }
        Ok(self.push(shape.to_vec(), values, Op::Leaf { param: None }))
    }

    /// Binds a parameter tensor as a leaf, copying its current values.
    /// Repeated binds of the same parameter return the same node.
    pub fn param(&mut self, ps: &ParamSet, id: ParamId) -> NodeId {
        if let Some(&node) = self.bound.get(&id.0) {
            return node;
        }
        let t = ps.get(id);
        let node = self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            Op::Leaf { param: Some(id) },
        );
        self.bound.insert(id.0, node);
        node
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let n = &self.nodes[id.0];
        if !n.shape.is_empty() {
            return Err(GlyceError::Contract(format!(
                "expected scalar node, got shape {:?}",
                n.shape
            )));
        }
        Ok(n.values[0])
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(shape_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        Ok(())
    }

    fn rank2(&self, x: NodeId, what: &str) -> Result<(usize, usize)> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 2 {
            return Err(shape_err(format!("{what}: expected rank 2, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Add { a, b }))
    }

    /// Multiplies every element by the constant `c`.
    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let values: Vec<f64> = self.nodes[x.0].values.iter().map(|v| v * c).collect();
        self.push(self.nodes[x.0].shape.clone(), values, Op::Scale { x, c })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let values: Vec<f64> = self.nodes[x.0]
            .values
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        self.push(self.nodes[x.0].shape.clone(), values, Op::Relu { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let values: Vec<f64> = self.nodes[x.0].values.iter().map(|&v| math::tanh(v)).collect();
        self.push(self.nodes[x.0].shape.clone(), values, Op::Tanh { x })
    }

    /// `a [m,k] * b [k,n] -> [m,n]`; with `transpose_b`, `b` is `[n,k]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> Result<NodeId> {
        let (m, k) = self.rank2(a, "matmul lhs")?;
        let (br, bc) = self.rank2(b, "matmul rhs")?;
        let (kb, n) = if transpose_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(shape_err(format!(
                "matmul: inner dims {k} vs {kb} (lhs {:?}, rhs {:?}, transpose_b={transpose_b})",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        let mut out = vec![0.0; m * n];
        if transpose_b {
            mm_nt(&mut out, &self.nodes[a.0].values, &self.nodes[b.0].values, m, k, n);
        } else {
            mm_nn(&mut out, &self.nodes[a.0].values, &self.nodes[b.0].values, m, k, n);
        }
        Ok(self.push(
            vec![m, n],
            out,
            Op::MatMul { a, b, m, k, n, transpose_b },
        ))
    }

    /// `dense(x [n], w [m,n], b [m]) -> [m]`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.rank2(w, "dense weight")?;
        if self.nodes[x.0].shape != [n] {
            return Err(shape_err(format!(
                "dense: input {:?} does not match weight [{m}, {n}]",
                self.nodes[x.0].shape
            )));
        }
        if self.nodes[b.0].shape != [m] {
            return Err(shape_err(format!(
                "dense: bias {:?} does not match weight [{m}, {n}]",
                self.nodes[b.0].shape
            )));
        }
        let xs = &self.nodes[x.0].values;
        let ws = &self.nodes[w.0].values;
        let bs = &self.nodes[b.0].values;
        let mut out = vec![0.0; m];
        for i in 0..m {
            out[i] = bs[i] + dot(&ws[i * n..(i + 1) * n], xs);
        }
        Ok(self.push(vec![m], out, Op::Dense { x, w, b, m, n }))
    }

    /// Adds `b [n]` to every row of `x [m,n]`.
    pub fn row_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.rank2(x, "row_bias input")?;
        if self.nodes[b.0].shape != [n] {
            return Err(shape_err(format!(
                "row_bias: bias {:?} vs row width {n}",
                self.nodes[b.0].shape
            )));
        }
        let mut out = self.nodes[x.0].values.clone();
        for r in 0..m {
            for (o, bv) in out[r * n..(r + 1) * n].iter_mut().zip(&self.nodes[b.0].values) {
                *o += bv;
            }
        }
        Ok(self.push(vec![m, n], out, Op::RowBias { x, b, m, n }))
    }

    /// Valid (unpadded) grouped convolution.
    /// `x [c_in, h, w]`, `kernels [c_out, c_in/groups, k, k]`, square kernel.
    pub fn conv2d(&mut self, x: NodeId, kernels: NodeId, stride: usize, groups: usize) -> Result<NodeId> {
        let xs = &self.nodes[x.0].shape;
        let ks = &self.nodes[kernels.0].shape;
        if xs.len() != 3 {
            return Err(shape_err(format!("conv2d: input {xs:?}, expected [c,h,w]")));
        }
        if ks.len() != 4 || ks[2] != ks[3] {
            return Err(shape_err(format!(
                "conv2d: kernels {ks:?}, expected [c_out, c_in/groups, k, k]"
            )));
        }
        let (c_in, h, w) = (xs[0], xs[1], xs[2]);
        let (c_out, cpg_in, k) = (ks[0], ks[1], ks[2]);
        if stride == 0 || groups == 0 {
            return Err(GlyceError::Config(format!(
                "conv2d: stride {stride} and groups {groups} must be positive"
            )));
        }
        if c_in % groups != 0 || c_out % groups != 0 {
            return Err(GlyceError::Config(format!(
                "conv2d: groups {groups} does not divide c_in {c_in} or c_out {c_out}"
            )));
        }
        if cpg_in != c_in / groups {
            return Err(shape_err(format!(
                "conv2d: kernel expects {cpg_in} channels per group, input provides {}",
                c_in / groups
            )));
        }
        if k > h || k > w {
            return Err(shape_err(format!(
                "conv2d: kernel {k} larger than input {h}x{w} (no padding)"
            )));
        }
        let ho = (h - k) / stride + 1;
        let wo = (w - k) / stride + 1;
        let mut out = vec![0.0; c_out * ho * wo];
        conv_forward(
            &mut out,
            &self.nodes[x.0].values,
            &self.nodes[kernels.0].values,
            ConvDims { c_in, h, w, c_out, k, stride, groups, ho, wo },
        );
        Ok(self.push(
            vec![c_out, ho, wo],
            out,
            Op::Conv2d { x, w: kernels, stride, groups },
        ))
    }

    /// Adds `b [c]` to every pixel of channel `c`.
    pub fn channel_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = &self.nodes[x.0].shape;
        if xs.len() != 3 {
            return Err(shape_err(format!("channel_bias: input {xs:?}, expected [c,h,w]")));
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        if self.nodes[b.0].shape != [c] {
            return Err(shape_err(format!(
                "channel_bias: bias {:?} vs {c} channels",
                self.nodes[b.0].shape
            )));
        }
        let mut out = self.nodes[x.0].values.clone();
        for ci in 0..c {
            let bv = self.nodes[b.0].values[ci];
            for o in &mut out[ci * hw..(ci + 1) * hw] {
                *o += bv;
            }
        }
        Ok(self.push(xs.clone(), out, Op::ChannelBias { x, b }))
    }

    /// Non-overlapping max pooling with window `k`; the input sides must
    /// divide evenly. Ties go to the lowest row-major index, and backward
    /// routes the full gradient to that single element.
    pub fn maxpool2d(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        let xs = &self.nodes[x.0].shape;
        if xs.len() != 3 {
            return Err(shape_err(format!("maxpool2d: input {xs:?}, expected [c,h,w]")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(shape_err(format!(
                "maxpool2d: window {k} does not tile input {h}x{w}"
            )));
        }
        let (ho, wo) = (h / k, w / k);
        let vals = &self.nodes[x.0].values;
        let mut out = vec![0.0; c * ho * wo];
        let mut argmax = vec![0usize; c * ho * wo];
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = ci * h * w + (oy * k + ky) * w + (ox * k + kx);
                            if vals[idx] > best {
                                best = vals[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ci * ho * wo + oy * wo + ox;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        Ok(self.push(vec![c, ho, wo], out, Op::MaxPool2d { x, argmax }))
    }

    /// `-log softmax(logits)[target]`, numerically shifted by the max.
    pub fn softmax_xent(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let s = &self.nodes[logits.0].shape;
        if s.len() != 1 {
            return Err(shape_err(format!(
                "softmax_xent: logits {s:?}, expected rank 1"
            )));
        }
        let kk = s[0];
        if target >= kk {
            return Err(GlyceError::Index(format!(
                "softmax_xent: target {target} out of range for {kk} classes"
            )));
        }
        let ls = &self.nodes[logits.0].values;
        let m = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs = vec![0.0; kk];
        let mut z = 0.0;
        for (p, &l) in probs.iter_mut().zip(ls) {
            *p = math::exp(l - m);
            z += *p;
        }
        for p in &mut probs {
            *p /= z;
        }
        let loss = math::ln(z) - (ls[target] - m);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::SoftmaxCrossEntropy { logits, target, probs },
        ))
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(GlyceError::Contract("concat: no parts".into()));
        }
        let rank = self.nodes[parts[0].0].shape.len();
        if axis >= rank {
            return Err(shape_err(format!("concat: axis {axis} out of rank {rank}")));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = &self.nodes[p.0].shape;
            if s.len() != rank {
                return Err(shape_err(format!(
                    "concat: rank mismatch {:?} vs {:?}",
                    self.nodes[parts[0].0].shape, s
                )));
            }
            for d in 0..rank {
                if d != axis && s[d] != self.nodes[parts[0].0].shape[d] {
                    return Err(shape_err(format!(
                        "concat: axis {d} mismatch {:?} vs {:?}",
                        self.nodes[parts[0].0].shape, s
                    )));
                }
            }
            axis_total += s[axis];
        }
        let mut shape = self.nodes[parts[0].0].shape.clone();
        shape[axis] = axis_total;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; numel(&shape)];
        let row = axis_total * inner;
        for o in 0..outer {
            let mut off = 0;
            for &p in parts {
                let pa = self.nodes[p.0].shape[axis];
                let block = pa * inner;
                let src = &self.nodes[p.0].values[o * block..(o + 1) * block];
                out[o * row + off..o * row + off + block].copy_from_slice(src);
                off += block;
            }
        }
        Ok(self.push(shape, out, Op::Concat { parts: parts.to_vec(), axis }))
    }

    /// Normalizes the last axis of `x` to zero mean and unit variance,
    /// then applies `gamma` and `beta` (both `[d]`).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let s = self.nodes[x.0].shape.clone();
        if s.is_empty() {
            return Err(shape_err("layer_norm: scalar input".into()));
        }
        let d = *s.last().unwrap();
        if self.nodes[gamma.0].shape != [d] || self.nodes[beta.0].shape != [d] {
            return Err(shape_err(format!(
                "layer_norm: gamma {:?} / beta {:?} vs feature dim {d}",
                self.nodes[gamma.0].shape, self.nodes[beta.0].shape
            )));
        }
        let rows = numel(&s) / d;
        let xs = &self.nodes[x.0].values;
        let gs = &self.nodes[gamma.0].values;
        let bs = &self.nodes[beta.0].values;
        let mut out = vec![0.0; rows * d];
        let mut means = vec![0.0; rows];
        let mut inv_stds = vec![0.0; rows];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / math::sqrt(var + eps);
            means[r] = mean;
            inv_stds[r] = inv_std;
            for j in 0..d {
                out[r * d + j] = (row[j] - mean) * inv_std * gs[j] + bs[j];
            }
        }
        Ok(self.push(
            s,
            out,
            Op::LayerNorm { x, gamma, beta, d, inv_std: inv_stds, mean: means },
        ))
    }

    /// Gathers rows of `table [v,d]` -> `[len(ids), d]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, d) = self.rank2(table, "embedding table")?;
        for &id in ids {
            if id >= v {
                return Err(GlyceError::Index(format!(
                    "embedding: id {id} out of range for table of {v} rows"
                )));
            }
        }
        let mut out = vec![0.0; ids.len() * d];
        for (r, &id) in ids.iter().enumerate() {
            out[r * d..(r + 1) * d]
                .copy_from_slice(&self.nodes[table.0].values[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Embedding { table, ids: ids.to_vec(), d },
        ))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.rank2(x, "slice_rows input")?;
        if start + len > m || len == 0 {
            return Err(shape_err(format!(
                "slice_rows: rows {start}..{} out of [{m}, {n}]",
                start + len
            )));
        }
        let out = self.nodes[x.0].values[start * n..(start + len) * n].to_vec();
        Ok(self.push(vec![len, n], out, Op::SliceRows { x, start, cols: n }))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.rank2(x, "slice_cols input")?;
        if start + len > n || len == 0 {
            return Err(shape_err(format!(
                "slice_cols: cols {start}..{} out of [{m}, {n}]",
                start + len
            )));
        }
        let mut out = vec![0.0; m * len];
        for r in 0..m {
            out[r * len..(r + 1) * len]
                .copy_from_slice(&self.nodes[x.0].values[r * n + start..r * n + start + len]);
        }
        Ok(self.push(
            vec![m, len],
            out,
            Op::SliceCols { x, start, len, rows: m, cols: n },
        ))
    }

    /// Softmax over each row of `x [m,n]`. Columns flagged `true` in the
    /// mask are excluded (probability zero); a row must keep at least one
    /// eligible column.
    pub fn softmax_rows(&mut self, x: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let (m, n) = self.rank2(x, "softmax_rows input")?;
        if let Some(ms) = mask {
            if ms.len() != n {
                return Err(shape_err(format!(
                    "softmax_rows: mask length {} vs {n} columns",
                    ms.len()
                )));
            }
            if ms.iter().all(|&b| b) {
                return Err(GlyceError::Contract(
                    "softmax_rows: every column is masked".into(),
                ));
            }
        }
        let xs = &self.nodes[x.0].values;
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mut mx = f64::NEG_INFINITY;
            for j in 0..n {
                if mask.map_or(true, |ms| !ms[j]) && row[j] > mx {
                    mx = row[j];
                }
            }
            let mut z = 0.0;
            for j in 0..n {
                if mask.map_or(true, |ms| !ms[j]) {
                    let e = math::exp(row[j] - mx);
                    out[r * n + j] = e;
                    z += e;
                }
            }
            for j in 0..n {
                out[r * n + j] /= z;
            }
        }
        Ok(self.push(vec![m, n], out, Op::SoftmaxRows { x }))
    }

    /// Mean of several scalar nodes; the batch-reduction primitive.
    pub fn mean_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(GlyceError::Contract("mean_scalars: no parts".into()));
        }
        let mut s = 0.0;
        for &p in parts {
            if !self.nodes[p.0].shape.is_empty() {
                return Err(GlyceError::Contract(format!(
                    "mean_scalars: part has shape {:?}",
                    self.nodes[p.0].shape
                )));
            }
            s += self.nodes[p.0].values[0];
        }
        s /= parts.len() as f64;
        Ok(self.push(Vec::new(), vec![s], Op::MeanScalars { parts: parts.to_vec() }))
    }

    /// Stacks rank-1 `[n]` vectors into `[len, n]`.
    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(GlyceError::Contract("stack_rows: no parts".into()));
        }
        let s0 = self.nodes[parts[0].0].shape.clone();
        if s0.len() != 1 {
            return Err(shape_err(format!("stack_rows: part shape {s0:?}, expected [n]")));
        }
        let n = s0[0];
        let mut out = vec![0.0; parts.len() * n];
        for (r, &p) in parts.iter().enumerate() {
            if self.nodes[p.0].shape != [n] {
                return Err(shape_err(format!(
                    "stack_rows: part {r} shape {:?} vs [{n}]",
                    self.nodes[p.0].shape
                )));
            }
            out[r * n..(r + 1) * n].copy_from_slice(&self.nodes[p.0].values);
        }
        Ok(self.push(
            vec![parts.len(), n],
            out,
            Op::StackRows { parts: parts.to_vec(), n },
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        if numel(shape) != self.nodes[x.0].values.len() {
            return Err(shape_err(format!(
                "reshape: {:?} ({} values) to {shape:?} ({})",
                self.nodes[x.0].shape,
                self.nodes[x.0].values.len(),
                numel(shape)
            )));
        }
        let values = self.nodes[x.0].values.clone();
        Ok(self.push(shape.to_vec(), values, Op::Reshape { x }))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.rank2(x, "transpose input")?;
        let xs = &self.nodes[x.0].values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = xs[i * n + j];
            }
        }
        Ok(self.push(vec![n, m], out, Op::Transpose { x, rows: m, cols: n }))
    }

    /// Mean over the spatial plane of each channel: `[c,h,w] -> [c]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 3 {
            return Err(shape_err(format!("global_avg_pool: input {s:?}, expected [c,h,w]")));
        }
        let (c, hw) = (s[0], s[1] * s[2]);
        let xs = &self.nodes[x.0].values;
        let mut out = vec![0.0; c];
        for ci in 0..c {
            out[ci] = xs[ci * hw..(ci + 1) * hw].iter().sum::<f64>() / hw as f64;
        }
        Ok(self.push(vec![c], out, Op::GlobalAvgPool { x, hw }))
    }

    /// CRF negative log-likelihood of the labeled path given emissions
    /// `[l,k]` and transitions `[k+2,k+2]` (virtual start = k, stop = k+1).
    pub fn crf_nll(&mut self, emissions: NodeId, transitions: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (l, k) = self.rank2(emissions, "crf emissions")?;
        let (tr, tc) = self.rank2(transitions, "crf transitions")?;
        if tr != k + 2 || tc != k + 2 {
            return Err(shape_err(format!(
                "crf_nll: transitions [{tr}, {tc}] vs expected [{}, {}]",
                k + 2,
                k + 2
            )));
        }
        let (nll, d_emissions, d_transitions) = crf::nll_with_grads(
            &self.nodes[emissions.0].values,
            l,
            k,
            &self.nodes[transitions.0].values,
            labels,
        )?;
        Ok(self.push(
            Vec::new(),
            vec![nll],
            Op::CrfNll { emissions, transitions, d_emissions, d_transitions },
        ))
    }

    /// Seeds the scalar `loss` with gradient 1 and propagates through the
    /// tape in reverse order. May be called once per graph.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.nodes[loss.0].shape.is_empty() {
            return Err(GlyceError::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if self.backward_done {
            return Err(GlyceError::Contract(
                "backward: already called on this graph".into(),
            ));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad[0] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            backward_step(node, before);
        }
        Ok(())
    }

    /// Adds the gradients of bound parameter leaves into the parameter
    /// set's gradient buffers.
    pub fn accumulate_param_grads(&self, ps: &mut ParamSet) {
        for node in &self.nodes {
            if let Op::Leaf { param: Some(id) } = node.op {
                let g = ps.get_mut(id).grad_mut();
                for (dst, src) in g.iter_mut().zip(&node.grad) {
                    *dst += src;
                }
            }
        }
    }

    /// Copies a node out as a plain tensor (values only, zero grad).
    pub fn tensor(&self, id: NodeId) -> Tensor {
        Tensor::from_values(&self.nodes[id.0].shape, self.nodes[id.0].values.clone())
            .expect("node shape and values always agree")
    }

    /// Sum of all elements as a scalar; composite of matmul with ones.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.nodes[x.0].values.len();
        let col = self.reshape(x, &[n, 1])?;
        let ones = self.input(&[1, n], vec![1.0; n])?;
        let s = self.matmul(ones, col, false)?;
        self.reshape(s, &[])
    }

    /// Mean of all elements as a scalar.
    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.nodes[x.0].values.len();
        let s = self.sum_all(x)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }
}

struct ConvDims {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    groups: usize,
    ho: usize,
    wo: usize,
}

fn conv_forward(out: &mut [f64], x: &[f64], ker: &[f64], d: ConvDims) {
    let cpg_in = d.c_in / d.groups;
    let cpg_out = d.c_out / d.groups;
    let ksz = d.k * d.k;
    for g in 0..d.groups {
        for ol in 0..cpg_out {
            let oc = g * cpg_out + ol;
            let kbase = oc * cpg_in * ksz;
            for oy in 0..d.ho {
                let iy0 = oy * d.stride;
                for ox in 0..d.wo {
                    let ix0 = ox * d.stride;
                    let mut acc = 0.0;
                    for il in 0..cpg_in {
                        let ic = g * cpg_in + il;
                        for ky in 0..d.k {
                            let xrow = ic * d.h * d.w + (iy0 + ky) * d.w + ix0;
                            let krow = kbase + il * ksz + ky * d.k;
                            acc += dot(&x[xrow..xrow + d.k], &ker[krow..krow + d.k]);
                        }
                    }
                    out[oc * d.ho * d.wo + oy * d.wo + ox] = acc;
                }
            }
        }
    }
}

fn conv_backward(
    g_out: &[f64],
    x: &[f64],
    ker: &[f64],
    gx: &mut [f64],
    gk: &mut [f64],
    d: ConvDims,
) {
    let cpg_in = d.c_in / d.groups;
    let cpg_out = d.c_out / d.groups;
    let ksz = d.k * d.k;
    for g in 0..d.groups {
        for ol in 0..cpg_out {
            let oc = g * cpg_out + ol;
            let kbase = oc * cpg_in * ksz;
            for oy in 0..d.ho {
                let iy0 = oy * d.stride;
                for ox in 0..d.wo {
                    let ix0 = ox * d.stride;
                    let go = g_out[oc * d.ho * d.wo + oy * d.wo + ox];
                    if go == 0.0 {
                        continue;
                    }
                    for il in 0..cpg_in {
                        let ic = g * cpg_in + il;
                        for ky in 0..d.k {
                            let xrow = ic * d.h * d.w + (iy0 + ky) * d.w + ix0;
                            let krow = kbase + il * ksz + ky * d.k;
                            for kx in 0..d.k {
                                gx[xrow + kx] += go * ker[krow + kx];
                                gk[krow + kx] += go * x[xrow + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Unrolled dot product; four accumulators, fixed summation order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    debug_assert_eq!(n, b.len());
    let mut s = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        s[0] += a[i] * b[i];
        s[1] += a[i + 1] * b[i + 1];
        s[2] += a[i + 2] * b[i + 2];
        s[3] += a[i + 3] * b[i + 3];
    }
    let mut acc = (s[0] + s[1]) + (s[2] + s[3]);
    for i in chunks * 4..n {
        acc += a[i] * b[i];
    }
    acc
}

/// `c [m,n] += a [m,k] * b [k,n]`.
fn mm_nn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c [m,n] += a [m,k] * b^T` with `b [n,k]`.
fn mm_nt(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c [k,n] += a^T * b` with `a [m,k]`, `b [m,n]`.
fn mm_tn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for p in 0..m {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..k {
            let av = a[p * k + i];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Propagates `node`'s gradient into its parents (all at lower indices).
fn backward_step(node: &Node, before: &mut [Node]) {
    let g = &node.grad;
    match &node.op {
        Op::Leaf { .. } => {}
        Op::Add { a, b } => {
            for (dst, src) in before[a.0].grad.iter_mut().zip(g) {
                *dst += src;
            }
            for (dst, src) in before[b.0].grad.iter_mut().zip(g) {
                *dst += src;
            }
        }
        Op::Scale { x, c } => {
            for (dst, src) in before[x.0].grad.iter_mut().zip(g) {
                *dst += c * src;
            }
        }
        Op::Relu { x } => {
            let xv = &before[x.0].values;
            for i in 0..g.len() {
                if xv[i] > 0.0 {
                    before[x.0].grad[i] += g[i];
                }
            }
        }
        Op::Tanh { x } => {
            let y = &node.values;
            for i in 0..g.len() {
                before[x.0].grad[i] += g[i] * (1.0 - y[i] * y[i]);
            }
        }
        Op::MatMul { a, b, m, k, n, transpose_b } => {
            let (m, k, n) = (*m, *k, *n);
            // da and db go through temporaries so a == b still accumulates
            // both contributions correctly.
            let mut da = vec![0.0; m * k];
            let db_len = before[b.0].values.len();
            let mut db = vec![0.0; db_len];
            if !*transpose_b {
                // c = a*b: da += g*b^T, db += a^T*g
                mm_nt(&mut da, g, &before[b.0].values, m, n, k);
                mm_tn(&mut db, &before[a.0].values, g, m, k, n);
            } else {
                // c = a*b^T: da += g*b, db += g^T*a
                mm_nn(&mut da, g, &before[b.0].values, m, n, k);
                mm_tn(&mut db, g, &before[a.0].values, m, n, k);
            }
            for (dst, src) in before[a.0].grad.iter_mut().zip(&da) {
                *dst += src;
            }
            for (dst, src) in before[b.0].grad.iter_mut().zip(&db) {
                *dst += src;
            }
        }
        Op::Dense { x, w, b, m, n } => {
            let (m, n) = (*m, *n);
            {
                let (xv, wv) = two(before, x.0, w.0);
                for i in 0..m {
                    let gi = g[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let wrow = &wv.values[i * n..(i + 1) * n];
                    for j in 0..n {
                        xv.grad[j] += gi * wrow[j];
                    }
                }
            }
            {
                let (xv, wv) = two(before, x.0, w.0);
                for i in 0..m {
                    let gi = g[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let wg = &mut wv.grad[i * n..(i + 1) * n];
                    for j in 0..n {
                        wg[j] += gi * xv.values[j];
                    }
                }
            }
            for (dst, src) in before[b.0].grad.iter_mut().zip(g) {
                *dst += src;
            }
        }
        Op::RowBias { x, b, m, n } => {
            for (dst, src) in before[x.0].grad.iter_mut().zip(g) {
                *dst += src;
            }
            let bg = &mut before[b.0].grad;
            for r in 0..*m {
                for j in 0..*n {
                    bg[j] += g[r * n + j];
                }
            }
        }
        Op::Conv2d { x, w, stride, groups } => {
            let xs = before[x.0].shape.clone();
            let ks = before[w.0].shape.clone();
            let os = &node.shape;
            let dims = ConvDims {
                c_in: xs[0],
                h: xs[1],
                w: xs[2],
                c_out: ks[0],
                k: ks[2],
                stride: *stride,
                groups: *groups,
                ho: os[1],
                wo: os[2],
            };
            let (xn, wn) = two(before, x.0, w.0);
            let (xv, gx) = (&xn.values, &mut xn.grad);
            let (wv, gw) = (&wn.values, &mut wn.grad);
            conv_backward(g, xv, wv, gx, gw, dims);
        }
        Op::ChannelBias { x, b } => {
            for (dst, src) in before[x.0].grad.iter_mut().zip(g) {
                *dst += src;
            }
            let s = &before[x.0].shape;
            let (c, hw) = (s[0], s[1] * s[2]);
            let bg = &mut before[b.0].grad;
            for ci in 0..c {
                bg[ci] += g[ci * hw..(ci + 1) * hw].iter().sum::<f64>();
            }
        }
        Op::MaxPool2d { x, argmax, .. } => {
            let xg = &mut before[x.0].grad;
            for (o, &src) in argmax.iter().enumerate() {
                xg[src] += g[o];
            }
        }
        Op::SoftmaxCrossEntropy { logits, target, probs } => {
            let go = g[0];
            let lg = &mut before[logits.0].grad;
            for (j, &p) in probs.iter().enumerate() {
                let ind = if j == *target { 1.0 } else { 0.0 };
                lg[j] += go * (p - ind);
            }
        }
        Op::Concat { parts, axis } => {
            let axis = *axis;
            let shape = &node.shape;
            let outer: usize = shape[..axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let row = shape[axis] * inner;
            let mut off = 0;
            for &p in parts {
                let pa = before[p.0].shape[axis];
                let block = pa * inner;
                for o in 0..outer {
                    let src = &g[o * row + off..o * row + off + block];
                    for (dst, s) in before[p.0].grad[o * block..(o + 1) * block]
                        .iter_mut()
                        .zip(src)
                    {
                        *dst += s;
                    }
                }
                off += block;
            }
        }
        Op::LayerNorm { x, gamma, beta, d, inv_std, mean } => {
            let d = *d;
            let rows = g.len() / d;
            let gv = before[gamma.0].values.clone();
            let xv = before[x.0].values.clone();
            for r in 0..rows {
                let gr = &g[r * d..(r + 1) * d];
                let istd = inv_std[r];
                let mu = mean[r];
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                let mut xhat = vec![0.0; d];
                for j in 0..d {
                    xhat[j] = (xv[r * d + j] - mu) * istd;
                    let dxh = gr[j] * gv[j];
                    m1 += dxh;
                    m2 += dxh * xhat[j];
                }
                m1 /= d as f64;
                m2 /= d as f64;
                let xg = &mut before[x.0].grad;
                for j in 0..d {
                    let dxh = gr[j] * gv[j];
                    xg[r * d + j] += istd * (dxh - m1 - xhat[j] * m2);
                }
                let gg = &mut before[gamma.0].grad;
                for j in 0..d {
                    gg[j] += gr[j] * xhat[j];
                }
                let bg = &mut before[beta.0].grad;
                for j in 0..d {
                    bg[j] += gr[j];
                }
            }
        }
        Op::Embedding { table, ids, d } => {
            let tg = &mut before[table.0].grad;
            for (r, &id) in ids.iter().enumerate() {
                for j in 0..*d {
                    tg[id * d + j] += g[r * d + j];
                }
            }
        }
        Op::SliceRows { x, start, cols } => {
            let xg = &mut before[x.0].grad;
            let base = start * cols;
            for (i, src) in g.iter().enumerate() {
                xg[base + i] += src;
            }
        }
        Op::SliceCols { x, start, len, rows, cols } => {
            let xg = &mut before[x.0].grad;
            for r in 0..*rows {
                for j in 0..*len {
                    xg[r * cols + start + j] += g[r * len + j];
                }
            }
        }
        Op::SoftmaxRows { x } => {
            let p = &node.values;
            let n = *node.shape.last().unwrap();
            let rows = node.shape[0];
            let xg = &mut before[x.0].grad;
            for r in 0..rows {
                let pr = &p[r * n..(r + 1) * n];
                let gr = &g[r * n..(r + 1) * n];
                let s: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    xg[r * n + j] += pr[j] * (gr[j] - s);
                }
            }
        }
        Op::MeanScalars { parts } => {
            let go = g[0] / parts.len() as f64;
            for &p in parts {
                before[p.0].grad[0] += go;
            }
        }
        Op::StackRows { parts, n } => {
            for (r, &p) in parts.iter().enumerate() {
                for (dst, src) in before[p.0].grad.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                    *dst += src;
                }
            }
        }
        Op::Reshape { x } => {
            for (dst, src) in before[x.0].grad.iter_mut().zip(g) {
                *dst += src;
            }
        }
        Op::Transpose { x, rows, cols } => {
            let xg = &mut before[x.0].grad;
            for i in 0..*rows {
                for j in 0..*cols {
                    xg[i * cols + j] += g[j * rows + i];
                }
            }
        }
        Op::GlobalAvgPool { x, hw } => {
            let xg = &mut before[x.0].grad;
            for (ci, &go) in g.iter().enumerate() {
                let share = go / *hw as f64;
                for dst in &mut xg[ci * hw..(ci + 1) * hw] {
                    *dst += share;
                }
            }
        }
        Op::CrfNll { emissions, transitions, d_emissions, d_transitions } => {
            let go = g[0];
            for (dst, src) in before[emissions.0].grad.iter_mut().zip(d_emissions) {
                *dst += go * src;
            }
            for (dst, src) in before[transitions.0].grad.iter_mut().zip(d_transitions) {
                *dst += go * src;
            }
        }
    }
}

/// Two distinct mutable nodes out of the prefix slice.
fn two(nodes: &mut [Node], i: usize, j: usize) -> (&mut Node, &mut Node) {
    debug_assert_ne!(i, j);
    if i < j {
        let (l, r) = nodes.split_at_mut(j);
        (&mut l[i], &mut r[0])
    } else {
        let (l, r) = nodes.split_at_mut(i);
        (&mut r[0], &mut l[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;
    use alloc::vec;

    fn leaf(g: &mut Graph, shape: &[usize], values: Vec<f64>) -> NodeId {
        g.input(shape, values).unwrap()
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1, 3, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let k = leaf(&mut g, &[1, 1, 1, 1], vec![1.0]);
        let y = g.conv2d(x, k, 1, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 3]);
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn conv_output_sides_shrink_by_kernel() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1, 12, 12], vec![0.5; 144]);
        let k = leaf(&mut g, &[3, 1, 5, 5], vec![0.1; 75]);
        let y = g.conv2d(x, k, 1, 1).unwrap();
        assert_eq!(g.shape(y), &[3, 8, 8]);
    }

    #[test]
    fn conv_rejects_kernel_larger_than_input() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1, 4, 4], vec![0.0; 16]);
        let k = leaf(&mut g, &[1, 1, 5, 5], vec![0.0; 25]);
        assert!(matches!(g.conv2d(x, k, 1, 1), Err(GlyceError::Shape(_))));
    }

    #[test]
    fn conv_rejects_bad_groups() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[3, 4, 4], vec![0.0; 48]);
        let k = leaf(&mut g, &[4, 1, 1, 1], vec![0.0; 4]);
        // groups=2 does not divide c_in=3
        assert!(matches!(g.conv2d(x, k, 1, 2), Err(GlyceError::Config(_))));
    }

    #[test]
    fn maxpool_8x8_to_2x2() {
        let mut g = Graph::new();
        let mut vals = vec![0.0; 64];
        vals[9] = 5.0;
        let x = leaf(&mut g, &[1, 8, 8], vals);
        let y = g.maxpool2d(x, 4).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 2]);
        assert_eq!(g.value(y)[0], 5.0);
    }

    #[test]
    fn maxpool_tie_takes_lowest_row_major_index() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1, 2, 2], vec![3.0, 3.0, 3.0, 3.0]);
        let y = g.maxpool2d(x, 2).unwrap();
        let s = g.reshape(y, &[]).unwrap();
        g.backward(s).unwrap();
        // full gradient lands on index 0 only
        assert_eq!(g.grad(x), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_xent_uniform_logits_is_ln_k() {
        let mut g = Graph::new();
        let l = leaf(&mut g, &[4], vec![0.3, 0.3, 0.3, 0.3]);
        let y = g.softmax_xent(l, 2).unwrap();
        assert!((g.scalar(y).unwrap() - math::ln(4.0)).abs() < 1e-12);
    }

    #[test]
    fn softmax_xent_saturated_correct_class() {
        let mut g = Graph::new();
        let mut logits = vec![0.0; 5];
        logits[1] = 100.0;
        let l = leaf(&mut g, &[5], logits);
        let y = g.softmax_xent(l, 1).unwrap();
        assert!(g.scalar(y).unwrap() < 1e-6);
    }

    #[test]
    fn softmax_xent_rejects_bad_target() {
        let mut g = Graph::new();
        let l = leaf(&mut g, &[3], vec![0.0; 3]);
        assert!(matches!(g.softmax_xent(l, 3), Err(GlyceError::Index(_))));
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2], vec![0.0; 2]);
        let b = leaf(&mut g, &[3], vec![0.0; 3]);
        assert!(matches!(g.add(a, b), Err(GlyceError::Shape(_))));
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2, 3], vec![0.0; 6]);
        let b = leaf(&mut g, &[2, 2], vec![0.0; 4]);
        assert!(g.matmul(a, b, false).is_err());
        assert!(g.matmul(a, b, true).is_err());
        let bt = leaf(&mut g, &[4, 3], vec![0.0; 12]);
        let c = g.matmul(a, bt, true).unwrap();
        assert_eq!(g.shape(c), &[2, 4]);
    }

    #[test]
    fn matmul_matches_hand_computed() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = leaf(&mut g, &[2, 2], vec![5.0, 6.0, 7.0, 8.0]);
        let c = g.matmul(a, b, false).unwrap();
        assert_eq!(g.value(c), &[19.0, 22.0, 43.0, 50.0]);
        let ct = g.matmul(a, b, true).unwrap();
        assert_eq!(g.value(ct), &[17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn concat_axis0_and_axis1() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[1, 2], vec![1.0, 2.0]);
        let b = leaf(&mut g, &[1, 2], vec![3.0, 4.0]);
        let c0 = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.shape(c0), &[2, 2]);
        assert_eq!(g.value(c0), &[1.0, 2.0, 3.0, 4.0]);
        let c1 = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c1), &[1, 4]);
        assert_eq!(g.value(c1), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_double_call() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2], vec![1.0, 2.0]);
        assert!(matches!(g.backward(a), Err(GlyceError::Contract(_))));
        let mut g2 = Graph::new();
        let l = g2.input(&[], vec![1.0]).unwrap();
        g2.backward(l).unwrap();
        assert!(g2.backward(l).is_err());
    }

    #[test]
    fn param_bound_once_accumulates_both_uses() {
        let mut ps = ParamSet::new();
        let id = ps
            .add("x", ParamGroup::Head, Tensor::from_values(&[], vec![3.0]).unwrap())
            .unwrap();
        let mut g = Graph::new();
        let x1 = g.param(&ps, id);
        let x2 = g.param(&ps, id);
        assert_eq!(x1, x2);
        let s = g.add(x1, x2).unwrap(); // 2x
        g.backward(s).unwrap();
        g.accumulate_param_grads(&mut ps);
        assert_eq!(ps.get(id).grad(), &[2.0]);
    }

    #[test]
    fn embedding_rejects_unknown_id() {
        let mut g = Graph::new();
        let t = leaf(&mut g, &[3, 2], vec![0.0; 6]);
        assert!(matches!(g.embedding(t, &[3]), Err(GlyceError::Index(_))));
    }

    #[test]
    fn softmax_rows_mask_zeroes_excluded_columns() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1, 3], vec![10.0, 0.0, 0.0]);
        let y = g.softmax_rows(x, Some(&[true, false, false])).unwrap();
        let v = g.value(y);
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 0.5).abs() < 1e-12);
        assert!((v[2] - 0.5).abs() < 1e-12);
        let all = [true, true, true];
        let x2 = leaf(&mut g, &[1, 3], vec![0.0; 3]);
        assert!(g.softmax_rows(x2, Some(&all)).is_err());
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2, 2], vec![1.0, 3.0, -2.0, 2.0]);
        let gamma = leaf(&mut g, &[2], vec![1.0, 1.0]);
        let beta = leaf(&mut g, &[2], vec![0.0, 0.0]);
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        let v = g.value(y);
        assert!((v[0] + v[1]).abs() < 1e-9);
        assert!((v[2] + v[3]).abs() < 1e-9);
        assert!(v[1] > 0.0 && v[3] > 0.0);
    }

    #[test]
    fn transpose_and_slices_roundtrip() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = g.transpose(x).unwrap();
        assert_eq!(g.shape(t), &[3, 2]);
        assert_eq!(g.value(t), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let r = g.slice_rows(x, 1, 1).unwrap();
        assert_eq!(g.value(r), &[4.0, 5.0, 6.0]);
        let c = g.slice_cols(x, 1, 2).unwrap();
        assert_eq!(g.value(c), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn mean_scalars_averages() {
        let mut g = Graph::new();
        let a = g.input(&[], vec![1.0]).unwrap();
        let b = g.input(&[], vec![3.0]).unwrap();
        let m = g.mean_scalars(&[a, b]).unwrap();
        assert_eq!(g.scalar(m).unwrap(), 2.0);
        g.backward(m).unwrap();
        assert_eq!(g.grad(a), &[0.5]);
    }

    #[test]
    fn global_avg_pool_means_planes() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2, 1, 2], vec![1.0, 3.0, 10.0, 20.0]);
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y), &[2.0, 15.0]);
    }
}
