//! Glyph encoders.
//!
//! The main variant is a tianzige-style stack: a 5x5 conv, relu, then a
//! 4x4 max pool that lands on a 2x2 grid (for d_font=12), followed by a
//! 1x1 group conv and a 2x2 group conv that collapses the grid into a
//! single embedding vector. Two baseline variants (a plain two-conv net
//! with global pooling, and a small residual stack) share the same
//! embedding signature so they can be swapped in ablations.
//!
//! Every encoder also carries a linear classifier over character ids for
//! the auxiliary image-classification objective.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{GlyceError, Result};
use crate::graph::{Graph, NodeId};
use crate::math::sqrt;
use crate::params::{ParamGroup, ParamId, ParamSet};
use crate::rng::GlyceRng;
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnnVariant {
    Tianzige,
    Vanilla,
    DeepResidual,
}

impl CnnVariant {
    pub fn name(&self) -> &'static str {
        match self {
            CnnVariant::Tianzige => "tianzige",
            CnnVariant::Vanilla => "vanilla",
            CnnVariant::DeepResidual => "deep-residual",
        }
    }

    pub fn parse(s: &str) -> Result<CnnVariant> {
        match s {
            "tianzige" => Ok(CnnVariant::Tianzige),
            "vanilla" => Ok(CnnVariant::Vanilla),
            "deep-residual" => Ok(CnnVariant::DeepResidual),
            other => Err(GlyceError::Config(format!(
                "unknown cnn variant '{other}' (want tianzige | vanilla | deep-residual)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphCnnConfig {
    pub n_scripts: usize,
    pub d_font: usize,
    /// Channels out of the first 5x5 conv.
    pub c_conv: usize,
    /// Channels after the 1x1 group conv.
    pub c_mid: usize,
    /// Final embedding width.
    pub d_glyph: usize,
    /// Requested group counts; scaled down to the largest divisor that
    /// fits the actual channel counts.
    pub groups_1: usize,
    pub groups_2: usize,
    pub variant: CnnVariant,
}

impl Default for GlyphCnnConfig {
    fn default() -> Self {
        GlyphCnnConfig {
            n_scripts: 2,
            d_font: 12,
            c_conv: 64,
            c_mid: 16,
            d_glyph: 64,
            groups_1: 8,
            groups_2: 16,
            variant: CnnVariant::Tianzige,
        }
    }
}

/// Largest group count <= requested that divides both channel counts.
fn fit_groups(requested: usize, c_in: usize, c_out: usize) -> usize {
    let cap = requested.min(c_in).min(c_out);
    (1..=cap)
        .rev()
        .find(|g| c_in % g == 0 && c_out % g == 0)
        .unwrap_or(1)
}

impl GlyphCnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scripts == 0
            || self.c_conv == 0
            || self.c_mid == 0
            || self.d_glyph == 0
            || self.groups_1 == 0
            || self.groups_2 == 0
        {
            return Err(GlyceError::Config(String::from(
                "cnn: all channel and group counts must be positive",
            )));
        }
        match self.variant {
            CnnVariant::Tianzige | CnnVariant::DeepResidual => {
                if self.d_font < 5 || (self.d_font - 4) % 4 != 0 {
                    return Err(GlyceError::Config(format!(
                        "cnn: d_font {} leaves a post-conv grid of {} which the 4x4 pool cannot tile",
                        self.d_font,
                        self.d_font.saturating_sub(4)
                    )));
                }
            }
            CnnVariant::Vanilla => {
                if self.d_font < 7 {
                    return Err(GlyceError::Config(format!(
                        "cnn: vanilla variant needs d_font >= 7, got {}",
                        self.d_font
                    )));
                }
            }
        }
        Ok(())
    }

    /// Effective groups of the 1x1 conv (c_conv -> c_mid).
    pub fn effective_groups_1(&self) -> usize {
        fit_groups(self.groups_1, self.c_conv, self.c_mid)
    }

    /// Effective groups of the final 2x2 conv (c_mid -> d_glyph).
    pub fn effective_groups_2(&self) -> usize {
        fit_groups(self.groups_2, self.c_mid, self.d_glyph)
    }

    /// Side length of the grid after the 5x5 conv.
    pub fn post_conv_side(&self) -> usize {
        self.d_font - 4
    }

    /// Side length after the 4x4 pool (2 when d_font = 12).
    pub fn post_pool_side(&self) -> usize {
        self.post_conv_side() / 4
    }
}

/// Shapes observed while embedding, for structural assertions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedTrace {
    pub after_conv: Vec<usize>,
    pub after_pool: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GlyphCnn {
    pub config: GlyphCnnConfig,
    pub n_chars: usize,
    conv1_w: ParamId,
    conv1_b: ParamId,
    gconv1_w: Option<ParamId>,
    gconv1_b: Option<ParamId>,
    gconv2_w: Option<ParamId>,
    gconv2_b: Option<ParamId>,
    conv2_w: Option<ParamId>,
    conv2_b: Option<ParamId>,
    proj_w: Option<ParamId>,
    proj_b: Option<ParamId>,
    res: Vec<(ParamId, ParamId)>,
    cls_w: ParamId,
    cls_b: ParamId,
}

/// Fan-in scaled uniform tensor: bound = sqrt(6 / fan_in).
pub(crate) fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut GlyceRng) -> Tensor {
    let bound = sqrt(6.0 / fan_in as f64);
    let n = numel(shape);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(rng.uniform(-bound, bound));
    }
    Tensor::from_values(shape, values).expect("uniform_init: shape/len always agree")
}

fn add_conv(
    ps: &mut ParamSet,
    name: &str,
    c_out: usize,
    c_in_per_group: usize,
    k: usize,
    rng: &mut GlyceRng,
) -> Result<(ParamId, ParamId)> {
    let fan_in = c_in_per_group * k * k;
    let w = ps.add(
        &format!("{name}.w"),
        ParamGroup::Glyph,
        uniform_init(&[c_out, c_in_per_group, k, k], fan_in, rng),
    )?;
    let b = ps.add(&format!("{name}.b"), ParamGroup::Glyph, Tensor::zeros(&[c_out]))?;
    Ok((w, b))
}

impl GlyphCnn {
    /// Registers all parameters for the configured variant plus the
    /// auxiliary character classifier. Initialization is deterministic
    /// given the rng state.
    pub fn register(
        ps: &mut ParamSet,
        config: GlyphCnnConfig,
        n_chars: usize,
        rng: &mut GlyceRng,
    ) -> Result<GlyphCnn> {
        config.validate()?;
        if n_chars == 0 {
            return Err(GlyceError::Config(String::from("cnn: n_chars must be positive")));
        }
        let (conv1_w, conv1_b) = add_conv(ps, "cnn.conv1", config.c_conv, config.n_scripts, 5, rng)?;
        let mut cnn = GlyphCnn {
            config: config.clone(),
            n_chars,
            conv1_w,
            conv1_b,
            gconv1_w: None,
            gconv1_b: None,
            gconv2_w: None,
            gconv2_b: None,
            conv2_w: None,
            conv2_b: None,
            proj_w: None,
            proj_b: None,
            res: Vec::new(),
            cls_w: ParamId(usize::MAX),
            cls_b: ParamId(usize::MAX),
        };
        match config.variant {
            CnnVariant::Tianzige => {
                let g1 = config.effective_groups_1();
                let (w, b) = add_conv(ps, "cnn.gconv1", config.c_mid, config.c_conv / g1, 1, rng)?;
                cnn.gconv1_w = Some(w);
                cnn.gconv1_b = Some(b);
                let g2 = config.effective_groups_2();
                let side = config.post_pool_side();
                let (w, b) = add_conv(ps, "cnn.gconv2", config.d_glyph, config.c_mid / g2, side, rng)?;
                cnn.gconv2_w = Some(w);
                cnn.gconv2_b = Some(b);
            }
            CnnVariant::Vanilla => {
                let (w, b) = add_conv(ps, "cnn.conv2", config.d_glyph, config.c_conv, 3, rng)?;
                cnn.conv2_w = Some(w);
                cnn.conv2_b = Some(b);
            }
            CnnVariant::DeepResidual => {
                let (w, b) = add_conv(ps, "cnn.proj", config.c_mid, config.c_conv, 1, rng)?;
                cnn.proj_w = Some(w);
                cnn.proj_b = Some(b);
                for i in 0..2 {
                    let pair =
                        add_conv(ps, &format!("cnn.res{i}"), config.c_mid, config.c_mid, 1, rng)?;
                    cnn.res.push(pair);
                }
                let g2 = config.effective_groups_2();
                let side = config.post_pool_side();
                let (w, b) = add_conv(ps, "cnn.gconv2", config.d_glyph, config.c_mid / g2, side, rng)?;
                cnn.gconv2_w = Some(w);
                cnn.gconv2_b = Some(b);
            }
        }
        cnn.cls_w = ps.add(
            "cnn.cls.w",
            ParamGroup::Glyph,
            uniform_init(&[n_chars, config.d_glyph], config.d_glyph, rng),
        )?;
        cnn.cls_b = ps.add("cnn.cls.b", ParamGroup::Glyph, Tensor::zeros(&[n_chars]))?;
        Ok(cnn)
    }

    fn conv_block(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        x: NodeId,
        w: ParamId,
        b: ParamId,
        groups: usize,
        relu: bool,
    ) -> Result<NodeId> {
        let wn = g.param(ps, w);
        let bn = g.param(ps, b);
        let c = g.conv2d(x, wn, 1, groups)?;
        let cb = g.channel_bias(c, bn)?;
        Ok(if relu { g.relu(cb) } else { cb })
    }

    /// Embeds one glyph node `[n_scripts, d_font, d_font]` into
    /// `[d_glyph]`, recording intermediate shapes.
    pub fn embed_node_traced(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        x: NodeId,
    ) -> Result<(NodeId, EmbedTrace)> {
        let want = [self.config.n_scripts, self.config.d_font, self.config.d_font];
        if g.shape(x) != want {
            return Err(GlyceError::Shape(format!(
                "cnn: glyph shape {:?}, expected {:?}",
                g.shape(x),
                want
            )));
        }
        let stem = self.conv_block(g, ps, x, self.conv1_w, self.conv1_b, 1, true)?;
        let after_conv = g.shape(stem).to_vec();
        let (out, after_pool) = match self.config.variant {
            CnnVariant::Tianzige => {
                let pooled = g.maxpool2d(stem, 4)?;
                let after_pool = g.shape(pooled).to_vec();
                let g1 = self.conv_block(
                    g,
                    ps,
                    pooled,
                    self.gconv1_w.unwrap(),
                    self.gconv1_b.unwrap(),
                    self.config.effective_groups_1(),
                    true,
                )?;
                let g2 = self.conv_block(
                    g,
                    ps,
                    g1,
                    self.gconv2_w.unwrap(),
                    self.gconv2_b.unwrap(),
                    self.config.effective_groups_2(),
                    false,
                )?;
                (g.reshape(g2, &[self.config.d_glyph])?, after_pool)
            }
            CnnVariant::Vanilla => {
                let c2 = self.conv_block(
                    g,
                    ps,
                    stem,
                    self.conv2_w.unwrap(),
                    self.conv2_b.unwrap(),
                    1,
                    true,
                )?;
                let after = g.shape(c2).to_vec();
                (g.global_avg_pool(c2)?, after)
            }
            CnnVariant::DeepResidual => {
                let pooled = g.maxpool2d(stem, 4)?;
                let after_pool = g.shape(pooled).to_vec();
                let mut h = self.conv_block(
                    g,
                    ps,
                    pooled,
                    self.proj_w.unwrap(),
                    self.proj_b.unwrap(),
                    1,
                    true,
                )?;
                for &(w, b) in &self.res {
                    let inner = self.conv_block(g, ps, h, w, b, 1, false)?;
                    let sum = g.add(h, inner)?;
                    h = g.relu(sum);
                }
                let g2 = self.conv_block(
                    g,
                    ps,
                    h,
                    self.gconv2_w.unwrap(),
                    self.gconv2_b.unwrap(),
                    self.config.effective_groups_2(),
                    false,
                )?;
                (g.reshape(g2, &[self.config.d_glyph])?, after_pool)
            }
        };
        Ok((out, EmbedTrace { after_conv, after_pool }))
    }

    pub fn embed_node(&self, g: &mut Graph, ps: &ParamSet, x: NodeId) -> Result<NodeId> {
        Ok(self.embed_node_traced(g, ps, x)?.0)
    }

    /// Embeds one glyph tensor (convenience over `embed_node`).
    pub fn embed(&self, g: &mut Graph, ps: &ParamSet, glyph: &Tensor) -> Result<NodeId> {
        let x = g.input(glyph.shape(), glyph.values().to_vec())?;
        self.embed_node(g, ps, x)
    }

    /// Embeds a batch; row b is bit-identical to `embed` of glyph b.
    pub fn embed_batch(&self, g: &mut Graph, ps: &ParamSet, glyphs: &[Tensor]) -> Result<NodeId> {
        if glyphs.is_empty() {
            return Err(GlyceError::Contract(String::from("cnn: empty batch")));
        }
        let mut rows = Vec::with_capacity(glyphs.len());
        for glyph in glyphs {
            rows.push(self.embed(g, ps, glyph)?);
        }
        g.stack_rows(&rows)
    }

    /// Logits over character ids for the auxiliary objective.
    pub fn class_logits(&self, g: &mut Graph, ps: &ParamSet, h: NodeId) -> Result<NodeId> {
        let w = g.param(ps, self.cls_w);
        let b = g.param(ps, self.cls_b);
        g.dense(h, w, b)
    }

    pub fn classifier_ids(&self) -> (ParamId, ParamId) {
        (self.cls_w, self.cls_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::GlyphAtlas;

    fn small_cfg(variant: CnnVariant) -> GlyphCnnConfig {
        GlyphCnnConfig {
            n_scripts: 2,
            d_font: 12,
            c_conv: 8,
            c_mid: 4,
            d_glyph: 8,
            groups_1: 2,
            groups_2: 2,
            variant,
        }
    }

    fn build(variant: CnnVariant) -> (ParamSet, GlyphCnn) {
        let mut ps = ParamSet::new();
        let mut rng = GlyceRng::seed_from(5, 0);
        let cnn = GlyphCnn::register(&mut ps, small_cfg(variant), 10, &mut rng).unwrap();
        (ps, cnn)
    }

    #[test]
    fn registration_is_deterministic() {
        let (a, _) = build(CnnVariant::Tianzige);
        let (b, _) = build(CnnVariant::Tianzige);
        for ((_, ea), (_, eb)) in a.iter().zip(b.iter()) {
            assert_eq!(ea.name, eb.name);
            assert_eq!(ea.tensor, eb.tensor);
        }
    }

    #[test]
    fn conv1_kernel_shape_follows_config() {
        let (ps, _) = build(CnnVariant::Tianzige);
        let id = ps.id_by_name("cnn.conv1.w").unwrap();
        assert_eq!(ps.get(id).shape(), &[8, 2, 5, 5]);
    }

    #[test]
    fn conv1_init_std_close_to_uniform_theory() {
        let mut ps = ParamSet::new();
        let mut rng = GlyceRng::seed_from(9, 0);
        let cfg = GlyphCnnConfig { c_conv: 64, ..small_cfg(CnnVariant::Tianzige) };
        GlyphCnn::register(&mut ps, cfg, 10, &mut rng).unwrap();
        let w = ps.get(ps.id_by_name("cnn.conv1.w").unwrap());
        let n = w.values().len() as f64;
        let mean: f64 = w.values().iter().sum::<f64>() / n;
        let var: f64 = w.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let bound = sqrt(6.0 / (2.0 * 25.0));
        let theory = bound / sqrt(3.0);
        let ratio = sqrt(var) / theory;
        assert!((0.8..=1.2).contains(&ratio), "std ratio {ratio}");
    }

    #[test]
    fn shape_chain_hits_the_2x2_grid() {
        for scripts in [1usize, 2, 8] {
            let mut ps = ParamSet::new();
            let mut rng = GlyceRng::seed_from(3, 0);
            let cfg = GlyphCnnConfig { n_scripts: scripts, ..small_cfg(CnnVariant::Tianzige) };
            let cnn = GlyphCnn::register(&mut ps, cfg, 10, &mut rng).unwrap();
            let mut g = Graph::new();
            let glyph = Tensor::zeros(&[scripts, 12, 12]);
            let x = g.input(glyph.shape(), glyph.values().to_vec()).unwrap();
            let (out, trace) = cnn.embed_node_traced(&mut g, &ps, x).unwrap();
            assert_eq!(trace.after_conv, vec![8, 8, 8]);
            assert_eq!(trace.after_pool, vec![8, 2, 2]);
            assert_eq!(g.shape(out), &[8]);
        }
    }

    #[test]
    fn zero_glyph_embeds_to_zero_for_every_variant() {
        for variant in [CnnVariant::Tianzige, CnnVariant::Vanilla, CnnVariant::DeepResidual] {
            let (ps, cnn) = build(variant);
            let mut g = Graph::new();
            let h = cnn.embed(&mut g, &ps, &Tensor::zeros(&[2, 12, 12])).unwrap();
            for &v in g.value(h) {
                assert_eq!(v, 0.0, "{} leaks bias into zero input", variant.name());
            }
        }
    }

    #[test]
    fn variants_produce_same_embedding_width() {
        for variant in [CnnVariant::Tianzige, CnnVariant::Vanilla, CnnVariant::DeepResidual] {
            let (ps, cnn) = build(variant);
            let mut g = Graph::new();
            let atlas = GlyphAtlas::generate(10, 2, 12, 4).unwrap();
            let h = cnn.embed(&mut g, &ps, &atlas.lookup(3).unwrap()).unwrap();
            assert_eq!(g.shape(h), &[8], "{}", variant.name());
        }
    }

    #[test]
    fn batch_rows_match_single_calls_exactly() {
        let (ps, cnn) = build(CnnVariant::Tianzige);
        let atlas = GlyphAtlas::generate(10, 2, 12, 4).unwrap();
        let glyphs: Vec<Tensor> = (0..4).map(|i| atlas.lookup(i).unwrap()).collect();
        let mut g = Graph::new();
        let batch = cnn.embed_batch(&mut g, &ps, &glyphs).unwrap();
        assert_eq!(g.shape(batch), &[4, 8]);
        for (i, glyph) in glyphs.iter().enumerate() {
            let mut g1 = Graph::new();
            let h = cnn.embed(&mut g1, &ps, glyph).unwrap();
            let row = &g.value(batch)[i * 8..(i + 1) * 8];
            assert_eq!(row, g1.value(h), "row {i}");
        }
    }

    #[test]
    fn groups_scale_down_to_fit_channels() {
        let cfg = GlyphCnnConfig {
            c_conv: 6,
            c_mid: 4,
            d_glyph: 10,
            groups_1: 8,
            groups_2: 16,
            ..small_cfg(CnnVariant::Tianzige)
        };
        assert_eq!(cfg.effective_groups_1(), 2);
        assert_eq!(cfg.effective_groups_2(), 2);
        assert_eq!(fit_groups(7, 64, 16), 4);
        assert_eq!(fit_groups(8, 64, 16), 8);
        assert_eq!(fit_groups(3, 5, 7), 1);
    }

    #[test]
    fn bad_d_font_is_rejected() {
        let cfg = GlyphCnnConfig { d_font: 11, ..small_cfg(CnnVariant::Tianzige) };
        assert!(cfg.validate().is_err());
        let cfg = GlyphCnnConfig { d_font: 16, ..small_cfg(CnnVariant::Tianzige) };
        assert!(cfg.validate().is_ok());
        let cfg = GlyphCnnConfig { d_font: 6, ..small_cfg(CnnVariant::Vanilla) };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn wrong_glyph_shape_is_rejected() {
        let (ps, cnn) = build(CnnVariant::Tianzige);
        let mut g = Graph::new();
        let err = cnn.embed(&mut g, &ps, &Tensor::zeros(&[3, 12, 12]));
        assert!(matches!(err, Err(GlyceError::Shape(_))));
    }

    #[test]
    fn grouped_conv_matches_block_diagonal_full_conv() {
        let mut rng = GlyceRng::seed_from(77, 0);
        for trial in 0..6 {
            let groups = [1usize, 2, 4][trial % 3];
            let cpg_in = 1 + rng.below(3);
            let cpg_out = 1 + rng.below(3);
            let c_in = groups * cpg_in;
            let c_out = groups * cpg_out;
            let k = 1 + rng.below(2);
            let h = k + 2 + rng.below(3);
            let x: Vec<f64> = (0..c_in * h * h).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let kw: Vec<f64> =
                (0..c_out * cpg_in * k * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let mut full = vec![0.0; c_out * c_in * k * k];
            for o in 0..c_out {
                let grp = o / cpg_out;
                for i in 0..cpg_in {
                    let src = (o * cpg_in + i) * k * k;
                    let dst = (o * c_in + grp * cpg_in + i) * k * k;
                    full[dst..dst + k * k].copy_from_slice(&kw[src..src + k * k]);
                }
            }
            let mut g = Graph::new();
            let xin = g.input(&[c_in, h, h], x.clone()).unwrap();
            let kg = g.input(&[c_out, cpg_in, k, k], kw).unwrap();
            let kf = g.input(&[c_out, c_in, k, k], full).unwrap();
            let yg = g.conv2d(xin, kg, 1, groups).unwrap();
            let yf = g.conv2d(xin, kf, 1, 1).unwrap();
            let max_diff = g
                .value(yg)
                .iter()
                .zip(g.value(yf))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff < 1e-10, "trial {trial}: diff {max_diff}");
        }
    }

    #[test]
    fn embedding_gradients_match_finite_differences() {
        use crate::gradcheck::grad_check;
        for variant in [CnnVariant::Tianzige, CnnVariant::Vanilla, CnnVariant::DeepResidual] {
            let mut ps = ParamSet::new();
            let mut rng = GlyceRng::seed_from(13, 0);
            let cfg = GlyphCnnConfig {
                n_scripts: 1,
                c_conv: 4,
                c_mid: 4,
                d_glyph: 4,
                groups_1: 2,
                groups_2: 2,
                ..small_cfg(variant)
            };
            let cnn = GlyphCnn::register(&mut ps, cfg, 5, &mut rng).unwrap();
            let atlas = GlyphAtlas::generate(5, 1, 12, 21).unwrap();
            let glyph = atlas.lookup(2).unwrap();
            let outcome = grad_check(&mut ps, crate::gradcheck::DEFAULT_EPS, |g, ps| {
                let h = cnn.embed(g, ps, &glyph)?;
                let logits = cnn.class_logits(g, ps, h)?;
                g.softmax_xent(logits, 2)
            })
            .unwrap();
            assert!(
                outcome.max_rel_error < 1e-4,
                "{}: rel error {} at {:?}",
                variant.name(),
                outcome.max_rel_error,
                outcome.worst
            );
        }
    }
}
