//! Training loops: adaptive-moment updates, staged strategies with a
//! strict freeze contract, dev-metric early stopping, and resumable
//! checkpoints.
//!
//! A stage names which parameter groups it updates; everything else is
//! frozen, meaning those tensors are bit-identical across the stage (the
//! optimizer neither applies updates nor advances their moments). The
//! epoch counter is global across stages and drives the auxiliary-loss
//! decay.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::atlas::GlyphAtlas;
use crate::cnn::{GlyphCnn, GlyphCnnConfig};
use crate::error::{GlyceError, Result};
use crate::graph::Graph;
use crate::math::sqrt;
use crate::model::GlyceModel;
use crate::objective::{image_cls_loss, LambdaSchedule};
use crate::params::{ParamGroup, ParamSet};
use crate::rng::{GlyceRng, RngState};
use crate::synth::{CorpusItem, LabeledCorpus};
use crate::tensor::Tensor;

/// Stream id of the batch-shuffle generator, fixed so an external loop
/// can reproduce the trainer's exact batch order from the seed.
pub const TRAIN_SHUFFLE_STREAM: u64 = 12;
const IMAGE_CLS_STREAM: u64 = 13;

/// Per-parameter optimizer state. The beta powers are running products,
/// exact and O(1) per step.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot {
    pub t: u64,
    pub beta1_pow: f64,
    pub beta2_pow: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adaptive-moment optimizer with bias correction. Parameters whose
/// group a step marks inactive are skipped entirely: no update, no
/// moment decay, no step count.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    slots: Vec<AdamSlot>,
}

impl Adam {
    pub fn new(ps: &ParamSet, lr: f64) -> Result<Adam> {
        if lr <= 0.0 || !lr.is_finite() {
            return Err(GlyceError::Config(format!("learning rate must be positive, got {lr}")));
        }
        let slots = ps
            .iter()
            .map(|(_, e)| AdamSlot {
                t: 0,
                beta1_pow: 1.0,
                beta2_pow: 1.0,
                m: alloc::vec![0.0; e.tensor.numel()],
                v: alloc::vec![0.0; e.tensor.numel()],
            })
            .collect();
        Ok(Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, slots })
    }

    /// One update over every parameter whose group is active.
    pub fn step(&mut self, ps: &mut ParamSet, active: impl Fn(ParamGroup) -> bool) {
        for (i, slot) in self.slots.iter_mut().enumerate() {
            let id = crate::params::ParamId(i);
            if !active(ps.entry(id).group) {
                continue;
            }
            slot.t += 1;
            slot.beta1_pow *= self.beta1;
            slot.beta2_pow *= self.beta2;
            let m_corr = 1.0 - slot.beta1_pow;
            let v_corr = 1.0 - slot.beta2_pow;
            let (values, grad) = ps.get_mut(id).values_and_grad();
            for j in 0..values.len() {
                let g = grad[j];
                slot.m[j] = self.beta1 * slot.m[j] + (1.0 - self.beta1) * g;
                slot.v[j] = self.beta2 * slot.v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = slot.m[j] / m_corr;
                let v_hat = slot.v[j] / v_corr;
                values[j] -= self.lr * m_hat / (sqrt(v_hat) + self.eps);
            }
        }
    }

    pub fn slots(&self) -> &[AdamSlot] {
        &self.slots
    }

    fn restore_slots(&mut self, slots: Vec<AdamSlot>) {
        self.slots = slots;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    StagedJoint,
    GlyphJoint,
    Joint,
    ContextOnly,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::StagedJoint => "staged-joint",
            Strategy::GlyphJoint => "glyph-joint",
            Strategy::Joint => "joint",
            Strategy::ContextOnly => "context-only",
        }
    }

    pub fn parse(s: &str) -> Result<Strategy> {
        match s {
            "staged-joint" => Ok(Strategy::StagedJoint),
            "glyph-joint" => Ok(Strategy::GlyphJoint),
            "joint" => Ok(Strategy::Joint),
            "context-only" => Ok(Strategy::ContextOnly),
            other => Err(GlyceError::Config(format!(
                "unknown strategy '{other}' (want staged-joint | glyph-joint | joint | context-only)"
            ))),
        }
    }

    /// Stage list; the three budget slots are (context+head, glyph,
    /// joint). Single-stage strategies run for the summed budget so every
    /// strategy sees the same total epochs. Zero-epoch stages drop out.
    pub fn stage_plan(&self, stage_epochs: [usize; 3]) -> Vec<Stage> {
        let total: usize = stage_epochs.iter().sum();
        let all = match self {
            Strategy::StagedJoint => alloc::vec![
                Stage::new("context+head", stage_epochs[0], true, false, true),
                Stage::new("glyph", stage_epochs[1], false, true, false),
                Stage::new("joint", stage_epochs[2], true, true, true),
            ],
            Strategy::GlyphJoint => alloc::vec![
                Stage::new("glyph", stage_epochs[1], false, true, false),
                Stage::new("joint", stage_epochs[2], true, true, true),
            ],
            Strategy::Joint => alloc::vec![Stage::new("joint", total, true, true, true)],
            Strategy::ContextOnly => {
                alloc::vec![Stage::new("context+head", total, true, false, true)]
            }
        };
        all.into_iter().filter(|s| s.epochs > 0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub name: &'static str,
    pub epochs: usize,
    pub context: bool,
    pub glyph: bool,
    pub head: bool,
}

impl Stage {
    fn new(name: &'static str, epochs: usize, context: bool, glyph: bool, head: bool) -> Stage {
        Stage { name, epochs, context, glyph, head }
    }

    pub fn updates(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Context => self.context,
            ParamGroup::Glyph => self.glyph,
            ParamGroup::Head => self.head,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Epoch budgets for the (context+head, glyph, joint) slots.
    pub stage_epochs: [usize; 3],
    pub lr: f64,
    pub batch_size: usize,
    pub schedule: LambdaSchedule,
    pub seed: u64,
    /// Evaluate dev every this many epochs within a stage.
    pub dev_every: usize,
    /// Consecutive dev evaluations without improvement before a stage
    /// ends early.
    pub patience: usize,
    /// Stop the whole run once the dev metric reaches this value.
    pub stop_at_dev: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: Strategy::StagedJoint,
            stage_epochs: [20, 20, 60],
            lr: 1e-3,
            batch_size: 16,
            schedule: LambdaSchedule::default(),
            seed: 0,
            dev_every: 1,
            patience: 10,
            stop_at_dev: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(GlyceError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(GlyceError::Config(String::from("batch size must be at least 1")));
        }
        if self.dev_every == 0 || self.patience == 0 {
            return Err(GlyceError::Config(String::from(
                "dev cadence and patience must be at least 1",
            )));
        }
        if self.stage_epochs.iter().sum::<usize>() == 0 {
            return Err(GlyceError::Config(String::from("all stage budgets are zero")));
        }
        Ok(())
    }
}

/// One epoch of history: mean batch losses, the exact decay weight, and
/// the dev metric when this epoch evaluated one.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: usize,
    pub stage_name: String,
    pub task_loss: f64,
    pub cls_loss: f64,
    pub lambda: f64,
    pub total_loss: f64,
    pub dev_metric: Option<f64>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Best-dev snapshot kept for model selection.
#[derive(Debug, Clone, PartialEq)]
pub struct BestSnapshot {
    pub metric: f64,
    pub epoch: usize,
    pub params: Vec<(String, Tensor)>,
}

/// Complete trainer state; two checkpoints are equal iff resuming them
/// continues identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub epoch: usize,
    pub stage: usize,
    pub stage_epoch: usize,
    pub no_improve: usize,
    pub done: bool,
    pub params: Vec<(String, Tensor)>,
    pub adam: Vec<(String, AdamSlot)>,
    pub rng: RngState,
    pub best: Option<BestSnapshot>,
    pub history: Vec<EpochRecord>,
}

fn named_params(ps: &ParamSet) -> Vec<(String, Tensor)> {
    ps.iter()
        .map(|(_, e)| {
            let mut t = e.tensor.clone();
            t.zero_grad();
            (e.name.clone(), t)
        })
        .collect()
}

/// Overwrites the values of `ps` with the named tensors. Every name must
/// belong to the set, shapes must agree, and every parameter must be
/// covered; mismatches name the offending tensor.
pub fn restore_named_params(ps: &mut ParamSet, params: &[(String, Tensor)]) -> Result<()> {
    if params.len() != ps.len() {
        return Err(GlyceError::Data(format!(
            "checkpoint holds {} tensors, the model has {}",
            params.len(),
            ps.len()
        )));
    }
    for (name, tensor) in params {
        let id = ps.id_by_name(name).ok_or_else(|| {
            GlyceError::Data(format!("checkpoint tensor {name:?} is unknown to this model"))
        })?;
        let target = ps.get_mut(id);
        if target.shape() != tensor.shape() {
            return Err(GlyceError::Data(format!(
                "checkpoint tensor {name:?} has shape {:?}, the model wants {:?}",
                tensor.shape(),
                target.shape()
            )));
        }
        *target = tensor.clone();
    }
    Ok(())
}

pub struct Trainer<'a> {
    model: &'a GlyceModel,
    corpus: &'a LabeledCorpus,
    pub config: TrainConfig,
    plan: Vec<Stage>,
    ps: ParamSet,
    adam: Adam,
    rng: GlyceRng,
    epoch: usize,
    stage: usize,
    stage_epoch: usize,
    no_improve: usize,
    best: Option<BestSnapshot>,
    history: Vec<EpochRecord>,
    done: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a GlyceModel,
        corpus: &'a LabeledCorpus,
        ps: ParamSet,
        config: TrainConfig,
    ) -> Result<Trainer<'a>> {
        config.validate()?;
        model.validate_corpus(corpus)?;
        let context_only = config.strategy == Strategy::ContextOnly;
        if context_only && model.config.use_glyph {
            return Err(GlyceError::Config(String::from(
                "context-only strategy requires a model built without the glyph branch",
            )));
        }
        if !context_only && !model.config.use_glyph {
            return Err(GlyceError::Config(format!(
                "strategy {} updates the glyph branch, but the model has none",
                config.strategy.name()
            )));
        }
        let plan = config.strategy.stage_plan(config.stage_epochs);
        if plan.is_empty() {
            return Err(GlyceError::Config(String::from(
                "stage plan is empty after dropping zero-epoch stages",
            )));
        }
        if corpus.train.is_empty() || corpus.dev.is_empty() {
            return Err(GlyceError::Config(String::from(
                "training needs non-empty train and dev splits",
            )));
        }
        let adam = Adam::new(&ps, config.lr)?;
        let rng = GlyceRng::seed_from(config.seed, TRAIN_SHUFFLE_STREAM);
        Ok(Trainer {
            model,
            corpus,
            config,
            plan,
            ps,
            adam,
            rng,
            epoch: 0,
            stage: 0,
            stage_epoch: 0,
            no_improve: 0,
            best: None,
            history: Vec::new(),
            done: false,
        })
    }

    /// Rebuilds a trainer mid-run. `ps` supplies the architecture to
    /// check tensor names and shapes against (its values are replaced).
    pub fn from_checkpoint(
        model: &'a GlyceModel,
        corpus: &'a LabeledCorpus,
        ps: ParamSet,
        config: TrainConfig,
        ckpt: &Checkpoint,
    ) -> Result<Trainer<'a>> {
        let mut tr = Trainer::new(model, corpus, ps, config)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(GlyceError::Data(format!(
                "checkpoint format version {} is not {CHECKPOINT_VERSION}",
                ckpt.version
            )));
        }
        restore_named_params(&mut tr.ps, &ckpt.params)?;
        if ckpt.adam.len() != tr.ps.len() {
            return Err(GlyceError::Data(format!(
                "checkpoint holds {} optimizer slots, the model has {} tensors",
                ckpt.adam.len(),
                tr.ps.len()
            )));
        }
        let mut slots = alloc::vec![None; tr.ps.len()];
        for (name, slot) in &ckpt.adam {
            let id = tr.ps.id_by_name(name).ok_or_else(|| {
                GlyceError::Data(format!("optimizer slot {name:?} is unknown to this model"))
            })?;
            let want = tr.ps.get(id).numel();
            if slot.m.len() != want || slot.v.len() != want {
                return Err(GlyceError::Data(format!(
                    "optimizer slot {name:?} sized {} does not fit tensor of {want}",
                    slot.m.len()
                )));
            }
            slots[id.0] = Some(slot.clone());
        }
        tr.adam.restore_slots(slots.into_iter().map(|s| s.expect("every id seen")).collect());
        if ckpt.stage > tr.plan.len() || (!ckpt.done && ckpt.stage == tr.plan.len()) {
            return Err(GlyceError::Data(format!(
                "checkpoint stage {} is outside the {}-stage plan",
                ckpt.stage,
                tr.plan.len()
            )));
        }
        tr.rng = GlyceRng::from_state(&ckpt.rng);
        tr.epoch = ckpt.epoch;
        tr.stage = ckpt.stage;
        tr.stage_epoch = ckpt.stage_epoch;
        tr.no_improve = ckpt.no_improve;
        tr.done = ckpt.done;
        tr.best = ckpt.best.clone();
        tr.history = ckpt.history.clone();
        Ok(tr)
    }

    pub fn finished(&self) -> bool {
        self.done
    }

    pub fn params(&self) -> &ParamSet {
        &self.ps
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn best(&self) -> Option<&BestSnapshot> {
        self.best.as_ref()
    }

    pub fn plan(&self) -> &[Stage] {
        &self.plan
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            epoch: self.epoch,
            stage: self.stage,
            stage_epoch: self.stage_epoch,
            no_improve: self.no_improve,
            done: self.done,
            params: named_params(&self.ps),
            adam: self
                .ps
                .iter()
                .map(|(id, e)| (e.name.clone(), self.adam.slots()[id.0].clone()))
                .collect(),
            rng: self.rng.state(),
            best: self.best.clone(),
            history: self.history.clone(),
        }
    }

    /// Copies the best-dev parameters back into the live set. Returns
    /// false when no dev evaluation has happened yet.
    pub fn install_best(&mut self) -> bool {
        let Some(best) = &self.best else {
            return false;
        };
        for (name, tensor) in &best.params {
            let id = self.ps.id_by_name(name).expect("snapshot matches model");
            *self.ps.get_mut(id) = tensor.clone();
        }
        true
    }

    /// Runs one epoch: shuffled batches, one optimizer step each, then a
    /// dev evaluation when the cadence says so. Advances the stage
    /// machinery and returns the epoch's record.
    pub fn step_epoch(&mut self) -> Result<&EpochRecord> {
        if self.done {
            return Err(GlyceError::Contract(String::from("training already finished")));
        }
        let stage = self.plan[self.stage];
        let mut order = self.corpus.train.clone();
        self.rng.shuffle(&mut order);
        let mut task_sum = 0.0;
        let mut cls_sum = 0.0;
        let mut total_sum = 0.0;
        let mut lambda = 0.0;
        let n_batches = order.chunks(self.config.batch_size).len();
        for chunk in order.chunks(self.config.batch_size) {
            let items: Vec<&CorpusItem> = chunk.iter().map(|&i| &self.corpus.items[i]).collect();
            self.ps.zero_grads();
            let fwd = self
                .model
                .batch_loss(&self.ps, &items, &self.config.schedule, self.epoch as u32)
                .map_err(|e| match e {
                    GlyceError::Numeric(msg) => GlyceError::Numeric(format!(
                        "training diverged at epoch {} (stage {}): {msg}",
                        self.epoch, stage.name
                    )),
                    other => other,
                })?;
            let mut g = fwd.graph;
            g.backward(fwd.loss)?;
            g.accumulate_param_grads(&mut self.ps);
            self.adam.step(&mut self.ps, |group| stage.updates(group));
            task_sum += fwd.parts.task_loss;
            cls_sum += fwd.parts.cls_loss;
            total_sum += fwd.parts.total;
            lambda = fwd.parts.lambda_t;
        }
        let mut record = EpochRecord {
            epoch: self.epoch,
            stage: self.stage,
            stage_name: stage.name.to_string(),
            task_loss: task_sum / n_batches as f64,
            cls_loss: cls_sum / n_batches as f64,
            lambda,
            total_loss: total_sum / n_batches as f64,
            dev_metric: None,
        };

        let mut stage_over = self.stage_epoch + 1 >= stage.epochs;
        if (self.stage_epoch + 1) % self.config.dev_every == 0 || stage_over {
            let metrics =
                self.model.evaluate(&self.ps, self.corpus, &self.corpus.dev, self.config.batch_size)?;
            let metric = metrics.primary().ok_or_else(|| {
                GlyceError::Contract(String::from("dev evaluation produced no metric"))
            })?;
            record.dev_metric = Some(metric);
            let improved = self.best.as_ref().map_or(true, |b| metric > b.metric);
            if improved {
                self.best = Some(BestSnapshot {
                    metric,
                    epoch: self.epoch,
                    params: named_params(&self.ps),
                });
                self.no_improve = 0;
            } else {
                self.no_improve += 1;
                if self.no_improve >= self.config.patience {
                    stage_over = true;
                }
            }
            if let Some(target) = self.config.stop_at_dev {
                if metric >= target {
                    self.done = true;
                }
            }
        }

        self.epoch += 1;
        self.stage_epoch += 1;
        if stage_over {
            self.stage += 1;
            self.stage_epoch = 0;
            self.no_improve = 0;
            if self.stage >= self.plan.len() {
                self.done = true;
            }
        }
        self.history.push(record);
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.done {
            self.step_epoch()?;
        }
        Ok(())
    }
}

/// Outcome of the standalone glyph-classifier loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageClsOutcome {
    pub epochs_run: usize,
    pub train_accuracy: f64,
    pub loss_history: Vec<f64>,
    pub accuracy_history: Vec<f64>,
}

/// Trains the glyph CNN plus its character classifier alone on the whole
/// atlas (a capacity check: the CNN must be able to memorize its own
/// glyphs). Stops early once `target_accuracy` is reached.
pub fn train_image_classifier(
    atlas: &GlyphAtlas,
    config: &GlyphCnnConfig,
    max_epochs: usize,
    lr: f64,
    seed: u64,
    target_accuracy: Option<f64>,
) -> Result<ImageClsOutcome> {
    if max_epochs == 0 {
        return Err(GlyceError::Config(String::from("need at least one epoch")));
    }
    let mut cfg = config.clone();
    cfg.n_scripts = atlas.n_scripts() as usize;
    cfg.d_font = atlas.d_font() as usize;
    let n_chars = atlas.n_chars();
    let mut ps = ParamSet::new();
    let mut rng = GlyceRng::seed_from(seed, IMAGE_CLS_STREAM);
    let cnn = GlyphCnn::register(&mut ps, cfg, n_chars as usize, &mut rng)?;
    let mut adam = Adam::new(&ps, lr)?;
    let batch = 32usize;
    let mut loss_history = Vec::new();
    let mut accuracy_history = Vec::new();
    let mut epochs_run = 0;
    for _ in 0..max_epochs {
        let mut order: Vec<u32> = (0..n_chars).collect();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(batch) {
            ps.zero_grads();
            let mut g = Graph::new();
            let (w_id, b_id) = cnn.classifier_ids();
            let w = g.param(&ps, w_id);
            let b = g.param(&ps, b_id);
            let mut losses = Vec::with_capacity(chunk.len());
            for &c in chunk {
                let h = cnn.embed(&mut g, &ps, &atlas.lookup(c)?)?;
                losses.push(image_cls_loss(&mut g, h, w, b, c as usize)?);
            }
            let loss = g.mean_scalars(&losses)?;
            let value = g.scalar(loss)?;
            if !value.is_finite() {
                return Err(GlyceError::Numeric(format!(
                    "glyph classifier diverged at epoch {epochs_run}"
                )));
            }
            g.backward(loss)?;
            g.accumulate_param_grads(&mut ps);
            adam.step(&mut ps, |_| true);
            loss_sum += value;
            n_batches += 1;
        }
        loss_history.push(loss_sum / n_batches as f64);
        let acc = image_classifier_accuracy(atlas, &cnn, &ps)?;
        accuracy_history.push(acc);
        epochs_run += 1;
        if target_accuracy.is_some_and(|t| acc >= t) {
            break;
        }
    }
    Ok(ImageClsOutcome {
        epochs_run,
        train_accuracy: *accuracy_history.last().expect("at least one epoch"),
        loss_history,
        accuracy_history,
    })
}

/// Fraction of atlas characters the classifier maps back to themselves.
pub fn image_classifier_accuracy(
    atlas: &GlyphAtlas,
    cnn: &GlyphCnn,
    ps: &ParamSet,
) -> Result<f64> {
    let n_chars = atlas.n_chars();
    let mut hits = 0usize;
    let ids: Vec<u32> = (0..n_chars).collect();
    for chunk in ids.chunks(32) {
        let mut g = Graph::new();
        let mut glyphs = Vec::with_capacity(chunk.len());
        for &c in chunk {
            glyphs.push(atlas.lookup(c)?);
        }
        let embeds = cnn.embed_batch(&mut g, ps, &glyphs)?;
        let (w_id, b_id) = cnn.classifier_ids();
        let w = g.param(ps, w_id);
        let b = g.param(ps, b_id);
        let scores = g.matmul(embeds, w, true)?;
        let scores = g.row_bias(scores, b)?;
        let t = g.tensor(scores);
        let width = n_chars as usize;
        for (row, &c) in chunk.iter().enumerate() {
            let vals = &t.values()[row * width..(row + 1) * width];
            let mut best = 0;
            for (i, &v) in vals.iter().enumerate() {
                if v > vals[best] {
                    best = i;
                }
            }
            if best == c as usize {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / n_chars as f64)
}
