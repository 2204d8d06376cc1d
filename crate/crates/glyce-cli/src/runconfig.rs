//! Flat key=value run configuration.
//!
//! One struct covers every knob the pipeline exposes: atlas and corpus
//! generation sizes, model dimensions, the auxiliary loss schedule, and
//! trainer settings. Resolution order is defaults, then a config file,
//! then `--set key=value` overrides; the seed additionally falls back to
//! the `GLYCE_SEED` environment variable when nothing else named one.
//! Unknown keys are rejected, and the fully resolved config is echoed
//! into every run directory so a run can be reproduced from its outputs.

use glyce_core::cnn::{CnnVariant, GlyphCnnConfig};
use glyce_core::encoder::{ContextEncoderConfig, TaskLayerKind};
use glyce_core::metrics::Scheme;
use glyce_core::model::{ModelConfig, TaskSpec};
use glyce_core::objective::LambdaSchedule;
use glyce_core::synth::{TaskKind, PAIR_FAMILIES, TAGGING_FAMILIES};
use glyce_core::train::{Strategy, TrainConfig};

use crate::error::{read_text, CliError, CliResult};

pub fn scheme_name(s: Scheme) -> String {
    match s {
        Scheme::Bmes => String::from("bmes"),
        Scheme::Bio { n_types } => format!("bio-{n_types}"),
    }
}

pub fn parse_scheme(s: &str) -> Result<Scheme, String> {
    if s == "bmes" {
        return Ok(Scheme::Bmes);
    }
    if let Some(n) = s.strip_prefix("bio-") {
        let n_types: usize = n
            .parse()
            .map_err(|_| format!("bad type count in scheme '{s}'"))?;
        if n_types == 0 {
            return Err(format!("scheme '{s}' needs at least one type"));
        }
        return Ok(Scheme::Bio { n_types });
    }
    Err(format!("unknown scheme '{s}' (want bmes | bio-N)"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Synthetic data sizes.
    pub chars: u32,
    pub scripts: u16,
    pub dfont: u16,
    pub sentences: usize,
    pub docs: usize,
    pub pairs: usize,
    pub classes: usize,
    // Task and model shape.
    pub task: TaskKind,
    pub scheme: Scheme,
    pub d_ctx: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub use_glyph: bool,
    pub task_layer: TaskLayerKind,
    pub c_conv: usize,
    pub c_mid: usize,
    pub d_glyph: usize,
    pub groups1: usize,
    pub groups2: usize,
    pub cnn: CnnVariant,
    // Auxiliary objective decay.
    pub lambda0: f64,
    pub lambda1: f64,
    // Trainer.
    pub strategy: Strategy,
    pub stage_a: usize,
    pub stage_b: usize,
    pub stage_c: usize,
    pub lr: f64,
    pub batch: usize,
    pub dev_every: usize,
    pub patience: usize,
    pub stop_at_dev: Option<f64>,
    pub eval_chunk: usize,
    // Provenance.
    pub seed: u64,
    pub atlas: Option<String>,
    pub corpus: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            chars: 100,
            scripts: 2,
            dfont: 12,
            sentences: 2000,
            docs: 1000,
            pairs: 1000,
            classes: 4,
            task: TaskKind::Tagging,
            scheme: Scheme::Bmes,
            d_ctx: 64,
            layers: 2,
            heads: 4,
            d_ff: 128,
            max_len: 64,
            use_glyph: true,
            task_layer: TaskLayerKind::Transformer,
            c_conv: 64,
            c_mid: 16,
            d_glyph: 64,
            groups1: 8,
            groups2: 16,
            cnn: CnnVariant::Tianzige,
            lambda0: 0.1,
            lambda1: 0.8,
            strategy: Strategy::StagedJoint,
            stage_a: 20,
            stage_b: 20,
            stage_c: 60,
            lr: 1e-3,
            batch: 16,
            dev_every: 1,
            patience: 10,
            stop_at_dev: None,
            eval_chunk: 8,
            seed: 0,
            atlas: None,
            corpus: None,
        }
    }
}

fn bad_value(key: &str, value: &str, want: &str) -> CliError {
    CliError::Usage(format!("config key '{key}': cannot parse '{value}' as {want}"))
}

fn parse_num<T: core::str::FromStr>(key: &str, value: &str, want: &str) -> CliResult<T> {
    value.trim().parse().map_err(|_| bad_value(key, value, want))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(key, value, "a bool (true | false)")),
    }
}

impl RunConfig {
    /// Applies one `key=value` assignment. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        match key {
            "chars" => self.chars = parse_num(key, v, "an unsigned integer")?,
            "scripts" => self.scripts = parse_num(key, v, "an unsigned integer")?,
            "dfont" => self.dfont = parse_num(key, v, "an unsigned integer")?,
            "sentences" => self.sentences = parse_num(key, v, "an unsigned integer")?,
            "docs" => self.docs = parse_num(key, v, "an unsigned integer")?,
            "pairs" => self.pairs = parse_num(key, v, "an unsigned integer")?,
            "classes" => self.classes = parse_num(key, v, "an unsigned integer")?,
            "task" => self.task = TaskKind::parse(v)?,
            "scheme" => self.scheme = parse_scheme(v).map_err(CliError::Usage)?,
            "d_ctx" => self.d_ctx = parse_num(key, v, "an unsigned integer")?,
            "layers" => self.layers = parse_num(key, v, "an unsigned integer")?,
            "heads" => self.heads = parse_num(key, v, "an unsigned integer")?,
            "d_ff" => self.d_ff = parse_num(key, v, "an unsigned integer")?,
            "max_len" => self.max_len = parse_num(key, v, "an unsigned integer")?,
            "use_glyph" => self.use_glyph = parse_bool(key, v)?,
            "task_layer" => self.task_layer = TaskLayerKind::parse(v)?,
            "c_conv" => self.c_conv = parse_num(key, v, "an unsigned integer")?,
            "c_mid" => self.c_mid = parse_num(key, v, "an unsigned integer")?,
            "d_glyph" => self.d_glyph = parse_num(key, v, "an unsigned integer")?,
            "groups1" => self.groups1 = parse_num(key, v, "an unsigned integer")?,
            "groups2" => self.groups2 = parse_num(key, v, "an unsigned integer")?,
            "cnn" => self.cnn = CnnVariant::parse(v)?,
            "lambda0" => self.lambda0 = parse_num(key, v, "a float")?,
            "lambda1" => self.lambda1 = parse_num(key, v, "a float")?,
            "strategy" => self.strategy = Strategy::parse(v)?,
            "stage_a" => self.stage_a = parse_num(key, v, "an unsigned integer")?,
            "stage_b" => self.stage_b = parse_num(key, v, "an unsigned integer")?,
            "stage_c" => self.stage_c = parse_num(key, v, "an unsigned integer")?,
            "lr" => self.lr = parse_num(key, v, "a float")?,
            "batch" => self.batch = parse_num(key, v, "an unsigned integer")?,
            "dev_every" => self.dev_every = parse_num(key, v, "an unsigned integer")?,
            "patience" => self.patience = parse_num(key, v, "an unsigned integer")?,
            "stop_at_dev" => {
                self.stop_at_dev = if v == "none" {
                    None
                } else {
                    Some(parse_num(key, v, "a float or 'none'")?)
                }
            }
            "eval_chunk" => self.eval_chunk = parse_num(key, v, "an unsigned integer")?,
            "seed" => self.seed = parse_num(key, v, "an unsigned integer")?,
            "atlas" => self.atlas = if v.is_empty() { None } else { Some(v.to_string()) },
            "corpus" => self.corpus = if v.is_empty() { None } else { Some(v.to_string()) },
            _ => return Err(CliError::Usage(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` comments and blank lines pass.
    /// Returns the config plus whether any line assigned the seed.
    pub fn apply_text(&mut self, text: &str) -> CliResult<bool> {
        let mut seed_set = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: '{line}' is not key=value", i + 1))
            })?;
            let key = key.trim();
            self.set(key, value)?;
            seed_set |= key == "seed";
        }
        Ok(seed_set)
    }

    /// Every key in a fixed order; `apply_text` of this text reproduces
    /// the config exactly.
    pub fn render(&self) -> String {
        let opt_f64 = |v: Option<f64>| v.map_or_else(|| String::from("none"), |x| format!("{x}"));
        let opt_str = |v: &Option<String>| v.clone().unwrap_or_default();
        format!(
            "# resolved run configuration\n\
             chars={}\nscripts={}\ndfont={}\nsentences={}\ndocs={}\npairs={}\nclasses={}\n\
             task={}\nscheme={}\nd_ctx={}\nlayers={}\nheads={}\nd_ff={}\nmax_len={}\n\
             use_glyph={}\ntask_layer={}\nc_conv={}\nc_mid={}\nd_glyph={}\ngroups1={}\ngroups2={}\ncnn={}\n\
             lambda0={}\nlambda1={}\n\
             strategy={}\nstage_a={}\nstage_b={}\nstage_c={}\nlr={}\nbatch={}\ndev_every={}\npatience={}\nstop_at_dev={}\neval_chunk={}\n\
             seed={}\natlas={}\ncorpus={}\n",
            self.chars,
            self.scripts,
            self.dfont,
            self.sentences,
            self.docs,
            self.pairs,
            self.classes,
            self.task.name(),
            scheme_name(self.scheme),
            self.d_ctx,
            self.layers,
            self.heads,
            self.d_ff,
            self.max_len,
            self.use_glyph,
            self.task_layer.name(),
            self.c_conv,
            self.c_mid,
            self.d_glyph,
            self.groups1,
            self.groups2,
            self.cnn.name(),
            self.lambda0,
            self.lambda1,
            self.strategy.name(),
            self.stage_a,
            self.stage_b,
            self.stage_c,
            self.lr,
            self.batch,
            self.dev_every,
            self.patience,
            opt_f64(self.stop_at_dev),
            self.eval_chunk,
            self.seed,
            opt_str(&self.atlas),
            opt_str(&self.corpus),
        )
    }

    pub fn task_spec(&self) -> TaskSpec {
        match self.task {
            TaskKind::Tagging => TaskSpec::Tagging { scheme: self.scheme },
            TaskKind::Classification => TaskSpec::Classification { n_classes: self.classes },
            TaskKind::Pair => TaskSpec::Pair,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            ctx: ContextEncoderConfig {
                vocab_chars: self.chars as usize,
                d_ctx: self.d_ctx,
                n_layers: self.layers,
                n_heads: self.heads,
                d_ff: self.d_ff,
                max_len: self.max_len,
            },
            cnn: GlyphCnnConfig {
                n_scripts: self.scripts as usize,
                d_font: self.dfont as usize,
                c_conv: self.c_conv,
                c_mid: self.c_mid,
                d_glyph: self.d_glyph,
                groups_1: self.groups1,
                groups_2: self.groups2,
                variant: self.cnn,
            },
            task_layer: self.task_layer,
            use_glyph: self.use_glyph,
            task: self.task_spec(),
        }
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        Ok(TrainConfig {
            strategy: self.strategy,
            stage_epochs: [self.stage_a, self.stage_b, self.stage_c],
            lr: self.lr,
            batch_size: self.batch,
            schedule: LambdaSchedule::new(self.lambda0, self.lambda1)?,
            seed: self.seed,
            dev_every: self.dev_every,
            patience: self.patience,
            stop_at_dev: self.stop_at_dev,
        })
    }

    /// Family count the current task's corpus is generated with.
    pub fn n_families(&self) -> usize {
        match self.task {
            TaskKind::Tagging => TAGGING_FAMILIES,
            TaskKind::Classification => self.classes,
            TaskKind::Pair => PAIR_FAMILIES,
        }
    }
}

/// The GLYCE_SEED environment fallback, if set.
pub fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var("GLYCE_SEED") {
        Err(_) => Ok(None),
        Ok(raw) => raw.trim().parse().map(Some).map_err(|_| {
            CliError::Usage(format!("GLYCE_SEED '{raw}' is not an unsigned integer"))
        }),
    }
}

/// Builds the effective config: defaults, then the optional file, then
/// `--set` overrides in order, then the seed flag. When no source named
/// a seed, `GLYCE_SEED` from the environment fills it in.
pub fn resolve_config(
    file: Option<&std::path::Path>,
    sets: &[String],
    seed_flag: Option<u64>,
) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seed_set = false;
    if let Some(path) = file {
        seed_set |= cfg.apply_text(&read_text(path)?)?;
    }
    for assignment in sets {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("--set '{assignment}' is not key=value"))
        })?;
        let key = key.trim();
        cfg.set(key, value)?;
        seed_set |= key == "seed";
    }
    if let Some(seed) = seed_flag {
        cfg.seed = seed;
    } else if !seed_set {
        if let Some(seed) = env_seed()? {
            cfg.seed = seed;
        }
    }
    Ok(cfg)
}
