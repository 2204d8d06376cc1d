//! The six subcommands. Each takes its parsed flags, does its file IO
//! through the format modules, and leaves computation to the core crate.

use std::path::{Path, PathBuf};

use clap::Args;
use glyce_core::atlas::GlyphAtlas;
use glyce_core::metrics::{ablation_report, RunSummary};
use glyce_core::model::GlyceModel;
use glyce_core::synth::{
    gen_classification_corpus, gen_pair_corpus, gen_tagging_corpus, LabeledCorpus, TaskKind,
};
use glyce_core::train::{restore_named_params, Strategy, Trainer};
use glyce_core::GlyceError;

use crate::atlas_file::{load_atlas, save_atlas};
use crate::checkpoint_file::{load_checkpoint, save_checkpoint};
use crate::corpus_file::{load_corpus, save_corpus};
use crate::embed_file::save_embeddings;
use crate::error::{CliError, CliResult};
use crate::records::{render_metrics, save_history, save_metrics, save_runs, MetricsRecord};
use crate::runconfig::{env_seed, resolve_config, scheme_name, RunConfig};

#[derive(Args, Debug)]
pub struct GenAtlasArgs {
    /// Number of characters.
    #[arg(long, default_value_t = 100)]
    pub chars: u32,
    /// Script renderings per character (input channels).
    #[arg(long, default_value_t = 2)]
    pub scripts: u16,
    /// Bitmap side length.
    #[arg(long, default_value_t = 12)]
    pub dfont: u16,
    /// Generation seed; falls back to GLYCE_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output .gatl path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenCorpusArgs {
    /// tagging | classification | pair
    #[arg(long)]
    pub task: String,
    /// Atlas the corpus draws characters from.
    #[arg(long)]
    pub atlas: PathBuf,
    /// Output corpus path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional key=value config file (sizes come from it).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override, repeatable: --set sentences=500
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Generation seed; falls back to GLYCE_SEED, then the config value.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub atlas: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Run directory; receives config.txt, history.jsonl,
    /// checkpoint.gckp, metrics.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shorthand for --set strategy=...
    #[arg(long)]
    pub strategy: Option<String>,
    /// Shorthand for --set lambda0=...
    #[arg(long)]
    pub lambda0: Option<f64>,
    /// Continue from an existing checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many epochs in this invocation (the checkpoint
    /// can be resumed later); default runs the plan to completion.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub atlas: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// train | dev | test
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also write the metrics record here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub atlas: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output embedding table path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// strategies | image-cls | output-layer | cnn
    #[arg(long)]
    pub grid: String,
    #[arg(long)]
    pub atlas: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Report directory; receives report.txt, runs.jsonl, config.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Checkpoint-vs-model disagreements come out of core as data errors;
/// at the command line they are mismatches of two valid inputs.
fn checkpoint_mismatch(e: GlyceError) -> CliError {
    match e {
        GlyceError::Data(m) => CliError::Mismatch(format!("checkpoint does not fit this run: {m}")),
        other => other.into(),
    }
}

fn make_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Loads a corpus and checks it against the config and atlas: task kind,
/// label scheme, and character coverage must agree.
fn load_corpus_checked(
    cfg: &RunConfig,
    atlas: &GlyphAtlas,
    path: &Path,
) -> CliResult<LabeledCorpus> {
    let (corpus, file_scheme) = load_corpus(path)?;
    if corpus.task != cfg.task {
        return Err(CliError::Mismatch(format!(
            "corpus {} holds a {} task, the config wants {}",
            path.display(),
            corpus.task.name(),
            cfg.task.name()
        )));
    }
    if let Some(s) = file_scheme {
        if s != cfg.scheme {
            return Err(CliError::Mismatch(format!(
                "corpus labels use scheme {}, the config says {}",
                scheme_name(s),
                scheme_name(cfg.scheme)
            )));
        }
    }
    if let Some(&max) = corpus.used_chars().iter().next_back() {
        if max >= atlas.n_chars() {
            return Err(CliError::Mismatch(format!(
                "corpus uses char id {max} but the atlas holds {} characters",
                atlas.n_chars()
            )));
        }
    }
    Ok(corpus)
}

fn split_indices<'a>(corpus: &'a LabeledCorpus, name: &str) -> CliResult<&'a [usize]> {
    match name {
        "train" => Ok(&corpus.train),
        "dev" => Ok(&corpus.dev),
        "test" => Ok(&corpus.test),
        other => Err(CliError::Usage(format!(
            "unknown split '{other}' (want train | dev | test)"
        ))),
    }
}

pub fn cmd_gen_atlas(a: &GenAtlasArgs) -> CliResult<()> {
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let atlas = GlyphAtlas::generate(a.chars, a.scripts, a.dfont, seed)?;
    save_atlas(&atlas, &a.out)?;
    println!(
        "wrote {}: {} chars x {} scripts x {}x{} px, seed {}",
        a.out.display(),
        atlas.n_chars(),
        atlas.n_scripts(),
        atlas.d_font(),
        atlas.d_font(),
        seed
    );
    Ok(())
}

pub fn cmd_gen_corpus(a: &GenCorpusArgs) -> CliResult<()> {
    let task = TaskKind::parse(&a.task)?;
    let mut cfg = resolve_config(a.config.as_deref(), &a.set, a.seed)?;
    cfg.set("task", &a.task)?;
    let atlas = load_atlas(&a.atlas)?;
    let (corpus, scheme) = match task {
        TaskKind::Tagging => (
            gen_tagging_corpus(&atlas, cfg.sentences, cfg.seed)?,
            Some(cfg.scheme),
        ),
        TaskKind::Classification => (
            gen_classification_corpus(&atlas, cfg.docs, cfg.classes, cfg.seed)?,
            None,
        ),
        TaskKind::Pair => (gen_pair_corpus(&atlas, cfg.pairs, cfg.seed)?, None),
    };
    save_corpus(&corpus, scheme, &a.out)?;
    println!(
        "wrote {}: {} {} items (train {} / dev {} / test {}), {} families, seed {}",
        a.out.display(),
        corpus.items.len(),
        corpus.task.name(),
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        corpus.n_families,
        corpus.seed
    );
    Ok(())
}

/// Config resolution plus the convenience flags train offers.
fn train_style_config(a: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = resolve_config(a.config.as_deref(), &a.set, a.seed)?;
    if let Some(s) = &a.strategy {
        cfg.set("strategy", s)?;
    }
    if let Some(l) = a.lambda0 {
        cfg.set("lambda0", &format!("{l}"))?;
    }
    cfg.atlas = Some(a.atlas.display().to_string());
    cfg.corpus = Some(a.corpus.display().to_string());
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let mut cfg = train_style_config(a)?;
    if cfg.strategy == Strategy::ContextOnly {
        // The context-only baseline has no glyph branch by definition.
        cfg.use_glyph = false;
    }
    let atlas = load_atlas(&a.atlas)?;
    let corpus = load_corpus_checked(&cfg, &atlas, &a.corpus)?;
    let (model, ps) = GlyceModel::build(cfg.model_config(), &atlas, cfg.seed)?;
    let train_config = cfg.train_config()?;
    let mut trainer = match &a.resume {
        None => Trainer::new(&model, &corpus, ps, train_config)?,
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            Trainer::from_checkpoint(&model, &corpus, ps, train_config, &ckpt)
                .map_err(checkpoint_mismatch)?
        }
    };

    match a.max_epochs {
        None => trainer.run()?,
        Some(n) => {
            let mut stepped = 0;
            while !trainer.finished() && stepped < n {
                trainer.step_epoch()?;
                stepped += 1;
            }
        }
    }

    make_dir(&a.out)?;
    let config_path = a.out.join("config.txt");
    crate::error::write_bytes(&config_path, cfg.render().as_bytes())?;
    save_history(trainer.history(), &a.out.join("history.jsonl"))?;
    save_checkpoint(&trainer.checkpoint(), &a.out.join("checkpoint.gckp"))?;

    trainer.install_best();
    let metrics = model.evaluate(trainer.params(), &corpus, &corpus.dev, cfg.eval_chunk)?;
    let record = MetricsRecord::new("dev", corpus.dev.len(), &metrics);
    save_metrics(&record, &a.out.join("metrics.json"))?;

    println!(
        "trained {} epochs ({}), dev {}",
        trainer.history().len(),
        if trainer.finished() { "plan complete" } else { "paused, resumable" },
        record
            .primary
            .map_or_else(|| String::from("-"), |m| format!("{m:.4}")),
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

/// Rebuilds the model a checkpoint was trained with and loads its
/// parameters, preferring the best-dev snapshot when one was kept.
fn model_from_checkpoint(
    cfg: &RunConfig,
    atlas: &GlyphAtlas,
    checkpoint: &Path,
) -> CliResult<(GlyceModel, glyce_core::ParamSet)> {
    let (model, mut ps) = GlyceModel::build(cfg.model_config(), atlas, cfg.seed)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let params = ckpt.best.as_ref().map(|b| &b.params).unwrap_or(&ckpt.params);
    restore_named_params(&mut ps, params).map_err(checkpoint_mismatch)?;
    Ok((model, ps))
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let cfg = resolve_config(a.config.as_deref(), &a.set, a.seed)?;
    let atlas = load_atlas(&a.atlas)?;
    let corpus = load_corpus_checked(&cfg, &atlas, &a.corpus)?;
    let (model, ps) = model_from_checkpoint(&cfg, &atlas, &a.checkpoint)?;
    let split = split_indices(&corpus, &a.split)?;
    let metrics = model.evaluate(&ps, &corpus, split, cfg.eval_chunk)?;
    let record = MetricsRecord::new(&a.split, split.len(), &metrics);
    println!("{}", render_metrics(&record)?);
    if let Some(out) = &a.out {
        save_metrics(&record, out)?;
    }
    Ok(())
}

pub fn cmd_embed(a: &EmbedArgs) -> CliResult<()> {
    let cfg = resolve_config(a.config.as_deref(), &a.set, a.seed)?;
    if !cfg.use_glyph {
        return Err(CliError::Usage(String::from(
            "use_glyph=false builds no glyph branch, so there are no embeddings to export",
        )));
    }
    let atlas = load_atlas(&a.atlas)?;
    let (model, ps) = model_from_checkpoint(&cfg, &atlas, &a.checkpoint)?;
    let ids: Vec<u32> = (0..atlas.n_chars()).collect();
    let table = model.embed_chars(&ps, &ids)?;
    save_embeddings(&ids, &table, &a.out)?;
    println!(
        "wrote {}: {} characters x {} dims",
        a.out.display(),
        ids.len(),
        table.shape()[1]
    );
    Ok(())
}

/// The named variants of one ablation grid: (title, baseline, runs).
fn grid_runs(grid: &str, base: &RunConfig) -> CliResult<(String, String, Vec<(String, RunConfig)>)> {
    let glyph_only = |grid: &str| -> CliResult<()> {
        if !base.use_glyph || base.strategy == Strategy::ContextOnly {
            return Err(CliError::Usage(format!(
                "grid '{grid}' compares glyph models; it needs use_glyph=true and a glyph-training strategy"
            )));
        }
        Ok(())
    };
    match grid {
        "strategies" => {
            let mut runs = Vec::new();
            for name in ["staged-joint", "glyph-joint", "joint", "context-only"] {
                let mut cfg = base.clone();
                cfg.set("strategy", name)?;
                cfg.use_glyph = name != "context-only";
                runs.push((name.to_string(), cfg));
            }
            Ok((String::from("training strategies"), String::from("context-only"), runs))
        }
        "image-cls" => {
            glyph_only(grid)?;
            if base.lambda0 <= 0.0 {
                return Err(CliError::Usage(String::from(
                    "the image-cls grid needs lambda0 > 0, otherwise both rows train identically",
                )));
            }
            let with = base.clone();
            let mut without = base.clone();
            without.lambda0 = 0.0;
            Ok((
                String::from("auxiliary image classification"),
                String::from("WO image-cls"),
                vec![
                    (String::from("W image-cls"), with),
                    (String::from("WO image-cls"), without),
                ],
            ))
        }
        "output-layer" => {
            glyph_only(grid)?;
            let mut runs = Vec::new();
            for name in ["transformer", "recurrent", "conv", "none"] {
                let mut cfg = base.clone();
                cfg.set("task_layer", name)?;
                runs.push((name.to_string(), cfg));
            }
            Ok((String::from("output layer structure"), String::from("transformer"), runs))
        }
        "cnn" => {
            glyph_only(grid)?;
            let mut runs = Vec::new();
            for name in ["tianzige", "vanilla", "deep-residual"] {
                let mut cfg = base.clone();
                cfg.set("cnn", name)?;
                runs.push((name.to_string(), cfg));
            }
            Ok((String::from("glyph cnn variants"), String::from("tianzige"), runs))
        }
        other => Err(CliError::Usage(format!(
            "unknown grid '{other}' (want strategies | image-cls | output-layer | cnn)"
        ))),
    }
}

pub fn cmd_ablate(a: &AblateArgs) -> CliResult<()> {
    let base = resolve_config(a.config.as_deref(), &a.set, a.seed)?;
    let (title, baseline, variants) = grid_runs(&a.grid, &base)?;
    let atlas = load_atlas(&a.atlas)?;
    let corpus = load_corpus_checked(&base, &atlas, &a.corpus)?;

    let mut runs = Vec::with_capacity(variants.len());
    for (name, cfg) in &variants {
        let (model, ps) = GlyceModel::build(cfg.model_config(), &atlas, cfg.seed)?;
        let mut trainer = Trainer::new(&model, &corpus, ps, cfg.train_config()?)?;
        trainer.run()?;
        trainer.install_best();
        let metrics = model.evaluate(trainer.params(), &corpus, &corpus.dev, cfg.eval_chunk)?;
        println!(
            "run {name}: {} epochs, dev {}",
            trainer.history().len(),
            metrics
                .primary()
                .map_or_else(|| String::from("-"), |m| format!("{m:.4}")),
        );
        runs.push(RunSummary {
            name: name.clone(),
            dataset: corpus.dataset_tag.clone(),
            metrics,
        });
    }

    let report = ablation_report(&title, &runs, &baseline)?;
    make_dir(&a.out)?;
    crate::error::write_bytes(&a.out.join("report.txt"), report.render().as_bytes())?;
    save_runs(&runs, &a.out.join("runs.jsonl"))?;
    crate::error::write_bytes(&a.out.join("config.txt"), base.render().as_bytes())?;
    print!("{}", report.render());
    println!("wrote {}", a.out.display());
    Ok(())
}
