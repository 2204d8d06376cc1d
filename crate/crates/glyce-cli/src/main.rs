use clap::{Parser, Subcommand};

use glyce_cli::commands::{
    cmd_ablate, cmd_embed, cmd_eval, cmd_gen_atlas, cmd_gen_corpus, cmd_train, AblateArgs,
    EmbedArgs, EvalArgs, GenAtlasArgs, GenCorpusArgs, TrainArgs,
};

/// Glyph-embedding experiments over synthetic atlases: data generation,
/// training, evaluation, embedding export, and ablation grids.
#[derive(Parser)]
#[command(name = "glyce", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic glyph atlas (.gatl).
    GenAtlas(GenAtlasArgs),
    /// Generate a labeled corpus over an atlas.
    GenCorpus(GenCorpusArgs),
    /// Train a model; writes a reproducible run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus split.
    Eval(EvalArgs),
    /// Export per-character glyph embeddings from a checkpoint.
    Embed(EmbedArgs),
    /// Train one grid of variants and report deltas against a baseline.
    Ablate(AblateArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::GenAtlas(a) => cmd_gen_atlas(a),
        Cmd::GenCorpus(a) => cmd_gen_corpus(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Embed(a) => cmd_embed(a),
        Cmd::Ablate(a) => cmd_ablate(a),
    };
    if let Err(e) = result {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
