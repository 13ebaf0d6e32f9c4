//! `nebias`: command-line front end for the under-represented NE boosting
//! pipeline.
//!
//! Exit codes: 0 on success, 1 for invalid input (missing or malformed
//! files, bad configuration or arguments), 2 for internal failures.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Error caused by user-supplied input rather than by the pipeline itself.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Debug, Parser)]
#[command(name = "nebias", version, about = "Boost under-represented named entities in ASR lattices")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Trial seed for every seeded component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (also the default location of input artifacts).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially, 0 uses every core.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Override a configuration value, e.g. `--set exemplar.exemplars_per_ur_ne=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Training corpus (`id<TAB>tokens` per line).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Test corpus with reference transcripts.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// NE inventory (`surface<TAB>category` per line).
    #[arg(long)]
    pub inventory: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Lattice file to rescore.
    #[arg(long)]
    pub lattices: Option<PathBuf>,
    /// ARPA LM for the `ngram_swap` stage.
    #[arg(long)]
    pub lm: Option<PathBuf>,
    /// RNN LM checkpoint for `neural_rescore`.
    #[arg(long)]
    pub rnn: Option<PathBuf>,
    /// Enriched RNN LM checkpoint for `neural_enriched_rescore`.
    #[arg(long)]
    pub enriched_rnn: Option<PathBuf>,
    /// Hypothesis file to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the effective configuration as TOML.
    Config,
    /// Generate the synthetic benchmark (train, test, inventory).
    Synth,
    /// Corpus and inventory statistics.
    Stats {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train a Witten-Bell n-gram LM and write it in ARPA format.
    TrainNgram {
        #[command(flatten)]
        data: DataArgs,
        /// LM order (defaults to `rescore_order`).
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Append exemplar utterances for under-represented NEs.
    Exemplar {
        #[command(flatten)]
        data: DataArgs,
        /// Augmented corpus to write.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Decode the test set into word lattices with the synthetic decoder.
    Simulate {
        #[command(flatten)]
        data: DataArgs,
        /// First-pass ARPA LM; trained from the training corpus when absent.
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train the RNN LM and write a checkpoint.
    TrainRnnlm {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Enrich the embeddings of under-represented NEs in an RNN LM.
    Enrich {
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint to enrich.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Apply a stage plan to lattices and write one hypothesis per utterance.
    Rescore {
        /// Comma-separated stages: ngram_swap, neural_rescore,
        /// neural_enriched_rescore, lattice_boost (or `none`).
        #[arg(long)]
        plan: String,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        models: ModelArgs,
    },
    /// Keyword-biased path extraction; `lattice_boost` appended to `--plan`.
    Boost {
        /// Stages to run before boosting.
        #[arg(long, default_value = "none")]
        plan: String,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        models: ModelArgs,
    },
    /// Score hypotheses against the test references.
    Score {
        /// Hypothesis file (`id<TAB>boosted<TAB>words`).
        #[arg(long)]
        hyp: Option<PathBuf>,
        /// Lattices for the UR-NE occurrence rate.
        #[arg(long)]
        lattices: Option<PathBuf>,
        /// System name in the report.
        #[arg(long, default_value = "hyp")]
        name: String,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run one figure sweep on the synthetic benchmark and write a CSV.
    Sweep {
        /// fig1_exemplar_count, fig2_count_threshold, fig3_pool_size or
        /// fig4_enrichment_range (or fig1..fig4).
        #[arg(long)]
        figure: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the S1-S11 system grid for one trial.
    Run {
        /// Comma-separated systems (default: all).
        #[arg(long)]
        systems: Option<String>,
        /// Trial seed (defaults to the configured seed).
        #[arg(long)]
        trial: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<InputError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
