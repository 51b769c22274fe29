//! Command-line arguments.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use treeguard_core::ingest::DEFAULT_MALFORMED_TOLERANCE;
use treeguard_core::select::DEFAULT_FS_THRESHOLD;
use treeguard_core::stack::DEFAULT_OOF_FOLDS;
use treeguard_core::ModelKind;

#[derive(Debug, Parser)]
#[command(
    name = "treeguard",
    version,
    about = "Tree-ensemble intrusion detection for CAN-bus and network-flow traffic"
)]
pub struct Cli {
    /// Worker threads for training, evaluation and scoring (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, combine and clean captures into a prepared dataset.
    Prepare(PrepareArgs),
    /// Fit a model on a prepared dataset and save it.
    Train(TrainArgs),
    /// Cross-validate model specs, or score a saved model on a dataset.
    Evaluate(EvaluateArgs),
    /// Rank features by averaged importance and apply the cumulative rule.
    SelectFeatures(SelectArgs),
    /// Search tree count and depth by cross-validated accuracy.
    GridSearch(GridArgs),
    /// Score a stream of records with a saved model.
    Detect(DetectArgs),
    /// Write synthetic CAN captures (normal traffic plus four attacks).
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Car-hacking style CAN frame logs.
    Can,
    /// CICIDS2017 style flow-feature CSVs.
    Flow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncodingArg {
    /// CAN ID as one integer feature.
    Numeric,
    /// One indicator column per observed CAN ID.
    OneHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OversampleArg {
    None,
    Random,
    Smote,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Input capture files, combined in the order given.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Profile,
    /// Prepared dataset CSV to write; metadata goes next to it.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Raw-to-consolidated label map (`raw_label,class` lines) replacing the
    /// bundled one.
    #[arg(long)]
    pub label_map: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EncodingArg::Numeric)]
    pub encoding: EncodingArg,
    /// Keep a stratified sample of this fraction of the cleaned rows.
    #[arg(long)]
    pub sample_fraction: Option<f64>,
    /// Fraction of malformed CAN lines skipped before parsing fails.
    #[arg(long, default_value_t = DEFAULT_MALFORMED_TOLERANCE)]
    pub malformed_tolerance: f64,
    /// Label column of flow CSVs.
    #[arg(long, default_value = "Label")]
    pub label_column: String,
    /// Accept flow CSVs of any width instead of exactly 78 features.
    #[arg(long)]
    pub any_width: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "rf", value_parser = parse_kind)]
    pub model: ModelKind,
    /// Trees per forest / boosting rounds.
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub min_split: Option<usize>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionArg>,
    /// Stacking base learners.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub bases: Vec<ModelKind>,
    /// Stacking meta learner.
    #[arg(long, value_parser = parse_kind)]
    pub meta: Option<ModelKind>,
    /// Folds for the stacking out-of-fold meta features.
    #[arg(long, default_value_t = DEFAULT_OOF_FOLDS)]
    pub stack_folds: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ResampleArgs {
    #[arg(long, value_enum, default_value_t = OversampleArg::None)]
    pub oversample: OversampleArg,
    #[arg(long, default_value_t = treeguard_core::resample::DEFAULT_SMOTE_K)]
    pub smote_k: usize,
    /// Raise every class to this fraction of the largest class.
    #[arg(long, default_value_t = 1.0)]
    pub target_ratio: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SelectionArgs {
    /// Keep only the features covering the importance threshold.
    #[arg(long)]
    pub feature_select: bool,
    #[arg(long, default_value_t = DEFAULT_FS_THRESHOLD)]
    pub fs_threshold: f64,
    /// Trees per importance model.
    #[arg(long, default_value_t = 100)]
    pub fs_trees: usize,
    /// Depth of the importance models.
    #[arg(long, default_value_t = 8)]
    pub fs_depth: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Model file to write.
    #[arg(long, short)]
    pub output: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub resample: ResampleArgs,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Record training time and a creation timestamp in the model file
    /// (the file is then no longer byte-reproducible).
    #[arg(long)]
    pub stamp: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prepared dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Score this saved model on the whole dataset instead of cross-validating.
    #[arg(long, conflicts_with_all = ["model", "bases", "meta"])]
    pub model_file: Option<PathBuf>,
    /// Model kinds to cross-validate, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind, default_value = "rf")]
    pub model: Vec<ModelKind>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub min_split: Option<usize>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionArg>,
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub bases: Vec<ModelKind>,
    #[arg(long, value_parser = parse_kind)]
    pub meta: Option<ModelKind>,
    #[arg(long, default_value_t = DEFAULT_OOF_FOLDS)]
    pub stack_folds: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub resample: ResampleArgs,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EvaluateArgs {
    pub fn model_args(&self, kind: ModelKind) -> ModelArgs {
        ModelArgs {
            model: kind,
            trees: self.trees,
            depth: self.depth,
            min_split: self.min_split,
            min_leaf: self.min_leaf,
            criterion: self.criterion,
            bases: if kind == ModelKind::Stacking {
                self.bases.clone()
            } else {
                Vec::new()
            },
            meta: self.meta.filter(|_| kind == ModelKind::Stacking),
            stack_folds: self.stack_folds,
        }
    }
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Prepared dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Write the averaged `feature,weight` table here as well as to stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Also rank features for each attack class against normal traffic.
    #[arg(long)]
    pub per_attack: bool,
    /// Write the per-attack `label,feature,weight` table here.
    #[arg(long)]
    pub per_attack_output: Option<PathBuf>,
    /// Rows per attack in the per-attack table (0 = all).
    #[arg(long, default_value_t = 3)]
    pub top: usize,
    #[arg(long, default_value_t = DEFAULT_FS_THRESHOLD)]
    pub fs_threshold: f64,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, default_value_t = 8)]
    pub depth: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Prepared dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "rf", value_parser = parse_kind)]
    pub model: ModelKind,
    #[arg(long, value_delimiter = ',', default_value = "50,100,200")]
    pub trees_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10,12")]
    pub depth_grid: Vec<usize>,
    /// Accuracy drop that ends the search.
    #[arg(long, default_value_t = treeguard_core::eval::DEFAULT_GRID_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Saved model file.
    #[arg(long)]
    pub model_file: PathBuf,
    #[arg(long, value_enum)]
    pub profile: Profile,
    /// Record stream; `-` reads standard input.
    #[arg(long, default_value = "-")]
    pub input: PathBuf,
    /// Verdict output; `-` writes standard output.
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    /// Records scored per micro-batch.
    #[arg(long, default_value_t = crate::detect::DEFAULT_BATCH)]
    pub batch_size: usize,
    /// Label column to ignore in flow streams with a header.
    #[arg(long, default_value = "Label")]
    pub label_column: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory receiving one capture file per attack.
    #[arg(long, short)]
    pub output_dir: PathBuf,
    /// Total frames across all files.
    #[arg(long, default_value_t = 50_000)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: treeguard_core::Error| e.to_string())
}
