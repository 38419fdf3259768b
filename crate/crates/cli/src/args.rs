use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tfac::annkm::{KMeansMode, KMeansParams, Seeding};
use tfac::hac::{Linkage, Metric};
use tfac::metrics::Fusion;

pub const SUBCOMMANDS: [&str; 7] = ["synth", "cluster", "eval-cluster", "aggregate", "identify", "sweep-k", "assoc"];

#[derive(Debug, Parser)]
#[command(name = "tfac", version, about = "Template clustering, aggregation and open-set identification")]
#[command(args_override_self = true, propagate_version = true)]
pub struct Cli {
    /// JSON object of flag values; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Upper bound on worker threads. Outputs do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic dataset with a gallery/probe split.
    Synth(SynthArgs),
    /// Agglomerative clustering of media-averaged templates.
    Cluster(ClusterArgs),
    /// Pairwise precision, recall and F1 of a clustering file.
    EvalCluster(EvalClusterArgs),
    /// Aggregate each probe template by its mean or k-means centers.
    Aggregate(AggregateArgs),
    /// Score probes against each gallery and report rank-k and TPIR.
    Identify(IdentifyArgs),
    /// Rank and TPIR of cluster aggregation over a range of k.
    SweepK(SweepKArgs),
    /// Grow a positive sample set with iterated linear SVMs.
    Assoc(AssocArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Cluster(_) => "cluster",
            Command::EvalCluster(_) => "eval-cluster",
            Command::Aggregate(_) => "aggregate",
            Command::Identify(_) => "identify",
            Command::SweepK(_) => "sweep-k",
            Command::Assoc(_) => "assoc",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub subjects: usize,
    #[arg(long, default_value_t = 3)]
    pub templates_per_subject: usize,
    #[arg(long, default_value_t = 3)]
    pub media_per_template: usize,
    #[arg(long, default_value_t = 5)]
    pub frames_per_media: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Noise norm of each sample around its subject prototype.
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Noise norm shared by all frames of a media.
    #[arg(long, default_value_t = 0.0)]
    pub media_noise: f64,
    #[arg(long, default_value_t = 0.5)]
    pub image_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    pub male_probability: f64,
    /// Six comma-separated weights for skin-tone buckets 1..=6.
    #[arg(long, default_value = "1,0,1,0,0,0", value_delimiter = ',', num_args = 6)]
    pub skin_weights: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub unknown_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    pub openset_fraction: f64,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub galleries: u8,
    /// Give probe templates media from a second, offset noise regime.
    #[arg(long)]
    pub multimodal: bool,
    #[arg(long, default_value_t = 1.0)]
    pub mm_probe_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    pub mm_share: f64,
    #[arg(long, default_value_t = 0.9)]
    pub mm_offset: f64,
    #[arg(long, default_value_t = 0.9)]
    pub mm_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkageArg {
    Single,
    Complete,
    Average,
}

impl From<LinkageArg> for Linkage {
    fn from(l: LinkageArg) -> Self {
        match l {
            LinkageArg::Single => Linkage::Single,
            LinkageArg::Complete => Linkage::Complete,
            LinkageArg::Average => Linkage::Average,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricArg {
    Cosine,
    Euclidean,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Cosine => Metric::Cosine,
            MetricArg::Euclidean => Metric::Euclidean,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionArg {
    Max,
    Mean,
}

impl From<FusionArg> for Fusion {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Max => Fusion::Max,
            FusionArg::Mean => Fusion::Mean,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KMeansModeArg {
    Exact,
    Ann,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedingArg {
    Kmeanspp,
    Farthest,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Mean,
    Cluster,
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Directory holding embeddings.femb, metadata.csv and split.csv.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ClusterArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: DataArgs,
    #[arg(long, value_enum, default_value_t = LinkageArg::Average)]
    pub linkage: LinkageArg,
    #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
    pub metric: MetricArg,
    /// Target cluster count; with --partition it is split across subsets
    /// by size. Defaults to the number of labelled subjects.
    #[arg(long, conflicts_with = "threshold", value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    /// Merge while the closest pair is at most this far apart.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Attribute keys to partition on, e.g. `gender,skin_tone`.
    #[arg(long)]
    pub partition: Option<String>,
    /// L2-normalize each media-averaged template.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalClusterArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: DataArgs,
    /// An `item_id,cluster_id` file whose item ids are template ids.
    #[arg(long)]
    pub clustering: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct KMeansArgs {
    #[arg(long, value_enum, default_value_t = KMeansModeArg::Exact)]
    pub kmeans_mode: KMeansModeArg,
    #[arg(long, value_enum, default_value_t = SeedingArg::Kmeanspp)]
    pub seeding: SeedingArg,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub trees: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_comparisons: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

impl KMeansArgs {
    pub fn params(&self) -> KMeansParams {
        KMeansParams {
            max_iters: self.max_iters,
            tol: self.tol,
            mode: match self.kmeans_mode {
                KMeansModeArg::Exact => KMeansMode::Exact,
                KMeansModeArg::Ann => KMeansMode::Ann,
            },
            seeding: match self.seeding {
                SeedingArg::Kmeanspp => Seeding::KMeansPlusPlus,
                SeedingArg::Farthest => Seeding::FarthestPoint,
            },
            num_trees: self.trees as usize,
            max_comparisons: self.max_comparisons as usize,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct AggregateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: DataArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Cluster)]
    pub method: MethodArg,
    /// Centers per probe for cluster aggregation.
    #[arg(long, default_value_t = 7, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub kmeans: KMeansArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct IdentifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: DataArgs,
    /// Output directory of `aggregate`; defaults to media-averaged probes.
    #[arg(long)]
    pub probes: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FusionArg::Max)]
    pub fusion: FusionArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepKArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: DataArgs,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub k_min: u64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub k_max: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub kmeans: KMeansArgs,
    #[arg(long, value_enum, default_value_t = FusionArg::Max)]
    pub fusion: FusionArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AssocArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: DataArgs,
    /// `sample_id,set` rows with set one of positive, video_negative,
    /// background or candidate.
    #[arg(long)]
    pub sets: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub cp: f64,
    #[arg(long, default_value_t = 1.0)]
    pub cn: f64,
    /// 1 trains on video and background negatives together, 2 uses
    /// background negatives only when the video has none.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub assoc_model: u8,
    #[arg(long, default_value_t = 5)]
    pub rounds: usize,
    /// Decision value a candidate must exceed to be accepted.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub margin: f64,
    /// Train without the bias feature.
    #[arg(long)]
    pub no_bias: bool,
    #[arg(long)]
    pub out: PathBuf,
}
