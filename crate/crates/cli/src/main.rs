//! `techscape`: ingest mention corpora, build the interaction matrix, train
//! the technology classifier and recommender, then query and evaluate.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

const CONFIG_HELP: &str = "\
The --config file holds one 'key = value' per line; '#' starts a comment.
Command-line flags override config entries. Relative paths in the config
resolve against the config file's directory.

Keys: seed, mentions.<source>, weight.<source>, embeddings, labels,
categories, classifier, predictions, matrix, model, threshold,
classifier.{h1,h2,dropout,lr,epochs,batch,folds},
recommender.{variant,d,margin,lr,epochs,negatives,projection-hidden,
projection-relu,scorer-hidden}.

Sources: website, patent, jobs, twitter.
Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.";

#[derive(Parser, Debug)]
#[command(name = "techscape", version, about = "Company and technology retrieval from mention corpora", after_help = CONFIG_HELP)]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Seed for every randomized step [default: 42].
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse mention corpora and report coverage by embeddings and labels.
    Ingest(IngestArgs),
    /// Weight mention corpora into the company × technology matrix.
    BuildMatrix(BuildMatrixArgs),
    /// Train the technology classifier on labeled embeddings.
    TrainClassifier(TrainClassifierArgs),
    /// Classify every embedded entity as technology or not.
    PredictTech(PredictTechArgs),
    /// Train a recommender over the interaction matrix.
    TrainRecommender(TrainRecommenderArgs),
    /// Ranked retrieval from a trained model or the tf-idf matrix.
    Query(QueryArgs),
    /// Category-overlap precision of models and the tf-idf baseline.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct MentionArgs {
    /// Mention file of a source, as SOURCE=PATH; repeatable.
    #[arg(long = "mentions", value_name = "SOURCE=PATH")]
    pub mentions: Vec<String>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub mentions: MentionArgs,
    /// Embeddings TSV to check coverage against.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Labels CSV to check coverage against.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildMatrixArgs {
    #[command(flatten)]
    pub mentions: MentionArgs,
    /// Source weight as SOURCE=W; repeatable [default: 1 for every source].
    #[arg(long = "weight", value_name = "SOURCE=W")]
    pub weights: Vec<String>,
    /// Embeddings TSV; mentioned entities without a vector are dropped.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Technology predictions CSV; only entities labelled 1 are kept.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Keep every entity even if predictions are configured.
    #[arg(long)]
    pub no_filter: bool,
    /// Output matrix file [config: matrix].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ClassifierArgs {
    /// First hidden width [default: 256].
    #[arg(long)]
    pub h1: Option<usize>,
    /// Second hidden width [default: 64].
    #[arg(long)]
    pub h2: Option<usize>,
    /// Dropout rate between the blocks [default: 0.2].
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Learning rate [default: 0.01].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs [default: 50].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 32].
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainClassifierArgs {
    /// Embeddings TSV [config: embeddings].
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Labels CSV [config: labels].
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: ClassifierArgs,
    /// Also report k-fold cross-validation metrics.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub progress: Option<PathBuf>,
    /// Output classifier file [config: classifier].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictTechArgs {
    /// Trained classifier file [config: classifier].
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Embeddings TSV [config: embeddings].
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Probability at or above which an entity is a technology [default: 0.5].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output predictions CSV [config: predictions].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainRecommenderArgs {
    /// Interaction matrix file [config: matrix].
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Semantic embeddings for the semantic variants.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// MF, MLP, NCF, SemanticOnly or SemanticPlusMF [default: SemanticPlusMF].
    #[arg(long)]
    pub variant: Option<String>,
    /// Embedding size [default: 64].
    #[arg(long)]
    pub d: Option<usize>,
    /// Hinge margin [default: 0.01].
    #[arg(long)]
    pub margin: Option<f64>,
    /// Learning rate [default: 0.05].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs [default: 50].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Negatives sampled per observed pair [default: 1].
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Hidden widths of the semantic projection, comma separated [default: none].
    #[arg(long)]
    pub projection_hidden: Option<String>,
    /// Rectify between projection layers [default: false].
    #[arg(long)]
    pub projection_relu: Option<bool>,
    /// Hidden widths of the MLP scorer, comma separated [default: d,d/2].
    #[arg(long)]
    pub scorer_hidden: Option<String>,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub progress: Option<PathBuf>,
    /// Train on max(0, m + observed(pos) - score(neg)) instead of the
    /// pairwise hinge. For comparison only.
    #[arg(long, hide = true)]
    pub observed_anchor_hinge: bool,
    /// Output model file [config: model].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Similarity {
    /// Cosine between company factors.
    Factor,
    /// Cosine between rows of predicted scores.
    ScoreRow,
}

#[derive(Args, Debug, Clone)]
pub struct QueryCommon {
    /// Trained model file [config: model].
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Interaction matrix file [config: matrix].
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Rank with tf-idf instead of the model.
    #[arg(long)]
    pub tfidf: bool,
    /// Number of results [default: 10].
    #[arg(long)]
    pub top: Option<usize>,
    /// Output format.
    #[arg(long, value_enum, default_value = "csv")]
    pub format: OutputFormat,
    /// Write results here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    #[command(subcommand)]
    pub kind: QueryKind,
}

#[derive(Subcommand, Debug)]
pub enum QueryKind {
    /// Technologies for a company.
    ComTech {
        /// Query company id.
        #[arg(long)]
        company: String,
        /// Rank technologies the company already mentions too.
        #[arg(long)]
        include_observed: bool,
        #[command(flatten)]
        common: QueryCommon,
    },
    /// Companies similar to a company.
    ComCom {
        /// Query company id.
        #[arg(long)]
        company: String,
        /// How the model measures company similarity.
        #[arg(long, value_enum, default_value = "factor")]
        similarity: Similarity,
        #[command(flatten)]
        common: QueryCommon,
    },
    /// Companies for a technology.
    TechCom {
        /// Query technology id.
        #[arg(long)]
        tech: String,
        #[command(flatten)]
        common: QueryCommon,
    },
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// com-com, tech-com or both, comma separated [default: com-com,tech-com].
    #[arg(long)]
    pub task: Option<String>,
    /// Cutoffs, comma separated [default: 5,10,15,20].
    #[arg(long)]
    pub k: Option<String>,
    /// Trained model; repeatable [config: model].
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    /// Interaction matrix file [config: matrix].
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Categories CSV [config: categories].
    #[arg(long)]
    pub categories: Option<PathBuf>,
    /// Leave out the tf-idf baseline.
    #[arg(long)]
    pub no_tfidf: bool,
    /// How the model measures company similarity.
    #[arg(long, value_enum, default_value = "factor")]
    pub similarity: Similarity,
    /// Score overlap as the size of the category union. For comparison only.
    #[arg(long, hide = true)]
    pub union_overlap: bool,
    /// Write the CSV report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("techscape: {e}");
            e.exit_code()
        }
    }
}

impl From<Similarity> for techscape::retrieval::ComComSimilarity {
    fn from(s: Similarity) -> Self {
        match s {
            Similarity::Factor => techscape::retrieval::ComComSimilarity::FactorCosine,
            Similarity::ScoreRow => techscape::retrieval::ComComSimilarity::ScoreRowCosine,
        }
    }
}
