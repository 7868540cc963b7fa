use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use techscape::classifier::{
    cross_validate, labeled_examples, train_on_with_progress, ClassifierConfig, ClassifierHead,
};
use techscape::corpus::{
    load_categories, load_embeddings, load_labels, parse_mentions, validate_corpus, EmbeddingTable, Source,
    SourceCorpus, TechLabelSet,
};
use techscape::evaluation::{evaluate_task_with, format_table, Overlap, PrecisionReport, Task, DEFAULT_KS};
use techscape::interaction::{combine_sources, filter_technologies, tfidf_source, InteractionMatrix, SourceWeights};
use techscape::nn::Matrix;
use techscape::recommender::{train_with_progress, HingeForm, RecommenderModel, TrainConfig, Variant};
use techscape::retrieval::{self, ModelRetriever, RankedList, Retriever, TfidfRetriever};

use crate::config::{pick, pick_or, pick_path, require_path, ConfigFile};
use crate::error::{CliError, CliResult};
use crate::{
    BuildMatrixArgs, Cli, Command, EvaluateArgs, IngestArgs, MentionArgs, OutputFormat, PredictTechArgs, QueryCommon,
    QueryKind, TrainClassifierArgs, TrainRecommenderArgs,
};

const DEFAULT_SEED: u64 = 42;
const DEFAULT_TOP: usize = 10;
const DEFAULT_THRESHOLD: f64 = 0.5;

struct Context {
    config: ConfigFile,
    seed: u64,
}

pub fn run(cli: Cli) -> CliResult<()> {
    let config = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let seed = pick_or(cli.seed, &config, "seed", DEFAULT_SEED)?;
    let ctx = Context { config, seed };
    match cli.command {
        Command::Ingest(args) => ingest(&ctx, args),
        Command::BuildMatrix(args) => build_matrix(&ctx, args),
        Command::TrainClassifier(args) => train_classifier(&ctx, args),
        Command::PredictTech(args) => predict_tech(&ctx, args),
        Command::TrainRecommender(args) => train_recommender(&ctx, args),
        Command::Query(args) => query(&ctx, args.kind),
        Command::Evaluate(args) => evaluate(&ctx, args),
    }
}

fn split_assignment(item: &str, flag: &str) -> CliResult<(String, String)> {
    item.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .ok_or_else(|| CliError::Usage(format!("--{flag} expects KEY=VALUE, got '{item}'")))
}

fn parse_source(name: &str) -> CliResult<Source> {
    Source::from_str(name).map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_list<T: FromStr>(text: &str, what: &str) -> CliResult<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| CliError::Usage(format!("bad {what} '{s}': {e}"))))
        .collect()
}

fn mention_paths(ctx: &Context, args: &MentionArgs) -> CliResult<Vec<(Source, PathBuf)>> {
    let mut paths = BTreeMap::new();
    if args.mentions.is_empty() {
        for (source, value) in ctx.config.with_prefix("mentions") {
            paths.insert(parse_source(&source)?, ctx.config.resolve(&value));
        }
    } else {
        for item in &args.mentions {
            let (source, path) = split_assignment(item, "mentions")?;
            if paths.insert(parse_source(&source)?, PathBuf::from(path)).is_some() {
                return Err(CliError::Usage(format!("source '{source}' given twice")));
            }
        }
    }
    if paths.is_empty() {
        return Err(CliError::Usage(
            "no mention files: pass --mentions SOURCE=PATH or set mentions.<source> in the config".into(),
        ));
    }
    Ok(paths.into_iter().collect())
}

fn load_corpora(paths: &[(Source, PathBuf)]) -> CliResult<Vec<SourceCorpus>> {
    paths
        .iter()
        .map(|(source, path)| {
            let corpus = parse_mentions(path, *source)?;
            log::info!(
                "{source}: {} companies, {} entities from {}",
                corpus.n_companies(),
                corpus.n_entities(),
                path.display()
            );
            Ok(corpus)
        })
        .collect()
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => write_file(path, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Data(format!("stdout: {e}"))),
    }
}

fn ingest(ctx: &Context, args: IngestArgs) -> CliResult<()> {
    let corpora = load_corpora(&mention_paths(ctx, &args.mentions)?)?;
    let embeddings = pick_path(args.embeddings, &ctx.config, "embeddings")
        .map(load_embeddings)
        .transpose()?;
    let labels = pick_path(args.labels, &ctx.config, "labels")
        .map(load_labels)
        .transpose()?;
    let empty_embeddings = EmbeddingTable::new(1)?;
    let empty_labels = TechLabelSet::default();
    let mut report = validate_corpus(
        &corpora,
        embeddings.as_ref().unwrap_or(&empty_embeddings),
        labels.as_ref().unwrap_or(&empty_labels),
    );
    if embeddings.is_none() {
        report.missing_embeddings.clear();
    }
    if labels.is_none() {
        report.missing_labels.clear();
    }
    if !report.is_clean() {
        log::warn!(
            "{} entities lack embeddings, {} lack labels",
            report.missing_embeddings.len(),
            report.missing_labels.len()
        );
    }
    emit(args.out.as_deref(), &report.to_string())
}

fn read_predictions(path: &Path) -> CliResult<BTreeMap<String, bool>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = i + 2;
        if row.len() != 3 {
            return Err(CliError::Data(format!(
                "{}:{line}: expected entity,probability,label",
                path.display()
            )));
        }
        let label = match row[2].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(CliError::Data(format!(
                    "{}:{line}: label must be 0 or 1, got '{other}'",
                    path.display()
                )))
            }
        };
        out.insert(row[0].trim().to_owned(), label);
    }
    Ok(out)
}

fn source_weights(ctx: &Context, flags: &[String]) -> CliResult<SourceWeights> {
    let mut weights = SourceWeights::default();
    let entries: Vec<(String, String)> = if flags.is_empty() {
        ctx.config.with_prefix("weight")
    } else {
        flags
            .iter()
            .map(|f| split_assignment(f, "weight"))
            .collect::<CliResult<_>>()?
    };
    for (source, value) in entries {
        let w: f64 = value
            .parse()
            .map_err(|e| CliError::Usage(format!("bad weight '{value}' for {source}: {e}")))?;
        weights
            .set(parse_source(&source)?, w)
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(weights)
}

fn build_matrix(ctx: &Context, args: BuildMatrixArgs) -> CliResult<()> {
    let corpora = load_corpora(&mention_paths(ctx, &args.mentions)?)?;
    let weights = source_weights(ctx, &args.weights)?;
    let out = require_path(args.out, &ctx.config, "matrix")?;
    let per_source: Vec<_> = corpora.iter().map(tfidf_source).collect();
    let mut matrix = combine_sources(&per_source, &weights).map_err(|e| match e {
        techscape::Error::Invalid(m) => CliError::Usage(m),
        other => other.into(),
    })?;
    if let Some(path) = pick_path(args.embeddings, &ctx.config, "embeddings") {
        let embeddings = load_embeddings(path)?;
        let before = matrix.n_techs();
        matrix = matrix.retain_techs(|id| embeddings.contains(id)).prune_empty();
        let dropped = before - matrix.n_techs();
        if dropped > 0 {
            log::warn!("{dropped} mentioned entities have no embedding and were dropped");
        }
    }
    if !args.no_filter {
        if let Some(path) = pick_path(args.predictions, &ctx.config, "predictions") {
            let predictions = read_predictions(&path)?;
            let before = matrix.n_techs();
            matrix = filter_technologies(&matrix, &predictions).prune_empty();
            log::info!("technology filter kept {} of {before} entities", matrix.n_techs());
        }
    }
    if matrix.is_empty() {
        return Err(CliError::Data("the interaction matrix has no entries".into()));
    }
    log::info!(
        "matrix: {} companies × {} technologies, {} entries",
        matrix.n_companies(),
        matrix.n_techs(),
        matrix.nnz()
    );
    write_file(&out, &matrix.to_text()?)
}

fn classifier_config(ctx: &Context, args: &crate::ClassifierArgs) -> CliResult<ClassifierConfig> {
    let d = ClassifierConfig::default();
    let c = &ctx.config;
    let config = ClassifierConfig {
        h1: pick_or(args.h1, c, "classifier.h1", d.h1)?,
        h2: pick_or(args.h2, c, "classifier.h2", d.h2)?,
        dropout_rate: pick_or(args.dropout, c, "classifier.dropout", d.dropout_rate)?,
        learning_rate: pick_or(args.lr, c, "classifier.lr", d.learning_rate)?,
        epochs: pick_or(args.epochs, c, "classifier.epochs", d.epochs)?,
        batch_size: pick_or(args.batch, c, "classifier.batch", d.batch_size)?,
        seed: ctx.seed,
        ..d
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn train_classifier(ctx: &Context, args: TrainClassifierArgs) -> CliResult<()> {
    let embeddings = load_embeddings(require_path(args.embeddings, &ctx.config, "embeddings")?)?;
    let labels = load_labels(require_path(args.labels, &ctx.config, "labels")?)?;
    let out = require_path(args.out, &ctx.config, "classifier")?;
    let config = classifier_config(ctx, &args.hyper)?;
    let (_, x, ys) = labeled_examples(&embeddings, &labels)?;
    log::info!("{} labeled entities of dimension {}", x.rows(), x.cols());

    if let Some(k) = pick(args.folds, &ctx.config, "classifier.folds")? {
        let report = cross_validate(&x, &ys, k, &config)?;
        let mut text = String::from("fold,accuracy,f1,auc\n");
        let fmt_auc = |a: Option<f64>| a.map_or_else(|| "NA".to_string(), |v| v.to_string());
        for (i, r) in report.folds.iter().enumerate() {
            let _ = writeln!(text, "{},{},{},{}", i + 1, r.accuracy, r.f1, fmt_auc(r.auc));
        }
        let m = &report.mean;
        let _ = writeln!(text, "mean,{},{},{}", m.accuracy, m.f1, fmt_auc(m.auc));
        emit(None, &text)?;
    }

    let mut progress = String::from("epoch,mean_loss\n");
    let head = train_on_with_progress(&x, &ys, &config, |epoch, loss| {
        let _ = writeln!(progress, "{},{loss}", epoch + 1);
    })?;
    if let Some(path) = args.progress {
        write_file(&path, &progress)?;
    }
    write_file(&out, &head.to_text())
}

fn predict_tech(ctx: &Context, args: PredictTechArgs) -> CliResult<()> {
    let head = ClassifierHead::parse_text(&read_file(&require_path(args.classifier, &ctx.config, "classifier")?)?)?;
    let embeddings = load_embeddings(require_path(args.embeddings, &ctx.config, "embeddings")?)?;
    let out = require_path(args.out, &ctx.config, "predictions")?;
    let threshold = pick_or(args.threshold, &ctx.config, "threshold", DEFAULT_THRESHOLD)?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Usage(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    if head.input_dim() != embeddings.dim() {
        return Err(CliError::Data(format!(
            "classifier expects {}-dimensional embeddings, table has {}",
            head.input_dim(),
            embeddings.dim()
        )));
    }
    let ids: Vec<&str> = embeddings.iter().map(|(id, _)| id).collect();
    let data: Vec<f64> = embeddings.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let probs = head.predict(&Matrix::from_vec(ids.len(), embeddings.dim(), data)?)?;
    let mut text = String::from("entity,probability,label\n");
    let mut positives = 0;
    for (id, p) in ids.iter().zip(&probs) {
        let label = u8::from(*p >= threshold);
        positives += usize::from(label);
        let _ = writeln!(text, "{id},{p},{label}");
    }
    log::info!("{positives} of {} entities classified as technologies", ids.len());
    write_file(&out, &text)
}

fn widths(value: Option<String>, ctx: &Context, key: &str) -> CliResult<Option<Vec<usize>>> {
    pick::<String>(value, &ctx.config, key)?
        .map(|s| parse_list(&s, "layer width"))
        .transpose()
}

fn train_recommender(ctx: &Context, args: TrainRecommenderArgs) -> CliResult<()> {
    let c = &ctx.config;
    let matrix = InteractionMatrix::load(require_path(args.matrix, c, "matrix")?)?;
    let out = require_path(args.out, c, "model")?;
    let variant: Variant = pick::<String>(args.variant, c, "recommender.variant")?
        .map(|v| v.parse().map_err(|e: techscape::Error| CliError::Usage(e.to_string())))
        .transpose()?
        .unwrap_or(Variant::SemanticPlusMf);
    let d = TrainConfig::default();
    let config = TrainConfig {
        margin: pick_or(args.margin, c, "recommender.margin", d.margin)?,
        learning_rate: pick_or(args.lr, c, "recommender.lr", d.learning_rate)?,
        epochs: pick_or(args.epochs, c, "recommender.epochs", d.epochs)?,
        negatives_per_positive: pick_or(args.negatives, c, "recommender.negatives", d.negatives_per_positive)?,
        d: pick_or(args.d, c, "recommender.d", d.d)?,
        seed: ctx.seed,
        projection_hidden: widths(args.projection_hidden, ctx, "recommender.projection-hidden")?.unwrap_or_default(),
        projection_relu: pick_or(
            args.projection_relu,
            c,
            "recommender.projection-relu",
            d.projection_relu,
        )?,
        scorer_hidden: widths(args.scorer_hidden, ctx, "recommender.scorer-hidden")?,
        hinge: if args.observed_anchor_hinge {
            HingeForm::ObservedAnchor
        } else {
            HingeForm::Pairwise
        },
        ..d
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let semantic = if variant.uses_semantic() {
        let path = pick_path(args.embeddings, c, "embeddings")
            .ok_or_else(|| CliError::Usage(format!("variant {variant} needs --embeddings")))?;
        Some(load_embeddings(path)?)
    } else {
        None
    };
    log::info!(
        "training {variant} on {} companies × {} technologies",
        matrix.n_companies(),
        matrix.n_techs()
    );
    let mut progress = String::from("epoch,mean_loss\n");
    let model = train_with_progress(&matrix, semantic.as_ref(), variant, &config, |e| {
        let _ = writeln!(progress, "{},{}", e.epoch + 1, e.mean_loss);
    })?;
    if let Some(path) = args.progress {
        write_file(&path, &progress)?;
    }
    write_file(&out, &model.to_text()?)
}

fn format_results(list: &RankedList, format: OutputFormat) -> String {
    let mut text = String::new();
    match format {
        OutputFormat::Csv => {
            text.push_str("rank,id,score\n");
            for (i, item) in list.items.iter().enumerate() {
                let _ = writeln!(text, "{},{},{}", i + 1, item.id, item.score);
            }
        }
        OutputFormat::Jsonl => {
            for (i, item) in list.items.iter().enumerate() {
                let line = serde_json::json!({ "rank": i + 1, "id": item.id, "score": item.score });
                let _ = writeln!(text, "{line}");
            }
        }
    }
    text
}

struct Loaded {
    model: Option<RecommenderModel>,
    matrix: Option<InteractionMatrix>,
}

fn load_for_query(ctx: &Context, common: &QueryCommon, need_matrix: bool) -> CliResult<Loaded> {
    let model = if common.tfidf {
        None
    } else {
        Some(RecommenderModel::load(require_path(
            common.model.clone(),
            &ctx.config,
            "model",
        )?)?)
    };
    let matrix = if need_matrix || common.tfidf {
        Some(InteractionMatrix::load(require_path(
            common.matrix.clone(),
            &ctx.config,
            "matrix",
        )?)?)
    } else {
        pick_path(common.matrix.clone(), &ctx.config, "matrix")
            .map(InteractionMatrix::load)
            .transpose()?
    };
    Ok(Loaded { model, matrix })
}

fn query(ctx: &Context, kind: QueryKind) -> CliResult<()> {
    let (list, common) = match kind {
        QueryKind::ComTech {
            company,
            include_observed,
            common,
        } => {
            let top = pick_or(common.top, &ctx.config, "top", DEFAULT_TOP)?;
            let loaded = load_for_query(ctx, &common, !include_observed)?;
            let list = match (&loaded.model, &loaded.matrix) {
                (Some(model), Some(matrix)) => {
                    retrieval::retrieve_com_tech(model, matrix, &company, top, include_observed)?
                }
                (Some(model), None) => {
                    // every technology is ranked, so the observed set is not needed
                    let empty = InteractionMatrix::from_entries(&[], &[], Vec::new())?;
                    retrieval::retrieve_com_tech(model, &empty, &company, top, true)?
                }
                (None, Some(matrix)) => retrieval::tfidf_retrieve_com_tech(matrix, &company, top)?,
                (None, None) => unreachable!("tf-idf queries always load the matrix"),
            };
            (list, common)
        }
        QueryKind::ComCom {
            company,
            similarity,
            common,
        } => {
            let top = pick_or(common.top, &ctx.config, "top", DEFAULT_TOP)?;
            let loaded = load_for_query(ctx, &common, false)?;
            let list = match (&loaded.model, &loaded.matrix) {
                (Some(model), _) => retrieval::retrieve_com_com(model, &company, top, similarity.into())?,
                (None, Some(matrix)) => retrieval::tfidf_retrieve_com_com(matrix, &company, top)?,
                (None, None) => unreachable!("tf-idf queries always load the matrix"),
            };
            (list, common)
        }
        QueryKind::TechCom { tech, common } => {
            let top = pick_or(common.top, &ctx.config, "top", DEFAULT_TOP)?;
            let loaded = load_for_query(ctx, &common, false)?;
            let list = match (&loaded.model, &loaded.matrix) {
                (Some(model), _) => retrieval::retrieve_tech_com(model, &tech, top)?,
                (None, Some(matrix)) => retrieval::tfidf_retrieve_tech_com(matrix, &tech, top)?,
                (None, None) => unreachable!("tf-idf queries always load the matrix"),
            };
            (list, common)
        }
    };
    emit(common.out.as_deref(), &format_results(&list, common.format))
}

fn evaluate(ctx: &Context, args: EvaluateArgs) -> CliResult<()> {
    let c = &ctx.config;
    let tasks: Vec<Task> = match pick::<String>(args.task, c, "evaluate.task")? {
        Some(s) => parse_list(&s, "task")?,
        None => vec![Task::ComCom, Task::TechCom],
    };
    let ks: Vec<usize> = match pick::<String>(args.k, c, "evaluate.k")? {
        Some(s) => parse_list(&s, "k")?,
        None => DEFAULT_KS.to_vec(),
    };
    if tasks.is_empty() || ks.is_empty() || ks.contains(&0) {
        return Err(CliError::Usage(
            "--task and --k need at least one value; k must be >= 1".into(),
        ));
    }
    let categories = load_categories(require_path(args.categories, c, "categories")?)?;
    let model_paths = if args.models.is_empty() {
        pick_path(None, c, "model").into_iter().collect()
    } else {
        args.models
    };
    let models = model_paths
        .iter()
        .map(RecommenderModel::load)
        .collect::<Result<Vec<_>, _>>()?;
    let matrix = if args.no_tfidf && models.is_empty() {
        return Err(CliError::Usage("nothing to evaluate: no --model and --no-tfidf".into()));
    } else if args.no_tfidf {
        pick_path(args.matrix, c, "matrix")
            .map(InteractionMatrix::load)
            .transpose()?
    } else {
        Some(InteractionMatrix::load(require_path(args.matrix, c, "matrix")?)?)
    };
    let placeholder = InteractionMatrix::from_entries(&[], &[], Vec::new())?;
    let mut retrievers: Vec<Box<dyn Retriever + '_>> = Vec::new();
    for (model, path) in models.iter().zip(&model_paths) {
        let mut r = ModelRetriever::new(model, matrix.as_ref().unwrap_or(&placeholder));
        r.similarity = args.similarity.into();
        if model_paths.len() > 1 {
            r.name = format!("{}:{}", model.variant, path.display());
        }
        retrievers.push(Box::new(r));
    }
    if !args.no_tfidf {
        if let Some(m) = &matrix {
            retrievers.push(Box::new(TfidfRetriever { matrix: m }));
        }
    }

    let mut csv = String::from(PrecisionReport::CSV_HEADER);
    csv.push('\n');
    let overlap = if args.union_overlap {
        Overlap::Union
    } else {
        Overlap::Intersection
    };
    for task in tasks {
        let reports = retrievers
            .iter()
            .map(|r| evaluate_task_with(task, r.as_ref(), &categories, &ks, overlap))
            .collect::<Result<Vec<_>, _>>()?;
        for r in &reports {
            for row in r.csv_rows() {
                csv.push_str(&row);
                csv.push('\n');
            }
        }
        eprint!("{}", format_table(&reports));
    }
    emit(args.out.as_deref(), &csv)
}
