//! Commands behind the `kgrec` binary: build a graph from review files, train
//! embeddings, recommend, evaluate and run relation ablations.

pub mod config;

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use kgrec::eval::{ablate, evaluate, EvalError, EvalReport, GroundTruth, HeldOutData, RunMeta};
use kgrec::ingest::{
    build_graph_with, parse_interactions, parse_item_meta, split_interactions, IngestError,
    InteractionRecord, ItemMetaRecord,
};
use kgrec::io::{
    read_pairs, read_store, read_triplets, write_loss_csv, write_pairs, write_store,
    write_triplets, FormatError, StoreFile,
};
use kgrec::kg::{EntityKind, GraphStats, KnowledgeGraph};
use kgrec::model::{train, ModelError};
use kgrec::recommend::{recommend_all, write_recommendations};

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Eval(String),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Short machine-readable class for the `error<TAB>class<TAB>message` line.
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Input(_) => "input",
            CliError::Mismatch(_) => "mismatch",
            CliError::Model(_) => "model",
            CliError::Eval(_) => "eval",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Input(_) => 4,
            CliError::Mismatch(_) => 5,
            CliError::Model(_) | CliError::Eval(_) => 6,
        }
    }

    pub fn message(&self) -> String {
        self.to_string()
    }

    /// One line, tab-separated, with no embedded newlines or tabs.
    pub fn error_line(&self) -> String {
        let msg = self.message().replace(['\t', '\n', '\r'], " ");
        format!("error\t{}\t{msg}", self.class())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Config(m) => CliError::Config(m),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::DigestMismatch { .. } => CliError::Mismatch(e.to_string()),
            FormatError::Model(ModelError::Mismatch(_)) => CliError::Mismatch(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(m) => CliError::Config(m),
            EvalError::Model(m) => CliError::Model(m),
            EvalError::Ingest(i) => i.into(),
            other => CliError::Eval(other.to_string()),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> Result<(), FormatError>,
) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| match e {
        FormatError::Io(source) => CliError::io(path, source),
        other => other.into(),
    })?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn log(line: impl AsRef<str>) {
    eprintln!("kgrec: {}", line.as_ref());
}

fn load_records(
    config: &RunConfig,
) -> Result<(Vec<InteractionRecord>, Vec<ItemMetaRecord>), CliError> {
    let interactions = config.input("interactions", &config.interactions)?;
    let records = parse_interactions(open(interactions)?, &source_name(interactions))?;
    let meta = match &config.metadata {
        Some(_) => {
            let path = config.input("metadata", &config.metadata)?;
            parse_item_meta(open(path)?, &source_name(path))?
        }
        None => Vec::new(),
    };
    if records.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no interactions",
            interactions.display()
        )));
    }
    Ok((records, meta))
}

fn load_graph(config: &RunConfig) -> Result<KnowledgeGraph, CliError> {
    let path = config.input("graph", &config.graph)?;
    Ok(read_triplets(open(path)?, &source_name(path))?)
}

/// Loads the model and rejects it unless its vocabulary matches `graph`.
fn load_model(config: &RunConfig, graph: &KnowledgeGraph) -> Result<StoreFile, CliError> {
    let path = config.input("model", &config.model)?;
    let file = read_store(open(path)?)?;
    file.check_graph(graph).map_err(|e| {
        CliError::Mismatch(format!(
            "model {} does not belong to this graph: {e}",
            path.display()
        ))
    })?;
    Ok(file)
}

fn dataset_name(config: &RunConfig) -> String {
    config
        .interactions
        .as_deref()
        .and_then(Path::file_stem)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

#[derive(Debug)]
pub struct BuildSummary {
    pub graph: KnowledgeGraph,
    pub stats: GraphStats,
    pub train_records: usize,
    pub test_pairs: usize,
}

/// Split, tokenize and build; writes the triplet file and the held-out pairs.
pub fn cmd_build_graph(config: &RunConfig, out: &mut dyn Write) -> Result<BuildSummary, CliError> {
    config.validate()?;
    let graph_path = config.output_path("graph", &config.graph)?;
    let pairs_path = config.output_path("test_pairs", &config.test_pairs)?;
    let (records, meta) = load_records(config)?;
    let (train_set, test) = split_interactions(&records, &config.split)?;
    if train_set.is_empty() {
        return Err(CliError::Input("training split is empty".into()));
    }
    let (graph, report) = build_graph_with(&train_set, &meta, &config.tokenizer, config.relations)?;
    if report.skipped_meta_records + report.skipped_also_bought + report.skipped_also_viewed > 0 {
        log(format!(
            "skipped {} metadata records for unknown items, {} also_bought and {} also_view links",
            report.skipped_meta_records, report.skipped_also_bought, report.skipped_also_viewed
        ));
    }
    write_file(graph_path, |w| write_triplets(w, &graph))?;
    let mut seen = HashSet::new();
    let pairs: Vec<(&str, &str)> = test
        .iter()
        .map(|r| (r.user_key.as_str(), r.item_key.as_str()))
        .filter(|p| seen.insert(*p))
        .collect();
    write_file(pairs_path, |w| write_pairs(w, pairs.iter().copied()))?;

    let stats = graph.stats();
    let io_err = |e| CliError::io(Path::new("<stdout>"), e);
    writeln!(out, "{}", GraphStats::table_header()).map_err(io_err)?;
    writeln!(out, "{}", stats.table_row(&dataset_name(config))).map_err(io_err)?;
    log(format!(
        "{} triplets, {} train records, {} held-out pairs",
        graph.len(),
        train_set.len(),
        pairs.len()
    ));
    Ok(BuildSummary {
        graph,
        stats,
        train_records: train_set.len(),
        test_pairs: pairs.len(),
    })
}

fn require_epochs(config: &RunConfig) -> Result<(), CliError> {
    if config.hyperparams.epochs == 0 {
        return Err(CliError::Config(
            "`epochs` must be set to at least 1".into(),
        ));
    }
    Ok(())
}

/// Trains on the graph file; writes the model and the per-epoch loss CSV.
pub fn cmd_train(config: &RunConfig) -> Result<Vec<f64>, CliError> {
    config.validate()?;
    require_epochs(config)?;
    let model_path = config.output_path("model", &config.model)?;
    let loss_path = config.loss_csv.clone().unwrap_or_else(|| {
        let mut p = model_path.as_os_str().to_owned();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    config::check_output_dir("loss_csv", &loss_path)?;
    let graph = load_graph(config)?;
    let hp = &config.hyperparams;
    let started = Instant::now();
    let out = train(&graph, hp)?;
    log(format!(
        "trained {} epochs over {} triplets in {:.1}s, final loss {:.4}",
        hp.epochs,
        graph.len(),
        started.elapsed().as_secs_f64(),
        out.losses.last().copied().unwrap_or(f64::NAN)
    ));
    if out.unfiltered > 0 {
        log(format!(
            "{} negatives kept unfiltered after exhausting retries",
            out.unfiltered
        ));
    }
    write_file(model_path, |w| {
        write_store(w, &out.store, graph.vocab(), hp.normalize_entities)
    })?;
    write_file(&loss_path, |w| write_loss_csv(w, &out.losses))?;
    Ok(out.losses)
}

/// Top-N lists for the given user keys, or for every user when empty.
pub fn cmd_recommend(
    config: &RunConfig,
    users: &[String],
    out: &mut dyn Write,
) -> Result<usize, CliError> {
    config.validate()?;
    let graph = load_graph(config)?;
    let model = load_model(config, &graph)?;
    let ids = if users.is_empty() {
        (0..graph.entity_count(EntityKind::User) as u32)
            .map(|i| kgrec::kg::EntityId::new(EntityKind::User, i))
            .collect()
    } else {
        users
            .iter()
            .map(|u| {
                graph
                    .lookup(EntityKind::User, u)
                    .ok_or_else(|| CliError::Input(format!("unknown user `{u}`")))
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    let lists = recommend_all(&model.store, &graph, &ids, config.top_n)?;
    match &config.output {
        Some(_) => {
            let path = config.output_path("output", &config.output)?;
            let mut w = create(path)?;
            write_recommendations(&mut w, &graph, &lists)
                .and_then(|_| w.flush())
                .map_err(|e| CliError::io(path, e))?;
        }
        None => write_recommendations(out, &graph, &lists)
            .map_err(|e| CliError::io(Path::new("<stdout>"), e))?,
    }
    Ok(lists.len())
}

fn emit_reports(
    config: &RunConfig,
    reports: &[EvalReport],
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let table = EvalReport::table(reports);
    let records: String = reports.iter().map(|r| r.record_line() + "\n").collect();
    let stdout_err = |e| CliError::io(Path::new("<stdout>"), e);
    write!(out, "{table}").map_err(stdout_err)?;
    if let Some(path) = &config.report {
        config::check_output_dir("report", path)?;
        std::fs::write(path, &table).map_err(|e| CliError::io(path, e))?;
    }
    if let Some(path) = &config.record {
        config::check_output_dir("record", path)?;
        let header = "subset\tk\tndcg\trecall\thit\tprecision\tusers\tseed\n";
        std::fs::write(path, format!("{header}{records}")).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

/// Scores the model on the held-out pairs at cutoff `top_n`.
pub fn cmd_evaluate(config: &RunConfig, out: &mut dyn Write) -> Result<EvalReport, CliError> {
    config.validate()?;
    let graph = load_graph(config)?;
    let model = load_model(config, &graph)?;
    let pairs_path = config.input("test_pairs", &config.test_pairs)?;
    let pairs = read_pairs(open(pairs_path)?, &source_name(pairs_path))?;
    let truth =
        GroundTruth::from_pairs(&graph, pairs.iter().map(|(u, i)| (u.as_str(), i.as_str())))?;
    let unseen: usize = truth.users().map(|(_, t)| t.unseen).sum();
    if unseen > 0 {
        log(format!(
            "{unseen} held-out items never appear in the graph and cannot be ranked"
        ));
    }
    let mut report = evaluate(&model.store, &graph, &truth, config.top_n)?;
    report.meta = RunMeta {
        hyperparams: None,
        relations: Some(config.relations),
        seed: config.hyperparams.seed,
        wall_time_secs: report.meta.wall_time_secs,
    };
    emit_reports(config, std::slice::from_ref(&report), out)?;
    Ok(report)
}

/// Trains and evaluates one model per relation subset on a shared split.
pub fn cmd_ablate(config: &RunConfig, out: &mut dyn Write) -> Result<Vec<EvalReport>, CliError> {
    config.validate()?;
    require_epochs(config)?;
    if let Some(bad) = config
        .ablation
        .iter()
        .find(|s| !s.contains(kgrec::kg::RelationKind::Buy))
    {
        return Err(CliError::Config(format!(
            "relation subset `{bad}` lacks buy"
        )));
    }
    let (records, meta) = load_records(config)?;
    let (train_set, test) = split_interactions(&records, &config.split)?;
    let data = HeldOutData {
        train: &train_set,
        test: &test,
        meta: &meta,
    };
    let results = ablate(
        data,
        &config.tokenizer,
        &config.ablation,
        &config.hyperparams,
        config.top_n,
    )?;
    let reports: Vec<EvalReport> = results.into_iter().map(|(_, r)| r).collect();
    emit_reports(config, &reports, out)?;
    Ok(reports)
}
