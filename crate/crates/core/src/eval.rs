//! Top-K ranking metrics, held-out evaluation and relation ablations.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{
    build_graph_with, IngestError, InteractionRecord, ItemMetaRecord, TokenizerConfig,
};
use crate::kg::{EntityId, EntityKind, KnowledgeGraph, RelationKind, RelationSet};
use crate::model::{train, EmbeddingStore, Hyperparams, ModelError, Real};
use crate::recommend::recommend_top_n;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no user has held-out items")]
    NoUsers,
    #[error("held-out pair ({user}, {item}) is a training purchase")]
    Leakage { user: String, item: String },
    #[error("held-out user `{0}` is not in the graph")]
    UnknownUser(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Per-user metrics, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub ndcg: f64,
    pub recall: f64,
    pub hit: f64,
    pub precision: f64,
}

/// Binary-relevance metrics over the first `k` entries of `ranked`.
/// `total_relevant` may exceed the relevant items that can appear in the
/// ranking; it sets the recall denominator and the ideal DCG.
pub fn metrics_with<T>(
    ranked: &[T],
    is_relevant: impl Fn(&T) -> bool,
    total_relevant: usize,
    k: usize,
) -> Metrics {
    assert!(total_relevant > 0, "empty relevant set");
    assert!(k > 0, "k must be positive");
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (rank, item) in ranked.iter().take(k).enumerate() {
        if is_relevant(item) {
            hits += 1;
            dcg += 1.0 / ((rank + 2) as f64).log2();
        }
    }
    let idcg: f64 = (1..=k.min(total_relevant))
        .map(|i| 1.0 / ((i + 1) as f64).log2())
        .sum();
    Metrics {
        ndcg: dcg / idcg,
        recall: hits as f64 / total_relevant as f64,
        hit: if hits > 0 { 1.0 } else { 0.0 },
        precision: hits as f64 / k as f64,
    }
}

/// NDCG, recall, hit and precision at `k` for one ranked list.
pub fn metrics_at_k<T: Eq + Hash>(ranked: &[T], relevant: &HashSet<T>, k: usize) -> Metrics {
    metrics_with(ranked, |x| relevant.contains(x), relevant.len(), k)
}

/// Held-out purchases of one user.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UserTruth {
    /// Held-out items present in the graph.
    pub items: BTreeSet<EntityId>,
    /// Held-out items the graph never saw; they count as relevant but can
    /// never be ranked.
    pub unseen: usize,
}

impl UserTruth {
    pub fn total(&self) -> usize {
        self.items.len() + self.unseen
    }
}

/// Per-user held-out purchases, keyed by user in id order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    users: BTreeMap<EntityId, UserTruth>,
}

impl GroundTruth {
    /// Resolves `(user_key, item_key)` pairs against `graph`. Duplicate pairs
    /// collapse.
    pub fn from_pairs<'a>(
        graph: &KnowledgeGraph,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, EvalError> {
        let mut seen_unknown: BTreeMap<EntityId, BTreeSet<&str>> = BTreeMap::new();
        let mut users: BTreeMap<EntityId, UserTruth> = BTreeMap::new();
        for (u, i) in pairs {
            let user = graph
                .lookup(EntityKind::User, u)
                .ok_or_else(|| EvalError::UnknownUser(u.to_string()))?;
            let truth = users.entry(user).or_default();
            match graph.lookup(EntityKind::Item, i) {
                Some(item) => {
                    truth.items.insert(item);
                }
                None => {
                    if seen_unknown.entry(user).or_default().insert(i) {
                        truth.unseen += 1;
                    }
                }
            }
        }
        Ok(Self { users })
    }

    pub fn from_records(
        graph: &KnowledgeGraph,
        test: &[InteractionRecord],
    ) -> Result<Self, EvalError> {
        Self::from_pairs(
            graph,
            test.iter()
                .map(|r| (r.user_key.as_str(), r.item_key.as_str())),
        )
    }

    pub fn insert(&mut self, user: EntityId, truth: UserTruth) {
        self.users.insert(user, truth);
    }

    pub fn users(&self) -> impl Iterator<Item = (&EntityId, &UserTruth)> {
        self.users.iter()
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Fails on the first held-out pair that is also a training purchase.
    pub fn check_disjoint(&self, graph: &KnowledgeGraph) -> Result<(), EvalError> {
        for (user, truth) in &self.users {
            let bought = graph.tails_of(*user, RelationKind::Buy);
            if let Some(item) = truth.items.iter().find(|i| bought.contains(i)) {
                return Err(EvalError::Leakage {
                    user: graph.key(*user).to_string(),
                    item: graph.key(*item).to_string(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMeta {
    pub hyperparams: Option<Hyperparams>,
    pub relations: Option<RelationSet>,
    pub seed: u64,
    pub wall_time_secs: f64,
}

/// Means over evaluated users, as percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ndcg: f64,
    pub recall: f64,
    pub hit_ratio: f64,
    pub precision: f64,
    pub k: usize,
    pub users_evaluated: usize,
    pub meta: RunMeta,
}

impl EvalReport {
    pub fn label(&self) -> String {
        self.meta
            .relations
            .map(|r| r.label())
            .unwrap_or_else(|| "all".to_string())
    }

    /// `subset<TAB>k<TAB>ndcg<TAB>recall<TAB>hit<TAB>precision<TAB>users<TAB>seed`
    pub fn record_line(&self) -> String {
        format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            self.label(),
            self.k,
            self.ndcg,
            self.recall,
            self.hit_ratio,
            self.precision,
            self.users_evaluated,
            self.meta.seed
        )
    }

    /// Aligned table with one row per report: NDCG, Recall, HT, Prec.
    pub fn table(reports: &[EvalReport]) -> String {
        let width = reports
            .iter()
            .map(|r| r.label().len())
            .chain(["Relations".len()])
            .max()
            .unwrap_or(9);
        let k = reports.first().map(|r| r.k).unwrap_or(10);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}   (top-{k}, %)",
            "Relations", "NDCG", "Recall", "HT", "Prec"
        );
        for r in reports {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.3}  {:>8.3}  {:>8.3}  {:>8.3}",
                r.label(),
                r.ndcg,
                r.recall,
                r.hit_ratio,
                r.precision
            );
        }
        out
    }
}

/// Per-user metrics for every user with held-out items, in user order.
pub fn per_user_metrics<F: Real>(
    store: &EmbeddingStore<F>,
    graph: &KnowledgeGraph,
    truth: &GroundTruth,
    k: usize,
) -> Result<Vec<(EntityId, Metrics)>, EvalError> {
    if k == 0 {
        return Err(EvalError::Config("k must be positive".into()));
    }
    truth.check_disjoint(graph)?;
    let users: Vec<(&EntityId, &UserTruth)> =
        truth.users().filter(|(_, t)| t.total() > 0).collect();
    users
        .par_iter()
        .map(|(user, t)| {
            let list = recommend_top_n(store, graph, **user, k)?;
            let ranked: Vec<EntityId> = list.item_ids().collect();
            Ok((
                **user,
                metrics_with(&ranked, |i| t.items.contains(i), t.total(), k),
            ))
        })
        .collect()
}

/// Scores the top-`k` list of every user with held-out items and averages.
/// Read-only over the store and graph.
pub fn evaluate<F: Real>(
    store: &EmbeddingStore<F>,
    graph: &KnowledgeGraph,
    truth: &GroundTruth,
    k: usize,
) -> Result<EvalReport, EvalError> {
    let started = Instant::now();
    let per_user = per_user_metrics(store, graph, truth, k)?;
    if per_user.is_empty() {
        return Err(EvalError::NoUsers);
    }
    let n = per_user.len() as f64;
    let mean = |f: fn(&Metrics) -> f64| 100.0 * per_user.iter().map(|(_, m)| f(m)).sum::<f64>() / n;
    Ok(EvalReport {
        ndcg: mean(|m| m.ndcg),
        recall: mean(|m| m.recall),
        hit_ratio: mean(|m| m.hit),
        precision: mean(|m| m.precision),
        k,
        users_evaluated: per_user.len(),
        meta: RunMeta {
            wall_time_secs: started.elapsed().as_secs_f64(),
            ..RunMeta::default()
        },
    })
}

/// One split shared by every run of an ablation.
#[derive(Debug, Clone, Copy)]
pub struct HeldOutData<'a> {
    pub train: &'a [InteractionRecord],
    pub test: &'a [InteractionRecord],
    pub meta: &'a [ItemMetaRecord],
}

/// Builds a graph restricted to each relation subset, trains it from
/// `hp.seed`, and evaluates on the same held-out purchases. Every subset must
/// include `buy`; this is checked before any training starts.
pub fn ablate(
    data: HeldOutData<'_>,
    tokenizer: &TokenizerConfig,
    subsets: &[RelationSet],
    hp: &Hyperparams,
    k: usize,
) -> Result<Vec<(RelationSet, EvalReport)>, EvalError> {
    if let Some(bad) = subsets.iter().find(|s| !s.contains(RelationKind::Buy)) {
        return Err(EvalError::Config(format!(
            "relation subset `{bad}` lacks buy"
        )));
    }
    hp.validate()?;
    subsets
        .iter()
        .map(|&subset| {
            let started = Instant::now();
            let (graph, _) = build_graph_with(data.train, data.meta, tokenizer, subset)?;
            let out = train(&graph, hp)?;
            let truth = GroundTruth::from_records(&graph, data.test)?;
            let mut report = evaluate(&out.store, &graph, &truth, k)?;
            report.meta = RunMeta {
                hyperparams: Some(hp.clone()),
                relations: Some(subset),
                seed: hp.seed,
                wall_time_secs: started.elapsed().as_secs_f64(),
            };
            Ok((subset, report))
        })
        .collect()
}
