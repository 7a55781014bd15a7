//! Raw interaction and item-metadata records, the per-user train/test split,
//! review tokenization and graph construction.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kg::{EntityKind, KgError, KnowledgeGraph, RelationKind, RelationSet};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{source_name}:{line}: {message}")]
    Malformed {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("io error reading {source_name}: {source}")]
    Io {
        source_name: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no interaction records")]
    Empty,
    #[error(transparent)]
    Graph(#[from] KgError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user_key: String,
    pub item_key: String,
    pub review_text: Option<String>,
    pub timestamp: Option<i64>,
}

impl InteractionRecord {
    pub fn new(user_key: impl Into<String>, item_key: impl Into<String>) -> Self {
        Self {
            user_key: user_key.into(),
            item_key: item_key.into(),
            review_text: None,
            timestamp: None,
        }
    }

    pub fn with_review(mut self, text: impl Into<String>) -> Self {
        self.review_text = Some(text.into());
        self
    }

    pub fn with_timestamp(mut self, ts: i64) -> Self {
        self.timestamp = Some(ts);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ItemMetaRecord {
    pub item_key: String,
    pub brand: Option<String>,
    pub categories: Vec<String>,
    pub also_bought: Vec<String>,
    pub also_viewed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    /// Users with fewer items than this go entirely to train.
    pub min_train_items: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 42,
            min_train_items: 2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(IngestError::Config(format!(
                "train_fraction must lie in (0,1), got {}",
                self.train_fraction
            )));
        }
        if self.min_train_items == 0 {
            return Err(IngestError::Config(
                "min_train_items must be positive".into(),
            ));
        }
        Ok(())
    }
}

const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be",
    "been", "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has", "have",
    "he", "her", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just", "me",
    "my", "no", "not", "of", "on", "one", "or", "our", "out", "she", "so", "some", "than", "that",
    "the", "their", "them", "then", "there", "these", "they", "this", "to", "too", "up", "us",
    "very", "was", "we", "were", "what", "when", "which", "who", "will", "with", "would", "you",
    "your",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerConfig {
    pub min_token_length: usize,
    pub min_corpus_frequency: usize,
    pub max_vocab: usize,
    pub stopwords: HashSet<String>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            min_token_length: 2,
            min_corpus_frequency: 5,
            max_vocab: 50_000,
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.min_token_length == 0 || self.min_corpus_frequency == 0 || self.max_vocab == 0 {
            return Err(IngestError::Config(
                "tokenizer thresholds must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Stable 64-bit FNV-1a, used to derive per-user shuffle seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Per-user split. Each user's distinct items are ordered by earliest
/// timestamp when every record of that user carries one, otherwise by a
/// shuffle seeded from `spec.seed` and the user key. The first
/// `ceil(train_fraction * n)` items go to train. All records of an item stay
/// on the same side, and both outputs keep input order.
pub fn split_interactions(
    records: &[InteractionRecord],
    spec: &SplitSpec,
) -> Result<(Vec<InteractionRecord>, Vec<InteractionRecord>), IngestError> {
    spec.validate()?;
    if records.is_empty() {
        return Err(IngestError::Empty);
    }

    // user -> item -> earliest timestamp (None if any record lacks one)
    let mut per_user: BTreeMap<&str, BTreeMap<&str, Option<i64>>> = BTreeMap::new();
    for r in records {
        let items = per_user.entry(&r.user_key).or_default();
        items
            .entry(&r.item_key)
            .and_modify(|ts| {
                *ts = match (*ts, r.timestamp) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    _ => None,
                }
            })
            .or_insert(r.timestamp);
    }

    let mut test_pairs: HashSet<(&str, &str)> = HashSet::new();
    for (user, items) in &per_user {
        let n = items.len();
        if n < spec.min_train_items {
            continue;
        }
        let mut ordered: Vec<(&str, Option<i64>)> = items.iter().map(|(k, ts)| (*k, *ts)).collect();
        if ordered.iter().all(|(_, ts)| ts.is_some()) {
            ordered.sort_by_key(|&(k, ts)| (ts, k));
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ fnv1a(user.as_bytes()));
            ordered.shuffle(&mut rng);
        }
        // the epsilon keeps e.g. 0.7 * 10 from rounding up to 8
        let n_train = ((spec.train_fraction * n as f64) - 1e-9).ceil() as usize;
        let n_train = n_train.clamp(1, n);
        for (item, _) in &ordered[n_train..] {
            test_pairs.insert((user, item));
        }
    }

    let (test, train): (Vec<_>, Vec<_>) = records
        .iter()
        .cloned()
        .partition(|r| test_pairs.contains(&(r.user_key.as_str(), r.item_key.as_str())));
    Ok((train, test))
}

/// Lowercased maximal alphanumeric runs.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Review words that survive filtering, with the users and items whose
/// reviews mention them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordSets {
    /// Surviving words, by descending corpus frequency then lexicographically.
    pub vocabulary: Vec<String>,
    pub by_user: BTreeMap<String, BTreeSet<String>>,
    pub by_item: BTreeMap<String, BTreeSet<String>>,
}

pub fn tokenize_reviews(records: &[InteractionRecord], config: &TokenizerConfig) -> WordSets {
    let keep_token =
        |t: &str| t.chars().count() >= config.min_token_length && !config.stopwords.contains(t);

    let mut freq: HashMap<String, usize> = HashMap::new();
    for r in records {
        if let Some(text) = &r.review_text {
            for t in tokens(text).filter(|t| keep_token(t)) {
                *freq.entry(t).or_default() += 1;
            }
        }
    }
    let mut vocabulary: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(_, c)| *c >= config.min_corpus_frequency)
        .collect();
    vocabulary.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    vocabulary.truncate(config.max_vocab);
    let vocabulary: Vec<String> = vocabulary.into_iter().map(|(w, _)| w).collect();
    let allowed: HashSet<&str> = vocabulary.iter().map(String::as_str).collect();

    let mut by_user: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut by_item: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in records {
        let Some(text) = &r.review_text else { continue };
        for t in tokens(text).filter(|t| allowed.contains(t.as_str())) {
            by_user
                .entry(r.user_key.clone())
                .or_default()
                .insert(t.clone());
            by_item.entry(r.item_key.clone()).or_default().insert(t);
        }
    }
    WordSets {
        vocabulary,
        by_user,
        by_item,
    }
}

/// Counters for metadata that could not be attached to the graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    /// Metadata records whose item never appears in the training interactions.
    pub skipped_meta_records: usize,
    /// also_bought entries naming an unknown item (or the item itself).
    pub skipped_also_bought: usize,
    /// also_viewed entries naming an unknown item (or the item itself).
    pub skipped_also_viewed: usize,
}

/// Builds the graph from training interactions and item metadata with every
/// relation kind enabled.
pub fn build_graph(
    train: &[InteractionRecord],
    meta: &[ItemMetaRecord],
    config: &TokenizerConfig,
) -> Result<(KnowledgeGraph, BuildReport), IngestError> {
    build_graph_with(train, meta, config, RelationSet::ALL)
}

/// Like [`build_graph`], emitting only the relations in `relations`.
///
/// Items are known iff they occur in `train`; metadata for other items is
/// skipped and counted.
pub fn build_graph_with(
    train: &[InteractionRecord],
    meta: &[ItemMetaRecord],
    config: &TokenizerConfig,
    relations: RelationSet,
) -> Result<(KnowledgeGraph, BuildReport), IngestError> {
    use EntityKind::*;
    use RelationKind::*;
    config.validate()?;

    let mut graph = KnowledgeGraph::new();
    let mut report = BuildReport::default();
    let known_items: HashSet<&str> = train.iter().map(|r| r.item_key.as_str()).collect();

    for r in train {
        if r.user_key.is_empty() || r.item_key.is_empty() {
            return Err(KgError::EmptyKey.into());
        }
        if relations.contains(Buy) {
            graph.add_triplet(User, &r.user_key, Buy, Item, &r.item_key)?;
        }
    }

    for m in meta {
        if !known_items.contains(m.item_key.as_str()) {
            report.skipped_meta_records += 1;
            continue;
        }
        if relations.contains(BelongToBrand) {
            if let Some(brand) = m.brand.as_deref().filter(|b| !b.is_empty()) {
                graph.add_triplet(Item, &m.item_key, BelongToBrand, Brand, brand)?;
            }
        }
        if relations.contains(BelongToCategory) {
            for c in m.categories.iter().filter(|c| !c.is_empty()) {
                graph.add_triplet(Item, &m.item_key, BelongToCategory, Category, c)?;
            }
        }
        for (relation, list, skipped) in [
            (AlsoBought, &m.also_bought, &mut report.skipped_also_bought),
            (AlsoView, &m.also_viewed, &mut report.skipped_also_viewed),
        ] {
            if !relations.contains(relation) {
                continue;
            }
            for other in list {
                if other == &m.item_key || !known_items.contains(other.as_str()) {
                    *skipped += 1;
                    continue;
                }
                graph.add_triplet(Item, &m.item_key, relation, Item, other)?;
            }
        }
    }

    if relations.contains(MentionWord) {
        let words = tokenize_reviews(train, config);
        for (user, ws) in &words.by_user {
            for w in ws {
                graph.add_triplet(User, user, MentionWord, Word, w)?;
            }
        }
        for (item, ws) in &words.by_item {
            for w in ws {
                graph.add_triplet(Item, item, MentionWord, Word, w)?;
            }
        }
    }
    Ok((graph, report))
}

fn split_list(field: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    field
        .split('|')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .filter(|s| seen.insert(*s))
        .map(str::to_string)
        .collect()
}

fn malformed(source_name: &str, line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Malformed {
        source_name: source_name.to_string(),
        line,
        message: message.into(),
    }
}

fn read_lines<'a, R: BufRead + 'a>(
    reader: R,
    source_name: &'a str,
) -> impl Iterator<Item = Result<(usize, String), IngestError>> + 'a {
    reader
        .lines()
        .enumerate()
        .map(move |(i, l)| {
            l.map(|l| (i + 1, l.trim_end_matches('\r').to_string()))
                .map_err(|source| IngestError::Io {
                    source_name: source_name.to_string(),
                    source,
                })
        })
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

/// Parses `user<TAB>item<TAB>timestamp<TAB>review` lines. Timestamp and review
/// may be empty or omitted.
pub fn parse_interactions<R: BufRead>(
    reader: R,
    source_name: &str,
) -> Result<Vec<InteractionRecord>, IngestError> {
    let mut out = Vec::new();
    for line in read_lines(reader, source_name) {
        let (n, line) = line?;
        let mut fields = line.splitn(4, '\t');
        let user = fields.next().unwrap_or("").trim();
        let item = fields.next().unwrap_or("").trim();
        if user.is_empty() || item.is_empty() {
            return Err(malformed(source_name, n, "expected user_key<TAB>item_key"));
        }
        let timestamp = match fields.next().map(str::trim) {
            None | Some("") => None,
            Some(ts) => Some(
                ts.parse::<i64>()
                    .map_err(|_| malformed(source_name, n, format!("bad timestamp `{ts}`")))?,
            ),
        };
        let review_text = fields.next().filter(|t| !t.is_empty()).map(str::to_string);
        out.push(InteractionRecord {
            user_key: user.to_string(),
            item_key: item.to_string(),
            review_text,
            timestamp,
        });
    }
    Ok(out)
}

/// Parses `item<TAB>brand<TAB>cats<TAB>also_bought<TAB>also_viewed` lines with
/// `|`-separated lists. Trailing fields may be omitted.
pub fn parse_item_meta<R: BufRead>(
    reader: R,
    source_name: &str,
) -> Result<Vec<ItemMetaRecord>, IngestError> {
    let mut out = Vec::new();
    for line in read_lines(reader, source_name) {
        let (n, line) = line?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() > 5 {
            return Err(malformed(source_name, n, "more than 5 fields"));
        }
        let item = fields[0].trim();
        if item.is_empty() {
            return Err(malformed(source_name, n, "empty item key"));
        }
        let field = |i: usize| fields.get(i).copied().unwrap_or("");
        out.push(ItemMetaRecord {
            item_key: item.to_string(),
            brand: Some(field(1).trim())
                .filter(|b| !b.is_empty())
                .map(str::to_string),
            categories: split_list(field(2)),
            also_bought: split_list(field(3)),
            also_viewed: split_list(field(4)),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::RelationKind::*;
    use rand::Rng;

    fn cfg(min_freq: usize) -> TokenizerConfig {
        TokenizerConfig {
            min_corpus_frequency: min_freq,
            ..TokenizerConfig::default()
        }
    }

    fn user_items(records: &[InteractionRecord], user: &str) -> Vec<String> {
        records
            .iter()
            .filter(|r| r.user_key == user)
            .map(|r| r.item_key.clone())
            .collect()
    }

    #[test]
    fn seventy_thirty() {
        let records: Vec<_> = (0..10)
            .map(|i| InteractionRecord::new("u", format!("i{i}")))
            .collect();
        let (train, test) = split_interactions(&records, &SplitSpec::default()).unwrap();
        assert_eq!(train.len(), 7);
        assert_eq!(test.len(), 3);
    }

    #[test]
    fn single_item_user_stays_in_train() {
        let records = vec![InteractionRecord::new("u", "i")];
        let (train, test) = split_interactions(&records, &SplitSpec::default()).unwrap();
        assert_eq!((train.len(), test.len()), (1, 0));
    }

    #[test]
    fn min_train_items_guard() {
        let records: Vec<_> = (0..4)
            .map(|i| InteractionRecord::new("u", format!("i{i}")))
            .collect();
        let spec = SplitSpec {
            min_train_items: 5,
            ..SplitSpec::default()
        };
        let (train, test) = split_interactions(&records, &spec).unwrap();
        assert_eq!((train.len(), test.len()), (4, 0));
    }

    #[test]
    fn temporal_split_matches_sort_then_cut() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ts: Vec<i64> = (1..=10).collect();
        ts.shuffle(&mut rng);
        let records: Vec<_> = ts
            .iter()
            .map(|&t| InteractionRecord::new("u", format!("i{t}")).with_timestamp(t))
            .collect();
        let (train, test) = split_interactions(&records, &SplitSpec::default()).unwrap();

        let mut sorted = records.clone();
        sorted.sort_by_key(|r| r.timestamp);
        let expected: HashSet<_> = sorted[..7].iter().map(|r| r.item_key.clone()).collect();
        let got: HashSet<_> = train.iter().map(|r| r.item_key.clone()).collect();
        assert_eq!(got, expected);
        assert!(test.iter().all(|r| r.timestamp.unwrap() > 7));
    }

    #[test]
    fn bad_fraction_rejected() {
        let records = vec![InteractionRecord::new("u", "i")];
        for f in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            let spec = SplitSpec {
                train_fraction: f,
                ..SplitSpec::default()
            };
            assert!(matches!(
                split_interactions(&records, &spec),
                Err(IngestError::Config(_))
            ));
        }
        assert!(matches!(
            split_interactions(&[], &SplitSpec::default()),
            Err(IngestError::Empty)
        ));
    }

    fn random_records(seed: u64, n: usize, with_ts: bool) -> Vec<InteractionRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let r = InteractionRecord::new(
                    format!("u{}", rng.gen_range(0..20)),
                    format!("i{}", rng.gen_range(0..30)),
                );
                if with_ts {
                    r.with_timestamp(i as i64)
                } else {
                    r
                }
            })
            .collect()
    }

    #[test]
    fn split_partitions_and_is_deterministic() {
        for with_ts in [false, true] {
            let records = random_records(9, 400, with_ts);
            let spec = SplitSpec::default();
            let (train, test) = split_interactions(&records, &spec).unwrap();
            assert_eq!(train.len() + test.len(), records.len());
            let train_pairs: HashSet<_> = train
                .iter()
                .map(|r| (r.user_key.clone(), r.item_key.clone()))
                .collect();
            for r in &test {
                assert!(!train_pairs.contains(&(r.user_key.clone(), r.item_key.clone())));
            }
            let again = split_interactions(&records, &spec).unwrap();
            assert_eq!(again, (train.clone(), test.clone()));

            // shuffled input gives the same assignment
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
            let (train2, _) = split_interactions(&shuffled, &spec).unwrap();
            let train_pairs2: HashSet<_> = train2
                .iter()
                .map(|r| (r.user_key.clone(), r.item_key.clone()))
                .collect();
            assert_eq!(train_pairs, train_pairs2);

            for u in 0..20 {
                let user = format!("u{u}");
                let all: HashSet<_> = user_items(&records, &user).into_iter().collect();
                let tr: HashSet<_> = user_items(&train, &user).into_iter().collect();
                if all.len() >= spec.min_train_items {
                    let want = (0.7 * all.len() as f64 - 1e-9).ceil() as usize;
                    assert_eq!(tr.len(), want, "{user}");
                }
            }
        }
    }

    #[test]
    fn case_fold_and_dedup() {
        let records =
            vec![InteractionRecord::new("u", "i").with_review("Great battery, GREAT battery!")];
        let ws = tokenize_reviews(&records, &cfg(1));
        let expected: BTreeSet<String> =
            ["battery", "great"].iter().map(|s| s.to_string()).collect();
        assert_eq!(ws.by_user["u"], expected);
        assert_eq!(ws.by_item["i"], expected);
    }

    #[test]
    fn frequency_threshold_and_stopwords() {
        let records = vec![
            InteractionRecord::new("u1", "i1").with_review("the battery battery rare x"),
            InteractionRecord::new("u2", "i2").with_review("battery"),
        ];
        let ws = tokenize_reviews(&records, &cfg(2));
        assert_eq!(ws.vocabulary, vec!["battery".to_string()]);
        assert!(ws
            .by_user
            .values()
            .all(|s| !s.contains("rare") && !s.contains("the")));
    }

    #[test]
    fn vocabulary_cap_orders_by_frequency_then_lexicographic() {
        let records = vec![InteractionRecord::new("u", "i").with_review("bb aa aa cc cc dd dd dd")];
        let ws = tokenize_reviews(
            &records,
            &TokenizerConfig {
                max_vocab: 3,
                ..cfg(1)
            },
        );
        assert_eq!(ws.vocabulary, vec!["dd", "aa", "cc"]);
    }

    #[test]
    fn vocabulary_matches_independent_count() {
        let words = [
            "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "is", "x",
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let records: Vec<_> = (0..60)
            .map(|i| {
                let text: Vec<&str> = (0..rng.gen_range(0..8))
                    .map(|_| words[rng.gen_range(0..words.len())])
                    .collect();
                InteractionRecord::new(format!("u{}", i % 7), format!("i{}", i % 11))
                    .with_review(text.join(" ").to_uppercase())
            })
            .collect();
        let config = cfg(6);
        let ws = tokenize_reviews(&records, &config);

        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for r in &records {
            for w in r.review_text.as_ref().unwrap().split_whitespace() {
                *counts.entry(w.to_lowercase()).or_default() += 1;
            }
        }
        let expected: BTreeSet<String> = counts
            .into_iter()
            .filter(|(w, c)| *c >= 6 && w.len() >= 2 && !config.stopwords.contains(w))
            .map(|(w, _)| w)
            .collect();
        let got: BTreeSet<String> = ws.vocabulary.iter().cloned().collect();
        assert_eq!(got, expected);
        assert_eq!(ws.vocabulary.len(), expected.len());
    }

    #[test]
    fn single_interaction_with_meta() {
        let train = vec![InteractionRecord::new("u1", "i1").with_review("sturdy")];
        let meta = vec![ItemMetaRecord {
            item_key: "i1".into(),
            brand: Some("B".into()),
            categories: vec!["C".into()],
            ..Default::default()
        }];
        let (g, report) = build_graph(&train, &meta, &cfg(1)).unwrap();
        assert_eq!(g.relation_len(Buy), 1);
        assert_eq!(g.relation_len(BelongToBrand), 1);
        assert_eq!(g.relation_len(BelongToCategory), 1);
        // one surviving token: mentioned by both the user and the item
        assert_eq!(g.relation_len(MentionWord), 2);
        assert_eq!(g.len(), 5);
        assert_eq!(report, BuildReport::default());

        let (g, _) = build_graph(&train, &meta, &cfg(5)).unwrap();
        assert_eq!(g.len(), 3);
    }

    #[test]
    fn unknown_also_bought_is_skipped() {
        let train = vec![InteractionRecord::new("u1", "i1")];
        let meta = vec![
            ItemMetaRecord {
                item_key: "i1".into(),
                also_bought: vec!["ghost".into()],
                ..Default::default()
            },
            ItemMetaRecord {
                item_key: "nowhere".into(),
                ..Default::default()
            },
        ];
        let (g, report) = build_graph(&train, &meta, &cfg(1)).unwrap();
        assert_eq!(g.relation_len(AlsoBought), 0);
        assert_eq!(report.skipped_also_bought, 1);
        assert_eq!(report.skipped_meta_records, 1);
    }

    /// 50 records over 10 users and 8 items with hand-specified metadata; the
    /// expected triplets are enumerated independently of the builder.
    #[test]
    fn fixture_triplet_count_matches_enumeration() {
        let train: Vec<_> = (0..50)
            .map(|i| {
                InteractionRecord::new(format!("u{}", i % 10), format!("i{}", (i * 3) % 8))
                    .with_review(if i % 2 == 0 { "solid value" } else { "cheap" })
            })
            .collect();
        let meta: Vec<_> = (0..8)
            .map(|i| ItemMetaRecord {
                item_key: format!("i{i}"),
                brand: Some(format!("b{}", i % 3)),
                categories: vec![format!("c{}", i % 2), "all".into()],
                also_bought: vec![format!("i{}", (i + 1) % 8), format!("i{i}"), "zzz".into()],
                also_viewed: vec![format!("i{}", (i + 2) % 8)],
            })
            .collect();
        let (g, report) = build_graph(&train, &meta, &cfg(1)).unwrap();

        let mut expected: HashSet<(String, String, String)> = HashSet::new();
        for r in &train {
            expected.insert((
                format!("user:{}", r.user_key),
                "buy".into(),
                format!("item:{}", r.item_key),
            ));
            for w in r.review_text.as_ref().unwrap().split(' ') {
                expected.insert((
                    format!("user:{}", r.user_key),
                    "mention_word".into(),
                    format!("word:{w}"),
                ));
                expected.insert((
                    format!("item:{}", r.item_key),
                    "mention_word".into(),
                    format!("word:{w}"),
                ));
            }
        }
        for i in 0..8 {
            let it = format!("item:i{i}");
            expected.insert((
                it.clone(),
                "belong_to_brand".into(),
                format!("brand:b{}", i % 3),
            ));
            expected.insert((
                it.clone(),
                "belong_to_category".into(),
                format!("category:c{}", i % 2),
            ));
            expected.insert((
                it.clone(),
                "belong_to_category".into(),
                "category:all".into(),
            ));
            expected.insert((
                it.clone(),
                "also_bought".into(),
                format!("item:i{}", (i + 1) % 8),
            ));
            expected.insert((
                it.clone(),
                "also_view".into(),
                format!("item:i{}", (i + 2) % 8),
            ));
        }
        let got: HashSet<(String, String, String)> = g
            .triplets()
            .iter()
            .map(|t| {
                (
                    format!("{}:{}", t.head.kind, g.key(t.head)),
                    t.relation.to_string(),
                    format!("{}:{}", t.tail.kind, g.key(t.tail)),
                )
            })
            .collect();
        assert_eq!(got, expected);
        assert_eq!(g.len(), expected.len());
        assert_eq!(report.skipped_also_bought, 16);
        for r in RelationKind::ALL {
            assert!(g.by_relation(r).count() > 0);
        }
    }

    #[test]
    fn build_is_insensitive_to_record_order() {
        let records = random_records(4, 200, false)
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.with_review(format!("w{} w{} common", i % 5, i % 3)))
            .collect::<Vec<_>>();
        let key_set = |g: &KnowledgeGraph| -> BTreeSet<(String, RelationKind, String)> {
            g.triplets()
                .iter()
                .map(|t| {
                    (
                        g.key(t.head).to_string(),
                        t.relation,
                        g.key(t.tail).to_string(),
                    )
                })
                .collect()
        };
        let (a, _) = build_graph(&records, &[], &cfg(2)).unwrap();
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(77));
        let (b, _) = build_graph(&shuffled, &[], &cfg(2)).unwrap();
        assert_eq!(key_set(&a), key_set(&b));
    }

    #[test]
    fn restricted_build_emits_only_selected_relations() {
        let train = vec![
            InteractionRecord::new("u1", "i1").with_review("nice"),
            InteractionRecord::new("u1", "i2"),
        ];
        let meta = vec![ItemMetaRecord {
            item_key: "i1".into(),
            brand: Some("B".into()),
            categories: vec!["C".into()],
            also_bought: vec!["i2".into()],
            also_viewed: vec!["i2".into()],
        }];
        let buy = RelationSet::of(&[Buy]);
        let (g, _) = build_graph_with(&train, &meta, &cfg(1), buy).unwrap();
        assert_eq!(g.len(), g.relation_len(Buy));
        assert_eq!(g.len(), 2);
        let (full, _) = build_graph(&train, &meta, &cfg(1)).unwrap();
        let (all, _) = build_graph_with(&train, &meta, &cfg(1), RelationSet::ALL).unwrap();
        assert_eq!(full.triplets(), all.triplets());
        assert_eq!(full.vocab(), all.vocab());
    }

    #[test]
    fn parse_interaction_lines() {
        let text = "u1\ti1\t100\tGood stuff\nu2\ti2\t\t\n\nu3\ti3\n";
        let recs = parse_interactions(text.as_bytes(), "x.tsv").unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].timestamp, Some(100));
        assert_eq!(recs[0].review_text.as_deref(), Some("Good stuff"));
        assert_eq!(recs[1].timestamp, None);
        assert_eq!(recs[1].review_text, None);
        assert_eq!(recs[2].item_key, "i3");

        let err = parse_interactions("u1\ti1\tabc\n".as_bytes(), "x.tsv").unwrap_err();
        assert_eq!(err.to_string(), "x.tsv:1: bad timestamp `abc`");
        let err = parse_interactions("ok\tfine\nonlyuser\n".as_bytes(), "x.tsv").unwrap_err();
        assert!(err.to_string().starts_with("x.tsv:2:"));
    }

    #[test]
    fn parse_meta_lines() {
        let text = "i1\tAcme\tHome|Kitchen|Home\ti2|i3\t\ni2\t\t\t\t\ni3\n";
        let recs = parse_item_meta(text.as_bytes(), "m.tsv").unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].brand.as_deref(), Some("Acme"));
        assert_eq!(recs[0].categories, vec!["Home", "Kitchen"]);
        assert_eq!(recs[0].also_bought, vec!["i2", "i3"]);
        assert!(recs[0].also_viewed.is_empty());
        assert_eq!(recs[1].brand, None);
        assert_eq!(
            recs[2],
            ItemMetaRecord {
                item_key: "i3".into(),
                ..Default::default()
            }
        );
        assert!(parse_item_meta("\tb\n".as_bytes(), "m.tsv").is_err());
    }
}
