//! Typed user-item knowledge graph.
//!
//! Entities are interned per kind into dense local ids (first-seen order), so
//! embedding tables can be flat row-major matrices indexed by local id.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KgError {
    #[error("unknown entity kind `{0}`")]
    UnknownEntityKind(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("empty external key")]
    EmptyKey,
    #[error("relation {relation} does not accept {head} -> {tail}")]
    Signature {
        relation: RelationKind,
        head: EntityKind,
        tail: EntityKind,
    },
    #[error("self-loop on {relation} for {kind}:{key}")]
    SelfLoop {
        relation: RelationKind,
        kind: EntityKind,
        key: String,
    },
    #[error("unknown entity {kind}:{key}")]
    UnknownEntity { kind: EntityKind, key: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKind {
    User,
    Item,
    Word,
    Brand,
    Category,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [
        EntityKind::User,
        EntityKind::Item,
        EntityKind::Word,
        EntityKind::Brand,
        EntityKind::Category,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Item => "item",
            EntityKind::Word => "word",
            EntityKind::Brand => "brand",
            EntityKind::Category => "category",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EntityKind {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| KgError::UnknownEntityKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationKind {
    Buy,
    BelongToCategory,
    BelongToBrand,
    MentionWord,
    AlsoBought,
    AlsoView,
}

impl RelationKind {
    pub const ALL: [RelationKind; 6] = [
        RelationKind::Buy,
        RelationKind::BelongToCategory,
        RelationKind::BelongToBrand,
        RelationKind::MentionWord,
        RelationKind::AlsoBought,
        RelationKind::AlsoView,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationKind::Buy => "buy",
            RelationKind::BelongToCategory => "belong_to_category",
            RelationKind::BelongToBrand => "belong_to_brand",
            RelationKind::MentionWord => "mention_word",
            RelationKind::AlsoBought => "also_bought",
            RelationKind::AlsoView => "also_view",
        }
    }

    /// Whether `kind` may appear as the head of this relation.
    pub fn accepts_head(self, kind: EntityKind) -> bool {
        use EntityKind::*;
        match self {
            RelationKind::Buy => kind == User,
            RelationKind::MentionWord => kind == User || kind == Item,
            _ => kind == Item,
        }
    }

    pub fn tail_kind(self) -> EntityKind {
        match self {
            RelationKind::Buy | RelationKind::AlsoBought | RelationKind::AlsoView => {
                EntityKind::Item
            }
            RelationKind::BelongToCategory => EntityKind::Category,
            RelationKind::BelongToBrand => EntityKind::Brand,
            RelationKind::MentionWord => EntityKind::Word,
        }
    }

    pub fn check_signature(self, head: EntityKind, tail: EntityKind) -> Result<(), KgError> {
        if self.accepts_head(head) && self.tail_kind() == tail {
            Ok(())
        } else {
            Err(KgError::Signature {
                relation: self,
                head,
                tail,
            })
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelationKind {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelationKind::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| KgError::UnknownRelation(s.to_string()))
    }
}

/// Compact handle of an interned entity: its kind plus the dense id within that kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId {
    pub kind: EntityKind,
    pub local: u32,
}

impl EntityId {
    pub fn new(kind: EntityKind, local: u32) -> Self {
        Self { kind, local }
    }
}

/// Resolved entity: handle plus the original string identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntityRef<'a> {
    pub id: EntityId,
    pub external_key: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub head: EntityId,
    pub relation: RelationKind,
    pub tail: EntityId,
}

impl Triplet {
    pub fn new(head: EntityId, relation: RelationKind, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Bijection between external keys and dense local ids for one entity kind.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    keys: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn key(&self, local: u32) -> Option<&str> {
        self.keys.get(local as usize).map(String::as_str)
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn intern(&mut self, key: &str) -> u32 {
        if let Some(id) = self.index.get(key) {
            return *id;
        }
        let id = self.keys.len() as u32;
        self.keys.push(key.to_string());
        self.index.insert(key.to_string(), id);
        id
    }
}

impl FromIterator<String> for Vocab {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        let mut v = Vocab::default();
        for k in iter {
            v.intern(&k);
        }
        v
    }
}

/// One vocabulary per entity kind.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabularies {
    kinds: [Vocab; EntityKind::COUNT],
}

impl Vocabularies {
    pub fn new(kinds: [Vocab; EntityKind::COUNT]) -> Self {
        Self { kinds }
    }

    pub fn of(&self, kind: EntityKind) -> &Vocab {
        &self.kinds[kind.index()]
    }

    fn of_mut(&mut self, kind: EntityKind) -> &mut Vocab {
        &mut self.kinds[kind.index()]
    }

    pub fn counts(&self) -> [usize; EntityKind::COUNT] {
        std::array::from_fn(|i| self.kinds[i].len())
    }

    pub fn total(&self) -> usize {
        self.kinds.iter().map(Vocab::len).sum()
    }

    pub fn lookup(&self, kind: EntityKind, key: &str) -> Option<EntityId> {
        self.of(kind).get(key).map(|l| EntityId::new(kind, l))
    }

    pub fn key(&self, id: EntityId) -> Option<&str> {
        self.of(id.kind).key(id.local)
    }

    /// SHA-256 over every (kind, key) pair in id order. Pairs a model file
    /// with the graph it was trained on.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for kind in EntityKind::ALL {
            let v = self.of(kind);
            h.update(kind.name().as_bytes());
            h.update((v.len() as u64).to_le_bytes());
            for k in v.keys() {
                h.update((k.len() as u64).to_le_bytes());
                h.update(k.as_bytes());
            }
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub entities: [usize; EntityKind::COUNT],
    pub triplets: [usize; RelationKind::COUNT],
}

impl GraphStats {
    pub fn entity_count(&self, kind: EntityKind) -> usize {
        self.entities[kind.index()]
    }

    pub fn triplet_count(&self, relation: RelationKind) -> usize {
        self.triplets[relation.index()]
    }

    /// |buy| / (#users * #items), as a fraction; 0 for an empty graph.
    pub fn buy_density(&self) -> f64 {
        let cells =
            self.entity_count(EntityKind::User) as f64 * self.entity_count(EntityKind::Item) as f64;
        if cells == 0.0 {
            0.0
        } else {
            self.triplet_count(RelationKind::Buy) as f64 / cells
        }
    }

    pub fn table_header() -> String {
        format!(
            "{:<12} {:>8} {:>8} {:>14} {:>9}",
            "Dataset", "#Users", "#Items", "#Interactions", "Density"
        )
    }

    /// One row in the layout of a dataset-statistics table.
    pub fn table_row(&self, name: &str) -> String {
        format!(
            "{:<12} {:>8} {:>8} {:>14} {:>8.4}%",
            name,
            self.entity_count(EntityKind::User),
            self.entity_count(EntityKind::Item),
            self.triplet_count(RelationKind::Buy),
            self.buy_density() * 100.0
        )
    }
}

/// A subset of relation kinds, used to build restricted graphs for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RelationSet(u8);

impl RelationSet {
    pub const ALL: RelationSet = RelationSet(0b11_1111);

    pub fn empty() -> Self {
        RelationSet(0)
    }

    pub fn of(relations: &[RelationKind]) -> Self {
        relations.iter().fold(Self::empty(), |s, &r| s.with(r))
    }

    pub fn with(self, r: RelationKind) -> Self {
        RelationSet(self.0 | 1 << r.index())
    }

    pub fn contains(self, r: RelationKind) -> bool {
        self.0 & (1 << r.index()) != 0
    }

    pub fn relations(self) -> Vec<RelationKind> {
        RelationKind::ALL
            .into_iter()
            .filter(|&r| self.contains(r))
            .collect()
    }

    fn short_name(r: RelationKind) -> &'static str {
        match r {
            RelationKind::Buy => "buy",
            RelationKind::BelongToCategory => "category",
            RelationKind::BelongToBrand => "brand",
            RelationKind::MentionWord => "mention",
            RelationKind::AlsoBought => "also_bought",
            RelationKind::AlsoView => "also_view",
        }
    }

    /// `all`, or short names joined by `+` (e.g. `buy+category`).
    pub fn label(self) -> String {
        if self == Self::ALL {
            return "all".to_string();
        }
        self.relations()
            .into_iter()
            .map(Self::short_name)
            .collect::<Vec<_>>()
            .join("+")
    }

    /// The seven rows of the standard relation ablation.
    pub fn ablation_defaults() -> Vec<RelationSet> {
        use RelationKind::*;
        let buy = RelationSet::empty().with(Buy);
        vec![
            buy,
            buy.with(BelongToCategory),
            buy.with(BelongToBrand),
            buy.with(MentionWord),
            buy.with(AlsoView),
            buy.with(AlsoBought),
            RelationSet::ALL,
        ]
    }
}

impl fmt::Display for RelationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for RelationSet {
    type Err = KgError;

    /// Accepts `all`, short names (`category`, `mention`, ...) or full relation
    /// names, joined by `+`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "all" {
            return Ok(Self::ALL);
        }
        let mut set = Self::empty();
        for part in s.split('+').map(str::trim) {
            let r = RelationKind::ALL
                .into_iter()
                .find(|&r| Self::short_name(r) == part || r.name() == part)
                .ok_or_else(|| KgError::UnknownRelation(part.to_string()))?;
            set = set.with(r);
        }
        Ok(set)
    }
}

/// Deduplicated triplet store with per-relation and per-head indexes.
///
/// Built by a single writer; afterwards it is only read, and is `Sync`.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    vocab: Vocabularies,
    triplets: Vec<Triplet>,
    set: HashSet<Triplet>,
    by_relation: [Vec<usize>; RelationKind::COUNT],
    by_head: HashMap<(EntityId, RelationKind), Vec<EntityId>>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interns both endpoints and inserts the triplet. Returns `Ok(false)` for
    /// a duplicate. On error the graph is left untouched.
    pub fn add_triplet(
        &mut self,
        head_kind: EntityKind,
        head_key: &str,
        relation: RelationKind,
        tail_kind: EntityKind,
        tail_key: &str,
    ) -> Result<bool, KgError> {
        if head_key.is_empty() || tail_key.is_empty() {
            return Err(KgError::EmptyKey);
        }
        relation.check_signature(head_kind, tail_kind)?;
        if head_kind == tail_kind && head_key == tail_key {
            return Err(KgError::SelfLoop {
                relation,
                kind: head_kind,
                key: head_key.to_string(),
            });
        }
        let head = EntityId::new(head_kind, self.vocab.of_mut(head_kind).intern(head_key));
        let tail = EntityId::new(tail_kind, self.vocab.of_mut(tail_kind).intern(tail_key));
        Ok(self.insert(Triplet::new(head, relation, tail)))
    }

    fn insert(&mut self, t: Triplet) -> bool {
        if !self.set.insert(t) {
            return false;
        }
        self.by_relation[t.relation.index()].push(self.triplets.len());
        self.by_head
            .entry((t.head, t.relation))
            .or_default()
            .push(t.tail);
        self.triplets.push(t);
        true
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.set.contains(t)
    }

    /// Tails reachable from `head` via `relation`, in insertion order. Unknown
    /// heads yield an empty slice.
    pub fn tails_of(&self, head: EntityId, relation: RelationKind) -> &[EntityId] {
        self.by_head
            .get(&(head, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn by_relation(&self, relation: RelationKind) -> impl Iterator<Item = &Triplet> + '_ {
        self.by_relation[relation.index()]
            .iter()
            .map(move |&i| &self.triplets[i])
    }

    pub fn relation_len(&self, relation: RelationKind) -> usize {
        self.by_relation[relation.index()].len()
    }

    pub fn vocab(&self) -> &Vocabularies {
        &self.vocab
    }

    pub fn entity_count(&self, kind: EntityKind) -> usize {
        self.vocab.of(kind).len()
    }

    pub fn lookup(&self, kind: EntityKind, key: &str) -> Option<EntityId> {
        self.vocab.lookup(kind, key)
    }

    pub fn resolve(&self, id: EntityId) -> Option<EntityRef<'_>> {
        self.vocab
            .key(id)
            .map(|external_key| EntityRef { id, external_key })
    }

    pub fn key(&self, id: EntityId) -> &str {
        self.vocab.key(id).unwrap_or("")
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            entities: self.vocab.counts(),
            triplets: std::array::from_fn(|i| self.by_relation[i].len()),
        }
    }

    /// Copy of the graph keeping only the listed relations. Entities that
    /// appear only in dropped triplets do not survive.
    pub fn restricted_to(&self, keep: &[RelationKind]) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        for t in &self.triplets {
            if keep.contains(&t.relation) {
                g.add_triplet(
                    t.head.kind,
                    self.key(t.head),
                    t.relation,
                    t.tail.kind,
                    self.key(t.tail),
                )
                .expect("triplets of a valid graph stay valid");
            }
        }
        g
    }
}
