use rand::Rng;

use super::{Hyperparams, ModelError};
use crate::kg::{EntityId, EntityKind, KnowledgeGraph, Triplet};

/// Attempts per corruption before a draw is accepted even if it is an
/// observed triplet.
pub const FILTER_RETRY_BUDGET: usize = 64;

/// Corrupted copies of one positive triplet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeBatch {
    /// Tail replaced.
    pub tail_corruptions: Vec<Triplet>,
    /// Head replaced.
    pub head_corruptions: Vec<Triplet>,
    /// Draws that exhausted the retry budget and were kept unfiltered.
    pub unfiltered: usize,
}

enum Pool {
    Kind(EntityKind, u32),
    Everything([u32; EntityKind::COUNT], u32),
}

impl Pool {
    fn for_slot(
        graph: &KnowledgeGraph,
        kind: EntityKind,
        hp: &Hyperparams,
    ) -> Result<Self, ModelError> {
        let pool = if hp.type_constrained_sampling {
            Pool::Kind(kind, graph.entity_count(kind) as u32)
        } else {
            let counts = graph.vocab().counts().map(|c| c as u32);
            Pool::Everything(counts, counts.iter().sum())
        };
        let size = match pool {
            Pool::Kind(_, n) | Pool::Everything(_, n) => n,
        };
        if size < 2 {
            let what = if hp.type_constrained_sampling {
                kind.name()
            } else {
                "all entities"
            };
            return Err(ModelError::PoolTooSmall(what.to_string()));
        }
        Ok(pool)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> EntityId {
        match *self {
            Pool::Kind(kind, n) => EntityId::new(kind, rng.gen_range(0..n)),
            Pool::Everything(counts, total) => {
                let mut i = rng.gen_range(0..total);
                for kind in EntityKind::ALL {
                    let c = counts[kind.index()];
                    if i < c {
                        return EntityId::new(kind, i);
                    }
                    i -= c;
                }
                unreachable!("index below total")
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Side {
    Head,
    Tail,
}

/// One corruption; the flag reports an exhausted retry budget.
fn corrupt<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    t: &Triplet,
    hp: &Hyperparams,
    pool: &Pool,
    side: Side,
    rng: &mut R,
) -> (Triplet, bool) {
    let mut attempt = 0;
    loop {
        let e = pool.draw(rng);
        attempt += 1;
        let (candidate, original) = match side {
            Side::Tail => (Triplet::new(t.head, t.relation, e), t.tail),
            Side::Head => (Triplet::new(e, t.relation, t.tail), t.head),
        };
        if !hp.filtered_sampling || (e != original && !graph.contains(&candidate)) {
            return (candidate, false);
        }
        if attempt >= FILTER_RETRY_BUDGET {
            return (candidate, true);
        }
    }
}

/// Draws `hp.negatives` tail corruptions and as many head corruptions of `t`.
///
/// In filtered mode a draw equal to the replaced entity or forming an observed
/// triplet is redrawn, up to [`FILTER_RETRY_BUDGET`] attempts.
pub fn sample_negatives<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    t: &Triplet,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<NegativeBatch, ModelError> {
    let tail_pool = Pool::for_slot(graph, t.tail.kind, hp)?;
    let head_pool = Pool::for_slot(graph, t.head.kind, hp)?;
    let mut batch = NegativeBatch {
        tail_corruptions: Vec::with_capacity(hp.negatives),
        head_corruptions: Vec::with_capacity(hp.negatives),
        unfiltered: 0,
    };

    for _ in 0..hp.negatives {
        let (neg, fallback) = corrupt(graph, t, hp, &tail_pool, Side::Tail, rng);
        batch.tail_corruptions.push(neg);
        batch.unfiltered += fallback as usize;
        let (neg, fallback) = corrupt(graph, t, hp, &head_pool, Side::Head, rng);
        batch.head_corruptions.push(neg);
        batch.unfiltered += fallback as usize;
    }
    Ok(batch)
}
