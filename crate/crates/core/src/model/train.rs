use std::sync::atomic::{AtomicU32, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{loss_and_grads, Rows, Slot};
use super::{sample_negatives, sgd_step, EmbeddingStore, Hyperparams, ModelError};
use crate::kg::{EntityKind, KnowledgeGraph, RelationKind};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    /// Positive triplets visited.
    pub visits: usize,
    /// Negatives kept unfiltered after the retry budget ran out.
    pub unfiltered: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub store: EmbeddingStore<f32>,
    /// Mean per-triplet loss of each epoch.
    pub losses: Vec<f64>,
    pub unfiltered: usize,
}

/// One pass over every triplet in a shuffled order, one SGD update per
/// triplet with all of its negatives folded in. Entity rows are renormalized
/// at the end when `hp.normalize_entities` is set.
///
/// With `hp.threads > 1` the triplets are split across workers that update the
/// shared tables without locks; results are then not bit-reproducible.
pub fn train_epoch<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    store: &mut EmbeddingStore<f32>,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<EpochStats, ModelError> {
    hp.validate()?;
    store.check_against(graph)?;
    if store.dim() != hp.dim {
        return Err(ModelError::Mismatch(format!(
            "store dim {} but hyperparameters say {}",
            store.dim(),
            hp.dim
        )));
    }
    let mut order: Vec<usize> = (0..graph.len()).collect();
    order.shuffle(rng);

    let (total, unfiltered) = if hp.threads <= 1 {
        sequential_pass(graph, store, hp, &order, rng)?
    } else {
        parallel_pass(graph, store, hp, &order, rng)?
    };
    if hp.normalize_entities {
        store.renormalize_entities();
    }
    let visits = order.len();
    Ok(EpochStats {
        mean_loss: if visits == 0 {
            0.0
        } else {
            total / visits as f64
        },
        visits,
        unfiltered,
    })
}

fn sequential_pass<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    store: &mut EmbeddingStore<f32>,
    hp: &Hyperparams,
    order: &[usize],
    rng: &mut R,
) -> Result<(f64, usize), ModelError> {
    let margin = hp.margin as f32;
    let (mut total, mut unfiltered) = (0.0f64, 0usize);
    for &i in order {
        let t = graph.triplets()[i];
        let neg = sample_negatives(graph, &t, hp, rng)?;
        unfiltered += neg.unfiltered;
        let (loss, grads) = loss_and_grads(&*store, store.dim(), &t, &neg, margin)?;
        sgd_step(store, &grads, hp)?;
        total += loss as f64;
    }
    Ok((total, unfiltered))
}

/// Shared view of the tables for lock-free updates. Each coordinate is read
/// and written atomically; concurrent writers race per coordinate and the
/// last one wins.
struct SharedTables<'a> {
    dim: usize,
    entities: [&'a [AtomicU32]; EntityKind::COUNT],
    relations: &'a [AtomicU32],
}

fn as_atomic(v: &mut [f32]) -> &[AtomicU32] {
    // SAFETY: f32 and AtomicU32 have the same size and alignment, and the
    // exclusive borrow rules out non-atomic access for the returned lifetime.
    unsafe { &*(v as *mut [f32] as *const [AtomicU32]) }
}

impl SharedTables<'_> {
    fn row(&self, slot: Slot) -> Option<&[AtomicU32]> {
        let (m, i) = match slot {
            Slot::Entity(id) => (self.entities[id.kind.index()], id.local as usize),
            Slot::Relation(r) => (self.relations, r.index()),
        };
        m.get(i * self.dim..(i + 1) * self.dim)
    }
}

/// Rows copied out of the shared tables for one update.
struct Snapshot {
    dim: usize,
    slots: Vec<Slot>,
    data: Vec<f32>,
}

impl Snapshot {
    fn gather(shared: &SharedTables<'_>, slots: impl IntoIterator<Item = Slot>) -> Self {
        let mut s = Snapshot {
            dim: shared.dim,
            slots: Vec::new(),
            data: Vec::new(),
        };
        for slot in slots {
            if s.slots.contains(&slot) {
                continue;
            }
            if let Some(row) = shared.row(slot) {
                s.slots.push(slot);
                s.data.extend(
                    row.iter()
                        .map(|a| f32::from_bits(a.load(Ordering::Relaxed))),
                );
            }
        }
        s
    }
}

impl Rows<f32> for Snapshot {
    fn row(&self, slot: Slot) -> Option<&[f32]> {
        let i = self.slots.iter().position(|s| *s == slot)?;
        Some(&self.data[i * self.dim..(i + 1) * self.dim])
    }
}

fn parallel_pass<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    store: &mut EmbeddingStore<f32>,
    hp: &Hyperparams,
    order: &[usize],
    rng: &mut R,
) -> Result<(f64, usize), ModelError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(hp.threads)
        .build()
        .map_err(|e| ModelError::Config(format!("thread pool: {e}")))?;
    let chunk = order.len().div_ceil(hp.threads).max(1);
    let seeds: Vec<u64> = (0..order.len().div_ceil(chunk))
        .map(|_| rng.gen())
        .collect();

    let dim = store.dim();
    let margin = hp.margin as f32;
    let lr = hp.learning_rate as f32;
    let (entities, relations) = store.matrices_mut();
    let [e0, e1, e2, e3, e4] = entities;
    let shared = SharedTables {
        dim,
        entities: [
            as_atomic(e0),
            as_atomic(e1),
            as_atomic(e2),
            as_atomic(e3),
            as_atomic(e4),
        ],
        relations: as_atomic(relations),
    };

    let results: Vec<Result<(f64, usize), ModelError>> = pool.install(|| {
        order
            .par_chunks(chunk)
            .zip(seeds.par_iter())
            .map(|(part, &seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (mut total, mut unfiltered) = (0.0f64, 0usize);
                for &i in part {
                    let t = graph.triplets()[i];
                    let neg = sample_negatives(graph, &t, hp, &mut rng)?;
                    unfiltered += neg.unfiltered;
                    let slots = [
                        Slot::Entity(t.head),
                        Slot::Entity(t.tail),
                        Slot::Relation(t.relation),
                    ]
                    .into_iter()
                    .chain(neg.tail_corruptions.iter().map(|n| Slot::Entity(n.tail)))
                    .chain(neg.head_corruptions.iter().map(|n| Slot::Entity(n.head)));
                    let snap = Snapshot::gather(&shared, slots);
                    let (loss, grads) = loss_and_grads(&snap, dim, &t, &neg, margin)?;
                    if let Some(slot) = grads.first_non_finite() {
                        return Err(ModelError::NonFinite(slot));
                    }
                    for (slot, g) in grads.iter() {
                        let row = shared.row(slot).ok_or_else(|| match slot {
                            Slot::Entity(id) => ModelError::UnknownId(id),
                            Slot::Relation(_) => ModelError::Mismatch("relation row".into()),
                        })?;
                        for (cell, &gi) in row.iter().zip(g) {
                            let v = f32::from_bits(cell.load(Ordering::Relaxed)) - lr * gi;
                            cell.store(v.to_bits(), Ordering::Relaxed);
                        }
                    }
                    total += loss as f64;
                }
                Ok((total, unfiltered))
            })
            .collect()
    });

    let mut acc = (0.0, 0);
    for r in results {
        let (t, u) = r?;
        acc.0 += t;
        acc.1 += u;
    }
    Ok(acc)
}

/// Initializes a store from `hp.seed` and runs `hp.epochs` epochs, drawing
/// every random choice from one seeded generator.
pub fn train(graph: &KnowledgeGraph, hp: &Hyperparams) -> Result<TrainOutput, ModelError> {
    hp.validate()?;
    if graph.relation_len(RelationKind::Buy) == 0 {
        return Err(ModelError::NoPurchases);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut store = EmbeddingStore::init_with_rng(graph, hp, &mut rng)?;
    let mut losses = Vec::with_capacity(hp.epochs);
    let mut unfiltered = 0;
    for _ in 0..hp.epochs {
        let stats = train_epoch(graph, &mut store, hp, &mut rng)?;
        losses.push(stats.mean_loss);
        unfiltered += stats.unfiltered;
    }
    Ok(TrainOutput {
        store,
        losses,
        unfiltered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::EntityKind::*;
    use crate::kg::RelationKind::*;
    use crate::synthetic::PlantedConfig;

    fn hundred_triplets() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        for u in 0..20 {
            for k in 0..5 {
                g.add_triplet(
                    User,
                    &format!("u{u}"),
                    Buy,
                    Item,
                    &format!("i{}", (u * 3 + k * 7) % 40),
                )
                .unwrap();
            }
        }
        assert_eq!(g.len(), 100);
        g
    }

    #[test]
    fn one_visit_per_triplet() {
        let g = hundred_triplets();
        let hp = Hyperparams {
            dim: 8,
            ..Default::default()
        };
        let mut store = EmbeddingStore::init(&g, &hp).unwrap();
        let stats = train_epoch(&g, &mut store, &hp, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(stats.visits, 100);
    }

    #[test]
    fn same_seed_same_store() {
        let g = hundred_triplets();
        let hp = Hyperparams {
            dim: 8,
            epochs: 3,
            ..Default::default()
        };
        let a = train(&g, &hp).unwrap();
        let b = train(&g, &hp).unwrap();
        assert_eq!(a.store, b.store);
        assert_eq!(a.losses, b.losses);
        let c = train(&g, &Hyperparams { seed: 43, ..hp }).unwrap();
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn zero_epochs_returns_initial_store() {
        let g = hundred_triplets();
        let hp = Hyperparams {
            dim: 8,
            epochs: 0,
            ..Default::default()
        };
        let out = train(&g, &hp).unwrap();
        assert!(out.losses.is_empty());
        assert_eq!(out.store, EmbeddingStore::init(&g, &hp).unwrap());
    }

    #[test]
    fn history_length_matches_epochs() {
        let g = hundred_triplets();
        let out = train(
            &g,
            &Hyperparams {
                dim: 8,
                epochs: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.losses.len(), 4);
    }

    #[test]
    fn needs_purchases() {
        let mut g = KnowledgeGraph::new();
        g.add_triplet(Item, "a", AlsoView, Item, "b").unwrap();
        assert_eq!(
            train(&g, &Hyperparams::default()).unwrap_err(),
            ModelError::NoPurchases
        );
    }

    fn unit_rows(store: &EmbeddingStore<f32>) -> bool {
        EntityKind::ALL.iter().all(|&k| {
            store
                .entity_matrix(k)
                .chunks_exact(store.dim())
                .all(|r| (r.iter().map(|x| x * x).sum::<f32>().sqrt() - 1.0).abs() < 1e-5)
        })
    }

    #[test]
    fn epoch_boundaries_keep_unit_norms() {
        let g = hundred_triplets();
        let hp = Hyperparams {
            dim: 16,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = EmbeddingStore::init_with_rng(&g, &hp, &mut rng).unwrap();
        for _ in 0..5 {
            train_epoch(&g, &mut store, &hp, &mut rng).unwrap();
            assert!(unit_rows(&store));
            assert!(store.all_finite());
        }
    }

    #[test]
    fn literal_mode_stays_finite() {
        let g = hundred_triplets();
        let out = train(
            &g,
            &Hyperparams {
                dim: 16,
                epochs: 5,
                ..Default::default()
            }
            .literal(),
        )
        .unwrap();
        assert!(out.store.all_finite());
    }

    #[test]
    fn parallel_mode_keeps_invariants() {
        let g = hundred_triplets();
        let hp = Hyperparams {
            dim: 16,
            epochs: 5,
            threads: 4,
            ..Default::default()
        };
        let out = train(&g, &hp).unwrap();
        assert!(out.store.all_finite());
        assert!(unit_rows(&out.store));
        assert_eq!(out.losses.len(), 5);
    }

    #[test]
    fn planted_loss_drops_over_five_epochs() {
        let data = PlantedConfig::default().generate();
        let (graph, _, _) = data
            .build(&crate::ingest::TokenizerConfig::default())
            .unwrap();
        let hp = Hyperparams {
            dim: 32,
            epochs: 5,
            ..Default::default()
        };
        let out = train(&graph, &hp).unwrap();
        assert!(out.losses[4] < out.losses[0], "{:?}", out.losses);
    }
}
