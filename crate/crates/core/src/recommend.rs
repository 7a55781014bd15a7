//! Top-N item recommendation by distance from a user's translated embedding
//! under the buy relation.

use std::cmp::Ordering;
use std::io::{self, Write};

use rayon::prelude::*;

use crate::kg::{EntityId, EntityKind, KnowledgeGraph, RelationKind};
use crate::model::{EmbeddingStore, ModelError, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: EntityId,
    /// (item, distance), ascending by distance then item id.
    pub items: Vec<(EntityId, f64)>,
    pub cutoff: usize,
}

impl RankedList {
    pub fn item_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.items.iter().map(|(i, _)| *i)
    }
}

fn by_distance_then_id(a: &(EntityId, f64), b: &(EntityId, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.local.cmp(&b.0.local))
}

/// The `n` items closest to `e_user + e_buy`, skipping the user's observed
/// purchases in `graph`. Distances are accumulated in f64.
pub fn recommend_top_n<F: Real>(
    store: &EmbeddingStore<F>,
    graph: &KnowledgeGraph,
    user: EntityId,
    n: usize,
) -> Result<RankedList, ModelError> {
    if user.kind != EntityKind::User || user.local as usize >= graph.entity_count(EntityKind::User)
    {
        return Err(ModelError::UnknownId(user));
    }
    let e_user = store.entity(user).ok_or(ModelError::UnknownId(user))?;
    let query: Vec<f64> = e_user
        .iter()
        .zip(store.relation(RelationKind::Buy))
        .map(|(&u, &r)| u.to_f64().unwrap_or(f64::NAN) + r.to_f64().unwrap_or(f64::NAN))
        .collect();

    let n_items = store.rows(EntityKind::Item);
    let mut excluded = vec![false; n_items];
    for t in graph.tails_of(user, RelationKind::Buy) {
        if let Some(x) = excluded.get_mut(t.local as usize) {
            *x = true;
        }
    }

    let items = store.entity_matrix(EntityKind::Item);
    let mut scored: Vec<(EntityId, f64)> = items
        .chunks_exact(store.dim())
        .enumerate()
        .filter(|(i, _)| !excluded[*i])
        .map(|(i, row)| {
            let d2: f64 = row
                .iter()
                .zip(&query)
                .map(|(&x, &q)| {
                    let d = q - x.to_f64().unwrap_or(f64::NAN);
                    d * d
                })
                .sum();
            (EntityId::new(EntityKind::Item, i as u32), d2.sqrt())
        })
        .collect();

    let n = n.min(scored.len());
    if n > 0 && n < scored.len() {
        scored.select_nth_unstable_by(n - 1, by_distance_then_id);
        scored.truncate(n);
    }
    scored.sort_unstable_by(by_distance_then_id);
    scored.truncate(n);
    Ok(RankedList {
        user,
        items: scored,
        cutoff: n,
    })
}

/// [`recommend_top_n`] for every user, output in input order.
pub fn recommend_all<F: Real>(
    store: &EmbeddingStore<F>,
    graph: &KnowledgeGraph,
    users: &[EntityId],
    n: usize,
) -> Result<Vec<RankedList>, ModelError> {
    users
        .par_iter()
        .map(|&u| recommend_top_n(store, graph, u, n))
        .collect()
}

/// `user_key<TAB>rank<TAB>item_key<TAB>distance` lines, ranks from 1.
pub fn write_recommendations<W: Write>(
    mut w: W,
    graph: &KnowledgeGraph,
    lists: &[RankedList],
) -> io::Result<()> {
    for list in lists {
        let user = graph.key(list.user);
        for (rank, (item, d)) in list.items.iter().enumerate() {
            writeln!(w, "{user}\t{}\t{}\t{d:.6}", rank + 1, graph.key(*item))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::EntityKind::*;
    use crate::kg::RelationKind::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// One user at the origin with a zero buy vector; items on a line.
    fn line(items: &[f64], bought: &[usize]) -> (EmbeddingStore<f64>, KnowledgeGraph) {
        let mut g = KnowledgeGraph::new();
        for i in 0..items.len() {
            g.add_triplet(User, "other", Buy, Item, &format!("i{i}"))
                .unwrap();
        }
        g.add_triplet(User, "u", Buy, Item, "i0").unwrap();
        for &b in bought {
            g.add_triplet(User, "u", Buy, Item, &format!("i{b}"))
                .unwrap();
        }
        let mut s = EmbeddingStore::<f64>::zeros(1, g.vocab().counts());
        for (i, &x) in items.iter().enumerate() {
            s.entity_mut(EntityId::new(Item, i as u32)).unwrap()[0] = x;
        }
        (s, g)
    }

    fn locals(list: &RankedList) -> Vec<u32> {
        list.item_ids().map(|i| i.local).collect()
    }

    #[test]
    fn ascending_order() {
        // item 0 is bought by "u"; the three others have distances 0.5, 0.1, 0.9
        let (s, g) = line(&[0.0, 0.5, 0.1, 0.9], &[]);
        let u = g.lookup(User, "u").unwrap();
        let list = recommend_top_n(&s, &g, u, 10).unwrap();
        assert_eq!(locals(&list), vec![2, 1, 3]);
        assert_eq!(list.cutoff, 3);
        assert!((list.items[0].1 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn bought_items_excluded() {
        let (s, g) = line(&[5.0, 0.01, 0.2, 0.3], &[1]);
        let u = g.lookup(User, "u").unwrap();
        let list = recommend_top_n(&s, &g, u, 1).unwrap();
        assert_eq!(locals(&list), vec![2]);
    }

    #[test]
    fn ties_break_by_local_id() {
        let (s, g) = line(&[9.0, 0.5, -0.5, 0.5], &[]);
        let u = g.lookup(User, "u").unwrap();
        assert_eq!(
            locals(&recommend_top_n(&s, &g, u, 3).unwrap()),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn unknown_user() {
        let (s, g) = line(&[0.0, 1.0], &[]);
        let bad = EntityId::new(User, 17);
        assert_eq!(
            recommend_top_n(&s, &g, bad, 3),
            Err(ModelError::UnknownId(bad))
        );
        let item = EntityId::new(Item, 0);
        assert!(recommend_top_n(&s, &g, item, 3).is_err());
    }

    fn random_world(
        seed: u64,
        users: usize,
        items: usize,
        dim: usize,
    ) -> (EmbeddingStore<f32>, KnowledgeGraph) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = KnowledgeGraph::new();
        for i in 0..items {
            g.add_triplet(
                User,
                &format!("u{}", i % users),
                Buy,
                Item,
                &format!("i{i}"),
            )
            .unwrap();
        }
        for u in 0..users {
            for _ in 0..5 {
                let i = rng.gen_range(0..items);
                g.add_triplet(User, &format!("u{u}"), Buy, Item, &format!("i{i}"))
                    .unwrap();
            }
        }
        let mut s = EmbeddingStore::<f32>::zeros(dim, g.vocab().counts());
        for k in [User, Item] {
            for i in 0..s.rows(k) as u32 {
                for x in s.entity_mut(EntityId::new(k, i)).unwrap() {
                    *x = rng.gen();
                }
            }
        }
        for x in s.relation_mut(Buy) {
            *x = rng.gen_range(-0.5..0.5);
        }
        (s, g)
    }

    #[test]
    fn matches_exhaustive_sort() {
        for seed in 0..10 {
            let (s, g) = random_world(seed, 10, 100, 8);
            for u in 0..10 {
                let user = EntityId::new(User, u);
                let bought: Vec<u32> = g.tails_of(user, Buy).iter().map(|e| e.local).collect();
                let q: Vec<f64> = (0..8)
                    .map(|c| s.entity(user).unwrap()[c] as f64 + s.relation(Buy)[c] as f64)
                    .collect();
                let mut all: Vec<(f64, u32)> = (0..100u32)
                    .filter(|i| !bought.contains(i))
                    .map(|i| {
                        let row = s.entity(EntityId::new(Item, i)).unwrap();
                        let d: f64 = (0..8).map(|c| (q[c] - row[c] as f64).powi(2)).sum();
                        (d.sqrt(), i)
                    })
                    .collect();
                all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                for n in [1, 10, 100] {
                    let got = recommend_top_n(&s, &g, user, n).unwrap();
                    let want: Vec<u32> = all.iter().take(n).map(|x| x.1).collect();
                    assert_eq!(locals(&got), want);
                }
            }
        }
    }

    #[test]
    fn batch_matches_single_calls() {
        let (s, g) = random_world(3, 50, 120, 8);
        let mut users: Vec<EntityId> = (0..50).map(|u| EntityId::new(User, u)).collect();
        let batch = recommend_all(&s, &g, &users, 10).unwrap();
        for (u, list) in users.iter().zip(&batch) {
            assert_eq!(list, &recommend_top_n(&s, &g, *u, 10).unwrap());
        }
        users.reverse();
        let reversed = recommend_all(&s, &g, &users, 10).unwrap();
        let mut again = batch.clone();
        again.reverse();
        assert_eq!(reversed, again);
        assert_eq!(
            recommend_all(&s, &g, &users[..1], 10).unwrap()[0],
            batch[49]
        );
    }

    #[test]
    fn exclusion_and_top_n_consistency() {
        let (s, g) = random_world(5, 20, 80, 8);
        for u in 0..20 {
            let user = EntityId::new(User, u);
            let list = recommend_top_n(&s, &g, user, 10).unwrap();
            let bought = g.tails_of(user, Buy);
            assert!(list.item_ids().all(|i| !bought.contains(&i)));
            assert!(list.items.windows(2).all(|w| w[0].1 <= w[1].1));
            let full = recommend_top_n(&s, &g, user, 80).unwrap();
            let nth = list.items.last().unwrap().1;
            for (item, d) in &full.items[10..] {
                assert!(!list.item_ids().any(|i| i == *item));
                assert!(nth <= *d);
            }
        }
    }

    #[test]
    fn order_invariant_under_common_shift() {
        // dyadic coordinates keep every sum exact
        let (mut s, g) = random_world(8, 20, 60, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for k in [User, Item] {
            for i in 0..s.rows(k) as u32 {
                for x in s.entity_mut(EntityId::new(k, i)).unwrap() {
                    *x = (*x * 1024.0).round() / 1024.0;
                }
            }
        }
        for x in s.relation_mut(Buy) {
            *x = (*x * 1024.0).round() / 1024.0;
        }
        let shift: Vec<f32> = (0..8)
            .map(|_| rng.gen_range(-64..64) as f32 / 64.0)
            .collect();
        let users: Vec<EntityId> = (0..20).map(|u| EntityId::new(User, u)).collect();
        let before = recommend_all(&s, &g, &users, 15).unwrap();
        s.shift_entities(&shift);
        let after = recommend_all(&s, &g, &users, 15).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(locals(a), locals(b));
        }
    }

    #[test]
    fn output_lines() {
        let (s, g) = line(&[0.0, 0.5, 0.1, 0.9], &[]);
        let u = g.lookup(User, "u").unwrap();
        let list = recommend_top_n(&s, &g, u, 2).unwrap();
        let mut out = Vec::new();
        write_recommendations(&mut out, &g, &[list]).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "u\t1\ti2\t0.100000\nu\t2\ti1\t0.500000\n"
        );
    }
}
