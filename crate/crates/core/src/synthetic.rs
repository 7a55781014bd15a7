//! Planted-cluster datasets with known structure, used by tests and demos.
//!
//! Users and items are split into latent clusters. Each user buys mostly from
//! their own cluster; an item's brand and category equal its cluster, and its
//! reviews use cluster-specific vocabulary.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{
    build_graph_with, split_interactions, IngestError, InteractionRecord, ItemMetaRecord,
    SplitSpec, TokenizerConfig,
};
use crate::kg::{KnowledgeGraph, RelationSet};

const CLUSTER_WORDS: [&[&str]; 4] = [
    &["cozy", "knit", "warm"],
    &["sleek", "steel", "fast"],
    &["fresh", "floral", "soft"],
    &["loud", "bass", "heavy"],
];

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    pub items_per_user: usize,
    /// Probability that a purchase comes from the user's own cluster.
    pub in_cluster: f64,
    /// Zipf-like exponent for item popularity inside a cluster; 0 is uniform.
    pub popularity_skew: f64,
    pub seed: u64,
    pub split: SplitSpec,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            users: 30,
            items: 50,
            clusters: 2,
            items_per_user: 12,
            in_cluster: 0.9,
            popularity_skew: 0.0,
            seed: 42,
            split: SplitSpec::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedData {
    pub config: PlantedConfig,
    pub interactions: Vec<InteractionRecord>,
    pub meta: Vec<ItemMetaRecord>,
    pub user_cluster: Vec<usize>,
    pub item_cluster: Vec<usize>,
}

pub fn user_key(u: usize) -> String {
    format!("user{u:03}")
}

pub fn item_key(i: usize) -> String {
    format!("item{i:03}")
}

impl PlantedConfig {
    pub fn generate(&self) -> PlantedData {
        assert!(self.clusters >= 1 && self.clusters <= CLUSTER_WORDS.len());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let user_cluster: Vec<usize> = (0..self.users).map(|u| u % self.clusters).collect();
        let item_cluster: Vec<usize> = (0..self.items).map(|i| i % self.clusters).collect();
        let members: Vec<Vec<usize>> = (0..self.clusters)
            .map(|c| (0..self.items).filter(|&i| item_cluster[i] == c).collect())
            .collect();
        let weights: Vec<Vec<f64>> = members
            .iter()
            .map(|m| {
                (0..m.len())
                    .map(|rank| 1.0 / ((rank + 1) as f64).powf(self.popularity_skew))
                    .collect()
            })
            .collect();

        let mut interactions = Vec::new();
        let mut ts = 0i64;
        for (u, &own) in user_cluster.iter().enumerate() {
            let mut bought: Vec<usize> = Vec::new();
            while bought.len() < self.items_per_user.min(self.items) {
                let c = if self.clusters == 1 || rng.gen_bool(self.in_cluster) {
                    own
                } else {
                    let other = rng.gen_range(0..self.clusters - 1);
                    if other >= own {
                        other + 1
                    } else {
                        other
                    }
                };
                let pick = {
                    let w = &weights[c];
                    let total: f64 = w.iter().sum();
                    let mut x = rng.gen::<f64>() * total;
                    let mut idx = w.len() - 1;
                    for (j, wj) in w.iter().enumerate() {
                        if x < *wj {
                            idx = j;
                            break;
                        }
                        x -= wj;
                    }
                    members[c][idx]
                };
                if !bought.contains(&pick) {
                    bought.push(pick);
                }
            }
            for &i in &bought {
                ts += 1;
                let words = CLUSTER_WORDS[item_cluster[i]];
                let w1 = words[rng.gen_range(0..words.len())];
                let w2 = words[rng.gen_range(0..words.len())];
                // a record-specific tag that clears the frequency threshold on its own
                let tag = format!("tag{u}x{i}");
                let review = format!("{w1} and {w2}. {tag} {tag} {tag} {tag} {tag}");
                interactions.push(
                    InteractionRecord::new(user_key(u), item_key(i))
                        .with_timestamp(ts)
                        .with_review(review),
                );
            }
        }

        let meta = (0..self.items)
            .map(|i| {
                let c = item_cluster[i];
                let peers: Vec<usize> = members[c].iter().copied().filter(|&j| j != i).collect();
                let mut pick = |n: usize| -> Vec<String> {
                    peers
                        .choose_multiple(&mut rng, n)
                        .map(|&j| item_key(j))
                        .collect()
                };
                let also_bought = pick(1);
                let also_viewed = pick(2);
                ItemMetaRecord {
                    item_key: item_key(i),
                    brand: Some(format!("brand{c}")),
                    categories: vec![format!("category{c}")],
                    also_bought,
                    also_viewed,
                }
            })
            .collect();

        PlantedData {
            config: self.clone(),
            interactions,
            meta,
            user_cluster,
            item_cluster,
        }
    }
}

/// Graph plus the split it was built from.
#[derive(Debug, Clone)]
pub struct PlantedSplit {
    pub graph: KnowledgeGraph,
    pub train: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
}

impl PlantedData {
    pub fn split(&self) -> Result<(Vec<InteractionRecord>, Vec<InteractionRecord>), IngestError> {
        split_interactions(&self.interactions, &self.config.split)
    }

    /// Split, then build the full graph from the training side.
    pub fn build(
        &self,
        tokenizer: &TokenizerConfig,
    ) -> Result<
        (
            KnowledgeGraph,
            Vec<InteractionRecord>,
            Vec<InteractionRecord>,
        ),
        IngestError,
    > {
        self.build_with(tokenizer, RelationSet::ALL)
            .map(|s| (s.graph, s.train, s.test))
    }

    pub fn build_with(
        &self,
        tokenizer: &TokenizerConfig,
        relations: RelationSet,
    ) -> Result<PlantedSplit, IngestError> {
        let (train, test) = self.split()?;
        let (graph, _) = build_graph_with(&train, &self.meta, tokenizer, relations)?;
        Ok(PlantedSplit { graph, train, test })
    }
}
