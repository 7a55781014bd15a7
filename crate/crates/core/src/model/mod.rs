//! Translation embeddings for every entity and relation, the margin-based
//! ranking loss over corrupted triplets, and the SGD training loop.

mod loss;
mod sampler;
mod store;
mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, SubAssign};

use num_traits::Float;
use rand::Rng;
use thiserror::Error;

use crate::kg::KgError;

pub use loss::{sgd_step, triplet_loss_and_grads, Slot, SparseGrads};
pub use sampler::{sample_negatives, NegativeBatch, FILTER_RETRY_BUDGET};
pub use store::EmbeddingStore;
pub use train::{train, train_epoch, EpochStats, TrainOutput};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid hyperparameters: {0}")]
    Config(String),
    #[error("candidate pool for {0} has fewer than 2 entities")]
    PoolTooSmall(String),
    #[error("non-finite gradient for {0:?}")]
    NonFinite(Slot),
    #[error("embedding store does not match graph: {0}")]
    Mismatch(String),
    #[error("no embedding for {0:?}")]
    UnknownId(crate::kg::EntityId),
    #[error("graph has no buy triplets")]
    NoPurchases,
    #[error(transparent)]
    Graph(#[from] KgError),
}

/// Floating-point scalar the embedding math is generic over. Training uses
/// `f32`; `f64` stores serve gradient checks.
pub trait Real:
    Float + Sum + AddAssign + SubAssign + Debug + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;

    /// A draw from the open interval (0, 1).
    fn open01<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn open01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let x: f32 = rng.gen();
            if x > 0.0 {
                return x;
            }
        }
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }

    fn open01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let x: f64 = rng.gen();
            if x > 0.0 {
                return x;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub dim: usize,
    pub learning_rate: f64,
    pub margin: f64,
    /// Negatives drawn per side (tail and head) for each positive triplet.
    pub negatives: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Rescale every entity row to unit length after init and after each epoch.
    pub normalize_entities: bool,
    /// Corrupt with entities of the replaced entity's kind instead of any entity.
    pub type_constrained_sampling: bool,
    /// Reject corruptions that are observed triplets.
    pub filtered_sampling: bool,
    /// Worker threads for training; 1 is the deterministic reference mode.
    pub threads: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            dim: 300,
            learning_rate: 0.01,
            margin: 1.0,
            negatives: 5,
            epochs: 0,
            seed: 42,
            normalize_entities: true,
            type_constrained_sampling: true,
            filtered_sampling: true,
            threads: 1,
        }
    }
}

impl Hyperparams {
    /// Sample uniformly from all entities and skip normalization, following
    /// the bare training algorithm.
    pub fn literal(mut self) -> Self {
        self.normalize_entities = false;
        self.type_constrained_sampling = false;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }
}

/// `head + relation`, coordinate-wise.
pub fn translate<F: Real>(head: &[F], relation: &[F]) -> Vec<F> {
    assert_eq!(head.len(), relation.len(), "dimension mismatch");
    relation.iter().zip(head).map(|(&r, &h)| r + h).collect()
}

/// Euclidean distance.
pub fn distance<F: Real>(a: &[F], b: &[F]) -> F {
    assert_eq!(a.len(), b.len(), "dimension mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<F>()
        .sqrt()
}

/// `|head + relation - tail|` without materialising the translation.
pub(crate) fn translation_distance<F: Real>(head: &[F], relation: &[F], tail: &[F]) -> F {
    debug_assert!(head.len() == relation.len() && relation.len() == tail.len());
    head.iter()
        .zip(relation)
        .zip(tail)
        .map(|((&h, &r), &t)| {
            let d = r + h - t;
            d * d
        })
        .sum::<F>()
        .sqrt()
}
