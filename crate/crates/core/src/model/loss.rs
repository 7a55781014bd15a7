use super::{translation_distance, EmbeddingStore, Hyperparams, ModelError, NegativeBatch, Real};
use crate::kg::{EntityId, RelationKind, Triplet};

/// A trainable row: an entity vector or a relation vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Entity(EntityId),
    Relation(RelationKind),
}

pub(crate) trait Rows<F> {
    fn row(&self, slot: Slot) -> Option<&[F]>;
}

/// Gradient rows keyed by slot, in first-touched order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrads<F> {
    dim: usize,
    entries: Vec<(Slot, Vec<F>)>,
}

impl<F: Real> SparseGrads<F> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `grad[slot] += scale * v`
    pub fn add_scaled(&mut self, slot: Slot, scale: F, v: &[F]) {
        debug_assert_eq!(v.len(), self.dim);
        let pos = match self.entries.iter().position(|(s, _)| *s == slot) {
            Some(p) => p,
            None => {
                self.entries.push((slot, vec![F::zero(); self.dim]));
                self.entries.len() - 1
            }
        };
        for (g, &x) in self.entries[pos].1.iter_mut().zip(v) {
            *g += scale * x;
        }
    }

    pub fn get(&self, slot: Slot) -> Option<&[F]> {
        self.entries
            .iter()
            .find(|(s, _)| *s == slot)
            .map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Slot, &[F])> + '_ {
        self.entries.iter().map(|(s, g)| (*s, g.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.entries
            .iter()
            .all(|(_, g)| g.iter().all(|x| x.is_zero()))
    }

    pub(crate) fn first_non_finite(&self) -> Option<Slot> {
        self.entries
            .iter()
            .find(|(_, g)| g.iter().any(|x| !x.is_finite()))
            .map(|(s, _)| *s)
    }
}

fn lookup<F, S: Rows<F> + ?Sized>(rows: &S, id: EntityId) -> Result<&[F], ModelError> {
    rows.row(Slot::Entity(id)).ok_or(ModelError::UnknownId(id))
}

/// `(head + relation - tail) / |head + relation - tail|` and the distance; the
/// direction is zero at zero distance.
fn unit_residual<F: Real>(head: &[F], relation: &[F], tail: &[F]) -> (F, Vec<F>) {
    let d = translation_distance(head, relation, tail);
    let inv = if d > F::zero() { d.recip() } else { F::zero() };
    let u = head
        .iter()
        .zip(relation)
        .zip(tail)
        .map(|((&h, &r), &t)| (r + h - t) * inv)
        .collect();
    (d, u)
}

pub(crate) fn loss_and_grads<F: Real, S: Rows<F> + ?Sized>(
    rows: &S,
    dim: usize,
    t: &Triplet,
    neg: &NegativeBatch,
    margin: F,
) -> Result<(F, SparseGrads<F>), ModelError> {
    let one = F::one();
    let head = lookup(rows, t.head)?;
    let tail = lookup(rows, t.tail)?;
    let rel_slot = Slot::Relation(t.relation);
    let rel = rows
        .row(rel_slot)
        .ok_or_else(|| ModelError::Mismatch("missing relation row".into()))?;
    let (d_pos, u_pos) = unit_residual(head, rel, tail);

    let mut loss = F::zero();
    let mut grads = SparseGrads::new(dim);
    let push_positive = |grads: &mut SparseGrads<F>| {
        grads.add_scaled(Slot::Entity(t.head), one, &u_pos);
        grads.add_scaled(rel_slot, one, &u_pos);
        grads.add_scaled(Slot::Entity(t.tail), -one, &u_pos);
    };

    for n in &neg.tail_corruptions {
        let (d_neg, u) = unit_residual(head, rel, lookup(rows, n.tail)?);
        let x = margin + d_pos - d_neg;
        // subgradient of the hinge at exactly zero is taken as zero
        if x > F::zero() {
            loss += x;
            push_positive(&mut grads);
            grads.add_scaled(Slot::Entity(t.head), -one, &u);
            grads.add_scaled(rel_slot, -one, &u);
            grads.add_scaled(Slot::Entity(n.tail), one, &u);
        }
    }
    for n in &neg.head_corruptions {
        let (d_neg, u) = unit_residual(lookup(rows, n.head)?, rel, tail);
        let x = margin + d_pos - d_neg;
        if x > F::zero() {
            loss += x;
            push_positive(&mut grads);
            grads.add_scaled(Slot::Entity(n.head), -one, &u);
            grads.add_scaled(rel_slot, -one, &u);
            grads.add_scaled(Slot::Entity(t.tail), one, &u);
        }
    }
    Ok((loss, grads))
}

/// Hinge loss of one positive triplet against its corruptions, with exact
/// subgradients for every touched row.
///
/// Each active term `[margin + d_pos - d_neg]_+` contributes; the hinge
/// subgradient at zero and the norm gradient at zero distance are zero.
pub fn triplet_loss_and_grads<F: Real>(
    store: &EmbeddingStore<F>,
    t: &Triplet,
    neg: &NegativeBatch,
    hp: &Hyperparams,
) -> Result<(F, SparseGrads<F>), ModelError> {
    loss_and_grads(store, store.dim(), t, neg, F::from_f64(hp.margin))
}

/// `v -= learning_rate * g` for every row in `grads`. A non-finite gradient
/// aborts the step before any row is touched.
pub fn sgd_step<F: Real>(
    store: &mut EmbeddingStore<F>,
    grads: &SparseGrads<F>,
    hp: &Hyperparams,
) -> Result<(), ModelError> {
    if let Some(slot) = grads.first_non_finite() {
        return Err(ModelError::NonFinite(slot));
    }
    if grads.dim() != store.dim() {
        return Err(ModelError::Mismatch("gradient dimension".into()));
    }
    for (slot, _) in grads.iter() {
        if let Slot::Entity(id) = slot {
            store.entity(id).ok_or(ModelError::UnknownId(id))?;
        }
    }
    let lr = F::from_f64(hp.learning_rate);
    for (slot, g) in grads.iter() {
        let row = store.row_mut(slot).expect("checked above");
        for (v, &gi) in row.iter_mut().zip(g) {
            *v -= lr * gi;
        }
    }
    Ok(())
}
