use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{Rows, Slot};
use super::{translation_distance, Hyperparams, ModelError, Real};
use crate::kg::{EntityId, EntityKind, KnowledgeGraph, RelationKind, Triplet};

/// Dense row-major embedding tables: one matrix per entity kind (rows indexed
/// by local id) and one row per relation kind.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<F = f32> {
    dim: usize,
    entities: [Vec<F>; EntityKind::COUNT],
    relations: Vec<F>,
}

impl<F: Real> EmbeddingStore<F> {
    pub fn zeros(dim: usize, rows: [usize; EntityKind::COUNT]) -> Self {
        Self {
            dim,
            entities: std::array::from_fn(|k| vec![F::zero(); rows[k] * dim]),
            relations: vec![F::zero(); RelationKind::COUNT * dim],
        }
    }

    pub fn from_parts(
        dim: usize,
        entities: [Vec<F>; EntityKind::COUNT],
        relations: Vec<F>,
    ) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::Config("dim must be at least 1".into()));
        }
        if entities.iter().any(|m| m.len() % dim != 0)
            || relations.len() != RelationKind::COUNT * dim
        {
            return Err(ModelError::Mismatch(
                "matrix sizes are not multiples of dim".into(),
            ));
        }
        Ok(Self {
            dim,
            entities,
            relations,
        })
    }

    /// Coordinates drawn i.i.d. from (0, 1) with a generator seeded by
    /// `hp.seed`; entity rows then unit-normalized if requested.
    pub fn init(graph: &KnowledgeGraph, hp: &Hyperparams) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        Self::init_with_rng(graph, hp, &mut rng)
    }

    pub fn init_with_rng<R: Rng + ?Sized>(
        graph: &KnowledgeGraph,
        hp: &Hyperparams,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if hp.dim == 0 {
            return Err(ModelError::Config("dim must be at least 1".into()));
        }
        if graph.is_empty() {
            return Err(ModelError::Config(
                "cannot initialise against an empty graph".into(),
            ));
        }
        let mut store = Self::zeros(hp.dim, graph.vocab().counts());
        for m in store.entities.iter_mut() {
            m.iter_mut().for_each(|x| *x = F::open01(rng));
        }
        store.relations.iter_mut().for_each(|x| *x = F::open01(rng));
        if hp.normalize_entities {
            store.renormalize_entities();
        }
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self, kind: EntityKind) -> usize {
        self.entities[kind.index()].len() / self.dim
    }

    pub fn row_counts(&self) -> [usize; EntityKind::COUNT] {
        EntityKind::ALL.map(|k| self.rows(k))
    }

    pub fn entity_matrix(&self, kind: EntityKind) -> &[F] {
        &self.entities[kind.index()]
    }

    pub fn relation_matrix(&self) -> &[F] {
        &self.relations
    }

    pub fn entity(&self, id: EntityId) -> Option<&[F]> {
        let start = id.local as usize * self.dim;
        self.entities[id.kind.index()].get(start..start + self.dim)
    }

    pub fn entity_mut(&mut self, id: EntityId) -> Option<&mut [F]> {
        let start = id.local as usize * self.dim;
        self.entities[id.kind.index()].get_mut(start..start + self.dim)
    }

    pub fn relation(&self, r: RelationKind) -> &[F] {
        let start = r.index() * self.dim;
        &self.relations[start..start + self.dim]
    }

    pub fn relation_mut(&mut self, r: RelationKind) -> &mut [F] {
        let start = r.index() * self.dim;
        &mut self.relations[start..start + self.dim]
    }

    pub fn row_mut(&mut self, slot: Slot) -> Option<&mut [F]> {
        match slot {
            Slot::Entity(id) => self.entity_mut(id),
            Slot::Relation(r) => Some(self.relation_mut(r)),
        }
    }

    pub(crate) fn matrices_mut(&mut self) -> (&mut [Vec<F>; EntityKind::COUNT], &mut Vec<F>) {
        (&mut self.entities, &mut self.relations)
    }

    /// Rescales every entity row to unit length. Zero rows are left alone.
    pub fn renormalize_entities(&mut self) {
        let dim = self.dim;
        for m in self.entities.iter_mut() {
            for row in m.chunks_exact_mut(dim) {
                let norm = row.iter().map(|&x| x * x).sum::<F>().sqrt();
                if norm > F::zero() {
                    row.iter_mut().for_each(|x| *x = *x / norm);
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entities
            .iter()
            .flatten()
            .chain(&self.relations)
            .all(|x| x.is_finite())
    }

    /// Adds `offset` to every entity row of every kind.
    pub fn shift_entities(&mut self, offset: &[F]) {
        assert_eq!(offset.len(), self.dim, "dimension mismatch");
        let dim = self.dim;
        for m in self.entities.iter_mut() {
            for row in m.chunks_exact_mut(dim) {
                row.iter_mut().zip(offset).for_each(|(x, &c)| *x += c);
            }
        }
    }

    /// `|e_head + e_relation - e_tail|`.
    pub fn triplet_distance(&self, t: &Triplet) -> Result<F, ModelError> {
        let h = self.entity(t.head).ok_or(ModelError::UnknownId(t.head))?;
        let tl = self.entity(t.tail).ok_or(ModelError::UnknownId(t.tail))?;
        Ok(translation_distance(h, self.relation(t.relation), tl))
    }

    /// Row counts must equal the graph's entity counts.
    pub fn check_against(&self, graph: &KnowledgeGraph) -> Result<(), ModelError> {
        let want = graph.vocab().counts();
        let have = self.row_counts();
        if want != have {
            return Err(ModelError::Mismatch(format!(
                "graph has {want:?} entities per kind, store has {have:?} rows"
            )));
        }
        Ok(())
    }
}

impl<F: Real> Rows<F> for EmbeddingStore<F> {
    fn row(&self, slot: Slot) -> Option<&[F]> {
        match slot {
            Slot::Entity(id) => self.entity(id),
            Slot::Relation(r) => Some(self.relation(r)),
        }
    }
}
