//! On-disk formats: triplet files, held-out pair files, the `KGE1` binary
//! embedding store, its text export, and loss histories.

use std::io::{self, BufRead, Read, Write};

use thiserror::Error;

use crate::kg::{EntityKind, KgError, KnowledgeGraph, RelationKind, Vocab, Vocabularies};
use crate::model::{EmbeddingStore, ModelError};

pub const STORE_MAGIC: &[u8; 4] = b"KGE1";
/// Entity rows were unit-normalized when the store was written.
pub const FLAG_NORMALIZED: u32 = 1;
/// A 32-byte vocabulary digest follows the vocabulary tables.
pub const FLAG_DIGEST: u32 = 1 << 1;
const DIGEST_PREFIX: &str = "# vocab-digest ";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{source_name}:{line}: {message}")]
    Malformed {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("invalid store file: {0}")]
    Store(String),
    #[error("vocabulary digest mismatch: expected {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },
    #[error("key {0:?} contains a tab or newline")]
    UnwritableKey(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn malformed(source_name: &str, line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Malformed {
        source_name: source_name.to_string(),
        line,
        message: message.into(),
    }
}

fn check_key(key: &str) -> Result<&str, FormatError> {
    if key.contains(['\t', '\n', '\r']) {
        Err(FormatError::UnwritableKey(key.to_string()))
    } else {
        Ok(key)
    }
}

/// Compares two vocabulary digests, failing with both in hex.
pub fn check_digest(expected: &[u8; 32], found: &[u8; 32]) -> Result<(), FormatError> {
    if expected == found {
        Ok(())
    } else {
        Err(FormatError::DigestMismatch {
            expected: hex::encode(expected),
            found: hex::encode(found),
        })
    }
}

/// Writes `head_kind:head_key<TAB>relation<TAB>tail_kind:tail_key` lines in
/// insertion order after a digest comment. Replaying the file reproduces the
/// same ids.
pub fn write_triplets<W: Write>(mut w: W, graph: &KnowledgeGraph) -> Result<(), FormatError> {
    writeln!(w, "{DIGEST_PREFIX}{}", hex::encode(graph.vocab().digest()))?;
    for t in graph.triplets() {
        writeln!(
            w,
            "{}:{}\t{}\t{}:{}",
            t.head.kind,
            check_key(graph.key(t.head))?,
            t.relation,
            t.tail.kind,
            check_key(graph.key(t.tail))?
        )?;
    }
    w.flush()?;
    Ok(())
}

fn parse_endpoint<'a>(
    field: &'a str,
    source_name: &str,
    line: usize,
) -> Result<(EntityKind, &'a str), FormatError> {
    let (kind, key) = field.split_once(':').ok_or_else(|| {
        malformed(
            source_name,
            line,
            format!("expected kind:key, got {field:?}"),
        )
    })?;
    let kind = kind
        .parse()
        .map_err(|e: KgError| malformed(source_name, line, e.to_string()))?;
    Ok((kind, key))
}

/// Reads a triplet file. A digest comment, if present, must match the
/// vocabulary rebuilt from the triplets.
pub fn read_triplets<R: BufRead>(r: R, source_name: &str) -> Result<KnowledgeGraph, FormatError> {
    let mut graph = KnowledgeGraph::new();
    let mut digest: Option<String> = None;
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let n = n + 1;
        if let Some(hex) = line.strip_prefix(DIGEST_PREFIX) {
            digest = Some(hex.trim().to_string());
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(malformed(
                source_name,
                n,
                format!("expected 3 fields, got {}", fields.len()),
            ));
        }
        let (hk, hkey) = parse_endpoint(fields[0], source_name, n)?;
        let relation: RelationKind = fields[1]
            .parse()
            .map_err(|e: KgError| malformed(source_name, n, e.to_string()))?;
        let (tk, tkey) = parse_endpoint(fields[2], source_name, n)?;
        graph
            .add_triplet(hk, hkey, relation, tk, tkey)
            .map_err(|e| malformed(source_name, n, e.to_string()))?;
    }
    if let Some(expected) = digest {
        let found = hex::encode(graph.vocab().digest());
        if expected != found {
            return Err(FormatError::DigestMismatch { expected, found });
        }
    }
    Ok(graph)
}

/// `user_key<TAB>item_key` lines.
pub fn write_pairs<'a, W: Write>(
    mut w: W,
    pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> Result<(), FormatError> {
    for (u, i) in pairs {
        writeln!(w, "{}\t{}", check_key(u)?, check_key(i)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs<R: BufRead>(
    r: R,
    source_name: &str,
) -> Result<Vec<(String, String)>, FormatError> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        match line.split('\t').collect::<Vec<_>>().as_slice() {
            [u, i] if !u.is_empty() && !i.is_empty() => out.push((u.to_string(), i.to_string())),
            _ => {
                return Err(malformed(
                    source_name,
                    n + 1,
                    "expected user_key<TAB>item_key",
                ))
            }
        }
    }
    Ok(out)
}

/// Contents of a `KGE1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreFile {
    pub store: EmbeddingStore<f32>,
    pub vocab: Vocabularies,
    pub flags: u32,
}

impl StoreFile {
    pub fn normalized(&self) -> bool {
        self.flags & FLAG_NORMALIZED != 0
    }

    /// Fails unless the store's vocabulary is exactly the graph's.
    pub fn check_graph(&self, graph: &KnowledgeGraph) -> Result<(), FormatError> {
        check_digest(&graph.vocab().digest(), &self.vocab.digest())?;
        self.store.check_against(graph)?;
        Ok(())
    }
}

fn put_u32<W: Write>(w: &mut W, x: usize) -> Result<(), FormatError> {
    let x = u32::try_from(x).map_err(|_| FormatError::Store(format!("{x} does not fit in u32")))?;
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

/// Writes the binary store: magic, u32 header (dim, five row counts, relation
/// count, flags), f32 matrices, length-prefixed vocabulary keys, then the
/// vocabulary digest. All little-endian.
pub fn write_store<W: Write>(
    mut w: W,
    store: &EmbeddingStore<f32>,
    vocab: &Vocabularies,
    normalized: bool,
) -> Result<(), FormatError> {
    if store.row_counts() != vocab.counts() {
        return Err(FormatError::Store(
            "row counts differ from vocabulary sizes".into(),
        ));
    }
    w.write_all(STORE_MAGIC)?;
    put_u32(&mut w, store.dim())?;
    for n in store.row_counts() {
        put_u32(&mut w, n)?;
    }
    put_u32(&mut w, RelationKind::COUNT)?;
    let flags = FLAG_DIGEST | if normalized { FLAG_NORMALIZED } else { 0 };
    put_u32(&mut w, flags as usize)?;
    for kind in EntityKind::ALL {
        for x in store.entity_matrix(kind) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    for x in store.relation_matrix() {
        w.write_all(&x.to_le_bytes())?;
    }
    for kind in EntityKind::ALL {
        for key in vocab.of(kind).keys() {
            put_u32(&mut w, key.len())?;
            w.write_all(key.as_bytes())?;
        }
    }
    w.write_all(&vocab.digest())?;
    w.flush()?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32, FormatError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: io::Error) -> FormatError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        FormatError::Store("truncated file".into())
    } else {
        FormatError::Io(e)
    }
}

fn get_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>, FormatError> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Reads a `KGE1` store, checking its trailing digest when present.
pub fn read_store<R: Read>(mut r: R) -> Result<StoreFile, FormatError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != STORE_MAGIC {
        return Err(FormatError::Store("bad magic bytes".into()));
    }
    let dim = get_u32(&mut r)? as usize;
    let mut rows = [0usize; EntityKind::COUNT];
    for n in rows.iter_mut() {
        *n = get_u32(&mut r)? as usize;
    }
    let relations = get_u32(&mut r)? as usize;
    if relations != RelationKind::COUNT {
        return Err(FormatError::Store(format!(
            "expected {} relations, found {relations}",
            RelationKind::COUNT
        )));
    }
    let flags = get_u32(&mut r)?;
    if flags & !(FLAG_NORMALIZED | FLAG_DIGEST) != 0 {
        return Err(FormatError::Store(format!("unknown flags {flags:#x}")));
    }
    let mut entities: [Vec<f32>; EntityKind::COUNT] = Default::default();
    for (k, m) in entities.iter_mut().enumerate() {
        *m = get_f32s(&mut r, rows[k] * dim)?;
    }
    let relation_matrix = get_f32s(&mut r, relations * dim)?;
    let store = EmbeddingStore::from_parts(dim, entities, relation_matrix)?;

    let mut kinds: [Vocab; EntityKind::COUNT] = Default::default();
    for (k, v) in kinds.iter_mut().enumerate() {
        for _ in 0..rows[k] {
            let len = get_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(truncated)?;
            let key = String::from_utf8(buf)
                .map_err(|_| FormatError::Store("key is not UTF-8".into()))?;
            if v.get(&key).is_some() {
                return Err(FormatError::Store(format!("duplicate key {key:?}")));
            }
            v.intern(&key);
        }
    }
    let vocab = Vocabularies::new(kinds);
    if flags & FLAG_DIGEST != 0 {
        let mut stored = [0u8; 32];
        r.read_exact(&mut stored).map_err(truncated)?;
        check_digest(&stored, &vocab.digest())?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(FormatError::Store("trailing bytes".into()));
    }
    Ok(StoreFile {
        store,
        vocab,
        flags,
    })
}

fn write_vector<W: Write>(
    w: &mut W,
    label: &str,
    key: &str,
    row: &[f32],
) -> Result<(), FormatError> {
    write!(w, "{label}\t{}\t", check_key(key)?)?;
    for (i, x) in row.iter().enumerate() {
        if i > 0 {
            w.write_all(b" ")?;
        }
        // `Display` for f32 prints the shortest string that parses back exactly
        write!(w, "{x}")?;
    }
    writeln!(w)?;
    Ok(())
}

/// `kind<TAB>key<TAB>v1 v2 ... vD` per entity in id order, then one
/// `relation<TAB>name<TAB>...` line per relation.
pub fn export_text<W: Write>(
    mut w: W,
    store: &EmbeddingStore<f32>,
    vocab: &Vocabularies,
) -> Result<(), FormatError> {
    if store.row_counts() != vocab.counts() {
        return Err(FormatError::Store(
            "row counts differ from vocabulary sizes".into(),
        ));
    }
    let dim = store.dim();
    for kind in EntityKind::ALL {
        let rows = store.entity_matrix(kind).chunks_exact(dim);
        for (key, row) in vocab.of(kind).keys().iter().zip(rows) {
            write_vector(&mut w, kind.name(), key, row)?;
        }
    }
    for r in RelationKind::ALL {
        write_vector(&mut w, "relation", r.name(), store.relation(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`export_text`]. Entity ids follow line order within each kind.
pub fn import_text<R: BufRead>(
    r: R,
    source_name: &str,
) -> Result<(EmbeddingStore<f32>, Vocabularies), FormatError> {
    let mut dim: Option<usize> = None;
    let mut kinds: [Vocab; EntityKind::COUNT] = Default::default();
    let mut entities: [Vec<f32>; EntityKind::COUNT] = Default::default();
    let mut relations: [Option<Vec<f32>>; RelationKind::COUNT] = Default::default();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let n = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [label, key, values] = fields.as_slice() else {
            return Err(malformed(
                source_name,
                n,
                "expected label<TAB>key<TAB>values",
            ));
        };
        let row: Vec<f32> = values
            .split(' ')
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| malformed(source_name, n, format!("bad value: {e}")))?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(malformed(
                    source_name,
                    n,
                    format!("expected {d} values, got {}", row.len()),
                ))
            }
            _ => {}
        }
        if *label == "relation" {
            let r: RelationKind = key
                .parse()
                .map_err(|e: KgError| malformed(source_name, n, e.to_string()))?;
            if relations[r.index()].replace(row).is_some() {
                return Err(malformed(source_name, n, format!("duplicate relation {r}")));
            }
        } else {
            let kind: EntityKind = label
                .parse()
                .map_err(|e: KgError| malformed(source_name, n, e.to_string()))?;
            let v = &mut kinds[kind.index()];
            if v.get(key).is_some() {
                return Err(malformed(source_name, n, format!("duplicate key {key:?}")));
            }
            v.intern(key);
            entities[kind.index()].extend(row);
        }
    }
    let dim = dim.ok_or_else(|| malformed(source_name, 0, "no vectors"))?;
    let mut relation_matrix = Vec::with_capacity(RelationKind::COUNT * dim);
    for r in RelationKind::ALL {
        let row = relations[r.index()]
            .take()
            .ok_or_else(|| malformed(source_name, 0, format!("missing relation {r}")))?;
        relation_matrix.extend(row);
    }
    let store = EmbeddingStore::from_parts(dim, entities, relation_matrix)?;
    Ok((store, Vocabularies::new(kinds)))
}

/// `epoch,mean_loss` rows, epochs from 1.
pub fn write_loss_csv<W: Write>(mut w: W, losses: &[f64]) -> Result<(), FormatError> {
    writeln!(w, "epoch,mean_loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    w.flush()?;
    Ok(())
}
