//! Triplet datasets, vocabularies and per-relation adjacency.
//!
//! Relation ids are laid out as `[raw relations | reverse relations | identity]`:
//! raw relation `r` has reverse `r + R` and the identity relation is `2R`,
//! where `R` is the number of raw relations.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub const IDENTITY_NAME: &str = "<identity>";
const REVERSE_SUFFIX: &str = "_inv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triplet {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triplet {
            head,
            relation,
            tail,
        }
    }
}

/// Name interner assigning ids in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names(names: impl IntoIterator<Item = String>) -> Self {
        let mut interner = Interner::new();
        for name in names {
            interner.intern(&name);
        }
        interner
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Entity and raw-relation vocabularies shared by all splits of a dataset.
#[derive(Clone, Debug, Default)]
pub struct Vocabulary {
    pub entities: Interner,
    pub relations: Interner,
}

/// Reads a tab-separated `head relation tail` file. Ids are assigned in
/// first-seen order and duplicate lines are dropped.
pub fn load_triplets(path: &Path, vocab: &mut Vocabulary) -> Result<Vec<Triplet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let head = vocab.entities.intern(fields[0]);
        let relation = vocab.relations.intern(fields[1]);
        let tail = vocab.entities.intern(fields[2]);
        let t = Triplet::new(head, relation, tail);
        if seen.insert(t) {
            out.push(t);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: Interner,
    relation_names: Vec<String>,
    num_raw: usize,
    adjacency: Vec<SparseMatrix>,
    train: Vec<Triplet>,
    valid: Vec<Triplet>,
    test: Vec<Triplet>,
    known: HashSet<Triplet>,
    answers: HashMap<(usize, usize), Vec<usize>>,
}

/// Builds the graph: adjacency from `train` only, reverse relations as
/// transposes, identity last, and the known set over all three splits.
pub fn build_graph(
    vocab: Vocabulary,
    train: Vec<Triplet>,
    valid: Vec<Triplet>,
    test: Vec<Triplet>,
) -> Result<KnowledgeGraph> {
    let n = vocab.entities.len();
    let num_raw = vocab.relations.len();
    for t in train.iter().chain(&valid).chain(&test) {
        if t.head >= n || t.tail >= n || t.relation >= num_raw {
            return Err(Error::Query(format!(
                "triplet ({}, {}, {}) outside vocabulary of {n} entities and {num_raw} relations",
                t.head, t.relation, t.tail
            )));
        }
    }

    let mut per_relation: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_raw];
    for t in &train {
        per_relation[t.relation].push((t.head, t.tail));
    }
    let mut adjacency: Vec<SparseMatrix> = per_relation
        .into_iter()
        .map(|pairs| SparseMatrix::from_pairs(n, n, pairs))
        .collect();
    let reverses: Vec<SparseMatrix> = adjacency.iter().map(SparseMatrix::transpose).collect();
    adjacency.extend(reverses);
    adjacency.push(SparseMatrix::identity(n));

    let mut relation_names: Vec<String> = vocab.relations.names().to_vec();
    relation_names.extend(
        vocab
            .relations
            .names()
            .iter()
            .map(|r| format!("{r}{REVERSE_SUFFIX}")),
    );
    relation_names.push(IDENTITY_NAME.to_owned());

    let mut known = HashSet::new();
    let mut answers: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for t in train.iter().chain(&valid).chain(&test) {
        if known.insert(*t) {
            answers.entry((t.head, t.relation)).or_default().push(t.tail);
            answers
                .entry((t.tail, t.relation + num_raw))
                .or_default()
                .push(t.head);
        }
    }
    for list in answers.values_mut() {
        list.sort_unstable();
        list.dedup();
    }

    Ok(KnowledgeGraph {
        entities: vocab.entities,
        relation_names,
        num_raw,
        adjacency,
        train,
        valid,
        test,
        known,
        answers,
    })
}

impl KnowledgeGraph {
    /// Loads `train.txt`, `valid.txt` and `test.txt` from a dataset directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut vocab = Vocabulary::default();
        let train = load_triplets(&dir.join("train.txt"), &mut vocab)?;
        let valid = load_triplets(&dir.join("valid.txt"), &mut vocab)?;
        let test = load_triplets(&dir.join("test.txt"), &mut vocab)?;
        build_graph(vocab, train, valid, test)
    }

    /// Graph over anonymous entities `e0..` and relations `r0..`; everything
    /// given is training data. Mostly useful for synthetic instances.
    pub fn from_triplets(n: usize, num_raw: usize, train: Vec<Triplet>) -> Result<Self> {
        let vocab = Vocabulary {
            entities: Interner::from_names((0..n).map(|i| format!("e{i}"))),
            relations: Interner::from_names((0..num_raw).map(|r| format!("r{r}"))),
        };
        build_graph(vocab, train, Vec::new(), Vec::new())
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_raw_relations(&self) -> usize {
        self.num_raw
    }

    /// All relation slots: raw, reverse and identity.
    pub fn num_relations(&self) -> usize {
        self.adjacency.len()
    }

    /// Relations a query can ask about: raw and reverse, not identity.
    pub fn num_targets(&self) -> usize {
        2 * self.num_raw
    }

    pub fn identity_relation(&self) -> usize {
        2 * self.num_raw
    }

    pub fn reverse_of(&self, relation: usize) -> usize {
        assert!(relation < 2 * self.num_raw, "identity has no reverse");
        if relation < self.num_raw {
            relation + self.num_raw
        } else {
            relation - self.num_raw
        }
    }

    pub fn is_reverse(&self, relation: usize) -> bool {
        relation >= self.num_raw && relation < 2 * self.num_raw
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn entity_name(&self, id: usize) -> &str {
        self.entities.name(id)
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relation_names[id]
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_names.iter().position(|r| r == name)
    }

    pub fn adjacency(&self) -> &[SparseMatrix] {
        &self.adjacency
    }

    pub fn matrix(&self, relation: usize) -> &SparseMatrix {
        &self.adjacency[relation]
    }

    pub fn has_edge(&self, relation: usize, from: usize, to: usize) -> bool {
        self.adjacency[relation].contains(from, to)
    }

    pub fn train(&self) -> &[Triplet] {
        &self.train
    }

    pub fn valid(&self) -> &[Triplet] {
        &self.valid
    }

    pub fn test(&self) -> &[Triplet] {
        &self.test
    }

    pub fn is_known(&self, t: &Triplet) -> bool {
        self.known.contains(t)
    }

    /// All known answers `t` of `relation(head, t)` across splits; `relation`
    /// may be a reverse relation.
    pub fn known_answers(&self, head: usize, relation: usize) -> &[usize] {
        self.answers
            .get(&(head, relation))
            .map_or(&[], |v| v.as_slice())
    }

    /// `vᵀ A_relation`.
    pub fn spmv_left(&self, v: &[f64], relation: usize) -> Vec<f64> {
        self.adjacency[relation].spmv_left(v)
    }

    /// Stable content hash over vocabularies and adjacency.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_entities() as u64).to_le_bytes());
        for name in self.entities.names() {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for name in &self.relation_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for m in &self.adjacency {
            h.update((m.nnz() as u64).to_le_bytes());
            for (r, c) in m.entries() {
                h.update((r as u64).to_le_bytes());
                h.update((c as u64).to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Hash over the relation vocabulary only.
    pub fn relation_vocab_hash(&self) -> String {
        relation_vocab_hash(&self.relation_names)
    }
}

pub fn relation_vocab_hash(names: &[String]) -> String {
    let mut h = Sha256::new();
    for name in names {
        h.update(name.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..8])
}

/// Edges hidden from propagation, e.g. the query triplets of a training
/// batch so that a rule cannot simply read the answer off the graph.
#[derive(Clone, Debug)]
pub struct EdgeMask {
    masked: Vec<Vec<bool>>,
    active: Vec<(usize, usize)>,
}

impl EdgeMask {
    pub fn new(graph: &KnowledgeGraph) -> Self {
        EdgeMask {
            masked: graph
                .adjacency()
                .iter()
                .map(|m| vec![false; m.nnz()])
                .collect(),
            active: Vec::new(),
        }
    }

    /// Hides `relation(head, tail)` and its mirror in the reverse relation.
    pub fn hide(&mut self, graph: &KnowledgeGraph, head: usize, relation: usize, tail: usize) {
        self.hide_one(graph, relation, head, tail);
        self.hide_one(graph, graph.reverse_of(relation), tail, head);
    }

    fn hide_one(&mut self, graph: &KnowledgeGraph, relation: usize, from: usize, to: usize) {
        if let Some(k) = graph.matrix(relation).find(from, to) {
            if !self.masked[relation][k] {
                self.masked[relation][k] = true;
                self.active.push((relation, k));
            }
        }
    }

    pub fn clear(&mut self) {
        for (r, k) in self.active.drain(..) {
            self.masked[r][k] = false;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn hidden_count(&self) -> usize {
        self.active.len()
    }

    /// Per-entry flags for one relation.
    #[inline]
    pub fn relation(&self, relation: usize) -> &[bool] {
        &self.masked[relation]
    }
}
