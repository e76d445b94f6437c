//! Knowledge-graph data model: triple ingestion, vocabularies, adjacency
//! with inverse relations and self-loops, and action-space enumeration.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A (head, relation, tail) fact with dense indices into the vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Bidirectional name <-> dense-index map. Indices are assigned in
/// first-appearance order so reloading the same files reproduces them.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Dump as "name<TAB>index" lines.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, name) in self.names.iter().enumerate() {
            out.push_str(name);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vocab = Vocab::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let name = parts
                .next()
                .ok_or_else(|| Error::parse(path, lineno + 1, "missing name field"))?;
            let idx: u32 = parts
                .next()
                .ok_or_else(|| Error::parse(path, lineno + 1, "missing index field"))?
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, "index is not an integer"))?;
            let assigned = vocab.intern(name);
            if assigned != idx {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("index {idx} does not match assignment order {assigned}"),
                ));
            }
        }
        Ok(vocab)
    }
}

pub const NO_OP_NAME: &str = "NO_OP";
const INVERSE_SUFFIX: &str = "_inv";

/// Relation vocabulary with a fixed derived layout: base relations first
/// (indices 0..B in first-appearance order), then the NO_OP self-loop
/// relation at index B, then one inverse per base relation at B+1+r.
#[derive(Debug, Clone)]
pub struct RelationVocab {
    base: Vocab,
}

impl RelationVocab {
    pub fn from_base(base: Vocab) -> Self {
        Self { base }
    }

    pub fn n_base(&self) -> usize {
        self.base.len()
    }

    /// Total relation count including NO_OP and inverses: 2B + 1.
    pub fn len(&self) -> usize {
        2 * self.base.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn no_op(&self) -> RelationId {
        RelationId(self.base.len() as u32)
    }

    pub fn is_base(&self, r: RelationId) -> bool {
        (r.0 as usize) < self.base.len()
    }

    pub fn is_no_op(&self, r: RelationId) -> bool {
        r == self.no_op()
    }

    /// Inverse of a relation. NO_OP is its own inverse.
    pub fn inverse(&self, r: RelationId) -> RelationId {
        let b = self.base.len() as u32;
        if r.0 < b {
            RelationId(b + 1 + r.0)
        } else if r.0 == b {
            r
        } else {
            RelationId(r.0 - b - 1)
        }
    }

    pub fn get_base(&self, name: &str) -> Option<RelationId> {
        self.base.get(name).map(RelationId)
    }

    pub fn name(&self, r: RelationId) -> String {
        let b = self.base.len() as u32;
        if r.0 < b {
            self.base.name(r.0).to_string()
        } else if r.0 == b {
            NO_OP_NAME.to_string()
        } else {
            format!("{}{INVERSE_SUFFIX}", self.base.name(r.0 - b - 1))
        }
    }

    /// Dump the full layout (base, NO_OP, inverses) as "name<TAB>index".
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for i in 0..self.len() {
            out.push_str(&self.name(RelationId(i as u32)));
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let full = Vocab::read_tsv(path)?;
        let no_op = full.get(NO_OP_NAME).ok_or_else(|| {
            Error::parse(path, 0, "relation vocabulary is missing the NO_OP entry")
        })?;
        let mut base = Vocab::new();
        for i in 0..no_op {
            base.intern(full.name(i));
        }
        let vocab = RelationVocab::from_base(base);
        if vocab.len() != full.len() {
            return Err(Error::parse(
                path,
                0,
                format!(
                    "relation vocabulary has {} entries, expected {} for {} base relations",
                    full.len(),
                    vocab.len(),
                    vocab.n_base()
                ),
            ));
        }
        Ok(vocab)
    }
}

/// Parse a TSV triple file ("head<TAB>relation<TAB>tail" per line), interning
/// names into the shared vocabularies in first-appearance order.
pub fn load_triples(
    path: &Path,
    entities: &mut Vocab,
    relations: &mut Vocab,
) -> Result<Vec<Triple>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut triples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let head = EntityId(entities.intern(fields[0]));
        let relation = RelationId(relations.intern(fields[1]));
        let tail = EntityId(entities.intern(fields[2]));
        triples.push(Triple {
            head,
            relation,
            tail,
        });
    }
    Ok(triples)
}

/// One loaded benchmark: shared vocabularies plus the graph facts and the
/// train/valid/test query triples. Test triples are never graph edges.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub entities: Vocab,
    pub relations: RelationVocab,
    pub facts: Vec<Triple>,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

/// Load `train.txt`, `test.txt` and optionally `valid.txt` from a directory.
/// Graph facts come from `facts.txt` when present, otherwise the train split
/// doubles as the fact set.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut entities = Vocab::new();
    let mut base_relations = Vocab::new();

    let facts_path = dir.join("facts.txt");
    let train_path = dir.join("train.txt");
    if !train_path.is_file() {
        return Err(Error::Config(format!(
            "dataset is missing {}",
            train_path.display()
        )));
    }

    let explicit_facts = facts_path.is_file();
    let facts = if explicit_facts {
        load_triples(&facts_path, &mut entities, &mut base_relations)?
    } else {
        Vec::new()
    };
    let train = load_triples(&train_path, &mut entities, &mut base_relations)?;
    let valid_path = dir.join("valid.txt");
    let valid = if valid_path.is_file() {
        load_triples(&valid_path, &mut entities, &mut base_relations)?
    } else {
        Vec::new()
    };
    let test_path = dir.join("test.txt");
    if !test_path.is_file() {
        return Err(Error::Config(format!(
            "dataset is missing {}",
            test_path.display()
        )));
    }
    let test = load_triples(&test_path, &mut entities, &mut base_relations)?;

    let facts = if explicit_facts { facts } else { train.clone() };
    Ok(Dataset {
        entities,
        relations: RelationVocab::from_base(base_relations),
        facts,
        train,
        valid,
        test,
    })
}

/// Directed adjacency over entities. Each entity's outgoing list is sorted by
/// (relation, tail) and, when self-loops are enabled, contains exactly one
/// (NO_OP, self) edge.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    adjacency: Vec<Vec<(RelationId, EntityId)>>,
    n_entities: usize,
}

impl KnowledgeGraph {
    /// Build the walking substrate from fact triples. `add_inverse` stores the
    /// reversed edge under r's inverse; `add_self_loop` adds (NO_OP, self) to
    /// every entity. Duplicate triples are dropped (count logged).
    pub fn build(
        n_entities: usize,
        relations: &RelationVocab,
        triples: &[Triple],
        add_inverse: bool,
        add_self_loop: bool,
    ) -> Self {
        let mut sets: Vec<BTreeSet<(RelationId, EntityId)>> = vec![BTreeSet::new(); n_entities];
        let mut duplicates = 0usize;
        for t in triples {
            if !sets[t.head.0 as usize].insert((t.relation, t.tail)) {
                duplicates += 1;
            }
            if add_inverse {
                sets[t.tail.0 as usize].insert((relations.inverse(t.relation), t.head));
            }
        }
        if duplicates > 0 {
            log::info!("deduplicated {duplicates} repeated triples while building the graph");
        }
        if add_self_loop {
            let no_op = relations.no_op();
            for (e, set) in sets.iter_mut().enumerate() {
                set.insert((no_op, EntityId(e as u32)));
            }
        }
        let adjacency = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        Self {
            adjacency,
            n_entities,
        }
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(|a| a.len()).sum()
    }

    /// All outgoing actions of an entity, in deterministic (relation, tail)
    /// order. Includes the self-loop when the graph was built with one.
    pub fn action_space(&self, entity: EntityId) -> &[(RelationId, EntityId)] {
        &self.adjacency[entity.0 as usize]
    }

    /// Distinct neighbor entities (tails of outgoing edges), sorted.
    pub fn neighbors(&self, entity: EntityId) -> Vec<EntityId> {
        let mut set: BTreeSet<EntityId> = self.adjacency[entity.0 as usize]
            .iter()
            .map(|&(_, t)| t)
            .collect();
        set.insert(entity);
        set.into_iter().collect()
    }

    pub fn edges(&self) -> impl Iterator<Item = (EntityId, RelationId, EntityId)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(e, list)| list.iter().map(move |&(r, t)| (EntityId(e as u32), r, t)))
    }
}

/// Mean and lower-median outgoing degree counted over base-relation edges
/// only. The median of an even-length list is the lower of the two middle
/// elements.
pub fn degree_stats(graph: &KnowledgeGraph, relations: &RelationVocab) -> Result<(f64, f64)> {
    if graph.n_entities() == 0 {
        return Err(Error::Invalid("degree_stats on an empty graph".into()));
    }
    let mut degrees: Vec<usize> = (0..graph.n_entities())
        .map(|e| {
            graph
                .action_space(EntityId(e as u32))
                .iter()
                .filter(|(r, _)| relations.is_base(*r))
                .count()
        })
        .collect();
    let total: usize = degrees.iter().sum();
    let mean = total as f64 / degrees.len() as f64;
    degrees.sort_unstable();
    let median = degrees[(degrees.len() - 1) / 2] as f64;
    Ok((mean, median))
}

/// A link-prediction query (source, query relation, answer set).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySample {
    pub source: EntityId,
    pub relation: RelationId,
    pub answers: Vec<EntityId>,
}

/// Group triples into queries keyed by (head, relation); answers are the
/// distinct tails, sorted. Query order follows first appearance.
pub fn group_queries(triples: &[Triple]) -> Vec<QuerySample> {
    let mut order: Vec<(EntityId, RelationId)> = Vec::new();
    let mut answers: HashMap<(EntityId, RelationId), BTreeSet<EntityId>> = HashMap::new();
    for t in triples {
        let key = (t.head, t.relation);
        let set = answers.entry(key).or_insert_with(|| {
            order.push(key);
            BTreeSet::new()
        });
        set.insert(t.tail);
    }
    order
        .into_iter()
        .map(|key| QuerySample {
            source: key.0,
            relation: key.1,
            answers: answers[&key].iter().copied().collect(),
        })
        .collect()
}

/// All tails known true for each (head, relation) across the provided splits;
/// used by the filtered ranking protocol.
pub fn known_tails(splits: &[&[Triple]]) -> HashMap<(EntityId, RelationId), BTreeSet<EntityId>> {
    let mut map: HashMap<(EntityId, RelationId), BTreeSet<EntityId>> = HashMap::new();
    for split in splits {
        for t in *split {
            map.entry((t.head, t.relation)).or_default().insert(t.tail);
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tsv(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    #[test]
    fn load_single_line() {
        let f = write_tsv(&["whale\tis_a\tmammal"]);
        let mut ents = Vocab::new();
        let mut rels = Vocab::new();
        let triples = load_triples(f.path(), &mut ents, &mut rels).unwrap();
        assert_eq!(
            triples,
            vec![Triple {
                head: EntityId(0),
                relation: RelationId(0),
                tail: EntityId(1)
            }]
        );
        assert_eq!(ents.get("whale"), Some(0));
        assert_eq!(ents.get("mammal"), Some(1));
        assert_eq!(rels.get("is_a"), Some(0));
    }

    #[test]
    fn load_empty_file() {
        let f = write_tsv(&[]);
        let mut ents = Vocab::new();
        let mut rels = Vocab::new();
        let triples = load_triples(f.path(), &mut ents, &mut rels).unwrap();
        assert!(triples.is_empty());
        assert_eq!(ents.len(), 0);
        assert_eq!(rels.len(), 0);
    }

    #[test]
    fn load_counts_distinct_entities() {
        // Three lines, one repeated entity: 3 triples, 4 distinct entities.
        let f = write_tsv(&["a\tr\tb", "b\tr\tc", "c\ts\td"]);
        let mut ents = Vocab::new();
        let mut rels = Vocab::new();
        let triples = load_triples(f.path(), &mut ents, &mut rels).unwrap();
        assert_eq!(triples.len(), 3);
        assert_eq!(ents.len(), 4);
        assert_eq!(rels.len(), 2);
    }

    #[test]
    fn load_malformed_line_names_line_number() {
        let f = write_tsv(&["a\tr\tb", "broken line"]);
        let mut ents = Vocab::new();
        let mut rels = Vocab::new();
        let err = load_triples(f.path(), &mut ents, &mut rels).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_missing_file_is_io_error() {
        let mut ents = Vocab::new();
        let mut rels = Vocab::new();
        let err =
            load_triples(Path::new("/nonexistent/file.txt"), &mut ents, &mut rels).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    fn tiny_vocabs(n_entities: usize, base_relations: &[&str]) -> (usize, RelationVocab) {
        let mut base = Vocab::new();
        for r in base_relations {
            base.intern(r);
        }
        (n_entities, RelationVocab::from_base(base))
    }

    #[test]
    fn build_minimal_graph() {
        let (n, rels) = tiny_vocabs(2, &["r"]);
        let triples = vec![Triple {
            head: EntityId(0),
            relation: RelationId(0),
            tail: EntityId(1),
        }];
        let g = KnowledgeGraph::build(n, &rels, &triples, true, true);
        let no_op = rels.no_op();
        let inv = rels.inverse(RelationId(0));
        assert_eq!(
            g.action_space(EntityId(0)),
            &[(RelationId(0), EntityId(1)), (no_op, EntityId(0))]
        );
        assert_eq!(
            g.action_space(EntityId(1)),
            &[(no_op, EntityId(1)), (inv, EntityId(0))]
        );
        assert_eq!(g.n_edges(), 2 * 1 + 2);
    }

    #[test]
    fn build_self_loops_only() {
        let (n, rels) = tiny_vocabs(2, &[]);
        let g = KnowledgeGraph::build(n, &rels, &[], true, true);
        assert_eq!(g.n_edges(), 2);
    }

    #[test]
    fn build_edge_count_on_random_fixture() {
        // 100 distinct triples: with inverses and self-loops the edge count
        // must equal 2*100 + |E|, verified by exhaustive recount.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let n_entities = 40usize;
        let (n, rels) = tiny_vocabs(n_entities, &["r0", "r1", "r2"]);
        let mut set = std::collections::HashSet::new();
        while set.len() < 100 {
            let h = rng.gen_range(0..n_entities as u32);
            let mut t = rng.gen_range(0..n_entities as u32);
            if t == h {
                t = (t + 1) % n_entities as u32;
            }
            let r = rng.gen_range(0..3u32);
            set.insert((h, r, t));
        }
        let triples: Vec<Triple> = set
            .into_iter()
            .map(|(h, r, t)| Triple {
                head: EntityId(h),
                relation: RelationId(r),
                tail: EntityId(t),
            })
            .collect();
        let g = KnowledgeGraph::build(n, &rels, &triples, true, true);
        // Independent recount: walk every adjacency list.
        let mut count = 0usize;
        for e in 0..n_entities {
            count += g.action_space(EntityId(e as u32)).len();
        }
        assert_eq!(count, 2 * 100 + n_entities);
    }

    #[test]
    fn action_space_isolated_entity() {
        let (n, rels) = tiny_vocabs(1, &[]);
        let g = KnowledgeGraph::build(n, &rels, &[], true, true);
        assert_eq!(
            g.action_space(EntityId(0)),
            &[(rels.no_op(), EntityId(0))]
        );
    }

    #[test]
    fn action_space_without_inverses() {
        let (n, rels) = tiny_vocabs(3, &["r"]);
        let triples = vec![
            Triple {
                head: EntityId(0),
                relation: RelationId(0),
                tail: EntityId(1),
            },
            Triple {
                head: EntityId(0),
                relation: RelationId(0),
                tail: EntityId(2),
            },
        ];
        let g = KnowledgeGraph::build(n, &rels, &triples, false, true);
        assert_eq!(g.action_space(EntityId(0)).len(), 3);
    }

    #[test]
    fn action_space_degree_fixture() {
        // A node with out-degree 14 exposes 15 actions once the self-loop is
        // added.
        let (n, rels) = tiny_vocabs(15, &["r"]);
        let triples: Vec<Triple> = (1..15)
            .map(|t| Triple {
                head: EntityId(0),
                relation: RelationId(0),
                tail: EntityId(t),
            })
            .collect();
        let g = KnowledgeGraph::build(n, &rels, &triples, false, true);
        assert_eq!(g.action_space(EntityId(0)).len(), 15);
    }

    #[test]
    fn degree_stats_two_entities() {
        let (n, rels) = tiny_vocabs(2, &["r"]);
        let triples = vec![Triple {
            head: EntityId(0),
            relation: RelationId(0),
            tail: EntityId(1),
        }];
        let g = KnowledgeGraph::build(n, &rels, &triples, false, false);
        let (mean, median) = degree_stats(&g, &rels).unwrap();
        assert_eq!(mean, 0.5);
        assert_eq!(median, 0.0);
    }

    #[test]
    fn degree_stats_star_graph() {
        let (n, rels) = tiny_vocabs(6, &["r"]);
        let triples: Vec<Triple> = (1..6)
            .map(|t| Triple {
                head: EntityId(0),
                relation: RelationId(0),
                tail: EntityId(t),
            })
            .collect();
        let g = KnowledgeGraph::build(n, &rels, &triples, false, false);
        let (mean, median) = degree_stats(&g, &rels).unwrap();
        assert!((mean - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(median, 0.0);
    }

    #[test]
    fn degree_stats_errors_on_empty_graph() {
        let (_, rels) = tiny_vocabs(0, &[]);
        let g = KnowledgeGraph::build(0, &rels, &[], false, false);
        assert!(degree_stats(&g, &rels).is_err());
    }

    #[test]
    fn inverse_layout_round_trips() {
        let (_, rels) = tiny_vocabs(0, &["a", "b"]);
        assert_eq!(rels.len(), 5);
        assert_eq!(rels.no_op(), RelationId(2));
        for r in 0..rels.len() as u32 {
            let r = RelationId(r);
            assert_eq!(rels.inverse(rels.inverse(r)), r);
        }
        assert!(rels.is_base(RelationId(0)));
        assert!(!rels.is_base(rels.no_op()));
        assert!(!rels.is_base(rels.inverse(RelationId(0))));
        assert_eq!(rels.name(rels.inverse(RelationId(1))), "b_inv");
    }

    #[test]
    fn vocab_round_trip_preserves_indices() {
        let mut v = Vocab::new();
        for name in ["gamma", "alpha", "beta"] {
            v.intern(name);
        }
        let f = tempfile::NamedTempFile::new().unwrap();
        v.write_tsv(f.path()).unwrap();
        let reloaded = Vocab::read_tsv(f.path()).unwrap();
        assert_eq!(v.names(), reloaded.names());

        let rels = RelationVocab::from_base(v);
        let f2 = tempfile::NamedTempFile::new().unwrap();
        rels.write_tsv(f2.path()).unwrap();
        let reloaded = RelationVocab::read_tsv(f2.path()).unwrap();
        assert_eq!(rels.n_base(), reloaded.n_base());
        for i in 0..rels.len() as u32 {
            assert_eq!(rels.name(RelationId(i)), reloaded.name(RelationId(i)));
        }
    }

    #[test]
    fn group_queries_collects_answers() {
        let triples = vec![
            Triple {
                head: EntityId(0),
                relation: RelationId(0),
                tail: EntityId(1),
            },
            Triple {
                head: EntityId(0),
                relation: RelationId(0),
                tail: EntityId(2),
            },
            Triple {
                head: EntityId(1),
                relation: RelationId(0),
                tail: EntityId(2),
            },
        ];
        let queries = group_queries(&triples);
        assert_eq!(queries.len(), 2);
        assert_eq!(queries[0].answers, vec![EntityId(1), EntityId(2)]);
        assert_eq!(queries[1].source, EntityId(1));
    }

    proptest! {
        #[test]
        fn inverse_closure_and_action_space_invariants(
            edges in proptest::collection::vec((0u32..12, 0u32..3, 0u32..12), 0..60)
        ) {
            let (n, rels) = tiny_vocabs(12, &["r0", "r1", "r2"]);
            let triples: Vec<Triple> = edges
                .into_iter()
                .map(|(h, r, t)| Triple {
                    head: EntityId(h),
                    relation: RelationId(r),
                    tail: EntityId(t),
                })
                .collect();
            let g = KnowledgeGraph::build(n, &rels, &triples, true, true);
            for e in 0..12u32 {
                let actions = g.action_space(EntityId(e));
                // Exactly one (NO_OP, self) edge, no duplicates, sorted.
                prop_assert_eq!(
                    actions.iter().filter(|&&(r, t)| r == rels.no_op() && t == EntityId(e)).count(),
                    1
                );
                let mut sorted = actions.to_vec();
                sorted.sort();
                sorted.dedup();
                prop_assert_eq!(&sorted, actions);
            }
            // Every base edge has its inverse stored.
            for (e, r, t) in g.edges() {
                if rels.is_base(r) {
                    let inv = rels.inverse(r);
                    prop_assert!(g.action_space(t).contains(&(inv, e)));
                }
            }
        }
    }
}
