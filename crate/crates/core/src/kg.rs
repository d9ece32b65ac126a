//! Single knowledge graph: entities, relations, triples, the virtual
//! self-relation, and the per-entity neighbor tuple index used by the encoder.

use std::collections::HashSet;
use std::io::BufRead;

use indexmap::IndexSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Dense-index vocabulary. Position in the set is the index.
pub type Vocab = IndexSet<String>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    entity_count: usize,
    relation_count: usize,
    triples: Vec<Triple>,
    self_relation: Option<usize>,
    entity_names: Option<Vocab>,
    relation_names: Option<Vocab>,
}

impl KnowledgeGraph {
    /// Builds a graph from index triples, dropping duplicates while keeping
    /// first-appearance order.
    pub fn from_triples(
        entity_count: usize,
        relation_count: usize,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        for t in triples {
            if t.head >= entity_count || t.tail >= entity_count {
                return Err(Error::data(format!(
                    "triple ({}, {}, {}) references an entity outside 0..{entity_count}",
                    t.head, t.relation, t.tail
                )));
            }
            if t.relation >= relation_count {
                return Err(Error::data(format!(
                    "triple ({}, {}, {}) references a relation outside 0..{relation_count}",
                    t.head, t.relation, t.tail
                )));
            }
            if seen.insert(t) {
                kept.push(t);
            }
        }
        Ok(Self {
            entity_count,
            relation_count,
            triples: kept,
            self_relation: None,
            entity_names: None,
            relation_names: None,
        })
    }

    /// Parses `head<TAB>relation<TAB>tail` lines. Ids are arbitrary strings
    /// mapped to dense indices in order of first appearance.
    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut raw = Vec::new();
        for_each_triple_line(reader, |_, h, r, t| {
            let (hi, _) = entities.insert_full(h.to_owned());
            let (ri, _) = relations.insert_full(r.to_owned());
            let (ti, _) = entities.insert_full(t.to_owned());
            raw.push(Triple::new(hi, ri, ti));
            Ok(())
        })?;
        let mut kg = Self::from_triples(entities.len(), relations.len(), raw)?;
        kg.entity_names = Some(entities);
        kg.relation_names = Some(relations);
        Ok(kg)
    }

    /// Parses a triple file whose ids are resolved through fixed vocabularies
    /// (the `ent_ids.tsv` / `rel_ids.tsv` sidecars). Entities listed in the
    /// vocabulary but absent from the triples are kept as isolated nodes.
    pub fn load_with_vocab<R: BufRead>(
        reader: R,
        entities: Vocab,
        relations: Vocab,
    ) -> Result<Self> {
        let mut raw = Vec::new();
        for_each_triple_line(reader, |line_no, h, r, t| {
            let lookup = |vocab: &Vocab, id: &str, what: &str| {
                vocab.get_index_of(id).ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("unknown {what} id {id:?}"),
                })
            };
            raw.push(Triple::new(
                lookup(&entities, h, "entity")?,
                lookup(&relations, r, "relation")?,
                lookup(&entities, t, "entity")?,
            ));
            Ok(())
        })?;
        let mut kg = Self::from_triples(entities.len(), relations.len(), raw)?;
        kg.entity_names = Some(entities);
        kg.relation_names = Some(relations);
        Ok(kg)
    }

    pub fn with_names(mut self, entities: Option<Vocab>, relations: Option<Vocab>) -> Self {
        self.entity_names = entities;
        self.relation_names = relations;
        self
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn self_relation(&self) -> Option<usize> {
        self.self_relation
    }

    pub fn is_augmented(&self) -> bool {
        self.self_relation.is_some()
    }

    pub fn entity_names(&self) -> Option<&Vocab> {
        self.entity_names.as_ref()
    }

    pub fn relation_names(&self) -> Option<&Vocab> {
        self.relation_names.as_ref()
    }

    /// Display name of an entity: its original id when known, else the index.
    pub fn entity_label(&self, index: usize) -> String {
        match self.entity_names.as_ref().and_then(|v| v.get_index(index)) {
            Some(name) => name.clone(),
            None => index.to_string(),
        }
    }

    pub fn relation_label(&self, index: usize) -> String {
        match self.relation_names.as_ref().and_then(|v| v.get_index(index)) {
            Some(name) => name.clone(),
            None => index.to_string(),
        }
    }

    /// Triples that are not virtual self-loops.
    pub fn original_triples(&self) -> impl Iterator<Item = &Triple> {
        let self_rel = self.self_relation;
        self.triples
            .iter()
            .filter(move |t| Some(t.relation) != self_rel)
    }

    /// Adds the virtual self-relation (always the last relation index) and
    /// one `(i, self, i)` triple per entity.
    pub fn augment_self_relations(mut self) -> Result<Self> {
        if self.self_relation.is_some() {
            return Err(Error::InvalidArgument(
                "knowledge graph is already augmented with a self-relation".into(),
            ));
        }
        let self_rel = self.relation_count;
        self.relation_count += 1;
        self.triples
            .extend((0..self.entity_count).map(|i| Triple::new(i, self_rel, i)));
        self.self_relation = Some(self_rel);
        Ok(self)
    }

    /// Undirected degree: number of incident triples, self-loops excluded.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.entity_count];
        for t in self.original_triples() {
            deg[t.head] += 1;
            if t.tail != t.head {
                deg[t.tail] += 1;
            }
        }
        deg
    }

    pub fn build_neighbor_index(&self) -> Result<NeighborIndex> {
        NeighborIndex::build(self)
    }
}

fn for_each_triple_line<R: BufRead>(
    reader: R,
    mut f: impl FnMut(usize, &str, &str, &str) -> Result<()>,
) -> Result<()> {
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "expected 3 non-empty tab-separated fields, found {}",
                    fields.len()
                ),
            });
        }
        f(line_no, fields[0], fields[1], fields[2])?;
    }
    Ok(())
}

/// Per-entity `(relation, neighbor)` tuples in CSR layout, relations treated
/// as undirected. Segment `i` is sorted by `(relation, neighbor)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    offsets: Vec<usize>,
    relations: Vec<usize>,
    neighbors: Vec<usize>,
}

impl NeighborIndex {
    pub fn build(kg: &KnowledgeGraph) -> Result<Self> {
        let self_rel = kg.self_relation().ok_or_else(|| {
            Error::InvalidArgument("neighbor index requires an augmented knowledge graph".into())
        })?;
        let n = kg.entity_count();
        let mut entries: Vec<(usize, usize, usize)> = Vec::with_capacity(2 * kg.triples().len());
        for t in kg.triples() {
            entries.push((t.head, t.relation, t.tail));
            entries.push((t.tail, t.relation, t.head));
        }
        entries.sort_unstable();
        entries.dedup();

        let mut offsets = Vec::with_capacity(n + 1);
        let mut relations = Vec::with_capacity(entries.len());
        let mut neighbors = Vec::with_capacity(entries.len());
        offsets.push(0);
        let mut cursor = 0;
        for owner in 0..n {
            while cursor < entries.len() && entries[cursor].0 == owner {
                relations.push(entries[cursor].1);
                neighbors.push(entries[cursor].2);
                cursor += 1;
            }
            offsets.push(relations.len());
        }
        let index = Self {
            offsets,
            relations,
            neighbors,
        };
        for i in 0..n {
            assert!(
                index.segment(i).any(|(k, j)| k == self_rel && j == i),
                "entity {i} lacks its self tuple"
            );
        }
        Ok(index)
    }

    pub fn entity_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn tuple_count(&self) -> usize {
        self.relations.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Relation index of every tuple, in segment order.
    pub fn relations(&self) -> &[usize] {
        &self.relations
    }

    /// Neighbor entity of every tuple, in segment order.
    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    /// Owning entity of every tuple.
    pub fn owners(&self) -> Vec<usize> {
        let mut owners = Vec::with_capacity(self.tuple_count());
        for i in 0..self.entity_count() {
            owners.extend(std::iter::repeat_n(i, self.offsets[i + 1] - self.offsets[i]));
        }
        owners
    }

    pub fn segment(&self, entity: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let range = self.offsets[entity]..self.offsets[entity + 1];
        self.relations[range.clone()]
            .iter()
            .copied()
            .zip(self.neighbors[range].iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use std::io::Cursor;

    fn kg(n: usize, r: usize, triples: &[(usize, usize, usize)]) -> KnowledgeGraph {
        KnowledgeGraph::from_triples(
            n,
            r,
            triples.iter().map(|&(h, r, t)| Triple::new(h, r, t)),
        )
        .unwrap()
    }

    #[test]
    fn empty_stream_gives_empty_graph() {
        let kg = KnowledgeGraph::load(Cursor::new("")).unwrap();
        assert_eq!(kg.entity_count(), 0);
        assert_eq!(kg.relation_count(), 0);
        assert!(kg.triples().is_empty());
    }

    #[test]
    fn duplicate_lines_are_dropped() {
        let kg = KnowledgeGraph::load(Cursor::new("a\tr\tb\nb\tr\ta\na\tr\tb\n")).unwrap();
        assert_eq!(kg.entity_count(), 2);
        assert_eq!(kg.relation_count(), 1);
        assert_eq!(kg.triples().len(), 2);
        assert_eq!(kg.entity_label(0), "a");
        assert_eq!(kg.entity_label(1), "b");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = KnowledgeGraph::load(Cursor::new("a\tr\tb\n\na\tb\n")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn integer_ids_are_remapped_by_first_appearance() {
        let kg = KnowledgeGraph::load(Cursor::new("7\t0\t3\n3\t0\t9\n")).unwrap();
        assert_eq!(kg.entity_count(), 3);
        assert_eq!(kg.triples()[0], Triple::new(0, 0, 1));
        assert_eq!(kg.triples()[1], Triple::new(1, 0, 2));
    }

    #[test]
    fn vocab_loader_keeps_isolated_entities() {
        let ents: Vocab = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let rels: Vocab = ["r"].iter().map(|s| s.to_string()).collect();
        let kg = KnowledgeGraph::load_with_vocab(Cursor::new("z\tr\tx\n"), ents, rels).unwrap();
        assert_eq!(kg.entity_count(), 3);
        assert_eq!(kg.triples(), &[Triple::new(2, 0, 0)]);
        let ents: Vocab = ["x"].iter().map(|s| s.to_string()).collect();
        let rels: Vocab = ["r"].iter().map(|s| s.to_string()).collect();
        assert!(matches!(
            KnowledgeGraph::load_with_vocab(Cursor::new("x\tr\tq\n"), ents, rels),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn augmentation_appends_one_self_loop_per_entity() {
        let g = kg(3, 2, &[(0, 0, 1), (1, 1, 2), (2, 0, 0), (0, 1, 2)])
            .augment_self_relations()
            .unwrap();
        assert_eq!(g.relation_count(), 3);
        assert_eq!(g.triples().len(), 7);
        assert_eq!(g.self_relation(), Some(2));
        for i in 0..3 {
            let loops = g
                .triples()
                .iter()
                .filter(|t| t.relation == 2 && t.head == i && t.tail == i)
                .count();
            assert_eq!(loops, 1);
        }
    }

    #[test]
    fn augmenting_empty_graph_adds_unused_relation() {
        let g = kg(0, 0, &[]).augment_self_relations().unwrap();
        assert_eq!(g.relation_count(), 1);
        assert!(g.triples().is_empty());
    }

    #[test]
    fn double_augmentation_is_rejected() {
        let g = kg(2, 1, &[(0, 0, 1)]).augment_self_relations().unwrap();
        assert!(g.augment_self_relations().is_err());
    }

    #[test]
    fn neighbor_index_requires_augmentation() {
        assert!(kg(2, 1, &[(0, 0, 1)]).build_neighbor_index().is_err());
    }

    #[test]
    fn single_edge_neighbors_are_bidirected() {
        let g = kg(2, 1, &[(0, 0, 1)]).augment_self_relations().unwrap();
        let idx = g.build_neighbor_index().unwrap();
        let s0: Vec<_> = idx.segment(0).collect();
        let s1: Vec<_> = idx.segment(1).collect();
        assert_eq!(s0, vec![(0, 1), (1, 0)]);
        assert_eq!(s1, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn isolated_entity_has_only_self_tuple() {
        let g = kg(3, 1, &[(0, 0, 1)]).augment_self_relations().unwrap();
        let idx = g.build_neighbor_index().unwrap();
        assert_eq!(idx.segment(2).collect::<Vec<_>>(), vec![(1, 2)]);
    }

    #[test]
    fn symmetric_triples_collapse_to_one_tuple() {
        let g = kg(2, 1, &[(0, 0, 1), (1, 0, 0)]).augment_self_relations().unwrap();
        let idx = g.build_neighbor_index().unwrap();
        // brute-force set construction straight from the membership rule
        let mut expected = BTreeSet::new();
        for t in g.triples() {
            if t.head == 0 {
                expected.insert((t.relation, t.tail));
            }
            if t.tail == 0 {
                expected.insert((t.relation, t.head));
            }
        }
        let got: BTreeSet<_> = idx.segment(0).collect();
        assert_eq!(got, expected);
        assert_eq!(idx.segment(0).filter(|&(k, j)| k == 0 && j == 1).count(), 1);
        assert_eq!(idx.tuple_count(), 2 * 2 + 2 - 2);
    }

    #[test]
    fn degree_counts_both_directions() {
        let g = kg(3, 1, &[(0, 0, 1), (2, 0, 0), (1, 0, 1)]);
        assert_eq!(g.degrees(), vec![2, 2, 1]);
    }

    #[test]
    fn out_of_range_indices_are_rejected() {
        assert!(KnowledgeGraph::from_triples(2, 1, [Triple::new(0, 0, 2)]).is_err());
        assert!(KnowledgeGraph::from_triples(2, 1, [Triple::new(0, 1, 1)]).is_err());
    }
}
