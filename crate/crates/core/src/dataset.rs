//! Multi-way alignment labels: pivot joins of pair-wise label tables,
//! degree-thresholded subgraph induction, and train/test splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple, Vocab};

/// One entity per graph, all referring to the same real-world object.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AlignmentLabel(pub Vec<usize>);

impl AlignmentLabel {
    pub fn new(entities: Vec<usize>) -> Self {
        Self(entities)
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn entity(&self, m: usize) -> usize {
        self.0[m]
    }

    pub fn entities(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct MultiKgDataset {
    pub kgs: Vec<KnowledgeGraph>,
    pub train_labels: Vec<AlignmentLabel>,
    pub test_labels: Vec<AlignmentLabel>,
    pub anchor_index: Option<usize>,
}

impl MultiKgDataset {
    pub fn new(
        kgs: Vec<KnowledgeGraph>,
        train_labels: Vec<AlignmentLabel>,
        test_labels: Vec<AlignmentLabel>,
    ) -> Result<Self> {
        let ds = Self {
            kgs,
            train_labels,
            test_labels,
            anchor_index: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn graph_count(&self) -> usize {
        self.kgs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.kgs.len();
        if m < 2 {
            return Err(Error::data(format!("need at least 2 graphs, got {m}")));
        }
        validate_labels(&self.kgs, self.train_labels.iter().chain(&self.test_labels))?;
        let train: HashSet<_> = self.train_labels.iter().collect();
        if let Some(l) = self.test_labels.iter().find(|l| train.contains(l)) {
            return Err(Error::data(format!("label {:?} is in both train and test", l.0)));
        }
        if let Some(a) = self.anchor_index {
            if a >= m {
                return Err(Error::data(format!("anchor index {a} out of range for {m} graphs")));
            }
        }
        Ok(())
    }

    /// Fraction of all entities that appear in some label.
    pub fn label_ratio(&self) -> f64 {
        let n = self.train_labels.len() + self.test_labels.len();
        let total: usize = self.kgs.iter().map(|kg| kg.entity_count()).sum();
        label_ratio(n, self.kgs.len(), total)
    }
}

/// `N·M / Σ|E|`, zero when there are no labels.
pub fn label_ratio(labels: usize, graphs: usize, total_entities: usize) -> f64 {
    if labels == 0 || total_entities == 0 {
        return 0.0;
    }
    (labels * graphs) as f64 / total_entities as f64
}

/// Checks arity, index ranges and the one-label-per-entity rule.
pub fn validate_labels<'a>(
    kgs: &[KnowledgeGraph],
    labels: impl IntoIterator<Item = &'a AlignmentLabel>,
) -> Result<()> {
    let m = kgs.len();
    let mut used: Vec<HashSet<usize>> = vec![HashSet::new(); m];
    for label in labels {
        if label.arity() != m {
            return Err(Error::data(format!(
                "label {:?} has arity {}, expected {m}",
                label.0,
                label.arity()
            )));
        }
        for (k, &e) in label.entities().iter().enumerate() {
            if e >= kgs[k].entity_count() {
                return Err(Error::data(format!(
                    "label {:?}: entity {e} out of range for graph {k}",
                    label.0
                )));
            }
            if !used[k].insert(e) {
                return Err(Error::InconsistentLabels(format!(
                    "entity {e} of graph {k} appears in more than one label"
                )));
            }
        }
    }
    Ok(())
}

/// Joins `M − 1` pivot-to-partner tables into `M`-way labels
/// `(pivot, partner₁, …, partner_{M−1})`, keeping only pivots present in
/// every table. Output is sorted by pivot index.
pub fn join_pairwise_labels(pair_tables: &[Vec<(usize, usize)>]) -> Result<Vec<AlignmentLabel>> {
    if pair_tables.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one pair-wise label table".into(),
        ));
    }
    let mut maps: Vec<BTreeMap<usize, usize>> = Vec::with_capacity(pair_tables.len());
    for (f, table) in pair_tables.iter().enumerate() {
        let mut map = BTreeMap::new();
        let mut partners = HashMap::new();
        for &(pivot, other) in table {
            if let Some(prev) = map.insert(pivot, other) {
                if prev != other {
                    return Err(Error::InconsistentLabels(format!(
                        "table {f}: pivot {pivot} mapped to both {prev} and {other}"
                    )));
                }
            }
            if let Some(prev) = partners.insert(other, pivot) {
                if prev != pivot {
                    return Err(Error::InconsistentLabels(format!(
                        "table {f}: entity {other} mapped from both pivots {prev} and {pivot}"
                    )));
                }
            }
        }
        maps.push(map);
    }
    let (first, rest) = maps.split_first().unwrap();
    Ok(first
        .iter()
        .filter_map(|(&pivot, &p1)| {
            let mut entities = vec![pivot, p1];
            for map in rest {
                entities.push(*map.get(&pivot)?);
            }
            Some(AlignmentLabel(entities))
        })
        .collect())
}

/// Induced subgraph plus the map from new dense indices to old ones.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub kg: KnowledgeGraph,
    /// `entity_map[new] = old`.
    pub entity_map: Vec<usize>,
    /// `relation_map[new] = old`.
    pub relation_map: Vec<usize>,
}

impl Subgraph {
    pub fn new_entity_index(&self) -> HashMap<usize, usize> {
        self.entity_map
            .iter()
            .enumerate()
            .map(|(new, &old)| (old, new))
            .collect()
    }
}

/// Keeps the seeds plus every neighbor of a seed whose undirected degree is
/// strictly greater than `degree_threshold`, then every original triple with
/// both endpoints kept. Entities keep their relative order; relations are
/// re-indexed to those still used.
pub fn induce_subgraph(
    kg: &KnowledgeGraph,
    seeds: &BTreeSet<usize>,
    degree_threshold: usize,
) -> Result<Subgraph> {
    if kg.is_augmented() {
        return Err(Error::InvalidArgument(
            "subgraph induction runs on the un-augmented graph".into(),
        ));
    }
    if let Some(&bad) = seeds.iter().find(|&&s| s >= kg.entity_count()) {
        return Err(Error::data(format!(
            "seed entity {bad} not in graph with {} entities",
            kg.entity_count()
        )));
    }
    let degrees = kg.degrees();
    let mut keep = vec![false; kg.entity_count()];
    for &s in seeds {
        keep[s] = true;
    }
    for t in kg.triples() {
        for (a, b) in [(t.head, t.tail), (t.tail, t.head)] {
            if seeds.contains(&a) && degrees[b] > degree_threshold {
                keep[b] = true;
            }
        }
    }
    let entity_map: Vec<usize> = (0..kg.entity_count()).filter(|&e| keep[e]).collect();
    let mut new_entity = vec![usize::MAX; kg.entity_count()];
    for (new, &old) in entity_map.iter().enumerate() {
        new_entity[old] = new;
    }
    let kept: Vec<&Triple> = kg
        .triples()
        .iter()
        .filter(|t| keep[t.head] && keep[t.tail])
        .collect();
    let used: BTreeSet<usize> = kept.iter().map(|t| t.relation).collect();
    let relation_map: Vec<usize> = used.into_iter().collect();
    let mut new_relation = vec![usize::MAX; kg.relation_count()];
    for (new, &old) in relation_map.iter().enumerate() {
        new_relation[old] = new;
    }
    let triples = kept
        .iter()
        .map(|t| Triple::new(new_entity[t.head], new_relation[t.relation], new_entity[t.tail]));
    let sub = KnowledgeGraph::from_triples(entity_map.len(), relation_map.len(), triples)?;
    let entity_names = kg
        .entity_names()
        .map(|v| entity_map.iter().map(|&o| v[o].clone()).collect::<Vocab>());
    let relation_names = kg
        .relation_names()
        .map(|v| relation_map.iter().map(|&o| v[o].clone()).collect::<Vocab>());
    Ok(Subgraph {
        kg: sub.with_names(entity_names, relation_names),
        entity_map,
        relation_map,
    })
}

/// Deterministic shuffled split with `|train| = round(ratio · N)` (half up).
/// Both parts keep the input order.
pub fn split_labels<T: Clone>(labels: &[T], train_ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::config(format!(
            "train ratio must lie strictly between 0 and 1, got {train_ratio}"
        )));
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::data("cannot split an empty label set"));
    }
    let n_train = (train_ratio * n as f64 + 0.5).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::data(format!(
            "ratio {train_ratio} on {n} labels leaves {n_train} train and {} test labels; both must be non-empty",
            n.saturating_sub(n_train)
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (i, l) in labels.iter().enumerate() {
        if in_train[i] {
            train.push(l.clone());
        } else {
            test.push(l.clone());
        }
    }
    Ok((train, test))
}

/// Output of [`build_multi_kg`].
#[derive(Debug, Clone)]
pub struct BuiltDataset {
    pub subgraphs: Vec<Subgraph>,
    pub labels: Vec<AlignmentLabel>,
    /// Joined labels discarded because an entity was absent from its graph.
    pub dropped_missing: usize,
    /// Labels discarded because induction removed one of their entities.
    pub dropped_by_induction: usize,
}

impl BuiltDataset {
    pub fn kgs(&self) -> Vec<KnowledgeGraph> {
        self.subgraphs.iter().map(|s| s.kg.clone()).collect()
    }

    pub fn label_ratio(&self) -> f64 {
        let total = self.subgraphs.iter().map(|s| s.kg.entity_count()).sum();
        label_ratio(self.labels.len(), self.subgraphs.len(), total)
    }
}

/// Full construction: pivot join over named entities, per-graph induction
/// around the labelled entities, and label re-mapping into the subgraphs.
///
/// `kgs[0]` is the pivot; `pair_tables[i]` maps pivot entity ids to ids of
/// `kgs[i + 1]`. Ids are the original strings of each graph's vocabulary.
pub fn build_multi_kg(
    kgs: &[KnowledgeGraph],
    pair_tables: &[Vec<(String, String)>],
    degree_threshold: usize,
) -> Result<BuiltDataset> {
    if kgs.len() < 2 || pair_tables.len() + 1 != kgs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} graphs need {} pair tables, got {}",
            kgs.len(),
            kgs.len().saturating_sub(1),
            pair_tables.len()
        )));
    }
    let vocab = |m: usize| {
        kgs[m].entity_names().ok_or_else(|| {
            Error::data(format!("graph {m} has no entity names to resolve label ids"))
        })
    };
    let pivot_vocab = vocab(0)?;
    let mut tables = Vec::with_capacity(pair_tables.len());
    for (i, table) in pair_tables.iter().enumerate() {
        let partner_vocab = vocab(i + 1)?;
        tables.push(
            table
                .iter()
                .filter_map(|(p, o)| {
                    Some((pivot_vocab.get_index_of(p)?, partner_vocab.get_index_of(o)?))
                })
                .collect::<Vec<_>>(),
        );
    }
    let mut labels = join_pairwise_labels(&tables)?;
    let mut appearances: HashMap<&str, usize> = HashMap::new();
    for table in pair_tables {
        let unique: HashSet<&str> = table.iter().map(|(p, _)| p.as_str()).collect();
        for p in unique {
            *appearances.entry(p).or_default() += 1;
        }
    }
    let in_every_table = appearances
        .values()
        .filter(|&&c| c == pair_tables.len())
        .count();
    let dropped_missing = in_every_table.saturating_sub(labels.len());
    labels.sort();
    validate_labels(kgs, &labels)?;

    let m = kgs.len();
    let mut subgraphs = Vec::with_capacity(m);
    for (k, kg) in kgs.iter().enumerate() {
        let seeds: BTreeSet<usize> = labels.iter().map(|l| l.entity(k)).collect();
        subgraphs.push(induce_subgraph(kg, &seeds, degree_threshold)?);
    }
    let maps: Vec<HashMap<usize, usize>> = subgraphs.iter().map(|s| s.new_entity_index()).collect();
    let before = labels.len();
    let labels: Vec<AlignmentLabel> = labels
        .into_iter()
        .filter_map(|l| {
            let entities = l
                .entities()
                .iter()
                .enumerate()
                .map(|(k, e)| maps[k].get(e).copied())
                .collect::<Option<Vec<_>>>()?;
            Some(AlignmentLabel(entities))
        })
        .collect();
    let dropped_by_induction = before - labels.len();
    Ok(BuiltDataset {
        subgraphs,
        labels,
        dropped_missing,
        dropped_by_induction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn label(v: &[usize]) -> AlignmentLabel {
        AlignmentLabel(v.to_vec())
    }

    #[test]
    fn join_full_intersection() {
        // a=0, x=10, p=20, q=30
        let out = join_pairwise_labels(&[vec![(0, 10)], vec![(0, 20)], vec![(0, 30)]]).unwrap();
        assert_eq!(out, vec![label(&[0, 10, 20, 30])]);
    }

    #[test]
    fn join_drops_pivot_missing_from_one_table() {
        let out = join_pairwise_labels(&[vec![(0, 10)], vec![], vec![(0, 30)]]).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn join_sorts_by_pivot_and_rejects_conflicts() {
        let out = join_pairwise_labels(&[vec![(5, 1), (2, 0), (2, 0)], vec![(2, 7), (5, 8)]]).unwrap();
        assert_eq!(out, vec![label(&[2, 0, 7]), label(&[5, 1, 8])]);
        assert!(matches!(
            join_pairwise_labels(&[vec![(0, 1), (0, 2)]]),
            Err(Error::InconsistentLabels(_))
        ));
    }

    fn star_graph() -> KnowledgeGraph {
        // s=0; n1=1 with degree 20; n2=2 with degree 10; leaves from 3 on
        let mut t = vec![Triple::new(0, 0, 1), Triple::new(0, 0, 2)];
        let mut next = 3;
        for _ in 0..19 {
            t.push(Triple::new(1, 0, next));
            next += 1;
        }
        for _ in 0..9 {
            t.push(Triple::new(next, 0, 2));
            next += 1;
        }
        KnowledgeGraph::from_triples(next, 1, t).unwrap()
    }

    #[test]
    fn induction_keeps_high_degree_neighbors() {
        let kg = star_graph();
        assert_eq!(kg.degrees()[1], 20);
        assert_eq!(kg.degrees()[2], 10);
        let sub = induce_subgraph(&kg, &BTreeSet::from([0]), 15).unwrap();
        assert_eq!(sub.entity_map, vec![0, 1]);
        assert_eq!(sub.kg.triples(), &[Triple::new(0, 0, 1)]);
        assert_eq!(sub.relation_map, vec![0]);
    }

    #[test]
    fn threshold_zero_keeps_all_neighbors() {
        let kg = star_graph();
        let sub = induce_subgraph(&kg, &BTreeSet::from([0]), 0).unwrap();
        assert_eq!(sub.entity_map, vec![0, 1, 2]);
    }

    #[test]
    fn induction_is_one_hop() {
        // chain s–a–b with deg(a) = 16 and deg(b) = 16
        let mut t = vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2)];
        let mut next = 3;
        for _ in 0..14 {
            t.push(Triple::new(1, 1, next));
            next += 1;
        }
        for _ in 0..15 {
            t.push(Triple::new(2, 1, next));
            next += 1;
        }
        let kg = KnowledgeGraph::from_triples(next, 2, t).unwrap();
        assert_eq!(kg.degrees()[1], 16);
        let seeds = BTreeSet::from([0]);
        let sub = induce_subgraph(&kg, &seeds, 15).unwrap();
        // brute-force closure of the one-hop rule
        let deg = kg.degrees();
        let expected: Vec<usize> = (0..kg.entity_count())
            .filter(|&e| {
                seeds.contains(&e)
                    || kg.triples().iter().any(|t| {
                        (seeds.contains(&t.head) && t.tail == e || seeds.contains(&t.tail) && t.head == e)
                            && deg[e] > 15
                    })
            })
            .collect();
        assert_eq!(sub.entity_map, expected);
        assert_eq!(sub.entity_map, vec![0, 1]);
    }

    #[test]
    fn induction_rejects_unknown_seed() {
        let kg = star_graph();
        assert!(induce_subgraph(&kg, &BTreeSet::from([999]), 15).is_err());
    }

    #[test]
    fn induction_reindexes_relations_and_names() {
        let kg = KnowledgeGraph::load(Cursor::new("a\tr1\tb\nc\tr2\td\nb\tr3\ta\n")).unwrap();
        let sub = induce_subgraph(&kg, &BTreeSet::from([0, 1]), 0).unwrap();
        assert_eq!(sub.kg.entity_count(), 2);
        assert_eq!(sub.relation_map, vec![0, 2]);
        assert_eq!(sub.kg.relation_label(1), "r3");
        assert_eq!(sub.kg.entity_label(1), "b");
        // triples map back into the input
        for t in sub.kg.triples() {
            let orig = Triple::new(sub.entity_map[t.head], sub.relation_map[t.relation], sub.entity_map[t.tail]);
            assert!(kg.triples().contains(&orig));
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let labels: Vec<usize> = (0..2539).collect();
        let (train, test) = split_labels(&labels, 0.3, 1).unwrap();
        assert_eq!(train.len(), 762);
        assert_eq!(test.len(), 1777);

        let small: Vec<usize> = (0..10).collect();
        let a = split_labels(&small, 0.3, 42).unwrap();
        let b = split_labels(&small, 0.3, 42).unwrap();
        assert_eq!(a, b);
        let mut all = a.0.clone();
        all.extend(a.1);
        all.sort();
        assert_eq!(all, small);
    }

    #[test]
    fn split_guards() {
        assert!(split_labels(&[0usize, 1], 0.999, 0).is_err());
        assert!(split_labels::<usize>(&[], 0.3, 0).is_err());
        assert!(split_labels(&[0usize, 1], 0.0, 0).is_err());
        assert!(split_labels(&[0usize, 1], 1.0, 0).is_err());
    }

    #[test]
    fn label_ratio_values() {
        let r = label_ratio(2539, 4, 8901 + 3545 + 4326 + 3893);
        assert!((r - 0.4915).abs() < 1e-4);
        assert_eq!(label_ratio(0, 3, 10), 0.0);
        assert_eq!(label_ratio(5, 2, 10), 1.0);
    }

    #[test]
    fn dataset_validation() {
        let kg = KnowledgeGraph::from_triples(3, 1, [Triple::new(0, 0, 1)]).unwrap();
        let ok = MultiKgDataset::new(vec![kg.clone(), kg.clone()], vec![label(&[0, 0])], vec![label(&[1, 2])]);
        assert!(ok.is_ok());
        assert!(MultiKgDataset::new(vec![kg.clone()], vec![], vec![]).is_err());
        assert!(MultiKgDataset::new(vec![kg.clone(), kg.clone()], vec![label(&[0, 0])], vec![label(&[0, 0])]).is_err());
        assert!(MultiKgDataset::new(vec![kg.clone(), kg.clone()], vec![label(&[0, 0, 0])], vec![]).is_err());
        assert!(MultiKgDataset::new(vec![kg.clone(), kg.clone()], vec![label(&[0, 5])], vec![]).is_err());
        assert!(MultiKgDataset::new(vec![kg.clone(), kg], vec![label(&[0, 1]), label(&[0, 2])], vec![]).is_err());
    }

    #[test]
    fn build_pipeline_on_toy_graphs() {
        let en = KnowledgeGraph::load(Cursor::new("a\tr\tb\nb\tr\tc\nz\tr\ta\n")).unwrap();
        let fr = KnowledgeGraph::load(Cursor::new("x\ts\ty\ny\ts\tw\n")).unwrap();
        let zh = KnowledgeGraph::load(Cursor::new("p\tt\tq\n")).unwrap();
        let pairs = vec![
            vec![("a".to_string(), "x".to_string()), ("b".into(), "y".into()), ("c".into(), "w".into())],
            vec![("a".to_string(), "p".to_string()), ("b".into(), "q".into()), ("c".into(), "nope".into())],
        ];
        let built = build_multi_kg(&[en, fr, zh], &pairs, 0).unwrap();
        assert_eq!(built.labels.len(), 2);
        assert_eq!(built.dropped_missing, 1);
        assert_eq!(built.dropped_by_induction, 0);
        let en_sub = &built.subgraphs[0].kg;
        let names: Vec<String> = built.labels.iter().map(|l| en_sub.entity_label(l.entity(0))).collect();
        assert_eq!(names, vec!["a", "b"]);
        // threshold 0 keeps z (neighbor of a) and c (neighbor of b)
        assert_eq!(en_sub.entity_count(), 4);
    }
}
