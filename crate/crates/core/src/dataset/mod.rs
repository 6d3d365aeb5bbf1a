//! Feature-vector datasets: instances, class embeddings and seen/unseen splits.
//!
//! Everything here is validated eagerly, so downstream modules can assume
//! finite values, consistent dimensions and fully resolved class labels.

mod io;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vecmath;

pub use io::{
    format_embeddings, format_instances, format_split, load_dataset, load_embeddings, load_instances,
    load_split, parse_embeddings, parse_instances, parse_split, write_dataset,
};
pub use synthetic::{generate_synthetic, generate_synthetic_with_truth, SyntheticSpec, SyntheticTruth};

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub class_label: String,
    pub features: Vec<f64>,
}

/// Per-class semantic vectors `a(y)`, keyed and iterated in label order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl ClassEmbeddingTable {
    /// Builds a table, rejecting ragged, non-finite or all-zero vectors.
    pub fn new(entries: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let dim = match entries.values().next() {
            Some(v) => v.len(),
            None => return Err(Error::EmptyDataset("embedding table".into())),
        };
        if dim == 0 {
            return Err(Error::EmptyDataset("embedding vectors have no entries".into()));
        }
        for (label, v) in &entries {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    line: 0,
                    expected: dim,
                    found: v.len(),
                });
            }
            if !vecmath::all_finite(v) {
                return Err(Error::NonFiniteValue(format!("embedding of `{label}`")));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::ZeroEmbedding(label.clone()));
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&[f64]> {
        self.entries.get(label).map(Vec::as_slice)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.entries.contains_key(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Row-major `labels.len() × dim` matrix in the order given.
    pub fn matrix(&self, labels: &[String]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(labels.len() * self.dim);
        for l in labels {
            let v = self.get(l).ok_or_else(|| Error::UnknownClass(l.clone()))?;
            out.extend_from_slice(v);
        }
        Ok(out)
    }
}

/// Disjoint seen (`Y_s`) and unseen (`Y_u`) label sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSplit {
    seen: BTreeSet<String>,
    unseen: BTreeSet<String>,
}

impl ClassSplit {
    pub fn new(
        seen: impl IntoIterator<Item = String>,
        unseen: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let seen: BTreeSet<String> = seen.into_iter().collect();
        let unseen: BTreeSet<String> = unseen.into_iter().collect();
        if seen.is_empty() {
            return Err(Error::EmptySide("seen"));
        }
        if unseen.is_empty() {
            return Err(Error::EmptySide("unseen"));
        }
        if let Some(shared) = seen.intersection(&unseen).next() {
            return Err(Error::OverlappingSplit(shared.clone()));
        }
        Ok(Self { seen, unseen })
    }

    /// Seen labels in sorted order; this order indexes the semantic softmax.
    pub fn seen(&self) -> Vec<String> {
        self.seen.iter().cloned().collect()
    }

    pub fn unseen(&self) -> Vec<String> {
        self.unseen.iter().cloned().collect()
    }

    pub fn is_seen(&self, label: &str) -> bool {
        self.seen.contains(label)
    }

    pub fn is_unseen(&self, label: &str) -> bool {
        self.unseen.contains(label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.is_seen(label) || self.is_unseen(label)
    }

    /// Rejects labels that the embedding table does not know.
    pub fn check_against(&self, table: &ClassEmbeddingTable) -> Result<()> {
        for l in self.seen.iter().chain(&self.unseen) {
            if !table.contains(l) {
                return Err(Error::UnknownClass(l.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub d_v: usize,
    pub instances: Vec<Instance>,
    pub embeddings: ClassEmbeddingTable,
    pub split: ClassSplit,
}

impl LabeledDataset {
    /// Indices of instances whose label is a seen class.
    pub fn seen_indices(&self) -> Vec<usize> {
        (0..self.instances.len())
            .filter(|&i| self.split.is_seen(&self.instances[i].class_label))
            .collect()
    }

    pub fn unseen_indices(&self) -> Vec<usize> {
        (0..self.instances.len())
            .filter(|&i| self.split.is_unseen(&self.instances[i].class_label))
            .collect()
    }

    /// Deterministically holds out `fraction` of each seen class for testing.
    ///
    /// Returns `(train, held_out)` instance indices, both in file order. See
    /// [`LabeledDataset::stratified_split`].
    pub fn seen_holdout(&self, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        self.stratified_split(&self.seen_indices(), fraction, seed)
    }

    /// Splits `indices` class by class. Within each class, instances are
    /// shuffled by a generator seeded with `seed` and the first
    /// `round(fraction * n)` become held-out; at least one instance per class
    /// always stays on the kept side. Both outputs keep the input order.
    pub fn stratified_split(
        &self,
        indices: &[usize],
        fraction: f64,
        seed: u64,
    ) -> (Vec<usize>, Vec<usize>) {
        let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for &i in indices {
            by_class
                .entry(self.instances[i].class_label.as_str())
                .or_default()
                .push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_401d);
        let mut held = BTreeSet::new();
        for members in by_class.values() {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            let n = shuffled.len();
            let take = ((fraction * n as f64).round() as usize).min(n.saturating_sub(1));
            held.extend(shuffled.into_iter().take(take));
        }
        indices.iter().copied().partition(|i| !held.contains(i))
    }
}

/// Cross-checks loaded components and assembles a dataset.
pub fn validate_dataset(
    instances: Vec<Instance>,
    table: ClassEmbeddingTable,
    split: ClassSplit,
) -> Result<LabeledDataset> {
    let d_v = match instances.first() {
        Some(inst) => inst.features.len(),
        None => return Err(Error::EmptyDataset("no instances".into())),
    };
    split.check_against(&table)?;
    let mut ids = BTreeSet::new();
    let mut any_seen = false;
    for (line, inst) in instances.iter().enumerate() {
        if inst.features.len() != d_v {
            return Err(Error::DimensionMismatch {
                line: line + 1,
                expected: d_v,
                found: inst.features.len(),
            });
        }
        if !ids.insert(inst.id.as_str()) {
            return Err(Error::DuplicateInstance(inst.id.clone()));
        }
        if !table.contains(&inst.class_label) || !split.contains(&inst.class_label) {
            return Err(Error::UnknownClass(inst.class_label.clone()));
        }
        any_seen |= split.is_seen(&inst.class_label);
    }
    if !any_seen {
        return Err(Error::NoSeenInstances);
    }
    Ok(LabeledDataset {
        d_v,
        instances,
        embeddings: table,
        split,
    })
}

/// Averages several embedding sources per class.
///
/// Each source vector is L2-normalized and zero-padded to the widest
/// dimension before averaging. A single table is returned unchanged.
pub fn combine_embeddings(tables: &[ClassEmbeddingTable]) -> Result<ClassEmbeddingTable> {
    let first = tables
        .first()
        .ok_or(Error::EmptyDataset("no embedding tables to combine".into()))?;
    if tables.len() == 1 {
        return Ok(first.clone());
    }
    let labels: Vec<&str> = first.labels().collect();
    for t in &tables[1..] {
        if t.len() != labels.len() || !labels.iter().all(|l| t.contains(l)) {
            return Err(Error::ClassSetMismatch);
        }
    }
    let dim = tables.iter().map(ClassEmbeddingTable::dim).max().unwrap_or(0);
    let scale = 1.0 / tables.len() as f64;
    let mut combined = BTreeMap::new();
    for label in labels {
        let mut acc = vec![0.0; dim];
        for t in tables {
            let v = t.get(label).expect("class sets checked above");
            let n = vecmath::norm(v);
            for (a, x) in acc.iter_mut().zip(v) {
                *a += scale * x / n;
            }
        }
        combined.insert(label.to_string(), acc);
    }
    ClassEmbeddingTable::new(combined)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(entries: &[(&str, &[f64])]) -> ClassEmbeddingTable {
        ClassEmbeddingTable::new(
            entries
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_vec()))
                .collect(),
        )
        .unwrap()
    }

    fn inst(id: &str, label: &str, f: &[f64]) -> Instance {
        Instance {
            id: id.into(),
            class_label: label.into(),
            features: f.to_vec(),
        }
    }

    fn split(seen: &[&str], unseen: &[&str]) -> Result<ClassSplit> {
        ClassSplit::new(
            seen.iter().map(|s| s.to_string()),
            unseen.iter().map(|s| s.to_string()),
        )
    }

    #[test]
    fn split_rules() {
        assert!(split(&["A", "B"], &["C"]).is_ok());
        assert!(matches!(
            split(&["A"], &["A", "B"]),
            Err(Error::OverlappingSplit(l)) if l == "A"
        ));
        assert!(matches!(split(&[], &["A"]), Err(Error::EmptySide("seen"))));
        let t = table(&[("A", &[1.0]), ("B", &[2.0]), ("C", &[3.0])]);
        let s = split(&["A"], &["D"]).unwrap();
        assert!(matches!(s.check_against(&t), Err(Error::UnknownClass(l)) if l == "D"));
    }

    #[test]
    fn zero_embedding_rejected() {
        let err = ClassEmbeddingTable::new(
            [("A".to_string(), vec![0.0, 0.0])].into_iter().collect(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ZeroEmbedding(_)));
    }

    #[test]
    fn validate_consistent_components() {
        let t = table(&[("A", &[1.0, 0.0]), ("B", &[0.0, 1.0])]);
        let s = split(&["A"], &["B"]).unwrap();
        let ds = validate_dataset(
            vec![inst("1", "A", &[1.0]), inst("2", "B", &[2.0])],
            t.clone(),
            s.clone(),
        )
        .unwrap();
        assert_eq!(ds.d_v, 1);
        assert_eq!(ds.seen_indices(), vec![0]);
        assert_eq!(ds.unseen_indices(), vec![1]);

        let err = validate_dataset(vec![inst("1", "Z", &[1.0])], t.clone(), s.clone());
        assert!(matches!(err, Err(Error::UnknownClass(l)) if l == "Z"));

        let err = validate_dataset(vec![inst("1", "B", &[1.0])], t.clone(), s.clone());
        assert!(matches!(err, Err(Error::NoSeenInstances)));

        let err = validate_dataset(
            vec![inst("1", "A", &[1.0]), inst("1", "A", &[1.0])],
            t,
            s,
        );
        assert!(matches!(err, Err(Error::DuplicateInstance(_))));
    }

    #[test]
    fn combine_orthogonal_sources() {
        let a = table(&[("A", &[1.0, 0.0])]);
        let b = table(&[("A", &[0.0, 1.0])]);
        let c = combine_embeddings(&[a, b]).unwrap();
        assert_eq!(c.get("A").unwrap(), &[0.5, 0.5]);
    }

    #[test]
    fn combine_identical_normalized_is_idempotent() {
        let a = table(&[("A", &[0.6, 0.8]), ("B", &[1.0, 0.0])]);
        let c = combine_embeddings(&[a.clone(), a.clone()]).unwrap();
        for (l, v) in a.iter() {
            for (x, y) in v.iter().zip(c.get(l).unwrap()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn combine_pads_to_widest_dimension() {
        let a = table(&[("A", &[2.0]), ("B", &[0.0, 3.0][1..])]);
        let b = table(&[("A", &[0.0, 0.0, 1.0]), ("B", &[1.0, 0.0, 0.0])]);
        let c = combine_embeddings(&[a, b]).unwrap();
        assert_eq!(c.dim(), 3);
        assert_eq!(c.get("A").unwrap(), &[0.5, 0.0, 0.5]);
        assert_eq!(c.get("B").unwrap(), &[1.0, 0.0, 0.0]);
        assert!(c.iter().all(|(_, v)| vecmath::all_finite(v)));
    }

    #[test]
    fn combine_class_set_mismatch() {
        let a = table(&[("A", &[1.0])]);
        let b = table(&[("A", &[1.0]), ("B", &[1.0])]);
        assert!(matches!(
            combine_embeddings(&[a, b]),
            Err(Error::ClassSetMismatch)
        ));
    }

    #[test]
    fn single_table_returned_unchanged() {
        let a = table(&[("A", &[3.0, 4.0])]);
        assert_eq!(combine_embeddings(&[a.clone()]).unwrap(), a);
    }

    #[test]
    fn holdout_is_deterministic_and_per_class() {
        let t = table(&[("A", &[1.0]), ("B", &[2.0]), ("C", &[3.0])]);
        let s = split(&["A", "B"], &["C"]).unwrap();
        let mut instances = Vec::new();
        for i in 0..10 {
            instances.push(inst(&format!("a{i}"), "A", &[0.0]));
            instances.push(inst(&format!("b{i}"), "B", &[0.0]));
            instances.push(inst(&format!("c{i}"), "C", &[0.0]));
        }
        let ds = validate_dataset(instances, t, s).unwrap();
        let (train, test) = ds.seen_holdout(0.2, 7);
        assert_eq!(test.len(), 4);
        assert_eq!(train.len(), 16);
        assert_eq!(ds.seen_holdout(0.2, 7), (train, test));
    }
}
