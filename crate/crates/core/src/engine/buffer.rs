use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};

use crate::error::{DiscoError, Result};
use crate::rng::Rng;
use crate::scenario::ClassId;

/// A stored old-class sample, kept in the input domain it was trained in.
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub source_index: usize,
    pub label: ClassId,
    pub task_id: usize,
    pub features: Vec<f64>,
}

/// Bounded class-balanced exemplar store. Lists are kept in random order so
/// truncating to a smaller quota is itself a random subsample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RehearsalBuffer {
    capacity: usize,
    store: BTreeMap<ClassId, Vec<Exemplar>>,
}

/// A replay mini-batch drawn from the buffer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayBatch {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<ClassId>,
    pub source_indices: Vec<usize>,
}

impl ReplayBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl RehearsalBuffer {
    pub fn new(capacity: usize) -> Self {
        RehearsalBuffer {
            capacity,
            store: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.store.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Vec<ClassId> {
        self.store.keys().copied().collect()
    }

    pub fn exemplars(&self, label: ClassId) -> &[Exemplar] {
        self.store.get(&label).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Every exemplar, ordered by class then by position in the class list.
    pub fn iter(&self) -> impl Iterator<Item = &Exemplar> {
        self.store.values().flatten()
    }

    /// Add the classes of a finished task: the per-class quota becomes
    /// `floor(capacity / classes so far)`, stored lists are truncated to it
    /// and each new class gets a random subset of its samples.
    pub fn update(
        &mut self,
        candidates: Vec<Exemplar>,
        new_labels: &[ClassId],
        rng: &mut Rng,
    ) -> Result<()> {
        if let Some(&l) = new_labels.iter().find(|l| self.store.contains_key(l)) {
            return Err(DiscoError::LabelOverlap(vec![l]));
        }
        let classes = self.store.len() + new_labels.len();
        if classes == 0 {
            return Ok(());
        }
        let quota = self.capacity / classes;
        if quota == 0 {
            log::warn!(
                "buffer capacity {} is below the {classes} classes seen; storing no exemplars",
                self.capacity
            );
        }
        for list in self.store.values_mut() {
            list.truncate(quota);
        }
        let mut by_class: BTreeMap<ClassId, Vec<Exemplar>> =
            new_labels.iter().map(|&l| (l, Vec::new())).collect();
        for e in candidates {
            if let Some(list) = by_class.get_mut(&e.label) {
                list.push(e);
            }
        }
        for (label, mut list) in by_class {
            list.shuffle(rng);
            list.truncate(quota);
            self.store.insert(label, list);
        }
        Ok(())
    }

    /// Draw `size` exemplars without replacement (the whole buffer when it
    /// holds fewer).
    pub fn sample(&self, size: usize, rng: &mut Rng) -> ReplayBatch {
        let all: Vec<&Exemplar> = self.iter().collect();
        let amount = size.min(all.len());
        let mut batch = ReplayBatch::default();
        if amount == 0 {
            return batch;
        }
        for i in index::sample(rng, all.len(), amount) {
            let e = all[i];
            batch.rows.push(e.features.clone());
            batch.labels.push(e.label);
            batch.source_indices.push(e.source_index);
        }
        batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};

    fn samples(labels: &[ClassId], per_class: usize, task_id: usize) -> Vec<Exemplar> {
        let mut out = Vec::new();
        for &l in labels {
            for i in 0..per_class {
                out.push(Exemplar {
                    source_index: l as usize * 1000 + i,
                    label: l,
                    task_id,
                    features: vec![l as f64, i as f64],
                });
            }
        }
        out
    }

    #[test]
    fn even_quota_then_rebalancing() {
        let mut r = rng::stream(1, Stream::Buffer);
        let mut buf = RehearsalBuffer::new(20);
        buf.update(samples(&[0, 1], 30, 1), &[0, 1], &mut r)
            .unwrap();
        assert_eq!(buf.exemplars(0).len(), 10);
        assert_eq!(buf.exemplars(1).len(), 10);
        buf.update(samples(&[2, 3], 30, 2), &[2, 3], &mut r)
            .unwrap();
        for c in 0..4 {
            assert_eq!(buf.exemplars(c).len(), 5);
        }
        assert!(buf.len() <= buf.capacity());
        assert!(buf.update(samples(&[3], 1, 3), &[3], &mut r).is_err());
    }

    #[test]
    fn selection_is_seeded() {
        let pick = |seed| {
            let mut r = rng::stream(seed, Stream::Buffer);
            let mut buf = RehearsalBuffer::new(6);
            buf.update(samples(&[0, 1], 20, 1), &[0, 1], &mut r)
                .unwrap();
            buf.iter().map(|e| e.source_index).collect::<Vec<_>>()
        };
        assert_eq!(pick(3), pick(3));
        assert_ne!(pick(3), pick(4));
    }

    #[test]
    fn tiny_capacity_degrades_to_empty() {
        let mut r = rng::stream(0, Stream::Buffer);
        let mut buf = RehearsalBuffer::new(1);
        buf.update(samples(&[0, 1], 3, 1), &[0, 1], &mut r).unwrap();
        assert!(buf.is_empty());
    }

    #[test]
    fn sampling_is_without_replacement() {
        let mut r = rng::stream(0, Stream::Buffer);
        let mut buf = RehearsalBuffer::new(8);
        buf.update(samples(&[0, 1], 10, 1), &[0, 1], &mut r)
            .unwrap();
        let mut rr = rng::stream(0, Stream::Replay);
        let b = buf.sample(5, &mut rr);
        assert_eq!(b.len(), 5);
        let mut ids = b.source_indices.clone();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 5);
        assert_eq!(buf.sample(100, &mut rr).len(), 8);
    }
}
