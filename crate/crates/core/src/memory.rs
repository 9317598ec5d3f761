//! Fixed-capacity, class-balanced replay memory.
//!
//! After each task the total budget is split as evenly as possible over every
//! class seen so far; the `capacity % K` leftover slots go to the smallest
//! class ids. Old classes are down-sampled uniformly at random from what the
//! buffer already holds, new classes are drawn uniformly from the finished
//! task's data. Repeated classes (domain-incremental streams) merge their old
//! and new samples before down-sampling.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    capacity: usize,
    slots: BTreeMap<u32, Vec<Sample>>,
    rng_seed: u64,
    rebalances: u64,
}

/// Per-class quotas for `classes` (ascending), summing to `capacity`.
pub fn class_quotas(capacity: usize, classes: &[u32]) -> BTreeMap<u32, usize> {
    let k = classes.len();
    if k == 0 {
        return BTreeMap::new();
    }
    let base = capacity / k;
    let extra = capacity % k;
    classes
        .iter()
        .enumerate()
        .map(|(rank, &c)| (c, base + usize::from(rank < extra)))
        .collect()
}

/// Uniform draw of `min(k, pool.len())` items without replacement; the
/// survivors keep their original relative order.
fn downsample(pool: Vec<Sample>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    if k >= pool.len() {
        return pool;
    }
    let mut picked = index::sample(rng, pool.len(), k).into_vec();
    picked.sort_unstable();
    let mut keep = vec![false; pool.len()];
    for i in picked {
        keep[i] = true;
    }
    pool.into_iter().zip(keep).filter_map(|(s, k)| k.then_some(s)).collect()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl MemoryBuffer {
    pub fn new(capacity: usize, rng_seed: u64) -> Self {
        Self {
            capacity,
            slots: BTreeMap::new(),
            rng_seed,
            rebalances: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.slots.keys().copied()
    }

    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        self.slots.iter().map(|(&c, v)| (c, v.len())).collect()
    }

    pub fn slot(&self, class_id: u32) -> &[Sample] {
        self.slots.get(&class_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.slots.values().flatten()
    }

    /// Number of rebalances so far; the per-call RNG stream is derived from it.
    pub fn rebalance_count(&self) -> u64 {
        self.rebalances
    }

    pub fn rebalance_after_task(&mut self, finished_task_data: &[Sample]) {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.rng_seed ^ splitmix(self.rebalances)));
        self.rebalances += 1;

        let mut incoming: BTreeMap<u32, Vec<Sample>> = BTreeMap::new();
        for s in finished_task_data {
            incoming.entry(s.class).or_default().push(s.clone());
        }
        let classes: Vec<u32> = self
            .slots
            .keys()
            .chain(incoming.keys())
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let quotas = class_quotas(self.capacity, &classes);

        let mut old = std::mem::take(&mut self.slots);
        for c in classes {
            let mut pool = old.remove(&c).unwrap_or_default();
            if let Some(new) = incoming.remove(&c) {
                let seen: BTreeSet<u64> = pool.iter().map(|s| s.id).collect();
                pool.extend(new.into_iter().filter(|s| !seen.contains(&s.id)));
            }
            let kept = downsample(pool, quotas[&c], &mut rng);
            if !kept.is_empty() {
                self.slots.insert(c, kept);
            }
        }
    }

    /// Buffer contents (classes ascending) followed by the task data in order.
    pub fn union_view(&self, current_task_data: &[Sample]) -> Vec<Sample> {
        self.samples().chain(current_task_data).cloned().collect()
    }

    /// Buffer contents as a dataset, for checkpointing in the CLDS format.
    pub fn to_dataset(&self, num_classes: usize, input_dim: usize) -> Dataset {
        Dataset {
            samples: self.samples().cloned().collect(),
            num_classes,
            input_dim,
            domain_labels: None,
        }
    }

    /// Restores a buffer written by [`MemoryBuffer::to_dataset`].
    pub fn from_dataset(ds: Dataset, capacity: usize, rng_seed: u64, rebalances: u64) -> Result<Self> {
        if ds.samples.len() > capacity {
            return Err(Error::InvalidConfig(format!(
                "checkpoint holds {} samples but capacity is {capacity}",
                ds.samples.len()
            )));
        }
        let mut slots: BTreeMap<u32, Vec<Sample>> = BTreeMap::new();
        for s in ds.samples {
            slots.entry(s.class).or_default().push(s);
        }
        Ok(Self {
            capacity,
            slots,
            rng_seed,
            rebalances,
        })
    }
}

/// `min(batch_size, available)` samples of `class_id`, uniformly without replacement.
pub fn sample_class_batch(pool: &[Sample], class_id: u32, batch_size: usize, seed: u64) -> Result<Vec<Sample>> {
    let members: Vec<&Sample> = pool.iter().filter(|s| s.class == class_id).collect();
    if members.is_empty() {
        return Err(Error::ClassAbsent(class_id));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = batch_size.min(members.len());
    Ok(index::sample(&mut rng, members.len(), k)
        .into_iter()
        .map(|i| members[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(classes: &[u32], per_class: usize, id_base: u64) -> Vec<Sample> {
        let mut out = Vec::new();
        for &c in classes {
            for _ in 0..per_class {
                out.push(Sample {
                    id: id_base + out.len() as u64,
                    x: vec![c as f64],
                    class: c,
                    task: 0,
                });
            }
        }
        out
    }

    #[test]
    fn exact_division_halves_old_classes() {
        let mut buf = MemoryBuffer::new(100, 1);
        buf.rebalance_after_task(&samples(&(0..10).collect::<Vec<_>>(), 30, 0));
        assert!(buf.class_counts().values().all(|&n| n == 10));
        buf.rebalance_after_task(&samples(&(10..20).collect::<Vec<_>>(), 30, 1000));
        assert_eq!(buf.class_counts().len(), 20);
        assert!(buf.class_counts().values().all(|&n| n == 5));
    }

    #[test]
    fn remainder_goes_to_smallest_ids() {
        let mut buf = MemoryBuffer::new(10, 1);
        buf.rebalance_after_task(&samples(&[7, 2, 5], 20, 0));
        let counts: Vec<_> = buf.class_counts().into_iter().collect();
        assert_eq!(counts, vec![(2, 4), (5, 3), (7, 3)]);
    }

    #[test]
    fn zero_capacity_stays_empty() {
        let mut buf = MemoryBuffer::new(0, 1);
        buf.rebalance_after_task(&samples(&[0, 1], 5, 0));
        assert!(buf.is_empty());
        let task = samples(&[2], 3, 100);
        assert_eq!(buf.union_view(&task), task);
    }

    #[test]
    fn union_view_orders_buffer_then_task() {
        let mut buf = MemoryBuffer::new(4, 1);
        buf.rebalance_after_task(&samples(&[3, 1], 5, 0));
        let task = samples(&[9], 2, 100);
        let u = buf.union_view(&task);
        assert_eq!(u.len(), 6);
        assert_eq!(u.iter().map(|s| s.class).collect::<Vec<_>>(), vec![1, 1, 3, 3, 9, 9]);
        assert_eq!(buf.union_view(&[]), buf.samples().cloned().collect::<Vec<_>>());
    }

    #[test]
    fn dil_repeat_classes_merge() {
        let mut buf = MemoryBuffer::new(6, 3);
        buf.rebalance_after_task(&samples(&[0, 1], 10, 0));
        let first: BTreeSet<u64> = buf.samples().map(|s| s.id).collect();
        buf.rebalance_after_task(&samples(&[0, 1], 10, 500));
        assert_eq!(buf.class_counts().values().copied().collect::<Vec<_>>(), vec![3, 3]);
        // merged pool: survivors may come from either domain but never from elsewhere
        assert!(buf.samples().all(|s| first.contains(&s.id) || s.id >= 500));
    }

    #[test]
    fn class_batch_errors_and_exhaustive_draw() {
        let pool = samples(&[0, 1], 4, 0);
        assert!(matches!(sample_class_batch(&pool, 5, 2, 0), Err(Error::ClassAbsent(5))));
        let mut all = sample_class_batch(&pool, 1, 10, 0).unwrap();
        all.sort_by_key(|s| s.id);
        assert_eq!(all.iter().map(|s| s.id).collect::<Vec<_>>(), vec![4, 5, 6, 7]);
        assert_eq!(sample_class_batch(&pool, 0, 2, 42).unwrap(), sample_class_batch(&pool, 0, 2, 42).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut buf = MemoryBuffer::new(9, 3);
        buf.rebalance_after_task(&samples(&[0, 1, 2], 10, 0));
        let ds = buf.to_dataset(3, 1);
        let bytes = crate::data::encode(&ds).unwrap();
        let back = MemoryBuffer::from_dataset(crate::data::decode(&bytes).unwrap(), 9, 3, buf.rebalance_count()).unwrap();
        assert_eq!(back, buf);
    }
}
