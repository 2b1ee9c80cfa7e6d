//! Bounded replay memory with deterministic class-balanced insertion,
//! oldest-first eviction, and uniform without-replacement sampling.
//!
//! Items store already-encoded feature vectors: the preprocessing pipeline is
//! frozen after the first slice, so nothing is lost by caching the encoding.

use serde::{Deserialize, Serialize};

use crate::seed::{self, tag};
use crate::tabular::Slice;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayItem {
    pub x: Vec<f64>,
    pub y: usize,
    pub source_slice: usize,
    pub counter: u64,
}

/// Insert/evict audit trail, kept so replay behavior can be verified by
/// trace rather than trusted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReplayEvent {
    Insert { counter: u64, class: usize, source_slice: usize },
    Evict { counter: u64, class: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    balanced: bool,
    seed: u64,
    items: Vec<ReplayItem>,
    next_counter: u64,
    events: Vec<ReplayEvent>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, balanced: bool, seed: u64) -> Self {
        ReplayBuffer { capacity, balanced, seed, items: Vec::new(), next_counter: 0, events: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn items(&self) -> &[ReplayItem] {
        &self.items
    }

    pub fn events(&self) -> &[ReplayEvent] {
        &self.events
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0usize; n_classes];
        for item in &self.items {
            if item.y < n_classes {
                counts[item.y] += 1;
            }
        }
        counts
    }

    /// Select up to `quota` training rows from the slice and insert them,
    /// evicting oldest-first once capacity is exceeded.
    ///
    /// Balanced mode picks classes round-robin (each class's candidates in a
    /// seeded shuffle); unbalanced picks a seeded uniform draw. A quota larger
    /// than the slice inserts everything.
    pub fn insert_after_slice(&mut self, slice: &Slice, quota: usize) {
        if self.capacity == 0 || quota == 0 || slice.train_idx.is_empty() {
            return;
        }
        let selected = self.select(slice, quota.min(slice.train_idx.len()));
        for row in selected {
            let item = ReplayItem {
                x: slice.x.row(row).to_vec(),
                y: slice.y[row],
                source_slice: slice.slice_id,
                counter: self.next_counter,
            };
            self.events.push(ReplayEvent::Insert {
                counter: item.counter,
                class: item.y,
                source_slice: item.source_slice,
            });
            self.next_counter += 1;
            self.items.push(item);
            while self.items.len() > self.capacity {
                self.evict_one();
            }
        }
    }

    fn select(&self, slice: &Slice, quota: usize) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut rng = seed::rng(self.seed, &[tag::REPLAY_INSERT, slice.slice_id as u64]);
        if !self.balanced {
            let mut rows = slice.train_idx.clone();
            rows.shuffle(&mut rng);
            rows.truncate(quota);
            return rows;
        }
        // Round-robin over classes in ascending order, each class shuffled.
        let max_class = slice.train_idx.iter().map(|&r| slice.y[r]).max().unwrap_or(0);
        let mut pools: Vec<Vec<usize>> = (0..=max_class)
            .map(|c| slice.train_idx.iter().copied().filter(|&r| slice.y[r] == c).collect())
            .collect();
        for pool in &mut pools {
            pool.shuffle(&mut rng);
        }
        let mut out = Vec::with_capacity(quota);
        let mut cursor = vec![0usize; pools.len()];
        while out.len() < quota {
            let mut advanced = false;
            for (c, pool) in pools.iter().enumerate() {
                if out.len() == quota {
                    break;
                }
                if cursor[c] < pool.len() {
                    out.push(pool[cursor[c]]);
                    cursor[c] += 1;
                    advanced = true;
                }
            }
            if !advanced {
                break;
            }
        }
        out
    }

    /// Oldest-first (smallest counter). Under balancing, eviction skips past
    /// the sole remaining member of a class unless every class is down to one.
    fn evict_one(&mut self) {
        debug_assert!(!self.items.is_empty());
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.sort_by_key(|&i| self.items[i].counter);

        let victim = if self.balanced {
            let mut counts = std::collections::BTreeMap::new();
            for item in &self.items {
                *counts.entry(item.y).or_insert(0usize) += 1;
            }
            order
                .iter()
                .copied()
                .find(|&i| counts[&self.items[i].y] > 1)
                .unwrap_or(order[0])
        } else {
            order[0]
        };
        let removed = self.items.remove(victim);
        self.events.push(ReplayEvent::Evict { counter: removed.counter, class: removed.y });
    }

    /// `min(k, len)` items uniform without replacement, deterministic for a
    /// given `sample_seed` context.
    pub fn sample(&self, k: usize, sample_seed: u64) -> Vec<&ReplayItem> {
        use rand::seq::SliceRandom;
        if k == 0 || self.items.is_empty() {
            return Vec::new();
        }
        let mut idx: Vec<usize> = (0..self.items.len()).collect();
        let mut rng = seed::rng(self.seed, &[tag::REPLAY_SAMPLE, sample_seed]);
        idx.shuffle(&mut rng);
        idx.truncate(k.min(self.items.len()));
        idx.into_iter().map(|i| &self.items[i]).collect()
    }
}
