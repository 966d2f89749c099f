//! FIFO cache of recently seen training instances, reused as extra negatives.
//!
//! After each optimizer step, the step's query and document vectors are
//! snapshotted (detached from any tape) and enqueued. Later steps score the
//! cached queries against their fresh document embeddings, so stale vectors
//! still shape the loss while gradients flow only through current-batch
//! embeddings.

use std::collections::VecDeque;

/// Detached snapshot of one training instance: the query vector plus the
/// positive and negative documents' segment vectors.
#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub query: Vec<f64>,
    pub positive_segments: Vec<Vec<f64>>,
    pub negative_segments: Vec<Vec<f64>>,
}

/// Bounded FIFO queue of [`CacheEntry`] values. Capacity 0 disables caching.
#[derive(Debug, Clone, Default)]
pub struct LateCacheQueue {
    capacity: usize,
    entries: VecDeque<CacheEntry>,
}

impl LateCacheQueue {
    pub fn new(capacity: usize) -> Self {
        LateCacheQueue { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Push one entry, evicting the oldest beyond capacity. With capacity 0
    /// the entry is dropped immediately.
    pub fn push(&mut self, entry: CacheEntry) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    /// Entries oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(tag: f64) -> CacheEntry {
        CacheEntry {
            query: vec![tag],
            positive_segments: vec![vec![tag + 0.1]],
            negative_segments: vec![vec![tag + 0.2]],
        }
    }

    #[test]
    fn fifo_eviction_keeps_the_newest_capacity_entries() {
        let mut q = LateCacheQueue::new(3);
        for i in 0..5 {
            q.push(entry(i as f64));
        }
        assert_eq!(q.len(), 3);
        let tags: Vec<f64> = q.iter().map(|e| e.query[0]).collect();
        assert_eq!(tags, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_capacity_stays_empty() {
        let mut q = LateCacheQueue::new(0);
        q.push(entry(1.0));
        q.push(entry(2.0));
        assert!(q.is_empty());
        assert_eq!(q.iter().count(), 0);
    }

    #[test]
    fn fills_up_to_capacity_before_evicting() {
        let mut q = LateCacheQueue::new(4);
        q.push(entry(0.0));
        q.push(entry(1.0));
        assert_eq!(q.len(), 2);
        let tags: Vec<f64> = q.iter().map(|e| e.query[0]).collect();
        assert_eq!(tags, vec![0.0, 1.0]);
    }
}
