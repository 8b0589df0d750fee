//! Bounded pool of candidate contexts with Pareto-front maintenance and
//! win-count-biased sampling.
//!
//! Entries carry per-instance scores over a shared set of training example
//! ids. The front update prunes strictly dominated entries; sampling draws a
//! start candidate with probability proportional to the number of instances
//! it wins (attains the instance-wise maximum on). The pool never evicts the
//! validation-best entry, and the best pointer only moves on a strictly
//! greater validation score.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::CandidateContext;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: u64,
    pub candidate: CandidateContext,
    /// Composite score per training example id.
    pub per_instance_scores: BTreeMap<String, f64>,
    pub val_score: Option<f64>,
    pub created_iter: u64,
}

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("cannot sample from an empty pool")]
    EmptyPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub entries: Vec<PoolEntry>,
    pub capacity: usize,
    pub best_id: Option<u64>,
    next_id: u64,
}

/// True when `a` strictly dominates `b`: at least as good on every shared
/// instance and strictly better on one. Entries scored on different instance
/// sets are incomparable.
fn dominates(a: &PoolEntry, b: &PoolEntry) -> bool {
    if a.per_instance_scores.len() != b.per_instance_scores.len()
        || a.per_instance_scores.keys().ne(b.per_instance_scores.keys())
    {
        return false;
    }
    let mut strict = false;
    for (key, &score_a) in &a.per_instance_scores {
        let score_b = b.per_instance_scores[key];
        if score_a < score_b {
            return false;
        }
        if score_a > score_b {
            strict = true;
        }
    }
    strict
}

impl Pool {
    /// Creates a pool seeded with the initial context. The seed enters with
    /// no validation score; it becomes evictable once scored entries fill
    /// the pool.
    pub fn new(capacity: usize, seed: CandidateContext) -> Self {
        let seed_entry = PoolEntry {
            id: 0,
            candidate: seed,
            per_instance_scores: BTreeMap::new(),
            val_score: None,
            created_iter: 0,
        };
        Self {
            entries: vec![seed_entry],
            capacity: capacity.max(1),
            best_id: None,
            next_id: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: u64) -> Option<&PoolEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn entry_mut(&mut self, id: u64) -> Option<&mut PoolEntry> {
        self.entries.iter_mut().find(|e| e.id == id)
    }

    pub fn best_entry(&self) -> Option<&PoolEntry> {
        self.best_id.and_then(|id| self.entry(id))
    }

    /// Number of instances on which each entry attains the instance-wise
    /// maximum. Every entry sharing a maximum receives the win.
    pub fn win_counts(&self) -> Vec<usize> {
        let mut instance_ids: BTreeSet<&String> = BTreeSet::new();
        for entry in &self.entries {
            instance_ids.extend(entry.per_instance_scores.keys());
        }
        let mut wins = vec![0usize; self.entries.len()];
        for instance in instance_ids {
            let max = self
                .entries
                .iter()
                .filter_map(|e| e.per_instance_scores.get(instance))
                .fold(f64::NEG_INFINITY, |acc, &s| acc.max(s));
            if max == f64::NEG_INFINITY {
                continue;
            }
            for (i, entry) in self.entries.iter().enumerate() {
                if entry
                    .per_instance_scores
                    .get(instance)
                    .is_some_and(|&s| s == max)
                {
                    wins[i] += 1;
                }
            }
        }
        wins
    }

    /// Prunes every entry strictly dominated by another entry. Entries that
    /// win at least one instance are never dominated, so they all survive.
    pub fn update_front(&mut self) {
        let dominated: Vec<u64> = self
            .entries
            .iter()
            .filter(|e| self.entries.iter().any(|other| dominates(other, e)))
            .map(|e| e.id)
            .collect();
        // The best entry stays resident even if a later candidate dominates
        // its training profile; it anchors merges until strictly beaten on
        // validation.
        self.entries
            .retain(|e| Some(e.id) == self.best_id || !dominated.contains(&e.id));
    }

    /// Samples a start candidate, biased proportionally to win counts.
    /// When no entry has any win (nothing scored yet), sampling is uniform.
    pub fn pareto_select<R: Rng>(&self, rng: &mut R) -> Result<&PoolEntry, PoolError> {
        if self.entries.is_empty() {
            return Err(PoolError::EmptyPool);
        }
        let wins = self.win_counts();
        let total: usize = wins.iter().sum();
        if total == 0 {
            let idx = rng.random_range(0..self.entries.len());
            return Ok(&self.entries[idx]);
        }
        let mut draw = rng.random_range(0..total);
        for (i, &w) in wins.iter().enumerate() {
            if draw < w {
                return Ok(&self.entries[i]);
            }
            draw -= w;
        }
        Ok(self.entries.last().expect("pool is nonempty"))
    }

    /// Inserts a scored candidate, evicting the lowest-scoring non-best entry
    /// (oldest first on ties) when the pool exceeds capacity. The best
    /// pointer moves only on a strictly greater validation score.
    pub fn add(
        &mut self,
        candidate: CandidateContext,
        per_instance_scores: BTreeMap<String, f64>,
        val_score: f64,
        created_iter: u64,
    ) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.entries.push(PoolEntry {
            id,
            candidate,
            per_instance_scores,
            val_score: Some(val_score),
            created_iter,
        });
        let best_val = self
            .best_entry()
            .and_then(|e| e.val_score)
            .unwrap_or(f64::NEG_INFINITY);
        if val_score > best_val {
            self.best_id = Some(id);
        }
        while self.entries.len() > self.capacity {
            let victim = self
                .entries
                .iter()
                .filter(|e| Some(e.id) != self.best_id)
                .min_by(|a, b| {
                    let av = a.val_score.unwrap_or(f64::NEG_INFINITY);
                    let bv = b.val_score.unwrap_or(f64::NEG_INFINITY);
                    av.partial_cmp(&bv)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.created_iter.cmp(&b.created_iter))
                        .then(a.id.cmp(&b.id))
                })
                .map(|e| e.id);
            match victim {
                Some(id) => self.entries.retain(|e| e.id != id),
                None => break,
            }
        }
        id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ToolSchema;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(tag: &str) -> CandidateContext {
        CandidateContext::seed(tag, vec![ToolSchema::new("t", "tool")])
    }

    fn pool_with_scores(scores: &[&[f64]]) -> Pool {
        let mut pool = Pool::new(16, ctx("seed"));
        pool.entries.clear();
        for (i, row) in scores.iter().enumerate() {
            let per_instance: BTreeMap<String, f64> = row
                .iter()
                .enumerate()
                .map(|(j, &s)| (format!("ex{j}"), s))
                .collect();
            pool.entries.push(PoolEntry {
                id: i as u64,
                candidate: ctx(&format!("c{i}")),
                per_instance_scores: per_instance,
                val_score: Some(0.0),
                created_iter: i as u64,
            });
        }
        pool.next_id = scores.len() as u64;
        pool
    }

    #[test]
    fn incomparable_entries_are_both_retained() {
        let mut pool = pool_with_scores(&[&[1.0, 0.0], &[0.0, 1.0]]);
        pool.update_front();
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn dominating_entry_prunes_the_others() {
        let mut pool = pool_with_scores(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        pool.update_front();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.entries[0].id, 2);
    }

    #[test]
    fn equal_entries_survive_each_other() {
        let mut pool = pool_with_scores(&[&[0.5, 0.5], &[0.5, 0.5]]);
        pool.update_front();
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn single_entry_is_always_selected() {
        let pool = pool_with_scores(&[&[0.3]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(pool.pareto_select(&mut rng).unwrap().id, 0);
        }
    }

    #[test]
    fn selection_is_proportional_to_win_counts() {
        // Entry 0 wins on ex0 and ex1, entry 1 wins on ex2 only.
        let pool = pool_with_scores(&[&[1.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(pool.win_counts(), vec![2, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = 100_000;
        let mut first = 0usize;
        for _ in 0..draws {
            if pool.pareto_select(&mut rng).unwrap().id == 0 {
                first += 1;
            }
        }
        let freq = first as f64 / draws as f64;
        assert!((freq - 2.0 / 3.0).abs() < 0.02, "observed {freq}");
    }

    #[test]
    fn full_ties_sample_uniformly() {
        let pool = pool_with_scores(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(pool.win_counts(), vec![2, 2, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 3];
        for _ in 0..60_000 {
            counts[pool.pareto_select(&mut rng).unwrap().id as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 60_000.0 - 1.0 / 3.0).abs() < 0.02);
        }
    }

    #[test]
    fn eviction_removes_lowest_non_best() {
        let mut pool = Pool::new(2, ctx("seed"));
        pool.entries.clear();
        pool.add(ctx("best"), BTreeMap::new(), 0.5, 1);
        pool.add(ctx("low"), BTreeMap::new(), 0.3, 2);
        assert_eq!(pool.len(), 2);
        pool.add(ctx("mid"), BTreeMap::new(), 0.4, 3);
        assert_eq!(pool.len(), 2);
        let vals: Vec<f64> = pool.entries.iter().filter_map(|e| e.val_score).collect();
        assert!(vals.contains(&0.5) && vals.contains(&0.4));
        assert_eq!(pool.best_entry().unwrap().val_score, Some(0.5));
    }

    #[test]
    fn equal_val_score_does_not_move_best() {
        let mut pool = Pool::new(4, ctx("seed"));
        let first = pool.add(ctx("a"), BTreeMap::new(), 0.5, 1);
        pool.add(ctx("b"), BTreeMap::new(), 0.5, 2);
        assert_eq!(pool.best_id, Some(first));
        assert_eq!(pool.len(), 3);
    }

    #[test]
    fn best_survives_random_eviction_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut pool = Pool::new(3, ctx("seed"));
        let mut best_val = f64::NEG_INFINITY;
        for iter in 0..200u64 {
            let val: f64 = rng.random_range(0.0..1.0);
            pool.add(ctx(&format!("c{iter}")), BTreeMap::new(), val, iter);
            best_val = best_val.max(val);
            assert!(pool.len() <= 3);
            let best = pool.best_entry().expect("best set after first add");
            assert_eq!(best.val_score, Some(best_val));
        }
    }

    #[test]
    fn dominated_entries_are_never_sampled_after_front_update() {
        let mut pool = pool_with_scores(&[&[1.0, 1.0], &[0.5, 0.5], &[0.0, 1.0]]);
        pool.update_front();
        let surviving: Vec<u64> = pool.entries.iter().map(|e| e.id).collect();
        assert_eq!(surviving, vec![0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            assert_eq!(pool.pareto_select(&mut rng).unwrap().id, 0);
        }
    }
}
