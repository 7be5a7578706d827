use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::stats;

/// Fixed-capacity FIFO of conformity scores with a sorted view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreWindow {
    capacity: usize,
    in_order: VecDeque<f64>,
    sorted: Vec<f64>,
}

impl ScoreWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            in_order: VecDeque::with_capacity(capacity),
            sorted: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.in_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.in_order.is_empty()
    }

    /// Appends a score, evicting the oldest once full.
    pub fn push(&mut self, score: f64) {
        if self.capacity == 0 {
            return;
        }
        if self.in_order.len() == self.capacity {
            let old = self.in_order.pop_front().expect("full window");
            stats::sorted_remove(&mut self.sorted, old);
        }
        self.in_order.push_back(score);
        stats::sorted_insert(&mut self.sorted, score);
    }

    /// Replaces the whole content; keeps only the newest `capacity` scores.
    pub fn replace(&mut self, scores: impl IntoIterator<Item = f64>) {
        self.in_order.clear();
        self.in_order.extend(scores);
        while self.in_order.len() > self.capacity {
            self.in_order.pop_front();
        }
        self.sorted = stats::sorted(self.in_order.make_contiguous());
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.in_order.iter()
    }
}
