//! Fixed-capacity rollout storage for on-policy updates.

/// One stored decision with everything the update needs cached at collection
/// time.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Normalized action in [-1, 1].
    pub action: f64,
    pub reward: f64,
    /// Sojourn time of this decision (s); exponent of gamma in discounting.
    pub sojourn_s: f64,
    /// Log-probability of `action` under the collecting policy.
    pub log_prob: f64,
    /// V(s) under the collecting parameters.
    pub value: f64,
    /// V(s') under the collecting parameters; 0 when the episode ended here.
    pub value_next: f64,
    /// Episode ended with this transition.
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    capacity: usize,
    items: Vec<Transition>,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        RolloutBuffer {
            capacity,
            items: Vec::with_capacity(capacity),
        }
    }

    /// Returns true when the push filled the buffer.
    pub fn push(&mut self, t: Transition) -> bool {
        assert!(self.items.len() < self.capacity, "buffer overfilled");
        self.items.push(t);
        self.is_full()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
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

    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}
