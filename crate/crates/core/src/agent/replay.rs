use rand::Rng;

/// One stored step of experience. Rewards are already scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            inserted: 0,
        }
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

    /// Total insertions so far, including overwritten ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            let slot = (self.inserted % self.capacity as u64) as usize;
            self.items[slot] = t;
        }
        self.inserted += 1;
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<&Transition> {
        self.sample_indices(rng, n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }
}
