use rand::Rng;

use crate::bridging_env::Observation;

/// One agent's experience from a single environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    /// Shared team reward for the step.
    pub reward: f64,
    pub next_obs: Observation,
    /// Episode ended after this step (termination or truncation).
    pub done: bool,
    /// Recurrent state fed to the network when acting.
    pub rec: Vec<f64>,
    /// Recurrent state the network produced when acting.
    pub next_rec: Vec<f64>,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 100_000;

    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `size` distinct transitions drawn uniformly (fewer if the buffer is smaller).
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<&Transition> {
        let k = size.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), k)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(action: usize) -> Transition {
        let obs = Observation {
            agent: 0,
            ego: vec![action as f64],
            neighbors: vec![],
        };
        Transition {
            obs: obs.clone(),
            action,
            reward: 0.0,
            next_obs: obs,
            done: false,
            rec: vec![],
            next_rec: vec![],
        }
    }

    #[test]
    fn evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3);
        for k in 0..5 {
            b.push(t(k));
        }
        assert_eq!(b.len(), 3);
        let order: Vec<usize> = b.iter().map(|x| x.action).collect();
        assert_eq!(order, vec![2, 3, 4]);
    }

    #[test]
    fn batch_has_no_repeats() {
        let mut b = ReplayBuffer::new(100);
        for k in 0..100 {
            b.push(t(k));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let mut s: Vec<usize> = b.sample(64, &mut rng).iter().map(|x| x.action).collect();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 64);
        }
        assert_eq!(b.sample(500, &mut rng).len(), 100);
    }
}
