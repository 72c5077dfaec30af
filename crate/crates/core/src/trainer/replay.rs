use rand::Rng;

use crate::agent::REWARD_CLASSES;

/// Reward class: non-positive, small positive, goal-sized.
pub fn reward_class(r: f32) -> usize {
    if r <= 0.0 {
        0
    } else if r < 10.0 {
        1
    } else {
        2
    }
}

/// A stored frame and the class of the reward that followed it.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayItem {
    pub rgb: Vec<u8>,
    pub depth_raw: Vec<f32>,
    pub class: usize,
}

/// Fixed-capacity ring buffer with class-balanced sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<ReplayItem>,
    next: usize,
    capacity: usize,
    counts: [usize; REWARD_CLASSES],
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { items: Vec::with_capacity(capacity.min(4096)), next: 0, capacity: capacity.max(1), counts: [0; 3] }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn counts(&self) -> [usize; REWARD_CLASSES] {
        self.counts
    }

    pub fn push(&mut self, item: ReplayItem) {
        self.counts[item.class] += 1;
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.counts[self.items[self.next].class] -= 1;
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Picks a class uniformly among the non-empty ones, then an item of that
    /// class uniformly. Returns `None` when the buffer is empty.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Option<&ReplayItem> {
        let present: Vec<usize> = (0..REWARD_CLASSES).filter(|&c| self.counts[c] > 0).collect();
        if present.is_empty() {
            return None;
        }
        let class = present[rng.random_range(0..present.len())];
        let k = rng.random_range(0..self.counts[class]);
        self.items.iter().filter(|it| it.class == class).nth(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn item(tag: u8, class: usize) -> ReplayItem {
        ReplayItem { rgb: vec![tag], depth_raw: Vec::new(), class }
    }

    #[test]
    fn classes() {
        assert_eq!(reward_class(-1.0), 0);
        assert_eq!(reward_class(0.0), 0);
        assert_eq!(reward_class(1.0), 1);
        assert_eq!(reward_class(2.0), 1);
        assert_eq!(reward_class(10.0), 2);
        assert_eq!(reward_class(11.0), 2);
    }

    #[test]
    fn ring_keeps_capacity_and_counts() {
        let mut b = ReplayBuffer::new(3);
        assert!(b.sample(&mut ChaCha8Rng::seed_from_u64(0)).is_none());
        for (i, c) in [0, 0, 1, 2, 2].into_iter().enumerate() {
            b.push(item(i as u8, c));
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.counts(), [0, 1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let s = b.sample(&mut rng).unwrap();
            assert!([2u8, 3, 4].contains(&s.rgb[0]));
        }
    }

    #[test]
    fn sampling_is_class_balanced() {
        let mut b = ReplayBuffer::new(2000);
        for i in 0..2000 {
            let c = if i % 100 == 0 { 2 } else if i % 10 == 0 { 1 } else { 0 };
            b.push(item(0, c));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut freq = [0usize; 3];
        for _ in 0..10_000 {
            freq[b.sample(&mut rng).unwrap().class] += 1;
        }
        for f in freq {
            assert!((f as f64 / 10_000.0 - 1.0 / 3.0).abs() < 0.1 / 3.0, "{freq:?}");
        }
    }
}
