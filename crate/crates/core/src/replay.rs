//! Experience replay and epsilon-greedy exploration.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One experience tuple `<s, a, r, s', terminal>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Bounded FIFO queue of transitions. Once full, every insert evicts the
/// oldest element. Sampling is refused until `warmup` inserts have happened.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    warmup: usize,
    storage: VecDeque<Transition>,
    insert_count: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, warmup: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            warmup,
            storage: VecDeque::with_capacity(capacity.min(1 << 20)),
            insert_count: 0,
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
        self.insert_count += 1;
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn warmup(&self) -> usize {
        self.warmup
    }

    pub fn insert_count(&self) -> usize {
        self.insert_count
    }

    pub fn evictions(&self) -> usize {
        self.insert_count.saturating_sub(self.capacity)
    }

    pub fn is_ready(&self) -> bool {
        self.insert_count >= self.warmup && !self.storage.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.storage.get(i)
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if self.insert_count < self.warmup {
            return Err(Error::NotReady {
                inserted: self.insert_count,
                warmup: self.warmup,
            });
        }
        if batch_size == 0 || batch_size > self.storage.len() {
            return Err(invalid(format!(
                "batch of {batch_size} from a buffer holding {}",
                self.storage.len()
            )));
        }
        let n = self.storage.len();
        Ok((0..batch_size).map(|_| rng.gen_range(0..n)).collect())
    }

    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| &self.storage[i])
            .collect())
    }

    /// Writes the buffer, oldest first, one JSON object per line.
    pub fn dump_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for t in &self.storage {
            serde_json::to_writer(&mut out, t).map_err(|e| Error::format(path, e))?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Linear decay from `eps_start` to `eps_end` over `decay_steps`, then flat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    pub decay_steps: usize,
}

impl EpsilonSchedule {
    pub fn new(eps_start: f64, eps_end: f64, decay_steps: usize) -> Result<Self> {
        let s = Self {
            eps_start,
            eps_end,
            decay_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(eps: f64) -> Self {
        Self {
            eps_start: eps,
            eps_end: eps,
            decay_steps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.eps_start) || !unit.contains(&self.eps_end) {
            return Err(invalid("epsilon values must lie in [0, 1]"));
        }
        if self.eps_end > self.eps_start {
            return Err(invalid("eps_end must not exceed eps_start"));
        }
        Ok(())
    }

    pub fn at(&self, step: usize) -> f64 {
        if step >= self.decay_steps {
            return self.eps_end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

/// Epsilon-greedy choice over `q_values`; greedy ties are broken uniformly.
pub fn select_action<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if q_values.is_empty() {
        return Err(invalid("cannot select an action from no values"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(invalid(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..q_values.len()));
    }
    Ok(argmax_random_tie(q_values, rng))
}

pub fn argmax_random_tie<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties = values.iter().filter(|&&v| v == best).count();
    if ties <= 1 {
        return values.iter().position(|&v| v == best).unwrap_or(0);
    }
    let pick = rng.gen_range(0..ties);
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == best)
        .nth(pick)
        .map(|(i, _)| i)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(tag: f64) -> Transition {
        Transition {
            state: vec![tag],
            action: 0,
            reward: tag,
            next_state: vec![tag],
            terminal: false,
        }
    }

    #[test]
    fn overwrites_oldest() {
        let mut b = ReplayBuffer::new(3, 0).unwrap();
        for x in [1.0, 2.0, 3.0, 4.0] {
            b.push(tr(x));
        }
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn counter_vs_size() {
        let mut b = ReplayBuffer::new(3, 0).unwrap();
        assert!(b.is_empty());
        b.push(tr(0.0));
        assert_eq!(b.len(), 1);
        for i in 1..10 {
            b.push(tr(i as f64));
        }
        assert_eq!(b.insert_count(), 10);
        assert_eq!(b.len(), 3);
        assert_eq!(b.evictions(), 7);
    }

    #[test]
    fn warmup_gates_sampling() {
        let mut b = ReplayBuffer::new(10, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..4 {
            b.push(tr(i as f64));
        }
        assert!(matches!(
            b.sample_minibatch(1, &mut rng),
            Err(Error::NotReady { inserted: 4, warmup: 5 })
        ));
        b.push(tr(4.0));
        assert_eq!(b.sample_minibatch(2, &mut rng).unwrap().len(), 2);
        assert!(b.sample_minibatch(6, &mut rng).is_err());
    }

    #[test]
    fn single_element_always_sampled() {
        let mut b = ReplayBuffer::new(4, 1).unwrap();
        b.push(tr(7.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(b.sample_minibatch(1, &mut rng).unwrap()[0].reward, 7.0);
        }
    }

    #[test]
    fn epsilon_schedule_points() {
        let s = EpsilonSchedule::new(1.0, 0.1, 100).unwrap();
        assert_eq!(s.at(0), 1.0);
        assert!((s.at(50) - 0.55).abs() < 1e-12);
        assert_eq!(s.at(10_000), 0.1);
        assert!(EpsilonSchedule::new(0.1, 0.5, 10).is_err());
    }

    #[test]
    fn greedy_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_action(&[1.0, 3.0, 2.0], 0.0, &mut rng).unwrap(), 1);
        assert!(select_action(&[], 0.0, &mut rng).is_err());
        assert!(select_action(&[1.0], 1.5, &mut rng).is_err());
    }

    #[test]
    fn greedy_ties_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let zeros = (0..n)
            .filter(|_| select_action(&[2.0, 2.0], 0.0, &mut rng).unwrap() == 0)
            .count();
        // Binomial(10k, 0.5): sd = 50.
        assert!((zeros as f64 - 5000.0).abs() < 150.0, "{zeros}");
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 30_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[select_action(&[5.0, 1.0, 0.0], 1.0, &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / 3.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }
}
