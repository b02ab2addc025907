use rand::Rng;

use super::DqnError;

/// How observations are held in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsCodec {
    /// Values in `{0, 1}`, stored one bit each.
    Binary,
    /// Arbitrary `f32` values.
    Float,
}

#[derive(Debug, Clone)]
enum Packed {
    Bits(Vec<u64>),
    Float(Vec<f32>),
}

fn pack(codec: ObsCodec, obs: &[f32]) -> Result<Packed, DqnError> {
    match codec {
        ObsCodec::Float => Ok(Packed::Float(obs.to_vec())),
        ObsCodec::Binary => {
            let mut words = vec![0u64; obs.len().div_ceil(64)];
            for (i, &v) in obs.iter().enumerate() {
                if v == 1.0 {
                    words[i / 64] |= 1 << (i % 64);
                } else if v != 0.0 {
                    return Err(DqnError::NonBinaryObservation(v));
                }
            }
            Ok(Packed::Bits(words))
        }
    }
}

fn unpack_into(p: &Packed, out: &mut [f32]) {
    match p {
        Packed::Float(v) => out.copy_from_slice(v),
        Packed::Bits(words) => {
            for (i, o) in out.iter_mut().enumerate() {
                *o = ((words[i / 64] >> (i % 64)) & 1) as f32;
            }
        }
    }
}

/// One environment transition as handed to the buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub action: usize,
    pub reward: f32,
    pub next_obs: Vec<f32>,
    pub done: bool,
}

#[derive(Debug, Clone)]
struct Stored {
    obs: Packed,
    action: usize,
    reward: f32,
    next_obs: Packed,
    done: bool,
}

/// Fixed-capacity ring of transitions; the oldest entry is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_len: usize,
    num_actions: usize,
    codec: ObsCodec,
    items: Vec<Stored>,
    cursor: usize,
    pushes: u64,
}

/// Sampled minibatch, observations flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub obs: Vec<f32>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f32>,
    pub next_obs: Vec<f32>,
    pub dones: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_len: usize, num_actions: usize, codec: ObsCodec) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, obs_len, num_actions, codec, items: Vec::new(), cursor: 0, pushes: 0 }
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

    /// Total pushes since creation, including overwritten ones.
    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    pub fn push(&mut self, t: Transition) -> Result<(), DqnError> {
        if t.obs.len() != self.obs_len || t.next_obs.len() != self.obs_len {
            return Err(DqnError::ObservationShape { expected: self.obs_len, found: t.obs.len().max(t.next_obs.len()) });
        }
        if t.action >= self.num_actions {
            return Err(DqnError::InvalidAction(t.action));
        }
        let stored = Stored {
            obs: pack(self.codec, &t.obs)?,
            action: t.action,
            reward: t.reward,
            next_obs: pack(self.codec, &t.next_obs)?,
            done: t.done,
        };
        if self.items.len() < self.capacity {
            self.items.push(stored);
        } else {
            self.items[self.cursor] = stored;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.pushes += 1;
        Ok(())
    }

    /// Entry `i` in insertion order (0 = oldest retained).
    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.items.len() {
            return None;
        }
        let slot = if self.items.len() < self.capacity { i } else { (self.cursor + i) % self.capacity };
        let s = &self.items[slot];
        let mut obs = vec![0.0; self.obs_len];
        let mut next_obs = vec![0.0; self.obs_len];
        unpack_into(&s.obs, &mut obs);
        unpack_into(&s.next_obs, &mut next_obs);
        Some(Transition { obs, action: s.action, reward: s.reward, next_obs, done: s.done })
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch, DqnError> {
        if self.items.len() < batch_size || batch_size == 0 {
            return Err(DqnError::BufferUnderfull { have: self.items.len(), need: batch_size.max(1) });
        }
        let n = self.obs_len;
        let mut b = Batch {
            size: batch_size,
            obs: vec![0.0; batch_size * n],
            actions: Vec::with_capacity(batch_size),
            rewards: Vec::with_capacity(batch_size),
            next_obs: vec![0.0; batch_size * n],
            dones: Vec::with_capacity(batch_size),
        };
        for k in 0..batch_size {
            let s = &self.items[rng.gen_range(0..self.items.len())];
            unpack_into(&s.obs, &mut b.obs[k * n..(k + 1) * n]);
            unpack_into(&s.next_obs, &mut b.next_obs[k * n..(k + 1) * n]);
            b.actions.push(s.action);
            b.rewards.push(s.reward);
            b.dones.push(s.done);
        }
        Ok(b)
    }
}
