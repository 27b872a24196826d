//! Bounded FIFO replay shared by all ensemble members.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Action;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
    /// Member that was acting when the transition was collected.
    pub generator: usize,
    /// `mask[i]` tells whether member `i` trains on this transition.
    pub mask: Vec<bool>,
}

impl Transition {
    /// Whether TD targets bootstrap from `next_obs`.
    pub fn bootstraps(&self) -> bool {
        !self.terminal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    members: usize,
    items: Vec<Transition>,
    cursor: usize,
    /// Slots currently holding transitions generated by each member.
    by_member: Vec<Vec<usize>>,
    /// Position of each slot inside its generator's list.
    slot_pos: Vec<usize>,
}

fn action_shape(a: &Action) -> (bool, usize) {
    match a {
        Action::Discrete(_) => (true, 1),
        Action::Continuous(v) => (false, v.len()),
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize, members: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        if members == 0 {
            return Err(Error::config("replay needs at least one member"));
        }
        Ok(Self {
            capacity,
            members,
            items: Vec::new(),
            cursor: 0,
            by_member: vec![Vec::new(); members],
            slot_pos: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of stored transitions generated by `member`.
    pub fn member_count(&self, member: usize) -> usize {
        self.by_member.get(member).map_or(0, Vec::len)
    }

    pub fn get(&self, slot: usize) -> &Transition {
        &self.items[slot]
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (new, old) = self.items.split_at(if self.items.len() == self.capacity { self.cursor } else { 0 });
        old.iter().chain(new)
    }

    fn check(&self, t: &Transition) -> Result<()> {
        if t.generator >= self.members {
            return Err(Error::contract(format!("generator {} out of range for {} members", t.generator, self.members)));
        }
        if t.mask.len() != self.members {
            return Err(Error::contract(format!("mask has length {} but there are {} members", t.mask.len(), self.members)));
        }
        if t.obs.len() != t.next_obs.len() {
            return Err(Error::contract("obs and next_obs dimensions differ"));
        }
        if let Some(first) = self.items.first() {
            if first.obs.len() != t.obs.len() || action_shape(&first.action) != action_shape(&t.action) {
                return Err(Error::contract("transition shape differs from stored transitions"));
            }
        }
        Ok(())
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        self.check(&t)?;
        let slot = self.cursor;
        if self.items.len() < self.capacity {
            self.items.push(t);
            self.slot_pos.push(0);
        } else {
            let old = self.items[slot].generator;
            let list = &mut self.by_member[old];
            let pos = self.slot_pos[slot];
            list.swap_remove(pos);
            if let Some(&moved) = list.get(pos) {
                self.slot_pos[moved] = pos;
            }
            self.items[slot] = t;
        }
        let g = self.items[slot].generator;
        self.slot_pos[slot] = self.by_member[g].len();
        self.by_member[g].push(slot);
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// `batch_size` slots drawn uniformly with replacement.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    /// With probability `self_prob` the whole batch comes from `member`'s own
    /// transitions, otherwise from the whole buffer. No branch draw is made
    /// when `self_prob` is 0 or 1.
    pub fn sample_self_biased<R: Rng + ?Sized>(
        &self,
        member: usize,
        self_prob: f64,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if !(0.0..=1.0).contains(&self_prob) {
            return Err(Error::config(format!("self-sampling probability must be in [0, 1], got {self_prob}")));
        }
        if member >= self.members {
            return Err(Error::contract(format!("member {member} out of range")));
        }
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let own = self_prob >= 1.0 || (self_prob > 0.0 && rng.random::<f64>() < self_prob);
        if !own {
            return self.sample_uniform(batch_size, rng);
        }
        let list = &self.by_member[member];
        if list.is_empty() {
            warn!("member {member} has no transitions of its own yet; sampling uniformly");
            return self.sample_uniform(batch_size, rng);
        }
        Ok((0..batch_size).map(|_| list[rng.random_range(0..list.len())]).collect())
    }
}

/// Each of `members` bits is set independently with probability `keep_prob`.
/// At `keep_prob = 1` no random numbers are consumed.
pub fn draw_bootstrap_mask<R: Rng + ?Sized>(rng: &mut R, members: usize, keep_prob: f64) -> Result<Vec<bool>> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::config(format!("mask keep probability must be in (0, 1], got {keep_prob}")));
    }
    if keep_prob >= 1.0 {
        return Ok(vec![true; members]);
    }
    Ok((0..members).map(|_| rng.random::<f64>() < keep_prob).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    pub(crate) fn item(id: usize, generator: usize, members: usize) -> Transition {
        Transition {
            obs: vec![id as f64],
            action: Action::Discrete(0),
            reward: id as f64,
            next_obs: vec![id as f64 + 1.0],
            terminal: false,
            truncated: false,
            generator,
            mask: vec![true; members],
        }
    }

    #[test]
    fn fifo_capacity_two() {
        let mut b = ReplayBuffer::new(2, 1).unwrap();
        for i in 1..=3 {
            b.push(item(i, 0, 1)).unwrap();
        }
        let held: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(held, vec![2.0, 3.0]);
    }

    #[test]
    fn push_validates() {
        let mut b = ReplayBuffer::new(4, 2).unwrap();
        assert!(matches!(b.push(item(0, 2, 2)), Err(Error::Contract(_))));
        assert!(matches!(b.push(item(0, 0, 3)), Err(Error::Contract(_))));
        b.push(item(0, 0, 2)).unwrap();
        let mut wide = item(1, 0, 2);
        wide.obs = vec![0.0, 0.0];
        wide.next_obs = vec![0.0, 0.0];
        assert!(matches!(b.push(wide), Err(Error::Contract(_))));
        let mut cont = item(1, 0, 2);
        cont.action = Action::Continuous(vec![0.0]);
        assert!(matches!(b.push(cont), Err(Error::Contract(_))));
    }

    #[test]
    fn size_tracks_pushes() {
        let mut b = ReplayBuffer::new(5, 1).unwrap();
        for i in 0..8 {
            b.push(item(i, 0, 1)).unwrap();
            assert_eq!(b.len(), (i + 1).min(5));
        }
    }

    #[test]
    fn empty_buffer_errors() {
        let b = ReplayBuffer::new(3, 1).unwrap();
        let mut r = stream(0, Stream::Replay);
        assert!(matches!(b.sample_uniform(2, &mut r), Err(Error::EmptyBuffer)));
        assert!(matches!(b.sample_self_biased(0, 0.5, 2, &mut r), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn single_item_support() {
        let mut b = ReplayBuffer::new(3, 1).unwrap();
        b.push(item(7, 0, 1)).unwrap();
        let mut r = stream(0, Stream::Replay);
        assert_eq!(b.sample_uniform(4, &mut r).unwrap(), vec![0; 4]);
    }

    #[test]
    fn uniform_frequencies() {
        let mut b = ReplayBuffer::new(10, 1).unwrap();
        for i in 0..10 {
            b.push(item(i, 0, 1)).unwrap();
        }
        let mut r = stream(3, Stream::Replay);
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for s in b.sample_uniform(draws, &mut r).unwrap() {
            counts[s] += 1;
        }
        let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * 0.1).abs() < 5.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut b = ReplayBuffer::new(10, 2).unwrap();
        for i in 0..10 {
            b.push(item(i, i % 2, 2)).unwrap();
        }
        let a = b.sample_self_biased(1, 0.5, 8, &mut stream(1, Stream::Replay)).unwrap();
        let c = b.sample_self_biased(1, 0.5, 8, &mut stream(1, Stream::Replay)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn self_bias_extremes() {
        let mut b = ReplayBuffer::new(40, 4).unwrap();
        for i in 0..40 {
            b.push(item(i, i % 4, 4)).unwrap();
        }
        let mut r = stream(2, Stream::Replay);
        for _ in 0..50 {
            let s = b.sample_self_biased(3, 1.0, 16, &mut r).unwrap();
            assert!(s.iter().all(|&k| b.get(k).generator == 3));
        }
        let u = b.sample_uniform(32, &mut stream(5, Stream::Replay)).unwrap();
        let z = b.sample_self_biased(3, 0.0, 32, &mut stream(5, Stream::Replay)).unwrap();
        assert_eq!(u, z);
    }

    #[test]
    fn self_bias_half_oversamples_own_data() {
        let members = 5;
        let mut b = ReplayBuffer::new(100, members).unwrap();
        for i in 0..100 {
            b.push(item(i, i % members, members)).unwrap();
        }
        let mut r = stream(9, Stream::Replay);
        let (mut own, mut total) = (0usize, 0usize);
        for _ in 0..4000 {
            for k in b.sample_self_biased(2, 0.5, 8, &mut r).unwrap() {
                own += usize::from(b.get(k).generator == 2);
                total += 1;
            }
        }
        // expected 0.5 + 0.5 / 5 = 0.6
        let frac = own as f64 / total as f64;
        assert!(frac >= 0.5 && (frac - 0.6).abs() < 0.03, "{frac}");
    }

    #[test]
    fn self_bias_falls_back_without_own_data() {
        let mut b = ReplayBuffer::new(10, 3).unwrap();
        for i in 0..10 {
            b.push(item(i, 0, 3)).unwrap();
        }
        let s = b.sample_self_biased(2, 1.0, 5, &mut stream(0, Stream::Replay)).unwrap();
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn mask_draws() {
        let mut r = stream(0, Stream::Masks);
        assert_eq!(draw_bootstrap_mask(&mut r, 10, 1.0).unwrap(), vec![true; 10]);
        assert!(matches!(draw_bootstrap_mask(&mut r, 10, 0.0), Err(Error::Config(_))));
        let trials = 20_000;
        let ones: usize = (0..trials)
            .map(|_| draw_bootstrap_mask(&mut r, 4, 0.75).unwrap().iter().filter(|&&b| b).count())
            .sum();
        let n = (trials * 4) as f64;
        let sigma = (n * 0.75 * 0.25).sqrt();
        assert!((ones as f64 - 0.75 * n).abs() < 5.0 * sigma);
        let a = draw_bootstrap_mask(&mut stream(4, Stream::Masks), 6, 0.5).unwrap();
        let c = draw_bootstrap_mask(&mut stream(4, Stream::Masks), 6, 0.5).unwrap();
        assert_eq!(a, c);
    }

    proptest! {
        #[test]
        fn fifo_holds_latest(capacity in 1usize..20, pushes in 0usize..80, members in 1usize..5) {
            let mut b = ReplayBuffer::new(capacity, members).unwrap();
            for i in 0..pushes {
                b.push(item(i, (i * 7) % members, members)).unwrap();
            }
            let held: Vec<usize> = b.iter().map(|t| t.reward as usize).collect();
            let expect: Vec<usize> = (pushes.saturating_sub(capacity)..pushes).collect();
            prop_assert_eq!(held, expect);
            // member index lists stay consistent with stored generators
            for m in 0..members {
                let n = b.iter().filter(|t| t.generator == m).count();
                prop_assert_eq!(b.member_count(m), n);
                for &slot in &b.by_member[m] {
                    prop_assert_eq!(b.get(slot).generator, m);
                }
            }
        }
    }
}
