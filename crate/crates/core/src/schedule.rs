//! Who acts, and how greedily.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tandem::role_from_draw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchMode {
    /// One member acts for a whole episode.
    #[default]
    PerEpisode,
    /// A fresh member is drawn before every step.
    PerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Selector {
    /// Members drawn uniformly.
    Uniform,
    /// Two members; member 1 (passive) acts with probability `passive_pct / 100`.
    Tandem { passive_pct: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSchedule {
    mode: SwitchMode,
    selector: Selector,
    members: usize,
    current: usize,
}

impl MemberSchedule {
    pub fn new(mode: SwitchMode, selector: Selector, members: usize) -> Result<Self> {
        if members == 0 {
            return Err(Error::config("ensemble size must be at least 1"));
        }
        if let Selector::Tandem { passive_pct } = selector {
            if members != 2 {
                return Err(Error::config("tandem runs need exactly two members"));
            }
            if !(0.0..=100.0).contains(&passive_pct) {
                return Err(Error::config(format!("passive percentage must be in [0, 100], got {passive_pct}")));
            }
        }
        Ok(Self { mode, selector, members, current: 0 })
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn mode(&self) -> SwitchMode {
        self.mode
    }

    /// Called before every environment step; `episode_boundary` is true for
    /// the first step of an episode. One draw is consumed per resample.
    pub fn advance<R: Rng + ?Sized>(&mut self, episode_boundary: bool, rng: &mut R) -> usize {
        if episode_boundary || self.mode == SwitchMode::PerStep {
            let u: f64 = rng.random();
            self.current = match self.selector {
                Selector::Uniform => ((u * self.members as f64) as usize).min(self.members - 1),
                Selector::Tandem { passive_pct } => role_from_draw(passive_pct, u).member(),
            };
        }
        self.current
    }
}

/// Linear decay from `start` to `end` over the first `decay_fraction` of
/// training, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        Self { start: eps, end: eps, decay_fraction: 0.0 }
    }

    pub fn linear_decay() -> Self {
        Self { start: 1.0, end: 0.05, decay_fraction: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.start) || !ok(self.end) || !ok(self.decay_fraction) {
            return Err(Error::config("epsilon start, end and decay_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn value(&self, step: u64, total_steps: u64) -> f64 {
        let span = self.decay_fraction * total_steps as f64;
        if span <= 0.0 || step as f64 >= span {
            return self.end;
        }
        self.start + (self.end - self.start) * (step as f64 / span)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn per_episode_holds_mid_episode() {
        let mut s = MemberSchedule::new(SwitchMode::PerEpisode, Selector::Uniform, 10).unwrap();
        let mut r = stream(0, Stream::MemberSelect);
        let m = s.advance(true, &mut r);
        for _ in 0..20 {
            assert_eq!(s.advance(false, &mut r), m);
        }
    }

    #[test]
    fn per_step_frequencies() {
        let mut s = MemberSchedule::new(SwitchMode::PerStep, Selector::Uniform, 10).unwrap();
        let mut r = stream(1, Stream::MemberSelect);
        let mut counts = [0usize; 10];
        let calls = 10_000;
        for _ in 0..calls {
            counts[s.advance(false, &mut r)] += 1;
        }
        let sigma = (calls as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - 1000.0).abs() < 5.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn single_member_always_zero() {
        let mut s = MemberSchedule::new(SwitchMode::PerStep, Selector::Uniform, 1).unwrap();
        let mut r = stream(2, Stream::MemberSelect);
        assert!((0..100).all(|_| s.advance(true, &mut r) == 0));
    }

    #[test]
    fn tandem_half_matches_uniform_pair() {
        let mut a = MemberSchedule::new(SwitchMode::PerEpisode, Selector::Uniform, 2).unwrap();
        let mut b = MemberSchedule::new(SwitchMode::PerEpisode, Selector::Tandem { passive_pct: 50.0 }, 2).unwrap();
        let (mut ra, mut rb) = (stream(3, Stream::MemberSelect), stream(3, Stream::MemberSelect));
        for _ in 0..5000 {
            assert_eq!(a.advance(true, &mut ra), b.advance(true, &mut rb));
        }
    }

    #[test]
    fn tandem_config_checks() {
        assert!(MemberSchedule::new(SwitchMode::PerEpisode, Selector::Tandem { passive_pct: 10.0 }, 3).is_err());
        assert!(MemberSchedule::new(SwitchMode::PerEpisode, Selector::Tandem { passive_pct: 101.0 }, 2).is_err());
    }

    #[test]
    fn epsilon_decay() {
        let e = EpsilonSchedule::linear_decay();
        assert_eq!(e.value(0, 1000), 1.0);
        assert!((e.value(50, 1000) - 0.525).abs() < 1e-12);
        assert_eq!(e.value(100, 1000), 0.05);
        assert_eq!(e.value(900, 1000), 0.05);
        assert_eq!(EpsilonSchedule::constant(0.01).value(0, 1000), 0.01);
        assert!(EpsilonSchedule { start: 1.5, end: 0.0, decay_fraction: 0.1 }.validate().is_err());
    }
}
