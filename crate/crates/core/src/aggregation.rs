//! Test-time use of an ensemble: majority voting, action averaging, vote
//! entropy and the evaluation protocols. Nothing here learns.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dqn::DqnEnsemble;
use crate::envs::{make_env, Action, ActionSpace, EnvConfig};
use crate::error::{Error, Result};
use crate::sac::SacEnsemble;

/// Most-voted action; ties broken uniformly at random. The rng is only
/// touched when there is a tie.
pub fn majority_vote<R: Rng + ?Sized>(votes: &[usize], actions: usize, rng: &mut R) -> Result<usize> {
    if votes.is_empty() {
        return Err(Error::contract("majority vote over an empty ensemble"));
    }
    let counts = vote_histogram(votes, actions)?;
    let best = *counts.iter().max().expect("non-empty histogram");
    let tied: Vec<usize> = (0..actions).filter(|&a| counts[a] == best).collect();
    Ok(if tied.len() == 1 { tied[0] } else { tied[rng.random_range(0..tied.len())] })
}

pub fn vote_histogram(votes: &[usize], actions: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; actions];
    for &v in votes {
        *counts.get_mut(v).ok_or_else(|| Error::contract(format!("vote {v} outside {actions} actions")))? += 1;
    }
    Ok(counts)
}

/// Per-dimension mean, clamped to `[-high, high]`.
pub fn average_action(actions: &[Vec<f64>], high: &[f64]) -> Result<Vec<f64>> {
    let first = actions.first().ok_or_else(|| Error::contract("averaging an empty set of actions"))?;
    if actions.iter().any(|a| a.len() != first.len()) || high.len() != first.len() {
        return Err(Error::contract("action dimensions differ"));
    }
    let n = actions.len() as f64;
    Ok((0..first.len())
        .map(|k| (actions.iter().map(|a| a[k]).sum::<f64>() / n).clamp(-high[k], high[k]))
        .collect())
}

/// Mean over states of the Shannon entropy (nats) of the normalised votes.
pub fn vote_entropy(histograms: &[Vec<usize>]) -> Result<f64> {
    if histograms.is_empty() {
        return Err(Error::contract("vote entropy of no states"));
    }
    let mut total = 0.0;
    for h in histograms {
        let n: usize = h.iter().sum();
        if n == 0 {
            return Err(Error::contract("vote histogram with no votes"));
        }
        total -= h
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n as f64;
                p * p.ln()
            })
            .sum::<f64>();
    }
    Ok(total / histograms.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// All members act together through voting or averaging.
    Aggregated,
    /// One uniformly drawn member acts for a whole episode.
    Individual,
    /// A fixed member acts alone.
    Member(usize),
}

/// Read-only view of an ensemble for evaluation.
pub trait EnsemblePolicy {
    fn members(&self) -> usize;
    /// Member's evaluation action: greedy main head for discrete ensembles,
    /// one policy sample for continuous ones.
    fn member_action(&self, member: usize, obs: &[f64], rng: &mut dyn rand::RngCore) -> Result<Action>;
}

impl EnsemblePolicy for DqnEnsemble {
    fn members(&self) -> usize {
        DqnEnsemble::members(self)
    }

    fn member_action(&self, member: usize, obs: &[f64], _rng: &mut dyn rand::RngCore) -> Result<Action> {
        Ok(Action::Discrete(self.greedy_action(member, obs)?))
    }
}

impl EnsemblePolicy for SacEnsemble {
    fn members(&self) -> usize {
        SacEnsemble::members(self)
    }

    fn member_action(&self, member: usize, obs: &[f64], rng: &mut dyn rand::RngCore) -> Result<Action> {
        Ok(Action::Continuous(self.sample_action(member, obs, rng, false)?.action))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub returns: Vec<f64>,
    /// Vote entropy over states visited in aggregated mode (discrete only).
    pub vote_entropy: Option<f64>,
}

impl EvalOutcome {
    pub fn mean_return(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }
}

/// Run `episodes` evaluation episodes on a fresh environment. Episode reset
/// seeds and every random choice come from `rng`; the policy is not changed.
pub fn evaluate<P: EnsemblePolicy + ?Sized, R: Rng>(
    policy: &P,
    env_config: &EnvConfig,
    mode: EvalMode,
    episodes: usize,
    rng: &mut R,
) -> Result<EvalOutcome> {
    if episodes == 0 {
        return Err(Error::config("evaluation needs at least one episode"));
    }
    let n = policy.members();
    if let EvalMode::Member(m) = mode {
        if m >= n {
            return Err(Error::contract(format!("member {m} out of range")));
        }
    }
    let mut env = make_env(env_config)?;
    let space = env.spec().action_space.clone();
    let mut histograms = Vec::new();
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let seed: u64 = rng.random();
        let member = match mode {
            EvalMode::Member(m) => m,
            EvalMode::Individual if n > 1 => rng.random_range(0..n),
            _ => 0,
        };
        let mut obs = env.reset(seed);
        let mut total = 0.0;
        while !env.is_finished() {
            let action = match mode {
                EvalMode::Aggregated => {
                    let acts = (0..n).map(|m| policy.member_action(m, &obs, rng)).collect::<Result<Vec<_>>>()?;
                    match &space {
                        ActionSpace::Discrete(k) => {
                            let votes: Vec<usize> = acts.iter().map(|a| a.discrete().expect("discrete action")).collect();
                            histograms.push(vote_histogram(&votes, *k)?);
                            Action::Discrete(majority_vote(&votes, *k, rng)?)
                        }
                        ActionSpace::Box { high, .. } => {
                            let vs: Vec<Vec<f64>> = acts.iter().map(|a| a.continuous().expect("continuous action").to_vec()).collect();
                            Action::Continuous(average_action(&vs, high)?)
                        }
                    }
                }
                _ => policy.member_action(member, &obs, rng)?,
            };
            let step = env.step(&action)?;
            total += step.reward;
            obs = step.observation;
        }
        returns.push(total);
    }
    let vote_entropy = if histograms.is_empty() { None } else { Some(vote_entropy(&histograms)?) };
    Ok(EvalOutcome { returns, vote_entropy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    #[test]
    fn strict_majority() {
        let mut r = stream(0, Stream::Eval);
        assert_eq!(majority_vote(&[1, 1, 0], 2, &mut r).unwrap(), 1);
        assert_eq!(majority_vote(&[2; 5], 3, &mut r).unwrap(), 2);
        assert!(majority_vote(&[], 3, &mut r).is_err());
        assert!(majority_vote(&[3], 3, &mut r).is_err());
    }

    #[test]
    fn ties_split_evenly() {
        let mut r = stream(1, Stream::Eval);
        let n = 10_000;
        let zeros = (0..n).filter(|_| majority_vote(&[0, 1], 2, &mut r).unwrap() == 0).count();
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((zeros as f64 - n as f64 / 2.0).abs() < 5.0 * sigma);
    }

    #[test]
    fn averaging() {
        assert_eq!(average_action(&[vec![1.0], vec![-1.0]], &[1.0]).unwrap(), vec![0.0]);
        assert_eq!(average_action(&vec![vec![0.3, -0.2]; 4], &[1.0, 1.0]).unwrap(), vec![0.3, -0.2]);
        assert!(average_action(&[vec![0.0], vec![0.0, 1.0]], &[1.0]).is_err());
        assert!(average_action(&[], &[1.0]).is_err());
    }

    #[test]
    fn entropy_values() {
        assert_eq!(vote_entropy(&[vec![10, 0]]).unwrap(), 0.0);
        assert!((vote_entropy(&[vec![5, 5]]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((vote_entropy(&[vec![2, 2, 2, 2]]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((vote_entropy(&[vec![4, 0], vec![2, 2]]).unwrap() - 2f64.ln() / 2.0).abs() < 1e-12);
        assert!(vote_entropy(&[]).is_err());
        assert!(vote_entropy(&[vec![0, 0]]).is_err());
    }

    proptest! {
        #[test]
        fn permuting_votes_keeps_histogram(votes in prop::collection::vec(0usize..4, 1..12), seed in 0u64..1000) {
            let mut shuffled = votes.clone();
            shuffled.reverse();
            shuffled.rotate_left((seed as usize) % votes.len());
            prop_assert_eq!(vote_histogram(&votes, 4).unwrap(), vote_histogram(&shuffled, 4).unwrap());
            // same tie-break stream → same outcome, regardless of order
            let a = majority_vote(&votes, 4, &mut stream(seed, Stream::Eval)).unwrap();
            let b = majority_vote(&shuffled, 4, &mut stream(seed, Stream::Eval)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn strict_majority_ignores_rng(winner in 0usize..3, n in 1usize..6, seed in 0u64..1000) {
            let mut votes = vec![winner; n + 1];
            votes.extend((0..n).map(|k| (winner + 1 + k % 2) % 3));
            let a = majority_vote(&votes, 3, &mut stream(seed, Stream::Eval)).unwrap();
            prop_assert_eq!(a, winner);
        }

        #[test]
        fn average_stays_in_box(actions in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 1..8)) {
            let clipped: Vec<Vec<f64>> = actions.iter().map(|a| a.iter().map(|x| x.clamp(-2.0, 2.0)).collect()).collect();
            let m = average_action(&clipped, &[2.0, 2.0]).unwrap();
            prop_assert!(m.iter().all(|x| x.abs() <= 2.0));
        }
    }
}
