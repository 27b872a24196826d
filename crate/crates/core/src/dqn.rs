//! Discrete-action ensembles: Double DQN members, Bootstrapped DQN, CERL
//! head grids (with member or self targets) and multi-horizon heads.
//!
//! A single Double DQN agent is the one-member ensemble with one head; there
//! is no separate code path for it.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{huber, squared_error, AdamConfig};
use crate::ensemble_net::{EnsembleGrad, EnsembleNet, EnsembleOptim, HeadLayout, NetShape};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    #[default]
    Plain,
    /// Head `(i, j)` regresses to member `j`'s Double DQN target.
    Cerl,
    /// Head `(i, j)` bootstraps from its own target copy at member `j`'s action.
    CerlSelfTarget,
    /// `heads` value functions per member with discounts from [`mh_gammas`].
    MultiHorizon { heads: usize, max_horizon: usize },
}

impl HeadMode {
    pub fn layout(self) -> HeadLayout {
        match self {
            HeadMode::Plain => HeadLayout::Single,
            HeadMode::Cerl | HeadMode::CerlSelfTarget => HeadLayout::Grid,
            HeadMode::MultiHorizon { heads, .. } => HeadLayout::Horizons(heads),
        }
    }

    pub fn is_cerl(self) -> bool {
        matches!(self, HeadMode::Cerl | HeadMode::CerlSelfTarget)
    }
}

/// Loss applied to auxiliary (non-main) heads; main heads always use squared error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxLoss {
    #[default]
    Mse,
    Huber(f64),
}

impl AuxLoss {
    fn eval(self, prediction: f64, target: f64) -> Result<(f64, f64)> {
        match self {
            AuxLoss::Mse => Ok(squared_error(prediction, target)),
            AuxLoss::Huber(thr) => huber(prediction, target, thr),
        }
    }
}

/// Discounts `γ_i = 1 - 1 / (i · H_max / K)` for `i = 1..=K`.
pub fn mh_gammas(heads: usize, max_horizon: usize) -> Result<Vec<f64>> {
    if heads == 0 {
        return Err(Error::config("multi-horizon needs at least one head"));
    }
    let step = max_horizon as f64 / heads as f64;
    if step <= 1.0 {
        return Err(Error::config(format!(
            "max_horizon / heads must exceed 1 (got {max_horizon} / {heads}), otherwise the shortest discount is not positive"
        )));
    }
    Ok((1..=heads).map(|i| 1.0 - 1.0 / (i as f64 * step)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnSettings {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub shared_layers: usize,
    pub head_mode: HeadMode,
    pub aux_loss: AuxLoss,
    pub adam: AdamConfig,
}

/// Training batch: one list of replay slots for everybody, or one per member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Batch {
    Shared(Vec<usize>),
    PerMember(Vec<Vec<usize>>),
}

impl Batch {
    /// Every slot in consumption order.
    pub fn slots(&self) -> Vec<usize> {
        match self {
            Batch::Shared(s) => s.clone(),
            Batch::PerMember(lists) => lists.concat(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Batch-averaged loss summed over the member's heads.
    pub member_loss: Vec<f64>,
    /// Members that saw at least one unmasked transition.
    pub active: Vec<bool>,
}

impl TrainReport {
    /// Mean loss over active members, 0 when none trained.
    pub fn mean_loss(&self) -> f64 {
        let (sum, n) = self
            .member_loss
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .fold((0.0, 0usize), |(s, n), (l, _)| (s + l, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnEnsemble {
    online: EnsembleNet,
    target: EnsembleNet,
    optim: EnsembleOptim,
    head_mode: HeadMode,
    aux_loss: AuxLoss,
    gamma: f64,
    /// Discount per head index (all equal to `gamma` outside multi-horizon mode).
    head_gammas: Vec<f64>,
    actions: usize,
}

impl DqnEnsemble {
    /// Member `i` initialises from the `Init(i)` stream of `seed`.
    pub fn new(spec: &EnvSpec, settings: &DqnSettings, seed: u64) -> Result<Self> {
        let actions = spec
            .action_space
            .action_count()
            .ok_or_else(|| Error::config("DQN ensembles need a discrete action space"))?;
        settings.adam.validate()?;
        if let AuxLoss::Huber(thr) = settings.aux_loss {
            if !(thr > 0.0) {
                return Err(Error::config("Huber threshold must be positive"));
            }
        }
        let shape = NetShape {
            input_dim: spec.obs_dim,
            hidden: settings.hidden.clone(),
            shared_layers: settings.shared_layers,
            members: settings.members,
            layout: settings.head_mode.layout(),
            head_out: actions,
        };
        shape.validate()?;
        let mut member_rngs: Vec<_> = (0..settings.members).map(|i| stream(seed, Stream::Init(i))).collect();
        let online = EnsembleNet::init(&shape, &mut member_rngs, &mut stream(seed, Stream::InitShared))?;
        let head_gammas = match settings.head_mode {
            HeadMode::MultiHorizon { heads, max_horizon } => mh_gammas(heads, max_horizon)?,
            _ => vec![spec.gamma; online.heads_per_member()],
        };
        Ok(Self {
            target: online.clone(),
            optim: EnsembleOptim::new(&online, settings.adam),
            online,
            head_mode: settings.head_mode,
            aux_loss: settings.aux_loss,
            gamma: spec.gamma,
            head_gammas,
            actions,
        })
    }

    pub fn members(&self) -> usize {
        self.online.members()
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn head_mode(&self) -> HeadMode {
        self.head_mode
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn head_gammas(&self) -> &[f64] {
        &self.head_gammas
    }

    pub fn online(&self) -> &EnsembleNet {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut EnsembleNet {
        &mut self.online
    }

    pub fn target(&self) -> &EnsembleNet {
        &self.target
    }

    pub fn target_mut(&mut self) -> &mut EnsembleNet {
        &mut self.target
    }

    pub fn main_values(&self, member: usize, obs: &[f64]) -> Result<Vec<f64>> {
        self.online.main_values(member, obs)
    }

    /// Greedy action of `member`'s main head.
    pub fn greedy_action(&self, member: usize, obs: &[f64]) -> Result<usize> {
        Ok(argmax(&self.main_values(member, obs)?))
    }

    /// Epsilon-greedy action of `member`. No random numbers are drawn when
    /// `epsilon` is 0.
    pub fn act_train<R: Rng + ?Sized>(&self, member: usize, obs: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return Ok(rng.random_range(0..self.actions));
        }
        self.greedy_action(member, obs)
    }

    pub fn sync_targets(&mut self) {
        self.target.copy_from(&self.online);
    }

    fn check_transition(&self, t: &Transition) -> Result<usize> {
        let a = t.action.discrete().ok_or_else(|| Error::contract("DQN transitions carry discrete actions"))?;
        if a >= self.actions {
            return Err(Error::contract(format!("action {a} out of range")));
        }
        if t.mask.len() != self.members() {
            return Err(Error::contract("mask length differs from the ensemble size"));
        }
        Ok(a)
    }

    /// `r + γ Q̄_j^j(s', argmax_a Q_j^j(s', a))`, or `r` at a terminal step.
    pub fn double_dqn_target(&self, member: usize, t: &Transition) -> Result<f64> {
        if !t.bootstraps() {
            return Ok(t.reward);
        }
        let a = argmax(&self.online.main_values(member, &t.next_obs)?);
        let q = self.target.main_values(member, &t.next_obs)?[a];
        Ok(t.reward + self.gamma * q)
    }

    /// `N × N` matrix whose column `j` is member `j`'s Double DQN target.
    pub fn cerl_targets(&self, t: &Transition) -> Result<Vec<Vec<f64>>> {
        if self.head_mode != HeadMode::Cerl {
            return Err(Error::contract("cerl_targets requires head_mode = cerl"));
        }
        let n = self.members();
        let column = (0..n).map(|j| self.double_dqn_target(j, t)).collect::<Result<Vec<_>>>()?;
        Ok(vec![column; n])
    }

    /// `target[i][j] = r + γ Q̄_i^j(s', a'_j)` with `a'_j` the greedy action of
    /// member `j`'s online main head.
    pub fn cerl_self_targets(&self, t: &Transition) -> Result<Vec<Vec<f64>>> {
        if self.head_mode != HeadMode::CerlSelfTarget {
            return Err(Error::contract("cerl_self_targets requires head_mode = cerl_self_target"));
        }
        let n = self.members();
        if !t.bootstraps() {
            return Ok(vec![vec![t.reward; n]; n]);
        }
        let actions = (0..n).map(|j| Ok(argmax(&self.online.main_values(j, &t.next_obs)?))).collect::<Result<Vec<_>>>()?;
        (0..n)
            .map(|i| self.self_target_row(i, t, &actions))
            .collect()
    }

    fn self_target_row(&self, i: usize, t: &Transition, actions: &[usize]) -> Result<Vec<f64>> {
        (0..self.members())
            .map(|j| Ok(t.reward + self.gamma * self.target.head_values(i, j, &t.next_obs)?[actions[j]]))
            .collect()
    }

    /// Per-head Double DQN targets with each head's own discount.
    fn multi_horizon_row(&self, i: usize, t: &Transition) -> Result<Vec<f64>> {
        (0..self.online.heads_per_member())
            .map(|k| {
                if !t.bootstraps() {
                    return Ok(t.reward);
                }
                let a = argmax(&self.online.head_values(i, k, &t.next_obs)?);
                Ok(t.reward + self.head_gammas[k] * self.target.head_values(i, k, &t.next_obs)?[a])
            })
            .collect()
    }

    /// Regression targets of every head of each listed member.
    fn head_targets(&self, t: &Transition, members: &[usize]) -> Result<Vec<Vec<f64>>> {
        let n = self.members();
        let mut rows = vec![Vec::new(); n];
        match self.head_mode {
            HeadMode::Plain => {
                for &i in members {
                    rows[i] = vec![self.double_dqn_target(i, t)?];
                }
            }
            HeadMode::Cerl => {
                let column = (0..n).map(|j| self.double_dqn_target(j, t)).collect::<Result<Vec<_>>>()?;
                for &i in members {
                    rows[i] = column.clone();
                }
            }
            HeadMode::CerlSelfTarget => {
                if !t.bootstraps() {
                    for &i in members {
                        rows[i] = vec![t.reward; n];
                    }
                } else {
                    let actions =
                        (0..n).map(|j| Ok(argmax(&self.online.main_values(j, &t.next_obs)?))).collect::<Result<Vec<_>>>()?;
                    for &i in members {
                        rows[i] = self.self_target_row(i, t, &actions)?;
                    }
                }
            }
            HeadMode::MultiHorizon { .. } => {
                for &i in members {
                    rows[i] = self.multi_horizon_row(i, t)?;
                }
            }
        }
        Ok(rows)
    }

    /// Accumulate the loss gradient of `members` on one transition. Returns
    /// the summed loss per member (already divided by `scale`).
    fn accumulate(
        &self,
        t: &Transition,
        members: &[usize],
        scale: f64,
        grad: &mut EnsembleGrad,
        losses: &mut [f64],
    ) -> Result<()> {
        let a = self.check_transition(t)?;
        let targets = self.head_targets(t, members)?;
        let heads: Vec<usize> = (0..self.online.heads_per_member()).collect();
        let has_trunk = self.online.has_trunk();
        let trunk = self.online.trunk_forward(&t.obs, has_trunk)?;
        let mut dtrunk = vec![0.0; trunk.output.len()];
        for &i in members {
            let pass = self.online.member_forward(i, &trunk, &heads)?;
            let main = self.online.main_head(i);
            let mut head_grads = Vec::with_capacity(heads.len());
            for &h in &heads {
                let pred = pass.head_output(h).expect("head evaluated")[a];
                let (l, g) = if h == main { squared_error(pred, targets[i][h]) } else { self.aux_loss.eval(pred, targets[i][h])? };
                losses[i] += l / scale;
                let mut dy = vec![0.0; self.actions];
                dy[a] = g / scale;
                head_grads.push((h, dy));
            }
            let d = self.online.member_backward(&pass, &head_grads, grad)?;
            if has_trunk {
                dtrunk.iter_mut().zip(&d).for_each(|(x, y)| *x += y);
            }
        }
        if has_trunk {
            self.online.trunk_backward(&trunk, &dtrunk, grad)?;
        }
        Ok(())
    }

    /// One gradient step on the batch. Member `i` skips transitions whose
    /// mask bit `i` is clear; a member with nothing to learn from is left
    /// untouched, optimizer moments included. Target networks are not updated.
    pub fn train_step(&mut self, buffer: &ReplayBuffer, batch: &Batch) -> Result<TrainReport> {
        let n = self.members();
        let mut grad = EnsembleGrad::zeros_like(&self.online);
        let mut losses = vec![0.0; n];
        let mut active = vec![false; n];
        match batch {
            Batch::Shared(slots) => {
                if slots.is_empty() {
                    return Err(Error::contract("empty training batch"));
                }
                let scale = slots.len() as f64;
                for &k in slots {
                    let t = buffer.get(k);
                    let members: Vec<usize> = (0..n).filter(|&i| t.mask.get(i).copied().unwrap_or(false)).collect();
                    if members.is_empty() {
                        continue;
                    }
                    members.iter().for_each(|&i| active[i] = true);
                    self.accumulate(t, &members, scale, &mut grad, &mut losses)?;
                }
            }
            Batch::PerMember(lists) => {
                if lists.len() != n {
                    return Err(Error::contract("per-member batch needs one list per member"));
                }
                for (i, slots) in lists.iter().enumerate() {
                    if slots.is_empty() {
                        return Err(Error::contract("empty training batch"));
                    }
                    let scale = slots.len() as f64;
                    for &k in slots {
                        let t = buffer.get(k);
                        if !t.mask.get(i).copied().unwrap_or(false) {
                            continue;
                        }
                        active[i] = true;
                        self.accumulate(t, &[i], scale, &mut grad, &mut losses)?;
                    }
                }
            }
        }
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::numeric("non-finite TD loss"));
        }
        grad.scale_encoders(n, self.online.heads_per_member())?;
        self.optim.step(&mut self.online, &grad, &active)?;
        Ok(TrainReport { member_loss: losses, active })
    }

    /// Digest of online, target and optimizer state.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.online.fingerprint());
        h.update(self.target.fingerprint());
        h.update(self.optim.fingerprint());
        h.finalize().into()
    }
}
