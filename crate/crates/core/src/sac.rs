//! Continuous-action ensembles of SAC agents with clipped double-Q critics,
//! optionally with CERL critic head grids.
//!
//! Member `i` owns a tanh-Gaussian actor and a critic pair. With CERL each
//! critic of member `i` carries `N` heads; head `j` regresses to member `j`'s
//! soft TD target. Only the main head `(i, i)` feeds the actor.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{huber, optimizer_step, squared_error, Activation, AdamConfig, Gradient, Mlp, OptimState, ScalarAdam};
use crate::dqn::Batch;
use crate::ensemble_net::{EnsembleGrad, EnsembleNet, EnsembleOptim, HeadLayout, NetShape};
use crate::envs::{ActionSpace, EnvSpec};
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{stream, Stream};

const LOG_PROB_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacSettings {
    pub members: usize,
    /// Critic hidden widths.
    pub hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    /// Bottom critic layers shared across members.
    pub shared_layers: usize,
    pub cerl: bool,
    /// Huber threshold of the auxiliary critic loss.
    pub aux_huber: f64,
    /// Auxiliary heads get a clipped critic pair (else only the first critic's head is used).
    pub aux_critic_pairs: bool,
    pub tau: f64,
    pub alpha: f64,
    pub autotune_alpha: bool,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub adam: AdamConfig,
}

impl Default for SacSettings {
    fn default() -> Self {
        Self {
            members: 1,
            hidden: vec![64, 64],
            actor_hidden: vec![64, 64],
            shared_layers: 0,
            cerl: false,
            aux_huber: 10.0,
            aux_critic_pairs: true,
            tau: 0.005,
            alpha: 0.2,
            autotune_alpha: false,
            log_std_min: -20.0,
            log_std_max: 2.0,
            adam: AdamConfig::default(),
        }
    }
}

impl SacSettings {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::config("entropy temperature must be positive"));
        }
        if !(self.aux_huber > 0.0) {
            return Err(Error::config("Huber threshold must be positive"));
        }
        if !(self.log_std_min < self.log_std_max) {
            return Err(Error::config("log_std_min must be below log_std_max"));
        }
        if self.actor_hidden.contains(&0) {
            return Err(Error::config("actor widths must be positive"));
        }
        Ok(())
    }
}

/// A reparameterised draw from a tanh-Gaussian policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhGaussianSample {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub noise: Vec<f64>,
    /// Pre-squash sample `mean + exp(log_std) * noise`.
    pub pre_squash: Vec<f64>,
    /// Scaled action `high * tanh(pre_squash)`.
    pub action: Vec<f64>,
    pub log_prob: f64,
}

fn squash_log_std(raw: f64, lo: f64, hi: f64) -> (f64, f64) {
    let t = raw.tanh();
    (lo + 0.5 * (hi - lo) * (t + 1.0), 0.5 * (hi - lo) * (1.0 - t * t))
}

/// Log-density of the squashed sample, including the change of variables.
pub fn tanh_gaussian_log_prob(noise: &[f64], log_std: &[f64], pre_squash: &[f64], high: &[f64]) -> f64 {
    let mut lp = 0.0;
    for k in 0..noise.len() {
        let t = pre_squash[k].tanh();
        lp += -0.5 * noise[k] * noise[k] - log_std[k] - HALF_LN_2PI - (1.0 - t * t + LOG_PROB_EPS).ln() - high[k].ln();
    }
    lp
}

/// Loss of one critic head cell: squared error on main heads, Huber on the rest.
pub fn cell_loss(main: bool, prediction: f64, target: f64, threshold: f64) -> Result<(f64, f64)> {
    if main {
        Ok(squared_error(prediction, target))
    } else {
        huber(prediction, target, threshold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacReport {
    pub critic_loss: Vec<f64>,
    pub actor_loss: Vec<f64>,
    pub active: Vec<bool>,
}

impl SacReport {
    pub fn mean_loss(&self) -> f64 {
        let n = self.active.iter().filter(|&&a| a).count();
        if n == 0 {
            return 0.0;
        }
        self.critic_loss.iter().zip(&self.active).filter(|(_, &a)| a).map(|(l, _)| l).sum::<f64>() / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacEnsemble {
    settings: SacSettings,
    obs_dim: usize,
    high: Vec<f64>,
    gamma: f64,
    actors: Vec<Mlp>,
    actor_optim: Vec<OptimState>,
    critics: [EnsembleNet; 2],
    targets: [EnsembleNet; 2],
    critic_optim: [EnsembleOptim; 2],
    log_alpha: Vec<f64>,
    alpha_optim: Vec<ScalarAdam>,
}

impl SacEnsemble {
    /// Member `i` initialises its critics and then its actor from `Init(i)`.
    pub fn new(spec: &EnvSpec, settings: &SacSettings, seed: u64) -> Result<Self> {
        settings.validate()?;
        let (low, high) = match &spec.action_space {
            ActionSpace::Box { low, high } => (low.clone(), high.clone()),
            ActionSpace::Discrete(_) => return Err(Error::config("SAC ensembles need a continuous action space")),
        };
        if low.iter().zip(&high).any(|(l, h)| !(*h > 0.0) || (l + h).abs() > 0.0) {
            return Err(Error::Unsupported("only symmetric action boxes are supported".into()));
        }
        let act_dim = high.len();
        let n = settings.members;
        let shape = NetShape {
            input_dim: spec.obs_dim + act_dim,
            hidden: settings.hidden.clone(),
            shared_layers: settings.shared_layers,
            members: n,
            layout: if settings.cerl { HeadLayout::Grid } else { HeadLayout::Single },
            head_out: 1,
        };
        shape.validate()?;
        let mut rngs: Vec<_> = (0..n).map(|i| stream(seed, Stream::Init(i))).collect();
        let mut shared = stream(seed, Stream::InitShared);
        let c1 = EnsembleNet::init(&shape, &mut rngs, &mut shared)?;
        let c2 = EnsembleNet::init(&shape, &mut rngs, &mut shared)?;
        let actors = rngs
            .iter_mut()
            .map(|r| Mlp::init(spec.obs_dim, &[settings.actor_hidden.clone(), vec![2 * act_dim]].concat(), Activation::Relu, Activation::Identity, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            obs_dim: spec.obs_dim,
            high,
            gamma: spec.gamma,
            actor_optim: actors.iter().map(|a| OptimState::new(a, settings.adam)).collect(),
            actors,
            critic_optim: [EnsembleOptim::new(&c1, settings.adam), EnsembleOptim::new(&c2, settings.adam)],
            targets: [c1.clone(), c2.clone()],
            critics: [c1, c2],
            log_alpha: vec![settings.alpha.ln(); n],
            alpha_optim: vec![ScalarAdam::new(settings.adam); n],
            settings: settings.clone(),
        })
    }

    pub fn members(&self) -> usize {
        self.settings.members
    }

    pub fn action_dim(&self) -> usize {
        self.high.len()
    }

    pub fn alpha(&self, member: usize) -> f64 {
        self.log_alpha[member].exp()
    }

    pub fn actor(&self, member: usize) -> &Mlp {
        &self.actors[member]
    }

    pub fn actor_mut(&mut self, member: usize) -> &mut Mlp {
        &mut self.actors[member]
    }

    pub fn critic(&self, k: usize) -> &EnsembleNet {
        &self.critics[k]
    }

    pub fn critic_mut(&mut self, k: usize) -> &mut EnsembleNet {
        &mut self.critics[k]
    }

    pub fn target_critic(&self, k: usize) -> &EnsembleNet {
        &self.targets[k]
    }

    pub fn target_critic_mut(&mut self, k: usize) -> &mut EnsembleNet {
        &mut self.targets[k]
    }

    fn policy_head(&self, member: usize, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let out = self.actors[member].predict(obs)?;
        let d = self.action_dim();
        let (lo, hi) = (self.settings.log_std_min, self.settings.log_std_max);
        let log_std: Vec<f64> = out[d..].iter().map(|&r| squash_log_std(r, lo, hi).0).collect();
        Ok((out[..d].to_vec(), log_std, out))
    }

    fn sample_from_noise(&self, mean: Vec<f64>, log_std: Vec<f64>, noise: Vec<f64>) -> TanhGaussianSample {
        let pre_squash: Vec<f64> = (0..mean.len()).map(|k| mean[k] + log_std[k].exp() * noise[k]).collect();
        let action = pre_squash.iter().zip(&self.high).map(|(u, h)| h * u.tanh()).collect();
        let log_prob = tanh_gaussian_log_prob(&noise, &log_std, &pre_squash, &self.high);
        TanhGaussianSample { mean, log_std, noise, pre_squash, action, log_prob }
    }

    /// Draw an action from `member`'s policy; `deterministic` uses the mean
    /// (and consumes no random numbers).
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        member: usize,
        obs: &[f64],
        rng: &mut R,
        deterministic: bool,
    ) -> Result<TanhGaussianSample> {
        let (mean, log_std, _) = self.policy_head(member, obs)?;
        let noise = if deterministic {
            vec![0.0; mean.len()]
        } else {
            (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect()
        };
        Ok(self.sample_from_noise(mean, log_std, noise))
    }

    /// Sample with given standard-normal noise (common random numbers).
    pub fn sample_with_noise(&self, member: usize, obs: &[f64], noise: &[f64]) -> Result<TanhGaussianSample> {
        let (mean, log_std, _) = self.policy_head(member, obs)?;
        Ok(self.sample_from_noise(mean, log_std, noise.to_vec()))
    }

    fn critic_input(&self, obs: &[f64], action: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(obs.len() + action.len());
        x.extend_from_slice(obs);
        x.extend_from_slice(action);
        x
    }

    /// `(Q_1, Q_2)` of head `head` of `member` for the online critics.
    pub fn q_pair(&self, member: usize, head: usize, obs: &[f64], action: &[f64]) -> Result<(f64, f64)> {
        let x = self.critic_input(obs, action);
        Ok((self.critics[0].head_values(member, head, &x)?[0], self.critics[1].head_values(member, head, &x)?[0]))
    }

    /// Soft clipped double-Q target of member `j`, drawing one next action.
    pub fn critic_target<R: Rng + ?Sized>(&self, member: usize, t: &Transition, rng: &mut R) -> Result<f64> {
        if !t.bootstraps() {
            return Ok(t.reward);
        }
        let s = self.sample_action(member, &t.next_obs, rng, false)?;
        Ok(self.target_from_sample(member, t, &s)?)
    }

    fn target_from_sample(&self, member: usize, t: &Transition, s: &TanhGaussianSample) -> Result<f64> {
        let x = self.critic_input(&t.next_obs, &s.action);
        let main = self.targets[0].main_head(member);
        let q1 = self.targets[0].head_values(member, main, &x)?[0];
        let q2 = self.targets[1].head_values(member, main, &x)?[0];
        Ok(t.reward + self.gamma * (q1.min(q2) - self.alpha(member) * s.log_prob))
    }

    /// Targets for the listed columns, one next-action draw per column.
    fn column_targets<R: Rng + ?Sized>(&self, t: &Transition, columns: &[usize], rng: &mut R) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.members()];
        for &j in columns {
            out[j] = self.critic_target(j, t, rng)?;
        }
        Ok(out)
    }

    /// Loss of every critic cell `(i, j)` (both critics summed) on one transition.
    pub fn cerl_critic_losses<R: Rng + ?Sized>(&self, t: &Transition, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if !self.settings.cerl {
            return Err(Error::contract("cerl_critic_losses requires CERL critics"));
        }
        let n = self.members();
        let a = t.action.continuous().ok_or_else(|| Error::contract("SAC transitions carry continuous actions"))?;
        let cols: Vec<usize> = (0..n).collect();
        let y = self.column_targets(t, &cols, rng)?;
        let x = self.critic_input(&t.obs, a);
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                for k in self.critic_indices(i, j) {
                    let q = self.critics[k].head_values(i, j, &x)?[0];
                    out[i][j] += cell_loss(i == j, q, y[j], self.settings.aux_huber)?.0;
                }
            }
        }
        Ok(out)
    }

    fn critic_indices(&self, member: usize, head: usize) -> std::ops::Range<usize> {
        if self.settings.aux_critic_pairs || self.critics[0].main_head(member) == head {
            0..2
        } else {
            0..1
        }
    }

    /// Mean over `obs` of `α log π(a|s) - min(Q_1, Q_2)(s, a)` on the main
    /// head, with `a` built from the given noise.
    pub fn actor_loss(&self, member: usize, obs: &[Vec<f64>], noise: &[Vec<f64>]) -> Result<f64> {
        let main = self.critics[0].main_head(member);
        let mut total = 0.0;
        for (o, e) in obs.iter().zip(noise) {
            let s = self.sample_with_noise(member, o, e)?;
            let (q1, q2) = self.q_pair(member, main, o, &s.action)?;
            total += self.alpha(member) * s.log_prob - q1.min(q2);
        }
        Ok(total / obs.len() as f64)
    }

    /// Gradient of [`SacEnsemble::actor_loss`] with respect to the actor
    /// parameters, accumulated into `grad`. Returns the loss.
    fn actor_gradient(&self, member: usize, obs: &[Vec<f64>], noise: &[Vec<f64>], grad: &mut Gradient) -> Result<f64> {
        let d = self.action_dim();
        let main = self.critics[0].main_head(member);
        let alpha = self.alpha(member);
        let (lo, hi) = (self.settings.log_std_min, self.settings.log_std_max);
        let scale = 1.0 / obs.len() as f64;
        let mut scratch = [EnsembleGrad::zeros_like(&self.critics[0]), EnsembleGrad::zeros_like(&self.critics[1])];
        let mut total = 0.0;
        for (o, e) in obs.iter().zip(noise) {
            let (out, tape) = self.actors[member].forward(o)?;
            let mut log_std = vec![0.0; d];
            let mut dlog_std = vec![0.0; d];
            for k in 0..d {
                let (v, dv) = squash_log_std(out[d + k], lo, hi);
                log_std[k] = v;
                dlog_std[k] = dv;
            }
            let s = self.sample_from_noise(out[..d].to_vec(), log_std.clone(), e.clone());
            let x = self.critic_input(o, &s.action);
            let mut qs = [0.0; 2];
            let mut dq_dx = [Vec::new(), Vec::new()];
            for c in 0..2 {
                let net = &self.critics[c];
                let trunk = net.trunk_forward(&x, net.has_trunk())?;
                let pass = net.member_forward(member, &trunk, &[main])?;
                qs[c] = pass.head_output(main).expect("head evaluated")[0];
                let dt = net.member_backward(&pass, &[(main, vec![1.0])], &mut scratch[c])?;
                dq_dx[c] = net.trunk_backward(&trunk, &dt, &mut scratch[c])?;
            }
            let pick = if qs[0] <= qs[1] { 0 } else { 1 };
            total += alpha * s.log_prob - qs[pick];
            let mut dout = vec![0.0; 2 * d];
            for k in 0..d {
                let t = s.pre_squash[k].tanh();
                let one_minus = 1.0 - t * t;
                let dlogp_du = 2.0 * t * one_minus / (one_minus + LOG_PROB_EPS);
                let dl_da = -dq_dx[pick][self.obs_dim + k];
                let dl_du = alpha * dlogp_du + dl_da * self.high[k] * one_minus;
                let sigma = log_std[k].exp();
                dout[k] = dl_du * scale;
                dout[d + k] = (-alpha + dl_du * sigma * e[k]) * dlog_std[k] * scale;
            }
            self.actors[member].backward_into(&tape, &dout, grad)?;
        }
        Ok(total * scale)
    }

    /// Gradient of the actor loss, exposed for checking against finite differences.
    pub fn actor_loss_gradient(&self, member: usize, obs: &[Vec<f64>], noise: &[Vec<f64>]) -> Result<Gradient> {
        let mut g = Gradient::zeros_like(&self.actors[member]);
        self.actor_gradient(member, obs, noise, &mut g)?;
        Ok(g)
    }

    fn accumulate_critic<R: Rng + ?Sized>(
        &self,
        t: &Transition,
        members: &[usize],
        scale: f64,
        rng: &mut R,
        grads: &mut [EnsembleGrad; 2],
        losses: &mut [f64],
    ) -> Result<()> {
        let a = t.action.continuous().ok_or_else(|| Error::contract("SAC transitions carry continuous actions"))?;
        if a.len() != self.action_dim() {
            return Err(Error::contract("action dimension mismatch"));
        }
        let columns: Vec<usize> = if self.settings.cerl { (0..self.members()).collect() } else { members.to_vec() };
        let y = self.column_targets(t, &columns, rng)?;
        let x = self.critic_input(&t.obs, a);
        let heads_per = self.critics[0].heads_per_member();
        for c in 0..2 {
            let net = &self.critics[c];
            let has_trunk = net.has_trunk();
            let trunk = net.trunk_forward(&x, has_trunk)?;
            let mut dtrunk = vec![0.0; trunk.output.len()];
            for &i in members {
                let main = net.main_head(i);
                let heads: Vec<usize> = (0..heads_per).filter(|&h| c == 0 || self.critic_indices(i, h).end == 2).collect();
                let pass = net.member_forward(i, &trunk, &heads)?;
                let mut head_grads = Vec::with_capacity(heads.len());
                for &h in &heads {
                    let col = if self.settings.cerl { h } else { i };
                    let q = pass.head_output(h).expect("head evaluated")[0];
                    let (l, g) = cell_loss(h == main, q, y[col], self.settings.aux_huber)?;
                    losses[i] += l / scale;
                    head_grads.push((h, vec![g / scale]));
                }
                let d = net.member_backward(&pass, &head_grads, &mut grads[c])?;
                if has_trunk {
                    dtrunk.iter_mut().zip(&d).for_each(|(p, q)| *p += q);
                }
            }
            if has_trunk {
                net.trunk_backward(&trunk, &dtrunk, &mut grads[c])?;
            }
        }
        Ok(())
    }

    /// Critic step, actor step, temperature step, then Polyak target update.
    pub fn train_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, batch: &Batch, rng: &mut R) -> Result<SacReport> {
        let n = self.members();
        let lists: Vec<Vec<usize>> = match batch {
            Batch::Shared(s) => vec![s.clone(); n],
            Batch::PerMember(l) => {
                if l.len() != n {
                    return Err(Error::contract("per-member batch needs one list per member"));
                }
                l.clone()
            }
        };
        if lists.iter().any(Vec::is_empty) {
            return Err(Error::contract("empty training batch"));
        }
        let unmasked: Vec<Vec<usize>> =
            (0..n).map(|i| lists[i].iter().copied().filter(|&k| buffer.get(k).mask.get(i).copied().unwrap_or(false)).collect()).collect();
        let active: Vec<bool> = unmasked.iter().map(|l| !l.is_empty()).collect();

        let mut grads = [EnsembleGrad::zeros_like(&self.critics[0]), EnsembleGrad::zeros_like(&self.critics[1])];
        let mut critic_loss = vec![0.0; n];
        match batch {
            Batch::Shared(slots) => {
                let scale = slots.len() as f64;
                for &k in slots {
                    let t = buffer.get(k);
                    let members: Vec<usize> = (0..n).filter(|&i| t.mask.get(i).copied().unwrap_or(false)).collect();
                    if !members.is_empty() {
                        self.accumulate_critic(t, &members, scale, rng, &mut grads, &mut critic_loss)?;
                    }
                }
            }
            Batch::PerMember(_) => {
                for i in 0..n {
                    let scale = lists[i].len() as f64;
                    for &k in &unmasked[i] {
                        self.accumulate_critic(buffer.get(k), &[i], scale, rng, &mut grads, &mut critic_loss)?;
                    }
                }
            }
        }
        if critic_loss.iter().any(|l| !l.is_finite()) {
            return Err(Error::numeric("non-finite critic loss"));
        }
        let heads_per = self.critics[0].heads_per_member();
        for c in 0..2 {
            grads[c].scale_encoders(n, heads_per)?;
            self.critic_optim[c].step(&mut self.critics[c], &grads[c], &active)?;
        }

        let mut actor_loss = vec![0.0; n];
        let target_entropy = -(self.action_dim() as f64);
        for i in (0..n).filter(|&i| active[i]) {
            let obs: Vec<Vec<f64>> = unmasked[i].iter().map(|&k| buffer.get(k).obs.clone()).collect();
            let noise: Vec<Vec<f64>> =
                obs.iter().map(|_| (0..self.action_dim()).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let mut g = Gradient::zeros_like(&self.actors[i]);
            actor_loss[i] = self.actor_gradient(i, &obs, &noise, &mut g)?;
            if !actor_loss[i].is_finite() {
                return Err(Error::numeric("non-finite actor loss"));
            }
            optimizer_step(&mut self.actors[i], &g, &mut self.actor_optim[i])?;
            if self.settings.autotune_alpha {
                let mut mean_lp = 0.0;
                for (o, e) in obs.iter().zip(&noise) {
                    mean_lp += self.sample_with_noise(i, o, e)?.log_prob;
                }
                mean_lp /= obs.len() as f64;
                let g_alpha = -(mean_lp + target_entropy);
                self.alpha_optim[i].update(&mut self.log_alpha[i], g_alpha)?;
            }
        }
        for c in 0..2 {
            self.targets[c].soft_update_from(&self.critics[c], self.settings.tau);
        }
        Ok(SacReport { critic_loss, actor_loss, active })
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::config(format!("tau must be in (0, 1], got {tau}")));
        }
        for c in 0..2 {
            self.targets[c].soft_update_from(&self.critics[c], tau);
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for a in &self.actors {
            for p in a.params() {
                h.update(p.to_le_bytes());
            }
        }
        for c in 0..2 {
            h.update(self.critics[c].fingerprint());
            h.update(self.targets[c].fingerprint());
            h.update(self.critic_optim[c].fingerprint());
        }
        for la in &self.log_alpha {
            h.update(la.to_le_bytes());
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Action;

    fn spec() -> EnvSpec {
        EnvSpec { obs_dim: 2, action_space: ActionSpace::Box { low: vec![-1.0], high: vec![1.0] }, horizon: 10, gamma: 0.9 }
    }

    fn small(members: usize, cerl: bool) -> SacSettings {
        SacSettings { members, hidden: vec![8], actor_hidden: vec![8], cerl, ..SacSettings::default() }
    }

    fn tr(obs: Vec<f64>, a: f64, r: f64, next: Vec<f64>, terminal: bool, members: usize) -> Transition {
        Transition {
            obs,
            action: Action::Continuous(vec![a]),
            reward: r,
            next_obs: next,
            terminal,
            truncated: false,
            generator: 0,
            mask: vec![true; members],
        }
    }

    /// Zero the single head of critic `c` of `member` and set its bias.
    fn constant_critic(net: &mut EnsembleNet, member: usize, head: usize, value: f64) {
        let layer = &mut net.head_mut(member, head).layers_mut()[0];
        layer.weight_mut().iter_mut().for_each(|w| *w = 0.0);
        layer.bias_mut()[0] = value;
    }

    #[test]
    fn deterministic_mean_zero_gives_zero_action() {
        let mut e = SacEnsemble::new(&spec(), &small(1, false), 0).unwrap();
        let last = e.actor_mut(0).layers_mut().last_mut().unwrap();
        last.weight_mut().iter_mut().for_each(|w| *w = 0.0);
        last.bias_mut().iter_mut().for_each(|b| *b = 0.0);
        let mut r = stream(0, Stream::Policy);
        let s = e.sample_action(0, &[0.3, 0.1], &mut r, true).unwrap();
        assert_eq!(s.action, vec![0.0]);
    }

    #[test]
    fn tiny_sigma_approaches_tanh_mean() {
        let mut e = SacEnsemble::new(&spec(), &small(1, false), 0).unwrap();
        let last = e.actor_mut(0).layers_mut().last_mut().unwrap();
        last.weight_mut().iter_mut().for_each(|w| *w = 0.0);
        last.bias_mut().copy_from_slice(&[0.4, -50.0]);
        let mut r = stream(0, Stream::Policy);
        for _ in 0..10 {
            let s = e.sample_action(0, &[0.3, 0.1], &mut r, false).unwrap();
            assert!((s.action[0] - 0.4f64.tanh()).abs() < 1e-6);
        }
    }

    #[test]
    fn log_std_bounds() {
        for raw in [-1e3, -3.0, 0.0, 3.0, 1e3] {
            let (v, _) = squash_log_std(raw, -20.0, 2.0);
            assert!((-20.0..=2.0).contains(&v));
        }
    }

    #[test]
    fn log_prob_matches_density() {
        // density of a = tanh(u), u ~ N(mu, sigma): N(atanh a) / (1 - a²)
        let (mu, ls) = (0.3f64, -0.4f64);
        let sigma = ls.exp();
        for i in 1..40 {
            let a = -0.95 + 1.9 * i as f64 / 40.0;
            let u = a.atanh();
            let eps = (u - mu) / sigma;
            let exact = -0.5 * eps * eps - ls - HALF_LN_2PI - (1.0 - a * a).ln();
            let lp = tanh_gaussian_log_prob(&[eps], &[ls], &[u], &[1.0]);
            assert!((lp - exact).abs() < 1e-3, "{a}: {lp} vs {exact}");
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let mut r = stream(1, Stream::Policy);
        for (mu, ls) in [(0.0f64, 0.0f64), (0.5, -0.7), (-1.0, 0.4)] {
            let sigma = ls.exp();
            let n = 200_000;
            let mut sum = 0.0;
            for _ in 0..n {
                // uniform proposal on (-1, 1), weight 2
                let a: f64 = r.random_range(-1.0 + 1e-12..1.0 - 1e-12);
                let u = a.atanh();
                let eps = (u - mu) / sigma;
                sum += 2.0 * tanh_gaussian_log_prob(&[eps], &[ls], &[u], &[1.0]).exp();
            }
            let est = sum / n as f64;
            assert!((est - 1.0).abs() < 1e-2, "{mu} {ls}: {est}");
        }
    }

    #[test]
    fn critic_target_rules() {
        let mut e = SacEnsemble::new(&spec(), &small(1, false), 0).unwrap();
        let mut r = stream(0, Stream::Update);
        assert_eq!(e.critic_target(0, &tr(vec![0.0, 0.0], 0.0, -1.0, vec![0.0, 0.0], true, 1), &mut r).unwrap(), -1.0);
        constant_critic(e.target_critic_mut(0), 0, 0, 2.0);
        constant_critic(e.target_critic_mut(1), 0, 0, 5.0);
        let t = tr(vec![0.0, 0.0], 0.0, 1.0, vec![0.1, 0.2], false, 1);
        let s = e.sample_action(0, &t.next_obs, &mut stream(4, Stream::Update), false).unwrap();
        let y = e.critic_target(0, &t, &mut stream(4, Stream::Update)).unwrap();
        assert!((y - (1.0 + 0.9 * (2.0 - 0.2 * s.log_prob))).abs() < 1e-12);
        // with α → 0 the target is plain TD on the smaller critic
        e.log_alpha[0] = f64::NEG_INFINITY;
        let y0 = e.critic_target(0, &t, &mut r).unwrap();
        assert!((y0 - (1.0 + 0.9 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn cerl_loss_cells() {
        assert_eq!(cell_loss(false, 20.0, 0.0, 10.0).unwrap(), (150.0, 10.0));
        assert_eq!(cell_loss(true, 20.0, 0.0, 10.0).unwrap().0, 400.0);
        for d in [-1e6, -20.0, -3.0, 0.5, 15.0, 1e9] {
            assert!(cell_loss(false, d, 0.0, 10.0).unwrap().1.abs() <= 10.0);
        }
        let e = SacEnsemble::new(&spec(), &small(1, true), 0).unwrap();
        let t = tr(vec![0.1, 0.0], 0.3, 1.0, vec![0.0, 0.2], false, 1);
        let m = e.cerl_critic_losses(&t, &mut stream(0, Stream::Update)).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].len(), 1);
    }

    #[test]
    fn actor_ignores_aux_heads() {
        let mut e = SacEnsemble::new(&spec(), &small(3, true), 2).unwrap();
        let obs = vec![vec![0.1, 0.2], vec![-0.4, 0.0]];
        let noise = vec![vec![0.3], vec![-1.1]];
        let before = e.actor_loss(1, &obs, &noise).unwrap();
        let gb = e.actor_loss_gradient(1, &obs, &noise).unwrap();
        for h in [0, 2] {
            constant_critic(e.critic_mut(0), 1, h, 77.0);
            constant_critic(e.critic_mut(1), 1, h, -5.0);
        }
        assert_eq!(e.actor_loss(1, &obs, &noise).unwrap(), before);
        assert_eq!(e.actor_loss_gradient(1, &obs, &noise).unwrap(), gb);
    }

    #[test]
    fn constant_critics_zero_alpha_no_policy_gradient() {
        let mut e = SacEnsemble::new(&spec(), &small(1, false), 5).unwrap();
        for c in 0..2 {
            constant_critic(e.critic_mut(c), 0, 0, 1.5);
            // zero the whole network path so dQ/da = 0
            for l in e.critic_mut(c).encoder_mut(0).layers_mut() {
                l.weight_mut().iter_mut().for_each(|w| *w = 0.0);
            }
        }
        e.log_alpha[0] = f64::NEG_INFINITY;
        let g = e.actor_loss_gradient(0, &[vec![0.2, 0.1]], &[vec![0.5]]).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn soft_update_closed_form() {
        let mut e = SacEnsemble::new(&spec(), &small(1, false), 0).unwrap();
        constant_critic(e.critic_mut(0), 0, 0, 1.0);
        constant_critic(e.target_critic_mut(0), 0, 0, 0.0);
        e.soft_update_targets(0.005).unwrap();
        e.soft_update_targets(0.005).unwrap();
        let b = e.target_critic(0).head(0, 0).layers()[0].bias()[0];
        assert!(((1.0 - b) - 0.995f64.powi(2)).abs() < 1e-12);
        e.soft_update_targets(1.0).unwrap();
        assert_eq!(e.target_critic(0), e.critic(0));
        assert!(e.soft_update_targets(0.0).is_err());
    }

    #[test]
    fn rejects_discrete_spaces() {
        let mut s = spec();
        s.action_space = ActionSpace::Discrete(2);
        assert!(SacEnsemble::new(&s, &small(1, false), 0).is_err());
    }

    #[test]
    fn train_step_runs_and_respects_masks() {
        let mut e = SacEnsemble::new(&spec(), &small(2, true), 0).unwrap();
        let mut b = ReplayBuffer::new(8, 2).unwrap();
        for k in 0..8 {
            let mut t = tr(vec![0.1 * k as f64, -0.2], 0.5, -1.0, vec![0.1, 0.0], k == 7, 2);
            t.mask = vec![true, false];
            b.push(t).unwrap();
        }
        let actor1 = e.actor(1).clone();
        let critic_head = e.critic(0).head(1, 1).clone();
        let mut r = stream(0, Stream::Update);
        let rep = e.train_step(&b, &Batch::Shared((0..8).collect()), &mut r).unwrap();
        assert_eq!(rep.active, vec![true, false]);
        assert!(rep.critic_loss[0] > 0.0);
        assert_eq!(e.actor(1), &actor1);
        assert_eq!(e.critic(0).head(1, 1), &critic_head);
    }
}
