//! The training loop: acting, storing, updating and evaluating on a fixed
//! cadence, with the whole state serialisable for exact resume.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{evaluate, EnsemblePolicy, EvalMode};
use crate::config::RunConfig;
use crate::dqn::{Batch, DqnEnsemble};
use crate::envs::{make_env, Action, Env, EnvState};
use crate::error::{Error, Result};
use crate::replay::{draw_bootstrap_mask, ReplayBuffer, Transition};
use crate::rng::{stream, Stream, StreamRng};
use crate::sac::SacEnsemble;
use crate::schedule::{MemberSchedule, Selector};
use crate::tandem::Role;

pub const LOG_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "step,seed,series,value";

/// Series names written to the run log.
pub mod series {
    /// Undiscounted return of each finished training episode.
    pub const TRAIN_RETURN: &str = "train_return";
    /// Mean evaluation return with all members aggregated.
    pub const EVAL_AGG: &str = "eval_agg";
    /// Mean evaluation return of one uniformly drawn member per episode.
    pub const EVAL_INDIV: &str = "eval_indiv";
    /// Mean vote entropy (nats) over states visited by the aggregated policy.
    pub const VOTE_ENTROPY: &str = "vote_entropy";
    /// Mean training loss over updates since the previous evaluation.
    pub const LOSS: &str = "loss";
    /// Written once, with the failing step as value, when training blows up.
    pub const DIVERGED: &str = "diverged";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub seed: u64,
    pub series: String,
    pub value: f64,
}

/// Long-format run log, one row per `(step, series)` measurement.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
}

impl RunLog {
    pub fn push(&mut self, step: u64, seed: u64, series: &str, value: f64) {
        self.rows.push(LogRow { step, seed, series: series.to_string(), value });
    }

    /// Values of one series in step order.
    pub fn series(&self, name: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.series == name).map(|r| r.value).collect()
    }

    pub fn points(&self, name: &str) -> Vec<(u64, f64)> {
        self.rows.iter().filter(|r| r.series == name).map(|r| (r.step, r.value)).collect()
    }

    pub fn diverged(&self) -> bool {
        self.rows.iter().any(|r| r.series == series::DIVERGED)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.step, r.seed, r.series, r.value).expect("write to string");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Config(format!("run log header is not `{CSV_HEADER}`")));
        }
        let mut log = RunLog::default();
        for (i, line) in lines.enumerate() {
            let bad = || Error::Config(format!("malformed run log row {}: `{line}`", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            log.rows.push(LogRow {
                step: f[0].parse().map_err(|_| bad())?,
                seed: f[1].parse().map_err(|_| bad())?,
                series: f[2].to_string(),
                value: f[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Agent {
    Dqn(DqnEnsemble),
    Sac(SacEnsemble),
}

impl Agent {
    pub fn policy(&self) -> &dyn EnsemblePolicy {
        match self {
            Agent::Dqn(e) => e,
            Agent::Sac(e) => e,
        }
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        match self {
            Agent::Dqn(e) => e.fingerprint(),
            Agent::Sac(e) => e.fingerprint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Streams {
    member_select: StreamRng,
    epsilon: StreamRng,
    replay: StreamRng,
    masks: StreamRng,
    env: StreamRng,
    eval: StreamRng,
    eval_roles: StreamRng,
    policy: StreamRng,
    update: StreamRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            member_select: stream(seed, Stream::MemberSelect),
            epsilon: stream(seed, Stream::Epsilon),
            replay: stream(seed, Stream::Replay),
            masks: stream(seed, Stream::Masks),
            env: stream(seed, Stream::Env),
            eval: stream(seed, Stream::Eval),
            eval_roles: stream(seed, Stream::EvalRoles),
            policy: stream(seed, Stream::Policy),
            update: stream(seed, Stream::Update),
        }
    }
}

/// Everything that changes during a run. Serialised into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    seed: u64,
    step: u64,
    agent: Agent,
    buffer: ReplayBuffer,
    schedule: MemberSchedule,
    streams: Streams,
    env: EnvState,
    obs: Vec<f64>,
    in_episode: bool,
    episode_return: f64,
    loss_sum: f64,
    loss_count: u64,
    /// Running hash of the replay slots each member has trained on.
    consumed: Vec<u64>,
    log: RunLog,
    finished: bool,
}

pub struct Trainer {
    config: RunConfig,
    env: Env,
    state: TrainerState,
}

fn mix(h: u64, x: u64) -> u64 {
    (h ^ x).wrapping_mul(0x0000_0100_0000_01b3)
}

impl Trainer {
    /// Build a fresh run and record the step-0 evaluation.
    pub fn new(config: RunConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let env = make_env(&config.env)?;
        let spec = env.spec().clone();
        let n = config.members();
        let agent = if config.algorithm.is_discrete() {
            Agent::Dqn(DqnEnsemble::new(&spec, &config.dqn_settings(), seed)?)
        } else {
            Agent::Sac(SacEnsemble::new(&spec, &config.sac_settings(), seed)?)
        };
        let selector = match &config.tandem {
            Some(t) => Selector::Tandem { passive_pct: t.passive_pct },
            None => Selector::Uniform,
        };
        let state = TrainerState {
            seed,
            step: 0,
            agent,
            buffer: ReplayBuffer::new(config.replay.capacity, n)?,
            schedule: MemberSchedule::new(config.ensemble.switch_mode, selector, n)?,
            streams: Streams::new(seed),
            env: env.snapshot(),
            obs: Vec::new(),
            in_episode: false,
            episode_return: 0.0,
            loss_sum: 0.0,
            loss_count: 0,
            consumed: vec![0xcbf2_9ce4_8422_2325; n],
            log: RunLog::default(),
            finished: false,
        };
        let mut t = Self { config, env, state };
        t.evaluate_now()?;
        Ok(t)
    }

    /// Rebuild a trainer from a checkpointed state.
    pub fn from_parts(config: RunConfig, state: TrainerState) -> Result<Self> {
        config.validate()?;
        let mut env = make_env(&config.env)?;
        env.restore(state.env.clone());
        Ok(Self { config, env, state })
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    /// Current state with the live environment folded in.
    pub fn snapshot(&self) -> TrainerState {
        let mut s = self.state.clone();
        s.env = self.env.snapshot();
        s
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.state.seed
    }

    pub fn step(&self) -> u64 {
        self.state.step
    }

    pub fn agent(&self) -> &Agent {
        &self.state.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.state.buffer
    }

    pub fn log(&self) -> &RunLog {
        &self.state.log
    }

    pub fn consumed_digests(&self) -> &[u64] {
        &self.state.consumed
    }

    /// True once `total_steps` is reached or training diverged.
    pub fn is_done(&self) -> bool {
        self.state.finished || self.state.step >= self.config.total_steps
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.config.total_steps)
    }

    /// Advance to `target` steps (capped at `total_steps`).
    pub fn run_until(&mut self, target: u64) -> Result<()> {
        let target = target.min(self.config.total_steps);
        while !self.state.finished && self.state.step < target {
            match self.step_once() {
                Ok(()) => {}
                Err(Error::Numeric(msg)) => {
                    log::warn!("seed {}: training diverged at step {}: {msg}", self.state.seed, self.state.step);
                    let (step, seed) = (self.state.step, self.state.seed);
                    self.state.log.push(step, seed, series::DIVERGED, step as f64);
                    self.state.finished = true;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn step_once(&mut self) -> Result<()> {
        let s = &mut self.state;
        let cfg = &self.config;
        let boundary = !s.in_episode;
        if boundary {
            s.obs = self.env.reset(s.streams.env.random());
            s.in_episode = true;
            s.episode_return = 0.0;
        }
        let member = s.schedule.advance(boundary, &mut s.streams.member_select);
        let action = match &s.agent {
            Agent::Dqn(e) => {
                let eps = cfg.epsilon().value(s.step, cfg.total_steps);
                Action::Discrete(e.act_train(member, &s.obs, eps, &mut s.streams.epsilon)?)
            }
            Agent::Sac(e) => Action::Continuous(e.sample_action(member, &s.obs, &mut s.streams.policy, false)?.action),
        };
        let result = self.env.step(&action)?;
        let mask = draw_bootstrap_mask(&mut s.streams.masks, cfg.members(), cfg.ensemble.keep_prob)?;
        s.episode_return += result.reward;
        s.buffer.push(Transition {
            obs: std::mem::take(&mut s.obs),
            action,
            reward: result.reward,
            next_obs: result.observation.clone(),
            terminal: result.terminal,
            truncated: result.truncated,
            generator: member,
            mask,
        })?;
        s.obs = result.observation;
        s.step += 1;
        if result.terminal || result.truncated {
            s.log.push(s.step, s.seed, series::TRAIN_RETURN, s.episode_return);
            s.in_episode = false;
        }

        if s.step >= cfg.learning_starts() && s.step % cfg.replay.train_every == 0 {
            let b = cfg.replay.batch_size;
            let batch = if cfg.ensemble.self_prob > 0.0 {
                let lists = (0..cfg.members())
                    .map(|i| s.buffer.sample_self_biased(i, cfg.ensemble.self_prob, b, &mut s.streams.replay))
                    .collect::<Result<Vec<_>>>()?;
                Batch::PerMember(lists)
            } else {
                Batch::Shared(s.buffer.sample_uniform(b, &mut s.streams.replay)?)
            };
            for (i, digest) in s.consumed.iter_mut().enumerate() {
                let slots = match &batch {
                    Batch::Shared(v) => v,
                    Batch::PerMember(l) => &l[i],
                };
                for &slot in slots {
                    if s.buffer.get(slot).mask[i] {
                        *digest = mix(*digest, slot as u64);
                    }
                }
            }
            let loss = match &mut s.agent {
                Agent::Dqn(e) => e.train_step(&s.buffer, &batch)?.mean_loss(),
                Agent::Sac(e) => e.train_step(&s.buffer, &batch, &mut s.streams.update)?.mean_loss(),
            };
            if !loss.is_finite() {
                return Err(Error::numeric("non-finite training loss"));
            }
            s.loss_sum += loss;
            s.loss_count += 1;
        }
        if let Agent::Dqn(e) = &mut s.agent {
            if s.step % cfg.dqn.target_period == 0 {
                e.sync_targets();
            }
        }
        if s.step % cfg.eval.period == 0 {
            if s.loss_count > 0 {
                let mean = s.loss_sum / s.loss_count as f64;
                s.log.push(s.step, s.seed, series::LOSS, mean);
                s.loss_sum = 0.0;
                s.loss_count = 0;
            }
            self.evaluate_now()?;
        }
        Ok(())
    }

    /// Log the evaluation rows for the current step.
    fn evaluate_now(&mut self) -> Result<()> {
        let s = &mut self.state;
        let cfg = &self.config;
        let policy = s.agent.policy();
        let episodes = cfg.eval.episodes;
        let agg = evaluate(policy, &cfg.env, EvalMode::Aggregated, episodes, &mut s.streams.eval)?;
        let indiv = evaluate(policy, &cfg.env, EvalMode::Individual, episodes, &mut s.streams.eval)?;
        s.log.push(s.step, s.seed, series::EVAL_AGG, agg.mean_return());
        s.log.push(s.step, s.seed, series::EVAL_INDIV, indiv.mean_return());
        if let Some(h) = agg.vote_entropy {
            s.log.push(s.step, s.seed, series::VOTE_ENTROPY, h);
        }
        if cfg.tandem.is_some() {
            for role in [Role::Active, Role::Passive] {
                let out = evaluate(policy, &cfg.env, EvalMode::Member(role.member()), episodes, &mut s.streams.eval_roles)?;
                s.log.push(s.step, s.seed, role.series(), out.mean_return());
            }
        }
        Ok(())
    }
}

/// Train one seed to completion and return its log.
pub fn train(config: &RunConfig, seed: u64) -> Result<RunLog> {
    let mut t = Trainer::new(config.clone(), seed)?;
    t.run()?;
    Ok(t.state.log)
}

/// Same as [`train`] with the actor choice driven by the tandem selector.
pub fn train_tandem(config: &RunConfig, passive_pct: f64, seed: u64) -> Result<RunLog> {
    let mut config = config.clone();
    config.tandem = Some(crate::config::TandemConfig { passive_pct });
    train(&config, seed)
}

/// Metadata stored next to every run's CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub task: String,
    pub method: String,
    pub final_window: usize,
    pub random_ref: f64,
    pub upper_ref: f64,
    pub config: RunConfig,
}

impl RunMeta {
    pub fn for_config(config: &RunConfig) -> Result<Self> {
        let (random_ref, upper_ref) = crate::envs::reference_returns(&config.env)?;
        Ok(Self {
            schema_version: LOG_SCHEMA_VERSION,
            task: config.env.task_name(),
            method: config.method_name(),
            final_window: config.final_window(),
            random_ref,
            upper_ref,
            config: config.clone(),
        })
    }
}

pub fn seed_csv_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.csv"))
}

pub fn write_meta(dir: &Path, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = RunMeta::for_config(config)?;
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("meta.json"), text + "\n")?;
    Ok(())
}

pub fn write_log(dir: &Path, seed: u64, log: &RunLog) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(seed_csv_path(dir, seed), log.to_csv())?;
    Ok(())
}

/// Train one seed and write `seed_<S>.csv` and `meta.json` into `dir`.
pub fn run_to_dir(config: &RunConfig, seed: u64, dir: &Path) -> Result<RunLog> {
    write_meta(dir, config)?;
    let log = train(config, seed)?;
    write_log(dir, seed, &log)?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Algorithm;
    use crate::envs::EnvConfig;

    fn small(algorithm: Algorithm, env: EnvConfig) -> RunConfig {
        let mut c = RunConfig::new(algorithm, env, 300);
        c.network.hidden = vec![16];
        c.replay.batch_size = 8;
        c.eval.period = 100;
        c.eval.episodes = 2;
        c.dqn.target_period = 50;
        if algorithm.is_ensemble() {
            c.ensemble.members = Some(3);
        }
        c
    }

    #[test]
    fn csv_round_trip() {
        let mut log = RunLog::default();
        log.push(0, 3, series::EVAL_AGG, 0.25);
        log.push(10, 3, series::TRAIN_RETURN, -1.0 / 3.0);
        let text = log.to_csv();
        assert!(text.starts_with("step,seed,series,value\n"));
        assert!(!text.contains('\r'));
        assert_eq!(RunLog::from_csv(&text).unwrap(), log);
        assert!(RunLog::from_csv("a,b\n").is_err());
    }

    #[test]
    fn eval_cadence_and_series() {
        let log = train(&small(Algorithm::BootDqn, EnvConfig::deep_sea(4)), 1).unwrap();
        let steps: Vec<u64> = log.points(series::EVAL_AGG).iter().map(|p| p.0).collect();
        assert_eq!(steps, vec![0, 100, 200, 300]);
        assert_eq!(log.series(series::EVAL_INDIV).len(), 4);
        assert_eq!(log.series(series::VOTE_ENTROPY).len(), 4);
        assert_eq!(log.series(series::LOSS).len(), 3);
        // deep sea episodes last exactly `size` steps
        assert_eq!(log.series(series::TRAIN_RETURN).len(), 300 / 4);
    }

    #[test]
    fn same_seed_same_log() {
        let c = small(Algorithm::BootDqn, EnvConfig::chain(5));
        assert_eq!(train(&c, 4).unwrap(), train(&c, 4).unwrap());
        assert_ne!(train(&c, 4).unwrap(), train(&c, 5).unwrap());
    }

    #[test]
    fn continuous_run() {
        let mut c = small(Algorithm::EnsembleSac, EnvConfig::point_mass().with_horizon(20));
        c.total_steps = 60;
        c.eval.period = 30;
        let log = train(&c, 0).unwrap();
        assert_eq!(log.series(series::EVAL_AGG).len(), 3);
        assert!(log.series(series::VOTE_ENTROPY).is_empty());
        assert!(!log.diverged());
    }

    #[test]
    fn divergence_is_logged() {
        let mut c = small(Algorithm::DoubleDqn, EnvConfig::chain(5));
        c.network.adam.lr = 1e300;
        let log = train(&c, 0).unwrap();
        assert!(log.diverged());
        assert_eq!(log.series(series::DIVERGED).len(), 1);
    }

    #[test]
    fn split_run_matches_straight_run() {
        let c = small(Algorithm::BootDqn, EnvConfig::deep_sea(4));
        let mut a = Trainer::new(c.clone(), 2).unwrap();
        a.run().unwrap();
        let mut b = Trainer::new(c.clone(), 2).unwrap();
        b.run_until(137).unwrap();
        let mut b = Trainer::from_parts(c, b.snapshot()).unwrap();
        b.run().unwrap();
        assert_eq!(a.log(), b.log());
        assert_eq!(a.agent().fingerprint(), b.agent().fingerprint());
    }
}
