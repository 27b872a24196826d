//! Toy environments with exact oracles.
//!
//! * `deep_sea(size)`: a `size × size` grid entered at the top-left cell.
//!   Every step descends one row; action 1 ("right") moves one column right
//!   at a cost of `0.01 / size`, action 0 moves left. Taking "right" in the
//!   bottom-right cell pays 1.0. The episode terminates after `size` steps.
//! * `chain(length)`: positions `0..length`, start at 0, left/right moves.
//!   Moving right from the last position pays 1 and terminates.
//! * `sparse_grid(width, height)`: four-action grid walk from `(0, 0)`;
//!   entering the far corner pays 1 and terminates.
//! * `point_mass_1d`: state `(x, v)`, acceleration `a ∈ [-1, 1]`, reward
//!   `-(x - 1)²`, walls at `±2`, horizon 100.
//!
//! Discrete environments use one-hot observations. Hitting the horizon sets
//! `truncated`, which is distinct from `terminal`.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const DEFAULT_GAMMA: f64 = 0.99;

const POINT_MASS_DT: f64 = 0.1;
const POINT_MASS_GOAL: f64 = 1.0;
const POINT_MASS_WALL: f64 = 2.0;
const POINT_MASS_HORIZON: usize = 100;

/// Declarative environment choice as it appears in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    DeepSea {
        size: usize,
        /// Per-cell random swap of the meaning of the two actions.
        #[serde(default)]
        randomize_actions: bool,
        #[serde(default)]
        mapping_seed: u64,
        #[serde(default)]
        gamma: Option<f64>,
    },
    Chain {
        length: usize,
        #[serde(default)]
        horizon: Option<usize>,
        #[serde(default)]
        gamma: Option<f64>,
    },
    SparseGrid {
        width: usize,
        height: usize,
        #[serde(default)]
        horizon: Option<usize>,
        #[serde(default)]
        gamma: Option<f64>,
    },
    #[serde(rename = "point_mass_1d")]
    PointMass1d {
        #[serde(default)]
        horizon: Option<usize>,
        #[serde(default)]
        gamma: Option<f64>,
    },
}

impl EnvConfig {
    pub fn deep_sea(size: usize) -> Self {
        EnvConfig::DeepSea { size, randomize_actions: false, mapping_seed: 0, gamma: None }
    }

    pub fn chain(length: usize) -> Self {
        EnvConfig::Chain { length, horizon: None, gamma: None }
    }

    pub fn sparse_grid(width: usize, height: usize) -> Self {
        EnvConfig::SparseGrid { width, height, horizon: None, gamma: None }
    }

    pub fn point_mass() -> Self {
        EnvConfig::PointMass1d { horizon: None, gamma: None }
    }

    pub fn with_gamma(mut self, g: f64) -> Self {
        match &mut self {
            EnvConfig::DeepSea { gamma, .. }
            | EnvConfig::Chain { gamma, .. }
            | EnvConfig::SparseGrid { gamma, .. }
            | EnvConfig::PointMass1d { gamma, .. } => *gamma = Some(g),
        }
        self
    }

    pub fn with_horizon(mut self, h: usize) -> Self {
        match &mut self {
            EnvConfig::Chain { horizon, .. } | EnvConfig::SparseGrid { horizon, .. } | EnvConfig::PointMass1d { horizon, .. } => {
                *horizon = Some(h)
            }
            EnvConfig::DeepSea { .. } => {}
        }
        self
    }

    /// Short identifier used as the task name in reports, e.g. `deep_sea_10`.
    pub fn task_name(&self) -> String {
        match self {
            EnvConfig::DeepSea { size, .. } => format!("deep_sea_{size}"),
            EnvConfig::Chain { length, .. } => format!("chain_{length}"),
            EnvConfig::SparseGrid { width, height, .. } => format!("sparse_grid_{width}x{height}"),
            EnvConfig::PointMass1d { .. } => "point_mass_1d".to_string(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, EnvConfig::PointMass1d { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    /// Symmetric box `[-high, high]` per dimension.
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn action_count(&self) -> Option<usize> {
        match self {
            ActionSpace::Discrete(n) => Some(*n),
            ActionSpace::Box { .. } => None,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Box { low, .. } => low.len(),
        }
    }

    pub fn contains(&self, action: &Action) -> bool {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) => a < n,
            (ActionSpace::Box { low, high }, Action::Continuous(v)) => {
                v.len() == low.len() && v.iter().zip(low.iter().zip(high)).all(|(x, (lo, hi))| x.is_finite() && lo <= x && x <= hi)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }

    pub fn continuous(&self) -> Option<&[f64]> {
        match self {
            Action::Continuous(v) => Some(v),
            Action::Discrete(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    DeepSea { size: usize, swapped: Option<Vec<bool>> },
    Chain { length: usize },
    SparseGrid { width: usize, height: usize },
    PointMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum State {
    Cell { row: usize, col: usize },
    Position(usize),
    Mass { x: f64, v: f64 },
}

/// Outcome of a deterministic transition in a finite environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub reward: f64,
    /// `None` when the transition terminates the episode.
    pub next: Option<usize>,
}

/// Mutable part of an environment, enough to resume an episode in an
/// environment rebuilt from the same config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    state: State,
    t: usize,
    done: bool,
    rng: StreamRng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    config: EnvConfig,
    spec: EnvSpec,
    kind: Kind,
    state: State,
    t: usize,
    done: bool,
    rng: StreamRng,
}

fn check_size(name: &str, v: usize) -> Result<()> {
    if (2..=64).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be within [2, 64], got {v}")))
    }
}

fn check_gamma(g: Option<f64>) -> Result<f64> {
    let g = g.unwrap_or(DEFAULT_GAMMA);
    if g > 0.0 && g <= 1.0 {
        Ok(g)
    } else {
        Err(Error::config(format!("discount must be in (0, 1], got {g}")))
    }
}

fn check_horizon(h: Option<usize>, default: usize) -> Result<usize> {
    match h {
        Some(0) => Err(Error::config("horizon must be at least 1")),
        Some(h) => Ok(h),
        None => Ok(default),
    }
}

pub fn make_env(config: &EnvConfig) -> Result<Env> {
    let (kind, spec, state) = match config {
        EnvConfig::DeepSea { size, randomize_actions, mapping_seed, gamma } => {
            check_size("deep_sea size", *size)?;
            let swapped = randomize_actions.then(|| {
                let mut r = StreamRng::seed_from_u64(*mapping_seed);
                (0..size * size).map(|_| r.random::<bool>()).collect()
            });
            let spec = EnvSpec { obs_dim: size * size, action_space: ActionSpace::Discrete(2), horizon: *size, gamma: check_gamma(*gamma)? };
            (Kind::DeepSea { size: *size, swapped }, spec, State::Cell { row: 0, col: 0 })
        }
        EnvConfig::Chain { length, horizon, gamma } => {
            check_size("chain length", *length)?;
            let spec = EnvSpec {
                obs_dim: *length,
                action_space: ActionSpace::Discrete(2),
                horizon: check_horizon(*horizon, 2 * length)?,
                gamma: check_gamma(*gamma)?,
            };
            (Kind::Chain { length: *length }, spec, State::Position(0))
        }
        EnvConfig::SparseGrid { width, height, horizon, gamma } => {
            check_size("sparse_grid width", *width)?;
            check_size("sparse_grid height", *height)?;
            let spec = EnvSpec {
                obs_dim: width * height,
                action_space: ActionSpace::Discrete(4),
                horizon: check_horizon(*horizon, 2 * (width + height))?,
                gamma: check_gamma(*gamma)?,
            };
            (Kind::SparseGrid { width: *width, height: *height }, spec, State::Cell { row: 0, col: 0 })
        }
        EnvConfig::PointMass1d { horizon, gamma } => {
            let spec = EnvSpec {
                obs_dim: 2,
                action_space: ActionSpace::Box { low: vec![-1.0], high: vec![1.0] },
                horizon: check_horizon(*horizon, POINT_MASS_HORIZON)?,
                gamma: check_gamma(*gamma)?,
            };
            (Kind::PointMass, spec, State::Mass { x: 0.0, v: 0.0 })
        }
    };
    Ok(Env { config: config.clone(), spec, kind, state, t: 0, done: true, rng: StreamRng::seed_from_u64(0) })
}

impl Env {
    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn snapshot(&self) -> EnvState {
        EnvState { state: self.state.clone(), t: self.t, done: self.done, rng: self.rng.clone() }
    }

    pub fn restore(&mut self, snap: EnvState) {
        self.state = snap.state;
        self.t = snap.t;
        self.done = snap.done;
        self.rng = snap.rng;
    }

    pub fn is_finished(&self) -> bool {
        self.done
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }

    /// Closed interval of per-step rewards.
    pub fn reward_bounds(&self) -> (f64, f64) {
        match &self.kind {
            Kind::DeepSea { size, .. } => (-0.01 / *size as f64, 1.0),
            Kind::Chain { .. } | Kind::SparseGrid { .. } => (0.0, 1.0),
            Kind::PointMass => {
                let far = POINT_MASS_WALL + POINT_MASS_GOAL;
                (-far * far, 0.0)
            }
        }
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = StreamRng::seed_from_u64(seed);
        self.t = 0;
        self.done = false;
        self.state = match self.kind {
            Kind::DeepSea { .. } | Kind::SparseGrid { .. } => State::Cell { row: 0, col: 0 },
            Kind::Chain { .. } => State::Position(0),
            Kind::PointMass => State::Mass { x: self.rng.random_range(-0.1..=0.1), v: 0.0 },
        };
        self.observe()
    }

    fn observe(&self) -> Vec<f64> {
        match (&self.kind, &self.state) {
            (Kind::PointMass, State::Mass { x, v }) => vec![*x, *v],
            _ => {
                let mut o = vec![0.0; self.spec.obs_dim];
                if let Some(idx) = self.state_index() {
                    o[idx] = 1.0;
                }
                o
            }
        }
    }

    /// Index of the current state in the finite state enumeration, `None`
    /// past the last row of deep sea and for continuous environments.
    fn state_index(&self) -> Option<usize> {
        match (&self.kind, &self.state) {
            (Kind::DeepSea { size, .. }, State::Cell { row, col }) => (*row < *size).then(|| row * size + col),
            (Kind::SparseGrid { width, .. }, State::Cell { row, col }) => Some(row * width + col),
            (Kind::Chain { .. }, State::Position(p)) => Some(*p),
            _ => None,
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::contract("step called on a finished episode; call reset first"));
        }
        if !self.spec.action_space.contains(action) {
            return Err(Error::contract(format!("action {action:?} is outside {:?}", self.spec.action_space)));
        }
        let (reward, terminal) = match (&self.kind, &mut self.state, action) {
            (Kind::PointMass, State::Mass { x, v }, Action::Continuous(a)) => {
                *v += POINT_MASS_DT * a[0];
                *x += POINT_MASS_DT * *v;
                if x.abs() > POINT_MASS_WALL {
                    *x = x.signum() * POINT_MASS_WALL;
                    *v = 0.0;
                }
                let err = *x - POINT_MASS_GOAL;
                (-err * err, false)
            }
            (_, _, Action::Discrete(a)) => {
                let s = self.state_index().expect("finite environment state");
                let tr = self.kind.transition(s, *a);
                match tr.next {
                    Some(n) => self.state = self.kind.state_from_index(n),
                    None => {
                        if let (Kind::DeepSea { size, .. }, State::Cell { row, .. }) = (&self.kind, &mut self.state) {
                            *row = *size;
                        }
                    }
                }
                (tr.reward, tr.next.is_none())
            }
            _ => unreachable!("action kind checked against the action space"),
        };
        self.t += 1;
        let truncated = !terminal && self.t >= self.spec.horizon;
        self.done = terminal || truncated;
        Ok(StepResult { observation: self.observe(), reward, terminal, truncated })
    }

    /// Number of enumerated states for finite environments.
    pub fn state_count(&self) -> Option<usize> {
        match &self.kind {
            Kind::DeepSea { size, .. } => Some(size * size),
            Kind::Chain { length } => Some(*length),
            Kind::SparseGrid { width, height } => Some(width * height),
            Kind::PointMass => None,
        }
    }

    pub fn start_state(&self) -> Option<usize> {
        self.state_count().map(|_| 0)
    }

    /// One-hot observation of an enumerated state.
    pub fn state_observation(&self, s: usize) -> Vec<f64> {
        let mut o = vec![0.0; self.spec.obs_dim];
        o[s] = 1.0;
        o
    }

    /// Deterministic transition from enumerated state `s` under action `a`.
    pub fn transition(&self, s: usize, a: usize) -> Result<Transition> {
        match self.state_count() {
            None => Err(Error::Unsupported("transition model of a continuous environment".into())),
            Some(n) if s >= n => Err(Error::contract(format!("state {s} out of range"))),
            Some(_) => {
                let count = self.spec.action_space.action_count().unwrap_or(0);
                if a >= count {
                    return Err(Error::contract(format!("action {a} out of range")));
                }
                Ok(self.kind.transition(s, a))
            }
        }
    }

    /// States reachable from the start state, in ascending order.
    pub fn reachable_states(&self) -> Result<Vec<usize>> {
        let n = self.state_count().ok_or_else(|| Error::Unsupported("continuous environment".into()))?;
        let actions = self.spec.action_space.action_count().unwrap_or(0);
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(s) = stack.pop() {
            for a in 0..actions {
                if let Some(next) = self.kind.transition(s, a).next {
                    if !seen[next] {
                        seen[next] = true;
                        stack.push(next);
                    }
                }
            }
        }
        Ok((0..n).filter(|&s| seen[s]).collect())
    }
}

impl Kind {
    fn state_from_index(&self, s: usize) -> State {
        match self {
            Kind::DeepSea { size, .. } => State::Cell { row: s / size, col: s % size },
            Kind::SparseGrid { width, .. } => State::Cell { row: s / width, col: s % width },
            Kind::Chain { .. } => State::Position(s),
            Kind::PointMass => unreachable!("continuous environment has no state index"),
        }
    }

    fn transition(&self, s: usize, a: usize) -> Transition {
        match self {
            Kind::DeepSea { size, swapped } => {
                let (row, col) = (s / size, s % size);
                let flip = swapped.as_ref().is_some_and(|m| m[s]);
                let right = (a == 1) != flip;
                let mut reward = 0.0;
                let mut next_col = col.saturating_sub(1);
                if right {
                    reward -= 0.01 / *size as f64;
                    if row == size - 1 && col == size - 1 {
                        reward += 1.0;
                    }
                    next_col = (col + 1).min(size - 1);
                }
                let next = (row + 1 < *size).then(|| (row + 1) * size + next_col);
                Transition { reward, next }
            }
            Kind::Chain { length } => {
                if a == 1 && s == length - 1 {
                    Transition { reward: 1.0, next: None }
                } else if a == 1 {
                    Transition { reward: 0.0, next: Some(s + 1) }
                } else {
                    Transition { reward: 0.0, next: Some(s.saturating_sub(1)) }
                }
            }
            Kind::SparseGrid { width, height } => {
                let (mut row, mut col) = (s / width, s % width);
                match a {
                    0 => row = (row + 1).min(height - 1),
                    1 => row = row.saturating_sub(1),
                    2 => col = col.saturating_sub(1),
                    _ => col = (col + 1).min(width - 1),
                }
                if row == height - 1 && col == width - 1 {
                    Transition { reward: 1.0, next: None }
                } else {
                    Transition { reward: 0.0, next: Some(row * width + col) }
                }
            }
            Kind::PointMass => unreachable!("continuous environment has no transition table"),
        }
    }
}

/// Optimal action values of a finite environment.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: Vec<Vec<f64>>,
    pub residual: f64,
    pub iterations: usize,
}

impl QTable {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s][a]
    }
}

/// Bellman optimality backup of `q` at every state-action pair; returns the
/// new table and the sup-norm change.
fn bellman_backup(env: &Env, q: &[Vec<f64>], gamma: f64) -> (Vec<Vec<f64>>, f64) {
    let actions = q[0].len();
    let mut out = q.to_vec();
    let mut residual: f64 = 0.0;
    for s in 0..q.len() {
        for a in 0..actions {
            let tr = env.kind.transition(s, a);
            let boot = tr.next.map_or(0.0, |n| q[n].iter().copied().fold(f64::NEG_INFINITY, f64::max));
            let v = tr.reward + gamma * boot;
            residual = residual.max((v - q[s][a]).abs());
            out[s][a] = v;
        }
    }
    (out, residual)
}

/// Exact `Q*` by value iteration, ignoring truncation (targets bootstrap
/// through the horizon, so this is the fixed point learners aim for).
pub fn oracle_q(env: &Env) -> Result<QTable> {
    let n = env.state_count().ok_or_else(|| Error::Unsupported("oracle_q needs a finite environment".into()))?;
    let actions = env.spec.action_space.action_count().unwrap_or(0);
    let gamma = env.spec.gamma;
    let mut q = vec![vec![0.0; actions]; n];
    for it in 1..=1_000_000 {
        let (next, residual) = bellman_backup(env, &q, gamma);
        q = next;
        if residual < 1e-10 {
            return Ok(QTable { values: q, residual, iterations: it });
        }
    }
    Err(Error::numeric("value iteration did not converge"))
}

/// Largest Bellman optimality residual of a table.
pub fn bellman_residual(env: &Env, table: &QTable) -> f64 {
    bellman_backup(env, &table.values, env.spec.gamma).1
}

/// Expected undiscounted episode returns from the start state of a finite
/// environment: `(uniform random policy, optimal policy)`, honouring the horizon.
pub fn finite_reference_returns(env: &Env) -> Result<(f64, f64)> {
    let n = env.state_count().ok_or_else(|| Error::Unsupported("continuous environment".into()))?;
    let actions = env.spec.action_space.action_count().unwrap_or(0);
    let mut random = vec![0.0; n];
    let mut best = vec![0.0; n];
    for _ in 0..env.spec.horizon {
        let mut r2 = vec![0.0; n];
        let mut b2 = vec![0.0; n];
        for s in 0..n {
            let mut sum = 0.0;
            let mut max = f64::NEG_INFINITY;
            for a in 0..actions {
                let tr = env.kind.transition(s, a);
                sum += tr.reward + tr.next.map_or(0.0, |x| random[x]);
                max = max.max(tr.reward + tr.next.map_or(0.0, |x| best[x]));
            }
            r2[s] = sum / actions as f64;
            b2[s] = max;
        }
        random = r2;
        best = b2;
    }
    Ok((random[0], best[0]))
}

/// Best achievable undiscounted return of `point_mass_1d` from `(x0, 0)`
/// over `horizon` steps. The return is a concave quadratic of the action
/// sequence under box constraints, solved by accelerated projected gradient.
pub fn point_mass_optimal_return(x0: f64, horizon: usize) -> f64 {
    let dt = POINT_MASS_DT;
    let rollout = |acts: &[f64]| -> (f64, Vec<f64>) {
        let (mut x, mut v) = (x0, 0.0);
        let mut errs = Vec::with_capacity(horizon);
        let mut ret = 0.0;
        for &a in acts {
            v += dt * a;
            x += dt * v;
            let e = x - POINT_MASS_GOAL;
            ret -= e * e;
            errs.push(e);
        }
        (ret, errs)
    };
    // dR/da_k = -2 dt² Σ_{t>k} (t - k) e_t, via suffix sums (t is 1-based).
    let gradient = |errs: &[f64]| -> Vec<f64> {
        let h = errs.len();
        let mut g = vec![0.0; h];
        let (mut s1, mut s2) = (0.0, 0.0);
        for k in (0..h).rev() {
            let t = (k + 1) as f64;
            s1 += errs[k];
            s2 += t * errs[k];
            g[k] = -2.0 * dt * dt * (s2 - k as f64 * s1);
        }
        g
    };
    // Lipschitz bound of the gradient: 2 dt⁴ ‖J‖_F².
    let mut fro = 0.0;
    for t in 1..=horizon {
        for k in 0..t {
            let d = (t - k) as f64;
            fro += d * d;
        }
    }
    let step = 1.0 / (2.0 * dt.powi(4) * fro);
    let mut acts = vec![0.0; horizon];
    let mut y = acts.clone();
    let mut momentum = 1.0;
    for _ in 0..20_000 {
        let (_, errs) = rollout(&y);
        let g = gradient(&errs);
        let next: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| (yi + step * gi).clamp(-1.0, 1.0)).collect();
        let m2 = (1.0 + (1.0 + 4.0 * momentum * momentum as f64).sqrt()) / 2.0;
        y = next.iter().zip(&acts).map(|(n, o)| n + (momentum - 1.0) / m2 * (n - o)).collect();
        acts = next;
        momentum = m2;
    }
    rollout(&acts).0
}

/// `(random, optimal)` reference returns of `point_mass_1d`, averaged over
/// evenly spaced start positions (random by fixed-seed Monte Carlo).
pub fn point_mass_reference_returns(horizon: usize) -> (f64, f64) {
    let starts: Vec<f64> = (0..=10).map(|i| -0.1 + 0.02 * i as f64).collect();
    let optimal = starts.iter().map(|&x0| point_mass_optimal_return(x0, horizon)).sum::<f64>() / starts.len() as f64;
    let mut env = make_env(&EnvConfig::point_mass().with_horizon(horizon)).expect("valid point mass config");
    let mut rng = StreamRng::seed_from_u64(0x5eed);
    let episodes = 500;
    let mut total = 0.0;
    for e in 0..episodes {
        env.reset(e as u64);
        while !env.is_finished() {
            let a = rng.random_range(-1.0..=1.0);
            total += env.step(&Action::Continuous(vec![a])).expect("in-bounds action").reward;
        }
    }
    (total / episodes as f64, optimal)
}

/// Normalisation references `(random, optimal)` for any supported environment.
pub fn reference_returns(config: &EnvConfig) -> Result<(f64, f64)> {
    let env = make_env(config)?;
    match config {
        EnvConfig::PointMass1d { .. } => Ok(point_mass_reference_returns(env.spec.horizon)),
        _ => finite_reference_returns(&env),
    }
}
