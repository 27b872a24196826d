//! Declarative run configuration, loaded from TOML.
//!
//! ```toml
//! algorithm = "boot_dqn"
//! total_steps = 20000
//! seeds = [0, 1, 2]
//!
//! [env]
//! name = "deep_sea"
//! size = 10
//!
//! [ensemble]
//! members = 10
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::AdamConfig;
use crate::dqn::{mh_gammas, AuxLoss, DqnSettings, HeadMode};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::sac::SacSettings;
use crate::schedule::{EpsilonSchedule, SwitchMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    DoubleDqn,
    BootDqn,
    Sac,
    EnsembleSac,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DoubleDqn => "double_dqn",
            Algorithm::BootDqn => "boot_dqn",
            Algorithm::Sac => "sac",
            Algorithm::EnsembleSac => "ensemble_sac",
        }
    }

    pub fn is_discrete(self) -> bool {
        matches!(self, Algorithm::DoubleDqn | Algorithm::BootDqn)
    }

    pub fn is_ensemble(self) -> bool {
        matches!(self, Algorithm::BootDqn | Algorithm::EnsembleSac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Defaults to 1 for single agents and 10 for ensembles.
    pub members: Option<usize>,
    /// Bottom hidden layers shared by all members.
    pub shared_layers: usize,
    pub head_mode: HeadMode,
    pub switch_mode: SwitchMode,
    /// Probability that a member trains on a given transition.
    pub keep_prob: f64,
    /// Probability that a member's batch comes from its own transitions only.
    pub self_prob: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: None,
            shared_layers: 0,
            head_mode: HeadMode::Plain,
            switch_mode: SwitchMode::PerEpisode,
            keep_prob: 1.0,
            self_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    /// SAC actor widths; defaults to `hidden`.
    pub actor_hidden: Option<Vec<usize>>,
    pub adam: AdamConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], actor_hidden: None, adam: AdamConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub batch_size: usize,
    /// Steps collected before the first update; defaults to `batch_size`.
    pub learning_starts: Option<u64>,
    /// Environment steps per gradient update.
    pub train_every: u64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self { capacity: 50_000, batch_size: 32, learning_starts: None, train_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    /// Hard target copy period in environment steps.
    pub target_period: u64,
    /// Defaults to 1.0 → 0.05 over 10% of training for Double DQN, 0.01 for Bootstrapped DQN.
    pub epsilon: Option<EpsilonSchedule>,
    pub aux_loss: AuxLoss,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self { target_period: 200, epsilon: None, aux_loss: AuxLoss::Mse }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub tau: f64,
    pub alpha: f64,
    pub autotune_alpha: bool,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub aux_huber: f64,
    pub aux_critic_pairs: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        let s = SacSettings::default();
        Self {
            tau: s.tau,
            alpha: s.alpha,
            autotune_alpha: s.autotune_alpha,
            log_std_min: s.log_std_min,
            log_std_max: s.log_std_max,
            aux_huber: s.aux_huber,
            aux_critic_pairs: s.aux_critic_pairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub period: u64,
    pub episodes: usize,
    /// Evaluation points averaged into the final score; defaults to 10
    /// for discrete tasks and 5 for continuous ones.
    pub final_window: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { period: 1000, episodes: 10, final_window: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TandemConfig {
    pub passive_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub total_steps: u64,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub env: EnvConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub replay: ReplayConfig,
    #[serde(default)]
    pub dqn: DqnConfig,
    #[serde(default)]
    pub sac: SacConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub tandem: Option<TandemConfig>,
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

impl RunConfig {
    /// A config with every optional field at its default.
    pub fn new(algorithm: Algorithm, env: EnvConfig, total_steps: u64) -> Self {
        Self {
            algorithm,
            total_steps,
            seeds: Vec::new(),
            output_dir: None,
            env,
            ensemble: EnsembleConfig::default(),
            network: NetworkConfig::default(),
            replay: ReplayConfig::default(),
            dqn: DqnConfig::default(),
            sac: SacConfig::default(),
            eval: EvalConfig::default(),
            tandem: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serialises to TOML")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml_string().as_bytes()).into()
    }

    pub fn members(&self) -> usize {
        self.ensemble.members.unwrap_or(if self.algorithm.is_ensemble() { 10 } else { 1 })
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        self.dqn.epsilon.unwrap_or(match self.algorithm {
            Algorithm::BootDqn => EpsilonSchedule::constant(0.01),
            _ => EpsilonSchedule::linear_decay(),
        })
    }

    pub fn learning_starts(&self) -> u64 {
        self.replay.learning_starts.unwrap_or(self.replay.batch_size as u64)
    }

    pub fn final_window(&self) -> usize {
        self.eval.final_window.unwrap_or(if self.env.is_discrete() { 10 } else { 5 })
    }

    /// Method label used in reports, e.g. `boot_dqn` or `boot_dqn+cerl`.
    pub fn method_name(&self) -> String {
        let mut name = self.algorithm.name().to_string();
        match self.ensemble.head_mode {
            HeadMode::Plain => {}
            HeadMode::Cerl => name.push_str("+cerl"),
            HeadMode::CerlSelfTarget => name.push_str("+cerl_self"),
            HeadMode::MultiHorizon { .. } => name.push_str("+mh"),
        }
        if let Some(t) = &self.tandem {
            name = format!("tandem_{}", t.passive_pct);
        }
        name
    }

    pub fn dqn_settings(&self) -> DqnSettings {
        DqnSettings {
            members: self.members(),
            hidden: self.network.hidden.clone(),
            shared_layers: self.ensemble.shared_layers,
            head_mode: self.ensemble.head_mode,
            aux_loss: self.dqn.aux_loss,
            adam: self.network.adam,
        }
    }

    pub fn sac_settings(&self) -> SacSettings {
        SacSettings {
            members: self.members(),
            hidden: self.network.hidden.clone(),
            actor_hidden: self.network.actor_hidden.clone().unwrap_or_else(|| self.network.hidden.clone()),
            shared_layers: self.ensemble.shared_layers,
            cerl: self.ensemble.head_mode == HeadMode::Cerl,
            aux_huber: self.sac.aux_huber,
            aux_critic_pairs: self.sac.aux_critic_pairs,
            tau: self.sac.tau,
            alpha: self.sac.alpha,
            autotune_alpha: self.sac.autotune_alpha,
            log_std_min: self.sac.log_std_min,
            log_std_max: self.sac.log_std_max,
            adam: self.network.adam,
        }
    }

    /// Check every field and cross-field rule.
    pub fn validate(&self) -> Result<()> {
        let members = self.members();
        let e = &self.ensemble;
        if members == 0 {
            return Err(invalid("ensemble.members", "must be at least 1"));
        }
        if !self.algorithm.is_ensemble() {
            if members != 1 {
                return Err(invalid("ensemble.members", format!("{} is a single agent, members must be 1", self.algorithm.name())));
            }
            if e.head_mode.is_cerl() {
                return Err(invalid("ensemble.head_mode", format!("{} has no auxiliary head grid", self.algorithm.name())));
            }
        }
        if self.algorithm.is_discrete() != self.env.is_discrete() {
            return Err(invalid(
                "algorithm",
                format!("{} does not match the action space of {}", self.algorithm.name(), self.env.task_name()),
            ));
        }
        if !self.algorithm.is_discrete() && !matches!(e.head_mode, HeadMode::Plain | HeadMode::Cerl) {
            return Err(invalid("ensemble.head_mode", "SAC ensembles support plain and cerl only"));
        }
        if let HeadMode::MultiHorizon { heads, max_horizon } = e.head_mode {
            mh_gammas(heads, max_horizon).map_err(|err| invalid("ensemble.head_mode", err))?;
        }
        if e.shared_layers > self.network.hidden.len() {
            return Err(invalid(
                "ensemble.shared_layers",
                format!("{} exceeds the {} hidden layers", e.shared_layers, self.network.hidden.len()),
            ));
        }
        if self.network.hidden.contains(&0) || self.network.actor_hidden.as_ref().is_some_and(|h| h.contains(&0)) {
            return Err(invalid("network.hidden", "widths must be positive"));
        }
        if !(e.keep_prob > 0.0 && e.keep_prob <= 1.0) {
            return Err(invalid("ensemble.keep_prob", "must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&e.self_prob) {
            return Err(invalid("ensemble.self_prob", "must be in [0, 1]"));
        }
        self.network.adam.validate().map_err(|err| invalid("network.adam", err))?;
        if self.replay.capacity == 0 {
            return Err(invalid("replay.capacity", "must be positive"));
        }
        if self.replay.batch_size == 0 {
            return Err(invalid("replay.batch_size", "must be positive"));
        }
        if self.replay.train_every == 0 {
            return Err(invalid("replay.train_every", "must be positive"));
        }
        if self.dqn.target_period == 0 {
            return Err(invalid("dqn.target_period", "must be positive"));
        }
        if let Some(eps) = &self.dqn.epsilon {
            eps.validate().map_err(|err| invalid("dqn.epsilon", err))?;
        }
        if let AuxLoss::Huber(thr) = self.dqn.aux_loss {
            if !(thr > 0.0) {
                return Err(invalid("dqn.aux_loss", "Huber threshold must be positive"));
            }
        }
        if !self.algorithm.is_discrete() {
            self.sac_settings().validate().map_err(|err| invalid("sac", err))?;
        }
        if self.eval.period == 0 {
            return Err(invalid("eval.period", "must be positive"));
        }
        if self.eval.episodes == 0 {
            return Err(invalid("eval.episodes", "must be positive"));
        }
        if self.eval.final_window == Some(0) {
            return Err(invalid("eval.final_window", "must be positive"));
        }
        if let Some(t) = &self.tandem {
            if self.algorithm != Algorithm::BootDqn {
                return Err(invalid("tandem", "tandem runs use algorithm = boot_dqn"));
            }
            if members != 2 {
                return Err(invalid("tandem", "tandem runs need ensemble.members = 2"));
            }
            if e.shared_layers != 0 {
                return Err(invalid("tandem", "active and passive agents cannot share layers"));
            }
            if e.head_mode != HeadMode::Plain || e.self_prob != 0.0 || e.keep_prob != 1.0 {
                return Err(invalid("tandem", "active and passive agents must see identical batches with plain heads"));
            }
            if !(0.0..=100.0).contains(&t.passive_pct) {
                return Err(invalid("tandem.passive_pct", "must be in [0, 100]"));
            }
        }
        crate::envs::make_env(&self.env).map_err(|err| invalid("env", err))?;
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ConfigLoad { path: path.display().to_string(), msg: e.to_string() })?;
    RunConfig::from_toml_str(&text).map_err(|e| Error::ConfigLoad { path: path.display().to_string(), msg: e.to_string() })
}

/// Parse a `key=v1,v2,...` sweep axis.
pub fn parse_grid(spec: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = spec.split_once('=').ok_or_else(|| Error::config(format!("grid `{spec}` is not KEY=V1,V2,...")))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if key.trim().is_empty() || values.is_empty() {
        return Err(Error::config(format!("grid `{spec}` is not KEY=V1,V2,...")));
    }
    Ok((key.trim().to_string(), values))
}

/// Set a dotted key of a TOML document. The value is read as TOML when
/// possible (`5`, `true`, `[1, 2]`) and as a bare string otherwise.
pub fn apply_override(text: &str, key: &str, value: &str) -> Result<String> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = &mut doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::config(format!("`{part}` in `{key}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(toml::to_string(&doc).expect("TOML table serialises"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
algorithm = "boot_dqn"
total_steps = 1000

[env]
name = "deep_sea"
size = 6
"#;

    #[test]
    fn minimal_fills_defaults_and_round_trips() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.members(), 10);
        assert_eq!(c.replay.capacity, 50_000);
        assert_eq!(c.epsilon(), EpsilonSchedule::constant(0.01));
        assert_eq!(c.final_window(), 10);
        let again = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn zero_members_rejected() {
        let text = format!("{MINIMAL}\n[ensemble]\nmembers = 0\n");
        let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("ensemble.members"), "{err}");
    }

    #[test]
    fn cerl_needs_an_ensemble() {
        let text = MINIMAL.replace("boot_dqn", "double_dqn") + "\n[ensemble]\nhead_mode = \"cerl\"\n";
        let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("head_mode"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[replay]\ncapcity = 10\n");
        let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("capcity"), "{err}");
        assert!(RunConfig::from_toml_str(&format!("{MINIMAL}\nfoo = 1\n")).is_err());
    }

    #[test]
    fn cross_field_rules() {
        let cont = MINIMAL.replace("name = \"deep_sea\"\nsize = 6", "name = \"point_mass1d\"");
        assert!(RunConfig::from_toml_str(&cont).is_err());
        let cont = MINIMAL.replace("name = \"deep_sea\"\nsize = 6", "name = \"point_mass_1d\"");
        assert!(RunConfig::from_toml_str(&cont).unwrap_err().to_string().contains("action space"));
        let sac = cont.replace("boot_dqn", "ensemble_sac");
        let c = RunConfig::from_toml_str(&sac).unwrap();
        assert_eq!(c.final_window(), 5);
        let self_target = format!("{sac}\n[ensemble]\nhead_mode = \"cerl_self_target\"\n");
        assert!(RunConfig::from_toml_str(&self_target).is_err());
        let share = format!("{MINIMAL}\n[ensemble]\nshared_layers = 3\n");
        assert!(RunConfig::from_toml_str(&share).unwrap_err().to_string().contains("shared_layers"));
        let tandem = format!("{MINIMAL}\n[tandem]\npassive_pct = 10.0\n");
        assert!(RunConfig::from_toml_str(&tandem).is_err());
        let tandem = format!("{MINIMAL}\n[ensemble]\nmembers = 2\n[tandem]\npassive_pct = 10.0\n");
        assert!(RunConfig::from_toml_str(&tandem).is_ok());
        let mh = format!("{MINIMAL}\n[ensemble]\nhead_mode = {{ multi_horizon = {{ heads = 10, max_horizon = 100 }} }}\n");
        assert!(RunConfig::from_toml_str(&mh).is_ok());
        let huber = format!("{MINIMAL}\n[dqn]\naux_loss = {{ huber = 10.0 }}\n");
        assert_eq!(RunConfig::from_toml_str(&huber).unwrap().dqn.aux_loss, AuxLoss::Huber(10.0));
    }

    #[test]
    fn missing_file_is_a_load_error() {
        let err = parse_config(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert!(matches!(err, Error::ConfigLoad { .. }));
    }

    #[test]
    fn overrides() {
        let text = apply_override(MINIMAL, "ensemble.members", "4").unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap().members(), 4);
        let text = apply_override(MINIMAL, "ensemble.head_mode", "cerl").unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap().ensemble.head_mode, HeadMode::Cerl);
        assert_eq!(parse_grid("a.b=1,2, 3").unwrap(), ("a.b".to_string(), vec!["1".into(), "2".into(), "3".into()]));
        assert!(parse_grid("nokey").is_err());
    }
}
