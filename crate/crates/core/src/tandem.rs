//! The p%-tandem setup: an active and a passive agent that share the replay
//! buffer and every training batch and differ only in how often they act.
//!
//! A tandem run is a two-member ensemble without shared layers whose member 0
//! is the active agent and member 1 the passive one. Because members never
//! share parameters, each agent's update depends only on the shared batch.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Active,
    Passive,
}

impl Role {
    pub fn member(self) -> usize {
        match self {
            Role::Active => 0,
            Role::Passive => 1,
        }
    }

    /// Series name used in run logs.
    pub fn series(self) -> &'static str {
        match self {
            Role::Active => "active",
            Role::Passive => "passive",
        }
    }
}

/// Map a uniform draw `u ∈ [0, 1)` to a role: passive with probability
/// `passive_pct / 100`. At 50 this agrees with picking `floor(2u)` of a pair.
pub fn role_from_draw(passive_pct: f64, u: f64) -> Role {
    if u < 1.0 - passive_pct / 100.0 {
        Role::Active
    } else {
        Role::Passive
    }
}

pub fn pick_actor<R: Rng + ?Sized>(passive_pct: f64, rng: &mut R) -> Role {
    role_from_draw(passive_pct, rng.random())
}
