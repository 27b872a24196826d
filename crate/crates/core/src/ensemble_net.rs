//! Value-network family shared by every member of an ensemble.
//!
//! Member `i` computes `g_i^h(f_i(trunk(x)))` where `trunk` is the optional
//! stack of the first `L` hidden layers shared by all members, `f_i` is the
//! member's own remaining encoder and `g_i^h` are its linear heads. The head
//! layout decides how many heads a member has and which one is its main head.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{optimizer_step, scale_encoder_gradients, Activation, AdamConfig, Dense, Gradient, Mlp, OptimState, Tape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLayout {
    /// One head per member.
    Single,
    /// `N` heads per member; head `j` of member `i` tracks member `j`'s value.
    Grid,
    /// `K` heads per member, one per discount; the last is the main head.
    Horizons(usize),
}

impl HeadLayout {
    pub fn heads_per_member(self, members: usize) -> usize {
        match self {
            HeadLayout::Single => 1,
            HeadLayout::Grid => members,
            HeadLayout::Horizons(k) => k,
        }
    }

    pub fn main_head(self, member: usize) -> usize {
        match self {
            HeadLayout::Single => 0,
            HeadLayout::Grid => member,
            HeadLayout::Horizons(k) => k - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub shared_layers: usize,
    pub members: usize,
    pub layout: HeadLayout,
    pub head_out: usize,
}

impl NetShape {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::config("ensemble size must be at least 1"));
        }
        if self.shared_layers > self.hidden.len() {
            return Err(Error::config(format!(
                "cannot share {} layers of a {}-layer encoder",
                self.shared_layers,
                self.hidden.len()
            )));
        }
        if self.input_dim == 0 || self.head_out == 0 || self.hidden.contains(&0) {
            return Err(Error::config("network widths must be positive"));
        }
        if let HeadLayout::Horizons(0) = self.layout {
            return Err(Error::config("multi-horizon layout needs at least one head"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleNet {
    members: usize,
    layout: HeadLayout,
    trunk: Option<Mlp>,
    encoders: Vec<Mlp>,
    heads: Vec<Vec<Mlp>>,
}

/// Output of the shared trunk for one input.
#[derive(Debug, Clone)]
pub struct TrunkPass {
    pub output: Vec<f64>,
    tape: Option<Tape>,
}

/// One member's encoder pass plus the head passes that were requested.
#[derive(Debug, Clone)]
pub struct MemberPass {
    pub member: usize,
    pub features: Vec<f64>,
    encoder_tape: Tape,
    heads: Vec<(usize, Vec<f64>, Tape)>,
}

impl MemberPass {
    pub fn head_output(&self, head: usize) -> Option<&[f64]> {
        self.heads.iter().find(|(h, _, _)| *h == head).map(|(_, out, _)| out.as_slice())
    }
}

impl EnsembleNet {
    /// Build a randomly initialised ensemble. Member `i` draws all of its own
    /// parameters from `member_rngs[i]`; the shared trunk draws from `shared_rng`.
    pub fn init<R: Rng>(shape: &NetShape, member_rngs: &mut [R], shared_rng: &mut R) -> Result<Self> {
        shape.validate()?;
        if member_rngs.len() != shape.members {
            return Err(Error::config("one rng stream per member is required"));
        }
        let (shared, own) = shape.hidden.split_at(shape.shared_layers);
        let trunk = if shared.is_empty() {
            None
        } else {
            Some(Mlp::init(shape.input_dim, shared, Activation::Relu, Activation::Relu, shared_rng)?)
        };
        let enc_in = shared.last().copied().unwrap_or(shape.input_dim);
        let feat_dim = shape.hidden.last().copied().unwrap_or(shape.input_dim);
        let heads_per = shape.layout.heads_per_member(shape.members);
        let mut encoders = Vec::with_capacity(shape.members);
        let mut heads = Vec::with_capacity(shape.members);
        for rng in member_rngs.iter_mut() {
            let encoder = if own.is_empty() {
                Mlp::identity(enc_in)
            } else {
                Mlp::init(enc_in, own, Activation::Relu, Activation::Relu, rng)?
            };
            encoders.push(encoder);
            let member_heads = (0..heads_per)
                .map(|_| Ok(Mlp::new(feat_dim, vec![Dense::init(feat_dim, shape.head_out, Activation::Identity, rng)?])?))
                .collect::<Result<Vec<_>>>()?;
            heads.push(member_heads);
        }
        Ok(Self { members: shape.members, layout: shape.layout, trunk, encoders, heads })
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn layout(&self) -> HeadLayout {
        self.layout
    }

    pub fn heads_per_member(&self) -> usize {
        self.layout.heads_per_member(self.members)
    }

    pub fn main_head(&self, member: usize) -> usize {
        self.layout.main_head(member)
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.as_ref().map_or(self.encoders[0].in_dim(), Mlp::in_dim)
    }

    pub fn has_trunk(&self) -> bool {
        self.trunk.is_some()
    }

    pub fn trunk(&self) -> Option<&Mlp> {
        self.trunk.as_ref()
    }

    pub fn trunk_mut(&mut self) -> Option<&mut Mlp> {
        self.trunk.as_mut()
    }

    pub fn encoder(&self, member: usize) -> &Mlp {
        &self.encoders[member]
    }

    pub fn encoder_mut(&mut self, member: usize) -> &mut Mlp {
        &mut self.encoders[member]
    }

    pub fn head(&self, member: usize, head: usize) -> &Mlp {
        &self.heads[member][head]
    }

    pub fn head_mut(&mut self, member: usize, head: usize) -> &mut Mlp {
        &mut self.heads[member][head]
    }

    fn check_member(&self, member: usize) -> Result<()> {
        if member >= self.members {
            return Err(Error::contract(format!("member {member} out of range for ensemble of {}", self.members)));
        }
        Ok(())
    }

    pub fn trunk_forward(&self, x: &[f64], record: bool) -> Result<TrunkPass> {
        match &self.trunk {
            None => {
                if x.len() != self.input_dim() {
                    return Err(Error::config(format!("input has length {} but the network expects {}", x.len(), self.input_dim())));
                }
                Ok(TrunkPass { output: x.to_vec(), tape: None })
            }
            Some(t) if record => {
                let (output, tape) = t.forward(x)?;
                Ok(TrunkPass { output, tape: Some(tape) })
            }
            Some(t) => Ok(TrunkPass { output: t.predict(x)?, tape: None }),
        }
    }

    /// Encoder pass for `member` on a trunk output, evaluating the listed heads.
    pub fn member_forward(&self, member: usize, trunk: &TrunkPass, heads: &[usize]) -> Result<MemberPass> {
        self.check_member(member)?;
        let (features, encoder_tape) = self.encoders[member].forward(&trunk.output)?;
        let mut outs = Vec::with_capacity(heads.len());
        for &h in heads {
            let head = self
                .heads[member]
                .get(h)
                .ok_or_else(|| Error::contract(format!("head {h} out of range")))?;
            let (y, tape) = head.forward(&features)?;
            outs.push((h, y, tape));
        }
        Ok(MemberPass { member, features, encoder_tape, heads: outs })
    }

    /// Output of one head on a raw input, no tapes kept.
    pub fn head_values(&self, member: usize, head: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_member(member)?;
        let trunk = self.trunk_forward(x, false)?;
        let features = self.encoders[member].predict(&trunk.output)?;
        self.heads[member]
            .get(head)
            .ok_or_else(|| Error::contract(format!("head {head} out of range")))?
            .predict(&features)
    }

    pub fn main_values(&self, member: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.head_values(member, self.main_head(member), x)
    }

    /// Backpropagate the given per-head output gradients through one member's
    /// heads and encoder. Returns the gradient with respect to the trunk output.
    pub fn member_backward(
        &self,
        pass: &MemberPass,
        head_grads: &[(usize, Vec<f64>)],
        grad: &mut EnsembleGrad,
    ) -> Result<Vec<f64>> {
        let i = pass.member;
        let mut dfeat = vec![0.0; pass.features.len()];
        for (h, dy) in head_grads {
            let (_, _, tape) = pass
                .heads
                .iter()
                .find(|(hh, _, _)| hh == h)
                .ok_or_else(|| Error::contract(format!("head {h} was not evaluated in this pass")))?;
            let d = self.heads[i][*h].backward_into(tape, dy, &mut grad.heads[i][*h])?;
            dfeat.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        }
        self.encoders[i].backward_into(&pass.encoder_tape, &dfeat, &mut grad.encoders[i])
    }

    /// Backpropagate through the shared trunk. Returns the input gradient.
    pub fn trunk_backward(&self, pass: &TrunkPass, doutput: &[f64], grad: &mut EnsembleGrad) -> Result<Vec<f64>> {
        match (&self.trunk, &pass.tape, grad.trunk.as_mut()) {
            (None, _, _) => Ok(doutput.to_vec()),
            (Some(t), Some(tape), Some(g)) => t.backward_into(tape, doutput, g),
            _ => Err(Error::contract("trunk pass was recorded without a tape")),
        }
    }

    /// Hard copy of every parameter.
    pub fn copy_from(&mut self, online: &EnsembleNet) {
        self.clone_from(online);
    }

    pub fn soft_update_from(&mut self, online: &EnsembleNet, tau: f64) {
        if let (Some(t), Some(o)) = (self.trunk.as_mut(), online.trunk.as_ref()) {
            t.soft_update_from(o, tau);
        }
        for (t, o) in self.encoders.iter_mut().zip(&online.encoders) {
            t.soft_update_from(o, tau);
        }
        for (th, oh) in self.heads.iter_mut().zip(&online.heads) {
            for (t, o) in th.iter_mut().zip(oh) {
                t.soft_update_from(o, tau);
            }
        }
    }

    fn nets(&self) -> impl Iterator<Item = &Mlp> {
        self.trunk.iter().chain(&self.encoders).chain(self.heads.iter().flatten())
    }

    pub fn all_finite(&self) -> bool {
        self.nets().all(Mlp::all_finite)
    }

    pub fn param_count(&self) -> usize {
        self.nets().map(Mlp::param_count).sum()
    }

    /// Digest of every parameter's bit pattern.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for net in self.nets() {
            for p in net.params() {
                h.update(p.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

/// Gradient with the same structure as an [`EnsembleNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleGrad {
    trunk: Option<Gradient>,
    encoders: Vec<Gradient>,
    heads: Vec<Vec<Gradient>>,
}

impl EnsembleGrad {
    pub fn zeros_like(net: &EnsembleNet) -> Self {
        Self {
            trunk: net.trunk.as_ref().map(Gradient::zeros_like),
            encoders: net.encoders.iter().map(Gradient::zeros_like).collect(),
            heads: net.heads.iter().map(|hs| hs.iter().map(Gradient::zeros_like).collect()).collect(),
        }
    }

    pub fn encoder(&self, member: usize) -> &Gradient {
        &self.encoders[member]
    }

    pub fn head(&self, member: usize, head: usize) -> &Gradient {
        &self.heads[member][head]
    }

    pub fn trunk(&self) -> Option<&Gradient> {
        self.trunk.as_ref()
    }

    fn all(&self) -> impl Iterator<Item = &Gradient> {
        self.trunk.iter().chain(&self.encoders).chain(self.heads.iter().flatten())
    }

    pub fn is_finite(&self) -> bool {
        self.all().all(Gradient::is_finite)
    }

    pub fn scale(&mut self, factor: f64) {
        self.trunk.iter_mut().for_each(|g| g.scale(factor));
        self.encoders.iter_mut().for_each(|g| g.scale(factor));
        self.heads.iter_mut().flatten().for_each(|g| g.scale(factor));
    }

    /// Divide encoder gradients by the number of heads above them: each
    /// member encoder carries its own heads, the shared trunk carries every
    /// member's heads.
    pub fn scale_encoders(&mut self, members: usize, heads_per_member: usize) -> Result<()> {
        for g in &mut self.encoders {
            let all: Vec<usize> = (0..g.layers().len()).collect();
            *g = scale_encoder_gradients(g, &all, heads_per_member)?;
        }
        if let Some(g) = &mut self.trunk {
            let all: Vec<usize> = (0..g.layers().len()).collect();
            *g = scale_encoder_gradients(g, &all, members * heads_per_member)?;
        }
        Ok(())
    }
}

/// Adam state for every component of an [`EnsembleNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptim {
    trunk: Option<OptimState>,
    encoders: Vec<OptimState>,
    heads: Vec<Vec<OptimState>>,
}

impl EnsembleOptim {
    pub fn new(net: &EnsembleNet, config: AdamConfig) -> Self {
        Self {
            trunk: net.trunk.as_ref().map(|t| OptimState::new(t, config)),
            encoders: net.encoders.iter().map(|e| OptimState::new(e, config)).collect(),
            heads: net.heads.iter().map(|hs| hs.iter().map(|h| OptimState::new(h, config)).collect()).collect(),
        }
    }

    /// Step the components of active members (and the trunk when any member
    /// is active). Inactive members keep both parameters and moments.
    /// The whole step is rejected if any gradient is non-finite.
    pub fn step(&mut self, net: &mut EnsembleNet, grad: &EnsembleGrad, active: &[bool]) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::numeric("non-finite gradient, optimizer step rejected"));
        }
        if active.len() != net.members {
            return Err(Error::contract("active mask length must equal ensemble size"));
        }
        if active.iter().any(|&a| a) {
            if let (Some(t), Some(g), Some(s)) = (net.trunk.as_mut(), grad.trunk.as_ref(), self.trunk.as_mut()) {
                optimizer_step(t, g, s)?;
            }
        }
        for i in (0..net.members).filter(|&i| active[i]) {
            optimizer_step(&mut net.encoders[i], &grad.encoders[i], &mut self.encoders[i])?;
            for h in 0..net.heads[i].len() {
                optimizer_step(&mut net.heads[i][h], &grad.heads[i][h], &mut self.heads[i][h])?;
            }
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let states = self.trunk.iter().chain(&self.encoders).chain(self.heads.iter().flatten());
        for s in states {
            h.update(s.step().to_le_bytes());
            for v in s.first_moment().values().chain(s.second_moment().values()) {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}
