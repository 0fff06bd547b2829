//! System model shared by every policy: configuration, per-user state, actions,
//! and the per-slot update laws for AoI, cache waiting time, cost and virtual
//! queues.
//!
//! Event order inside one slot:
//!
//! 1. the policy picks an [`ActionVector`] from the slot-start state;
//! 2. a sampling user resets its cache to a fresh packet (waiting time 0);
//! 3. each acting user transmits and succeeds with probability `p_k`;
//! 4. AoI and waiting times are advanced, stale packets are dropped;
//! 5. virtual queues absorb the new AoI.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("infeasible action: {0}")]
    InfeasibleAction(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidConfig {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Parameters of one scheduling instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub num_users: usize,
    /// Per-user transmission success probability `p_k`.
    pub success_prob: Vec<f64>,
    pub sample_cost: f64,
    pub transmit_cost: f64,
    /// AoI saturation value `M`, shared by all users.
    pub aoi_cap: u32,
    /// Per-user average AoI limit `A_k^max`.
    pub aoi_limit: Vec<f64>,
    pub horizon: u64,
    pub seed: u64,
    /// Cost weight `V` of the drift-plus-penalty scheduler.
    pub v_weight: f64,
    /// At most one transmission per slot across all users.
    pub single_transmitter_mode: bool,
}

pub const DEFAULT_V_WEIGHT: f64 = 800.0;
pub const DEFAULT_HORIZON: u64 = 1_000_000;

impl SystemConfig {
    /// Symmetric instance: every user has the same success probability and limit.
    pub fn symmetric(num_users: usize, success_prob: f64, aoi_limit: f64, aoi_cap: u32) -> Self {
        Self {
            num_users,
            success_prob: vec![success_prob; num_users],
            sample_cost: 1.0,
            transmit_cost: 5.0,
            aoi_cap,
            aoi_limit: vec![aoi_limit; num_users],
            horizon: DEFAULT_HORIZON,
            seed: 1,
            v_weight: DEFAULT_V_WEIGHT,
            single_transmitter_mode: true,
        }
    }

    pub fn with_costs(mut self, sample_cost: f64, transmit_cost: f64) -> Self {
        self.sample_cost = sample_cost;
        self.transmit_cost = transmit_cost;
        self
    }

    pub fn with_horizon(mut self, horizon: u64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_v_weight(mut self, v_weight: f64) -> Self {
        self.v_weight = v_weight;
        self
    }

    pub fn with_single_transmitter(mut self, single: bool) -> Self {
        self.single_transmitter_mode = single;
        self
    }

    pub fn costs(&self) -> Costs {
        Costs {
            sample: self.sample_cost,
            transmit: self.transmit_cost,
        }
    }

    /// Full validation, including `A_k^max >= 1`.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.validate_structure()?;
        for (k, &limit) in self.aoi_limit.iter().enumerate() {
            if limit < 1.0 {
                return Err(invalid(
                    format!("aoi_limit[{k}]"),
                    format!("{limit} < 1 is infeasible: AoI is at least 1"),
                ));
            }
        }
        Ok(())
    }

    /// Everything except the feasibility of the AoI limits, which the
    /// optimizers report per user instead of rejecting up front.
    pub fn validate_structure(&self) -> Result<(), ModelError> {
        if self.num_users == 0 {
            return Err(invalid("num_users", "must be at least 1"));
        }
        if self.success_prob.len() != self.num_users {
            return Err(invalid(
                "success_prob",
                format!("expected {} entries, got {}", self.num_users, self.success_prob.len()),
            ));
        }
        if self.aoi_limit.len() != self.num_users {
            return Err(invalid(
                "aoi_limit",
                format!("expected {} entries, got {}", self.num_users, self.aoi_limit.len()),
            ));
        }
        for (k, &p) in self.success_prob.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("success_prob[{k}]"), format!("{p} not in [0, 1]")));
            }
        }
        for (k, &limit) in self.aoi_limit.iter().enumerate() {
            if !limit.is_finite() {
                return Err(invalid(format!("aoi_limit[{k}]"), "must be finite"));
            }
        }
        if !(self.sample_cost.is_finite() && self.sample_cost >= 0.0) {
            return Err(invalid("sample_cost", "must be a nonnegative real"));
        }
        if !(self.transmit_cost.is_finite() && self.transmit_cost >= 0.0) {
            return Err(invalid("transmit_cost", "must be a nonnegative real"));
        }
        if self.aoi_cap < 2 {
            return Err(invalid("aoi_cap", format!("{} < 2", self.aoi_cap)));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be positive"));
        }
        if !(self.v_weight.is_finite() && self.v_weight >= 0.0) {
            return Err(invalid("v_weight", "must be a nonnegative real"));
        }
        Ok(())
    }
}

/// Sampling and transmission cost pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Costs {
    pub sample: f64,
    pub transmit: f64,
}

impl Costs {
    pub fn new(sample: f64, transmit: f64) -> Self {
        Self { sample, transmit }
    }

    /// Cost of sampling a fresh packet and transmitting it.
    pub fn fresh(&self) -> f64 {
        self.sample + self.transmit
    }
}

/// State of one user at the beginning of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    /// Waiting time `A_k^p` of the cached packet, `None` when the cache is empty.
    pub cache: Option<u32>,
    /// Receiver-side AoI `A_k`.
    pub aoi: u32,
    /// Virtual queue `X_k`.
    pub vqueue: f64,
}

impl Default for UserState {
    fn default() -> Self {
        Self::initial()
    }
}

impl UserState {
    /// AoI 1, empty cache, empty virtual queue.
    pub fn initial() -> Self {
        Self {
            cache: None,
            aoi: 1,
            vqueue: 0.0,
        }
    }

    pub fn cache_occupied(&self) -> bool {
        self.cache.is_some()
    }

    pub fn waiting_time(&self) -> Option<u32> {
        self.cache
    }

    pub fn is_valid(&self, cap: u32) -> bool {
        if self.aoi < 1 || self.aoi > cap || !(self.vqueue >= 0.0) {
            return false;
        }
        match self.cache {
            None => true,
            Some(w) => w < cap && w < self.aoi,
        }
    }

    /// Whether delivering the cached packet would lower the AoI below idling.
    pub fn can_retransmit(&self, cap: u32) -> bool {
        match self.cache {
            Some(w) => w + 1 < idle_aoi(self.aoi, cap),
            None => false,
        }
    }
}

/// AoI after a slot without delivery.
#[inline]
pub fn idle_aoi(aoi: u32, cap: u32) -> u32 {
    (aoi + 1).min(cap)
}

/// Decision of one user in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum UserAction {
    #[default]
    Idle,
    /// Sample a fresh packet and transmit it (`s_k = 1`).
    Sample,
    /// Transmit the cached packet (`mu_k = 1`).
    Retransmit,
}

impl UserAction {
    pub fn is_active(self) -> bool {
        self != UserAction::Idle
    }
}

/// Per-user decisions for one slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionVector(Vec<UserAction>);

impl ActionVector {
    pub fn idle(num_users: usize) -> Self {
        Self(vec![UserAction::Idle; num_users])
    }

    pub fn from_actions(actions: Vec<UserAction>) -> Self {
        Self(actions)
    }

    /// Build from the binary indicator vectors `s` and `mu`.
    pub fn from_indicators(sample: &[bool], retransmit: &[bool]) -> Result<Self, ModelError> {
        if sample.len() != retransmit.len() {
            return Err(ModelError::InfeasibleAction(
                "sample and retransmit vectors differ in length".into(),
            ));
        }
        sample
            .iter()
            .zip(retransmit)
            .enumerate()
            .map(|(k, (&s, &mu))| match (s, mu) {
                (false, false) => Ok(UserAction::Idle),
                (true, false) => Ok(UserAction::Sample),
                (false, true) => Ok(UserAction::Retransmit),
                (true, true) => Err(ModelError::InfeasibleAction(format!(
                    "user {k} both samples and retransmits"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }

    pub fn with(mut self, user: usize, action: UserAction) -> Self {
        self.0[user] = action;
        self
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, user: usize) -> UserAction {
        self.0[user]
    }

    pub fn actions(&self) -> &[UserAction] {
        &self.0
    }

    pub fn sample(&self, user: usize) -> bool {
        self.0[user] == UserAction::Sample
    }

    pub fn retransmit(&self, user: usize) -> bool {
        self.0[user] == UserAction::Retransmit
    }

    pub fn num_samples(&self) -> usize {
        self.0.iter().filter(|&&a| a == UserAction::Sample).count()
    }

    pub fn num_retransmits(&self) -> usize {
        self.0.iter().filter(|&&a| a == UserAction::Retransmit).count()
    }

    pub fn num_active(&self) -> usize {
        self.0.iter().filter(|a| a.is_active()).count()
    }

    pub fn is_idle(&self) -> bool {
        self.num_active() == 0
    }

    /// Checks the per-slot scheduling constraints against the current states.
    pub fn check(&self, states: &[UserState], single_transmitter: bool) -> Result<(), ModelError> {
        if self.0.len() != states.len() {
            return Err(ModelError::InfeasibleAction(format!(
                "{} actions for {} users",
                self.0.len(),
                states.len()
            )));
        }
        if self.num_samples() > 1 {
            return Err(ModelError::InfeasibleAction("more than one sampler".into()));
        }
        if self.num_retransmits() > 1 {
            return Err(ModelError::InfeasibleAction("more than one retransmitter".into()));
        }
        if single_transmitter && self.num_active() > 1 {
            return Err(ModelError::InfeasibleAction(
                "more than one transmission in single-transmitter mode".into(),
            ));
        }
        for (k, (action, state)) in self.0.iter().zip(states).enumerate() {
            if *action == UserAction::Retransmit && !state.cache_occupied() {
                return Err(ModelError::InfeasibleAction(format!(
                    "user {k} retransmits with an empty cache"
                )));
            }
        }
        Ok(())
    }
}

/// Realized outcome of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    /// `d_k(t+1)`.
    pub delivered: Vec<bool>,
    pub realized_cost: f64,
}

/// Next AoI given the waiting time of the packet in flight.
pub fn aoi_step(aoi: u32, waiting_time: u32, delivered: bool, cap: u32) -> u32 {
    if delivered {
        waiting_time + 1
    } else {
        idle_aoi(aoi, cap)
    }
}

/// Sampling at slot start replaces the cache with a fresh packet.
pub fn apply_sampling(state: UserState, action: UserAction) -> UserState {
    match action {
        UserAction::Sample => UserState {
            cache: Some(0),
            ..state
        },
        _ => state,
    }
}

/// Cache after the slot. `cache` is the post-sampling cache, `next_aoi` the
/// already-updated AoI. Delivery empties the cache; otherwise the packet ages
/// by one slot and is dropped once it could no longer lower the AoI (this
/// covers the `M - 1` waiting-time bound).
pub fn waiting_time_step(cache: Option<u32>, delivered: bool, next_aoi: u32, cap: u32) -> Option<u32> {
    if delivered {
        return None;
    }
    let aged = cache? + 1;
    if aged >= cap - 1 || aged + 1 >= next_aoi {
        None
    } else {
        Some(aged)
    }
}

/// Steps 2 to 4 of the slot for a single user.
pub fn advance_user(state: UserState, action: UserAction, delivered: bool, cap: u32) -> UserState {
    let state = apply_sampling(state, action);
    let delivered = delivered && action.is_active();
    let in_flight = match action {
        UserAction::Idle => 0,
        _ => state.cache.expect("acting user holds a packet"),
    };
    let aoi = aoi_step(state.aoi, in_flight, delivered, cap);
    UserState {
        cache: waiting_time_step(state.cache, delivered, aoi, cap),
        aoi,
        vqueue: state.vqueue,
    }
}

/// Per-user cost `mu_k c_tr + s_k (c_s + c_tr)`.
pub fn user_cost(action: UserAction, costs: Costs) -> f64 {
    match action {
        UserAction::Idle => 0.0,
        UserAction::Sample => costs.fresh(),
        UserAction::Retransmit => costs.transmit,
    }
}

pub fn slot_cost(actions: &ActionVector, cfg: &SystemConfig) -> f64 {
    let costs = cfg.costs();
    actions.actions().iter().map(|&a| user_cost(a, costs)).sum()
}

pub fn vqueue_step(x: f64, aoi_next: u32, limit: f64) -> f64 {
    (x - limit).max(0.0) + f64::from(aoi_next)
}

/// Virtual-queue update for all users, applied after the AoI update.
pub fn update_vqueues(states: &mut [UserState], cfg: &SystemConfig) {
    for (state, &limit) in states.iter_mut().zip(&cfg.aoi_limit) {
        state.vqueue = vqueue_step(state.vqueue, state.aoi, limit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn occupied(w: u32, aoi: u32) -> UserState {
        UserState {
            cache: Some(w),
            aoi,
            vqueue: 0.0,
        }
    }

    #[test]
    fn aoi_step_examples() {
        assert_eq!(aoi_step(4, 2, true, 10), 3);
        assert_eq!(aoi_step(10, 0, false, 10), 10);
        assert_eq!(aoi_step(1, 0, true, 10), 1);
    }

    #[test]
    fn waiting_time_examples() {
        assert_eq!(waiting_time_step(Some(3), false, 8, 10), Some(4));
        // reaching M - 1 drops the packet
        assert_eq!(waiting_time_step(Some(8), false, 10, 10), None);
        let fresh = apply_sampling(UserState::initial(), UserAction::Sample);
        assert_eq!(fresh.cache, Some(0));
    }

    #[test]
    fn stale_packet_is_discarded() {
        // sampled at AoI 1, failed: packet would be exactly as old as the delivered one
        let s = advance_user(UserState::initial(), UserAction::Sample, false, 10);
        assert_eq!(s.aoi, 2);
        assert_eq!(s.cache, None);
        let s = advance_user(occupied(1, 2), UserAction::Idle, false, 10);
        assert_eq!((s.cache, s.aoi), (None, 3));
        let s = advance_user(occupied(1, 4), UserAction::Idle, false, 10);
        assert_eq!((s.cache, s.aoi), (Some(2), 5));
    }

    #[test]
    fn delivery_empties_cache() {
        let s = advance_user(occupied(2, 6), UserAction::Retransmit, true, 10);
        assert_eq!((s.cache, s.aoi), (None, 3));
        let s = advance_user(occupied(2, 6), UserAction::Sample, true, 10);
        assert_eq!((s.cache, s.aoi), (None, 1));
        let s = advance_user(occupied(2, 6), UserAction::Retransmit, false, 10);
        assert_eq!((s.cache, s.aoi), (Some(3), 7));
    }

    #[test]
    fn delivery_flag_ignored_when_idle() {
        let s = advance_user(occupied(2, 6), UserAction::Idle, true, 10);
        assert_eq!((s.cache, s.aoi), (Some(3), 7));
    }

    #[test]
    fn slot_cost_examples() {
        let cfg = SystemConfig::symmetric(2, 0.5, 5.0, 10).with_costs(1.0, 5.0);
        let a = ActionVector::from_indicators(&[true, false], &[false, false]).unwrap();
        assert_eq!(slot_cost(&a, &cfg), 6.0);
        assert_eq!(slot_cost(&ActionVector::idle(2), &cfg), 0.0);
        let a = ActionVector::from_indicators(&[false, false], &[true, false]).unwrap();
        assert_eq!(slot_cost(&a, &cfg), 5.0);
    }

    #[test]
    fn vqueue_examples() {
        assert_eq!(vqueue_step(3.0, 4, 5.0), 4.0);
        assert_eq!(vqueue_step(10.0, 2, 5.0), 7.0);
        assert_eq!(vqueue_step(0.0, 1, 1.0), 1.0);
    }

    #[test]
    fn feasibility_rules() {
        let states = [occupied(1, 4), UserState::initial()];
        let both = ActionVector::from_actions(vec![UserAction::Retransmit, UserAction::Sample]);
        assert!(both.check(&states, false).is_ok());
        assert!(both.check(&states, true).is_err());
        let bad = ActionVector::from_actions(vec![UserAction::Idle, UserAction::Retransmit]);
        assert!(bad.check(&states, false).is_err());
        let two = ActionVector::from_actions(vec![UserAction::Sample, UserAction::Sample]);
        assert!(two.check(&states, false).is_err());
        assert!(ActionVector::from_indicators(&[true], &[true]).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = SystemConfig::symmetric(2, 0.8, 5.0, 10);
        assert!(cfg.validate().is_ok());
        let mut bad = cfg.clone();
        bad.aoi_limit[1] = 0.5;
        assert!(bad.validate().is_err());
        assert!(bad.validate_structure().is_ok());
        let mut bad = cfg.clone();
        bad.success_prob[0] = 1.5;
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.aoi_cap = 1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn retransmit_eligibility() {
        assert!(occupied(2, 5).can_retransmit(10));
        assert!(!UserState::initial().can_retransmit(10));
        // saturated AoI: waiting time M-2 still helps
        assert!(occupied(8, 10).can_retransmit(10));
        assert!(!occupied(9, 10).can_retransmit(10));
    }
}
