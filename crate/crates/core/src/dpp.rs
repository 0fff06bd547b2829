//! Drift-plus-penalty scheduler.
//!
//! Every slot the scheduler minimizes
//! `sum_k X_k [(w~_k + 1) W_k + min(A_k + 1, M)(1 - W_k) - A_k^max] + V c(t)`
//! over the feasible action vectors, where `W_k = p_k (s_k + mu_k)` and
//! `w~_k` is 0 for a fresh sample and the cached waiting time for a
//! retransmission.

use rand::RngCore;

use crate::model::{self, idle_aoi, ActionVector, ModelError, SystemConfig, UserAction, UserState};
use crate::sim::{Policy, PolicyRng};

/// Constant `B` of the per-slot drift bound, `sum_k (M^2 + (A_k^max)^2) / 2`.
pub fn drift_bound(cfg: &SystemConfig) -> f64 {
    let m = f64::from(cfg.aoi_cap);
    cfg.aoi_limit.iter().map(|a| (m * m + a * a) / 2.0).sum()
}

/// Objective of one candidate action vector.
pub fn candidate_score(states: &[UserState], action: &ActionVector, cfg: &SystemConfig) -> Result<f64, ModelError> {
    action.check(states, cfg.single_transmitter_mode)?;
    let costs = cfg.costs();
    let mut score = 0.0;
    for (k, s) in states.iter().enumerate() {
        let a = action.get(k);
        let (wait, w) = match a {
            UserAction::Idle => (0.0, 0.0),
            UserAction::Sample => (0.0, cfg.success_prob[k]),
            UserAction::Retransmit => {
                if !s.can_retransmit(cfg.aoi_cap) {
                    return Err(ModelError::InfeasibleAction(format!(
                        "user {k}: cached packet cannot lower the AoI"
                    )));
                }
                (f64::from(s.cache.unwrap()), cfg.success_prob[k])
            }
        };
        let idle = f64::from(idle_aoi(s.aoi, cfg.aoi_cap));
        score += s.vqueue * ((wait + 1.0) * w + idle * (1.0 - w) - cfg.aoi_limit[k]);
        score += cfg.v_weight * model::user_cost(a, costs);
    }
    Ok(score)
}

/// All feasible action vectors in tie-break order: idle, then single
/// actions by user with sampling first, then (in literal mode) sampler and
/// retransmitter pairs ordered by sampler then retransmitter.
pub fn candidates(states: &[UserState], cfg: &SystemConfig) -> Vec<ActionVector> {
    let n = states.len();
    let idle = ActionVector::idle(n);
    let retx = |k: usize| states[k].can_retransmit(cfg.aoi_cap);
    let mut out = vec![idle.clone()];
    for k in 0..n {
        out.push(idle.clone().with(k, UserAction::Sample));
        if retx(k) {
            out.push(idle.clone().with(k, UserAction::Retransmit));
        }
    }
    if !cfg.single_transmitter_mode {
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i && retx(j)) {
                out.push(idle.clone().with(i, UserAction::Sample).with(j, UserAction::Retransmit));
            }
        }
    }
    out
}

/// Score change of user `k` acting instead of idling.
#[inline]
fn delta(s: &UserState, k: usize, action: UserAction, cfg: &SystemConfig) -> Option<f64> {
    let idle = f64::from(idle_aoi(s.aoi, cfg.aoi_cap));
    let (wait, cost) = match action {
        UserAction::Idle => return Some(0.0),
        UserAction::Sample => (0.0, cfg.sample_cost + cfg.transmit_cost),
        UserAction::Retransmit => {
            if !s.can_retransmit(cfg.aoi_cap) {
                return None;
            }
            (f64::from(s.cache?), cfg.transmit_cost)
        }
    };
    Some(s.vqueue * cfg.success_prob[k] * (wait + 1.0 - idle) + cfg.v_weight * cost)
}

/// Minimum-score action vector with deterministic tie-breaking.
///
/// The idle score is common to every candidate, so only the per-user score
/// changes are compared.
pub fn decide(states: &[UserState], cfg: &SystemConfig) -> ActionVector {
    let n = states.len();
    let mut best = 0.0;
    let mut choice: (Option<usize>, Option<usize>) = (None, None);
    for (k, s) in states.iter().enumerate() {
        if let Some(d) = delta(s, k, UserAction::Sample, cfg) {
            if d < best {
                best = d;
                choice = (Some(k), None);
            }
        }
        if let Some(d) = delta(s, k, UserAction::Retransmit, cfg) {
            if d < best {
                best = d;
                choice = (None, Some(k));
            }
        }
    }
    if !cfg.single_transmitter_mode {
        for (i, si) in states.iter().enumerate() {
            let ds = delta(si, i, UserAction::Sample, cfg).unwrap();
            for (j, sj) in states.iter().enumerate() {
                if j == i {
                    continue;
                }
                if let Some(dr) = delta(sj, j, UserAction::Retransmit, cfg) {
                    if ds + dr < best {
                        best = ds + dr;
                        choice = (Some(i), Some(j));
                    }
                }
            }
        }
    }
    let mut out = ActionVector::idle(n);
    if let Some(i) = choice.0 {
        out = out.with(i, UserAction::Sample);
    }
    if let Some(j) = choice.1 {
        out = out.with(j, UserAction::Retransmit);
    }
    out
}

/// Virtual-queue update after the AoI update.
pub fn update(states: &mut [UserState], cfg: &SystemConfig) {
    model::update_vqueues(states, cfg);
}

/// Simulator driver. Virtual queues live in the simulator state, so the
/// policy itself is stateless.
#[derive(Debug, Clone, Copy, Default)]
pub struct DppPolicy;

impl Policy for DppPolicy {
    fn name(&self) -> String {
        "dpp".into()
    }

    fn decide(&mut self, states: &[UserState], cfg: &SystemConfig, _rng: &mut PolicyRng) -> ActionVector {
        decide(states, cfg)
    }
}

/// Random feasible action, used as a sanity baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformRandomPolicy;

impl Policy for UniformRandomPolicy {
    fn name(&self) -> String {
        "uniform-random".into()
    }

    fn decide(&mut self, states: &[UserState], cfg: &SystemConfig, rng: &mut PolicyRng) -> ActionVector {
        let c = candidates(states, cfg);
        let i = (rng.next_u64() % c.len() as u64) as usize;
        c[i].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn example() -> (Vec<UserState>, SystemConfig) {
        let cfg = SystemConfig::symmetric(1, 1.0, 5.0, 10).with_v_weight(1.0);
        let states = vec![UserState {
            cache: Some(1),
            aoi: 5,
            vqueue: 10.0,
        }];
        (states, cfg)
    }

    #[test]
    fn score_examples() {
        let (s, cfg) = example();
        let idle = ActionVector::idle(1);
        assert_abs_diff_eq!(candidate_score(&s, &idle, &cfg).unwrap(), 10.0);
        let sample = idle.clone().with(0, UserAction::Sample);
        assert_abs_diff_eq!(candidate_score(&s, &sample, &cfg).unwrap(), -34.0);
        let retx = idle.with(0, UserAction::Retransmit);
        assert_abs_diff_eq!(candidate_score(&s, &retx, &cfg).unwrap(), -25.0);
        assert_eq!(decide(&s, &cfg), sample);
    }

    #[test]
    fn infeasible_candidate_rejected() {
        let (mut s, cfg) = example();
        s[0].cache = None;
        let retx = ActionVector::idle(1).with(0, UserAction::Retransmit);
        assert!(candidate_score(&s, &retx, &cfg).is_err());
        let two = SystemConfig::symmetric(2, 1.0, 5.0, 10);
        let both = ActionVector::idle(2).with(0, UserAction::Sample).with(1, UserAction::Sample);
        assert!(candidate_score(&[UserState::initial(); 2], &both, &two).is_err());
    }

    #[test]
    fn empty_queues_idle() {
        let cfg = SystemConfig::symmetric(3, 0.8, 5.0, 10);
        let states = vec![
            UserState { cache: Some(2), aoi: 7, vqueue: 0.0 },
            UserState { cache: None, aoi: 10, vqueue: 0.0 },
            UserState::initial(),
        ];
        assert!(decide(&states, &cfg).is_idle());
    }

    #[test]
    fn symmetric_tie_goes_to_first_user() {
        let cfg = SystemConfig::symmetric(2, 0.8, 5.0, 10);
        let s = UserState { cache: None, aoi: 8, vqueue: 2000.0 };
        let a = decide(&[s, s], &cfg);
        assert_eq!(a, ActionVector::idle(2).with(0, UserAction::Sample));
    }

    #[test]
    fn candidate_counts() {
        let occupied = UserState { cache: Some(1), aoi: 6, vqueue: 1.0 };
        let cfg = SystemConfig::symmetric(3, 0.8, 5.0, 10);
        assert_eq!(candidates(&[occupied; 3], &cfg).len(), 7);
        let literal = cfg.with_single_transmitter(false);
        assert_eq!(candidates(&[occupied; 3], &literal).len(), 7 + 6);
    }

    #[test]
    fn literal_mode_can_pair() {
        let cfg = SystemConfig::symmetric(2, 1.0, 2.0, 10)
            .with_v_weight(0.0)
            .with_single_transmitter(false);
        let states = vec![
            UserState { cache: None, aoi: 9, vqueue: 100.0 },
            UserState { cache: Some(1), aoi: 9, vqueue: 100.0 },
        ];
        let a = decide(&states, &cfg);
        assert_eq!(a.get(0), UserAction::Sample);
        assert_eq!(a.get(1), UserAction::Retransmit);
    }

    #[test]
    fn drift_constant() {
        let cfg = SystemConfig::symmetric(2, 0.8, 4.0, 10);
        assert_abs_diff_eq!(drift_bound(&cfg), 116.0);
    }
}
