//! Seeded slot-by-slot simulator.
//!
//! Channel draws come from one ChaCha stream per user and are consumed every
//! slot whether or not the user transmits, so two policies run with the same
//! seed face the same channel realization. Policy randomness has its own
//! stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{self, ActionVector, ModelError, SlotOutcome, SystemConfig, UserAction, UserState};

pub type PolicyRng = ChaCha8Rng;

const POLICY_STREAM: u64 = 0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ModelError),
    #[error("slot {slot}: policy {policy} returned an infeasible action: {reason}")]
    InfeasibleAction { slot: u64, policy: String, reason: String },
    #[error("burn-in {burn_in} leaves no slots of a {horizon}-slot horizon")]
    BurnIn { burn_in: u64, horizon: u64 },
    #[error("replica count must be at least 1")]
    NoReplicas,
}

/// A scheduling policy driven by the simulator.
pub trait Policy {
    fn name(&self) -> String;

    /// Decision at the beginning of a slot from the full slot-start state.
    fn decide(&mut self, states: &[UserState], cfg: &SystemConfig, rng: &mut PolicyRng) -> ActionVector;

    /// Called once per slot after all state updates.
    fn observe(&mut self, _states: &[UserState], _outcome: &SlotOutcome) {}
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn decide(&mut self, states: &[UserState], cfg: &SystemConfig, rng: &mut PolicyRng) -> ActionVector {
        (**self).decide(states, cfg, rng)
    }

    fn observe(&mut self, states: &[UserState], outcome: &SlotOutcome) {
        (**self).observe(states, outcome)
    }
}

/// Never transmits.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdlePolicy;

impl Policy for IdlePolicy {
    fn name(&self) -> String {
        "idle".into()
    }

    fn decide(&mut self, states: &[UserState], _: &SystemConfig, _: &mut PolicyRng) -> ActionVector {
        ActionVector::idle(states.len())
    }
}

/// Samples a fresh packet every slot, visiting users in round-robin order.
#[derive(Debug, Clone, Copy, Default)]
pub struct RoundRobinSampling {
    next: usize,
}

impl Policy for RoundRobinSampling {
    fn name(&self) -> String {
        "round-robin-sample".into()
    }

    fn decide(&mut self, states: &[UserState], _: &SystemConfig, _: &mut PolicyRng) -> ActionVector {
        let k = self.next % states.len();
        self.next = k + 1;
        ActionVector::idle(states.len()).with(k, UserAction::Sample)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Leading slots excluded from the statistics.
    pub burn_in: u64,
    /// Number of evenly spaced `X_k(t)/t` samples recorded.
    pub trace_points: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            burn_in: 0,
            trace_points: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VqueueSample {
    pub slot: u64,
    /// `X_k(t) / t` per user.
    pub rate: Vec<f64>,
}

/// Time-average statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStats {
    pub policy: String,
    pub seed: u64,
    /// Slots counted in the statistics.
    pub slots: u64,
    pub avg_cost: f64,
    pub avg_aoi: Vec<f64>,
    /// Post-update AoI counts, `aoi_histogram[k][a - 1]` for `a` in `1..=M`.
    pub aoi_histogram: Vec<Vec<u64>>,
    pub sample_freq: Vec<f64>,
    pub retransmit_freq: Vec<f64>,
    /// Fraction of slots that end with an empty cache.
    pub empty_cache_freq: Vec<f64>,
    pub attempts: Vec<u64>,
    pub deliveries: Vec<u64>,
    /// Time average of `X_k(t)`.
    pub vqueue_mean: Vec<f64>,
    /// `X_k(T)` at the horizon.
    pub vqueue_final: Vec<f64>,
    pub vqueue_trace: Vec<VqueueSample>,
    cap: u32,
    /// Joint (cache, AoI) counts, row `w + 1` for waiting time `w`, row 0 empty.
    state_counts: Vec<Vec<u64>>,
}

impl SimStats {
    pub fn num_users(&self) -> usize {
        self.avg_aoi.len()
    }

    /// `X_k(T) / T`.
    pub fn vqueue_rate(&self, user: usize) -> f64 {
        self.vqueue_final[user] / self.slots as f64
    }

    /// Empirical frequency of ending a slot in the given (cache, AoI) state.
    pub fn state_frequency(&self, user: usize, cache: Option<u32>, aoi: u32) -> f64 {
        let row = cache.map_or(0, |w| w as usize + 1);
        if aoi == 0 || aoi > self.cap || row > self.cap as usize {
            return 0.0;
        }
        self.state_counts[user][row * self.cap as usize + aoi as usize - 1] as f64 / self.slots as f64
    }

    /// Normalized AoI distribution of one user.
    pub fn aoi_distribution(&self, user: usize) -> Vec<f64> {
        self.aoi_histogram[user]
            .iter()
            .map(|&c| c as f64 / self.slots as f64)
            .collect()
    }

    /// Empirical success rate over the slots in which the user transmitted.
    pub fn delivery_rate(&self, user: usize) -> Option<f64> {
        (self.attempts[user] > 0).then(|| self.deliveries[user] as f64 / self.attempts[user] as f64)
    }
}

fn channel_rngs(seed: u64, num_users: usize) -> Vec<ChaCha8Rng> {
    (0..num_users)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            rng
        })
        .collect()
}

pub fn policy_rng(seed: u64) -> PolicyRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(POLICY_STREAM);
    rng
}

/// Runs `cfg.horizon` slots of `policy` from the initial state.
pub fn run<P: Policy + ?Sized>(policy: &mut P, cfg: &SystemConfig, opts: &SimOptions) -> Result<SimStats, SimError> {
    cfg.validate()?;
    if opts.burn_in >= cfg.horizon {
        return Err(SimError::BurnIn {
            burn_in: opts.burn_in,
            horizon: cfg.horizon,
        });
    }
    let k_users = cfg.num_users;
    let cap = cfg.aoi_cap;
    let m = cap as usize;
    let mut channels = channel_rngs(cfg.seed, k_users);
    let mut prng = policy_rng(cfg.seed);
    let mut states = vec![UserState::initial(); k_users];

    let mut cost_sum = 0.0;
    let mut aoi_sum = vec![0u64; k_users];
    let mut hist = vec![vec![0u64; m]; k_users];
    let mut state_counts = vec![vec![0u64; m * (m + 1)]; k_users];
    let mut samples = vec![0u64; k_users];
    let mut retransmits = vec![0u64; k_users];
    let mut empty = vec![0u64; k_users];
    let mut attempts = vec![0u64; k_users];
    let mut deliveries = vec![0u64; k_users];
    let mut vq_sum = vec![0.0; k_users];
    let mut trace = Vec::new();
    let trace_every = if opts.trace_points == 0 {
        u64::MAX
    } else {
        (cfg.horizon / opts.trace_points as u64).max(1)
    };
    let mut delivered = vec![false; k_users];

    for t in 0..cfg.horizon {
        let actions = policy.decide(&states, cfg, &mut prng);
        if let Err(e) = actions.check(&states, cfg.single_transmitter_mode) {
            return Err(SimError::InfeasibleAction {
                slot: t,
                policy: policy.name(),
                reason: e.to_string(),
            });
        }
        let counted = t >= opts.burn_in;
        for k in 0..k_users {
            let draw: f64 = channels[k].random();
            let action = actions.get(k);
            let success = action.is_active() && draw < cfg.success_prob[k];
            delivered[k] = success;
            states[k] = model::advance_user(states[k], action, success, cap);
            if counted {
                match action {
                    UserAction::Sample => samples[k] += 1,
                    UserAction::Retransmit => retransmits[k] += 1,
                    UserAction::Idle => {}
                }
                if action.is_active() {
                    attempts[k] += 1;
                    deliveries[k] += u64::from(success);
                }
            }
        }
        model::update_vqueues(&mut states, cfg);
        let cost = model::slot_cost(&actions, cfg);
        if counted {
            cost_sum += cost;
            for (k, s) in states.iter().enumerate() {
                aoi_sum[k] += u64::from(s.aoi);
                hist[k][s.aoi as usize - 1] += 1;
                let row = s.cache.map_or(0, |w| w as usize + 1);
                state_counts[k][row * m + s.aoi as usize - 1] += 1;
                empty[k] += u64::from(s.cache.is_none());
                vq_sum[k] += s.vqueue;
            }
        }
        let outcome = SlotOutcome {
            delivered: delivered.clone(),
            realized_cost: cost,
        };
        policy.observe(&states, &outcome);
        let slot = t + 1;
        if slot % trace_every == 0 {
            trace.push(VqueueSample {
                slot,
                rate: states.iter().map(|s| s.vqueue / slot as f64).collect(),
            });
        }
    }

    let n = (cfg.horizon - opts.burn_in) as f64;
    let per = |v: &[u64]| v.iter().map(|&c| c as f64 / n).collect::<Vec<_>>();
    Ok(SimStats {
        policy: policy.name(),
        seed: cfg.seed,
        slots: cfg.horizon - opts.burn_in,
        avg_cost: cost_sum / n,
        avg_aoi: per(&aoi_sum),
        aoi_histogram: hist,
        sample_freq: per(&samples),
        retransmit_freq: per(&retransmits),
        empty_cache_freq: per(&empty),
        attempts,
        deliveries,
        vqueue_mean: vq_sum.iter().map(|v| v / n).collect(),
        vqueue_final: states.iter().map(|s| s.vqueue).collect(),
        vqueue_trace: trace,
        cap,
        state_counts,
    })
}

/// Seed of replica `index`; replica 0 keeps the base seed.
pub fn replica_seed(base: u64, index: usize) -> u64 {
    if index == 0 {
        return base;
    }
    // SplitMix64 finalizer
    let mut z = base.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean, sample standard deviation and standard error over replicas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stdev: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stdev = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            stdev,
            stderr: stdev / n.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaSummary {
    pub avg_cost: Estimate,
    pub avg_aoi: Vec<Estimate>,
    pub empty_cache_freq: Vec<Estimate>,
    pub sample_freq: Vec<Estimate>,
    pub retransmit_freq: Vec<Estimate>,
    pub vqueue_mean: Vec<Estimate>,
    pub vqueue_rate: Vec<Estimate>,
}

impl ReplicaSummary {
    pub fn from_runs(runs: &[SimStats]) -> Self {
        let users = runs[0].num_users();
        let per_user = |f: &dyn Fn(&SimStats, usize) -> f64| -> Vec<Estimate> {
            (0..users)
                .map(|k| Estimate::from_samples(&runs.iter().map(|r| f(r, k)).collect::<Vec<_>>()))
                .collect()
        };
        Self {
            avg_cost: Estimate::from_samples(&runs.iter().map(|r| r.avg_cost).collect::<Vec<_>>()),
            avg_aoi: per_user(&|r, k| r.avg_aoi[k]),
            empty_cache_freq: per_user(&|r, k| r.empty_cache_freq[k]),
            sample_freq: per_user(&|r, k| r.sample_freq[k]),
            retransmit_freq: per_user(&|r, k| r.retransmit_freq[k]),
            vqueue_mean: per_user(&|r, k| r.vqueue_mean[k]),
            vqueue_rate: per_user(&|r, k| r.vqueue_rate(k)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replicas {
    pub runs: Vec<SimStats>,
    pub summary: ReplicaSummary,
}

impl Replicas {
    /// Seed-averaged AoI distribution of one user.
    pub fn aoi_distribution(&self, user: usize) -> Vec<f64> {
        let m = self.runs[0].aoi_histogram[user].len();
        let mut out = vec![0.0; m];
        for r in &self.runs {
            for (o, v) in out.iter_mut().zip(r.aoi_distribution(user)) {
                *o += v / self.runs.len() as f64;
            }
        }
        out
    }
}

/// Independent replicas with derived seeds, run on the rayon pool and
/// returned in seed order.
pub fn run_replicas<P, F>(make_policy: F, cfg: &SystemConfig, n_seeds: usize, opts: &SimOptions) -> Result<Replicas, SimError>
where
    P: Policy,
    F: Fn() -> P + Sync,
{
    if n_seeds == 0 {
        return Err(SimError::NoReplicas);
    }
    let runs = (0..n_seeds)
        .into_par_iter()
        .map(|i| {
            let cfg = cfg.clone().with_seed(replica_seed(cfg.seed, i));
            run(&mut make_policy(), &cfg, opts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let summary = ReplicaSummary::from_runs(&runs);
    Ok(Replicas { runs, summary })
}
