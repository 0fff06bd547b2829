//! Fresh-or-old randomized policy.
//!
//! The scheduler picks user `k` with probability `alpha_k`. A scheduled user
//! holding a packet samples fresh with probability `u_k`, retransmits the
//! cached packet with probability `q_k`, and otherwise stays silent; with an
//! empty cache it samples with probability `u'_k`.
//!
//! Each user is analyzed as a Markov chain over slot-start states. Cache
//! emptiness is an explicit flag: [`OfrpState::Empty`] carries only the AoI,
//! [`OfrpState::Occupied`] carries the waiting time `i` and AoI `j` with
//! `1 <= i <= M - 2` and `i + 2 <= j <= M`. Occupied states with `j = i + 1`
//! never occur because such a packet could not lower the AoI and is
//! discarded. Transition targets are produced by the same update law the
//! simulator uses ([`model::advance_user`]).

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chain::ChainModel;
use crate::forp::pick_user;
use crate::grid::{OptimizeError, ProbabilityGrid, COST_TIE_TOL, FEASIBILITY_TOL};
use crate::model::{self, ActionVector, Costs, SystemConfig, UserAction, UserState};
use crate::sim::{Policy, PolicyRng};
use crate::solver::{self, Method, MatrixBuilder, SolveError, SolveOptions, StochasticMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate chain: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Decision probabilities of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OfrpUserParams {
    pub alpha: f64,
    pub u: f64,
    pub q: f64,
    pub u_prime: f64,
}

impl OfrpUserParams {
    pub fn new(alpha: f64, u: f64, q: f64, u_prime: f64) -> Self {
        Self { alpha, u, q, u_prime }
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        for (name, v) in [("alpha", self.alpha), ("u", self.u), ("q", self.q), ("u_prime", self.u_prime)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ChainError::InvalidParams(format!("{name} = {v} not in [0, 1]")));
            }
        }
        if self.u + self.q > 1.0 + 1e-12 {
            return Err(ChainError::InvalidParams(format!(
                "u + q = {} exceeds 1",
                self.u + self.q
            )));
        }
        Ok(())
    }

    /// Per-slot probability of sampling, retransmitting and idling with an
    /// occupied cache.
    fn occupied_split(&self) -> (f64, f64, f64) {
        let s = self.alpha * self.u;
        let r = self.alpha * self.q;
        (s, r, (1.0 - s - r).max(0.0))
    }
}

/// Decision probabilities of all users.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OfrpParams {
    pub alpha: Vec<f64>,
    pub u: Vec<f64>,
    pub q: Vec<f64>,
    pub u_prime: Vec<f64>,
}

impl OfrpParams {
    pub fn from_users(users: &[OfrpUserParams]) -> Self {
        Self {
            alpha: users.iter().map(|p| p.alpha).collect(),
            u: users.iter().map(|p| p.u).collect(),
            q: users.iter().map(|p| p.q).collect(),
            u_prime: users.iter().map(|p| p.u_prime).collect(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.alpha.len()
    }

    pub fn user(&self, k: usize) -> OfrpUserParams {
        OfrpUserParams::new(self.alpha[k], self.u[k], self.q[k], self.u_prime[k])
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        let n = self.alpha.len();
        if self.u.len() != n || self.q.len() != n || self.u_prime.len() != n {
            return Err(ChainError::InvalidParams("parameter vectors differ in length".into()));
        }
        for k in 0..n {
            self.user(k).validate()?;
        }
        let total: f64 = self.alpha.iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(ChainError::InvalidParams(format!(
                "scheduling probabilities sum to {total} > 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum OfrpState {
    Empty { aoi: u32 },
    Occupied { wait: u32, aoi: u32 },
}

impl OfrpState {
    pub fn aoi(&self) -> u32 {
        match *self {
            OfrpState::Empty { aoi } | OfrpState::Occupied { aoi, .. } => aoi,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, OfrpState::Empty { .. })
    }

    pub fn cache(&self) -> Option<u32> {
        match *self {
            OfrpState::Empty { .. } => None,
            OfrpState::Occupied { wait, .. } => Some(wait),
        }
    }

    fn from_user(state: &UserState) -> Self {
        match state.cache {
            None => OfrpState::Empty { aoi: state.aoi },
            Some(wait) => OfrpState::Occupied { wait, aoi: state.aoi },
        }
    }

    fn to_user(self) -> UserState {
        UserState {
            cache: self.cache(),
            aoi: self.aoi(),
            vqueue: 0.0,
        }
    }
}

/// Number of chain states for cap `M`: `M` empty plus `(M-2)(M-1)/2` occupied.
pub fn num_states(cap: u32) -> usize {
    let m = cap as usize;
    m + (m - 2) * (m - 1) / 2
}

/// Position of a state in the chain. Empty states come first with
/// `(empty, 1)` at index 0, then occupied states by waiting time, so that
/// state reduction eliminates long-waiting packets first.
pub fn state_index(state: OfrpState, cap: u32) -> usize {
    let m = cap as usize;
    match state {
        OfrpState::Empty { aoi } => aoi as usize - 1,
        OfrpState::Occupied { wait, aoi } => {
            let i = wait as usize;
            let before: usize = (i - 1) * (m - 1) - (i - 1) * i / 2;
            m + before + (aoi as usize - i - 2)
        }
    }
}

pub fn states(cap: u32) -> Vec<OfrpState> {
    let mut out: Vec<OfrpState> = (1..=cap).map(|aoi| OfrpState::Empty { aoi }).collect();
    for wait in 1..=cap.saturating_sub(2) {
        for aoi in wait + 2..=cap {
            out.push(OfrpState::Occupied { wait, aoi });
        }
    }
    out
}

/// Outgoing transitions of one state; targets may repeat.
pub fn transitions(state: OfrpState, params: &OfrpUserParams, success_prob: f64, cap: u32) -> Vec<(OfrpState, f64)> {
    let user = state.to_user();
    let p = success_prob;
    let step = |action, delivered| OfrpState::from_user(&model::advance_user(user, action, delivered, cap));
    let mut out = Vec::with_capacity(5);
    match state {
        OfrpState::Empty { .. } => {
            let s = params.alpha * params.u_prime;
            out.push((step(UserAction::Sample, true), s * p));
            out.push((step(UserAction::Sample, false), s * (1.0 - p)));
            out.push((step(UserAction::Idle, false), 1.0 - s));
        }
        OfrpState::Occupied { .. } => {
            let (s, r, idle) = params.occupied_split();
            out.push((step(UserAction::Sample, true), s * p));
            out.push((step(UserAction::Sample, false), s * (1.0 - p)));
            out.push((step(UserAction::Retransmit, true), r * p));
            out.push((step(UserAction::Retransmit, false), r * (1.0 - p)));
            out.push((step(UserAction::Idle, false), idle));
        }
    }
    out.retain(|&(_, prob)| prob > 0.0);
    out
}

fn build_matrix(params: &OfrpUserParams, success_prob: f64, cap: u32) -> Result<StochasticMatrix, ChainError> {
    let all = states(cap);
    let mut b = MatrixBuilder::new(all.len());
    for (i, &s) in all.iter().enumerate() {
        for (target, prob) in transitions(s, params, success_prob, cap) {
            b.add(i, state_index(target, cap), prob);
        }
    }
    Ok(b.build()?)
}

/// Builds the chain of one user.
pub fn build_chain(params: &OfrpUserParams, success_prob: f64, cap: u32) -> Result<ChainModel<OfrpState>, ChainError> {
    params.validate()?;
    if !(0.0..=1.0).contains(&success_prob) {
        return Err(ChainError::InvalidParams(format!("success probability {success_prob}")));
    }
    if cap < 2 {
        return Err(ChainError::InvalidParams(format!("cap {cap} < 2")));
    }
    Ok(ChainModel::new(states(cap), build_matrix(params, success_prob, cap)?))
}

/// Solves the chain. Requires `alpha u' p > 0`, which makes `(empty, 1)`
/// reachable from every state.
pub fn stationary(
    chain: &mut ChainModel<OfrpState>,
    params: &OfrpUserParams,
    success_prob: f64,
) -> Result<Vec<f64>, ChainError> {
    if !(params.alpha * params.u_prime * success_prob > 0.0) {
        return Err(ChainError::Degenerate(format!(
            "alpha * u' * p = {} * {} * {} = 0: fresh deliveries from an empty cache never happen, AoI 1 is unreachable",
            params.alpha, params.u_prime, success_prob
        )));
    }
    Ok(chain.solve(&SolveOptions::default())?.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OfrpMetrics {
    pub avg_aoi: f64,
    /// Stationary probability of an empty cache.
    pub theta: f64,
    pub avg_cost: f64,
}

/// Per-user average cost from the empty-cache probability.
pub fn avg_cost(theta: f64, params: &OfrpUserParams, costs: Costs) -> f64 {
    theta * params.alpha * params.u_prime * costs.fresh()
        + (1.0 - theta) * params.alpha * (params.q * costs.transmit + params.u * costs.fresh())
}

/// Metrics of a solved chain.
pub fn metrics(chain: &ChainModel<OfrpState>, params: &OfrpUserParams, costs: Costs) -> Option<OfrpMetrics> {
    let avg_aoi = chain.expect(|s| f64::from(s.aoi()))?;
    let theta = chain.expect(|s| if s.is_empty() { 1.0 } else { 0.0 })?;
    Some(OfrpMetrics {
        avg_aoi,
        theta,
        avg_cost: avg_cost(theta, params, costs),
    })
}

/// Stationary AoI marginal over `1..=M`.
pub fn aoi_distribution(chain: &ChainModel<OfrpState>, cap: u32) -> Option<Vec<f64>> {
    let pi = chain.pi()?;
    let mut out = vec![0.0; cap as usize];
    for (s, &w) in chain.states().iter().zip(pi) {
        out[s.aoi() as usize - 1] += w;
    }
    Some(out)
}

/// Affine function `x * E_1 + y * F` of the two free masses.
#[derive(Debug, Clone, Copy, Default)]
struct Lin {
    x: f64,
    y: f64,
}

impl Lin {
    fn scale(self, c: f64) -> Lin {
        Lin { x: self.x * c, y: self.y * c }
    }

    fn add(self, o: Lin) -> Lin {
        Lin { x: self.x + o.x, y: self.y + o.y }
    }

    fn at(self, x: f64, y: f64) -> f64 {
        self.x * x + self.y * y
    }
}

/// `(avg_aoi, theta)` in `O(M)` by exploiting the chain structure.
///
/// A cached packet drifts one waiting-time step per slot with probability
/// `d = 1 - alpha u - alpha q p` until it is replaced, delivered, or dropped
/// at waiting time `M - 2`. So with `E_1 = x` and total inflow `F = y` into
/// waiting time 1, the mass at waiting time `i` is `y d^(i-1)`, and the
/// empty-cache and per-AoI occupied masses follow by a forward recursion
/// over the AoI that is affine in `(x, y)`. Flow conservation into waiting
/// time 1 and normalization then fix `x` and `y`.
///
/// Returns `None` when the structure does not apply (`M < 3`, `p = 0`,
/// `alpha u' = 0`) or the final 2x2 system is ill conditioned.
fn aggregate_metrics(params: &OfrpUserParams, p: f64, cap: u32) -> Option<(f64, f64)> {
    let s = params.alpha * params.u_prime;
    if cap < 3 || !(p > 0.0) || !(s > 0.0) {
        return None;
    }
    let m = cap as usize;
    let a = params.alpha * params.u;
    let rp = params.alpha * params.q * p;
    let d = (1.0 - a - rp).max(0.0);
    let e = 1.0 - s;
    let fail = 1.0 - p;

    let e1 = Lin { x: 1.0, y: 0.0 };
    let e2 = Lin { x: 1.0 - s * p, y: rp };
    let mut empty = e1.add(e2);
    let mut empty_aoi = e1.add(e2.scale(2.0));
    let mut occ = Lin::default();
    let mut occ_aoi = Lin::default();
    let mut inflow = Lin::default();
    let (mut prev_e, mut prev_g) = (e2, Lin::default());
    let mut dpow = 1.0;
    for j in 3..m {
        let f = prev_g.scale(a).add(prev_e.scale(s)).scale(fail);
        let g = prev_g.scale(d).add(f);
        dpow *= d;
        let ej = prev_e.scale(e).add(Lin { x: 0.0, y: rp * dpow });
        let jf = j as f64;
        empty = empty.add(ej);
        empty_aoi = empty_aoi.add(ej.scale(jf));
        occ = occ.add(g);
        occ_aoi = occ_aoi.add(g.scale(jf));
        inflow = inflow.add(f);
        prev_e = ej;
        prev_g = g;
    }
    // sum of d^t for waiting times 1..=M-2, and d^(M-2) for the drop
    let mut geo = 0.0;
    let mut dt = 1.0;
    for _ in 0..m - 2 {
        geo += dt;
        dt *= d;
    }
    let drop = dt;
    let occ_total = Lin { x: 0.0, y: geo };
    let e_cap = prev_e.scale(e).add(Lin { x: 0.0, y: drop }).scale(1.0 / s);
    let g_cap = occ_total.add(occ.scale(-1.0));
    let f_cap = prev_g.add(g_cap).scale(a).add(prev_e.add(e_cap).scale(s)).scale(fail);
    let mf = m as f64;
    // y - total inflow = 0 and total mass = 1
    let flow = Lin { x: 0.0, y: 1.0 }.add(inflow.add(f_cap).scale(-1.0));
    let mass = empty.add(e_cap).add(occ_total);
    let det = flow.x * mass.y - flow.y * mass.x;
    if !(det.abs() > 1e-13) {
        return None;
    }
    let x = -flow.y / det;
    let y = flow.x / det;
    let theta = empty.add(e_cap).at(x, y);
    let aoi = empty_aoi.add(e_cap.scale(mf)).add(occ_aoi).add(g_cap.scale(mf)).at(x, y);
    let ok = x.is_finite() && y.is_finite() && x >= -1e-12 && y >= -1e-12 && (-1e-9..=1.0 + 1e-9).contains(&theta);
    ok.then_some((aoi, theta.clamp(0.0, 1.0)))
}

/// `(avg_aoi, theta)` for one parameter point, including degenerate points.
///
/// With `alpha u' = 0` an empty cache is never refilled and the AoI settles
/// at the cap. Otherwise the chain is solved by state reduction when
/// `(empty, 1)` is recurrent (`p > 0`) and by the dense solver when not.
pub fn evaluate_user(params: &OfrpUserParams, success_prob: f64, cap: u32) -> Result<(f64, f64), ChainError> {
    params.validate()?;
    if params.alpha * params.u_prime == 0.0 {
        return Ok((f64::from(cap), 1.0));
    }
    if let Some(out) = aggregate_metrics(params, success_prob, cap) {
        return Ok(out);
    }
    let matrix = build_matrix(params, success_prob, cap)?;
    let pi = if success_prob > 0.0 {
        match solver::state_reduction(&matrix) {
            Ok(pi) => pi,
            Err(_) => solver::solve_stationary(&matrix, &SolveOptions::default())?.0,
        }
    } else {
        solver::solve_stationary(&matrix, &SolveOptions::default().with_method(Method::Direct))?.0
    };
    let all = states(cap);
    let avg_aoi = all.iter().zip(&pi).map(|(s, w)| w * f64::from(s.aoi())).sum();
    let theta = all.iter().zip(&pi).filter(|(s, _)| s.is_empty()).map(|(_, w)| w).sum();
    Ok((avg_aoi, theta))
}

/// Full metrics for one user's parameters.
pub fn evaluate(params: &OfrpUserParams, success_prob: f64, cap: u32, costs: Costs) -> Result<OfrpMetrics, ChainError> {
    let (avg_aoi, theta) = evaluate_user(params, success_prob, cap)?;
    Ok(OfrpMetrics {
        avg_aoi,
        theta,
        avg_cost: avg_cost(theta, params, costs),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OfrpGridPoint {
    pub u: f64,
    pub q: f64,
    pub u_prime: f64,
    pub avg_aoi: f64,
    pub theta: f64,
}

impl OfrpGridPoint {
    pub fn params(&self, alpha: f64) -> OfrpUserParams {
        OfrpUserParams::new(alpha, self.u, self.q, self.u_prime)
    }
}

/// Cost-independent analysis of the whole `(u, q, u')` grid for one
/// `(alpha, p, M)`, in lexicographic order.
#[derive(Debug, Clone)]
pub struct OfrpGrid {
    pub alpha: f64,
    pub success_prob: f64,
    pub cap: u32,
    pub grid: ProbabilityGrid,
    pub points: Vec<OfrpGridPoint>,
}

impl OfrpGrid {
    pub fn evaluate(alpha: f64, success_prob: f64, cap: u32, grid: ProbabilityGrid) -> Result<Self, ChainError> {
        let n = grid.last();
        let pairs: Vec<(usize, usize)> = (0..=n).flat_map(|a| (0..=n - a).map(move |b| (a, b))).collect();
        let rows = pairs
            .par_iter()
            .map(|&(a, b)| {
                (0..=n)
                    .map(|c| {
                        let params = OfrpUserParams::new(alpha, grid.value(a), grid.value(b), grid.value(c));
                        evaluate_user(&params, success_prob, cap).map(|(avg_aoi, theta)| OfrpGridPoint {
                            u: params.u,
                            q: params.q,
                            u_prime: params.u_prime,
                            avg_aoi,
                            theta,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            alpha,
            success_prob,
            cap,
            grid,
            points: rows.into_iter().flatten().collect(),
        })
    }

    /// Cheapest point meeting `limit`; ties go to the lexicographically
    /// smallest `(u, q, u')`.
    pub fn best(&self, limit: f64, costs: Costs) -> Option<(OfrpGridPoint, f64)> {
        let mut best: Option<(OfrpGridPoint, f64)> = None;
        for pt in &self.points {
            if pt.avg_aoi > limit + FEASIBILITY_TOL {
                continue;
            }
            let cost = avg_cost(pt.theta, &pt.params(self.alpha), costs);
            if best.is_none_or(|(_, c)| cost < c - COST_TIE_TOL) {
                best = Some((*pt, cost));
            }
        }
        best
    }

    pub fn min_aoi(&self) -> f64 {
        self.points.iter().map(|p| p.avg_aoi).fold(f64::INFINITY, f64::min)
    }
}

/// Memoizes grids by `(alpha, p, M, step)` so sweeps over costs or limits
/// solve each chain once.
#[derive(Debug, Default)]
pub struct OfrpGridCache {
    grids: HashMap<(u64, u64, u32, u64), Arc<OfrpGrid>>,
}

impl OfrpGridCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, alpha: f64, success_prob: f64, cap: u32, grid: ProbabilityGrid) -> Result<Arc<OfrpGrid>, ChainError> {
        let key = (alpha.to_bits(), success_prob.to_bits(), cap, grid.step().to_bits());
        if let Some(g) = self.grids.get(&key) {
            return Ok(g.clone());
        }
        let g = Arc::new(OfrpGrid::evaluate(alpha, success_prob, cap, grid)?);
        self.grids.insert(key, g.clone());
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OfrpUserChoice {
    pub params: OfrpUserParams,
    pub metrics: OfrpMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OfrpSolution {
    pub params: OfrpParams,
    pub users: Vec<OfrpUserChoice>,
}

impl OfrpSolution {
    pub fn total_cost(&self) -> f64 {
        self.users.iter().map(|u| u.metrics.avg_cost).sum()
    }
}

/// Grid search with `alpha_k = 1/K`, each user optimized independently.
pub fn optimize(cfg: &SystemConfig, step: f64) -> Result<OfrpSolution, OptimizeError> {
    optimize_with_cache(cfg, step, &mut OfrpGridCache::new())
}

pub fn optimize_with_cache(cfg: &SystemConfig, step: f64, cache: &mut OfrpGridCache) -> Result<OfrpSolution, OptimizeError> {
    cfg.validate_structure()?;
    let grid = ProbabilityGrid::new(step)?;
    let alpha = 1.0 / cfg.num_users as f64;
    let mut users = Vec::with_capacity(cfg.num_users);
    for k in 0..cfg.num_users {
        let limit = cfg.aoi_limit[k];
        let g = cache
            .get(alpha, cfg.success_prob[k], cfg.aoi_cap, grid)
            .map_err(|e| OptimizeError::Analysis {
                user: k,
                reason: e.to_string(),
            })?;
        let (pt, cost) = g.best(limit, cfg.costs()).ok_or(OptimizeError::Infeasible {
            user: k,
            limit,
            best_aoi: g.min_aoi(),
        })?;
        users.push(OfrpUserChoice {
            params: pt.params(alpha),
            metrics: OfrpMetrics {
                avg_aoi: pt.avg_aoi,
                theta: pt.theta,
                avg_cost: cost,
            },
        });
    }
    Ok(OfrpSolution {
        params: OfrpParams::from_users(&users.iter().map(|u| u.params).collect::<Vec<_>>()),
        users,
    })
}

/// Simulator driver for fixed OFRP parameters.
#[derive(Debug, Clone)]
pub struct OfrpPolicy {
    params: OfrpParams,
}

impl OfrpPolicy {
    pub fn new(params: OfrpParams) -> Result<Self, ChainError> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl Policy for OfrpPolicy {
    fn name(&self) -> String {
        "ofrp".into()
    }

    fn decide(&mut self, states: &[UserState], cfg: &SystemConfig, rng: &mut PolicyRng) -> ActionVector {
        let mut actions = ActionVector::idle(states.len());
        let scheduled = pick_user(&self.params.alpha, rng.random());
        let draw: f64 = rng.random();
        if let Some(k) = scheduled {
            let p = self.params.user(k);
            let action = match states[k].cache {
                Some(_) if draw < p.u => UserAction::Sample,
                Some(_) if draw < p.u + p.q && states[k].can_retransmit(cfg.aoi_cap) => UserAction::Retransmit,
                Some(_) => UserAction::Idle,
                None if draw < p.u_prime => UserAction::Sample,
                None => UserAction::Idle,
            };
            actions = actions.with(k, action);
        }
        actions
    }
}
