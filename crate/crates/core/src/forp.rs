//! Fresh-only randomized policy: the scheduler picks user `k` with
//! probability `alpha'_k`, and the scheduled user samples a fresh packet with
//! probability `phi_k` or stays silent. Each user's receiver AoI is then a
//! renewal chain on `1..=M` that restarts at 1 with probability
//! `delta = alpha' phi p`.

use rand::Rng;
use serde::Serialize;

use crate::chain::ChainModel;
use crate::grid::{OptimizeError, ProbabilityGrid, COST_TIE_TOL, FEASIBILITY_TOL};
use crate::model::{ActionVector, Costs, SystemConfig, UserAction, UserState};
use crate::sim::{Policy, PolicyRng};
use crate::solver::{MatrixBuilder, SolveError, SolveOptions};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForpParams {
    pub alpha_prime: Vec<f64>,
    pub phi: Vec<f64>,
}

impl ForpParams {
    /// `alpha'_k = 1/K` and a common `phi`.
    pub fn uniform(num_users: usize, phi: f64) -> Self {
        Self {
            alpha_prime: vec![1.0 / num_users as f64; num_users],
            phi: vec![phi; num_users],
        }
    }

    pub fn num_users(&self) -> usize {
        self.phi.len()
    }

    pub fn delta(&self, user: usize, success_prob: f64) -> f64 {
        self.alpha_prime[user] * self.phi[user] * success_prob
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.alpha_prime.len() != self.phi.len() {
            return Err("alpha_prime and phi differ in length".into());
        }
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !self.alpha_prime.iter().chain(&self.phi).all(|&x| in_unit(x)) {
            return Err("probabilities must lie in [0, 1]".into());
        }
        let total: f64 = self.alpha_prime.iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(format!("scheduling probabilities sum to {total} > 1"));
        }
        Ok(())
    }
}

/// `pi_i = delta (1 - delta)^(i-1)` for `i < M`, `pi_M = (1 - delta)^(M-1)`.
pub fn stationary_closed_form(delta: f64, cap: u32) -> Vec<f64> {
    let miss = 1.0 - delta;
    let mut pi: Vec<f64> = (0..cap - 1).map(|i| delta * miss.powi(i as i32)).collect();
    pi.push(miss.powi(cap as i32 - 1));
    pi
}

/// Closed-form average AoI; `delta = 0` gives the cap by continuity.
pub fn avg_aoi_closed_form(delta: f64, cap: u32) -> f64 {
    let m = f64::from(cap);
    if delta <= 0.0 {
        return m;
    }
    let miss = 1.0 - delta;
    let tail = miss.powi(cap as i32 - 1);
    ((m - 1.0) * tail * miss - m * tail + 1.0) / delta + m * tail
}

/// Per-user average cost `(c_tr + c_s) alpha' phi`.
pub fn avg_cost(alpha_prime: f64, phi: f64, costs: Costs) -> f64 {
    costs.fresh() * alpha_prime * phi
}

/// The `M`-state AoI chain with states labelled `1..=M`.
pub fn matrix_chain(delta: f64, cap: u32) -> Result<ChainModel<u32>, SolveError> {
    let n = cap as usize;
    let mut b = MatrixBuilder::new(n);
    for i in 0..n {
        b.add(i, 0, delta);
        b.add(i, (i + 1).min(n - 1), 1.0 - delta);
    }
    Ok(ChainModel::new((1..=cap).collect(), b.build()?))
}

/// Average AoI from the solved matrix chain.
pub fn avg_aoi_from_chain(delta: f64, cap: u32) -> Result<f64, SolveError> {
    let mut chain = matrix_chain(delta, cap)?;
    chain.solve(&SolveOptions::default())?;
    Ok(chain.expect(|&a| f64::from(a)).unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForpUserChoice {
    pub phi: f64,
    pub avg_aoi: f64,
    pub avg_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForpSolution {
    pub params: ForpParams,
    pub users: Vec<ForpUserChoice>,
}

impl ForpSolution {
    pub fn total_cost(&self) -> f64 {
        self.users.iter().map(|u| u.avg_cost).sum()
    }
}

/// Grid search over `phi` for one user: the cheapest grid point whose
/// average AoI meets the limit.
pub fn optimize_user(
    user: usize,
    alpha_prime: f64,
    success_prob: f64,
    limit: f64,
    cap: u32,
    costs: Costs,
    grid: &ProbabilityGrid,
) -> Result<ForpUserChoice, OptimizeError> {
    let mut best: Option<ForpUserChoice> = None;
    let mut best_aoi = f64::INFINITY;
    for phi in grid.values() {
        let aoi = avg_aoi_closed_form(alpha_prime * phi * success_prob, cap);
        best_aoi = best_aoi.min(aoi);
        if aoi > limit + FEASIBILITY_TOL {
            continue;
        }
        let cost = avg_cost(alpha_prime, phi, costs);
        if best.as_ref().is_none_or(|b| cost < b.avg_cost - COST_TIE_TOL) {
            best = Some(ForpUserChoice {
                phi,
                avg_aoi: aoi,
                avg_cost: cost,
            });
        }
    }
    let choice = best.ok_or(OptimizeError::Infeasible { user, limit, best_aoi })?;
    // cost rises and AoI falls with phi, so the cheapest point is the first feasible one
    debug_assert_eq!(
        Some(choice.phi),
        grid.values()
            .find(|&phi| avg_aoi_closed_form(alpha_prime * phi * success_prob, cap) <= limit + FEASIBILITY_TOL)
    );
    Ok(choice)
}

/// Per-user grid search with `alpha'_k = 1/K`.
pub fn optimize(cfg: &SystemConfig, step: f64) -> Result<ForpSolution, OptimizeError> {
    cfg.validate_structure()?;
    let grid = ProbabilityGrid::new(step)?;
    let alpha = 1.0 / cfg.num_users as f64;
    let users = (0..cfg.num_users)
        .map(|k| {
            optimize_user(
                k,
                alpha,
                cfg.success_prob[k],
                cfg.aoi_limit[k],
                cfg.aoi_cap,
                cfg.costs(),
                &grid,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ForpSolution {
        params: ForpParams {
            alpha_prime: vec![alpha; cfg.num_users],
            phi: users.iter().map(|u| u.phi).collect(),
        },
        users,
    })
}

/// Analytic per-user metrics of given parameters.
pub fn evaluate(params: &ForpParams, cfg: &SystemConfig) -> Vec<ForpUserChoice> {
    (0..params.num_users())
        .map(|k| ForpUserChoice {
            phi: params.phi[k],
            avg_aoi: avg_aoi_closed_form(params.delta(k, cfg.success_prob[k]), cfg.aoi_cap),
            avg_cost: avg_cost(params.alpha_prime[k], params.phi[k], cfg.costs()),
        })
        .collect()
}

/// Simulator driver for fixed FoRP parameters.
#[derive(Debug, Clone)]
pub struct ForpPolicy {
    params: ForpParams,
}

impl ForpPolicy {
    pub fn new(params: ForpParams) -> Result<Self, String> {
        params.validate()?;
        Ok(Self { params })
    }
}

/// Picks a user from the cumulative scheduling probabilities, none if the
/// draw falls past their sum.
pub(crate) fn pick_user(alpha: &[f64], draw: f64) -> Option<usize> {
    let mut acc = 0.0;
    for (k, &a) in alpha.iter().enumerate() {
        acc += a;
        if draw < acc {
            return Some(k);
        }
    }
    None
}

impl Policy for ForpPolicy {
    fn name(&self) -> String {
        "forp".into()
    }

    fn decide(&mut self, states: &[UserState], _: &SystemConfig, rng: &mut PolicyRng) -> ActionVector {
        let mut actions = ActionVector::idle(states.len());
        let scheduled = pick_user(&self.params.alpha_prime, rng.random());
        let act: f64 = rng.random();
        if let Some(k) = scheduled {
            if act < self.params.phi[k] {
                actions = actions.with(k, UserAction::Sample);
            }
        }
        actions
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_form_distribution_examples() {
        assert_eq!(stationary_closed_form(1.0, 5), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(stationary_closed_form(0.0, 4), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(stationary_closed_form(0.5, 3), vec![0.5, 0.25, 0.25]);
    }

    #[test]
    fn closed_form_average_examples() {
        assert_eq!(avg_aoi_closed_form(1.0, 10), 1.0);
        assert_abs_diff_eq!(avg_aoi_closed_form(0.5, 3), 1.75, epsilon = 1e-15);
        assert_eq!(avg_aoi_closed_form(0.0, 10), 10.0);
        assert!((avg_aoi_closed_form(1e-9, 10) - 10.0).abs() < 1e-6);
    }

    #[test]
    fn matrix_chain_matches_closed_form() {
        let mut chain = matrix_chain(0.5, 3).unwrap();
        let pi = chain.solve(&SolveOptions::default()).unwrap().to_vec();
        for (a, b) in pi.iter().zip([0.5, 0.25, 0.25]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
        let mut chain = matrix_chain(0.2, 30).unwrap();
        for i in 0..30 {
            assert_abs_diff_eq!(chain.matrix().row_sum(i), 1.0, epsilon = 1e-15);
        }
        let pi = chain.solve(&SolveOptions::default()).unwrap();
        let cf = stationary_closed_form(0.2, 30);
        let err = pi.iter().zip(&cf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn absorbing_chain_at_zero_delta() {
        assert_abs_diff_eq!(avg_aoi_from_chain(0.0, 6).unwrap(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn optimize_loose_limit_is_silent() {
        let cfg = SystemConfig::symmetric(2, 0.7, 10.0, 10);
        let sol = optimize(&cfg, 0.01).unwrap();
        assert_eq!(sol.params.phi, vec![0.0, 0.0]);
        assert_eq!(sol.total_cost(), 0.0);
    }

    #[test]
    fn optimize_tight_limit_needs_every_slot() {
        let cfg = SystemConfig::symmetric(1, 1.0, 1.0, 10).with_costs(1.0, 5.0);
        let sol = optimize(&cfg, 0.01).unwrap();
        assert_eq!(sol.params.phi, vec![1.0]);
        assert_eq!(sol.total_cost(), 6.0);
    }

    #[test]
    fn optimize_matches_scan_oracle() {
        let cfg = SystemConfig::symmetric(1, 0.8, 5.0, 10);
        let sol = optimize(&cfg, 0.01).unwrap();
        // independent scan: smallest phi on the grid meeting the limit
        let phi = (0..=100)
            .map(|i| i as f64 / 100.0)
            .find(|&phi| {
                let d = 0.8 * phi;
                let pi = stationary_closed_form(d, 10);
                pi.iter().enumerate().map(|(i, w)| (i + 1) as f64 * w).sum::<f64>() <= 5.0
            })
            .unwrap();
        assert_abs_diff_eq!(sol.params.phi[0], phi, epsilon = 1e-12);
        assert!(sol.users[0].avg_aoi <= 5.0);
    }

    #[test]
    fn infeasible_reports_user() {
        let mut cfg = SystemConfig::symmetric(2, 0.8, 5.0, 10);
        cfg.aoi_limit[1] = 1.0;
        match optimize(&cfg, 0.01) {
            Err(OptimizeError::Infeasible { user, .. }) => assert_eq!(user, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pick_user_cumulative() {
        assert_eq!(pick_user(&[0.5, 0.5], 0.2), Some(0));
        assert_eq!(pick_user(&[0.5, 0.5], 0.7), Some(1));
        assert_eq!(pick_user(&[0.3, 0.3], 0.9), None);
    }
}
