//! `validate` subcommand: analytic-vs-simulation cross-checks.
//!
//! Every check carries a tag (`forp`, `ofrp`, `dpp`, `solver`) used by
//! `--only`. All tolerances are multiplied by `tol_scale`, so a scale of 0
//! turns every tolerance-based check into a failure.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dpp::{self, DppPolicy};
use crate::forp::{self, ForpParams, ForpPolicy};
use crate::grid::DEFAULT_STEP;
use crate::model::{Costs, SystemConfig, UserState, DEFAULT_HORIZON};
use crate::ofrp::{self, OfrpParams, OfrpPolicy, OfrpUserParams};
use crate::sim::{self, Estimate, Replicas, SimOptions};
use crate::solver::{self, Method, SolveError, SolveOptions, StochasticMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub tol_scale: f64,
    pub seeds: usize,
    pub horizon: u64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            tol_scale: 1.0,
            seeds: 4,
            horizon: DEFAULT_HORIZON,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub tag: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

struct Check {
    name: &'static str,
    tag: &'static str,
    run: fn(&ValidateOptions) -> (bool, String),
}

const CHECKS: [Check; 11] = [
    Check { name: "forp-closed-form", tag: "forp", run: forp_closed_form },
    Check { name: "forp-simulation", tag: "forp", run: forp_simulation },
    Check { name: "ofrp-simulation", tag: "ofrp", run: ofrp_simulation },
    Check { name: "ofrp-chain-paths", tag: "ofrp", run: ofrp_chain_paths },
    Check { name: "ofrp-forp-full-reliability", tag: "ofrp", run: ofrp_forp_full_reliability },
    Check { name: "ofrp-old-packet-value", tag: "ofrp", run: old_packet_value },
    Check { name: "dpp-feasibility", tag: "dpp", run: dpp_feasibility },
    Check { name: "dpp-policy-ordering", tag: "dpp", run: policy_ordering },
    Check { name: "dpp-v-tradeoff", tag: "dpp", run: v_tradeoff },
    Check { name: "dpp-decision-oracle", tag: "dpp", run: decision_oracle },
    Check { name: "solver-cross-method", tag: "solver", run: solver_cross_method },
];

/// Names and tags of all checks.
pub fn check_names() -> Vec<(&'static str, &'static str)> {
    CHECKS.iter().map(|c| (c.name, c.tag)).collect()
}

/// Whether a check is selected by `--only`: a tag or an exact check name,
/// comma separated.
fn selected(check: &Check, only: Option<&str>) -> bool {
    only.is_none_or(|f| f.split(',').map(str::trim).any(|t| t == check.tag || t == check.name))
}

pub fn run_checks(opts: &ValidateOptions, only: Option<&str>) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .filter(|c| selected(c, only))
        .map(|c| {
            let t = Instant::now();
            let (pass, detail) = (c.run)(opts);
            CheckResult {
                name: c.name,
                tag: c.tag,
                pass,
                detail,
                seconds: t.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

/// Plain-text summary table.
pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        out += &format!(
            "{:<4}  {:<6}  {:<width$}  {:>7.2}s  {}\n",
            if r.pass { "PASS" } else { "FAIL" },
            r.tag,
            r.name,
            r.seconds,
            r.detail
        );
    }
    let passed = results.iter().filter(|r| r.pass).count();
    out += &format!("{passed}/{} checks passed\n", results.len());
    out
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn pair_stderr(a: &Estimate, b: &Estimate) -> f64 {
    a.stderr.hypot(b.stderr)
}

fn baseline(opts: &ValidateOptions, p: f64, sample_cost: f64) -> SystemConfig {
    SystemConfig::symmetric(2, p, 5.0, 10)
        .with_costs(sample_cost, 5.0)
        .with_horizon(opts.horizon)
}

fn replicate<P: sim::Policy>(make: impl Fn() -> P + Sync, cfg: &SystemConfig, opts: &ValidateOptions) -> Replicas {
    sim::run_replicas(make, cfg, opts.seeds, &SimOptions::default()).expect("validated configuration")
}

fn forp_closed_form(opts: &ValidateOptions) -> (bool, String) {
    let tol = 1e-10 * opts.tol_scale;
    let mut worst: f64 = 0.0;
    for cap in [2, 5, 10, 20, 30] {
        for i in 1..=20 {
            let delta = f64::from(i) / 20.0;
            match forp::avg_aoi_from_chain(delta, cap) {
                Ok(a) => worst = worst.max((a - forp::avg_aoi_closed_form(delta, cap)).abs()),
                Err(e) => return (false, format!("delta={delta} M={cap}: {e}")),
            }
        }
    }
    (worst < tol, format!("max deviation {worst:.3e} (tol {tol:.1e})"))
}

fn forp_simulation(opts: &ValidateOptions) -> (bool, String) {
    let tol = 0.01 * opts.tol_scale;
    let mut worst: f64 = 0.0;
    for (i, delta) in [0.2, 0.5, 0.8].into_iter().enumerate() {
        let p = 0.8;
        let cfg = SystemConfig::symmetric(1, p, 5.0, 10)
            .with_horizon(opts.horizon)
            .with_seed(11 + i as u64);
        let params = ForpParams::uniform(1, delta / p);
        let s = sim::run(&mut ForpPolicy::new(params.clone()).unwrap(), &cfg, &SimOptions::default()).unwrap();
        worst = worst
            .max(relative_error(s.avg_aoi[0], forp::avg_aoi_closed_form(delta, 10)))
            .max(relative_error(s.avg_cost, forp::avg_cost(1.0, params.phi[0], cfg.costs())));
    }
    (worst < tol, format!("max relative error {:.3}% (tol {:.2}%)", 100.0 * worst, 100.0 * tol))
}

fn ofrp_simulation(opts: &ValidateOptions) -> (bool, String) {
    let tol = 0.02 * opts.tol_scale;
    let mut worst: f64 = 0.0;
    for (i, p) in [0.5, 0.8].into_iter().enumerate() {
        let cfg = SystemConfig::symmetric(1, p, 5.0, 10)
            .with_horizon(opts.horizon)
            .with_seed(21 + i as u64);
        let optimum = match ofrp::optimize(&cfg, DEFAULT_STEP) {
            Ok(s) => s.users[0].params,
            Err(e) => return (false, e.to_string()),
        };
        for params in [OfrpUserParams::new(1.0, 0.4, 0.2, 0.6), optimum] {
            let m = ofrp::evaluate(&params, p, 10, cfg.costs()).unwrap();
            let mut policy = OfrpPolicy::new(OfrpParams::from_users(&[params])).unwrap();
            let s = sim::run(&mut policy, &cfg, &SimOptions::default()).unwrap();
            worst = worst
                .max(relative_error(s.avg_aoi[0], m.avg_aoi))
                .max(relative_error(s.empty_cache_freq[0], m.theta))
                .max(relative_error(s.avg_cost, m.avg_cost));
        }
    }
    (worst < tol, format!("max relative error {:.3}% (tol {:.2}%)", 100.0 * worst, 100.0 * tol))
}

fn ofrp_chain_paths(opts: &ValidateOptions) -> (bool, String) {
    let tol = 1e-10 * opts.tol_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let u: f64 = rng.random();
        let params = OfrpUserParams::new(rng.random_range(0.1..=1.0), u, rng.random::<f64>() * (1.0 - u), rng.random_range(0.05..=1.0));
        let p = rng.random_range(0.05..=1.0);
        let cap = rng.random_range(3..=20);
        let Ok((aoi, theta)) = ofrp::evaluate_user(&params, p, cap) else {
            return (false, format!("{params:?} p={p} M={cap}: evaluation failed"));
        };
        let mut chain = ofrp::build_chain(&params, p, cap).unwrap();
        if let Err(e) = chain.solve(&SolveOptions::default().with_method(Method::Direct)) {
            return (false, format!("direct solve failed: {e}"));
        }
        let m = ofrp::metrics(&chain, &params, Costs::new(0.0, 0.0)).unwrap();
        worst = worst.max((aoi - m.avg_aoi).abs()).max((theta - m.theta).abs());
    }
    (worst < tol, format!("50 random chains, max deviation {worst:.3e} (tol {tol:.1e})"))
}

fn ofrp_forp_full_reliability(opts: &ValidateOptions) -> (bool, String) {
    let cfg = baseline(opts, 1.0, 1.0);
    let (Ok(f), Ok(o)) = (forp::optimize(&cfg, DEFAULT_STEP), ofrp::optimize(&cfg, DEFAULT_STEP)) else {
        return (false, "optimization failed".into());
    };
    let tol = DEFAULT_STEP * cfg.costs().fresh() * opts.tol_scale;
    let gap = (f.total_cost() - o.total_cost()).abs();
    (gap <= tol, format!("|ofrp - forp| = {gap:.3e} (tol {tol:.3e})"))
}

fn old_packet_value(opts: &ValidateOptions) -> (bool, String) {
    let cfg = baseline(opts, 0.5, 10.0);
    let (Ok(f), Ok(o)) = (forp::optimize(&cfg, DEFAULT_STEP), ofrp::optimize(&cfg, DEFAULT_STEP)) else {
        return (false, "optimization failed".into());
    };
    let fp = ForpPolicy::new(f.params).unwrap();
    let op = OfrpPolicy::new(o.params).unwrap();
    let fs = replicate(|| fp.clone(), &cfg, opts).summary.avg_cost;
    let os = replicate(|| op.clone(), &cfg, opts).summary.avg_cost;
    let margin = 2.0 * pair_stderr(&fs, &os);
    let gap = fs.mean - os.mean;
    (gap > margin, format!("forp - ofrp = {gap:.4} (needs > {margin:.4})"))
}

fn dpp_feasibility(opts: &ValidateOptions) -> (bool, String) {
    let cfg = baseline(opts, 0.8, 1.0);
    let r = replicate(|| DppPolicy, &cfg, opts);
    let mut pass = true;
    let mut worst: (f64, f64) = (0.0, 0.0);
    for run in &r.runs {
        for (k, &limit) in cfg.aoi_limit.iter().enumerate() {
            let ratio = run.avg_aoi[k] / limit;
            let rate = run.vqueue_final[k] / run.slots as f64;
            pass &= ratio <= 1.0 + 0.02 * opts.tol_scale && rate < 0.01 * opts.tol_scale * limit;
            worst = (worst.0.max(ratio), worst.1.max(rate / limit));
        }
    }
    (pass, format!("max aoi/limit {:.4}, max X(T)/(T limit) {:.2e}", worst.0, worst.1))
}

fn policy_ordering(opts: &ValidateOptions) -> (bool, String) {
    let mut pass = true;
    let mut bad = Vec::new();
    for p in [0.5, 0.7, 0.9] {
        for sample_cost in [1.0, 10.0] {
            let cfg = baseline(opts, p, sample_cost);
            let (Ok(f), Ok(o)) = (forp::optimize(&cfg, DEFAULT_STEP), ofrp::optimize(&cfg, DEFAULT_STEP)) else {
                return (false, format!("p={p} c_s={sample_cost}: optimization failed"));
            };
            let fp = ForpPolicy::new(f.params).unwrap();
            let op = OfrpPolicy::new(o.params).unwrap();
            let d = replicate(|| DppPolicy, &cfg, opts).summary.avg_cost;
            let os = replicate(|| op.clone(), &cfg, opts).summary.avg_cost;
            let fs = replicate(|| fp.clone(), &cfg, opts).summary.avg_cost;
            let ok = d.mean <= os.mean + 2.0 * opts.tol_scale * pair_stderr(&d, &os)
                && os.mean <= fs.mean + 2.0 * opts.tol_scale * pair_stderr(&os, &fs);
            if !ok {
                bad.push(format!("p={p} c_s={sample_cost}: {:.4}/{:.4}/{:.4}", d.mean, os.mean, fs.mean));
            }
            pass &= ok;
        }
    }
    let detail = if bad.is_empty() {
        "dpp <= ofrp <= forp on all 6 instances".to_string()
    } else {
        format!("violations: {}", bad.join("; "))
    };
    (pass, detail)
}

fn v_tradeoff(opts: &ValidateOptions) -> (bool, String) {
    let mut cost = Vec::new();
    let mut queue = Vec::new();
    for v in [50.0, 100.0, 200.0, 400.0, 800.0] {
        let r = replicate(|| DppPolicy, &baseline(opts, 0.8, 1.0).with_v_weight(v), opts);
        cost.push(r.summary.avg_cost);
        let per_seed: Vec<f64> = r
            .runs
            .iter()
            .map(|s| s.vqueue_mean.iter().sum::<f64>() / s.vqueue_mean.len() as f64)
            .collect();
        queue.push(Estimate::from_samples(&per_seed));
    }
    let mut pass = true;
    for i in 1..cost.len() {
        pass &= cost[i].mean <= cost[i - 1].mean + opts.tol_scale * pair_stderr(&cost[i], &cost[i - 1]);
        pass &= queue[i].mean >= queue[i - 1].mean - opts.tol_scale * pair_stderr(&queue[i], &queue[i - 1]);
    }
    let fmt = |e: &[Estimate]| e.iter().map(|x| format!("{:.4}", x.mean)).collect::<Vec<_>>().join(" ");
    (pass, format!("cost {} | mean X {}", fmt(&cost), fmt(&queue)))
}

fn decision_oracle(_: &ValidateOptions) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut failures = 0;
    for _ in 0..1000 {
        let k = rng.random_range(1..=3usize);
        let cap = rng.random_range(3..=15u32);
        let mut cfg = SystemConfig::symmetric(k, 0.5, 1.0, cap)
            .with_costs(f64::from(rng.random_range(0..=8u32)), f64::from(rng.random_range(0..=8u32)))
            .with_v_weight(f64::from(rng.random_range(0..=900u32)))
            .with_single_transmitter(rng.random_bool(0.5));
        cfg.success_prob = (0..k).map(|_| f64::from(rng.random_range(0..=32u32)) / 32.0).collect();
        cfg.aoi_limit = (0..k).map(|_| f64::from(rng.random_range(1..=cap))).collect();
        let states: Vec<UserState> = (0..k)
            .map(|_| {
                let aoi = rng.random_range(1..=cap);
                let wait_max = aoi.saturating_sub(2).min(cap - 2);
                let cache = (wait_max >= 1 && rng.random_bool(0.5)).then(|| rng.random_range(1..=wait_max));
                UserState {
                    cache,
                    aoi,
                    vqueue: f64::from(rng.random_range(0..=2500u32)),
                }
            })
            .collect();
        let mut best = None;
        for c in dpp::candidates(&states, &cfg) {
            let score = dpp::candidate_score(&states, &c, &cfg).expect("enumerated candidates are feasible");
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, c));
            }
        }
        let chosen = dpp::decide(&states, &cfg);
        let c = f64::from(rng.random_range(2..=64u32));
        let scaled: Vec<UserState> = states.iter().map(|s| UserState { vqueue: s.vqueue * c, ..*s }).collect();
        let again = dpp::decide(&scaled, &cfg.clone().with_v_weight(cfg.v_weight * c));
        if Some(&chosen) != best.as_ref().map(|b| &b.1) || again != chosen {
            failures += 1;
        }
    }
    (failures == 0, format!("{failures} of 1000 snapshots disagree"))
}

fn solver_cross_method(opts: &ValidateOptions) -> (bool, String) {
    let tol = 1e-10 * opts.tol_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut rows = vec![vec![0.0; 5]; 5];
    for row in rows.iter_mut() {
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        for (x, wi) in row.iter_mut().zip(w) {
            *x = wi / s;
        }
    }
    let p = StochasticMatrix::from_dense(&rows).unwrap();
    let direct = solver::solve_stationary(&p, &SolveOptions::default().with_method(Method::Direct)).unwrap().0;
    let power = solver::solve_stationary(&p, &SolveOptions::default().with_method(Method::Power)).unwrap().0;
    let diff = direct.iter().zip(&power).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let flip = StochasticMatrix::from_dense(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let periodic = solver::solve_stationary(&flip, &SolveOptions::default()).map(|r| r.0);
    let periodic_ok = periodic.as_ref().is_ok_and(|pi| (pi[0] - 0.5).abs() < tol && (pi[1] - 0.5).abs() < tol);
    let identity = StochasticMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let reducible = matches!(
        solver::solve_stationary(&identity, &SolveOptions::default()),
        Err(SolveError::Reducible)
    );
    (
        diff < tol && periodic_ok && reducible,
        format!("direct vs power {diff:.2e}, period-2 chain ok: {periodic_ok}, identity rejected: {reducible}"),
    )
}
