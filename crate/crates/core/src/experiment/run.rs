//! `run` and `optimize` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

use super::output::{config_hash, fmt_g, fmt_opt, register_scenario, CSV_SCHEMA};
use super::{ExperimentSpec, PolicyKind, SweepPoint};
use crate::dpp::DppPolicy;
use crate::forp::{self, ForpPolicy, ForpSolution};
use crate::grid::OptimizeError;
use crate::model::SystemConfig;
use crate::ofrp::{self, OfrpGridCache, OfrpPolicy, OfrpSolution};
use crate::sim::{self, Replicas, SimError, SimOptions};

/// Outcome of optimizing one policy at one sweep point.
#[derive(Debug, Clone)]
enum Prepared {
    Dpp,
    Forp(ForpSolution),
    Ofrp(OfrpSolution),
    Failed { status: &'static str, message: String },
}

fn failed_opt(e: &OptimizeError) -> Prepared {
    Prepared::Failed {
        status: if matches!(e, OptimizeError::Infeasible { .. }) { "infeasible" } else { "error" },
        message: e.to_string(),
    }
}

fn failed_sim(e: &SimError) -> (&'static str, String) {
    let status = match e {
        SimError::Config(crate::model::ModelError::InvalidConfig { field, .. }) if field.starts_with("aoi_limit") => {
            "infeasible"
        }
        _ => "error",
    };
    (status, e.to_string())
}

fn prepare(points: &[SweepPoint], policies: &[PolicyKind], step: f64) -> Vec<Vec<Prepared>> {
    let mut cache = OfrpGridCache::new();
    points
        .iter()
        .map(|pt| {
            policies
                .iter()
                .map(|&kind| match kind {
                    PolicyKind::Dpp => Prepared::Dpp,
                    PolicyKind::Forp | PolicyKind::ForpAnalytic => match forp::optimize(&pt.system, step) {
                        Ok(s) => Prepared::Forp(s),
                        Err(e) => failed_opt(&e),
                    },
                    PolicyKind::Ofrp | PolicyKind::OfrpAnalytic => {
                        match ofrp::optimize_with_cache(&pt.system, step, &mut cache) {
                            Ok(s) => Prepared::Ofrp(s),
                            Err(e) => failed_opt(&e),
                        }
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
struct UserColumns {
    avg_aoi: Option<f64>,
    avg_aoi_stderr: Option<f64>,
    theta: Option<f64>,
    s_mean: Option<f64>,
    mu_mean: Option<f64>,
    vqueue_mean: Option<f64>,
}

#[derive(Debug, Clone)]
struct Row {
    status: &'static str,
    message: String,
    seeds: usize,
    avg_cost: Option<f64>,
    avg_cost_stderr: Option<f64>,
    users: Vec<UserColumns>,
    histogram: Option<Vec<Vec<f64>>>,
}

impl Row {
    fn failed(status: &'static str, message: String, k: usize) -> Self {
        Self {
            status,
            message,
            seeds: 0,
            avg_cost: None,
            avg_cost_stderr: None,
            users: vec![UserColumns::default(); k],
            histogram: None,
        }
    }

    fn from_replicas(r: &Replicas) -> Self {
        let s = &r.summary;
        let users = (0..s.avg_aoi.len())
            .map(|k| UserColumns {
                avg_aoi: Some(s.avg_aoi[k].mean),
                avg_aoi_stderr: Some(s.avg_aoi[k].stderr),
                theta: Some(s.empty_cache_freq[k].mean),
                s_mean: Some(s.sample_freq[k].mean),
                mu_mean: Some(s.retransmit_freq[k].mean),
                vqueue_mean: Some(s.vqueue_mean[k].mean),
            })
            .collect::<Vec<_>>();
        Self {
            status: "ok",
            message: String::new(),
            seeds: r.runs.len(),
            avg_cost: Some(s.avg_cost.mean),
            avg_cost_stderr: Some(s.avg_cost.stderr),
            histogram: Some((0..users.len()).map(|k| r.aoi_distribution(k)).collect()),
            users,
        }
    }
}

fn simulate(kind: PolicyKind, prepared: &Prepared, cfg: &SystemConfig, replicas: usize) -> Result<Replicas, SimError> {
    let opts = SimOptions::default();
    match prepared {
        Prepared::Dpp => sim::run_replicas(|| DppPolicy, cfg, replicas, &opts),
        Prepared::Forp(s) => {
            let policy = ForpPolicy::new(s.params.clone()).expect("optimizer output is valid");
            sim::run_replicas(|| policy.clone(), cfg, replicas, &opts)
        }
        Prepared::Ofrp(s) => {
            let policy = OfrpPolicy::new(s.params.clone()).expect("optimizer output is valid");
            sim::run_replicas(|| policy.clone(), cfg, replicas, &opts)
        }
        Prepared::Failed { .. } => unreachable!("{} has no parameters", kind.label()),
    }
}

fn analytic_row(prepared: &Prepared) -> Row {
    match prepared {
        Prepared::Forp(s) => Row {
            status: "ok",
            message: String::new(),
            seeds: 0,
            avg_cost: Some(s.total_cost()),
            avg_cost_stderr: None,
            users: s
                .users
                .iter()
                .zip(&s.params.alpha_prime)
                .map(|(u, a)| UserColumns {
                    avg_aoi: Some(u.avg_aoi),
                    s_mean: Some(a * u.phi),
                    mu_mean: Some(0.0),
                    ..Default::default()
                })
                .collect(),
            histogram: None,
        },
        Prepared::Ofrp(s) => Row {
            status: "ok",
            message: String::new(),
            seeds: 0,
            avg_cost: Some(s.total_cost()),
            avg_cost_stderr: None,
            users: s
                .users
                .iter()
                .map(|u| {
                    let (p, m) = (u.params, u.metrics);
                    UserColumns {
                        avg_aoi: Some(m.avg_aoi),
                        theta: Some(m.theta),
                        s_mean: Some(m.theta * p.alpha * p.u_prime + (1.0 - m.theta) * p.alpha * p.u),
                        mu_mean: Some((1.0 - m.theta) * p.alpha * p.q),
                        ..Default::default()
                    }
                })
                .collect(),
            histogram: None,
        },
        _ => unreachable!("analytic rows come from optimizer output"),
    }
}

fn evaluate(kind: PolicyKind, prepared: &Prepared, cfg: &SystemConfig, replicas: usize) -> Row {
    if let Prepared::Failed { status, message } = prepared {
        return Row::failed(status, message.clone(), cfg.num_users);
    }
    if !kind.is_simulated() {
        return analytic_row(prepared);
    }
    match simulate(kind, prepared, cfg, replicas) {
        Ok(r) => Row::from_replicas(&r),
        Err(e) => {
            let (status, message) = failed_sim(&e);
            Row::failed(status, message, cfg.num_users)
        }
    }
}

fn sweep_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "schema",
        "scenario",
        "config_hash",
        "axis",
        "axis_value",
        "policy",
        "status",
        "message",
        "seeds",
        "avg_cost",
        "avg_cost_stderr",
    ]
    .map(String::from)
    .to_vec();
    for u in 1..=k {
        for name in ["avg_aoi", "avg_aoi_stderr", "theta", "s_mean", "mu_mean", "vqueue_mean"] {
            h.push(format!("{name}_{u}"));
        }
    }
    h
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub sweep_csv: PathBuf,
    pub histograms: Vec<PathBuf>,
    pub rows: usize,
    /// Rows whose status is not `ok`.
    pub failed_rows: usize,
}

fn scenario_dir(out: &Path, spec: &ExperimentSpec, hash: &str) -> Result<PathBuf> {
    register_scenario(out, &spec.scenario, hash)?;
    let dir = out.join(&spec.scenario);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Runs every (sweep value, policy) pair and writes the sweep CSV plus one
/// AoI histogram per simulated run.
pub fn cmd_run(spec: &ExperimentSpec, out: &Path) -> Result<RunReport> {
    let hash = config_hash(spec);
    let dir = scenario_dir(out, spec, &hash)?;
    let points = spec.points();
    let prepared = prepare(&points, &spec.policies, spec.step);
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|i| (0..spec.policies.len()).map(move |j| (i, j)))
        .collect();
    let rows: Vec<Row> = jobs
        .par_iter()
        .map(|&(i, j)| evaluate(spec.policies[j], &prepared[i][j], &points[i].system, spec.replicas))
        .collect();

    let k = spec.system.num_users;
    let sweep_csv = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&sweep_csv).with_context(|| format!("writing {}", sweep_csv.display()))?;
    w.write_record(sweep_header(k))?;
    let hist_dir = dir.join("hist");
    let mut histograms = Vec::new();
    let mut failed_rows = 0;
    for (&(i, j), row) in jobs.iter().zip(&rows) {
        let policy = spec.policies[j].label();
        let axis_value = fmt_opt(points[i].axis_value);
        failed_rows += usize::from(row.status != "ok");
        let mut rec = vec![
            CSV_SCHEMA.to_string(),
            spec.scenario.clone(),
            hash.clone(),
            spec.axis_label().to_string(),
            axis_value.clone(),
            policy.to_string(),
            row.status.to_string(),
            row.message.clone(),
            row.seeds.to_string(),
            fmt_opt(row.avg_cost),
            fmt_opt(row.avg_cost_stderr),
        ];
        for u in &row.users {
            for v in [u.avg_aoi, u.avg_aoi_stderr, u.theta, u.s_mean, u.mu_mean, u.vqueue_mean] {
                rec.push(fmt_opt(v));
            }
        }
        w.write_record(&rec)?;
        if let Some(hist) = &row.histogram {
            fs::create_dir_all(&hist_dir)?;
            let name = match points[i].axis_value {
                Some(v) => format!("{policy}_{}_{}.csv", spec.axis_label(), fmt_g(v)),
                None => format!("{policy}.csv"),
            };
            let path = hist_dir.join(name);
            write_histogram(&path, spec, &hash, &axis_value, policy, hist)?;
            histograms.push(path);
        }
    }
    w.flush()?;
    Ok(RunReport {
        sweep_csv,
        histograms,
        rows: rows.len(),
        failed_rows,
    })
}

fn write_histogram(
    path: &Path,
    spec: &ExperimentSpec,
    hash: &str,
    axis_value: &str,
    policy: &str,
    hist: &[Vec<f64>],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header: Vec<String> = ["schema", "scenario", "config_hash", "axis", "axis_value", "policy", "aoi"]
        .map(String::from)
        .to_vec();
    header.extend((1..=hist.len()).map(|u| format!("freq_{u}")));
    w.write_record(&header)?;
    for a in 0..hist[0].len() {
        let mut rec = vec![
            CSV_SCHEMA.to_string(),
            spec.scenario.clone(),
            hash.to_string(),
            spec.axis_label().to_string(),
            axis_value.to_string(),
            policy.to_string(),
            (a + 1).to_string(),
        ];
        rec.extend(hist.iter().map(|h| fmt_g(h[a])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One user of one optimized policy at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeRow {
    pub axis_value: Option<f64>,
    pub policy: &'static str,
    pub user: usize,
    pub status: &'static str,
    pub message: String,
    pub alpha: Option<f64>,
    pub u: Option<f64>,
    pub q: Option<f64>,
    pub u_prime: Option<f64>,
    pub phi: Option<f64>,
    pub analytic_avg_aoi: Option<f64>,
    pub analytic_theta: Option<f64>,
    pub analytic_avg_cost: Option<f64>,
    pub sim_seeds: usize,
    pub sim_avg_aoi: Option<f64>,
    pub sim_avg_aoi_stderr: Option<f64>,
    pub sim_theta: Option<f64>,
    pub sim_avg_cost: Option<f64>,
}

impl OptimizeRow {
    fn empty(axis_value: Option<f64>, policy: &'static str, user: usize) -> Self {
        Self {
            axis_value,
            policy,
            user,
            status: "ok",
            message: String::new(),
            alpha: None,
            u: None,
            q: None,
            u_prime: None,
            phi: None,
            analytic_avg_aoi: None,
            analytic_theta: None,
            analytic_avg_cost: None,
            sim_seeds: 0,
            sim_avg_aoi: None,
            sim_avg_aoi_stderr: None,
            sim_theta: None,
            sim_avg_cost: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub csv: PathBuf,
    pub rows: Vec<OptimizeRow>,
}

/// Randomized policies named in the scenario, or both when none is.
fn randomized_policies(spec: &ExperimentSpec) -> Vec<PolicyKind> {
    let mut out = Vec::new();
    for p in &spec.policies {
        let base = match p {
            PolicyKind::Ofrp | PolicyKind::OfrpAnalytic => PolicyKind::Ofrp,
            PolicyKind::Forp | PolicyKind::ForpAnalytic => PolicyKind::Forp,
            PolicyKind::Dpp => continue,
        };
        if !out.contains(&base) {
            out.push(base);
        }
    }
    if out.is_empty() {
        out = vec![PolicyKind::Ofrp, PolicyKind::Forp];
    }
    out
}

/// Optimizes the randomized policies at every sweep point and confirms each
/// optimum by simulation.
pub fn cmd_optimize(spec: &ExperimentSpec, out: &Path) -> Result<OptimizeReport> {
    let hash = config_hash(spec);
    let dir = scenario_dir(out, spec, &hash)?;
    let points = spec.points();
    let policies = randomized_policies(spec);
    let prepared = prepare(&points, &policies, spec.step);
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|i| (0..policies.len()).map(move |j| (i, j)))
        .collect();
    let sims: Vec<Option<Result<Replicas, SimError>>> = jobs
        .par_iter()
        .map(|&(i, j)| match &prepared[i][j] {
            Prepared::Failed { .. } => None,
            p => Some(simulate(policies[j], p, &points[i].system, spec.replicas)),
        })
        .collect();

    let mut rows = Vec::new();
    for (&(i, j), sim) in jobs.iter().zip(&sims) {
        let pt = &points[i];
        let label = policies[j].label();
        let costs = pt.system.costs();
        for k in 0..pt.system.num_users {
            let mut row = OptimizeRow::empty(pt.axis_value, label, k + 1);
            match &prepared[i][j] {
                Prepared::Failed { status, message } => {
                    row.status = status;
                    row.message = message.clone();
                }
                Prepared::Forp(s) => {
                    row.alpha = Some(s.params.alpha_prime[k]);
                    row.phi = Some(s.users[k].phi);
                    row.analytic_avg_aoi = Some(s.users[k].avg_aoi);
                    row.analytic_avg_cost = Some(s.users[k].avg_cost);
                }
                Prepared::Ofrp(s) => {
                    let c = &s.users[k];
                    row.alpha = Some(c.params.alpha);
                    row.u = Some(c.params.u);
                    row.q = Some(c.params.q);
                    row.u_prime = Some(c.params.u_prime);
                    row.analytic_avg_aoi = Some(c.metrics.avg_aoi);
                    row.analytic_theta = Some(c.metrics.theta);
                    row.analytic_avg_cost = Some(c.metrics.avg_cost);
                }
                Prepared::Dpp => unreachable!(),
            }
            match sim {
                Some(Ok(r)) => {
                    let s = &r.summary;
                    row.sim_seeds = r.runs.len();
                    row.sim_avg_aoi = Some(s.avg_aoi[k].mean);
                    row.sim_avg_aoi_stderr = Some(s.avg_aoi[k].stderr);
                    row.sim_theta = Some(s.empty_cache_freq[k].mean);
                    row.sim_avg_cost =
                        Some(s.sample_freq[k].mean * costs.fresh() + s.retransmit_freq[k].mean * costs.transmit);
                }
                Some(Err(e)) => {
                    let (status, message) = failed_sim(e);
                    row.status = status;
                    row.message = message;
                }
                None => {}
            }
            rows.push(row);
        }
    }

    let csv_path = dir.join("optimize.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    w.write_record([
        "schema",
        "scenario",
        "config_hash",
        "axis",
        "axis_value",
        "policy",
        "user",
        "status",
        "message",
        "alpha",
        "u",
        "q",
        "u_prime",
        "phi",
        "analytic_avg_aoi",
        "analytic_theta",
        "analytic_avg_cost",
        "sim_seeds",
        "sim_avg_aoi",
        "sim_avg_aoi_stderr",
        "sim_theta",
        "sim_avg_cost",
    ])?;
    for r in &rows {
        let mut rec = vec![
            CSV_SCHEMA.to_string(),
            spec.scenario.clone(),
            hash.clone(),
            spec.axis_label().to_string(),
            fmt_opt(r.axis_value),
            r.policy.to_string(),
            r.user.to_string(),
            r.status.to_string(),
            r.message.clone(),
        ];
        for v in [
            r.alpha,
            r.u,
            r.q,
            r.u_prime,
            r.phi,
            r.analytic_avg_aoi,
            r.analytic_theta,
            r.analytic_avg_cost,
        ] {
            rec.push(fmt_opt(v));
        }
        rec.push(r.sim_seeds.to_string());
        for v in [r.sim_avg_aoi, r.sim_avg_aoi_stderr, r.sim_theta, r.sim_avg_cost] {
            rec.push(fmt_opt(v));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(OptimizeReport { csv: csv_path, rows })
}
