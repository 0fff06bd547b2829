//! C ABI over `aoi-sched`.
//!
//! Every function returns an [`AoiStatus`]; results are written through out
//! pointers. On failure, [`aoi_last_error_message`] describes the error of the
//! most recent failing call on the calling thread. Handles are opaque and must
//! be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use aoi_sched::dpp::DppPolicy;
use aoi_sched::forp::{self, ForpParams, ForpPolicy};
use aoi_sched::grid::OptimizeError;
use aoi_sched::ofrp::{self, ChainError, OfrpParams, OfrpPolicy, OfrpUserParams};
use aoi_sched::sim::{self, Policy, SimError, SimOptions, SimStats};
use aoi_sched::{Costs, ModelError, SystemConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AoiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// No policy in the search space meets the AoI limits.
    Infeasible = 3,
    Numerical = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

/// Scheduling instance. Create with [`aoi_config_new`].
pub struct AoiConfig(SystemConfig);

/// Statistics of a finished simulation run.
pub struct AoiSimStats(SimStats);

/// Decision probabilities of one user under the randomized policy with
/// retransmissions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoiOfrpUser {
    pub alpha: f64,
    pub u: f64,
    pub q: f64,
    pub u_prime: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoiOfrpMetrics {
    pub avg_aoi: f64,
    /// Stationary probability that the cache is empty.
    pub theta: f64,
    pub avg_cost: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(AoiStatus, String);

type FfiResult<T = ()> = Result<T, Failure>;

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure(AoiStatus::InvalidArgument, e.to_string())
    }
}

impl From<ChainError> for Failure {
    fn from(e: ChainError) -> Self {
        let status = match e {
            ChainError::InvalidParams(_) => AoiStatus::InvalidArgument,
            ChainError::Degenerate(_) => AoiStatus::Infeasible,
            ChainError::Solve(_) => AoiStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

impl From<OptimizeError> for Failure {
    fn from(e: OptimizeError) -> Self {
        let status = match e {
            OptimizeError::InvalidStep(_) | OptimizeError::Config(_) => AoiStatus::InvalidArgument,
            OptimizeError::Infeasible { .. } => AoiStatus::Infeasible,
            OptimizeError::Analysis { .. } => AoiStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let status = match e {
            SimError::InfeasibleAction { .. } => AoiStatus::Infeasible,
            _ => AoiStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(AoiStatus::InvalidArgument, msg.into())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> FfiResult) -> AoiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AoiStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            AoiStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| Failure(AoiStatus::NullPointer, format!("{name} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure(AoiStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(AoiStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> FfiResult<&'a mut [T]> {
    if p.is_null() {
        return Err(Failure(AoiStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write<T>(out: *mut T, value: T, name: &str) -> FfiResult {
    *deref_mut(out, name)? = value;
    Ok(())
}

fn user_index(cfg: &SystemConfig, user: usize) -> FfiResult<usize> {
    if user < cfg.num_users {
        Ok(user)
    } else {
        Err(invalid(format!("user {user} out of range for {} users", cfg.num_users)))
    }
}

/// Message of the last failing call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn aoi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Symmetric instance with sample cost 1, transmission cost 5, horizon 1e6,
/// seed 1, V = 800 and a single transmitter.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn aoi_config_new(
    num_users: usize,
    success_prob: f64,
    aoi_limit: f64,
    aoi_cap: u32,
    out: *mut *mut AoiConfig,
) -> AoiStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let cfg = SystemConfig::symmetric(num_users, success_prob, aoi_limit, aoi_cap);
        cfg.validate_structure()?;
        *out = Box::into_raw(Box::new(AoiConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle from [`aoi_config_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aoi_config_free(cfg: *mut AoiConfig) {
    if !cfg.is_null() {
        let _ = catch_unwind(|| drop(Box::from_raw(cfg)));
    }
}

/// Replaces one user's success probability and AoI limit.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn aoi_config_set_user(
    cfg: *mut AoiConfig,
    user: usize,
    success_prob: f64,
    aoi_limit: f64,
) -> AoiStatus {
    guard(|| {
        let cfg = &mut deref_mut(cfg, "cfg")?.0;
        let k = user_index(cfg, user)?;
        let mut next = cfg.clone();
        next.success_prob[k] = success_prob;
        next.aoi_limit[k] = aoi_limit;
        next.validate_structure()?;
        *cfg = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn aoi_config_set_costs(cfg: *mut AoiConfig, sample_cost: f64, transmit_cost: f64) -> AoiStatus {
    guard(|| {
        let cfg = &mut deref_mut(cfg, "cfg")?.0;
        let next = cfg.clone().with_costs(sample_cost, transmit_cost);
        next.validate_structure()?;
        *cfg = next;
        Ok(())
    })
}

/// Cost weight of the drift-plus-penalty scheduler.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn aoi_config_set_v(cfg: *mut AoiConfig, v: f64) -> AoiStatus {
    guard(|| {
        let cfg = &mut deref_mut(cfg, "cfg")?.0;
        let next = cfg.clone().with_v_weight(v);
        next.validate_structure()?;
        *cfg = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn aoi_config_set_horizon(cfg: *mut AoiConfig, horizon: u64, seed: u64) -> AoiStatus {
    guard(|| {
        let cfg = &mut deref_mut(cfg, "cfg")?.0;
        let next = cfg.clone().with_horizon(horizon).with_seed(seed);
        next.validate_structure()?;
        *cfg = next;
        Ok(())
    })
}

/// When false, any number of users may transmit in the same slot.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn aoi_config_set_single_transmitter(cfg: *mut AoiConfig, single: bool) -> AoiStatus {
    guard(|| {
        let cfg = &mut deref_mut(cfg, "cfg")?.0;
        cfg.single_transmitter_mode = single;
        Ok(())
    })
}

/// Stationary average AoI of the fresh-only randomized policy for per-slot
/// delivery probability `delta` and AoI cap `aoi_cap`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aoi_forp_avg_aoi(delta: f64, aoi_cap: u32, out: *mut f64) -> AoiStatus {
    guard(|| {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(invalid(format!("delta {delta} not in (0, 1]")));
        }
        if aoi_cap < 1 {
            return Err(invalid("aoi_cap must be at least 1"));
        }
        write(out, forp::avg_aoi_closed_form(delta, aoi_cap), "out")
    })
}

/// Grid search with `alpha'_k = 1 / K`. Writes `phi_k` for every user into
/// `phi_out` (length `len`, at least K) and the summed cost into `total_cost`.
///
/// # Safety
/// `cfg` must be a live handle, `phi_out` must hold `len` doubles and
/// `total_cost` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aoi_forp_optimize(
    cfg: *const AoiConfig,
    step: f64,
    phi_out: *mut f64,
    len: usize,
    total_cost: *mut f64,
) -> AoiStatus {
    guard(|| {
        let cfg = &deref(cfg, "cfg")?.0;
        let phi = slice_mut(phi_out, len, "phi_out")?;
        if len < cfg.num_users {
            return Err(invalid(format!("phi_out holds {len} values, need {}", cfg.num_users)));
        }
        deref_mut(total_cost, "total_cost")?;
        let sol = forp::optimize(cfg, step)?;
        phi[..cfg.num_users].copy_from_slice(&sol.params.phi);
        write(total_cost, sol.total_cost(), "total_cost")
    })
}

/// Stationary metrics of one user under the randomized policy with
/// retransmissions.
///
/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aoi_ofrp_metrics(
    params: *const AoiOfrpUser,
    success_prob: f64,
    aoi_cap: u32,
    sample_cost: f64,
    transmit_cost: f64,
    out: *mut AoiOfrpMetrics,
) -> AoiStatus {
    guard(|| {
        let p = *deref(params, "params")?;
        deref_mut(out, "out")?;
        if !(0.0..=1.0).contains(&success_prob) {
            return Err(invalid(format!("success_prob {success_prob} not in [0, 1]")));
        }
        if aoi_cap < 2 {
            return Err(invalid("aoi_cap must be at least 2"));
        }
        let user = OfrpUserParams::new(p.alpha, p.u, p.q, p.u_prime);
        let m = ofrp::evaluate(&user, success_prob, aoi_cap, Costs::new(sample_cost, transmit_cost))?;
        write(
            out,
            AoiOfrpMetrics {
                avg_aoi: m.avg_aoi,
                theta: m.theta,
                avg_cost: m.avg_cost,
            },
            "out",
        )
    })
}

/// Grid search with `alpha_k = 1 / K`, each user optimized independently.
///
/// # Safety
/// `cfg` must be a live handle, `users_out` must hold `len` entries and
/// `total_cost` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aoi_ofrp_optimize(
    cfg: *const AoiConfig,
    step: f64,
    users_out: *mut AoiOfrpUser,
    len: usize,
    total_cost: *mut f64,
) -> AoiStatus {
    guard(|| {
        let cfg = &deref(cfg, "cfg")?.0;
        let users = slice_mut(users_out, len, "users_out")?;
        if len < cfg.num_users {
            return Err(invalid(format!("users_out holds {len} entries, need {}", cfg.num_users)));
        }
        deref_mut(total_cost, "total_cost")?;
        let sol = ofrp::optimize(cfg, step)?;
        for (slot, choice) in users.iter_mut().zip(&sol.users) {
            let p = choice.params;
            *slot = AoiOfrpUser {
                alpha: p.alpha,
                u: p.u,
                q: p.q,
                u_prime: p.u_prime,
            };
        }
        write(total_cost, sol.total_cost(), "total_cost")
    })
}

unsafe fn simulate(cfg: *const AoiConfig, out: *mut *mut AoiSimStats, make: impl FnOnce(&SystemConfig) -> FfiResult<Box<dyn Policy>>) -> AoiStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let cfg = &deref(cfg, "cfg")?.0;
        cfg.validate()?;
        let mut policy = make(cfg)?;
        let stats = sim::run(&mut policy, cfg, &SimOptions::default())?;
        *out = Box::into_raw(Box::new(AoiSimStats(stats)));
        Ok(())
    })
}

/// Simulates the drift-plus-penalty scheduler for the configured horizon.
///
/// # Safety
/// `cfg` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aoi_simulate_dpp(cfg: *const AoiConfig, out: *mut *mut AoiSimStats) -> AoiStatus {
    simulate(cfg, out, |_| Ok(Box::new(DppPolicy)))
}

/// Simulates the fresh-only randomized policy with per-user scheduling
/// probabilities `alpha_prime` and sampling probabilities `phi`, each of
/// length `len` equal to K.
///
/// # Safety
/// `cfg` must be a live handle, the arrays must hold `len` doubles and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn aoi_simulate_forp(
    cfg: *const AoiConfig,
    alpha_prime: *const f64,
    phi: *const f64,
    len: usize,
    out: *mut *mut AoiSimStats,
) -> AoiStatus {
    simulate(cfg, out, |cfg| {
        if len != cfg.num_users {
            return Err(invalid(format!("{len} parameters for {} users", cfg.num_users)));
        }
        let params = ForpParams {
            alpha_prime: slice(alpha_prime, len, "alpha_prime")?.to_vec(),
            phi: slice(phi, len, "phi")?.to_vec(),
        };
        Ok(Box::new(ForpPolicy::new(params).map_err(invalid)?))
    })
}

/// Simulates the randomized policy with retransmissions; `users` holds K
/// entries.
///
/// # Safety
/// `cfg` must be a live handle, `users` must hold `len` entries and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn aoi_simulate_ofrp(
    cfg: *const AoiConfig,
    users: *const AoiOfrpUser,
    len: usize,
    out: *mut *mut AoiSimStats,
) -> AoiStatus {
    simulate(cfg, out, |cfg| {
        if len != cfg.num_users {
            return Err(invalid(format!("{len} parameters for {} users", cfg.num_users)));
        }
        let users: Vec<_> = slice(users, len, "users")?
            .iter()
            .map(|p| OfrpUserParams::new(p.alpha, p.u, p.q, p.u_prime))
            .collect();
        Ok(Box::new(OfrpPolicy::new(OfrpParams::from_users(&users))?))
    })
}

/// # Safety
/// `stats` must be null or a handle from a simulate call not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aoi_stats_free(stats: *mut AoiSimStats) {
    if !stats.is_null() {
        let _ = catch_unwind(|| drop(Box::from_raw(stats)));
    }
}

/// # Safety
/// `stats` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aoi_stats_num_users(stats: *const AoiSimStats, out: *mut usize) -> AoiStatus {
    guard(|| write(out, deref(stats, "stats")?.0.num_users(), "out"))
}

/// Time-average cost per slot.
///
/// # Safety
/// `stats` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aoi_stats_avg_cost(stats: *const AoiSimStats, out: *mut f64) -> AoiStatus {
    guard(|| write(out, deref(stats, "stats")?.0.avg_cost, "out"))
}

unsafe fn per_user(stats: *const AoiSimStats, user: usize, out: *mut f64, field: fn(&SimStats) -> &[f64]) -> AoiStatus {
    guard(|| {
        let s = &deref(stats, "stats")?.0;
        let v = field(s)
            .get(user)
            .copied()
            .ok_or_else(|| invalid(format!("user {user} out of range for {} users", s.num_users())))?;
        write(out, v, "out")
    })
}

/// # Safety
/// `stats` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aoi_stats_avg_aoi(stats: *const AoiSimStats, user: usize, out: *mut f64) -> AoiStatus {
    per_user(stats, user, out, |s| &s.avg_aoi)
}

/// Fraction of slots in which `user` sampled.
///
/// # Safety
/// `stats` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aoi_stats_sample_freq(stats: *const AoiSimStats, user: usize, out: *mut f64) -> AoiStatus {
    per_user(stats, user, out, |s| &s.sample_freq)
}

/// # Safety
/// `stats` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aoi_stats_retransmit_freq(stats: *const AoiSimStats, user: usize, out: *mut f64) -> AoiStatus {
    per_user(stats, user, out, |s| &s.retransmit_freq)
}

/// Time average of the user's virtual queue.
///
/// # Safety
/// `stats` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aoi_stats_vqueue_mean(stats: *const AoiSimStats, user: usize, out: *mut f64) -> AoiStatus {
    per_user(stats, user, out, |s| &s.vqueue_mean)
}
