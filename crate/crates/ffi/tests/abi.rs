use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use aoi_sched_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(aoi_last_error_message()) }.to_string_lossy().into_owned()
}

fn config(k: usize, p: f64, limit: f64, cap: u32) -> *mut AoiConfig {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { aoi_config_new(k, p, limit, cap, &mut cfg) }, AoiStatus::Ok);
    assert!(!cfg.is_null());
    cfg
}

#[test]
fn forp_closed_form_matches_direct_sum() {
    let (delta, cap) = (0.3, 12u32);
    let mut avg = 0.0;
    assert_eq!(unsafe { aoi_forp_avg_aoi(delta, cap, &mut avg) }, AoiStatus::Ok);
    // pi_a = delta (1 - delta)^(a-1) for a < M, remainder at M
    let mut expected = 0.0;
    let mut mass = 0.0;
    for a in 1..cap {
        let pi = delta * (1.0 - delta).powi(a as i32 - 1);
        expected += a as f64 * pi;
        mass += pi;
    }
    expected += cap as f64 * (1.0 - mass);
    assert!((avg - expected).abs() < 1e-12, "{avg} vs {expected}");
}

#[test]
fn null_pointers_are_reported() {
    assert_eq!(unsafe { aoi_forp_avg_aoi(0.5, 10, ptr::null_mut()) }, AoiStatus::NullPointer);
    assert!(last_error().contains("out"));
    let mut cost = 0.0;
    assert_eq!(
        unsafe { aoi_stats_avg_cost(ptr::null(), &mut cost) },
        AoiStatus::NullPointer
    );
    assert_eq!(unsafe { aoi_config_new(2, 0.5, 5.0, 10, ptr::null_mut()) }, AoiStatus::NullPointer);
    unsafe {
        aoi_config_free(ptr::null_mut());
        aoi_stats_free(ptr::null_mut());
    }
}

#[test]
fn invalid_arguments_leave_config_unchanged() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { aoi_config_new(2, 1.5, 5.0, 10, &mut cfg) }, AoiStatus::InvalidArgument);
    assert!(cfg.is_null());
    assert!(!last_error().is_empty());

    let cfg = config(2, 0.8, 5.0, 10);
    assert_eq!(unsafe { aoi_config_set_user(cfg, 2, 0.5, 5.0) }, AoiStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));
    assert_eq!(unsafe { aoi_config_set_costs(cfg, -1.0, 5.0) }, AoiStatus::InvalidArgument);
    let mut phi = [0.0; 2];
    let mut total = 0.0;
    assert_eq!(unsafe { aoi_forp_optimize(cfg, 0.01, phi.as_mut_ptr(), 2, &mut total) }, AoiStatus::Ok);
    assert_eq!(unsafe { aoi_forp_optimize(cfg, 0.01, phi.as_mut_ptr(), 1, &mut total) }, AoiStatus::InvalidArgument);
    unsafe { aoi_config_free(cfg) };
}

#[test]
fn tight_limits_are_infeasible() {
    let cfg = config(2, 0.8, 1.5, 10);
    let mut phi = [0.0; 2];
    let mut total = 0.0;
    assert_eq!(
        unsafe { aoi_forp_optimize(cfg, 0.01, phi.as_mut_ptr(), 2, &mut total) },
        AoiStatus::Infeasible
    );
    assert!(last_error().contains("limit"));
    let mut users = [AoiOfrpUser { alpha: 0.0, u: 0.0, q: 0.0, u_prime: 0.0 }; 2];
    assert_eq!(
        unsafe { aoi_ofrp_optimize(cfg, 0.1, users.as_mut_ptr(), 2, &mut total) },
        AoiStatus::Infeasible
    );
    unsafe { aoi_config_free(cfg) };
}

#[test]
fn ofrp_metrics_reduce_to_fresh_only_without_retransmission() {
    // q = 0, u = u' = phi: the chain behaves like the fresh-only policy
    let (alpha, phi, p, cap) = (0.5, 0.4, 0.7, 10u32);
    let params = AoiOfrpUser { alpha, u: phi, q: 0.0, u_prime: phi };
    let mut m = AoiOfrpMetrics { avg_aoi: 0.0, theta: 0.0, avg_cost: 0.0 };
    assert_eq!(unsafe { aoi_ofrp_metrics(&params, p, cap, 1.0, 5.0, &mut m) }, AoiStatus::Ok);
    let mut forp = 0.0;
    assert_eq!(unsafe { aoi_forp_avg_aoi(alpha * phi * p, cap, &mut forp) }, AoiStatus::Ok);
    assert!((m.avg_aoi - forp).abs() < 1e-9, "{} vs {forp}", m.avg_aoi);
    assert!((m.avg_cost - alpha * phi * 6.0).abs() < 1e-9);

    let bad = AoiOfrpUser { alpha: 0.5, u: 0.7, q: 0.7, u_prime: 0.5 };
    assert_eq!(unsafe { aoi_ofrp_metrics(&bad, p, cap, 1.0, 5.0, &mut m) }, AoiStatus::InvalidArgument);
}

#[test]
fn optimized_policies_simulate_within_limits() {
    let cfg = config(2, 0.8, 5.0, 10);
    unsafe {
        assert_eq!(aoi_config_set_horizon(cfg, 200_000, 7), AoiStatus::Ok);
        let mut total = 0.0;

        let mut phi = [0.0; 2];
        assert_eq!(aoi_forp_optimize(cfg, 0.01, phi.as_mut_ptr(), 2, &mut total), AoiStatus::Ok);
        let alpha = [0.5; 2];
        let mut stats = ptr::null_mut();
        assert_eq!(aoi_simulate_forp(cfg, alpha.as_ptr(), phi.as_ptr(), 2, &mut stats), AoiStatus::Ok);
        let mut cost = 0.0;
        assert_eq!(aoi_stats_avg_cost(stats, &mut cost), AoiStatus::Ok);
        assert!((cost - total).abs() / total < 0.03, "{cost} vs {total}");
        aoi_stats_free(stats);

        let mut users = [AoiOfrpUser { alpha: 0.0, u: 0.0, q: 0.0, u_prime: 0.0 }; 2];
        assert_eq!(aoi_ofrp_optimize(cfg, 0.1, users.as_mut_ptr(), 2, &mut total), AoiStatus::Ok);
        let mut stats = ptr::null_mut();
        assert_eq!(aoi_simulate_ofrp(cfg, users.as_ptr(), 2, &mut stats), AoiStatus::Ok);
        assert_eq!(aoi_stats_avg_cost(stats, &mut cost), AoiStatus::Ok);
        assert!((cost - total).abs() / total < 0.03, "{cost} vs {total}");
        aoi_stats_free(stats);

        let mut stats = ptr::null_mut();
        assert_eq!(aoi_simulate_dpp(cfg, &mut stats), AoiStatus::Ok);
        let mut n = 0usize;
        assert_eq!(aoi_stats_num_users(stats, &mut n), AoiStatus::Ok);
        assert_eq!(n, 2);
        for k in 0..2 {
            let (mut aoi, mut s, mut r, mut x) = (0.0, 0.0, 0.0, 0.0);
            assert_eq!(aoi_stats_avg_aoi(stats, k, &mut aoi), AoiStatus::Ok);
            assert_eq!(aoi_stats_sample_freq(stats, k, &mut s), AoiStatus::Ok);
            assert_eq!(aoi_stats_retransmit_freq(stats, k, &mut r), AoiStatus::Ok);
            assert_eq!(aoi_stats_vqueue_mean(stats, k, &mut x), AoiStatus::Ok);
            assert!(aoi <= 5.05, "user {k} aoi {aoi}");
            assert!(s + r <= 1.0 && x >= 0.0);
        }
        let mut v = 0.0;
        assert_eq!(aoi_stats_avg_aoi(stats, 2, &mut v), AoiStatus::InvalidArgument);
        aoi_stats_free(stats);

        let mut stats = ptr::null_mut();
        assert_eq!(aoi_simulate_forp(cfg, alpha.as_ptr(), phi.as_ptr(), 1, &mut stats), AoiStatus::InvalidArgument);
        assert!(stats.is_null());
        aoi_config_free(cfg);
    }
}

#[test]
fn header_declares_every_export() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/aoi_sched.h");
    let text = std::fs::read_to_string(&header).unwrap();
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20);
    for name in exports {
        assert!(text.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["typedef struct AoiConfig AoiConfig;", "typedef struct AoiSimStats AoiSimStats;", "AOI_STATUS_PANIC = 5"] {
        assert!(text.contains(ty), "{ty}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let main = dir.path().join("main.c");
    std::fs::write(
        &main,
        "#include \"aoi_sched.h\"\n\
         int main(void) {\n\
           AoiConfig *cfg = NULL;\n\
           AoiStatus s = aoi_config_new(2, 0.8, 5.0, 10, &cfg);\n\
           double phi[2], total;\n\
           if (s == AOI_STATUS_OK) s = aoi_forp_optimize(cfg, 0.01, phi, 2, &total);\n\
           aoi_config_free(cfg);\n\
           return s == AOI_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&main)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
