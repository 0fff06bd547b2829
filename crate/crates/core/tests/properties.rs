use proptest::prelude::*;

use aoi_sched::chain::ChainModel;
use aoi_sched::dpp::{self, DppPolicy, UniformRandomPolicy};
use aoi_sched::forp;
use aoi_sched::model::{advance_user, idle_aoi, slot_cost, vqueue_step};
use aoi_sched::ofrp::{self, OfrpUserParams};
use aoi_sched::sim::{self, SimOptions};
use aoi_sched::solver::{self, Method, SolveOptions, StochasticMatrix};
use aoi_sched::{ActionVector, SystemConfig, UserAction, UserState};

fn action() -> impl Strategy<Value = UserAction> {
    prop_oneof![Just(UserAction::Idle), Just(UserAction::Sample), Just(UserAction::Retransmit)]
}

fn user_state(cap: u32) -> impl Strategy<Value = UserState> {
    (1..=cap, any::<bool>(), 0u32..cap, 0.0..1000.0f64).prop_map(move |(aoi, occupied, w, vqueue)| UserState {
        cache: (occupied && w < aoi).then_some(w),
        aoi,
        vqueue,
    })
}

prop_compose! {
    fn system()(k in 1usize..=4, cap in 3u32..=15)(
        p in prop::collection::vec(0.05..=1.0f64, k),
        limit in prop::collection::vec(1.0..=f64::from(cap), k),
        cs in 0.0..10.0f64,
        ctr in 0.0..10.0f64,
        v in 0.0..1000.0f64,
        single in any::<bool>(),
        cap in Just(cap),
        k in Just(k),
    ) -> SystemConfig {
        let mut cfg = SystemConfig::symmetric(k, 0.5, 1.0, cap)
            .with_costs(cs, ctr)
            .with_v_weight(v)
            .with_single_transmitter(single);
        cfg.success_prob = p;
        cfg.aoi_limit = limit;
        cfg
    }
}

fn system_and_states() -> impl Strategy<Value = (SystemConfig, Vec<UserState>)> {
    system().prop_flat_map(|cfg| {
        let states = prop::collection::vec(user_state(cfg.aoi_cap), cfg.num_users);
        (Just(cfg), states)
    })
}

/// Objective written out from the definition, independent of the library scorer.
fn objective(states: &[UserState], actions: &[UserAction], cfg: &SystemConfig) -> f64 {
    let mut total = 0.0;
    for (k, (s, a)) in states.iter().zip(actions).enumerate() {
        let p = cfg.success_prob[k];
        let fail = (s.aoi + 1).min(cfg.aoi_cap) as f64;
        let expected_next = match a {
            UserAction::Idle => fail,
            UserAction::Sample => p * 1.0 + (1.0 - p) * fail,
            UserAction::Retransmit => p * (s.cache.unwrap() + 1) as f64 + (1.0 - p) * fail,
        };
        let cost = match a {
            UserAction::Idle => 0.0,
            UserAction::Sample => cfg.sample_cost + cfg.transmit_cost,
            UserAction::Retransmit => cfg.transmit_cost,
        };
        total += s.vqueue * (expected_next - cfg.aoi_limit[k]) + cfg.v_weight * cost;
    }
    total
}

/// Every feasible action vector, by exhaustive enumeration of `3^K` vectors.
fn feasible(states: &[UserState], cfg: &SystemConfig) -> Vec<Vec<UserAction>> {
    let k = states.len();
    let all = [UserAction::Idle, UserAction::Sample, UserAction::Retransmit];
    let mut out = Vec::new();
    for code in 0..3usize.pow(k as u32) {
        let v: Vec<_> = (0..k).map(|i| all[code / 3usize.pow(i as u32) % 3]).collect();
        let samplers = v.iter().filter(|&&a| a == UserAction::Sample).count();
        let retx = v.iter().filter(|&&a| a == UserAction::Retransmit).count();
        if samplers > 1 || retx > 1 || (cfg.single_transmitter_mode && samplers + retx > 1) {
            continue;
        }
        let useful = v.iter().zip(states).all(|(a, s)| match a {
            UserAction::Retransmit => s.cache.is_some_and(|w| w + 1 < (s.aoi + 1).min(cfg.aoi_cap)),
            _ => true,
        });
        if useful {
            out.push(v);
        }
    }
    out
}

fn irreducible_matrix(n: usize, weights: &[f64], mask: &[bool]) -> StochasticMatrix {
    // a cycle i -> i+1 keeps the chain irreducible, the self-loop aperiodic
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if mask[i * n + j] || j == (i + 1) % n || j == i {
                rows[i][j] = weights[i * n + j];
            }
        }
        let s: f64 = rows[i].iter().sum();
        rows[i].iter_mut().for_each(|x| *x /= s);
    }
    StochasticMatrix::from_dense(&rows).unwrap()
}

prop_compose! {
    fn random_chain()(n in 2usize..=9)(
        weights in prop::collection::vec(0.05..1.0f64, n * n),
        mask in prop::collection::vec(any::<bool>(), n * n),
        perm in Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        n in Just(n),
    ) -> (StochasticMatrix, Vec<usize>) {
        (irreducible_matrix(n, &weights, &mask), perm)
    }
}

fn ofrp_params() -> impl Strategy<Value = OfrpUserParams> {
    (0.05..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0.05..=1.0f64)
        .prop_map(|(alpha, u, share, up)| OfrpUserParams::new(alpha, u, (1.0 - u) * share, up))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn aoi_stays_within_bounds(
        cap in 3u32..=20,
        steps in prop::collection::vec((action(), any::<bool>()), 1..300),
    ) {
        let mut s = UserState::initial();
        for (a, delivered) in steps {
            let a = match a {
                UserAction::Retransmit if !s.can_retransmit(cap) => UserAction::Idle,
                other => other,
            };
            s = advance_user(s, a, delivered, cap);
            prop_assert!((1..=cap).contains(&s.aoi));
            if let Some(w) = s.cache {
                prop_assert!(w <= cap - 2 && w + 1 < s.aoi);
            }
        }
    }

    #[test]
    fn retransmission_beats_idling_when_allowed((cfg, states) in system_and_states()) {
        let cap = cfg.aoi_cap;
        for s in &states {
            if s.can_retransmit(cap) {
                let sent = advance_user(*s, UserAction::Retransmit, true, cap);
                prop_assert!(sent.aoi < idle_aoi(s.aoi, cap));
            }
        }
    }

    #[test]
    fn slot_cost_is_additive(cfg in system(), picks in prop::collection::vec(action(), 4)) {
        let actions = ActionVector::from_actions(picks[..cfg.num_users].to_vec());
        let total = slot_cost(&actions, &cfg);
        let parts: f64 = actions
            .actions()
            .iter()
            .map(|&a| slot_cost(&ActionVector::from_actions(vec![a]), &cfg))
            .sum();
        prop_assert!((total - parts).abs() < 1e-12);
        if cfg.sample_cost + cfg.transmit_cost > 0.0 && cfg.transmit_cost > 0.0 {
            prop_assert_eq!(total == 0.0, actions.is_idle());
        }
    }

    #[test]
    fn vqueue_sample_path_bound(
        limit in 1.0..20.0f64,
        x0 in 0.0..100.0f64,
        aoi in prop::collection::vec(1u32..=20, 1..200),
    ) {
        let mut x = x0;
        let mut arrivals = 0.0;
        for (t, &a) in aoi.iter().enumerate() {
            x = vqueue_step(x, a, limit);
            arrivals += f64::from(a);
            prop_assert!(x >= 0.0);
            prop_assert!(x - x0 >= arrivals - (t + 1) as f64 * limit - 1e-9);
        }
    }

    #[test]
    fn dpp_decision_is_brute_force_argmin((cfg, states) in system_and_states()) {
        let chosen = dpp::decide(&states, &cfg);
        let options = feasible(&states, &cfg);
        prop_assert!(options.iter().any(|v| v.as_slice() == chosen.actions()));
        let best = options.iter().map(|v| objective(&states, v, &cfg)).fold(f64::INFINITY, f64::min);
        let got = objective(&states, chosen.actions(), &cfg);
        prop_assert!(got <= best + 1e-9 * (1.0 + best.abs()), "chosen {got} vs min {best}");
        prop_assert_eq!(dpp::candidates(&states, &cfg).len(), options.len());
    }

    #[test]
    fn dpp_decision_is_scale_invariant((cfg, states) in system_and_states(), e in -3i32..=3) {
        // powers of two scale every score exactly
        let c = 2f64.powi(e);
        let mut scaled_cfg = cfg.clone();
        scaled_cfg.v_weight *= c;
        let scaled: Vec<_> = states.iter().map(|s| UserState { vqueue: s.vqueue * c, ..*s }).collect();
        prop_assert_eq!(dpp::decide(&states, &cfg), dpp::decide(&scaled, &scaled_cfg));
    }

    #[test]
    fn larger_queue_never_turns_action_into_idle(
        (cfg, states) in system_and_states(),
        pick in 0usize..4,
        extra in 0.0..5000.0f64,
    ) {
        let k = pick % cfg.num_users;
        let before = dpp::decide(&states, &cfg);
        if before.get(k).is_active() {
            let mut raised = states.clone();
            raised[k].vqueue += extra;
            let after = dpp::decide(&raised, &cfg);
            prop_assert!(!after.is_idle(), "before {:?} after {:?}", before, after);
        }
    }

    #[test]
    fn stationary_is_permutation_invariant((p, perm) in random_chain()) {
        let opts = SolveOptions::default().with_method(Method::Direct);
        let (pi, _) = solver::solve_stationary(&p, &opts).unwrap();
        let (pi_perm, _) = solver::solve_stationary(&p.permuted(&perm).unwrap(), &opts).unwrap();
        for i in 0..pi.len() {
            prop_assert!((pi[i] - pi_perm[perm[i]]).abs() < 1e-10);
        }
    }

    #[test]
    fn solver_methods_agree((p, _) in random_chain()) {
        let tol = 1e-12;
        let solve = |m| solver::solve_stationary(&p, &SolveOptions::default().with_method(m).with_tol(tol)).unwrap().0;
        let direct = solve(Method::Direct);
        let power = solve(Method::Power);
        let gth = solve(Method::StateReduction);
        prop_assert!((direct.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(solver::residual(&p, &direct) < 1e-12);
        for i in 0..direct.len() {
            prop_assert!(direct[i] >= 0.0);
            prop_assert!((direct[i] - gth[i]).abs() < 10.0 * tol);
            prop_assert!((direct[i] - power[i]).abs() < 10.0 * tol);
        }
    }

    #[test]
    fn forp_closed_form_is_expectation(delta in 0.001..=1.0f64, cap in 1u32..=60) {
        let pi = forp::stationary_closed_form(delta, cap);
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mean: f64 = pi.iter().enumerate().map(|(i, w)| (i + 1) as f64 * w).sum();
        prop_assert!((forp::avg_aoi_closed_form(delta, cap) - mean).abs() < 1e-10);
    }

    #[test]
    fn forp_aoi_decreases_in_delta(a in 0.001..1.0f64, b in 0.001..1.0f64, cap in 3u32..=60) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-6);
        prop_assert!(forp::avg_aoi_closed_form(hi, cap) < forp::avg_aoi_closed_form(lo, cap));
    }

    #[test]
    fn ofrp_rows_are_stochastic(params in ofrp_params(), p in 0.0..=1.0f64, cap in 2u32..=12) {
        let chain = ofrp::build_chain(&params, p, cap).unwrap();
        let m = chain.matrix();
        prop_assert_eq!(m.len(), ofrp::num_states(cap));
        for i in 0..m.len() {
            prop_assert!((m.row_sum(i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ofrp_fast_metrics_match_full_chain(params in ofrp_params(), p in 0.05..=1.0f64, cap in 3u32..=14) {
        let (aoi, theta) = ofrp::evaluate_user(&params, p, cap).unwrap();
        let mut chain: ChainModel<_> = ofrp::build_chain(&params, p, cap).unwrap();
        ofrp::stationary(&mut chain, &params, p).unwrap();
        let costs = aoi_sched::Costs::new(1.0, 5.0);
        let full = ofrp::metrics(&chain, &params, costs).unwrap();
        prop_assert!((aoi - full.avg_aoi).abs() < 1e-8, "{aoi} vs {}", full.avg_aoi);
        prop_assert!((theta - full.theta).abs() < 1e-8);
        prop_assert!((1.0..=f64::from(cap)).contains(&aoi));
    }

    #[test]
    fn ofrp_collapses_to_forp(alpha in 0.05..=1.0f64, u in 0.01..=1.0f64, p in 0.05..=1.0f64, cap in 3u32..=20) {
        let params = OfrpUserParams::new(alpha, u, 0.0, u);
        let costs = aoi_sched::Costs::new(2.0, 5.0);
        let m = ofrp::evaluate(&params, p, cap, costs).unwrap();
        let expected = forp::avg_aoi_closed_form(alpha * u * p, cap);
        prop_assert!((m.avg_aoi - expected).abs() < 1e-8, "{} vs {expected}", m.avg_aoi);
        prop_assert!((m.avg_cost - forp::avg_cost(alpha, u, costs)).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn simulation_statistics_are_consistent(cfg in system(), seed in any::<u64>(), random in any::<bool>()) {
        let cfg = cfg.with_horizon(2000).with_seed(seed);
        let opts = SimOptions::default();
        let stats = if random {
            sim::run(&mut UniformRandomPolicy, &cfg, &opts).unwrap()
        } else {
            sim::run(&mut DppPolicy, &cfg, &opts).unwrap()
        };
        for k in 0..cfg.num_users {
            prop_assert_eq!(stats.aoi_histogram[k].iter().sum::<u64>(), 2000);
            prop_assert!((1.0..=f64::from(cfg.aoi_cap)).contains(&stats.avg_aoi[k]));
            for f in [stats.sample_freq[k], stats.retransmit_freq[k], stats.empty_cache_freq[k]] {
                prop_assert!((0.0..=1.0).contains(&f));
            }
            prop_assert!(stats.sample_freq[k] + stats.retransmit_freq[k] <= 1.0 + 1e-12);
            prop_assert!(stats.deliveries[k] <= stats.attempts[k]);
        }
        let samples: f64 = stats.sample_freq.iter().sum();
        let retx: f64 = stats.retransmit_freq.iter().sum();
        prop_assert!(samples <= 1.0 + 1e-12 && retx <= 1.0 + 1e-12);
        if cfg.single_transmitter_mode {
            prop_assert!(samples + retx <= 1.0 + 1e-12);
        }
        let again = if random {
            sim::run(&mut UniformRandomPolicy, &cfg, &opts).unwrap()
        } else {
            sim::run(&mut DppPolicy, &cfg, &opts).unwrap()
        };
        prop_assert_eq!(stats, again);
    }

    #[test]
    fn loose_limit_bounds_the_queue(cap in 3u32..=12, p in 0.05..=1.0f64, seed in any::<u64>()) {
        let cfg = SystemConfig::symmetric(2, p, f64::from(cap), cap).with_horizon(3000).with_seed(seed);
        let stats = sim::run(&mut DppPolicy, &cfg, &SimOptions::default()).unwrap();
        for k in 0..2 {
            prop_assert!(stats.vqueue_final[k] <= f64::from(cap));
        }
    }
}
