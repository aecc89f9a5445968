//! Property tests over randomly generated scenarios and profiles.

mod common;

use common::*;
use mecgame::baselines::{evaluate_baseline, BaselineKind, SocialParams};
use mecgame::games::{ipoa, ipoa_from_local, IpoaParams};
use mecgame::harness::validate::random_interior_profile;
use mecgame::harness::{generate_scenario, sample_rng, ScenarioSpec};
use mecgame::pricing::{ispa, marginal_utility, price_update, IspaParams};
use mecgame::solver::{grad_disutility, hessian_disutility};
use mecgame::*;
use proptest::prelude::*;

fn small_scenario(m: usize, n_edge: usize, seed: u64) -> SystemScenario {
    generate_scenario(&ScenarioSpec::new(m, 1, n_edge, seed)).unwrap()
}

fn prices_for(sc: &SystemScenario, cloud: f64, edge: f64) -> PriceVector {
    let p: Vec<f64> = sc
        .osps()
        .iter()
        .map(|o| if o.is_edge() { edge } else { cloud })
        .collect();
    PriceVector::per_gcycle(&p, sc).unwrap()
}

fn interior(sc: &SystemScenario, seed: u64) -> StrategyProfile {
    random_interior_profile(sc, &mut sample_rng(seed, 0)).unwrap()
}

fn inf_norm<'a>(v: impl Iterator<Item = &'a f64>) -> f64 {
    v.fold(0.0, |a, b| a.max(b.abs()))
}

fn tight_ipoa() -> IpoaParams {
    IpoaParams {
        sigma_conv: 1e-9,
        max_outer_iters: 2000,
        ..IpoaParams::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn local_delay_falls_as_offload_grows(seed in 0u64..1000, s1 in 0.0f64..1.0, s2 in 0.0f64..1.0) {
        let sc = small_scenario(3, 1, seed);
        let d = sc.device(0).clone();
        // With every task kept local, delay per task is the local M/M/1 sojourn
        // at arrival rate (1 - s) lambda.
        let local = |s: f64| {
            let mut dev = d.clone();
            dev.lambda *= 1.0 - s;
            let sc2 = sc.with_device(0, dev).unwrap();
            cost_breakdown(&sc2, 0, &StrategyProfile::zeros(3, sc.n()), &sc.min_prices()).unwrap().delay
        };
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        prop_assert!(local(hi) <= local(lo));
    }

    #[test]
    fn payment_is_linear_in_prices(seed in 0u64..1000, c in 0.5f64..20.0) {
        let sc = small_scenario(4, 2, seed);
        let alpha = interior(&sc, seed);
        let p = prices_for(&sc, 0.2, 0.1);
        let scaled = PriceVector::new(p.as_slice().iter().map(|v| v * c).collect(), &sc).unwrap();
        for i in 0..sc.m() {
            let a = cost_breakdown(&sc, i, &alpha, &p).unwrap().payment;
            let b = cost_breakdown(&sc, i, &alpha, &scaled).unwrap().payment;
            prop_assert!(rel_close(b, c * a, 1e-12));
        }
    }

    #[test]
    fn others_only_matter_through_edge_columns(seed in 0u64..1000, h in 1e-3f64..1e-2) {
        let sc = small_scenario(4, 2, seed);
        let alpha = interior(&sc, seed);
        let p = prices_for(&sc, 0.2, 0.1);
        let before = cost_breakdown(&sc, 0, &alpha, &p).unwrap();
        for j in 0..sc.n() {
            let mut moved = alpha.clone();
            moved.set(1, j, moved.get(1, j) * (1.0 - h));
            let after = cost_breakdown(&sc, 0, &moved, &p).unwrap();
            if sc.osps()[j].is_edge() {
                prop_assert!(after.delay < before.delay);
            } else {
                prop_assert_eq!(after, before);
            }
        }
    }

    #[test]
    fn breakdown_is_continuous_in_the_interior(seed in 0u64..1000) {
        let sc = small_scenario(4, 2, seed);
        let alpha = interior(&sc, seed);
        let p = prices_for(&sc, 0.2, 0.1);
        let base = cost_breakdown(&sc, 2, &alpha, &p).unwrap();
        for j in 0..sc.n() {
            let mut near = alpha.clone();
            near.set(2, j, near.get(2, j) + 1e-9);
            let b = cost_breakdown(&sc, 2, &near, &p).unwrap();
            for (x, y) in [(base.delay, b.delay), (base.energy, b.energy), (base.payment, b.payment), (base.disutility, b.disutility)] {
                prop_assert!(x.is_finite() && x >= 0.0);
                prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn analytic_derivatives_match_central_differences(seed in 0u64..1000, i in 0usize..5) {
        let sc = small_scenario(5, 3, seed);
        let alpha = interior(&sc, seed);
        let p = prices_for(&sc, 0.2, 0.1);
        let g = grad_disutility(&sc, i, &alpha, &p).unwrap().g;
        let hess = hessian_disutility(&sc, i, &alpha).unwrap();
        let step = 1e-6;
        let mut grad_err: f64 = 0.0;
        let mut hess_err: f64 = 0.0;
        for j in 0..sc.n() {
            let mut up = alpha.clone();
            up.set(i, j, up.get(i, j) + step);
            let mut dn = alpha.clone();
            dn.set(i, j, dn.get(i, j) - step);
            let fd = (disutility(&sc, i, &up, &p).unwrap() - disutility(&sc, i, &dn, &p).unwrap()) / (2.0 * step);
            grad_err = grad_err.max((fd - g[j]).abs());
            let gu = grad_disutility(&sc, i, &up, &p).unwrap().g;
            let gd = grad_disutility(&sc, i, &dn, &p).unwrap().g;
            for a in 0..sc.n() {
                hess_err = hess_err.max(((gu[a] - gd[a]) / (2.0 * step) - hess.h[(a, j)]).abs());
            }
        }
        prop_assert!(grad_err / (1.0 + inf_norm(g.iter())) <= 1e-5);
        prop_assert!(hess_err / (1.0 + inf_norm(hess.h.iter())) <= 1e-4);
        prop_assert_eq!(hess.h.clone(), hess.h.transpose());
    }

    #[test]
    fn disutility_is_convex_along_segments(seed in 0u64..1000, i in 0usize..4) {
        let sc = small_scenario(4, 2, seed);
        let a = interior(&sc, seed);
        let b = random_interior_profile(&sc, &mut sample_rng(seed, 1)).unwrap();
        let p = prices_for(&sc, 0.2, 0.1);
        let dir: Vec<f64> = a.row(i).iter().zip(b.row(i)).map(|(x, y)| y - x).collect();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let mut q = a.clone();
            for j in 0..sc.n() {
                q.set(i, j, a.get(i, j) + t * dir[j]);
            }
            let g = grad_disutility(&sc, i, &q, &p).unwrap().g;
            let slope: f64 = g.iter().zip(&dir).map(|(x, y)| x * y).sum();
            prop_assert!(slope >= prev - 1e-12 * slope.abs().max(1.0));
            prev = slope;
        }
    }

    #[test]
    fn price_update_never_goes_below_cost(seed in 0u64..1000, mu in -1e12f64..1e12) {
        let sc = small_scenario(2, 1, seed);
        let p = sc.min_prices();
        let params = IspaParams::default();
        let probe = marginal_utility(&sc, 0, &p, &params).unwrap();
        let forced = mecgame::pricing::MarginalUtility { value: mu, ..probe };
        for j in 0..sc.n() {
            prop_assert!(price_update(&sc, j, &p, &forced, &params) >= sc.osps()[j].p_min);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn every_ipoa_round_is_feasible(seed in 0u64..1000) {
        let sc = small_scenario(6, 2, seed);
        let p = prices_for(&sc, 0.2, 0.1);
        let params = IpoaParams { record_profiles: true, max_outer_iters: 500, ..IpoaParams::default() };
        let run = ipoa_from_local(&sc, &p, &params).unwrap();
        prop_assert!(run.converged);
        for r in &run.trace.rounds {
            let prof = r.profile.as_ref().unwrap();
            let rep = check_feasible(&sc, prof, &p, &Margins::default());
            // The all-local start is stable but may exceed a delay cap.
            prop_assert!(rep.is_stable() && (r.round == 0 || rep.feasible), "round {}: {:?}", r.round, rep.tags());
        }
        let deltas: Vec<f64> = run.trace.rounds.iter().filter_map(|r| r.frobenius_delta).collect();
        let k = deltas.len();
        prop_assert!(k >= 2 && deltas[k - 1] <= params.sigma_conv && deltas[k - 2] <= params.sigma_conv);
    }

    #[test]
    fn ipoa_is_anonymous(seed in 0u64..1000, rot in 1usize..5) {
        let sc = small_scenario(5, 2, seed);
        let p = prices_for(&sc, 0.2, 0.1);
        let perm: Vec<usize> = (0..5).map(|k| (k + rot) % 5).collect();
        let base = ipoa_from_local(&sc, &p, &tight_ipoa()).unwrap().profile;
        let swapped = ipoa_from_local(&sc.permuted(&perm).unwrap(), &p, &tight_ipoa()).unwrap().profile;
        let expect = base.permuted(&perm);
        for (x, y) in swapped.as_slice().iter().zip(expect.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-7, "{x} vs {y}");
        }
    }

    #[test]
    fn raising_a_price_never_raises_its_load(seed in 0u64..1000, j in 0usize..2, bump in 1.05f64..2.0) {
        let sc = small_scenario(3, 1, seed);
        let p = prices_for(&sc, 0.15, 0.1);
        let mut raised = p.as_slice().to_vec();
        raised[j] *= bump;
        let raised = PriceVector::new(raised, &sc).unwrap();
        let before = ipoa_from_local(&sc, &p, &tight_ipoa()).unwrap().profile;
        let after = ipoa(&sc, &raised, &tight_ipoa(), &before).unwrap().profile;
        let (lb, la) = (sc.column_load(&before, j, None), sc.column_load(&after, j, None));
        prop_assert!(la <= lb + 1e-6 * sc.osps()[j].service_rate, "{la} > {lb}");
    }

    #[test]
    fn local_only_ignores_transmit_power(seed in 0u64..1000) {
        let mean = |w: f64| {
            let sc = generate_scenario(&ScenarioSpec::new(10, 1, 3, seed).fixed("power_tx_w", w)).unwrap();
            let out = evaluate_baseline(&sc, BaselineKind::LocalOnly, &sc.min_prices(), &SocialParams::default()).unwrap();
            out.mean_disutility
        };
        let base = mean(0.4);
        prop_assert_eq!(base, mean(0.1));
        prop_assert_eq!(base, mean(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn ispa_prices_respect_cost_and_repeat_exactly(seed in 0u64..1000) {
        let sc = small_scenario(4, 1, seed);
        let params = IspaParams { max_iters: 3, ..IspaParams::default() };
        let a = ispa(&sc, &params, &sc.min_prices()).unwrap();
        for r in &a.trace.records {
            for (p, o) in r.prices.iter().zip(sc.osps()) {
                prop_assert!(*p >= o.p_min);
            }
        }
        let b = ispa(&sc, &params, &sc.min_prices()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn marginal_utility_reproduces_from_its_probes(seed in 0u64..1000, j in 0usize..2) {
        let sc = small_scenario(4, 1, seed);
        let p = prices_for(&sc, 0.2, 0.1);
        let mu = marginal_utility(&sc, j, &p, &IspaParams::default()).unwrap();
        prop_assert_eq!(mu.value, (mu.plus_eval - mu.minus_eval) / mu.span);
        let at_cost = marginal_utility(&sc, j, &sc.min_prices(), &IspaParams::default()).unwrap();
        prop_assert!(at_cost.one_sided);
    }
}

#[test]
fn fixed_seed_runs_repeat_bit_for_bit() {
    let sc = reference_scenario(9);
    let p = follower_prices(&sc);
    let a = ipoa_from_local(&sc, &p, &IpoaParams::default()).unwrap();
    let b = ipoa_from_local(&reference_scenario(9), &p, &IpoaParams::default()).unwrap();
    let (mut ta, mut tb) = (Vec::new(), Vec::new());
    a.trace.write_jsonl(&mut ta).unwrap();
    b.trace.write_jsonl(&mut tb).unwrap();
    assert_eq!(ta, tb);
}
