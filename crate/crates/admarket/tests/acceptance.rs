//! Acceptance suite: one test per release criterion, each printing a
//! single pass/fail line (run with `--nocapture` to see them). Random
//! inputs are seeded, so every run checks the same instances.

use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use admarket::audit::{
    self, brute_force_optimal, check_bb, check_ic, check_ic_all, check_ir, competitive_ratio,
    grid_for_advertiser, prm_bound, tpm_bound, CheckStatus, Mechanism,
};
use admarket::canonical::full_canonical;
use admarket::gen::{generate, GeneratorSpec};
use admarket::market::{Advertiser, AgentId, MarketInstance, Mediator, Reports};
use admarket::money::Money;
use admarket::prm::{run_prm, PrmConfig};
use admarket::tpm::{run_tpm, TpmConfig};

fn money(rng: &mut StdRng, max_num: u64, max_den: u64) -> Money {
    Money::from_ratio(rng.gen_range(0..=max_num), rng.gen_range(1..=max_den))
}

/// Small random market: up to `max_mediators`/`max_advertisers` agents,
/// user counts and capacities bounded by gamma, amounts on a coarse
/// rational grid so ties are common.
fn small_instance(rng: &mut StdRng, max_mediators: usize, max_advertisers: usize, gamma: usize) -> MarketInstance {
    let n_mediators = rng.gen_range(1..=max_mediators);
    let n_advertisers = rng.gen_range(1..=max_advertisers);
    let mediators = (0..n_mediators)
        .map(|i| {
            let count = rng.gen_range(0..=gamma);
            let costs = (0..count).map(|_| money(rng, 32, 4)).collect();
            Mediator::new(AgentId::mediator(i as u32), costs)
        })
        .collect();
    let advertisers = (0..n_advertisers)
        .map(|i| Advertiser {
            id: AgentId::advertiser(i as u32),
            value: money(rng, 32, 4),
            capacity: rng.gen_range(1..=gamma),
        })
        .collect();
    MarketInstance::new(mediators, advertisers).unwrap()
}

/// Like `small_instance` but biased so the reduced trade usually clears
/// the 4*gamma threshold: agent counts lean maximal and two thirds of
/// the draws put every cost below every value. The rest overlap the
/// ranges, so no-trade and partial-trade margins stay covered.
fn trading_instance(rng: &mut StdRng, gamma: usize) -> MarketInstance {
    let n_mediators = rng.gen_range(4..=6usize);
    let n_advertisers = rng.gen_range(4..=6usize);
    let separated = rng.gen_range(0..3) > 0;
    let mediators = (0..n_mediators)
        .map(|i| {
            let count = if separated {
                rng.gen_range(1..=gamma)
            } else {
                rng.gen_range(0..=gamma)
            };
            let costs = (0..count)
                .map(|_| if separated { money(rng, 15, 4) } else { money(rng, 32, 4) })
                .collect();
            Mediator::new(AgentId::mediator(i as u32), costs)
        })
        .collect();
    let advertisers = (0..n_advertisers)
        .map(|i| Advertiser {
            id: AgentId::advertiser(i as u32),
            value: if separated {
                Money::from_ratio(rng.gen_range(16..=63), 4)
            } else {
                money(rng, 32, 4)
            },
            capacity: rng.gen_range(1..=gamma),
        })
        .collect();
    MarketInstance::new(mediators, advertisers).unwrap()
}

fn report_line(criterion: &str, ok: bool, elapsed: std::time::Duration, detail: &str) {
    println!(
        "acceptance {criterion}: {} ({:.1}s) {detail}",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
}

// Criterion 1: on 500 seeded random instances with at most 7 users and
// 7 slots, the canonical assignment's gain equals the brute-force
// optimum exactly.
#[test]
fn c1_canonical_matches_brute_force() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xC1);
    let mut failures = 0usize;
    for _ in 0..500 {
        // Mediators and advertisers of mixed shapes under the 7-element
        // budgets on both sides.
        let mut user_budget = rng.gen_range(0..=7usize);
        let mut mediators = Vec::new();
        while user_budget > 0 {
            let take = rng.gen_range(1..=user_budget.min(3));
            let costs = (0..take).map(|_| money(&mut rng, 32, 4)).collect();
            mediators.push(Mediator::new(AgentId::mediator(mediators.len() as u32), costs));
            user_budget -= take;
        }
        let mut slot_budget = rng.gen_range(0..=7usize);
        let mut advertisers = Vec::new();
        while slot_budget > 0 {
            let take = rng.gen_range(1..=slot_budget.min(3));
            advertisers.push(Advertiser {
                id: AgentId::advertiser(advertisers.len() as u32),
                value: money(&mut rng, 32, 4),
                capacity: take,
            });
            slot_budget -= take;
        }
        let instance = MarketInstance::new(mediators, advertisers).unwrap();
        let canonical = full_canonical(&instance).gain_from_trade();
        let oracle = brute_force_optimal(&instance.all_users(), &instance.all_slots()).unwrap();
        if canonical != oracle {
            failures += 1;
        }
    }
    let ok = failures == 0;
    report_line("C1 canonical-optimality", ok, start.elapsed(), "500 instances vs brute force");
    assert!(ok, "{failures} instances disagreed with the oracle");
}

// Criterion 2: 1000 seeded instances (<=6 mediators, <=6 advertisers,
// gamma <= 3): truthful runs satisfy BB and IR exactly and the
// structural invariants all hold.
#[test]
fn c2_prm_economic_properties() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xC2);
    let mut failures = Vec::new();
    for case in 0..1000 {
        let gamma = rng.gen_range(1..=3usize);
        let instance = trading_instance(&mut rng, gamma);
        let reports = Reports::truthful(&instance);
        let (outcome, trace) =
            run_prm(&instance, &reports, PrmConfig::new(gamma).unwrap()).unwrap();
        if !check_bb(&outcome).holds {
            failures.push(format!("case {case}: bb"));
        }
        if !check_ir(&instance, &outcome).holds {
            failures.push(format!("case {case}: ir"));
        }
        for check in audit::prm_invariant_suite(&instance, &outcome, &trace, gamma) {
            if check.status == CheckStatus::Fail {
                failures.push(format!("case {case}: {}", check.name));
            }
        }
    }
    let ok = failures.is_empty();
    report_line("C2 prm-bb-ir-invariants", ok, start.elapsed(), "1000 truthful runs");
    assert!(ok, "failures: {failures:?}");
}

// Criterion 3: 200 instances swept with the full deviation grid for
// every agent find zero profitable deviations, while the first-price
// negative control is flagged on at least 95% of the instances with
// any trade.
#[test]
fn c3_prm_incentive_falsification() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xC3);
    // Gammas lean small so that most markets clear the 4*gamma trade
    // reduction and the control actually gets exercised.
    let cases: Vec<(usize, MarketInstance)> = (0..200)
        .map(|i| {
            let gamma = [1, 1, 1, 2, 2, 3][i % 6];
            (gamma, trading_instance(&mut rng, gamma))
        })
        .collect();

    let results: Vec<(bool, Option<bool>)> = cases
        .par_iter()
        .map(|(gamma, instance)| {
            let config = PrmConfig::new(*gamma).unwrap();
            let honest = Mechanism::Prm(config);
            let clean = check_ic_all(instance, &honest)
                .unwrap()
                .iter()
                .all(|v| !v.violated);

            // The control runs where the truthful outcome trades at all.
            let reports = Reports::truthful(instance);
            let (outcome, _) = run_prm(instance, &reports, config).unwrap();
            let control_flagged = if outcome.assignment.is_empty() {
                None
            } else {
                let broken = Mechanism::PrmFirstPrice(config);
                let mut flagged = false;
                for a in instance.advertisers() {
                    let grid = grid_for_advertiser(instance, &broken, a.id).unwrap();
                    if check_ic(instance, &broken, &grid).unwrap().violated {
                        flagged = true;
                        break;
                    }
                }
                Some(flagged)
            };
            (clean, control_flagged)
        })
        .collect();

    let all_clean = results.iter().all(|(clean, _)| *clean);
    let control_runs = results.iter().filter(|(_, c)| c.is_some()).count();
    let control_hits = results.iter().filter(|(_, c)| *c == Some(true)).count();
    let rate = control_hits as f64 / control_runs.max(1) as f64;
    let ok = all_clean && rate >= 0.95;
    report_line(
        "C3 prm-incentive-grids",
        ok,
        start.elapsed(),
        &format!("200 sweeps clean={all_clean}, control flagged {control_hits}/{control_runs}"),
    );
    assert!(ok, "clean={all_clean} control rate {rate}");
}

// Criterion 4: 100 uniform-preset instances with gamma = 1 and realized
// tau >= 100; the realized gain is at least (1 - 5/tau) of optimal in
// every single instance, in exact arithmetic.
#[test]
fn c4_prm_competitive_ratio() {
    let start = Instant::now();
    let results: Vec<Result<(), String>> = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let spec = GeneratorSpec::double_auction(300, 40_000 + i);
            let instance = generate(&spec).unwrap();
            let full = full_canonical(&instance);
            let tau = full.tau();
            if tau < 100 {
                return Err(format!("seed {i}: tau {tau} below 100"));
            }
            let reports = Reports::truthful(&instance);
            let (outcome, _) =
                run_prm(&instance, &reports, PrmConfig::new(1).unwrap()).unwrap();
            let verdict = competitive_ratio(
                &[outcome.assignment.gain_from_trade()],
                &full.gain_from_trade(),
                &prm_bound(1, tau),
            );
            let strong_enough = prm_bound(1, tau) >= BigRational::new(19.into(), 20.into());
            if verdict.holds && !verdict.vacuous && strong_enough {
                Ok(())
            } else {
                Err(format!("seed {i}: ratio {:?} bound {}", verdict.ratio, verdict.bound))
            }
        })
        .collect();
    let failures: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    let ok = failures.is_empty();
    report_line("C4 prm-ratio", ok, start.elapsed(), "100 instances, tau >= 100, exact");
    assert!(ok, "failures: {failures:?}");
}

// Criterion 5: 1000 (instance, seed) pairs: truthful TPM runs satisfy
// BB and IR exactly, and the conditional inclusion checks never fail
// when the concentration event makes them applicable.
#[test]
fn c5_tpm_economic_properties() {
    let start = Instant::now();
    let mut failures = Vec::new();

    // 700 mid-size uniform markets at the exact promise alpha = 1/tau.
    let mid: Vec<(u64, MarketInstance, BigRational)> = (0..700u64)
        .into_par_iter()
        .map(|i| {
            let n = 160 + (i as usize % 5) * 20;
            let instance = generate(&GeneratorSpec::double_auction(n, 50_000 + i)).unwrap();
            let tau = full_canonical(&instance).tau();
            let alpha = BigRational::new(BigInt::one(), tau.into());
            (i, instance, alpha)
        })
        .collect();
    // 300 small rough markets at alpha = 1 (degenerate thresholds).
    let mut rng = StdRng::seed_from_u64(0xC5);
    let small: Vec<(u64, MarketInstance, BigRational)> = (0..300u64)
        .map(|i| {
            let gamma = rng.gen_range(1..=3usize);
            (700 + i, small_instance(&mut rng, 6, 6, gamma), BigRational::one())
        })
        .collect();

    let checks: Vec<Vec<String>> = mid
        .par_iter()
        .chain(small.par_iter())
        .map(|(i, instance, alpha)| {
            let mut local = Vec::new();
            let reports = Reports::truthful(instance);
            let config = TpmConfig::new(alpha.clone(), 90_000 + i).unwrap();
            let (outcome, trace) = run_tpm(instance, &reports, &config).unwrap();
            if !check_bb(&outcome).holds {
                local.push(format!("pair {i}: bb"));
            }
            if !check_ir(instance, &outcome).holds {
                local.push(format!("pair {i}: ir"));
            }
            for check in audit::tpm_invariant_suite(instance, &trace, alpha) {
                if check.status == CheckStatus::Fail {
                    local.push(format!("pair {i}: {} ({})", check.name, check.detail));
                }
            }
            local
        })
        .collect();
    failures.extend(checks.into_iter().flatten());

    let ok = failures.is_empty();
    report_line("C5 tpm-bb-ir-inclusions", ok, start.elapsed(), "1000 (instance, seed) pairs");
    assert!(ok, "failures: {failures:?}");
}

// Criterion 6: universal truthfulness probes: 50 instances x 50 fixed
// seeds, full grid per agent, no profitable deviation at any seed.
#[test]
fn c6_tpm_universal_truthfulness() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xC6);
    let alphas = [
        BigRational::new(BigInt::one(), 1000.into()),
        BigRational::new(BigInt::one(), 8.into()),
        BigRational::one(),
    ];
    let cases: Vec<(MarketInstance, BigRational)> = (0..50)
        .map(|i| {
            let instance = small_instance(&mut rng, 5, 5, 2);
            (instance, alphas[i % alphas.len()].clone())
        })
        .collect();

    let violations: Vec<String> = cases
        .par_iter()
        .enumerate()
        .flat_map(|(i, (instance, alpha))| {
            (0..50u64)
                .into_par_iter()
                .filter_map(move |seed| {
                    let config =
                        TpmConfig::new(alpha.clone(), 1000 * i as u64 + seed).unwrap();
                    let mech = Mechanism::Tpm(config);
                    let bad: Vec<String> = check_ic_all(instance, &mech)
                        .unwrap()
                        .into_iter()
                        .filter(|v| v.violated)
                        .map(|v| {
                            format!(
                                "instance {i} seed {seed}: {} gains via {}",
                                v.agent,
                                v.best_deviation.unwrap_or_default()
                            )
                        })
                        .collect();
                    if bad.is_empty() {
                        None
                    } else {
                        Some(bad)
                    }
                })
                .flatten()
                .collect::<Vec<_>>()
        })
        .collect();

    let ok = violations.is_empty();
    report_line("C6 tpm-universal-truthfulness", ok, start.elapsed(), "50 instances x 50 seeds");
    assert!(ok, "violations: {violations:?}");
}

// Criterion 7: the large-market ratio check. One uniform gamma = 1
// instance with 400k users and 400k unit slots, alpha = 1/tau; over 50
// seeds the mean gain is at least half of optimal (the theorem bound is
// about 0.52 at this alpha; 0.02 is the Monte Carlo allowance).
#[test]
fn c7_tpm_ratio_at_scale() {
    let start = Instant::now();
    let instance = generate(&GeneratorSpec::double_auction(400_000, 777)).unwrap();
    let full = full_canonical(&instance);
    let tau = full.tau();
    assert!(
        (190_000..=210_000).contains(&tau),
        "preset should land tau near 200k, got {tau}"
    );
    let opt = full.gain_from_trade();
    drop(full);
    let alpha = BigRational::new(BigInt::one(), tau.into());
    let bound = tpm_bound(&alpha);
    let reports = Reports::truthful(&instance);

    let gfts: Vec<BigRational> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let config = TpmConfig::new(alpha.clone(), seed).unwrap();
            let (outcome, _) = run_tpm(&instance, &reports, &config).unwrap();
            outcome.assignment.gain_from_trade()
        })
        .collect();

    let target = BigRational::new(BigInt::one(), 2.into());
    let verdict = competitive_ratio(&gfts, &opt, &target);
    let mean_ratio = verdict.ratio.clone().expect("opt is positive at this scale");
    let ok = verdict.holds;
    report_line(
        "C7 tpm-ratio-at-scale",
        ok,
        start.elapsed(),
        &format!(
            "tau={tau}, theorem bound ~{:.4}, mean ratio over 50 seeds ~{:.4}",
            bound.to_f64().unwrap(),
            mean_ratio.to_f64().unwrap()
        ),
    );
    assert!(ok, "mean ratio {} below 1/2", mean_ratio);
}

// Criterion 8: the 8x8 gamma = 1 fixture reproduces the hand-derived
// trace: thresholds (4,4,4,3,3,3,3,3), winners 16/15/14 charged 13,
// three mediators paid 4, gain 39, surplus 27.
#[test]
fn c8_fixture_regression() {
    let start = Instant::now();
    let mediators = (0..8)
        .map(|i| Mediator::new(AgentId::mediator(i), vec![Money::from_u64(i as u64 + 1)]))
        .collect();
    let advertisers = (0..8)
        .map(|i| Advertiser {
            id: AgentId::advertiser(i),
            value: Money::from_u64(16 - i as u64),
            capacity: 1,
        })
        .collect();
    let instance = MarketInstance::new(mediators, advertisers).unwrap();
    let reports = Reports::truthful(&instance);
    let (outcome, trace) = run_prm(&instance, &reports, PrmConfig::new(1).unwrap()).unwrap();

    let mut ok = true;
    let expected_thresholds = [4u64, 4, 4, 3, 3, 3, 3, 3];
    for (i, want) in expected_thresholds.iter().enumerate() {
        ok &= trace.thresholds[&AgentId::mediator(i as u32)].finite_amount()
            == Some(&Money::from_u64(*want));
    }
    for ord in 0..8u32 {
        let charge = &outcome.advertiser_charges[&AgentId::advertiser(ord)];
        let payment = &outcome.mediator_payments[&AgentId::mediator(ord)];
        ok &= *charge == if ord < 3 { Money::from_u64(13) } else { Money::zero() };
        ok &= *payment == if ord < 3 { Money::from_u64(4) } else { Money::zero() };
    }
    let winners: Vec<u64> = outcome
        .assignment
        .pairs()
        .iter()
        .map(|(_, s)| s.value.amount().to_integer().to_u64().unwrap())
        .collect();
    ok &= {
        let mut w = winners.clone();
        w.sort_unstable();
        w == vec![14, 15, 16]
    };
    ok &= outcome.assignment.gain_from_trade() == BigRational::from_integer(39.into());
    ok &= check_bb(&outcome).surplus == BigRational::from_integer(27.into());

    report_line("C8 fixture-regression", ok, start.elapsed(), "8x8 gamma=1 trace");
    assert!(ok);
}
