//! Independent oracles and property checkers.
//!
//! Everything here validates mechanism behavior from the outside:
//! brute-force optima computed by exhaustive enumeration, exact budget
//! balance and individual rationality verdicts, grid-based searches for
//! profitable misreports, and the structural invariants both mechanisms
//! are supposed to maintain. All verdicts use exact arithmetic; a grid
//! search can only falsify incentive compatibility, never prove it.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::canonical::{canonical_assignment, full_canonical};
use crate::market::{
    AdvertiserReport, AgentId, AgentKind, MarketInstance, ModelError, Outcome, Reports,
};
use crate::money::Money;
use crate::prm::{run_prm, PrmConfig, PrmError, PrmTrace};
use crate::tpm::{alpha_cbrt_upper, run_tpm, TpmConfig, TpmError, TpmTrace};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("oracle scale exceeded: {users} users x {slots} slots (limit 8x8)")]
    ScaleExceeded { users: usize, slots: usize },
    #[error(transparent)]
    Prm(#[from] PrmError),
    #[error(transparent)]
    Tpm(#[from] TpmError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

// --- brute force matching oracle ---

/// Maximum gain from trade over all injective user-to-slot matchings,
/// found by plain exhaustive enumeration (every user either skips or
/// takes one unused slot). The empty matching is always considered, so
/// the result is never negative. Limited to 8x8; the point of this
/// routine is independence, not speed.
pub fn brute_force_optimal(
    users: &[crate::market::User],
    slots: &[crate::market::Slot],
) -> Result<BigRational, AuditError> {
    if users.len() > 8 || slots.len() > 8 {
        return Err(AuditError::ScaleExceeded { users: users.len(), slots: slots.len() });
    }
    let mut used = vec![false; slots.len()];
    Ok(explore(users, slots, 0, &mut used))
}

fn explore(
    users: &[crate::market::User],
    slots: &[crate::market::Slot],
    i: usize,
    used: &mut [bool],
) -> BigRational {
    if i == users.len() {
        return BigRational::zero();
    }
    let mut best = explore(users, slots, i + 1, used);
    for j in 0..slots.len() {
        if used[j] {
            continue;
        }
        used[j] = true;
        let with = slots[j].value.amount() - users[i].cost.amount()
            + explore(users, slots, i + 1, used);
        used[j] = false;
        if with > best {
            best = with;
        }
    }
    best
}

/// Maximum numeric welfare over all feasible unit allocations, by
/// exhaustive enumeration; the independent side of the VCG charge check.
/// `skip` removes one bidder, which is how the externality terms are
/// obtained.
pub fn brute_force_vcg_welfare(
    item_count: usize,
    bidders: &[crate::vcg::Bidder],
    skip: Option<usize>,
) -> BigRational {
    fn go(
        bidders: &[crate::vcg::Bidder],
        skip: Option<usize>,
        i: usize,
        left: usize,
    ) -> BigRational {
        if i == bidders.len() {
            return BigRational::zero();
        }
        if Some(i) == skip {
            return go(bidders, skip, i + 1, left);
        }
        let mut best = go(bidders, skip, i + 1, left);
        let cap = bidders[i].capacity.min(left);
        if let Some(value) = bidders[i].value.finite_amount() {
            for take in 1..=cap {
                let welfare = value.amount() * BigRational::from_integer(take.into())
                    + go(bidders, skip, i + 1, left - take);
                if welfare > best {
                    best = welfare;
                }
            }
        }
        best
    }
    go(bidders, skip, 0, item_count)
}

// --- mechanisms under audit ---

/// The mechanism being audited. `PrmFirstPrice` is a deliberately broken
/// variant that charges winners their own bid instead of the VCG price;
/// it exists as a negative control so the incentive auditor can be shown
/// to catch a real violation.
#[derive(Debug, Clone)]
pub enum Mechanism {
    Prm(PrmConfig),
    PrmFirstPrice(PrmConfig),
    Tpm(TpmConfig),
}

impl Mechanism {
    pub fn run(
        &self,
        instance: &MarketInstance,
        reports: &Reports,
    ) -> Result<Outcome, AuditError> {
        match self {
            Mechanism::Prm(config) => Ok(run_prm(instance, reports, *config)?.0),
            Mechanism::PrmFirstPrice(config) => {
                let (mut outcome, _) = run_prm(instance, reports, *config)?;
                let mut assigned: BTreeMap<AgentId, usize> = BTreeMap::new();
                for (_, slot) in outcome.assignment.pairs() {
                    *assigned.entry(slot.advertiser).or_insert(0) += 1;
                }
                for (id, charge) in outcome.advertiser_charges.iter_mut() {
                    let n = assigned.get(id).copied().unwrap_or(0);
                    let bid = reports.advertisers[id].value.amount();
                    *charge = Money::new(bid * BigRational::from_integer(n.into()))
                        .expect("bids are nonnegative");
                }
                Ok(outcome)
            }
            Mechanism::Tpm(config) => Ok(run_tpm(instance, reports, config)?.0),
        }
    }
}

// --- utilities of agents with true preferences ---

/// Utility of `agent` under `outcome`, with true preferences taken from
/// `instance`. For mediators, `kept` maps the reported user indices back
/// to true user indices (identity when absent, i.e. a truthful report).
pub fn agent_utility(
    instance: &MarketInstance,
    agent: AgentId,
    outcome: &Outcome,
    kept: Option<&[usize]>,
) -> BigRational {
    match agent.kind {
        AgentKind::Advertiser => {
            let advertiser = instance.advertiser(agent).expect("known advertiser");
            let assigned = outcome
                .assignment
                .pairs()
                .iter()
                .filter(|(_, s)| s.advertiser == agent)
                .count();
            // Value accrues only up to the true capacity.
            let valued = assigned.min(advertiser.capacity);
            let charge = outcome
                .advertiser_charges
                .get(&agent)
                .map(|m| m.amount().clone())
                .unwrap_or_else(BigRational::zero);
            advertiser.value.amount() * BigRational::from_integer(valued.into()) - charge
        }
        AgentKind::Mediator => {
            let mediator = instance.mediator(agent).expect("known mediator");
            let payment = outcome
                .mediator_payments
                .get(&agent)
                .map(|m| m.amount().clone())
                .unwrap_or_else(BigRational::zero);
            let mut forwarded = BigRational::zero();
            for (u, _) in outcome.assignment.pairs() {
                if u.mediator != agent {
                    continue;
                }
                let true_index = kept.map(|k| k[u.index]).unwrap_or(u.index);
                forwarded += mediator.users[true_index].cost.amount();
            }
            payment - forwarded
        }
        AgentKind::Dummy => BigRational::zero(),
    }
}

// --- budget balance and individual rationality ---

#[derive(Debug, Clone)]
pub struct BbVerdict {
    pub holds: bool,
    pub surplus: BigRational,
}

/// Budget balance: total advertiser charges cover total mediator
/// payments, compared exactly.
pub fn check_bb(outcome: &Outcome) -> BbVerdict {
    let surplus = outcome.total_charges() - outcome.total_payments();
    BbVerdict { holds: !surplus.is_negative(), surplus }
}

#[derive(Debug, Clone)]
pub struct IrVerdict {
    pub holds: bool,
    pub utilities: BTreeMap<AgentId, BigRational>,
}

/// Individual rationality of a truthful run: every agent's utility is
/// nonnegative, exactly.
pub fn check_ir(instance: &MarketInstance, outcome: &Outcome) -> IrVerdict {
    let mut utilities = BTreeMap::new();
    for m in instance.mediators() {
        utilities.insert(m.id, agent_utility(instance, m.id, outcome, None));
    }
    for a in instance.advertisers() {
        utilities.insert(a.id, agent_utility(instance, a.id, outcome, None));
    }
    let holds = utilities.values().all(|u| !u.is_negative());
    IrVerdict { holds, utilities }
}

// --- deviation grids and incentive checks ---

#[derive(Debug, Clone)]
pub struct GridPoint {
    pub reports: Reports,
    /// For mediator deviations: reported index -> true index.
    pub kept: Option<Vec<usize>>,
    pub label: String,
}

/// All candidate misreports for one agent, with the truthful report
/// always included as a grid member.
#[derive(Debug, Clone)]
pub struct DeviationGrid {
    pub agent: AgentId,
    pub points: Vec<GridPoint>,
    pub truthful_index: usize,
}

/// Candidate amounts: every distinct number reported anywhere in the
/// instance, each nudged by +-epsilon with epsilon half the minimum gap
/// (so every tie boundary is crossed), plus zero and a value above
/// everything.
pub fn value_candidates(instance: &MarketInstance) -> Vec<Money> {
    let mut numbers: Vec<BigRational> = instance
        .mediators()
        .iter()
        .flat_map(|m| m.users.iter().map(|u| u.cost.amount().clone()))
        .chain(instance.advertisers().iter().map(|a| a.value.amount().clone()))
        .collect();
    numbers.sort();
    numbers.dedup();

    let epsilon = numbers
        .windows(2)
        .map(|w| &w[1] - &w[0])
        .min()
        .map(|gap| gap / BigRational::from_integer(2.into()))
        .unwrap_or_else(|| BigRational::new(BigInt::one(), 2.into()));

    let mut candidates: BTreeSet<BigRational> = BTreeSet::new();
    candidates.insert(BigRational::zero());
    for n in &numbers {
        candidates.insert(n.clone());
        candidates.insert(n + &epsilon);
        let below = n - &epsilon;
        if !below.is_negative() {
            candidates.insert(below);
        }
    }
    let extreme = numbers
        .last()
        .map(|max| max * BigRational::from_integer(2.into()) + BigRational::one())
        .unwrap_or_else(BigRational::one);
    candidates.insert(extreme);
    candidates
        .into_iter()
        .map(|r| Money::new(r).expect("candidates are nonnegative"))
        .collect()
}

/// Capacity candidates an advertiser may try. PRM capacities are public,
/// so only the true one appears; TPM capacities are strategic and range
/// over 1..=2*u(a).
fn capacity_candidates(mechanism: &Mechanism, true_capacity: usize) -> Vec<usize> {
    match mechanism {
        Mechanism::Prm(_) | Mechanism::PrmFirstPrice(_) => vec![true_capacity],
        Mechanism::Tpm(_) => (1..=2 * true_capacity.max(1)).collect(),
    }
}

pub fn grid_for_advertiser(
    instance: &MarketInstance,
    mechanism: &Mechanism,
    agent: AgentId,
) -> Result<DeviationGrid, AuditError> {
    let advertiser = instance.advertiser(agent)?;
    let truthful = Reports::truthful(instance);
    let mut points = Vec::new();
    let mut seen = HashSet::new();
    for value in value_candidates(instance) {
        for capacity in capacity_candidates(mechanism, advertiser.capacity) {
            if !seen.insert((value.clone(), capacity)) {
                continue;
            }
            let mut reports = truthful.clone();
            reports
                .advertisers
                .insert(agent, AdvertiserReport { value: value.clone(), capacity });
            points.push(GridPoint {
                reports,
                kept: None,
                label: format!("value {value}, capacity {capacity}"),
            });
        }
    }
    let truthful_index = points
        .iter()
        .position(|p| {
            let rep = &p.reports.advertisers[&agent];
            rep.value == advertiser.value && rep.capacity == advertiser.capacity
        })
        .expect("truthful report is in the grid");
    Ok(DeviationGrid { agent, points, truthful_index })
}

/// Subsets of the true user list a mediator might report. Small lists are
/// enumerated fully; beyond 4 users the 2^n blowup is cut down to the
/// empty set, the full set, singletons and all single-drop neighbors.
fn subset_candidates(n: usize) -> Vec<Vec<usize>> {
    if n <= 4 {
        (0..(1u32 << n))
            .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
            .collect()
    } else {
        let mut subsets: Vec<Vec<usize>> = vec![vec![], (0..n).collect()];
        for drop in 0..n {
            subsets.push((0..n).filter(|&i| i != drop).collect());
        }
        for single in 0..n {
            subsets.push(vec![single]);
        }
        subsets
    }
}

pub fn grid_for_mediator(
    instance: &MarketInstance,
    agent: AgentId,
) -> Result<DeviationGrid, AuditError> {
    let mediator = instance.mediator(agent)?;
    let truthful = Reports::truthful(instance);
    let candidates = value_candidates(instance);

    let mut points = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |kept: &[usize], costs: Vec<Money>, label: String, points: &mut Vec<GridPoint>| {
        if !seen.insert((kept.to_vec(), costs.clone())) {
            return;
        }
        let mut reports = truthful.clone();
        reports.mediators.insert(agent, costs);
        points.push(GridPoint { reports, kept: Some(kept.to_vec()), label });
    };

    for kept in subset_candidates(mediator.users.len()) {
        let true_costs: Vec<Money> =
            kept.iter().map(|&i| mediator.users[i].cost.clone()).collect();
        push(&kept, true_costs.clone(), format!("subset {kept:?}, true costs"), &mut points);
        for v in &candidates {
            // Uniform replacement: every kept user reported at v.
            let uniform: Vec<Money> = kept.iter().map(|_| v.clone()).collect();
            push(&kept, uniform, format!("subset {kept:?}, all costs {v}"), &mut points);
            // Single-position replacement on top of the true costs.
            for pos in 0..kept.len() {
                let mut costs = true_costs.clone();
                costs[pos] = v.clone();
                push(&kept, costs, format!("subset {kept:?}, cost[{pos}] = {v}"), &mut points);
            }
        }
    }
    let full: Vec<usize> = (0..mediator.users.len()).collect();
    let truthful_costs: Vec<Money> = mediator.users.iter().map(|u| u.cost.clone()).collect();
    let truthful_index = points
        .iter()
        .position(|p| {
            p.kept.as_deref() == Some(full.as_slice())
                && p.reports.mediators[&agent] == truthful_costs
        })
        .expect("truthful report is in the grid");
    Ok(DeviationGrid { agent, points, truthful_index })
}

pub fn grid_for_agent(
    instance: &MarketInstance,
    mechanism: &Mechanism,
    agent: AgentId,
) -> Result<DeviationGrid, AuditError> {
    match agent.kind {
        AgentKind::Advertiser => grid_for_advertiser(instance, mechanism, agent),
        AgentKind::Mediator => grid_for_mediator(instance, agent),
        AgentKind::Dummy => Err(AuditError::Model(ModelError::UnknownAgent(agent))),
    }
}

#[derive(Debug, Clone)]
pub struct IcVerdict {
    pub agent: AgentId,
    pub truthful_utility: BigRational,
    pub best_utility: BigRational,
    pub best_deviation: Option<String>,
    pub violated: bool,
}

/// Runs the mechanism once per grid point, with only this agent's report
/// changed, and asks whether any point beats the truthful utility. Ties
/// are fine; only a strict improvement is a violation. For TPM the seed
/// inside the config is fixed, so this probes one coin realization at a
/// time, which is exactly what universal truthfulness promises.
pub fn check_ic(
    instance: &MarketInstance,
    mechanism: &Mechanism,
    grid: &DeviationGrid,
) -> Result<IcVerdict, AuditError> {
    let utilities: Result<Vec<BigRational>, AuditError> = grid
        .points
        .par_iter()
        .map(|point| {
            let outcome = mechanism.run(instance, &point.reports)?;
            Ok(agent_utility(instance, grid.agent, &outcome, point.kept.as_deref()))
        })
        .collect();
    let utilities = utilities?;

    let truthful_utility = utilities[grid.truthful_index].clone();
    let mut best_index = grid.truthful_index;
    for (i, u) in utilities.iter().enumerate() {
        if *u > utilities[best_index] {
            best_index = i;
        }
    }
    let best_utility = utilities[best_index].clone();
    let violated = best_utility > truthful_utility;
    Ok(IcVerdict {
        agent: grid.agent,
        truthful_utility,
        best_utility,
        best_deviation: violated.then(|| grid.points[best_index].label.clone()),
        violated,
    })
}

/// Sweeps every agent of the instance; returns all verdicts.
pub fn check_ic_all(
    instance: &MarketInstance,
    mechanism: &Mechanism,
) -> Result<Vec<IcVerdict>, AuditError> {
    let agents: Vec<AgentId> = instance
        .mediators()
        .iter()
        .map(|m| m.id)
        .chain(instance.advertisers().iter().map(|a| a.id))
        .collect();
    agents
        .into_iter()
        .map(|agent| {
            let grid = grid_for_agent(instance, mechanism, agent)?;
            check_ic(instance, mechanism, &grid)
        })
        .collect()
}

// --- competitive ratio ---

#[derive(Debug, Clone)]
pub struct RatioVerdict {
    /// Mean of gft/opt over the provided runs; None when vacuous.
    pub ratio: Option<BigRational>,
    pub bound: BigRational,
    pub holds: bool,
    pub vacuous: bool,
}

/// Checks mean(gfts) / opt against the bound. A zero optimum or a
/// nonpositive bound make the claim vacuous, which counts as a pass.
/// PRM verdicts use a single-element slice; TPM verdicts apply to the
/// mean over trials.
pub fn competitive_ratio(
    gfts: &[BigRational],
    opt: &BigRational,
    bound: &BigRational,
) -> RatioVerdict {
    if opt.is_zero() || !bound.is_positive() || gfts.is_empty() {
        return RatioVerdict { ratio: None, bound: bound.clone(), holds: true, vacuous: true };
    }
    let n = BigRational::from_integer(gfts.len().into());
    let mean = gfts.iter().fold(BigRational::zero(), |acc, g| acc + g) / n;
    let ratio = mean / opt;
    let holds = ratio >= *bound;
    RatioVerdict { ratio: Some(ratio), bound: bound.clone(), holds, vacuous: false }
}

/// 1 - 5*gamma/tau, the deterministic mechanism's guarantee.
pub fn prm_bound(gamma: usize, tau: usize) -> BigRational {
    if tau == 0 {
        return -BigRational::one();
    }
    BigRational::one()
        - BigRational::new(BigInt::from(5 * gamma as u64), BigInt::from(tau as u64))
}

/// 1 - 28*cbrt(alpha) - 20*e^(-2/cbrt(alpha)) as an exact rational lower
/// bound. Whenever the expression can be positive at all, cbrt(alpha) is
/// below 1/28, which puts the exponent beyond 56 and the exponential term
/// under 1e-22; subtracting 1e-22 outright therefore under-approximates
/// the bound by a negligible, always-safe margin.
pub fn tpm_bound(alpha: &BigRational) -> BigRational {
    let cbrt = alpha_cbrt_upper(alpha);
    let linear = BigRational::one() - BigRational::from_integer(28.into()) * &cbrt;
    if !linear.is_positive() {
        return linear;
    }
    linear - BigRational::new(BigInt::one(), BigInt::from(10u64).pow(22))
}

// --- structural invariants ---

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub detail: String,
    pub status: CheckStatus,
}

impl InvariantCheck {
    fn of(name: &'static str, detail: impl Into<String>, ok: bool) -> Self {
        InvariantCheck {
            name,
            detail: detail.into(),
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        }
    }

    fn not_applicable(name: &'static str, detail: impl Into<String>) -> Self {
        InvariantCheck { name, detail: detail.into(), status: CheckStatus::NotApplicable }
    }
}

/// Structural facts behind the deterministic mechanism's analysis,
/// evaluated on a truthful run. The reduced canonical assignments are
/// recomputed here from scratch rather than read out of the trace.
pub fn prm_invariant_suite(
    instance: &MarketInstance,
    outcome: &Outcome,
    trace: &PrmTrace,
    gamma: usize,
) -> Vec<InvariantCheck> {
    let mut checks = Vec::new();
    let full = full_canonical(instance);
    let tau = full.tau();
    let assigned_in_full: HashSet<(AgentId, usize)> =
        full.matched_users().map(|u| u.key()).collect();

    // Removing a mediator never lengthens the canonical assignment.
    let mut shortens_ok = true;
    let mut subset_ok = true;
    for m in instance.mediators() {
        let reduced =
            canonical_assignment(instance, instance.users_without(m.id), instance.all_slots());
        let k = reduced.tau();
        shortens_ok &= k <= tau;
        let threshold = &trace.thresholds[&m.id];
        if threshold.is_finite() {
            // The threshold user herself is assigned by the full
            // canonical assignment, and so is every tradable user.
            let threshold_user = reduced
                .user_at(k - 4 * gamma)
                .expect("finite threshold means k > 4*gamma");
            subset_ok &= assigned_in_full.contains(&threshold_user.key());
        }
        subset_ok &= trace.tradable[&m.id]
            .iter()
            .all(|u| assigned_in_full.contains(&u.key()));
    }
    checks.push(InvariantCheck::of(
        "med_removal_shortens",
        "reduced assignment size <= tau for every mediator",
        shortens_ok,
    ));
    checks.push(InvariantCheck::of(
        "subset_users",
        "threshold and tradable users are assigned by the full canonical assignment",
        subset_ok,
    ));

    let assigned_by_outcome = outcome.assigned_user_keys();
    let all_assigned = trace
        .tradable
        .values()
        .flatten()
        .all(|u| assigned_by_outcome.contains(&u.key()));
    checks.push(InvariantCheck::of(
        "all_assigned",
        "every tradable user is assigned by the mechanism",
        all_assigned,
    ));

    if tau > 5 * gamma {
        let floor = full
            .user_scalar_at(tau - 5 * gamma)
            .expect("location within matched prefix");
        let ok = trace.thresholds.values().all(|t| t >= floor);
        checks.push(InvariantCheck::of(
            "c_e_bound",
            format!("every threshold at least the cost at location {}", tau - 5 * gamma),
            ok,
        ));
    } else {
        checks.push(InvariantCheck::not_applicable("c_e_bound", "tau <= 5*gamma"));
    }
    checks
}

/// Does the instance respect the promised capacity-to-trade bound?
pub fn alpha_promise_holds(instance: &MarketInstance, alpha: &BigRational) -> bool {
    let tau = full_canonical(instance).tau();
    if tau == 0 {
        return false;
    }
    let tau_r = BigRational::from_integer(tau.into());
    let fits = |size: usize| BigRational::from_integer(size.into()) <= alpha * &tau_r;
    alpha * &tau_r >= BigRational::one()
        && instance.advertisers().iter().all(|a| fits(a.capacity))
        && instance.mediators().iter().all(|m| fits(m.users.len()))
}

/// Structural facts behind the randomized mechanism's analysis, evaluated
/// on a truthful run. The concentration event is measured on the realized
/// partition; the inclusion checks only apply when it occurred, and are
/// reported as not-applicable otherwise, never as failures.
pub fn tpm_invariant_suite(
    instance: &MarketInstance,
    trace: &TpmTrace,
    alpha: &BigRational,
) -> Vec<InvariantCheck> {
    let mut checks = Vec::new();
    let full = full_canonical(instance);
    let tau = full.tau();
    let cbrt = alpha_cbrt_upper(alpha);

    let users_o: HashSet<(AgentId, usize)> = full.matched_users().map(|u| u.key()).collect();
    let slots_o: HashSet<(AgentId, usize)> = full.matched_slots().map(|s| s.key()).collect();

    // Core sets: the prefix of length ceil((1 - 11*cbrt) * tau).
    let tilde_factor = BigRational::one() - BigRational::from_integer(11.into()) * &cbrt;
    let tilde_len = {
        let scaled = &tilde_factor * BigRational::from_integer(tau.into());
        if scaled.is_positive() {
            scaled.ceil().to_integer().to_usize().unwrap_or(0)
        } else {
            0
        }
    };
    let tilde_users: HashSet<(AgentId, usize)> =
        full.matched_users().take(tilde_len).map(|u| u.key()).collect();
    let tilde_slots: HashSet<(AgentId, usize)> =
        full.matched_slots().take(tilde_len).map(|s| s.key()).collect();

    // Size characterization of the half-market canonical assignments.
    let partition = &trace.partition;
    let mut length_ok = true;
    for (mediators, advertisers) in
        [(&partition.m2, &partition.a2), (&partition.m1, &partition.a1)]
    {
        let half = canonical_assignment(
            instance,
            instance.users_of(mediators),
            instance.slots_of(advertisers),
        );
        let users_in = users_o.iter().filter(|(m, _)| mediators.contains(m)).count();
        let slots_in = slots_o.iter().filter(|(a, _)| advertisers.contains(a)).count();
        let s = half.tau();
        length_ok &= users_in.min(slots_in) <= s && s <= users_in.max(slots_in);
    }
    checks.push(InvariantCheck::of(
        "length_characterization",
        "half-market trade size between min and max overlap with the optimal trade",
        length_ok,
    ));

    // The concentration event: all four overlap counts near half, within
    // cbrt(alpha) * tau. A count for one half determines the count for
    // the other, so the event reads the same from either side.
    let bound = &cbrt * BigRational::from_integer(tau.into());
    let near_half = |count: usize, total: usize| -> bool {
        let diff = BigRational::from_integer(count.into())
            - BigRational::new(BigInt::from(total), 2.into());
        diff.abs() <= bound
    };
    let event = near_half(
        slots_o.iter().filter(|(a, _)| partition.a2.contains(a)).count(),
        slots_o.len(),
    ) && near_half(
        users_o.iter().filter(|(m, _)| partition.m2.contains(m)).count(),
        users_o.len(),
    ) && near_half(
        tilde_slots.iter().filter(|(a, _)| partition.a2.contains(a)).count(),
        tilde_slots.len(),
    ) && near_half(
        tilde_users.iter().filter(|(m, _)| partition.m2.contains(m)).count(),
        tilde_users.len(),
    );

    let ell = full.slot_at(tau).map(|s| s.value.amount().clone());

    for (side, own_m, own_a, name) in [
        (&trace.side1, &partition.m1, &partition.a1, "side 1"),
        (&trace.side2, &partition.m2, &partition.a2, "side 2"),
    ] {
        if !event || tau == 0 {
            for check in ["upper_inclusion", "lower_inclusion", "middle_value"] {
                checks.push(InvariantCheck::not_applicable(
                    check,
                    format!("{name}: concentration event did not occur"),
                ));
            }
            continue;
        }
        let upper = side.phat.iter().all(|u| users_o.contains(&u.key()))
            && side.bhat.iter().all(|s| slots_o.contains(&s.key()));
        checks.push(InvariantCheck::of(
            "upper_inclusion",
            format!("{name}: threshold sets within the optimal trade"),
            upper,
        ));

        let phat_keys: HashSet<(AgentId, usize)> = side.phat.iter().map(|u| u.key()).collect();
        let bhat_keys: HashSet<(AgentId, usize)> = side.bhat.iter().map(|s| s.key()).collect();
        let lower = tilde_users
            .iter()
            .filter(|(m, _)| own_m.contains(m))
            .all(|key| phat_keys.contains(key))
            && tilde_slots
                .iter()
                .filter(|(a, _)| own_a.contains(a))
                .all(|key| bhat_keys.contains(key));
        checks.push(InvariantCheck::of(
            "lower_inclusion",
            format!("{name}: own-half core of the optimal trade is in the threshold sets"),
            lower,
        ));

        let ell = ell.as_ref().expect("tau >= 1 here");
        let middle = side.phat.iter().all(|u| u.cost.amount() <= ell)
            && side.bhat.iter().all(|s| s.value.amount() >= ell);
        checks.push(InvariantCheck::of(
            "middle_value",
            format!("{name}: a report-independent price level separates the threshold sets"),
            middle,
        ));
    }
    checks
}
