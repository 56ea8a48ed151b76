//! The randomized threshold-by-partition mechanism.
//!
//! Mediators and advertisers are split into two random halves, and each
//! half trades at threshold prices read off the other half's canonical
//! assignment, so no agent can influence the prices she faces. Randomly
//! chosen low-priority agents are served last, which keeps the two sides
//! of the reduced trade balanced with high probability. Both halves are
//! handled symmetrically; capacities are reported (strategic) here.
//!
//! All coins are derived from the configured seed by a keyed generator
//! indexed by (agent, draw purpose), never by a shared stream: one
//! agent's report cannot shift any draw, and the mechanism is replayable
//! coin-for-coin for truthfulness audits.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::canonical::{canonical_assignment, CanonicalResult};
use crate::market::{
    AgentId, AgentKind, Assignment, CapacitySource, MarketInstance, ModelError, Outcome, Reports,
    Slot, User,
};
use crate::money::Money;
use crate::scalar::ExtendedScalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TpmConfig {
    /// Promised bound on any agent's capacity relative to the optimal
    /// trade size. The promise is audited after the fact, never enforced
    /// at run time: the mechanism only sees reports.
    pub alpha: BigRational,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TpmError {
    #[error("alpha must lie in (0, 1], got {0}")]
    BadAlpha(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl TpmConfig {
    pub fn new(alpha: BigRational, seed: u64) -> Result<Self, TpmError> {
        if !alpha.is_positive() || alpha > BigRational::one() {
            return Err(TpmError::BadAlpha(alpha.to_string()));
        }
        Ok(TpmConfig { alpha, seed })
    }
}

// --- deterministic coins ---

const PURPOSE_LOW_PRIORITY: u64 = 1;
const PURPOSE_HALF: u64 = 2;

/// SplitMix64 finalizer (Steele, Lea, Flood), used as the avalanche step
/// of the keyed generator.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One uniform u64 fully determined by (seed, agent, purpose).
fn keyed_draw(seed: u64, agent: AgentId, purpose: u64) -> u64 {
    const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
    let kind = match agent.kind {
        AgentKind::Mediator => 0u64,
        AgentKind::Advertiser => 1,
        AgentKind::Dummy => 2,
    };
    let mut x = mix64(seed.wrapping_add(GAMMA));
    for word in [kind, agent.ordinal as u64, purpose] {
        x = mix64(x.wrapping_add(mix64(word.wrapping_add(GAMMA))));
    }
    x
}

// --- cube root bounds ---

/// An upper bound on alpha^(1/3), exact when alpha is a rational cube and
/// otherwise within 2^-40 (< 1e-12). All derived quantities use this one
/// value with a fixed rounding direction: the low-priority probability
/// rounds up and the threshold factor 1 - 4 * cbrt rounds down, so the
/// slack always errs toward slightly more trade reduction.
pub fn alpha_cbrt_upper(alpha: &BigRational) -> BigRational {
    assert!(alpha.is_positive() && *alpha <= BigRational::one());
    let numer_root = alpha.numer().cbrt();
    let denom_root = alpha.denom().cbrt();
    if &(&numer_root * &numer_root * &numer_root) == alpha.numer()
        && &(&denom_root * &denom_root * &denom_root) == alpha.denom()
    {
        return BigRational::new(numer_root, denom_root);
    }
    // Bisection over dyadic rationals: cube(lo) < alpha < cube(hi).
    let mut lo = BigRational::zero();
    let mut hi = BigRational::one();
    let two = BigRational::from_integer(2.into());
    for _ in 0..40 {
        let mid = (&lo + &hi) / &two;
        if &(&mid * &mid * &mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// ceil(p * 2^64) clamped to 2^64: a u64 draw below this cutoff occurs
/// with probability within 2^-64 of p, compared exactly.
fn probability_cutoff(p: &BigRational) -> u128 {
    let one = BigRational::one();
    let p = if p > &one { &one } else { p };
    let scaled = p * BigRational::from_integer(BigInt::one() << 64);
    let cutoff = scaled.ceil().to_integer();
    cutoff.to_u128().expect("cutoff fits: p <= 1")
}

// --- partition ---

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TpmPartition {
    pub low_mediators: BTreeSet<AgentId>,
    pub low_advertisers: BTreeSet<AgentId>,
    pub m1: BTreeSet<AgentId>,
    pub m2: BTreeSet<AgentId>,
    pub a1: BTreeSet<AgentId>,
    pub a2: BTreeSet<AgentId>,
    /// Mediators in serving order: regular ones first (in sigma order),
    /// low-priority ones last.
    pub sigma_m: Vec<AgentId>,
    pub sigma_a: Vec<AgentId>,
}

/// Draws low-priority sets and the two halves. Every membership flag is
/// an independent keyed coin: low-priority with probability
/// min(17 * cbrt(alpha), 1), halves with probability 1/2.
pub fn sample_partition(instance: &MarketInstance, config: &TpmConfig) -> TpmPartition {
    let cbrt = alpha_cbrt_upper(&config.alpha);
    let p_low = BigRational::from_integer(17.into()) * &cbrt;
    let low_cutoff = probability_cutoff(&p_low);
    let half_cutoff = 1u128 << 63;

    let mut low_mediators = BTreeSet::new();
    let mut low_advertisers = BTreeSet::new();
    let mut m1 = BTreeSet::new();
    let mut m2 = BTreeSet::new();
    let mut a1 = BTreeSet::new();
    let mut a2 = BTreeSet::new();

    for m in instance.mediators() {
        if (keyed_draw(config.seed, m.id, PURPOSE_LOW_PRIORITY) as u128) < low_cutoff {
            low_mediators.insert(m.id);
        }
        if (keyed_draw(config.seed, m.id, PURPOSE_HALF) as u128) < half_cutoff {
            m1.insert(m.id);
        } else {
            m2.insert(m.id);
        }
    }
    for a in instance.advertisers() {
        if (keyed_draw(config.seed, a.id, PURPOSE_LOW_PRIORITY) as u128) < low_cutoff {
            low_advertisers.insert(a.id);
        }
        if (keyed_draw(config.seed, a.id, PURPOSE_HALF) as u128) < half_cutoff {
            a1.insert(a.id);
        } else {
            a2.insert(a.id);
        }
    }

    let sigma_m = priority_order(instance, AgentKind::Mediator, &low_mediators);
    let sigma_a = priority_order(instance, AgentKind::Advertiser, &low_advertisers);

    TpmPartition { low_mediators, low_advertisers, m1, m2, a1, a2, sigma_m, sigma_a }
}

/// Sigma restricted to one kind, with low-priority agents moved to the
/// back (relative order preserved on both parts).
fn priority_order(
    instance: &MarketInstance,
    kind: AgentKind,
    low: &BTreeSet<AgentId>,
) -> Vec<AgentId> {
    let of_kind: Vec<AgentId> = instance
        .sigma()
        .agents()
        .iter()
        .filter(|id| id.kind == kind)
        .copied()
        .collect();
    let mut order: Vec<AgentId> = of_kind.iter().filter(|id| !low.contains(id)).copied().collect();
    order.extend(of_kind.iter().filter(|id| low.contains(id)));
    order
}

// --- thresholds ---

/// Threshold pair for one side: the cost and value at a fixed location of
/// the opposite half's canonical assignment, or sentinels when that
/// assignment is too short. Both are dummies or both are real.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SideThresholds {
    pub phat: ExtendedScalar,
    pub bhat: ExtendedScalar,
    pub location: Option<usize>,
}

impl SideThresholds {
    pub fn is_dummy(&self) -> bool {
        self.location.is_none()
    }
}

/// Computes the thresholds a side will trade at from the opposite side's
/// users and slots: location ceil((1 - 4 * cbrt(alpha)) * s) of their
/// canonical assignment of size s, or dummies when that quantity is not
/// positive.
pub fn side_thresholds(
    instance: &MarketInstance,
    opposite_users: Vec<User>,
    opposite_slots: Vec<Slot>,
    alpha: &BigRational,
) -> SideThresholds {
    let canonical = canonical_assignment(instance, opposite_users, opposite_slots);
    thresholds_from_canonical(&canonical, alpha)
}

fn thresholds_from_canonical(
    canonical: &CanonicalResult,
    alpha: &BigRational,
) -> SideThresholds {
    let cbrt = alpha_cbrt_upper(alpha);
    let factor = BigRational::one() - BigRational::from_integer(4.into()) * cbrt;
    let size = BigRational::from_integer(canonical.tau().into());
    let scaled = factor * size;
    if !scaled.is_positive() {
        return SideThresholds {
            phat: ExtendedScalar::neg_inf(),
            bhat: ExtendedScalar::pos_inf(),
            location: None,
        };
    }
    let location = scaled
        .ceil()
        .to_integer()
        .to_usize()
        .expect("location bounded by the assignment size");
    SideThresholds {
        phat: canonical.user_scalar_at(location).expect("location <= tau").clone(),
        bhat: canonical.slot_scalar_at(location).expect("location <= tau").clone(),
        location: Some(location),
    }
}

// --- matching loop ---

/// Serves mediators and advertisers in priority order: the earliest
/// mediator with unassigned threshold users sends his cheapest one to the
/// lowest-index unassigned threshold slot of the earliest advertiser.
/// Every pair moves the threshold value in and the threshold cost out.
pub fn match_and_price(
    phat: &[User],
    bhat: &[Slot],
    sigma_m: &[AgentId],
    sigma_a: &[AgentId],
    thresholds: &SideThresholds,
) -> (Vec<(User, Slot)>, BTreeMap<AgentId, Money>, BTreeMap<AgentId, Money>) {
    let mut users_by_mediator: BTreeMap<AgentId, Vec<User>> = BTreeMap::new();
    for u in phat {
        users_by_mediator.entry(u.mediator).or_default().push(u.clone());
    }
    for users in users_by_mediator.values_mut() {
        // Cheapest first; within one mediator the tie-break order is just
        // (cost, report index).
        users.sort_by(|a, b| a.cost.cmp(&b.cost).then(a.index.cmp(&b.index)));
    }
    let mut slots_by_advertiser: BTreeMap<AgentId, Vec<Slot>> = BTreeMap::new();
    for s in bhat {
        slots_by_advertiser.entry(s.advertiser).or_default().push(s.clone());
    }
    for slots in slots_by_advertiser.values_mut() {
        slots.sort_by_key(|s| s.index);
    }

    let user_stream = sigma_m
        .iter()
        .filter_map(|id| users_by_mediator.get(id))
        .flatten();
    let slot_stream = sigma_a
        .iter()
        .filter_map(|id| slots_by_advertiser.get(id))
        .flatten();

    let mut pairs = Vec::new();
    let mut charges: BTreeMap<AgentId, Money> = BTreeMap::new();
    let mut payments: BTreeMap<AgentId, Money> = BTreeMap::new();
    for (user, slot) in user_stream.zip(slot_stream) {
        let pay = thresholds
            .phat
            .finite_amount()
            .expect("trades imply real thresholds")
            .clone();
        let charge = thresholds
            .bhat
            .finite_amount()
            .expect("trades imply real thresholds")
            .clone();
        let mediator_total = payments.entry(user.mediator).or_insert_with(Money::zero);
        *mediator_total = std::mem::replace(mediator_total, Money::zero()) + &pay;
        let advertiser_total = charges.entry(slot.advertiser).or_insert_with(Money::zero);
        *advertiser_total = std::mem::replace(advertiser_total, Money::zero()) + &charge;
        pairs.push((user.clone(), slot.clone()));
    }
    (pairs, charges, payments)
}

// --- full mechanism ---

#[derive(Debug, Clone)]
pub struct TpmSide {
    pub thresholds: SideThresholds,
    pub phat: Vec<User>,
    pub bhat: Vec<Slot>,
    pub matched: Vec<(User, Slot)>,
}

#[derive(Debug, Clone)]
pub struct TpmTrace {
    pub partition: TpmPartition,
    pub side1: TpmSide,
    pub side2: TpmSide,
}

/// Runs the mechanism on reported data (costs, values and capacities are
/// all reports). Deterministic given (instance, reports, config): the
/// same seed always yields the identical outcome.
pub fn run_tpm(
    instance: &MarketInstance,
    reports: &Reports,
    config: &TpmConfig,
) -> Result<(Outcome, TpmTrace), TpmError> {
    let reported = instance.apply_reports(reports, CapacitySource::Reported)?;
    let partition = sample_partition(&reported, config);

    let (side1, charges1, payments1) =
        run_side(&reported, &partition, &partition.m1, &partition.a1, &partition.m2, &partition.a2, config);
    let (side2, charges2, payments2) =
        run_side(&reported, &partition, &partition.m2, &partition.a2, &partition.m1, &partition.a1, config);

    let mut pairs: Vec<(User, Slot)> = Vec::new();
    pairs.extend(side1.matched.iter().cloned());
    pairs.extend(side2.matched.iter().cloned());
    let assignment = Assignment::new(pairs)?;

    // The two sides share no agents, so the maps merge disjointly.
    let mut advertiser_charges: BTreeMap<AgentId, Money> = reported
        .advertisers()
        .iter()
        .map(|a| (a.id, Money::zero()))
        .collect();
    let mut mediator_payments: BTreeMap<AgentId, Money> = reported
        .mediators()
        .iter()
        .map(|m| (m.id, Money::zero()))
        .collect();
    for (id, charge) in charges1.into_iter().chain(charges2) {
        advertiser_charges.insert(id, charge);
    }
    for (id, payment) in payments1.into_iter().chain(payments2) {
        mediator_payments.insert(id, payment);
    }

    let outcome = Outcome { assignment, advertiser_charges, mediator_payments };
    Ok((outcome, TpmTrace { partition, side1, side2 }))
}

fn run_side(
    reported: &MarketInstance,
    partition: &TpmPartition,
    own_mediators: &BTreeSet<AgentId>,
    own_advertisers: &BTreeSet<AgentId>,
    opp_mediators: &BTreeSet<AgentId>,
    opp_advertisers: &BTreeSet<AgentId>,
    config: &TpmConfig,
) -> (TpmSide, BTreeMap<AgentId, Money>, BTreeMap<AgentId, Money>) {
    let thresholds = side_thresholds(
        reported,
        reported.users_of(opp_mediators),
        reported.slots_of(opp_advertisers),
        &config.alpha,
    );
    let phat: Vec<User> = reported
        .users_of(own_mediators)
        .into_iter()
        .filter(|u| reported.user_scalar(u) < thresholds.phat)
        .collect();
    let bhat: Vec<Slot> = reported
        .slots_of(own_advertisers)
        .into_iter()
        .filter(|s| reported.slot_scalar(s) > thresholds.bhat)
        .collect();
    let (matched, charges, payments) = match_and_price(
        &phat,
        &bhat,
        &partition.sigma_m,
        &partition.sigma_a,
        &thresholds,
    );
    (TpmSide { thresholds, phat, bhat, matched }, charges, payments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{Advertiser, Mediator};

    fn money(n: u64) -> Money {
        Money::from_u64(n)
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn uniform_instance(n: u32) -> MarketInstance {
        let mediators = (0..n)
            .map(|i| Mediator::new(AgentId::mediator(i), vec![money(i as u64 % 13)]))
            .collect();
        let advertisers = (0..n)
            .map(|i| Advertiser {
                id: AgentId::advertiser(i),
                value: money(7 + i as u64 % 11),
                capacity: 1,
            })
            .collect();
        MarketInstance::new(mediators, advertisers).unwrap()
    }

    #[test]
    fn cbrt_exact_cubes() {
        assert_eq!(alpha_cbrt_upper(&rat(1, 8)), rat(1, 2));
        assert_eq!(alpha_cbrt_upper(&rat(1, 1000)), rat(1, 10));
        assert_eq!(alpha_cbrt_upper(&rat(27, 64)), rat(3, 4));
        assert_eq!(alpha_cbrt_upper(&rat(1, 1)), rat(1, 1));
    }

    #[test]
    fn cbrt_bounds_non_cubes() {
        for alpha in [rat(1, 2), rat(1, 7), rat(3, 5), rat(1, 123457)] {
            let hi = alpha_cbrt_upper(&alpha);
            let eps = BigRational::new(1.into(), BigInt::one() << 40);
            let lo = &hi - &eps;
            assert!(&hi * &hi * &hi >= alpha, "upper bound cubes above alpha");
            assert!(&lo * &lo * &lo < alpha, "bound is within 2^-40");
        }
    }

    #[test]
    fn alpha_one_puts_everyone_in_the_low_priority_sets() {
        let inst = uniform_instance(50);
        let config = TpmConfig::new(rat(1, 1), 7).unwrap();
        let partition = sample_partition(&inst, &config);
        assert_eq!(partition.low_mediators.len(), 50);
        assert_eq!(partition.low_advertisers.len(), 50);
    }

    #[test]
    fn partition_is_deterministic_per_seed() {
        let inst = uniform_instance(40);
        let config = TpmConfig::new(rat(1, 64), 99).unwrap();
        assert_eq!(sample_partition(&inst, &config), sample_partition(&inst, &config));
        let other = TpmConfig::new(rat(1, 64), 100).unwrap();
        assert_ne!(sample_partition(&inst, &config), sample_partition(&inst, &other));
    }

    // Monte Carlo: halves are balanced on average. 1e4 seeds, |M| = 100;
    // the mean of |M1|/|M| lands within a generous binomial CI.
    #[test]
    fn half_split_is_unbiased() {
        let inst = uniform_instance(100);
        let mut total = 0usize;
        for seed in 0..10_000u64 {
            let config = TpmConfig::new(rat(1, 64), seed).unwrap();
            total += sample_partition(&inst, &config).m1.len();
        }
        let mean = total as f64 / (10_000.0 * 100.0);
        assert!((0.49..=0.51).contains(&mean), "mean fraction {mean}");
    }

    #[test]
    fn low_priority_agents_sort_last() {
        let inst = uniform_instance(20);
        let config = TpmConfig::new(rat(1, 64), 3).unwrap();
        let partition = sample_partition(&inst, &config);
        let tail = partition.sigma_m.len() - partition.low_mediators.len();
        for (i, id) in partition.sigma_m.iter().enumerate() {
            assert_eq!(partition.low_mediators.contains(id), i >= tail);
        }
    }

    #[test]
    fn thresholds_empty_opposite_side_gives_dummies() {
        let inst = uniform_instance(4);
        let t = side_thresholds(&inst, vec![], inst.all_slots(), &rat(1, 64));
        assert!(t.is_dummy());
        assert!(t.phat.is_neg_inf());
    }

    #[test]
    fn thresholds_alpha_eighth_always_dummy() {
        // cbrt(1/8) = 1/2 exactly, so the factor 1 - 4/2 is negative.
        let inst = uniform_instance(8);
        let t = side_thresholds(&inst, inst.all_users(), inst.all_slots(), &rat(1, 8));
        assert!(t.is_dummy());
    }

    #[test]
    fn thresholds_location_follows_ceiling_formula() {
        // costs 0..10, values 20..., all matched: s = 10. alpha = 1/1000
        // has exact cube root 1/10, factor 3/5, location ceil(6) = 6.
        let mediators = (0..10)
            .map(|i| Mediator::new(AgentId::mediator(i), vec![money(i as u64)]))
            .collect();
        let advertisers = (0..10)
            .map(|i| Advertiser {
                id: AgentId::advertiser(i),
                value: money(20 + i as u64),
                capacity: 1,
            })
            .collect();
        let inst = MarketInstance::new(mediators, advertisers).unwrap();
        let t = side_thresholds(&inst, inst.all_users(), inst.all_slots(), &rat(1, 1000));
        assert_eq!(t.location, Some(6));
        // The user at location 6 of the increasing cost order costs 5.
        assert_eq!(t.phat.finite_amount(), Some(&money(5)));
    }

    #[test]
    fn match_and_price_exhausts_the_short_side() {
        let users: Vec<User> = (0..3)
            .map(|i| User { mediator: AgentId::mediator(i), index: 0, cost: money(i as u64) })
            .collect();
        let slots: Vec<Slot> = (0..2)
            .map(|i| Slot { advertiser: AgentId::advertiser(i), index: 0, value: money(9) })
            .collect();
        let sigma_m: Vec<AgentId> = (0..3).map(AgentId::mediator).collect();
        let sigma_a: Vec<AgentId> = (0..2).map(AgentId::advertiser).collect();
        let thresholds = SideThresholds {
            phat: ExtendedScalar::finite(money(5), crate::scalar::Role::User, 0, 0),
            bhat: ExtendedScalar::finite(money(6), crate::scalar::Role::Slot, 3, 0),
            location: Some(1),
        };
        let (pairs, charges, payments) =
            match_and_price(&users, &slots, &sigma_m, &sigma_a, &thresholds);
        assert_eq!(pairs.len(), 2);
        // The two cheapest users of the earliest mediators trade.
        assert_eq!(pairs[0].0.cost, money(0));
        assert_eq!(pairs[1].0.cost, money(1));
        assert_eq!(charges[&AgentId::advertiser(0)], money(6));
        assert_eq!(payments[&AgentId::mediator(0)], money(5));
        assert_eq!(payments[&AgentId::mediator(1)], money(5));
    }

    #[test]
    fn empty_threshold_sets_move_no_money() {
        let thresholds = SideThresholds {
            phat: ExtendedScalar::neg_inf(),
            bhat: ExtendedScalar::pos_inf(),
            location: None,
        };
        let (pairs, charges, payments) = match_and_price(&[], &[], &[], &[], &thresholds);
        assert!(pairs.is_empty() && charges.is_empty() && payments.is_empty());
    }

    #[test]
    fn run_is_bit_identical_per_seed() {
        let inst = uniform_instance(60);
        let reports = Reports::truthful(&inst);
        let config = TpmConfig::new(rat(1, 729), 1234).unwrap();
        let (o1, _) = run_tpm(&inst, &reports, &config).unwrap();
        let (o2, _) = run_tpm(&inst, &reports, &config).unwrap();
        assert_eq!(o1, o2);
    }

    #[test]
    fn empty_market_yields_empty_outcome() {
        let inst = MarketInstance::new(vec![], vec![]).unwrap();
        let config = TpmConfig::new(rat(1, 2), 5).unwrap();
        let (outcome, trace) = run_tpm(&inst, &Reports::truthful(&inst), &config).unwrap();
        assert!(outcome.assignment.is_empty());
        assert!(trace.side1.thresholds.is_dummy());
    }

    #[test]
    fn per_pair_surplus_is_nonnegative() {
        let inst = uniform_instance(80);
        let reports = Reports::truthful(&inst);
        for seed in 0..20 {
            let config = TpmConfig::new(rat(1, 1000), seed).unwrap();
            let (_, trace) = run_tpm(&inst, &reports, &config).unwrap();
            for side in [&trace.side1, &trace.side2] {
                if side.matched.is_empty() {
                    continue;
                }
                let pay = side.thresholds.phat.finite_amount().unwrap();
                let charge = side.thresholds.bhat.finite_amount().unwrap();
                assert!(charge >= pay);
                assert!(side.thresholds.bhat > side.thresholds.phat);
            }
        }
    }

    #[test]
    fn rejects_alpha_outside_unit_interval() {
        assert!(TpmConfig::new(rat(0, 1), 1).is_err());
        assert!(TpmConfig::new(rat(3, 2), 1).is_err());
        assert!(TpmConfig::new(rat(-1, 4), 1).is_err());
    }
}
