//! The deterministic price-by-removal mechanism.
//!
//! For each mediator a threshold cost is derived from the canonical
//! assignment computed with that mediator's users removed, which makes
//! the threshold independent of his own report. Users cheaper than their
//! mediator's threshold become tradable and are auctioned to the
//! advertisers by VCG, with a dummy bidder whose value is the largest
//! threshold; the dummy floors the winners' prices at every mediator
//! payment, which is what makes the mechanism budget balanced.
//! Advertiser capacities are public here; only values are reported.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::canonical::{canonical_assignment, matched_prefix_len};
use crate::market::{
    AgentId, AgentKind, Assignment, CapacitySource, MarketInstance, ModelError, Outcome, Reports,
    Slot, User,
};
use crate::money::Money;
use crate::scalar::{ExtendedScalar, Role};
use crate::vcg::{vcg_charges, Bidder, VcgResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrmConfig {
    pub gamma: usize,
}

impl PrmConfig {
    pub fn new(gamma: usize) -> Result<Self, PrmError> {
        if gamma == 0 {
            return Err(PrmError::BadGamma);
        }
        Ok(PrmConfig { gamma })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PrmError {
    #[error("gamma must be at least 1")]
    BadGamma,
    #[error("{agent} has size {size}, above the promised bound gamma = {gamma}")]
    GammaViolation { agent: AgentId, size: usize, gamma: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub struct PrmTrace {
    /// Per-mediator threshold cost; NegInf when the reduced trade was too
    /// short to price the mediator.
    pub thresholds: BTreeMap<AgentId, ExtendedScalar>,
    /// Per-mediator tradable users (reported cost below the threshold).
    pub tradable: BTreeMap<AgentId, Vec<User>>,
    pub dummy_value: ExtendedScalar,
    pub dummy_capacity: usize,
    pub vcg: VcgResult,
}

/// Threshold cost for mediator `m`: with his users removed, take the
/// canonical assignment of the rest; if it matches more than 4*gamma
/// pairs, the threshold is the cost of the user 4*gamma locations before
/// its end, otherwise there is no usable price and the threshold is -inf.
pub fn removal_threshold(
    instance: &MarketInstance,
    m: AgentId,
    gamma: usize,
) -> Result<ExtendedScalar, PrmError> {
    instance.mediator(m)?;
    let reduced = canonical_assignment(instance, instance.users_without(m), instance.all_slots());
    let k = reduced.tau();
    if k > 4 * gamma {
        Ok(reduced
            .user_scalar_at(k - 4 * gamma)
            .expect("location within matched prefix")
            .clone())
    } else {
        Ok(ExtendedScalar::neg_inf())
    }
}

/// All removal thresholds in one pass: the full user order is sorted once
/// and each mediator's reduced assignment is read off by skipping his
/// users, which agrees with `removal_threshold` (the reduced user order
/// is the full order minus the removed users, and the slot order is
/// shared).
fn removal_thresholds_all(
    instance: &MarketInstance,
    gamma: usize,
) -> BTreeMap<AgentId, ExtendedScalar> {
    let full = canonical_assignment(instance, instance.all_users(), instance.all_slots());
    let users: Vec<(&User, &ExtendedScalar)> = (1..=full.users().count())
        .map(|loc| (full.user_at(loc).unwrap(), full.user_scalar_at(loc).unwrap()))
        .collect();
    let slot_scalars: Vec<&ExtendedScalar> = (1..=full.slots().count())
        .map(|loc| full.slot_scalar_at(loc).unwrap())
        .collect();

    let mut thresholds = BTreeMap::new();
    let mut filtered: Vec<&ExtendedScalar> = Vec::with_capacity(users.len());
    for mediator in instance.mediators() {
        filtered.clear();
        filtered.extend(
            users
                .iter()
                .filter(|(u, _)| u.mediator != mediator.id)
                .map(|(_, c)| *c),
        );
        let k = matched_prefix_len(filtered.iter().copied(), slot_scalars.iter().copied());
        let threshold = if k > 4 * gamma {
            filtered[k - 4 * gamma - 1].clone()
        } else {
            ExtendedScalar::neg_inf()
        };
        thresholds.insert(mediator.id, threshold);
    }
    thresholds
}

/// Runs the mechanism on reported data. Advertiser capacities are taken
/// from the instance (they are common knowledge); reported capacities in
/// `reports` are ignored. Reported sizes above gamma are hard errors
/// rather than being truncated: the guarantees assume the bound, and
/// silent repair would hide a misconfigured run.
pub fn run_prm(
    instance: &MarketInstance,
    reports: &Reports,
    config: PrmConfig,
) -> Result<(Outcome, PrmTrace), PrmError> {
    for a in instance.advertisers() {
        if a.capacity > config.gamma {
            return Err(PrmError::GammaViolation {
                agent: a.id,
                size: a.capacity,
                gamma: config.gamma,
            });
        }
    }
    for (id, costs) in &reports.mediators {
        if costs.len() > config.gamma {
            return Err(PrmError::GammaViolation {
                agent: *id,
                size: costs.len(),
                gamma: config.gamma,
            });
        }
    }
    let reported = instance.apply_reports(reports, CapacitySource::Public)?;

    let thresholds = removal_thresholds_all(&reported, config.gamma);

    let mut tradable: BTreeMap<AgentId, Vec<User>> = BTreeMap::new();
    for mediator in reported.mediators() {
        let threshold = &thresholds[&mediator.id];
        let users: Vec<User> = mediator
            .users
            .iter()
            .filter(|u| reported.user_scalar(u) < *threshold)
            .cloned()
            .collect();
        tradable.insert(mediator.id, users);
    }
    let item_count: usize = tradable.values().map(|v| v.len()).sum();

    let dummy_value = thresholds
        .values()
        .max_by(|a, b| a.cmp(b))
        .cloned()
        .unwrap_or_else(ExtendedScalar::neg_inf);

    let mut bidders: Vec<Bidder> = reported
        .advertisers()
        .iter()
        .map(|a| Bidder {
            id: a.id,
            value: ExtendedScalar::finite(
                a.value.clone(),
                Role::Slot,
                reported.sigma_pos(a.id),
                0,
            ),
            capacity: a.capacity,
        })
        .collect();
    bidders.push(Bidder {
        id: AgentId::dummy(),
        value: dummy_value.clone(),
        capacity: item_count,
    });

    let vcg = vcg_charges(item_count, &bidders);

    // Concrete users for the won units: cheapest tradable users go to the
    // highest-value winning slots; units won by the dummy leave the
    // costliest tradable users unassigned.
    let mut pool: Vec<(User, ExtendedScalar)> = tradable
        .values()
        .flatten()
        .map(|u| (u.clone(), reported.user_scalar(u)))
        .collect();
    pool.sort_unstable_by(|(_, a), (_, b)| a.cmp(b));

    let mut winning_slots: Vec<(Slot, ExtendedScalar)> = Vec::new();
    for a in reported.advertisers() {
        let won = vcg.units_won.get(&a.id).copied().unwrap_or(0);
        for index in 0..won {
            let slot = Slot { advertiser: a.id, index, value: a.value.clone() };
            let scalar = reported.slot_scalar(&slot);
            winning_slots.push((slot, scalar));
        }
    }
    winning_slots.sort_unstable_by(|(_, a), (_, b)| b.cmp(a));

    let pairs: Vec<(User, Slot)> = pool
        .iter()
        .zip(winning_slots.into_iter())
        .map(|((u, _), (s, _))| (u.clone(), s))
        .collect();
    let assignment = Assignment::new(pairs)?;

    let advertiser_charges: BTreeMap<AgentId, Money> = vcg
        .charges
        .iter()
        .filter(|(id, _)| id.kind != AgentKind::Dummy)
        .map(|(id, charge)| {
            let money = Money::new(charge.clone()).expect("VCG charges are nonnegative");
            (*id, money)
        })
        .collect();

    let mut assigned_per_mediator: BTreeMap<AgentId, usize> = BTreeMap::new();
    for (u, _) in assignment.pairs() {
        *assigned_per_mediator.entry(u.mediator).or_insert(0) += 1;
    }
    let mediator_payments: BTreeMap<AgentId, Money> = instance
        .mediators()
        .iter()
        .map(|m| {
            let n = assigned_per_mediator.get(&m.id).copied().unwrap_or(0);
            let payment = if n == 0 {
                Money::zero()
            } else {
                let per_user = thresholds[&m.id]
                    .finite_amount()
                    .expect("assigned users imply a finite threshold")
                    .amount();
                Money::new(per_user * num_rational::BigRational::from_integer(n.into()))
                    .expect("threshold costs are nonnegative")
            };
            (m.id, payment)
        })
        .collect();

    let outcome = Outcome { assignment, advertiser_charges, mediator_payments };
    let trace = PrmTrace {
        thresholds,
        tradable,
        dummy_value,
        dummy_capacity: item_count,
        vcg,
    };
    Ok((outcome, trace))
}
