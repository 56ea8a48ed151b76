//! The canonical assignment: cheapest users paired with the most valuable
//! slots for as long as value exceeds cost.
//!
//! Slots are sorted decreasing and users increasing under the tie-break
//! order, and position i is matched exactly when the slot's value beats
//! the user's cost. Because costs rise and values fall along the order,
//! the matched positions always form a prefix; `tau` is its length. The
//! result keeps both full sorted sequences because the mechanisms index
//! into them by location (1-based, as in "the user at location k").

use num_rational::BigRational;

use crate::market::{Assignment, MarketInstance, Slot, User};
use crate::scalar::ExtendedScalar;

#[derive(Debug, Clone)]
pub struct CanonicalResult {
    ordered_users: Vec<(User, ExtendedScalar)>,
    ordered_slots: Vec<(Slot, ExtendedScalar)>,
    tau: usize,
}

impl CanonicalResult {
    /// Number of matched pairs.
    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Users in increasing cost order.
    pub fn users(&self) -> impl Iterator<Item = &User> {
        self.ordered_users.iter().map(|(u, _)| u)
    }

    /// Slots in decreasing value order.
    pub fn slots(&self) -> impl Iterator<Item = &Slot> {
        self.ordered_slots.iter().map(|(s, _)| s)
    }

    /// The user at 1-based location `loc` of the ordering.
    pub fn user_at(&self, loc: usize) -> Option<&User> {
        self.ordered_users.get(loc.checked_sub(1)?).map(|(u, _)| u)
    }

    pub fn slot_at(&self, loc: usize) -> Option<&Slot> {
        self.ordered_slots.get(loc.checked_sub(1)?).map(|(s, _)| s)
    }

    pub fn user_scalar_at(&self, loc: usize) -> Option<&ExtendedScalar> {
        self.ordered_users.get(loc.checked_sub(1)?).map(|(_, c)| c)
    }

    pub fn slot_scalar_at(&self, loc: usize) -> Option<&ExtendedScalar> {
        self.ordered_slots.get(loc.checked_sub(1)?).map(|(_, v)| v)
    }

    /// The matched pairs, i.e. locations 1..=tau.
    pub fn pairs(&self) -> impl Iterator<Item = (&User, &Slot)> {
        self.ordered_users
            .iter()
            .zip(self.ordered_slots.iter())
            .take(self.tau)
            .map(|((u, _), (s, _))| (u, s))
    }

    pub fn matched_users(&self) -> impl Iterator<Item = &User> {
        self.ordered_users.iter().take(self.tau).map(|(u, _)| u)
    }

    pub fn matched_slots(&self) -> impl Iterator<Item = &Slot> {
        self.ordered_slots.iter().take(self.tau).map(|(s, _)| s)
    }

    pub fn assignment(&self) -> Assignment {
        Assignment::new(self.pairs().map(|(u, s)| (u.clone(), s.clone())).collect())
            .expect("canonical pairs are injective by construction")
    }

    pub fn gain_from_trade(&self) -> BigRational {
        self.assignment().gain_from_trade()
    }
}

/// Computes the canonical assignment of `users` to `slots` under the
/// instance's sigma. Either side may be empty. Deterministic: the
/// tie-break order is total, so the two sorts have a unique result.
pub fn canonical_assignment(
    instance: &MarketInstance,
    users: Vec<User>,
    slots: Vec<Slot>,
) -> CanonicalResult {
    let mut ordered_users: Vec<(User, ExtendedScalar)> = users
        .into_iter()
        .map(|u| {
            let c = instance.user_scalar(&u);
            (u, c)
        })
        .collect();
    let mut ordered_slots: Vec<(Slot, ExtendedScalar)> = slots
        .into_iter()
        .map(|s| {
            let v = instance.slot_scalar(&s);
            (s, v)
        })
        .collect();
    ordered_users.sort_unstable_by(|(_, a), (_, b)| a.cmp(b));
    ordered_slots.sort_unstable_by(|(_, a), (_, b)| b.cmp(a));

    let tau = matched_prefix_len(
        ordered_users.iter().map(|(_, c)| c),
        ordered_slots.iter().map(|(_, v)| v),
    );
    CanonicalResult { ordered_users, ordered_slots, tau }
}

/// Length of the matched prefix given the already-sorted cost and value
/// sequences: the largest i with value(i) > cost(i).
pub(crate) fn matched_prefix_len<'a>(
    costs: impl Iterator<Item = &'a ExtendedScalar>,
    values: impl Iterator<Item = &'a ExtendedScalar>,
) -> usize {
    costs
        .zip(values)
        .take_while(|(c, v)| v > c)
        .count()
}

/// Canonical assignment over the whole instance, i.e. S over (P, B).
pub fn full_canonical(instance: &MarketInstance) -> CanonicalResult {
    canonical_assignment(instance, instance.all_users(), instance.all_slots())
}
