//! VCG auction for identical items and capacity-constrained bidders with
//! uniform per-unit values.
//!
//! Items here are the tradable users; bidders are advertisers plus
//! possibly a dummy. Welfare maximization for uniform per-unit values is
//! a greedy fill in decreasing value order, made deterministic by the
//! tie-break order on values. Charges follow the standard externality
//! form: what the others would get without the bidder, minus what the
//! others get with her present.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::Zero;

use crate::market::AgentId;
use crate::scalar::ExtendedScalar;

#[derive(Debug, Clone)]
pub struct Bidder {
    pub id: AgentId,
    pub value: ExtendedScalar,
    pub capacity: usize,
}

#[derive(Debug, Clone)]
pub struct VcgResult {
    pub units_won: BTreeMap<AgentId, usize>,
    pub charges: BTreeMap<AgentId, BigRational>,
    pub welfare: BigRational,
}

/// Fills capacities in decreasing value order until the items run out.
/// Bidders with a negative-infinity value never win: a unit parked on
/// them would lower welfare, while every finite value here is
/// nonnegative. Assigns min(item_count, total finite capacity) units.
pub fn allocate_welfare_max(
    item_count: usize,
    bidders: &[Bidder],
) -> BTreeMap<AgentId, usize> {
    let order = sorted_indices(bidders);
    let mut units: BTreeMap<AgentId, usize> = bidders.iter().map(|b| (b.id, 0)).collect();
    let mut remaining = item_count;
    for i in order {
        if remaining == 0 {
            break;
        }
        let take = bidders[i].capacity.min(remaining);
        units.insert(bidders[i].id, take);
        remaining -= take;
    }
    units
}

/// Indices of bidders in decreasing value order, skipping NegInf values.
fn sorted_indices(bidders: &[Bidder]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..bidders.len())
        .filter(|&i| !bidders[i].value.is_neg_inf())
        .collect();
    order.sort_unstable_by(|&i, &j| bidders[j].value.cmp(&bidders[i].value));
    order
}

fn welfare_of(bidders: &[Bidder], units: &BTreeMap<AgentId, usize>) -> BigRational {
    let mut total = BigRational::zero();
    for b in bidders {
        let n = units.get(&b.id).copied().unwrap_or(0);
        if n > 0 {
            let amount = b
                .value
                .finite_amount()
                .expect("winners always have finite values")
                .amount();
            total += amount * BigRational::from_integer(n.into());
        }
    }
    total
}

/// Runs the allocation and computes the externality charge of every
/// bidder: charge(a) = W(without a) - (W(all) - units(a) * value(a)).
/// Losers are charged zero; charges are nonnegative because removing a
/// bidder can only help the others.
pub fn vcg_charges(item_count: usize, bidders: &[Bidder]) -> VcgResult {
    debug_assert!(
        bidders.iter().filter(|b| b.id.kind == crate::market::AgentKind::Dummy).count() <= 1
    );
    let units_won = allocate_welfare_max(item_count, bidders);
    let welfare = welfare_of(bidders, &units_won);

    let mut charges: BTreeMap<AgentId, BigRational> = BTreeMap::new();
    for (i, b) in bidders.iter().enumerate() {
        let won = units_won.get(&b.id).copied().unwrap_or(0);
        if won == 0 {
            charges.insert(b.id, BigRational::zero());
            continue;
        }
        let others: Vec<Bidder> = bidders
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, b)| b.clone())
            .collect();
        let without_units = allocate_welfare_max(item_count, &others);
        let welfare_without = welfare_of(&others, &without_units);
        let own_value = b
            .value
            .finite_amount()
            .expect("winners always have finite values")
            .amount()
            * BigRational::from_integer(won.into());
        charges.insert(b.id, welfare_without - (&welfare - own_value));
    }
    VcgResult { units_won, charges, welfare }
}
