//! The strict total order over user costs and slot values.
//!
//! All slots of one advertiser share a value, so raw amounts are full of
//! ties. The mechanisms need every cost and value to be distinct, which a
//! tie-break key provides: equal amounts are ordered by the owner's
//! position in the report-independent agent order sigma, and inside one
//! owner by the reporting order of that owner's users or slots. A user's
//! cost ties below a slot's value exactly when the user's mediator
//! precedes the slot's advertiser in sigma. Two scalars are equal only
//! when they describe the same user or the same slot.

use std::cmp::Ordering;
use std::fmt;

use crate::money::Money;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    User,
    Slot,
}

/// Identifies the user or slot a scalar belongs to: the owner's position
/// in sigma plus the index inside the owner's list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TieKey {
    pub role: Role,
    pub sigma_pos: usize,
    pub intra: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ScalarValue {
    NegInf,
    Finite(Money),
    PosInf,
}

/// A cost or value together with its tie-break key. The infinite variants
/// are the dummy sentinels used for thresholds that did not materialize.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExtendedScalar {
    pub value: ScalarValue,
    pub key: TieKey,
}

const SENTINEL_POS: usize = usize::MAX;

impl ExtendedScalar {
    pub fn finite(amount: Money, role: Role, sigma_pos: usize, intra: usize) -> Self {
        ExtendedScalar {
            value: ScalarValue::Finite(amount),
            key: TieKey { role, sigma_pos, intra },
        }
    }

    pub fn neg_inf() -> Self {
        ExtendedScalar {
            value: ScalarValue::NegInf,
            key: TieKey { role: Role::User, sigma_pos: SENTINEL_POS, intra: 0 },
        }
    }

    pub fn pos_inf() -> Self {
        ExtendedScalar {
            value: ScalarValue::PosInf,
            key: TieKey { role: Role::Slot, sigma_pos: SENTINEL_POS, intra: 0 },
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.value, ScalarValue::Finite(_))
    }

    pub fn is_neg_inf(&self) -> bool {
        matches!(self.value, ScalarValue::NegInf)
    }

    /// The numeric amount, when finite.
    pub fn finite_amount(&self) -> Option<&Money> {
        match &self.value {
            ScalarValue::Finite(m) => Some(m),
            _ => None,
        }
    }
}

/// The tie-break order: lower sigma position wins ties regardless of role,
/// which in particular breaks a cost-versus-value tie in favor of the user
/// whenever her mediator precedes the slot's advertiser. Inside one
/// mediator a smaller index means a smaller cost; inside one advertiser a
/// smaller index means a larger value, so slot 0 is an advertiser's
/// strongest slot.
pub fn compare(a: &ExtendedScalar, b: &ExtendedScalar) -> Ordering {
    use ScalarValue::*;
    let by_value = match (&a.value, &b.value) {
        (NegInf, NegInf) | (PosInf, PosInf) => Ordering::Equal,
        (NegInf, _) | (_, PosInf) => Ordering::Less,
        (_, NegInf) | (PosInf, _) => Ordering::Greater,
        (Finite(x), Finite(y)) => x.cmp(y),
    };
    if by_value != Ordering::Equal {
        return by_value;
    }
    cmp_keys(&a.key, &b.key)
}

fn cmp_keys(a: &TieKey, b: &TieKey) -> Ordering {
    match a.sigma_pos.cmp(&b.sigma_pos) {
        Ordering::Equal => {}
        other => return other,
    }
    // Same sigma position means the same owner, hence the same role for
    // real scalars; the role comparison only separates sentinels.
    match a.role.cmp(&b.role) {
        Ordering::Equal => {}
        other => return other,
    }
    match a.role {
        Role::User => a.intra.cmp(&b.intra),
        Role::Slot => b.intra.cmp(&a.intra),
    }
}

impl PartialOrd for ExtendedScalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExtendedScalar {
    fn cmp(&self, other: &Self) -> Ordering {
        compare(self, other)
    }
}

impl fmt::Display for ExtendedScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.value {
            ScalarValue::NegInf => write!(f, "-inf"),
            ScalarValue::PosInf => write!(f, "+inf"),
            ScalarValue::Finite(m) => write!(f, "{m}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn cost(amount: u64, sigma_pos: usize, intra: usize) -> ExtendedScalar {
        ExtendedScalar::finite(Money::from_u64(amount), Role::User, sigma_pos, intra)
    }

    fn value(amount: u64, sigma_pos: usize, intra: usize) -> ExtendedScalar {
        ExtendedScalar::finite(Money::from_u64(amount), Role::Slot, sigma_pos, intra)
    }

    #[test]
    fn numeric_order_dominates() {
        assert_eq!(compare(&cost(3, 5, 0), &value(5, 1, 0)), Ordering::Less);
    }

    #[test]
    fn equal_amounts_break_toward_earlier_sigma_owner() {
        // Cost of a user whose mediator sits at sigma position 1 ties
        // below the equal value of an advertiser at position 2.
        assert_eq!(compare(&cost(4, 1, 0), &value(4, 2, 0)), Ordering::Less);
        assert_eq!(compare(&value(4, 2, 0), &cost(4, 1, 0)), Ordering::Greater);
        // And the other way around when the advertiser comes first.
        assert_eq!(compare(&cost(4, 3, 0), &value(4, 2, 0)), Ordering::Greater);
    }

    #[test]
    fn identical_user_compares_equal() {
        let c = cost(4, 1, 2);
        assert_eq!(compare(&c, &c.clone()), Ordering::Equal);
    }

    #[test]
    fn same_owner_index_directions() {
        // Users of one mediator: the earlier-reported user is cheaper.
        assert_eq!(compare(&cost(4, 1, 0), &cost(4, 1, 1)), Ordering::Less);
        // Slots of one advertiser: slot 0 carries the larger value.
        assert_eq!(compare(&value(4, 2, 0), &value(4, 2, 1)), Ordering::Greater);
    }

    #[test]
    fn sentinels_bound_everything() {
        let f = cost(0, 0, 0);
        assert_eq!(compare(&ExtendedScalar::neg_inf(), &f), Ordering::Less);
        assert_eq!(compare(&f, &ExtendedScalar::pos_inf()), Ordering::Less);
        assert_eq!(
            compare(&ExtendedScalar::neg_inf(), &ExtendedScalar::pos_inf()),
            Ordering::Less
        );
        assert_eq!(
            compare(&ExtendedScalar::neg_inf(), &ExtendedScalar::neg_inf()),
            Ordering::Equal
        );
    }

    fn random_scalar(rng: &mut StdRng) -> ExtendedScalar {
        match rng.gen_range(0..20) {
            0 => ExtendedScalar::neg_inf(),
            1 => ExtendedScalar::pos_inf(),
            _ => {
                let amount = Money::from_ratio(rng.gen_range(0..8), rng.gen_range(1..4));
                let role = if rng.gen_bool(0.5) { Role::User } else { Role::Slot };
                ExtendedScalar::finite(amount, role, rng.gen_range(0..6), rng.gen_range(0..3))
            }
        }
    }

    // 1e5 sampled triples: antisymmetry and transitivity of the order.
    // Small amount/position ranges force heavy tie-break traffic.
    #[test]
    fn total_order_on_sampled_triples() {
        let mut rng = StdRng::seed_from_u64(0x5ca1ab1e);
        for _ in 0..100_000 {
            let (x, y, z) = (
                random_scalar(&mut rng),
                random_scalar(&mut rng),
                random_scalar(&mut rng),
            );
            assert_eq!(compare(&x, &y), compare(&y, &x).reverse());
            assert_eq!(compare(&x, &x), Ordering::Equal);
            if compare(&x, &y) != Ordering::Greater && compare(&y, &z) != Ordering::Greater {
                assert_ne!(compare(&x, &z), Ordering::Greater);
            }
        }
    }
}
