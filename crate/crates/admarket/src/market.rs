//! Domain types: agents, users, slots, market instances, reports and
//! mechanism outcomes.
//!
//! A market instance is the ground truth: mediators holding ordered user
//! cost lists, advertisers with a per-user value and a capacity, and the
//! fixed agent order sigma used for tie-breaking. A `Reports` bundle is
//! what the mechanisms actually see; `MarketInstance::apply_reports`
//! splices it into the instance shape so mechanism code runs on reported
//! data without special cases. Everything is immutable after construction.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use num_rational::BigRational;
use num_traits::Zero;
use thiserror::Error;

use crate::money::Money;
use crate::scalar::{ExtendedScalar, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentKind {
    Mediator,
    Advertiser,
    Dummy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentId {
    pub kind: AgentKind,
    pub ordinal: u32,
}

impl AgentId {
    pub fn mediator(ordinal: u32) -> Self {
        AgentId { kind: AgentKind::Mediator, ordinal }
    }
    pub fn advertiser(ordinal: u32) -> Self {
        AgentId { kind: AgentKind::Advertiser, ordinal }
    }
    pub fn dummy() -> Self {
        AgentId { kind: AgentKind::Dummy, ordinal: 0 }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            AgentKind::Mediator => 'm',
            AgentKind::Advertiser => 'a',
            AgentKind::Dummy => 'd',
        };
        write!(f, "{}{}", tag, self.ordinal)
    }
}

impl FromStr for AgentId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::BadAgentId(s.to_string());
        let (tag, rest) = s.split_at(s.char_indices().nth(1).map(|(i, _)| i).unwrap_or(s.len()));
        let ordinal: u32 = rest.parse().map_err(|_| bad())?;
        let kind = match tag {
            "m" => AgentKind::Mediator,
            "a" => AgentKind::Advertiser,
            "d" => AgentKind::Dummy,
            _ => return Err(bad()),
        };
        Ok(AgentId { kind, ordinal })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed agent id {0:?}")]
    BadAgentId(String),
    #[error("duplicate agent id {0}")]
    DuplicateAgent(AgentId),
    #[error("unknown agent id {0}")]
    UnknownAgent(AgentId),
    #[error("advertiser {0} must have capacity >= 1")]
    ZeroCapacity(AgentId),
    #[error("sigma must cover every mediator and advertiser exactly once")]
    BadSigma,
    #[error("missing report for agent {0}")]
    MissingReport(AgentId),
    #[error("assignment reuses {0}")]
    DuplicateInAssignment(String),
}

/// A fixed order over all mediators and advertisers, chosen before any
/// report is read. Positions in this order feed every tie-break.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SigmaOrder(Vec<AgentId>);

impl SigmaOrder {
    pub fn new(order: Vec<AgentId>) -> Self {
        SigmaOrder(order)
    }

    pub fn agents(&self) -> &[AgentId] {
        &self.0
    }
}

/// A user: identified by her mediator and her position in the mediator's
/// report, carrying the (reported) cost.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct User {
    pub mediator: AgentId,
    pub index: usize,
    pub cost: Money,
}

impl User {
    pub fn key(&self) -> (AgentId, usize) {
        (self.mediator, self.index)
    }
}

/// One of an advertiser's identical slots. All slots of an advertiser
/// share her value; the index only feeds tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Slot {
    pub advertiser: AgentId,
    pub index: usize,
    pub value: Money,
}

impl Slot {
    pub fn key(&self) -> (AgentId, usize) {
        (self.advertiser, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mediator {
    pub id: AgentId,
    pub users: Vec<User>,
}

impl Mediator {
    pub fn new(id: AgentId, costs: Vec<Money>) -> Self {
        let users = costs
            .into_iter()
            .enumerate()
            .map(|(index, cost)| User { mediator: id, index, cost })
            .collect();
        Mediator { id, users }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Advertiser {
    pub id: AgentId,
    pub value: Money,
    pub capacity: usize,
}

impl Advertiser {
    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        (0..self.capacity).map(move |index| Slot {
            advertiser: self.id,
            index,
            value: self.value.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarketInstance {
    mediators: Vec<Mediator>,
    advertisers: Vec<Advertiser>,
    sigma: SigmaOrder,
    sigma_pos: HashMap<AgentId, usize>,
}

impl MarketInstance {
    /// Builds an instance with the default sigma: mediators by ascending
    /// ordinal, then advertisers by ascending ordinal.
    pub fn new(
        mediators: Vec<Mediator>,
        advertisers: Vec<Advertiser>,
    ) -> Result<Self, ModelError> {
        let sigma = SigmaOrder::new(
            mediators
                .iter()
                .map(|m| m.id)
                .chain(advertisers.iter().map(|a| a.id))
                .collect(),
        );
        Self::with_sigma(mediators, advertisers, sigma)
    }

    pub fn with_sigma(
        mediators: Vec<Mediator>,
        advertisers: Vec<Advertiser>,
        sigma: SigmaOrder,
    ) -> Result<Self, ModelError> {
        let mut seen = HashSet::new();
        for id in mediators.iter().map(|m| m.id).chain(advertisers.iter().map(|a| a.id)) {
            if !seen.insert(id) {
                return Err(ModelError::DuplicateAgent(id));
            }
        }
        for a in &advertisers {
            if a.capacity == 0 {
                return Err(ModelError::ZeroCapacity(a.id));
            }
        }
        let mut sigma_pos = HashMap::new();
        for (pos, id) in sigma.agents().iter().enumerate() {
            if id.kind == AgentKind::Dummy || !seen.contains(id) {
                return Err(ModelError::BadSigma);
            }
            if sigma_pos.insert(*id, pos).is_some() {
                return Err(ModelError::BadSigma);
            }
        }
        if sigma_pos.len() != seen.len() {
            return Err(ModelError::BadSigma);
        }
        Ok(MarketInstance { mediators, advertisers, sigma, sigma_pos })
    }

    pub fn mediators(&self) -> &[Mediator] {
        &self.mediators
    }

    pub fn advertisers(&self) -> &[Advertiser] {
        &self.advertisers
    }

    pub fn sigma(&self) -> &SigmaOrder {
        &self.sigma
    }

    pub fn mediator(&self, id: AgentId) -> Result<&Mediator, ModelError> {
        self.mediators
            .iter()
            .find(|m| m.id == id)
            .ok_or(ModelError::UnknownAgent(id))
    }

    pub fn advertiser(&self, id: AgentId) -> Result<&Advertiser, ModelError> {
        self.advertisers
            .iter()
            .find(|a| a.id == id)
            .ok_or(ModelError::UnknownAgent(id))
    }

    pub fn sigma_pos(&self, id: AgentId) -> usize {
        self.sigma_pos[&id]
    }

    pub fn user_scalar(&self, user: &User) -> ExtendedScalar {
        ExtendedScalar::finite(
            user.cost.clone(),
            Role::User,
            self.sigma_pos(user.mediator),
            user.index,
        )
    }

    pub fn slot_scalar(&self, slot: &Slot) -> ExtendedScalar {
        ExtendedScalar::finite(
            slot.value.clone(),
            Role::Slot,
            self.sigma_pos(slot.advertiser),
            slot.index,
        )
    }

    pub fn all_users(&self) -> Vec<User> {
        self.mediators.iter().flat_map(|m| m.users.iter().cloned()).collect()
    }

    pub fn all_slots(&self) -> Vec<Slot> {
        self.advertisers.iter().flat_map(|a| a.slots()).collect()
    }

    /// Users of every mediator except `excluded`.
    pub fn users_without(&self, excluded: AgentId) -> Vec<User> {
        self.mediators
            .iter()
            .filter(|m| m.id != excluded)
            .flat_map(|m| m.users.iter().cloned())
            .collect()
    }

    pub fn users_of(&self, mediator_ids: &BTreeSet<AgentId>) -> Vec<User> {
        self.mediators
            .iter()
            .filter(|m| mediator_ids.contains(&m.id))
            .flat_map(|m| m.users.iter().cloned())
            .collect()
    }

    pub fn slots_of(&self, advertiser_ids: &BTreeSet<AgentId>) -> Vec<Slot> {
        self.advertisers
            .iter()
            .filter(|a| advertiser_ids.contains(&a.id))
            .flat_map(|a| a.slots())
            .collect()
    }

    /// Rebuilds the instance with reported cost lists and advertiser
    /// reports in place of the true ones. Sigma is unchanged: it was fixed
    /// before any report. `capacities` selects whether reported capacities
    /// are honored or the instance's public ones are kept.
    pub fn apply_reports(
        &self,
        reports: &Reports,
        capacities: CapacitySource,
    ) -> Result<MarketInstance, ModelError> {
        let mut mediators = Vec::with_capacity(self.mediators.len());
        for m in &self.mediators {
            let costs = reports
                .mediators
                .get(&m.id)
                .ok_or(ModelError::MissingReport(m.id))?;
            mediators.push(Mediator::new(m.id, costs.clone()));
        }
        let mut advertisers = Vec::with_capacity(self.advertisers.len());
        for a in &self.advertisers {
            let rep = reports
                .advertisers
                .get(&a.id)
                .ok_or(ModelError::MissingReport(a.id))?;
            let capacity = match capacities {
                CapacitySource::Public => a.capacity,
                CapacitySource::Reported => rep.capacity,
            };
            advertisers.push(Advertiser { id: a.id, value: rep.value.clone(), capacity });
        }
        MarketInstance::with_sigma(mediators, advertisers, self.sigma.clone())
    }
}

/// Whether a mechanism trusts reported advertiser capacities or the
/// publicly known ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapacitySource {
    Public,
    Reported,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdvertiserReport {
    pub value: Money,
    pub capacity: usize,
}

/// Everything the mechanism receives: per-mediator ordered cost lists and
/// per-advertiser (value, capacity) pairs. The list order of a mediator's
/// costs is his intra-mediator tie order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reports {
    pub mediators: BTreeMap<AgentId, Vec<Money>>,
    pub advertisers: BTreeMap<AgentId, AdvertiserReport>,
}

impl Reports {
    pub fn truthful(instance: &MarketInstance) -> Self {
        Reports {
            mediators: instance
                .mediators()
                .iter()
                .map(|m| (m.id, m.users.iter().map(|u| u.cost.clone()).collect()))
                .collect(),
            advertisers: instance
                .advertisers()
                .iter()
                .map(|a| {
                    (a.id, AdvertiserReport { value: a.value.clone(), capacity: a.capacity })
                })
                .collect(),
        }
    }
}

/// An injective set of (user, slot) pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pairs: Vec<(User, Slot)>,
}

impl Assignment {
    pub fn new(pairs: Vec<(User, Slot)>) -> Result<Self, ModelError> {
        let mut users = HashSet::new();
        let mut slots = HashSet::new();
        for (u, s) in &pairs {
            if !users.insert(u.key()) {
                return Err(ModelError::DuplicateInAssignment(format!(
                    "user {}#{}",
                    u.mediator, u.index
                )));
            }
            if !slots.insert(s.key()) {
                return Err(ModelError::DuplicateInAssignment(format!(
                    "slot {}#{}",
                    s.advertiser, s.index
                )));
            }
        }
        Ok(Assignment { pairs })
    }

    pub fn empty() -> Self {
        Assignment { pairs: Vec::new() }
    }

    pub fn pairs(&self) -> &[(User, Slot)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sum of value minus cost over the pairs, as a signed exact rational.
    /// Tie keys play no role here.
    pub fn gain_from_trade(&self) -> BigRational {
        self.pairs
            .iter()
            .map(|(u, s)| s.value.amount() - u.cost.amount())
            .fold(BigRational::zero(), |acc, d| acc + d)
    }
}

/// What a mechanism run produces: the assignment plus money moved on each
/// side. Keys are real agents only; the dummy advertiser never appears.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub assignment: Assignment,
    pub advertiser_charges: BTreeMap<AgentId, Money>,
    pub mediator_payments: BTreeMap<AgentId, Money>,
}

impl Outcome {
    pub fn empty() -> Self {
        Outcome {
            assignment: Assignment::empty(),
            advertiser_charges: BTreeMap::new(),
            mediator_payments: BTreeMap::new(),
        }
    }

    pub fn total_charges(&self) -> BigRational {
        self.advertiser_charges
            .values()
            .fold(BigRational::zero(), |acc, m| acc + m.amount())
    }

    pub fn total_payments(&self) -> BigRational {
        self.mediator_payments
            .values()
            .fold(BigRational::zero(), |acc, m| acc + m.amount())
    }

    /// Users assigned to some advertiser, by (mediator, index) key.
    pub fn assigned_user_keys(&self) -> HashSet<(AgentId, usize)> {
        self.assignment.pairs().iter().map(|(u, _)| u.key()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn money(n: u64) -> Money {
        Money::from_u64(n)
    }

    #[test]
    fn agent_id_round_trip() {
        for id in [AgentId::mediator(0), AgentId::advertiser(17), AgentId::dummy()] {
            assert_eq!(id.to_string().parse::<AgentId>().unwrap(), id);
        }
        assert!("x3".parse::<AgentId>().is_err());
        assert!("m".parse::<AgentId>().is_err());
        assert!("mfoo".parse::<AgentId>().is_err());
    }

    #[test]
    fn rejects_duplicate_agents() {
        let m = vec![
            Mediator::new(AgentId::mediator(0), vec![money(1)]),
            Mediator::new(AgentId::mediator(0), vec![money(2)]),
        ];
        assert_eq!(
            MarketInstance::new(m, vec![]).unwrap_err(),
            ModelError::DuplicateAgent(AgentId::mediator(0))
        );
    }

    #[test]
    fn rejects_zero_capacity() {
        let a = vec![Advertiser { id: AgentId::advertiser(0), value: money(5), capacity: 0 }];
        assert!(matches!(
            MarketInstance::new(vec![], a),
            Err(ModelError::ZeroCapacity(_))
        ));
    }

    #[test]
    fn sigma_must_cover_agents_exactly() {
        let m = vec![Mediator::new(AgentId::mediator(0), vec![money(1)])];
        let a = vec![Advertiser { id: AgentId::advertiser(0), value: money(5), capacity: 1 }];
        let bad = SigmaOrder::new(vec![AgentId::mediator(0)]);
        assert_eq!(
            MarketInstance::with_sigma(m, a, bad).unwrap_err(),
            ModelError::BadSigma
        );
    }

    #[test]
    fn assignment_rejects_duplicates() {
        let u = User { mediator: AgentId::mediator(0), index: 0, cost: money(1) };
        let s0 = Slot { advertiser: AgentId::advertiser(0), index: 0, value: money(5) };
        let s1 = Slot { advertiser: AgentId::advertiser(0), index: 1, value: money(5) };
        assert!(Assignment::new(vec![(u.clone(), s0.clone()), (u.clone(), s1)]).is_err());
        let u1 = User { mediator: AgentId::mediator(0), index: 1, cost: money(2) };
        assert!(Assignment::new(vec![(u, s0.clone()), (u1, s0)]).is_err());
    }

    #[test]
    fn gain_from_trade_examples() {
        assert_eq!(Assignment::empty().gain_from_trade(), BigRational::zero());
        let pair = |c: u64, v: u64, i: usize| {
            (
                User { mediator: AgentId::mediator(i as u32), index: 0, cost: money(c) },
                Slot { advertiser: AgentId::advertiser(i as u32), index: 0, value: money(v) },
            )
        };
        let a = Assignment::new(vec![pair(1, 7, 0), pair(4, 5, 1)]).unwrap();
        assert_eq!(a.gain_from_trade(), BigRational::from_integer(7.into()));
        let negative = Assignment::new(vec![pair(5, 3, 0)]).unwrap();
        assert_eq!(negative.gain_from_trade(), BigRational::from_integer((-2).into()));
    }

    #[test]
    fn apply_reports_replaces_data_and_keeps_sigma() {
        let inst = MarketInstance::new(
            vec![Mediator::new(AgentId::mediator(0), vec![money(1), money(2)])],
            vec![Advertiser { id: AgentId::advertiser(0), value: money(5), capacity: 2 }],
        )
        .unwrap();
        let mut reports = Reports::truthful(&inst);
        reports.mediators.insert(AgentId::mediator(0), vec![money(3)]);
        reports.advertisers.insert(
            AgentId::advertiser(0),
            AdvertiserReport { value: money(9), capacity: 1 },
        );

        let public = inst.apply_reports(&reports, CapacitySource::Public).unwrap();
        assert_eq!(public.mediator(AgentId::mediator(0)).unwrap().users.len(), 1);
        assert_eq!(public.advertiser(AgentId::advertiser(0)).unwrap().capacity, 2);
        assert_eq!(public.advertiser(AgentId::advertiser(0)).unwrap().value, money(9));

        let reported = inst.apply_reports(&reports, CapacitySource::Reported).unwrap();
        assert_eq!(reported.advertiser(AgentId::advertiser(0)).unwrap().capacity, 1);
        assert_eq!(reported.sigma(), inst.sigma());
    }
}
