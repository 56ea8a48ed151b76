//! Seeded random instance generation.
//!
//! All draws come from one ChaCha stream seeded by the spec, in a fixed
//! order (mediators first, then advertisers), so a spec generates exactly
//! one instance. Amounts are drawn on a uniform grid of rationals with a
//! bounded denominator; nothing here is a float.

use num_rational::BigRational;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{Advertiser, AgentId, MarketInstance, Mediator, ModelError};
use crate::money::{self, Money};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeDist {
    Fixed { value: usize },
    Uniform { lo: usize, hi: usize },
}

impl SizeDist {
    fn draw(&self, rng: &mut ChaCha12Rng) -> usize {
        match self {
            SizeDist::Fixed { value } => *value,
            SizeDist::Uniform { lo, hi } => rng.gen_range(*lo..=*hi),
        }
    }

    fn max(&self) -> usize {
        match self {
            SizeDist::Fixed { value } => *value,
            SizeDist::Uniform { hi, .. } => *hi,
        }
    }
}

/// Uniform rational amounts on a grid between `lo` and `hi` with
/// `denominator` steps. The closed end is `lo` by default; `open_low`
/// flips the draw to exclude `lo` and include `hi` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmountDist {
    #[serde(with = "money::serde_rational")]
    pub lo: BigRational,
    #[serde(with = "money::serde_rational")]
    pub hi: BigRational,
    pub denominator: u64,
    #[serde(default)]
    pub open_low: bool,
}

impl AmountDist {
    fn draw(&self, rng: &mut ChaCha12Rng) -> Money {
        let step = rng.gen_range(0..self.denominator) + self.open_low as u64;
        let fraction = BigRational::new(step.into(), self.denominator.into());
        let amount = &self.lo + (&self.hi - &self.lo) * fraction;
        Money::new(amount).expect("draws from a nonnegative range")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_mediators: usize,
    pub n_advertisers: usize,
    pub users_per_mediator: SizeDist,
    pub capacity: SizeDist,
    pub cost: AmountDist,
    pub value: AmountDist,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl GeneratorSpec {
    /// The double-auction preset: n single-user mediators against n
    /// unit-capacity advertisers, costs uniform on [0, 1) and values
    /// uniform on (0, 1], denominators up to a million.
    pub fn double_auction(n: usize, seed: u64) -> Self {
        let unit = |open_low| AmountDist {
            lo: BigRational::from_integer(0.into()),
            hi: BigRational::from_integer(1.into()),
            denominator: 1_000_000,
            open_low,
        };
        GeneratorSpec {
            n_mediators: n,
            n_advertisers: n,
            users_per_mediator: SizeDist::Fixed { value: 1 },
            capacity: SizeDist::Fixed { value: 1 },
            cost: unit(false),
            value: unit(true),
            seed,
        }
    }

    fn validate(&self) -> Result<(), GenError> {
        for (name, dist) in [("cost", &self.cost), ("value", &self.value)] {
            if dist.lo > dist.hi {
                return Err(GenError::InvalidSpec(format!("{name}: lo above hi")));
            }
            if dist.denominator == 0 {
                return Err(GenError::InvalidSpec(format!("{name}: zero denominator")));
            }
            if dist.lo < BigRational::from_integer(0.into()) {
                return Err(GenError::InvalidSpec(format!("{name}: negative lower bound")));
            }
        }
        match self.capacity {
            SizeDist::Fixed { value } if value == 0 => {
                return Err(GenError::InvalidSpec("capacity must be at least 1".into()))
            }
            SizeDist::Uniform { lo, hi } if lo == 0 || lo > hi => {
                return Err(GenError::InvalidSpec("capacity range must start at 1".into()))
            }
            _ => {}
        }
        if let SizeDist::Uniform { lo, hi } = self.users_per_mediator {
            if lo > hi {
                return Err(GenError::InvalidSpec("users_per_mediator: lo above hi".into()));
            }
        }
        Ok(())
    }

    /// The largest capacity or user count this spec can produce; the
    /// natural gamma for runs over generated instances.
    pub fn implied_gamma(&self) -> usize {
        self.users_per_mediator.max().max(self.capacity.max()).max(1)
    }
}

/// Deterministically expands a spec into an instance (default sigma).
pub fn generate(spec: &GeneratorSpec) -> Result<MarketInstance, GenError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut mediators = Vec::with_capacity(spec.n_mediators);
    for i in 0..spec.n_mediators {
        let count = spec.users_per_mediator.draw(&mut rng);
        let costs = (0..count).map(|_| spec.cost.draw(&mut rng)).collect();
        mediators.push(Mediator::new(AgentId::mediator(i as u32), costs));
    }
    let mut advertisers = Vec::with_capacity(spec.n_advertisers);
    for i in 0..spec.n_advertisers {
        let capacity = spec.capacity.draw(&mut rng);
        let value = spec.value.draw(&mut rng);
        advertisers.push(Advertiser { id: AgentId::advertiser(i as u32), value, capacity });
    }
    Ok(MarketInstance::new(mediators, advertisers)?)
}
