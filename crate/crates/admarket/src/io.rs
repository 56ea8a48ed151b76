//! File formats: instance documents, run and audit reports, and the
//! Monte Carlo CSV.
//!
//! Every number crosses the boundary as an exact `numer/denom` string;
//! reports add a decimal approximation next to the exact form for human
//! readers. The cost list order inside a mediator entry is data, not
//! presentation: it defines the intra-mediator tie order. Outputs contain
//! no timestamps, so identical inputs produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{BbVerdict, CheckStatus, IcVerdict, InvariantCheck, IrVerdict, RatioVerdict};
use crate::market::{
    Advertiser, AgentId, MarketInstance, Mediator, ModelError, Outcome, SigmaOrder,
};
use crate::money::{format_rational, parse_rational, rational_to_f64, Money, MoneyError};

pub const INSTANCE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("unsupported instance file version {0} (expected {INSTANCE_FORMAT_VERSION})")]
    Version(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Money(#[from] MoneyError),
}

// --- instance files ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub version: u32,
    pub sigma: Vec<String>,
    pub mediators: Vec<MediatorEntry>,
    pub advertisers: Vec<AdvertiserEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediatorEntry {
    pub id: String,
    pub costs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvertiserEntry {
    pub id: String,
    pub value: String,
    pub capacity: usize,
}

impl InstanceFile {
    pub fn from_instance(instance: &MarketInstance) -> Self {
        InstanceFile {
            version: INSTANCE_FORMAT_VERSION,
            sigma: instance.sigma().agents().iter().map(|id| id.to_string()).collect(),
            mediators: instance
                .mediators()
                .iter()
                .map(|m| MediatorEntry {
                    id: m.id.to_string(),
                    costs: m.users.iter().map(|u| u.cost.to_string()).collect(),
                })
                .collect(),
            advertisers: instance
                .advertisers()
                .iter()
                .map(|a| AdvertiserEntry {
                    id: a.id.to_string(),
                    value: a.value.to_string(),
                    capacity: a.capacity,
                })
                .collect(),
        }
    }

    pub fn into_instance(self) -> Result<MarketInstance, IoError> {
        if self.version != INSTANCE_FORMAT_VERSION {
            return Err(IoError::Version(self.version));
        }
        let mut mediators = Vec::with_capacity(self.mediators.len());
        for entry in self.mediators {
            let id: AgentId = entry.id.parse()?;
            let costs = entry
                .costs
                .iter()
                .map(|c| c.parse::<Money>())
                .collect::<Result<Vec<_>, _>>()?;
            mediators.push(Mediator::new(id, costs));
        }
        let mut advertisers = Vec::with_capacity(self.advertisers.len());
        for entry in self.advertisers {
            advertisers.push(Advertiser {
                id: entry.id.parse()?,
                value: entry.value.parse()?,
                capacity: entry.capacity,
            });
        }
        let sigma = SigmaOrder::new(
            self.sigma
                .iter()
                .map(|s| s.parse::<AgentId>())
                .collect::<Result<Vec<_>, _>>()?,
        );
        Ok(MarketInstance::with_sigma(mediators, advertisers, sigma)?)
    }
}

pub fn save_instance(path: &Path, instance: &MarketInstance) -> Result<(), IoError> {
    let file = InstanceFile::from_instance(instance);
    write_json(path, &file)
}

pub fn load_instance(path: &Path) -> Result<MarketInstance, IoError> {
    let text = fs::read_to_string(path)?;
    let file: InstanceFile = serde_json::from_str(&text)?;
    file.into_instance()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

// --- run reports ---

/// An exact rational paired with a decimal approximation for reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactNumber {
    pub exact: String,
    pub decimal: f64,
}

impl ExactNumber {
    pub fn from_rational(r: &BigRational) -> Self {
        ExactNumber { exact: format_rational(r), decimal: rational_to_f64(r) }
    }

    pub fn from_money(m: &Money) -> Self {
        Self::from_rational(m.amount())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairEntry {
    pub mediator: String,
    pub user_index: usize,
    pub cost: String,
    pub advertiser: String,
    pub slot_index: usize,
    pub value: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub mechanism: String,
    pub params: serde_json::Value,
    pub gain_from_trade: ExactNumber,
    pub pairs: Vec<PairEntry>,
    pub advertiser_charges: BTreeMap<String, ExactNumber>,
    pub mediator_payments: BTreeMap<String, ExactNumber>,
    pub trace: serde_json::Value,
}

impl RunReport {
    pub fn new(
        mechanism: &str,
        params: serde_json::Value,
        outcome: &Outcome,
        trace: serde_json::Value,
    ) -> Self {
        RunReport {
            mechanism: mechanism.to_string(),
            params,
            gain_from_trade: ExactNumber::from_rational(&outcome.assignment.gain_from_trade()),
            pairs: outcome
                .assignment
                .pairs()
                .iter()
                .map(|(u, s)| PairEntry {
                    mediator: u.mediator.to_string(),
                    user_index: u.index,
                    cost: u.cost.to_string(),
                    advertiser: s.advertiser.to_string(),
                    slot_index: s.index,
                    value: s.value.to_string(),
                })
                .collect(),
            advertiser_charges: outcome
                .advertiser_charges
                .iter()
                .map(|(id, m)| (id.to_string(), ExactNumber::from_money(m)))
                .collect(),
            mediator_payments: outcome
                .mediator_payments
                .iter()
                .map(|(id, m)| (id.to_string(), ExactNumber::from_money(m)))
                .collect(),
            trace,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_json(path, self)
    }
}

// --- audit reports ---

#[derive(Debug, Clone, Serialize)]
pub struct AuditReportDoc {
    pub mechanism: String,
    pub params: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bb: Option<BbEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ir: Option<IrEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ic: Option<IcEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<RatioEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invariants: Option<Vec<InvariantEntry>>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BbEntry {
    pub holds: bool,
    pub surplus: ExactNumber,
}

impl From<&BbVerdict> for BbEntry {
    fn from(v: &BbVerdict) -> Self {
        BbEntry { holds: v.holds, surplus: ExactNumber::from_rational(&v.surplus) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IrEntry {
    pub holds: bool,
    pub utilities: BTreeMap<String, ExactNumber>,
}

impl From<&IrVerdict> for IrEntry {
    fn from(v: &IrVerdict) -> Self {
        IrEntry {
            holds: v.holds,
            utilities: v
                .utilities
                .iter()
                .map(|(id, u)| (id.to_string(), ExactNumber::from_rational(u)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IcEntry {
    pub holds: bool,
    pub agents: BTreeMap<String, IcAgentEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IcAgentEntry {
    pub truthful_utility: ExactNumber,
    pub best_utility: ExactNumber,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_deviation: Option<String>,
    pub violated: bool,
}

impl IcEntry {
    pub fn from_verdicts(verdicts: &[IcVerdict]) -> Self {
        IcEntry {
            holds: verdicts.iter().all(|v| !v.violated),
            agents: verdicts
                .iter()
                .map(|v| {
                    (
                        v.agent.to_string(),
                        IcAgentEntry {
                            truthful_utility: ExactNumber::from_rational(&v.truthful_utility),
                            best_utility: ExactNumber::from_rational(&v.best_utility),
                            best_deviation: v.best_deviation.clone(),
                            violated: v.violated,
                        },
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioEntry {
    pub holds: bool,
    pub vacuous: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<ExactNumber>,
    pub bound: ExactNumber,
}

impl From<&RatioVerdict> for RatioEntry {
    fn from(v: &RatioVerdict) -> Self {
        RatioEntry {
            holds: v.holds,
            vacuous: v.vacuous,
            ratio: v.ratio.as_ref().map(ExactNumber::from_rational),
            bound: ExactNumber::from_rational(&v.bound),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantEntry {
    pub name: String,
    pub status: String,
    pub detail: String,
}

impl From<&InvariantCheck> for InvariantEntry {
    fn from(c: &InvariantCheck) -> Self {
        InvariantEntry {
            name: c.name.to_string(),
            status: match c.status {
                CheckStatus::Pass => "pass",
                CheckStatus::Fail => "fail",
                CheckStatus::NotApplicable => "not-applicable",
            }
            .to_string(),
            detail: c.detail.clone(),
        }
    }
}

impl AuditReportDoc {
    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_json(path, self)
    }
}

// --- Monte Carlo CSV ---

pub const MONTECARLO_CSV_HEADER: &str = "seed,gft_num,gft_den,opt_num,opt_den,ratio_decimal";

/// One row per trial plus a trailing mean row (omitted when there are no
/// trials). The ratio column is decimal for plotting; the exact values
/// sit in the rational columns.
pub fn montecarlo_csv(opt: &BigRational, rows: &[(u64, BigRational)]) -> String {
    let mut out = String::from(MONTECARLO_CSV_HEADER);
    out.push('\n');
    let ratio_text = |gft: &BigRational| -> String {
        if opt.is_zero() {
            String::new()
        } else {
            format!("{:.12}", rational_to_f64(&(gft / opt)))
        }
    };
    for (seed, gft) in rows {
        out.push_str(&format!(
            "{seed},{},{},{},{},{}\n",
            gft.numer(),
            gft.denom(),
            opt.numer(),
            opt.denom(),
            ratio_text(gft)
        ));
    }
    if !rows.is_empty() {
        let n = BigRational::from_integer(rows.len().into());
        let mean = rows.iter().fold(BigRational::zero(), |acc, (_, g)| acc + g) / n;
        out.push_str(&format!(
            "mean,{},{},{},{},{}\n",
            mean.numer(),
            mean.denom(),
            opt.numer(),
            opt.denom(),
            ratio_text(&mean)
        ));
    }
    out
}

pub fn write_montecarlo_csv(
    path: &Path,
    opt: &BigRational,
    rows: &[(u64, BigRational)],
) -> Result<(), IoError> {
    fs::write(path, montecarlo_csv(opt, rows))?;
    Ok(())
}

/// Parses an exact rational CLI argument such as `1/1000` or `3`.
pub fn parse_rational_arg(text: &str) -> Result<BigRational, MoneyError> {
    parse_rational(text)
}
