//! Scenario reports, fairness verdicts and the invariant suite run by
//! `idlease verify`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::gossip::Mode;
use crate::interface::Quote;
use crate::ledger::Digest;
use crate::service_enclave::SlotStatus;

/// Where a slot's deposit share ended up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotFate {
    Returned,
    Burned,
    Refunded,
    /// Still held by an escrow or share key at the end of the run.
    Stranded,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotReport {
    pub slot: u32,
    pub owner: Option<u32>,
    pub status: SlotStatus,
    /// `(owner, status)` for every owner skipped on this slot.
    pub skips: Vec<(u32, SlotStatus)>,
    /// Settlement transaction on the honest chain.
    pub settled: bool,
    pub reward_tx: Option<String>,
    pub reward: u64,
    pub fee: u64,
    pub deposit_share: u64,
    pub fate: SlotFate,
    /// Ground truth: the action's effect holds on the service at the end.
    pub in_effect: bool,
    pub unverified: bool,
    pub ghost: bool,
    /// Actors whose interference explains a missing payment or a burn.
    pub causes: Vec<String>,
    /// Actors responsible for a confirmation without effect.
    pub no_effect_causes: Vec<String>,
}

impl SlotReport {
    pub fn id(&self, campaign: u32) -> String {
        format!("c{campaign}s{}", self.slot)
    }

    /// The owner did the work: confirmed by the protocol or visible on the service.
    pub fn worked(&self) -> bool {
        self.owner.is_some() && (self.status == SlotStatus::Confirmed || self.in_effect)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub campaign: u32,
    pub interface: u32,
    pub service: u32,
    pub action: String,
    pub target: String,
    pub requested: u32,
    /// `done`, `abandoned`, `recovered` or `stranded`.
    pub state: String,
    pub error: Option<String>,
    pub quote: Option<Quote>,
    /// Funding transaction is on the honest chain.
    pub funded_on_chain: bool,
    /// Funds locked by the renter that are still in escrow or share keys.
    pub stranded: u64,
    pub stranded_causes: Vec<String>,
    pub slots: Vec<SlotReport>,
    pub deposit_returned: u64,
    pub deposit_burned: u64,
    pub deposit_refunded: u64,
    pub service_phase_secs: f64,
    pub payment_phase_secs: f64,
    pub settlement_txs: Vec<String>,
    pub close_txs: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoinDeltas {
    pub renter: i64,
    pub owners: BTreeMap<u32, i64>,
    pub maintainer: i64,
    /// Escrow, fund shares and anything else not owned by a party.
    pub held: i64,
}

impl CoinDeltas {
    pub fn sum(&self) -> i64 {
        self.renter + self.owners.values().sum::<i64>() + self.maintainer + self.held
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerReport {
    pub owner: u32,
    pub enrolled: bool,
    pub interface: Option<u32>,
    pub profile: String,
    pub ghost: bool,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct P2pReport {
    pub registered: u32,
    pub rejected: u32,
    pub reached: u32,
    pub flood_messages: u32,
    pub duplicates_dropped: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GossipReport {
    pub rounds: u32,
    pub messages: u64,
    pub records_sent: u64,
    /// Interface → number of owner records it holds at the end.
    pub known: BTreeMap<u32, u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainChecks {
    /// Every on-chain reward sits in one tx with its deposit return and fee.
    pub atomic_settlement: bool,
    /// Tainted messages delivered outside an attested session.
    pub secret_leaks: u32,
    /// Enlistment registries only hold genuine measurements.
    pub registry_genuine: bool,
    pub height: u64,
    pub tip: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Fair,
    Harmed,
    Advantaged,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyVerdict {
    pub party: String,
    pub classification: Classification,
    /// Fair only because every loss was the party's own doing.
    pub self_inflicted: bool,
    pub evidence: Vec<String>,
}

impl PartyVerdict {
    pub fn label(&self) -> &'static str {
        match (self.classification, self.self_inflicted) {
            (Classification::Fair, true) => "fair (self-harm)",
            (Classification::Fair, false) => "fair",
            (Classification::Harmed, _) => "harmed",
            (Classification::Advantaged, _) => "advantaged",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessVerdict {
    pub parties: Vec<PartyVerdict>,
    pub flags: Vec<String>,
}

impl FairnessVerdict {
    pub fn party(&self, name: &str) -> Option<&PartyVerdict> {
        self.parties.iter().find(|p| p.party == name)
    }

    pub fn harmed(&self) -> Vec<&str> {
        self.parties.iter().filter(|p| p.classification == Classification::Harmed).map(|p| p.party.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub mode: Mode,
    pub end_time_secs: f64,
    pub deltas: CoinDeltas,
    pub burned: u64,
    pub fees_collected: u64,
    pub campaigns: Vec<CampaignReport>,
    pub owners: Vec<OwnerReport>,
    /// Campaign → owners whose accounts acted on its hidden item.
    pub exposure: BTreeMap<u32, Vec<u32>>,
    pub p2p: Option<P2pReport>,
    pub gossip: Option<GossipReport>,
    pub chain: ChainChecks,
    pub verdict: FairnessVerdict,
    pub event_count: u64,
    pub event_log_digest: String,
    pub report_digest: String,
}

pub const RENTER: &str = "renter:0";
pub const MAINTAINER: &str = "host:0";

fn owner_party(o: u32) -> String {
    format!("owner:{o}")
}

#[derive(Default)]
struct Tally {
    harmed: Vec<String>,
    advantaged: Vec<String>,
    self_harm: Vec<String>,
}

impl Tally {
    /// Files `id` as harm or self-harm depending on who caused it.
    fn loss(&mut self, me: &str, id: String, causes: &[String]) {
        if causes.iter().any(|c| c != me) || causes.is_empty() {
            self.harmed.push(id);
        } else {
            self.self_harm.push(id);
        }
    }

    fn finish(self, party: String) -> PartyVerdict {
        let (classification, evidence, self_inflicted) = if !self.harmed.is_empty() {
            (Classification::Harmed, self.harmed, false)
        } else if !self.advantaged.is_empty() {
            (Classification::Advantaged, self.advantaged, false)
        } else {
            let s = !self.self_harm.is_empty();
            (Classification::Fair, self.self_harm, s)
        };
        let mut evidence = evidence;
        evidence.sort();
        evidence.dedup();
        PartyVerdict { party, classification, self_inflicted, evidence }
    }
}

/// Derives the per-party verdict from a report's campaign and slot data.
///
/// Owner: harmed when a slot it worked ends unpaid through someone else's
/// interference; advantaged when paid for an action without effect.
/// Renter: harmed when it paid for an action without effect, or lost a
/// deposit share or escrow to another actor; advantaged when an action took
/// effect and its owner went unpaid. Maintainer: harmed when fees escrowed on
/// the honest chain for worked slots were lost to another actor;
/// advantaged when it collected fees for an action without effect.
pub fn verdict(campaigns: &[CampaignReport], owners: &[OwnerReport]) -> FairnessVerdict {
    let mut owner_t: BTreeMap<u32, Tally> =
        owners.iter().filter(|o| o.enrolled).map(|o| (o.owner, Tally::default())).collect();
    let mut renter = Tally::default();
    let mut maint = Tally::default();
    let mut flags = BTreeSet::new();

    for c in campaigns {
        if c.stranded > 0 && c.funded_on_chain {
            renter.loss(RENTER, format!("c{}", c.campaign), &c.stranded_causes);
        }
        for s in &c.slots {
            let id = s.id(c.campaign);
            let Some(o) = s.owner else { continue };
            let me = owner_party(o);
            let t = owner_t.entry(o).or_default();
            if s.worked() && !s.settled {
                t.loss(&me, id.clone(), &s.causes);
                if s.in_effect {
                    renter.advantaged.push(id.clone());
                }
                if c.funded_on_chain && s.fee > 0 {
                    maint.loss(MAINTAINER, id.clone(), &s.causes);
                }
            }
            if s.settled && !s.in_effect {
                t.advantaged.push(id.clone());
                renter.loss(RENTER, id.clone(), &s.no_effect_causes);
                if s.fee > 0 {
                    maint.advantaged.push(id.clone());
                }
            }
            if s.fate == SlotFate::Burned {
                renter.loss(RENTER, id.clone(), &s.causes);
            }
            if s.unverified && s.status == SlotStatus::Confirmed && !s.in_effect {
                flags.insert("fairness violated: unobservable action".to_string());
            }
            if (s.worked() && !s.settled || s.fate == SlotFate::Burned) && s.causes.is_empty() {
                flags.insert(format!("unattributed loss: {id}"));
            }
        }
    }

    let mut parties: Vec<PartyVerdict> = owner_t.into_iter().map(|(o, t)| t.finish(owner_party(o))).collect();
    parties.push(renter.finish(RENTER.into()));
    parties.push(maint.finish(MAINTAINER.into()));
    FairnessVerdict { parties, flags: flags.into_iter().collect() }
}

impl ScenarioReport {
    /// Digest over the canonical JSON of the report with the digest blanked.
    pub fn compute_digest(&self) -> Digest {
        let mut r = self.clone();
        r.report_digest = String::new();
        let json = serde_json::to_string(&r).expect("report serializes");
        Digest::of("scenario-report", &[json.as_bytes()])
    }

    pub fn seal(mut self) -> Self {
        self.report_digest = self.compute_digest().to_hex();
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn slots(&self) -> impl Iterator<Item = (&CampaignReport, &SlotReport)> {
        self.campaigns.iter().flat_map(|c| c.slots.iter().map(move |s| (c, s)))
    }

    /// Every invariant the report can be checked against on its own;
    /// `event_log` additionally checks digests and evidence ids.
    pub fn check_invariants(&self, event_log: Option<&str>) -> Vec<String> {
        let mut v = Vec::new();
        if self.deltas.sum() + self.burned as i64 != 0 {
            v.push(format!("conservation: deltas {} + burned {} != 0", self.deltas.sum(), self.burned));
        }
        if !self.chain.atomic_settlement {
            v.push("atomic settlement violated on chain".into());
        }
        if self.chain.secret_leaks > 0 {
            v.push(format!("{} secret-bearing messages outside attested sessions", self.chain.secret_leaks));
        }
        if !self.chain.registry_genuine {
            v.push("non-genuine measurement in an enlistment registry".into());
        }
        for c in &self.campaigns {
            let required = c.quote.map_or(0, |q| q.deposit_required.0);
            let full = c.funded_on_chain
                && required > 0
                && c.deposit_burned == 0
                && c.deposit_returned + c.deposit_refunded == required;
            for s in &c.slots {
                if full && s.status == SlotStatus::Confirmed && !s.settled {
                    v.push(format!("deposit completeness: full deposit returned but {} unpaid", s.id(c.campaign)));
                }
                if s.settled && s.status != SlotStatus::Confirmed {
                    v.push(format!("{} settled with status {}", s.id(c.campaign), s.status.as_str()));
                }
                if s.settled && s.fate != SlotFate::Returned {
                    v.push(format!("{} settled but deposit share {:?}", s.id(c.campaign), s.fate));
                }
            }
        }
        let recomputed = verdict(&self.campaigns, &self.owners);
        if recomputed != self.verdict {
            v.push("verdict does not follow from the report".into());
        }
        if self.compute_digest().to_hex() != self.report_digest {
            v.push("report digest mismatch".into());
        }
        if let Some(log) = event_log {
            let d = Digest::of("event-log", &[log.as_bytes()]).to_hex();
            if d != self.event_log_digest {
                v.push("event log digest mismatch".into());
            }
            let tokens: BTreeSet<&str> = log
                .lines()
                .filter_map(|l| l.splitn(4, '\t').nth(3))
                .flat_map(|ids| ids.split([' ', ',', '=']))
                .collect();
            for p in &self.verdict.parties {
                if p.classification == Classification::Harmed {
                    if p.evidence.is_empty() {
                        v.push(format!("{} harmed without evidence", p.party));
                    }
                    for e in &p.evidence {
                        if !tokens.contains(e.as_str()) {
                            v.push(format!("{} cites {e}, absent from the event log", p.party));
                        }
                    }
                }
            }
        }
        v
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let coins = |x: i64| x as f64 / crate::ledger::COIN as f64;
        let _ = writeln!(s, "scenario {} (seed {}, {:?})", self.name, self.seed, self.mode);
        let _ = writeln!(s, "virtual end time {:.3} s, {} events", self.end_time_secs, self.event_count);
        for c in &self.campaigns {
            let _ = writeln!(
                s,
                "campaign {} [{}] {} {} x{}: {}{}",
                c.campaign,
                c.state,
                c.action,
                c.target,
                c.requested,
                if c.funded_on_chain { "funded" } else { "unfunded" },
                c.error.as_ref().map(|e| format!(" ({e})")).unwrap_or_default()
            );
            let _ = writeln!(
                s,
                "  service phase {:.3} s, payment phase {:.3} s; deposit returned {} burned {} refunded {}",
                c.service_phase_secs,
                c.payment_phase_secs,
                coins(c.deposit_returned as i64),
                coins(c.deposit_burned as i64),
                coins(c.deposit_refunded as i64)
            );
            for sl in c.slots.iter().take(20) {
                let _ = writeln!(
                    s,
                    "  slot {:>3} owner {:>5} {:<21} settled={} effect={} fate={:?}{}",
                    sl.slot,
                    sl.owner.map(|o| o.to_string()).unwrap_or_else(|| "-".into()),
                    sl.status.as_str(),
                    sl.settled,
                    sl.in_effect,
                    sl.fate,
                    if sl.causes.is_empty() { String::new() } else { format!(" causes={}", sl.causes.join(",")) }
                );
            }
            if c.slots.len() > 20 {
                let mut by: BTreeMap<&str, usize> = BTreeMap::new();
                for sl in &c.slots[20..] {
                    *by.entry(sl.status.as_str()).or_default() += 1;
                }
                let rest: Vec<String> = by.iter().map(|(k, n)| format!("{n} {k}")).collect();
                let _ = writeln!(s, "  ... {} more slots: {}", c.slots.len() - 20, rest.join(", "));
            }
        }
        let _ = writeln!(
            s,
            "deltas: renter {} maintainer {} held {} burned {}",
            coins(self.deltas.renter),
            coins(self.deltas.maintainer),
            coins(self.deltas.held),
            coins(self.burned as i64)
        );
        let moved: Vec<_> = self.deltas.owners.iter().filter(|(_, d)| **d != 0).collect();
        for (o, d) in moved.iter().take(10) {
            let _ = writeln!(s, "  owner {o}: {}", coins(**d));
        }
        if moved.len() > 10 {
            let _ = writeln!(s, "  ... {} more owners", moved.len() - 10);
        }
        for (c, owners) in &self.exposure {
            let _ = writeln!(s, "exposed by campaign {c}: {owners:?}");
        }
        let _ = writeln!(s, "verdict:");
        for p in &self.verdict.parties {
            if p.classification != Classification::Fair || p.self_inflicted || !p.party.starts_with("owner") {
                let _ = writeln!(
                    s,
                    "  {:<12} {}{}",
                    p.party,
                    p.label(),
                    if p.evidence.is_empty() { String::new() } else { format!(" [{}]", p.evidence.join(" ")) }
                );
            }
        }
        let others = self
            .verdict
            .parties
            .iter()
            .filter(|p| p.party.starts_with("owner") && p.classification == Classification::Fair && !p.self_inflicted)
            .count();
        if others > 0 {
            let _ = writeln!(s, "  {others} other owners fair");
        }
        for f in &self.verdict.flags {
            let _ = writeln!(s, "flag: {f}");
        }
        let _ = writeln!(s, "event log {}", self.event_log_digest);
        let _ = writeln!(s, "report {}", self.report_digest);
        s
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_text())
    }
}
