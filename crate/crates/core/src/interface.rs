//! Interface enclave: owner enrollment, quotes, funded campaign start,
//! compliant-account selection, batch dispatch and termination.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{
    payload_digest, verify_headers, Address, Amount, BlockHeader, Digest, Note, SpendKey, Transaction, TxId,
};
use crate::payment::split_even;
use crate::service_enclave::{ActionRecord, SlotStatus};
use crate::services::{AccountCredential, ActionKind, ServiceAction};
use crate::simnet::{Endpoint, SimDuration, SimTime};

pub type OwnerId = u32;
pub type CampaignId = u32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub service_id: u32,
    pub account: String,
    pub secret: String,
}

impl Credential {
    pub fn account_credential(&self) -> AccountCredential {
        AccountCredential { account: self.account.clone(), password: self.secret.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Any,
    /// Only these targets (item ids or candidates).
    TargetWhitelist(BTreeSet<String>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub service_id: u32,
    pub allowed_actions: BTreeSet<ActionKind>,
    pub constraint: Constraint,
    pub price_per_action: Amount,
    pub accepts_revert_window: bool,
}

impl Policy {
    pub fn allows(&self, service_id: u32, action: &ServiceAction, revert_window: SimDuration) -> bool {
        self.service_id == service_id
            && self.allowed_actions.contains(&action.kind)
            && match &self.constraint {
                Constraint::Any => true,
                Constraint::TargetWhitelist(w) => w.contains(&action.target),
            }
            && (revert_window == SimDuration::ZERO || self.accepts_revert_window)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerRecord {
    pub owner_id: OwnerId,
    pub accounts: Vec<(Credential, Policy)>,
    pub payout_address: Address,
    pub proxy_endpoint: Endpoint,
    /// Network address of the proxy as last reported by a poll.
    pub proxy_address: String,
    pub last_poll: SimTime,
}

impl OwnerRecord {
    pub fn account_for(&self, spec: &CampaignSpec) -> Option<&(Credential, Policy)> {
        self.accounts.iter().find(|(c, p)| {
            c.service_id == spec.service_id && p.allows(spec.service_id, &spec.action, spec.revert_window)
        })
    }

    pub fn is_fresh(&self, now: SimTime, poll_interval: SimDuration) -> bool {
        now.since(self.last_poll) <= poll_interval
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub service_id: u32,
    pub action: ServiceAction,
    pub count: u32,
    pub revert_window: SimDuration,
    pub renter_refund_address: Address,
    /// Direct link for hidden items.
    pub link: Option<String>,
}

/// Renter-supplied evidence that the campaign is funded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FundingProof {
    /// Header suffix of the renter's chain; ends at the renter's tip.
    pub renter_chain_view: Vec<BlockHeader>,
    pub funding_tx_id: TxId,
    /// Body of the block that includes the funding tx.
    pub block_txs: Vec<Transaction>,
    pub block_height: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quote {
    pub funds_upper_bound: Amount,
    pub deposit_required: Amount,
    /// Maintainer fees on top of the rewards.
    pub fee_reserve: Amount,
    /// Number of slots the quote covers.
    pub slots: u32,
}

impl Quote {
    pub fn total(&self) -> Amount {
        self.funds_upper_bound + self.deposit_required + self.fee_reserve
    }
}

/// Per-slot reservation inside the quote.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotReservation {
    pub price: Amount,
    pub deposit_share: Amount,
    pub fee: Amount,
}

impl SlotReservation {
    pub fn total(&self) -> Amount {
        self.price + self.deposit_share + self.fee
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignStatus {
    Created,
    Funded,
    Running,
    Terminated,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Campaign {
    pub campaign_id: CampaignId,
    pub spec: CampaignSpec,
    pub quote: Quote,
    pub reservations: Vec<SlotReservation>,
    pub records: Vec<ActionRecord>,
    pub status: CampaignStatus,
    pub escrow_address: Address,
    #[serde(skip)]
    pub renter_chain_view: Vec<BlockHeader>,
    pub funding_note: Option<Note>,
    /// Slot → fund share.
    pub share_of_slot: BTreeMap<u32, u32>,
    /// Owners already used by this campaign (assigned or skipped).
    pub used_owners: BTreeSet<OwnerId>,
    /// Candidates in selection order, fixed at start.
    pub candidates: Vec<Candidate>,
    pub next_candidate: usize,
}

impl Campaign {
    pub fn deposit_share(&self, slot: u32) -> Amount {
        self.reservations[slot as usize].deposit_share
    }

    pub fn all_final(&self) -> bool {
        self.records.iter().all(|r| r.status.is_final())
    }

    /// Next unused candidate for substitution.
    pub fn take_candidate(&mut self) -> Option<Candidate> {
        while self.next_candidate < self.candidates.len() {
            let c = self.candidates[self.next_candidate].clone();
            self.next_candidate += 1;
            if self.used_owners.insert(c.owner_id) {
                return Some(c);
            }
        }
        None
    }
}

/// A compliant account as handed to a service enclave.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub owner_id: OwnerId,
    pub price: Amount,
    pub credential: Credential,
    pub payout_address: Address,
    pub proxy_endpoint: Endpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EconomicParams {
    pub deposit_ppm: u32,
    pub fee_ppm: u32,
    pub confirmations: u64,
    pub poll_interval: SimDuration,
    pub difficulty_bits: u32,
}

impl Default for EconomicParams {
    fn default() -> Self {
        EconomicParams {
            deposit_ppm: 100_000,
            fee_ppm: 50_000,
            confirmations: 6,
            poll_interval: SimDuration::from_secs(600),
            difficulty_bits: 12,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InterfaceError {
    #[error("owner proxy unreachable")]
    ProxyUnreachable,
    #[error("bad credentials for service {0}")]
    BadCredentials(u32),
    #[error("no compliant accounts")]
    NoCompliantAccounts,
    #[error("unverified funding: {0}")]
    UnverifiedFunding(String),
    #[error("no service enclaves")]
    NoServiceEnclaves,
    #[error("unknown campaign {0}")]
    UnknownCampaign(CampaignId),
    #[error("unknown owner {0}")]
    UnknownOwner(OwnerId),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

/// What the interface enclave needs from the outside during enrollment.
pub trait EnrollEnv {
    /// Sends `nonce` to ourselves through `proxy`; returns what came back.
    fn relay_nonce(&mut self, proxy: Endpoint, nonce: u64) -> Option<u64>;
    /// Test login through the proxy.
    fn test_login(&mut self, proxy: Endpoint, credential: &Credential) -> bool;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnrollRequest {
    pub accounts: Vec<(Credential, Policy)>,
    pub proxy_endpoint: Endpoint,
    pub proxy_address: String,
    pub payout_address: Address,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnrollOutcome {
    pub owner_id: OwnerId,
    pub accepted: Vec<u32>,
    pub rejected: Vec<u32>,
}

/// Plan for closing one fund share.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareClose {
    pub share: u32,
    pub burn: Amount,
    /// Deposit returned through the closing refund.
    pub refunded_deposit: Amount,
}

pub struct InterfaceEnclave {
    pub id: Endpoint,
    pub params: EconomicParams,
    owners: BTreeMap<OwnerId, OwnerRecord>,
    campaigns: BTreeMap<CampaignId, Campaign>,
    next_nonce: u64,
    seed: u64,
}

impl InterfaceEnclave {
    pub fn new(id: Endpoint, params: EconomicParams, seed: u64) -> Self {
        InterfaceEnclave { id, params, owners: BTreeMap::new(), campaigns: BTreeMap::new(), next_nonce: 0, seed }
    }

    pub fn owners(&self) -> &BTreeMap<OwnerId, OwnerRecord> {
        &self.owners
    }

    pub fn owner(&self, id: OwnerId) -> Option<&OwnerRecord> {
        self.owners.get(&id)
    }

    pub fn campaign(&self, id: CampaignId) -> Option<&Campaign> {
        self.campaigns.get(&id)
    }

    pub fn campaign_mut(&mut self, id: CampaignId) -> Result<&mut Campaign, InterfaceError> {
        self.campaigns.get_mut(&id).ok_or(InterfaceError::UnknownCampaign(id))
    }

    pub fn campaigns(&self) -> impl Iterator<Item = &Campaign> {
        self.campaigns.values()
    }

    /// Verifies the proxy and every credential, then stores the record.
    /// Credentials that fail their test login are dropped; if none survive
    /// the enrollment fails.
    pub fn enroll_owner(
        &mut self,
        owner_id: OwnerId,
        req: EnrollRequest,
        now: SimTime,
        env: &mut dyn EnrollEnv,
    ) -> Result<EnrollOutcome, InterfaceError> {
        for (_, p) in &req.accounts {
            if p.price_per_action == Amount::ZERO {
                return Err(InterfaceError::InvalidPolicy("price_per_action must be positive".into()));
            }
            if p.allowed_actions.is_empty() {
                return Err(InterfaceError::InvalidPolicy("no allowed actions".into()));
            }
        }
        self.next_nonce += 1;
        let nonce = Digest::of("enroll-nonce", &[&self.seed.to_le_bytes(), &self.next_nonce.to_le_bytes()]);
        let nonce = u64::from_le_bytes(nonce.0[..8].try_into().expect("8 bytes"));
        if env.relay_nonce(req.proxy_endpoint, nonce) != Some(nonce) {
            return Err(InterfaceError::ProxyUnreachable);
        }
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        let mut accounts = Vec::new();
        for (c, p) in req.accounts {
            if env.test_login(req.proxy_endpoint, &c) {
                accepted.push(c.service_id);
                accounts.push((c, p));
            } else {
                rejected.push(c.service_id);
            }
        }
        if accounts.is_empty() {
            return Err(InterfaceError::BadCredentials(rejected.first().copied().unwrap_or(0)));
        }
        self.owners.insert(
            owner_id,
            OwnerRecord {
                owner_id,
                accounts,
                payout_address: req.payout_address,
                proxy_endpoint: req.proxy_endpoint,
                proxy_address: req.proxy_address,
                last_poll: now,
            },
        );
        Ok(EnrollOutcome { owner_id, accepted, rejected })
    }

    /// Adds a record learned from a peer interface enclave.
    pub fn import_owner(&mut self, rec: OwnerRecord) -> bool {
        match self.owners.get(&rec.owner_id) {
            Some(existing) if existing.last_poll >= rec.last_poll => false,
            _ => {
                self.owners.insert(rec.owner_id, rec);
                true
            }
        }
    }

    pub fn poll(&mut self, owner: OwnerId, proxy_address: &str, now: SimTime) -> Result<(), InterfaceError> {
        let r = self.owners.get_mut(&owner).ok_or(InterfaceError::UnknownOwner(owner))?;
        r.last_poll = now;
        r.proxy_address = proxy_address.into();
        Ok(())
    }

    /// Compliant accounts: ascending price, ties by owner id, stale proxies out.
    pub fn select_compliant(&self, spec: &CampaignSpec, now: SimTime) -> Vec<Candidate> {
        let mut v: Vec<Candidate> = self
            .owners
            .values()
            .filter(|r| r.is_fresh(now, self.params.poll_interval))
            .filter_map(|r| {
                r.account_for(spec).map(|(c, p)| Candidate {
                    owner_id: r.owner_id,
                    price: p.price_per_action,
                    credential: c.clone(),
                    payout_address: r.payout_address,
                    proxy_endpoint: r.proxy_endpoint,
                })
            })
            .collect();
        v.sort_by_key(|c| (c.price, c.owner_id));
        v
    }

    pub fn quote_campaign(&self, spec: &CampaignSpec, now: SimTime) -> Result<Quote, InterfaceError> {
        let prices: Vec<Amount> = self.select_compliant(spec, now).iter().map(|c| c.price).collect();
        quote_from_prices(&prices, spec.count, self.params.deposit_ppm, self.params.fee_ppm).map(|(q, _)| q)
    }

    /// Registers a campaign and returns its id, quote and escrow address.
    pub fn create_campaign(
        &mut self,
        spec: CampaignSpec,
        now: SimTime,
    ) -> Result<(CampaignId, Quote, Address), InterfaceError> {
        let prices: Vec<Amount> = self.select_compliant(&spec, now).iter().map(|c| c.price).collect();
        let (quote, reservations) =
            quote_from_prices(&prices, spec.count, self.params.deposit_ppm, self.params.fee_ppm)?;
        let campaign_id = self.campaigns.len() as CampaignId;
        let escrow = self.escrow_key(campaign_id).address();
        let records = (0..quote.slots).map(|i| ActionRecord::new(i, spec.action.clone())).collect();
        self.campaigns.insert(
            campaign_id,
            Campaign {
                campaign_id,
                spec,
                quote,
                reservations,
                records,
                status: CampaignStatus::Created,
                escrow_address: escrow,
                renter_chain_view: Vec::new(),
                funding_note: None,
                share_of_slot: BTreeMap::new(),
                used_owners: BTreeSet::new(),
                candidates: Vec::new(),
                next_candidate: 0,
            },
        );
        Ok((campaign_id, quote, escrow))
    }

    /// Key controlling the campaign escrow; never leaves the enclave.
    pub fn escrow_key(&self, campaign_id: CampaignId) -> SpendKey {
        SpendKey::derive(&format!("escrow/{}/{campaign_id}", self.id), self.seed)
    }

    /// Checks the renter's funding evidence and moves the campaign to funded.
    pub fn start_campaign(
        &mut self,
        campaign_id: CampaignId,
        proof: FundingProof,
        now: SimTime,
    ) -> Result<(), InterfaceError> {
        let k = self.params.confirmations;
        let bits = self.params.difficulty_bits;
        let c = self.campaigns.get_mut(&campaign_id).ok_or(InterfaceError::UnknownCampaign(campaign_id))?;
        let funding = verify_funding(&proof, c.escrow_address, c.quote.total(), k, bits)
            .map_err(InterfaceError::UnverifiedFunding)?;
        c.funding_note = Some(funding);
        c.renter_chain_view = proof.renter_chain_view;
        c.status = CampaignStatus::Funded;
        let spec = c.spec.clone();
        let candidates = self.select_compliant(&spec, now);
        let c = self.campaigns.get_mut(&campaign_id).expect("checked");
        c.candidates = candidates;
        Ok(())
    }

    /// Slot → share, round robin; returns per-share reserved amounts.
    pub fn plan_shares(&mut self, campaign_id: CampaignId, shares: usize) -> Result<Vec<Amount>, InterfaceError> {
        let c = self.campaign_mut(campaign_id)?;
        let mut amounts = vec![Amount::ZERO; shares.max(1)];
        for (i, r) in c.reservations.iter().enumerate() {
            let s = i % shares.max(1);
            c.share_of_slot.insert(i as u32, s as u32);
            amounts[s] += r.total();
        }
        c.status = CampaignStatus::Running;
        Ok(amounts)
    }

    /// Per-share burn and deposit refund for closing the campaign. `settled`
    /// says whether a slot's settlement is anchored on chain.
    pub fn terminate_campaign(
        &mut self,
        campaign_id: CampaignId,
        shares: usize,
        settled: &dyn Fn(u32) -> bool,
    ) -> Result<Vec<ShareClose>, InterfaceError> {
        let c = self.campaign_mut(campaign_id)?;
        let mut plan: Vec<ShareClose> = (0..shares.max(1) as u32)
            .map(|share| ShareClose { share, burn: Amount::ZERO, refunded_deposit: Amount::ZERO })
            .collect();
        for r in &c.records {
            let d = c.reservations[r.slot_id as usize].deposit_share;
            let share = c.share_of_slot.get(&r.slot_id).copied().unwrap_or(0) as usize;
            match deposit_fate(r.status, settled(r.slot_id)) {
                DepositFate::Returned => {}
                DepositFate::Burned => plan[share].burn += d,
                DepositFate::Refunded => plan[share].refunded_deposit += d,
            }
        }
        c.status = CampaignStatus::Terminated;
        Ok(plan)
    }
}

/// What happens to a slot's deposit share.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepositFate {
    /// Returned inside the settlement transaction.
    Returned,
    /// Attempted and never settled.
    Burned,
    /// Returned through the closing refund.
    Refunded,
}

pub fn deposit_fate(status: SlotStatus, settled: bool) -> DepositFate {
    match status {
        SlotStatus::Confirmed if settled => DepositFate::Returned,
        SlotStatus::Confirmed | SlotStatus::Timeout | SlotStatus::Performed => DepositFate::Burned,
        SlotStatus::Pending
        | SlotStatus::SkippedInconsistent
        | SlotStatus::SkippedUnreachable
        | SlotStatus::Reverted
        | SlotStatus::Failed => DepositFate::Refunded,
    }
}

/// Quote and per-slot reservations from the compliant prices.
pub fn quote_from_prices(
    prices: &[Amount],
    count: u32,
    deposit_ppm: u32,
    fee_ppm: u32,
) -> Result<(Quote, Vec<SlotReservation>), InterfaceError> {
    if prices.is_empty() {
        return Err(InterfaceError::NoCompliantAccounts);
    }
    let n = (count as usize).min(prices.len());
    let mut top: Vec<Amount> = prices.to_vec();
    top.sort_by(|a, b| b.cmp(a));
    top.truncate(n);
    // Ascending so the i-th cheapest selected account fits slot i.
    top.reverse();
    let funds: Amount = top.iter().copied().sum();
    let deposit = funds.scale_ppm(deposit_ppm);
    let deposit_shares = split_even(deposit, n);
    let reservations: Vec<SlotReservation> = top
        .iter()
        .zip(deposit_shares)
        .map(|(&price, deposit_share)| SlotReservation { price, deposit_share, fee: price.scale_ppm(fee_ppm) })
        .collect();
    let fee_reserve = reservations.iter().map(|r| r.fee).sum();
    Ok((Quote { funds_upper_bound: funds, deposit_required: deposit, fee_reserve, slots: n as u32 }, reservations))
}

/// Round-robin partition of `slots` over `enclaves` service enclaves.
pub fn dispatch_batches(slots: &[u32], enclaves: usize) -> Result<Vec<Vec<u32>>, InterfaceError> {
    if enclaves == 0 {
        return Err(InterfaceError::NoServiceEnclaves);
    }
    let mut out = vec![Vec::new(); enclaves];
    for (i, s) in slots.iter().enumerate() {
        out[i % enclaves].push(*s);
    }
    Ok(out)
}

/// Verifies the renter's funding evidence; returns the escrow note.
pub fn verify_funding(
    proof: &FundingProof,
    escrow: Address,
    required: Amount,
    k: u64,
    bits: u32,
) -> Result<Note, String> {
    let view = &proof.renter_chain_view;
    if view.is_empty() || !verify_headers(view, bits) {
        return Err("renter chain view does not verify".into());
    }
    let first = view[0].height;
    let header = proof
        .block_height
        .checked_sub(first)
        .and_then(|i| view.get(i as usize))
        .ok_or("funding block outside the view")?;
    if payload_digest(&proof.block_txs) != header.payload_digest {
        return Err("block body does not match header".into());
    }
    let tx = proof.block_txs.iter().find(|t| t.tx_id == proof.funding_tx_id).ok_or("funding tx not in block")?;
    let confirmations = view.last().expect("nonempty").height - proof.block_height + 1;
    if confirmations < k {
        return Err(format!("{confirmations} confirmations, need {k}"));
    }
    let (idx, out) = tx
        .outputs
        .iter()
        .enumerate()
        .filter(|(_, o)| o.owner == escrow)
        .max_by_key(|(_, o)| o.value)
        .ok_or("no output to the escrow address")?;
    if out.value < required {
        return Err(format!("funding {} below required {}", out.value, required));
    }
    Ok(tx.output_note(idx).expect("index from enumerate"))
}
