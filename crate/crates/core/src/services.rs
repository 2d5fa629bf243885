//! Target services the enclaves act on.
//!
//! The social service has publicly visible effects (who upvoted, posted or
//! followed an item). The voting service exposes only tallies. Both run every
//! action as a five-exchange pipeline; the effect is applied on the fifth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of request/response exchanges in one action.
pub const PIPELINE_LEN: u8 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Upvote,
    Post,
    Follow,
    Vote,
}

impl ActionKind {
    /// Whether the effect is visible to third parties.
    pub fn observable(self) -> bool {
        !matches!(self, ActionKind::Vote)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Upvote => "upvote",
            ActionKind::Post => "post",
            ActionKind::Follow => "follow",
            ActionKind::Vote => "vote",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServiceAction {
    pub kind: ActionKind,
    /// Item id for social actions, candidate name for votes.
    pub target: String,
}

impl ServiceAction {
    pub fn new(kind: ActionKind, target: impl Into<String>) -> Self {
        ServiceAction { kind, target: target.into() }
    }

    pub fn observable(&self) -> bool {
        self.kind.observable()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccountCredential {
    pub account: String,
    pub password: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotePolicy {
    FirstCounts,
    LastCounts,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServiceError {
    #[error("authentication failed for {0}")]
    AuthFailed(String),
    #[error("{account} already applied {action:?}")]
    DuplicateAction { account: String, action: ServiceAction },
    #[error("item {0} not found")]
    NotFound(String),
    #[error("{0} already voted")]
    AlreadyVoted(String),
    #[error("unknown candidate {0}")]
    UnknownCandidate(String),
    #[error("nothing to revert")]
    NothingToRevert,
    #[error("action kind {0:?} not supported by this service")]
    Unsupported(ActionKind),
    #[error("pipeline already complete")]
    PipelineComplete,
}

/// Returned on the final exchange.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confirmation {
    pub account: String,
    pub action: ServiceAction,
    /// Opaque receipt; for votes, usable for individual verifiability.
    pub receipt: u64,
}

/// An in-progress action.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pipeline {
    pub credential: AccountCredential,
    pub action: ServiceAction,
    /// Source endpoint the service sees (the owner's proxy).
    pub source: String,
    /// Direct link for hidden items.
    pub link: Option<String>,
    completed: u8,
}

impl Pipeline {
    pub fn new(credential: AccountCredential, action: ServiceAction, source: impl Into<String>) -> Self {
        Pipeline { credential, action, source: source.into(), link: None, completed: 0 }
    }

    pub fn with_link(mut self, link: Option<String>) -> Self {
        self.link = link;
        self
    }

    pub fn completed(&self) -> u8 {
        self.completed
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExchangeResult {
    /// Intermediate exchange succeeded.
    Continue(u8),
    Done(Confirmation),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Account {
    password: String,
    ghost: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Item {
    hidden: bool,
    link: Option<String>,
    effects: BTreeMap<ActionKind, BTreeSet<String>>,
}

/// Public view of one item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemView {
    pub item: String,
    pub counters: BTreeMap<ActionKind, u64>,
}

impl ItemView {
    pub fn count(&self, k: ActionKind) -> u64 {
        self.counters.get(&k).copied().unwrap_or(0)
    }
}

/// One row of the request log: what the service saw.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub account: String,
    pub source: String,
    pub step: u8,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SocialService {
    accounts: BTreeMap<String, Account>,
    items: BTreeMap<String, Item>,
    colluding: bool,
    next_receipt: u64,
    request_log: Vec<RequestLogEntry>,
}

impl SocialService {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, account: &str, password: &str) {
        self.accounts.insert(account.into(), Account { password: password.into(), ghost: false });
    }

    /// A service-created account whose actions never change public state.
    pub fn create_ghost(&mut self, account: &str, password: &str) {
        self.accounts.insert(account.into(), Account { password: password.into(), ghost: true });
    }

    pub fn set_colluding(&mut self, on: bool) {
        self.colluding = on;
    }

    pub fn is_ghost(&self, account: &str) -> bool {
        self.accounts.get(account).is_some_and(|a| a.ghost)
    }

    pub fn add_item(&mut self, item: &str) {
        self.items.entry(item.into()).or_default();
    }

    /// Creates an item only reachable through the returned link.
    pub fn create_hidden_item(&mut self, item: &str) -> String {
        let link = format!("link-{item}");
        self.items.insert(item.into(), Item { hidden: true, link: Some(link.clone()), effects: BTreeMap::new() });
        link
    }

    pub fn login(&self, cred: &AccountCredential) -> Result<(), ServiceError> {
        match self.accounts.get(&cred.account) {
            Some(a) if a.password == cred.password => Ok(()),
            _ => Err(ServiceError::AuthFailed(cred.account.clone())),
        }
    }

    fn reachable(&self, item: &str, link: Option<&str>) -> Result<&Item, ServiceError> {
        let it = self.items.get(item).ok_or_else(|| ServiceError::NotFound(item.into()))?;
        if it.hidden && it.link.as_deref() != link {
            return Err(ServiceError::NotFound(item.into()));
        }
        Ok(it)
    }

    /// Runs the next exchange of `p`.
    pub fn exchange(&mut self, p: &mut Pipeline) -> Result<ExchangeResult, ServiceError> {
        if p.completed >= PIPELINE_LEN {
            return Err(ServiceError::PipelineComplete);
        }
        let step = p.completed + 1;
        self.request_log.push(RequestLogEntry {
            account: p.credential.account.clone(),
            source: p.source.clone(),
            step,
        });
        match step {
            1 => self.login(&p.credential)?,
            2 => {
                if p.action.kind == ActionKind::Vote {
                    return Err(ServiceError::Unsupported(ActionKind::Vote));
                }
                self.reachable(&p.action.target, p.link.as_deref())?;
            }
            3 | 4 => {}
            _ => {
                let conf = self.apply(&p.credential, &p.action, p.link.as_deref())?;
                p.completed = step;
                return Ok(ExchangeResult::Done(conf));
            }
        }
        p.completed = step;
        Ok(ExchangeResult::Continue(step))
    }

    fn apply(
        &mut self,
        cred: &AccountCredential,
        action: &ServiceAction,
        link: Option<&str>,
    ) -> Result<Confirmation, ServiceError> {
        self.login(cred)?;
        self.reachable(&action.target, link)?;
        let ghost = self.is_ghost(&cred.account);
        self.next_receipt += 1;
        let receipt = self.next_receipt;
        let conf = Confirmation { account: cred.account.clone(), action: action.clone(), receipt };
        if ghost {
            // Colluding services answer ghosts as if the action succeeded.
            return Ok(conf);
        }
        let item = self.items.get_mut(&action.target).expect("reachable checked");
        let set = item.effects.entry(action.kind).or_default();
        if !set.insert(cred.account.clone()) {
            return Err(ServiceError::DuplicateAction { account: cred.account.clone(), action: action.clone() });
        }
        Ok(conf)
    }

    /// Full five-exchange action in one call.
    pub fn execute_pipeline(
        &mut self,
        cred: &AccountCredential,
        action: &ServiceAction,
    ) -> Result<Confirmation, ServiceError> {
        let mut p = Pipeline::new(cred.clone(), action.clone(), cred.account.clone());
        loop {
            if let ExchangeResult::Done(c) = self.exchange(&mut p)? {
                return Ok(c);
            }
        }
    }

    pub fn revert(&mut self, cred: &AccountCredential, action: &ServiceAction) -> Result<(), ServiceError> {
        self.login(cred)?;
        let removed = self
            .items
            .get_mut(&action.target)
            .and_then(|i| i.effects.get_mut(&action.kind))
            .is_some_and(|s| s.remove(&cred.account));
        if removed {
            Ok(())
        } else {
            Err(ServiceError::NothingToRevert)
        }
    }

    pub fn observe(&self, item: &str, link: Option<&str>) -> Result<ItemView, ServiceError> {
        let it = self.reachable(item, link)?;
        Ok(ItemView { item: item.into(), counters: it.effects.iter().map(|(k, s)| (*k, s.len() as u64)).collect() })
    }

    /// Whether `account`'s effect is publicly visible on the item.
    pub fn visible_effect(
        &self,
        item: &str,
        link: Option<&str>,
        kind: ActionKind,
        account: &str,
    ) -> Result<bool, ServiceError> {
        let it = self.reachable(item, link)?;
        Ok(it.effects.get(&kind).is_some_and(|s| s.contains(account)))
    }

    /// Accounts that acted on an item; what a service learns from its own campaign.
    pub fn exposed_accounts(&self, item: &str) -> BTreeSet<String> {
        self.items.get(item).map(|i| i.effects.values().flatten().cloned().collect()).unwrap_or_default()
    }

    pub fn request_log(&self) -> &[RequestLogEntry] {
        &self.request_log
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "social",
            "colluding": self.colluding,
            "accounts": self.accounts.iter().map(|(n, a)| serde_json::json!({"account": n, "ghost": a.ghost})).collect::<Vec<_>>(),
            "items": self.items.iter().map(|(n, i)| serde_json::json!({
                "item": n,
                "hidden": i.hidden,
                "counters": i.effects.iter().map(|(k, s)| (k.as_str().to_string(), s.len())).collect::<BTreeMap<_, _>>(),
            })).collect::<Vec<_>>(),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Ballot {
    candidate: String,
    receipt: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VotingService {
    voters: BTreeMap<String, Account>,
    candidates: BTreeSet<String>,
    policy: VotePolicy,
    ballots: BTreeMap<String, Vec<Ballot>>,
    colluding: bool,
    next_receipt: u64,
}

impl VotingService {
    pub fn new(policy: VotePolicy, candidates: impl IntoIterator<Item = String>) -> Self {
        VotingService {
            voters: BTreeMap::new(),
            candidates: candidates.into_iter().collect(),
            policy,
            ballots: BTreeMap::new(),
            colluding: false,
            next_receipt: 0,
        }
    }

    pub fn policy(&self) -> VotePolicy {
        self.policy
    }

    pub fn candidates(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(String::as_str)
    }

    pub fn register(&mut self, voter: &str, password: &str) {
        self.voters.insert(voter.into(), Account { password: password.into(), ghost: false });
    }

    pub fn create_ghost(&mut self, voter: &str, password: &str) {
        self.voters.insert(voter.into(), Account { password: password.into(), ghost: true });
    }

    pub fn set_colluding(&mut self, on: bool) {
        self.colluding = on;
    }

    pub fn is_ghost(&self, voter: &str) -> bool {
        self.voters.get(voter).is_some_and(|a| a.ghost)
    }

    pub fn login(&self, cred: &AccountCredential) -> Result<(), ServiceError> {
        match self.voters.get(&cred.account) {
            Some(a) if a.password == cred.password => Ok(()),
            _ => Err(ServiceError::AuthFailed(cred.account.clone())),
        }
    }

    pub fn cast_vote(&mut self, cred: &AccountCredential, candidate: &str) -> Result<Confirmation, ServiceError> {
        self.login(cred)?;
        if !self.candidates.contains(candidate) {
            return Err(ServiceError::UnknownCandidate(candidate.into()));
        }
        self.next_receipt += 1;
        let receipt = self.next_receipt;
        let conf = Confirmation {
            account: cred.account.clone(),
            action: ServiceAction::new(ActionKind::Vote, candidate),
            receipt,
        };
        if self.is_ghost(&cred.account) {
            return Ok(conf);
        }
        let list = self.ballots.entry(cred.account.clone()).or_default();
        if self.policy == VotePolicy::FirstCounts && !list.is_empty() {
            return Err(ServiceError::AlreadyVoted(cred.account.clone()));
        }
        list.push(Ballot { candidate: candidate.into(), receipt });
        Ok(conf)
    }

    fn counted(&self, voter: &str) -> Option<&Ballot> {
        let list = self.ballots.get(voter)?;
        match self.policy {
            VotePolicy::FirstCounts => list.first(),
            VotePolicy::LastCounts => list.last(),
        }
    }

    /// The only observer API: counted votes per candidate.
    pub fn tally(&self) -> BTreeMap<String, u64> {
        let mut t: BTreeMap<String, u64> = self.candidates.iter().map(|c| (c.clone(), 0)).collect();
        for voter in self.ballots.keys() {
            if let Some(b) = self.counted(voter) {
                *t.entry(b.candidate.clone()).or_insert(0) += 1;
            }
        }
        t
    }

    /// Individual verifiability: is the ballot with `receipt` the one counted
    /// for this voter?
    pub fn verify_ballot(&self, cred: &AccountCredential, receipt: u64) -> Result<bool, ServiceError> {
        self.login(cred)?;
        if self.colluding && self.is_ghost(&cred.account) {
            // The service vouches for the fake ballot it issued.
            return Ok(true);
        }
        Ok(self.counted(&cred.account).is_some_and(|b| b.receipt == receipt))
    }

    /// Ground truth for reports: the candidate counted for `voter`, if any.
    pub fn counted_choice(&self, voter: &str) -> Option<&str> {
        self.counted(voter).map(|b| b.candidate.as_str())
    }

    pub fn exchange(&mut self, p: &mut Pipeline) -> Result<ExchangeResult, ServiceError> {
        if p.completed >= PIPELINE_LEN {
            return Err(ServiceError::PipelineComplete);
        }
        let step = p.completed + 1;
        match step {
            1 => self.login(&p.credential)?,
            2 => {
                if p.action.kind != ActionKind::Vote {
                    return Err(ServiceError::Unsupported(p.action.kind));
                }
                if !self.candidates.contains(&p.action.target) {
                    return Err(ServiceError::UnknownCandidate(p.action.target.clone()));
                }
            }
            3 | 4 => {}
            _ => {
                let conf = self.cast_vote(&p.credential, &p.action.target.clone())?;
                p.completed = step;
                return Ok(ExchangeResult::Done(conf));
            }
        }
        p.completed = step;
        Ok(ExchangeResult::Continue(step))
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "voting",
            "policy": self.policy,
            "colluding": self.colluding,
            "voters": self.voters.len(),
            "tally": self.tally(),
        })
    }
}

/// Either target service.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum TargetService {
    Social(SocialService),
    Voting(VotingService),
}

impl TargetService {
    pub fn exchange(&mut self, p: &mut Pipeline) -> Result<ExchangeResult, ServiceError> {
        match self {
            TargetService::Social(s) => s.exchange(p),
            TargetService::Voting(v) => v.exchange(p),
        }
    }

    pub fn login(&self, cred: &AccountCredential) -> Result<(), ServiceError> {
        match self {
            TargetService::Social(s) => s.login(cred),
            TargetService::Voting(v) => v.login(cred),
        }
    }

    pub fn is_ghost(&self, account: &str) -> bool {
        match self {
            TargetService::Social(s) => s.is_ghost(account),
            TargetService::Voting(v) => v.is_ghost(account),
        }
    }

    pub fn as_social(&self) -> Option<&SocialService> {
        match self {
            TargetService::Social(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_voting(&self) -> Option<&VotingService> {
        match self {
            TargetService::Voting(v) => Some(v),
            _ => None,
        }
    }

    /// Accounts a colluding operator can tie to an item it ran a campaign on.
    /// Ballots are unlinkable, so the voting service learns nothing.
    pub fn exposed_accounts(&self, item: &str) -> BTreeSet<String> {
        match self {
            TargetService::Social(s) => s.exposed_accounts(item),
            TargetService::Voting(_) => BTreeSet::new(),
        }
    }

    pub fn snapshot(&self) -> serde_json::Value {
        match self {
            TargetService::Social(s) => s.snapshot(),
            TargetService::Voting(v) => v.snapshot(),
        }
    }
}
