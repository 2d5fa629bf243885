//! Behavioral actors: identity owners and their proxies, renters and their
//! chain views, and hosts with their narrow network powers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Address, BlockHeader, Chain, LedgerError, SpendKey, Transaction};
use crate::services::{ExchangeResult, Pipeline, ServiceAction, ServiceError, TargetService};
use crate::simnet::{Actor, CutPoint, Endpoint, HostControls, RuleId, Scope, SimDuration, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OwnerProfile {
    Honest,
    RevertsActions,
    CutsResponses,
    Eclipsed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proxy {
    pub endpoint: Endpoint,
    pub address: String,
    pub alive: bool,
}

#[derive(Clone, Debug)]
pub struct OwnerActor {
    pub owner_id: u32,
    pub wallet: SpendKey,
    pub proxy: Proxy,
    pub profile: OwnerProfile,
}

impl OwnerActor {
    pub fn new(owner_id: u32, seed: u64, profile: OwnerProfile) -> Self {
        OwnerActor {
            owner_id,
            wallet: SpendKey::derive(&format!("owner/{owner_id}"), seed),
            proxy: Proxy {
                endpoint: Endpoint::Owner(owner_id),
                address: format!("10.0.{}.{}", owner_id / 256, owner_id % 256),
                alive: true,
            },
            profile,
        }
    }

    pub fn payout_address(&self) -> Address {
        self.wallet.address()
    }

    /// The proxy moved (NAT rebinding, new IP). The interface learns it on the next poll.
    pub fn change_address(&mut self, address: impl Into<String>) {
        self.proxy.address = address.into();
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RelayError {
    #[error("proxy of owner {0} is dead")]
    ProxyDead(u32),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

/// Forwards one pipeline exchange to the service as if it came from the
/// owner's device.
pub fn proxy_relay(
    owner: &OwnerActor,
    service: &mut TargetService,
    p: &mut Pipeline,
) -> Result<ExchangeResult, RelayError> {
    if !owner.proxy.alive {
        return Err(RelayError::ProxyDead(owner.owner_id));
    }
    p.source = owner.proxy.address.clone();
    Ok(service.exchange(p)?)
}

/// Owner undoes a performed action. On the voting service this is a re-vote
/// for another candidate, which only matters under last-counts.
pub fn revert_action(
    owner: &OwnerActor,
    service: &mut TargetService,
    cred: &crate::services::AccountCredential,
    action: &ServiceAction,
) -> Result<(), ServiceError> {
    if owner.profile != OwnerProfile::RevertsActions {
        return Err(ServiceError::NothingToRevert);
    }
    match service {
        TargetService::Social(s) => s.revert(cred, action),
        TargetService::Voting(v) => {
            let other = v.candidates().find(|c| *c != action.target).map(str::to_string);
            match other {
                Some(c) => v.cast_vote(cred, &c).map(|_| ()),
                None => Err(ServiceError::NothingToRevert),
            }
        }
    }
}

/// Poll acknowledgment: what the interface records.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PollAck {
    pub owner_id: u32,
    pub address: String,
    pub at: SimTime,
}

pub fn poll(owner: &OwnerActor, at: SimTime) -> PollAck {
    PollAck { owner_id: owner.owner_id, address: owner.proxy.address.clone(), at }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum ChainViewSource {
    HonestTip,
    /// Private fork branching `depth` blocks below the honest tip.
    ForgedFork {
        depth: u64,
    },
}

#[derive(Clone, Debug)]
pub struct RenterActor {
    pub renter_id: u32,
    pub wallet: SpendKey,
    pub view_source: ChainViewSource,
}

impl RenterActor {
    pub fn new(renter_id: u32, seed: u64, view_source: ChainViewSource) -> Self {
        RenterActor { renter_id, wallet: SpendKey::derive(&format!("renter/{renter_id}"), seed), view_source }
    }

    pub fn address(&self) -> Address {
        self.wallet.address()
    }
}

/// Privately mines a fork that branches `depth` blocks below `honest`'s tip,
/// puts `txs` in its first block and extends it by `extra` empty blocks.
/// The fork is never broadcast.
pub fn forge_fork(honest: &Chain, depth: u64, txs: Vec<Transaction>, extra: usize) -> Result<Chain, LedgerError> {
    let base = honest.tip_height().saturating_sub(depth);
    let mut fork = honest.truncated(base);
    // `txs` must differ from the honest block at this height, or the fork
    // would coincide with the honest chain.
    fork.push_block(txs)?;
    for _ in 0..extra {
        fork.push_block(Vec::new())?;
    }
    Ok(fork)
}

/// Headers an owner reports when asked for its latest blocks, starting at `from`.
pub fn owner_view(chain: &Chain, from: u64) -> Vec<BlockHeader> {
    chain.headers_from(from)
}

/// An infrastructure maintainer. Its only powers over enclaves it hosts are
/// the [`HostControls`] methods.
#[derive(Clone, Debug)]
pub struct HostActor {
    pub host_id: u32,
    pub enclaves: Vec<Endpoint>,
}

impl HostActor {
    pub fn actor(&self) -> Actor {
        Actor::Host(self.host_id)
    }

    pub fn cut(&self, net: &mut dyn HostControls, cut: CutPoint, scope: Scope) -> RuleId {
        net.drop_messages(self.actor(), cut.kind(), scope)
    }

    pub fn delay(&self, net: &mut dyn HostControls, cut: CutPoint, scope: Scope, extra: SimDuration) -> RuleId {
        net.delay_messages(self.actor(), cut.kind(), scope, extra)
    }

    pub fn kill(&self, net: &mut dyn HostControls, e: Endpoint, at: SimTime) {
        net.kill_endpoint(self.actor(), e, at)
    }
}
