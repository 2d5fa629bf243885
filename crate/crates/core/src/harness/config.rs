//! Scenario configuration: TOML schema plus semantic validation.
//!
//! Field names are normative; see `docs/scenario.md`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gossip::Mode;
use crate::parties::OwnerProfile;
use crate::services::{ActionKind, VotePolicy};
use crate::simnet::{CutPoint, Endpoint};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub struct SchemaError {
    pub field: String,
    pub cause: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.cause)
    }
}

fn err(field: impl Into<String>, cause: impl Into<String>) -> SchemaError {
    SchemaError { field: field.into(), cause: cause.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub ledger: LedgerConfig,
    pub economics: EconomicsConfig,
    pub timing: TimingConfig,
    pub topology: TopologyConfig,
    pub services: ServicesConfig,
    pub owners: Vec<OwnerGroup>,
    pub campaigns: Vec<CampaignConfig>,
    pub adversary: Vec<Directive>,
    pub attestation: AttestationConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            seed: 0,
            ledger: LedgerConfig::default(),
            economics: EconomicsConfig::default(),
            timing: TimingConfig::default(),
            topology: TopologyConfig::default(),
            services: ServicesConfig::default(),
            owners: Vec::new(),
            campaigns: Vec::new(),
            adversary: Vec::new(),
            attestation: AttestationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LedgerConfig {
    pub difficulty_bits: u32,
    pub confirmations: u64,
    pub block_interval_secs: f64,
    /// Renter's genesis allocation, in coins.
    pub renter_funds: f64,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig { difficulty_bits: 8, confirmations: 6, block_interval_secs: 75.0, renter_funds: 100_000.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EconomicsConfig {
    pub deposit_rate: f64,
    pub fee_rate: f64,
    pub poll_interval_secs: f64,
    pub liveness_window_secs: f64,
    pub heartbeat_secs: f64,
}

impl Default for EconomicsConfig {
    fn default() -> Self {
        EconomicsConfig {
            deposit_rate: 0.1,
            fee_rate: 0.05,
            poll_interval_secs: 600.0,
            liveness_window_secs: 30.0,
            heartbeat_secs: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub pipeline_means_secs: Vec<f64>,
    pub pipeline_stds_secs: Vec<f64>,
    pub snark_mean_secs: f64,
    pub snark_std_secs: f64,
    /// One-way latency of protocol messages.
    pub link_ms: f64,
    /// Forces every distribution to its mean.
    pub zero_variance: bool,
    pub timeout_factor: f64,
    /// Wait after the last settlement before closing shares.
    pub settle_grace_secs: f64,
    /// Renter gives up on a campaign start that is never acknowledged.
    pub start_timeout_secs: f64,
    /// Hard stop for virtual time.
    pub horizon_secs: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            pipeline_means_secs: vec![1.202, 0.402, 0.769, 1.560, 0.355],
            pipeline_stds_secs: vec![0.249, 0.128, 0.197, 0.298, 0.329],
            snark_mean_secs: 4.935,
            snark_std_secs: 0.1141,
            link_ms: 6.6,
            zero_variance: false,
            timeout_factor: 3.0,
            settle_grace_secs: 5.0,
            start_timeout_secs: 120.0,
            horizon_secs: 86_400.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub mode: Mode,
    pub interfaces: u32,
    pub service_enclaves: u32,
    pub payment_enclaves: u32,
    /// Interface-to-interface edges (distributed) or node edges (p2p).
    /// Empty means a line.
    pub edges: Vec<[u32; 2]>,
    pub gossip_batch: usize,
    pub gossip_round_secs: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            mode: Mode::Centralized,
            interfaces: 1,
            service_enclaves: 1,
            payment_enclaves: 1,
            edges: Vec::new(),
            gossip_batch: 64,
            gossip_round_secs: 60.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceName {
    Social,
    Voting,
}

impl ServiceName {
    pub fn id(self) -> u32 {
        match self {
            ServiceName::Social => 0,
            ServiceName::Voting => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServicesConfig {
    pub social_items: Vec<String>,
    pub hidden_items: Vec<String>,
    pub candidates: Vec<String>,
    pub vote_policy: VotePolicy,
    pub social_colluding: bool,
    pub voting_colluding: bool,
}

impl Default for ServicesConfig {
    fn default() -> Self {
        ServicesConfig {
            social_items: vec!["post-1".into()],
            hidden_items: Vec::new(),
            candidates: vec!["alice".into(), "bob".into()],
            vote_policy: VotePolicy::FirstCounts,
            social_colluding: false,
            voting_colluding: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OwnerGroup {
    pub count: u32,
    /// Price per action in coins.
    pub price: f64,
    pub service: ServiceName,
    pub actions: Vec<ActionKind>,
    pub whitelist: Option<Vec<String>>,
    pub accepts_revert_window: bool,
    pub profile: OwnerProfile,
    /// Account created by the service operator; confirms but has no effect.
    pub ghost: bool,
    pub bad_password: bool,
    pub proxy_dead: bool,
    pub polls: bool,
    /// Owner casts this vote before any campaign.
    pub pre_vote: Option<String>,
    /// P2P: CPU identity of the owner's machine (defaults to a unique one).
    pub cpu: Option<u32>,
    /// Distributed mode: interface the owner enrolls at (default round robin).
    pub interface: Option<u32>,
}

impl Default for OwnerGroup {
    fn default() -> Self {
        OwnerGroup {
            count: 1,
            price: 1.0,
            service: ServiceName::Social,
            actions: vec![ActionKind::Upvote],
            whitelist: None,
            accepts_revert_window: true,
            profile: OwnerProfile::Honest,
            ghost: false,
            bad_password: false,
            proxy_dead: false,
            polls: true,
            pre_vote: None,
            cpu: None,
            interface: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenterView {
    Honest,
    Forged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub service: ServiceName,
    pub action: ActionKind,
    pub target: String,
    pub count: u32,
    pub revert_window_secs: f64,
    pub start_secs: f64,
    pub renter_view: RenterView,
    pub fork_depth: u64,
    pub interface: u32,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            service: ServiceName::Social,
            action: ActionKind::Upvote,
            target: "post-1".into(),
            count: 1,
            revert_window_secs: 0.0,
            start_secs: 0.0,
            renter_view: RenterView::Honest,
            fork_depth: 1,
            interface: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectiveKind {
    /// Drop messages at a cut point.
    Cut,
    ClearCut,
    /// Drop the host's broadcast of settlement transactions.
    DropBroadcast,
    /// Delay messages at a cut point.
    Delay,
    Kill,
    Revive,
    /// Feed the renter's forged fork to an owner.
    Eclipse,
    KillProxy,
    ChangeProxyAddress,
    BlockHandshake,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Directive {
    pub at_secs: f64,
    /// `host:N`, `renter:N`, `owner:N` or `service-operator:N`.
    pub by: String,
    pub action: DirectiveKind,
    pub cut: Option<u8>,
    /// `all`, `campaign:N`, `owner:N`, `slot:N` or `enclave:<endpoint>`.
    pub scope: String,
    /// Endpoint for kill/revive/block_handshake, e.g. `payment:0`.
    pub target: Option<String>,
    pub owner: Option<u32>,
    pub delay_secs: Option<f64>,
    pub address: Option<String>,
}

impl Default for Directive {
    fn default() -> Self {
        Directive {
            at_secs: 0.0,
            by: "host:0".into(),
            action: DirectiveKind::Cut,
            cut: None,
            scope: "all".into(),
            target: None,
            owner: None,
            delay_secs: None,
            address: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttestationConfig {
    /// Enclaves the host replaced with modified code, by endpoint.
    pub tampered: Vec<String>,
}

pub fn parse_actor(s: &str) -> Option<crate::simnet::Actor> {
    use crate::simnet::Actor;
    let (k, n) = s.split_once(':')?;
    let n: u32 = n.parse().ok()?;
    Some(match k {
        "host" => Actor::Host(n),
        "renter" => Actor::Renter(n),
        "owner" => Actor::Owner(n),
        "service-operator" | "service" => Actor::Service(n),
        _ => return None,
    })
}

pub fn parse_scope(s: &str) -> Option<crate::simnet::Scope> {
    use crate::simnet::Scope;
    if s == "all" {
        return Some(Scope::All);
    }
    let (k, v) = s.split_once(':')?;
    Some(match k {
        "campaign" => Scope::Campaign(v.parse().ok()?),
        "owner" => Scope::Owner(v.parse().ok()?),
        "slot" => Scope::Slot(v.parse().ok()?),
        "enclave" => Scope::Enclave(Endpoint::parse(v)?),
        _ => return None,
    })
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<ScenarioConfig, Vec<SchemaError>> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| format!("byte {}", s.start)).unwrap_or_else(|| "<document>".into());
            vec![err(field, e.message().to_string())]
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig, Vec<SchemaError>> {
        let text = std::fs::read_to_string(path).map_err(|e| vec![err(path.display().to_string(), e.to_string())])?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn owner_count(&self) -> u32 {
        self.owners.iter().map(|g| g.count).sum()
    }

    /// Every schema violation, in field order.
    pub fn validate(&self) -> Result<(), Vec<SchemaError>> {
        let mut v = Vec::new();
        let rate = |v: &mut Vec<SchemaError>, f: &str, x: f64| {
            if !(0.0..=1.0).contains(&x) || x.is_nan() {
                v.push(err(f, format!("must be within [0, 1], got {x}")));
            }
        };
        let nonneg = |v: &mut Vec<SchemaError>, f: &str, x: f64| {
            if !(x >= 0.0 && x.is_finite()) {
                v.push(err(f, format!("must be a finite non-negative number, got {x}")));
            }
        };
        let positive = |v: &mut Vec<SchemaError>, f: &str, x: f64| {
            if !(x > 0.0 && x.is_finite()) {
                v.push(err(f, format!("must be positive, got {x}")));
            }
        };

        if self.ledger.difficulty_bits > 24 {
            v.push(err("ledger.difficulty_bits", "at most 24"));
        }
        if self.ledger.confirmations == 0 {
            v.push(err("ledger.confirmations", "must be at least 1"));
        }
        positive(&mut v, "ledger.block_interval_secs", self.ledger.block_interval_secs);
        nonneg(&mut v, "ledger.renter_funds", self.ledger.renter_funds);

        rate(&mut v, "economics.deposit_rate", self.economics.deposit_rate);
        rate(&mut v, "economics.fee_rate", self.economics.fee_rate);
        positive(&mut v, "economics.poll_interval_secs", self.economics.poll_interval_secs);
        positive(&mut v, "economics.liveness_window_secs", self.economics.liveness_window_secs);
        positive(&mut v, "economics.heartbeat_secs", self.economics.heartbeat_secs);
        if self.economics.heartbeat_secs >= self.economics.liveness_window_secs {
            v.push(err("economics.heartbeat_secs", "must be shorter than the liveness window"));
        }

        let t = &self.timing;
        if t.pipeline_means_secs.len() != 5 {
            v.push(err("timing.pipeline_means_secs", "needs exactly 5 entries"));
        }
        if t.pipeline_stds_secs.len() != 5 {
            v.push(err("timing.pipeline_stds_secs", "needs exactly 5 entries"));
        }
        for (i, x) in t.pipeline_means_secs.iter().enumerate() {
            nonneg(&mut v, &format!("timing.pipeline_means_secs[{i}]"), *x);
        }
        for (i, x) in t.pipeline_stds_secs.iter().enumerate() {
            nonneg(&mut v, &format!("timing.pipeline_stds_secs[{i}]"), *x);
        }
        nonneg(&mut v, "timing.snark_mean_secs", t.snark_mean_secs);
        nonneg(&mut v, "timing.snark_std_secs", t.snark_std_secs);
        nonneg(&mut v, "timing.link_ms", t.link_ms);
        positive(&mut v, "timing.timeout_factor", t.timeout_factor);
        nonneg(&mut v, "timing.settle_grace_secs", t.settle_grace_secs);
        positive(&mut v, "timing.start_timeout_secs", t.start_timeout_secs);
        positive(&mut v, "timing.horizon_secs", t.horizon_secs);

        let topo = &self.topology;
        if topo.interfaces == 0 {
            v.push(err("topology.interfaces", "must be at least 1"));
        }
        if topo.mode != Mode::P2p {
            if topo.service_enclaves == 0 {
                v.push(err("topology.service_enclaves", "must be at least 1"));
            }
            if topo.payment_enclaves == 0 {
                v.push(err("topology.payment_enclaves", "must be at least 1"));
            }
        }
        if topo.mode == Mode::Centralized && topo.interfaces != 1 {
            v.push(err("topology.interfaces", "centralized mode has exactly one interface"));
        }
        let node_count = if topo.mode == Mode::P2p { self.owner_count() } else { topo.interfaces };
        for (i, [a, b]) in topo.edges.iter().enumerate() {
            if *a >= node_count || *b >= node_count || a == b {
                v.push(err(format!("topology.edges[{i}]"), format!("edge {a}-{b} does not join two distinct nodes")));
            }
        }
        if topo.gossip_batch == 0 {
            v.push(err("topology.gossip_batch", "must be at least 1"));
        }
        positive(&mut v, "topology.gossip_round_secs", topo.gossip_round_secs);

        let s = &self.services;
        if s.candidates.is_empty() {
            v.push(err("services.candidates", "at least one candidate"));
        }

        for (i, g) in self.owners.iter().enumerate() {
            let f = |x: &str| format!("owners[{i}].{x}");
            positive(&mut v, &f("price"), g.price);
            if g.actions.is_empty() {
                v.push(err(f("actions"), "at least one action kind"));
            }
            for a in &g.actions {
                let ok = match g.service {
                    ServiceName::Social => *a != ActionKind::Vote,
                    ServiceName::Voting => *a == ActionKind::Vote,
                };
                if !ok {
                    v.push(err(
                        f("actions"),
                        format!("{} is not an action of the {:?} service", a.as_str(), g.service),
                    ));
                }
            }
            if let Some(c) = &g.pre_vote {
                if g.service != ServiceName::Voting || !s.candidates.contains(c) {
                    v.push(err(f("pre_vote"), format!("unknown candidate {c}")));
                }
            }
            if let Some(n) = g.interface {
                if topo.mode == Mode::P2p || n >= topo.interfaces {
                    v.push(err(f("interface"), format!("no interface {n}")));
                }
            }
        }

        for (i, c) in self.campaigns.iter().enumerate() {
            let f = |x: &str| format!("campaigns[{i}].{x}");
            if c.count == 0 {
                v.push(err(f("count"), "must be at least 1"));
            }
            nonneg(&mut v, &f("revert_window_secs"), c.revert_window_secs);
            nonneg(&mut v, &f("start_secs"), c.start_secs);
            if c.renter_view == RenterView::Forged && c.fork_depth == 0 {
                v.push(err(f("fork_depth"), "a forged view must branch at least 1 block below the tip"));
            }
            if c.interface >= node_count {
                v.push(err(f("interface"), format!("no interface {}", c.interface)));
            }
            if topo.mode == Mode::P2p && c.revert_window_secs > 0.0 {
                v.push(err(f("revert_window_secs"), "p2p campaigns have no revert window"));
            }
            match c.service {
                ServiceName::Social => {
                    if c.action == ActionKind::Vote {
                        v.push(err(f("action"), "vote is not a social action"));
                    }
                    if !s.social_items.contains(&c.target) && !s.hidden_items.contains(&c.target) {
                        v.push(err(f("target"), format!("unknown item {}", c.target)));
                    }
                }
                ServiceName::Voting => {
                    if c.action != ActionKind::Vote {
                        v.push(err(f("action"), "the voting service only supports vote"));
                    }
                    if !s.candidates.contains(&c.target) {
                        v.push(err(f("target"), format!("unknown candidate {}", c.target)));
                    }
                }
            }
        }

        for (i, d) in self.adversary.iter().enumerate() {
            let f = |x: &str| format!("adversary[{i}].{x}");
            nonneg(&mut v, &f("at_secs"), d.at_secs);
            if parse_actor(&d.by).is_none() {
                v.push(err(f("by"), format!("unknown actor {}", d.by)));
            }
            if parse_scope(&d.scope).is_none() {
                v.push(err(f("scope"), format!("unknown scope {}", d.scope)));
            }
            let needs_cut = matches!(d.action, DirectiveKind::Cut | DirectiveKind::ClearCut | DirectiveKind::Delay);
            match d.cut {
                Some(c) if CutPoint::new(c).is_none() => {
                    v.push(err(f("cut"), format!("unknown cut point {c}; valid ids are 1 to 5")))
                }
                None if needs_cut => v.push(err(f("cut"), "required for this action")),
                _ => {}
            }
            if d.action == DirectiveKind::Delay {
                match d.delay_secs {
                    Some(x) => positive(&mut v, &f("delay_secs"), x),
                    None => v.push(err(f("delay_secs"), "required for delay")),
                }
            }
            if matches!(d.action, DirectiveKind::Kill | DirectiveKind::Revive | DirectiveKind::BlockHandshake) {
                match d.target.as_deref().map(Endpoint::parse) {
                    Some(Some(e)) => {
                        if !self.endpoint_exists(e) {
                            v.push(err(f("target"), format!("{e} does not exist in this topology")));
                        }
                    }
                    _ => v.push(err(f("target"), "required endpoint such as payment:0")),
                }
            }
            if matches!(d.action, DirectiveKind::Eclipse | DirectiveKind::KillProxy | DirectiveKind::ChangeProxyAddress)
            {
                match d.owner {
                    Some(o) if o < self.owner_count() => {}
                    _ => v.push(err(f("owner"), "required and must name an existing owner")),
                }
            }
            if d.action == DirectiveKind::Eclipse && !self.campaigns.iter().any(|c| c.renter_view == RenterView::Forged)
            {
                v.push(err(f("action"), "eclipse needs a campaign with a forged renter view"));
            }
            if d.action == DirectiveKind::ChangeProxyAddress && d.address.is_none() {
                v.push(err(f("address"), "required for change_proxy_address"));
            }
        }

        for (i, e) in self.attestation.tampered.iter().enumerate() {
            match Endpoint::parse(e) {
                Some(ep) if self.endpoint_exists(ep) => {}
                _ => v.push(err(format!("attestation.tampered[{i}]"), format!("unknown enclave {e}"))),
            }
        }

        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    fn endpoint_exists(&self, e: Endpoint) -> bool {
        let t = &self.topology;
        let (ifaces, services, payments) = match t.mode {
            Mode::Centralized => (1, t.service_enclaves, t.payment_enclaves),
            Mode::Distributed => (t.interfaces, t.interfaces * t.service_enclaves, t.interfaces * t.payment_enclaves),
            Mode::P2p => (self.owner_count(), 0, self.owner_count()),
        };
        match e {
            Endpoint::Interface(i) => i < ifaces,
            Endpoint::ServiceEnclave(i) => i < services,
            Endpoint::PaymentEnclave(i) => i < payments,
            Endpoint::Owner(i) => i < self.owner_count(),
            Endpoint::Renter(i) => i == 0,
            Endpoint::Target(i) => i < 2,
            Endpoint::Ledger | Endpoint::Clock => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASELINE: &str = r#"
name = "baseline"
seed = 7

[[owners]]
count = 3
price = 1.0

[[campaigns]]
count = 3
"#;

    #[test]
    fn baseline_loads() {
        let c = ScenarioConfig::from_toml(BASELINE).unwrap();
        assert_eq!(c.owner_count(), 3);
        assert_eq!(c.campaigns[0].count, 3);
        let again = ScenarioConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_cut_point_rejected() {
        let text = format!("{BASELINE}\n[[adversary]]\naction = \"cut\"\ncut = 6\n");
        let e = ScenarioConfig::from_toml(&text).unwrap_err();
        assert_eq!(e[0].field, "adversary[0].cut");
    }

    #[test]
    fn negative_deposit_rate_rejected() {
        let text = format!("{BASELINE}\n[economics]\ndeposit_rate = -0.1\n");
        let e = ScenarioConfig::from_toml(&text).unwrap_err();
        assert_eq!(e[0].field, "economics.deposit_rate");
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(ScenarioConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn dangling_references_rejected() {
        let text = format!("{BASELINE}\n[[adversary]]\naction = \"kill\"\ntarget = \"payment:4\"\n");
        let e = ScenarioConfig::from_toml(&text).unwrap_err();
        assert_eq!(e[0].field, "adversary[0].target");
        let text = format!("{BASELINE}\n[[campaigns]]\ntarget = \"nope\"\n");
        assert_eq!(ScenarioConfig::from_toml(&text).unwrap_err()[0].field, "campaigns[1].target");
    }
}
