//! Deterministic virtual-time message bus.
//!
//! Every scheduled item is keyed by `(time, sequence)`, so two runs with the
//! same seed pop events in the same order. Interception rules match on
//! message metadata only; payloads are never handed to them.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ledger::Digest;

/// Virtual time in microseconds.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

/// Virtual duration in microseconds.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimDuration(pub u64);

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub fn from_secs_f64(s: f64) -> SimDuration {
        SimDuration((s.max(0.0) * 1e6).round() as u64)
    }

    pub fn from_secs(s: u64) -> SimDuration {
        SimDuration(s * 1_000_000)
    }

    pub fn from_millis(ms: u64) -> SimDuration {
        SimDuration(ms * 1_000)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn times(self, n: u64) -> SimDuration {
        SimDuration(self.0 * n)
    }
}

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn since(self, earlier: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(earlier.0))
    }
}

impl std::ops::Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, d: SimDuration) -> SimTime {
        SimTime(self.0 + d.0)
    }
}

impl std::ops::Add for SimDuration {
    type Output = SimDuration;
    fn add(self, d: SimDuration) -> SimDuration {
        SimDuration(self.0 + d.0)
    }
}

impl std::iter::Sum for SimDuration {
    fn sum<I: Iterator<Item = SimDuration>>(iter: I) -> SimDuration {
        iter.fold(SimDuration::ZERO, |a, b| a + b)
    }
}

impl fmt::Debug for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={:.6}s", self.as_secs_f64())
    }
}

impl fmt::Debug for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

/// Anything that can send or receive a message.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Interface(u32),
    ServiceEnclave(u32),
    PaymentEnclave(u32),
    /// An identity owner's device (and its proxy).
    Owner(u32),
    Renter(u32),
    /// The external target service (social or voting).
    Target(u32),
    /// The blockchain network.
    Ledger,
    /// The scenario clock actor that mines blocks and applies directives.
    Clock,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Interface(i) => write!(f, "interface:{i}"),
            Endpoint::ServiceEnclave(i) => write!(f, "service:{i}"),
            Endpoint::PaymentEnclave(i) => write!(f, "payment:{i}"),
            Endpoint::Owner(i) => write!(f, "owner:{i}"),
            Endpoint::Renter(i) => write!(f, "renter:{i}"),
            Endpoint::Target(i) => write!(f, "target:{i}"),
            Endpoint::Ledger => f.write_str("ledger"),
            Endpoint::Clock => f.write_str("clock"),
        }
    }
}

impl fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Endpoint {
    pub fn parse(s: &str) -> Option<Endpoint> {
        if s == "ledger" {
            return Some(Endpoint::Ledger);
        }
        if s == "clock" {
            return Some(Endpoint::Clock);
        }
        let (kind, idx) = s.split_once(':')?;
        let i: u32 = idx.parse().ok()?;
        Some(match kind {
            "interface" => Endpoint::Interface(i),
            "service" => Endpoint::ServiceEnclave(i),
            "payment" => Endpoint::PaymentEnclave(i),
            "owner" => Endpoint::Owner(i),
            "renter" => Endpoint::Renter(i),
            "target" => Endpoint::Target(i),
            _ => return None,
        })
    }
}

/// The party an interception rule or kill is attributed to.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Actor {
    Renter(u32),
    Owner(u32),
    /// Infrastructure maintainer controlling enclave hosts.
    Host(u32),
    /// A target service operator.
    Service(u32),
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Renter(i) => write!(f, "renter:{i}"),
            Actor::Owner(i) => write!(f, "owner:{i}"),
            Actor::Host(i) => write!(f, "host:{i}"),
            Actor::Service(i) => write!(f, "service-operator:{i}"),
        }
    }
}

impl fmt::Debug for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Protocol message kinds. Cut points name five of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MsgKind {
    /// Renter → interface: campaign start carrying the renter's latest blocks.
    RenterLatestBlock,
    CampaignStatus,
    DispatchBatch,
    AssignSlot,
    SlotOutcome,
    LatestBlockRequest,
    /// Owner → service enclave: the owner's latest blocks.
    OwnerLatestBlock,
    PipelineRequest,
    PipelineResponse,
    /// Target service → enclave: the final response of the action pipeline.
    ActionResponse,
    PayBatch,
    /// Payment enclave → blockchain through the host's node.
    HostBroadcast,
    /// Payment enclave → renter: settlement copy returning the deposit share.
    DepositReturnCopy,
    /// Payment enclave → owner: settlement copy carrying the reward.
    RewardCopy,
    /// Owner or renter relaying a tx copy through their own node.
    TxRelay,
    ShareReport,
    RebalanceRequest,
    Heartbeat,
    CloseShare,
    RecoveryNotice,
    Gossip,
    Poll,
}

impl MsgKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MsgKind::RenterLatestBlock => "renter_latest_block",
            MsgKind::CampaignStatus => "campaign_status",
            MsgKind::DispatchBatch => "dispatch_batch",
            MsgKind::AssignSlot => "assign_slot",
            MsgKind::SlotOutcome => "slot_outcome",
            MsgKind::LatestBlockRequest => "latest_block_request",
            MsgKind::OwnerLatestBlock => "owner_latest_block",
            MsgKind::PipelineRequest => "pipeline_request",
            MsgKind::PipelineResponse => "pipeline_response",
            MsgKind::ActionResponse => "action_response",
            MsgKind::PayBatch => "pay_batch",
            MsgKind::HostBroadcast => "host_broadcast",
            MsgKind::DepositReturnCopy => "deposit_return_copy",
            MsgKind::RewardCopy => "reward_copy",
            MsgKind::TxRelay => "tx_relay",
            MsgKind::ShareReport => "share_report",
            MsgKind::RebalanceRequest => "rebalance_request",
            MsgKind::Heartbeat => "heartbeat",
            MsgKind::CloseShare => "close_share",
            MsgKind::RecoveryNotice => "recovery_notice",
            MsgKind::Gossip => "gossip",
            MsgKind::Poll => "poll",
        }
    }
}

/// One of the five protocol messages an adversary may suppress.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CutPoint(u8);

impl CutPoint {
    pub fn new(id: u8) -> Option<CutPoint> {
        (1..=5).contains(&id).then_some(CutPoint(id))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn kind(self) -> MsgKind {
        match self.0 {
            1 => MsgKind::RenterLatestBlock,
            2 => MsgKind::OwnerLatestBlock,
            3 => MsgKind::ActionResponse,
            4 => MsgKind::DepositReturnCopy,
            5 => MsgKind::RewardCopy,
            _ => unreachable!("cut point ids are validated at construction"),
        }
    }

    pub fn all() -> impl Iterator<Item = CutPoint> {
        (1..=5).map(CutPoint)
    }
}

/// Ids carried in the clear for routing and attribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsgTags {
    pub campaign: Option<u32>,
    pub owner: Option<u32>,
    pub slot: Option<u32>,
    pub share: Option<u32>,
}

impl MsgTags {
    fn render(&self) -> String {
        let mut parts = Vec::new();
        if let Some(c) = self.campaign {
            parts.push(format!("c{c}"));
        }
        if let Some(o) = self.owner {
            parts.push(format!("o{o}"));
        }
        if let Some(s) = self.slot {
            parts.push(format!("s{s}"));
        }
        if let Some(s) = self.share {
            parts.push(format!("p{s}"));
        }
        if parts.is_empty() {
            "-".into()
        } else {
            parts.join(",")
        }
    }
}

/// Everything about a message that the host can see.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MessageMeta {
    pub msg_id: u64,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub kind: MsgKind,
    pub session: Option<u64>,
    pub tags: MsgTags,
    pub send_time: SimTime,
}

#[derive(Clone, Debug)]
pub struct Message<P> {
    pub meta: MessageMeta,
    /// Opaque to interception when `meta.session` is set.
    pub payload: P,
    /// True if the payload carries secret material.
    pub tainted: bool,
}

/// Which messages a rule applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    All,
    Campaign(u32),
    Owner(u32),
    Slot(u32),
    Enclave(Endpoint),
}

impl Scope {
    fn matches(&self, m: &MessageMeta) -> bool {
        match self {
            Scope::All => true,
            Scope::Campaign(c) => m.tags.campaign == Some(*c),
            Scope::Owner(o) => m.tags.owner == Some(*o),
            Scope::Slot(s) => m.tags.slot == Some(*s),
            Scope::Enclave(e) => m.src == *e || m.dst == *e,
        }
    }
}

pub type RuleId = u32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DropRule {
    pub id: RuleId,
    pub owner: Actor,
    pub kind: MsgKind,
    pub scope: Scope,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelayRule {
    pub id: RuleId,
    pub owner: Actor,
    pub kind: MsgKind,
    pub scope: Scope,
    pub extra: SimDuration,
}

/// Active adversarial network state.
#[derive(Clone, Debug, Default)]
pub struct NetControl {
    next_rule: RuleId,
    drops: BTreeMap<RuleId, DropRule>,
    delays: BTreeMap<RuleId, DelayRule>,
    killed: BTreeMap<Endpoint, (SimTime, Actor)>,
    eclipsed: BTreeMap<u32, Actor>,
    blocked_handshakes: BTreeMap<Endpoint, Actor>,
}

impl NetControl {
    pub fn new() -> Self {
        Self::default()
    }

    fn alloc(&mut self) -> RuleId {
        self.next_rule += 1;
        self.next_rule
    }

    pub fn drop_kind(&mut self, owner: Actor, kind: MsgKind, scope: Scope) -> RuleId {
        let id = self.alloc();
        self.drops.insert(id, DropRule { id, owner, kind, scope });
        id
    }

    pub fn set_cut(&mut self, owner: Actor, cut: CutPoint, scope: Scope) -> RuleId {
        self.drop_kind(owner, cut.kind(), scope)
    }

    /// Removes matching cut rules; returns how many were removed.
    pub fn clear_cut(&mut self, cut: CutPoint, scope: Scope) -> usize {
        let before = self.drops.len();
        self.drops.retain(|_, r| !(r.kind == cut.kind() && r.scope == scope));
        before - self.drops.len()
    }

    pub fn clear_rule(&mut self, id: RuleId) -> bool {
        self.drops.remove(&id).is_some() || self.delays.remove(&id).is_some()
    }

    pub fn delay_kind(&mut self, owner: Actor, kind: MsgKind, scope: Scope, extra: SimDuration) -> RuleId {
        let id = self.alloc();
        self.delays.insert(id, DelayRule { id, owner, kind, scope, extra });
        id
    }

    pub fn kill(&mut self, e: Endpoint, at: SimTime, by: Actor) {
        self.killed.entry(e).or_insert((at, by));
    }

    pub fn revive(&mut self, e: Endpoint) {
        self.killed.remove(&e);
    }

    pub fn is_dead(&self, e: Endpoint) -> bool {
        self.killed.contains_key(&e)
    }

    pub fn killed(&self) -> &BTreeMap<Endpoint, (SimTime, Actor)> {
        &self.killed
    }

    pub fn eclipse(&mut self, owner_id: u32, by: Actor) {
        self.eclipsed.insert(owner_id, by);
    }

    pub fn eclipsed_by(&self, owner_id: u32) -> Option<Actor> {
        self.eclipsed.get(&owner_id).copied()
    }

    pub fn block_handshake(&mut self, e: Endpoint, by: Actor) {
        self.blocked_handshakes.insert(e, by);
    }

    pub fn handshake_blocked(&self, e: Endpoint) -> bool {
        self.blocked_handshakes.contains_key(&e)
    }

    /// The first active drop rule matching this message, if any.
    pub fn matching_drop(&self, m: &MessageMeta) -> Option<&DropRule> {
        self.drops.values().find(|r| r.kind == m.kind && r.scope.matches(m))
    }

    pub fn extra_delay(&self, m: &MessageMeta) -> SimDuration {
        self.delays.values().filter(|r| r.kind == m.kind && r.scope.matches(m)).map(|r| r.extra).sum()
    }

    pub fn drop_rules(&self) -> impl Iterator<Item = &DropRule> {
        self.drops.values()
    }
}

/// Adversarial powers over the network. Deliberately narrow: there is no
/// method that exposes a payload or mutates enclave state.
pub trait HostControls {
    fn drop_messages(&mut self, by: Actor, kind: MsgKind, scope: Scope) -> RuleId;
    fn delay_messages(&mut self, by: Actor, kind: MsgKind, scope: Scope, extra: SimDuration) -> RuleId;
    fn kill_endpoint(&mut self, by: Actor, e: Endpoint, at: SimTime);
}

impl HostControls for NetControl {
    fn drop_messages(&mut self, by: Actor, kind: MsgKind, scope: Scope) -> RuleId {
        self.drop_kind(by, kind, scope)
    }

    fn delay_messages(&mut self, by: Actor, kind: MsgKind, scope: Scope, extra: SimDuration) -> RuleId {
        self.delay_kind(by, kind, scope, extra)
    }

    fn kill_endpoint(&mut self, by: Actor, e: Endpoint, at: SimTime) {
        self.kill(e, at, by)
    }
}

/// Gaussian latency with a floor of 1 ms; zero spread returns the mean exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyDist {
    pub mean: SimDuration,
    pub std: SimDuration,
}

impl LatencyDist {
    pub fn fixed(mean: SimDuration) -> Self {
        LatencyDist { mean, std: SimDuration::ZERO }
    }

    pub fn secs(mean: f64, std: f64) -> Self {
        LatencyDist { mean: SimDuration::from_secs_f64(mean), std: SimDuration::from_secs_f64(std) }
    }

    pub fn sample(&self, rng: &mut SimRng) -> SimDuration {
        if self.std.0 == 0 {
            return self.mean;
        }
        let n = Normal::new(self.mean.0 as f64, self.std.0 as f64).expect("finite std");
        let v = n.sample(&mut rng.0).round();
        SimDuration(v.max(1_000.0) as u64)
    }
}

/// The single seeded random source of a simulation.
#[derive(Clone, Debug)]
pub struct SimRng(pub ChaCha8Rng);

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng(ChaCha8Rng::seed_from_u64(seed))
    }
}

/// One line per event: `time_us<TAB>actor<TAB>kind<TAB>ids`.
#[derive(Clone, Debug, Default)]
pub struct EventLog {
    lines: Vec<String>,
}

impl EventLog {
    pub fn record(&mut self, t: SimTime, actor: impl fmt::Display, kind: &str, ids: impl fmt::Display) {
        self.lines.push(format!("{}\t{}\t{}\t{}", t.0, actor, kind, ids));
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn render(&self) -> String {
        let mut s = String::with_capacity(self.lines.len() * 48);
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }

    pub fn digest(&self) -> Digest {
        Digest::of("event-log", &[self.render().as_bytes()])
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

/// A message that never arrived and why.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DropRecord {
    pub meta: MessageMeta,
    pub rule: Option<RuleId>,
    pub by: Actor,
    pub reason: DropReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    Rule,
    DeadEndpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SendOutcome {
    Scheduled { deliver_at: SimTime },
    Dropped { by: Actor, rule: Option<RuleId> },
}

#[derive(Clone, Debug)]
pub enum SimEvent<P, T> {
    Deliver(Message<P>),
    Timer { at: Endpoint, timer: T },
}

struct Queued<P, T> {
    time: SimTime,
    seq: u64,
    event: SimEvent<P, T>,
}

impl<P, T> PartialEq for Queued<P, T> {
    fn eq(&self, o: &Self) -> bool {
        (self.time, self.seq) == (o.time, o.seq)
    }
}
impl<P, T> Eq for Queued<P, T> {}
impl<P, T> PartialOrd for Queued<P, T> {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl<P, T> Ord for Queued<P, T> {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(o.time, o.seq))
    }
}

/// Discrete-event queue plus network controls and the event log.
pub struct Network<P, T> {
    now: SimTime,
    seq: u64,
    next_msg: u64,
    queue: BinaryHeap<Reverse<Queued<P, T>>>,
    pub controls: NetControl,
    pub log: EventLog,
    pub rng: SimRng,
    drops: Vec<DropRecord>,
    tainted_deliveries: Vec<(u64, Option<u64>)>,
}

impl<P, T> Network<P, T> {
    pub fn new(seed: u64) -> Self {
        Network {
            now: SimTime::ZERO,
            seq: 0,
            next_msg: 0,
            queue: BinaryHeap::new(),
            controls: NetControl::new(),
            log: EventLog::default(),
            rng: SimRng::new(seed),
            drops: Vec::new(),
            tainted_deliveries: Vec::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    fn push(&mut self, time: SimTime, event: SimEvent<P, T>) {
        self.seq += 1;
        self.queue.push(Reverse(Queued { time, seq: self.seq, event }));
    }

    pub fn schedule_timer(&mut self, after: SimDuration, at: Endpoint, timer: T) {
        let t = self.now + after;
        self.push(t, SimEvent::Timer { at, timer });
    }

    /// Sends a message with the given base latency. Matching drop rules
    /// discard it; matching delay rules add to the latency.
    #[allow(clippy::too_many_arguments)]
    pub fn send(
        &mut self,
        src: Endpoint,
        dst: Endpoint,
        kind: MsgKind,
        session: Option<u64>,
        tags: MsgTags,
        payload: P,
        tainted: bool,
        latency: SimDuration,
    ) -> SendOutcome {
        self.next_msg += 1;
        let meta = MessageMeta { msg_id: self.next_msg, src, dst, kind, session, tags, send_time: self.now };
        if let Some(rule) = self.controls.matching_drop(&meta) {
            let (by, rule_id) = (rule.owner, rule.id);
            self.log.record(
                self.now,
                src,
                "drop",
                format_args!(
                    "m{} {} ->{} {} rule={} by={}",
                    meta.msg_id,
                    kind.as_str(),
                    dst,
                    tags.render(),
                    rule_id,
                    by
                ),
            );
            self.drops.push(DropRecord { meta, rule: Some(rule_id), by, reason: DropReason::Rule });
            return SendOutcome::Dropped { by, rule: Some(rule_id) };
        }
        let deliver_at = self.now + latency + self.controls.extra_delay(&meta);
        self.log.record(
            self.now,
            src,
            "send",
            format_args!("m{} {} ->{} {} at={}", meta.msg_id, kind.as_str(), dst, tags.render(), deliver_at.0),
        );
        self.push(deliver_at, SimEvent::Deliver(Message { meta, payload, tainted }));
        SendOutcome::Scheduled { deliver_at }
    }

    /// Pops the next event, advancing the clock. Messages to dead endpoints
    /// are consumed here and recorded as drops attributed to the killer.
    pub fn next_event(&mut self) -> Option<(SimTime, SimEvent<P, T>)> {
        while let Some(Reverse(q)) = self.queue.pop() {
            debug_assert!(q.time >= self.now, "virtual time went backwards");
            self.now = q.time;
            match q.event {
                SimEvent::Deliver(m) => {
                    if let Some((_, by)) = self.controls.killed.get(&m.meta.dst).copied() {
                        self.log.record(
                            self.now,
                            m.meta.dst,
                            "drop",
                            format_args!("m{} {} dead-endpoint by={}", m.meta.msg_id, m.meta.kind.as_str(), by),
                        );
                        self.drops.push(DropRecord { meta: m.meta, rule: None, by, reason: DropReason::DeadEndpoint });
                        continue;
                    }
                    self.log.record(
                        self.now,
                        m.meta.dst,
                        "deliver",
                        format_args!("m{} {}", m.meta.msg_id, m.meta.kind.as_str()),
                    );
                    if m.tainted {
                        self.tainted_deliveries.push((m.meta.msg_id, m.meta.session));
                    }
                    return Some((q.time, SimEvent::Deliver(m)));
                }
                SimEvent::Timer { at, timer } => {
                    if self.controls.is_dead(at) {
                        continue;
                    }
                    return Some((q.time, SimEvent::Timer { at, timer }));
                }
            }
        }
        None
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(q)| q.time)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn drops(&self) -> &[DropRecord] {
        &self.drops
    }

    /// `(msg_id, session)` for every delivered message carrying secrets.
    pub fn tainted_deliveries(&self) -> &[(u64, Option<u64>)] {
        &self.tainted_deliveries
    }

    pub fn is_dead(&self, e: Endpoint) -> bool {
        self.controls.is_dead(e)
    }

    pub fn kill(&mut self, e: Endpoint, by: Actor) {
        let now = self.now;
        self.controls.kill(e, now, by);
        self.log.record(now, e, "kill", format_args!("by={by}"));
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    type Net = Network<&'static str, u32>;

    fn send(n: &mut Net, kind: MsgKind, tags: MsgTags, lat: u64) -> SendOutcome {
        n.send(Endpoint::PaymentEnclave(0), Endpoint::Owner(1), kind, Some(1), tags, "x", false, SimDuration(lat))
    }

    #[test]
    fn delivers_after_latency() {
        let mut n = Net::new(1);
        let out = send(&mut n, MsgKind::RewardCopy, MsgTags::default(), 500);
        assert_eq!(out, SendOutcome::Scheduled { deliver_at: SimTime(500) });
        let (t, ev) = n.next_event().unwrap();
        assert_eq!(t, SimTime(500));
        assert!(matches!(ev, SimEvent::Deliver(_)));
    }

    #[test]
    fn cut_point_drops_and_attributes() {
        let mut n = Net::new(1);
        let rule = n.controls.set_cut(Actor::Host(0), CutPoint::new(5).unwrap(), Scope::All);
        let out = send(&mut n, MsgKind::RewardCopy, MsgTags::default(), 10);
        assert_eq!(out, SendOutcome::Dropped { by: Actor::Host(0), rule: Some(rule) });
        assert!(n.next_event().is_none());
        assert_eq!(n.drops().len(), 1);
        assert_eq!(n.drops()[0].by, Actor::Host(0));
        // Other kinds are unaffected.
        assert!(matches!(
            send(&mut n, MsgKind::DepositReturnCopy, MsgTags::default(), 10),
            SendOutcome::Scheduled { .. }
        ));
    }

    #[test]
    fn scoped_cut_only_hits_its_owner() {
        let mut n = Net::new(1);
        n.controls.set_cut(Actor::Renter(0), CutPoint::new(2).unwrap(), Scope::Owner(7));
        let hit = MsgTags { owner: Some(7), ..Default::default() };
        let miss = MsgTags { owner: Some(8), ..Default::default() };
        assert!(matches!(send(&mut n, MsgKind::OwnerLatestBlock, hit, 1), SendOutcome::Dropped { .. }));
        assert!(matches!(send(&mut n, MsgKind::OwnerLatestBlock, miss, 1), SendOutcome::Scheduled { .. }));
        assert_eq!(n.controls.clear_cut(CutPoint::new(2).unwrap(), Scope::Owner(7)), 1);
        assert!(matches!(send(&mut n, MsgKind::OwnerLatestBlock, hit, 1), SendOutcome::Scheduled { .. }));
    }

    #[test]
    fn each_drop_maps_to_first_matching_rule() {
        let mut n = Net::new(1);
        let first = n.controls.set_cut(Actor::Renter(0), CutPoint::new(4).unwrap(), Scope::All);
        n.controls.set_cut(Actor::Host(0), CutPoint::new(4).unwrap(), Scope::All);
        let out = send(&mut n, MsgKind::DepositReturnCopy, MsgTags::default(), 1);
        assert_eq!(out, SendOutcome::Dropped { by: Actor::Renter(0), rule: Some(first) });
    }

    #[test]
    fn delay_rule_adds_latency() {
        let mut n = Net::new(1);
        n.controls.delay_kind(Actor::Host(0), MsgKind::ActionResponse, Scope::All, SimDuration(1000));
        let out = send(&mut n, MsgKind::ActionResponse, MsgTags::default(), 5);
        assert_eq!(out, SendOutcome::Scheduled { deliver_at: SimTime(1005) });
    }

    #[test]
    fn delay_past_timeout_behaves_like_drop_for_receiver() {
        // Oracle: a receiver that stops listening at `timeout` observes the
        // same thing whether the message is dropped or arrives later.
        let timeout = SimTime(100);
        let observed = |delay: Option<u64>| -> bool {
            let mut n = Net::new(3);
            match delay {
                Some(d) => {
                    n.controls.delay_kind(Actor::Host(0), MsgKind::ActionResponse, Scope::All, SimDuration(d));
                }
                None => {
                    n.controls.drop_kind(Actor::Host(0), MsgKind::ActionResponse, Scope::All);
                }
            }
            send(&mut n, MsgKind::ActionResponse, MsgTags::default(), 10);
            n.schedule_timer(SimDuration(timeout.0), Endpoint::PaymentEnclave(0), 0);
            let mut got = false;
            while let Some((t, ev)) = n.next_event() {
                match ev {
                    SimEvent::Deliver(_) if t <= timeout => got = true,
                    SimEvent::Timer { .. } => break,
                    _ => {}
                }
            }
            got
        };
        assert!(!observed(None));
        assert!(!observed(Some(500)));
        assert!(observed(Some(50)));
    }

    #[test]
    fn dead_endpoint_swallows_messages() {
        let mut n = Net::new(1);
        send(&mut n, MsgKind::RewardCopy, MsgTags::default(), 10);
        n.kill(Endpoint::Owner(1), Actor::Host(0));
        assert!(n.next_event().is_none());
        assert_eq!(n.drops()[0].reason, DropReason::DeadEndpoint);
    }

    #[test]
    fn ordering_is_time_then_sequence() {
        let mut n = Net::new(1);
        n.schedule_timer(SimDuration(5), Endpoint::Clock, 1);
        n.schedule_timer(SimDuration(5), Endpoint::Clock, 2);
        n.schedule_timer(SimDuration(1), Endpoint::Clock, 3);
        let order: Vec<u32> = std::iter::from_fn(|| n.next_event())
            .map(|(_, e)| match e {
                SimEvent::Timer { timer, .. } => timer,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(order, vec![3, 1, 2]);
    }

    #[test]
    fn latency_sampling_is_seeded() {
        let d = LatencyDist::secs(1.202, 0.249);
        let a: Vec<_> = {
            let mut r = SimRng::new(9);
            (0..10).map(|_| d.sample(&mut r)).collect()
        };
        let b: Vec<_> = {
            let mut r = SimRng::new(9);
            (0..10).map(|_| d.sample(&mut r)).collect()
        };
        assert_eq!(a, b);
        let mut r = SimRng::new(1);
        assert_eq!(LatencyDist::secs(4.288, 0.0).sample(&mut r), SimDuration(4_288_000));
    }

    #[test]
    fn cut_point_ids_are_one_to_five() {
        assert!(CutPoint::new(0).is_none());
        assert!(CutPoint::new(6).is_none());
        let kinds: BTreeSet<_> = CutPoint::all().map(|c| c.kind()).collect();
        assert_eq!(kinds.len(), 5);
    }

    #[test]
    fn endpoint_text_round_trip() {
        for e in [Endpoint::Interface(0), Endpoint::PaymentEnclave(3), Endpoint::Ledger, Endpoint::Owner(12)] {
            assert_eq!(Endpoint::parse(&e.to_string()), Some(e));
        }
    }
}
