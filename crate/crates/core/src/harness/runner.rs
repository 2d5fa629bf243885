//! Event-driven execution of a scenario on the virtual-time network.
//!
//! Every party is an actor reached through [`Network`]; enclave state lives
//! in the node structs below and is only touched by message or timer
//! handlers addressed to that node.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::rc::Rc;

use serde_json::json;

use crate::attest::{observed_dead, CpuIdentity, EnclaveIdentity, EnclaveKind, Mesh};
use crate::gossip::{gossip_round, GossipState, Mode, NodeKind, P2pNet, Topology};
use crate::interface::{
    deposit_fate, dispatch_batches, CampaignSpec, Candidate, Constraint, Credential, DepositFate, EconomicParams,
    EnrollEnv, EnrollRequest, FundingProof, InterfaceEnclave, Policy, Quote, ShareClose,
};
use crate::ledger::{
    Address, Amount, BlockHeader, Chain, ChainParams, Ledger, Note, OutputKind, SpendKey, Transaction, TxId, TxOutput,
};
use crate::parties::{forge_fork, proxy_relay, revert_action, OwnerActor, OwnerProfile, RelayError};
use crate::payment::{allocate_shares, recover_share, FundShare, SettlementAddrs, SlotCharge};
use crate::service_enclave::{
    await_revert_window, gate_owner_chain, perform_action, verify_external, ActionRecord, GateEvidence, GateOutcome,
    PipelineLatency, SlotStatus, VerifyError,
};
use crate::services::{
    Confirmation, ExchangeResult, Pipeline, ServiceAction, SocialService, TargetService, VotingService, PIPELINE_LEN,
};
use crate::simnet::{
    Actor, CutPoint, Endpoint, LatencyDist, MsgKind, MsgTags, Network, SimDuration, SimEvent, SimTime,
};

use super::config::{parse_actor, parse_scope, DirectiveKind, RenterView, ScenarioConfig};
use super::report::{
    verdict, CampaignReport, ChainChecks, CoinDeltas, GossipReport, OwnerReport, P2pReport, ScenarioReport, SlotFate,
    SlotReport,
};

/// Everything a run produces.
pub struct RunOutput {
    pub report: ScenarioReport,
    pub event_log: String,
    pub chain_dump: String,
    /// Final state of services, enclaves and campaigns.
    pub state: serde_json::Value,
}

pub fn run(cfg: &ScenarioConfig) -> RunOutput {
    Simulation::new(cfg.clone()).run()
}

fn secs(s: f64) -> SimDuration {
    SimDuration::from_secs_f64(s)
}

fn ppm(rate: f64) -> u32 {
    (rate * 1e6).round() as u32
}

fn tags(campaign: u32) -> MsgTags {
    MsgTags { campaign: Some(campaign), ..MsgTags::default() }
}

fn slot_tags(campaign: u32, owner: u32, slot: u32) -> MsgTags {
    MsgTags { campaign: Some(campaign), owner: Some(owner), slot: Some(slot), share: None }
}

fn share_tags(campaign: u32, share: u32) -> MsgTags {
    MsgTags { campaign: Some(campaign), share: Some(share), ..MsgTags::default() }
}

/// Campaign context shared by every job of one campaign.
struct JobCtx {
    service: u32,
    action: ServiceAction,
    link: Option<String>,
    revert_window: SimDuration,
    renter_view: Vec<BlockHeader>,
}

#[derive(Clone)]
struct Job {
    ci: u32,
    slot: u32,
    candidate: Candidate,
    ctx: Rc<JobCtx>,
}

#[derive(Clone)]
enum Relay {
    Continue,
    Done(Confirmation),
    Unreachable,
    Error(String),
}

#[derive(Clone, Copy)]
enum SlotResult {
    Skipped(SlotStatus),
    Performed,
    Final,
}

#[derive(Clone)]
enum Payload {
    Start(FundingProof),
    Status { accepted: bool, reason: String },
    Jobs(Vec<Job>),
    Outcome { record: ActionRecord, result: SlotResult },
    ChainRequest { from: u64 },
    ChainReply(Vec<BlockHeader>),
    Exchange(Pipeline),
    ExchangeReply { pipeline: Pipeline, result: Relay },
    ShareInit { share: FundShare, addrs: SettlementAddrs },
    Charges(Vec<SlotCharge>),
    Tx(Transaction),
    ShareReport,
    Rebalance(SlotCharge),
    Heartbeat,
    Close { burn: Amount },
    Recovery,
    Poll { address: String },
    PollAck,
}

#[derive(Clone, Debug)]
enum Timer {
    Mine,
    Directive(usize),
    Create(u32),
    GiveUp(u32),
    GateTimeout { ci: u32, slot: u32, owner: u32 },
    ActionTimeout { ci: u32, slot: u32, owner: u32 },
    RevertCheck { ci: u32, slot: u32 },
    OwnerRevert { ci: u32, slot: u32 },
    Snark,
    Heartbeat,
    Liveness,
    Poll,
    Gossip,
    Terminate(u32),
    P2pDone(u32),
    RecoveryDeadline(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Scheduled,
    Funding,
    Starting,
    Running,
    Paying,
    Settling,
    Done,
    Abandoned,
    Recovering,
    Recovered,
    Orphaned,
}

impl Phase {
    fn terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Abandoned | Phase::Recovered | Phase::Orphaned)
    }

    fn label(self) -> &'static str {
        match self {
            Phase::Done => "done",
            Phase::Abandoned => "abandoned",
            Phase::Recovered => "recovered",
            Phase::Orphaned => "stranded",
            _ => "incomplete",
        }
    }
}

struct OwnerState {
    actor: OwnerActor,
    group: usize,
    service: u32,
    account: String,
    password: String,
    ghost: bool,
    polls: bool,
    home: Option<u32>,
    enrolled_at: BTreeSet<u32>,
    note: Option<String>,
    last_ack: SimTime,
}

impl OwnerState {
    fn credential(&self) -> crate::services::AccountCredential {
        crate::services::AccountCredential { account: self.account.clone(), password: self.password.clone() }
    }
}

struct IfaceNode {
    enclave: InterfaceEnclave,
    services: Vec<u32>,
    payments: Vec<u32>,
    seen: BTreeMap<Endpoint, SimTime>,
    dead: BTreeSet<Endpoint>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stage {
    Gate,
    Pipeline,
}

struct Active {
    job: Job,
    record: ActionRecord,
    stage: Stage,
    started: SimTime,
    confirmation: Option<Confirmation>,
}

struct ServiceNode {
    iface: u32,
    queue: VecDeque<Job>,
    active: Option<Active>,
    waiting: BTreeMap<(u32, u32), Active>,
}

struct Holding {
    share: FundShare,
    addrs: SettlementAddrs,
    reporting: bool,
    closed: bool,
}

struct PaymentNode {
    iface: u32,
    holdings: BTreeMap<u32, Holding>,
    queue: VecDeque<(u32, SlotCharge)>,
    busy: bool,
    iface_seen: Option<SimTime>,
    recovery_sent: bool,
}

struct ShareRun {
    enclave: u32,
    key_addr: Address,
    remaining: Amount,
    reported: bool,
    dead: bool,
    closed: bool,
}

struct CampaignRun {
    iface: u32,
    local: Option<u32>,
    phase: Phase,
    error: Option<String>,
    quote: Option<Quote>,
    escrow: Option<Address>,
    funding: Option<Transaction>,
    fork: Option<Chain>,
    ctx: Option<Rc<JobCtx>>,
    shares: Vec<ShareRun>,
    dispatched_at: Option<SimTime>,
    service_done_at: Option<SimTime>,
    first_charge_at: Option<SimTime>,
    last_settle_at: Option<SimTime>,
    charges: BTreeMap<u32, SlotCharge>,
    settlements: BTreeMap<u32, TxId>,
    rebalances: BTreeMap<u32, usize>,
    /// `(share, tx, burn)` for every closing transaction issued.
    closes: Vec<(u32, TxId, Amount)>,
    plan: Vec<ShareClose>,
    backup_closed: BTreeSet<u32>,
    service_of_slot: BTreeMap<u32, u32>,
    acked: bool,
    refund_tx: Option<TxId>,
}

struct Env<'a> {
    alive: bool,
    service: &'a TargetService,
}

impl EnrollEnv for Env<'_> {
    fn relay_nonce(&mut self, _proxy: Endpoint, nonce: u64) -> Option<u64> {
        self.alive.then_some(nonce)
    }

    fn test_login(&mut self, _proxy: Endpoint, credential: &Credential) -> bool {
        self.alive && self.service.login(&credential.account_credential()).is_ok()
    }
}

pub struct Simulation {
    cfg: ScenarioConfig,
    net: Network<Payload, Timer>,
    ledger: Ledger,
    mesh: Mesh,
    services: Vec<TargetService>,
    links: BTreeMap<String, String>,
    owners: Vec<OwnerState>,
    renter_key: SpendKey,
    renter_note: Option<Note>,
    maintainer: Address,
    params: EconomicParams,
    lat: PipelineLatency,
    snark: LatencyDist,
    link: SimDuration,
    timeout: SimDuration,
    window: SimDuration,
    heartbeat: SimDuration,
    ifaces: BTreeMap<u32, IfaceNode>,
    service_nodes: BTreeMap<u32, ServiceNode>,
    payment_nodes: BTreeMap<u32, PaymentNode>,
    campaigns: Vec<CampaignRun>,
    topology: Option<Topology>,
    gossip: Option<GossipState>,
    gossip_report: GossipReport,
    p2p: Option<P2pNet>,
    p2p_report: P2pReport,
    delay_actors: Vec<Actor>,
    drain_left: u64,
    last_directive: SimTime,
    horizon: SimTime,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Self {
        let seed = cfg.seed;
        let t = &cfg.timing;
        let zv = t.zero_variance;
        let dist = |m: f64, s: f64| LatencyDist::secs(m, if zv { 0.0 } else { s });
        let lat = PipelineLatency {
            steps: t.pipeline_means_secs.iter().zip(&t.pipeline_stds_secs).map(|(m, s)| dist(*m, *s)).collect(),
        };
        let snark = dist(t.snark_mean_secs, t.snark_std_secs);
        let link = secs(t.link_ms / 1000.0);
        let timeout = secs(lat.mean_total().as_secs_f64() * t.timeout_factor);
        let params = EconomicParams {
            deposit_ppm: ppm(cfg.economics.deposit_rate),
            fee_ppm: ppm(cfg.economics.fee_rate),
            confirmations: cfg.ledger.confirmations,
            poll_interval: secs(cfg.economics.poll_interval_secs),
            difficulty_bits: cfg.ledger.difficulty_bits,
        };

        let mut social = SocialService::new();
        for i in &cfg.services.social_items {
            social.add_item(i);
        }
        let mut links = BTreeMap::new();
        for i in &cfg.services.hidden_items {
            links.insert(i.clone(), social.create_hidden_item(i));
        }
        social.set_colluding(cfg.services.social_colluding);
        let mut voting = VotingService::new(cfg.services.vote_policy, cfg.services.candidates.iter().cloned());
        voting.set_colluding(cfg.services.voting_colluding);
        let mut services = vec![TargetService::Social(social), TargetService::Voting(voting)];

        let mut net: Network<Payload, Timer> = Network::new(seed);
        let mut owners = Vec::new();
        for (gi, g) in cfg.owners.iter().enumerate() {
            for _ in 0..g.count {
                let o = owners.len() as u32;
                let mut actor = OwnerActor::new(o, seed, g.profile);
                actor.proxy.alive = !g.proxy_dead;
                let account = format!("acct-{o}");
                let password = format!("pw-{o}");
                let svc = g.service.id();
                match &mut services[svc as usize] {
                    TargetService::Social(s) if g.ghost => s.create_ghost(&account, &password),
                    TargetService::Social(s) => s.register(&account, &password),
                    TargetService::Voting(v) if g.ghost => v.create_ghost(&account, &password),
                    TargetService::Voting(v) => v.register(&account, &password),
                }
                let st = OwnerState {
                    actor,
                    group: gi,
                    service: svc,
                    account,
                    password,
                    ghost: g.ghost,
                    polls: g.polls,
                    home: None,
                    enrolled_at: BTreeSet::new(),
                    note: None,
                    last_ack: SimTime::ZERO,
                };
                if let (Some(c), TargetService::Voting(v)) = (&g.pre_vote, &mut services[svc as usize]) {
                    let _ = v.cast_vote(&st.credential(), c);
                    net.log.record(SimTime::ZERO, Endpoint::Owner(o), "pre-vote", format_args!("o{o} {c}"));
                }
                if g.profile == OwnerProfile::CutsResponses {
                    net.controls.drop_kind(Actor::Owner(o), MsgKind::ActionResponse, crate::simnet::Scope::Owner(o));
                }
                owners.push(st);
            }
        }

        let renter_key = SpendKey::derive("renter/0", seed);
        let funds = Amount::from_coins_f64(cfg.ledger.renter_funds).unwrap_or(Amount::ZERO);
        let chain = Chain::genesis(
            ChainParams { difficulty_bits: cfg.ledger.difficulty_bits },
            seed,
            &[(renter_key.address(), funds)],
        );
        let renter_note = chain.blocks()[0]
            .txs
            .iter()
            .flat_map(|t| t.notes())
            .map(|(n, _)| n)
            .find(|n| n.owner == renter_key.address());
        let ledger = Ledger::new(chain);

        let last_directive =
            cfg.adversary.iter().map(|d| SimTime::ZERO + secs(d.at_secs)).max().unwrap_or(SimTime::ZERO);
        let horizon = SimTime::ZERO + secs(cfg.timing.horizon_secs);
        let campaigns = cfg
            .campaigns
            .iter()
            .map(|c| CampaignRun {
                iface: c.interface,
                local: None,
                phase: Phase::Scheduled,
                error: None,
                quote: None,
                escrow: None,
                funding: None,
                fork: None,
                ctx: None,
                shares: Vec::new(),
                dispatched_at: None,
                service_done_at: None,
                first_charge_at: None,
                last_settle_at: None,
                charges: BTreeMap::new(),
                settlements: BTreeMap::new(),
                rebalances: BTreeMap::new(),
                closes: Vec::new(),
                plan: Vec::new(),
                backup_closed: BTreeSet::new(),
                service_of_slot: BTreeMap::new(),
                acked: false,
                refund_tx: None,
            })
            .collect();

        Simulation {
            maintainer: SpendKey::derive("maintainer", seed).address(),
            window: secs(cfg.economics.liveness_window_secs),
            heartbeat: secs(cfg.economics.heartbeat_secs),
            drain_left: cfg.ledger.confirmations,
            cfg,
            net,
            ledger,
            mesh: Mesh::with_stock_measurements(),
            services,
            links,
            owners,
            renter_key,
            renter_note,
            params,
            lat,
            snark,
            link,
            timeout,
            ifaces: BTreeMap::new(),
            service_nodes: BTreeMap::new(),
            payment_nodes: BTreeMap::new(),
            campaigns,
            topology: None,
            gossip: None,
            gossip_report: GossipReport::default(),
            p2p: None,
            p2p_report: P2pReport::default(),
            delay_actors: Vec::new(),
            last_directive,
            horizon,
        }
    }

    fn now(&self) -> SimTime {
        self.net.now()
    }

    fn log(&mut self, actor: impl std::fmt::Display, kind: &str, ids: impl std::fmt::Display) {
        let now = self.net.now();
        self.net.log.record(now, actor, kind, ids);
    }

    fn active(&self) -> bool {
        self.now() < self.last_directive || self.campaigns.iter().any(|c| !c.phase.terminal())
    }

    fn add_enclave(&mut self, e: Endpoint, kind: EnclaveKind) {
        let tampered = self.cfg.attestation.tampered.iter().any(|t| Endpoint::parse(t) == Some(e));
        let ident = if tampered {
            EnclaveIdentity::with_code(e, kind, 0, &format!("{}-modified", kind.genuine_code()))
        } else {
            EnclaveIdentity::genuine(e, kind, 0)
        };
        self.mesh.add_enclave(ident);
    }

    fn add_iface(&mut self, i: u32, services: Vec<u32>, payments: Vec<u32>) {
        let seed = self.cfg.seed;
        self.add_enclave(Endpoint::Interface(i), EnclaveKind::Interface);
        for s in &services {
            self.add_enclave(Endpoint::ServiceEnclave(*s), EnclaveKind::Service);
            self.service_nodes
                .insert(*s, ServiceNode { iface: i, queue: VecDeque::new(), active: None, waiting: BTreeMap::new() });
        }
        for p in &payments {
            self.add_enclave(Endpoint::PaymentEnclave(*p), EnclaveKind::Payment);
            self.payment_nodes.insert(
                *p,
                PaymentNode {
                    iface: i,
                    holdings: BTreeMap::new(),
                    queue: VecDeque::new(),
                    busy: false,
                    iface_seen: None,
                    recovery_sent: false,
                },
            );
        }
        self.ifaces.insert(
            i,
            IfaceNode {
                enclave: InterfaceEnclave::new(Endpoint::Interface(i), self.params, seed),
                services,
                payments,
                seen: BTreeMap::new(),
                dead: BTreeSet::new(),
            },
        );
    }

    fn setup(&mut self) {
        let topo_cfg = self.cfg.topology.clone();
        let n_owners = self.owners.len() as u32;
        match topo_cfg.mode {
            Mode::Centralized | Mode::Distributed => {
                let n = if topo_cfg.mode == Mode::Centralized { 1 } else { topo_cfg.interfaces };
                let (s, p) = (topo_cfg.service_enclaves, topo_cfg.payment_enclaves);
                for i in 0..n {
                    self.add_iface(i, (i * s..(i + 1) * s).collect(), (i * p..(i + 1) * p).collect());
                }
                if topo_cfg.mode == Mode::Distributed {
                    let mut t = Topology::new(Mode::Distributed);
                    for i in 0..n {
                        t.add_node(i, NodeKind::Interface);
                    }
                    if topo_cfg.edges.is_empty() {
                        for i in 1..n {
                            t.add_edge(i - 1, i);
                        }
                    } else {
                        for [a, b] in &topo_cfg.edges {
                            t.add_edge(*a, *b);
                        }
                    }
                    self.gossip = Some(GossipState::new(&t, topo_cfg.gossip_batch));
                    self.topology = Some(t);
                }
                for o in 0..n_owners {
                    let g = &self.cfg.owners[self.owners[o as usize].group];
                    let i = g.interface.unwrap_or(o % n);
                    self.enroll(o, i);
                }
            }
            Mode::P2p => {
                let mut t = Topology::new(Mode::P2p);
                for i in 0..n_owners {
                    t.add_node(i, NodeKind::Combined);
                }
                if topo_cfg.edges.is_empty() {
                    for i in 1..n_owners {
                        t.add_edge(i - 1, i);
                    }
                } else {
                    for [a, b] in &topo_cfg.edges {
                        t.add_edge(*a, *b);
                    }
                }
                let entries: BTreeSet<u32> = self.cfg.campaigns.iter().map(|c| c.interface).collect();
                for e in &entries {
                    self.add_iface(*e, Vec::new(), vec![*e]);
                }
                let mut p2p = P2pNet::new(t.clone());
                for o in 0..n_owners {
                    let g = &self.cfg.owners[self.owners[o as usize].group];
                    let cpu = CpuIdentity(g.cpu.unwrap_or(1000 + o));
                    match p2p.register_owner_p2p(o, o, cpu) {
                        Ok(()) => {
                            self.p2p_report.registered += 1;
                            self.log(Endpoint::Owner(o), "p2p-register", format_args!("o{o} cpu={} ok", cpu.0));
                            for e in &entries {
                                self.enroll(o, *e);
                            }
                        }
                        Err(err) => {
                            self.p2p_report.rejected += 1;
                            self.owners[o as usize].note = Some(err.to_string());
                            self.log(Endpoint::Owner(o), "p2p-register", format_args!("o{o} cpu={} rejected", cpu.0));
                        }
                    }
                }
                self.p2p = Some(p2p);
                self.topology = Some(t);
            }
        }

        let interval = secs(self.cfg.ledger.block_interval_secs);
        self.net.schedule_timer(interval, Endpoint::Clock, Timer::Mine);
        for (ci, c) in self.cfg.campaigns.iter().enumerate() {
            self.net.schedule_timer(secs(c.start_secs), Endpoint::Clock, Timer::Create(ci as u32));
        }
        for (di, d) in self.cfg.adversary.iter().enumerate() {
            self.net.schedule_timer(secs(d.at_secs), Endpoint::Clock, Timer::Directive(di));
        }
        let half_poll = SimDuration(self.params.poll_interval.0 / 2);
        for o in 0..n_owners {
            self.net.schedule_timer(half_poll, Endpoint::Owner(o), Timer::Poll);
        }
        let nodes: Vec<Endpoint> = self
            .service_nodes
            .keys()
            .map(|s| Endpoint::ServiceEnclave(*s))
            .chain(self.payment_nodes.keys().map(|p| Endpoint::PaymentEnclave(*p)))
            .collect();
        for e in nodes {
            self.net.schedule_timer(SimDuration::ZERO, e, Timer::Heartbeat);
        }
        let ifaces: Vec<u32> = self.ifaces.keys().copied().collect();
        for i in ifaces {
            self.net.schedule_timer(self.heartbeat, Endpoint::Interface(i), Timer::Liveness);
            if self.cfg.topology.mode == Mode::Distributed {
                self.net.schedule_timer(SimDuration::ZERO, Endpoint::Interface(i), Timer::Heartbeat);
            }
        }
        if self.gossip.is_some() {
            self.net.schedule_timer(secs(self.cfg.topology.gossip_round_secs), Endpoint::Clock, Timer::Gossip);
        }
    }

    fn enroll(&mut self, o: u32, i: u32) -> bool {
        let now = self.now();
        let st = &self.owners[o as usize];
        let g = &self.cfg.owners[st.group];
        let policy = Policy {
            service_id: st.service,
            allowed_actions: g.actions.iter().copied().collect(),
            constraint: match &g.whitelist {
                Some(w) => Constraint::TargetWhitelist(w.iter().cloned().collect()),
                None => Constraint::Any,
            },
            price_per_action: Amount::from_coins_f64(g.price).unwrap_or(Amount::ZERO),
            accepts_revert_window: g.accepts_revert_window,
        };
        let cred = Credential {
            service_id: st.service,
            account: st.account.clone(),
            secret: if g.bad_password { format!("wrong-{o}") } else { st.password.clone() },
        };
        let req = EnrollRequest {
            accounts: vec![(cred, policy)],
            proxy_endpoint: Endpoint::Owner(o),
            proxy_address: st.actor.proxy.address.clone(),
            payout_address: st.actor.payout_address(),
        };
        let mut env = Env { alive: st.actor.proxy.alive, service: &self.services[st.service as usize] };
        let Some(node) = self.ifaces.get_mut(&i) else { return false };
        let r = node.enclave.enroll_owner(o, req, now, &mut env);
        match r {
            Ok(_) => {
                let st = &mut self.owners[o as usize];
                st.home.get_or_insert(i);
                st.enrolled_at.insert(i);
                st.note = None;
                st.last_ack = now;
                if let Some(g) = &mut self.gossip {
                    g.enroll(i, o);
                }
                self.log(Endpoint::Interface(i), "enroll", format_args!("o{o} ok"));
                true
            }
            Err(e) => {
                self.log(Endpoint::Interface(i), "enroll", format_args!("o{o} rejected {e}"));
                self.owners[o as usize].note = Some(e.to_string());
                false
            }
        }
    }

    /// Sends with the standard link latency. Sealed messages need an
    /// attested session between the two enclaves and are not sent without one.
    #[allow(clippy::too_many_arguments)]
    fn send(
        &mut self,
        src: Endpoint,
        dst: Endpoint,
        kind: MsgKind,
        tags: MsgTags,
        payload: Payload,
        sealed: bool,
        tainted: bool,
    ) {
        let session = if sealed {
            let expected = match dst {
                Endpoint::Interface(_) => EnclaveKind::Interface,
                Endpoint::ServiceEnclave(_) => EnclaveKind::Service,
                Endpoint::PaymentEnclave(_) => EnclaveKind::Payment,
                _ => unreachable!("only enclaves receive sealed messages"),
            };
            match self.mesh.attest(src, expected.genuine_measurement(), dst, &self.net.controls) {
                Ok(s) => Some(s.session_id),
                Err(e) => {
                    self.log(src, "no-session", format_args!("{} ->{dst} {e}", kind.as_str()));
                    return;
                }
            }
        } else {
            None
        };
        let link = self.link;
        self.net.send(src, dst, kind, session, tags, payload, tainted, link);
    }

    pub fn run(mut self) -> RunOutput {
        self.setup();
        while let Some((t, ev)) = self.net.next_event() {
            if t > self.horizon {
                self.log(Endpoint::Clock, "horizon", format_args!("stop"));
                break;
            }
            match ev {
                SimEvent::Deliver(m) => self.deliver(m.meta.src, m.meta.dst, m.meta.kind, m.meta.tags, m.payload),
                SimEvent::Timer { at, timer } => self.timer(at, timer),
            }
        }
        self.finish()
    }

    fn deliver(&mut self, src: Endpoint, dst: Endpoint, kind: MsgKind, tags: MsgTags, payload: Payload) {
        let ci = tags.campaign.unwrap_or(0);
        match (dst, payload) {
            (Endpoint::Ledger, Payload::Tx(tx)) => {
                let id = tx.tx_id;
                if let Err(e) = self.ledger.submit_tx(tx) {
                    self.log(Endpoint::Ledger, "reject", format_args!("tx={} {e}", id.short()));
                }
            }
            (Endpoint::Interface(i), Payload::Start(proof)) => self.on_start(i, ci, proof),
            (Endpoint::Interface(i), Payload::Outcome { record, result }) => {
                self.on_outcome(i, src, ci, record, result)
            }
            (Endpoint::Interface(i), Payload::Heartbeat) => {
                if let Some(n) = self.ifaces.get_mut(&i) {
                    n.seen.insert(src, self.net.now());
                }
            }
            (Endpoint::Interface(_), Payload::ShareReport) => {
                let share = tags.share.unwrap_or(0) as usize;
                if let Some(sh) = self.campaigns[ci as usize].shares.get_mut(share) {
                    sh.reported = true;
                }
                self.maybe_settling(ci);
            }
            (Endpoint::Interface(i), Payload::Rebalance(charge)) => {
                self.on_rebalance(i, ci, tags.share.unwrap_or(0), charge)
            }
            (Endpoint::Interface(i), Payload::Recovery) => {
                let share = tags.share.unwrap_or(0);
                self.log(Endpoint::Interface(i), "recovery", format_args!("c{ci}p{share} from={src}"));
                self.campaigns[ci as usize].backup_closed.insert(share);
                self.send(
                    Endpoint::Interface(i),
                    src,
                    MsgKind::CloseShare,
                    share_tags(ci, share),
                    Payload::Close { burn: Amount::ZERO },
                    true,
                    false,
                );
            }
            (Endpoint::Interface(i), Payload::Poll { address }) => {
                let Some(o) = tags.owner else { return };
                let now = self.now();
                let ok = self.ifaces.get_mut(&i).is_some_and(|n| n.enclave.poll(o, &address, now).is_ok());
                if ok {
                    self.send(
                        Endpoint::Interface(i),
                        Endpoint::Owner(o),
                        MsgKind::Poll,
                        tags,
                        Payload::PollAck,
                        false,
                        false,
                    );
                }
            }
            (Endpoint::ServiceEnclave(s), Payload::Jobs(jobs)) => {
                let n = self.service_nodes.get_mut(&s).expect("service node");
                n.queue.extend(jobs);
                if n.active.is_none() {
                    self.start_next(s);
                }
            }
            (Endpoint::ServiceEnclave(s), Payload::ChainReply(headers)) => self.on_chain_reply(s, tags, headers),
            (Endpoint::ServiceEnclave(s), Payload::ExchangeReply { pipeline, result }) => {
                self.on_exchange_reply(s, tags, pipeline, result)
            }
            (Endpoint::PaymentEnclave(p), Payload::ShareInit { share, addrs }) => {
                let idx = share.share_id;
                let value = share.head_value();
                self.payment_nodes
                    .get_mut(&p)
                    .expect("payment node")
                    .holdings
                    .insert(ci, Holding { share, addrs, reporting: false, closed: false });
                self.log(Endpoint::PaymentEnclave(p), "share", format_args!("c{ci}p{idx} value={}", value.0));
            }
            (Endpoint::PaymentEnclave(p), Payload::Charges(charges)) => self.on_charges(p, ci, charges),
            (Endpoint::PaymentEnclave(p), Payload::Close { burn }) => {
                self.on_close(p, ci, tags.share.unwrap_or(0), burn)
            }
            (Endpoint::PaymentEnclave(p), Payload::Heartbeat) => {
                let now = self.now();
                if let Some(n) = self.payment_nodes.get_mut(&p) {
                    n.iface_seen = Some(now);
                }
            }
            (Endpoint::Owner(o), Payload::ChainRequest { from }) => self.on_chain_request(o, src, ci, tags, from),
            (Endpoint::Owner(o), Payload::Tx(tx)) => {
                self.net.send(
                    Endpoint::Owner(o),
                    Endpoint::Ledger,
                    MsgKind::TxRelay,
                    None,
                    tags,
                    Payload::Tx(tx),
                    false,
                    self.link,
                );
            }
            (Endpoint::Owner(o), Payload::PollAck) => {
                self.owners[o as usize].last_ack = self.net.now();
            }
            (Endpoint::Renter(_), Payload::Tx(tx)) => {
                self.net.send(
                    Endpoint::Renter(0),
                    Endpoint::Ledger,
                    MsgKind::TxRelay,
                    None,
                    tags,
                    Payload::Tx(tx),
                    false,
                    self.link,
                );
            }
            (Endpoint::Renter(_), Payload::Status { accepted, reason }) => {
                let c = &mut self.campaigns[ci as usize];
                if accepted {
                    c.acked = true;
                } else if !c.phase.terminal() {
                    c.phase = Phase::Abandoned;
                    c.error.get_or_insert(reason.clone());
                    self.log(Endpoint::Renter(0), "abandon", format_args!("c{ci} {reason}"));
                }
            }
            (Endpoint::Target(svc), Payload::Exchange(p)) => self.on_exchange(svc, src, tags, p),
            (dst, _) => {
                self.log(dst, "ignored", format_args!("{}", kind.as_str()));
            }
        }
    }

    fn timer(&mut self, at: Endpoint, timer: Timer) {
        match (at, timer) {
            (_, Timer::Mine) => self.on_mine(),
            (_, Timer::Directive(i)) => self.on_directive(i),
            (_, Timer::Create(ci)) => self.on_create(ci),
            (_, Timer::GiveUp(ci)) => {
                let c = &mut self.campaigns[ci as usize];
                if c.phase == Phase::Starting && !c.acked {
                    c.phase = Phase::Abandoned;
                    c.error = Some("start unacknowledged".into());
                    self.log(Endpoint::Renter(0), "abandon", format_args!("c{ci} start unacknowledged"));
                }
            }
            (Endpoint::ServiceEnclave(s), Timer::GateTimeout { ci, slot, owner }) => {
                if self.is_active(s, ci, slot, owner, Stage::Gate) {
                    self.log(Endpoint::ServiceEnclave(s), "gate-timeout", format_args!("c{ci}s{slot} o{owner}"));
                    self.finish_active(s, SlotResult::Skipped(SlotStatus::SkippedUnreachable), None);
                }
            }
            (Endpoint::ServiceEnclave(s), Timer::ActionTimeout { ci, slot, owner }) => {
                if self.is_active(s, ci, slot, owner, Stage::Pipeline) {
                    self.log(Endpoint::ServiceEnclave(s), "action-timeout", format_args!("c{ci}s{slot} o{owner}"));
                    self.finish_active(s, SlotResult::Final, Some(SlotStatus::Timeout));
                }
            }
            (Endpoint::ServiceEnclave(s), Timer::RevertCheck { ci, slot }) => self.on_revert_check(s, ci, slot),
            (Endpoint::Owner(o), Timer::OwnerRevert { ci, slot }) => {
                let Some(ctx) = self.campaigns[ci as usize].ctx.clone() else { return };
                let st = &self.owners[o as usize];
                let cred = st.credential();
                let r = revert_action(&st.actor, &mut self.services[ctx.service as usize], &cred, &ctx.action);
                let outcome = match r {
                    Ok(()) => "ok".to_string(),
                    Err(e) => format!("failed {e}"),
                };
                self.log(Endpoint::Owner(o), "revert", format_args!("c{ci}s{slot} o{o} {outcome}"));
            }
            (Endpoint::PaymentEnclave(p), Timer::Snark) => self.on_snark(p),
            (e, Timer::Heartbeat) => self.on_heartbeat(e),
            (Endpoint::Interface(i), Timer::Liveness) => self.on_liveness(i),
            (Endpoint::Owner(o), Timer::Poll) => self.on_poll(o),
            (_, Timer::Gossip) => self.on_gossip(),
            (Endpoint::Interface(i), Timer::Terminate(ci)) => self.on_terminate(i, ci),
            (_, Timer::P2pDone(ci)) => self.check_all_final(ci),
            (_, Timer::RecoveryDeadline(ci)) => {
                let c = &mut self.campaigns[ci as usize];
                if c.phase == Phase::Recovering {
                    c.phase = if c.shares.iter().all(|s| s.closed) { Phase::Recovered } else { Phase::Orphaned };
                    let label = c.phase.label();
                    self.log(Endpoint::Clock, "recovery-end", format_args!("c{ci} {label}"));
                }
            }
            (e, t) => self.log(e, "ignored-timer", format_args!("{t:?}")),
        }
    }

    fn on_mine(&mut self) {
        let b = self.ledger.mine();
        let (h, n, d) = (b.header.height, b.txs.len(), b.header.own_digest.short());
        self.log(Endpoint::Ledger, "block", format_args!("h={h} txs={n} tip={d}"));
        let k = self.cfg.ledger.confirmations;
        for ci in 0..self.campaigns.len() {
            let c = &self.campaigns[ci];
            if c.phase == Phase::Funding {
                let tx = c.funding.as_ref().expect("funding tx").tx_id;
                if self.ledger.chain().confirmations(&tx) >= k {
                    self.send_start(ci as u32);
                }
            }
        }
        if !self.active() {
            self.drain_left = self.drain_left.saturating_sub(1);
            if self.drain_left == 0 {
                return;
            }
        }
        self.net.schedule_timer(secs(self.cfg.ledger.block_interval_secs), Endpoint::Clock, Timer::Mine);
    }

    fn abandon(&mut self, ci: u32, reason: String) {
        self.log(Endpoint::Renter(0), "abandon", format_args!("c{ci} {reason}"));
        let c = &mut self.campaigns[ci as usize];
        c.phase = Phase::Abandoned;
        c.error = Some(reason);
    }

    fn on_create(&mut self, ci: u32) {
        let cc = self.cfg.campaigns[ci as usize].clone();
        let i = cc.interface;
        if self.net.is_dead(Endpoint::Interface(i)) {
            return self.abandon(ci, "interface unreachable".into());
        }
        let spec = CampaignSpec {
            service_id: cc.service.id(),
            action: ServiceAction::new(cc.action, cc.target.clone()),
            count: cc.count,
            revert_window: secs(cc.revert_window_secs),
            renter_refund_address: self.renter_key.address(),
            link: self.links.get(&cc.target).cloned(),
        };
        let now = self.now();
        let node = self.ifaces.get_mut(&i).expect("interface node");
        let (local, quote, escrow) = match node.enclave.create_campaign(spec, now) {
            Ok(x) => x,
            Err(e) => return self.abandon(ci, e.to_string()),
        };
        self.log(
            Endpoint::Renter(0),
            "campaign",
            format_args!("c{ci} interface={i} slots={} total={}", quote.slots, quote.total().0),
        );
        let Some(note) = self.renter_note else { return self.abandon(ci, "renter has no funds".into()) };
        let total = quote.total();
        if note.value < total {
            return self.abandon(ci, "insufficient renter funds".into());
        }
        let mut outputs = vec![TxOutput { owner: escrow, value: total, kind: OutputKind::Funding }];
        if note.value > total {
            outputs.push(TxOutput {
                owner: self.renter_key.address(),
                value: note.value - total,
                kind: OutputKind::Change,
            });
        }
        let tx = Transaction::new(vec![note.note_id], outputs, vec![self.renter_key]);
        let c = &mut self.campaigns[ci as usize];
        c.local = Some(local);
        c.quote = Some(quote);
        c.escrow = Some(escrow);
        c.funding = Some(tx.clone());
        match cc.renter_view {
            RenterView::Honest => {
                self.renter_note = tx.output_note(1);
                c.phase = Phase::Funding;
                if let Err(e) = self.ledger.submit_tx(tx) {
                    self.abandon(ci, e.to_string());
                }
            }
            RenterView::Forged => {
                let k = self.cfg.ledger.confirmations as usize;
                match forge_fork(self.ledger.chain(), cc.fork_depth, vec![tx], k.saturating_sub(1)) {
                    Ok(fork) => {
                        let tip = fork.tip().own_digest.short();
                        c.fork = Some(fork);
                        self.log(Endpoint::Renter(0), "forge", format_args!("c{ci} depth={} tip={tip}", cc.fork_depth));
                        self.send_start(ci);
                    }
                    Err(e) => self.abandon(ci, e.to_string()),
                }
            }
        }
    }

    fn send_start(&mut self, ci: u32) {
        let c = &self.campaigns[ci as usize];
        let tx_id = c.funding.as_ref().expect("funding").tx_id;
        let chain = c.fork.as_ref().unwrap_or(self.ledger.chain());
        let h = chain.tx_height(&tx_id).expect("funding included");
        let proof = FundingProof {
            renter_chain_view: chain.headers_from(h),
            funding_tx_id: tx_id,
            block_txs: chain.block_at(h).expect("block").txs.clone(),
            block_height: h,
        };
        let i = c.iface;
        self.campaigns[ci as usize].phase = Phase::Starting;
        self.send(
            Endpoint::Renter(0),
            Endpoint::Interface(i),
            MsgKind::RenterLatestBlock,
            tags(ci),
            Payload::Start(proof),
            false,
            false,
        );
        self.net.schedule_timer(secs(self.cfg.timing.start_timeout_secs), Endpoint::Renter(0), Timer::GiveUp(ci));
    }

    fn on_start(&mut self, i: u32, ci: u32, proof: FundingProof) {
        let now = self.now();
        let iface = Endpoint::Interface(i);
        let Some(local) = self.campaigns[ci as usize].local else { return };
        if self.campaigns[ci as usize].phase != Phase::Starting {
            return;
        }
        let node = self.ifaces.get_mut(&i).expect("interface node");
        if let Err(e) = node.enclave.start_campaign(local, proof.clone(), now) {
            self.log(iface, "start-rejected", format_args!("c{ci} {e}"));
            let reason = e.to_string();
            self.send(
                iface,
                Endpoint::Renter(0),
                MsgKind::CampaignStatus,
                tags(ci),
                Payload::Status { accepted: false, reason },
                false,
                false,
            );
            return;
        }
        let (svc_list, pay_list) = (node.services.clone(), node.payments.clone());
        let mut svcs = Vec::new();
        for s in svc_list {
            match self.mesh.enlist(iface, Endpoint::ServiceEnclave(s), &self.net.controls) {
                Ok(_) => svcs.push(s),
                Err(e) => self.log(iface, "enlist-failed", format_args!("service:{s} {e}")),
            }
        }
        let mut pays = Vec::new();
        for p in pay_list {
            match self.mesh.enlist(iface, Endpoint::PaymentEnclave(p), &self.net.controls) {
                Ok(_) => pays.push(p),
                Err(e) => self.log(iface, "enlist-failed", format_args!("payment:{p} {e}")),
            }
        }
        let p2p = self.cfg.topology.mode == Mode::P2p;
        let node = self.ifaces.get_mut(&i).expect("interface node");
        let escrow_key = node.enclave.escrow_key(local);
        let camp = node.enclave.campaign(local).expect("campaign");
        let funding = camp.funding_note.expect("verified funding");
        let refund_to = camp.spec.renter_refund_address;
        if (!p2p && svcs.is_empty()) || pays.is_empty() {
            let tx = Transaction::new(
                vec![funding.note_id],
                vec![TxOutput { owner: refund_to, value: funding.value, kind: OutputKind::Refund }],
                vec![escrow_key],
            );
            self.campaigns[ci as usize].refund_tx = Some(tx.tx_id);
            self.log(iface, "refund", format_args!("c{ci} tx={} no attested enclaves", tx.tx_id.short()));
            self.send(iface, Endpoint::Ledger, MsgKind::HostBroadcast, tags(ci), Payload::Tx(tx), false, false);
            let reason = "no attested enclaves".to_string();
            self.send(
                iface,
                Endpoint::Renter(0),
                MsgKind::CampaignStatus,
                tags(ci),
                Payload::Status { accepted: false, reason: reason.clone() },
                false,
                false,
            );
            self.abandon(ci, reason);
            return;
        }
        let amounts = node.enclave.plan_shares(local, pays.len()).expect("campaign exists");
        let seed = self.cfg.seed;
        let mut pairs = Vec::new();
        for p in &pays {
            let key = SpendKey::derive(&format!("share/{p}/{ci}"), seed);
            let _ = self.mesh.backup_keys(Endpoint::PaymentEnclave(*p), iface, key);
            pairs.push((Endpoint::PaymentEnclave(*p), key));
        }
        let (split, shares) = match allocate_shares(&funding, escrow_key, ci, &pairs, &amounts) {
            Ok(x) => x,
            Err(e) => return self.abandon(ci, e.to_string()),
        };
        self.log(iface, "split", format_args!("c{ci} tx={} shares={}", split.tx_id.short(), shares.len()));
        self.send(iface, Endpoint::Ledger, MsgKind::HostBroadcast, tags(ci), Payload::Tx(split), false, false);
        let addrs = SettlementAddrs { renter_refund: refund_to, maintainer: self.maintainer };
        let mut runs = Vec::new();
        for (share, (p, a)) in shares.into_iter().zip(pays.iter().zip(&amounts)) {
            runs.push(ShareRun {
                enclave: *p,
                key_addr: share.key_address(),
                remaining: share.head_value().max(*a),
                reported: true,
                dead: false,
                closed: false,
            });
            let idx = share.share_id;
            self.send(
                iface,
                Endpoint::PaymentEnclave(*p),
                MsgKind::PayBatch,
                share_tags(ci, idx),
                Payload::ShareInit { share, addrs },
                true,
                true,
            );
        }
        let cc = &self.cfg.campaigns[ci as usize];
        let ctx = Rc::new(JobCtx {
            service: cc.service.id(),
            action: ServiceAction::new(cc.action, cc.target.clone()),
            link: self.links.get(&cc.target).cloned(),
            revert_window: secs(cc.revert_window_secs),
            renter_view: proof.renter_chain_view,
        });
        let c = &mut self.campaigns[ci as usize];
        c.shares = runs;
        c.ctx = Some(ctx);
        c.phase = Phase::Running;
        self.send(
            iface,
            Endpoint::Renter(0),
            MsgKind::CampaignStatus,
            tags(ci),
            Payload::Status { accepted: true, reason: String::new() },
            false,
            false,
        );
        if p2p {
            self.p2p_flood(ci);
        } else {
            self.dispatch(ci, &svcs);
        }
    }

    fn dispatch(&mut self, ci: u32, svcs: &[u32]) {
        let now = self.now();
        let c = &self.campaigns[ci as usize];
        let (i, local, ctx) = (c.iface, c.local.expect("local"), c.ctx.clone().expect("ctx"));
        let camp = self.ifaces.get_mut(&i).expect("iface").enclave.campaign_mut(local).expect("campaign");
        let mut assigned = Vec::new();
        let mut cand = BTreeMap::new();
        for slot in 0..camp.quote.slots {
            match camp.take_candidate() {
                Some(cd) => {
                    let r = &mut camp.records[slot as usize];
                    r.owner_id = Some(cd.owner_id);
                    r.price = Some(cd.price);
                    r.assigned_at = Some(now);
                    assigned.push(slot);
                    cand.insert(slot, cd);
                }
                None => {
                    let _ = camp.records[slot as usize].finish_skipped(SlotStatus::SkippedUnreachable, now);
                }
            }
        }
        let batches = dispatch_batches(&assigned, svcs.len()).expect("at least one service enclave");
        for (k, b) in batches.into_iter().enumerate() {
            if b.is_empty() {
                continue;
            }
            let s = svcs[k];
            let jobs: Vec<Job> = b
                .iter()
                .map(|slot| Job { ci, slot: *slot, candidate: cand.remove(slot).expect("candidate"), ctx: ctx.clone() })
                .collect();
            for slot in &b {
                self.campaigns[ci as usize].service_of_slot.insert(*slot, s);
            }
            self.log(Endpoint::Interface(i), "dispatch", format_args!("c{ci} service:{s} slots={}", b.len()));
            self.send(
                Endpoint::Interface(i),
                Endpoint::ServiceEnclave(s),
                MsgKind::DispatchBatch,
                tags(ci),
                Payload::Jobs(jobs),
                true,
                true,
            );
        }
        self.campaigns[ci as usize].dispatched_at = Some(now);
        self.check_all_final(ci);
    }

    fn owner_headers(&self, o: u32, ci: u32, from: u64) -> Vec<BlockHeader> {
        let eclipsed = self.net.controls.eclipsed_by(o).is_some()
            || self.owners[o as usize].actor.profile == OwnerProfile::Eclipsed;
        match (&self.campaigns[ci as usize].fork, eclipsed) {
            (Some(f), true) => f.headers_from(from),
            _ => self.ledger.chain().headers_from(from),
        }
    }

    fn on_chain_request(&mut self, o: u32, src: Endpoint, ci: u32, tags: MsgTags, from: u64) {
        if !self.owners[o as usize].actor.proxy.alive {
            return;
        }
        let headers = self.owner_headers(o, ci, from);
        self.send(Endpoint::Owner(o), src, MsgKind::OwnerLatestBlock, tags, Payload::ChainReply(headers), false, false);
    }

    fn is_active(&self, s: u32, ci: u32, slot: u32, owner: u32, stage: Stage) -> bool {
        self.service_nodes.get(&s).and_then(|n| n.active.as_ref()).is_some_and(|a| {
            a.job.ci == ci && a.job.slot == slot && a.job.candidate.owner_id == owner && a.stage == stage
        })
    }

    fn start_next(&mut self, s: u32) {
        let now = self.now();
        let n = self.service_nodes.get_mut(&s).expect("service node");
        let Some(job) = n.queue.pop_front() else {
            n.active = None;
            return;
        };
        let o = job.candidate.owner_id;
        let mut record = ActionRecord::new(job.slot, job.ctx.action.clone());
        record.owner_id = Some(o);
        record.price = Some(job.candidate.price);
        record.assigned_at = Some(now);
        let from = job.ctx.renter_view.first().map_or(0, |h| h.height);
        let (ci, slot) = (job.ci, job.slot);
        n.active = Some(Active { job, record, stage: Stage::Gate, started: now, confirmation: None });
        let t = slot_tags(ci, o, slot);
        self.send(
            Endpoint::ServiceEnclave(s),
            Endpoint::Owner(o),
            MsgKind::LatestBlockRequest,
            t,
            Payload::ChainRequest { from },
            false,
            false,
        );
        self.net.schedule_timer(self.timeout, Endpoint::ServiceEnclave(s), Timer::GateTimeout { ci, slot, owner: o });
    }

    fn send_exchange(&mut self, s: u32, svc: u32, t: MsgTags, p: Pipeline) {
        let step = self.lat.step(p.completed() as usize).sample(&mut self.net.rng);
        let latency = step + self.link;
        self.net.send(
            Endpoint::ServiceEnclave(s),
            Endpoint::Target(svc),
            MsgKind::PipelineRequest,
            None,
            t,
            Payload::Exchange(p),
            false,
            latency,
        );
    }

    fn on_chain_reply(&mut self, s: u32, t: MsgTags, headers: Vec<BlockHeader>) {
        let (Some(ci), Some(o), Some(slot)) = (t.campaign, t.owner, t.slot) else { return };
        if !self.is_active(s, ci, slot, o, Stage::Gate) {
            return;
        }
        let now = self.now();
        let bits = self.cfg.ledger.difficulty_bits;
        let a = self.service_nodes.get_mut(&s).expect("node").active.as_mut().expect("active");
        let g = gate_owner_chain(Some(&headers), &a.job.ctx.renter_view, bits);
        a.record.gate = Some(GateEvidence { owner_view: headers, consistent: g == GateOutcome::Pass });
        if g != GateOutcome::Pass {
            self.log(Endpoint::ServiceEnclave(s), "gate", format_args!("c{ci}s{slot} o{o} inconsistent"));
            return self.finish_active(s, SlotResult::Skipped(SlotStatus::SkippedInconsistent), None);
        }
        a.stage = Stage::Pipeline;
        a.started = now;
        let p = Pipeline::new(a.job.candidate.credential.account_credential(), a.job.ctx.action.clone(), "")
            .with_link(a.job.ctx.link.clone());
        let svc = a.job.ctx.service;
        self.send_exchange(s, svc, t, p);
        self.net.schedule_timer(self.timeout, Endpoint::ServiceEnclave(s), Timer::ActionTimeout { ci, slot, owner: o });
    }

    fn on_exchange(&mut self, svc: u32, src: Endpoint, t: MsgTags, mut p: Pipeline) {
        let Some(o) = t.owner else { return };
        let final_step = p.completed() + 1 == PIPELINE_LEN;
        let r = proxy_relay(&self.owners[o as usize].actor, &mut self.services[svc as usize], &mut p);
        let (kind, result) = match r {
            Ok(ExchangeResult::Continue(_)) => (MsgKind::PipelineResponse, Relay::Continue),
            Ok(ExchangeResult::Done(c)) => (MsgKind::ActionResponse, Relay::Done(c)),
            Err(RelayError::ProxyDead(_)) => (MsgKind::PipelineResponse, Relay::Unreachable),
            Err(RelayError::Service(e)) => (
                if final_step { MsgKind::ActionResponse } else { MsgKind::PipelineResponse },
                Relay::Error(e.to_string()),
            ),
        };
        self.send(Endpoint::Target(svc), src, kind, t, Payload::ExchangeReply { pipeline: p, result }, false, false);
    }

    fn on_exchange_reply(&mut self, s: u32, t: MsgTags, p: Pipeline, result: Relay) {
        let (Some(ci), Some(o), Some(slot)) = (t.campaign, t.owner, t.slot) else { return };
        if !self.is_active(s, ci, slot, o, Stage::Pipeline) {
            return;
        }
        let now = self.now();
        let a = self.service_nodes.get_mut(&s).expect("node").active.as_mut().expect("active");
        let svc = a.job.ctx.service;
        match result {
            Relay::Continue => self.send_exchange(s, svc, t, p),
            Relay::Unreachable => self.finish_active(s, SlotResult::Skipped(SlotStatus::SkippedUnreachable), None),
            Relay::Error(e) => {
                self.log(Endpoint::ServiceEnclave(s), "action-failed", format_args!("c{ci}s{slot} o{o} {e}"));
                self.finish_active(s, SlotResult::Final, Some(SlotStatus::Failed));
            }
            Relay::Done(conf) => {
                a.record.action_latency = now.since(a.started);
                let ctx = a.job.ctx.clone();
                let verified = match verify_external(
                    &self.services[svc as usize],
                    &ctx.action,
                    &conf.account,
                    ctx.link.as_deref(),
                ) {
                    Ok(v) => Some(v),
                    Err(VerifyError::NotObservable(_)) => None,
                    Err(VerifyError::Service(_)) => Some(false),
                };
                match verified {
                    Some(false) => {
                        self.log(Endpoint::ServiceEnclave(s), "verify", format_args!("c{ci}s{slot} o{o} no-effect"));
                        return self.finish_active(s, SlotResult::Final, Some(SlotStatus::Failed));
                    }
                    None => a.record.unverified = true,
                    Some(true) => {}
                }
                if ctx.revert_window > SimDuration::ZERO {
                    let n = self.service_nodes.get_mut(&s).expect("node");
                    let mut a = n.active.take().expect("active");
                    let _ = a.record.transition(SlotStatus::Performed, now);
                    a.confirmation = Some(conf);
                    let record = a.record.clone();
                    n.waiting.insert((ci, slot), a);
                    let iface = Endpoint::Interface(n.iface);
                    self.send(
                        Endpoint::ServiceEnclave(s),
                        iface,
                        MsgKind::SlotOutcome,
                        t,
                        Payload::Outcome { record, result: SlotResult::Performed },
                        true,
                        false,
                    );
                    self.net.schedule_timer(
                        ctx.revert_window,
                        Endpoint::ServiceEnclave(s),
                        Timer::RevertCheck { ci, slot },
                    );
                    if self.owners[o as usize].actor.profile == OwnerProfile::RevertsActions {
                        self.net.schedule_timer(
                            SimDuration(ctx.revert_window.0 / 2),
                            Endpoint::Owner(o),
                            Timer::OwnerRevert { ci, slot },
                        );
                    }
                    self.start_next(s);
                } else {
                    self.finish_active(s, SlotResult::Final, Some(SlotStatus::Confirmed));
                }
            }
        }
    }

    /// Ends the active job with `result`, reports it and starts the next.
    fn finish_active(&mut self, s: u32, result: SlotResult, status: Option<SlotStatus>) {
        let now = self.now();
        let n = self.service_nodes.get_mut(&s).expect("node");
        let Some(mut a) = n.active.take() else { return };
        if let Some(st) = status {
            finalize(&mut a.record, st, now);
        }
        let o = a.job.candidate.owner_id;
        if status == Some(SlotStatus::Confirmed)
            && self.owners[o as usize].actor.profile == OwnerProfile::RevertsActions
        {
            // no window to catch it: undo right after confirmation
            let (ci, slot) = (a.job.ci, a.job.slot);
            self.net.schedule_timer(SimDuration::from_secs(1), Endpoint::Owner(o), Timer::OwnerRevert { ci, slot });
        }
        let n = self.service_nodes.get_mut(&s).expect("node");
        let iface = Endpoint::Interface(n.iface);
        let t = slot_tags(a.job.ci, a.job.candidate.owner_id, a.job.slot);
        self.send(
            Endpoint::ServiceEnclave(s),
            iface,
            MsgKind::SlotOutcome,
            t,
            Payload::Outcome { record: a.record, result },
            true,
            false,
        );
        self.start_next(s);
    }

    fn on_revert_check(&mut self, s: u32, ci: u32, slot: u32) {
        let now = self.now();
        let n = self.service_nodes.get_mut(&s).expect("node");
        let Some(mut a) = n.waiting.remove(&(ci, slot)) else { return };
        let ctx = a.job.ctx.clone();
        let svc = &self.services[ctx.service as usize];
        let account = a.job.candidate.credential.account.clone();
        let still = match verify_external(svc, &ctx.action, &account, ctx.link.as_deref()) {
            Ok(v) => Some(v),
            Err(VerifyError::Service(_)) => Some(false),
            Err(VerifyError::NotObservable(_)) => match (svc, &a.confirmation) {
                (TargetService::Voting(v), Some(c)) => {
                    Some(v.verify_ballot(&a.job.candidate.credential.account_credential(), c.receipt).unwrap_or(false))
                }
                _ => None,
            },
        };
        let status = await_revert_window(&mut a.record, still, now).unwrap_or(a.record.status);
        let iface = Endpoint::Interface(n.iface);
        let o = a.job.candidate.owner_id;
        self.log(Endpoint::ServiceEnclave(s), "revert-check", format_args!("c{ci}s{slot} o{o} {}", status.as_str()));
        self.send(
            Endpoint::ServiceEnclave(s),
            iface,
            MsgKind::SlotOutcome,
            slot_tags(ci, o, slot),
            Payload::Outcome { record: a.record, result: SlotResult::Final },
            true,
            false,
        );
    }

    fn on_outcome(&mut self, i: u32, src: Endpoint, ci: u32, from: ActionRecord, result: SlotResult) {
        let now = self.now();
        let c = &self.campaigns[ci as usize];
        if !matches!(c.phase, Phase::Running) {
            return;
        }
        let (local, ctx) = (c.local.expect("local"), c.ctx.clone().expect("ctx"));
        let slot = from.slot_id;
        let camp = self.ifaces.get_mut(&i).expect("iface").enclave.campaign_mut(local).expect("campaign");
        let rec = &mut camp.records[slot as usize];
        let mut substitute = None;
        match result {
            SlotResult::Skipped(st) => {
                rec.owner_id = from.owner_id;
                let _ = rec.skip(st, now);
                match camp.take_candidate() {
                    Some(cd) => {
                        let rec = &mut camp.records[slot as usize];
                        rec.owner_id = Some(cd.owner_id);
                        rec.price = Some(cd.price);
                        rec.assigned_at = Some(now);
                        substitute = Some(cd);
                    }
                    None => {
                        let _ = camp.records[slot as usize].finish_skipped(st, now);
                    }
                }
            }
            SlotResult::Performed | SlotResult::Final => {
                rec.owner_id = from.owner_id;
                rec.gate = from.gate.clone();
                rec.unverified = from.unverified;
                rec.action_latency = from.action_latency;
                rec.price = from.price;
                finalize(rec, from.status, now);
            }
        }
        let rec = &camp.records[slot as usize];
        let owner = rec.owner_id.map_or("-".to_string(), |o| o.to_string());
        let status = rec.status.as_str();
        self.log(Endpoint::Interface(i), "slot", format_args!("c{ci}s{slot} owner={owner} status={status}"));
        if let Some(cd) = substitute {
            let o = cd.owner_id;
            self.log(Endpoint::Interface(i), "substitute", format_args!("c{ci}s{slot} owner={o}"));
            let job = Job { ci, slot, candidate: cd, ctx };
            self.send(
                Endpoint::Interface(i),
                src,
                MsgKind::AssignSlot,
                slot_tags(ci, o, slot),
                Payload::Jobs(vec![job]),
                true,
                true,
            );
        }
        self.check_all_final(ci);
    }

    fn check_all_final(&mut self, ci: u32) {
        let now = self.now();
        let c = &self.campaigns[ci as usize];
        if c.phase != Phase::Running {
            return;
        }
        let (i, local) = (c.iface, c.local.expect("local"));
        let node = self.ifaces.get(&i).expect("iface");
        let camp = node.enclave.campaign(local).expect("campaign");
        if !camp.all_final() {
            return;
        }
        let fee_ppm = self.params.fee_ppm;
        let mut per_share: BTreeMap<u32, Vec<SlotCharge>> = BTreeMap::new();
        for r in &camp.records {
            if r.status != SlotStatus::Confirmed {
                continue;
            }
            let (Some(o), Some(price)) = (r.owner_id, r.price) else { continue };
            let Some(payout) = node.enclave.owner(o).map(|rec| rec.payout_address) else { continue };
            let charge = SlotCharge {
                slot: r.slot_id,
                owner: o,
                reward: price,
                deposit_share: camp.deposit_share(r.slot_id),
                fee: price.scale_ppm(fee_ppm),
                payout,
            };
            per_share.entry(camp.share_of_slot.get(&r.slot_id).copied().unwrap_or(0)).or_default().push(charge);
        }
        let dead = node.dead.clone();
        self.log(Endpoint::Interface(i), "service-done", format_args!("c{ci}"));
        let c = &mut self.campaigns[ci as usize];
        c.service_done_at = Some(now);
        c.phase = Phase::Paying;
        let mut sends = Vec::new();
        for (idx, sh) in c.shares.iter_mut().enumerate() {
            let charges = per_share.remove(&(idx as u32)).unwrap_or_default();
            for ch in &charges {
                c.charges.insert(ch.slot, *ch);
                sh.remaining = sh.remaining.saturating_sub(ch.total());
            }
            if sh.dead || dead.contains(&Endpoint::PaymentEnclave(sh.enclave)) {
                sh.dead = true;
                sh.reported = true;
                continue;
            }
            sh.reported = false;
            sends.push((idx as u32, sh.enclave, charges));
        }
        for (idx, p, charges) in sends {
            self.send(
                Endpoint::Interface(i),
                Endpoint::PaymentEnclave(p),
                MsgKind::PayBatch,
                share_tags(ci, idx),
                Payload::Charges(charges),
                true,
                false,
            );
        }
        self.maybe_settling(ci);
    }

    fn maybe_settling(&mut self, ci: u32) {
        let c = &mut self.campaigns[ci as usize];
        if c.phase == Phase::Paying && c.shares.iter().all(|s| s.reported || s.dead) {
            c.phase = Phase::Settling;
            let i = c.iface;
            self.net.schedule_timer(
                secs(self.cfg.timing.settle_grace_secs),
                Endpoint::Interface(i),
                Timer::Terminate(ci),
            );
        }
    }

    fn on_rebalance(&mut self, i: u32, ci: u32, from_share: u32, charge: SlotCharge) {
        let n_shares = self.campaigns[ci as usize].shares.len();
        let c = &mut self.campaigns[ci as usize];
        let tries = c.rebalances.entry(charge.slot).or_insert(0);
        *tries += 1;
        let target = if *tries > n_shares {
            None
        } else {
            c.shares
                .iter()
                .enumerate()
                .filter(|(idx, s)| *idx as u32 != from_share && !s.dead)
                .max_by_key(|(idx, s)| (s.remaining, std::cmp::Reverse(*idx)))
                .map(|(idx, _)| idx)
        };
        let slot = charge.slot;
        match target {
            Some(idx) => {
                let sh = &mut c.shares[idx];
                sh.reported = false;
                sh.remaining = sh.remaining.saturating_sub(charge.total());
                let p = sh.enclave;
                self.log(Endpoint::Interface(i), "rebalance", format_args!("c{ci}s{slot} to=p{idx}"));
                self.send(
                    Endpoint::Interface(i),
                    Endpoint::PaymentEnclave(p),
                    MsgKind::PayBatch,
                    share_tags(ci, idx as u32),
                    Payload::Charges(vec![charge]),
                    true,
                    false,
                );
            }
            None => self.log(Endpoint::Interface(i), "unpaid", format_args!("c{ci}s{slot} no share can cover")),
        }
    }

    fn on_charges(&mut self, p: u32, ci: u32, charges: Vec<SlotCharge>) {
        let now = self.now();
        let c = &mut self.campaigns[ci as usize];
        c.first_charge_at.get_or_insert(now);
        let n = self.payment_nodes.get_mut(&p).expect("payment node");
        let Some(h) = n.holdings.get_mut(&ci) else { return };
        h.reporting = true;
        for ch in charges {
            n.queue.push_back((ci, ch));
        }
        if !n.busy {
            self.kick(p);
        }
    }

    /// Starts the next proof or, with nothing queued, reports idle shares.
    fn kick(&mut self, p: u32) {
        let n = self.payment_nodes.get_mut(&p).expect("payment node");
        if n.queue.is_empty() {
            n.busy = false;
            let idle: Vec<(u32, u32)> = n
                .holdings
                .iter_mut()
                .filter(|(_, h)| h.reporting)
                .map(|(ci, h)| {
                    h.reporting = false;
                    (*ci, h.share.share_id)
                })
                .collect();
            let iface = Endpoint::Interface(n.iface);
            for (ci, idx) in idle {
                self.send(
                    Endpoint::PaymentEnclave(p),
                    iface,
                    MsgKind::ShareReport,
                    share_tags(ci, idx),
                    Payload::ShareReport,
                    true,
                    false,
                );
            }
            return;
        }
        n.busy = true;
        let d = self.snark.sample(&mut self.net.rng);
        self.net.schedule_timer(d, Endpoint::PaymentEnclave(p), Timer::Snark);
    }

    fn on_snark(&mut self, p: u32) {
        let now = self.now();
        let n = self.payment_nodes.get_mut(&p).expect("payment node");
        let Some((ci, charge)) = n.queue.pop_front() else { return self.kick(p) };
        let iface = Endpoint::Interface(n.iface);
        let more = n.queue.iter().any(|(c, _)| *c == ci);
        let h = n.holdings.get_mut(&ci).expect("holding");
        let idx = h.share.share_id;
        let issued = h.share.issue_reward(&charge, &h.addrs);
        let report = !more && h.reporting;
        if report {
            h.reporting = false;
        }
        let t = MsgTags { campaign: Some(ci), owner: Some(charge.owner), slot: Some(charge.slot), share: Some(idx) };
        let src = Endpoint::PaymentEnclave(p);
        match issued {
            Ok(tx) => {
                let c = &mut self.campaigns[ci as usize];
                c.settlements.insert(charge.slot, tx.tx_id);
                c.last_settle_at = Some(now);
                self.log(src, "settle", format_args!("c{ci}s{} tx={}", charge.slot, tx.tx_id.short()));
                self.send(src, Endpoint::Ledger, MsgKind::HostBroadcast, t, Payload::Tx(tx.clone()), false, false);
                self.send(
                    src,
                    Endpoint::Owner(charge.owner),
                    MsgKind::RewardCopy,
                    t,
                    Payload::Tx(tx.clone()),
                    false,
                    false,
                );
                self.send(src, Endpoint::Renter(0), MsgKind::DepositReturnCopy, t, Payload::Tx(tx), false, false);
            }
            Err(e) => {
                self.log(src, "insufficient", format_args!("c{ci}s{} {e}", charge.slot));
                self.send(src, iface, MsgKind::RebalanceRequest, t, Payload::Rebalance(charge), true, false);
            }
        }
        if report {
            self.send(src, iface, MsgKind::ShareReport, share_tags(ci, idx), Payload::ShareReport, true, false);
        }
        self.kick(p);
    }

    fn live_head(&self, addr: Address) -> Option<Note> {
        let live = self.ledger.live_notes();
        self.ledger
            .chain()
            .unspent_at(&addr)
            .into_iter()
            .chain(self.ledger.mempool().iter().flat_map(|t| t.notes().map(|(n, _)| n)))
            .find(|n| n.owner == addr && live.contains(&n.note_id))
    }

    fn on_terminate(&mut self, i: u32, ci: u32) {
        let now = self.now();
        let live = self.ledger.live_notes();
        let c = &self.campaigns[ci as usize];
        if c.phase != Phase::Settling {
            return;
        }
        let chain = self.ledger.chain();
        let settled: BTreeSet<u32> = c
            .settlements
            .iter()
            .filter(|(_, tx)| chain.contains_tx(tx) || live.contains(&Transaction::note_id(tx, 0)))
            .map(|(s, _)| *s)
            .collect();
        let local = c.local.expect("local");
        let n_shares = c.shares.len();
        let node = self.ifaces.get_mut(&i).expect("iface");
        let plan = node.enclave.terminate_campaign(local, n_shares, &|s| settled.contains(&s)).expect("campaign");
        let camp = node.enclave.campaign_mut(local).expect("campaign");
        for r in camp.records.iter_mut() {
            if let Some(tx) = self.campaigns[ci as usize].settlements.get(&r.slot_id) {
                if settled.contains(&r.slot_id) {
                    let _ = r.set_reward(*tx);
                }
            }
        }
        let dead = node.dead.clone();
        let refund_to = camp.spec.renter_refund_address;
        self.log(Endpoint::Interface(i), "terminate", format_args!("c{ci} settled={}", settled.len()));
        for sc in &plan {
            let sh = &self.campaigns[ci as usize].shares[sc.share as usize];
            let (p, addr) = (sh.enclave, sh.key_addr);
            if sh.dead || dead.contains(&Endpoint::PaymentEnclave(p)) {
                let Some(head) = self.live_head(addr) else {
                    self.log(Endpoint::Interface(i), "recover", format_args!("c{ci}p{} nothing-anchored", sc.share));
                    continue;
                };
                match recover_share(
                    &mut self.mesh,
                    Endpoint::Interface(i),
                    Endpoint::PaymentEnclave(p),
                    ci,
                    sc.share,
                    true,
                    &head,
                    sc.burn,
                    refund_to,
                ) {
                    Ok(tx) => {
                        self.log(
                            Endpoint::Interface(i),
                            "recover",
                            format_args!("c{ci}p{} tx={} burn={}", sc.share, tx.tx_id.short(), sc.burn.0),
                        );
                        let c = &mut self.campaigns[ci as usize];
                        c.closes.push((sc.share, tx.tx_id, sc.burn));
                        c.shares[sc.share as usize].closed = true;
                        self.send(
                            Endpoint::Interface(i),
                            Endpoint::Ledger,
                            MsgKind::HostBroadcast,
                            share_tags(ci, sc.share),
                            Payload::Tx(tx),
                            false,
                            false,
                        );
                    }
                    Err(e) => {
                        self.log(Endpoint::Interface(i), "recover", format_args!("c{ci}p{} failed {e}", sc.share))
                    }
                }
            } else {
                self.send(
                    Endpoint::Interface(i),
                    Endpoint::PaymentEnclave(p),
                    MsgKind::CloseShare,
                    share_tags(ci, sc.share),
                    Payload::Close { burn: sc.burn },
                    true,
                    false,
                );
            }
        }
        let c = &mut self.campaigns[ci as usize];
        c.plan = plan;
        c.phase = Phase::Done;
        let _ = now;
    }

    fn on_close(&mut self, p: u32, ci: u32, share: u32, burn: Amount) {
        let live = self.ledger.live_notes();
        let n = self.payment_nodes.get_mut(&p).expect("payment node");
        let Some(h) = n.holdings.get_mut(&ci) else { return };
        if h.closed {
            return;
        }
        let src = Endpoint::PaymentEnclave(p);
        let Some(head) = h.share.anchored_head(&live) else {
            // fully spent, or the split never landed
            h.closed = true;
            self.log(src, "close", format_args!("c{ci}p{share} nothing-anchored"));
            self.mark_closed(ci, share);
            return;
        };
        let tx = h.share.close(&head, burn, h.addrs.renter_refund);
        h.closed = true;
        self.log(src, "close", format_args!("c{ci}p{share} tx={} burn={}", tx.tx_id.short(), burn.0));
        self.campaigns[ci as usize].closes.push((share, tx.tx_id, burn));
        self.mark_closed(ci, share);
        let t = share_tags(ci, share);
        self.send(src, Endpoint::Ledger, MsgKind::HostBroadcast, t, Payload::Tx(tx.clone()), false, false);
        self.send(src, Endpoint::Renter(0), MsgKind::DepositReturnCopy, t, Payload::Tx(tx), false, false);
    }

    fn mark_closed(&mut self, ci: u32, share: u32) {
        let c = &mut self.campaigns[ci as usize];
        if let Some(sh) = c.shares.get_mut(share as usize) {
            sh.closed = true;
        }
        if c.phase == Phase::Recovering && c.shares.iter().all(|s| s.closed) {
            c.phase = Phase::Recovered;
            self.log(Endpoint::Clock, "recovery-end", format_args!("c{ci} recovered"));
        }
    }

    fn on_heartbeat(&mut self, e: Endpoint) {
        let now = self.now();
        match e {
            Endpoint::ServiceEnclave(s) => {
                let i = self.service_nodes[&s].iface;
                self.send(
                    e,
                    Endpoint::Interface(i),
                    MsgKind::Heartbeat,
                    MsgTags::default(),
                    Payload::Heartbeat,
                    false,
                    false,
                );
            }
            Endpoint::PaymentEnclave(p) => {
                let n = &self.payment_nodes[&p];
                let i = n.iface;
                self.send(
                    e,
                    Endpoint::Interface(i),
                    MsgKind::Heartbeat,
                    MsgTags::default(),
                    Payload::Heartbeat,
                    false,
                    false,
                );
                let distributed = self.cfg.topology.mode == Mode::Distributed;
                let n = &self.payment_nodes[&p];
                if distributed && !n.recovery_sent && observed_dead(n.iface_seen, now, self.window) {
                    let open: Vec<(u32, u32)> =
                        n.holdings.iter().filter(|(_, h)| !h.closed).map(|(ci, h)| (*ci, h.share.share_id)).collect();
                    let backup = self.topology.as_ref().and_then(|t| t.neighbors(i).into_iter().find(|b| *b != i));
                    if let (false, Some(b)) = (open.is_empty(), backup) {
                        self.payment_nodes.get_mut(&p).expect("node").recovery_sent = true;
                        for (ci, idx) in open {
                            self.log(e, "recovery-notice", format_args!("c{ci}p{idx} backup=interface:{b}"));
                            self.send(
                                e,
                                Endpoint::Interface(b),
                                MsgKind::RecoveryNotice,
                                share_tags(ci, idx),
                                Payload::Recovery,
                                true,
                                false,
                            );
                        }
                    }
                }
            }
            Endpoint::Interface(i) => {
                let pays = self.ifaces[&i].payments.clone();
                for p in pays {
                    self.send(
                        e,
                        Endpoint::PaymentEnclave(p),
                        MsgKind::Heartbeat,
                        MsgTags::default(),
                        Payload::Heartbeat,
                        false,
                        false,
                    );
                }
            }
            _ => return,
        }
        if self.active() {
            self.net.schedule_timer(self.heartbeat, e, Timer::Heartbeat);
        }
    }

    fn on_liveness(&mut self, i: u32) {
        let now = self.now();
        let node = &self.ifaces[&i];
        let eps: Vec<Endpoint> = node
            .services
            .iter()
            .map(|s| Endpoint::ServiceEnclave(*s))
            .chain(node.payments.iter().map(|p| Endpoint::PaymentEnclave(*p)))
            .filter(|e| !node.dead.contains(e) && observed_dead(node.seen.get(e).copied(), now, self.window))
            .collect();
        for e in eps {
            self.ifaces.get_mut(&i).expect("iface").dead.insert(e);
            self.log(Endpoint::Interface(i), "observed-dead", format_args!("{e}"));
            self.on_enclave_dead(i, e);
        }
        if self.active() {
            self.net.schedule_timer(self.heartbeat, Endpoint::Interface(i), Timer::Liveness);
        }
    }

    fn on_enclave_dead(&mut self, i: u32, e: Endpoint) {
        let now = self.now();
        for ci in 0..self.campaigns.len() as u32 {
            let c = &mut self.campaigns[ci as usize];
            if c.iface != i || c.phase.terminal() {
                continue;
            }
            match e {
                Endpoint::PaymentEnclave(p) => {
                    for sh in c.shares.iter_mut().filter(|s| s.enclave == p) {
                        sh.dead = true;
                        sh.reported = true;
                    }
                    self.maybe_settling(ci);
                }
                Endpoint::ServiceEnclave(s) if c.phase == Phase::Running => {
                    let slots: Vec<u32> = c.service_of_slot.iter().filter(|(_, v)| **v == s).map(|(k, _)| *k).collect();
                    let local = c.local.expect("local");
                    let camp = self.ifaces.get_mut(&i).expect("iface").enclave.campaign_mut(local).expect("campaign");
                    let mut lines = Vec::new();
                    for slot in slots {
                        let r = &mut camp.records[slot as usize];
                        if !r.status.is_final() {
                            let _ = r.transition(SlotStatus::Timeout, now);
                            lines.push(format!(
                                "c{ci}s{slot} owner={} status=timeout",
                                r.owner_id.map_or("-".into(), |o| o.to_string())
                            ));
                        }
                    }
                    for l in lines {
                        self.log(Endpoint::Interface(i), "slot", l);
                    }
                    self.check_all_final(ci);
                }
                _ => {}
            }
        }
    }

    fn on_poll(&mut self, o: u32) {
        let now = self.now();
        let st = &self.owners[o as usize];
        if st.polls && st.actor.proxy.alive {
            let address = st.actor.proxy.address.clone();
            let targets: Vec<u32> = st.enrolled_at.iter().copied().collect();
            for i in targets {
                let t = MsgTags { owner: Some(o), ..MsgTags::default() };
                self.send(
                    Endpoint::Owner(o),
                    Endpoint::Interface(i),
                    MsgKind::Poll,
                    t,
                    Payload::Poll { address: address.clone() },
                    false,
                    false,
                );
            }
            let st = &self.owners[o as usize];
            let stale = SimDuration(self.params.poll_interval.0 * 2);
            if self.cfg.topology.mode == Mode::Distributed && now.since(st.last_ack) > stale {
                let home = st.home.unwrap_or(0);
                let n = self.cfg.topology.interfaces;
                let alt = (1..n).map(|d| (home + d) % n).find(|j| !self.net.is_dead(Endpoint::Interface(*j)));
                if let Some(j) = alt {
                    self.log(
                        Endpoint::Owner(o),
                        "re-enroll",
                        format_args!("o{o} from=interface:{home} to=interface:{j}"),
                    );
                    let st = &mut self.owners[o as usize];
                    st.home = None;
                    st.enrolled_at.clear();
                    if !self.enroll(o, j) {
                        self.owners[o as usize].home = Some(home);
                    }
                }
            }
        }
        if self.active() {
            self.net.schedule_timer(SimDuration(self.params.poll_interval.0 / 2), Endpoint::Owner(o), Timer::Poll);
        }
    }

    fn on_gossip(&mut self) {
        let (Some(t), Some(state)) = (&self.topology, &self.gossip) else { return };
        let (next, stats) = gossip_round(t, state);
        self.gossip_report.rounds += 1;
        self.gossip_report.messages += stats.messages as u64;
        self.gossip_report.records_sent += stats.records_sent as u64;
        let round = self.gossip_report.rounds;
        self.log(
            Endpoint::Clock,
            "gossip",
            format_args!("round={round} messages={} learned={}", stats.messages, stats.newly_learned),
        );
        let known = next.known.clone();
        self.gossip = Some(next);
        for (n, owners) in known {
            if self.net.is_dead(Endpoint::Interface(n)) {
                continue;
            }
            for o in owners {
                let Some(home) = self.owners[o as usize].home else { continue };
                if home == n {
                    continue;
                }
                let Some(rec) = self.ifaces.get(&home).and_then(|h| h.enclave.owner(o)).cloned() else { continue };
                if let Some(node) = self.ifaces.get_mut(&n) {
                    node.enclave.import_owner(rec);
                }
            }
        }
        if self.active() {
            self.net.schedule_timer(secs(self.cfg.topology.gossip_round_secs), Endpoint::Clock, Timer::Gossip);
        }
    }

    fn p2p_flood(&mut self, ci: u32) {
        let now = self.now();
        let mut p2p = self.p2p.take().expect("p2p network");
        let c = &self.campaigns[ci as usize];
        let entry = c.iface;
        let slots = c.quote.map_or(0, |q| q.slots);
        let mut next = 0u32;
        let mut finish_at = now;
        let r = p2p.p2p_broadcast_campaign(entry, ci, slots, &mut |node, owner| {
            self.p2p_execute(ci, node, owner, &mut next, &mut finish_at)
        });
        self.p2p = Some(p2p);
        match r {
            Ok(f) => {
                self.p2p_report.reached += f.reached as u32;
                self.p2p_report.flood_messages += f.flood_messages as u32;
                self.p2p_report.duplicates_dropped += f.duplicates_dropped as u32;
                self.log(
                    Endpoint::Interface(entry),
                    "flood",
                    format_args!("c{ci} reached={} executed={}", f.reached, f.executed.len()),
                );
            }
            Err(e) => self.log(Endpoint::Interface(entry), "flood", format_args!("c{ci} {e}")),
        }
        let local = self.campaigns[ci as usize].local.expect("local");
        let camp = self.ifaces.get_mut(&entry).expect("iface").enclave.campaign_mut(local).expect("campaign");
        for r in camp.records.iter_mut().filter(|r| r.status == SlotStatus::Pending) {
            let _ = r.finish_skipped(SlotStatus::SkippedUnreachable, now);
        }
        self.campaigns[ci as usize].dispatched_at = Some(now);
        self.net.schedule_timer(finish_at.since(now), Endpoint::Interface(entry), Timer::P2pDone(ci));
    }

    /// One node runs one slot locally: gate, direct action, verification.
    fn p2p_execute(&mut self, ci: u32, node: u32, owner: u32, next: &mut u32, finish_at: &mut SimTime) -> bool {
        let now = self.now();
        let c = &self.campaigns[ci as usize];
        let (entry, local, ctx) = (c.iface, c.local.expect("local"), c.ctx.clone().expect("ctx"));
        let camp = self.ifaces.get_mut(&entry).expect("iface").enclave.campaign_mut(local).expect("campaign");
        if *next >= camp.quote.slots {
            return false;
        }
        let Some(cd) = camp.candidates.iter().find(|c| c.owner_id == owner).cloned() else { return false };
        if !camp.used_owners.insert(owner) {
            return false;
        }
        let from = ctx.renter_view.first().map_or(0, |h| h.height);
        let headers = self.owner_headers(owner, ci, from);
        let bits = self.cfg.ledger.difficulty_bits;
        let gate = gate_owner_chain(Some(&headers), &ctx.renter_view, bits);
        if gate != GateOutcome::Pass {
            self.log(Endpoint::Owner(owner), "gate", format_args!("c{ci} o{owner} node={node} inconsistent"));
            return false;
        }
        let source = self.owners[owner as usize].actor.proxy.address.clone();
        let (res, drawn) = perform_action(
            &mut self.services[ctx.service as usize],
            &cd.credential.account_credential(),
            &ctx.action,
            &source,
            ctx.link.clone(),
            &self.lat,
            &mut self.net.rng,
        );
        let took: SimDuration = drawn.into_iter().sum();
        let conf = match res {
            Ok(c) => c,
            Err(e) => {
                self.log(Endpoint::Owner(owner), "action-failed", format_args!("c{ci} o{owner} {e}"));
                return false;
            }
        };
        let verified = match verify_external(
            &self.services[ctx.service as usize],
            &ctx.action,
            &conf.account,
            ctx.link.as_deref(),
        ) {
            Ok(v) => Some(v),
            Err(VerifyError::NotObservable(_)) => None,
            Err(VerifyError::Service(_)) => Some(false),
        };
        if verified == Some(false) {
            self.log(Endpoint::Owner(owner), "verify", format_args!("c{ci} o{owner} no-effect"));
            return false;
        }
        let slot = *next;
        *next += 1;
        let done = now + took;
        *finish_at = (*finish_at).max(done);
        let camp = self.ifaces.get_mut(&entry).expect("iface").enclave.campaign_mut(local).expect("campaign");
        let r = &mut camp.records[slot as usize];
        r.owner_id = Some(owner);
        r.price = Some(cd.price);
        r.assigned_at = Some(now);
        r.unverified = verified.is_none();
        r.action_latency = took;
        r.gate = Some(GateEvidence { owner_view: headers, consistent: true });
        let _ = r.transition(SlotStatus::Performed, done);
        let _ = r.transition(SlotStatus::Confirmed, done);
        self.campaigns[ci as usize].service_of_slot.insert(slot, node);
        self.log(
            Endpoint::Owner(owner),
            "slot",
            format_args!("c{ci}s{slot} owner={owner} status=confirmed node={node}"),
        );
        true
    }

    fn on_directive(&mut self, idx: usize) {
        let d = self.cfg.adversary[idx].clone();
        let by = parse_actor(&d.by).expect("validated");
        let scope = parse_scope(&d.scope).expect("validated");
        let cut = d.cut.and_then(CutPoint::new);
        let target = d.target.as_deref().and_then(Endpoint::parse);
        let desc = format!("{:?}", d.action).to_lowercase();
        match d.action {
            DirectiveKind::Cut => {
                self.net.controls.set_cut(by, cut.expect("validated"), scope);
            }
            DirectiveKind::ClearCut => {
                self.net.controls.clear_cut(cut.expect("validated"), scope);
            }
            DirectiveKind::DropBroadcast => {
                self.net.controls.drop_kind(by, MsgKind::HostBroadcast, scope);
            }
            DirectiveKind::Delay => {
                let extra = secs(d.delay_secs.unwrap_or(0.0));
                self.net.controls.delay_kind(by, cut.expect("validated").kind(), scope, extra);
                self.delay_actors.push(by);
            }
            DirectiveKind::Kill => {
                let e = target.expect("validated");
                self.net.kill(e, by);
                if let Endpoint::Interface(i) = e {
                    self.on_interface_killed(i);
                }
            }
            DirectiveKind::Revive => {
                let e = target.expect("validated");
                self.net.controls.revive(e);
                match e {
                    Endpoint::ServiceEnclave(_) | Endpoint::PaymentEnclave(_) => {
                        self.net.schedule_timer(SimDuration::ZERO, e, Timer::Heartbeat)
                    }
                    Endpoint::Interface(_) => self.net.schedule_timer(self.heartbeat, e, Timer::Liveness),
                    _ => {}
                }
            }
            DirectiveKind::Eclipse => self.net.controls.eclipse(d.owner.expect("validated"), by),
            DirectiveKind::KillProxy => {
                self.owners[d.owner.expect("validated") as usize].actor.proxy.alive = false;
            }
            DirectiveKind::ChangeProxyAddress => {
                let o = d.owner.expect("validated");
                self.owners[o as usize].actor.change_address(d.address.clone().unwrap_or_default());
            }
            DirectiveKind::BlockHandshake => self.net.controls.block_handshake(target.expect("validated"), by),
        }
        let extra = [
            cut.map(|c| format!(" cut={}", c.id())),
            target.map(|t| format!(" target={t}")),
            d.owner.map(|o| format!(" o{o}")),
        ]
        .into_iter()
        .flatten()
        .collect::<String>();
        self.log(Endpoint::Clock, "directive", format_args!("{desc} scope={} by={by}{extra}", d.scope));
    }

    fn on_interface_killed(&mut self, i: u32) {
        let distributed = self.cfg.topology.mode == Mode::Distributed;
        let deadline = SimDuration(self.window.0 * 20);
        for ci in 0..self.campaigns.len() as u32 {
            let c = &mut self.campaigns[ci as usize];
            if c.iface != i || !matches!(c.phase, Phase::Running | Phase::Paying | Phase::Settling) {
                continue;
            }
            if distributed && !c.shares.is_empty() {
                c.phase = Phase::Recovering;
                self.net.schedule_timer(deadline, Endpoint::Clock, Timer::RecoveryDeadline(ci));
            } else {
                c.phase = Phase::Orphaned;
            }
            let label = format!("{:?}", self.campaigns[ci as usize].phase).to_lowercase();
            self.log(Endpoint::Clock, "campaign-state", format_args!("c{ci} {label}"));
        }
    }

    fn in_effect(&self, o: u32, cc: &super::config::CampaignConfig) -> bool {
        let st = &self.owners[o as usize];
        match &self.services[cc.service.id() as usize] {
            TargetService::Social(s) => s
                .visible_effect(&cc.target, self.links.get(&cc.target).map(String::as_str), cc.action, &st.account)
                .unwrap_or(false),
            TargetService::Voting(v) => v.counted_choice(&st.account) == Some(cc.target.as_str()),
        }
    }

    fn finish(mut self) -> RunOutput {
        let report = self.build_report();
        let chain_dump = self.ledger.chain().dump();
        let state = self.state_dump();
        let event_log = self.net.log.render();
        RunOutput { report, event_log, chain_dump, state }
    }

    fn killer(&self, e: Endpoint) -> Option<String> {
        self.net.controls.killed().get(&e).map(|(_, by)| by.to_string())
    }

    fn build_report(&mut self) -> ScenarioReport {
        let chain = self.ledger.chain();
        let balances = chain.balances();
        let bal = |a: &Address| balances.get(a).map_or(0, |x| x.0 as i64);
        let renter_addr = self.renter_key.address();
        let issuance = Amount::from_coins_f64(self.cfg.ledger.renter_funds).unwrap_or(Amount::ZERO).0 as i64;
        let mut parties: BTreeSet<Address> = BTreeSet::new();
        parties.insert(renter_addr);
        parties.insert(self.maintainer);
        let mut owner_deltas = BTreeMap::new();
        for (o, st) in self.owners.iter().enumerate() {
            let a = st.actor.payout_address();
            parties.insert(a);
            owner_deltas.insert(o as u32, bal(&a));
        }
        let held: i64 = chain
            .unspent_notes()
            .filter(|n| !parties.contains(&n.owner) && chain.output_kind(&n.note_id) != Some(OutputKind::Burn))
            .map(|n| n.value.0 as i64)
            .sum();
        let burned = chain.burned_total().0;
        let deltas = CoinDeltas {
            renter: bal(&renter_addr) - issuance,
            owners: owner_deltas,
            maintainer: bal(&self.maintainer),
            held,
        };
        let fees_collected: u64 = chain
            .blocks()
            .iter()
            .flat_map(|b| b.txs.iter())
            .flat_map(|t| t.outputs.iter())
            .filter(|o| o.kind == OutputKind::Fee && o.owner == self.maintainer)
            .map(|o| o.value.0)
            .sum();

        let mut campaigns = Vec::new();
        let mut exposure = BTreeMap::new();
        for (ci, c) in self.campaigns.iter().enumerate() {
            let ci = ci as u32;
            let cc = &self.cfg.campaigns[ci as usize];
            let funded = c.funding.as_ref().is_some_and(|t| chain.contains_tx(&t.tx_id));
            let camp = c.local.and_then(|l| self.ifaces.get(&c.iface).and_then(|n| n.enclave.campaign(l)));
            let closed_on_chain: BTreeMap<u32, Amount> =
                c.closes.iter().filter(|(_, tx, _)| chain.contains_tx(tx)).map(|(s, _, b)| (*s, *b)).collect();
            let share_causes = |share: u32| -> BTreeSet<String> {
                let mut out = BTreeSet::new();
                for d in self.net.drops() {
                    let t = d.meta.tags;
                    if t.campaign == Some(ci) && t.slot.is_none() && t.share == Some(share) {
                        out.insert(d.by.to_string());
                    }
                }
                if let Some(sh) = c.shares.get(share as usize) {
                    out.extend(self.killer(Endpoint::PaymentEnclave(sh.enclave)));
                }
                out.extend(self.killer(Endpoint::Interface(c.iface)));
                out
            };
            let mut slots = Vec::new();
            let mut deposit_returned = 0;
            let mut deposit_refunded = 0;
            if let Some(camp) = camp {
                for r in &camp.records {
                    let slot = r.slot_id;
                    let share = camp.share_of_slot.get(&slot).copied().unwrap_or(0);
                    let settled = c.settlements.get(&slot).is_some_and(|tx| chain.contains_tx(tx));
                    let deposit_share = camp.deposit_share(slot).0;
                    let price = c.charges.get(&slot).map(|ch| ch.reward).or(r.price).unwrap_or(Amount::ZERO);
                    let fee = price.scale_ppm(self.params.fee_ppm);
                    let applied = matches!(
                        r.status,
                        SlotStatus::Performed | SlotStatus::Confirmed | SlotStatus::Timeout | SlotStatus::Reverted
                    );
                    let in_effect = applied && r.owner_id.is_some_and(|o| self.in_effect(o, cc));
                    let ghost = r.owner_id.is_some_and(|o| self.owners[o as usize].ghost);
                    let fate = if settled {
                        deposit_returned += deposit_share;
                        SlotFate::Returned
                    } else if closed_on_chain.contains_key(&share) {
                        let backup = c.backup_closed.contains(&share);
                        match deposit_fate(r.status, false) {
                            DepositFate::Burned if !backup => SlotFate::Burned,
                            _ => {
                                deposit_refunded += deposit_share;
                                SlotFate::Refunded
                            }
                        }
                    } else if c.refund_tx.is_some_and(|t| chain.contains_tx(&t)) {
                        deposit_refunded += deposit_share;
                        SlotFate::Refunded
                    } else {
                        SlotFate::Stranded
                    };
                    let mut causes = BTreeSet::new();
                    if !settled {
                        if !funded {
                            causes.insert("renter:0".to_string());
                        }
                        for d in self.net.drops() {
                            let t = d.meta.tags;
                            if t.campaign != Some(ci) {
                                continue;
                            }
                            let slot_hit = t.slot == Some(slot) && (t.owner.is_none() || t.owner == r.owner_id);
                            if slot_hit {
                                causes.insert(d.by.to_string());
                            }
                        }
                        causes.extend(share_causes(share));
                        if let Some(s) = c.service_of_slot.get(&slot) {
                            causes.extend(self.killer(Endpoint::ServiceEnclave(*s)));
                        }
                        if let Some(o) = r.owner_id {
                            causes.extend(self.net.controls.eclipsed_by(o).map(|a| a.to_string()));
                        }
                        if r.status == SlotStatus::Timeout {
                            causes.extend(self.delay_actors.iter().map(|a| a.to_string()));
                        }
                    }
                    let mut no_effect = BTreeSet::new();
                    if r.status == SlotStatus::Confirmed && !in_effect {
                        if let Some(o) = r.owner_id {
                            if self.owners[o as usize].ghost {
                                no_effect.insert(Actor::Service(cc.service.id()).to_string());
                            }
                            if self.owners[o as usize].actor.profile == OwnerProfile::RevertsActions {
                                no_effect.insert(format!("owner:{o}"));
                            }
                        }
                    }
                    slots.push(SlotReport {
                        slot,
                        owner: r.owner_id,
                        status: r.status,
                        skips: r.skips.iter().map(|s| (s.owner_id, s.status)).collect(),
                        settled,
                        reward_tx: c.settlements.get(&slot).filter(|_| settled).map(|t| t.to_hex()),
                        reward: price.0,
                        fee: fee.0,
                        deposit_share,
                        fate,
                        in_effect,
                        unverified: r.unverified,
                        ghost,
                        causes: causes.into_iter().collect(),
                        no_effect_causes: no_effect.into_iter().collect(),
                    });
                }
                if cc.service == super::config::ServiceName::Social && self.links.contains_key(&cc.target) {
                    let exposed = self.services[0].exposed_accounts(&cc.target);
                    let owners: Vec<u32> = self
                        .owners
                        .iter()
                        .enumerate()
                        .filter(|(_, st)| exposed.contains(&st.account))
                        .map(|(o, _)| o as u32)
                        .collect();
                    exposure.insert(ci, owners);
                }
            }
            let deposit_burned: u64 = closed_on_chain
                .iter()
                .filter(|(s, _)| !c.backup_closed.contains(s))
                .map(|(s, b)| {
                    let tx = c.closes.iter().find(|(x, _, _)| x == s).map(|(_, t, _)| *t);
                    tx.and_then(|t| chain.find_tx(&t)).map_or(b.0, |t| {
                        t.outputs.iter().filter(|o| o.kind == OutputKind::Burn).map(|o| o.value.0).sum()
                    })
                })
                .sum();
            let mut stranded = 0;
            if funded {
                let mut addrs: Vec<Address> = c.shares.iter().map(|s| s.key_addr).collect();
                addrs.extend(c.escrow);
                for a in addrs {
                    stranded += chain.unspent_at(&a).iter().map(|n| n.value.0).sum::<u64>();
                }
            }
            let mut stranded_causes = BTreeSet::new();
            if stranded > 0 {
                for d in self.net.drops() {
                    if d.meta.tags.campaign == Some(ci) && d.meta.tags.slot.is_none() {
                        stranded_causes.insert(d.by.to_string());
                    }
                }
                stranded_causes.extend(self.killer(Endpoint::Interface(c.iface)));
                for sh in &c.shares {
                    stranded_causes.extend(self.killer(Endpoint::PaymentEnclave(sh.enclave)));
                }
            }
            let phase_secs = |a: Option<SimTime>, b: Option<SimTime>| match (a, b) {
                (Some(a), Some(b)) => b.since(a).as_secs_f64(),
                _ => 0.0,
            };
            let last_outcome = camp.and_then(|k| k.records.iter().filter_map(|r| r.finalized_at).max());
            campaigns.push(CampaignReport {
                campaign: ci,
                interface: c.iface,
                service: cc.service.id(),
                action: cc.action.as_str().to_string(),
                target: cc.target.clone(),
                requested: cc.count,
                state: c.phase.label().to_string(),
                error: c.error.clone(),
                quote: c.quote,
                funded_on_chain: funded,
                stranded,
                stranded_causes: stranded_causes.into_iter().collect(),
                slots,
                deposit_returned,
                deposit_burned,
                deposit_refunded,
                service_phase_secs: phase_secs(c.dispatched_at, last_outcome.max(c.service_done_at.filter(|_| false))),
                payment_phase_secs: phase_secs(c.first_charge_at, c.last_settle_at),
                settlement_txs: c.settlements.values().filter(|t| chain.contains_tx(t)).map(|t| t.to_hex()).collect(),
                close_txs: closed_on_chain
                    .keys()
                    .filter_map(|s| c.closes.iter().find(|(x, _, _)| x == s))
                    .map(|(_, t, _)| t.to_hex())
                    .collect(),
            });
        }

        let owners: Vec<OwnerReport> = self
            .owners
            .iter()
            .enumerate()
            .map(|(o, st)| OwnerReport {
                owner: o as u32,
                enrolled: !st.enrolled_at.is_empty(),
                interface: st.home,
                profile: format!("{:?}", st.actor.profile).to_lowercase(),
                ghost: st.ghost,
                note: st.note.clone(),
            })
            .collect();

        let settlements: BTreeMap<TxId, SlotCharge> = self
            .campaigns
            .iter()
            .flat_map(|c| c.settlements.iter().filter_map(|(s, t)| c.charges.get(s).map(|ch| (*t, *ch))))
            .collect();
        let atomic_settlement = chain.blocks().iter().flat_map(|b| b.txs.iter()).all(|t| {
            let has = |k: OutputKind| t.outputs.iter().filter(|o| o.kind == k).map(|o| o.value).sum::<Amount>();
            let (r, d, f) = (has(OutputKind::Reward), has(OutputKind::DepositReturn), has(OutputKind::Fee));
            if r == Amount::ZERO && d == Amount::ZERO && f == Amount::ZERO {
                return true;
            }
            match settlements.get(&t.tx_id) {
                Some(ch) => r == ch.reward && d == ch.deposit_share && f == ch.fee,
                None => false,
            }
        });
        let chain_checks = ChainChecks {
            atomic_settlement,
            secret_leaks: self.net.tainted_deliveries().iter().filter(|(_, s)| s.is_none()).count() as u32,
            registry_genuine: self.mesh.registry_measurements().iter().all(|m| self.mesh.is_genuine(m)),
            height: chain.tip_height(),
            tip: chain.tip().own_digest.to_hex(),
        };

        let gossip = self.gossip.as_ref().map(|g| {
            let mut r = self.gossip_report.clone();
            r.known = self.ifaces.iter().map(|(i, n)| (*i, n.enclave.owners().len() as u32)).collect();
            let _ = g;
            r
        });
        let verdict = verdict(&campaigns, &owners);
        ScenarioReport {
            name: self.cfg.name.clone(),
            seed: self.cfg.seed,
            mode: self.cfg.topology.mode,
            end_time_secs: self.now().as_secs_f64(),
            deltas,
            burned,
            fees_collected,
            campaigns,
            owners,
            exposure,
            p2p: (self.cfg.topology.mode == Mode::P2p).then(|| self.p2p_report.clone()),
            gossip,
            chain: chain_checks,
            verdict,
            event_count: self.net.log.len() as u64,
            event_log_digest: self.net.log.digest().to_hex(),
            report_digest: String::new(),
        }
        .seal()
    }

    fn state_dump(&self) -> serde_json::Value {
        let ifaces: serde_json::Map<String, serde_json::Value> = self
            .ifaces
            .iter()
            .map(|(i, n)| {
                let campaigns: Vec<serde_json::Value> = n
                    .enclave
                    .campaigns()
                    .map(|c| {
                        json!({
                            "campaign_id": c.campaign_id,
                            "status": c.status,
                            "quote": c.quote,
                            "records": c.records.iter().map(|r| json!({
                                "slot": r.slot_id,
                                "owner": r.owner_id,
                                "status": r.status.as_str(),
                                "skips": r.skips.len(),
                                "reward_tx": r.reward_tx_id.map(|t| t.to_hex()),
                            })).collect::<Vec<_>>(),
                        })
                    })
                    .collect();
                (
                    format!("interface:{i}"),
                    json!({
                        "owners": n.enclave.owners().len(),
                        "services": n.services,
                        "payments": n.payments,
                        "observed_dead": n.dead.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
                        "campaigns": campaigns,
                    }),
                )
            })
            .collect();
        let payments: serde_json::Map<String, serde_json::Value> = self
            .payment_nodes
            .iter()
            .map(|(p, n)| {
                let shares: Vec<serde_json::Value> = n
                    .holdings
                    .iter()
                    .map(|(ci, h)| {
                        json!({
                            "campaign": ci,
                            "share": h.share.share_id,
                            "issued": h.share.issued().len(),
                            "head_value": h.share.head_value().0,
                            "closed": h.closed,
                        })
                    })
                    .collect();
                (format!("payment:{p}"), json!({ "interface": n.iface, "shares": shares }))
            })
            .collect();
        json!({
            "services": self.services.iter().map(|s| s.snapshot()).collect::<Vec<_>>(),
            "interfaces": ifaces,
            "payments": payments,
            "mempool": self.ledger.mempool().iter().map(|t| t.tx_id.to_hex()).collect::<Vec<_>>(),
            "rejected": self.ledger.rejected().len(),
        })
    }
}

/// Moves `rec` to `st` through Performed when a direct step is illegal.
fn finalize(rec: &mut ActionRecord, st: SlotStatus, at: SimTime) {
    if rec.status == st {
        return;
    }
    if !rec.status.can_become(st) {
        let _ = rec.transition(SlotStatus::Performed, at);
    }
    let _ = rec.transition(st, at);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline() -> ScenarioConfig {
        ScenarioConfig::from_toml(
            r#"
name = "t"
seed = 3
[[owners]]
count = 3
[[campaigns]]
count = 3
"#,
        )
        .unwrap()
    }

    #[test]
    fn baseline_all_paid() {
        let out = run(&baseline());
        let c = &out.report.campaigns[0];
        assert_eq!(c.state, "done");
        assert!(c.slots.iter().all(|s| s.settled && s.status == SlotStatus::Confirmed), "{}", out.report.render_text());
        assert_eq!(c.deposit_returned, c.quote.unwrap().deposit_required.0);
        assert!(out.report.check_invariants(Some(&out.event_log)).is_empty());
        assert!(out.report.verdict.harmed().is_empty());
    }

    #[test]
    fn same_seed_same_digest() {
        let a = run(&baseline());
        let b = run(&baseline());
        assert_eq!(a.report.report_digest, b.report.report_digest);
        assert_eq!(a.event_log, b.event_log);
    }
}
