//! Service enclaves: the chain-consistency gate, action execution through an
//! owner's proxy, revert-window checks and external verification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{check_consistency, BlockHeader, TxId};
use crate::services::{
    AccountCredential, ActionKind, Confirmation, ExchangeResult, Pipeline, ServiceAction, ServiceError, TargetService,
    PIPELINE_LEN,
};
use crate::simnet::{LatencyDist, SimDuration, SimRng, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotStatus {
    Pending,
    SkippedInconsistent,
    SkippedUnreachable,
    Performed,
    Confirmed,
    Reverted,
    Timeout,
    Failed,
}

impl SlotStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotStatus::Pending => "pending",
            SlotStatus::SkippedInconsistent => "skipped_inconsistent",
            SlotStatus::SkippedUnreachable => "skipped_unreachable",
            SlotStatus::Performed => "performed",
            SlotStatus::Confirmed => "confirmed",
            SlotStatus::Reverted => "reverted",
            SlotStatus::Timeout => "timeout",
            SlotStatus::Failed => "failed",
        }
    }

    pub fn can_become(self, next: SlotStatus) -> bool {
        use SlotStatus::*;
        matches!(
            (self, next),
            (Pending, SkippedInconsistent | SkippedUnreachable | Performed | Timeout | Failed)
                | (Performed, Confirmed | Reverted | Timeout | Failed)
        )
    }

    pub fn is_final(self) -> bool {
        !matches!(self, SlotStatus::Pending | SlotStatus::Performed)
    }

    pub fn is_skip(self) -> bool {
        matches!(self, SlotStatus::SkippedInconsistent | SlotStatus::SkippedUnreachable)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SlotError {
    #[error("slot {slot}: illegal transition {from:?} -> {to:?}")]
    IllegalTransition { slot: u32, from: SlotStatus, to: SlotStatus },
    #[error("reward recorded for slot {0} which is not confirmed")]
    RewardWithoutConfirmation(u32),
}

/// What the gate compared, kept for the gate-soundness audit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateEvidence {
    pub owner_view: Vec<BlockHeader>,
    pub consistent: bool,
}

/// One owner attempt that was skipped before the slot found its final owner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub owner_id: u32,
    pub status: SlotStatus,
    pub at: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub slot_id: u32,
    pub owner_id: Option<u32>,
    pub action: ServiceAction,
    pub status: SlotStatus,
    pub skips: Vec<Skip>,
    pub assigned_at: Option<SimTime>,
    pub performed_at: Option<SimTime>,
    pub finalized_at: Option<SimTime>,
    /// Sum of per-exchange latencies for the attempt that reached the service.
    pub action_latency: SimDuration,
    pub gate: Option<GateEvidence>,
    /// Confirmation accepted without external verification (unobservable action).
    pub unverified: bool,
    pub reward_tx_id: Option<TxId>,
    pub price: Option<crate::ledger::Amount>,
}

impl ActionRecord {
    pub fn new(slot_id: u32, action: ServiceAction) -> Self {
        ActionRecord {
            slot_id,
            owner_id: None,
            action,
            status: SlotStatus::Pending,
            skips: Vec::new(),
            assigned_at: None,
            performed_at: None,
            finalized_at: None,
            action_latency: SimDuration::ZERO,
            gate: None,
            unverified: false,
            reward_tx_id: None,
            price: None,
        }
    }

    pub fn transition(&mut self, to: SlotStatus, at: SimTime) -> Result<(), SlotError> {
        if !self.status.can_become(to) {
            return Err(SlotError::IllegalTransition { slot: self.slot_id, from: self.status, to });
        }
        self.status = to;
        match to {
            SlotStatus::Performed => self.performed_at = Some(at),
            s if s.is_final() => self.finalized_at = Some(at),
            _ => {}
        }
        Ok(())
    }

    /// Records a skipped owner and reopens the slot for substitution.
    pub fn skip(&mut self, status: SlotStatus, at: SimTime) -> Result<(), SlotError> {
        if self.status != SlotStatus::Pending || !status.is_skip() {
            return Err(SlotError::IllegalTransition { slot: self.slot_id, from: self.status, to: status });
        }
        if let Some(owner_id) = self.owner_id.take() {
            self.skips.push(Skip { owner_id, status, at });
        }
        self.gate = None;
        self.price = None;
        Ok(())
    }

    /// Marks the slot skipped for good (no substitute available).
    pub fn finish_skipped(&mut self, status: SlotStatus, at: SimTime) -> Result<(), SlotError> {
        self.transition(status, at)
    }

    pub fn set_reward(&mut self, tx: TxId) -> Result<(), SlotError> {
        if self.status != SlotStatus::Confirmed {
            return Err(SlotError::RewardWithoutConfirmation(self.slot_id));
        }
        self.reward_tx_id = Some(tx);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateOutcome {
    Pass,
    Inconsistent,
    Unreachable,
}

/// Passes iff the owner's view and the renter's view are consistent.
/// `owner_view` is `None` when the proxy never answered.
pub fn gate_owner_chain(
    owner_view: Option<&[BlockHeader]>,
    renter_view: &[BlockHeader],
    difficulty_bits: u32,
) -> GateOutcome {
    match owner_view {
        None => GateOutcome::Unreachable,
        Some(v) => match check_consistency(v, renter_view, difficulty_bits) {
            Ok(true) => GateOutcome::Pass,
            _ => GateOutcome::Inconsistent,
        },
    }
}

/// Per-exchange latencies of the action pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineLatency {
    pub steps: Vec<LatencyDist>,
}

impl PipelineLatency {
    /// Mean/std per exchange from the reference SGX measurements (seconds).
    pub fn reference() -> Self {
        PipelineLatency {
            steps: [(1.202, 0.249), (0.402, 0.128), (0.769, 0.197), (1.560, 0.298), (0.355, 0.329)]
                .into_iter()
                .map(|(m, s)| LatencyDist::secs(m, s))
                .collect(),
        }
    }

    /// The reference means with zero variance.
    pub fn reference_fixed() -> Self {
        PipelineLatency { steps: Self::reference().steps.into_iter().map(|d| LatencyDist::fixed(d.mean)).collect() }
    }

    /// Equal split of `total` over the five exchanges, remainder on the first.
    pub fn uniform(total: SimDuration) -> Self {
        let n = PIPELINE_LEN as u64;
        let base = total.0 / n;
        let mut steps: Vec<LatencyDist> = (0..n).map(|_| LatencyDist::fixed(SimDuration(base))).collect();
        steps[0] = LatencyDist::fixed(SimDuration(base + total.0 % n));
        PipelineLatency { steps }
    }

    pub fn mean_total(&self) -> SimDuration {
        self.steps.iter().map(|d| d.mean).sum()
    }

    pub fn step(&self, i: usize) -> &LatencyDist {
        &self.steps[i.min(self.steps.len() - 1)]
    }
}

/// Response timeout: three times the mean action latency.
pub fn response_timeout(lat: &PipelineLatency) -> SimDuration {
    lat.mean_total().times(3)
}

/// Runs the whole pipeline in one go, returning the confirmation and the
/// latencies drawn for each exchange. Used where no interception is possible
/// (direct P2P execution and unit tests).
pub fn perform_action(
    service: &mut TargetService,
    credential: &AccountCredential,
    action: &ServiceAction,
    source: &str,
    link: Option<String>,
    lat: &PipelineLatency,
    rng: &mut SimRng,
) -> (Result<Confirmation, ServiceError>, Vec<SimDuration>) {
    let mut p = Pipeline::new(credential.clone(), action.clone(), source).with_link(link);
    let mut drawn = Vec::new();
    loop {
        drawn.push(lat.step(p.completed() as usize).sample(rng));
        match service.exchange(&mut p) {
            Ok(ExchangeResult::Continue(_)) => {}
            Ok(ExchangeResult::Done(c)) => return (Ok(c), drawn),
            Err(e) => return (Err(e), drawn),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("{0:?} has no publicly observable effect")]
    NotObservable(ActionKind),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

/// Checks from an independent account that the action's effect is public.
pub fn verify_external(
    service: &TargetService,
    action: &ServiceAction,
    account: &str,
    link: Option<&str>,
) -> Result<bool, VerifyError> {
    if !action.observable() {
        return Err(VerifyError::NotObservable(action.kind));
    }
    match service {
        TargetService::Social(s) => Ok(s.visible_effect(&action.target, link, action.kind, account)?),
        TargetService::Voting(_) => Err(VerifyError::NotObservable(action.kind)),
    }
}

/// Final status of a performed slot once its revert window has elapsed.
/// `still_visible` is the outcome of re-verification; `None` means the
/// action is unobservable and the original confirmation stands.
pub fn await_revert_window(
    rec: &mut ActionRecord,
    still_visible: Option<bool>,
    at: SimTime,
) -> Result<SlotStatus, SlotError> {
    let next = match still_visible {
        Some(false) => SlotStatus::Reverted,
        _ => SlotStatus::Confirmed,
    };
    rec.transition(next, at)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{Chain, ChainParams};
    use crate::services::{SocialService, VotePolicy, VotingService};

    fn chain(n: usize, seed: u64) -> Chain {
        let mut c = Chain::genesis(ChainParams { difficulty_bits: 4 }, seed, &[]);
        for _ in 0..n {
            c.push_block(vec![]).unwrap();
        }
        c
    }

    #[test]
    fn transitions() {
        let mut r = ActionRecord::new(0, ServiceAction::new(ActionKind::Upvote, "p"));
        assert!(r.transition(SlotStatus::Confirmed, SimTime(1)).is_err());
        r.transition(SlotStatus::Performed, SimTime(1)).unwrap();
        assert!(r.set_reward(TxId::ZERO).is_err());
        r.transition(SlotStatus::Confirmed, SimTime(2)).unwrap();
        r.set_reward(TxId::ZERO).unwrap();
        assert!(r.transition(SlotStatus::Reverted, SimTime(3)).is_err());
    }

    #[test]
    fn skip_reopens_slot() {
        let mut r = ActionRecord::new(0, ServiceAction::new(ActionKind::Upvote, "p"));
        r.owner_id = Some(4);
        r.skip(SlotStatus::SkippedInconsistent, SimTime(5)).unwrap();
        assert_eq!(r.status, SlotStatus::Pending);
        assert_eq!(r.owner_id, None);
        assert_eq!(r.skips[0].owner_id, 4);
    }

    #[test]
    fn gate_extension_passes() {
        let honest = chain(6, 1);
        let renter_view = honest.headers()[..5].to_vec();
        let owner_view = honest.headers_from(renter_view[0].height);
        assert_eq!(gate_owner_chain(Some(&owner_view), &renter_view, 4), GateOutcome::Pass);
    }

    #[test]
    fn gate_fork_fails_and_unreachable_reported() {
        let owner_view = chain(5, 1).headers();
        let forged_view = chain(5, 2).headers();
        assert_eq!(gate_owner_chain(Some(&owner_view), &forged_view, 4), GateOutcome::Inconsistent);
        assert_eq!(gate_owner_chain(None, &forged_view, 4), GateOutcome::Unreachable);
    }

    fn social() -> TargetService {
        let mut s = SocialService::new();
        s.register("a", "pw");
        s.register("verifier", "pw");
        s.add_item("post");
        s.set_colluding(true);
        s.create_ghost("g", "pw");
        TargetService::Social(s)
    }

    #[test]
    fn perform_draws_reference_means() {
        let mut svc = social();
        let mut rng = SimRng::new(1);
        let cred = AccountCredential { account: "a".into(), password: "pw".into() };
        let act = ServiceAction::new(ActionKind::Upvote, "post");
        let (res, drawn) =
            perform_action(&mut svc, &cred, &act, "owner:0", None, &PipelineLatency::reference_fixed(), &mut rng);
        assert!(res.is_ok());
        assert_eq!(drawn.len(), 5);
        assert_eq!(drawn.iter().copied().sum::<SimDuration>(), SimDuration::from_millis(4288));
        assert!(verify_external(&svc, &act, "a", None).unwrap());
    }

    #[test]
    fn ghost_confirmation_fails_external_check() {
        let mut svc = social();
        let mut rng = SimRng::new(1);
        let cred = AccountCredential { account: "g".into(), password: "pw".into() };
        let act = ServiceAction::new(ActionKind::Upvote, "post");
        let (res, _) =
            perform_action(&mut svc, &cred, &act, "owner:0", None, &PipelineLatency::reference_fixed(), &mut rng);
        assert!(res.is_ok());
        assert!(!verify_external(&svc, &act, "g", None).unwrap());
    }

    #[test]
    fn votes_are_not_observable() {
        let mut v = VotingService::new(VotePolicy::FirstCounts, ["x".to_string()]);
        v.register("a", "pw");
        let svc = TargetService::Voting(v);
        let act = ServiceAction::new(ActionKind::Vote, "x");
        assert_eq!(verify_external(&svc, &act, "a", None), Err(VerifyError::NotObservable(ActionKind::Vote)));
    }

    #[test]
    fn revert_window_outcomes() {
        let mk = || {
            let mut r = ActionRecord::new(0, ServiceAction::new(ActionKind::Upvote, "p"));
            r.transition(SlotStatus::Performed, SimTime(1)).unwrap();
            r
        };
        assert_eq!(await_revert_window(&mut mk(), Some(false), SimTime(9)).unwrap(), SlotStatus::Reverted);
        assert_eq!(await_revert_window(&mut mk(), Some(true), SimTime(9)).unwrap(), SlotStatus::Confirmed);
        assert_eq!(await_revert_window(&mut mk(), None, SimTime(9)).unwrap(), SlotStatus::Confirmed);
    }

    #[test]
    fn timeout_is_three_means() {
        assert_eq!(response_timeout(&PipelineLatency::reference()), SimDuration::from_millis(3 * 4288));
        assert_eq!(PipelineLatency::uniform(SimDuration(12)).mean_total(), SimDuration(12));
    }
}
