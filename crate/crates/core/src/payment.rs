//! Payment enclaves: fund shares, chained settlement transactions and crash
//! recovery of a dead enclave's share.
//!
//! Every settlement spends the share's current head and creates, in one
//! transaction, the owner's reward, the renter's deposit share, the
//! maintainer's fee and the change that becomes the next head.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attest::{Mesh, MeshError};
use crate::ledger::{Address, Amount, Note, NoteId, OutputKind, SpendKey, Transaction, TxId, TxOutput};
use crate::simnet::Endpoint;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PaymentError {
    #[error("no payment enclaves")]
    NoPaymentEnclaves,
    #[error("share {share} holds {have}, slot needs {need}")]
    InsufficientShare { share: u32, need: Amount, have: Amount },
    #[error("share {0} is exhausted")]
    Exhausted(u32),
    #[error("funding note does not cover the split ({have} < {need})")]
    Underfunded { need: Amount, have: Amount },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Splits `total` into `p` parts that differ by at most one base unit; the
/// lowest indices take the remainder.
pub fn split_even(total: Amount, p: usize) -> Vec<Amount> {
    if p == 0 {
        return Vec::new();
    }
    let base = total.0 / p as u64;
    let rem = (total.0 % p as u64) as usize;
    (0..p).map(|i| Amount(base + u64::from(i < rem))).collect()
}

/// Splits `total` proportionally to `weights` (rounded down), then hands the
/// leftover units out one each from the lowest index with nonzero weight.
pub fn split_weighted(total: Amount, weights: &[u64]) -> Vec<Amount> {
    let wsum: u128 = weights.iter().map(|&w| w as u128).sum();
    if wsum == 0 {
        return split_even(total, weights.len());
    }
    let mut parts: Vec<u64> = weights.iter().map(|&w| (total.0 as u128 * w as u128 / wsum) as u64).collect();
    let mut left = total.0 - parts.iter().sum::<u64>();
    let nonzero: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0).collect();
    let mut i = 0;
    while left > 0 {
        parts[nonzero[i % nonzero.len()]] += 1;
        left -= 1;
        i += 1;
    }
    parts.into_iter().map(Amount).collect()
}

/// What one settled slot costs its share.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotCharge {
    pub slot: u32,
    pub owner: u32,
    pub reward: Amount,
    pub deposit_share: Amount,
    pub fee: Amount,
    pub payout: Address,
}

impl SlotCharge {
    pub fn total(&self) -> Amount {
        self.reward + self.deposit_share + self.fee
    }
}

/// Where non-owner settlement outputs go.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SettlementAddrs {
    pub renter_refund: Address,
    pub maintainer: Address,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FundShare {
    pub share_id: u32,
    pub campaign_id: u32,
    pub enclave: Endpoint,
    key: SpendKey,
    head: Option<Note>,
    /// Every head this share has had, oldest first.
    history: Vec<Note>,
    /// `(slot, tx)` for each settlement issued.
    issued: Vec<(u32, TxId)>,
    /// Slots this share is scheduled to pay.
    pub schedule: BTreeSet<u32>,
}

impl FundShare {
    pub fn new(share_id: u32, campaign_id: u32, enclave: Endpoint, key: SpendKey, head: Note) -> Self {
        FundShare {
            share_id,
            campaign_id,
            enclave,
            key,
            head: Some(head),
            history: vec![head],
            issued: Vec::new(),
            schedule: BTreeSet::new(),
        }
    }

    pub fn head(&self) -> Option<&Note> {
        self.head.as_ref()
    }

    pub fn head_value(&self) -> Amount {
        self.head.map_or(Amount::ZERO, |n| n.value)
    }

    pub fn key_address(&self) -> Address {
        self.key.address()
    }

    pub fn issued(&self) -> &[(u32, TxId)] {
        &self.issued
    }

    pub fn history(&self) -> &[Note] {
        &self.history
    }

    /// Builds the next settlement in the chain and advances the head.
    pub fn issue_reward(&mut self, charge: &SlotCharge, addrs: &SettlementAddrs) -> Result<Transaction, PaymentError> {
        let head = self.head.ok_or(PaymentError::Exhausted(self.share_id))?;
        let need = charge.total();
        let change = head.value.checked_sub(need).ok_or(PaymentError::InsufficientShare {
            share: self.share_id,
            need,
            have: head.value,
        })?;
        let mut outputs = vec![TxOutput { owner: charge.payout, value: charge.reward, kind: OutputKind::Reward }];
        if charge.deposit_share > Amount::ZERO {
            outputs.push(TxOutput {
                owner: addrs.renter_refund,
                value: charge.deposit_share,
                kind: OutputKind::DepositReturn,
            });
        }
        if charge.fee > Amount::ZERO {
            outputs.push(TxOutput { owner: addrs.maintainer, value: charge.fee, kind: OutputKind::Fee });
        }
        let change_idx = outputs.len();
        if change > Amount::ZERO {
            outputs.push(TxOutput { owner: self.key.address(), value: change, kind: OutputKind::Change });
        }
        let tx = Transaction::new(vec![head.note_id], outputs, vec![self.key]);
        self.head = (change > Amount::ZERO).then(|| tx.output_note(change_idx).expect("change output"));
        if let Some(h) = self.head {
            self.history.push(h);
        }
        self.issued.push((charge.slot, tx.tx_id));
        Ok(tx)
    }

    /// The latest head that is still spendable given `live` notes. After a
    /// settlement is lost, later heads descend from a note that never
    /// appeared, so the share falls back to the last anchored one.
    pub fn anchored_head(&self, live: &BTreeSet<NoteId>) -> Option<Note> {
        self.history.iter().rev().find(|n| live.contains(&n.note_id)).copied()
    }

    /// Closing transaction: refund the head less `burn`, burn the rest.
    pub fn close(&self, head: &Note, burn: Amount, refund_to: Address) -> Transaction {
        closing_tx(head, self.key, burn, refund_to, self.campaign_id, self.share_id)
    }
}

fn closing_tx(head: &Note, key: SpendKey, burn: Amount, refund_to: Address, campaign: u32, share: u32) -> Transaction {
    let burn = burn.min(head.value);
    let refund = head.value - burn;
    let mut outputs = Vec::new();
    if refund > Amount::ZERO {
        outputs.push(TxOutput { owner: refund_to, value: refund, kind: OutputKind::Refund });
    }
    if burn > Amount::ZERO {
        outputs.push(TxOutput {
            owner: Address::burn(&format!("c{campaign}p{share}")),
            value: burn,
            kind: OutputKind::Burn,
        });
    }
    Transaction::new(vec![head.note_id], outputs, vec![key])
}

/// Splits the funding note into one share per amount, each owned by the
/// matching payment enclave key. Any excess over `amounts` goes to share 0.
pub fn allocate_shares(
    funding: &Note,
    funding_key: SpendKey,
    campaign_id: u32,
    enclaves: &[(Endpoint, SpendKey)],
    amounts: &[Amount],
) -> Result<(Transaction, Vec<FundShare>), PaymentError> {
    if enclaves.is_empty() {
        return Err(PaymentError::NoPaymentEnclaves);
    }
    assert_eq!(enclaves.len(), amounts.len(), "one amount per enclave");
    let need: Amount = amounts.iter().copied().sum();
    let excess = funding.value.checked_sub(need).ok_or(PaymentError::Underfunded { need, have: funding.value })?;
    let outputs: Vec<TxOutput> = enclaves
        .iter()
        .zip(amounts)
        .enumerate()
        .map(|(i, ((_, k), a))| TxOutput {
            owner: k.address(),
            value: if i == 0 { *a + excess } else { *a },
            kind: OutputKind::Funding,
        })
        .collect();
    let tx = Transaction::new(vec![funding.note_id], outputs, vec![funding_key]);
    let shares = enclaves
        .iter()
        .enumerate()
        .map(|(i, (e, k))| FundShare::new(i as u32, campaign_id, *e, *k, tx.output_note(i).expect("share output")))
        .collect();
    Ok((tx, shares))
}

/// Even split of the whole funding note across `enclaves`.
pub fn allocate_even(
    funding: &Note,
    funding_key: SpendKey,
    campaign_id: u32,
    enclaves: &[(Endpoint, SpendKey)],
) -> Result<(Transaction, Vec<FundShare>), PaymentError> {
    allocate_shares(funding, funding_key, campaign_id, enclaves, &split_even(funding.value, enclaves.len()))
}

/// The interface enclave takes over a dead payment enclave's share using
/// the escrowed key and closes it.
pub fn recover_funds(
    mesh: &mut Mesh,
    interface: Endpoint,
    share: &FundShare,
    observed_dead: bool,
    head: &Note,
    burn: Amount,
    refund_to: Address,
) -> Result<Transaction, PaymentError> {
    recover_share(
        mesh,
        interface,
        share.enclave,
        share.campaign_id,
        share.share_id,
        observed_dead,
        head,
        burn,
        refund_to,
    )
}

/// [`recover_funds`] for an interface that only knows where the share lives.
#[allow(clippy::too_many_arguments)]
pub fn recover_share(
    mesh: &mut Mesh,
    interface: Endpoint,
    enclave: Endpoint,
    campaign_id: u32,
    share_id: u32,
    observed_dead: bool,
    head: &Note,
    burn: Amount,
    refund_to: Address,
) -> Result<Transaction, PaymentError> {
    let key = mesh.recover_key(enclave, interface, observed_dead)?;
    Ok(closing_tx(head, key, burn, refund_to, campaign_id, share_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attest::{EnclaveIdentity, EnclaveKind};
    use crate::ledger::{Chain, ChainParams, Ledger, COIN};
    use crate::simnet::NetControl;

    fn key(n: u64) -> SpendKey {
        SpendKey::derive("pay-test", n)
    }

    fn setup(value: u64, p: usize) -> (Ledger, Transaction, Vec<FundShare>) {
        let fk = key(999);
        let chain = Chain::genesis(ChainParams { difficulty_bits: 4 }, 1, &[(fk.address(), Amount::coins(value))]);
        let funding = chain.blocks()[0].txs[0].output_note(0).unwrap();
        let enclaves: Vec<_> = (0..p).map(|i| (Endpoint::PaymentEnclave(i as u32), key(i as u64))).collect();
        let (split, shares) = allocate_even(&funding, fk, 0, &enclaves).unwrap();
        let mut ledger = Ledger::new(chain);
        ledger.submit_tx(split.clone()).unwrap();
        ledger.mine();
        (ledger, split, shares)
    }

    fn addrs() -> SettlementAddrs {
        SettlementAddrs { renter_refund: key(500).address(), maintainer: key(501).address() }
    }

    #[test]
    fn even_splits() {
        assert_eq!(split_even(Amount(100), 4), vec![Amount(25); 4]);
        assert_eq!(split_even(Amount(10), 3), vec![Amount(4), Amount(3), Amount(3)]);
        assert_eq!(split_even(Amount(7), 1), vec![Amount(7)]);
    }

    #[test]
    fn weighted_split_sums_exactly() {
        let parts = split_weighted(Amount(100), &[2, 1, 1]);
        assert_eq!(parts, vec![Amount(50), Amount(25), Amount(25)]);
        let parts = split_weighted(Amount(10), &[1, 1, 1]);
        assert_eq!(parts.iter().copied().sum::<Amount>(), Amount(10));
        assert_eq!(parts[0], Amount(4));
    }

    #[test]
    fn no_payment_enclaves() {
        let n = Note { note_id: NoteId::ZERO, owner: key(1).address(), value: Amount(5) };
        assert_eq!(allocate_even(&n, key(1), 0, &[]).unwrap_err(), PaymentError::NoPaymentEnclaves);
    }

    #[test]
    fn three_rewards_leave_expected_head() {
        let (mut ledger, _, mut shares) = setup(100, 1);
        let share = &mut shares[0];
        for slot in 0..3 {
            let c = SlotCharge {
                slot,
                owner: slot,
                reward: Amount::coins(10),
                deposit_share: Amount::coins(1),
                fee: Amount(COIN / 2),
                payout: key(100 + slot as u64).address(),
            };
            ledger.submit_tx(share.issue_reward(&c, &addrs()).unwrap()).unwrap();
        }
        ledger.mine();
        assert_eq!(share.head_value(), Amount(65 * COIN + COIN / 2));
        assert_eq!(share.issued().len(), 3);
        // The three txs form a path: each spends the previous change.
        let txs: Vec<_> = share.issued().iter().map(|(_, id)| ledger.chain().find_tx(id).unwrap().clone()).collect();
        for w in txs.windows(2) {
            assert_eq!(w[1].inputs[0], w[0].output_note(w[0].outputs.len() - 1).unwrap().note_id);
        }
    }

    #[test]
    fn insufficient_share_reported() {
        let (_, _, mut shares) = setup(10, 1);
        let c = SlotCharge {
            slot: 0,
            owner: 0,
            reward: Amount::coins(11),
            deposit_share: Amount::ZERO,
            fee: Amount::ZERO,
            payout: key(7).address(),
        };
        assert!(matches!(shares[0].issue_reward(&c, &addrs()), Err(PaymentError::InsufficientShare { .. })));
        assert_eq!(shares[0].head_value(), Amount::coins(10));
    }

    #[test]
    fn lost_settlement_falls_back_to_anchored_head() {
        let (mut ledger, _, mut shares) = setup(100, 1);
        let c = |slot| SlotCharge {
            slot,
            owner: 0,
            reward: Amount::coins(10),
            deposit_share: Amount::coins(1),
            fee: Amount::ZERO,
            payout: key(7).address(),
        };
        let first = shares[0].issue_reward(&c(0), &addrs()).unwrap();
        ledger.submit_tx(first).unwrap();
        // Second is never delivered; third descends from it.
        let _lost = shares[0].issue_reward(&c(1), &addrs()).unwrap();
        let third = shares[0].issue_reward(&c(2), &addrs()).unwrap();
        ledger.submit_tx(third).unwrap();
        let head = shares[0].anchored_head(&ledger.live_notes()).unwrap();
        assert_eq!(head.value, Amount::coins(89));
        let close = shares[0].close(&head, Amount::coins(2), key(500).address());
        ledger.submit_tx(close).unwrap();
        ledger.mine();
        assert_eq!(ledger.chain().burned_total(), Amount::coins(2));
        assert_eq!(ledger.mempool().len(), 1, "orphaned third settlement stays queued");
    }

    #[test]
    fn recovery_refused_while_alive_and_blocks_resurrected_spend() {
        let (mut ledger, _, mut shares) = setup(30, 1);
        let iface = Endpoint::Interface(0);
        let mut mesh = Mesh::with_stock_measurements();
        mesh.add_enclave(EnclaveIdentity::genuine(iface, EnclaveKind::Interface, 0));
        mesh.add_enclave(EnclaveIdentity::genuine(shares[0].enclave, EnclaveKind::Payment, 0));
        let net = NetControl::new();
        mesh.enlist(iface, shares[0].enclave, &net).unwrap();
        mesh.backup_keys(shares[0].enclave, iface, key(0)).unwrap();
        let head = *shares[0].head().unwrap();
        let refund = key(500).address();
        assert!(matches!(
            recover_funds(&mut mesh, iface, &shares[0], false, &head, Amount::ZERO, refund),
            Err(PaymentError::Mesh(MeshError::RecoveryRefused(_)))
        ));
        let sweep = recover_funds(&mut mesh, iface, &shares[0], true, &head, Amount::ZERO, refund).unwrap();
        ledger.submit_tx(sweep).unwrap();
        ledger.mine();
        let c = SlotCharge {
            slot: 0,
            owner: 0,
            reward: Amount::coins(1),
            deposit_share: Amount::ZERO,
            fee: Amount::ZERO,
            payout: key(7).address(),
        };
        let late = shares[0].issue_reward(&c, &addrs()).unwrap();
        assert!(ledger.submit_tx(late).is_err());
    }
}
