//! Worked examples checked against small independent computations, with the
//! expected numbers frozen.

use std::collections::BTreeSet;
use std::path::PathBuf;

use sha2::{Digest as _, Sha256};

use idlease::attest::{EnclaveIdentity, EnclaveKind, Mesh, MeshError};
use idlease::harness::config::{Directive, DirectiveKind, OwnerGroup};
use idlease::harness::report::SlotFate;
use idlease::harness::{run, schedule_estimate, ScenarioConfig};
use idlease::interface::{dispatch_batches, quote_from_prices};
use idlease::ledger::{
    verify_headers, Address, Amount, BlockHeader, Chain, ChainParams, Digest, Ledger, LedgerError, OutputKind,
    SpendKey, Transaction, TxFault, TxOutput, COIN,
};
use idlease::payment::{split_even, FundShare, SettlementAddrs, SlotCharge};
use idlease::service_enclave::SlotStatus;
use idlease::services::{AccountCredential, ServiceError, SocialService};
use idlease::simnet::{Endpoint, NetControl, SimDuration};

fn scenario(name: &str) -> ScenarioConfig {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"));
    ScenarioConfig::load(&p).unwrap_or_else(|e| panic!("{name}: {e:?}"))
}

fn coins(x: f64) -> Amount {
    Amount::from_coins_f64(x).unwrap()
}

fn out(owner: Address, value: Amount, kind: OutputKind) -> TxOutput {
    TxOutput { owner, value, kind }
}

// sha256 framing written out by hand, not through Digest::of
fn raw_header_digest(h: &BlockHeader) -> [u8; 32] {
    let mut s = Sha256::new();
    let dom = b"header";
    s.update((dom.len() as u32).to_le_bytes());
    s.update(dom);
    for part in [&h.height.to_le_bytes()[..], &h.prev_digest.0, &h.payload_digest.0, &h.pow_nonce.to_le_bytes()] {
        s.update((part.len() as u64).to_le_bytes());
        s.update(part);
    }
    s.finalize().into()
}

// Ledger.

#[test]
fn double_spend_matches_spent_set_replay() {
    let k = SpendKey::derive("alice", 1);
    let chain = Chain::genesis(ChainParams { difficulty_bits: 4 }, 1, &[(k.address(), Amount::coins(10))]);
    let g = chain.unspent_at(&k.address())[0];
    let b = SpendKey::derive("bob", 1).address();
    let c = SpendKey::derive("carol", 1).address();
    let t1 = Transaction::new(vec![g.note_id], vec![out(b, g.value, OutputKind::Change)], vec![k]);
    let t2 = Transaction::new(vec![g.note_id], vec![out(c, g.value, OutputKind::Change)], vec![k]);

    // replay: a note may be consumed once across the whole history
    let mut spent = BTreeSet::new();
    let verdicts: Vec<bool> = [&t1, &t2].iter().map(|t| t.inputs.iter().all(|i| spent.insert(*i))).collect();
    assert_eq!(verdicts, [true, false]);

    let mut l = Ledger::new(chain);
    l.submit_tx(t1.clone()).unwrap();
    l.mine();
    assert!(l.chain().contains_tx(&t1.tx_id));
    match l.submit_tx(t2.clone()) {
        Err(LedgerError::InvalidTransaction { cause: TxFault::DoubleSpend(n), .. }) => assert_eq!(n, g.note_id),
        r => panic!("expected double spend, got {r:?}"),
    }
    assert!(!l.chain().contains_tx(&t2.tx_id));
}

#[test]
fn header_with_forged_nonce_is_rejected() {
    let mut chain = Chain::genesis(ChainParams { difficulty_bits: 8 }, 3, &[]);
    chain.push_block(vec![]).unwrap();
    let hs = chain.headers();
    for h in &hs {
        assert_eq!(raw_header_digest(h), h.own_digest.0);
        assert!(h.own_digest.0[0] == 0, "8 bits of work means a zero first byte");
    }
    assert!(verify_headers(&hs, 8));

    // pick a nonce whose digest misses the target, then claim it anyway
    let tip = *hs.last().unwrap();
    let bad_nonce = (0u64..).find(|&n| {
        let mut h = tip;
        h.pow_nonce = n;
        raw_header_digest(&h)[0] != 0
    });
    let mut forged = hs.clone();
    let n = forged.len() - 1;
    forged[n].pow_nonce = bad_nonce.unwrap();
    assert!(!verify_headers(&forged, 8), "stale digest");
    forged[n].own_digest = Digest(raw_header_digest(&forged[n]));
    assert!(!verify_headers(&forged, 8), "recomputed digest lacks work");
}

#[test]
fn burned_coins_cannot_be_spent() {
    let k = SpendKey::derive("renter", 9);
    let mut chain = Chain::genesis(ChainParams { difficulty_bits: 4 }, 9, &[(k.address(), Amount::coins(2))]);
    let g = chain.unspent_at(&k.address())[0];
    let burn = Address::burn("c0p0");
    let t = Transaction::new(vec![g.note_id], vec![out(burn, g.value, OutputKind::Burn)], vec![k]);
    chain.push_block(vec![t.clone()]).unwrap();
    assert_eq!(chain.burned_total(), Amount::coins(2));
    let burned = t.output_note(0).unwrap();

    // try every key a participant could plausibly hold
    for label in ["renter", "host", "owner", "payment", "c0p0", "burn-address"] {
        let key = SpendKey::derive(label, 9);
        assert_ne!(key.address(), burn);
        let steal =
            Transaction::new(vec![burned.note_id], vec![out(k.address(), burned.value, OutputKind::Change)], vec![key]);
        assert_eq!(chain.validate_tx(&steal, &BTreeSet::new()), Err(TxFault::Unauthorized(burned.note_id)));
    }
}

// Attestation and recovery.

#[test]
fn tampered_payment_enclave_never_enters_registry() {
    let mut m = Mesh::with_stock_measurements();
    m.add_enclave(EnclaveIdentity::genuine(Endpoint::Interface(0), EnclaveKind::Interface, 0));
    m.add_enclave(EnclaveIdentity::with_code(Endpoint::PaymentEnclave(0), EnclaveKind::Payment, 0, "payment+skim"));
    m.add_enclave(EnclaveIdentity::genuine(Endpoint::PaymentEnclave(1), EnclaveKind::Payment, 0));
    let net = NetControl::new();
    assert_eq!(
        m.enlist(Endpoint::Interface(0), Endpoint::PaymentEnclave(0), &net),
        Err(MeshError::MeasurementMismatch { enclave: Endpoint::PaymentEnclave(0) })
    );
    m.enlist(Endpoint::Interface(0), Endpoint::PaymentEnclave(1), &net).unwrap();
    assert!(m.registry_measurements().iter().all(|x| m.is_genuine(x)));
    assert_eq!(m.enlisted(Endpoint::Interface(0)).len(), 1);
}

#[test]
fn live_payment_enclave_keeps_its_key() {
    let mut m = Mesh::with_stock_measurements();
    m.add_enclave(EnclaveIdentity::genuine(Endpoint::Interface(0), EnclaveKind::Interface, 0));
    m.add_enclave(EnclaveIdentity::genuine(Endpoint::PaymentEnclave(0), EnclaveKind::Payment, 0));
    let (i, p) = (Endpoint::Interface(0), Endpoint::PaymentEnclave(0));
    m.enlist(i, p, &NetControl::new()).unwrap();
    let key = SpendKey::derive("share", 0);
    m.backup_keys(p, i, key).unwrap();
    assert_eq!(m.recover_key(p, i, false), Err(MeshError::RecoveryRefused(p)));
    assert_eq!(m.recover_key(p, i, true), Ok(key));
    assert_eq!(m.recover_key(p, i, true), Err(MeshError::AlreadyRecovered(p)));
}

// Services.

#[test]
fn wrong_password_only_affects_that_account() {
    let mut s = SocialService::new();
    s.register("a", "pw-a");
    s.register("b", "pw-b");
    let cred = |acc: &str, pw: &str| AccountCredential { account: acc.into(), password: pw.into() };
    assert_eq!(s.login(&cred("a", "nope")), Err(ServiceError::AuthFailed("a".into())));
    assert_eq!(s.login(&cred("b", "pw-b")), Ok(()));
    assert_eq!(s.login(&cred("a", "pw-a")), Ok(()));

    // end to end: the mistyped owner is left out, the rest are paid
    let mut cfg = scenario("baseline");
    cfg.owners = vec![
        OwnerGroup { count: 1, price: 2.0, bad_password: true, ..Default::default() },
        OwnerGroup { count: 2, price: 2.0, ..Default::default() },
    ];
    let r = run(&cfg).report;
    assert!(!r.owners[0].enrolled);
    assert!(r.owners[0].note.as_deref().unwrap_or("").contains("credentials"), "{:?}", r.owners[0].note);
    assert!(r.owners[1].enrolled && r.owners[2].enrolled);
    let c = &r.campaigns[0];
    let paid: Vec<u32> = c.slots.iter().filter(|s| s.settled).filter_map(|s| s.owner).collect();
    assert_eq!(paid, [1, 2]);
    assert!(!r.deltas.owners.contains_key(&0) || r.deltas.owners[&0] == 0);
    assert!(r.verdict.harmed().is_empty(), "{:?}", r.verdict);
}

// Quote and dispatch arithmetic.

#[test]
fn quote_picks_the_most_expensive_subset() {
    let prices: Vec<Amount> = [1.0, 2.0, 3.0].map(coins).to_vec();
    // brute force over all subsets of size min(count, n)
    let brute = |count: usize| -> Amount {
        let k = count.min(prices.len());
        (0u32..1 << prices.len())
            .filter(|m| m.count_ones() as usize == k)
            .map(|m| (0..prices.len()).filter(|i| m >> i & 1 == 1).map(|i| prices[i]).sum::<Amount>())
            .max()
            .unwrap()
    };

    let (q, r) = quote_from_prices(&prices, 2, 100_000, 50_000).unwrap();
    assert_eq!(q.funds_upper_bound, brute(2));
    assert_eq!((q.funds_upper_bound, q.deposit_required), (coins(5.0), coins(0.5)));
    assert_eq!(r.iter().map(|x| x.price).collect::<Vec<_>>(), [coins(2.0), coins(3.0)]);

    let (q, r) = quote_from_prices(&prices, 4, 100_000, 50_000).unwrap();
    assert_eq!(q.funds_upper_bound, brute(4));
    assert_eq!((q.funds_upper_bound, q.deposit_required, q.slots), (coins(6.0), coins(0.6), 3));
    assert_eq!(r.len(), 3);
    assert_eq!(q.fee_reserve, coins(0.3));
    assert_eq!(r.iter().map(|x| x.deposit_share).sum::<Amount>(), q.deposit_required);
}

#[test]
fn dispatch_and_split_sizes() {
    let slots: Vec<u32> = (0..7).collect();
    let b = dispatch_batches(&slots, 3).unwrap();
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [3, 2, 2]);
    let mut all: Vec<u32> = b.concat();
    all.sort();
    assert_eq!(all, slots);
    assert_eq!(split_even(Amount(10), 3), [Amount(4), Amount(3), Amount(3)]);
}

#[test]
fn share_head_after_three_settlements() {
    let key = SpendKey::derive("share", 0);
    let mut chain = Chain::genesis(ChainParams { difficulty_bits: 4 }, 5, &[(key.address(), Amount::coins(100))]);
    let head = chain.unspent_at(&key.address())[0];
    let mut share = FundShare::new(0, 0, Endpoint::PaymentEnclave(0), key, head);
    let addrs = SettlementAddrs { renter_refund: Address::burn("r"), maintainer: Address::burn("m") };
    let mut txs = Vec::new();
    for slot in 0..3 {
        let charge = SlotCharge {
            slot,
            owner: slot,
            reward: coins(10.0),
            deposit_share: coins(1.0),
            fee: coins(0.5),
            payout: SpendKey::derive("owner", slot as u64).address(),
        };
        txs.push(share.issue_reward(&charge, &addrs).unwrap());
    }
    assert_eq!(share.head_value(), coins(65.5));
    assert_eq!(share.head_value().0, 100 * COIN - 3 * (10 * COIN + COIN + COIN / 2));
    // every settlement is one atomic tx with all three payouts
    for t in &txs {
        let kinds: Vec<OutputKind> = t.outputs.iter().map(|o| o.kind).collect();
        assert_eq!(kinds, [OutputKind::Reward, OutputKind::DepositReturn, OutputKind::Fee, OutputKind::Change]);
    }
    chain.push_block(txs).unwrap();
    assert_eq!(chain.unspent_at(&key.address()).iter().map(|n| n.value).sum::<Amount>(), coins(65.5));
}

#[test]
fn reference_schedule_estimate() {
    let e =
        schedule_estimate(1000, 25, 25, SimDuration::from_secs_f64(4.288), SimDuration::from_secs_f64(4.935)).unwrap();
    // 1000 / 25 = 40 sequential rounds per enclave
    assert_eq!(e.service, SimDuration::from_secs_f64(40.0 * 4.288));
    assert_eq!(e.payment, SimDuration::from_secs_f64(40.0 * 4.935));
    assert_eq!(format!("{:.1}", e.service.as_secs_f64()), "171.5");
    assert_eq!(format!("{:.1}", e.payment.as_secs_f64()), "197.4");
}

// Protocol timelines.

#[test]
fn resurrected_share_is_a_double_spend() {
    let key = SpendKey::derive("share", 1);
    let mut chain = Chain::genesis(ChainParams { difficulty_bits: 4 }, 6, &[(key.address(), Amount::coins(5))]);
    let head = chain.unspent_at(&key.address())[0];
    let share = FundShare::new(0, 0, Endpoint::PaymentEnclave(0), key, head);
    // the interface sweeps after the enclave looks dead
    let sweep = share.close(&head, Amount::ZERO, Address::burn("renter"));
    chain.push_block(vec![sweep]).unwrap();
    // then the enclave comes back and settles from its stale head
    let mut share = share;
    let charge = SlotCharge {
        slot: 0,
        owner: 0,
        reward: Amount::coins(1),
        deposit_share: Amount::ZERO,
        fee: Amount::ZERO,
        payout: Address::burn("o0"),
    };
    let late = share
        .issue_reward(&charge, &SettlementAddrs { renter_refund: Address::burn("r"), maintainer: Address::burn("m") })
        .unwrap();
    let mut l = Ledger::new(chain);
    assert!(matches!(
        l.submit_tx(late),
        Err(LedgerError::InvalidTransaction { cause: TxFault::DoubleSpend(n), .. }) if n == head.note_id
    ));
}

#[test]
fn revert_inside_window_is_caught_and_after_is_not() {
    let r = run(&scenario("revert")).report;
    let s = r.campaigns[0].slots.iter().find(|s| s.owner == Some(2)).unwrap();
    assert_eq!(s.status, SlotStatus::Reverted);
    assert!(!s.settled && !s.in_effect);
    assert!(r.verdict.harmed().is_empty(), "{:?}", r.verdict);

    let r = run(&scenario("revert_late")).report;
    let s = r.campaigns[0].slots.iter().find(|s| s.owner == Some(2)).unwrap();
    assert_eq!(s.status, SlotStatus::Confirmed);
    assert!(s.settled && !s.in_effect);
    assert_eq!(r.verdict.harmed(), ["renter:0"]);
}

#[test]
fn delay_past_timeout_acts_like_a_drop() {
    let drop = run(&scenario("cut3")).report;
    let mut cfg = scenario("cut3");
    cfg.adversary = vec![Directive {
        action: DirectiveKind::Delay,
        cut: Some(3),
        scope: "owner:1".into(),
        delay_secs: Some(3600.0),
        ..Default::default()
    }];
    let delay = run(&cfg).report;
    let fate = |r: &idlease::harness::ScenarioReport| {
        r.campaigns[0].slots.iter().map(|s| (s.owner, s.status, s.settled, s.fate, s.in_effect)).collect::<Vec<_>>()
    };
    assert_eq!(fate(&drop), fate(&delay));
    let s1 = drop.campaigns[0].slots.iter().find(|s| s.owner == Some(1)).unwrap();
    assert_eq!((s1.status, s1.settled, s1.in_effect), (SlotStatus::Timeout, false, true));
    assert_eq!(drop.verdict.harmed(), delay.verdict.harmed());
}

#[test]
fn settlement_lands_unless_every_path_is_cut() {
    for mask in 0u8..8 {
        let mut cfg = scenario("cut45b");
        cfg.name = format!("paths-{mask}");
        cfg.adversary.clear();
        for (bit, cut) in [(1, Some(4)), (2, Some(5))] {
            if mask & bit != 0 {
                cfg.adversary.push(Directive { cut, scope: "slot:2".into(), ..Default::default() });
            }
        }
        if mask & 4 != 0 {
            cfg.adversary.push(Directive {
                action: DirectiveKind::DropBroadcast,
                scope: "slot:2".into(),
                ..Default::default()
            });
        }
        let r = run(&cfg).report;
        let s = &r.campaigns[0].slots[2];
        assert_eq!(s.status, SlotStatus::Confirmed, "mask {mask}");
        let lands = mask != 7;
        assert_eq!(s.settled, lands, "mask {mask}");
        assert_eq!(s.fate, if lands { SlotFate::Returned } else { SlotFate::Burned }, "mask {mask}");
        assert!(r.check_invariants(None).is_empty(), "mask {mask}");
    }
}

#[test]
fn baseline_end_state() {
    let r = run(&scenario("baseline")).report;
    let c = &r.campaigns[0];
    assert_eq!(c.state, "done");
    assert!(c.slots.iter().all(|s| s.status == SlotStatus::Confirmed && s.settled && s.fate == SlotFate::Returned));
    // 3 owners at 2 coins, 10% deposit back, 5% fee
    assert_eq!(r.deltas.owners.values().copied().collect::<Vec<_>>(), [2 * COIN as i64; 3]);
    assert_eq!(r.deltas.maintainer, 3 * (COIN as i64) / 10);
    assert_eq!(r.deltas.renter, -(6 * COIN as i64) - 3 * (COIN as i64) / 10);
    assert_eq!((r.burned, r.deltas.held), (0, 0));
    assert_eq!(r.deltas.sum(), 0);
}
