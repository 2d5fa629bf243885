use std::collections::BTreeSet;

use proptest::prelude::*;

use idlease::harness::config::{CampaignConfig, Directive, DirectiveKind, LedgerConfig, OwnerGroup, TopologyConfig};
use idlease::harness::{run, ScenarioConfig};
use idlease::ledger::{
    verify_headers, Amount, Chain, ChainParams, Digest, OutputKind, SpendKey, Transaction, TxOutput,
};
use idlease::payment::{split_even, split_weighted};

fn directive() -> impl Strategy<Value = Directive> {
    let scope = prop_oneof![
        Just("all".to_string()),
        (0u32..4).prop_map(|o| format!("owner:{o}")),
        (0u32..4).prop_map(|s| format!("slot:{s}")),
    ];
    (1u8..=5, scope, 0u8..4, 0.0f64..60.0).prop_map(|(cut, scope, k, at)| match k {
        0 => Directive { at_secs: at, cut: Some(cut), scope, ..Default::default() },
        1 => Directive { at_secs: at, action: DirectiveKind::DropBroadcast, scope, ..Default::default() },
        2 => Directive {
            at_secs: at,
            action: DirectiveKind::Delay,
            cut: Some(cut),
            scope,
            delay_secs: Some(cut as f64 * 7.0),
            ..Default::default()
        },
        _ => Directive {
            at_secs: at,
            action: DirectiveKind::Kill,
            target: Some("payment:0".into()),
            ..Default::default()
        },
    })
}

fn scenario() -> impl Strategy<Value = ScenarioConfig> {
    (any::<u64>(), 1u32..5, 1u32..5, 1u32..3, prop::collection::vec(directive(), 0..3)).prop_map(
        |(seed, owners, count, payment, adversary)| ScenarioConfig {
            name: "prop".into(),
            seed,
            owners: vec![OwnerGroup { count: owners, ..Default::default() }],
            campaigns: vec![CampaignConfig { count, ..Default::default() }],
            adversary,
            ledger: LedgerConfig {
                difficulty_bits: 4,
                confirmations: 1,
                block_interval_secs: 10.0,
                ..Default::default()
            },
            topology: TopologyConfig { payment_enclaves: payment, ..Default::default() },
            ..Default::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn same_config_same_run(cfg in scenario()) {
        let a = run(&cfg);
        let b = run(&cfg);
        prop_assert_eq!(&a.event_log, &b.event_log);
        prop_assert_eq!(&a.chain_dump, &b.chain_dump);
        prop_assert_eq!(&a.report.report_digest, &b.report.report_digest);
    }

    #[test]
    fn coins_are_conserved_and_invariants_hold(cfg in scenario()) {
        let out = run(&cfg);
        let r = &out.report;
        prop_assert_eq!(r.deltas.sum() + r.burned as i64, 0);
        let v = r.check_invariants(Some(&out.event_log));
        prop_assert!(v.is_empty(), "{:?}", v);
        let chain = Chain::restore(&out.chain_dump).unwrap();
        prop_assert_eq!(chain.dump(), out.chain_dump);
    }
}

proptest! {
    #[test]
    fn random_chains_verify(seed in any::<u64>(), blocks in 1usize..8, cut in 0usize..8) {
        let k = SpendKey::derive("k", seed);
        let mut chain = Chain::genesis(ChainParams { difficulty_bits: 6 }, seed, &[(k.address(), Amount(1000))]);
        let mut head = chain.unspent_at(&k.address())[0];
        for i in 0..blocks {
            let txs = if i % 2 == 0 {
                let t = Transaction::new(vec![head.note_id], vec![TxOutput { owner: k.address(), value: head.value, kind: OutputKind::Change }], vec![k]);
                head = t.output_note(0).unwrap();
                vec![t]
            } else {
                vec![]
            };
            chain.push_block(txs).unwrap();
        }
        let hs = chain.headers();
        prop_assert!(verify_headers(&hs, 6));
        prop_assert!(verify_headers(&chain.headers_from(cut as u64 % hs.len() as u64), 6));
        let mut bad = hs.clone();
        let i = cut % bad.len();
        bad[i].payload_digest = Digest::of("other", &[]);
        prop_assert!(!verify_headers(&bad, 6));
    }

    #[test]
    fn splits_sum_and_stay_close(total in 0u64..1_000_000_000, p in 1usize..64) {
        let v = split_even(Amount(total), p);
        prop_assert_eq!(v.len(), p);
        prop_assert_eq!(v.iter().map(|a| a.0).sum::<u64>(), total);
        let lo = v.iter().min().unwrap().0;
        let hi = v.iter().max().unwrap().0;
        prop_assert!(hi - lo <= 1);
        prop_assert!(v.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn weighted_split_sums(total in 0u64..1_000_000_000, w in prop::collection::vec(0u64..1000, 1..16)) {
        let v = split_weighted(Amount(total), &w);
        prop_assert_eq!(v.iter().map(|a| a.0).sum::<u64>(), total);
        let zero: BTreeSet<usize> = (0..w.len()).filter(|&i| w[i] == 0).collect();
        if zero.len() < w.len() {
            prop_assert!(zero.iter().all(|&i| v[i].0 == 0));
        }
    }
}
