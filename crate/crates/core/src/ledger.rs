//! Simulated anonymous ledger.
//!
//! Blocks carry proof-of-work headers chained by digest. Value lives in
//! notes; a transaction consumes notes and creates new ones of equal total
//! value. Spending a note requires revealing the key whose hash is the note's
//! address, so outputs sent to an address with no known key (burns) can never
//! be spent.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Fixed 256-bit digest (SHA-256).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    /// Hashes a domain tag followed by length-prefixed parts.
    pub fn of(domain: &str, parts: &[&[u8]]) -> Digest {
        let mut h = Sha256::new();
        h.update((domain.len() as u32).to_le_bytes());
        h.update(domain.as_bytes());
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        Digest(h.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Digest(arr))
    }

    /// Number of leading zero bits when read as a big-endian integer.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut n = 0;
        for b in self.0 {
            if b == 0 {
                n += 8;
            } else {
                n += b.leading_zeros();
                break;
            }
        }
        n
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub type NoteId = Digest;
pub type TxId = Digest;

/// Smallest coin units per coin.
pub const COIN: u64 = 100_000_000;

/// Coin amount in smallest units.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Amount(pub u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub fn coins(c: u64) -> Amount {
        Amount(c * COIN)
    }

    /// Converts a decimal coin value, rounding to the nearest unit.
    pub fn from_coins_f64(c: f64) -> Option<Amount> {
        if !c.is_finite() || c < 0.0 {
            return None;
        }
        let units = (c * COIN as f64).round();
        if units > u64::MAX as f64 {
            return None;
        }
        Some(Amount(units as u64))
    }

    pub fn as_coins_f64(self) -> f64 {
        self.0 as f64 / COIN as f64
    }

    pub fn checked_add(self, o: Amount) -> Option<Amount> {
        self.0.checked_add(o.0).map(Amount)
    }

    pub fn checked_sub(self, o: Amount) -> Option<Amount> {
        self.0.checked_sub(o.0).map(Amount)
    }

    pub fn saturating_sub(self, o: Amount) -> Amount {
        Amount(self.0.saturating_sub(o.0))
    }

    /// `self * ppm / 1_000_000`, rounded down.
    pub fn scale_ppm(self, ppm: u32) -> Amount {
        Amount(((self.0 as u128 * ppm as u128) / 1_000_000) as u64)
    }
}

impl std::ops::Add for Amount {
    type Output = Amount;
    fn add(self, o: Amount) -> Amount {
        Amount(self.0 + o.0)
    }
}

impl std::ops::AddAssign for Amount {
    fn add_assign(&mut self, o: Amount) {
        self.0 += o.0;
    }
}

impl std::ops::Sub for Amount {
    type Output = Amount;
    fn sub(self, o: Amount) -> Amount {
        Amount(self.0 - o.0)
    }
}

impl std::iter::Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        iter.fold(Amount::ZERO, |a, b| a + b)
    }
}

impl fmt::Debug for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:08}", self.0 / COIN, self.0 % COIN)
    }
}

/// Payment address: the hash of a spend key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub Digest);

impl Address {
    /// An address nobody holds a key for.
    pub fn burn(tag: &str) -> Address {
        Address(Digest::of("burn-address", &[tag.as_bytes()]))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "addr:{}", self.0.short())
    }
}

/// Key handle authorizing spends from one address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpendKey(pub Digest);

impl SpendKey {
    pub fn derive(label: &str, seed: u64) -> SpendKey {
        SpendKey(Digest::of("spend-key", &[label.as_bytes(), &seed.to_le_bytes()]))
    }

    pub fn address(&self) -> Address {
        Address(Digest::of("address", &[&self.0 .0]))
    }
}

impl fmt::Debug for SpendKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "key:{}", self.0.short())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Genesis allocation; only valid in the genesis block.
    Issuance,
    Funding,
    Reward,
    DepositReturn,
    Fee,
    Refund,
    Change,
    Burn,
}

impl OutputKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputKind::Issuance => "issuance",
            OutputKind::Funding => "funding",
            OutputKind::Reward => "reward",
            OutputKind::DepositReturn => "deposit_return",
            OutputKind::Fee => "fee",
            OutputKind::Refund => "refund",
            OutputKind::Change => "change",
            OutputKind::Burn => "burn",
        }
    }

    pub fn parse(s: &str) -> Option<OutputKind> {
        Some(match s {
            "issuance" => OutputKind::Issuance,
            "funding" => OutputKind::Funding,
            "reward" => OutputKind::Reward,
            "deposit_return" => OutputKind::DepositReturn,
            "fee" => OutputKind::Fee,
            "refund" => OutputKind::Refund,
            "change" => OutputKind::Change,
            "burn" => OutputKind::Burn,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub note_id: NoteId,
    pub owner: Address,
    pub value: Amount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOutput {
    pub owner: Address,
    pub value: Amount,
    pub kind: OutputKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: TxId,
    pub inputs: Vec<NoteId>,
    pub outputs: Vec<TxOutput>,
    /// Keys revealed to authorize the inputs. Not part of the tx id.
    pub witnesses: Vec<SpendKey>,
}

impl Transaction {
    pub fn new(inputs: Vec<NoteId>, outputs: Vec<TxOutput>, witnesses: Vec<SpendKey>) -> Self {
        let tx_id = Self::compute_id(&inputs, &outputs);
        Transaction { tx_id, inputs, outputs, witnesses }
    }

    pub fn compute_id(inputs: &[NoteId], outputs: &[TxOutput]) -> TxId {
        let mut buf = Vec::with_capacity(inputs.len() * 32 + outputs.len() * 48);
        buf.extend_from_slice(&(inputs.len() as u32).to_le_bytes());
        for i in inputs {
            buf.extend_from_slice(&i.0);
        }
        buf.extend_from_slice(&(outputs.len() as u32).to_le_bytes());
        for o in outputs {
            buf.extend_from_slice(&o.owner.0 .0);
            buf.extend_from_slice(&o.value.0.to_le_bytes());
            buf.extend_from_slice(o.kind.as_str().as_bytes());
            buf.push(0);
        }
        Digest::of("tx", &[&buf])
    }

    pub fn note_id(tx_id: &TxId, index: usize) -> NoteId {
        Digest::of("note", &[&tx_id.0, &(index as u32).to_le_bytes()])
    }

    /// The notes this transaction creates.
    pub fn notes(&self) -> impl Iterator<Item = (Note, OutputKind)> + '_ {
        self.outputs.iter().enumerate().map(move |(i, o)| {
            (Note { note_id: Self::note_id(&self.tx_id, i), owner: o.owner, value: o.value }, o.kind)
        })
    }

    pub fn output_note(&self, index: usize) -> Option<Note> {
        self.outputs.get(index).map(|o| Note {
            note_id: Self::note_id(&self.tx_id, index),
            owner: o.owner,
            value: o.value,
        })
    }

    pub fn output_total(&self) -> Amount {
        self.outputs.iter().map(|o| o.value).sum()
    }

    fn id_matches(&self) -> bool {
        Self::compute_id(&self.inputs, &self.outputs) == self.tx_id
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_digest: Digest,
    pub payload_digest: Digest,
    pub pow_nonce: u64,
    pub own_digest: Digest,
}

impl BlockHeader {
    pub fn compute_digest(height: u64, prev: &Digest, payload: &Digest, nonce: u64) -> Digest {
        Digest::of("header", &[&height.to_le_bytes(), &prev.0, &payload.0, &nonce.to_le_bytes()])
    }

    /// Searches nonces from zero until the digest meets the target.
    pub fn mine(height: u64, prev_digest: Digest, payload_digest: Digest, difficulty_bits: u32) -> Self {
        let mut nonce = 0u64;
        loop {
            let d = Self::compute_digest(height, &prev_digest, &payload_digest, nonce);
            if d.leading_zero_bits() >= difficulty_bits {
                return BlockHeader { height, prev_digest, payload_digest, pow_nonce: nonce, own_digest: d };
            }
            nonce += 1;
        }
    }

    pub fn digest_is_correct(&self) -> bool {
        Self::compute_digest(self.height, &self.prev_digest, &self.payload_digest, self.pow_nonce) == self.own_digest
    }

    pub fn meets_target(&self, difficulty_bits: u32) -> bool {
        self.own_digest.leading_zero_bits() >= difficulty_bits
    }
}

pub fn payload_digest(txs: &[Transaction]) -> Digest {
    let mut buf = Vec::with_capacity(txs.len() * 32);
    for t in txs {
        buf.extend_from_slice(&t.tx_id.0);
    }
    Digest::of("payload", &[&buf])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub txs: Vec<Transaction>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainParams {
    pub difficulty_bits: u32,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams { difficulty_bits: 12 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TxFault {
    #[error("outputs ({outputs}) do not balance inputs ({inputs})")]
    Unbalanced { inputs: Amount, outputs: Amount },
    #[error("note {0:?} already spent")]
    DoubleSpend(NoteId),
    #[error("note {0:?} unknown")]
    MissingInput(NoteId),
    #[error("no witness authorizes note {0:?}")]
    Unauthorized(NoteId),
    #[error("transaction has no inputs")]
    NoInputs,
    #[error("tx id does not match contents")]
    BadId,
    #[error("issuance output outside genesis")]
    Issuance,
    #[error("transaction already included")]
    AlreadyIncluded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeaderFaultKind {
    DigestMismatch,
    InsufficientWork,
    BrokenLink,
    HeightGap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeaderFault {
    pub index: usize,
    pub kind: HeaderFaultKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("invalid transaction {tx_id:?}: {cause}")]
    InvalidTransaction { tx_id: TxId, cause: TxFault },
    #[error("malformed chain: header {} fails with {:?}", .0.index, .0.kind)]
    MalformedChain(HeaderFault),
    #[error("chain dump parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Checks proof-of-work, digest integrity, height continuity and prev-links.
pub fn verify_headers_detailed(headers: &[BlockHeader], difficulty_bits: u32) -> Result<(), HeaderFault> {
    for (i, h) in headers.iter().enumerate() {
        if !h.digest_is_correct() {
            return Err(HeaderFault { index: i, kind: HeaderFaultKind::DigestMismatch });
        }
        if !h.meets_target(difficulty_bits) {
            return Err(HeaderFault { index: i, kind: HeaderFaultKind::InsufficientWork });
        }
        if i == 0 {
            if h.height == 0 && h.prev_digest != Digest::ZERO {
                return Err(HeaderFault { index: i, kind: HeaderFaultKind::BrokenLink });
            }
        } else {
            let parent = &headers[i - 1];
            if h.height != parent.height + 1 {
                return Err(HeaderFault { index: i, kind: HeaderFaultKind::HeightGap });
            }
            if h.prev_digest != parent.own_digest {
                return Err(HeaderFault { index: i, kind: HeaderFaultKind::BrokenLink });
            }
        }
    }
    Ok(())
}

pub fn verify_headers(headers: &[BlockHeader], difficulty_bits: u32) -> bool {
    verify_headers_detailed(headers, difficulty_bits).is_ok()
}

/// True iff one header sequence extends the other.
///
/// Sequences may be suffixes starting at any height; they are aligned by
/// height and must agree on every height both cover. Sequences with no
/// common height are not consistent, except that two empty sequences are.
pub fn check_consistency(a: &[BlockHeader], b: &[BlockHeader], difficulty_bits: u32) -> Result<bool, LedgerError> {
    verify_headers_detailed(a, difficulty_bits).map_err(LedgerError::MalformedChain)?;
    verify_headers_detailed(b, difficulty_bits).map_err(LedgerError::MalformedChain)?;
    if a.is_empty() && b.is_empty() {
        return Ok(true);
    }
    let (Some(a0), Some(b0)) = (a.first(), b.first()) else {
        return Ok(false);
    };
    let lo = a0.height.max(b0.height);
    let hi = (a0.height + a.len() as u64).min(b0.height + b.len() as u64);
    if lo >= hi {
        return Ok(false);
    }
    for h in lo..hi {
        let x = &a[(h - a0.height) as usize];
        let y = &b[(h - b0.height) as usize];
        if x.own_digest != y.own_digest {
            return Ok(false);
        }
    }
    // The overlap ends at the lower tip, so that tip lies inside the other sequence.
    Ok(true)
}

/// A chain snapshot with its derived note index.
#[derive(Clone, Debug)]
pub struct Chain {
    params: ChainParams,
    blocks: Vec<Block>,
    unspent: BTreeMap<NoteId, Note>,
    spent: BTreeSet<NoteId>,
    kinds: BTreeMap<NoteId, OutputKind>,
    tx_heights: BTreeMap<TxId, u64>,
}

impl Chain {
    /// Builds a genesis block issuing the given allocations.
    pub fn genesis(params: ChainParams, seed: u64, allocations: &[(Address, Amount)]) -> Chain {
        let outputs = allocations
            .iter()
            .map(|(a, v)| TxOutput { owner: *a, value: *v, kind: OutputKind::Issuance })
            .collect::<Vec<_>>();
        // Seed-dependent pseudo-input keeps genesis ids distinct across scenarios.
        let seed_note = Digest::of("genesis-seed", &[&seed.to_le_bytes()]);
        let coinbase = Transaction::new(vec![seed_note], outputs, vec![]);
        let header =
            BlockHeader::mine(0, Digest::ZERO, payload_digest(std::slice::from_ref(&coinbase)), params.difficulty_bits);
        let mut chain = Chain {
            params,
            blocks: Vec::new(),
            unspent: BTreeMap::new(),
            spent: BTreeSet::new(),
            kinds: BTreeMap::new(),
            tx_heights: BTreeMap::new(),
        };
        chain.index_block(Block { header, txs: vec![coinbase] }, true);
        chain
    }

    fn index_block(&mut self, block: Block, genesis: bool) {
        let height = block.header.height;
        for tx in &block.txs {
            if !genesis {
                for i in &tx.inputs {
                    self.unspent.remove(i);
                    self.spent.insert(*i);
                }
            }
            for (note, kind) in tx.notes() {
                self.kinds.insert(note.note_id, kind);
                self.unspent.insert(note.note_id, note);
            }
            self.tx_heights.insert(tx.tx_id, height);
        }
        self.blocks.push(block);
    }

    pub fn params(&self) -> ChainParams {
        self.params
    }

    /// This chain cut back to `height` (a fork point).
    pub fn truncated(&self, height: u64) -> Chain {
        let mut c = Chain {
            params: self.params,
            blocks: Vec::new(),
            unspent: BTreeMap::new(),
            spent: BTreeSet::new(),
            kinds: BTreeMap::new(),
            tx_heights: BTreeMap::new(),
        };
        for b in self.blocks.iter().take(height as usize + 1) {
            c.index_block(b.clone(), b.header.height == 0);
        }
        c
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip(&self) -> &BlockHeader {
        &self.blocks.last().expect("chain has genesis").header
    }

    pub fn tip_height(&self) -> u64 {
        self.tip().height
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn headers(&self) -> Vec<BlockHeader> {
        self.blocks.iter().map(|b| b.header).collect()
    }

    /// Headers from `from_height` (clamped) to the tip.
    pub fn headers_from(&self, from_height: u64) -> Vec<BlockHeader> {
        let start = (from_height as usize).min(self.blocks.len());
        self.blocks[start..].iter().map(|b| b.header).collect()
    }

    /// The last `n` headers.
    pub fn header_suffix(&self, n: usize) -> Vec<BlockHeader> {
        let start = self.blocks.len().saturating_sub(n);
        self.blocks[start..].iter().map(|b| b.header).collect()
    }

    pub fn block_at(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }

    pub fn note(&self, id: &NoteId) -> Option<&Note> {
        self.unspent.get(id)
    }

    pub fn is_spent(&self, id: &NoteId) -> bool {
        self.spent.contains(id)
    }

    pub fn contains_tx(&self, tx_id: &TxId) -> bool {
        self.tx_heights.contains_key(tx_id)
    }

    pub fn tx_height(&self, tx_id: &TxId) -> Option<u64> {
        self.tx_heights.get(tx_id).copied()
    }

    pub fn find_tx(&self, tx_id: &TxId) -> Option<&Transaction> {
        let h = self.tx_height(tx_id)?;
        self.blocks[h as usize].txs.iter().find(|t| &t.tx_id == tx_id)
    }

    pub fn unspent_notes(&self) -> impl Iterator<Item = &Note> {
        self.unspent.values()
    }

    pub fn unspent_at(&self, address: &Address) -> Vec<Note> {
        self.unspent.values().filter(|n| &n.owner == address).copied().collect()
    }

    pub fn output_kind(&self, id: &NoteId) -> Option<OutputKind> {
        self.kinds.get(id).copied()
    }

    /// 0 if absent, else 1 + (tip height − inclusion height).
    pub fn confirmations(&self, tx_id: &TxId) -> u64 {
        match self.tx_height(tx_id) {
            Some(h) => 1 + self.tip_height() - h,
            None => 0,
        }
    }

    /// Validates `tx` against this chain plus notes already consumed by
    /// earlier transactions in the same candidate block.
    pub fn validate_tx(&self, tx: &Transaction, pending_spent: &BTreeSet<NoteId>) -> Result<(), TxFault> {
        self.validate_in_block(tx, pending_spent, &BTreeMap::new())
    }

    fn validate_in_block(
        &self,
        tx: &Transaction,
        spent_in_block: &BTreeSet<NoteId>,
        created_in_block: &BTreeMap<NoteId, Note>,
    ) -> Result<(), TxFault> {
        if !tx.id_matches() {
            return Err(TxFault::BadId);
        }
        if self.contains_tx(&tx.tx_id) {
            return Err(TxFault::AlreadyIncluded);
        }
        if tx.inputs.is_empty() {
            return Err(TxFault::NoInputs);
        }
        if tx.outputs.iter().any(|o| o.kind == OutputKind::Issuance) {
            return Err(TxFault::Issuance);
        }
        let mut seen = BTreeSet::new();
        let mut total_in = Amount::ZERO;
        for i in &tx.inputs {
            if self.spent.contains(i) || spent_in_block.contains(i) || !seen.insert(*i) {
                return Err(TxFault::DoubleSpend(*i));
            }
            let note = self.unspent.get(i).or_else(|| created_in_block.get(i)).ok_or(TxFault::MissingInput(*i))?;
            if !tx.witnesses.iter().any(|k| k.address() == note.owner) {
                return Err(TxFault::Unauthorized(*i));
            }
            total_in += note.value;
        }
        let total_out = tx.output_total();
        if total_in != total_out {
            return Err(TxFault::Unbalanced { inputs: total_in, outputs: total_out });
        }
        Ok(())
    }

    /// Validates a candidate block's transactions in order.
    fn validate_block(&self, txs: &[Transaction]) -> Result<(), LedgerError> {
        let mut spent = BTreeSet::new();
        let mut created = BTreeMap::new();
        let mut ids = BTreeSet::new();
        for tx in txs {
            let invalid = |cause| LedgerError::InvalidTransaction { tx_id: tx.tx_id, cause };
            if !ids.insert(tx.tx_id) {
                return Err(invalid(TxFault::AlreadyIncluded));
            }
            self.validate_in_block(tx, &spent, &created).map_err(invalid)?;
            spent.extend(tx.inputs.iter().copied());
            for (n, _) in tx.notes() {
                created.insert(n.note_id, n);
            }
        }
        Ok(())
    }

    /// Appends a mined block with the given transactions, returning the new chain.
    pub fn append_block(&self, txs: Vec<Transaction>) -> Result<Chain, LedgerError> {
        let mut next = self.clone();
        next.push_block(txs)?;
        Ok(next)
    }

    /// In-place form of [`Chain::append_block`].
    pub fn push_block(&mut self, txs: Vec<Transaction>) -> Result<&Block, LedgerError> {
        self.validate_block(&txs)?;
        let parent = *self.tip();
        let header =
            BlockHeader::mine(parent.height + 1, parent.own_digest, payload_digest(&txs), self.params.difficulty_bits);
        self.index_block(Block { header, txs }, false);
        Ok(self.blocks.last().expect("just pushed"))
    }

    /// Balance per address over all unspent notes.
    pub fn balances(&self) -> BTreeMap<Address, Amount> {
        let mut out = BTreeMap::new();
        for n in self.unspent.values() {
            *out.entry(n.owner).or_insert(Amount::ZERO) += n.value;
        }
        out
    }

    pub fn genesis_issuance(&self) -> Amount {
        self.blocks[0].txs.iter().map(|t| t.output_total()).sum()
    }

    /// Sum of all burn outputs ever created.
    pub fn burned_total(&self) -> Amount {
        self.blocks
            .iter()
            .flat_map(|b| b.txs.iter())
            .flat_map(|t| t.outputs.iter())
            .filter(|o| o.kind == OutputKind::Burn)
            .map(|o| o.value)
            .sum()
    }

    /// Non-party observers learn only that the tx exists and how many outputs
    /// it has; a viewer holding keys sees its own outputs.
    pub fn observe_tx(&self, tx_id: &TxId, viewer_keys: &[Address]) -> Option<TxView> {
        let tx = self.find_tx(tx_id)?;
        let own = tx.notes().filter(|(n, _)| viewer_keys.contains(&n.owner)).collect();
        Some(TxView {
            tx_id: *tx_id,
            height: self.tx_height(tx_id).unwrap_or(0),
            output_count: tx.outputs.len(),
            own_outputs: own,
        })
    }

    /// Line-oriented dump; see `docs/formats.md`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("chain v1 difficulty={}\n", self.params.difficulty_bits));
        for b in &self.blocks {
            let h = &b.header;
            s.push_str(&format!(
                "block {} {} {} {} {} {}\n",
                h.height,
                h.prev_digest.to_hex(),
                h.payload_digest.to_hex(),
                h.pow_nonce,
                h.own_digest.to_hex(),
                b.txs.len()
            ));
            for t in &b.txs {
                let ins = t.inputs.iter().map(|i| i.to_hex()).collect::<Vec<_>>().join(",");
                let outs = t
                    .outputs
                    .iter()
                    .map(|o| format!("{}:{}:{}", o.kind.as_str(), o.owner.0.to_hex(), o.value.0))
                    .collect::<Vec<_>>()
                    .join(",");
                let wit = t.witnesses.iter().map(|k| k.0.to_hex()).collect::<Vec<_>>().join(",");
                s.push_str(&format!("tx {} in={} out={} wit={}\n", t.tx_id.to_hex(), ins, outs, wit));
            }
        }
        s
    }

    /// Rebuilds a chain from [`Chain::dump`] output, re-validating every block.
    pub fn restore(text: &str) -> Result<Chain, LedgerError> {
        let perr = |line: usize, msg: &str| LedgerError::Parse { line, msg: msg.to_string() };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (ln, first) = lines.next().ok_or_else(|| perr(1, "empty dump"))?;
        let difficulty_bits = first
            .strip_prefix("chain v1 difficulty=")
            .and_then(|d| d.trim().parse::<u32>().ok())
            .ok_or_else(|| perr(ln + 1, "bad preamble"))?;
        let params = ChainParams { difficulty_bits };

        let mut parsed: Vec<(BlockHeader, Vec<Transaction>)> = Vec::new();
        let mut expect_txs = 0usize;
        for (ln, line) in lines {
            let ln = ln + 1;
            let mut parts = line.split(' ');
            match parts.next() {
                Some("block") => {
                    if expect_txs != 0 {
                        return Err(perr(ln, "missing tx records"));
                    }
                    let f: Vec<&str> = parts.collect();
                    if f.len() != 6 {
                        return Err(perr(ln, "block record needs 6 fields"));
                    }
                    let num = |s: &str| s.parse::<u64>().map_err(|_| perr(ln, "bad integer"));
                    let dig = |s: &str| Digest::from_hex(s).ok_or_else(|| perr(ln, "bad digest"));
                    let header = BlockHeader {
                        height: num(f[0])?,
                        prev_digest: dig(f[1])?,
                        payload_digest: dig(f[2])?,
                        pow_nonce: num(f[3])?,
                        own_digest: dig(f[4])?,
                    };
                    expect_txs = num(f[5])? as usize;
                    parsed.push((header, Vec::new()));
                }
                Some("tx") => {
                    let Some(last) = parsed.last_mut() else {
                        return Err(perr(ln, "tx before block"));
                    };
                    if expect_txs == 0 {
                        return Err(perr(ln, "unexpected tx record"));
                    }
                    expect_txs -= 1;
                    let f: Vec<&str> = parts.collect();
                    if f.len() != 4 {
                        return Err(perr(ln, "tx record needs 4 fields"));
                    }
                    let tx_id = Digest::from_hex(f[0]).ok_or_else(|| perr(ln, "bad tx id"))?;
                    let list = |field: &str, prefix: &str| -> Result<Vec<String>, LedgerError> {
                        let body = field.strip_prefix(prefix).ok_or_else(|| perr(ln, "bad field prefix"))?;
                        Ok(if body.is_empty() { vec![] } else { body.split(',').map(str::to_string).collect() })
                    };
                    let inputs = list(f[1], "in=")?
                        .iter()
                        .map(|s| Digest::from_hex(s).ok_or_else(|| perr(ln, "bad input")))
                        .collect::<Result<Vec<_>, _>>()?;
                    let outputs = list(f[2], "out=")?
                        .iter()
                        .map(|s| {
                            let p: Vec<&str> = s.split(':').collect();
                            if p.len() != 3 {
                                return Err(perr(ln, "bad output"));
                            }
                            Ok(TxOutput {
                                kind: OutputKind::parse(p[0]).ok_or_else(|| perr(ln, "bad output kind"))?,
                                owner: Address(Digest::from_hex(p[1]).ok_or_else(|| perr(ln, "bad owner"))?),
                                value: Amount(p[2].parse().map_err(|_| perr(ln, "bad value"))?),
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    let witnesses = list(f[3], "wit=")?
                        .iter()
                        .map(|s| Digest::from_hex(s).map(SpendKey).ok_or_else(|| perr(ln, "bad witness")))
                        .collect::<Result<Vec<_>, _>>()?;
                    let tx = Transaction { tx_id, inputs, outputs, witnesses };
                    if !tx.id_matches() {
                        return Err(perr(ln, "tx id mismatch"));
                    }
                    last.1.push(tx);
                }
                _ => return Err(perr(ln, "unknown record")),
            }
        }
        if expect_txs != 0 {
            return Err(perr(text.lines().count(), "truncated tx list"));
        }

        let headers: Vec<BlockHeader> = parsed.iter().map(|(h, _)| *h).collect();
        verify_headers_detailed(&headers, difficulty_bits).map_err(LedgerError::MalformedChain)?;
        let mut iter = parsed.into_iter();
        let (gh, gtxs) = iter.next().ok_or_else(|| perr(1, "no genesis"))?;
        if gh.height != 0 || payload_digest(&gtxs) != gh.payload_digest {
            return Err(LedgerError::MalformedChain(HeaderFault { index: 0, kind: HeaderFaultKind::DigestMismatch }));
        }
        let mut chain = Chain {
            params,
            blocks: Vec::new(),
            unspent: BTreeMap::new(),
            spent: BTreeSet::new(),
            kinds: BTreeMap::new(),
            tx_heights: BTreeMap::new(),
        };
        chain.index_block(Block { header: gh, txs: gtxs }, true);
        for (i, (h, txs)) in iter.enumerate() {
            if payload_digest(&txs) != h.payload_digest {
                return Err(LedgerError::MalformedChain(HeaderFault {
                    index: i + 1,
                    kind: HeaderFaultKind::DigestMismatch,
                }));
            }
            chain.validate_block(&txs)?;
            chain.index_block(Block { header: h, txs }, false);
        }
        Ok(chain)
    }
}

/// What a viewer learns about one transaction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxView {
    pub tx_id: TxId,
    pub height: u64,
    pub output_count: usize,
    pub own_outputs: Vec<(Note, OutputKind)>,
}

/// Why a submitted transaction never made it into a block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub tx_id: TxId,
    pub cause: TxFault,
}

/// A chain plus mempool. Submissions are deduplicated by tx id; transactions
/// whose inputs are not yet known wait in the mempool until they are.
#[derive(Clone, Debug)]
pub struct Ledger {
    chain: Chain,
    mempool: Vec<Transaction>,
    queued: BTreeSet<TxId>,
    rejected: Vec<Rejection>,
}

impl Ledger {
    pub fn new(chain: Chain) -> Self {
        Ledger { chain, mempool: Vec::new(), queued: BTreeSet::new(), rejected: Vec::new() }
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn mempool(&self) -> &[Transaction] {
        &self.mempool
    }

    pub fn rejected(&self) -> &[Rejection] {
        &self.rejected
    }

    /// Queues a transaction for the next block. Re-submitting a known tx is a no-op.
    pub fn submit_tx(&mut self, tx: Transaction) -> Result<TxId, LedgerError> {
        let tx_id = tx.tx_id;
        if self.chain.contains_tx(&tx_id) || self.queued.contains(&tx_id) {
            return Ok(tx_id);
        }
        let invalid = |cause| LedgerError::InvalidTransaction { tx_id, cause };
        match self.chain.validate_tx(&tx, &BTreeSet::new()) {
            Ok(()) | Err(TxFault::MissingInput(_)) => {}
            Err(cause) => return Err(invalid(cause)),
        }
        // Outputs must balance whenever the inputs are known; for orphans the
        // check runs at inclusion time.
        self.queued.insert(tx_id);
        self.mempool.push(tx);
        Ok(tx_id)
    }

    /// Mines one block from the mempool. Transactions are taken in arrival
    /// order, repeatedly, so children of earlier transactions in the same
    /// round are included. Double spends are rejected; orphans stay queued.
    pub fn mine(&mut self) -> &Block {
        let mut included: Vec<Transaction> = Vec::new();
        let mut spent = BTreeSet::new();
        let mut created = BTreeMap::new();
        let mut remaining = std::mem::take(&mut self.mempool);
        loop {
            let mut progress = false;
            let mut keep = Vec::new();
            for tx in remaining {
                match self.chain.validate_in_block(&tx, &spent, &created) {
                    Ok(()) => {
                        spent.extend(tx.inputs.iter().copied());
                        for (n, _) in tx.notes() {
                            created.insert(n.note_id, n);
                        }
                        included.push(tx);
                        progress = true;
                    }
                    Err(TxFault::MissingInput(_)) => keep.push(tx),
                    Err(cause) => {
                        self.queued.remove(&tx.tx_id);
                        self.rejected.push(Rejection { tx_id: tx.tx_id, cause });
                    }
                }
            }
            remaining = keep;
            if !progress || remaining.is_empty() {
                break;
            }
        }
        self.mempool = remaining;
        for t in &included {
            self.queued.remove(&t.tx_id);
        }
        self.chain.push_block(included).expect("staged validation guarantees a valid block")
    }

    /// Notes that would be unspent if everything currently minable were mined.
    /// Orphans and their descendants contribute nothing.
    pub fn live_notes(&self) -> BTreeSet<NoteId> {
        let mut spent = BTreeSet::new();
        let mut created = BTreeMap::new();
        let mut remaining: Vec<&Transaction> = self.mempool.iter().collect();
        loop {
            let before = remaining.len();
            remaining.retain(|tx| match self.chain.validate_in_block(tx, &spent, &created) {
                Ok(()) => {
                    spent.extend(tx.inputs.iter().copied());
                    for (n, _) in tx.notes() {
                        created.insert(n.note_id, n);
                    }
                    false
                }
                Err(_) => true,
            });
            if remaining.len() == before || remaining.is_empty() {
                break;
            }
        }
        self.chain.unspent.keys().chain(created.keys()).filter(|n| !spent.contains(*n)).copied().collect()
    }

    /// Drops mempool entries, recording them as orphans.
    pub fn flush_orphans(&mut self) -> Vec<TxId> {
        let ids: Vec<TxId> = self.mempool.drain(..).map(|t| t.tx_id).collect();
        for id in &ids {
            self.queued.remove(id);
        }
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(n: u64) -> SpendKey {
        SpendKey::derive("t", n)
    }

    fn genesis_with(alloc: &[(u64, u64)]) -> Chain {
        let a: Vec<_> = alloc.iter().map(|(k, v)| (key(*k).address(), Amount::coins(*v))).collect();
        Chain::genesis(ChainParams::default(), 7, &a)
    }

    fn genesis_note(c: &Chain, idx: usize) -> Note {
        c.blocks()[0].txs[0].output_note(idx).unwrap()
    }

    fn pay(from: &Note, k: SpendKey, outs: &[(Address, u64, OutputKind)]) -> Transaction {
        Transaction::new(
            vec![from.note_id],
            outs.iter().map(|(a, v, kind)| TxOutput { owner: *a, value: Amount(*v), kind: *kind }).collect(),
            vec![k],
        )
    }

    #[test]
    fn empty_block_on_genesis() {
        let c = genesis_with(&[(1, 10)]);
        let c2 = c.append_block(vec![]).unwrap();
        assert_eq!(c2.tip_height(), 1);
        assert!(verify_headers(&c2.headers(), 12));
    }

    #[test]
    fn split_conserves_value() {
        let c = genesis_with(&[(1, 100)]);
        let n = genesis_note(&c, 0);
        let tx = pay(
            &n,
            key(1),
            &[(key(2).address(), 60 * COIN, OutputKind::Funding), (key(3).address(), 40 * COIN, OutputKind::Change)],
        );
        let c2 = c.append_block(vec![tx.clone()]).unwrap();
        assert!(c2.contains_tx(&tx.tx_id));
        assert_eq!(c2.balances().values().copied().sum::<Amount>(), Amount::coins(100));
    }

    #[test]
    fn double_spend_in_one_block_rejected() {
        let c = genesis_with(&[(1, 100)]);
        let n = genesis_note(&c, 0);
        let a = pay(&n, key(1), &[(key(2).address(), 100 * COIN, OutputKind::Reward)]);
        let b = pay(&n, key(1), &[(key(3).address(), 100 * COIN, OutputKind::Reward)]);
        let err = c.append_block(vec![a, b.clone()]).unwrap_err();
        assert_eq!(err, LedgerError::InvalidTransaction { tx_id: b.tx_id, cause: TxFault::DoubleSpend(n.note_id) });
    }

    #[test]
    fn unbalanced_rejected() {
        let c = genesis_with(&[(1, 100)]);
        let n = genesis_note(&c, 0);
        let a = pay(&n, key(1), &[(key(2).address(), 99 * COIN, OutputKind::Reward)]);
        assert!(matches!(
            c.append_block(vec![a]),
            Err(LedgerError::InvalidTransaction { cause: TxFault::Unbalanced { .. }, .. })
        ));
    }

    #[test]
    fn confirmations_count() {
        let c = genesis_with(&[(1, 100)]);
        let n = genesis_note(&c, 0);
        let tx = pay(&n, key(1), &[(key(2).address(), 100 * COIN, OutputKind::Funding)]);
        let mut c = c.append_block(vec![tx.clone()]).unwrap();
        assert_eq!(c.confirmations(&tx.tx_id), 1);
        for _ in 0..5 {
            c.push_block(vec![]).unwrap();
        }
        assert_eq!(c.confirmations(&tx.tx_id), 6);
        assert_eq!(c.confirmations(&Digest::ZERO), 0);
    }

    #[test]
    fn consistency_basic_cases() {
        let g = genesis_with(&[(1, 1)]);
        let b1 = g.append_block(vec![]).unwrap();
        let b2 = b1.append_block(vec![]).unwrap();
        let n = genesis_note(&g, 0);
        let fork = g.append_block(vec![pay(&n, key(1), &[(key(9).address(), COIN, OutputKind::Change)])]).unwrap();
        let d = 12;
        assert!(check_consistency(&b1.headers(), &b1.headers(), d).unwrap());
        assert!(check_consistency(&b2.headers(), &b1.headers(), d).unwrap());
        assert!(check_consistency(&b1.headers(), &b2.headers(), d).unwrap());
        assert!(!check_consistency(&b2.headers(), &fork.headers(), d).unwrap());
    }

    #[test]
    fn consistency_on_suffixes_aligns_by_height() {
        let mut c = genesis_with(&[(1, 1)]);
        for _ in 0..8 {
            c.push_block(vec![]).unwrap();
        }
        let renter = c.headers_from(3)[..3].to_vec(); // heights 3..=5
        let owner = c.headers_from(4); // 4..=8
        assert!(check_consistency(&owner, &renter, 12).unwrap());
        let far = c.headers_from(7);
        let early = c.headers_from(1)[..2].to_vec();
        assert!(!check_consistency(&far, &early, 12).unwrap());
    }

    #[test]
    fn consistency_rejects_malformed() {
        let c = genesis_with(&[(1, 1)]).append_block(vec![]).unwrap();
        let mut bad = c.headers();
        bad[1].pow_nonce ^= 1;
        assert!(matches!(check_consistency(&bad, &c.headers(), 12), Err(LedgerError::MalformedChain(_))));
    }

    #[test]
    fn broken_link_detected() {
        let mut c = genesis_with(&[(1, 1)]);
        for _ in 0..3 {
            c.push_block(vec![]).unwrap();
        }
        let mut h = c.headers();
        h[2].prev_digest = Digest::of("x", &[]);
        let fault = verify_headers_detailed(&h, 12).unwrap_err();
        assert_eq!(fault.index, 2);
    }

    #[test]
    fn resubmission_is_idempotent() {
        let mut l = Ledger::new(genesis_with(&[(1, 100)]));
        let n = genesis_note(l.chain(), 0);
        let tx = pay(&n, key(1), &[(key(2).address(), 100 * COIN, OutputKind::Reward)]);
        l.submit_tx(tx.clone()).unwrap();
        l.submit_tx(tx.clone()).unwrap();
        l.mine();
        l.submit_tx(tx.clone()).unwrap();
        l.mine();
        let count = l.chain().blocks().iter().flat_map(|b| &b.txs).filter(|t| t.tx_id == tx.tx_id).count();
        assert_eq!(count, 1);
    }

    #[test]
    fn burned_output_cannot_be_spent() {
        let mut l = Ledger::new(genesis_with(&[(1, 100)]));
        let n = genesis_note(l.chain(), 0);
        let burn = Address::burn("deposit");
        let tx = pay(&n, key(1), &[(burn, 100 * COIN, OutputKind::Burn)]);
        l.submit_tx(tx.clone()).unwrap();
        l.mine();
        let burned = tx.output_note(0).unwrap();
        // Every key this test knows about fails to authorize the burn note.
        for k in 0..64 {
            let spend = pay(&burned, key(k), &[(key(k).address(), 100 * COIN, OutputKind::Change)]);
            assert!(matches!(
                l.submit_tx(spend),
                Err(LedgerError::InvalidTransaction { cause: TxFault::Unauthorized(_), .. })
            ));
        }
        assert_eq!(l.chain().burned_total(), Amount::coins(100));
    }

    #[test]
    fn orphan_waits_for_parent() {
        let mut l = Ledger::new(genesis_with(&[(1, 100)]));
        let n = genesis_note(l.chain(), 0);
        let parent = pay(&n, key(1), &[(key(2).address(), 100 * COIN, OutputKind::Change)]);
        let child = pay(&parent.output_note(0).unwrap(), key(2), &[(key(3).address(), 100 * COIN, OutputKind::Reward)]);
        l.submit_tx(child.clone()).unwrap();
        l.mine();
        assert!(!l.chain().contains_tx(&child.tx_id));
        l.submit_tx(parent.clone()).unwrap();
        l.mine();
        assert!(l.chain().contains_tx(&parent.tx_id));
        assert!(l.chain().contains_tx(&child.tx_id));
    }

    #[test]
    fn conflicting_mempool_tx_rejected_at_inclusion() {
        let mut l = Ledger::new(genesis_with(&[(1, 100)]));
        let n = genesis_note(l.chain(), 0);
        let a = pay(&n, key(1), &[(key(2).address(), 100 * COIN, OutputKind::Reward)]);
        let b = pay(&n, key(1), &[(key(3).address(), 100 * COIN, OutputKind::Reward)]);
        l.submit_tx(a.clone()).unwrap();
        l.submit_tx(b.clone()).unwrap();
        l.mine();
        assert!(l.chain().contains_tx(&a.tx_id));
        assert_eq!(l.rejected().len(), 1);
        assert_eq!(l.rejected()[0].tx_id, b.tx_id);
    }

    #[test]
    fn observer_sees_only_counts() {
        let mut l = Ledger::new(genesis_with(&[(1, 100)]));
        let n = genesis_note(l.chain(), 0);
        let tx = pay(
            &n,
            key(1),
            &[(key(2).address(), 70 * COIN, OutputKind::Reward), (key(3).address(), 30 * COIN, OutputKind::Change)],
        );
        l.submit_tx(tx.clone()).unwrap();
        l.mine();
        let stranger = l.chain().observe_tx(&tx.tx_id, &[]).unwrap();
        assert_eq!(stranger.output_count, 2);
        assert!(stranger.own_outputs.is_empty());
        let party = l.chain().observe_tx(&tx.tx_id, &[key(2).address()]).unwrap();
        assert_eq!(party.own_outputs.len(), 1);
        assert_eq!(party.own_outputs[0].0.value, Amount::coins(70));
    }

    #[test]
    fn dump_restore_round_trip() {
        let mut l = Ledger::new(genesis_with(&[(1, 100), (2, 5)]));
        let n = genesis_note(l.chain(), 0);
        l.submit_tx(pay(
            &n,
            key(1),
            &[(key(2).address(), 60 * COIN, OutputKind::Reward), (Address::burn("b"), 40 * COIN, OutputKind::Burn)],
        ))
        .unwrap();
        l.mine();
        l.mine();
        let text = l.chain().dump();
        let back = Chain::restore(&text).unwrap();
        assert_eq!(back.headers(), l.chain().headers());
        assert_eq!(back.balances(), l.chain().balances());
        assert_eq!(back.dump(), text);
    }

    #[test]
    fn restore_rejects_tampered_value() {
        let mut l = Ledger::new(genesis_with(&[(1, 100)]));
        let n = genesis_note(l.chain(), 0);
        l.submit_tx(pay(&n, key(1), &[(key(2).address(), 100 * COIN, OutputKind::Reward)])).unwrap();
        l.mine();
        let text = l.chain().dump().replace(&format!(":{}", 100 * COIN), &format!(":{}", 101 * COIN));
        assert!(Chain::restore(&text).is_err());
    }

    #[test]
    fn amount_formatting_and_ppm() {
        assert_eq!(Amount::from_coins_f64(65.5).unwrap().to_string(), "65.50000000");
        assert_eq!(Amount::coins(5).scale_ppm(100_000), Amount(COIN / 2));
        assert!(Amount::from_coins_f64(-1.0).is_none());
    }
}
