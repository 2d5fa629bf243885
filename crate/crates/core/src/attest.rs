//! Mock attestation: sessions are established only when the target enclave's
//! measurement equals the expected one. Enclaves enlisted under an interface
//! enclave exchange public keys once; payment enclaves escrow their spend
//! keys with the interface for crash recovery.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Digest, SpendKey};
use crate::simnet::{Endpoint, NetControl, SimDuration, SimTime};

/// Digest of an enclave's code identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Measurement(pub Digest);

impl Measurement {
    pub fn of_code(code: &str) -> Measurement {
        Measurement(Digest::of("measurement", &[code.as_bytes()]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EnclaveKind {
    Interface,
    Service,
    Payment,
}

impl EnclaveKind {
    pub fn genuine_code(self) -> &'static str {
        match self {
            EnclaveKind::Interface => "interface-enclave-v1",
            EnclaveKind::Service => "service-enclave-v1",
            EnclaveKind::Payment => "payment-enclave-v1",
        }
    }

    pub fn genuine_measurement(self) -> Measurement {
        Measurement::of_code(self.genuine_code())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnclaveIdentity {
    pub enclave_id: Endpoint,
    pub kind: EnclaveKind,
    pub measurement: Measurement,
    pub public_key: Digest,
    /// The infrastructure maintainer whose network carries this enclave's traffic.
    pub host_id: u32,
}

impl EnclaveIdentity {
    pub fn genuine(enclave_id: Endpoint, kind: EnclaveKind, host_id: u32) -> Self {
        Self::with_code(enclave_id, kind, host_id, kind.genuine_code())
    }

    pub fn with_code(enclave_id: Endpoint, kind: EnclaveKind, host_id: u32, code: &str) -> Self {
        EnclaveIdentity {
            enclave_id,
            kind,
            measurement: Measurement::of_code(code),
            public_key: Digest::of("enclave-pk", &[enclave_id.to_string().as_bytes(), code.as_bytes()]),
            host_id,
        }
    }
}

/// Simulated machine identity; P2P registration binds one owner per CPU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CpuIdentity(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: u64,
    pub initiator: Endpoint,
    pub responder: Endpoint,
    pub established: bool,
}

impl Session {
    /// Wraps secret material for transfer over this session.
    pub fn seal<T>(&self, value: T) -> Sealed<T> {
        Sealed { session_id: self.session_id, inner: value }
    }
}

/// Secret material bound to an attested session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sealed<T> {
    session_id: u64,
    inner: T,
}

impl<T> Sealed<T> {
    pub fn session_id(&self) -> u64 {
        self.session_id
    }

    /// Only the session endpoints (enclaves) call this.
    pub fn open(&self) -> &T {
        &self.inner
    }

    pub fn into_inner(self) -> T {
        self.inner
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enrollment {
    pub interface: Endpoint,
    pub enclave: Endpoint,
    pub kind: EnclaveKind,
    pub public_key: Digest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackupReceipt {
    pub payment: Endpoint,
    pub interface: Endpoint,
    pub key_address: crate::ledger::Address,
}

#[derive(Clone, Copy, Debug)]
struct KeyBackup {
    interface: Endpoint,
    key: SpendKey,
    swept: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MeshError {
    #[error("measurement mismatch for {enclave}")]
    MeasurementMismatch { enclave: Endpoint },
    #[error("{0} unreachable")]
    Unreachable(Endpoint),
    #[error("{0} is not enlisted")]
    NotEnlisted(Endpoint),
    #[error("recovery refused: {0} is alive")]
    RecoveryRefused(Endpoint),
    #[error("keys of {0} already recovered")]
    AlreadyRecovered(Endpoint),
    #[error("unknown enclave {0}")]
    UnknownEnclave(Endpoint),
}

/// True once no heartbeat has been seen for a full liveness window.
pub fn observed_dead(last_seen: Option<SimTime>, now: SimTime, window: SimDuration) -> bool {
    match last_seen {
        Some(t) => now.since(t) >= window,
        None => now.0 >= window.0,
    }
}

/// Registry of enclaves, sessions, enlistments and key backups.
#[derive(Clone, Debug, Default)]
pub struct Mesh {
    genuine: BTreeSet<Measurement>,
    enclaves: BTreeMap<Endpoint, EnclaveIdentity>,
    sessions: BTreeMap<u64, Session>,
    next_session: u64,
    registry: BTreeMap<Endpoint, BTreeMap<Endpoint, Enrollment>>,
    backups: BTreeMap<Endpoint, KeyBackup>,
}

impl Mesh {
    pub fn new(genuine: impl IntoIterator<Item = Measurement>) -> Self {
        Mesh { genuine: genuine.into_iter().collect(), ..Default::default() }
    }

    /// A mesh whose genuine set is the three stock enclave builds.
    pub fn with_stock_measurements() -> Self {
        Self::new(
            [EnclaveKind::Interface, EnclaveKind::Service, EnclaveKind::Payment].map(EnclaveKind::genuine_measurement),
        )
    }

    pub fn add_enclave(&mut self, e: EnclaveIdentity) {
        self.enclaves.insert(e.enclave_id, e);
    }

    pub fn enclave(&self, id: Endpoint) -> Option<&EnclaveIdentity> {
        self.enclaves.get(&id)
    }

    pub fn is_genuine(&self, m: &Measurement) -> bool {
        self.genuine.contains(m)
    }

    /// Establishes a session with `target` iff its measurement is `expected`.
    pub fn attest(
        &mut self,
        initiator: Endpoint,
        expected: Measurement,
        target: Endpoint,
        net: &NetControl,
    ) -> Result<Session, MeshError> {
        let ident = self.enclaves.get(&target).ok_or(MeshError::UnknownEnclave(target))?;
        if net.is_dead(target) || net.handshake_blocked(target) {
            return Err(MeshError::Unreachable(target));
        }
        if ident.measurement != expected {
            return Err(MeshError::MeasurementMismatch { enclave: target });
        }
        self.next_session += 1;
        let s = Session { session_id: self.next_session, initiator, responder: target, established: true };
        self.sessions.insert(s.session_id, s);
        Ok(s)
    }

    pub fn session(&self, id: u64) -> Option<&Session> {
        self.sessions.get(&id)
    }

    pub fn is_established(&self, id: u64) -> bool {
        self.sessions.get(&id).is_some_and(|s| s.established)
    }

    /// Mutual attestation between an interface enclave and another enclave.
    pub fn enlist(&mut self, interface: Endpoint, other: Endpoint, net: &NetControl) -> Result<Enrollment, MeshError> {
        if let Some(e) = self.registry.get(&interface).and_then(|r| r.get(&other)) {
            return Ok(e.clone());
        }
        let iface = self.enclaves.get(&interface).ok_or(MeshError::UnknownEnclave(interface))?.clone();
        let peer = self.enclaves.get(&other).ok_or(MeshError::UnknownEnclave(other))?.clone();
        if !self.is_genuine(&iface.measurement) {
            return Err(MeshError::MeasurementMismatch { enclave: interface });
        }
        if !self.is_genuine(&peer.measurement) {
            return Err(MeshError::MeasurementMismatch { enclave: other });
        }
        self.attest(interface, peer.measurement, other, net)?;
        self.attest(other, iface.measurement, interface, net)?;
        let e = Enrollment { interface, enclave: other, kind: peer.kind, public_key: peer.public_key };
        self.registry.entry(interface).or_default().insert(other, e.clone());
        Ok(e)
    }

    pub fn is_enlisted(&self, interface: Endpoint, other: Endpoint) -> bool {
        self.registry.get(&interface).is_some_and(|r| r.contains_key(&other))
    }

    pub fn enlisted(&self, interface: Endpoint) -> Vec<&Enrollment> {
        self.registry.get(&interface).map(|r| r.values().collect()).unwrap_or_default()
    }

    /// Every measurement currently in any enlistment registry.
    pub fn registry_measurements(&self) -> Vec<Measurement> {
        self.registry
            .values()
            .flat_map(|r| r.keys())
            .filter_map(|e| self.enclaves.get(e).map(|i| i.measurement))
            .collect()
    }

    pub fn backup_keys(
        &mut self,
        payment: Endpoint,
        interface: Endpoint,
        key: SpendKey,
    ) -> Result<BackupReceipt, MeshError> {
        if !self.is_enlisted(interface, payment) {
            return Err(MeshError::NotEnlisted(payment));
        }
        self.backups.insert(payment, KeyBackup { interface, key, swept: false });
        Ok(BackupReceipt { payment, interface, key_address: key.address() })
    }

    pub fn has_backup(&self, payment: Endpoint) -> bool {
        self.backups.contains_key(&payment)
    }

    /// Releases a payment enclave's escrowed key to its interface enclave,
    /// once, and only if the enclave has been observed dead.
    pub fn recover_key(
        &mut self,
        payment: Endpoint,
        interface: Endpoint,
        observed_dead: bool,
    ) -> Result<SpendKey, MeshError> {
        let b = self.backups.get_mut(&payment).ok_or(MeshError::NotEnlisted(payment))?;
        if b.interface != interface {
            return Err(MeshError::NotEnlisted(payment));
        }
        if !observed_dead {
            return Err(MeshError::RecoveryRefused(payment));
        }
        if b.swept {
            return Err(MeshError::AlreadyRecovered(payment));
        }
        b.swept = true;
        Ok(b.key)
    }

    pub fn is_swept(&self, payment: Endpoint) -> bool {
        self.backups.get(&payment).is_some_and(|b| b.swept)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::Actor;

    fn mesh() -> Mesh {
        let mut m = Mesh::with_stock_measurements();
        m.add_enclave(EnclaveIdentity::genuine(Endpoint::Interface(0), EnclaveKind::Interface, 0));
        m.add_enclave(EnclaveIdentity::genuine(Endpoint::ServiceEnclave(0), EnclaveKind::Service, 0));
        m.add_enclave(EnclaveIdentity::genuine(Endpoint::PaymentEnclave(0), EnclaveKind::Payment, 0));
        m
    }

    #[test]
    fn genuine_target_attests() {
        let mut m = mesh();
        let s = m
            .attest(
                Endpoint::Owner(1),
                EnclaveKind::Interface.genuine_measurement(),
                Endpoint::Interface(0),
                &NetControl::new(),
            )
            .unwrap();
        assert!(s.established);
        assert!(m.is_established(s.session_id));
    }

    #[test]
    fn modified_code_is_rejected() {
        let mut m = mesh();
        m.add_enclave(EnclaveIdentity::with_code(Endpoint::Interface(0), EnclaveKind::Interface, 0, "patched-by-host"));
        let err = m
            .attest(
                Endpoint::Owner(1),
                EnclaveKind::Interface.genuine_measurement(),
                Endpoint::Interface(0),
                &NetControl::new(),
            )
            .unwrap_err();
        assert_eq!(err, MeshError::MeasurementMismatch { enclave: Endpoint::Interface(0) });
        assert!(m.sessions.is_empty());
    }

    #[test]
    fn cut_handshake_leaves_no_state() {
        let mut m = mesh();
        let mut net = NetControl::new();
        net.block_handshake(Endpoint::Interface(0), Actor::Host(0));
        let err = m
            .attest(Endpoint::Owner(1), EnclaveKind::Interface.genuine_measurement(), Endpoint::Interface(0), &net)
            .unwrap_err();
        assert_eq!(err, MeshError::Unreachable(Endpoint::Interface(0)));
        assert!(m.sessions.is_empty());
    }

    #[test]
    fn enlist_is_idempotent() {
        let mut m = mesh();
        let net = NetControl::new();
        let a = m.enlist(Endpoint::Interface(0), Endpoint::ServiceEnclave(0), &net).unwrap();
        let sessions = m.sessions.len();
        let b = m.enlist(Endpoint::Interface(0), Endpoint::ServiceEnclave(0), &net).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.sessions.len(), sessions);
        assert_eq!(m.enlisted(Endpoint::Interface(0)).len(), 1);
    }

    #[test]
    fn tampered_payment_enclave_never_registered() {
        let mut m = mesh();
        m.add_enclave(EnclaveIdentity::with_code(
            Endpoint::PaymentEnclave(1),
            EnclaveKind::Payment,
            0,
            "skimming-build",
        ));
        let net = NetControl::new();
        assert!(m.enlist(Endpoint::Interface(0), Endpoint::PaymentEnclave(1), &net).is_err());
        m.enlist(Endpoint::Interface(0), Endpoint::PaymentEnclave(0), &net).unwrap();
        // Registry scan: every registered measurement is in the genuine set.
        for meas in m.registry_measurements() {
            assert!(m.is_genuine(&meas));
        }
        assert!(!m.is_enlisted(Endpoint::Interface(0), Endpoint::PaymentEnclave(1)));
    }

    #[test]
    fn backup_requires_enlistment_and_death() {
        let mut m = mesh();
        let key = SpendKey::derive("share", 0);
        assert_eq!(
            m.backup_keys(Endpoint::PaymentEnclave(0), Endpoint::Interface(0), key),
            Err(MeshError::NotEnlisted(Endpoint::PaymentEnclave(0)))
        );
        m.enlist(Endpoint::Interface(0), Endpoint::PaymentEnclave(0), &NetControl::new()).unwrap();
        m.backup_keys(Endpoint::PaymentEnclave(0), Endpoint::Interface(0), key).unwrap();

        let window = SimDuration::from_secs(30);
        let alive = !observed_dead(Some(SimTime(10_000_000)), SimTime(20_000_000), window);
        assert!(alive);
        assert_eq!(
            m.recover_key(Endpoint::PaymentEnclave(0), Endpoint::Interface(0), !alive),
            Err(MeshError::RecoveryRefused(Endpoint::PaymentEnclave(0)))
        );
        let dead = observed_dead(Some(SimTime(10_000_000)), SimTime(40_000_000), window);
        assert_eq!(m.recover_key(Endpoint::PaymentEnclave(0), Endpoint::Interface(0), dead), Ok(key));
        assert!(m.is_swept(Endpoint::PaymentEnclave(0)));
        assert_eq!(
            m.recover_key(Endpoint::PaymentEnclave(0), Endpoint::Interface(0), dead),
            Err(MeshError::AlreadyRecovered(Endpoint::PaymentEnclave(0)))
        );
    }

    #[test]
    fn sealed_values_carry_their_session() {
        let mut m = mesh();
        let s = m
            .attest(
                Endpoint::Owner(1),
                EnclaveKind::Interface.genuine_measurement(),
                Endpoint::Interface(0),
                &NetControl::new(),
            )
            .unwrap();
        let sealed = s.seal("hunter2");
        assert!(m.is_established(sealed.session_id()));
        assert_eq!(*sealed.open(), "hunter2");
    }
}
