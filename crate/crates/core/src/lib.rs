//! Deterministic virtual-time simulator of an enclave-mediated identity-lease
//! protocol: owners rent out account actions, renters fund campaigns, and a
//! mesh of interface, service and payment enclaves executes the actions and
//! settles rewards atomically with deposit returns.

pub mod attest;
pub mod gossip;
pub mod harness;
pub mod interface;
pub mod ledger;
pub mod parties;
pub mod payment;
pub mod service_enclave;
pub mod services;
pub mod simnet;
