//! Closed-form phase durations for a campaign split evenly over enclaves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simnet::SimDuration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseEstimate {
    pub service: SimDuration,
    pub payment: SimDuration,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EstimateError {
    #[error("need at least one {0} enclave")]
    NoEnclaves(&'static str),
}

/// Each enclave works through its batch sequentially, so a phase lasts
/// `ceil(count / enclaves)` times the per-item mean.
pub fn schedule_estimate(
    count: u64,
    service_enclaves: u64,
    payment_enclaves: u64,
    action_mean: SimDuration,
    snark_mean: SimDuration,
) -> Result<PhaseEstimate, EstimateError> {
    if service_enclaves == 0 {
        return Err(EstimateError::NoEnclaves("service"));
    }
    if payment_enclaves == 0 {
        return Err(EstimateError::NoEnclaves("payment"));
    }
    Ok(PhaseEstimate {
        service: action_mean.times(count.div_ceil(service_enclaves)),
        payment: snark_mean.times(count.div_ceil(payment_enclaves)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(x: u64) -> SimDuration {
        SimDuration::from_millis(x)
    }

    #[test]
    fn reference_batches() {
        let e = schedule_estimate(1000, 25, 25, ms(4288), ms(4935)).unwrap();
        assert_eq!(e.service, ms(171_520));
        assert_eq!(e.payment, ms(197_400));
    }

    #[test]
    fn single_and_empty() {
        let e = schedule_estimate(1, 25, 25, ms(4288), ms(4935)).unwrap();
        assert_eq!((e.service, e.payment), (ms(4288), ms(4935)));
        let e = schedule_estimate(0, 25, 25, ms(4288), ms(4935)).unwrap();
        assert_eq!((e.service, e.payment), (SimDuration::ZERO, SimDuration::ZERO));
    }

    #[test]
    fn uneven_batches_round_up() {
        let e = schedule_estimate(26, 25, 5, ms(1000), ms(1000)).unwrap();
        assert_eq!((e.service, e.payment), (ms(2000), ms(6000)));
        assert!(schedule_estimate(1, 0, 1, ms(1), ms(1)).is_err());
    }
}
