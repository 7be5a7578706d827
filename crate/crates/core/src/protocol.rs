//! The issue-then-reveal contract shared by every online component.
//!
//! At each step a component first emits its forecast from information
//! available before the target is known, and only afterwards receives the
//! realized value. Implementations must reject out-of-order calls.

use std::fmt;

/// A sequential forecaster driven by `issue` / `observe` pairs.
pub trait OnlineProtocol {
    /// Information available before the target is revealed.
    type Input: ?Sized;
    type Output;
    type Error;

    fn issue(&mut self, input: &Self::Input) -> Result<Self::Output, Self::Error>;

    fn observe(&mut self, truth: f64) -> Result<(), Self::Error>;
}

/// Ordering violation detected by a component or by [`HygieneSpy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolViolation {
    /// Truth delivered while no forecast was outstanding.
    ObserveBeforeIssue,
    /// A second forecast requested before the previous truth arrived.
    IssueWhilePending,
}

impl fmt::Display for ProtocolViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ObserveBeforeIssue => f.write_str("truth delivered before a forecast was issued"),
            Self::IssueWhilePending => {
                f.write_str("forecast requested while the previous truth is still pending")
            }
        }
    }
}

/// Wraps a component and records every call made out of order.
///
/// The spy forwards calls unchanged so that it can sit transparently between
/// the orchestrator and any component.
#[derive(Debug)]
pub struct HygieneSpy<P> {
    inner: P,
    pending: bool,
    steps: usize,
    violations: Vec<(usize, ProtocolViolation)>,
}

impl<P> HygieneSpy<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            pending: false,
            steps: 0,
            violations: Vec::new(),
        }
    }

    pub fn violations(&self) -> &[(usize, ProtocolViolation)] {
        &self.violations
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: OnlineProtocol> OnlineProtocol for HygieneSpy<P> {
    type Input = P::Input;
    type Output = P::Output;
    type Error = P::Error;

    fn issue(&mut self, input: &Self::Input) -> Result<Self::Output, Self::Error> {
        if self.pending {
            self.violations
                .push((self.steps, ProtocolViolation::IssueWhilePending));
        }
        self.pending = true;
        self.inner.issue(input)
    }

    fn observe(&mut self, truth: f64) -> Result<(), Self::Error> {
        if !self.pending {
            self.violations
                .push((self.steps, ProtocolViolation::ObserveBeforeIssue));
        }
        self.pending = false;
        self.steps += 1;
        self.inner.observe(truth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo(f64);

    impl OnlineProtocol for Echo {
        type Input = f64;
        type Output = f64;
        type Error = ();

        fn issue(&mut self, input: &f64) -> Result<f64, ()> {
            Ok(*input + self.0)
        }

        fn observe(&mut self, truth: f64) -> Result<(), ()> {
            self.0 = truth;
            Ok(())
        }
    }

    #[test]
    fn spy_counts_out_of_order_calls() {
        let mut spy = HygieneSpy::new(Echo(0.0));
        spy.issue(&1.0).unwrap();
        spy.observe(2.0).unwrap();
        assert!(spy.violations().is_empty());
        spy.observe(3.0).unwrap();
        spy.issue(&1.0).unwrap();
        spy.issue(&1.0).unwrap();
        assert_eq!(
            spy.violations(),
            &[
                (1, ProtocolViolation::ObserveBeforeIssue),
                (2, ProtocolViolation::IssueWhilePending)
            ]
        );
        assert_eq!(spy.steps(), 2);
    }
}
