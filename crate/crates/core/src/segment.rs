//! Grouping bytes into spans from their information values.
//!
//! Within a pre-token, byte `t` continues the current span when it passes the
//! continuation test of the configured constraint:
//!
//! * global: `info(t) < theta_g`
//! * monotonic: `info(t) - info(t-1) < theta_m` (`theta_m = 0` is the strict
//!   monotonic decrease; a positive slack gives the approximate variant)
//! * combined: either of the two
//!
//! Otherwise, and at every pre-token start, a new span begins. Comparisons are
//! strict, so a tie breaks the span.

use serde::{Deserialize, Serialize};

use crate::corpus::SignalTrack;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Global,
    Monotonic,
    Combined,
}

impl std::str::FromStr for ConstraintKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(ConstraintKind::Global),
            "monotonic" => Ok(ConstraintKind::Monotonic),
            "combined" => Ok(ConstraintKind::Combined),
            other => Err(Error::config(format!("unknown constraint {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Surprisal,
    Entropy,
}

impl std::str::FromStr for SignalKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surprisal" => Ok(SignalKind::Surprisal),
            "entropy" => Ok(SignalKind::Entropy),
            other => Err(Error::config(format!("unknown signal {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintConfig<F: Scalar> {
    pub kind: ConstraintKind,
    pub signal: SignalKind,
    /// Global threshold in bits. `±inf` is allowed.
    pub theta_g: Option<F>,
    /// Monotonic slack in bits, `>= 0`.
    pub theta_m: F,
}

impl<F: Scalar> ConstraintConfig<F> {
    pub fn global(signal: SignalKind, theta_g: F) -> Self {
        ConstraintConfig {
            kind: ConstraintKind::Global,
            signal,
            theta_g: Some(theta_g),
            theta_m: F::zero(),
        }
    }

    pub fn monotonic(signal: SignalKind, theta_m: F) -> Self {
        ConstraintConfig {
            kind: ConstraintKind::Monotonic,
            signal,
            theta_g: None,
            theta_m,
        }
    }

    pub fn combined(signal: SignalKind, theta_g: F, theta_m: F) -> Self {
        ConstraintConfig {
            kind: ConstraintKind::Combined,
            signal,
            theta_g: Some(theta_g),
            theta_m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_m.is_nan() || self.theta_m < F::zero() {
            return Err(Error::config(format!("theta_m must be >= 0, got {}", self.theta_m)));
        }
        match (self.kind, self.theta_g) {
            (ConstraintKind::Monotonic, _) => Ok(()),
            (_, Some(g)) if !g.is_nan() => Ok(()),
            (kind, _) => Err(Error::config(format!(
                "{kind:?} constraint needs a theta_g value"
            ))),
        }
    }

    /// Whether byte `t` (not a pre-token start) continues the span, given its
    /// value and the previous byte's value.
    #[inline]
    pub fn continues(&self, prev: F, cur: F) -> bool {
        let global = || self.theta_g.is_some_and(|g| cur < g);
        let monotonic = || cur - prev < self.theta_m;
        match self.kind {
            ConstraintKind::Global => global(),
            ConstraintKind::Monotonic => monotonic(),
            ConstraintKind::Combined => global() || monotonic(),
        }
    }
}

/// A contiguous byte range `[start, start + len)` of one document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// Segments a track into spans. Single pass, linear in the track length.
///
/// Panics if `cfg` fails [`ConstraintConfig::validate`].
pub fn segment<F: Scalar>(track: &SignalTrack<F>, cfg: &ConstraintConfig<F>) -> Vec<Span> {
    cfg.validate().expect("invalid constraint configuration");
    let info = track.signal(cfg.signal);
    let mut spans = Vec::new();
    for range in track.boundaries.ranges() {
        let mut start = range.start;
        for t in range.start + 1..range.end {
            if !cfg.continues(info[t - 1], info[t]) {
                spans.push(Span {
                    start,
                    len: t - start,
                });
                start = t;
            }
        }
        if range.end > start {
            spans.push(Span {
                start,
                len: range.end - start,
            });
        }
    }
    spans
}
