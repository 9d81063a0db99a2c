//! Social signal functions and their derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SignalSpec;

/// Derivative of a signal function at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Derivative {
    Finite(f64),
    /// `x^r` at `x = 0` with `r < 1`: the slope is unbounded.
    Singular,
}

impl Derivative {
    pub fn finite(self) -> Option<f64> {
        match self {
            Derivative::Finite(d) => Some(d),
            Derivative::Singular => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalEval {
    pub value: f64,
    pub derivative: Derivative,
}

/// `x^r` with `0^r = 0` for every `r > 0`.
#[inline]
pub fn power(x: f64, r: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if r == 1.0 {
        x
    } else {
        x.powf(r)
    }
}

/// Unchecked signal value; `x` is assumed to be in `[0, 1]`.
#[inline]
pub(crate) fn signal_value(sig: &SignalSpec, appeal: f64, x: f64) -> f64 {
    match *sig {
        SignalSpec::Power { r } => power(x, r),
        SignalSpec::Affine { alpha, beta } => beta * x + alpha * appeal,
    }
}

/// Evaluates `f(x)` and `f'(x)` for a share `x ∈ [0, 1]`.
pub fn eval_signal(sig: &SignalSpec, appeal: f64, x: f64) -> Result<SignalEval> {
    sig.validate()?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("share {x} outside [0, 1]")));
    }
    let value = signal_value(sig, appeal, x);
    let derivative = match *sig {
        SignalSpec::Power { r } => {
            if x > 0.0 {
                Derivative::Finite(r * x.powf(r - 1.0))
            } else if r < 1.0 {
                Derivative::Singular
            } else if r == 1.0 {
                Derivative::Finite(1.0)
            } else {
                Derivative::Finite(0.0)
            }
        }
        SignalSpec::Affine { beta, .. } => Derivative::Finite(beta),
    };
    Ok(SignalEval { value, derivative })
}
