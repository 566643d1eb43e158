//! Action-dependent reception and interception probabilities.
//!
//! Reception (`γ`) and successful interception-and-decryption (`γₑ`) are
//! independent Bernoulli variables each step. Encrypting scales the arrival
//! rate by `eps1` and the eavesdropper's success rate by `eps2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-step decision: send the local estimate in the clear or encrypted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Plain = 0,
    Encrypt = 1,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Plain, Action::Encrypt];

    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Action::Plain),
            1 => Some(Action::Encrypt),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn is_encrypt(self) -> bool {
        self == Action::Encrypt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    lambda: f64,
    lambda_e: f64,
    eps1: f64,
    eps2: f64,
}

fn check_prob(field: &str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::config(field, format!("probability must lie in [0, 1], got {x}")));
    }
    Ok(())
}

impl ChannelParams {
    /// All four values must lie in `[0, 1]`; nothing is clamped.
    pub fn new(lambda: f64, lambda_e: f64, eps1: f64, eps2: f64) -> Result<Self> {
        check_prob("lambda", lambda)?;
        check_prob("lambda_e", lambda_e)?;
        check_prob("eps1", eps1)?;
        check_prob("eps2", eps2)?;
        Ok(Self {
            lambda,
            lambda_e,
            eps1,
            eps2,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lambda_e(&self) -> f64 {
        self.lambda_e
    }

    pub fn eps1(&self) -> f64 {
        self.eps1
    }

    pub fn eps2(&self) -> f64 {
        self.eps2
    }

    /// `P(γ = 1 | a)`: `λ` in the clear, `ε₁λ` encrypted.
    pub fn arrival_prob(&self, a: Action) -> f64 {
        match a {
            Action::Plain => self.lambda,
            Action::Encrypt => self.eps1 * self.lambda,
        }
    }

    /// `P(γₑ = 1 | a)`: `λₑ` in the clear, `ε₂λₑ` encrypted.
    pub fn eavesdrop_prob(&self, a: Action) -> f64 {
        match a {
            Action::Plain => self.lambda_e,
            Action::Encrypt => self.eps2 * self.lambda_e,
        }
    }

    pub fn joint_transition(&self, a: Action) -> JointTransition {
        let q = self.arrival_prob(a);
        let qe = self.eavesdrop_prob(a);
        JointTransition {
            p00: (1.0 - q) * (1.0 - qe),
            p01: (1.0 - q) * qe,
            p10: q * (1.0 - qe),
            p11: q * qe,
        }
    }
}

/// Distribution of the outcome pair `(γ, γₑ)`.
///
/// Subscripts are ordered (remote bit, eavesdropper bit): `p01` is "remote
/// lost the packet, eavesdropper got it".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTransition {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

impl JointTransition {
    pub fn total(&self) -> f64 {
        self.p00 + self.p01 + self.p10 + self.p11
    }

    /// `(probability, remote success, eavesdropper success)` in the fixed
    /// order 00, 01, 10, 11.
    pub fn outcomes(&self) -> [(f64, bool, bool); 4] {
        [
            (self.p00, false, false),
            (self.p01, false, true),
            (self.p10, true, false),
            (self.p11, true, true),
        ]
    }
}
