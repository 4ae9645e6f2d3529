//! Closed-form real mother wavelets and their scaled/translated dictionaries.
//!
//! A dictionary atom is `ψ_{u,s}(t) = ψ((t − u)/s) / √s`. Its partial
//! derivatives follow from the chain rule with `τ = (t − u)/s`:
//!
//! ```text
//! ∂ψ_{u,s}/∂u = −ψ′(τ) / s^{3/2}
//! ∂ψ_{u,s}/∂s = −ψ(τ) / (2 s^{3/2}) − τ·ψ′(τ) / s^{3/2}
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Morlet normalization constant.
pub const MORLET_C: f64 = 1.0;
/// Morlet carrier frequency in radians per unit time.
pub const MORLET_CARRIER: f64 = 5.0;
/// Laplace damping ratio.
pub const LAPLACE_ZETA: f64 = 0.03;
/// Laplace carrier frequency in radians per unit time.
pub const LAPLACE_OMEGA: f64 = 2.0 * PI;
pub const LAPLACE_AMPLITUDE: f64 = 1.0;

fn mexican_hat_norm() -> f64 {
    2.0 / (3f64.sqrt() * PI.powf(0.25))
}

fn laplace_decay() -> f64 {
    LAPLACE_ZETA / (1.0 - LAPLACE_ZETA * LAPLACE_ZETA).sqrt() * LAPLACE_OMEGA
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaveletFamily {
    /// Real Morlet, `C·e^{−t²/2}·cos(5t)`.
    Morlet,
    /// Normalized second derivative of a Gaussian.
    MexicanHat,
    /// One-sided damped sinusoid, zero for `t < 0`.
    Laplace,
    /// Plain `sin(t)`; not a wavelet, used as a baseline filter shape.
    Sin,
}

impl WaveletFamily {
    pub const ALL: [WaveletFamily; 4] = [
        WaveletFamily::Morlet,
        WaveletFamily::MexicanHat,
        WaveletFamily::Laplace,
        WaveletFamily::Sin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WaveletFamily::Morlet => "morlet",
            WaveletFamily::MexicanHat => "mexhat",
            WaveletFamily::Laplace => "laplace",
            WaveletFamily::Sin => "sin",
        }
    }

    /// Stable numeric tag used by the checkpoint format.
    pub fn tag(self) -> u32 {
        match self {
            WaveletFamily::Morlet => 0,
            WaveletFamily::MexicanHat => 1,
            WaveletFamily::Laplace => 2,
            WaveletFamily::Sin => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.tag() == tag)
    }

    pub fn mother(self, t: f64) -> f64 {
        match self {
            WaveletFamily::Morlet => MORLET_C * (-t * t / 2.0).exp() * (MORLET_CARRIER * t).cos(),
            WaveletFamily::MexicanHat => mexican_hat_norm() * (1.0 - t * t) * (-t * t / 2.0).exp(),
            WaveletFamily::Laplace => {
                if t < 0.0 {
                    0.0
                } else {
                    LAPLACE_AMPLITUDE * (-laplace_decay() * t).exp() * (LAPLACE_OMEGA * t).sin()
                }
            }
            WaveletFamily::Sin => t.sin(),
        }
    }

    /// `dψ/dt`. The Laplace kink at `t = 0` is assigned derivative 0.
    pub fn mother_derivative(self, t: f64) -> f64 {
        match self {
            WaveletFamily::Morlet => {
                let w = MORLET_CARRIER;
                MORLET_C * (-t * t / 2.0).exp() * (-t * (w * t).cos() - w * (w * t).sin())
            }
            WaveletFamily::MexicanHat => mexican_hat_norm() * (-t * t / 2.0).exp() * t * (t * t - 3.0),
            WaveletFamily::Laplace => {
                if t <= 0.0 {
                    0.0
                } else {
                    let (a, w) = (laplace_decay(), LAPLACE_OMEGA);
                    LAPLACE_AMPLITUDE * (-a * t).exp() * (w * (w * t).cos() - a * (w * t).sin())
                }
            }
            WaveletFamily::Sin => t.cos(),
        }
    }
}

impl fmt::Display for WaveletFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WaveletFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "morlet" => Ok(WaveletFamily::Morlet),
            "mexhat" | "mexican_hat" | "mexicanhat" => Ok(WaveletFamily::MexicanHat),
            "laplace" => Ok(WaveletFamily::Laplace),
            "sin" => Ok(WaveletFamily::Sin),
            other => Err(Error::invalid(format!(
                "unknown wavelet family `{other}` (expected morlet, mexhat, laplace or sin)"
            ))),
        }
    }
}

fn check_scale(s: f64) -> Result<()> {
    if s > 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("wavelet scale must be positive and finite, got {s}")))
    }
}

/// `ψ_{u,s}(t) = ψ((t − u)/s) / √s`.
pub fn dictionary(family: WaveletFamily, t: f64, u: f64, s: f64) -> Result<f64> {
    check_scale(s)?;
    Ok(atom(family, t, u, s))
}

#[inline]
pub(crate) fn atom(family: WaveletFamily, t: f64, u: f64, s: f64) -> f64 {
    (1.0 / s.sqrt()) * family.mother((t - u) / s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DictionaryGrad {
    pub d_du: f64,
    pub d_ds: f64,
}

pub fn dictionary_grad(family: WaveletFamily, t: f64, u: f64, s: f64) -> Result<DictionaryGrad> {
    check_scale(s)?;
    Ok(atom_grad(family, t, u, s))
}

#[inline]
pub(crate) fn atom_grad(family: WaveletFamily, t: f64, u: f64, s: f64) -> DictionaryGrad {
    let tau = (t - u) / s;
    let inv = 1.0 / (s * s.sqrt());
    let psi = family.mother(tau);
    let dpsi = family.mother_derivative(tau);
    DictionaryGrad {
        d_du: -inv * dpsi,
        d_ds: -0.5 * inv * psi - tau * inv * dpsi,
    }
}
