//! Log-gamma, digamma and trigamma for positive real arguments.
//!
//! All three shift the argument upward with the recurrence until it reaches
//! the asymptotic region, then evaluate a Stirling-type series there.

use crate::error::{Error, Result};

const ASYMPTOTIC_START: f64 = 10.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Stirling coefficients B_{2k} / (2k (2k - 1)) for k = 1..7.
const LGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
];

/// B_{2k} / (2k) for k = 1..7.
const DIGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32_760.0,
    1.0 / 12.0,
];

/// B_{2k} for k = 1..7.
const TRIGAMMA_SERIES: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

fn check_domain(name: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} requires a finite positive argument, got {x}"
        )))
    }
}

/// ln Γ(x) for x > 0.
pub fn lgamma(x: f64) -> Result<f64> {
    check_domain("lgamma", x)?;
    Ok(lgamma_unchecked(x))
}

/// ψ(x) = d/dx ln Γ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    check_domain("digamma", x)?;
    Ok(digamma_unchecked(x))
}

/// ψ'(x) for x > 0.
pub fn trigamma(x: f64) -> Result<f64> {
    check_domain("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

pub(crate) fn lgamma_unchecked(mut x: f64) -> f64 {
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    // ln Γ(x) = ln Γ(x + n) - ln(x (x+1) ... (x+n-1))
    let mut product = 1.0;
    while x < ASYMPTOTIC_START {
        product *= x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut power = inv;
    for c in LGAMMA_SERIES {
        series += c * power;
        power *= inv2;
    }
    let stirling = (x - 0.5) * x.ln() - x + HALF_LN_2PI + series;
    stirling - product.ln()
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < ASYMPTOTIC_START {
        shift += 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    let mut power = inv2;
    for c in DIGAMMA_SERIES {
        series += c * power;
        power *= inv2;
    }
    x.ln() - 0.5 / x - series - shift
}

pub(crate) fn trigamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < ASYMPTOTIC_START {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut power = inv2 * inv;
    for c in TRIGAMMA_SERIES {
        series += c * power;
        power *= inv2;
    }
    inv + 0.5 * inv2 + series + shift
}
