//! Exact dyadic lengths for the message-space tree.
//!
//! Message-space interval lengths must stay accurate to well below
//! `1/|M| = e^{-nR}`, which is far beyond `f64` for realistic block lengths.
//! Each length is kept as an exact dyadic rational `mant / 2^shift`: splitting
//! a leaf multiplies by the 53-bit mantissa of an `f64` fraction, so the
//! representation grows by at most 53 bits per tree level while sibling
//! lengths stay exactly complementary. Queries and the decoded-median
//! accumulation round lengths onto a shared `2^-P` grid; with
//! `P ≥ log2(M) + log2(n·|X|) + 8` the accumulated rounding stays far below
//! half a message cell.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

/// An exact nonnegative dyadic rational `mant / 2^shift`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dyadic {
    mant: BigUint,
    shift: u64,
}

impl Dyadic {
    pub fn one() -> Self {
        Self { mant: BigUint::one(), shift: 0 }
    }

    pub fn zero() -> Self {
        Self { mant: BigUint::zero(), shift: 0 }
    }

    pub fn is_zero(&self) -> bool {
        self.mant.is_zero()
    }

    /// Normalizes so the mantissa is odd (or zero).
    fn normalize(&mut self) {
        if self.mant.is_zero() {
            self.shift = 0;
            return;
        }
        let tz = self.mant.trailing_zeros().unwrap_or(0).min(self.shift);
        if tz > 0 {
            self.mant >>= tz;
            self.shift -= tz;
        }
    }

    /// Exact product with a fraction `frac` in `(0, 1)`.
    ///
    /// `frac` is decomposed into its IEEE-754 mantissa and exponent, so the
    /// result is the exact product of `self` with the represented value.
    pub fn mul_fraction(&self, frac: f64) -> Self {
        debug_assert!(frac > 0.0 && frac < 1.0, "fraction {frac} out of (0,1)");
        let bits = frac.to_bits();
        let exp = ((bits >> 52) & 0x7FF) as i64;
        debug_assert!(exp != 0, "subnormal fraction {frac}");
        let mant = (1u64 << 52) | (bits & ((1u64 << 52) - 1));
        // value = mant * 2^(exp - 1023 - 52); exp - 1075 < 0 for frac < 1.
        let down = (1075 - exp) as u64;
        let mut out = Self {
            mant: &self.mant * BigUint::from(mant),
            shift: self.shift + down,
        };
        out.normalize();
        out
    }

    /// Exact difference `self - other`; panics if the result would be negative.
    pub fn sub_exact(&self, other: &Self) -> Self {
        let shift = self.shift.max(other.shift);
        let a = &self.mant << (shift - self.shift);
        let b = &other.mant << (shift - other.shift);
        let mut out = Self { mant: a - b, shift };
        out.normalize();
        out
    }

    pub fn add_exact(&self, other: &Self) -> Self {
        let shift = self.shift.max(other.shift);
        let a = &self.mant << (shift - self.shift);
        let b = &other.mant << (shift - other.shift);
        let mut out = Self { mant: a + b, shift };
        out.normalize();
        out
    }

    /// Rounds to the nearest multiple of `2^-precision`, returning grid units.
    pub fn to_units(&self, precision: u32) -> BigUint {
        let p = precision as u64;
        if self.shift <= p {
            &self.mant << (p - self.shift)
        } else {
            let down = self.shift - p;
            (&self.mant + (BigUint::one() << (down - 1))) >> down
        }
    }

    pub fn to_f64(&self) -> f64 {
        ratio_f64(&self.mant, &(BigUint::one() << self.shift))
    }

    /// Mantissa bit length, a proxy for storage cost.
    pub fn mant_bits(&self) -> u64 {
        self.mant.bits()
    }

    /// Hex rendering `mant/2^shift` for debug dumps.
    pub fn to_hex(&self) -> String {
        format!("{:x}/2^{}", self.mant, self.shift)
    }
}

/// `round(frac * units)` for `frac` in `[0, 1]`, staying on the units grid.
pub fn scale_units(units: &BigUint, frac: f64) -> BigUint {
    debug_assert!((0.0..=1.0).contains(&frac));
    if frac <= 0.0 || units.is_zero() {
        return BigUint::zero();
    }
    if frac >= 1.0 {
        return units.clone();
    }
    let bits = frac.to_bits();
    let exp = ((bits >> 52) & 0x7FF) as i64;
    let mant = (1u64 << 52) | (bits & ((1u64 << 52) - 1));
    let down = (1075 - exp) as u64;
    (units * BigUint::from(mant) + (BigUint::one() << (down - 1))) >> down
}

/// `x / y` as `f64` for arbitrary-size nonnegative integers, `x ≤ y`.
pub fn ratio_f64(x: &BigUint, y: &BigUint) -> f64 {
    if x.is_zero() {
        return 0.0;
    }
    if y.is_zero() {
        return 1.0;
    }
    // Align so the denominator fits in 63 bits, then divide natively.
    let shift = y.bits().saturating_sub(63);
    let num = (x >> shift).to_f64().unwrap_or(f64::MAX);
    let den = (y >> shift).to_f64().unwrap_or(f64::MAX);
    (num / den).clamp(0.0, 1.0)
}

/// `floor(units/2^precision * m + 1/2)`: the rounding step of the median
/// decode, done entirely in integer arithmetic.
pub fn round_scaled(units: &BigUint, m: &BigUint, precision: u32) -> BigUint {
    (units * m + (BigUint::one() << (precision - 1))) >> (precision as u64)
}
