//! The 8-bit floating-point storage format (4-bit exponent, 4-bit mantissa,
//! hidden leading one) and exact reference arithmetic.
//!
//! The stored 8-bit word carries exponent and mantissa; the sign travels as a
//! separate digital flag beside the word and never enters the analog
//! datapath. The all-zero word is the reserved zero encoding; there are no
//! subnormals, infinities, or NaNs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Exponent bias of the 4-bit exponent field.
pub const BIAS: i32 = 7;
/// Stored mantissa bits.
pub const MANTISSA_BITS: u32 = 4;
/// Exponent bits.
pub const EXPONENT_BITS: u32 = 4;
/// Largest exponent code.
pub const EXPONENT_CODE_MAX: u8 = (1 << EXPONENT_BITS) - 1;
/// Largest mantissa code.
pub const MANTISSA_CODE_MAX: u8 = (1 << MANTISSA_BITS) - 1;

/// Smallest nonzero magnitude, `(1 + 1/16) * 2^-7`. The natural candidate
/// `(1 + 0/16) * 2^-7` is unrepresentable because its word is the reserved
/// zero encoding.
pub const MIN_POSITIVE_VALUE: f64 = 17.0 / 2048.0;
/// Largest magnitude, `(1 + 15/16) * 2^8`.
pub const MAX_VALUE: f64 = 496.0;

/// Exact `2^e` for exponents in the normal f64 range.
#[inline]
pub fn pow2(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((1023 + e) as u64) << 52)
}

/// Rounding applied when encoding a real number.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Truncate toward zero, matching the shift-register behavior of the
    /// datapath. The default.
    #[default]
    Truncate,
    /// Round to nearest, ties to even mantissa code.
    Nearest,
}

impl FromStr for Rounding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncate" => Ok(Rounding::Truncate),
            "nearest" => Ok(Rounding::Nearest),
            _ => Err(Error::UnknownName { what: "rounding mode", value: s.into() }),
        }
    }
}

impl fmt::Display for Rounding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rounding::Truncate => "truncate",
            Rounding::Nearest => "nearest",
        })
    }
}

/// How the 4-bit stored mantissa maps to the integer significand the
/// crossbar multiplies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignificandMode {
    /// Prepend the hidden leading one: codes 0..=15 become 16..=31. Preserves
    /// the numeric semantics of the format. The default.
    #[default]
    HiddenBit,
    /// Use the literal stored 4-bit code 0..=15, as programmed into the
    /// mantissa memristors. Numerically lossy (drops the hidden bit) but
    /// reproduces the raw crossbar codes.
    Stored4Bit,
}

impl SignificandMode {
    /// Integer significand for a mantissa code.
    #[inline]
    pub fn significand(self, mantissa_code: u8) -> u32 {
        match self {
            SignificandMode::HiddenBit => 16 + mantissa_code as u32,
            SignificandMode::Stored4Bit => mantissa_code as u32,
        }
    }

    /// Largest representable significand (31 or 15).
    #[inline]
    pub fn max_significand(self) -> u32 {
        self.significand(MANTISSA_CODE_MAX)
    }

    /// Bit width of the significand (5 or 4); the default zeroing threshold.
    #[inline]
    pub fn significand_bits(self) -> u32 {
        match self {
            SignificandMode::HiddenBit => MANTISSA_BITS + 1,
            SignificandMode::Stored4Bit => MANTISSA_BITS,
        }
    }
}

impl FromStr for SignificandMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hidden_bit" => Ok(SignificandMode::HiddenBit),
            "stored_4bit" => Ok(SignificandMode::Stored4Bit),
            _ => Err(Error::UnknownName { what: "significand mode", value: s.into() }),
        }
    }
}

impl fmt::Display for SignificandMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignificandMode::HiddenBit => "hidden_bit",
            SignificandMode::Stored4Bit => "stored_4bit",
        })
    }
}

/// Sign-magnitude 8-bit float.
///
/// Value semantics: the word `(exponent_code, mantissa_code) = (0, 0)` is
/// exactly zero regardless of sign; every other word decodes to
/// `(-1)^sign * (1 + mantissa_code/16) * 2^(exponent_code - 7)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fp8 {
    pub sign: bool,
    pub exponent_code: u8,
    pub mantissa_code: u8,
}

/// Ordered list of operands, one per crossbar row.
pub type FpVector = Vec<Fp8>;

impl Fp8 {
    pub const ZERO: Self = Fp8 { sign: false, exponent_code: 0, mantissa_code: 0 };
    /// Largest positive value, 496.0.
    pub const MAX: Self =
        Fp8 { sign: false, exponent_code: EXPONENT_CODE_MAX, mantissa_code: MANTISSA_CODE_MAX };

    /// Range-checked constructor.
    pub fn new(sign: bool, exponent_code: u8, mantissa_code: u8) -> Result<Self> {
        if exponent_code > EXPONENT_CODE_MAX {
            return Err(Error::CodeOutOfRange { field: "exponent" });
        }
        if mantissa_code > MANTISSA_CODE_MAX {
            return Err(Error::CodeOutOfRange { field: "mantissa" });
        }
        Ok(Fp8 { sign, exponent_code, mantissa_code })
    }

    /// True for the reserved zero word, whatever the sign flag says.
    #[inline]
    pub fn is_zero(self) -> bool {
        self.exponent_code == 0 && self.mantissa_code == 0
    }

    /// Exact decoded value. Never rounds: every representable value is an
    /// integer multiple of `2^-11` no larger than 496.
    pub fn decode(self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let magnitude = (16 + self.mantissa_code as u32) as f64
            * pow2(self.exponent_code as i32 - BIAS - MANTISSA_BITS as i32);
        if self.sign {
            -magnitude
        } else {
            magnitude
        }
    }

    /// Encode a real number, saturating outside the representable range:
    /// magnitudes below [`MIN_POSITIVE_VALUE`] go to zero (truncation) or to
    /// whichever of zero / smallest-normal is closer (nearest); magnitudes
    /// beyond [`MAX_VALUE`] saturate to the largest code.
    pub fn encode(x: f64, rounding: Rounding) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::NonFiniteOperand);
        }
        let sign = x.is_sign_negative();
        let mag = x.abs();
        if mag == 0.0 {
            return Ok(Self::ZERO);
        }
        if mag < MIN_POSITIVE_VALUE {
            // Below the smallest nonzero magnitude only zero and the smallest
            // normal are candidates.
            return Ok(match rounding {
                Rounding::Truncate => Self::ZERO,
                Rounding::Nearest if mag > MIN_POSITIVE_VALUE / 2.0 => {
                    Fp8 { sign, exponent_code: 0, mantissa_code: 1 }
                }
                Rounding::Nearest => Self::ZERO,
            });
        }
        // Split mag = s * 2^e with s in [1, 2). mag >= 2^-7 here, so the f64
        // is normal and the bit split is exact.
        let bits = mag.to_bits();
        let mut exp = ((bits >> 52) & 0x7ff) as i32 - 1023;
        let s = f64::from_bits((bits & ((1u64 << 52) - 1)) | (1023u64 << 52));
        // (s - 1) * 16 is exact: Sterbenz subtraction then a power-of-two scale.
        let m_real = (s - 1.0) * 16.0;
        let mut m = m_real as u32;
        if rounding == Rounding::Nearest {
            let frac = m_real - m as f64;
            if frac > 0.5 || (frac == 0.5 && (m & 1) == 1) {
                m += 1;
            }
        }
        if m == 16 {
            m = 0;
            exp += 1;
        }
        let exponent_code = exp + BIAS;
        if exponent_code > EXPONENT_CODE_MAX as i32 {
            return Ok(Fp8 { sign, ..Self::MAX });
        }
        debug_assert!(exponent_code > 0 || m > 0, "reserved zero word cannot arise here");
        Ok(Fp8 { sign, exponent_code: exponent_code as u8, mantissa_code: m as u8 })
    }
}

/// Textual form `s:e:m`, e.g. `0:7:8` for 1.5.
impl fmt::Display for Fp8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.sign as u8, self.exponent_code, self.mantissa_code)
    }
}

impl FromStr for Fp8 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let malformed = || Error::MalformedCode { token: s.into() };
        let mut fields = s.split(':');
        let sign: u8 = fields.next().ok_or_else(malformed)?.parse().map_err(|_| malformed())?;
        let exponent: u8 = fields.next().ok_or_else(malformed)?.parse().map_err(|_| malformed())?;
        let mantissa: u8 = fields.next().ok_or_else(malformed)?.parse().map_err(|_| malformed())?;
        if fields.next().is_some() {
            return Err(malformed());
        }
        if sign > 1 {
            return Err(Error::CodeOutOfRange { field: "sign" });
        }
        Fp8::new(sign == 1, exponent, mantissa)
    }
}

/// Exact dot product of two operand vectors.
///
/// Every term `(16+m_x)(16+m_w) * 2^(e_x+e_w)` is accumulated as an i128
/// count of `2^-22` units, so no rounding can occur; the final conversion to
/// f64 is exact for any length up to a few thousand elements (the crossbar
/// caps rows far below that).
pub fn oracle_dot(x: &[Fp8], w: &[Fp8]) -> Result<f64> {
    if x.len() != w.len() {
        return Err(Error::LengthMismatch { x_len: x.len(), w_len: w.len() });
    }
    let mut units: i128 = 0;
    for (a, b) in x.iter().zip(w) {
        if a.is_zero() || b.is_zero() {
            continue;
        }
        let term = ((16 + a.mantissa_code as i128) * (16 + b.mantissa_code as i128))
            << (a.exponent_code as u32 + b.exponent_code as u32);
        units += if a.sign != b.sign { -term } else { term };
    }
    debug_assert!(units.unsigned_abs() < 1 << 53);
    Ok(units as f64 * pow2(-2 * (BIAS + MANTISSA_BITS as i32)))
}
