//! Bit-exact codecs for the minifloat element and scale encodings used by
//! block-scaled formats.
//!
//! Seven encodings are supported: the float elements `E2M1` (FP4), `E2M3`
//! and `E3M2` (FP6), `E4M3` and `E5M2` (FP8), the power-of-two scale
//! encoding `E8M0`, and a symmetric 4-bit integer (`Int4`) used by the
//! integer baseline. Raw codes travel in the low bits of a `u8`.
//!
//! Decoding is exact: every valid code maps to the real value it represents,
//! subnormals included, returned as `f64`. `encode_nearest` picks the code
//! minimising the absolute error and breaks ties toward the code with an
//! even trailing mantissa bit. The scale codecs round *up* to the next
//! representable value instead, so an encoded block scale never clips the
//! block it covers and the alignment factor is at least 1.
//!
//! Non-finite bit patterns (the E4M3 NaN codes and the whole E5M2
//! exponent-31 row) are rejected as invalid: quantized operands hold finite
//! values only. The Int4 code `0x8` (-8) is likewise excluded to keep the
//! integer lattice symmetric.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element or scale encoding identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Encoding {
    E2M1,
    E2M3,
    E3M2,
    E4M3,
    E5M2,
    E8M0,
    Int4,
}

/// How `encode_nearest` resolves rounding decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundingMode {
    /// Round to the nearest representable value; on exact midpoints take the
    /// code whose trailing mantissa bit is even.
    NearestTiesToEven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundingRule {
    pub mode: RoundingMode,
    /// When set, magnitudes above max normal clamp to max normal instead of
    /// erroring.
    pub saturate: bool,
}

impl RoundingRule {
    pub const fn saturating() -> Self {
        Self {
            mode: RoundingMode::NearestTiesToEven,
            saturate: true,
        }
    }

    pub const fn strict() -> Self {
        Self {
            mode: RoundingMode::NearestTiesToEven,
            saturate: false,
        }
    }
}

impl Default for RoundingRule {
    fn default() -> Self {
        Self::saturating()
    }
}

struct FloatParams {
    exp_bits: u32,
    man_bits: u32,
    bias: i32,
}

impl Encoding {
    pub const fn name(self) -> &'static str {
        match self {
            Encoding::E2M1 => "E2M1",
            Encoding::E2M3 => "E2M3",
            Encoding::E3M2 => "E3M2",
            Encoding::E4M3 => "E4M3",
            Encoding::E5M2 => "E5M2",
            Encoding::E8M0 => "E8M0",
            Encoding::Int4 => "INT4",
        }
    }

    /// Total code width in bits (at most 8).
    pub const fn bits(self) -> u32 {
        match self {
            Encoding::E2M1 | Encoding::Int4 => 4,
            Encoding::E2M3 | Encoding::E3M2 => 6,
            Encoding::E4M3 | Encoding::E5M2 | Encoding::E8M0 => 8,
        }
    }

    pub const fn mantissa_bits(self) -> u32 {
        match self {
            Encoding::E2M1 => 1,
            Encoding::E2M3 => 3,
            Encoding::E3M2 => 2,
            Encoding::E4M3 => 3,
            Encoding::E5M2 => 2,
            Encoding::E8M0 => 0,
            Encoding::Int4 => 0,
        }
    }

    pub const fn exponent_bits(self) -> u32 {
        match self {
            Encoding::E2M1 => 2,
            Encoding::E2M3 => 2,
            Encoding::E3M2 => 3,
            Encoding::E4M3 => 4,
            Encoding::E5M2 => 5,
            Encoding::E8M0 => 8,
            Encoding::Int4 => 0,
        }
    }

    pub const fn bias(self) -> i32 {
        match self {
            Encoding::E2M1 | Encoding::E2M3 => 1,
            Encoding::E3M2 => 3,
            Encoding::E4M3 => 7,
            Encoding::E5M2 => 15,
            Encoding::E8M0 => 127,
            Encoding::Int4 => 0,
        }
    }

    /// Largest finite representable magnitude.
    pub fn max_normal(self) -> f64 {
        match self {
            Encoding::E2M1 => 6.0,
            Encoding::E2M3 => 7.5,
            Encoding::E3M2 => 28.0,
            Encoding::E4M3 => 448.0,
            Encoding::E5M2 => 57344.0,
            Encoding::E8M0 => 2f64.powi(127),
            Encoding::Int4 => 7.0,
        }
    }

    /// Precision limit: half the worst relative lattice gap. For floats this
    /// is `2^-(mantissa bits + 1)`; for the symmetric integer lattice it is
    /// `1/(2*q_max)`.
    pub fn eps(self) -> f64 {
        match self {
            Encoding::Int4 => 0.5 / 7.0,
            e => 2f64.powi(-(e.mantissa_bits() as i32 + 1)),
        }
    }

    fn float_params(self) -> Option<FloatParams> {
        match self {
            Encoding::E8M0 | Encoding::Int4 => None,
            e => Some(FloatParams {
                exp_bits: e.exponent_bits(),
                man_bits: e.mantissa_bits(),
                bias: e.bias(),
            }),
        }
    }

    /// True for the reserved NaN/Inf exponent-mantissa combinations.
    fn is_non_finite_pattern(self, e: u8, m: u8) -> bool {
        match self {
            Encoding::E4M3 => e == 0xF && m == 0x7,
            Encoding::E5M2 => e == 0x1F,
            _ => false,
        }
    }

    /// Exact value of a raw code.
    pub fn decode(self, code: u8) -> Result<f64> {
        let width = self.bits();
        if width < 8 && code >> width != 0 {
            return Err(Error::InvalidCode {
                encoding: self.name(),
                code,
            });
        }
        match self {
            Encoding::E8M0 => {
                if code == 0xFF {
                    Err(Error::InvalidCode {
                        encoding: self.name(),
                        code,
                    })
                } else {
                    Ok(2f64.powi(code as i32 - 127))
                }
            }
            Encoding::Int4 => {
                if code == 0x8 {
                    return Err(Error::InvalidCode {
                        encoding: self.name(),
                        code,
                    });
                }
                let v = ((code << 4) as i8) >> 4;
                Ok(v as f64)
            }
            _ => {
                let p = self.float_params().expect("float encoding");
                let sign = (code >> (p.exp_bits + p.man_bits)) & 1;
                let e = (code >> p.man_bits) & ((1 << p.exp_bits) - 1);
                let m = code & ((1 << p.man_bits) - 1);
                if self.is_non_finite_pattern(e, m) {
                    return Err(Error::InvalidCode {
                        encoding: self.name(),
                        code,
                    });
                }
                let frac = m as f64 / (1u32 << p.man_bits) as f64;
                let mag = if e == 0 {
                    2f64.powi(1 - p.bias) * frac
                } else {
                    2f64.powi(e as i32 - p.bias) * (1.0 + frac)
                };
                Ok(if sign == 1 { -mag } else { mag })
            }
        }
    }

    /// All valid raw codes for this encoding.
    pub fn valid_codes(self) -> Vec<u8> {
        let n = 1u16 << self.bits();
        (0..n)
            .map(|c| c as u8)
            .filter(|&c| self.decode(c).is_ok())
            .collect()
    }

    /// Valid `(code, value)` pairs, positive (non-sign-bit) codes only,
    /// sorted ascending by value.
    fn positive_table(self) -> &'static [(u8, f64)] {
        static TABLES: [OnceLock<Vec<(u8, f64)>>; 6] = [
            OnceLock::new(),
            OnceLock::new(),
            OnceLock::new(),
            OnceLock::new(),
            OnceLock::new(),
            OnceLock::new(),
        ];
        let idx = match self {
            Encoding::E2M1 => 0,
            Encoding::E2M3 => 1,
            Encoding::E3M2 => 2,
            Encoding::E4M3 => 3,
            Encoding::E5M2 => 4,
            Encoding::E8M0 => 5,
            Encoding::Int4 => panic!("Int4 encode does not use the lattice table"),
        };
        TABLES[idx].get_or_init(|| {
            let upper = match self {
                Encoding::E8M0 => 0x100u16,
                _ => 1u16 << (self.bits() - 1),
            };
            let mut t: Vec<(u8, f64)> = (0..upper)
                .filter_map(|c| self.decode(c as u8).ok().map(|v| (c as u8, v)))
                .collect();
            t.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            t
        })
    }

    /// Nearest-code encoding with ties to the even trailing bit.
    ///
    /// For signed encodings the magnitude is encoded and the sign bit applied
    /// afterwards; `-0.0` maps to the positive zero code. E8M0 has no sign
    /// bit, so non-positive inputs land on its smallest code.
    pub fn encode_nearest(self, x: f64, rule: RoundingRule) -> Result<u8> {
        if !x.is_finite() {
            return Err(Error::NonFinite {
                context: self.name(),
            });
        }
        if let Encoding::Int4 = self {
            if !rule.saturate && x.abs() > self.max_normal() {
                return Err(Error::OutOfRange {
                    encoding: self.name(),
                    value: x,
                });
            }
            let q = x.round_ties_even().clamp(-7.0, 7.0) as i8;
            return Ok((q as u8) & 0x0F);
        }

        let t = self.positive_table();
        let signed = self != Encoding::E8M0;
        let (mag, neg) = if signed {
            (x.abs(), x < 0.0)
        } else {
            (x, false)
        };

        let i = t.partition_point(|&(_, v)| v < mag);
        let code = if i == 0 {
            t[0].0
        } else if i == t.len() {
            if !rule.saturate && mag > t[t.len() - 1].1 {
                return Err(Error::OutOfRange {
                    encoding: self.name(),
                    value: x,
                });
            }
            t[t.len() - 1].0
        } else {
            let (clo, vlo) = t[i - 1];
            let (chi, vhi) = t[i];
            let dlo = mag - vlo;
            let dhi = vhi - mag;
            if dlo < dhi {
                clo
            } else if dhi < dlo {
                chi
            } else if clo & 1 == 0 {
                clo
            } else {
                chi
            }
        };

        if neg && self.decode(code).unwrap() != 0.0 {
            Ok(code | (1 << (self.bits() - 1)))
        } else {
            Ok(code)
        }
    }
}

/// Smallest power of two that is >= `raw_scale`, as an E8M0 code and its
/// decoded value. Inputs below `2^-127` clamp up to the smallest
/// representable scale; inputs above `2^127` are out of range.
pub fn encode_scale_e8m0_up(raw_scale: f64) -> Result<(u8, f64)> {
    if !raw_scale.is_finite() || raw_scale <= 0.0 {
        return Err(Error::ScaleOutOfRange {
            encoding: "E8M0",
            value: raw_scale,
        });
    }
    let bits = raw_scale.to_bits();
    let biased = ((bits >> 52) & 0x7FF) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    // f64 subnormals sit far below 2^-127, so they clamp to the minimum.
    let e = if biased == 0 {
        -127
    } else {
        let floor = biased - 1023;
        if frac == 0 {
            floor
        } else {
            floor + 1
        }
    };
    if e > 127 {
        return Err(Error::ScaleOutOfRange {
            encoding: "E8M0",
            value: raw_scale,
        });
    }
    let e = e.max(-127);
    Ok(((e + 127) as u8, 2f64.powi(e)))
}

/// Smallest E4M3-representable value >= `raw_scale`, as code and decoded
/// value. Values above 448 are out of range, which signals that a secondary
/// tensor scale is required.
pub fn encode_scale_e4m3_up(raw_scale: f64) -> Result<(u8, f64)> {
    if !raw_scale.is_finite() || raw_scale <= 0.0 {
        return Err(Error::ScaleOutOfRange {
            encoding: "E4M3",
            value: raw_scale,
        });
    }
    let t = Encoding::E4M3.positive_table();
    let max = t[t.len() - 1].1;
    if raw_scale > max {
        return Err(Error::ScaleOutOfRange {
            encoding: "E4M3",
            value: raw_scale,
        });
    }
    let i = t.partition_point(|&(_, v)| v < raw_scale);
    // i >= 1 because t[0] is the zero code and raw_scale > 0.
    Ok(t[i])
}
