//! Block-scaled format descriptors and the reference format table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minifloat::{encode_scale_e4m3_up, encode_scale_e8m0_up, Encoding};

/// How per-block scales are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleKind {
    /// Power-of-two scale, rounded up (MX formats).
    E8M0,
    /// Mantissa-coded scale with a 2^-3 step, rounded up (NVFP4).
    E4M3,
    /// Plain binary32 scale, rounded up to the next f32 (integer baseline).
    Raw32,
}

impl ScaleKind {
    pub const fn name(self) -> &'static str {
        match self {
            ScaleKind::E8M0 => "E8M0",
            ScaleKind::E4M3 => "E4M3",
            ScaleKind::Raw32 => "FP32",
        }
    }

    pub const fn bits(self) -> u32 {
        match self {
            ScaleKind::E8M0 | ScaleKind::E4M3 => 8,
            ScaleKind::Raw32 => 32,
        }
    }
}

/// A block-scaled numeric format: element encoding, block size, scale
/// encoding, and whether a secondary per-tensor scale applies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatSpec {
    pub name: String,
    pub element: Encoding,
    /// Block size: how many elements share one scale.
    pub g: usize,
    pub scale: ScaleKind,
    pub tensor_scale: bool,
}

/// Tensor scale assigned to an all-zero tensor. Any positive value works
/// (codes are zero, so the dequantized tensor is exactly zero); the smallest
/// positive binary32 keeps the serialized field exact.
pub const ZERO_TENSOR_SCALE: f64 = f32::MIN_POSITIVE as f64;

impl FormatSpec {
    /// 16 E2M1 elements per block, E4M3 block scales, FP32 tensor scale.
    pub fn nvfp4() -> Self {
        Self {
            name: "nvfp4".into(),
            element: Encoding::E2M1,
            g: 16,
            scale: ScaleKind::E4M3,
            tensor_scale: true,
        }
    }

    /// 32 E2M1 elements per block, E8M0 block scales.
    pub fn mxfp4() -> Self {
        Self {
            name: "mxfp4".into(),
            element: Encoding::E2M1,
            g: 32,
            scale: ScaleKind::E8M0,
            tensor_scale: false,
        }
    }

    /// 32 E3M2 elements per block, E8M0 block scales. The E3M2 variant is the
    /// wider-range of the two FP6 element types.
    pub fn mxfp6() -> Self {
        Self {
            name: "mxfp6".into(),
            element: Encoding::E3M2,
            g: 32,
            scale: ScaleKind::E8M0,
            tensor_scale: false,
        }
    }

    /// 32 E4M3 elements per block, E8M0 block scales.
    pub fn mxfp8() -> Self {
        Self {
            name: "mxfp8".into(),
            element: Encoding::E4M3,
            g: 32,
            scale: ScaleKind::E8M0,
            tensor_scale: false,
        }
    }

    /// Symmetric 4-bit integers with per-group binary32 scales, group 128.
    pub fn int4() -> Self {
        Self::int4_with_group(128)
    }

    pub fn int4_with_group(g: usize) -> Self {
        Self {
            name: "int4".into(),
            element: Encoding::Int4,
            g,
            scale: ScaleKind::Raw32,
            tensor_scale: false,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "nvfp4" => Ok(Self::nvfp4()),
            "mxfp4" => Ok(Self::mxfp4()),
            "mxfp6" => Ok(Self::mxfp6()),
            "mxfp8" => Ok(Self::mxfp8()),
            "int4" => Ok(Self::int4()),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }

    pub fn q_max(&self) -> f64 {
        self.element.max_normal()
    }

    pub fn eps(&self) -> f64 {
        self.element.eps()
    }

    /// Worst-case alignment factor of the block-scale codec on normal-range
    /// inputs: 2 for E8M0, 1.125 for E4M3, 1 (up to one f32 ulp) for raw.
    pub fn scale_alpha_sup(&self) -> f64 {
        match self.scale {
            ScaleKind::E8M0 => 2.0,
            ScaleKind::E4M3 => 1.125,
            ScaleKind::Raw32 => 1.0 + 2.0 * f32::EPSILON as f64,
        }
    }

    pub fn is_four_bit(&self) -> bool {
        self.element.bits() == 4
    }

    /// Smallest positive representable block scale; assigned to all-zero
    /// blocks.
    pub fn smallest_positive_scale(&self) -> f64 {
        match self.scale {
            ScaleKind::E8M0 => 2f64.powi(-127),
            // Smallest E4M3 subnormal: 2^(1-7) * 2^-3.
            ScaleKind::E4M3 => 2f64.powi(-9),
            ScaleKind::Raw32 => f32::MIN_POSITIVE as f64,
        }
    }

    /// Round a raw scale up to the next representable scale value and return
    /// the decoded result.
    pub fn encode_scale_up(&self, raw: f64) -> Result<f64> {
        match self.scale {
            ScaleKind::E8M0 => Ok(encode_scale_e8m0_up(raw)?.1),
            ScaleKind::E4M3 => Ok(encode_scale_e4m3_up(raw)?.1),
            ScaleKind::Raw32 => f32_scale_up(raw),
        }
    }
}

/// Smallest f32 value >= `x`, returned as f64. Used for raw binary32 scales
/// and the NVFP4 tensor scale so that serialized scales reproduce the
/// in-memory values exactly.
pub(crate) fn f32_scale_up(x: f64) -> Result<f64> {
    debug_assert!(x > 0.0);
    let mut y = x as f32;
    if (y as f64) < x {
        y = f32::from_bits(y.to_bits() + 1);
    }
    if !y.is_finite() {
        return Err(Error::ScaleOutOfRange {
            encoding: "FP32",
            value: x,
        });
    }
    Ok(y as f64)
}

/// One row of the format comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct FormatRow {
    pub format: &'static str,
    pub element_bits: u32,
    pub element_type: &'static str,
    pub bias: i32,
    pub max_normal: f64,
    pub g: usize,
    pub scale_type: &'static str,
    pub scale_bits: u32,
    pub tensor_scale: Option<&'static str>,
}

/// The MX-compliant format comparison table, including both element variants
/// of MXFP8 and MXFP6.
pub fn format_table() -> Vec<FormatRow> {
    vec![
        FormatRow {
            format: "mxfp8",
            element_bits: 8,
            element_type: "FP8 (E5M2)",
            bias: 15,
            max_normal: 57344.0,
            g: 32,
            scale_type: "E8M0",
            scale_bits: 8,
            tensor_scale: None,
        },
        FormatRow {
            format: "mxfp8",
            element_bits: 8,
            element_type: "FP8 (E4M3)",
            bias: 7,
            max_normal: 448.0,
            g: 32,
            scale_type: "E8M0",
            scale_bits: 8,
            tensor_scale: None,
        },
        FormatRow {
            format: "mxfp6",
            element_bits: 6,
            element_type: "FP6 (E3M2)",
            bias: 3,
            max_normal: 28.0,
            g: 32,
            scale_type: "E8M0",
            scale_bits: 8,
            tensor_scale: None,
        },
        FormatRow {
            format: "mxfp6",
            element_bits: 6,
            element_type: "FP6 (E2M3)",
            bias: 1,
            max_normal: 7.5,
            g: 32,
            scale_type: "E8M0",
            scale_bits: 8,
            tensor_scale: None,
        },
        FormatRow {
            format: "mxfp4",
            element_bits: 4,
            element_type: "FP4 (E2M1)",
            bias: 1,
            max_normal: 6.0,
            g: 32,
            scale_type: "E8M0",
            scale_bits: 8,
            tensor_scale: None,
        },
        FormatRow {
            format: "nvfp4",
            element_bits: 4,
            element_type: "FP4 (E2M1)",
            bias: 1,
            max_normal: 6.0,
            g: 16,
            scale_type: "E4M3",
            scale_bits: 8,
            tensor_scale: Some("FP32"),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_formats_match_table_parameters() {
        let nv = FormatSpec::nvfp4();
        assert_eq!(nv.g, 16);
        assert_eq!(nv.scale, ScaleKind::E4M3);
        assert!(nv.tensor_scale);
        assert_eq!(nv.q_max(), 6.0);
        assert_eq!(nv.eps(), 0.25);

        let mx4 = FormatSpec::mxfp4();
        assert_eq!(mx4.g, 32);
        assert_eq!(mx4.scale, ScaleKind::E8M0);
        assert!(!mx4.tensor_scale);

        let mx8 = FormatSpec::mxfp8();
        assert_eq!(mx8.element, Encoding::E4M3);
        assert_eq!(mx8.g, 32);
        assert_eq!(mx8.eps(), 0.0625);

        // eps4^2 = eps8 ties the 4-bit and 8-bit formats together.
        assert_eq!(FormatSpec::nvfp4().eps().powi(2), FormatSpec::mxfp8().eps());
    }

    #[test]
    fn from_name_roundtrip() {
        for name in ["nvfp4", "mxfp4", "mxfp6", "mxfp8", "int4"] {
            assert_eq!(FormatSpec::from_name(name).unwrap().name, name);
        }
        assert!(FormatSpec::from_name("fp16").is_err());
    }

    #[test]
    fn table_has_expected_max_normals() {
        let table = format_table();
        let maxes: Vec<f64> = table.iter().map(|r| r.max_normal).collect();
        assert_eq!(maxes, vec![57344.0, 448.0, 28.0, 7.5, 6.0, 6.0]);
        let nv = table.last().unwrap();
        assert_eq!(nv.g, 16);
        assert_eq!(nv.scale_type, "E4M3");
        assert_eq!(nv.tensor_scale, Some("FP32"));
    }

    #[test]
    fn f32_scale_up_is_tight() {
        assert_eq!(f32_scale_up(1.0).unwrap(), 1.0);
        let x = 1.0 + 1e-12;
        let up = f32_scale_up(x).unwrap();
        assert!(up >= x);
        assert!(up <= 1.0 + 2.0 * f32::EPSILON as f64);
        assert!(f32_scale_up(1e300).is_err());
    }
}
