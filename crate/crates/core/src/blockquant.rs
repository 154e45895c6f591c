//! Block-scaled round-to-nearest quantization and dequantization.
//!
//! A tensor is blocked along its K (column) dimension in groups of `g`
//! elements. Each block gets a scale derived from its max magnitude
//! (`raw = max|x| / q_max`), rounded up through the format's scale codec so
//! no element clips; elements are then encoded to the nearest code of
//! `x / scale`. NVFP4 adds a secondary per-tensor scale that maps the
//! largest raw block scale onto the top of the E4M3 range.
//!
//! Per-block scales are independent: an outlier in one block never inflates
//! the scale of another. Rows are quantized in parallel and every block is
//! deterministic, so results do not depend on the schedule.

use crate::error::{Error, Result};
use crate::formats::{f32_scale_up, FormatSpec, ScaleKind, ZERO_TENSOR_SCALE};
use crate::matrix::Matrix;
use crate::minifloat::RoundingRule;
use crate::par;

/// Physical column order of a quantized tensor.
///
/// `Interleaved` places each 16-channel primary block of the outlier region
/// directly before its residual block; `k_primary` and `s` record the padded
/// widths of the two sections so the logical order can be recovered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Contiguous,
    Interleaved { k_primary: usize, s: usize },
}

/// Integer-coded elements plus per-block scales and an optional per-tensor
/// scale.
///
/// `codes` and `block_scales` are stored in physical order as given by
/// `layout`; `block_scales` holds the decoded scale values (without the
/// tensor scale folded in). Columns beyond `k_logical` are zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub format: FormatSpec,
    pub rows: usize,
    pub k_logical: usize,
    pub k_padded: usize,
    pub codes: Vec<u8>,
    pub block_scales: Vec<f64>,
    pub tensor_scale: Option<f64>,
    pub layout: Layout,
}

/// Per-block diagnostics captured during quantization (logical block order).
#[derive(Debug, Clone, Default)]
pub struct QuantStats {
    /// Max |x| of each block.
    pub block_max: Vec<f64>,
    /// Effective scale divided by the raw scale; 1.0 for all-zero blocks.
    pub alpha: Vec<f64>,
}

/// Result of quantizing a single block in isolation.
#[derive(Debug, Clone)]
pub struct BlockQuant {
    pub codes: Vec<u8>,
    /// Effective decoded scale.
    pub scale: f64,
    pub alpha: f64,
}

impl QuantizedTensor {
    pub fn blocks_per_row(&self) -> usize {
        if self.k_padded == 0 {
            0
        } else {
            self.k_padded / self.format.g
        }
    }

    /// An empty (zero-width) tensor; used when no residual channels exist.
    pub fn empty(rows: usize, spec: &FormatSpec) -> Self {
        Self {
            format: spec.clone(),
            rows,
            k_logical: 0,
            k_padded: 0,
            codes: Vec::new(),
            block_scales: Vec::new(),
            tensor_scale: None,
            layout: Layout::Contiguous,
        }
    }

    /// Physical block index of logical block `lb`.
    pub fn phys_block(&self, lb: usize) -> usize {
        match self.layout {
            Layout::Contiguous => lb,
            Layout::Interleaved { k_primary, s } => {
                let g = self.format.g;
                let b1 = k_primary / g;
                let bs = s / g;
                if lb < bs {
                    2 * lb
                } else if lb < b1 {
                    lb + bs
                } else {
                    2 * (lb - b1) + 1
                }
            }
        }
    }

    /// Effective scale of a physical block: block scale times the tensor
    /// scale. Every consumer goes through this so the same f64 product is
    /// used everywhere.
    #[inline]
    pub fn effective_scale(&self, row: usize, phys_block: usize) -> f64 {
        let bs = self.block_scales[row * self.blocks_per_row() + phys_block];
        match self.tensor_scale {
            Some(ts) => bs * ts,
            None => bs,
        }
    }

    /// Write the dequantized row into `out` (length `k_padded`) in logical
    /// column order.
    pub(crate) fn dequant_row_logical(&self, row: usize, out: &mut [f64]) {
        let g = self.format.g;
        let blocks = self.blocks_per_row();
        let row_codes = &self.codes[row * self.k_padded..(row + 1) * self.k_padded];
        for lb in 0..blocks {
            let pb = self.phys_block(lb);
            let eff = self.effective_scale(row, pb);
            for off in 0..g {
                let code = row_codes[pb * g + off];
                let d = self
                    .format
                    .element
                    .decode(code)
                    .expect("stored code is valid");
                out[lb * g + off] = d * eff;
            }
        }
    }

    /// Dequantize to an `rows x k_logical` matrix (padding dropped).
    pub fn dequantize(&self) -> Matrix {
        let rows = par::map_indexed(self.rows, |i| {
            let mut buf = vec![0.0f64; self.k_padded];
            self.dequant_row_logical(i, &mut buf);
            buf.truncate(self.k_logical);
            buf
        });
        Matrix::from_vec(self.rows, self.k_logical, rows.concat()).expect("consistent rows")
    }
}

/// Dequantize: element value = decode(code) * block scale * tensor scale.
pub fn dequantize(q: &QuantizedTensor) -> Matrix {
    q.dequantize()
}

/// Encode a raw block scale (already divided by the tensor scale) through the
/// format's scale codec.
fn encode_block_scale(spec: &FormatSpec, target: f64) -> Result<f64> {
    match spec.scale {
        ScaleKind::E8M0 => spec.encode_scale_up(target),
        ScaleKind::E4M3 => match spec.encode_scale_up(target) {
            Ok(s) => Ok(s),
            // The tensor scale maps the largest raw block scale onto 448;
            // f64 rounding can push that block a hair above it. Clamp the
            // hair, propagate genuine overflow.
            Err(Error::ScaleOutOfRange { .. }) if target <= 448.0 * (1.0 + 1e-9) => Ok(448.0),
            Err(e) => Err(e),
        },
        ScaleKind::Raw32 => f32_scale_up(target),
    }
}

fn quantize_block_scaled(
    x: &[f64],
    ts: f64,
    spec: &FormatSpec,
) -> Result<(Vec<u8>, f64, f64, f64)> {
    let mut m = 0.0f64;
    for &v in x {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "quantize_block",
            });
        }
        m = m.max(v.abs());
    }
    if m == 0.0 {
        return Ok((vec![0u8; x.len()], spec.smallest_positive_scale(), 1.0, 0.0));
    }
    let raw = m / spec.q_max();
    let bs = encode_block_scale(spec, raw / ts)?;
    let eff = bs * ts;
    let alpha = eff / raw;
    let rule = RoundingRule::saturating();
    let codes = x
        .iter()
        .map(|&v| spec.element.encode_nearest(v / eff, rule))
        .collect::<Result<Vec<u8>>>()?;
    Ok((codes, bs, alpha, m))
}

/// Quantize one block of exactly `g` elements with no tensor scale.
pub fn quantize_block(x: &[f64], spec: &FormatSpec) -> Result<BlockQuant> {
    if x.len() != spec.g {
        return Err(Error::ShapeMismatch(format!(
            "block of {} elements for {} (g = {})",
            x.len(),
            spec.name,
            spec.g
        )));
    }
    let (codes, bs, alpha, _m) = quantize_block_scaled(x, 1.0, spec)?;
    Ok(BlockQuant {
        codes,
        scale: bs,
        alpha,
    })
}

/// Per-tensor scale for tensor-scaled formats: maps the largest raw block
/// scale onto the max normal of the scale encoding, rounded up to an f32.
fn tensor_scale_for(global_max: f64, spec: &FormatSpec) -> Result<f64> {
    if global_max == 0.0 {
        return Ok(ZERO_TENSOR_SCALE);
    }
    let raw_max = global_max / spec.q_max();
    f32_scale_up(raw_max / 448.0)
}

/// Quantize a matrix, returning per-block diagnostics alongside the tensor.
pub fn quantize_tensor_with_stats(
    x: &Matrix,
    spec: &FormatSpec,
) -> Result<(QuantizedTensor, QuantStats)> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::EmptyInput("quantize_tensor".into()));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite {
            context: "quantize_tensor",
        });
    }
    let g = spec.g;
    let k = x.cols();
    let k_padded = k.div_ceil(g) * g;
    let blocks = k_padded / g;

    let ts_opt = if spec.tensor_scale {
        Some(tensor_scale_for(x.abs_max(), spec)?)
    } else {
        None
    };
    let ts = ts_opt.unwrap_or(1.0);

    let per_row = par::try_map_indexed(x.rows(), |i| {
        let src = x.row(i);
        let mut padded = vec![0.0f64; k_padded];
        padded[..k].copy_from_slice(src);
        let mut codes = vec![0u8; k_padded];
        let mut scales = vec![0.0f64; blocks];
        let mut maxes = vec![0.0f64; blocks];
        let mut alphas = vec![0.0f64; blocks];
        for b in 0..blocks {
            let blk = &padded[b * g..(b + 1) * g];
            let (c, bs, alpha, m) = quantize_block_scaled(blk, ts, spec)?;
            codes[b * g..(b + 1) * g].copy_from_slice(&c);
            scales[b] = bs;
            maxes[b] = m;
            alphas[b] = alpha;
        }
        Ok((codes, scales, maxes, alphas))
    })?;

    let mut codes = Vec::with_capacity(x.rows() * k_padded);
    let mut block_scales = Vec::with_capacity(x.rows() * blocks);
    let mut block_max = Vec::with_capacity(x.rows() * blocks);
    let mut alpha = Vec::with_capacity(x.rows() * blocks);
    for (c, s, m, a) in per_row {
        codes.extend(c);
        block_scales.extend(s);
        block_max.extend(m);
        alpha.extend(a);
    }

    Ok((
        QuantizedTensor {
            format: spec.clone(),
            rows: x.rows(),
            k_logical: k,
            k_padded,
            codes,
            block_scales,
            tensor_scale: ts_opt,
            layout: Layout::Contiguous,
        },
        QuantStats { block_max, alpha },
    ))
}

/// Quantize a matrix with row-major blocking along K.
pub fn quantize_tensor(x: &Matrix, spec: &FormatSpec) -> Result<QuantizedTensor> {
    Ok(quantize_tensor_with_stats(x, spec)?.0)
}

/// `y_i = x_i / sqrt(mean(x^2) + eps) * w_i`.
pub fn rmsnorm(x: &[f64], w: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.len() != w.len() {
        return Err(Error::ShapeMismatch(format!(
            "rmsnorm: {} values vs {} weights",
            x.len(),
            w.len()
        )));
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::ShapeMismatch("rmsnorm: eps must be positive".into()));
    }
    let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (mean_sq + eps).sqrt();
    Ok(x.iter().zip(w).map(|(&v, &wi)| v * inv * wi).collect())
}

/// Row-wise [`rmsnorm`] over a matrix.
pub fn rmsnorm_rows(x: &Matrix, w: &[f64], eps: f64) -> Result<Matrix> {
    if w.len() != x.cols() {
        return Err(Error::ShapeMismatch(format!(
            "rmsnorm weights of length {} for {} channels",
            w.len(),
            x.cols()
        )));
    }
    let rows = par::try_map_indexed(x.rows(), |i| rmsnorm(x.row(i), w, eps))?;
    Matrix::from_vec(x.rows(), x.cols(), rows.concat())
}
