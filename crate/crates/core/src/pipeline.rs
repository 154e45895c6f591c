//! Dual-stage quantization with augmented residual channels.
//!
//! Activations are reordered by the calibration permutation and
//! block-quantized (primary stage). For the leading outlier channels the
//! exact stage-1 residuals are computed against the dequantized primary
//! values and quantized again with fresh block scales (residual stage); the
//! residual codes and scales are appended along K. Weights are reordered and
//! quantized once; their outlier columns are duplicated bit-for-bit, so a
//! single widened GEMM reproduces the primary product plus the correction
//! term.
//!
//! Alignment channels (between `s_raw` and the 16-aligned `s`) carry zero
//! residuals and duplicate weight columns whose contribution is exactly
//! zero, which keeps the widened product identical to the two-term form.

use crate::blockquant::{self, quantize_tensor_with_stats, Layout, QuantStats, QuantizedTensor};
use crate::calibration::{apply_reorder, CalibrationProfile};
use crate::error::{Error, Result};
use crate::formats::FormatSpec;
use crate::gemm;
use crate::matrix::Matrix;

/// Quantized activation halves: primary codes for every input channel plus
/// residual codes for the first `s` reordered channels.
#[derive(Debug, Clone)]
pub struct ArcActivation {
    pub primary: QuantizedTensor,
    pub residual: QuantizedTensor,
    /// Exact stage-1 residuals (zeros in alignment columns), kept for
    /// diagnostics and the exact-residual mode.
    pub residual_exact: Matrix,
    /// Channels with real residual compensation.
    pub s_raw: usize,
    /// Residual width including alignment channels.
    pub s: usize,
    pub primary_stats: QuantStats,
    pub residual_stats: QuantStats,
}

/// Quantized weight half; the augmented block is materialized on demand as a
/// bitwise copy of the leading quantized columns.
#[derive(Debug, Clone)]
pub struct ArcWeight {
    pub primary: QuantizedTensor,
    pub s: usize,
}

impl ArcWeight {
    /// The duplicated outlier columns as a standalone tensor: codes and block
    /// scales are copied bit-for-bit from the primary (no re-quantization),
    /// wide enough to cover `s_padded` residual columns.
    pub fn outlier_copy(&self, s_padded: usize) -> QuantizedTensor {
        let g = self.primary.format.g;
        debug_assert!(s_padded.is_multiple_of(g) && s_padded <= self.primary.k_padded);
        let blocks = s_padded / g;
        let src_blocks = self.primary.blocks_per_row();
        let mut codes = Vec::with_capacity(self.primary.rows * s_padded);
        let mut scales = Vec::with_capacity(self.primary.rows * blocks);
        for i in 0..self.primary.rows {
            let row = &self.primary.codes[i * self.primary.k_padded..][..s_padded];
            codes.extend_from_slice(row);
            let srow = &self.primary.block_scales[i * src_blocks..][..blocks];
            scales.extend_from_slice(srow);
        }
        QuantizedTensor {
            format: self.primary.format.clone(),
            rows: self.primary.rows,
            k_logical: s_padded,
            k_padded: s_padded,
            codes,
            block_scales: scales,
            tensor_scale: self.primary.tensor_scale,
            layout: Layout::Contiguous,
        }
    }
}

/// Widened operands for the single-call GEMM: activation codes
/// `[Q_X | Q_R]` and weight codes `[Q_W | Q_Wo]` with their scales folded
/// into one effective scale per block.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedOperands {
    pub act: QuantizedTensor,
    pub wt: QuantizedTensor,
    /// Logical (unpadded) input width.
    pub k_in: usize,
    /// Outlier width (including alignment channels).
    pub s: usize,
}

impl AugmentedOperands {
    pub fn layout(&self) -> Layout {
        self.act.layout
    }
}

fn check_four_bit(spec: &FormatSpec) -> Result<()> {
    if !spec.is_four_bit() {
        return Err(Error::InvalidFormat(format!(
            "{} is not a 4-bit element format",
            spec.name
        )));
    }
    Ok(())
}

/// Stage 1 + stage 2 on a pre-reordered activation matrix.
fn quantize_reordered_activation(
    xr: &Matrix,
    profile: &CalibrationProfile,
    spec: &FormatSpec,
) -> Result<ArcActivation> {
    let s = profile.s;
    let s_raw = profile.s_raw.min(s);
    if s > profile.k_in() {
        return Err(Error::ShapeMismatch(format!(
            "S = {s} exceeds K_in = {}",
            profile.k_in()
        )));
    }

    let (primary, primary_stats) = quantize_tensor_with_stats(xr, spec)?;
    let dq = primary.dequantize();

    // Exact residuals for compensated channels; alignment channels stay zero.
    let mut residual_exact = Matrix::zeros(xr.rows(), s);
    for i in 0..xr.rows() {
        for j in 0..s_raw {
            residual_exact.set(i, j, xr.get(i, j) - dq.get(i, j));
        }
    }

    let (residual, residual_stats) = if s == 0 {
        (
            QuantizedTensor::empty(xr.rows(), spec),
            QuantStats::default(),
        )
    } else {
        quantize_tensor_with_stats(&residual_exact, spec)?
    };

    Ok(ArcActivation {
        primary,
        residual,
        residual_exact,
        s_raw,
        s,
        primary_stats,
        residual_stats,
    })
}

/// Online activation path: reorder, primary-quantize every channel, then
/// quantize exact residuals of the leading `s` channels with fresh scales.
pub fn quantize_activation_arc(
    x: &Matrix,
    profile: &CalibrationProfile,
    spec: &FormatSpec,
) -> Result<ArcActivation> {
    check_four_bit(spec)?;
    let xr = apply_reorder(x, profile)?;
    quantize_reordered_activation(&xr, profile, spec)
}

/// Offline weight path: reorder columns to match the activations and
/// quantize once. Duplication happens when operands are augmented.
pub fn quantize_weight_arc(
    w: &Matrix,
    profile: &CalibrationProfile,
    spec: &FormatSpec,
) -> Result<ArcWeight> {
    check_four_bit(spec)?;
    let wr = apply_reorder(w, profile)?;
    let (primary, _) = quantize_tensor_with_stats(&wr, spec)?;
    Ok(ArcWeight {
        primary,
        s: profile.s,
    })
}

fn concat_quantized(a: &QuantizedTensor, b: &QuantizedTensor) -> QuantizedTensor {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!(a.format, b.format);
    let g = a.format.g;
    let k_padded = a.k_padded + b.k_padded;
    let blocks_a = a.blocks_per_row();
    let blocks_b = b.blocks_per_row();
    let mut codes = Vec::with_capacity(a.rows * k_padded);
    let mut scales = Vec::with_capacity(a.rows * (blocks_a + blocks_b));
    for i in 0..a.rows {
        codes.extend_from_slice(&a.codes[i * a.k_padded..(i + 1) * a.k_padded]);
        codes.extend_from_slice(&b.codes[i * b.k_padded..(i + 1) * b.k_padded]);
        // Fold each section's tensor scale so the widened operand carries a
        // single effective scale per block, bit-identical to what the
        // sections would dequantize to on their own.
        for blk in 0..blocks_a {
            scales.push(a.effective_scale(i, blk));
        }
        for blk in 0..blocks_b {
            scales.push(b.effective_scale(i, blk));
        }
    }
    debug_assert_eq!(k_padded % g, 0);
    QuantizedTensor {
        format: a.format.clone(),
        rows: a.rows,
        k_logical: a.k_logical + b.k_logical,
        k_padded,
        codes,
        block_scales: scales,
        tensor_scale: None,
        layout: Layout::Contiguous,
    }
}

/// Concatenate activation and weight halves along K into the widened
/// operands of the single GEMM call.
pub fn augment(act: &ArcActivation, wt: &ArcWeight) -> Result<AugmentedOperands> {
    if act.primary.k_padded != wt.primary.k_padded {
        return Err(Error::ShapeMismatch(format!(
            "activation width {} vs weight width {}",
            act.primary.k_padded, wt.primary.k_padded
        )));
    }
    if act.s != wt.s {
        return Err(Error::ShapeMismatch(format!(
            "activation S = {} vs weight S = {}",
            act.s, wt.s
        )));
    }
    let k_in = act.primary.k_logical;
    let s = act.s;
    if s == 0 {
        let a = concat_quantized(
            &act.primary,
            &QuantizedTensor::empty(act.primary.rows, &act.primary.format),
        );
        let w = concat_quantized(
            &wt.primary,
            &QuantizedTensor::empty(wt.primary.rows, &wt.primary.format),
        );
        return Ok(AugmentedOperands {
            act: a,
            wt: w,
            k_in,
            s,
        });
    }
    let s_padded = act.residual.k_padded;
    let wo = wt.outlier_copy(s_padded);
    let a = concat_quantized(&act.primary, &act.residual);
    let w = concat_quantized(&wt.primary, &wo);
    Ok(AugmentedOperands {
        act: a,
        wt: w,
        k_in,
        s,
    })
}

fn interleave_perm(total_blocks: usize, b1: usize, bs: usize) -> Vec<usize> {
    // logical -> physical, matching QuantizedTensor::phys_block.
    (0..total_blocks)
        .map(|lb| {
            if lb < bs {
                2 * lb
            } else if lb < b1 {
                lb + bs
            } else {
                2 * (lb - b1) + 1
            }
        })
        .collect()
}

fn permute_blocks(q: &QuantizedTensor, perm: &[usize], new_layout: Layout) -> QuantizedTensor {
    let g = q.format.g;
    let blocks = q.blocks_per_row();
    let mut codes = vec![0u8; q.codes.len()];
    let mut scales = vec![0.0f64; q.block_scales.len()];
    for i in 0..q.rows {
        let src_c = &q.codes[i * q.k_padded..(i + 1) * q.k_padded];
        let dst_c = &mut codes[i * q.k_padded..(i + 1) * q.k_padded];
        let src_s = &q.block_scales[i * blocks..(i + 1) * blocks];
        let dst_s = &mut scales[i * blocks..(i + 1) * blocks];
        for (lb, &pb) in perm.iter().enumerate() {
            dst_c[pb * g..(pb + 1) * g].copy_from_slice(&src_c[lb * g..(lb + 1) * g]);
            dst_s[pb] = src_s[lb];
        }
    }
    QuantizedTensor {
        format: q.format.clone(),
        rows: q.rows,
        k_logical: q.k_logical,
        k_padded: q.k_padded,
        codes,
        block_scales: scales,
        tensor_scale: q.tensor_scale,
        layout: new_layout,
    }
}

/// Physically interleave the outlier region: each 16-channel primary block
/// is immediately followed by its residual block. The logical channel order
/// is unchanged; only the storage order moves.
pub fn to_interleaved(aug: &AugmentedOperands) -> Result<AugmentedOperands> {
    if aug.layout() != Layout::Contiguous {
        return Err(Error::Layout("operands are already interleaved".into()));
    }
    let g = aug.act.format.g;
    if !aug.s.is_multiple_of(g) {
        return Err(Error::MisalignedOutliers { s: aug.s });
    }
    if aug.s == 0 {
        return Ok(aug.clone());
    }
    let s_padded = aug.s;
    let k_primary = aug.act.k_padded - s_padded;
    let layout = Layout::Interleaved {
        k_primary,
        s: s_padded,
    };
    let perm = interleave_perm(aug.act.blocks_per_row(), k_primary / g, s_padded / g);
    Ok(AugmentedOperands {
        act: permute_blocks(&aug.act, &perm, layout),
        wt: permute_blocks(&aug.wt, &perm, layout),
        k_in: aug.k_in,
        s: aug.s,
    })
}

/// Undo [`to_interleaved`].
pub fn from_interleaved(aug: &AugmentedOperands) -> Result<AugmentedOperands> {
    let (k_primary, s) = match aug.layout() {
        Layout::Interleaved { k_primary, s } => (k_primary, s),
        Layout::Contiguous => {
            return Err(Error::Layout("operands are not interleaved".into()));
        }
    };
    let g = aug.act.format.g;
    let fwd = interleave_perm(aug.act.blocks_per_row(), k_primary / g, s / g);
    let mut inv = vec![0usize; fwd.len()];
    for (lb, &pb) in fwd.iter().enumerate() {
        inv[pb] = lb;
    }
    Ok(AugmentedOperands {
        act: permute_blocks(&aug.act, &inv, Layout::Contiguous),
        wt: permute_blocks(&aug.wt, &inv, Layout::Contiguous),
        k_in: aug.k_in,
        s: aug.s,
    })
}

/// Options for [`simulate_linear_layer`].
#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    /// RMSNorm weights, applied after reordering and before quantization in
    /// the fused stage order.
    pub rmsnorm_weight: Option<Vec<f64>>,
    pub rms_eps: f64,
    /// Diagnostic mode: skip stage-2 quantization and use the exact
    /// residuals for the correction term.
    pub exact_residual: bool,
}

impl SimulateOptions {
    pub fn new() -> Self {
        Self {
            rmsnorm_weight: None,
            rms_eps: 1e-6,
            exact_residual: false,
        }
    }
}

/// Outcome of simulating one linear layer.
#[derive(Debug, Clone)]
pub struct Simulation {
    /// Dequantized augmented GEMM output.
    pub y_hat: Matrix,
    /// Exact real-arithmetic reference output.
    pub y_exact: Matrix,
    /// Reordered (and normed, if requested) activations the pipeline saw.
    pub x_effective: Matrix,
    pub activation: ArcActivation,
    pub weight: ArcWeight,
}

/// Run the full fused order (reorder, optional RMSNorm, primary quantization,
/// residual quantization, weight duplication, widened GEMM) and return the
/// quantized output next to the exact reference `Y = X W^T`.
pub fn simulate_linear_layer(
    x: &Matrix,
    w: &Matrix,
    profile: &CalibrationProfile,
    spec: &FormatSpec,
    opts: &SimulateOptions,
) -> Result<Simulation> {
    check_four_bit(spec)?;
    if x.cols() != w.cols() {
        return Err(Error::ShapeMismatch(format!(
            "activation has {} channels, weight has {}",
            x.cols(),
            w.cols()
        )));
    }

    // Fused stage order: reorder first, then RMSNorm with reordered weights.
    let xr = apply_reorder(x, profile)?;
    let (xr, x_natural) = match &opts.rmsnorm_weight {
        Some(wn) => {
            if wn.len() != x.cols() {
                return Err(Error::ShapeMismatch(format!(
                    "rmsnorm weights of length {} for {} channels",
                    wn.len(),
                    x.cols()
                )));
            }
            let wn_reordered: Vec<f64> = profile.reorder.iter().map(|&p| wn[p]).collect();
            let normed_r = blockquant::rmsnorm_rows(&xr, &wn_reordered, opts.rms_eps)?;
            let normed_natural = blockquant::rmsnorm_rows(x, wn, opts.rms_eps)?;
            (normed_r, normed_natural)
        }
        None => (xr, x.clone()),
    };

    let act = quantize_reordered_activation(&xr, profile, spec)?;
    let wt = quantize_weight_arc(w, profile, spec)?;
    let y_exact = x_natural.matmul_nt(w)?;

    let y_hat = if opts.exact_residual {
        let y_primary = gemm::gemm_dequant(&act.primary, &wt.primary)?;
        let s_padded = act.residual.k_padded;
        if s_padded == 0 {
            y_primary
        } else {
            let wo = wt.outlier_copy(s_padded).dequantize();
            let mut r = Matrix::zeros(act.residual_exact.rows(), s_padded);
            for i in 0..r.rows() {
                for j in 0..act.residual_exact.cols() {
                    r.set(i, j, act.residual_exact.get(i, j));
                }
            }
            let correction = r.matmul_nt(&wo)?;
            let mut y = y_primary;
            for i in 0..y.rows() {
                for j in 0..y.cols() {
                    y.set(i, j, y.get(i, j) + correction.get(i, j));
                }
            }
            y
        }
    } else {
        let aug = augment(&act, &wt)?;
        gemm::gemm_dequant(&aug.act, &aug.wt)?
    };

    Ok(Simulation {
        y_hat,
        y_exact,
        x_effective: xr,
        activation: act,
        weight: wt,
    })
}
