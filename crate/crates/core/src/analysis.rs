//! Error metrics and the worst-case bound calculators.
//!
//! Two bounds govern the toolkit. Single-stage MXFP8 block quantization
//! satisfies `|e| <= alpha * M * eps8` with the power-of-two scale alignment
//! `alpha in [1, 2)`, giving the supremum `B_mx = 2 * M * eps8`. The
//! dual-stage 4-bit path quantizes the stage-1 residual again, and because
//! `eps4^2 = eps8` its bound is `|e| <= alpha1 * alpha2 * M * eps8` with
//! mantissa-coded scale alignments `alpha <= 1.125` each, giving
//! `B_arc = 1.125^2 * M * eps8 = 1.265625 * M * eps8`. Since
//! `1.265625 < 2`, the compensated 4-bit path is at least as tight as
//! MXFP8 in the worst case.
//!
//! Audits check the per-block inequalities with zero tolerance: the bounds
//! are worst-case statements, so any excess is a real defect.

use serde::Serialize;

use crate::blockquant::{QuantStats, QuantizedTensor};
use crate::error::{Error, Result};
use crate::formats::ScaleKind;
use crate::matrix::Matrix;
use crate::minifloat::Encoding;
use crate::pipeline::ArcActivation;

/// E2M1 precision limit, `2^-2`.
pub const EPS4: f64 = 0.25;
/// E4M3 precision limit, `2^-4`.
pub const EPS8: f64 = 0.0625;
/// Supremum of the E8M0 alignment factor (exclusive).
pub const MX_ALPHA_SUP: f64 = 2.0;
/// Supremum of the dual-stage alignment product `1.125^2`.
pub const ARC_ALPHA_SUP: f64 = 1.265625;

/// `eps4^2 = eps8`, the identity that lets two 4-bit stages match one 8-bit
/// stage.
pub fn epsilon_identity_holds() -> bool {
    Encoding::E2M1.eps() * Encoding::E2M1.eps() == Encoding::E4M3.eps() && EPS4 * EPS4 == EPS8
}

/// Worst-case MXFP8 block error bound `2 * M * eps8 = M / 8`.
pub fn bound_mxfp8(m: f64) -> Result<f64> {
    if m < 0.0 || m.is_nan() {
        return Err(Error::ShapeMismatch(format!(
            "dynamic range {m} must be >= 0"
        )));
    }
    Ok(MX_ALPHA_SUP * m * EPS8)
}

/// Worst-case dual-stage error bound `1.265625 * M * eps8`.
pub fn bound_arc(m: f64) -> Result<f64> {
    if m < 0.0 || m.is_nan() {
        return Err(Error::ShapeMismatch(format!(
            "dynamic range {m} must be >= 0"
        )));
    }
    Ok(ARC_ALPHA_SUP * m * EPS8)
}

/// Alignment factor statistics over the blocks of one tensor.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AlphaStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

pub fn alpha_stats(alphas: &[f64]) -> Option<AlphaStats> {
    if alphas.is_empty() {
        return None;
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &a in alphas {
        min = min.min(a);
        max = max.max(a);
        sum += a;
    }
    Some(AlphaStats {
        min,
        mean: sum / alphas.len() as f64,
        max,
    })
}

/// Elementwise error summary of an approximation against a reference.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub n: usize,
    pub mse: f64,
    pub max_abs_err: f64,
    pub frobenius_rel_err: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<AlphaStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_mx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_arc: Option<f64>,
    /// Count of per-block bound violations when an audit ran; must be zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violations: Option<u64>,
}

impl ErrorReport {
    pub fn with_alpha(mut self, stats: Option<AlphaStats>) -> Self {
        self.alpha = stats;
        self
    }

    /// Attach the per-tensor supremum bounds for dynamic range `m`.
    pub fn with_bounds(mut self, m: f64) -> Result<Self> {
        self.bound_mx = Some(bound_mxfp8(m)?);
        self.bound_arc = Some(bound_arc(m)?);
        Ok(self)
    }

    pub fn with_violations(mut self, v: u64) -> Self {
        self.violations = Some(v);
        self
    }
}

/// MSE, max absolute error and relative Frobenius error of `x_hat` against
/// `x_true`.
pub fn empirical_report(x_true: &Matrix, x_hat: &Matrix) -> Result<ErrorReport> {
    if x_true.rows() != x_hat.rows() || x_true.cols() != x_hat.cols() {
        return Err(Error::ShapeMismatch(format!(
            "report over {}x{} vs {}x{}",
            x_true.rows(),
            x_true.cols(),
            x_hat.rows(),
            x_hat.cols()
        )));
    }
    let n = x_true.len();
    if n == 0 {
        return Err(Error::EmptyInput("empirical_report".into()));
    }
    let mut sq = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut ref_sq = 0.0f64;
    for (t, h) in x_true.data().iter().zip(x_hat.data()) {
        let d = t - h;
        sq += d * d;
        max_abs = max_abs.max(d.abs());
        ref_sq += t * t;
    }
    let frobenius_rel_err = if sq == 0.0 {
        0.0
    } else if ref_sq == 0.0 {
        f64::INFINITY
    } else {
        (sq / ref_sq).sqrt()
    };
    Ok(ErrorReport {
        n,
        mse: sq / n as f64,
        max_abs_err: max_abs,
        frobenius_rel_err,
        alpha: None,
        bound_mx: None,
        bound_arc: None,
        violations: None,
    })
}

/// Outcome of a per-block bound audit.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct BoundAudit {
    pub blocks: usize,
    pub elements: usize,
    /// Elements whose error exceeded `alpha * M_block * eps`.
    pub error_violations: u64,
    /// Blocks whose alignment factor escaped the codec's range.
    pub alpha_violations: u64,
    pub alpha_max: f64,
    pub max_error_over_bound: f64,
}

fn alpha_in_range(scale: ScaleKind, alpha: f64) -> bool {
    match scale {
        // Exponent-only scales: alpha in [1, 2). The lower side is exact for
        // single-level scaling; two-level folding does not use E8M0.
        ScaleKind::E8M0 => (1.0..MX_ALPHA_SUP).contains(&alpha),
        // Mantissa-coded scales in the normal range: alpha <= 1.125. The
        // two-level fold can sit a few ulps under 1, so only the upper side
        // is asserted.
        ScaleKind::E4M3 => alpha <= 1.125,
        ScaleKind::Raw32 => alpha >= 1.0 && alpha <= 1.0 + 2.0 * f32::EPSILON as f64,
    }
}

/// Check every block of a single-stage quantization against
/// `|x - dq(x)| <= alpha * M_block * eps`, with zero tolerance, and the
/// alignment factor against the codec range.
pub fn audit_single_stage(
    x: &Matrix,
    q: &QuantizedTensor,
    stats: &QuantStats,
) -> Result<BoundAudit> {
    if x.rows() != q.rows || x.cols() != q.k_logical {
        return Err(Error::ShapeMismatch(format!(
            "audit over {}x{} matrix vs {}x{} tensor",
            x.rows(),
            x.cols(),
            q.rows,
            q.k_logical
        )));
    }
    let dq = q.dequantize();
    let g = q.format.g;
    let blocks = q.blocks_per_row();
    let eps = q.format.eps();
    let mut audit = BoundAudit::default();
    for i in 0..x.rows() {
        for b in 0..blocks {
            let idx = i * blocks + b;
            let m = stats.block_max[idx];
            let alpha = stats.alpha[idx];
            audit.blocks += 1;
            audit.alpha_max = audit.alpha_max.max(alpha);
            if m > 0.0 && !alpha_in_range(q.format.scale, alpha) {
                audit.alpha_violations += 1;
            }
            let bound = alpha * m * eps;
            let lo = b * g;
            let hi = ((b + 1) * g).min(x.cols());
            for j in lo..hi {
                audit.elements += 1;
                let e = (x.get(i, j) - dq.get(i, j)).abs();
                if e > bound {
                    audit.error_violations += 1;
                }
                if bound > 0.0 {
                    audit.max_error_over_bound = audit.max_error_over_bound.max(e / bound);
                }
            }
        }
    }
    Ok(audit)
}

/// Outcome of the dual-stage audit over compensated channels.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct DualStageAudit {
    pub elements: usize,
    /// Elements with `|x - dq1 - dq2| > alpha1 * alpha2 * M_block * eps8`.
    pub error_violations: u64,
    /// Blocks whose alignment product exceeded `1.265625`.
    pub alpha_violations: u64,
    pub alpha_product_max: f64,
    pub max_error_over_bound: f64,
}

/// Check every compensated element of a dual-stage quantization against the
/// combined bound, with zero tolerance.
///
/// `x_reordered` is the matrix the pipeline quantized (already reordered and
/// normed). Only channels with real residuals (`j < s_raw`) are audited.
pub fn audit_dual_stage(x_reordered: &Matrix, act: &ArcActivation) -> Result<DualStageAudit> {
    if x_reordered.rows() != act.primary.rows || x_reordered.cols() != act.primary.k_logical {
        return Err(Error::ShapeMismatch(format!(
            "audit over {}x{} matrix vs {}x{} primary tensor",
            x_reordered.rows(),
            x_reordered.cols(),
            act.primary.rows,
            act.primary.k_logical
        )));
    }
    let g = act.primary.format.g;
    let dq1 = act.primary.dequantize();
    let mut audit = DualStageAudit::default();
    if act.s_raw == 0 {
        return Ok(audit);
    }
    let dq2 = act.residual.dequantize();
    let pb = act.primary.blocks_per_row();
    let rb = act.residual.blocks_per_row();
    for i in 0..x_reordered.rows() {
        for j in 0..act.s_raw {
            let blk = j / g;
            let a1 = act.primary_stats.alpha[i * pb + blk];
            let m = act.primary_stats.block_max[i * pb + blk];
            let a2 = act.residual_stats.alpha[i * rb + blk];
            let a12 = a1 * a2;
            audit.elements += 1;
            audit.alpha_product_max = audit.alpha_product_max.max(a12);
            if a12 > ARC_ALPHA_SUP {
                audit.alpha_violations += 1;
            }
            let e = (x_reordered.get(i, j) - dq1.get(i, j) - dq2.get(i, j)).abs();
            let bound = a12 * m * EPS8;
            if e > bound {
                audit.error_violations += 1;
            }
            if bound > 0.0 {
                audit.max_error_over_bound = audit.max_error_over_bound.max(e / bound);
            }
        }
    }
    Ok(audit)
}

/// Startup sanity check used by the verification entry points.
pub fn check_format_identities() -> Result<()> {
    if !epsilon_identity_holds() {
        return Err(Error::InvalidFormat("eps4^2 != eps8".into()));
    }
    Ok(())
}
