//! Reference matrix multiply over quantized operands.
//!
//! `Y[i][j]` is a serial left-to-right sum over logical channels of
//! `dequant(act)[i][k] * dequant(wt)[j][k]`, accumulated in f64 with no
//! fused-multiply-add or reassociation. Output rows are computed in
//! parallel, but each element's reduction order is fixed, so results are
//! bit-reproducible under any schedule and independent of the physical
//! (contiguous or interleaved) storage order.
//!
//! The two-term form runs the primary product first and then accumulates
//! the residual product into the same output elements (a beta = 1 second
//! GEMM). That continuation reproduces the widened single call's reduction
//! sequence exactly, which makes the augmentation equivalence testable as
//! bit equality rather than a tolerance check.

use crate::blockquant::QuantizedTensor;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;

/// Problem size of one linear layer multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GemmShape {
    /// Rows of the activation.
    pub n: usize,
    /// Reduction width (`k_in` or `k_in + s`).
    pub k: usize,
    /// Rows of the weight (output features).
    pub m: usize,
}

impl GemmShape {
    pub fn new(n: usize, k: usize, m: usize) -> Result<Self> {
        if n == 0 || k == 0 || m == 0 {
            return Err(Error::ShapeMismatch(format!(
                "GEMM shape ({n}, {k}, {m}) must be positive"
            )));
        }
        Ok(Self { n, k, m })
    }
}

fn check_compatible(act: &QuantizedTensor, wt: &QuantizedTensor) -> Result<()> {
    if act.format != wt.format {
        return Err(Error::ShapeMismatch(format!(
            "operand formats differ: {} vs {}",
            act.format.name, wt.format.name
        )));
    }
    if act.k_padded != wt.k_padded {
        return Err(Error::ShapeMismatch(format!(
            "reduction widths differ: {} vs {}",
            act.k_padded, wt.k_padded
        )));
    }
    if act.layout != wt.layout {
        return Err(Error::Layout("operand layouts differ".into()));
    }
    Ok(())
}

fn dequant_rows_logical(q: &QuantizedTensor) -> Vec<Vec<f64>> {
    par::map_indexed(q.rows, |i| {
        let mut buf = vec![0.0f64; q.k_padded];
        q.dequant_row_logical(i, &mut buf);
        buf
    })
}

/// `dequant(act) * dequant(wt)^T` with the fixed logical reduction order.
pub fn gemm_dequant(act: &QuantizedTensor, wt: &QuantizedTensor) -> Result<Matrix> {
    check_compatible(act, wt)?;
    let w_rows = dequant_rows_logical(wt);
    let out = par::map_indexed(act.rows, |i| {
        let mut a = vec![0.0f64; act.k_padded];
        act.dequant_row_logical(i, &mut a);
        let mut row = vec![0.0f64; wt.rows];
        for (j, o) in row.iter_mut().enumerate() {
            let b = &w_rows[j];
            let mut acc = 0.0f64;
            for k in 0..act.k_padded {
                acc += a[k] * b[k];
            }
            *o = acc;
        }
        row
    });
    Matrix::from_vec(act.rows, wt.rows, out.concat())
}

/// Primary product plus residual product, with the residual accumulation
/// continuing from the primary partial sums per output element.
pub fn gemm_two_term(
    q_x: &QuantizedTensor,
    q_w: &QuantizedTensor,
    q_r: &QuantizedTensor,
    q_wo: &QuantizedTensor,
) -> Result<Matrix> {
    let mut y = gemm_dequant(q_x, q_w)?;
    if q_r.k_padded == 0 {
        return Ok(y);
    }
    check_compatible(q_r, q_wo)?;
    if q_r.rows != q_x.rows || q_wo.rows != q_w.rows {
        return Err(Error::ShapeMismatch(format!(
            "residual operands are {}x{} and {}x{}, expected {} and {} rows",
            q_r.rows, q_r.k_padded, q_wo.rows, q_wo.k_padded, q_x.rows, q_w.rows
        )));
    }
    let wo_rows = dequant_rows_logical(q_wo);
    let rows = par::map_indexed(q_r.rows, |i| {
        let mut r = vec![0.0f64; q_r.k_padded];
        q_r.dequant_row_logical(i, &mut r);
        let mut row = vec![0.0f64; q_wo.rows];
        for (j, o) in row.iter_mut().enumerate() {
            let b = &wo_rows[j];
            let mut acc = y.get(i, j);
            for k in 0..q_r.k_padded {
                acc += r[k] * b[k];
            }
            *o = acc;
        }
        row
    });
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            y.set(i, j, v);
        }
    }
    Ok(y)
}

/// Cost of one widened GEMM call.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CostModel {
    /// `2 * n * (k_in + s) * m` multiply-adds counted as flops.
    pub flops: u64,
    /// Extra reduction width relative to the original: `s / k_in`.
    pub overhead_ratio: f64,
}

/// Linear cost model: flops grow affinely in the number of augmented
/// channels.
pub fn cost_model(shape: &GemmShape, s: usize) -> CostModel {
    let flops = 2u64 * shape.n as u64 * (shape.k + s) as u64 * shape.m as u64;
    CostModel {
        flops,
        overhead_ratio: s as f64 / shape.k as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockquant::{quantize_tensor, Layout};
    use crate::formats::FormatSpec;
    use rand::Rng;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_activations_give_zero_output() {
        let spec = FormatSpec::mxfp4();
        let x = Matrix::zeros(2, 32);
        let mut w = Matrix::zeros(3, 32);
        for j in 0..32 {
            w.set(0, j, 1.0);
        }
        let qx = quantize_tensor(&x, &spec).unwrap();
        let qw = quantize_tensor(&w, &spec).unwrap();
        assert_eq!(gemm_dequant(&qx, &qw).unwrap(), Matrix::zeros(2, 3));
    }

    #[test]
    fn all_max_normal_block_has_closed_form() {
        // 1 x g by 1 x g of all 6.0 at unit scales: y = g * 36.
        let spec = FormatSpec::nvfp4();
        let g = spec.g;
        let q = QuantizedTensor {
            format: spec.clone(),
            rows: 1,
            k_logical: g,
            k_padded: g,
            codes: vec![0x7; g], // +6.0
            block_scales: vec![1.0],
            tensor_scale: None,
            layout: Layout::Contiguous,
        };
        let y = gemm_dequant(&q, &q).unwrap();
        assert_eq!(y.get(0, 0), g as f64 * 36.0);
    }

    #[test]
    fn matches_dense_multiply_of_dequantized_operands() {
        // Independent oracle: dequantize both operands and run the plain
        // dense product with the same serial reduction order.
        let mut r = rng(21);
        let spec = FormatSpec::nvfp4();
        let x =
            Matrix::from_vec(5, 48, (0..240).map(|_| r.random_range(-4.0..4.0)).collect()).unwrap();
        let w =
            Matrix::from_vec(7, 48, (0..336).map(|_| r.random_range(-4.0..4.0)).collect()).unwrap();
        let qx = quantize_tensor(&x, &spec).unwrap();
        let qw = quantize_tensor(&w, &spec).unwrap();
        let y = gemm_dequant(&qx, &qw).unwrap();
        let oracle = qx.dequantize().matmul_nt(&qw.dequantize()).unwrap();
        assert_eq!(y, oracle);
    }

    #[test]
    fn cost_model_is_exactly_affine_in_s() {
        let shape = GemmShape::new(8, 3584, 512).unwrap();
        let base = cost_model(&shape, 0);
        assert_eq!(base.overhead_ratio, 0.0);
        let mut prev = base.flops;
        for step in 1..=64usize {
            let s = step * 16;
            let c = cost_model(&shape, s);
            assert_eq!(c.flops - prev, 2 * 8 * 16 * 512);
            prev = c.flops;
        }
        let full = cost_model(&shape, 3584);
        assert_eq!(full.overhead_ratio, 1.0);
        assert_eq!(full.flops, 2 * base.flops);
        let typical = cost_model(&shape, 512);
        assert!((typical.overhead_ratio - 0.142857142857).abs() < 1e-9);
    }

    #[test]
    fn shape_validation() {
        assert!(GemmShape::new(0, 4, 4).is_err());
        assert!(GemmShape::new(1, 1, 1).is_ok());
    }

    #[test]
    fn mismatched_operands_are_rejected() {
        let spec = FormatSpec::mxfp4();
        let x = Matrix::zeros(2, 32);
        let w = Matrix::zeros(2, 64);
        let qx = quantize_tensor(&x, &spec).unwrap();
        let qw = quantize_tensor(&w, &spec).unwrap();
        assert!(gemm_dequant(&qx, &qw).is_err());
        let qw8 = quantize_tensor(&Matrix::zeros(2, 32), &FormatSpec::mxfp8()).unwrap();
        assert!(gemm_dequant(&qx, &qw8).is_err());
    }
}
