//! Comparison transforms: plain RTN, randomized Hadamard rotation, and
//! activation smoothing, next to the residual-channel pipeline.
//!
//! The rotation and smoothing transforms are exact in real arithmetic when
//! the paired transform is applied to the weights, so any output difference
//! after quantization is attributable to how the transform reshapes the
//! value distribution the quantizer sees.

use serde::Serialize;

use crate::analysis::{empirical_report, ErrorReport};
use crate::blockquant::quantize_tensor;
use crate::calibration::CalibrationProfile;
use crate::error::{Error, Result};
use crate::formats::FormatSpec;
use crate::gemm::gemm_dequant;
use crate::matrix::Matrix;
use crate::par;
use crate::pipeline::{augment, quantize_activation_arc, quantize_weight_arc};

use rand::Rng;
use rand::SeedableRng;

/// Randomized orthonormal Hadamard operator `diag(signs) * H / sqrt(dim)`.
#[derive(Debug, Clone)]
pub struct HadamardTransform {
    pub dim: usize,
    pub signs: Vec<f64>,
}

impl HadamardTransform {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || !dim.is_power_of_two() {
            return Err(Error::ShapeMismatch(format!(
                "Hadamard dimension {dim} is not a power of two"
            )));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let signs = (0..dim)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Ok(Self { dim, signs })
    }

    /// Transform sized for a `width`-channel layer: the largest power-of-two
    /// prefix is rotated, remaining channels pass through unchanged.
    pub fn for_width(width: usize, seed: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::EmptyInput("hadamard width".into()));
        }
        let dim = if width.is_power_of_two() {
            width
        } else {
            usize::pow(2, width.ilog2())
        };
        Self::new(dim, seed)
    }

    /// Materialize the operator as a dense matrix (rows transform to
    /// columns of the output under `x * Q`).
    pub fn to_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            let mut e = vec![0.0f64; self.dim];
            e[i] = self.signs[i];
            fwht(&mut e);
            let norm = 1.0 / (self.dim as f64).sqrt();
            for (j, v) in e.iter().enumerate() {
                m.set(i, j, v * norm);
            }
        }
        m
    }
}

/// In-place fast Walsh-Hadamard butterfly (unnormalized).
fn fwht(v: &mut [f64]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        for chunk in v.chunks_mut(2 * h) {
            for i in 0..h {
                let a = chunk[i];
                let b = chunk[i + h];
                chunk[i] = a + b;
                chunk[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// Apply `x * diag(signs) * H / sqrt(dim)` to the leading `dim` columns of
/// each row. Applying the same transform to the weights preserves `X W^T`
/// in real arithmetic.
pub fn hadamard_apply(x: &Matrix, t: &HadamardTransform) -> Result<Matrix> {
    if t.dim > x.cols() {
        return Err(Error::ShapeMismatch(format!(
            "transform dimension {} exceeds {} columns",
            t.dim,
            x.cols()
        )));
    }
    let norm = 1.0 / (t.dim as f64).sqrt();
    let rows = par::map_indexed(x.rows(), |i| {
        let src = x.row(i);
        let mut buf: Vec<f64> = src[..t.dim]
            .iter()
            .zip(&t.signs)
            .map(|(v, s)| v * s)
            .collect();
        fwht(&mut buf);
        let mut out = Vec::with_capacity(x.cols());
        out.extend(buf.into_iter().map(|v| v * norm));
        out.extend_from_slice(&src[t.dim..]);
        out
    });
    Matrix::from_vec(x.rows(), x.cols(), rows.concat())
}

/// Per-channel smoothing scales `s_j = x_max_j^alpha / w_max_j^(1-alpha)`.
/// Channels with a zero column max get scale 1.
pub fn smooth_scales(x_colmax: &[f64], w_colmax: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if x_colmax.len() != w_colmax.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} activation maxima vs {} weight maxima",
            x_colmax.len(),
            w_colmax.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::ShapeMismatch(format!(
            "smoothing alpha {alpha} not in [0, 1]"
        )));
    }
    Ok(x_colmax
        .iter()
        .zip(w_colmax)
        .map(|(&xm, &wm)| {
            if xm == 0.0 || wm == 0.0 {
                1.0
            } else {
                xm.powf(alpha) / wm.powf(1.0 - alpha)
            }
        })
        .collect())
}

/// Divide each column of `x` by its scale (activation side of smoothing).
pub fn divide_cols(x: &Matrix, scales: &[f64]) -> Result<Matrix> {
    scale_cols(x, scales, true)
}

/// Multiply each column of `w` by its scale (weight side of smoothing).
pub fn multiply_cols(w: &Matrix, scales: &[f64]) -> Result<Matrix> {
    scale_cols(w, scales, false)
}

fn scale_cols(x: &Matrix, scales: &[f64], divide: bool) -> Result<Matrix> {
    if scales.len() != x.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{} scales for {} columns",
            scales.len(),
            x.cols()
        )));
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for (v, &s) in row.iter_mut().zip(scales) {
            if divide {
                *v /= s;
            } else {
                *v *= s;
            }
        }
    }
    Ok(out)
}

/// Quantization strategy under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rtn,
    Smooth,
    Hadamard,
    ArcQuant,
}

impl Method {
    pub const fn as_str(self) -> &'static str {
        match self {
            Method::Rtn => "rtn",
            Method::Smooth => "smooth",
            Method::Hadamard => "hadamard",
            Method::ArcQuant => "arcquant",
        }
    }

    pub const fn all() -> [Method; 4] {
        [
            Method::Rtn,
            Method::Smooth,
            Method::Hadamard,
            Method::ArcQuant,
        ]
    }
}

/// One row of the method comparison: output error of the quantized product
/// against the exact `X W^T`.
#[derive(Debug, Clone, Serialize)]
pub struct MethodReport {
    pub method: &'static str,
    pub output: ErrorReport,
}

#[derive(Debug, Clone, Copy)]
pub struct CompareOptions {
    pub smooth_alpha: f64,
    pub seed: u64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            smooth_alpha: 0.5,
            seed: 0,
        }
    }
}

fn rtn_output(x: &Matrix, w: &Matrix, spec: &FormatSpec) -> Result<Matrix> {
    let qx = quantize_tensor(x, spec)?;
    let qw = quantize_tensor(w, spec)?;
    gemm_dequant(&qx, &qw)
}

/// Run every method on the same layer and report output MSE and max error
/// against the exact product.
pub fn compare_methods(
    x: &Matrix,
    w: &Matrix,
    spec: &FormatSpec,
    profile: &CalibrationProfile,
    opts: &CompareOptions,
) -> Result<Vec<MethodReport>> {
    if x.cols() != w.cols() {
        return Err(Error::ShapeMismatch(format!(
            "activation has {} channels, weight has {}",
            x.cols(),
            w.cols()
        )));
    }
    let y_exact = x.matmul_nt(w)?;
    let mut out = Vec::with_capacity(4);

    for method in Method::all() {
        let y_hat = match method {
            Method::Rtn => rtn_output(x, w, spec)?,
            Method::Smooth => {
                let scales = smooth_scales(&x.col_abs_max(), &w.col_abs_max(), opts.smooth_alpha)?;
                rtn_output(&divide_cols(x, &scales)?, &multiply_cols(w, &scales)?, spec)?
            }
            Method::Hadamard => {
                let t = HadamardTransform::for_width(x.cols(), opts.seed)?;
                rtn_output(&hadamard_apply(x, &t)?, &hadamard_apply(w, &t)?, spec)?
            }
            Method::ArcQuant => {
                let act = quantize_activation_arc(x, profile, spec)?;
                let wt = quantize_weight_arc(w, profile, spec)?;
                let aug = augment(&act, &wt)?;
                gemm_dequant(&aug.act, &aug.wt)?
            }
        };
        out.push(MethodReport {
            method: method.as_str(),
            output: empirical_report(&y_exact, &y_hat)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::build_profile;
    use rand::Rng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| r.random_range(-2.0..2.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn h2_closed_form() {
        let t = HadamardTransform {
            dim: 2,
            signs: vec![1.0, 1.0],
        };
        let x = Matrix::from_vec(1, 2, vec![3.0, 3.0]).unwrap();
        let y = hadamard_apply(&x, &t).unwrap();
        assert!((y.get(0, 0) - 3.0 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(y.get(0, 1), 0.0);
    }

    #[test]
    fn norm_preservation_and_orthonormality() {
        let t = HadamardTransform::new(64, 0).unwrap();
        let mut r = rng(41);
        let x = random_matrix(&mut r, 4, 64);
        let y = hadamard_apply(&x, &t).unwrap();
        for i in 0..4 {
            let nx: f64 = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny: f64 = y.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((nx - ny).abs() < 1e-10);
        }
        let q = t.to_matrix();
        let qqt = q.matmul_nt(&q).unwrap();
        let mut frob = 0.0f64;
        for i in 0..64 {
            for j in 0..64 {
                let want = if i == j { 1.0 } else { 0.0 };
                frob += (qqt.get(i, j) - want).powi(2);
            }
        }
        assert!(frob.sqrt() < 1e-12, "orthonormality defect {}", frob.sqrt());
    }

    #[test]
    fn paired_transform_preserves_product() {
        let mut r = rng(43);
        let x = random_matrix(&mut r, 5, 64);
        let w = random_matrix(&mut r, 6, 64);
        let exact = x.matmul_nt(&w).unwrap();
        let t = HadamardTransform::new(64, 1).unwrap();
        let rotated = hadamard_apply(&x, &t)
            .unwrap()
            .matmul_nt(&hadamard_apply(&w, &t).unwrap())
            .unwrap();
        let rel = rotated.sub(&exact).unwrap().frobenius() / exact.frobenius();
        assert!(rel < 1e-10, "relative defect {rel}");
    }

    #[test]
    fn hadamard_spreads_an_outlier_into_small_blocks() {
        // [100, 1, 1, ...] over 64 channels: every previously small block's
        // max grows after the rotation.
        let mut vals = vec![1.0f64; 64];
        vals[0] = 100.0;
        let x = Matrix::from_vec(1, 64, vals).unwrap();
        let t = HadamardTransform::new(64, 0).unwrap();
        let y = hadamard_apply(&x, &t).unwrap();
        let g = 16;
        for b in 1..4 {
            let before = x.row(0)[b * g..(b + 1) * g]
                .iter()
                .fold(0.0f64, |a, &v| a.max(v.abs()));
            let after = y.row(0)[b * g..(b + 1) * g]
                .iter()
                .fold(0.0f64, |a, &v| a.max(v.abs()));
            assert!(after > before, "block {b}: {after} <= {before}");
        }
    }

    #[test]
    fn smoothing_endpoints_and_preservation() {
        let xm = vec![4.0, 9.0, 1.0];
        let wm = vec![2.0, 3.0, 5.0];
        let s0 = smooth_scales(&xm, &wm, 0.0).unwrap();
        assert_eq!(s0, vec![0.5, 1.0 / 3.0, 0.2]);
        let s1 = smooth_scales(&xm, &wm, 1.0).unwrap();
        assert_eq!(s1, vec![4.0, 9.0, 1.0]);
        assert_eq!(smooth_scales(&[0.0], &[2.0], 0.5).unwrap(), vec![1.0]);
        assert!(smooth_scales(&xm, &wm, 1.5).is_err());

        let mut r = rng(47);
        let x = random_matrix(&mut r, 4, 24);
        let w = random_matrix(&mut r, 3, 24);
        let s = smooth_scales(&x.col_abs_max(), &w.col_abs_max(), 0.5).unwrap();
        let exact = x.matmul_nt(&w).unwrap();
        let smoothed = divide_cols(&x, &s)
            .unwrap()
            .matmul_nt(&multiply_cols(&w, &s).unwrap())
            .unwrap();
        let rel = smoothed.sub(&exact).unwrap().frobenius() / exact.frobenius();
        assert!(rel < 1e-10);
    }

    #[test]
    fn transform_is_deterministic_per_seed() {
        let a = HadamardTransform::new(32, 5).unwrap();
        let b = HadamardTransform::new(32, 5).unwrap();
        let c = HadamardTransform::new(32, 6).unwrap();
        assert_eq!(a.signs, b.signs);
        assert_ne!(a.signs, c.signs);
    }

    #[test]
    fn compare_ranks_arc_first_on_outlier_data() {
        // A population of outlier channels of varying magnitude: smoothing
        // inflates the matching weight columns and rotation spreads the
        // outliers, while residual compensation targets them directly.
        use crate::tensorio::gen_synthetic;
        let x = gen_synthetic(64, 256, 16, 32.0, 51).unwrap();
        let w = gen_synthetic(512, 256, 0, 1.0, 52).unwrap();
        let profile = build_profile(&[x.clone()], "l").unwrap();
        assert!(profile.s_raw >= 16);
        let reports = compare_methods(
            &x,
            &w,
            &FormatSpec::nvfp4(),
            &profile,
            &CompareOptions::default(),
        )
        .unwrap();
        assert_eq!(reports.len(), 4);
        let arc = reports
            .iter()
            .find(|r| r.method == "arcquant")
            .unwrap()
            .output
            .mse;
        for r in &reports {
            if r.method != "arcquant" {
                assert!(
                    arc < r.output.mse,
                    "arcquant {} !< {} {}",
                    arc,
                    r.method,
                    r.output.mse
                );
            }
        }
    }
}
