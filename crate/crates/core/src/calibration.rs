//! Offline calibration: channel reordering indices and the outlier channel
//! count from per-channel absolute maxima.
//!
//! Channels are ranked by their absolute maximum over all calibration
//! batches. With `M` the layer-wise maximum, the selection threshold is
//! `tau = M / 8` (the three-bit exponent gap between an E5M2 reference and
//! E2M1 elements), and the channels strictly above `tau` are selected for
//! residual compensation. The raw count is aligned up to a multiple of 16 so
//! outlier groups land on NVFP4 block boundaries; alignment channels carry
//! zero residuals downstream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;

/// Outlier counts are aligned up to this many channels (the NVFP4 block
/// size).
pub const OUTLIER_ALIGN: usize = 16;

/// Per-layer calibration result. Field names are fixed by the profile JSON
/// schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub layer: String,
    /// Channel indices sorted by descending absolute maximum (ties broken by
    /// lower original index).
    pub reorder: Vec<usize>,
    /// Per-channel max |x| over all batches, in original channel order.
    pub channel_max: Vec<f64>,
    /// Layer-wise maximum.
    pub m: f64,
    /// Selection threshold `m / 8`.
    pub tau: f64,
    /// Channels strictly above `tau`.
    pub s_raw: usize,
    /// `s_raw` aligned up to a multiple of 16, capped at the channel count.
    pub s: usize,
}

impl CalibrationProfile {
    pub fn k_in(&self) -> usize {
        self.channel_max.len()
    }

    /// Permutation mapping reordered positions back to original channels.
    pub fn inverse_reorder(&self) -> Vec<usize> {
        let mut inv = vec![0usize; self.reorder.len()];
        for (j, &p) in self.reorder.iter().enumerate() {
            inv[p] = j;
        }
        inv
    }

    /// Force an exact outlier width, e.g. to compensate every channel. The
    /// override becomes both `s_raw` and `s`, so all `s` channels carry real
    /// residuals.
    pub fn with_s_override(&self, s: usize) -> Result<Self> {
        if s > self.k_in() {
            return Err(Error::ShapeMismatch(format!(
                "S override {s} exceeds {} input channels",
                self.k_in()
            )));
        }
        let mut p = self.clone();
        p.s_raw = s;
        p.s = s;
        Ok(p)
    }
}

fn align_outliers(s_raw: usize, k_in: usize) -> usize {
    if s_raw == 0 {
        0
    } else {
        (s_raw.div_ceil(OUTLIER_ALIGN) * OUTLIER_ALIGN).min(k_in)
    }
}

/// Aggregate per-channel maxima over calibration batches and derive the
/// reorder permutation, threshold and outlier counts.
pub fn build_profile(batches: &[Matrix], layer_name: &str) -> Result<CalibrationProfile> {
    let first = batches
        .first()
        .ok_or_else(|| Error::EmptyInput("build_profile".into()))?;
    let k_in = first.cols();
    if k_in == 0 {
        return Err(Error::EmptyInput("build_profile: zero channels".into()));
    }
    for (i, b) in batches.iter().enumerate() {
        if b.cols() != k_in {
            return Err(Error::ShapeMismatch(format!(
                "batch {i} has {} channels, expected {k_in}",
                b.cols()
            )));
        }
        if !b.all_finite() {
            return Err(Error::NonFinite {
                context: "build_profile",
            });
        }
    }

    // Per-batch column maxima in parallel, then a deterministic merge in
    // batch order.
    let partials = par::map_indexed(batches.len(), |i| batches[i].col_abs_max());
    let mut channel_max = vec![0.0f64; k_in];
    for p in partials {
        for (dst, src) in channel_max.iter_mut().zip(p) {
            if src > *dst {
                *dst = src;
            }
        }
    }

    let m = channel_max.iter().fold(0.0f64, |a, &v| a.max(v));
    let tau = m / 8.0;

    let mut reorder: Vec<usize> = (0..k_in).collect();
    reorder.sort_by(|&a, &b| {
        channel_max[b]
            .partial_cmp(&channel_max[a])
            .expect("finite maxima")
            .then(a.cmp(&b))
    });

    let s_raw = channel_max.iter().filter(|&&v| v > tau).count();
    let s = align_outliers(s_raw, k_in);

    Ok(CalibrationProfile {
        layer: layer_name.to_string(),
        reorder,
        channel_max,
        m,
        tau,
        s_raw,
        s,
    })
}

/// Permute columns into calibrated order (descending channel max).
pub fn apply_reorder(x: &Matrix, profile: &CalibrationProfile) -> Result<Matrix> {
    if x.cols() != profile.k_in() {
        return Err(Error::ShapeMismatch(format!(
            "matrix has {} channels, profile expects {}",
            x.cols(),
            profile.k_in()
        )));
    }
    x.permute_cols(&profile.reorder)
}

/// Undo [`apply_reorder`].
pub fn apply_inverse_reorder(x: &Matrix, profile: &CalibrationProfile) -> Result<Matrix> {
    if x.cols() != profile.k_in() {
        return Err(Error::ShapeMismatch(format!(
            "matrix has {} channels, profile expects {}",
            x.cols(),
            profile.k_in()
        )));
    }
    x.permute_cols(&profile.inverse_reorder())
}
