//! Self-contained verification suite: codec alignment ranges, the
//! single-stage and dual-stage error bounds, the bound ordering, and the
//! widened-GEMM equivalence, all runnable with a configurable sample count
//! and seed. Every check reports a violation count; a clean run reports
//! zero everywhere.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{self, audit_dual_stage, audit_single_stage, ARC_ALPHA_SUP, MX_ALPHA_SUP};
use crate::blockquant::quantize_tensor_with_stats;
use crate::calibration::build_profile;
use crate::error::Result;
use crate::formats::FormatSpec;
use crate::gemm::{gemm_dequant, gemm_two_term};
use crate::matrix::Matrix;
use crate::minifloat::{encode_scale_e4m3_up, encode_scale_e8m0_up};
use crate::pipeline::{augment, quantize_activation_arc, quantize_weight_arc, to_interleaved};

/// Outcome of one verification check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub samples: usize,
    pub violations: u64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationSummary {
    pub seed: u64,
    pub samples: usize,
    pub checks: Vec<CheckResult>,
    pub total_violations: u64,
}

impl VerificationSummary {
    pub fn passed(&self) -> bool {
        self.total_violations == 0
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, span: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-span..span))
            .collect(),
    )
    .expect("sized data")
}

fn check_epsilon_identity() -> CheckResult {
    let ok = analysis::epsilon_identity_holds();
    CheckResult {
        name: "eps4_squared_equals_eps8",
        samples: 1,
        violations: if ok { 0 } else { 1 },
        detail: "element precision limits of the 4-bit and 8-bit formats".into(),
    }
}

fn check_codec_alpha_e8m0(rng: &mut ChaCha8Rng, samples: usize) -> CheckResult {
    let mut violations = 0u64;
    let mut max_alpha = 0.0f64;
    for _ in 0..samples {
        let raw = 2f64.powf(rng.random_range(-120.0..120.0));
        let alpha = encode_scale_e8m0_up(raw).expect("in range").1 / raw;
        max_alpha = max_alpha.max(alpha);
        if !(1.0..MX_ALPHA_SUP).contains(&alpha) {
            violations += 1;
        }
    }
    CheckResult {
        name: "e8m0_alpha_in_1_to_2",
        samples,
        violations,
        detail: format!("max alpha {max_alpha:.9}"),
    }
}

fn check_codec_alpha_e4m3(rng: &mut ChaCha8Rng, samples: usize) -> CheckResult {
    let mut violations = 0u64;
    let mut max_alpha = 0.0f64;
    for _ in 0..samples {
        // Normal-range scales.
        let raw = 2f64.powf(rng.random_range(-6.0..8.807)).min(448.0);
        let alpha = encode_scale_e4m3_up(raw).expect("in range").1 / raw;
        max_alpha = max_alpha.max(alpha);
        if !(1.0..=1.125).contains(&alpha) {
            violations += 1;
        }
    }
    CheckResult {
        name: "e4m3_alpha_in_1_to_1125",
        samples,
        violations,
        detail: format!("max alpha {max_alpha:.9}"),
    }
}

/// Single-stage MXFP8 bound: `|e| <= alpha * M_block * eps8`, `alpha < 2`.
fn check_single_stage_bound(
    rng: &mut ChaCha8Rng,
    elements: usize,
    inject_fault: bool,
) -> CheckResult {
    let cols = 512;
    let rows = elements.div_ceil(cols).max(1);
    let mut x = random_matrix(rng, rows, cols, 8.0);
    let spec = FormatSpec::mxfp8();
    let (q, stats) = quantize_tensor_with_stats(&x, &spec).expect("finite data");
    if inject_fault {
        // Negative control: perturb one element after quantization so the
        // audit must flag it.
        let v = x.get(0, 0);
        x.set(0, 0, v + 1.0 + v.abs());
    }
    let audit = audit_single_stage(&x, &q, &stats).expect("shapes match");
    CheckResult {
        name: "mxfp8_single_stage_bound",
        samples: audit.elements,
        violations: audit.error_violations + audit.alpha_violations,
        detail: format!(
            "max alpha {:.9}, max error/bound {:.6}",
            audit.alpha_max, audit.max_error_over_bound
        ),
    }
}

/// Dual-stage bound: `|e_arc| <= alpha1 * alpha2 * M_block * eps8` with the
/// alignment product never above 1.265625.
fn check_dual_stage_bound(rng: &mut ChaCha8Rng, elements: usize) -> CheckResult {
    let cols = 512;
    let rows = elements.div_ceil(cols).max(1);
    let x = random_matrix(rng, rows, cols, 8.0);
    let spec = FormatSpec::nvfp4();
    let profile = build_profile(std::slice::from_ref(&x), "verify")
        .expect("finite data")
        .with_s_override(cols)
        .expect("full compensation");
    let act = quantize_activation_arc(&x, &profile, &spec).expect("quantizes");
    let xr = crate::calibration::apply_reorder(&x, &profile).expect("profile matches");
    let audit = audit_dual_stage(&xr, &act).expect("shapes match");
    let sup_ok = audit.alpha_product_max <= ARC_ALPHA_SUP;
    CheckResult {
        name: "nvfp4_dual_stage_bound",
        samples: audit.elements,
        violations: audit.error_violations + audit.alpha_violations + if sup_ok { 0 } else { 1 },
        detail: format!(
            "max alpha1*alpha2 {:.9}, max error/bound {:.6}",
            audit.alpha_product_max, audit.max_error_over_bound
        ),
    }
}

/// `B_arc(M) / B_mx(M) = 0.6328125` for every positive dynamic range:
/// asserted as the cross-multiplied exact identity for arbitrary reals and
/// as the literal quotient on integer and power-of-two sweeps (where the
/// division introduces no rounding).
fn check_bound_ordering(rng: &mut ChaCha8Rng, samples: usize) -> CheckResult {
    let mut violations = 0u64;
    for m in 1..=1024u64 {
        let m = m as f64;
        let ratio = analysis::bound_arc(m).unwrap() / analysis::bound_mxfp8(m).unwrap();
        if ratio != 0.6328125 {
            violations += 1;
        }
    }
    for e in -60..=60 {
        let m = 2f64.powi(e);
        let ratio = analysis::bound_arc(m).unwrap() / analysis::bound_mxfp8(m).unwrap();
        if ratio != 0.6328125 {
            violations += 1;
        }
    }
    for _ in 0..samples {
        let m = 2f64.powf(rng.random_range(-40.0..40.0)) * rng.random_range(1.0..2.0);
        // 1.265625 / 2 = 81/128 as exact rationals.
        if analysis::bound_arc(m).unwrap() * 128.0 != analysis::bound_mxfp8(m).unwrap() * 81.0 {
            violations += 1;
        }
    }
    CheckResult {
        name: "bound_ratio_is_0_6328125",
        samples: samples + 1024 + 121,
        violations,
        detail: "B_arc/B_mx, exact".into(),
    }
}

/// Widened single GEMM equals the two-term product bit for bit, under both
/// layouts.
fn check_fused_equivalence(rng: &mut ChaCha8Rng, configs: usize) -> CheckResult {
    let spec = FormatSpec::nvfp4();
    let mut violations = 0u64;
    for _ in 0..configs {
        let n = rng.random_range(1..6);
        let m = rng.random_range(1..6);
        let k = 16 * rng.random_range(1..9);
        let mut x = random_matrix(rng, n, k, 3.0);
        // Sprinkle outliers so residuals matter.
        for _ in 0..2 {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..k);
            let v = x.get(i, j) * 50.0;
            x.set(i, j, v);
        }
        let w = random_matrix(rng, m, k, 3.0);
        let s_choices = [0usize, 16, k / 2 / 16 * 16, k];
        let s = s_choices[rng.random_range(0..s_choices.len())].min(k);
        let profile = build_profile(std::slice::from_ref(&x), "verify")
            .expect("finite")
            .with_s_override(s)
            .expect("s <= k");
        let act = quantize_activation_arc(&x, &profile, &spec).expect("quantizes");
        let wt = quantize_weight_arc(&w, &profile, &spec).expect("quantizes");
        let aug = augment(&act, &wt).expect("widths agree");
        let fused = gemm_dequant(&aug.act, &aug.wt).expect("compatible");
        let wo = wt.outlier_copy(act.residual.k_padded);
        let two_term =
            gemm_two_term(&act.primary, &wt.primary, &act.residual, &wo).expect("compatible");
        if fused != two_term {
            violations += 1;
        }
        if s % 16 == 0 && s > 0 {
            let inter = to_interleaved(&aug).expect("aligned");
            let fused_inter = gemm_dequant(&inter.act, &inter.wt).expect("compatible");
            if fused_inter != fused {
                violations += 1;
            }
        }
    }
    CheckResult {
        name: "fused_gemm_equivalence",
        samples: configs,
        violations,
        detail: "bit-identical under the fixed reduction order".into(),
    }
}

/// Run the whole suite. `samples` scales the Monte Carlo checks;
/// `inject_fault` flips the negative control that must produce violations.
pub fn run_verification(
    samples: usize,
    seed: u64,
    inject_fault: bool,
) -> Result<VerificationSummary> {
    analysis::check_format_identities()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = vec![
        check_epsilon_identity(),
        check_codec_alpha_e8m0(&mut rng, samples),
        check_codec_alpha_e4m3(&mut rng, samples),
        check_single_stage_bound(&mut rng, samples, inject_fault),
        check_dual_stage_bound(&mut rng, samples),
        check_bound_ordering(&mut rng, samples.min(100_000)),
        check_fused_equivalence(&mut rng, (samples / 2000).clamp(20, 200)),
    ];
    let total_violations = checks.iter().map(|c| c.violations).sum();
    Ok(VerificationSummary {
        seed,
        samples,
        checks,
        total_violations,
    })
}
