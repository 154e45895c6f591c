//! Report documents and their text/JSON/CSV renderings.

use serde::Serialize;

use arcquant_core::analysis::ErrorReport;
use arcquant_core::baselines::MethodReport;
use arcquant_core::formats::FormatRow;
use arcquant_core::matrix::Matrix;
use arcquant_core::pipeline::Simulation;
use arcquant_core::verify::VerificationSummary;

pub fn json<T: Serialize>(doc: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(doc)?);
    Ok(())
}

pub fn formats_text(table: &[FormatRow]) {
    println!(
        "{:<8} {:>5} {:<12} {:>5} {:>10} {:>4} {:<6} {:>6} {:<6}",
        "format", "bits", "element", "bias", "max", "g", "scale", "s.bits", "tensor"
    );
    for r in table {
        println!(
            "{:<8} {:>5} {:<12} {:>5} {:>10} {:>4} {:<6} {:>6} {:<6}",
            r.format,
            r.element_bits,
            r.element_type,
            r.bias,
            r.max_normal,
            r.g,
            r.scale_type,
            r.scale_bits,
            r.tensor_scale.unwrap_or("-")
        );
    }
}

pub fn formats_csv(table: &[FormatRow]) {
    println!(
        "format,element_bits,element_type,bias,max_normal,g,scale_type,scale_bits,tensor_scale"
    );
    for r in table {
        println!(
            "{},{},{},{},{},{},{},{},{}",
            r.format,
            r.element_bits,
            r.element_type,
            r.bias,
            r.max_normal,
            r.g,
            r.scale_type,
            r.scale_bits,
            r.tensor_scale.unwrap_or("")
        );
    }
}

#[derive(Serialize)]
pub struct QuantizeDoc<'a> {
    pub command: &'static str,
    pub seed: u64,
    pub format: &'a str,
    pub rows: usize,
    pub cols: usize,
    pub tensor_scale: Option<f64>,
    pub report: ErrorReport,
}

pub fn quantize_text(doc: &QuantizeDoc) {
    println!(
        "quantize  format={} seed={}  {}x{}",
        doc.format, doc.seed, doc.rows, doc.cols
    );
    if let Some(ts) = doc.tensor_scale {
        println!("  tensor_scale      {ts:e}");
    }
    println!("  mse               {:e}", doc.report.mse);
    println!("  max_abs_err       {:e}", doc.report.max_abs_err);
    println!("  frobenius_rel_err {:e}", doc.report.frobenius_rel_err);
    if let Some(a) = &doc.report.alpha {
        println!(
            "  alpha min/mean/max {:.6} / {:.6} / {:.6}",
            a.min, a.mean, a.max
        );
    }
    if let Some(v) = doc.report.violations {
        println!("  bound violations  {v}");
    }
}

pub fn quantize_csv(doc: &QuantizeDoc) {
    println!("command,format,seed,rows,cols,mse,max_abs_err,frobenius_rel_err");
    println!(
        "{},{},{},{},{},{},{},{}",
        doc.command,
        doc.format,
        doc.seed,
        doc.rows,
        doc.cols,
        doc.report.mse,
        doc.report.max_abs_err,
        doc.report.frobenius_rel_err
    );
}

#[derive(Serialize)]
pub struct SimulateDoc<'a> {
    pub command: &'static str,
    pub seed: u64,
    pub format: &'a str,
    pub layer: &'a str,
    pub k_in: usize,
    pub s_raw: usize,
    pub s: usize,
    pub overhead_ratio: f64,
    pub flops: u64,
    /// Quantized output vs exact output.
    pub output: ErrorReport,
    /// Reconstructed activations vs the (reordered, normed) reference.
    pub activation: ErrorReport,
    pub activation_mse_compensated: f64,
    pub activation_mse_uncompensated: f64,
    pub methods: Vec<MethodReport>,
}

pub fn simulate_text(doc: &SimulateDoc) {
    println!(
        "simulate  format={} seed={} layer={} k_in={} s_raw={} s={} overhead={:.4} flops={}",
        doc.format, doc.seed, doc.layer, doc.k_in, doc.s_raw, doc.s, doc.overhead_ratio, doc.flops
    );
    println!(
        "  output      mse={:e}  max={:e}  rel={:e}",
        doc.output.mse, doc.output.max_abs_err, doc.output.frobenius_rel_err
    );
    println!(
        "  activation  mse={:e}  max={:e}  (compensated {:e}, uncompensated {:e})",
        doc.activation.mse,
        doc.activation.max_abs_err,
        doc.activation_mse_compensated,
        doc.activation_mse_uncompensated
    );
    compare_table(&doc.methods);
}

pub fn simulate_csv(doc: &SimulateDoc) {
    println!("method,mse,max_abs_err,frobenius_rel_err");
    println!(
        "pipeline,{},{},{}",
        doc.output.mse, doc.output.max_abs_err, doc.output.frobenius_rel_err
    );
    for m in &doc.methods {
        println!(
            "{},{},{},{}",
            m.method, m.output.mse, m.output.max_abs_err, m.output.frobenius_rel_err
        );
    }
}

#[derive(Serialize)]
pub struct CompareDoc<'a> {
    pub command: &'static str,
    pub seed: u64,
    pub format: &'a str,
    pub layer: &'a str,
    pub s: usize,
    pub methods: Vec<MethodReport>,
}

fn compare_table(methods: &[MethodReport]) {
    println!(
        "  {:<10} {:>14} {:>14} {:>14}",
        "method", "mse", "max_abs_err", "rel_frob"
    );
    for m in methods {
        println!(
            "  {:<10} {:>14.6e} {:>14.6e} {:>14.6e}",
            m.method, m.output.mse, m.output.max_abs_err, m.output.frobenius_rel_err
        );
    }
}

pub fn compare_text(doc: &CompareDoc) {
    println!(
        "compare  format={} seed={} layer={} s={}",
        doc.format, doc.seed, doc.layer, doc.s
    );
    compare_table(&doc.methods);
}

pub fn compare_csv(methods: &[MethodReport]) {
    println!("method,mse,max_abs_err,frobenius_rel_err");
    for m in methods {
        println!(
            "{},{},{},{}",
            m.method, m.output.mse, m.output.max_abs_err, m.output.frobenius_rel_err
        );
    }
}

pub fn verify_text(s: &VerificationSummary) {
    println!("verify-bounds  seed={} samples={}", s.seed, s.samples);
    for c in &s.checks {
        let status = if c.violations == 0 { "PASS" } else { "FAIL" };
        println!(
            "  [{status}] {:<32} samples={:<9} violations={:<3} {}",
            c.name, c.samples, c.violations, c.detail
        );
    }
    println!("total violations: {}", s.total_violations);
}

pub fn verify_csv(s: &VerificationSummary) {
    println!("check,samples,violations");
    for c in &s.checks {
        println!("{},{},{}", c.name, c.samples, c.violations);
    }
}

/// Reconstruct the activations the widened GEMM effectively consumed:
/// primary dequantization plus residual dequantization on the compensated
/// columns.
pub fn activation_reconstruction(sim: &Simulation) -> Matrix {
    let dq1 = sim.activation.primary.dequantize();
    let mut recon = dq1.clone();
    if sim.activation.s > 0 {
        let dq2 = sim.activation.residual.dequantize();
        for i in 0..recon.rows() {
            for j in 0..sim.activation.s {
                let v = recon.get(i, j) + dq2.get(i, j);
                recon.set(i, j, v);
            }
        }
    }
    recon
}

/// Mean squared activation error split at the compensated/uncompensated
/// channel boundary.
pub fn per_class_mse(x: &Matrix, recon: &Matrix, s_raw: usize) -> (f64, f64) {
    let mut comp = 0.0f64;
    let mut uncomp = 0.0f64;
    let mut n_comp = 0usize;
    let mut n_uncomp = 0usize;
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let d = x.get(i, j) - recon.get(i, j);
            if j < s_raw {
                comp += d * d;
                n_comp += 1;
            } else {
                uncomp += d * d;
                n_uncomp += 1;
            }
        }
    }
    (
        if n_comp == 0 {
            0.0
        } else {
            comp / n_comp as f64
        },
        if n_uncomp == 0 {
            0.0
        } else {
            uncomp / n_uncomp as f64
        },
    )
}
