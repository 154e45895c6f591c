//! `arcquant` command line: calibration, quantization, layer simulation,
//! method comparison and bound verification over ARCT tensor files.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use arcquant_core::analysis;
use arcquant_core::analysis::empirical_report;
use arcquant_core::baselines::{compare_methods, CompareOptions};
use arcquant_core::blockquant::quantize_tensor_with_stats;
use arcquant_core::calibration::build_profile;
use arcquant_core::formats::{format_table, FormatSpec};
use arcquant_core::gemm::{cost_model, GemmShape};
use arcquant_core::pipeline::{simulate_linear_layer, SimulateOptions};
use arcquant_core::tensorio;
use arcquant_core::verify::run_verification;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
enum Emit {
    #[default]
    Text,
    Json,
    Csv,
}

#[derive(Parser)]
#[command(
    name = "arcquant",
    version,
    about = "Block-scaled quantization toolkit with augmented residual channels"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the block-scaled format comparison table.
    Formats {
        #[arg(long, value_enum, default_value_t = Emit::Text)]
        emit: Emit,
    },
    /// Generate a synthetic activation tensor with designated outlier
    /// channels.
    Gen {
        /// Output ARCT file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        /// Number of channels scaled up to act as outliers.
        #[arg(long, default_value_t = 1)]
        outliers: usize,
        #[arg(long, default_value_t = 32.0)]
        outlier_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a calibration profile from one or more activation tensors.
    Calibrate {
        /// Input ARCT files (calibration batches).
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Layer name recorded in the profile.
        #[arg(long, default_value = "layer")]
        layer: String,
        /// Output profile JSON.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Emit::Text)]
        emit: Emit,
    },
    /// Block-quantize a tensor and report its reconstruction error.
    Quantize {
        input: PathBuf,
        #[arg(long, default_value = "nvfp4")]
        format: String,
        /// Optional output file holding codes and scales.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Emit::Text)]
        emit: Emit,
    },
    /// Simulate one linear layer through the dual-stage pipeline and compare
    /// against the baseline transforms.
    Simulate {
        act: PathBuf,
        wt: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value = "nvfp4")]
        format: String,
        /// Force an exact outlier channel count.
        #[arg(long)]
        s_override: Option<usize>,
        /// Smoothing strength for the smooth baseline.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Optional RMSNorm weight tensor (1 x K), applied in the fused
        /// stage order.
        #[arg(long)]
        rmsnorm: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Emit::Text)]
        emit: Emit,
    },
    /// Compare RTN, smoothing, rotation and the residual pipeline on one
    /// layer.
    Compare {
        act: PathBuf,
        wt: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value = "nvfp4")]
        format: String,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long)]
        s_override: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Emit::Text)]
        emit: Emit,
    },
    /// Run the bound and equivalence verification suite.
    VerifyBounds {
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative control: perturb one element so the audit must fire.
        #[arg(long, hide = true)]
        inject_fault: bool,
        #[arg(long, value_enum, default_value_t = Emit::Text)]
        emit: Emit,
    },
}

fn load_profile(
    path: &PathBuf,
    s_override: Option<usize>,
) -> anyhow::Result<arcquant_core::CalibrationProfile> {
    let p = tensorio::read_profile(path)
        .with_context(|| format!("reading profile {}", path.display()))?;
    match s_override {
        Some(s) => Ok(p.with_s_override(s)?),
        None => Ok(p),
    }
}

fn run() -> anyhow::Result<bool> {
    analysis::check_format_identities()?;
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Formats { emit } => {
            let table = format_table();
            match emit {
                Emit::Text => output::formats_text(&table),
                Emit::Json => output::json(&table)?,
                Emit::Csv => output::formats_csv(&table),
            }
            Ok(true)
        }
        Cmd::Gen {
            out,
            rows,
            cols,
            outliers,
            outlier_scale,
            seed,
        } => {
            let x = tensorio::gen_synthetic(rows, cols, outliers, outlier_scale, seed)?;
            tensorio::write_tensor(&out, &x)?;
            println!(
                "wrote {rows}x{cols} tensor with {outliers} outlier channel(s) (scale {outlier_scale}, seed {seed}) to {}",
                out.display()
            );
            Ok(true)
        }
        Cmd::Calibrate {
            inputs,
            layer,
            out,
            emit,
        } => {
            let mut batches = Vec::with_capacity(inputs.len());
            for p in &inputs {
                batches.push(
                    tensorio::read_tensor(p).with_context(|| format!("reading {}", p.display()))?,
                );
            }
            let profile = build_profile(&batches, &layer)?;
            tensorio::write_profile(&out, &profile)?;
            match emit {
                Emit::Json => output::json(&profile)?,
                _ => println!(
                    "layer {}: k_in={} m={} tau={} s_raw={} s={} -> {}",
                    profile.layer,
                    profile.k_in(),
                    profile.m,
                    profile.tau,
                    profile.s_raw,
                    profile.s,
                    out.display()
                ),
            }
            Ok(true)
        }
        Cmd::Quantize {
            input,
            format,
            out,
            seed,
            emit,
        } => {
            let spec = FormatSpec::from_name(&format)?;
            let x = tensorio::read_tensor(&input)?;
            let (q, stats) = quantize_tensor_with_stats(&x, &spec)?;
            let audit = analysis::audit_single_stage(&x, &q, &stats)?;
            let dq = q.dequantize();
            let report = empirical_report(&x, &dq)?
                .with_alpha(analysis::alpha_stats(&stats.alpha))
                .with_bounds(x.abs_max())?
                .with_violations(audit.error_violations + audit.alpha_violations);
            if let Some(path) = &out {
                tensorio::write_quantized(path, &q)?;
            }
            let doc = output::QuantizeDoc {
                command: "quantize",
                seed,
                format: &spec.name,
                rows: x.rows(),
                cols: x.cols(),
                tensor_scale: q.tensor_scale,
                report,
            };
            match emit {
                Emit::Json => output::json(&doc)?,
                Emit::Csv => output::quantize_csv(&doc),
                Emit::Text => output::quantize_text(&doc),
            }
            Ok(true)
        }
        Cmd::Simulate {
            act,
            wt,
            profile,
            format,
            s_override,
            alpha,
            rmsnorm,
            seed,
            emit,
        } => {
            let spec = FormatSpec::from_name(&format)?;
            let x = tensorio::read_tensor(&act)?;
            let w = tensorio::read_tensor(&wt)?;
            let prof = load_profile(&profile, s_override)?;
            let mut opts = SimulateOptions::new();
            if let Some(path) = &rmsnorm {
                let wn = tensorio::read_tensor(path)?;
                if wn.rows() != 1 {
                    bail!("rmsnorm weights must be a 1 x K tensor");
                }
                opts.rmsnorm_weight = Some(wn.data().to_vec());
            }
            let sim = simulate_linear_layer(&x, &w, &prof, &spec, &opts)?;
            let output_report = empirical_report(&sim.y_exact, &sim.y_hat)?;

            // Activation-domain view of the same run, split by channel class.
            let recon = output::activation_reconstruction(&sim);
            let activation_report = empirical_report(&sim.x_effective, &recon)?;
            let (mse_comp, mse_uncomp) =
                output::per_class_mse(&sim.x_effective, &recon, sim.activation.s_raw);

            let shape = GemmShape::new(x.rows(), prof.k_in(), w.rows())?;
            let cost = cost_model(&shape, prof.s);
            let x_for_compare = match &opts.rmsnorm_weight {
                Some(wn) => arcquant_core::blockquant::rmsnorm_rows(&x, wn, opts.rms_eps)?,
                None => x.clone(),
            };
            let methods = compare_methods(
                &x_for_compare,
                &w,
                &spec,
                &prof,
                &CompareOptions {
                    smooth_alpha: alpha,
                    seed,
                },
            )?;

            let doc = output::SimulateDoc {
                command: "simulate",
                seed,
                format: &spec.name,
                layer: &prof.layer,
                k_in: prof.k_in(),
                s_raw: sim.activation.s_raw,
                s: prof.s,
                overhead_ratio: cost.overhead_ratio,
                flops: cost.flops,
                output: output_report,
                activation: activation_report,
                activation_mse_compensated: mse_comp,
                activation_mse_uncompensated: mse_uncomp,
                methods,
            };
            match emit {
                Emit::Json => output::json(&doc)?,
                Emit::Csv => output::simulate_csv(&doc),
                Emit::Text => output::simulate_text(&doc),
            }
            Ok(true)
        }
        Cmd::Compare {
            act,
            wt,
            profile,
            format,
            alpha,
            s_override,
            seed,
            emit,
        } => {
            let spec = FormatSpec::from_name(&format)?;
            let x = tensorio::read_tensor(&act)?;
            let w = tensorio::read_tensor(&wt)?;
            let prof = load_profile(&profile, s_override)?;
            let methods = compare_methods(
                &x,
                &w,
                &spec,
                &prof,
                &CompareOptions {
                    smooth_alpha: alpha,
                    seed,
                },
            )?;
            let doc = output::CompareDoc {
                command: "compare",
                seed,
                format: &spec.name,
                layer: &prof.layer,
                s: prof.s,
                methods,
            };
            match emit {
                Emit::Json => output::json(&doc)?,
                Emit::Csv => output::compare_csv(&doc.methods),
                Emit::Text => output::compare_text(&doc),
            }
            Ok(true)
        }
        Cmd::VerifyBounds {
            samples,
            seed,
            inject_fault,
            emit,
        } => {
            if samples == 0 {
                bail!("--samples must be at least 1");
            }
            let summary = run_verification(samples, seed, inject_fault)?;
            match emit {
                Emit::Json => output::json(&summary)?,
                Emit::Csv => output::verify_csv(&summary),
                Emit::Text => output::verify_text(&summary),
            }
            Ok(summary.passed())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
