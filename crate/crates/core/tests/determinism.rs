//! Results must not depend on the parallel schedule: the same inputs produce
//! bit-identical outputs on a single-thread pool and on a wide pool.

#![cfg(feature = "parallel")]

use arcquant_core::baselines::{compare_methods, CompareOptions};
use arcquant_core::blockquant::quantize_tensor;
use arcquant_core::calibration::build_profile;
use arcquant_core::formats::FormatSpec;
use arcquant_core::gemm::gemm_dequant;
use arcquant_core::pipeline::{augment, quantize_activation_arc, quantize_weight_arc};
use arcquant_core::tensorio::gen_synthetic;

#[test]
fn outputs_are_schedule_independent() {
    let x = gen_synthetic(32, 192, 2, 40.0, 11).unwrap();
    let w = gen_synthetic(24, 192, 0, 1.0, 12).unwrap();
    let spec = FormatSpec::nvfp4();
    let profile = build_profile(&[x.clone()], "det").unwrap();

    let run = || {
        let q = quantize_tensor(&x, &spec).unwrap();
        let act = quantize_activation_arc(&x, &profile, &spec).unwrap();
        let wt = quantize_weight_arc(&w, &profile, &spec).unwrap();
        let aug = augment(&act, &wt).unwrap();
        let y = gemm_dequant(&aug.act, &aug.wt).unwrap();
        let cmp = compare_methods(&x, &w, &spec, &profile, &CompareOptions::default()).unwrap();
        let mses: Vec<f64> = cmp.iter().map(|m| m.output.mse).collect();
        (q, y, mses)
    };

    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let wide = rayon::ThreadPoolBuilder::new()
        .num_threads(8)
        .build()
        .unwrap();
    let (q1, y1, m1) = single.install(run);
    let (q2, y2, m2) = wide.install(run);
    let (q3, y3, m3) = run();

    assert_eq!(q1, q2);
    assert_eq!(q1, q3);
    assert_eq!(y1, y2);
    assert_eq!(y1, y3);
    assert_eq!(m1, m2);
    assert_eq!(m1, m3);
}
