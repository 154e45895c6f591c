//! Property tests over the codec lattice, block quantization and the
//! augmentation plumbing.

use proptest::prelude::*;

use arcquant_core::blockquant::{quantize_block, quantize_tensor};
use arcquant_core::calibration::{apply_inverse_reorder, apply_reorder, build_profile};
use arcquant_core::formats::FormatSpec;
use arcquant_core::matrix::Matrix;
use arcquant_core::minifloat::{Encoding, RoundingRule};
use arcquant_core::pipeline::{
    augment, from_interleaved, quantize_activation_arc, quantize_weight_arc, to_interleaved,
};

fn element_encodings() -> impl Strategy<Value = Encoding> {
    prop::sample::select(vec![
        Encoding::E2M1,
        Encoding::E2M3,
        Encoding::E3M2,
        Encoding::E4M3,
        Encoding::E5M2,
        Encoding::Int4,
    ])
}

fn formats() -> impl Strategy<Value = FormatSpec> {
    prop::sample::select(vec![
        FormatSpec::nvfp4(),
        FormatSpec::mxfp4(),
        FormatSpec::mxfp6(),
        FormatSpec::mxfp8(),
        FormatSpec::int4_with_group(32),
    ])
}

proptest! {
    /// decode(encode(decode(c))) == decode(c) on every valid code.
    #[test]
    fn codec_roundtrip_idempotent(enc in element_encodings(), raw in 0u8..=255) {
        let codes = enc.valid_codes();
        let c = codes[raw as usize % codes.len()];
        let v = enc.decode(c).unwrap();
        let c2 = enc.encode_nearest(v, RoundingRule::strict()).unwrap();
        prop_assert_eq!(enc.decode(c2).unwrap(), v);
    }

    /// The encode error never exceeds the distance to any other code.
    #[test]
    fn encode_is_no_worse_than_any_code(enc in element_encodings(), x in -8f64..8.0) {
        let lim = enc.max_normal();
        let x = x.clamp(-lim, lim);
        let c = enc.encode_nearest(x, RoundingRule::strict()).unwrap();
        let err = (enc.decode(c).unwrap() - x).abs();
        for other in enc.valid_codes() {
            prop_assert!(err <= (enc.decode(other).unwrap() - x).abs() + 1e-15);
        }
    }

    /// Block quantization keeps every element within alpha * max|x| * eps of
    /// its input, for every format.
    #[test]
    fn block_error_bound(spec in formats(), seed in 0u64..1_000_000) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..spec.g).map(|_| rng.random_range(-16.0..16.0)).collect();
        let q = quantize_block(&x, &spec).unwrap();
        let m = x.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for (i, &c) in q.codes.iter().enumerate() {
            let dq = spec.element.decode(c).unwrap() * q.scale;
            prop_assert!((x[i] - dq).abs() <= q.alpha * m * spec.eps());
        }
    }

    /// Tensor round-trips never exceed the per-element bound and padding
    /// never leaks into the output shape.
    #[test]
    fn tensor_quantization_shape_and_bound(
        spec in formats(),
        rows in 1usize..5,
        cols in 1usize..70,
        seed in 0u64..100_000,
    ) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-50.0..50.0)).collect(),
        ).unwrap();
        let q = quantize_tensor(&x, &spec).unwrap();
        prop_assert_eq!(q.k_padded % spec.g, 0);
        let dq = q.dequantize();
        prop_assert_eq!(dq.rows(), rows);
        prop_assert_eq!(dq.cols(), cols);
        // Loose tensor-level bound: alpha is at most the codec supremum on
        // every block, so the worst element error is below sup_alpha * M * eps.
        let m = x.abs_max();
        let worst = x.sub(&dq).unwrap().data().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        prop_assert!(worst <= spec.scale_alpha_sup() * m * spec.eps() * (1.0 + 1e-12));
    }

    /// Reordering is a bijection: reorder then inverse-reorder is identity.
    #[test]
    fn reorder_inverse_identity(rows in 1usize..5, cols in 1usize..40, seed in 0u64..100_000) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-4.0..4.0)).collect(),
        ).unwrap();
        let p = build_profile(&[x.clone()], "prop").unwrap();
        let xr = apply_reorder(&x, &p).unwrap();
        prop_assert_eq!(apply_inverse_reorder(&xr, &p).unwrap(), x);
    }

    /// Interleave and its inverse are exact mutual inverses whenever the
    /// outlier width is block-aligned, and the augmented widths agree.
    #[test]
    fn interleave_roundtrip(seed in 0u64..100_000, blocks in 1usize..6, s_blocks in 0usize..6) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let k = 16 * blocks.max(s_blocks.max(1));
        let s = 16 * s_blocks.min(blocks.max(s_blocks.max(1)));
        let spec = FormatSpec::nvfp4();
        let x = Matrix::from_vec(3, k, (0..3 * k).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let w = Matrix::from_vec(2, k, (0..2 * k).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let profile = build_profile(&[x.clone()], "prop").unwrap().with_s_override(s).unwrap();
        let act = quantize_activation_arc(&x, &profile, &spec).unwrap();
        let wt = quantize_weight_arc(&w, &profile, &spec).unwrap();
        let aug = augment(&act, &wt).unwrap();
        prop_assert_eq!(aug.act.k_padded, aug.wt.k_padded);
        let inter = to_interleaved(&aug).unwrap();
        if s > 0 {
            prop_assert_eq!(from_interleaved(&inter).unwrap(), aug);
        } else {
            prop_assert_eq!(inter, aug);
        }
    }
}
