use dintr_core::annotations::{rle_decode, rle_encode};
use dintr_core::codec::{Codec, Frame, Mask};
use dintr_core::conditioning::Indicator;
use dintr_core::conditioning::{pack_targets, split_attention};
use dintr_core::denoiser::IdentityNetwork;
use dintr_core::engine::{interpolate, NoiseContext, OperatorKind};
use dintr_core::extraction::{map_to_indicator, normalize, segment_of, FusedSaliency, OutputKind};
use dintr_core::metrics::{box_iou, mask_jaccard};
use dintr_core::numerics::Tensor;
use dintr_core::schedule::{seeded_noise, NoiseSchedule};
use proptest::prelude::*;

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn saliency() -> impl Strategy<Value = FusedSaliency> {
    (2usize..10, 2usize..10).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f64..1.0, w * h)
            .prop_map(move |v| FusedSaliency::from_values(w, h, normalize(&v)).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn concat_then_split_round_trips(a in tensor(3, 4), b in tensor(2, 4), c in tensor(5, 4)) {
        let joined = Tensor::concat(&[&a, &b, &c], 0).unwrap();
        let parts = joined.split(0, &[3, 2, 5]).unwrap();
        prop_assert_eq!(&parts[0], &a);
        prop_assert_eq!(&parts[1], &b);
        prop_assert_eq!(&parts[2], &c);
    }

    #[test]
    fn softmax_rows_are_stochastic(x in tensor(6, 7), scale in 0.1f64..4.0) {
        let s = x.softmax_rows(scale).unwrap();
        for i in 0..6 {
            let row = s.row(i);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn codec_is_linear_and_invertible(
        a in prop::collection::vec(0.0f64..1.0, 8 * 12 * 3),
        b in prop::collection::vec(0.0f64..1.0, 8 * 12 * 3),
    ) {
        let codec = Codec::default();
        let fa = Frame::new(12, 8, a.clone()).unwrap();
        let fb = Frame::new(12, 8, b.clone()).unwrap();
        let sum = Frame::new(12, 8, a.iter().zip(&b).map(|(x, y)| x + y).collect()).unwrap();
        let (za, zb, zs) = (codec.encode(&fa).unwrap(), codec.encode(&fb).unwrap(), codec.encode(&sum).unwrap());
        prop_assert_eq!(codec.decode(&za).unwrap(), fa);
        let added = za.tokens().add(zb.tokens()).unwrap();
        prop_assert!(added.max_abs_diff(zs.tokens()).unwrap() < 1e-15);
    }

    #[test]
    fn pack_split_round_trips(a in tensor(1, 5), b in tensor(3, 5), c in tensor(2, 5)) {
        let packed = pack_targets(&[a.clone(), b.clone(), c.clone()]).unwrap();
        prop_assert_eq!(packed.split().unwrap(), vec![a, b, c]);
    }

    #[test]
    fn split_attention_preserves_mass(x in tensor(4, 6)) {
        let cross = x.softmax_rows(1.0).unwrap();
        let ranges = [(0, 2), (2, 3), (5, 1)];
        let parts = split_attention(&cross, &ranges).unwrap();
        for i in 0..4 {
            let weighted: f64 = parts.iter().zip(&ranges).map(|(p, &(_, l))| p[i] * l as f64).sum();
            prop_assert!((weighted - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn segments_nest_as_threshold_rises(s in saliency(), lo in 0.0f64..0.9, gap in 0.0f64..0.1) {
        let wide = segment_of(&s, lo).unwrap();
        let narrow = segment_of(&s, lo + gap).unwrap();
        for (n, w) in narrow.bits().iter().zip(wide.bits()) {
            prop_assert!(!n || *w);
        }
    }

    #[test]
    fn box_is_minimal_cover_of_segment(s in saliency(), th in 0.0f64..0.95) {
        let seg = segment_of(&s, th).unwrap();
        let Indicator::Box(b) = map_to_indicator(&s, OutputKind::Box, th).unwrap() else {
            panic!("box output expected")
        };
        // Exhaustive scan oracle for the tightest half-open box.
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..seg.height() {
            for x in 0..seg.width() {
                if seg.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        prop_assert_eq!(b.as_array(), [x0 as f64, y0 as f64, x1 as f64, y1 as f64]);
    }

    #[test]
    fn rle_round_trips(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let m = Mask::from_fn(w, h, |x, y| (seed.rotate_left((x * 7 + y * 13) as u32 % 64) & 3) == 0);
        prop_assert_eq!(rle_decode(&rle_encode(&m), w, h).unwrap(), m);
    }

    #[test]
    fn box_iou_symmetric_and_bounded(
        a in (0.0f64..10.0, 0.0f64..10.0, 0.1f64..10.0, 0.1f64..10.0),
        b in (0.0f64..10.0, 0.0f64..10.0, 0.1f64..10.0, 0.1f64..10.0),
    ) {
        let ba = [a.0, a.1, a.0 + a.2, a.1 + a.3];
        let bb = [b.0, b.1, b.0 + b.2, b.1 + b.3];
        let v = box_iou(&ba, &bb);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, box_iou(&bb, &ba));
        prop_assert!((box_iou(&ba, &ba) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jaccard_of_mask_with_itself_is_one(w in 1usize..16, h in 1usize..16, cut in 0usize..16) {
        let m = Mask::from_fn(w, h, |x, _| x <= cut);
        prop_assert_eq!(mask_jaccard(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn offset_steps_telescope(t in 1usize..80, seed in any::<u64>()) {
        let z0 = seeded_noise(&[6, 4], seed, 1);
        let z1 = seeded_noise(&[6, 4], seed, 2);
        let sc = NoiseSchedule::make_linear(t, 1e-4, 0.02).unwrap();
        let tau = Tensor::zeros(&[1, 4]);
        let tr = interpolate(&z0, &z1, &tau, &sc, OperatorKind::OffsetClean, &IdentityNetwork, false, &NoiseContext { seed }).unwrap();
        prop_assert!(tr.final_latent().max_abs_diff(&z1).unwrap() < 1e-9);
    }

    #[test]
    fn q_sample_separates_signal_and_noise(seed in any::<u64>(), k in 1usize..50) {
        let sc = NoiseSchedule::make_linear(50, 1e-4, 0.02).unwrap();
        let z = seeded_noise(&[5, 3], seed, 7);
        let eps = seeded_noise(&[5, 3], seed, 8);
        let q = sc.q_sample(&z, k, &eps).unwrap();
        let ab = sc.alpha_bar()[k];
        let rebuilt = z.scale(ab.sqrt()).axpy((1.0 - ab).sqrt(), &eps).unwrap();
        prop_assert!(q.max_abs_diff(&rebuilt).unwrap() < 1e-15);
    }
}

#[test]
fn seeded_noise_has_unit_variance() {
    let e = seeded_noise(&[200, 100], 3, 4);
    let mean = e.mean();
    let var = e.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / e.len() as f64;
    assert!(mean.abs() < 0.03, "mean {mean}");
    assert!((var - 1.0).abs() < 0.03, "variance {var}");
}
