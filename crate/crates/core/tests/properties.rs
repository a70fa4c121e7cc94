mod common;

use entseg::data::{apply_domain_shift, nifti_read, nifti_write, Endianness, NiftiDatatype, NiftiMeta, ShiftParams};
use entseg::losses::{
    binary_entropy, combined_loss, cross_entropy, entropy_map, kl_uniform_bits, reg_meall, reg_meep, soft_dice,
    LossSpec, Reduction, RegKind, SegKind,
};
use entseg::metrics::{
    confusion_outcomes, dice, ece, hausdorff, mann_whitney_u, mean_foreground_entropy, pearson_r,
    reliability_points, CalibrationConvention,
};
use entseg::model::{forward, init_params, select_lambda, Checkpoint, GridPoint, ModelParams, TrainConfig};
use entseg::volume::{
    component_volumes_ml, connected_components, threshold, zscore_normalize, BinaryMask, Connectivity, ProbMap,
    Volume,
};
use entseg::{Dims, Geometry};
use proptest::prelude::*;

fn geometry(max: usize) -> impl Strategy<Value = Geometry> {
    (1..=max, 1..=max, 1..=max, 0.5f64..3.0, 0.5f64..3.0, 0.5f64..3.0)
        .prop_map(|(x, y, z, a, b, c)| Geometry::new(Dims::new(x, y, z), [a, b, c]).unwrap())
}

fn mask_in(g: Geometry) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(any::<bool>(), g.len()).prop_map(move |d| BinaryMask::new(g, d).unwrap())
}

fn probs_in(g: Geometry) -> impl Strategy<Value = ProbMap<f64>> {
    prop::collection::vec(0.0f64..=1.0, g.len()).prop_map(move |d| ProbMap::new(g, d).unwrap())
}

fn mask(max: usize) -> impl Strategy<Value = BinaryMask> {
    geometry(max).prop_flat_map(mask_in)
}

fn mask_pair(max: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    geometry(max).prop_flat_map(|g| (mask_in(g), mask_in(g)))
}

fn prob_and_mask(max: usize) -> impl Strategy<Value = (ProbMap<f64>, BinaryMask)> {
    geometry(max).prop_flat_map(|g| (probs_in(g), mask_in(g)))
}

fn samples(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    // ---- volume

    #[test]
    fn threshold_is_elementwise((p, _) in prob_and_mask(5), t in 0.0f64..=1.0) {
        let m = threshold(&p, t).unwrap();
        for (&v, &b) in p.data().iter().zip(m.data()) {
            prop_assert_eq!(b, v > t);
        }
    }

    #[test]
    fn components_partition_the_mask(m in mask(6), k in 0usize..3) {
        let c = [Connectivity::Six, Connectivity::Eighteen, Connectivity::TwentySix][k];
        let lm = connected_components(&m, c);
        prop_assert!(common::same_partition(&lm, &common::flood_fill_oracle(&m, c)));
        let total: f64 = component_volumes_ml(&lm).iter().map(|(_, v)| v).sum();
        prop_assert!((total - m.volume_ml()).abs() < 1e-9 * (1.0 + total));
    }

    #[test]
    fn zscore_ignores_positive_affine_maps(
        data in prop::collection::vec(-5.0f64..5.0, 3..80),
        a in 0.01f64..100.0,
        b in -100.0f64..100.0,
    ) {
        let g = Geometry::unit(Dims::new(data.len(), 1, 1)).unwrap();
        let v = Volume::new(g, data.clone()).unwrap();
        prop_assume!(zscore_normalize(&v, None).is_ok());
        let z = zscore_normalize(&v, None).unwrap();
        prop_assume!(data.iter().any(|x| (x - data[0]).abs() > 1e-3));
        let w = Volume::new(g, data.iter().map(|x| a * x + b).collect()).unwrap();
        let zw = zscore_normalize(&w, None).unwrap();
        for (x, y) in z.data().iter().zip(zw.data()) {
            prop_assert!((x - y).abs() < 1e-7);
        }
    }

    // ---- losses

    #[test]
    fn entropy_symmetric_bounded_concave(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let h = binary_entropy(p).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!((h - binary_entropy(1.0 - p).unwrap()).abs() < 1e-12);
        let mid = binary_entropy((p + q) / 2.0).unwrap();
        prop_assert!(mid + 1e-12 >= (h + binary_entropy(q).unwrap()) / 2.0);
    }

    #[test]
    fn entropy_map_in_unit_interval((p, _) in prob_and_mask(5)) {
        let e = entropy_map(&p);
        for (&h, &v) in e.data().iter().zip(p.data()) {
            prop_assert!((0.0..=1.0).contains(&h));
            prop_assert_eq!(h == 1.0, v == 0.5);
        }
    }

    #[test]
    fn meep_on_everything_is_meall((p, _) in prob_and_mask(5), sum in any::<bool>()) {
        let mut spec = LossSpec::new(SegKind::CrossEntropy, RegKind::Meep, 1.0);
        if sum {
            spec.reduction = Reduction::Sum;
        }
        let all = BinaryMask::full(*p.geometry());
        prop_assert_eq!(reg_meep(&p, &all, &spec).unwrap(), reg_meall(&p, &spec).unwrap());
    }

    #[test]
    fn kl_matches_entropy_complement(y in 1e-6f64..(1.0 - 1e-6)) {
        let expect = -1.0 + 0.5 * (-y.log2() - (1.0 - y).log2());
        prop_assert!((kl_uniform_bits(y) - expect).abs() < 1e-12);
        prop_assert!(kl_uniform_bits(y) >= 0.0);
        if (y - 0.5).abs() > 1e-3 {
            prop_assert!(kl_uniform_bits(y) > 0.0);
        }
    }

    #[test]
    fn lambda_zero_is_data_term((p, g) in prob_and_mask(5), reg in 0usize..4, dice_seg in any::<bool>()) {
        let seg = if dice_seg { SegKind::SoftDice } else { SegKind::CrossEntropy };
        let spec = LossSpec::new(seg, common::REG_KINDS[reg], 0.0);
        let data = if dice_seg { soft_dice(&p, &g, &spec) } else { cross_entropy(&p, &g, &spec) }.unwrap();
        prop_assert_eq!(combined_loss(&p, &g, &spec).unwrap(), data);
    }

    #[test]
    fn loss_outputs_are_finite((p, g) in prob_and_mask(5), reg in 0usize..4, lambda in 0.0f64..5.0) {
        let spec = LossSpec::new(SegKind::CrossEntropy, common::REG_KINDS[reg], lambda);
        let e = combined_loss(&p, &g, &spec).unwrap();
        prop_assert!(e.value.is_finite());
        prop_assert_eq!(e.grad.dims(), p.dims());
        prop_assert!(e.grad.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn meall_gradient_vanishes_at_half(g in geometry(5)) {
        let p = ProbMap::filled(g, 0.5).unwrap();
        let e = reg_meall(&p, &LossSpec::new(SegKind::CrossEntropy, RegKind::MeAll, 1.0)).unwrap();
        prop_assert!(e.grad.data().iter().all(|&v| v == 0.0));
    }

    // ---- model

    #[test]
    fn forward_preserves_dims_and_range(g in geometry(5), seed in any::<u64>(), scale in 0.0f64..3.0) {
        let params: ModelParams<f64> = init_params(seed, scale).unwrap();
        let x = Volume::from_fn(g, |x, y, z| ((x * 3 + y * 5 + z * 7) % 4) as f64 - 1.5).unwrap();
        let y = forward(&params, &x).unwrap();
        prop_assert_eq!(y.dims(), g.dims);
        prop_assert!(y.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        // Large logits round to exactly 0 or 1; at unit init scale they stay interior.
        if scale <= 1.0 {
            prop_assert!(y.data().iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), lr in 0.0f64..1.0, lambda in 0.0f64..10.0) {
        let mut cfg = TrainConfig { seed, learning_rate: lr, ..TrainConfig::default() };
        cfg.loss.lambda = lambda;
        let c = Checkpoint::new(cfg, init_params::<f64>(seed, 1.0).unwrap());
        let back = Checkpoint::<f64>::from_bytes(&c.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn selection_takes_the_best_dice(points in prop::collection::vec((0.0f64..1.0, 0.0f64..0.2), 1..8)) {
        let report: Vec<GridPoint> = points
            .iter()
            .enumerate()
            .map(|(i, &(d, e))| GridPoint { lambda: i as f64, val_dice: d, val_ece: e, val_mean_fg_entropy: None })
            .collect();
        let i = select_lambda(&report, 0.0).unwrap();
        prop_assert!(report.iter().all(|p| p.val_dice <= report[i].val_dice));
        let j = select_lambda(&report, 1.0).unwrap();
        prop_assert!(report.iter().all(|p| p.val_ece >= report[j].val_ece));
    }

    // ---- metrics

    #[test]
    fn dice_symmetric_and_bounded((a, b) in mask_pair(5)) {
        let d = dice(&a, &b).unwrap();
        prop_assert_eq!(d, dice(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn hausdorff_symmetric_and_brute_force((a, b) in mask_pair(4)) {
        prop_assume!(a.count() > 0 && b.count() > 0);
        let d = hausdorff(&a, &b, 100.0).unwrap();
        prop_assert_eq!(d, hausdorff(&b, &a, 100.0).unwrap());
        prop_assert_eq!(hausdorff(&a, &a, 100.0).unwrap(), 0.0);
        prop_assert!((d - common::hausdorff_oracle(&a, &b, 100.0).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn ece_consistent_with_reliability(
        data in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..300),
        bins in 1usize..20,
    ) {
        let (p, y): (Vec<f64>, Vec<bool>) = data.into_iter().unzip();
        let t = ece(&p, &y, bins, CalibrationConvention::PositiveProb).unwrap();
        prop_assert_eq!(t.total(), p.len());
        prop_assert!((0.0..=1.0).contains(&t.ece));
        let pts = reliability_points(&t);
        let from_points: f64 = pts
            .iter()
            .map(|q| q.count as f64 / p.len() as f64 * (q.observed - q.confidence).abs())
            .sum();
        prop_assert!((from_points - t.ece).abs() < 1e-12);
        let max_gap = pts.iter().map(|q| (q.observed - q.confidence).abs()).fold(0.0, f64::max);
        prop_assert!(t.ece <= max_gap + 1e-12);
        for w in t.bins.windows(2) {
            prop_assert_eq!(w[0].upper, w[1].lower);
        }
    }

    #[test]
    fn pearson_ignores_positive_affine_maps(
        xy in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40),
        a in 0.1f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let Ok(r) = pearson_r(&x, &y) else { return Ok(()) };
        let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((pearson_r(&xt, &y).unwrap() - r).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn mann_whitney_u_complements(a in samples(1..25), b in samples(1..25)) {
        let ua = mann_whitney_u(&a, &b).unwrap();
        let ub = mann_whitney_u(&b, &a).unwrap();
        prop_assert!((ua.u + ub.u - (a.len() * b.len()) as f64).abs() < 1e-9);
        prop_assert!((ua.p_two_sided - ub.p_two_sided).abs() < 1e-9);
        prop_assert!(ua.p_two_sided > 0.0 && ua.p_two_sided <= 1.0);
    }

    #[test]
    fn foreground_entropy_ignores_background_voxels((p, _) in prob_and_mask(5), t in 0.05f64..0.95) {
        let squashed = ProbMap::new(
            *p.geometry(),
            p.data().iter().map(|&v| if v <= t { v * 0.5 } else { v }).collect(),
        )
        .unwrap();
        prop_assert_eq!(mean_foreground_entropy(&p, t), mean_foreground_entropy(&squashed, t));
    }

    #[test]
    fn outcome_counts_cover_every_voxel((p, g) in prob_and_mask(5)) {
        prop_assert_eq!(confusion_outcomes(&p, &g, 0.5).unwrap().total(), p.len());
    }

    // ---- data

    #[test]
    fn identity_shift_is_exact(g in geometry(5), seed in any::<u64>()) {
        let v = Volume::from_fn(g, |x, y, z| (x + 2 * y + 3 * z) as f64 * 0.1).unwrap();
        prop_assert_eq!(apply_domain_shift(&v, &ShiftParams::IDENTITY, seed).unwrap(), v);
    }

    #[test]
    fn nifti_round_trips(
        g in geometry(5),
        seed in any::<u64>(),
        big in any::<bool>(),
        gzip in any::<bool>(),
        dt in 0usize..5,
    ) {
        let dt = [NiftiDatatype::U8, NiftiDatatype::I16, NiftiDatatype::I32, NiftiDatatype::F32, NiftiDatatype::F64][dt];
        let g = Geometry::new(g.dims, g.spacing_mm.map(|s| s as f32 as f64)).unwrap();
        let v = Volume::from_fn(g, |x, y, z| {
            let k = (seed.wrapping_add((x * 31 + y * 17 + z * 7) as u64) % 200) as f64;
            match dt {
                NiftiDatatype::F32 | NiftiDatatype::F64 => k * 0.125 - 7.0,
                NiftiDatatype::U8 => k,
                _ => k - 100.0,
            }
        })
        .unwrap();
        let mut meta = NiftiMeta::for_geometry(&g);
        meta.datatype = dt;
        meta.endianness = if big { Endianness::Big } else { Endianness::Little };
        meta.gzip = gzip;
        let (back, _) = nifti_read::<f64>(&nifti_write(&v, &meta).unwrap()).unwrap();
        prop_assert_eq!(back, v);
    }
}
