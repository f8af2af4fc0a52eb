mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use splatseg::eval::{iou_3d, mask_iou};
use splatseg::inference::{relevance_of, seed_order};
use splatseg::ins2lang::{KernelMapping, MappingPairSet};
use splatseg::instance_field::{infonce_loss_rows, PixelSample, PixelSampleBatch};
use splatseg::{GaussianScene, RasterConfig, ViewRaster};

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn render_is_linear_in_values(seed in 0u64..10_000, a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let (scene, camera) = common::random_scene(seed, 30, 3, 24);
        let raster = ViewRaster::new(&scene, &camera, &RasterConfig::default());
        let mut r = common::rng(seed ^ 1);
        let f: Vec<f32> = (0..scene.len() * 3).map(|_| r.random_range(-1.0..1.0)).collect();
        let g: Vec<f32> = (0..scene.len() * 3).map(|_| r.random_range(-1.0..1.0)).collect();
        let mix: Vec<f32> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let rf = raster.forward(&f, 3).unwrap().data;
        let rg = raster.forward(&g, 3).unwrap().data;
        let want: Vec<f32> = rf.iter().zip(&rg).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(max_abs_diff(&raster.forward(&mix, 3).unwrap().data, &want) < 1e-4);
    }

    #[test]
    fn backward_is_the_adjoint(seed in 0u64..10_000) {
        let (scene, camera) = common::random_scene(seed, 40, 2, 24);
        let raster = ViewRaster::new(&scene, &camera, &RasterConfig::default());
        let mut r = common::rng(seed ^ 2);
        let v: Vec<f32> = (0..scene.len() * 2).map(|_| r.random_range(-1.0..1.0)).collect();
        let u: Vec<f32> = (0..raster.pixel_count() * 2).map(|_| r.random_range(-1.0..1.0)).collect();
        let lhs: f64 = raster.forward(&v, 2).unwrap().data.iter().zip(&u).map(|(&x, &y)| x as f64 * y as f64).sum();
        let rhs: f64 = raster.backward(&u, 2).unwrap().iter().zip(&v).map(|(&x, &y)| x as f64 * y as f64).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-4 * (1.0 + lhs.abs()));
    }

    #[test]
    fn gaussian_order_does_not_change_the_image(seed in 0u64..10_000) {
        let (scene, camera) = common::random_scene(seed, 30, 3, 24);
        let mut order: Vec<usize> = (0..scene.len()).collect();
        order.shuffle(&mut common::rng(seed ^ 3));
        let mut shuffled = GaussianScene::new(scene.d_i, scene.d_l);
        for &i in &order {
            shuffled.push(scene.gaussian(i)).unwrap();
        }
        let cfg = RasterConfig::default();
        let a = ViewRaster::new(&scene, &camera, &cfg).forward(&scene.instance, 3).unwrap();
        let b = ViewRaster::new(&shuffled, &camera, &cfg).forward(&shuffled.instance, 3).unwrap();
        prop_assert!(max_abs_diff(&a.data, &b.data) < 1e-6);
        prop_assert!(max_abs_diff(&a.alpha, &b.alpha) < 1e-6);
    }

    #[test]
    fn contrastive_loss_ignores_segment_labels(seed in 0u64..10_000, k in 2usize..5) {
        let mut r = common::rng(seed);
        let dim = 5;
        let sizes: Vec<usize> = (0..k).map(|_| r.random_range(1..6)).collect();
        let n: usize = sizes.iter().sum();
        let rows: Vec<f32> = (0..n * dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut relabel: Vec<u32> = (0..k as u32).map(|s| 10 + 7 * s).collect();
        relabel.shuffle(&mut r);
        let make = |ids: &dyn Fn(usize) -> u32| {
            let mut b = PixelSampleBatch::default();
            let mut pos = 0;
            for (s, &size) in sizes.iter().enumerate() {
                for _ in 0..size {
                    b.by_segment.entry(ids(s)).or_default().push(pos);
                    b.samples.push(PixelSample { pixel: pos as u32, segment: ids(s) });
                    pos += 1;
                }
            }
            b
        };
        let base = infonce_loss_rows(&rows, dim, &make(&|s| s as u32 + 1)).unwrap();
        let moved = infonce_loss_rows(&rows, dim, &make(&|s| relabel[s])).unwrap();
        prop_assert!((base.loss - moved.loss).abs() < 1e-12);
        prop_assert!(max_abs_diff(&base.grad, &moved.grad) < 1e-6);
    }

    #[test]
    fn kernel_output_lies_in_the_target_hull(seed in 0u64..10_000, sigma in 0.02f32..2.0) {
        let mut r = common::rng(seed);
        let (d_i, d_l) = (4, 6);
        let mut pairs = MappingPairSet::new(d_i, d_l);
        for m in 0..r.random_range(1..12) {
            let x: Vec<f32> = (0..d_i).map(|_| r.random_range(-1.0..1.0)).collect();
            pairs.push(&x, &common::unit_vector(&mut r, d_l), (0, m)).unwrap();
        }
        let kernel = KernelMapping::new(pairs.clone(), sigma).unwrap();
        let probe: Vec<f32> = (0..d_i).map(|_| r.random_range(-3.0..3.0)).collect();
        let out = kernel.regress_raw(&probe);
        for (c, &v) in out.iter().enumerate() {
            let column = (0..pairs.len()).map(|m| pairs.language_row(m)[c] as f64);
            let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(
        a in proptest::collection::btree_set(0usize..200, 1..60),
        b in proptest::collection::btree_set(0usize..200, 1..60),
    ) {
        let a: Vec<usize> = a.into_iter().collect();
        let b: Vec<usize> = b.into_iter().collect();
        let ab = iou_3d(&a, &b).unwrap();
        prop_assert_eq!(ab, iou_3d(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou_3d(&a, &a).unwrap(), 1.0);
        let ma: Vec<bool> = (0..200).map(|i| a.contains(&i)).collect();
        let mb: Vec<bool> = (0..200).map(|i| b.contains(&i)).collect();
        prop_assert_eq!(mask_iou(&ma, &mb), ab);
    }

    #[test]
    fn relevance_ignores_canonical_order(seed in 0u64..10_000, k in 1usize..7) {
        let mut r = common::rng(seed);
        let l = common::unit_vector(&mut r, 12);
        let q = common::unit_vector(&mut r, 12);
        let mut canon: Vec<Vec<f32>> = (0..k).map(|_| common::unit_vector(&mut r, 12)).collect();
        let before = relevance_of(&l, &q, &canon);
        canon.shuffle(&mut r);
        prop_assert_eq!(before, relevance_of(&l, &q, &canon));
        prop_assert!(before > 0.0 && before < 1.0);
    }

    #[test]
    fn seed_set_shrinks_as_tau_grows(
        relevance in proptest::collection::vec(0.0f64..1.0, 0..200),
        t1 in 0.01f64..0.99,
        t2 in 0.01f64..0.99,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let loose = seed_order(&relevance, lo);
        let strict = seed_order(&relevance, hi);
        prop_assert!(strict.iter().all(|s| loose.contains(s)));
        prop_assert!(loose.windows(2).all(|w| relevance[w[0]] > relevance[w[1]]
            || (relevance[w[0]] == relevance[w[1]] && w[0] < w[1])));
    }
}
