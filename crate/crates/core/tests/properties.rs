use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use starpoly::losses::loss_obj;
use starpoly::matching::{hungarian_match, IouMatrix};
use starpoly::nms::{overlap_decision, Criterion, NmsConfig};
use starpoly::polyhedron::{sphere_intersection_volume, StarPolyhedron};
use starpoly::rays::{Anisotropy, RaySystem};
use starpoly::volumes::{Dtype, Volume, VolumeMeta};

fn rays() -> Arc<RaySystem> {
    static R: OnceLock<Arc<RaySystem>> = OnceLock::new();
    R.get_or_init(|| Arc::new(RaySystem::fibonacci(24, Anisotropy::ISOTROPIC).unwrap()))
        .clone()
}

fn poly(center: [f64; 3], d: Vec<f64>) -> StarPolyhedron {
    StarPolyhedron::new(center, d, 0.9, rays()).unwrap()
}

fn dists() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1.0..6.0f64, 24)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn volume_is_translation_invariant_and_cubic(d in dists(), t in prop::array::uniform3(-20.0..20.0f64), s in 0.5..3.0f64) {
        let p = poly([0.0; 3], d.clone());
        let moved = p.translated(t).unwrap();
        prop_assert!((p.volume() - moved.volume()).abs() <= 1e-9 * p.volume());
        let scaled = poly([0.0; 3], d.iter().map(|x| x * s).collect());
        prop_assert!((scaled.volume() - s.powi(3) * p.volume()).abs() <= 1e-9 * scaled.volume());
    }

    #[test]
    fn kernel_shape_hull_are_nested(d in dists()) {
        let p = poly([0.0; 3], d);
        let k = p.kernel();
        prop_assert!(k.volume() <= p.volume() + 1e-9);
        prop_assert!(p.volume() <= p.convex_hull().volume() + 1e-9);
        for v in k.vertices() {
            prop_assert!(p.contains(v));
        }
        let r = p.inscribed_radius();
        prop_assert!(4.0 / 3.0 * PI * r.powi(3) <= p.volume() + 1e-9);
    }

    #[test]
    fn lens_is_symmetric_and_bounded(r1 in 0.1..10.0f64, r2 in 0.1..10.0f64, d in 0.0..25.0f64) {
        let v = sphere_intersection_volume(r1, r2, d);
        prop_assert!((v - sphere_intersection_volume(r2, r1, d)).abs() <= 1e-9 * v.max(1.0));
        let small = 4.0 / 3.0 * PI * r1.min(r2).powi(3);
        prop_assert!(v >= 0.0 && v <= small * (1.0 + 1e-12));
        prop_assert!(sphere_intersection_volume(r1, r2, d + 0.5) <= v + 1e-9);
    }

    #[test]
    fn cascade_agrees_with_exact(
        da in dists(),
        db in dists(),
        off in prop::array::uniform3(-8.0..8.0f64),
        t in 0.05..0.95f64,
        iou in any::<bool>(),
    ) {
        let a = poly([10.0, 10.0, 10.0], da);
        let b = poly([10.0 + off[0], 10.0 + off[1], 10.0 + off[2]], db);
        let criterion = if iou { Criterion::IoU } else { Criterion::IntersectionOverSmaller };
        let on = NmsConfig { overlap_thresh: t, criterion, ..Default::default() };
        let off = NmsConfig { use_cascade: false, ..on };
        prop_assert_eq!(overlap_decision(&a, &b, &on).suppress, overlap_decision(&a, &b, &off).suppress);
    }

    #[test]
    fn match_counts_are_consistent(
        n_gt in 0usize..6,
        n_pred in 0usize..6,
        raw in prop::collection::vec(0.0..1.0f64, 36),
        tau in 0.0..1.0f64,
    ) {
        let entries: Vec<_> = (0..n_gt)
            .flat_map(|i| (0..n_pred).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, raw[i * 6 + j]))
            .filter(|e| e.2 > 0.3)
            .collect();
        let m = IouMatrix::from_entries(n_gt, n_pred, entries).unwrap();
        let lo = hungarian_match(&m, tau).unwrap();
        let hi = hungarian_match(&m, (tau + 0.2).min(1.0)).unwrap();
        prop_assert_eq!(lo.tp + lo.fp, n_pred);
        prop_assert_eq!(lo.tp + lo.fn_, n_gt);
        prop_assert!((0.0..=1.0).contains(&lo.accuracy));
        prop_assert!(hi.tp <= lo.tp);
        for pair in &lo.matched_pairs {
            prop_assert!(pair.iou >= tau);
        }
    }

    #[test]
    fn cross_entropy_is_minimal_at_the_target(p in prop::collection::vec(0.0..1.0f32, 8), q in prop::collection::vec(0.0..1.0f32, 8)) {
        let meta = VolumeMeta::new([1, 2, 4], 0, Dtype::F32);
        let pv = Volume::from_data(meta.clone(), p).unwrap();
        let qv = Volume::from_data(meta, q).unwrap();
        let at_target = loss_obj(&pv, &pv).unwrap();
        prop_assert!(at_target >= 0.0);
        prop_assert!(at_target <= loss_obj(&pv, &qv).unwrap() + 1e-9);
    }
}
