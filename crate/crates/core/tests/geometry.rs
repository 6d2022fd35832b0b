mod oracles;

use oracles::geometry_sweeps;
use proptest::prelude::*;
use ptt_core::geometry::{from_canonical_frame, iou_3d, to_canonical_frame, BoxSize, OrientedBox3, Point3, PointCloud};

#[test]
fn iou_matches_monte_carlo_and_is_invariant() {
    let s = geometry_sweeps(200, 1_000_000);
    assert!(s.monte_carlo.passed(), "monte carlo: {}", s.monte_carlo.summary());
    assert!(s.identical.passed(), "identical: {}", s.identical.summary());
    assert!(s.symmetry.passed(), "symmetry: {}", s.symmetry.summary());
    assert!(s.rigid.passed(), "rigid: {}", s.rigid.summary());
}

proptest! {
    #[test]
    fn iou_is_a_fraction(
        x in -3.0..3.0f64, y in -3.0..3.0f64, z in -1.0..1.0f64,
        h1 in -3.2..3.2f64, h2 in -3.2..3.2f64,
        w in 0.2..4.0f64, l in 0.2..6.0f64,
    ) {
        let a = OrientedBox3::new(Point3::ORIGIN, BoxSize::new(1.6, 1.5, 3.9), h1).unwrap();
        let b = OrientedBox3::new(Point3::new(x, y, z), BoxSize::new(w, 1.2, l), h2).unwrap();
        let v = iou_3d(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn canonical_frame_round_trips(
        cx in -20.0..20.0f64, cy in -20.0..20.0f64, heading in -3.2..3.2f64,
        px in -5.0..5.0f64, py in -5.0..5.0f64, pz in -2.0..2.0f64,
    ) {
        let b = OrientedBox3::new(Point3::new(cx, cy, 0.5), BoxSize::new(1.6, 1.5, 3.9), heading).unwrap();
        let cloud = PointCloud::new(vec![Point3::new(px, py, pz)]);
        let back = from_canonical_frame(&to_canonical_frame(&cloud, &b), &b);
        prop_assert!(back.points()[0].distance(cloud.points()[0]) < 1e-9);
    }
}
