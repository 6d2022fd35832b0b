mod oracles;

use oracles::{
    bucket_of, four_frame_fixture, kitti_hand_grouping, recount, FOUR_FRAME_PRECISION, FOUR_FRAME_SUCCESS,
};
use proptest::prelude::*;
use ptt_core::eval::kitti::{convert_dir, convert_kitti_labels, ConvertOptions};
use ptt_core::eval::{
    bucket_counts, inside_counts, ope_from_values, ope_metrics, per_interval_ope, sparsity_histogram, OpeConfig,
    SPARSITY_INTERVALS,
};
use ptt_core::synth::{CorpusSpec, Preset, KITTI_CAR_FRACTIONS};
use ptt_core::Error;

fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/kitti")
}

#[test]
fn four_frame_fixture_matches_hand_trapezoid() {
    let (pred, gt) = four_frame_fixture();
    let r = ope_metrics(&pred, &gt, &OpeConfig::default()).unwrap();
    assert_eq!(r.overlaps, vec![1.0, 0.6, 0.4, 0.0]);
    assert!((r.success - FOUR_FRAME_SUCCESS).abs() <= 1e-9, "{}", r.success);
    assert!((r.precision - FOUR_FRAME_PRECISION).abs() <= 1e-9, "{}", r.precision);
}

#[test]
fn bev_center_error_ignores_height() {
    let (pred, gt) = four_frame_fixture();
    let lifted: Vec<_> = pred
        .iter()
        .map(|b| b.with_center(b.center() + ptt_core::geometry::Point3::new(0.0, 0.0, 0.3)).unwrap())
        .collect();
    let bev = OpeConfig {
        center_error: ptt_core::eval::CenterError::Bev,
        ..OpeConfig::default()
    };
    let a = ope_metrics(&lifted, &gt, &bev).unwrap();
    assert!((a.precision - FOUR_FRAME_PRECISION).abs() <= 1e-9);
}

#[test]
fn kitti_fixture_matches_hand_grouping() {
    let tracklets = convert_dir(&fixture_dir(), &ConvertOptions::default()).unwrap();
    let text = std::fs::read_to_string(fixture_dir().join("0003.txt")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let want = kitti_hand_grouping();
    assert_eq!(tracklets.len(), want.len());
    for (t, (id, kind, frames, rows)) in tracklets.iter().zip(want) {
        assert_eq!(t.scene, "0003");
        assert_eq!(t.track_id, id);
        assert_eq!(t.kind, kind);
        assert_eq!(t.frames, frames);
        let raw: Vec<&str> = t.rows.iter().map(|r| r.raw.as_str()).collect();
        let src: Vec<&str> = rows.iter().map(|&l| lines[l - 1]).collect();
        assert_eq!(raw, src);
    }
    // First car row: bottom center (1.0, 1.6, 12.0), h 1.6, ry 0.
    let b = tracklets[0].boxes[0];
    let c = b.center();
    assert_eq!((c.x, c.y), (12.0, -1.0));
    assert!((c.z - (-1.6 + 0.8)).abs() < 1e-12);
    assert!((b.heading() + std::f64::consts::FRAC_PI_2).abs() < 1e-12);
}

#[test]
fn kitti_reserialization_is_bit_exact() {
    let tracklets = convert_dir(&fixture_dir(), &ConvertOptions::default()).unwrap();
    for t in &tracklets {
        let again = convert_kitti_labels(&t.scene, &t.to_label_text(), &ConvertOptions::default()).unwrap();
        assert_eq!(again.len(), 1);
        for (a, b) in again[0].rows.iter().zip(&t.rows) {
            assert_eq!(a.dims.map(f64::to_bits), b.dims.map(f64::to_bits));
            assert_eq!(a.location.map(f64::to_bits), b.location.map(f64::to_bits));
            assert_eq!(a.rotation_y.to_bits(), b.rotation_y.to_bits());
        }
        assert_eq!(again[0].boxes, t.boxes);
    }
}

#[test]
fn kitti_errors_carry_line_numbers() {
    let bad = "0 1 Car 0 0 0 0 0 1 1 1.5 1.6 3.9 1 1.5 9 0\n1 1 Car 0 0 0 0 0 1 1 1.5 oops 3.9 1 1.5 9 0\n";
    match convert_kitti_labels("x", bad, &ConvertOptions::default()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    let backwards = "3 1 Car 0 0 0 0 0 1 1 1.5 1.6 3.9 1 1.5 9 0\n2 1 Car 0 0 0 0 0 1 1 1.5 1.6 3.9 1 1.5 9 0\n";
    match convert_kitti_labels("x", backwards, &ConvertOptions::default()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn kitti_single_and_interleaved_ids() {
    let row = |f: u32, id: i64| format!("{f} {id} Car 0 0 0 0 0 1 1 1.5 1.6 3.9 1 1.5 9 0\n");
    let one: String = (0..5).map(|f| row(f, 7)).collect();
    let t = convert_kitti_labels("s", &one, &ConvertOptions::default()).unwrap();
    assert_eq!((t.len(), t[0].len()), (1, 5));
    let two: String = (0..4).flat_map(|f| [row(f, 2), row(f, 1)]).collect();
    let t = convert_kitti_labels("s", &two, &ConvertOptions::default()).unwrap();
    assert_eq!(t.len(), 2);
    assert!(t.iter().all(|x| x.frames == vec![0, 1, 2, 3]));
}

#[test]
fn kitti_empty_dir_yields_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(convert_dir(tmp.path(), &ConvertOptions::default()).unwrap().is_empty());
}

fn preset_corpus() -> Vec<ptt_core::sequence::TrackSequence> {
    let spec = CorpusSpec {
        preset: Some(Preset::KittiLike),
        seed: 11,
        ..CorpusSpec::default()
    };
    spec.expand()
        .unwrap()
        .iter()
        .map(|(id, s)| ptt_core::synth::generate_sequence(s, id).unwrap())
        .collect()
}

#[test]
fn histogram_matches_recount_and_preset_targets() {
    let seqs = preset_corpus();
    let counts = inside_counts(&seqs);
    assert_eq!(counts, recount(&seqs));
    assert_eq!(counts.len(), 1000);
    let hist = sparsity_histogram(&seqs);
    let mut brute = [0usize; 4];
    for c in recount(&seqs) {
        brute[bucket_of(c)] += 1;
    }
    assert_eq!(hist.iter().map(|b| b.frames).collect::<Vec<_>>(), brute.to_vec());
    assert!((hist.iter().map(|b| b.fraction).sum::<f64>() - 1.0).abs() < 1e-9);
    for (b, target) in hist.iter().zip(KITTI_CAR_FRACTIONS) {
        assert!((b.fraction - target).abs() <= 0.02, "{:?} vs {target}", b);
    }
}

#[test]
fn per_interval_single_and_weighted() {
    let cfg = OpeConfig::default();
    let a = ope_from_values(vec![0.9, 0.8], vec![0.1, 0.2], &cfg).unwrap();
    let b = ope_from_values(vec![0.1, 0.2, 0.3, 0.0], vec![1.5, 1.2, 0.9, 3.0], &cfg).unwrap();

    let single = per_interval_ope(&[(150, &a)], &SPARSITY_INTERVALS, &cfg).unwrap();
    assert_eq!(single.success, a.success);
    assert_eq!(single.precision, a.precision);
    assert!(single.rows.iter().filter(|r| r.success.is_none()).count() == 3);

    let t = per_interval_ope(&[(10, &b), (600, &a)], &SPARSITY_INTERVALS, &cfg).unwrap();
    let labels: Vec<String> = t.rows.iter().map(|r| r.interval.label()).collect();
    assert_eq!(labels, vec!["<20", "20-100", "100-500", ">=500"]);
    assert_eq!(t.rows[1].success, None);
    let want = (4.0 * b.success + 2.0 * a.success) / 6.0;
    assert!((t.success - want).abs() < 1e-12);
}

#[test]
fn bucket_edges() {
    let b = bucket_counts(&[19, 20, 99, 100, 499, 500], &SPARSITY_INTERVALS);
    assert_eq!(b.iter().map(|x| x.frames).collect::<Vec<_>>(), vec![1, 2, 2, 1]);
}

proptest! {
    #[test]
    fn ope_is_permutation_invariant(
        vals in proptest::collection::vec((0.0..1.0f64, 0.0..3.0f64), 1..40),
        rot in 0usize..40,
    ) {
        let cfg = OpeConfig::default();
        let (o, e): (Vec<f64>, Vec<f64>) = vals.iter().copied().unzip();
        let a = ope_from_values(o.clone(), e.clone(), &cfg).unwrap();
        let mut o2 = o.clone();
        let mut e2 = e.clone();
        let r = rot % o.len();
        o2.rotate_left(r);
        e2.reverse();
        let b = ope_from_values(o2, e2, &cfg).unwrap();
        prop_assert!((a.success - b.success).abs() < 1e-12);
        prop_assert!((a.precision - b.precision).abs() < 1e-12);
        prop_assert!((0.0..=100.0).contains(&a.success) && (0.0..=100.0).contains(&a.precision));
    }

    #[test]
    fn degrading_one_frame_never_helps(
        vals in proptest::collection::vec((0.0..1.0f64, 0.0..3.0f64), 1..40),
        pick in 0usize..40,
        shrink in 0.0..1.0f64,
        grow in 0.0..2.0f64,
    ) {
        let cfg = OpeConfig::default();
        let (o, e): (Vec<f64>, Vec<f64>) = vals.iter().copied().unzip();
        let base = ope_from_values(o.clone(), e.clone(), &cfg).unwrap();
        let i = pick % o.len();
        let mut o2 = o.clone();
        let mut e2 = e.clone();
        o2[i] *= shrink;
        e2[i] += grow;
        let worse = ope_from_values(o2, e2, &cfg).unwrap();
        prop_assert!(worse.success <= base.success);
        prop_assert!(worse.precision <= base.precision);
    }
}
