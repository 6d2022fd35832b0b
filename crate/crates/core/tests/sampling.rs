mod oracles;

use oracles::sampling_sweeps;
use proptest::prelude::*;
use ptt_core::geometry::{Point3, PointCloud};
use ptt_core::sampling::{sample_random, SampleSpec};

#[test]
fn fps_feat_fps_and_knn_match_brute_force() {
    let s = sampling_sweeps(500);
    assert!(s.fps.passed(), "fps: {}", s.fps.summary());
    assert!(s.feat_fps.passed(), "feat-fps: {}", s.feat_fps.summary());
    assert!(s.knn.passed(), "knn: {}", s.knn.summary());
}

proptest! {
    #[test]
    fn random_sampling_is_distinct_when_possible(n in 1usize..200, count in 1usize..200, seed in any::<u64>()) {
        let cloud = PointCloud::new((0..n).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect());
        let s = sample_random(&cloud, &SampleSpec::fps(count).with_seed(seed)).unwrap();
        prop_assert_eq!(s.indices.len(), count);
        prop_assert!(s.indices.iter().all(|&i| i < n));
        if count <= n {
            let mut d = s.indices.clone();
            d.sort_unstable();
            d.dedup();
            prop_assert_eq!(d.len(), count);
            prop_assert!(!s.repeated);
        }
    }
}
