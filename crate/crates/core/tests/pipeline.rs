mod oracles;

use oracles::{bias_stub, oracle_iou_gap, stub_center_errors};
use ptt_core::pipeline::{OffsetStub, SearchPolicy};

#[test]
fn oracle_regressor_is_exact_under_every_search_policy() {
    for policy in [SearchPolicy::PreviousResult, SearchPolicy::PreviousGt, SearchPolicy::CurrentGt] {
        let gap = oracle_iou_gap(policy);
        assert!(gap <= 1e-6, "{policy:?}: {gap}");
    }
}

#[test]
fn constant_bias_accumulates_frame_by_frame() {
    let errs = stub_center_errors(&bias_stub());
    for (k, e) in errs.iter().enumerate() {
        assert!((e - 0.2 * k as f64).abs() < 1e-9, "frame {k}: {e}");
    }
    assert!(errs.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn zero_stub_holds_a_static_target() {
    let errs = stub_center_errors(&OffsetStub::zero());
    assert!(errs.iter().all(|&e| e < 1e-9));
}
