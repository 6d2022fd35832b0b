//! Committed regression fixtures and how they are produced.
//!
//! `PTT_REGENERATE=1 cargo test -p ptt-core --test fixtures -- --ignored`
//! rewrites them.

mod common;

use common::{curve_bytes, fixture, toy_corpus_spec, toy_training};
use ptt_core::synth::{generate_corpus, read_manifest, MANIFEST_FILE};
use ptt_core::training::TrainRun;

#[test]
#[ignore = "rewrites committed fixtures"]
fn regenerate() {
    if std::env::var_os("PTT_REGENERATE").is_none() {
        return;
    }
    let dir = fixture("toy_corpus");
    let _ = std::fs::remove_dir_all(&dir);
    generate_corpus(&toy_corpus_spec(), &dir).unwrap();
    let (_, curve) = toy_training(&TrainRun::default());
    std::fs::write(fixture("toy_loss_curve.jsonl"), curve_bytes(&curve)).unwrap();
}

#[test]
fn toy_corpus_regenerates_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let fresh = generate_corpus(&toy_corpus_spec(), tmp.path()).unwrap();
    let committed = read_manifest(&fixture("toy_corpus").join(MANIFEST_FILE)).unwrap();
    assert_eq!(fresh, committed);
}
