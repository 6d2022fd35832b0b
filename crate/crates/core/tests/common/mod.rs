#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ptt_core::pipeline::PttNet;
use ptt_core::sequence::TrackSequence;
use ptt_core::synth::{load_corpus, CorpusSpec};
use ptt_core::training::{LossRecord, TrainRun, Trainer};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn toy_corpus_spec() -> CorpusSpec {
    let text = std::fs::read_to_string(fixture("toy_corpus.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// The committed nine-frame sequence; its eight later frames form the
/// training batch.
pub fn toy_sequences() -> Vec<TrackSequence> {
    load_corpus(&fixture("toy_corpus")).unwrap()
}

/// The default run on the toy batch.
pub fn toy_training(run: &TrainRun) -> (PttNet, Vec<LossRecord>) {
    let samples = run.samples(&toy_sequences()).unwrap();
    let mut net = PttNet::new(&run.model).unwrap();
    let mut trainer = Trainer::new(&net, run.train.clone()).unwrap();
    let curve = trainer.run(&mut net, &samples, |_| {}).unwrap();
    (net, curve)
}

pub fn curve_bytes(curve: &[LossRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    ptt_core::training::write_loss_curve(&mut out, curve).unwrap();
    out
}
