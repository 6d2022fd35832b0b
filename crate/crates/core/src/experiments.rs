//! Sampler and PTT-placement ablations: train each configuration on one
//! split of a corpus and evaluate it on the other.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ope_over, OpeConfig};
use crate::pipeline::{track_all, ModelConfig, PttNet, PttPlacement, TrackerConfig};
use crate::sampling::SampleMethod;
use crate::sequence::TrackSequence;
use crate::training::{build_samples, AugmentConfig, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tracker: TrackerConfig,
    pub augment: AugmentConfig,
    pub ope: OpeConfig,
    /// Out of every ten sequences, this many are held out for testing.
    pub test_per_ten: usize,
    pub samplers: Vec<SampleMethod>,
    pub placements: Vec<PttPlacement>,
    pub seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            model: ModelConfig::toy(),
            train: TrainConfig::default(),
            tracker: TrackerConfig {
                template_points: 128,
                search_points: 512,
                ..TrackerConfig::default()
            },
            augment: AugmentConfig::default(),
            ope: OpeConfig::default(),
            test_per_ten: 3,
            samplers: SampleMethod::ALL.to_vec(),
            placements: PttPlacement::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.tracker.validate()?;
        self.ope.validate()?;
        if self.test_per_ten == 0 || self.test_per_ten >= 10 {
            return Err(Error::Config("test_per_ten must be in 1..=9".into()));
        }
        if self.samplers.is_empty() && self.placements.is_empty() {
            return Err(Error::Config("nothing to ablate".into()));
        }
        Ok(())
    }
}

/// Train and test halves; sequence `i` is held out when `i % 10 <
/// test_per_ten`, which keeps a bucket-ordered corpus balanced.
pub fn split(seqs: &[TrackSequence], test_per_ten: usize) -> (Vec<TrackSequence>, Vec<TrackSequence>) {
    let (test, train): (Vec<_>, Vec<_>) = seqs.iter().enumerate().partition(|(i, _)| i % 10 < test_per_ten);
    let strip = |v: Vec<(usize, &TrackSequence)>| v.into_iter().map(|(_, s)| s.clone()).collect();
    (strip(train), strip(test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationTable {
    Sampler,
    Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub sampler: SampleMethod,
    pub ptt: PttPlacement,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub success: f64,
    pub precision: f64,
    pub test_frames: usize,
}

impl RunSummary {
    pub fn is_complete(&self) -> bool {
        [self.initial_loss, self.final_loss, self.success, self.precision]
            .iter()
            .all(|v| v.is_finite())
            && self.test_frames > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub table: AblationTable,
    pub label: String,
    pub run: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub rows: Vec<AblationRow>,
}

/// Trains one configuration from scratch and evaluates it.
pub fn train_and_eval(
    cfg: &AblationConfig,
    sampler: SampleMethod,
    ptt: PttPlacement,
    train: &[TrackSequence],
    test: &[TrackSequence],
) -> Result<RunSummary> {
    let model = ModelConfig {
        sampler,
        ptt,
        ..cfg.model.clone()
    };
    let mut net = PttNet::new(&model)?;
    let samples = build_samples(train, &cfg.tracker, &cfg.augment, cfg.seed)?;
    let mut trainer = Trainer::new(&net, cfg.train.clone())?;
    let curve = trainer.run(&mut net, &samples, |_| {})?;
    let (initial_loss, final_loss) = match (curve.first(), curve.last()) {
        (Some(a), Some(b)) => (a.loss.all, b.loss.all),
        _ => (f64::NAN, f64::NAN),
    };
    let results = track_all(test, &net, &cfg.tracker)?;
    let pairs: Vec<_> = results.iter().zip(test).collect();
    let ope = ope_over(&pairs, &cfg.ope)?;
    Ok(RunSummary {
        sampler,
        ptt,
        initial_loss,
        final_loss,
        success: ope.success,
        precision: ope.precision,
        test_frames: ope.overlaps.len(),
    })
}

/// Sampler rows use the full-PTT network, placement rows the FPS sampler.
/// A configuration shared by both tables is trained once.
pub fn run_ablation(
    cfg: &AblationConfig,
    seqs: &[TrackSequence],
    mut progress: impl FnMut(&AblationRow),
) -> Result<AblationReport> {
    cfg.validate()?;
    let (train, test) = split(seqs, cfg.test_per_ten);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty("train or test split"));
    }
    let mut plan: Vec<(AblationTable, String, SampleMethod, PttPlacement)> = Vec::new();
    for &s in &cfg.samplers {
        plan.push((AblationTable::Sampler, s.label().to_string(), s, PttPlacement::All));
    }
    for &p in &cfg.placements {
        plan.push((AblationTable::Placement, p.label().to_string(), SampleMethod::Fps, p));
    }
    let mut done: BTreeMap<(String, String), RunSummary> = BTreeMap::new();
    let mut rows = Vec::with_capacity(plan.len());
    for (table, label, sampler, ptt) in plan {
        let key = (sampler.flag().to_string(), ptt.flag().to_string());
        let run = match done.get(&key) {
            Some(r) => r.clone(),
            None => {
                let r = train_and_eval(cfg, sampler, ptt, &train, &test)?;
                done.insert(key, r.clone());
                r
            }
        };
        let row = AblationRow { table, label, run };
        progress(&row);
        rows.push(row);
    }
    Ok(AblationReport {
        train_sequences: train.len(),
        test_sequences: test.len(),
        rows,
    })
}

/// Two tab-separated tables, samplers first.
pub fn write_ablation_table(out: &mut impl Write, report: &AblationReport, cfg: &OpeConfig) -> std::io::Result<()> {
    writeln!(
        out,
        "train sequences: {}, test sequences: {}, grid: {}",
        report.train_sequences,
        report.test_sequences,
        cfg.grid_name()
    )?;
    for (table, title) in [
        (AblationTable::Sampler, "Sampling method"),
        (AblationTable::Placement, "PTT placement"),
    ] {
        let rows: Vec<&AblationRow> = report.rows.iter().filter(|r| r.table == table).collect();
        if rows.is_empty() {
            continue;
        }
        writeln!(out)?;
        writeln!(out, "{title}\tSuccess\tPrecision\tfinal L_all")?;
        for r in rows {
            writeln!(
                out,
                "{}\t{:.1}\t{:.1}\t{:.4}",
                r.label, r.run.success, r.run.precision, r.run.final_loss
            )?;
        }
    }
    Ok(())
}
