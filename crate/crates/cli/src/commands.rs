use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

use ptt_core::autograd::Fault;
use ptt_core::eval::kitti::{convert_dir, load_kitti_tracking, CameraToLidar, ConvertOptions};
use ptt_core::eval::{
    inside_counts, ope_metrics, ope_over, per_interval_ope, sparsity_histogram, timing_breakdown,
    write_curves_csv, write_summary, CenterError, OpeConfig, OpeResult, SPARSITY_INTERVALS,
};
use ptt_core::experiments::{run_ablation, write_ablation_table, AblationConfig, AblationTable};
use ptt_core::gradcheck::{run_component, Component, GradCheckConfig};
use ptt_core::pipeline::{
    dump_attention as capture_attention, track_all, FrameRegressor, ModelConfig, OffsetStub, OracleStub, PttNet,
    TrackerConfig,
};
use ptt_core::sequence::TrackSequence;
use ptt_core::synth::{describe, generate_corpus, load_corpus, CorpusSpec, Preset, KITTI_CAR_FRACTIONS};
use ptt_core::training::{read_loss_curve, write_loss_curve, LossRecord, TrainRun, Trainer};

use crate::config::{sibling_config, write_resolved, Resolver};
use crate::{ConfigArgs, ModelArgs, Numerical, PolicyArgs, SourceArgs, Usage};

const LOSS_CURVE: &str = "loss_curve.jsonl";
const CHECKPOINT: &str = "model.ckpt";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn model_flags(r: Resolver, prefix: &str, m: &ModelArgs, seed: Option<u64>) -> Result<Resolver> {
    let p = |k: &str| format!("{prefix}{k}");
    r.flag(&p("sampler"), m.sampler)?
        .flag(&p("ptt"), m.ptt)?
        .flag(&p("heads"), m.heads)?
        .flag(&p("layers"), m.layers)?
        .flag(&p("seed"), seed)
}

fn load_sources(src: &SourceArgs) -> Result<Vec<TrackSequence>> {
    let seqs = match (&src.corpus, &src.kitti) {
        (Some(c), _) => load_corpus(c)?,
        (None, Some(k)) => load_kitti_tracking(k, &src.kinds)?,
        (None, None) => return Err(Usage("give --corpus or --kitti".into()).into()),
    };
    if seqs.is_empty() {
        return Err(anyhow!("no sequences to track"));
    }
    Ok(seqs)
}

pub fn synth(spec: Option<&Path>, preset: Option<&str>, sequences: Option<usize>, seed: Option<u64>, out: &Path) -> Result<()> {
    let spec: CorpusSpec = Resolver::new::<CorpusSpec>()?
        .file(spec)?
        .flag("preset", preset)?
        .flag("sequences", sequences)?
        .flag("seed", seed)?
        .finish()?;
    spec.expand()?;
    write_resolved(out, "synth", &spec)?;
    let entries = generate_corpus(&spec, out)?;
    let seqs = load_corpus(out)?;
    let mut stdout = std::io::stdout().lock();
    describe(&mut stdout, &entries)?;
    writeln!(stdout, "points on target\tframes\tshare")?;
    let hist = sparsity_histogram(&seqs);
    let target = spec.preset == Some(Preset::KittiLike);
    for (i, b) in hist.iter().enumerate() {
        write!(stdout, "{}\t{}\t{:.4}", b.interval.label(), b.frames, b.fraction)?;
        if target {
            write!(stdout, "\t(target {:.4})", KITTI_CAR_FRACTIONS[i])?;
        }
        writeln!(stdout)?;
    }
    write_json(&out.join("sparsity.json"), &hist)?;
    Ok(())
}

pub struct TrainArgs {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub cfg: ConfigArgs,
    pub model: ModelArgs,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub resume: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    if a.checkpoint_every == Some(0) {
        return Err(Usage("--checkpoint-every must be positive".into()).into());
    }
    let r = Resolver::new::<TrainRun>()?.file(a.cfg.config.as_deref())?.sets(&a.cfg.sets)?;
    let r = model_flags(r, "model.", &a.model, a.cfg.seed)?;
    let run: TrainRun = r
        .flag("seed", a.cfg.seed)?
        .flag("train.steps", a.steps)?
        .flag("train.lr", a.lr)?
        .finish()?;
    run.validate()?;
    write_resolved(&a.out, "train", &run)?;

    let seqs = load_corpus(&a.corpus)?;
    let samples = run.samples(&seqs)?;
    let mut net = PttNet::new(&run.model)?;
    let mut trainer = Trainer::new(&net, run.train.clone())?;
    let curve_path = a.out.join(LOSS_CURVE);
    let mut curve: Vec<LossRecord> = Vec::new();
    if let Some(ckpt) = &a.resume {
        trainer.resume(&mut net, ckpt)?;
        let at = trainer.step_index();
        if let Ok(text) = fs::read_to_string(&curve_path) {
            curve = read_loss_curve(&text)?.into_iter().filter(|r| r.step < at).collect();
        }
        eprintln!("resuming at step {at}");
    }
    let ckpt_path = a.out.join(CHECKPOINT);
    let save_curve = |curve: &[LossRecord]| -> Result<()> {
        let mut buf = Vec::new();
        write_loss_curve(&mut buf, curve)?;
        write_file(&curve_path, &buf)
    };
    while trainer.step_index() < run.train.steps {
        let rec = trainer.step(&mut net, &samples)?;
        curve.push(rec);
        if let Some(every) = a.checkpoint_every {
            if trainer.step_index() % every == 0 {
                trainer.save(&net, &ckpt_path)?;
                save_curve(&curve)?;
            }
        }
    }
    trainer.save(&net, &ckpt_path)?;
    save_curve(&curve)?;

    println!("samples: {}", samples.len());
    println!("steps: {}", trainer.step_index());
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        println!("L_all: {:.6} -> {:.6}", first.loss.all, last.loss.all);
    }
    println!("checksum: {}", net.store.checksum());
    Ok(())
}

/// Effective configuration of `track`, `bench` and `dump-attention`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackConfig {
    pub model: ModelConfig,
    pub tracker: TrackerConfig,
    pub ope: OpeConfig,
}

impl Default for TrackConfig {
    fn default() -> Self {
        let run = TrainRun::default();
        TrackConfig {
            model: run.model,
            tracker: run.tracker,
            ope: OpeConfig::default(),
        }
    }
}

impl TrackConfig {
    /// Full-size network and tracker.
    fn full() -> Self {
        TrackConfig {
            model: ModelConfig::default(),
            tracker: TrackerConfig::default(),
            ope: OpeConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.tracker.validate()?;
        self.ope.validate()?;
        Ok(())
    }
}

pub enum Regressor {
    Checkpoint(PathBuf),
    Oracle,
    Bias(f64),
}

fn resolve_track(
    defaults: &TrackConfig,
    checkpoint: Option<&Path>,
    cfg: &ConfigArgs,
    model: &ModelArgs,
) -> Result<Resolver> {
    let base = checkpoint.and_then(sibling_config);
    let r = Resolver::from(defaults)?
        .base_file(base.as_deref())?
        .file(cfg.config.as_deref())?
        .sets(&cfg.sets)?;
    model_flags(r, "model.", model, cfg.seed)
}

#[derive(Serialize)]
struct SequenceScore {
    scene: String,
    frames: usize,
    first_frame_points: usize,
    mean_iou: f64,
    success: f64,
    precision: f64,
}

#[derive(Serialize)]
struct TrackReport<'a> {
    grid: String,
    sequences: usize,
    frames: usize,
    success: f64,
    precision: f64,
    per_sequence: Vec<SequenceScore>,
    intervals: &'a ptt_core::eval::IntervalTable,
}

pub fn track(
    source: &SourceArgs,
    regressor: Regressor,
    out: &Path,
    cfg: &ConfigArgs,
    model: &ModelArgs,
    policy: &PolicyArgs,
    bev: bool,
) -> Result<()> {
    let ckpt = match &regressor {
        Regressor::Checkpoint(p) => Some(p.as_path()),
        _ => None,
    };
    let config: TrackConfig = resolve_track(&TrackConfig::default(), ckpt, cfg, model)?
        .flag("tracker.template", policy.template)?
        .flag("tracker.search", policy.search)?
        .flag("ope.center_error", bev.then_some(CenterError::Bev))?
        .finish()?;
    config.validate()?;
    write_resolved(out, "track", &config)?;

    let seqs = load_sources(source)?;
    let net;
    let reg: &dyn FrameRegressor = match &regressor {
        Regressor::Checkpoint(p) => {
            net = PttNet::load(&config.model, p)?;
            &net
        }
        Regressor::Oracle => &OracleStub,
        Regressor::Bias(dx) => &OffsetStub::x_bias(*dx),
    };
    let results = track_all(&seqs, reg, &config.tracker)?;

    for r in &results {
        let mut buf = Vec::new();
        r.write_trace(&mut buf)?;
        write_file(&out.join("traces").join(format!("{}.jsonl", r.scene_id)), &buf)?;
    }
    let counts = inside_counts(&seqs);
    let per_seq: Vec<OpeResult> = results
        .iter()
        .zip(&seqs)
        .map(|(r, s)| ope_metrics(&r.boxes, &s.gt_boxes(), &config.ope))
        .collect::<ptt_core::Result<_>>()?;
    let entries: Vec<(usize, &OpeResult)> = counts.iter().copied().zip(&per_seq).collect();
    let table = per_interval_ope(&entries, &SPARSITY_INTERVALS, &config.ope)?;
    let pairs: Vec<_> = results.iter().zip(&seqs).collect();
    let overall = ope_over(&pairs, &config.ope)?;

    let report = TrackReport {
        grid: config.ope.grid_name(),
        sequences: seqs.len(),
        frames: overall.overlaps.len(),
        success: overall.success,
        precision: overall.precision,
        per_sequence: results
            .iter()
            .zip(&per_seq)
            .zip(&counts)
            .map(|((r, o), &n)| SequenceScore {
                scene: r.scene_id.clone(),
                frames: o.overlaps.len(),
                first_frame_points: n,
                mean_iou: r.mean_iou(),
                success: o.success,
                precision: o.precision,
            })
            .collect(),
        intervals: &table,
    };
    write_json(&out.join("results.json"), &report)?;
    let mut text = Vec::new();
    write_summary(&mut text, &overall, Some(&table), &config.ope)?;
    write_file(&out.join("report.txt"), &text)?;
    let mut csv = Vec::new();
    write_curves_csv(&mut csv, &overall, &config.ope)?;
    write_file(&out.join("curves.csv"), &csv)?;

    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "model: sampler {}, ptt {}; template {}, search {}",
        config.model.sampler, config.model.ptt, config.tracker.template, config.tracker.search
    )?;
    stdout.write_all(&text)?;
    Ok(())
}

fn parse_fault(s: &str) -> Result<Fault> {
    match s {
        "relu" => Ok(Fault::ReluLeaksNegative),
        "linear" => Ok(Fault::LinearWeightGradScaled),
        _ => Err(Usage(format!("unknown fault '{s}' (relu or linear)")).into()),
    }
}

pub fn gradcheck(component: Component, fault: Option<&str>, out: Option<&Path>) -> Result<()> {
    let cfg = GradCheckConfig {
        fault: fault.map(parse_fault).transpose()?,
        ..GradCheckConfig::default()
    };
    let reports = run_component(component, &cfg);
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "component\tparameter\tmax_rel_error\tchecked\tskipped")?;
    for r in &reports {
        for p in &r.params {
            writeln!(
                stdout,
                "{}\t{}\t{:.3e}\t{}\t{}",
                r.component, p.name, p.max_rel_error, p.checked, p.skipped
            )?;
        }
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        match &r.failure {
            Some(f) => writeln!(stdout, "{}: {verdict} ({f})", r.component)?,
            None => writeln!(
                stdout,
                "{}: {verdict} (max {:.3e}, tolerance {:.0e})",
                r.component,
                r.max_rel_error(),
                r.tolerance
            )?,
        }
    }
    if let Some(dir) = out {
        write_json(&dir.join("gradcheck.json"), &reports)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.component.as_str()).collect();
    if !failed.is_empty() {
        return Err(Numerical(format!("gradient check failed for {}", failed.join(", "))).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchReport {
    sequences: usize,
    search_points: usize,
    template_points: usize,
    jobs: usize,
    #[serde(flatten)]
    timing: ptt_core::eval::TimingSummary,
}

pub fn bench(source: &SourceArgs, checkpoint: Option<&Path>, out: &Path, cfg: &ConfigArgs, model: &ModelArgs) -> Result<()> {
    let config: TrackConfig = resolve_track(&TrackConfig::full(), checkpoint, cfg, model)?.finish()?;
    config.validate()?;
    write_resolved(out, "bench", &config)?;
    let seqs = load_sources(source)?;
    let net = match checkpoint {
        Some(p) => PttNet::load(&config.model, p)?,
        None => PttNet::new(&config.model)?,
    };
    let results = track_all(&seqs, &net, &config.tracker)?;
    let timings: Vec<_> = results.iter().flat_map(|r| r.timings.iter().copied()).collect();
    let t = timing_breakdown(&timings);
    let report = BenchReport {
        sequences: seqs.len(),
        search_points: config.tracker.search_points,
        template_points: config.tracker.template_points,
        jobs: ptt_core::par::current_jobs(),
        timing: t,
    };
    write_json(&out.join("timing.json"), &report)?;
    println!("frames: {} ({} search points)", t.frames, report.search_points);
    println!("prepare: {:.3} ms", t.prepare_ms);
    println!("forward: {:.3} ms", t.forward_ms);
    println!("post: {:.3} ms", t.post_ms);
    println!("total: {:.3} ms ({:.1} FPS)", t.total_ms, t.fps);
    Ok(())
}

#[derive(Serialize)]
struct ConvertConfig<'a> {
    labels: &'a Path,
    kinds: &'a [String],
    calib: Option<&'a Path>,
}

pub fn convert_labels(labels: &Path, out: &Path, kinds: &[String], calib: Option<&Path>) -> Result<()> {
    write_resolved(out, "convert-labels", &ConvertConfig { labels, kinds, calib })?;
    let calib = match calib {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(CameraToLidar::from_calib(&text).with_context(|| format!("in {}", p.display()))?)
        }
        None => None,
    };
    let opts = ConvertOptions {
        kinds: kinds.to_vec(),
        calib,
    };
    let tracklets = convert_dir(labels, &opts)?;
    let mut lines = Vec::new();
    for t in &tracklets {
        serde_json::to_writer(&mut lines, t)?;
        lines.push(b'\n');
        write_file(&out.join("tracklets").join(format!("{}.txt", t.id())), t.to_label_text().as_bytes())?;
    }
    write_file(&out.join("tracklets.jsonl"), &lines)?;
    let frames: usize = tracklets.iter().map(|t| t.len()).sum();
    println!("{} tracklets, {} labelled frames", tracklets.len(), frames);
    for t in &tracklets {
        println!("{}\t{}\t{} frames", t.id(), t.kind, t.len());
    }
    Ok(())
}

pub fn dump_attention(checkpoint: &Path, source: &SourceArgs, sequence: Option<&str>, out: &Path, cfg: &ConfigArgs) -> Result<()> {
    let config: TrackConfig =
        resolve_track(&TrackConfig::default(), Some(checkpoint), cfg, &ModelArgs::default())?.finish()?;
    config.validate()?;
    write_resolved(out, "dump-attention", &config)?;
    let seqs = load_sources(source)?;
    let seq = match sequence {
        Some(id) => seqs
            .iter()
            .find(|s| s.scene_id == id)
            .ok_or_else(|| anyhow!("no sequence '{id}'"))?,
        None => &seqs[0],
    };
    let net = PttNet::load(&config.model, checkpoint)?;
    let dumps = capture_attention(&net, seq, &config.tracker)?;
    let mut buf = Vec::new();
    for d in &dumps {
        serde_json::to_writer(&mut buf, d)?;
        buf.push(b'\n');
    }
    write_file(&out.join("attention.jsonl"), &buf)?;
    println!("{}: {} records over {} frames", seq.scene_id, dumps.len(), seq.len() - 1);
    Ok(())
}

pub fn ablate(corpus: Option<&Path>, preset: Option<&str>, out: &Path, cfg: &ConfigArgs, steps: Option<usize>) -> Result<()> {
    let config: AblationConfig = Resolver::new::<AblationConfig>()?
        .file(cfg.config.as_deref())?
        .sets(&cfg.sets)?
        .flag("seed", cfg.seed)?
        .flag("model.seed", cfg.seed)?
        .flag("train.steps", steps)?
        .finish()?;
    config.validate()?;
    write_resolved(out, "ablate", &config)?;
    let seqs = match (corpus, preset) {
        (Some(c), _) => load_corpus(c)?,
        (None, Some(_)) => {
            let spec = CorpusSpec {
                preset: Some(Preset::KittiLike),
                seed: config.seed,
                ..CorpusSpec::default()
            };
            spec.expand()?
                .iter()
                .map(|(id, s)| ptt_core::synth::generate_sequence(s, id))
                .collect::<ptt_core::Result<_>>()?
        }
        (None, None) => return Err(Usage("give --corpus or --preset".into()).into()),
    };
    let report = run_ablation(&config, &seqs, |row| {
        let table = match row.table {
            AblationTable::Sampler => "sampler",
            AblationTable::Placement => "ptt",
        };
        eprintln!(
            "{table} {}: loss {:.4} -> {:.4}, success {:.2}, precision {:.2}",
            row.label, row.run.initial_loss, row.run.final_loss, row.run.success, row.run.precision
        );
    })?;
    write_json(&out.join("ablation.json"), &report)?;
    let mut text = Vec::new();
    write_ablation_table(&mut text, &report, &config.ope)?;
    write_file(&out.join("ablation.txt"), &text)?;
    std::io::stdout().lock().write_all(&text)?;
    if let Some(bad) = report.rows.iter().find(|r| !r.run.is_complete()) {
        return Err(Numerical(format!("configuration '{}' did not finish with finite metrics", bad.label)).into());
    }
    Ok(())
}
