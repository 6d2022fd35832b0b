//! Label assignment, the four-term objective, Adam and the training loop.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{checkpoint, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::geometry::{box_contains, crop_to_box, to_canonical_frame, OrientedBox3, Point3, PointCloud};
use crate::par;
use crate::pipeline::model::{ModelConfig, NetOutput, PttNet};
use crate::pipeline::tracker::{build_search_area, resample, TrackerConfig};
use crate::sequence::TrackSequence;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the proposal classification term.
    pub lambda1: f64,
    /// Weight of the vote regression term.
    pub lambda2: f64,
    /// Weight of the proposal regression term.
    pub lambda3: f64,
    /// Seeds within the GT box grown by this margin on every side count as
    /// foreground.
    pub vote_margin: f64,
    /// Cluster centers closer than this to the GT center are positive.
    pub proposal_radius: f64,
    /// Smooth-L1 transition point.
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            vote_margin: 0.0,
            proposal_radius: 0.3,
            beta: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda1, self.lambda2, self.lambda3];
        if w.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative, got {w:?}")));
        }
        if !(self.proposal_radius > 0.0) || !(self.beta > 0.0) || !(self.vote_margin >= 0.0) {
            return Err(Error::Config("loss radii and beta must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteLabels {
    pub labels: Vec<f64>,
    /// `[N, 3]` offset targets, zero for background.
    pub targets: Vec<f64>,
    pub mask: Vec<f64>,
}

impl VoteLabels {
    pub fn positives(&self) -> usize {
        self.mask.iter().filter(|&&m| m > 0.0).count()
    }
}

/// Seeds inside `gt` are foreground and regress toward its center.
pub fn assign_vote_labels(seeds: &[Point3], gt: &OrientedBox3, margin: f64) -> Result<VoteLabels> {
    let region = if margin > 0.0 {
        gt.enlarged([margin; 3])?
    } else {
        *gt
    };
    let mut out = VoteLabels {
        labels: Vec::with_capacity(seeds.len()),
        targets: Vec::with_capacity(seeds.len() * 3),
        mask: Vec::with_capacity(seeds.len()),
    };
    for &s in seeds {
        let inside = box_contains(&region, s);
        let t = if inside { gt.center() - s } else { Point3::ORIGIN };
        out.labels.push(inside as u8 as f64);
        out.mask.push(inside as u8 as f64);
        out.targets.extend_from_slice(&t.to_array());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalLabels {
    pub labels: Vec<f64>,
    /// `[C, 4]`: GT center and heading, repeated per positive row.
    pub targets: Vec<f64>,
    pub mask: Vec<f64>,
}

/// Cluster centers near the GT center are positive.
pub fn assign_proposal_labels(centers: &[Point3], gt: &OrientedBox3, radius: f64) -> ProposalLabels {
    let mut out = ProposalLabels {
        labels: Vec::with_capacity(centers.len()),
        targets: Vec::with_capacity(centers.len() * 4),
        mask: Vec::with_capacity(centers.len()),
    };
    let c = gt.center();
    for &p in centers {
        let pos = p.distance(c) < radius;
        out.labels.push(pos as u8 as f64);
        out.mask.push(pos as u8 as f64);
        if pos {
            out.targets.extend_from_slice(&[c.x, c.y, c.z, gt.heading()]);
        } else {
            out.targets.extend_from_slice(&[0.0; 4]);
        }
    }
    out
}

/// Graph nodes of each term.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub cv: Var,
    pub cb: Var,
    pub rv: Var,
    pub rb: Var,
    pub all: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_cv")]
    pub cv: f64,
    #[serde(rename = "L_cb")]
    pub cb: f64,
    #[serde(rename = "L_rv")]
    pub rv: f64,
    #[serde(rename = "L_rb")]
    pub rb: f64,
    #[serde(rename = "L_all")]
    pub all: f64,
}

impl LossTerms {
    pub fn values(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            cv: g.value(self.cv).item(),
            cb: g.value(self.cb).item(),
            rv: g.value(self.rv).item(),
            rb: g.value(self.rb).item(),
            all: g.value(self.all).item(),
        }
    }
}

/// Weighted sum of the four terms.
pub fn combine(g: &mut Graph, cv: Var, cb: Var, rv: Var, rb: Var, cfg: &LossConfig) -> Result<LossTerms> {
    let a = g.scale(cb, cfg.lambda1)?;
    let b = g.scale(rv, cfg.lambda2)?;
    let c = g.scale(rb, cfg.lambda3)?;
    let all = g.add(cv, a)?;
    let all = g.add(all, b)?;
    let all = g.add(all, c)?;
    Ok(LossTerms { cv, cb, rv, rb, all })
}

/// Builds the objective for one forward pass against `gt` in the search
/// frame.
pub fn compute_loss(g: &mut Graph, out: &NetOutput, gt: &OrientedBox3, cfg: &LossConfig) -> Result<LossTerms> {
    let vl = assign_vote_labels(&out.votes.seeds, gt, cfg.vote_margin)?;
    let cv = g.bce_with_logits(out.votes.objectness, &vl.labels)?;
    let rv = g.smooth_l1_masked(out.votes.offsets, &vl.targets, &vl.mask, cfg.beta)?;

    let centers = out.proposals.cluster_centers(g);
    let pl = assign_proposal_labels(&centers, gt, cfg.proposal_radius);
    // Labels switch discontinuously as cluster centers move.
    g.note_decision(&pl.labels.iter().map(|&l| l as usize).collect::<Vec<_>>());
    let raw = out.proposals.raw;
    let score = g.slice_last(raw, 4, 1)?;
    let cb = g.bce_with_logits(score, &pl.labels)?;
    let delta = g.slice_last(raw, 0, 3)?;
    let pos = g.add(out.proposals.centers, delta)?;
    let dtheta = g.slice_last(raw, 3, 1)?;
    let pred = g.concat(&[pos, dtheta])?;
    let rb = g.smooth_l1_masked(pred, &pl.targets, &pl.mask, cfg.beta)?;
    combine(g, cv, cb, rv, rb, cfg)
}

/// Uniform box jitter used to simulate imperfect search references.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Half range of the center jitter per axis, meters.
    pub translation: f64,
    /// Half range of the heading jitter, degrees.
    pub rotation_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            translation: 0.3,
            rotation_deg: 5.0,
        }
    }
}

pub fn augment_offsets(b: &OrientedBox3, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<OrientedBox3> {
    let mut u = |half: f64| if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 };
    let t = cfg.translation;
    let d = Point3::new(u(t), u(t), u(t));
    let dtheta = u(cfg.rotation_deg * PI / 180.0);
    OrientedBox3::new(b.center() + d, b.size(), b.heading() + dtheta)
}

/// One training pair: canonical template, search area in the jittered
/// reference frame and the GT box in that frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub template: PointCloud,
    pub search: PointCloud,
    pub gt: OrientedBox3,
}

/// Pairs every frame with its predecessor's GT crop as template. Frames
/// whose template or search crop is empty are skipped.
pub fn build_samples(
    seqs: &[TrackSequence],
    tracker: &TrackerConfig,
    augment: &AugmentConfig,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for seq in seqs {
        let frames = seq.frames();
        for t in 1..frames.len() {
            let prev = &frames[t - 1];
            let raw = to_canonical_frame(&crop_to_box(&prev.cloud, &prev.gt), &prev.gt);
            let gt = frames[t].gt;
            let reference = augment_offsets(&gt, augment, &mut rng)?;
            if raw.is_empty() {
                continue;
            }
            let Some(area) = build_search_area(&frames[t].cloud, &reference, tracker.margins, tracker.search_points)? else {
                continue;
            };
            out.push(TrainSample {
                template: resample(&raw, tracker.template_points)?,
                search: area.cloud,
                gt: gt.transformed(&reference.pose().inverse())?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Step after which the learning rate is multiplied by `decay_factor`.
    pub decay_after_steps: Option<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            decay_after_steps: None,
            decay_factor: 0.2,
            batch_size: 8,
            steps: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be finite and nonnegative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.decay_factor > 0.0) {
            return Err(Error::Config("decay factor must be positive".into()));
        }
        self.loss.validate()
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        match self.decay_after_steps {
            Some(d) if step >= d => self.lr * self.decay_factor,
            _ => self.lr,
        }
    }
}

/// Adam moments for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: usize,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// Applies one update with gradients aligned to `store.ids()`.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let ids: Vec<ParamId> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                *w -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
            }
        }
    }
}

/// One line of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

pub fn write_loss_curve(out: &mut impl Write, records: &[LossRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_loss_curve(text: &str) -> Result<Vec<LossRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Loss and parameter gradients for one sample.
pub fn sample_gradients(net: &PttNet, store: &ParamStore, sample: &TrainSample, cfg: &LossConfig) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let mut g = Graph::new();
    let out = net.forward(&mut g, store, &sample.template, &sample.search)?;
    let terms = compute_loss(&mut g, &out, &sample.gt, cfg)?;
    let values = terms.values(&g);
    let grads = g.backward(terms.all)?;
    let per_param = store
        .iter()
        .map(|(id, p)| {
            grads
                .param(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
        })
        .collect();
    Ok((values, per_param))
}

pub struct Trainer {
    pub config: TrainConfig,
    pub adam: Adam,
}

const ADAM_STEP: &str = "adam/step";

impl Trainer {
    pub fn new(net: &PttNet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            adam: Adam::new(&net.store),
            config,
        })
    }

    pub fn step_index(&self) -> usize {
        self.adam.step
    }

    /// Indices of the batch used at `step`.
    pub fn batch(&self, step: usize, pool: usize) -> Vec<usize> {
        let bs = self.config.batch_size;
        (0..bs).map(|i| (step * bs + i) % pool).collect()
    }

    /// One optimizer step on the scheduled batch. Returns the batch-mean
    /// loss measured before the update.
    pub fn step(&mut self, net: &mut PttNet, samples: &[TrainSample]) -> Result<LossRecord> {
        if samples.is_empty() {
            return Err(Error::Empty("training samples"));
        }
        let step = self.adam.step;
        let batch = self.batch(step, samples.len());
        let cfg = &self.config.loss;
        let results = par::map_slice(&batch, |&i| sample_gradients(net, &net.store, &samples[i], cfg));
        let n = batch.len() as f64;
        let mut loss = LossBreakdown::default();
        let mut total: Option<Vec<Tensor>> = None;
        for r in results {
            let (l, grads) = r.map_err(|e| match e {
                e if e.is_numerical() => Error::Diverged {
                    step,
                    detail: e.to_string(),
                },
                e => e,
            })?;
            loss.cv += l.cv / n;
            loss.cb += l.cb / n;
            loss.rv += l.rv / n;
            loss.rb += l.rb / n;
            loss.all += l.all / n;
            match total.as_mut() {
                None => total = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    }
                }
            }
        }
        let mut grads = total.expect("non-empty batch");
        for g in &mut grads {
            for x in g.data_mut() {
                *x /= n;
            }
        }
        if !loss.all.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::Diverged {
                step,
                detail: format!("loss {}", loss.all),
            });
        }
        let lr = self.config.lr_at(step);
        self.adam.update(&mut net.store, &grads, lr, &self.config);
        Ok(LossRecord { step, loss })
    }

    /// Steps until `config.steps`, reporting each record.
    pub fn run(&mut self, net: &mut PttNet, samples: &[TrainSample], mut on_record: impl FnMut(&LossRecord)) -> Result<Vec<LossRecord>> {
        let mut curve = Vec::new();
        while self.adam.step < self.config.steps {
            let r = self.step(net, samples)?;
            on_record(&r);
            curve.push(r);
        }
        Ok(curve)
    }

    /// Parameters, Adam moments and the step counter.
    pub fn save(&self, net: &PttNet, path: &Path) -> Result<()> {
        let mut records = net.store.records();
        for ((_, p), (m, v)) in net.store.iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            records.push((format!("adam/m/{}", p.name), m.clone()));
            records.push((format!("adam/v/{}", p.name), v.clone()));
        }
        records.push((ADAM_STEP.into(), Tensor::scalar(self.adam.step as f64)));
        checkpoint::save(path, &records)
    }

    /// Restores parameters and, when present, optimizer state.
    pub fn resume(&mut self, net: &mut PttNet, path: &Path) -> Result<()> {
        let records = checkpoint::load(path)?;
        net.store.load_records(&records)?;
        let find = |name: &str| records.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let Some(step) = find(ADAM_STEP) else {
            self.adam = Adam::new(&net.store);
            return Ok(());
        };
        let mut adam = Adam::new(&net.store);
        for (k, (_, p)) in net.store.iter().enumerate() {
            for (slot, kind) in [(&mut adam.m[k], "m"), (&mut adam.v[k], "v")] {
                let t = find(&format!("adam/{kind}/{}", p.name))
                    .ok_or_else(|| Error::Config(format!("checkpoint lacks optimizer state for '{}'", p.name)))?;
                if t.shape() != slot.shape() {
                    return Err(Error::Config(format!("optimizer state shape mismatch for '{}'", p.name)));
                }
                *slot = t.clone();
            }
        }
        adam.step = step.item() as usize;
        self.adam = adam;
        Ok(())
    }
}

/// Mean distance from foreground seeds' votes to the GT center, or from
/// all votes when no seed is foreground.
pub fn mean_vote_error(net: &PttNet, sample: &TrainSample) -> Result<f64> {
    let mut g = Graph::new();
    let out = net.forward(&mut g, &net.store, &sample.template, &sample.search)?;
    let votes = out.votes.votes(&g);
    let labels = assign_vote_labels(&out.votes.seeds, &sample.gt, 0.0)?;
    let c = sample.gt.center();
    let fg: Vec<f64> = votes
        .iter()
        .zip(&labels.mask)
        .filter(|(_, &m)| m > 0.0)
        .map(|(v, _)| v.center.distance(c))
        .collect();
    let d: Vec<f64> = if fg.is_empty() {
        votes.iter().map(|v| v.center.distance(c)).collect()
    } else {
        fg
    };
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Everything a training run needs besides its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    pub model: ModelConfig,
    pub tracker: TrackerConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    /// Seed for the search-reference jitter.
    pub seed: u64,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            model: ModelConfig::toy(),
            tracker: TrackerConfig {
                template_points: 128,
                search_points: 512,
                ..TrackerConfig::default()
            },
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainRun {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.tracker.validate()?;
        self.train.validate()
    }

    pub fn samples(&self, seqs: &[TrackSequence]) -> Result<Vec<TrainSample>> {
        let s = build_samples(seqs, &self.tracker, &self.augment, self.seed)?;
        if s.is_empty() {
            return Err(Error::Empty("training samples"));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxSize;

    fn unit_box() -> OrientedBox3 {
        OrientedBox3::new(Point3::ORIGIN, BoxSize::new(1.0, 1.0, 1.0), 0.0).unwrap()
    }

    #[test]
    fn vote_labels_examples() {
        let gt = unit_box();
        let far = [Point3::new(5.0, 0.0, 0.0), Point3::new(0.0, 9.0, 0.0)];
        let l = assign_vote_labels(&far, &gt, 0.0).unwrap();
        assert_eq!(l.positives(), 0);
        assert!(l.targets.iter().all(|&t| t == 0.0));
        let l = assign_vote_labels(&[Point3::ORIGIN], &gt, 0.0).unwrap();
        assert_eq!(l.labels, vec![1.0]);
        assert_eq!(l.targets, vec![0.0; 3]);
    }

    #[test]
    fn bce_of_zero_logits_is_ln2() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[4, 1]));
        let l = g.bce_with_logits(x, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn perfect_regression_is_zero() {
        let mut g = Graph::new();
        let p = g.input(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let l = g
            .smooth_l1_masked(p, &[1.0, 2.0, 3.0, 0.0, 0.0, 0.0], &[1.0, 0.0], 1.0)
            .unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn combine_matches_weighted_sum_and_is_linear() {
        let parts = [0.7, 0.2, 1.3, 0.4];
        let eval = |l1: f64| {
            let mut g = Graph::new();
            let v: Vec<Var> = parts.iter().map(|&x| g.input(Tensor::scalar(x))).collect();
            let cfg = LossConfig {
                lambda1: l1,
                lambda2: 0.5,
                lambda3: 2.0,
                ..LossConfig::default()
            };
            let t = combine(&mut g, v[0], v[1], v[2], v[3], &cfg).unwrap();
            t.values(&g).all
        };
        let base = eval(1.5);
        assert!((base - (0.7 + 1.5 * 0.2 + 0.5 * 1.3 + 2.0 * 0.4)).abs() < 1e-12);
        assert!(((eval(3.0) - base) - 1.5 * 0.2).abs() < 1e-12);
    }

    #[test]
    fn augment_zero_range_is_identity() {
        let b = OrientedBox3::new(Point3::new(1.0, 2.0, 0.5), BoxSize::new(1.6, 1.5, 3.9), 3.1).unwrap();
        let cfg = AugmentConfig {
            translation: 0.0,
            rotation_deg: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(augment_offsets(&b, &cfg, &mut rng).unwrap(), b);
    }

    #[test]
    fn augment_statistics() {
        let b = OrientedBox3::new(Point3::ORIGIN, BoxSize::new(1.6, 1.5, 3.9), 0.0).unwrap();
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mut sums = [0.0; 4];
        for _ in 0..n {
            let p = augment_offsets(&b, &cfg, &mut rng).unwrap();
            assert!(p.heading() > -PI && p.heading() <= PI);
            let c = p.center();
            for (s, v) in sums.iter_mut().zip([c.x, c.y, c.z, p.heading()]) {
                *s += v;
            }
        }
        // Uniform on [-a, a] has sigma a / sqrt(3); the mean of n draws has
        // sigma a / sqrt(3 n).
        let halves = [0.3, 0.3, 0.3, 5.0 * PI / 180.0];
        for (s, a) in sums.iter().zip(halves) {
            let sigma = a / (3.0 * n as f64).sqrt();
            assert!((s / n as f64).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn augment_keeps_heading_normalized_near_pi() {
        let b = OrientedBox3::new(Point3::ORIGIN, BoxSize::new(1.0, 1.0, 1.0), PI).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let h = augment_offsets(&b, &AugmentConfig::default(), &mut rng).unwrap().heading();
            assert!(h > -PI && h <= PI);
        }
    }

    #[test]
    fn lr_schedule_steps_once() {
        let cfg = TrainConfig {
            decay_after_steps: Some(10),
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(9), 1e-3);
        assert!((cfg.lr_at(10) - 2e-4).abs() < 1e-18);
    }

    #[test]
    fn loss_curve_round_trip() {
        let recs = vec![LossRecord {
            step: 3,
            loss: LossBreakdown {
                cv: 0.5,
                cb: 0.25,
                rv: 0.125,
                rb: 1.0,
                all: 1.875,
            },
        }];
        let mut buf = Vec::new();
        write_loss_curve(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("{\"step\":3,\"L_cv\":0.5"));
        assert_eq!(read_loss_curve(&text).unwrap(), recs);
    }
}
