//! One-pass evaluation, sparsity statistics and timing summaries.

pub mod kitti;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_3d, iou_bev, points_in_box, OrientedBox3};
use crate::pipeline::tracker::{FrameTiming, TrackResult};
use crate::sequence::TrackSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenterError {
    #[default]
    Full3d,
    /// Ground-plane distance only.
    Bev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Overlap {
    #[default]
    Volume,
    Bev,
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpeConfig {
    pub overlap_grid: Vec<f64>,
    /// Meters.
    pub error_grid: Vec<f64>,
    pub center_error: CenterError,
    pub overlap: Overlap,
}

impl Default for OpeConfig {
    fn default() -> Self {
        OpeConfig {
            overlap_grid: uniform_grid(0.0, 1.0, 21),
            error_grid: uniform_grid(0.0, 2.0, 21),
            center_error: CenterError::Full3d,
            overlap: Overlap::Volume,
        }
    }
}

impl OpeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("overlap", &self.overlap_grid), ("error", &self.error_grid)] {
            if g.len() < 2 || g.windows(2).any(|w| !(w[1] > w[0])) || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{name} grid must be strictly increasing with at least 2 points")));
            }
        }
        Ok(())
    }

    /// Short description of the grids for report headers.
    pub fn grid_name(&self) -> String {
        let d = |g: &[f64]| format!("{}pt[{}, {}]", g.len(), g[0], g[g.len() - 1]);
        format!("overlap {} / error {} m", d(&self.overlap_grid), d(&self.error_grid))
    }

    pub fn overlap_of(&self, pred: &OrientedBox3, gt: &OrientedBox3) -> f64 {
        match self.overlap {
            Overlap::Volume => iou_3d(pred, gt),
            Overlap::Bev => iou_bev(pred, gt),
        }
    }

    pub fn error_of(&self, pred: &OrientedBox3, gt: &OrientedBox3) -> f64 {
        let d = pred.center() - gt.center();
        match self.center_error {
            CenterError::Full3d => d.norm(),
            CenterError::Bev => d.x.hypot(d.y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeResult {
    /// Percent.
    pub success: f64,
    /// Percent.
    pub precision: f64,
    pub overlaps: Vec<f64>,
    pub errors: Vec<f64>,
}

/// Fraction of `values` passing `pass(v, t)` at every grid threshold.
fn curve(values: &[f64], grid: &[f64], pass: impl Fn(f64, f64) -> bool) -> Vec<f64> {
    grid.iter()
        .map(|&t| values.iter().filter(|&&v| pass(v, t)).count() as f64 / values.len() as f64)
        .collect()
}

/// Trapezoid area under `ys` over `grid`, as a percentage of the range.
fn auc_percent(grid: &[f64], ys: &[f64]) -> f64 {
    let area: f64 = grid
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum();
    100.0 * area / (grid[grid.len() - 1] - grid[0])
}

/// Fraction of frames with overlap strictly above each threshold.
pub fn success_curve(overlaps: &[f64], grid: &[f64]) -> Vec<f64> {
    curve(overlaps, grid, |v, t| v > t)
}

/// Fraction of frames with center error strictly below each threshold.
pub fn precision_curve(errors: &[f64], grid: &[f64]) -> Vec<f64> {
    curve(errors, grid, |v, t| v < t)
}

pub fn ope_from_values(overlaps: Vec<f64>, errors: Vec<f64>, cfg: &OpeConfig) -> Result<OpeResult> {
    cfg.validate()?;
    if overlaps.len() != errors.len() {
        return Err(Error::Config(format!(
            "{} overlaps against {} center errors",
            overlaps.len(),
            errors.len()
        )));
    }
    if overlaps.is_empty() {
        return Err(Error::Empty("evaluated frames"));
    }
    Ok(OpeResult {
        success: auc_percent(&cfg.overlap_grid, &success_curve(&overlaps, &cfg.overlap_grid)),
        precision: auc_percent(&cfg.error_grid, &precision_curve(&errors, &cfg.error_grid)),
        overlaps,
        errors,
    })
}

/// Per-frame overlaps and center errors, skipping the initialization frame.
pub fn frame_scores(pred: &[OrientedBox3], gt: &[OrientedBox3], cfg: &OpeConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if pred.len() != gt.len() {
        return Err(Error::Config(format!(
            "{} predicted boxes for {} ground-truth boxes",
            pred.len(),
            gt.len()
        )));
    }
    let pairs = pred.iter().zip(gt).skip(1);
    Ok(pairs.map(|(p, g)| (cfg.overlap_of(p, g), cfg.error_of(p, g))).unzip())
}

/// Success and precision of one sequence; frame 0 is excluded.
pub fn ope_metrics(pred: &[OrientedBox3], gt: &[OrientedBox3], cfg: &OpeConfig) -> Result<OpeResult> {
    let (o, e) = frame_scores(pred, gt, cfg)?;
    ope_from_values(o, e, cfg)
}

/// Pools the frames of several tracked sequences.
pub fn ope_over(results: &[(&TrackResult, &TrackSequence)], cfg: &OpeConfig) -> Result<OpeResult> {
    let mut o = Vec::new();
    let mut e = Vec::new();
    for (r, s) in results {
        let (a, b) = frame_scores(&r.boxes, &s.gt_boxes(), cfg)?;
        o.extend(a);
        e.extend(b);
    }
    ope_from_values(o, e, cfg)
}

/// Half-open interval of on-target point counts, `hi = None` meaning
/// unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: usize,
    pub hi: Option<usize>,
}

impl Interval {
    pub fn contains(&self, n: usize) -> bool {
        n >= self.lo && self.hi.is_none_or(|h| n < h)
    }

    pub fn label(&self) -> String {
        match (self.lo, self.hi) {
            (0, Some(h)) => format!("<{h}"),
            (l, Some(h)) => format!("{l}-{h}"),
            (l, None) => format!(">={l}"),
        }
    }
}

/// `[0, 20)`, `[20, 100)`, `[100, 500)`, `[500, inf)`.
pub const SPARSITY_INTERVALS: [Interval; 4] = [
    Interval { lo: 0, hi: Some(20) },
    Interval { lo: 20, hi: Some(100) },
    Interval { lo: 100, hi: Some(500) },
    Interval { lo: 500, hi: None },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityBucket {
    pub interval: Interval,
    pub frames: usize,
    pub fraction: f64,
}

pub fn bucket_counts(counts: &[usize], intervals: &[Interval]) -> Vec<SparsityBucket> {
    let total = counts.len();
    intervals
        .iter()
        .map(|iv| {
            let frames = counts.iter().filter(|&&c| iv.contains(c)).count();
            SparsityBucket {
                interval: *iv,
                frames,
                fraction: if total == 0 { 0.0 } else { frames as f64 / total as f64 },
            }
        })
        .collect()
}

/// Points inside the GT box of every frame.
pub fn inside_counts(seqs: &[TrackSequence]) -> Vec<usize> {
    seqs.iter()
        .flat_map(|s| s.frames().iter().map(|f| points_in_box(&f.cloud, &f.gt).len()))
        .collect()
}

pub fn sparsity_histogram(seqs: &[TrackSequence]) -> Vec<SparsityBucket> {
    bucket_counts(&inside_counts(seqs), &SPARSITY_INTERVALS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub interval: Interval,
    pub sequences: usize,
    pub frames: usize,
    /// `None` when no sequence falls in the interval.
    pub success: Option<f64>,
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalTable {
    pub rows: Vec<IntervalRow>,
    /// Frame-weighted mean over populated rows.
    pub success: f64,
    pub precision: f64,
}

/// Groups sequences by the first frame's on-target count and evaluates
/// each group. `entries` holds that count and the sequence's evaluated
/// frames.
pub fn per_interval_ope(entries: &[(usize, &OpeResult)], intervals: &[Interval], cfg: &OpeConfig) -> Result<IntervalTable> {
    let mut rows = Vec::with_capacity(intervals.len());
    let (mut ws, mut wp, mut wf) = (0.0, 0.0, 0usize);
    for iv in intervals {
        let members: Vec<&OpeResult> = entries
            .iter()
            .filter(|(n, _)| iv.contains(*n))
            .map(|(_, r)| *r)
            .collect();
        if members.is_empty() {
            rows.push(IntervalRow {
                interval: *iv,
                sequences: 0,
                frames: 0,
                success: None,
                precision: None,
            });
            continue;
        }
        let o: Vec<f64> = members.iter().flat_map(|r| r.overlaps.iter().copied()).collect();
        let e: Vec<f64> = members.iter().flat_map(|r| r.errors.iter().copied()).collect();
        let frames = o.len();
        let r = ope_from_values(o, e, cfg)?;
        ws += r.success * frames as f64;
        wp += r.precision * frames as f64;
        wf += frames;
        rows.push(IntervalRow {
            interval: *iv,
            sequences: members.len(),
            frames,
            success: Some(r.success),
            precision: Some(r.precision),
        });
    }
    if wf == 0 {
        return Err(Error::Empty("evaluated sequences"));
    }
    Ok(IntervalTable {
        rows,
        success: ws / wf as f64,
        precision: wp / wf as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub frames: usize,
    /// Mean milliseconds per frame.
    pub prepare_ms: f64,
    pub forward_ms: f64,
    pub post_ms: f64,
    pub total_ms: f64,
    pub fps: f64,
}

pub fn timing_breakdown(timings: &[FrameTiming]) -> TimingSummary {
    let n = timings.len();
    let mean = |f: fn(&FrameTiming) -> f64| {
        if n == 0 {
            0.0
        } else {
            timings.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let total_ms = mean(|t| t.total.as_secs_f64() * 1e3);
    TimingSummary {
        frames: n,
        prepare_ms: mean(|t| t.prepare.as_secs_f64() * 1e3),
        forward_ms: mean(|t| t.forward.as_secs_f64() * 1e3),
        post_ms: mean(|t| t.post.as_secs_f64() * 1e3),
        total_ms,
        fps: if total_ms > 0.0 { 1e3 / total_ms } else { 0.0 },
    }
}

/// Plain-text summary block.
pub fn write_summary(out: &mut impl Write, result: &OpeResult, table: Option<&IntervalTable>, cfg: &OpeConfig) -> std::io::Result<()> {
    writeln!(out, "grid: {}", cfg.grid_name())?;
    writeln!(out, "frames: {}", result.overlaps.len())?;
    writeln!(out, "success: {:.2}", result.success)?;
    writeln!(out, "precision: {:.2}", result.precision)?;
    if let Some(t) = table {
        writeln!(out, "interval\tsequences\tframes\tsuccess\tprecision")?;
        for r in &t.rows {
            let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.interval.label(),
                r.sequences,
                r.frames,
                f(r.success),
                f(r.precision)
            )?;
        }
        writeln!(out, "weighted\t\t\t{:.2}\t{:.2}", t.success, t.precision)?;
    }
    Ok(())
}

/// Threshold curves as CSV rows `metric,threshold,value`.
pub fn write_curves_csv(out: &mut impl Write, result: &OpeResult, cfg: &OpeConfig) -> std::io::Result<()> {
    writeln!(out, "metric,threshold,value")?;
    let s = success_curve(&result.overlaps, &cfg.overlap_grid);
    for (t, v) in cfg.overlap_grid.iter().zip(s) {
        writeln!(out, "success,{t},{v}")?;
    }
    let p = precision_curve(&result.errors, &cfg.error_grid);
    for (t, v) in cfg.error_grid.iter().zip(p) {
        writeln!(out, "precision,{t},{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoxSize, Point3};
    use std::time::Duration;

    fn car(x: f64) -> OrientedBox3 {
        OrientedBox3::new(Point3::new(x, 0.0, 0.0), BoxSize::new(1.6, 1.5, 3.9), 0.0).unwrap()
    }

    #[test]
    fn perfect_run_scores_grid_maximum() {
        // Strict comparisons: iou 1 fails only at t = 1, error 0 fails only
        // at t = 0, so each curve loses half of one 0.05 step.
        let gt = vec![car(0.0); 5];
        let r = ope_metrics(&gt, &gt, &OpeConfig::default()).unwrap();
        assert!((r.success - 97.5).abs() < 1e-9);
        assert!((r.precision - 97.5).abs() < 1e-9);
    }

    #[test]
    fn far_off_run_scores_zero() {
        let gt = vec![car(0.0); 4];
        let pred = vec![car(0.0), car(100.0), car(100.0), car(100.0)];
        let r = ope_metrics(&pred, &gt, &OpeConfig::default()).unwrap();
        assert_eq!((r.success, r.precision), (0.0, 0.0));
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(ope_metrics(&[car(0.0)], &[car(0.0), car(1.0)], &OpeConfig::default()).is_err());
    }

    #[test]
    fn bad_grid_rejected() {
        let cfg = OpeConfig {
            overlap_grid: vec![0.0, 0.5, 0.5, 1.0],
            ..OpeConfig::default()
        };
        assert!(ope_from_values(vec![1.0], vec![0.0], &cfg).is_err());
    }

    #[test]
    fn histogram_exemplars() {
        let b = bucket_counts(&[11, 52, 293, 883], &SPARSITY_INTERVALS);
        assert!(b.iter().all(|x| x.frames == 1));
        let b = bucket_counts(&[10; 7], &SPARSITY_INTERVALS);
        assert_eq!(b[0].fraction, 1.0);
        let b = bucket_counts(&[0, 19, 20, 99, 100, 499, 500, 10_000], &SPARSITY_INTERVALS);
        assert_eq!(b.iter().map(|x| x.frames).collect::<Vec<_>>(), vec![2, 2, 2, 2]);
    }

    #[test]
    fn timing_fps_is_inverse_mean() {
        let t = FrameTiming {
            prepare: Duration::from_millis(2),
            forward: Duration::from_millis(5),
            post: Duration::from_millis(1),
            total: Duration::from_millis(10),
        };
        let s = timing_breakdown(&[t, t]);
        assert!((s.fps - 100.0).abs() < 1e-9);
        assert!(s.prepare_ms + s.forward_ms + s.post_ms <= s.total_ms);
    }

    #[test]
    fn interval_labels() {
        let l: Vec<String> = SPARSITY_INTERVALS.iter().map(|i| i.label()).collect();
        assert_eq!(l, vec!["<20", "20-100", "100-500", ">=500"]);
    }
}
