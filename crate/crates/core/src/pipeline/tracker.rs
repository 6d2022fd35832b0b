//! Frame-to-frame tracking loop with template and search-area protocols.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{crop_to_box, iou_3d, to_canonical_frame, OrientedBox3, Point3, PointCloud};
use crate::par;
use crate::sampling::{sample_fps, SampleSpec};
use crate::sequence::TrackSequence;

use super::model::{FrameInput, FrameRegressor};
use super::proposals::select_box;

/// Which earlier frames contribute points to the template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplatePolicy {
    FirstGt,
    Previous,
    #[default]
    FirstAndPrevious,
    AllPrevious,
}

impl TemplatePolicy {
    pub const ALL: [TemplatePolicy; 4] = [
        TemplatePolicy::FirstGt,
        TemplatePolicy::Previous,
        TemplatePolicy::FirstAndPrevious,
        TemplatePolicy::AllPrevious,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TemplatePolicy::FirstGt => "The First GT",
            TemplatePolicy::Previous => "Previous result",
            TemplatePolicy::FirstAndPrevious => "First & Previous",
            TemplatePolicy::AllPrevious => "All previous",
        }
    }

    pub fn flag(self) -> &'static str {
        match self {
            TemplatePolicy::FirstGt => "first-gt",
            TemplatePolicy::Previous => "previous",
            TemplatePolicy::FirstAndPrevious => "first-and-previous",
            TemplatePolicy::AllPrevious => "all-previous",
        }
    }

    /// `(frame, box)` pairs contributing to the template for frame `t`,
    /// given the boxes reported so far (`reported[0]` is the first GT).
    pub fn sources(self, t: usize, reported: &[OrientedBox3]) -> Result<Vec<(usize, OrientedBox3)>> {
        if t == 0 || reported.len() < t {
            return Err(Error::Config(format!(
                "template for frame {t} needs {t} earlier boxes, have {}",
                reported.len()
            )));
        }
        let first = (0, reported[0]);
        let prev = (t - 1, reported[t - 1]);
        Ok(match self {
            TemplatePolicy::FirstGt => vec![first],
            TemplatePolicy::Previous => vec![prev],
            TemplatePolicy::FirstAndPrevious if t == 1 => vec![first],
            TemplatePolicy::FirstAndPrevious => vec![first, prev],
            TemplatePolicy::AllPrevious => (0..t).map(|i| (i, reported[i])).collect(),
        })
    }
}

impl FromStr for TemplatePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-gt" => Ok(TemplatePolicy::FirstGt),
            "previous" | "prev" => Ok(TemplatePolicy::Previous),
            "first-and-previous" | "first+prev" => Ok(TemplatePolicy::FirstAndPrevious),
            "all-previous" | "all-prev" => Ok(TemplatePolicy::AllPrevious),
            _ => Err(Error::Config(format!("unknown template policy '{s}'"))),
        }
    }
}

impl fmt::Display for TemplatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

/// Which box the search area is centered on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchPolicy {
    #[default]
    PreviousResult,
    PreviousGt,
    CurrentGt,
}

impl SearchPolicy {
    pub const ALL: [SearchPolicy; 3] = [
        SearchPolicy::PreviousResult,
        SearchPolicy::PreviousGt,
        SearchPolicy::CurrentGt,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SearchPolicy::PreviousResult => "Previous Result",
            SearchPolicy::PreviousGt => "Previous GT",
            SearchPolicy::CurrentGt => "Current GT",
        }
    }

    pub fn flag(self) -> &'static str {
        match self {
            SearchPolicy::PreviousResult => "previous-result",
            SearchPolicy::PreviousGt => "previous-gt",
            SearchPolicy::CurrentGt => "current-gt",
        }
    }

    pub fn reference(self, t: usize, seq: &TrackSequence, reported: &[OrientedBox3]) -> OrientedBox3 {
        let frames = seq.frames();
        match self {
            SearchPolicy::PreviousResult => reported[t - 1],
            SearchPolicy::PreviousGt => frames[t - 1].gt,
            SearchPolicy::CurrentGt => frames[t].gt,
        }
    }
}

impl FromStr for SearchPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "previous-result" | "prev-result" => Ok(SearchPolicy::PreviousResult),
            "previous-gt" | "prev-gt" => Ok(SearchPolicy::PreviousGt),
            "current-gt" | "cur-gt" => Ok(SearchPolicy::CurrentGt),
            _ => Err(Error::Config(format!("unknown search policy '{s}'"))),
        }
    }
}

impl fmt::Display for SearchPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub template: TemplatePolicy,
    pub search: SearchPolicy,
    /// Search-area half-extent margins added to the reference box
    /// (length axis, width axis, vertical), meters.
    pub margins: [f64; 3],
    pub template_points: usize,
    pub search_points: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            template: TemplatePolicy::default(),
            search: SearchPolicy::default(),
            margins: [2.0, 2.0, 1.0],
            template_points: 512,
            search_points: 1024,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margins.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::Config(format!("margins must be positive, got {:?}", self.margins)));
        }
        if self.template_points == 0 || self.search_points == 0 {
            return Err(Error::Config("point budgets must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fixed-size FPS resampling; smaller clouds are padded by cycling.
pub fn resample(cloud: &PointCloud, budget: usize) -> Result<PointCloud> {
    let picked = sample_fps(cloud, &SampleSpec::fps(budget))?;
    Ok(cloud.select(&picked.indices))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    /// Concatenated canonical crops before resampling.
    pub raw: PointCloud,
    pub cloud: PointCloud,
}

/// Crops each source frame to its box, canonicalizes and concatenates.
/// Returns `None` when every crop is empty.
pub fn build_template(sources: &[(&PointCloud, OrientedBox3)], budget: usize) -> Result<Option<Template>> {
    let crops: Vec<PointCloud> = sources
        .iter()
        .map(|(cloud, b)| to_canonical_frame(&crop_to_box(cloud, b), b))
        .collect();
    let refs: Vec<&PointCloud> = crops.iter().collect();
    let raw = PointCloud::concat(&refs);
    if raw.is_empty() {
        return Ok(None);
    }
    let cloud = resample(&raw, budget)?;
    Ok(Some(Template { raw, cloud }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchArea {
    /// Canonical crop before resampling.
    pub raw: PointCloud,
    pub cloud: PointCloud,
    pub reference: OrientedBox3,
}

/// Crops `cloud` to the reference box enlarged by `margins` and maps it
/// into the reference frame. `None` signals an empty search area.
pub fn build_search_area(
    cloud: &PointCloud,
    reference: &OrientedBox3,
    margins: [f64; 3],
    budget: usize,
) -> Result<Option<SearchArea>> {
    let region = reference.enlarged(margins)?;
    let raw = to_canonical_frame(&crop_to_box(cloud, &region), reference);
    if raw.is_empty() {
        return Ok(None);
    }
    let cloud = resample(&raw, budget)?;
    Ok(Some(SearchArea {
        raw,
        cloud,
        reference: *reference,
    }))
}

/// One line of the tracking trace. Field order is stable:
/// `frame, box, score, iou, empty_search`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub frame: usize,
    /// `x, y, z, w, h, l, heading`.
    #[serde(rename = "box")]
    pub bbox: [f64; 7],
    pub score: Option<f64>,
    pub iou: Option<f64>,
    pub empty_search: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameTiming {
    /// Template and search-area construction.
    pub prepare: Duration,
    /// Network forward.
    pub forward: Duration,
    /// Box selection and de-canonicalization.
    pub post: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub scene_id: String,
    pub boxes: Vec<OrientedBox3>,
    pub records: Vec<TraceRecord>,
    /// One entry per frame after the first.
    pub timings: Vec<FrameTiming>,
}

impl TrackResult {
    pub fn ious(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.iou).collect()
    }

    pub fn mean_iou(&self) -> f64 {
        let v = self.ious();
        if v.is_empty() {
            return 0.0;
        }
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Writes the trace as one JSON object per line.
    pub fn write_trace(&self, out: &mut impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs the tracker over one sequence. Frame 0 reports its ground truth;
/// later boxes inherit the first box's size.
pub fn track_sequence(seq: &TrackSequence, model: &dyn FrameRegressor, cfg: &TrackerConfig) -> Result<TrackResult> {
    cfg.validate()?;
    let frames = seq.frames();
    let first = frames[0].gt;
    let size = first.size();
    let mut boxes = vec![first];
    let mut records = vec![TraceRecord {
        frame: 0,
        bbox: first.to_array(),
        score: None,
        iou: Some(iou_3d(&first, &first)),
        empty_search: false,
    }];
    let mut timings = Vec::with_capacity(frames.len() - 1);
    let mut last_template: Option<PointCloud> = None;

    for t in 1..frames.len() {
        let start = Instant::now();
        let sources: Vec<(&PointCloud, OrientedBox3)> = cfg
            .template
            .sources(t, &boxes)?
            .into_iter()
            .map(|(i, b)| (&frames[i].cloud, b))
            .collect();
        let template = match build_template(&sources, cfg.template_points)? {
            Some(tpl) => tpl.cloud,
            // Keep the last usable template; before any exists, a single
            // point at the box center.
            None => last_template
                .clone()
                .unwrap_or_else(|| PointCloud::new(vec![Point3::ORIGIN])),
        };
        last_template = Some(template.clone());
        let reference = cfg.search.reference(t, seq, &boxes);
        let search = build_search_area(&frames[t].cloud, &reference, cfg.margins, cfg.search_points)?;
        let prepared = Instant::now();

        let gt = frames[t].gt;
        let (pred, score, empty, fwd_done) = match search {
            None => (boxes[t - 1], None, true, Instant::now()),
            Some(area) => {
                let to_ref = reference.pose().inverse();
                let input = FrameInput {
                    frame: t,
                    template: &template,
                    search: &area.cloud,
                    size,
                    hint: Some(gt.transformed(&to_ref)?.with_size(size)?),
                };
                let proposals = model.propose(&input)?;
                let fwd_done = Instant::now();
                let best = select_box(&proposals)?;
                let local = best.bbox.with_size(size)?;
                let world = local.transformed(&reference.pose())?;
                (world, Some(best.score), false, fwd_done)
            }
        };
        let end = Instant::now();
        timings.push(FrameTiming {
            prepare: prepared - start,
            forward: fwd_done - prepared,
            post: end - fwd_done,
            total: end - start,
        });
        records.push(TraceRecord {
            frame: t,
            bbox: pred.to_array(),
            score,
            iou: Some(iou_3d(&pred, &gt)),
            empty_search: empty,
        });
        boxes.push(pred);
    }

    Ok(TrackResult {
        scene_id: seq.scene_id.clone(),
        boxes,
        records,
        timings,
    })
}

/// Tracks independent sequences concurrently; results keep input order.
pub fn track_all(seqs: &[TrackSequence], model: &dyn FrameRegressor, cfg: &TrackerConfig) -> Result<Vec<TrackResult>> {
    par::map_slice(seqs, |s| track_sequence(s, model, cfg))
        .into_iter()
        .collect()
}
