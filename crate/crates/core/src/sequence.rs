use crate::error::{Error, Result};
use crate::geometry::{OrientedBox3, PointCloud};

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub cloud: PointCloud,
    pub gt: OrientedBox3,
}

/// One tracklet: consecutive frames of a single target with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSequence {
    pub scene_id: String,
    frames: Vec<Frame>,
}

impl TrackSequence {
    pub fn new(scene_id: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::Config(format!(
                "a track sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        Ok(TrackSequence {
            scene_id: scene_id.into(),
            frames,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn gt_boxes(&self) -> Vec<OrientedBox3> {
        self.frames.iter().map(|f| f.gt).collect()
    }
}
