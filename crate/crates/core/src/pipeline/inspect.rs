//! Attention capture while tracking.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::attention::{attention_records, AttentionRecord, PttOutput};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::pipeline::model::{FrameInput, FrameRegressor, PttNet};
use crate::pipeline::proposals::Proposal;
use crate::pipeline::tracker::{track_sequence, TrackerConfig};
use crate::sequence::TrackSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionStage {
    Vote,
    Prop,
}

/// One seed's first-layer, first-head attention in one frame. Coordinates
/// are in the frame's search-area frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub scene: String,
    pub stage: AttentionStage,
    #[serde(flatten)]
    pub record: AttentionRecord,
    /// Vote objectness logit of the seed; vote stage only.
    pub objectness: Option<f64>,
}

struct Probe<'a> {
    net: &'a PttNet,
    scene: &'a str,
    captured: Mutex<Vec<AttentionDump>>,
}

fn capture(g: &Graph, frame: usize, coords: &[Point3], ptt: &PttOutput) -> Vec<AttentionRecord> {
    let w = g.value(ptt.weights[0][0]);
    attention_records(frame, coords, w, &ptt.neighbors)
}

impl FrameRegressor for Probe<'_> {
    fn propose(&self, input: &FrameInput<'_>) -> Result<Vec<Proposal>> {
        let mut g = Graph::new();
        let out = self.net.forward(&mut g, &self.net.store, input.template, input.search)?;
        let mut dumps = Vec::new();
        if let Some(ptt) = &out.votes.ptt {
            let obj = g.value(out.votes.objectness).data().to_vec();
            for r in capture(&g, input.frame, &out.votes.seeds, ptt) {
                dumps.push(AttentionDump {
                    scene: self.scene.to_string(),
                    stage: AttentionStage::Vote,
                    objectness: Some(obj[r.seed]),
                    record: r,
                });
            }
        }
        if let Some(ptt) = &out.proposals.ptt {
            let centers = out.proposals.cluster_centers(&g);
            for r in capture(&g, input.frame, &centers, ptt) {
                dumps.push(AttentionDump {
                    scene: self.scene.to_string(),
                    stage: AttentionStage::Prop,
                    objectness: None,
                    record: r,
                });
            }
        }
        self.captured.lock().expect("probe lock").extend(dumps);
        out.proposals.proposals(&g, input.size)
    }
}

/// Tracks `seq` with `net` and returns the attention of every PTT block
/// for every tracked frame, in frame order.
pub fn dump_attention(net: &PttNet, seq: &TrackSequence, cfg: &TrackerConfig) -> Result<Vec<AttentionDump>> {
    if net.vote_ptt.is_none() && net.prop_ptt.is_none() {
        return Err(Error::Config("the network has no PTT block to inspect".into()));
    }
    let probe = Probe {
        net,
        scene: &seq.scene_id,
        captured: Mutex::new(Vec::new()),
    };
    track_sequence(seq, &probe, cfg)?;
    Ok(probe.captured.into_inner().expect("probe lock"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::model::ModelConfig;
    use crate::synth::{generate_sequence, SceneSpec};

    #[test]
    fn one_record_per_seed_and_normalized() {
        let seq = generate_sequence(
            &SceneSpec {
                frames: 3,
                ..SceneSpec::default()
            },
            "s",
        )
        .unwrap();
        let net = PttNet::new(&ModelConfig::toy()).unwrap();
        let cfg = TrackerConfig {
            template_points: 64,
            search_points: 128,
            ..TrackerConfig::default()
        };
        let dumps = dump_attention(&net, &seq, &cfg).unwrap();
        let seeds = net.config.backbone.levels.last().unwrap().centers;
        for frame in 1..3 {
            let votes = dumps
                .iter()
                .filter(|d| d.record.frame == frame && d.stage == AttentionStage::Vote)
                .count();
            assert_eq!(votes, seeds);
        }
        for d in &dumps {
            let channels = d.record.weights[0].len();
            for c in 0..channels {
                let s: f64 = d.record.weights.iter().map(|w| w[c]).sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
            assert!(d.record.weights.iter().flatten().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn baseline_network_has_nothing_to_dump() {
        let mut cfg = ModelConfig::toy();
        cfg.ptt = crate::pipeline::PttPlacement::None;
        let net = PttNet::new(&cfg).unwrap();
        let seq = generate_sequence(&SceneSpec::default(), "s").unwrap();
        assert!(dump_attention(&net, &seq, &TrackerConfig::default()).is_err());
    }
}
