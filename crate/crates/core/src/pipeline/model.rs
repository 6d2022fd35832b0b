//! The full network and the per-frame regressor interface.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionKind, PttConfig, PttParams};
use crate::autograd::{checkpoint, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::geometry::{BoxSize, OrientedBox3, Point3, PointCloud};
use crate::sampling::SampleMethod;

use super::backbone::{Backbone, BackboneConfig, LevelConfig};
use super::proposals::{BoxOffset, Proposal, ProposalConfig, ProposalHead, ProposalOutput};
use super::similarity::Similarity;
use super::voting::{VoteHead, VoteOutput};

/// Where the attention block is inserted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PttPlacement {
    None,
    Vote,
    Prop,
    #[default]
    All,
}

impl PttPlacement {
    pub const ALL: [PttPlacement; 4] = [
        PttPlacement::None,
        PttPlacement::Vote,
        PttPlacement::Prop,
        PttPlacement::All,
    ];

    pub fn in_vote(self) -> bool {
        matches!(self, PttPlacement::Vote | PttPlacement::All)
    }

    pub fn in_prop(self) -> bool {
        matches!(self, PttPlacement::Prop | PttPlacement::All)
    }

    /// Row name used in ablation reports.
    pub fn label(self) -> &'static str {
        match self {
            PttPlacement::None => "baseline",
            PttPlacement::Vote => "Only PTT in Vote",
            PttPlacement::Prop => "Only PTT in Prop",
            PttPlacement::All => "PTT in all",
        }
    }

    pub fn flag(self) -> &'static str {
        match self {
            PttPlacement::None => "none",
            PttPlacement::Vote => "vote",
            PttPlacement::Prop => "prop",
            PttPlacement::All => "all",
        }
    }
}

impl FromStr for PttPlacement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PttPlacement::None),
            "vote" => Ok(PttPlacement::Vote),
            "prop" => Ok(PttPlacement::Prop),
            "all" => Ok(PttPlacement::All),
            _ => Err(Error::Config(format!("unknown ptt placement '{s}'"))),
        }
    }
}

impl fmt::Display for PttPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub sampler: SampleMethod,
    pub ptt: PttPlacement,
    pub heads: usize,
    pub layers: usize,
    pub k: usize,
    /// Attention embedding width; the descriptor width when absent.
    pub embed_dim: Option<usize>,
    pub attention: AttentionKind,
    pub proposals: ProposalConfig,
    /// Seed for parameter initialization and random sampling.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            sampler: SampleMethod::Fps,
            ptt: PttPlacement::All,
            heads: 1,
            layers: 1,
            k: 16,
            embed_dim: None,
            attention: AttentionKind::Vector,
            proposals: ProposalConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small network for fast training runs and gradient checks.
    pub fn toy() -> Self {
        ModelConfig {
            backbone: BackboneConfig {
                levels: vec![
                    LevelConfig {
                        centers: 32,
                        radius: 0.6,
                        neighbors: 8,
                        mlp: vec![16, 16],
                    },
                    LevelConfig {
                        centers: 16,
                        radius: 1.0,
                        neighbors: 8,
                        mlp: vec![16, 16],
                    },
                ],
            },
            k: 8,
            proposals: ProposalConfig {
                clusters: 8,
                radius: 0.5,
                neighbors: 8,
            },
            ..ModelConfig::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.backbone.dim()
    }

    pub fn ptt_config(&self) -> PttConfig {
        let dim = self.dim();
        PttConfig {
            dim,
            embed_dim: self.embed_dim.unwrap_or(dim),
            k: self.k,
            heads: self.heads,
            layers: self.layers,
            attention: self.attention,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.ptt_config().validate()
    }
}

/// Everything the tracker hands a regressor for one frame. Clouds are in
/// canonical frames: the template in its box frame, the search area in
/// the frame of its reference box.
#[derive(Debug, Clone, Copy)]
pub struct FrameInput<'a> {
    pub frame: usize,
    pub template: &'a PointCloud,
    pub search: &'a PointCloud,
    pub size: BoxSize,
    /// Ground truth in the search frame, when known. Only oracle
    /// regressors may look at it.
    pub hint: Option<OrientedBox3>,
}

/// Produces scored box proposals in the search frame.
pub trait FrameRegressor: Sync {
    fn propose(&self, input: &FrameInput<'_>) -> Result<Vec<Proposal>>;
}

/// Always proposes the reference box shifted by a fixed offset. A zero
/// offset keeps the reference box.
#[derive(Debug, Clone, Copy, Default)]
pub struct OffsetStub {
    pub offset: BoxOffset,
}

impl OffsetStub {
    pub fn zero() -> Self {
        OffsetStub::default()
    }

    pub fn x_bias(dx: f64) -> Self {
        OffsetStub {
            offset: BoxOffset {
                dx,
                ..BoxOffset::default()
            },
        }
    }
}

impl FrameRegressor for OffsetStub {
    fn propose(&self, input: &FrameInput<'_>) -> Result<Vec<Proposal>> {
        let o = self.offset;
        Ok(vec![Proposal {
            bbox: OrientedBox3::new(Point3::new(o.dx, o.dy, o.dz), input.size, o.dtheta)?,
            score: 0.0,
            cluster: 0,
        }])
    }
}

/// Proposes the ground truth exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleStub;

impl FrameRegressor for OracleStub {
    fn propose(&self, input: &FrameInput<'_>) -> Result<Vec<Proposal>> {
        let hint = input
            .hint
            .ok_or_else(|| Error::Config("oracle regressor needs ground truth".into()))?;
        Ok(vec![Proposal {
            bbox: hint,
            score: 1.0,
            cluster: 0,
        }])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PttNet {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub similarity: Similarity,
    pub vote: VoteHead,
    pub vote_ptt: Option<PttParams>,
    pub proposal: ProposalHead,
    pub prop_ptt: Option<PttParams>,
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct NetOutput {
    pub template_seeds: Vec<Point3>,
    pub template_feats: Var,
    pub search_seeds: Vec<Point3>,
    pub search_feats: Var,
    pub fused: Var,
    pub votes: VoteOutput,
    pub proposals: ProposalOutput,
}

impl PttNet {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let dim = config.dim();
        let backbone = Backbone::new(&mut store, "backbone", &config.backbone, &mut rng)?;
        let similarity = Similarity::new(&mut store, "similarity", config.backbone.seeds(), dim, &mut rng)?;
        let ptt_cfg = config.ptt_config();
        let vote_ptt = if config.ptt.in_vote() {
            Some(PttParams::new(&mut store, "vote_ptt", &ptt_cfg, &mut rng)?)
        } else {
            None
        };
        let vote = VoteHead::new(&mut store, "vote", dim, &mut rng)?;
        let prop_ptt = if config.ptt.in_prop() {
            Some(PttParams::new(&mut store, "prop_ptt", &ptt_cfg, &mut rng)?)
        } else {
            None
        };
        let proposal = ProposalHead::new(&mut store, "proposal", &config.proposals, dim, &mut rng)?;
        Ok(PttNet {
            config: config.clone(),
            store,
            backbone,
            similarity,
            vote,
            vote_ptt,
            proposal,
            prop_ptt,
        })
    }

    /// Builds the network and loads parameters from a checkpoint file.
    /// Extra records (optimizer state) are ignored.
    pub fn load(config: &ModelConfig, path: &Path) -> Result<Self> {
        let mut net = PttNet::new(config)?;
        let records = checkpoint::load(path)?;
        net.store.load_records(&records)?;
        Ok(net)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, template: &PointCloud, search: &PointCloud) -> Result<NetOutput> {
        let seed = self.config.seed;
        let sampler = self.config.sampler;
        let (template_seeds, template_feats) = self.backbone.forward(g, store, template, sampler, seed)?;
        let (search_seeds, search_feats) = self.backbone.forward(g, store, search, sampler, seed)?;
        let fused = self.similarity.forward(g, store, template_feats, search_feats)?;
        let votes = self
            .vote
            .forward(g, store, &search_seeds, fused, self.vote_ptt.as_ref())?;
        let proposals = self
            .proposal
            .forward(g, store, &votes, self.prop_ptt.as_ref())?;
        Ok(NetOutput {
            template_seeds,
            template_feats,
            search_seeds,
            search_feats,
            fused,
            votes,
            proposals,
        })
    }
}

impl FrameRegressor for PttNet {
    fn propose(&self, input: &FrameInput<'_>) -> Result<Vec<Proposal>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, &self.store, input.template, input.search)?;
        out.proposals.proposals(&g, input.size)
    }
}
