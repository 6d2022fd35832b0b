//! Small seeded instances of every learnable block.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{feature_embed, position_encode, ptt_forward, AttentionKind, PttConfig, PttParams};
use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::geometry::{BoxSize, OrientedBox3, Point3, PointCloud};
use crate::pipeline::backbone::{Backbone, BackboneConfig, LevelConfig};
use crate::pipeline::model::{ModelConfig, PttNet, PttPlacement};
use crate::pipeline::proposals::{ProposalConfig, ProposalHead};
use crate::pipeline::similarity::Similarity;
use crate::pipeline::voting::{coord_tensor, VoteHead, VoteOutput};
use crate::sampling::{knn, SampleMethod};
use crate::tensor::Tensor;
use crate::training::{compute_loss, LossConfig};

use super::{grad_check, GradCheckConfig, GradCheckReport};

const SEED: u64 = 0x5eed;
const N: usize = 12;
const D: usize = 8;
const K: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Embed,
    Position,
    Attention,
    ScalarAttention,
    Backbone,
    Similarity,
    Vote,
    Proposal,
    Loss,
    All,
}

impl Component {
    pub const EACH: [Component; 9] = [
        Component::Embed,
        Component::Position,
        Component::Attention,
        Component::ScalarAttention,
        Component::Backbone,
        Component::Similarity,
        Component::Vote,
        Component::Proposal,
        Component::Loss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Embed => "embed",
            Component::Position => "position",
            Component::Attention => "ptt",
            Component::ScalarAttention => "ptt-scalar",
            Component::Backbone => "backbone",
            Component::Similarity => "similarity",
            Component::Vote => "vote",
            Component::Proposal => "proposal",
            Component::Loss => "loss",
            Component::All => "all",
        }
    }
}

impl FromStr for Component {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => return Ok(Component::All),
            "attention" => return Ok(Component::Attention),
            _ => {}
        }
        Component::EACH
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown gradcheck component '{s}'")))
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Runs the selected check, or every check for [`Component::All`].
pub fn run_component(component: Component, cfg: &GradCheckConfig) -> Vec<GradCheckReport> {
    if component == Component::All {
        return Component::EACH.iter().map(|&c| run_one(c, cfg)).collect();
    }
    vec![run_one(component, cfg)]
}

fn run_one(component: Component, cfg: &GradCheckConfig) -> GradCheckReport {
    let name = component.name();
    let result = match component {
        Component::Embed => embed(cfg),
        Component::Position => position(cfg),
        Component::Attention => attention(AttentionKind::Vector, cfg),
        Component::ScalarAttention => attention(AttentionKind::Scalar, cfg),
        Component::Backbone => backbone(cfg),
        Component::Similarity => similarity(cfg),
        Component::Vote => vote(cfg),
        Component::Proposal => proposal(cfg),
        Component::Loss => loss(cfg),
        Component::All => unreachable!(),
    };
    result.unwrap_or_else(|e| GradCheckReport {
        component: name.to_string(),
        tolerance: cfg.tolerance,
        params: Vec::new(),
        failure: Some(format!("setup failed: {e}")),
    })
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(SEED)
}

fn points(rng: &mut impl Rng, n: usize, spread: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
                rng.random_range(-spread / 2.0..spread / 2.0),
            )
        })
        .collect()
}

fn values(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `sum(x * w)` with a fixed random `w`, so every output entry carries a
/// distinct weight.
fn probe(g: &mut Graph, x: Var, w: &Tensor) -> Result<Var> {
    let w = g.constant(w.clone());
    let p = g.mul(x, w)?;
    g.sum_all(p)
}

fn ptt_config(kind: AttentionKind) -> PttConfig {
    PttConfig {
        dim: D,
        embed_dim: D,
        k: K,
        heads: 2,
        layers: 2,
        attention: kind,
    }
}

fn embed(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = rng();
    let mut store = ParamStore::new();
    let params = PttParams::new(&mut store, "ptt", &ptt_config(AttentionKind::Vector), &mut rng)?;
    let feats = values(&mut rng, &[N, D]);
    let w = values(&mut rng, &[N, D]);
    let layer = &params.layers[0];
    let ids = layer.embed.params().to_vec();
    Ok(grad_check("embed", &store, &ids, cfg, |g, s| {
        let f = g.constant(feats.clone());
        let e = feature_embed(g, s, layer, f)?;
        probe(g, e, &w)
    }))
}

fn position(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = rng();
    let mut store = ParamStore::new();
    let params = PttParams::new(&mut store, "ptt", &ptt_config(AttentionKind::Vector), &mut rng)?;
    let coords = points(&mut rng, N, 1.0);
    let idx = knn(&coords, &coords, K)?;
    let head = &params.layers[0].heads[0];
    let w = values(&mut rng, &[N, K, params.config.head_dim()]);
    let ids = head.position.params();
    Ok(grad_check("position", &store, &ids, cfg, |g, s| {
        let p = position_encode(g, s, head, &coords, &idx)?;
        probe(g, p, &w)
    }))
}

fn attention(kind: AttentionKind, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = rng();
    let mut store = ParamStore::new();
    let params = PttParams::new(&mut store, "ptt", &ptt_config(kind), &mut rng)?;
    let coords = points(&mut rng, N, 1.0);
    let feats = values(&mut rng, &[N, D]);
    let w = values(&mut rng, &[N, D]);
    let mut ids = params.param_ids();
    if kind == AttentionKind::Scalar {
        // The relation MLP only shapes vector weights.
        let gamma: Vec<ParamId> = params
            .layers
            .iter()
            .flat_map(|l| l.heads.iter().flat_map(|h| h.gamma.params()))
            .collect();
        ids.retain(|id| !gamma.contains(id));
    }
    let name = match kind {
        AttentionKind::Vector => "ptt",
        AttentionKind::Scalar => "ptt-scalar",
    };
    Ok(grad_check(name, &store, &ids, cfg, |g, s| {
        let f = g.constant(feats.clone());
        let out = ptt_forward(g, s, &params, &coords, f)?;
        probe(g, out.feats, &w)
    }))
}

fn tiny_backbone() -> BackboneConfig {
    BackboneConfig {
        levels: vec![
            LevelConfig {
                centers: 12,
                radius: 0.8,
                neighbors: 6,
                mlp: vec![8, D],
            },
            LevelConfig {
                centers: 6,
                radius: 1.2,
                neighbors: 4,
                mlp: vec![8, D],
            },
        ],
    }
}

fn backbone(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = rng();
    let mut store = ParamStore::new();
    let bb = Backbone::new(&mut store, "backbone", &tiny_backbone(), &mut rng)?;
    let cloud = PointCloud::new(points(&mut rng, 32, 1.0));
    let w = values(&mut rng, &[6, D]);
    let ids = bb.param_ids();
    Ok(grad_check("backbone", &store, &ids, cfg, |g, s| {
        let (_, f) = bb.forward(g, s, &cloud, SampleMethod::Fps, 0)?;
        probe(g, f, &w)
    }))
}

fn similarity(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = rng();
    let mut store = ParamStore::new();
    let sim = Similarity::new(&mut store, "similarity", 6, D, &mut rng)?;
    let template = values(&mut rng, &[6, D]);
    let search = values(&mut rng, &[N, D]);
    let w = values(&mut rng, &[N, D]);
    let ids = sim.param_ids();
    Ok(grad_check("similarity", &store, &ids, cfg, |g, s| {
        let t = g.constant(template.clone());
        let q = g.constant(search.clone());
        let f = sim.forward(g, s, t, q)?;
        probe(g, f, &w)
    }))
}

fn vote(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = rng();
    let mut store = ParamStore::new();
    let head = VoteHead::new(&mut store, "vote", D, &mut rng)?;
    let seeds = points(&mut rng, N, 1.0);
    let feats = values(&mut rng, &[N, D]);
    let (wc, wf, wo) = (values(&mut rng, &[N, 3]), values(&mut rng, &[N, D]), values(&mut rng, &[N, 1]));
    let ids = head.param_ids();
    Ok(grad_check("vote", &store, &ids, cfg, |g, s| {
        let f = g.constant(feats.clone());
        let out = head.forward(g, s, &seeds, f, None)?;
        let a = probe(g, out.centers, &wc)?;
        let b = probe(g, out.feats, &wf)?;
        let c = probe(g, out.objectness, &wo)?;
        let ab = g.add(a, b)?;
        g.add(ab, c)
    }))
}

fn proposal(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = rng();
    let mut store = ParamStore::new();
    let pcfg = ProposalConfig {
        clusters: 4,
        radius: 0.8,
        neighbors: 6,
    };
    let head = ProposalHead::new(&mut store, "proposal", &pcfg, D, &mut rng)?;
    let ptt = PttParams::new(
        &mut store,
        "prop_ptt",
        &PttConfig {
            k: 3,
            layers: 1,
            ..ptt_config(AttentionKind::Vector)
        },
        &mut rng,
    )?;
    let centers = points(&mut rng, N, 1.0);
    let feats = values(&mut rng, &[N, D]);
    let obj = values(&mut rng, &[N, 1]);
    let w = values(&mut rng, &[4, 5]);
    let mut ids = head.param_ids();
    ids.extend(ptt.param_ids());
    Ok(grad_check("proposal", &store, &ids, cfg, |g, s| {
        let votes = VoteOutput {
            seeds: centers.clone(),
            centers: g.constant(coord_tensor(&centers)),
            offsets: g.constant(Tensor::zeros(&[N, 3])),
            feats: g.constant(feats.clone()),
            objectness: g.constant(obj.clone()),
            ptt: None,
        };
        let out = head.forward(g, s, &votes, Some(&ptt))?;
        probe(g, out.raw, &w)
    }))
}

/// The full network under the complete objective.
fn loss(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = rng();
    let model = ModelConfig {
        backbone: tiny_backbone(),
        ptt: PttPlacement::All,
        k: 4,
        proposals: ProposalConfig {
            clusters: 4,
            radius: 0.8,
            neighbors: 4,
        },
        seed: SEED,
        ..ModelConfig::default()
    };
    let net = PttNet::new(&model)?;
    let template = PointCloud::new(points(&mut rng, 16, 0.8));
    let search = PointCloud::new(points(&mut rng, 32, 1.2));
    let gt = OrientedBox3::new(Point3::new(0.1, -0.1, 0.0), BoxSize::new(1.2, 1.0, 1.6), 0.2)?;
    let loss_cfg = LossConfig {
        proposal_radius: 1.0,
        ..LossConfig::default()
    };
    let ids: Vec<ParamId> = net.param_ids();
    Ok(grad_check("loss", &net.store, &ids, cfg, |g, s| {
        let out = net.forward(g, s, &template, &search)?;
        Ok(compute_loss(g, &out, &gt, &loss_cfg)?.all)
    }))
}

