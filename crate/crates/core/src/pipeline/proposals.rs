//! Vote clustering and per-cluster box proposals.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{ptt_forward_at, PttOutput, PttParams};
use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::geometry::{BoxSize, OrientedBox3, Point3, PointCloud};
use crate::nn::Mlp;
use crate::sampling::{ball_query, sample_fps, IndexMatrix, SampleSpec};

use super::voting::VoteOutput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    pub clusters: usize,
    pub radius: f64,
    /// Votes grouped per cluster.
    pub neighbors: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            clusters: 16,
            radius: 0.3,
            neighbors: 16,
        }
    }
}

/// Offset of a proposal relative to its cluster center, in the search frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxOffset {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dtheta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: OrientedBox3,
    pub score: f64,
    pub cluster: usize,
}

/// Highest score wins; ties go to the lowest cluster id.
pub fn select_box(proposals: &[Proposal]) -> Result<&Proposal> {
    let mut best: Option<&Proposal> = None;
    for p in proposals {
        best = match best {
            Some(b) if p.score > b.score || (p.score == b.score && p.cluster < b.cluster) => Some(p),
            Some(b) => Some(b),
            None => Some(p),
        };
    }
    best.ok_or(Error::Empty("proposal list"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalHead {
    pub config: ProposalConfig,
    /// `[3 + 1 + D] -> D -> D` applied per grouped vote, then max-pooled.
    pub group: Mlp,
    /// `[3 + D] -> D -> 5`: `dx, dy, dz, dtheta, score`.
    pub head: Mlp,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct ProposalOutput {
    /// Cluster centers `[C, 3]`.
    pub centers: Var,
    /// `[C, 5]` raw head outputs.
    pub raw: Var,
    pub feats: Var,
    pub ptt: Option<PttOutput>,
}

impl ProposalHead {
    pub fn new(store: &mut ParamStore, prefix: &str, config: &ProposalConfig, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if config.clusters == 0 || config.neighbors == 0 || !(config.radius > 0.0) {
            return Err(Error::Config(format!("invalid proposal config {config:?}")));
        }
        Ok(ProposalHead {
            config: config.clone(),
            group: Mlp::new(store, &format!("{prefix}.group"), &[4 + dim, dim, dim], rng)?,
            head: Mlp::new(store, &format!("{prefix}.head"), &[3 + dim, dim, 5], rng)?,
            dim,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.group.params();
        ids.extend(self.head.params());
        ids
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        votes: &VoteOutput,
        ptt: Option<&PttParams>,
    ) -> Result<ProposalOutput> {
        let points = votes.center_points(g);
        if points.is_empty() {
            return Err(Error::Empty("votes"));
        }
        let c = self.config.clusters.min(points.len());
        let picked = sample_fps(&PointCloud::new(points.clone()), &SampleSpec::fps(c))?.indices;
        g.note_decision(&picked);
        let centers_pts: Vec<Point3> = picked.iter().map(|&i| points[i]).collect();
        let ns = self.config.neighbors;
        let idx = Arc::new(ball_query(&centers_pts, &points, self.config.radius, ns)?);
        g.note_decision(idx.as_slice());
        let own = Arc::new(IndexMatrix::new(c, 1, picked.clone())?);
        let own_rep = Arc::new(IndexMatrix::new(
            c,
            ns,
            picked.iter().flat_map(|&i| std::iter::repeat_n(i, ns)).collect(),
        )?);

        let centers = g.gather(votes.centers, own)?;
        let centers = g.reshape(centers, &[c, 3])?;
        let grouped = g.gather(votes.centers, idx.clone())?;
        let anchor = g.gather(votes.centers, own_rep)?;
        let rel = g.sub(grouped, anchor)?;
        let rel = g.scale(rel, 1.0 / self.config.radius)?;
        let obj = g.gather(votes.objectness, idx.clone())?;
        let obj = g.sigmoid(obj)?;
        let feats = g.gather(votes.feats, idx)?;
        let input = g.concat(&[rel, obj, feats])?;
        let h = self.group.forward(g, store, input)?;
        let mut pooled = g.max_axis(h, 1)?;
        let mut ptt_out = None;
        if let Some(p) = ptt {
            let out = ptt_forward_at(g, store, p, &centers_pts, Some(centers), pooled)?;
            pooled = out.feats;
            ptt_out = Some(out);
        }
        let head_in = g.concat(&[centers, pooled])?;
        let raw = self.head.forward(g, store, head_in)?;
        Ok(ProposalOutput {
            centers,
            raw,
            feats: pooled,
            ptt: ptt_out,
        })
    }
}

impl ProposalOutput {
    pub fn cluster_centers(&self, g: &Graph) -> Vec<Point3> {
        g.value(self.centers)
            .data()
            .chunks(3)
            .map(|c| Point3::new(c[0], c[1], c[2]))
            .collect()
    }

    /// Decoded boxes in the search frame with the given size.
    pub fn proposals(&self, g: &Graph, size: BoxSize) -> Result<Vec<Proposal>> {
        let raw = g.value(self.raw).data();
        self.cluster_centers(g)
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let r = &raw[5 * i..5 * i + 5];
                Ok(Proposal {
                    bbox: OrientedBox3::new(c + Point3::new(r[0], r[1], r[2]), size, r[3])?,
                    score: r[4],
                    cluster: i,
                })
            })
            .collect()
    }
}
