//! Per-seed Hough votes toward the target center.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{ptt_forward, PttOutput, PttParams};
use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::geometry::Point3;
use crate::nn::Mlp;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub center: Point3,
    pub objectness: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteHead {
    /// `[3 + D] -> D -> [3 + D + 1]`: offset, feature residual, objectness.
    pub mlp: Mlp,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct VoteOutput {
    pub seeds: Vec<Point3>,
    /// Vote centers `[N, 3]`.
    pub centers: Var,
    pub offsets: Var,
    /// Vote features `[N, D]`.
    pub feats: Var,
    /// Objectness logits `[N, 1]`.
    pub objectness: Var,
    pub ptt: Option<PttOutput>,
}

pub(crate) fn coord_tensor(points: &[Point3]) -> Tensor {
    Tensor::new(
        &[points.len(), 3],
        points.iter().flat_map(|p| p.to_array()).collect(),
    )
    .expect("n x 3")
}

impl VoteHead {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mlp = Mlp::new(store, &format!("{prefix}.mlp"), &[3 + dim, dim, 3 + dim + 1], rng)?;
        Ok(VoteHead { mlp, dim })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.mlp.params()
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        seeds: &[Point3],
        feats: Var,
        ptt: Option<&PttParams>,
    ) -> Result<VoteOutput> {
        let (feats, ptt_out) = match ptt {
            Some(p) => {
                let out = ptt_forward(g, store, p, seeds, feats)?;
                (out.feats, Some(out))
            }
            None => (feats, None),
        };
        let coords = g.constant(coord_tensor(seeds));
        let input = g.concat(&[coords, feats])?;
        let out = self.mlp.forward(g, store, input)?;
        let offsets = g.slice_last(out, 0, 3)?;
        let residual = g.slice_last(out, 3, self.dim)?;
        let objectness = g.slice_last(out, 3 + self.dim, 1)?;
        let centers = g.add(coords, offsets)?;
        let vote_feats = g.add(feats, residual)?;
        Ok(VoteOutput {
            seeds: seeds.to_vec(),
            centers,
            offsets,
            feats: vote_feats,
            objectness,
            ptt: ptt_out,
        })
    }
}

impl VoteOutput {
    pub fn votes(&self, g: &Graph) -> Vec<Vote> {
        let c = g.value(self.centers).data();
        let o = g.value(self.objectness).data();
        (0..self.seeds.len())
            .map(|i| Vote {
                center: Point3::new(c[3 * i], c[3 * i + 1], c[3 * i + 2]),
                objectness: o[i],
            })
            .collect()
    }

    pub fn center_points(&self, g: &Graph) -> Vec<Point3> {
        g.value(self.centers)
            .data()
            .chunks(3)
            .map(|c| Point3::new(c[0], c[1], c[2]))
            .collect()
    }
}
