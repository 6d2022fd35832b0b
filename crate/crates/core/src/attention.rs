//! Point transformer block: feature embedding, relative-offset position
//! encoding and kNN vector self-attention with a residual output.
//!
//! Per layer and head, with `g = embed(f)` and neighbors `j` of seed `i`:
//!
//! ```text
//! p_ij = eta(c_i - c_j)
//! w_ij = softmax_j( gamma(q_i - k_j + p_ij) )      per channel
//! a_i  = sum_j w_ij * (v_j + p_ij)
//! f_i' = f_i + project(concat_heads(a_i))
//! ```

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::nn::{Linear, Mlp};
use crate::sampling::{knn, IndexMatrix};
use crate::tensor::Tensor;

/// Seeds: coordinates `c_i` with descriptors `f_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    coords: Vec<Point3>,
    feats: Tensor,
}

impl SeedSet {
    pub fn new(coords: Vec<Point3>, feats: Tensor) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty("seed set"));
        }
        if feats.rank() != 2 || feats.shape()[0] != coords.len() || feats.shape()[1] == 0 {
            return Err(Error::shape(
                "SeedSet::new",
                format!("{} coords with features {:?}", coords.len(), feats.shape()),
            ));
        }
        if !feats.all_finite() || !coords.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite {
                locus: "SeedSet::new".into(),
            });
        }
        Ok(SeedSet { coords, feats })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feats.shape()[1]
    }

    pub fn coords(&self) -> &[Point3] {
        &self.coords
    }

    pub fn feats(&self) -> &Tensor {
        &self.feats
    }

    pub fn translated(&self, t: Point3) -> SeedSet {
        SeedSet {
            coords: self.coords.iter().map(|&p| p + t).collect(),
            feats: self.feats.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    /// Channel-wise weights from `gamma(q - k + p)`.
    #[default]
    Vector,
    /// One weight per neighbor from the scaled dot product `q . k`, shared
    /// by all channels.
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PttConfig {
    /// Descriptor width `D`.
    pub dim: usize,
    /// Embedding width `M`.
    pub embed_dim: usize,
    pub k: usize,
    pub heads: usize,
    pub layers: usize,
    pub attention: AttentionKind,
}

impl Default for PttConfig {
    fn default() -> Self {
        PttConfig {
            dim: 64,
            embed_dim: 64,
            k: 16,
            heads: 1,
            layers: 1,
            attention: AttentionKind::Vector,
        }
    }
}

impl PttConfig {
    /// `M = D` with the remaining fields at their defaults.
    pub fn with_dim(dim: usize) -> Self {
        PttConfig {
            dim,
            embed_dim: dim,
            ..PttConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("embed_dim", self.embed_dim),
            ("k", self.k),
            ("heads", self.heads),
            ("layers", self.layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("ptt {name} must be at least 1")));
            }
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PttHead {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    /// Position MLP `3 -> Mh -> Mh`.
    pub position: Mlp,
    /// Attention MLP `Mh -> Mh -> Mh`.
    pub gamma: Mlp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PttLayer {
    pub embed: Linear,
    pub heads: Vec<PttHead>,
    pub project: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PttParams {
    pub config: PttConfig,
    pub layers: Vec<PttLayer>,
}

impl PttParams {
    /// Registers all parameters under `{prefix}.l{layer}...`.
    pub fn new(store: &mut ParamStore, prefix: &str, config: &PttConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (d, m, mh) = (config.dim, config.embed_dim, config.head_dim());
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("{prefix}.l{l}");
            let embed = Linear::new(store, &format!("{p}.embed"), d, m, rng)?;
            let mut heads = Vec::with_capacity(config.heads);
            for h in 0..config.heads {
                let ph = format!("{p}.h{h}");
                heads.push(PttHead {
                    query: Linear::new(store, &format!("{ph}.query"), m, mh, rng)?,
                    key: Linear::new(store, &format!("{ph}.key"), m, mh, rng)?,
                    value: Linear::new(store, &format!("{ph}.value"), m, mh, rng)?,
                    position: Mlp::new(store, &format!("{ph}.position"), &[3, mh, mh], rng)?,
                    gamma: Mlp::new(store, &format!("{ph}.gamma"), &[mh, mh, mh], rng)?,
                });
            }
            let project = Linear::new(store, &format!("{p}.project"), m, d, rng)?;
            layers.push(PttLayer {
                embed,
                heads,
                project,
            });
        }
        Ok(PttParams {
            config: config.clone(),
            layers,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in &self.layers {
            ids.extend(l.embed.params());
            for h in &l.heads {
                ids.extend(h.query.params());
                ids.extend(h.key.params());
                ids.extend(h.value.params());
                ids.extend(h.position.params());
                ids.extend(h.gamma.params());
            }
            ids.extend(l.project.params());
        }
        ids
    }
}

/// Nodes produced by [`ptt_forward`].
#[derive(Debug, Clone)]
pub struct PttOutput {
    /// Refined features `[N, D]`.
    pub feats: Var,
    /// Post-softmax weights `[N, k, Mh]`, indexed `[layer][head]`.
    pub weights: Vec<Vec<Var>>,
    pub neighbors: Arc<IndexMatrix>,
}

/// `c_i - c_{idx[i][j]}` as `[N, k, 3]`.
pub fn relative_offsets(coords: &[Point3], idx: &IndexMatrix) -> Result<Tensor> {
    idx.check_bound(coords.len(), "relative_offsets")?;
    let mut data = Vec::with_capacity(idx.as_slice().len() * 3);
    for i in 0..idx.rows() {
        for &j in idx.row(i) {
            data.extend_from_slice(&(coords[i] - coords[j]).to_array());
        }
    }
    Tensor::new(&[idx.rows(), idx.cols(), 3], data)
}

/// Linear map `D -> M` of each descriptor.
pub fn feature_embed(g: &mut Graph, store: &ParamStore, layer: &PttLayer, feats: Var) -> Result<Var> {
    layer.embed.forward(g, store, feats)
}

/// `eta(c_i - c_j)` for every neighbor pair, `[N, k, Mh]`.
pub fn position_encode(
    g: &mut Graph,
    store: &ParamStore,
    head: &PttHead,
    coords: &[Point3],
    idx: &IndexMatrix,
) -> Result<Var> {
    let offsets = g.constant(relative_offsets(coords, idx)?);
    head.position.forward(g, store, offsets)
}

fn head_forward(
    g: &mut Graph,
    store: &ParamStore,
    head: &PttHead,
    kind: AttentionKind,
    emb: Var,
    offsets: Var,
    idx: &Arc<IndexMatrix>,
    self_idx: &Arc<IndexMatrix>,
) -> Result<(Var, Var)> {
    let q = head.query.forward(g, store, emb)?;
    let k = head.key.forward(g, store, emb)?;
    let v = head.value.forward(g, store, emb)?;
    let qb = g.gather(q, self_idx.clone())?;
    let kn = g.gather(k, idx.clone())?;
    let vn = g.gather(v, idx.clone())?;
    let p = head.position.forward(g, store, offsets)?;
    let weights = match kind {
        AttentionKind::Vector => {
            let rel = g.sub(qb, kn)?;
            let rel = g.add(rel, p)?;
            let logits = head.gamma.forward(g, store, rel)?;
            g.softmax(logits, 1)?
        }
        AttentionKind::Scalar => {
            let mh = head.query.dout;
            let prod = g.mul(qb, kn)?;
            let dot = g.sum_axis(prod, 2)?;
            let dot = g.scale(dot, 1.0 / (mh as f64).sqrt())?;
            let (n, kk) = (idx.rows(), idx.cols());
            let dot = g.reshape(dot, &[n, kk, 1])?;
            let w = g.softmax(dot, 1)?;
            g.broadcast_last(w, mh)?
        }
    };
    let vp = g.add(vn, p)?;
    let weighted = g.mul(weights, vp)?;
    let a = g.sum_axis(weighted, 1)?;
    Ok((a, weights))
}

/// Refines `feats` (`[N, D]`) over the seeds at `coords`.
pub fn ptt_forward(
    g: &mut Graph,
    store: &ParamStore,
    params: &PttParams,
    coords: &[Point3],
    feats: Var,
) -> Result<PttOutput> {
    ptt_forward_at(g, store, params, coords, None, feats)
}

/// As [`ptt_forward`], with the coordinates also given as an `[N, 3]` node
/// so that position encodings carry gradient back to them. Neighborhoods
/// are chosen from `coords`.
pub fn ptt_forward_at(
    g: &mut Graph,
    store: &ParamStore,
    params: &PttParams,
    coords: &[Point3],
    coord_var: Option<Var>,
    feats: Var,
) -> Result<PttOutput> {
    let cfg = &params.config;
    let n = coords.len();
    if n == 0 {
        return Err(Error::Empty("ptt seeds"));
    }
    if g.shape(feats) != [n, cfg.dim] {
        return Err(Error::shape(
            "ptt_forward",
            format!("features {:?} for {n} seeds of width {}", g.shape(feats), cfg.dim),
        ));
    }
    let idx = Arc::new(knn(coords, coords, cfg.k)?);
    g.note_decision(idx.as_slice());
    let self_idx = Arc::new(IndexMatrix::identity(n, cfg.k));
    let cv = match coord_var {
        Some(v) if g.shape(v) == [n, 3] => v,
        Some(v) => {
            return Err(Error::shape(
                "ptt_forward",
                format!("coordinate node {:?} for {n} seeds", g.shape(v)),
            ))
        }
        None => g.constant(Tensor::new(&[n, 3], coords.iter().flat_map(|p| p.to_array()).collect())?),
    };
    let ci = g.gather(cv, self_idx.clone())?;
    let cj = g.gather(cv, idx.clone())?;
    let offsets = g.sub(ci, cj)?;
    let mut f = feats;
    let mut weights = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let emb = feature_embed(g, store, layer, f)?;
        let mut outs = Vec::with_capacity(layer.heads.len());
        let mut ws = Vec::with_capacity(layer.heads.len());
        for head in &layer.heads {
            let (a, w) = head_forward(g, store, head, cfg.attention, emb, offsets, &idx, &self_idx)?;
            outs.push(a);
            ws.push(w);
        }
        let a = if outs.len() == 1 { outs[0] } else { g.concat(&outs)? };
        let proj = layer.project.forward(g, store, a)?;
        f = g.add(f, proj)?;
        weights.push(ws);
    }
    Ok(PttOutput {
        feats: f,
        weights,
        neighbors: idx,
    })
}

/// Refined features of `seeds` as a plain tensor.
pub fn ptt_apply(store: &ParamStore, params: &PttParams, seeds: &SeedSet) -> Result<Tensor> {
    let mut g = Graph::new();
    let f = g.constant(seeds.feats().clone());
    let out = ptt_forward(&mut g, store, params, seeds.coords(), f)?;
    Ok(g.value(out.feats).clone())
}

/// Attention weights of every layer and head, `[layer][head]` of
/// `[N, k, Mh]`, along with the neighbor table.
pub fn attention_weights(
    store: &ParamStore,
    params: &PttParams,
    seeds: &SeedSet,
) -> Result<(Vec<Vec<Tensor>>, Arc<IndexMatrix>)> {
    let mut g = Graph::new();
    let f = g.constant(seeds.feats().clone());
    let out = ptt_forward(&mut g, store, params, seeds.coords(), f)?;
    let w = out
        .weights
        .iter()
        .map(|ws| ws.iter().map(|&v| g.value(v).clone()).collect())
        .collect();
    Ok((w, out.neighbors))
}

/// One seed's attention in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub frame: usize,
    pub seed: usize,
    pub coord: [f64; 3],
    pub neighbors: Vec<usize>,
    /// `[k][Mh]` weights of the seed's own neighborhood (first layer, first
    /// head).
    pub weights: Vec<Vec<f64>>,
    /// Attention this seed receives from all neighborhoods that include it,
    /// averaged over channels.
    pub score: f64,
}

/// Builds one record per seed from first-layer, first-head weights.
pub fn attention_records(frame: usize, coords: &[Point3], weights: &Tensor, idx: &IndexMatrix) -> Vec<AttentionRecord> {
    let (n, k, c) = (weights.shape()[0], weights.shape()[1], weights.shape()[2]);
    let mut received = vec![0.0; n];
    for i in 0..n {
        for (j, &src) in idx.row(i).iter().enumerate() {
            let off = (i * k + j) * c;
            received[src] += weights.data()[off..off + c].iter().sum::<f64>() / c as f64;
        }
    }
    (0..n)
        .map(|i| AttentionRecord {
            frame,
            seed: i,
            coord: coords[i].to_array(),
            neighbors: idx.row(i).to_vec(),
            weights: (0..k)
                .map(|j| weights.data()[(i * k + j) * c..(i * k + j + 1) * c].to_vec())
                .collect(),
            score: received[i],
        })
        .collect()
}
