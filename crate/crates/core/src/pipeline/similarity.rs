//! Template-to-search feature fusion by cosine similarity.

use std::sync::Arc;

use rand::Rng;

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::sampling::IndexMatrix;

const NORM_EPS: f64 = 1e-12;

/// Cosine similarity of every search row against every template row,
/// `[Ns, Nt]`.
pub fn cosine_similarity(g: &mut Graph, search: Var, template: Var) -> Result<Var> {
    let (s, t) = (g.shape(search), g.shape(template));
    if s.len() != 2 || t.len() != 2 || s[1] != t[1] {
        return Err(Error::shape(
            "cosine_similarity",
            format!("search {s:?} against template {t:?}"),
        ));
    }
    let sn = g.l2_normalize(search, NORM_EPS)?;
    let tn = g.l2_normalize(template, NORM_EPS)?;
    g.matmul_nt(sn, tn)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Similarity {
    pub mlp: Mlp,
    pub template_seeds: usize,
    pub dim: usize,
}

impl Similarity {
    pub fn new(store: &mut ParamStore, prefix: &str, template_seeds: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mlp = Mlp::new(store, &format!("{prefix}.fuse"), &[template_seeds + 2 * dim, dim, dim], rng)?;
        Ok(Similarity {
            mlp,
            template_seeds,
            dim,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.mlp.params()
    }

    /// Fused search descriptors `[Ns, D]`: each row concatenates its
    /// similarity row, the best-matching template descriptor and itself.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, template: Var, search: Var) -> Result<Var> {
        if g.shape(template) != [self.template_seeds, self.dim] {
            return Err(Error::shape(
                "augment_similarity",
                format!(
                    "template {:?}, expected [{}, {}]",
                    g.shape(template),
                    self.template_seeds,
                    self.dim
                ),
            ));
        }
        let sim = cosine_similarity(g, search, template)?;
        let nt = self.template_seeds;
        let best: Vec<usize> = g
            .value(sim)
            .data()
            .chunks(nt)
            .map(|row| {
                let mut arg = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[arg] {
                        arg = j;
                    }
                }
                arg
            })
            .collect();
        g.note_decision(&best);
        let ns = best.len();
        let idx = Arc::new(IndexMatrix::new(ns, 1, best)?);
        let matched = g.gather(template, idx)?;
        let matched = g.reshape(matched, &[ns, self.dim])?;
        let input = g.concat(&[sim, matched, search])?;
        self.mlp.forward(g, store, input)
    }
}
