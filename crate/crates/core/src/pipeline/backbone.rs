//! Shallow set-abstraction feature extractor.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::nn::Mlp;
use crate::sampling::{ball_query, sample, sample_feat_fps, IndexMatrix, SampleMethod, SampleSpec, StartIndex};
use crate::tensor::Tensor;

/// One grouping level: sample `centers`, gather up to `neighbors` points
/// within `radius` of each, run `mlp` per neighbor and max-pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    pub centers: usize,
    pub radius: f64,
    pub neighbors: usize,
    /// Hidden and output widths; the input width is implied.
    pub mlp: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub levels: Vec<LevelConfig>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            levels: vec![
                LevelConfig {
                    centers: 512,
                    radius: 0.3,
                    neighbors: 32,
                    mlp: vec![32, 32, 64],
                },
                LevelConfig {
                    centers: 128,
                    radius: 0.5,
                    neighbors: 32,
                    mlp: vec![64, 64, 64],
                },
            ],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("backbone needs at least one level".into()));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.centers == 0 || l.neighbors == 0 || l.mlp.is_empty() || l.mlp.contains(&0) {
                return Err(Error::Config(format!("backbone level {i} has an empty size")));
            }
            if !(l.radius > 0.0) {
                return Err(Error::Config(format!("backbone level {i} radius must be positive")));
            }
            if i > 0 && l.centers >= self.levels[i - 1].centers {
                return Err(Error::Config(
                    "backbone center counts must strictly decrease".into(),
                ));
            }
        }
        Ok(())
    }

    /// Number of seeds produced.
    pub fn seeds(&self) -> usize {
        self.levels.last().map_or(0, |l| l.centers)
    }

    /// Descriptor width produced.
    pub fn dim(&self) -> usize {
        self.levels
            .last()
            .and_then(|l| l.mlp.last().copied())
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub mlps: Vec<Mlp>,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, prefix: &str, config: &BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut mlps = Vec::with_capacity(config.levels.len());
        let mut width = 0;
        for (i, l) in config.levels.iter().enumerate() {
            let mut widths = vec![3 + width];
            widths.extend_from_slice(&l.mlp);
            mlps.push(Mlp::new(store, &format!("{prefix}.sa{i}"), &widths, rng)?);
            width = *l.mlp.last().unwrap();
        }
        Ok(Backbone {
            config: config.clone(),
            mlps,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.mlps.iter().flat_map(|m| m.params()).collect()
    }

    /// Seed coordinates and `[N, D]` descriptors of `cloud`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cloud: &PointCloud,
        sampler: SampleMethod,
        seed: u64,
    ) -> Result<(Vec<Point3>, Var)> {
        if cloud.is_empty() {
            return Err(Error::Empty("backbone input cloud"));
        }
        let mut coords = cloud.points().to_vec();
        let mut feats: Option<Var> = None;
        for (l, (level, mlp)) in self.config.levels.iter().zip(&self.mlps).enumerate() {
            let spec = SampleSpec {
                method: sampler,
                count: level.centers,
                seed: seed.wrapping_add(l as u64),
                start: StartIndex::Fixed(0),
            };
            let picked = match (sampler, feats) {
                (SampleMethod::FeatFps, Some(f)) => {
                    let fv = g.value(f);
                    sample_feat_fps(fv.data(), fv.last_dim(), &spec)?
                }
                _ => sample(&PointCloud::new(coords.clone()), &spec)?,
            };
            g.note_decision(&picked.indices);
            let centers: Vec<Point3> = picked.indices.iter().map(|&i| coords[i]).collect();
            let idx = ball_query(&centers, &coords, level.radius, level.neighbors)?;
            g.note_decision(idx.as_slice());
            let offsets = grouped_offsets(&centers, &coords, &idx, level.radius)?;
            let offsets = g.constant(offsets);
            let input = match feats {
                Some(f) => {
                    let grouped = g.gather(f, Arc::new(idx))?;
                    g.concat(&[offsets, grouped])?
                }
                None => offsets,
            };
            let h = mlp.forward(g, store, input)?;
            feats = Some(g.max_axis(h, 1)?);
            coords = centers;
        }
        Ok((coords, feats.expect("at least one level")))
    }
}

/// `(base[idx[i][j]] - centers[i]) / radius` as `[C, k, 3]`.
fn grouped_offsets(centers: &[Point3], base: &[Point3], idx: &IndexMatrix, radius: f64) -> Result<Tensor> {
    let mut data = Vec::with_capacity(idx.as_slice().len() * 3);
    for (i, c) in centers.iter().enumerate() {
        for &j in idx.row(i) {
            data.extend_from_slice(&((base[j] - *c) * (1.0 / radius)).to_array());
        }
    }
    Tensor::new(&[idx.rows(), idx.cols(), 3], data)
}
