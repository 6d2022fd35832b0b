//! Seed sampling (random, farthest-point, feature-space farthest-point) and
//! neighborhood queries.

use std::cmp::Ordering;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Point3};
use crate::par;

/// Rectangular table of point indices, `rows x cols`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<usize>,
}

impl IndexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<usize>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(
                "IndexMatrix::new",
                format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len()),
            ));
        }
        Ok(IndexMatrix { rows, cols, data })
    }

    /// Every row `i` filled with `i`.
    pub fn identity(rows: usize, cols: usize) -> Self {
        IndexMatrix {
            rows,
            cols,
            data: (0..rows).flat_map(|i| std::iter::repeat_n(i, cols)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.data
    }

    pub fn max_index(&self) -> Option<usize> {
        self.data.iter().copied().max()
    }

    /// Errors if any entry is `>= bound`.
    pub fn check_bound(&self, bound: usize, op: &'static str) -> Result<()> {
        match self.data.iter().find(|&&i| i >= bound) {
            Some(&index) => Err(Error::IndexOutOfRange {
                op,
                index,
                len: bound,
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMethod {
    Random,
    Fps,
    FeatFps,
}

impl SampleMethod {
    pub fn label(self) -> &'static str {
        match self {
            SampleMethod::Random => "Random Sample",
            SampleMethod::Fps => "Fps",
            SampleMethod::FeatFps => "Feat-Fps",
        }
    }

    pub fn flag(self) -> &'static str {
        match self {
            SampleMethod::Random => "rs",
            SampleMethod::Fps => "fps",
            SampleMethod::FeatFps => "feat-fps",
        }
    }

    pub const ALL: [SampleMethod; 3] = [SampleMethod::Random, SampleMethod::Fps, SampleMethod::FeatFps];
}

impl std::fmt::Display for SampleMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.flag())
    }
}

impl std::str::FromStr for SampleMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rs" | "random" => Ok(SampleMethod::Random),
            "fps" => Ok(SampleMethod::Fps),
            "feat-fps" | "featfps" => Ok(SampleMethod::FeatFps),
            _ => Err(Error::Config(format!("unknown sampler '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartIndex {
    Fixed(usize),
    SeededRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub method: SampleMethod,
    pub count: usize,
    pub seed: u64,
    pub start: StartIndex,
}

impl SampleSpec {
    pub fn fps(count: usize) -> Self {
        SampleSpec {
            method: SampleMethod::Fps,
            count,
            seed: 0,
            start: StartIndex::Fixed(0),
        }
    }

    pub fn with_method(mut self, method: SampleMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Selected indices. `repeated` is set when the source had fewer distinct
/// points than requested and indices had to be reused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sampled {
    pub indices: Vec<usize>,
    pub repeated: bool,
}

/// Uniform sampling: without replacement when the cloud is large enough,
/// otherwise with replacement.
pub fn sample_random(cloud: &PointCloud, spec: &SampleSpec) -> Result<Sampled> {
    random_indices(cloud.len(), spec)
}

fn random_indices(n: usize, spec: &SampleSpec) -> Result<Sampled> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Empty("cannot sample from an empty cloud"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    if spec.count <= n {
        Ok(Sampled {
            indices: index::sample(&mut rng, n, spec.count).into_vec(),
            repeated: false,
        })
    } else {
        Ok(Sampled {
            indices: (0..spec.count).map(|_| rng.random_range(0..n)).collect(),
            repeated: true,
        })
    }
}

fn start_index(n: usize, spec: &SampleSpec) -> Result<usize> {
    match spec.start {
        StartIndex::Fixed(i) if i < n => Ok(i),
        StartIndex::Fixed(i) => Err(Error::IndexOutOfRange {
            op: "fps start",
            index: i,
            len: n,
        }),
        StartIndex::SeededRandom => Ok(ChaCha8Rng::seed_from_u64(spec.seed).random_range(0..n)),
    }
}

/// Farthest-point iteration over `n` rows of `width` values. Ties go to the
/// lowest index; once every row is taken the selection cycles.
pub fn farthest_point_rows(rows: &[f64], width: usize, spec: &SampleSpec) -> Result<Sampled> {
    spec.validate()?;
    if width == 0 {
        return Err(Error::Config("row width must be at least 1".into()));
    }
    let n = rows.len() / width;
    if n == 0 {
        return Err(Error::Empty("cannot sample from an empty set"));
    }
    let start = start_index(n, spec)?;
    let distinct = spec.count.min(n);
    let mut selected = Vec::with_capacity(spec.count);
    let mut taken = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = start;
    for _ in 0..distinct {
        selected.push(current);
        taken[current] = true;
        let c = &rows[current * width..(current + 1) * width];
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let r = &rows[i * width..(i + 1) * width];
            let d2: f64 = r.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
            if best.is_none_or(|(_, bd)| min_d2[i] > bd) {
                best = Some((i, min_d2[i]));
            }
        }
        match best {
            Some((i, _)) => current = i,
            None => break,
        }
    }
    let repeated = spec.count > n;
    while selected.len() < spec.count {
        selected.push(selected[selected.len() % n]);
    }
    Ok(Sampled {
        indices: selected,
        repeated,
    })
}

/// Farthest-point sampling in coordinate space.
pub fn sample_fps(cloud: &PointCloud, spec: &SampleSpec) -> Result<Sampled> {
    let flat: Vec<f64> = cloud.points().iter().flat_map(|p| p.to_array()).collect();
    farthest_point_rows(&flat, 3, spec)
}

/// Farthest-point sampling where distance is measured between descriptor
/// rows of `width` values.
pub fn sample_feat_fps(descriptors: &[f64], width: usize, spec: &SampleSpec) -> Result<Sampled> {
    farthest_point_rows(descriptors, width, spec)
}

/// Dispatches on `spec.method`. Feature-space sampling uses the cloud's
/// feature rows, falling back to coordinates when it has none.
pub fn sample(cloud: &PointCloud, spec: &SampleSpec) -> Result<Sampled> {
    match spec.method {
        SampleMethod::Random => sample_random(cloud, spec),
        SampleMethod::Fps => sample_fps(cloud, spec),
        SampleMethod::FeatFps => match cloud.features() {
            Some(f) => sample_feat_fps(f.as_slice(), f.width(), spec),
            None => sample_fps(cloud, spec),
        },
    }
}

fn cmp_dist(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// For each query, the `k` nearest base points in ascending distance (ties
/// to the lower index). Rows are padded with the nearest index when the
/// base has fewer than `k` points.
pub fn knn(query: &[Point3], base: &[Point3], k: usize) -> Result<IndexMatrix> {
    if base.is_empty() {
        return Err(Error::Empty("knn base set"));
    }
    if k == 0 {
        return Err(Error::Config("knn needs k >= 1".into()));
    }
    let take = k.min(base.len());
    let rows = par::map_range(query.len(), |qi| {
        let q = query[qi];
        let mut d: Vec<(f64, usize)> = base
            .iter()
            .enumerate()
            .map(|(i, &b)| (q.distance_squared(b), i))
            .collect();
        if take < d.len() {
            d.select_nth_unstable_by(take - 1, cmp_dist);
            d.truncate(take);
        }
        d.sort_unstable_by(cmp_dist);
        let mut row: Vec<usize> = d.iter().map(|&(_, i)| i).collect();
        let nearest = row[0];
        row.resize(k, nearest);
        row
    });
    IndexMatrix::new(query.len(), k, rows.concat())
}

/// For each center, up to `max_neighbors` base points within `radius`, in
/// index order, padded by repeating the first hit. A center with no base
/// point in range falls back to its nearest base point.
pub fn ball_query(
    centers: &[Point3],
    base: &[Point3],
    radius: f64,
    max_neighbors: usize,
) -> Result<IndexMatrix> {
    if base.is_empty() {
        return Err(Error::Empty("ball query base set"));
    }
    if max_neighbors == 0 {
        return Err(Error::Config("ball query needs at least one neighbor".into()));
    }
    let r2 = radius * radius;
    let rows = par::map_range(centers.len(), |ci| {
        let c = centers[ci];
        let mut row = Vec::with_capacity(max_neighbors);
        for (i, &b) in base.iter().enumerate() {
            if c.distance_squared(b) <= r2 {
                row.push(i);
                if row.len() == max_neighbors {
                    break;
                }
            }
        }
        if row.is_empty() {
            let nearest = base
                .iter()
                .enumerate()
                .map(|(i, &b)| (c.distance_squared(b), i))
                .min_by(cmp_dist)
                .map(|(_, i)| i)
                .unwrap_or(0);
            row.push(nearest);
        }
        let first = row[0];
        row.resize(max_neighbors, first);
        row
    });
    IndexMatrix::new(centers.len(), max_neighbors, rows.concat())
}
