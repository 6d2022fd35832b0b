//! Deterministic synthetic tracking scenes and their on-disk corpus.
//!
//! File layouts (all little-endian):
//!
//! * point cloud: magic `PTTCLOUD`, version `u8`, point count `u64`,
//!   feature width `u32`, then per point `x y z` as `f64` followed by
//!   `width` feature values.
//! * sequence: magic `PTTSEQNC`, version `u8`, frame count `u32`, scene id
//!   (`u32` length + UTF-8), then per frame the GT box as seven `f64`
//!   (`x y z w h l heading`) followed by one point-cloud record.
//! * manifest: one JSON object per line with `scene_id`, `path`, `seed`,
//!   `spec_digest`, `sha256` and `frames`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{box_contains, BoxSize, FeatureMatrix, OrientedBox3, Point3, PointCloud};
use crate::par;
use crate::sequence::{Frame, TrackSequence};

const CLOUD_MAGIC: &[u8; 8] = b"PTTCLOUD";
const SEQ_MAGIC: &[u8; 8] = b"PTTSEQNC";
const FORMAT_VERSION: u8 = 1;

/// Surface points are pulled this far inside the faces so they stay inside
/// the box after round-off.
const SURFACE_INSET: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetShape {
    /// All six faces.
    BoxShell,
    /// Only the two vertical faces that face the sensor at the origin.
    #[default]
    LShell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub shape: TargetShape,
    /// `w, h, l` in meters.
    pub size: [f64; 3],
    /// Inclusive range of on-target points per frame, drawn per frame.
    pub points: [usize; 2],
    pub frames: usize,
    /// Seconds between frames.
    pub dt: f64,
    pub speed: f64,
    pub turn_rate: f64,
    /// Initial center.
    pub start: [f64; 3],
    pub heading: f64,
    pub clutter: usize,
    /// Half width of the square clutter region around the target, meters.
    pub clutter_spread: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            shape: TargetShape::LShell,
            size: [1.6, 1.5, 3.9],
            points: [150, 150],
            frames: 10,
            dt: 0.1,
            speed: 5.0,
            turn_rate: 0.0,
            start: [10.0, 4.0, 0.0],
            heading: 0.0,
            clutter: 200,
            clutter_spread: 6.0,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(format!("target size must be positive, got {:?}", self.size)));
        }
        if self.points[0] > self.points[1] {
            return Err(Error::Config(format!("point range {:?} is reversed", self.points)));
        }
        if self.frames < 2 {
            return Err(Error::Config("a scene needs at least 2 frames".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1]", self.dropout)));
        }
        let finite = [self.dt, self.speed, self.turn_rate, self.heading, self.clutter_spread]
            .iter()
            .chain(&self.start)
            .all(|v| v.is_finite());
        if !finite || !(self.dt > 0.0) || self.clutter_spread < 0.0 {
            return Err(Error::Config("scene timing and spread must be finite and positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Closed-form pose at frame `k`: constant speed along the heading with
    /// a constant turn rate.
    pub fn pose_at(&self, k: usize) -> (Point3, f64) {
        let t = k as f64 * self.dt;
        let (h0, v, w) = (self.heading, self.speed, self.turn_rate);
        let h = h0 + w * t;
        let [x0, y0, z0] = self.start;
        let (dx, dy) = if w == 0.0 {
            (v * t * h0.cos(), v * t * h0.sin())
        } else {
            ((v / w) * (h.sin() - h0.sin()), -(v / w) * (h.cos() - h0.cos()))
        };
        (Point3::new(x0 + dx, y0 + dy, z0), h)
    }

    pub fn box_at(&self, k: usize) -> Result<OrientedBox3> {
        let (c, h) = self.pose_at(k);
        let [w, hh, l] = self.size;
        OrientedBox3::new(c, BoxSize::new(w, hh, l), h)
    }
}

/// Uniform point on the chosen faces, in the box frame.
fn surface_point(rng: &mut impl Rng, shape: TargetShape, half: [f64; 3], facing: [f64; 2]) -> Point3 {
    let [hl, hw, hh] = half;
    // Faces as (axis, sign, area).
    let faces: Vec<(usize, f64, f64)> = match shape {
        TargetShape::BoxShell => vec![
            (0, 1.0, hw * hh),
            (0, -1.0, hw * hh),
            (1, 1.0, hl * hh),
            (1, -1.0, hl * hh),
            (2, 1.0, hl * hw),
            (2, -1.0, hl * hw),
        ],
        TargetShape::LShell => vec![
            (0, facing[0].signum(), hw * hh),
            (1, facing[1].signum(), hl * hh),
        ],
    };
    let total: f64 = faces.iter().map(|f| f.2).sum();
    let mut pick = rng.random_range(0.0..total);
    let mut face = faces[faces.len() - 1];
    for f in &faces {
        if pick < f.2 {
            face = *f;
            break;
        }
        pick -= f.2;
    }
    let mut p = [0.0; 3];
    for (axis, h) in half.iter().enumerate() {
        let inner = h * (1.0 - SURFACE_INSET);
        p[axis] = if axis == face.0 {
            face.1 * inner
        } else {
            rng.random_range(-inner..=inner)
        };
    }
    Point3::from_array(p)
}

/// Generates one tracklet. Every kept target point lies inside the GT box
/// and no clutter point does.
pub fn generate_sequence(spec: &SceneSpec, scene_id: &str) -> Result<TrackSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [w, h, l] = spec.size;
    let half = [l / 2.0, w / 2.0, h / 2.0];
    let mut frames = Vec::with_capacity(spec.frames);
    for k in 0..spec.frames {
        let gt = spec.box_at(k)?;
        let pose = gt.pose();
        let facing = (-gt.center()).rotate_yaw(-gt.heading());
        let n = rng.random_range(spec.points[0]..=spec.points[1]);
        let mut points = Vec::with_capacity(n + spec.clutter);
        for _ in 0..n {
            let local = surface_point(&mut rng, spec.shape, half, [facing.x, facing.y]);
            let keep = spec.dropout == 0.0 || rng.random::<f64>() >= spec.dropout;
            if keep {
                points.push(pose.apply(local));
            }
        }
        let c = gt.center();
        let s = spec.clutter_spread;
        let mut placed = 0;
        let mut attempts = 0;
        while placed < spec.clutter && attempts < spec.clutter * 100 && s > 0.0 {
            attempts += 1;
            let p = Point3::new(
                c.x + rng.random_range(-s..=s),
                c.y + rng.random_range(-s..=s),
                c.z + rng.random_range(-h..=h),
            );
            if !box_contains(&gt, p) {
                points.push(p);
                placed += 1;
            }
        }
        frames.push(Frame {
            cloud: PointCloud::new(points),
            gt,
        });
    }
    TrackSequence::new(scene_id, frames)
}

// --- binary formats -------------------------------------------------------

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_cloud(cloud: &PointCloud, out: &mut Vec<u8>) {
    out.extend_from_slice(CLOUD_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    let width = cloud.features().map_or(0, |f| f.width());
    put_u32(out, width as u32);
    for (i, p) in cloud.points().iter().enumerate() {
        for v in p.to_array() {
            put_f64(out, v);
        }
        if let Some(f) = cloud.features() {
            for &v in f.row(i) {
                put_f64(out, v);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 8]) -> std::result::Result<(), String> {
        if self.take(8)? != magic {
            return Err("bad magic".into());
        }
        match self.take(1)?[0] {
            FORMAT_VERSION => Ok(()),
            v => Err(format!("unsupported version {v}")),
        }
    }

    fn cloud(&mut self) -> std::result::Result<PointCloud, String> {
        self.header(CLOUD_MAGIC)?;
        let n = self.u64()? as usize;
        let width = self.u32()? as usize;
        let row = (3 + width).checked_mul(8).ok_or("size overflow")?;
        if n.checked_mul(row).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(format!("truncated cloud of {n} points"));
        }
        let mut points = Vec::with_capacity(n);
        let mut feats = Vec::with_capacity(n * width);
        for _ in 0..n {
            points.push(Point3::new(self.f64()?, self.f64()?, self.f64()?));
            for _ in 0..width {
                feats.push(self.f64()?);
            }
        }
        if width == 0 {
            return Ok(PointCloud::new(points));
        }
        let f = FeatureMatrix::new(width, feats).map_err(|e| e.to_string())?;
        PointCloud::with_features(points, f).map_err(|e| e.to_string())
    }
}

pub fn decode_cloud(buf: &[u8]) -> std::result::Result<PointCloud, String> {
    let mut r = Reader { buf, pos: 0 };
    let c = r.cloud()?;
    if r.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - r.pos));
    }
    Ok(c)
}

pub fn encode_sequence(seq: &TrackSequence) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SEQ_MAGIC);
    out.push(FORMAT_VERSION);
    put_u32(&mut out, seq.len() as u32);
    put_u32(&mut out, seq.scene_id.len() as u32);
    out.extend_from_slice(seq.scene_id.as_bytes());
    for f in seq.frames() {
        for v in f.gt.to_array() {
            put_f64(&mut out, v);
        }
        encode_cloud(&f.cloud, &mut out);
    }
    out
}

pub fn decode_sequence(buf: &[u8]) -> std::result::Result<TrackSequence, String> {
    let mut r = Reader { buf, pos: 0 };
    r.header(SEQ_MAGIC)?;
    let n = r.u32()? as usize;
    let id_len = r.u32()? as usize;
    let scene_id = String::from_utf8(r.take(id_len)?.to_vec()).map_err(|e| e.to_string())?;
    let mut frames = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let mut b = [0.0; 7];
        for v in &mut b {
            *v = r.f64()?;
        }
        let gt = OrientedBox3::from_array(b).map_err(|e| e.to_string())?;
        frames.push(Frame { cloud: r.cloud()?, gt });
    }
    if r.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - r.pos));
    }
    TrackSequence::new(scene_id, frames).map_err(|e| e.to_string())
}

pub fn write_sequence(path: &Path, seq: &TrackSequence) -> Result<String> {
    let bytes = encode_sequence(seq);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn read_sequence(path: &Path) -> Result<TrackSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_sequence(&bytes).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

// --- corpora --------------------------------------------------------------

/// Per-frame on-target point ranges for each sparsity interval.
pub const KITTI_LIKE_RANGES: [[usize; 2]; 4] = [[5, 19], [20, 99], [100, 499], [500, 1000]];

/// Share of frames per sparsity interval in the KITTI car split.
pub const KITTI_CAR_FRACTIONS: [f64; 4] = [0.2610, 0.3169, 0.2495, 0.1725];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Sequences whose on-target point counts follow the KITTI car
    /// sparsity mix.
    KittiLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGroup {
    #[serde(default)]
    pub spec: SceneSpec,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub seed: u64,
    pub preset: Option<Preset>,
    /// Sequence count for presets.
    pub sequences: usize,
    /// Base scene for presets; point ranges and motion are overridden.
    pub base: SceneSpec,
    pub scenes: Vec<SceneGroup>,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 0,
            preset: None,
            sequences: 50,
            base: SceneSpec {
                frames: 20,
                ..SceneSpec::default()
            },
            scenes: Vec::new(),
        }
    }
}

/// Largest-remainder split of `n` items by `fractions`.
pub fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let total: f64 = fractions.iter().sum();
    let exact: Vec<f64> = fractions.iter().map(|f| f / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

impl CorpusSpec {
    /// Every scene to generate as `(scene_id, spec)`, in a fixed order.
    pub fn expand(&self) -> Result<Vec<(String, SceneSpec)>> {
        let mut out = Vec::new();
        if let Some(Preset::KittiLike) = self.preset {
            let counts = apportion(self.sequences, &KITTI_CAR_FRACTIONS);
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let mut i = 0;
            for (bucket, &count) in counts.iter().enumerate() {
                for _ in 0..count {
                    let spec = SceneSpec {
                        points: KITTI_LIKE_RANGES[bucket],
                        speed: rng.random_range(0.0..8.0),
                        turn_rate: rng.random_range(-0.3..0.3),
                        heading: rng.random_range(-PI..PI),
                        start: [rng.random_range(5.0..25.0), rng.random_range(-10.0..10.0), 0.0],
                        seed: derive_seed(self.seed, 0, i),
                        ..self.base.clone()
                    };
                    out.push((format!("kitti-like-{i:04}"), spec));
                    i += 1;
                }
            }
        }
        for (g, group) in self.scenes.iter().enumerate() {
            for i in 0..group.count {
                let spec = SceneSpec {
                    seed: derive_seed(self.seed ^ group.spec.seed, g as u64 + 1, i as u64),
                    ..group.spec.clone()
                };
                out.push((format!("scene-{g:02}-{i:04}"), spec));
            }
        }
        if out.is_empty() {
            return Err(Error::Config("corpus spec describes no scenes".into()));
        }
        for (_, s) in &out {
            s.validate()?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: String,
    /// Relative to the manifest's directory.
    pub path: String,
    pub seed: u64,
    pub spec_digest: String,
    pub sha256: String,
    pub frames: usize,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Generates and writes every scene under `dir`, then the manifest.
pub fn generate_corpus(spec: &CorpusSpec, dir: &Path) -> Result<Vec<ManifestEntry>> {
    let scenes = spec.expand()?;
    let seq_dir = dir.join("sequences");
    std::fs::create_dir_all(&seq_dir).map_err(|e| Error::io(&seq_dir, e))?;
    let entries = par::map_slice(&scenes, |(id, s)| -> Result<ManifestEntry> {
        let seq = generate_sequence(s, id)?;
        let rel = format!("sequences/{id}.seq");
        let sha256 = write_sequence(&dir.join(&rel), &seq)?;
        Ok(ManifestEntry {
            scene_id: id.clone(),
            path: rel,
            seed: s.seed,
            spec_digest: s.digest(),
            sha256,
            frames: seq.len(),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let path = dir.join(MANIFEST_FILE);
    let mut text = Vec::new();
    for e in &entries {
        serde_json::to_writer(&mut text, e).expect("entry serializes");
        text.push(b'\n');
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Loads every sequence of a corpus. `path` is the corpus directory or its
/// manifest file.
pub fn load_corpus(path: &Path) -> Result<Vec<TrackSequence>> {
    let manifest: PathBuf = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let root = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(&manifest)?
        .iter()
        .map(|e| read_sequence(&root.join(&e.path)))
        .collect()
}

/// Writes a human-readable summary of a corpus.
pub fn describe(out: &mut impl Write, entries: &[ManifestEntry]) -> std::io::Result<()> {
    let frames: usize = entries.iter().map(|e| e.frames).sum();
    writeln!(out, "{} sequences, {} frames", entries.len(), frames)
}
