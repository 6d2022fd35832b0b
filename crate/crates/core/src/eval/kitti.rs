//! KITTI tracking labels to per-object tracklets.
//!
//! Each label row is
//! `frame track_id type truncated occluded alpha x1 y1 x2 y2 h w l x y z ry [score]`
//! with the location at the box bottom center in the rectified camera frame
//! (x right, y down, z forward). Rows with track id `-1` (DontCare) are
//! skipped.
//!
//! Without calibration the camera frame maps to the z-up frame by the fixed
//! axis swap
//!
//! ```text
//! [X]   [ 0  0  1] [x]
//! [Y] = [-1  0  0] [y]
//! [Z]   [ 0 -1  0] [z]
//! ```
//!
//! applied to the volumetric center `(x, y - h/2, z)`, which gives
//! `Z = -y + h/2` and heading `-ry - pi/2`. With a calibration file the
//! inverse of `R_rect * Tr_velo_cam` is used instead, so boxes land in the
//! LiDAR frame of the velodyne scans.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, BoxSize, OrientedBox3, Point3, PointCloud};
use crate::sequence::{Frame, TrackSequence};

/// One parsed label row. `raw` keeps the source text so tracklets can be
/// written back unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiRow {
    pub frame: u32,
    pub track_id: i64,
    pub kind: String,
    /// `[h, w, l]` in meters.
    pub dims: [f64; 3],
    /// Bottom center in the camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub raw: String,
}

impl KittiRow {
    pub fn parse(line: &str, line_no: usize) -> Result<KittiRow> {
        let bad = |message: String| Error::Parse { line: line_no, message };
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 17 && tok.len() != 18 {
            return Err(bad(format!("expected 17 or 18 fields, found {}", tok.len())));
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = tok[i]
                .parse()
                .map_err(|_| bad(format!("field {} is not a number: {:?}", i + 1, tok[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("field {} is not finite", i + 1)))
            }
        };
        let frame = tok[0]
            .parse()
            .map_err(|_| bad(format!("bad frame index {:?}", tok[0])))?;
        let track_id = tok[1]
            .parse()
            .map_err(|_| bad(format!("bad track id {:?}", tok[1])))?;
        for i in 3..tok.len() {
            num(i)?;
        }
        Ok(KittiRow {
            frame,
            track_id,
            kind: tok[2].to_string(),
            dims: [num(10)?, num(11)?, num(12)?],
            location: [num(13)?, num(14)?, num(15)?],
            rotation_y: num(16)?,
            raw: line.trim_end().to_string(),
        })
    }

    pub fn is_dont_care(&self) -> bool {
        self.track_id < 0 || self.kind == "DontCare"
    }
}

/// Camera to z-up mapping `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraToLidar {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for CameraToLidar {
    fn default() -> Self {
        CameraToLidar {
            rotation: [[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]],
            translation: [0.0; 3],
        }
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

fn mat_inv(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 1, 2, 2), -c(1, 0, 2, 2), c(1, 0, 2, 1)],
        [-c(0, 1, 2, 2), c(0, 0, 2, 2), -c(0, 0, 2, 1)],
        [c(0, 1, 1, 2), -c(0, 0, 1, 2), c(0, 0, 1, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    if det.abs() < 1e-12 {
        return None;
    }
    // Inverse is the transposed cofactor matrix over the determinant.
    Some([0, 1, 2].map(|r| [0, 1, 2].map(|c| cof[c][r] / det)))
}

impl CameraToLidar {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = mat_vec(&self.rotation, p);
        [0, 1, 2].map(|i| r[i] + self.translation[i])
    }

    /// Reads `R_rect`/`R0_rect` and `Tr_velo_cam`/`Tr_velo_to_cam` from a
    /// KITTI calibration file and inverts the LiDAR to camera chain.
    pub fn from_calib(text: &str) -> Result<CameraToLidar> {
        let mut entries: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut tok = line.split_whitespace();
            let Some(key) = tok.next() else { continue };
            let vals: std::result::Result<Vec<f64>, _> = tok.map(str::parse).collect();
            let vals = vals.map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("non-numeric calibration entry {key}"),
            })?;
            entries.insert(key.trim_end_matches(':').to_string(), vals);
        }
        let find = |names: &[&str], n: usize| -> Result<Vec<f64>> {
            names
                .iter()
                .find_map(|k| entries.get(*k))
                .filter(|v| v.len() == n)
                .cloned()
                .ok_or_else(|| Error::Config(format!("calibration lacks {} with {n} values", names[0])))
        };
        let r = find(&["R_rect", "R0_rect"], 9)?;
        let t = find(&["Tr_velo_cam", "Tr_velo_to_cam"], 12)?;
        let r0 = [0, 1, 2].map(|i| [r[3 * i], r[3 * i + 1], r[3 * i + 2]]);
        let tr_r = [0, 1, 2].map(|i| [t[4 * i], t[4 * i + 1], t[4 * i + 2]]);
        let tr_t = [t[3], t[7], t[11]];
        // rect = r0 (tr_r v + tr_t)  =>  v = (r0 tr_r)^-1 rect - tr_r^-1 tr_t
        let fwd = mat_mul(&r0, &tr_r);
        let inv = mat_inv(&fwd).ok_or_else(|| Error::Config("singular calibration".into()))?;
        let tr_inv = mat_inv(&tr_r).ok_or_else(|| Error::Config("singular Tr_velo_cam".into()))?;
        let back = mat_vec(&tr_inv, tr_t);
        Ok(CameraToLidar {
            rotation: inv,
            translation: back.map(|v| -v),
        })
    }

    /// Converts a camera-frame label to a z-up box.
    pub fn convert(&self, row: &KittiRow) -> Result<OrientedBox3> {
        let [h, w, l] = row.dims;
        let [x, y, z] = row.location;
        let c = self.apply([x, y - h / 2.0, z]);
        // The box length axis in camera coordinates.
        let ry = row.rotation_y;
        let d = mat_vec(&self.rotation, [ry.cos(), 0.0, -ry.sin()]);
        let heading = normalize_angle(d[1].atan2(d[0]));
        OrientedBox3::new(Point3::from_array(c), BoxSize::new(w, h, l), heading)
    }
}

/// Heading of the default axis swap, `-ry - pi/2`, for reference in tests
/// and reports.
pub fn default_heading(rotation_y: f64) -> f64 {
    normalize_angle(-rotation_y - FRAC_PI_2)
}

/// The labelled path of one object through a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub scene: String,
    pub track_id: i64,
    pub kind: String,
    pub frames: Vec<u32>,
    pub boxes: Vec<OrientedBox3>,
    pub rows: Vec<KittiRow>,
}

impl Tracklet {
    pub fn id(&self) -> String {
        format!("{}_{}", self.scene, self.track_id)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// The source rows, one per line.
    pub fn to_label_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&r.raw);
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConvertOptions {
    /// Keep only these object types, e.g. `["Car"]`. Empty keeps all.
    pub kinds: Vec<String>,
    pub calib: Option<CameraToLidar>,
}

/// Groups the rows of one scene's label file by track id. Tracklets are
/// ordered by id, frames ascending as in the file.
pub fn convert_kitti_labels(scene: &str, text: &str, opts: &ConvertOptions) -> Result<Vec<Tracklet>> {
    let calib = opts.calib.unwrap_or_default();
    let mut by_id: BTreeMap<i64, Tracklet> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = KittiRow::parse(line, i + 1)?;
        if row.is_dont_care() || (!opts.kinds.is_empty() && !opts.kinds.contains(&row.kind)) {
            continue;
        }
        let bbox = calib.convert(&row).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let t = by_id.entry(row.track_id).or_insert_with(|| Tracklet {
            scene: scene.to_string(),
            track_id: row.track_id,
            kind: row.kind.clone(),
            frames: Vec::new(),
            boxes: Vec::new(),
            rows: Vec::new(),
        });
        if let Some(&last) = t.frames.last() {
            if row.frame <= last {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!(
                        "track {} goes from frame {last} to frame {}",
                        row.track_id, row.frame
                    ),
                });
            }
        }
        t.frames.push(row.frame);
        t.boxes.push(bbox);
        t.rows.push(row);
    }
    Ok(by_id.into_values().collect())
}

/// Label files in `dir` (or its `label_02` subdirectory), sorted by name.
pub fn label_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let sub = dir.join("label_02");
    let dir = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let mut out = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let p = entry.map_err(|e| Error::io(&dir, e))?.path();
        if p.extension().is_some_and(|x| x == "txt") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Converts every label file of a directory. Parse errors carry the file.
pub fn convert_dir(dir: &Path, opts: &ConvertOptions) -> Result<Vec<Tracklet>> {
    let mut all = Vec::new();
    for path in label_files(dir)? {
        let scene = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let t = convert_kitti_labels(&scene, &text, opts).map_err(|e| match e {
            Error::Parse { line, message } => Error::Format {
                path: path.clone(),
                message: format!("line {line}: {message}"),
            },
            other => other,
        })?;
        all.extend(t);
    }
    Ok(all)
}

/// Reads a velodyne scan: little-endian f32 quadruples `x y z reflectance`.
pub fn read_velodyne(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("{} bytes is not a whole number of points", bytes.len()),
        });
    }
    let f = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
    let pts = bytes
        .chunks_exact(16)
        .map(|c| Point3::new(f(&c[0..4]), f(&c[4..8]), f(&c[8..12])))
        .collect();
    Ok(PointCloud::new(pts))
}

/// Pairs a tracklet with its scans, `velodyne_dir/{frame:06}.bin`.
pub fn load_tracklet(t: &Tracklet, velodyne_dir: &Path) -> Result<TrackSequence> {
    let mut frames = Vec::with_capacity(t.len());
    for (f, b) in t.frames.iter().zip(&t.boxes) {
        let cloud = read_velodyne(&velodyne_dir.join(format!("{f:06}.bin")))?;
        frames.push(Frame { cloud, gt: *b });
    }
    TrackSequence::new(t.id(), frames)
}

/// Loads a KITTI tracking directory laid out as `label_02/{scene}.txt`,
/// `velodyne/{scene}/{frame:06}.bin` and, when present,
/// `calib/{scene}.txt`. Tracklets shorter than two frames are dropped.
pub fn load_kitti_tracking(root: &Path, kinds: &[String]) -> Result<Vec<TrackSequence>> {
    let mut out = Vec::new();
    for path in label_files(root)? {
        let scene = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let calib_path = root.join("calib").join(format!("{scene}.txt"));
        let calib = if calib_path.is_file() {
            let text = fs::read_to_string(&calib_path).map_err(|e| Error::io(&calib_path, e))?;
            Some(CameraToLidar::from_calib(&text)?)
        } else {
            None
        };
        let opts = ConvertOptions {
            kinds: kinds.to_vec(),
            calib,
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let scans = root.join("velodyne").join(&scene);
        for t in convert_kitti_labels(&scene, &text, &opts)? {
            if t.len() >= 2 {
                out.push(load_tracklet(&t, &scans)?);
            }
        }
    }
    Ok(out)
}
