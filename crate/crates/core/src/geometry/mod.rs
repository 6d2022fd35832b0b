//! Points, oriented boxes and yaw-only rigid transforms.
//!
//! The vertical axis is `z`. Headings are yaw angles about `+z`, measured
//! counter-clockwise from `+x`, and are kept in `(-pi, pi]`. A box's length
//! runs along its local `x` axis, its width along local `y` and its height
//! along `z`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(self, o: Point3) -> f64 {
        (self - o).norm()
    }

    pub fn distance_squared(self, o: Point3) -> f64 {
        (self - o).norm_squared()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotation about `+z` by `yaw` radians.
    pub fn rotate_yaw(self, yaw: f64) -> Point3 {
        let (s, c) = yaw.sin_cos();
        Point3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// Maps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Row-major per-point feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    width: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("feature width must be at least 1".into()));
        }
        if data.len() % width != 0 {
            return Err(Error::shape(
                "FeatureMatrix::new",
                format!("{} values do not split into rows of {width}", data.len()),
            ));
        }
        Ok(FeatureMatrix { width, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// An ordered point set with optional per-point feature rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
    features: Option<FeatureMatrix>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud {
            points,
            features: None,
        }
    }

    pub fn with_features(points: Vec<Point3>, features: FeatureMatrix) -> Result<Self> {
        if features.rows() != points.len() {
            return Err(Error::shape(
                "PointCloud::with_features",
                format!("{} feature rows for {} points", features.rows(), points.len()),
            ));
        }
        Ok(PointCloud {
            points,
            features: Some(features),
        })
    }

    pub fn empty() -> Self {
        PointCloud::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn features(&self) -> Option<&FeatureMatrix> {
        self.features.as_ref()
    }

    /// Points at `indices`, in that order, with their feature rows.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let features = self.features.as_ref().map(|f| {
            let mut data = Vec::with_capacity(indices.len() * f.width);
            for &i in indices {
                data.extend_from_slice(f.row(i));
            }
            FeatureMatrix {
                width: f.width,
                data,
            }
        });
        PointCloud { points, features }
    }

    /// Applies `f` to every point, keeping features.
    pub fn map_points(&self, f: impl Fn(Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| f(p)).collect(),
            features: self.features.clone(),
        }
    }

    /// Concatenates clouds. Features survive only if every input carries
    /// rows of the same width.
    pub fn concat(clouds: &[&PointCloud]) -> PointCloud {
        let points: Vec<Point3> = clouds.iter().flat_map(|c| c.points.iter().copied()).collect();
        let width = clouds.first().and_then(|c| c.features.as_ref().map(|f| f.width));
        let features = width.and_then(|w| {
            let mut data = Vec::new();
            for c in clouds {
                match &c.features {
                    Some(f) if f.width == w => data.extend_from_slice(&f.data),
                    _ => return None,
                }
            }
            Some(FeatureMatrix { width: w, data })
        });
        PointCloud { points, features }
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self
            .points
            .iter()
            .fold(Point3::ORIGIN, |acc, &p| acc + p);
        Some(sum * (1.0 / self.points.len() as f64))
    }
}

/// Box extents in meters: width (local y), height (z), length (local x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSize {
    pub w: f64,
    pub h: f64,
    pub l: f64,
}

impl BoxSize {
    pub const fn new(w: f64, h: f64, l: f64) -> Self {
        BoxSize { w, h, l }
    }

    pub fn volume(&self) -> f64 {
        self.w * self.h * self.l
    }
}

/// A 3D box with yaw heading. Construct through [`OrientedBox3::new`], which
/// validates extents and normalizes the heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct OrientedBox3 {
    center: Point3,
    size: BoxSize,
    heading: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    center: Point3,
    size: BoxSize,
    heading: f64,
}

impl TryFrom<RawBox> for OrientedBox3 {
    type Error = Error;
    fn try_from(r: RawBox) -> Result<Self> {
        OrientedBox3::new(r.center, r.size, r.heading)
    }
}

impl From<OrientedBox3> for RawBox {
    fn from(b: OrientedBox3) -> Self {
        RawBox {
            center: b.center,
            size: b.size,
            heading: b.heading,
        }
    }
}

impl OrientedBox3 {
    pub fn new(center: Point3, size: BoxSize, heading: f64) -> Result<Self> {
        let extents_ok = [size.w, size.h, size.l]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !extents_ok {
            return Err(Error::Config(format!(
                "box extents must be positive and finite, got {size:?}"
            )));
        }
        if !center.is_finite() || !heading.is_finite() {
            return Err(Error::NonFinite {
                locus: "OrientedBox3::new".into(),
            });
        }
        Ok(OrientedBox3 {
            center,
            size,
            heading: normalize_angle(heading),
        })
    }

    /// `[x, y, z, w, h, l, heading]`.
    pub fn from_array(v: [f64; 7]) -> Result<Self> {
        OrientedBox3::new(
            Point3::new(v[0], v[1], v[2]),
            BoxSize::new(v[3], v[4], v[5]),
            v[6],
        )
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.size.w,
            self.size.h,
            self.size.l,
            self.heading,
        ]
    }

    pub fn center(&self) -> Point3 {
        self.center
    }

    pub fn size(&self) -> BoxSize {
        self.size
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn volume(&self) -> f64 {
        self.size.volume()
    }

    pub fn with_center(&self, center: Point3) -> Result<Self> {
        OrientedBox3::new(center, self.size, self.heading)
    }

    pub fn with_size(&self, size: BoxSize) -> Result<Self> {
        OrientedBox3::new(self.center, size, self.heading)
    }

    /// The box grown by `margin` on each side along each local axis
    /// (`x` = length, `y` = width, `z` = height).
    pub fn enlarged(&self, margin: [f64; 3]) -> Result<Self> {
        let s = self.size;
        self.with_size(BoxSize::new(
            s.w + 2.0 * margin[1],
            s.h + 2.0 * margin[2],
            s.l + 2.0 * margin[0],
        ))
    }

    /// Pose of the box: maps box-local coordinates to world coordinates.
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::new(self.center, self.heading)
    }

    /// Ground-plane corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.heading.sin_cos();
        let hl = self.size.l / 2.0;
        let hw = self.size.w / 2.0;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, ly]| {
            [
                self.center.x + c * lx - s * ly,
                self.center.y + s * lx + c * ly,
            ]
        })
    }

    /// Vertical extent `(bottom, top)`.
    pub fn z_range(&self) -> (f64, f64) {
        let hh = self.size.h / 2.0;
        (self.center.z - hh, self.center.z + hh)
    }

    /// Applies a rigid transform to the whole box.
    pub fn transformed(&self, t: &RigidTransform) -> Result<Self> {
        OrientedBox3::new(t.apply(self.center), self.size, self.heading + t.yaw)
    }
}

/// Rotation about `+z` followed by a translation: `p -> R(yaw) p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub translation: Point3,
    pub yaw: f64,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        translation: Point3::ORIGIN,
        yaw: 0.0,
    };

    pub const fn new(translation: Point3, yaw: f64) -> Self {
        RigidTransform { translation, yaw }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        p.rotate_yaw(self.yaw) + self.translation
    }

    pub fn inverse(&self) -> RigidTransform {
        RigidTransform {
            translation: (-self.translation).rotate_yaw(-self.yaw),
            yaw: -self.yaw,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            translation: self.apply(other.translation),
            yaw: self.yaw + other.yaw,
        }
    }
}

/// Boundary-inclusive point-in-box test.
pub fn box_contains(b: &OrientedBox3, p: Point3) -> bool {
    let local = (p - b.center).rotate_yaw(-b.heading);
    local.x.abs() <= b.size.l / 2.0
        && local.y.abs() <= b.size.w / 2.0
        && local.z.abs() <= b.size.h / 2.0
}

/// Indices of the points inside `b`, ascending.
pub fn points_in_box(cloud: &PointCloud, b: &OrientedBox3) -> Vec<usize> {
    cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(_, &p)| box_contains(b, p))
        .map(|(i, _)| i)
        .collect()
}

/// The points of `cloud` inside `b`, order preserved.
pub fn crop_to_box(cloud: &PointCloud, b: &OrientedBox3) -> PointCloud {
    cloud.select(&points_in_box(cloud, b))
}

/// Expresses `cloud` in the frame where `b` sits at the origin with zero
/// heading: `p -> R(-heading) (p - center)`.
pub fn to_canonical_frame(cloud: &PointCloud, b: &OrientedBox3) -> PointCloud {
    cloud.map_points(|p| (p - b.center).rotate_yaw(-b.heading))
}

/// Inverse of [`to_canonical_frame`].
pub fn from_canonical_frame(cloud: &PointCloud, b: &OrientedBox3) -> PointCloud {
    let pose = b.pose();
    cloud.map_points(|p| pose.apply(p))
}

mod iou;
pub use iou::{bev_intersection_area, iou_3d, iou_bev};
