//! Rigid frames and constant-curvature arc integration.
//!
//! A [`Frame`] stores its orientation as a rotation whose columns are the
//! cross-section axes `d1`, `d2` and the backbone tangent `t`, all in world
//! coordinates. Curvature vectors are expressed in the `(d1, d2)` plane.

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub origin: Point3<f64>,
    pub orientation: Rotation3<f64>,
}

impl Default for Frame {
    /// Sheath mouth at the world origin with the tangent along +x, `d1` along
    /// +y and `d2` along +z.
    fn default() -> Self {
        let m = Matrix3::from_columns(&[Vector3::y(), Vector3::z(), Vector3::x()]);
        Self {
            origin: Point3::origin(),
            orientation: Rotation3::from_matrix_unchecked(m),
        }
    }
}

impl Frame {
    pub fn new(origin: Point3<f64>, orientation: Rotation3<f64>) -> Self {
        Self { origin, orientation }
    }

    pub fn d1(&self) -> Vector3<f64> {
        self.orientation.matrix().column(0).into_owned()
    }

    pub fn d2(&self) -> Vector3<f64> {
        self.orientation.matrix().column(1).into_owned()
    }

    pub fn tangent(&self) -> Vector3<f64> {
        self.orientation.matrix().column(2).into_owned()
    }

    /// Largest deviation of `RᵀR` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.orientation.matrix();
        (m.transpose() * m - Matrix3::identity()).abs().max()
    }

    /// Frame reached after travelling `length` along a constant-curvature arc
    /// whose curvature vector `(κx, κy)` is expressed in this frame.
    pub fn advance(&self, curvature: Vector2<f64>, length: f64) -> Frame {
        let (offset, rotation) = arc_local(curvature, length);
        Frame {
            origin: self.origin + self.orientation * offset,
            orientation: self.orientation * rotation,
        }
    }

    /// Rotates the frame rigidly about the world axis through `pivot`.
    pub fn rotated_about(&self, pivot: &Point3<f64>, axis: &Unit<Vector3<f64>>, angle: f64) -> Frame {
        let rot = Rotation3::from_axis_angle(axis, angle);
        Frame {
            origin: pivot + rot * (self.origin - pivot),
            orientation: rot * self.orientation,
        }
    }
}

/// Displacement and rotation of an arc in the local frame of its start.
pub fn arc_local(curvature: Vector2<f64>, length: f64) -> (Vector3<f64>, Rotation3<f64>) {
    let kappa = curvature.norm();
    if kappa * length < 1e-12 {
        return (Vector3::new(0.0, 0.0, length), Rotation3::identity());
    }
    let u = curvature / kappa;
    let angle = kappa * length;
    let normal = Vector3::new(u.x, u.y, 0.0);
    let offset = normal * ((1.0 - angle.cos()) / kappa) + Vector3::z() * (angle.sin() / kappa);
    // bending axis t x n
    let axis = Unit::new_unchecked(Vector3::new(-u.y, u.x, 0.0));
    (offset, Rotation3::from_axis_angle(&axis, angle))
}

/// Euclidean distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Total length of a polyline.
pub fn polyline_length(points: &[Point3<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Resamples a polyline at uniform arc-length spacing (the last point is
/// always kept). Zero-length edges are skipped.
pub fn resample_polyline(points: &[Point3<f64>], step: f64) -> Vec<Point3<f64>> {
    let mut pts: Vec<Point3<f64>> = Vec::with_capacity(points.len());
    for p in points {
        if pts.last().is_none_or(|q| (p - q).norm() > 1e-12) {
            pts.push(*p);
        }
    }
    if pts.len() < 2 {
        return pts;
    }
    let total = polyline_length(&pts);
    let n = ((total / step).ceil() as usize).max(1);
    let h = total / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    out.push(pts[0]);
    let mut edge = 0;
    let mut edge_start = 0.0;
    for k in 1..n {
        let target = k as f64 * h;
        loop {
            let len = (pts[edge + 1] - pts[edge]).norm();
            if edge_start + len >= target || edge + 2 == pts.len() {
                let t = ((target - edge_start) / len).clamp(0.0, 1.0);
                out.push(pts[edge] + (pts[edge + 1] - pts[edge]) * t);
                break;
            }
            edge_start += len;
            edge += 1;
        }
    }
    out.push(*pts.last().unwrap());
    out
}
