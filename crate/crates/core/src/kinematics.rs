//! Torsionally rigid, stiffness-blended piecewise-constant-curvature model.
//!
//! Inside the sheath the bundle is straight. Beyond the sheath mouth the
//! backbone is split wherever the set of exposed tubes (or the curved/straight
//! state of a tube) changes; each piece is a circular arc whose curvature is the
//! bending-stiffness weighted vector sum of the rotated pre-curvatures of the
//! tubes present there.

use std::io::Write;

use nalgebra::{Matrix3x4, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Frame;
use crate::model::{Dof, JointState, RobotConfig};

/// Default centerline sampling step, mm.
pub const DEFAULT_SAMPLE_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tube {
    Outer,
    Inner,
}

/// One tube's contribution to a blended curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureComponent {
    pub bending_stiffness: f64,
    /// 1/mm
    pub precurvature: f64,
    /// deg
    pub roll: f64,
}

impl CurvatureComponent {
    pub fn new(bending_stiffness: f64, precurvature: f64, roll: f64) -> Self {
        Self {
            bending_stiffness,
            precurvature,
            roll,
        }
    }
}

/// Stiffness-weighted vector average of rotated pre-curvatures, 1/mm.
pub fn blend_curvature(components: &[CurvatureComponent]) -> Result<Vector2<f64>> {
    if components.is_empty() {
        return Err(Error::InvalidArgument(
            "blend_curvature needs at least one component".into(),
        ));
    }
    let mut sum = Vector2::zeros();
    let mut total = 0.0;
    for c in components {
        if !(c.bending_stiffness > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bending stiffness must be positive, got {}",
                c.bending_stiffness
            )));
        }
        let (s, co) = c.roll.to_radians().sin_cos();
        sum += Vector2::new(co, s) * (c.bending_stiffness * c.precurvature);
        total += c.bending_stiffness;
    }
    Ok(sum / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// mm
    pub length: f64,
    /// (κx, κy) in the cross-section frame at the segment start, 1/mm.
    pub curvature: Vector2<f64>,
    pub members: Vec<Tube>,
}

impl Segment {
    pub fn curvature_magnitude(&self) -> f64 {
        self.curvature.norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStack {
    pub base: Frame,
    pub segments: Vec<Segment>,
}

impl SegmentStack {
    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    /// Frames at every segment boundary, starting with the base.
    pub fn frames(&self) -> Vec<Frame> {
        let mut frames = Vec::with_capacity(self.segments.len() + 1);
        let mut f = self.base;
        frames.push(f);
        for seg in &self.segments {
            f = f.advance(seg.curvature, seg.length);
            frames.push(f);
        }
        frames
    }

    pub fn tip(&self) -> Frame {
        self.segments
            .iter()
            .fold(self.base, |f, seg| f.advance(seg.curvature, seg.length))
    }
}

/// Splits the exposed backbone into constant-curvature segments.
pub fn decompose_segments(config: &RobotConfig, joints: &JointState) -> Result<SegmentStack> {
    let outer_len = joints.outer_translation;
    let inner_len = joints.inner_translation;
    if !(outer_len >= 0.0 && inner_len >= 0.0) {
        return Err(Error::Contract(format!(
            "translations must be non-negative (outer {outer_len}, inner {inner_len})"
        )));
    }
    if inner_len < outer_len - 1e-9 {
        return Err(Error::Contract(format!(
            "inner tip behind outer tip (inner {inner_len} mm < outer {outer_len} mm)"
        )));
    }
    let outer_len = outer_len.min(inner_len);
    let (ei_outer, ei_inner) = config.bending_stiffnesses();

    // Position along the exposed backbone where each tube's curved section starts.
    let outer_curve_start = outer_len - config.outer_tube.curved_length();
    let inner_curve_start = inner_len - config.inner_tube.curved_length();

    let mut cuts = vec![0.0, outer_len, inner_len, outer_curve_start, inner_curve_start];
    cuts.retain(|&c| c >= 0.0 && c <= inner_len);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut segments: Vec<Segment> = Vec::new();
    for w in cuts.windows(2) {
        let length = w[1] - w[0];
        if length <= 1e-12 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let mut members = Vec::with_capacity(2);
        let mut components = Vec::with_capacity(2);
        if mid < outer_len {
            members.push(Tube::Outer);
            let k = if mid >= outer_curve_start {
                config.outer_tube.curvature()
            } else {
                0.0
            };
            components.push(CurvatureComponent::new(ei_outer, k, joints.outer_roll));
        }
        members.push(Tube::Inner);
        let k = if mid >= inner_curve_start {
            config.inner_tube.curvature()
        } else {
            0.0
        };
        components.push(CurvatureComponent::new(ei_inner, k, joints.inner_roll));
        let curvature = blend_curvature(&components)?;

        // adjacent pieces with identical members and curvature form one arc
        if let Some(last) = segments.last_mut() {
            if last.members == members && (last.curvature - curvature).norm() < 1e-15 {
                last.length += length;
                continue;
            }
        }
        segments.push(Segment {
            length,
            curvature,
            members,
        });
    }
    Ok(SegmentStack {
        base: config.sheath.pose,
        segments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterlineSample {
    pub s: f64,
    pub point: Point3<f64>,
    pub tangent: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Centerline {
    pub samples: Vec<CenterlineSample>,
    pub sample_step: f64,
}

impl Centerline {
    pub fn points(&self) -> Vec<Point3<f64>> {
        self.samples.iter().map(|s| s.point).collect()
    }

    /// Analytic arc length (the `s` of the last sample).
    pub fn arc_length(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.s)
    }

    pub fn polyline_length(&self) -> f64 {
        crate::geometry::polyline_length(&self.points())
    }

    /// Builds a centerline from raw points, with arc length and
    /// finite-difference tangents.
    pub fn from_points(points: &[Point3<f64>]) -> Self {
        let mut samples = Vec::with_capacity(points.len());
        let mut s = 0.0;
        let mut step: f64 = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                let d = (p - points[i - 1]).norm();
                s += d;
                step = step.max(d);
            }
            let prev = points[i.saturating_sub(1)];
            let next = points[(i + 1).min(points.len() - 1)];
            let t = next - prev;
            let tangent = if t.norm() > 0.0 {
                t.normalize()
            } else {
                Vector3::zeros()
            };
            samples.push(CenterlineSample { s, point: *p, tangent });
        }
        Self {
            samples,
            sample_step: step,
        }
    }

    /// Writes `s_mm,x_mm,y_mm,z_mm,tx,ty,tz` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s_mm", "x_mm", "y_mm", "z_mm", "tx", "ty", "tz"])?;
        for s in &self.samples {
            w.serialize((
                s.s,
                s.point.x,
                s.point.y,
                s.point.z,
                s.tangent.x,
                s.tangent.y,
                s.tangent.z,
            ))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut samples = Vec::new();
        let mut step: f64 = 0.0;
        for row in r.deserialize() {
            let (s, x, y, z, tx, ty, tz): (f64, f64, f64, f64, f64, f64, f64) = row?;
            if let Some(prev) = samples.last() {
                let prev: &CenterlineSample = prev;
                step = step.max(s - prev.s);
            }
            samples.push(CenterlineSample {
                s,
                point: Point3::new(x, y, z),
                tangent: Vector3::new(tx, ty, tz),
            });
        }
        Ok(Self {
            samples,
            sample_step: step,
        })
    }
}

/// Samples the backbone from the sheath mouth to the tip.
pub fn forward_kinematics(config: &RobotConfig, joints: &JointState, sample_step: f64) -> Result<(Centerline, Frame)> {
    if !(sample_step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sample_step must be positive, got {sample_step}"
        )));
    }
    let stack = decompose_segments(config, joints)?;
    let mut frame = stack.base;
    let mut s0 = 0.0;
    let mut samples = vec![CenterlineSample {
        s: 0.0,
        point: frame.origin,
        tangent: frame.tangent(),
    }];
    for seg in &stack.segments {
        let n = (seg.length / sample_step).ceil().max(1.0) as usize;
        let h = seg.length / n as f64;
        for k in 1..=n {
            let f = frame.advance(seg.curvature, h * k as f64);
            samples.push(CenterlineSample {
                s: s0 + h * k as f64,
                point: f.origin,
                tangent: f.tangent(),
            });
        }
        frame = frame.advance(seg.curvature, seg.length);
        s0 += seg.length;
    }
    Ok((Centerline { samples, sample_step }, frame))
}

/// Tip frame only, without sampling the backbone.
pub fn tip_frame(config: &RobotConfig, joints: &JointState) -> Result<Frame> {
    Ok(decompose_segments(config, joints)?.tip())
}

pub fn tip_position(config: &RobotConfig, joints: &JointState) -> Result<Point3<f64>> {
    Ok(tip_frame(config, joints)?.origin)
}

/// Finite-difference step sizes: `[mm, mm, deg, deg]` in [`Dof`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianSteps(pub [f64; 4]);

impl Default for JacobianSteps {
    fn default() -> Self {
        Self([1e-3, 1e-3, 1e-2, 1e-2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    /// Columns in [`Dof`] order; mm/mm and mm/deg.
    pub matrix: Matrix3x4<f64>,
    /// Set for columns computed with a one-sided difference.
    pub one_sided: [bool; 4],
    /// Set for columns where neither direction is admissible; those columns are zero.
    pub blocked: [bool; 4],
}

impl Jacobian {
    pub fn column(&self, dof: Dof) -> Vector3<f64> {
        self.matrix.column(dof.index()).into_owned()
    }
}

fn admissible(config: &RobotConfig, j: &JointState) -> bool {
    config.joint_limits.contains(j) && j.inner_translation >= j.outer_translation
}

/// Central-difference tip Jacobian; falls back to a one-sided difference at
/// a joint limit or where the inner tip would fall behind the outer tip.
pub fn numeric_jacobian(config: &RobotConfig, joints: &JointState, h: JacobianSteps) -> Result<Jacobian> {
    let mut matrix = Matrix3x4::zeros();
    let mut one_sided = [false; 4];
    let mut blocked = [false; 4];
    let base = tip_position(config, joints)?;
    for dof in Dof::ALL {
        let step = h.0[dof.index()];
        if !(step > 0.0) {
            return Err(Error::InvalidArgument(format!("step for {dof} must be positive")));
        }
        let v = joints.get(dof);
        let plus = joints.with(dof, v + step);
        let minus = joints.with(dof, v - step);
        let col = match (admissible(config, &plus), admissible(config, &minus)) {
            (true, true) => (tip_position(config, &plus)? - tip_position(config, &minus)?) / (2.0 * step),
            (true, false) => {
                one_sided[dof.index()] = true;
                (tip_position(config, &plus)? - base) / step
            }
            (false, true) => {
                one_sided[dof.index()] = true;
                (base - tip_position(config, &minus)?) / step
            }
            (false, false) => {
                blocked[dof.index()] = true;
                Vector3::zeros()
            }
        };
        matrix.set_column(dof.index(), &col);
    }
    Ok(Jacobian {
        matrix,
        one_sided,
        blocked,
    })
}
