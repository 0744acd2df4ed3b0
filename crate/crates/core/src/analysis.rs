//! Cross-section metrology of drilled trajectories.
//!
//! Segments are measured the way a sectioned block is measured: fit a plane
//! through the segment, fit a circle in that plane, and report radius, arc
//! length and drilled diameter. Repeated runs aggregate into a two-column
//! table (combined section, inner-only section).

use std::fmt;

use nalgebra::{DMatrix, Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{polyline_length, resample_polyline};
use crate::kinematics::Centerline;
use crate::phantom::VoxelPhantom;
use crate::sim::RunRecord;

/// Result of a circle fit in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleFit {
    /// `None` when the points are collinear (unbounded radius).
    pub center: Option<Point2<f64>>,
    pub radius: Option<f64>,
    pub rmse: f64,
}

impl CircleFit {
    pub fn is_unbounded(&self) -> bool {
        self.radius.is_none()
    }
}

/// Algebraic (Kåsa) fit followed by Gauss-Newton refinement of the geometric
/// residuals `|p - c| - r`.
pub fn fit_circle(points: &[Point2<f64>]) -> Result<CircleFit> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "circle fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(nalgebra::Vector2::zeros(), |a, p| a + p.coords) / n;
    let local: Vec<nalgebra::Vector2<f64>> = points.iter().map(|p| p.coords - mean).collect();
    let extent = local.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if extent == 0.0 {
        return Err(Error::InvalidArgument("circle fit points are coincident".into()));
    }

    // scatter matrix: a near-zero minor eigenvalue means the points are on a line
    let mut scatter = nalgebra::Matrix2::zeros();
    for v in &local {
        scatter += v * v.transpose();
    }
    let eig = scatter.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let unbounded = CircleFit {
        center: None,
        radius: None,
        rmse: (lo.max(0.0) / n).sqrt(),
    };
    if lo <= 1e-18 * hi.max(1e-300) || (lo / hi).sqrt() < 1e-9 {
        return Ok(unbounded);
    }

    // Kåsa: x² + y² = a x + b y + c
    let mut a = DMatrix::zeros(local.len(), 3);
    let mut rhs = nalgebra::DVector::zeros(local.len());
    for (i, v) in local.iter().enumerate() {
        a[(i, 0)] = v.x;
        a[(i, 1)] = v.y;
        a[(i, 2)] = 1.0;
        rhs[i] = v.norm_squared();
    }
    let sol = a
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::InvalidArgument(format!("circle fit failed: {e}")))?;
    let mut c = nalgebra::Vector2::new(0.5 * sol[0], 0.5 * sol[1]);
    let mut r = (sol[2] + c.norm_squared()).sqrt();
    if !r.is_finite() || r > 1e6 * extent {
        return Ok(unbounded);
    }

    for _ in 0..100 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for v in &local {
            let d = v - c;
            let dist = d.norm();
            if dist == 0.0 {
                continue;
            }
            let res = dist - r;
            let j = Vector3::new(-d.x / dist, -d.y / dist, -1.0);
            jtj += j * j.transpose();
            jtr += j * res;
        }
        let Some(delta) = jtj.lu().solve(&(-jtr)) else {
            break;
        };
        c += delta.xy();
        r += delta.z;
        if delta.norm() < 1e-13 * (1.0 + r) {
            break;
        }
    }
    if !r.is_finite() || r > 1e6 * extent {
        return Ok(unbounded);
    }
    let sse: f64 = local.iter().map(|v| ((v - c).norm() - r).powi(2)).sum();
    Ok(CircleFit {
        center: Some(Point2::from(c + mean)),
        radius: Some(r.abs()),
        rmse: (sse / n).sqrt(),
    })
}

/// Circle fitted in the least-squares plane of a 3D segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcFit {
    pub center: Option<Point3<f64>>,
    /// `None` for a straight (unbounded-radius) segment.
    pub radius: Option<f64>,
    /// Polyline length of the measured segment, mm.
    pub arc_length: f64,
    pub rmse: f64,
    /// Unit normal of the fitted plane, oriented with the direction of travel.
    pub normal: Vector3<f64>,
    /// Largest distance of a point from the fitted plane, mm.
    pub plane_deviation: f64,
}

/// Least-squares plane `(centroid, unit normal)`.
pub fn fit_plane(points: &[Point3<f64>]) -> Result<(Point3<f64>, Vector3<f64>)> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument("plane fit needs at least 3 points".into()));
    }
    let n = points.len() as f64;
    let centroid = Point3::from(points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n);
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let mut normal = eig.eigenvectors.column(k).into_owned().normalize();

    // orient with the turning direction of the traversal
    let (first, mid, last) = (points[0], points[points.len() / 2], points[points.len() - 1]);
    if (mid - first).cross(&(last - mid)).dot(&normal) < 0.0 {
        normal = -normal;
    }
    Ok((centroid, normal))
}

pub fn fit_arc(points: &[Point3<f64>]) -> Result<ArcFit> {
    let (centroid, normal) = fit_plane(points)?;
    let helper = if normal.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = normal.cross(&helper).normalize();
    let v = normal.cross(&u);
    let planar: Vec<Point2<f64>> = points
        .iter()
        .map(|p| {
            let d = p - centroid;
            Point2::new(d.dot(&u), d.dot(&v))
        })
        .collect();
    let plane_deviation = points
        .iter()
        .map(|p| (p - centroid).dot(&normal).abs())
        .fold(0.0, f64::max);
    let circle = fit_circle(&planar)?;
    Ok(ArcFit {
        center: circle.center.map(|c| centroid + u * c.x + v * c.y),
        radius: circle.radius,
        arc_length: polyline_length(points),
        rmse: circle.rmse,
        normal,
        plane_deviation,
    })
}

/// Angle between two planes given their normals, degrees in [0, 90].
pub fn plane_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let c = (a.dot(b) / (a.norm() * b.norm())).abs().min(1.0);
    c.acos().to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Resampling step of the input path, mm.
    pub step: f64,
    /// Moving-average window for the curvature estimate, samples.
    pub window: usize,
    /// Change of bend-plane orientation that starts a new section, degrees.
    pub angle_threshold_deg: f64,
    /// Sections shorter than this are treated as transitions, mm.
    pub min_section: f64,
    /// Curvature below this is treated as straight, 1/mm.
    pub min_curvature: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            step: 0.1,
            window: 5,
            angle_threshold_deg: 45.0,
            min_section: 3.0,
            min_curvature: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSegment {
    /// All resampled points of the segment, transition included.
    pub points: Vec<Point3<f64>>,
    pub arc_length: f64,
    /// Fit over the segment core (transition samples excluded).
    pub fit: ArcFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SCurveSplit {
    /// Arc length of the inflection from the start of the path, mm.
    pub split_s: f64,
    pub first: SplitSegment,
    pub second: SplitSegment,
    pub total_length: f64,
}

impl SCurveSplit {
    /// Angle between the fitted bend planes of the two segments, degrees.
    pub fn bend_plane_angle_deg(&self) -> f64 {
        plane_angle_deg(&self.first.fit.normal, &self.second.fit.normal)
    }
}

fn moving_average(v: &[Vector3<f64>], window: usize) -> Vec<Vector3<f64>> {
    let half = window / 2;
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(v.len());
            v[lo..hi].iter().sum::<Vector3<f64>>() / (hi - lo) as f64
        })
        .collect()
}

/// Splits an S-shaped path at its single inflection (a sign change of the
/// signed curvature for planar paths, a change of bend plane otherwise).
pub fn split_s_curve(centerline: &Centerline, opts: &SplitOptions) -> Result<SCurveSplit> {
    split_s_path(&centerline.points(), opts)
}

pub fn split_s_path(points: &[Point3<f64>], opts: &SplitOptions) -> Result<SCurveSplit> {
    let pts = resample_polyline(points, opts.step);
    let n = pts.len();
    if n < 2 * opts.window.max(3) + 3 {
        return Err(Error::Inflection { count: 0 });
    }
    let mut s = vec![0.0; n];
    for i in 1..n {
        s[i] = s[i - 1] + (pts[i] - pts[i - 1]).norm();
    }
    let tangents: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (pts[b] - pts[a]).normalize()
        })
        .collect();
    let curvature: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (tangents[b] - tangents[a]) / (s[b] - s[a])
        })
        .collect();
    let curvature = moving_average(&curvature, opts.window);
    let binormals: Vec<Option<Vector3<f64>>> = (0..n)
        .map(|i| {
            let b = tangents[i].cross(&curvature[i]);
            (b.norm() >= opts.min_curvature).then(|| b.normalize())
        })
        .collect();

    // runs of consistent bend-plane orientation
    let cos_threshold = opts.angle_threshold_deg.to_radians().cos();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut current: Option<(usize, usize, Vector3<f64>)> = None;
    for (i, b) in binormals.iter().enumerate() {
        match (b, current.as_mut()) {
            (Some(b), Some((_, end, reference))) if b.dot(reference) >= cos_threshold => *end = i,
            (Some(b), _) => {
                if let Some((start, end, _)) = current.take() {
                    runs.push((start, end));
                }
                current = Some((i, i, *b));
            }
            (None, _) => {
                if let Some((start, end, _)) = current.take() {
                    runs.push((start, end));
                }
            }
        }
    }
    if let Some((start, end, _)) = current {
        runs.push((start, end));
    }
    let sections: Vec<(usize, usize)> = runs
        .into_iter()
        .filter(|&(a, b)| s[b] - s[a] >= opts.min_section)
        .collect();
    if sections.len() != 2 {
        return Err(Error::Inflection {
            count: sections.len().saturating_sub(1),
        });
    }

    // cores exclude the smoothing footprint around the transition
    let margin = opts.window;
    let (a0, a1) = sections[0];
    let (b0, b1) = sections[1];
    let core_a = &pts[a0..=(a1.saturating_sub(margin)).max(a0 + 2)];
    let core_b = &pts[(b0 + margin).min(b1.saturating_sub(2))..=b1];
    let fit_a = fit_arc(core_a)?;
    let fit_b = fit_arc(core_b)?;

    // the split minimizes the distance to the two fitted circles over the transition window
    let lo = a1.saturating_sub(margin).max(1);
    let hi = (b0 + margin).min(n - 2);
    let dist_to = |fit: &ArcFit, p: &Point3<f64>| -> f64 {
        match (fit.center, fit.radius) {
            (Some(c), Some(r)) => {
                let d = p - c;
                let off_plane = d.dot(&fit.normal);
                let in_plane = (d - fit.normal * off_plane).norm();
                ((in_plane - r).powi(2) + off_plane.powi(2)).sqrt()
            }
            _ => 0.0,
        }
    };
    let mut best = (f64::INFINITY, lo);
    for k in lo..=hi {
        let cost: f64 = (lo..=hi)
            .map(|i| {
                let fit = if i <= k { &fit_a } else { &fit_b };
                dist_to(fit, &pts[i]).powi(2)
            })
            .sum();
        if cost < best.0 {
            best = (cost, k);
        }
    }
    let k = best.1;
    let total = s[n - 1];
    let first_pts = pts[..=k].to_vec();
    let second_pts = pts[k..].to_vec();
    Ok(SCurveSplit {
        split_s: s[k],
        first: SplitSegment {
            arc_length: s[k],
            points: first_pts,
            fit: fit_a,
        },
        second: SplitSegment {
            arc_length: total - s[k],
            points: second_pts,
            fit: fit_b,
        },
        total_length: total,
    })
}

/// Mean ± sample standard deviation (n − 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn from_values(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n })
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.n > 1 {
            write!(f, "{:.1} ± {:.1}", self.mean, self.std)
        } else {
            write!(f, "{:.1}", self.mean)
        }
    }
}

/// `|measured − ideal| / ideal × 100`.
pub fn percent_error(measured: f64, ideal: f64) -> f64 {
    (measured - ideal).abs() / ideal * 100.0
}

/// Commanded values a run is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealParameters {
    /// Combined (outer + inner) section arc length, mm.
    pub outer_arc: f64,
    /// Inner-only section arc length, mm.
    pub inner_arc: f64,
    #[serde(default)]
    pub combined_radius: Option<f64>,
    #[serde(default)]
    pub inner_radius: Option<f64>,
}

impl Default for IdealParameters {
    fn default() -> Self {
        Self {
            outer_arc: crate::sim::S2_OUTER_ARC,
            inner_arc: crate::sim::S2_INNER_ARC,
            combined_radius: None,
            inner_radius: Some(50.0),
        }
    }
}

/// Measurements of one drilled S-shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeasurement {
    pub scenario: String,
    pub outer_arc: f64,
    pub inner_arc: f64,
    pub combined_radius: Option<f64>,
    pub inner_radius: Option<f64>,
    pub bend_plane_angle_deg: f64,
    pub combined_diameter: Option<f64>,
    pub inner_diameter: Option<f64>,
    pub insertion_time: Option<f64>,
}

fn mean_diameter(phantom: &VoxelPhantom, points: &[Point3<f64>], margin: f64) -> Option<f64> {
    let line = Centerline::from_points(points);
    let total = line.arc_length();
    if total <= 2.0 * margin {
        return None;
    }
    let ds: Vec<f64> = [0.25, 0.5, 0.75]
        .iter()
        .filter_map(|f| {
            let target = margin + f * (total - 2.0 * margin);
            let i = line
                .samples
                .partition_point(|x| x.s < target)
                .min(line.samples.len() - 1);
            let sample = &line.samples[i];
            phantom.tunnel_diameter(&sample.point, &sample.tangent).ok()
        })
        .collect();
    (!ds.is_empty()).then(|| ds.iter().sum::<f64>() / ds.len() as f64)
}

/// Splits the run's tip locus and measures both sections; drilled diameters
/// are taken from the phantom when given.
pub fn measure_run(record: &RunRecord, phantom: Option<&VoxelPhantom>, opts: &SplitOptions) -> Result<RunMeasurement> {
    measure_path(
        &record.scenario,
        &record.tip_locus,
        phantom,
        record.insertion_time,
        opts,
    )
}

/// As [`measure_run`], from a bare tip path.
pub fn measure_path(
    scenario: &str,
    tip_path: &[Point3<f64>],
    phantom: Option<&VoxelPhantom>,
    insertion_time: Option<f64>,
    opts: &SplitOptions,
) -> Result<RunMeasurement> {
    let split = split_s_path(tip_path, opts)?;
    let margin = 5.0;
    Ok(RunMeasurement {
        scenario: scenario.to_string(),
        outer_arc: split.first.arc_length,
        inner_arc: split.second.arc_length,
        combined_radius: split.first.fit.radius,
        inner_radius: split.second.fit.radius,
        bend_plane_angle_deg: split.bend_plane_angle_deg(),
        combined_diameter: phantom.and_then(|p| mean_diameter(p, &split.first.points, margin)),
        inner_diameter: phantom.and_then(|p| mean_diameter(p, &split.second.points, margin)),
        insertion_time,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnReport {
    pub ideal_insertion_length: f64,
    pub measured_insertion_length: Stat,
    pub insertion_length_error_pct: f64,
    pub ideal_radius: Option<f64>,
    pub measured_radius: Option<Stat>,
    pub radius_error_pct: Option<f64>,
    pub drilled_diameter: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub runs_used: usize,
    /// Notes on runs that could not be measured.
    pub excluded: Vec<String>,
    pub inner_outer: ColumnReport,
    pub inner: ColumnReport,
    pub bend_plane_angle_deg: Stat,
    pub insertion_time: Option<Stat>,
    pub measurements: Vec<RunMeasurement>,
}

/// One run plus the phantom it drilled, if kept.
#[derive(Debug, Clone, Copy)]
pub struct RunInput<'a> {
    pub record: &'a RunRecord,
    pub phantom: Option<&'a VoxelPhantom>,
}

fn column(
    ideal_len: f64,
    ideal_radius: Option<f64>,
    lengths: &[f64],
    radii: &[f64],
    diameters: &[f64],
) -> ColumnReport {
    let measured_insertion_length = Stat::from_values(lengths).expect("at least one run");
    let measured_radius = Stat::from_values(radii);
    ColumnReport {
        ideal_insertion_length: ideal_len,
        insertion_length_error_pct: percent_error(measured_insertion_length.mean, ideal_len),
        ideal_radius,
        radius_error_pct: match (measured_radius, ideal_radius) {
            (Some(m), Some(i)) => Some(percent_error(m.mean, i)),
            _ => None,
        },
        measured_radius,
        measured_insertion_length,
        drilled_diameter: Stat::from_values(diameters),
    }
}

/// Aggregates repeated runs into the two-column table. Runs that cannot be
/// split are excluded with a note; at least one must succeed.
pub fn metrics_report(runs: &[RunInput<'_>], ideal: &IdealParameters, opts: &SplitOptions) -> Result<MetricsReport> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("metrics_report needs at least one run".into()));
    }
    let mut measurements = Vec::new();
    let mut excluded = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        match measure_run(run.record, run.phantom, opts) {
            Ok(m) => measurements.push(m),
            Err(e) => excluded.push(format!("run {i} ({}): {e}", run.record.scenario)),
        }
    }
    report_from_measurements(measurements, excluded, ideal)
}

pub fn report_from_measurements(
    measurements: Vec<RunMeasurement>,
    excluded: Vec<String>,
    ideal: &IdealParameters,
) -> Result<MetricsReport> {
    if measurements.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no measurable runs: {}",
            excluded.join("; ")
        )));
    }
    let collect =
        |f: &dyn Fn(&RunMeasurement) -> Option<f64>| -> Vec<f64> { measurements.iter().filter_map(f).collect() };
    let inner_outer = column(
        ideal.outer_arc,
        ideal.combined_radius,
        &collect(&|m| Some(m.outer_arc)),
        &collect(&|m| m.combined_radius),
        &collect(&|m| m.combined_diameter),
    );
    let inner = column(
        ideal.inner_arc,
        ideal.inner_radius,
        &collect(&|m| Some(m.inner_arc)),
        &collect(&|m| m.inner_radius),
        &collect(&|m| m.inner_diameter),
    );
    Ok(MetricsReport {
        runs_used: measurements.len(),
        excluded,
        inner_outer,
        inner,
        bend_plane_angle_deg: Stat::from_values(&collect(&|m| Some(m.bend_plane_angle_deg))).unwrap(),
        insertion_time: Stat::from_values(&collect(&|m| m.insertion_time)),
        measurements,
    })
}

impl MetricsReport {
    /// Aligned plain-text table with one row per measured quantity.
    pub fn to_table(&self) -> String {
        fn opt<T: fmt::Display>(v: Option<T>) -> String {
            v.map_or_else(|| "N/A".to_string(), |v| v.to_string())
        }
        let pct = |v: f64| format!("{v:.1}%");
        let mm = |v: f64| format!("{v:.1}");
        let (a, b) = (&self.inner_outer, &self.inner);
        let rows: Vec<(&str, String, String)> = vec![
            (
                "Ideal Insertion Length",
                mm(a.ideal_insertion_length),
                mm(b.ideal_insertion_length),
            ),
            (
                "Measured Insertion Length",
                a.measured_insertion_length.to_string(),
                b.measured_insertion_length.to_string(),
            ),
            (
                "Insertion Length Error",
                pct(a.insertion_length_error_pct),
                pct(b.insertion_length_error_pct),
            ),
            (
                "Ideal Radius of Curvature",
                opt(a.ideal_radius.map(mm)),
                opt(b.ideal_radius.map(mm)),
            ),
            (
                "Measured Radius of Curvature",
                opt(a.measured_radius),
                opt(b.measured_radius),
            ),
            (
                "Radius of Curvature Error",
                opt(a.radius_error_pct.map(pct)),
                opt(b.radius_error_pct.map(pct)),
            ),
            ("Drilled Diameter", opt(a.drilled_diameter), opt(b.drilled_diameter)),
        ];
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(4);
        let w1 = rows
            .iter()
            .map(|r| r.1.chars().count())
            .max()
            .unwrap_or(0)
            .max("Inner+Outer (mm)".len());
        let w2 = rows
            .iter()
            .map(|r| r.2.chars().count())
            .max()
            .unwrap_or(0)
            .max("Inner (mm)".len());
        let mut out = format!("{:<w0$}  {:>w1$}  {:>w2$}\n", "Tube", "Inner+Outer (mm)", "Inner (mm)");
        out.push_str(&format!("{}\n", "-".repeat(w0 + w1 + w2 + 4)));
        for (label, x, y) in rows {
            let px = w1 + x.len() - x.chars().count();
            let py = w2 + y.len() - y.chars().count();
            out.push_str(&format!("{label:<w0$}  {x:>px$}  {y:>py$}\n"));
        }
        out
    }
}

/// Effective outer/inner stiffness ratio ρ that makes opposed, equally
/// pre-curved tubes bend at `observed_combined_radius`:
/// `R_obs = R_pre (ρ + 1) / (ρ − 1)`.
pub fn calibrate_stiffness_ratio(observed_combined_radius: f64, precurvature_radius: f64) -> Result<f64> {
    if !(precurvature_radius > 0.0) {
        return Err(Error::Calibration("pre-curvature radius must be positive".into()));
    }
    if !(observed_combined_radius > precurvature_radius) {
        return Err(Error::Calibration(format!(
            "observed radius {observed_combined_radius} mm must exceed the pre-curvature radius {precurvature_radius} mm for opposed tubes"
        )));
    }
    let r = precurvature_radius / observed_combined_radius;
    Ok((1.0 + r) / (1.0 - r))
}

/// Extra cutting radius implied by a measured diameter.
pub fn calibrate_runout(observed_diameter: f64, bit_diameter: f64) -> Result<f64> {
    if observed_diameter < bit_diameter {
        return Err(Error::Calibration(format!(
            "observed diameter {observed_diameter} mm is below the bit diameter {bit_diameter} mm (negative runout)"
        )));
    }
    Ok(0.5 * (observed_diameter - bit_diameter))
}

/// Circle fitted to the measured axis of a carved tunnel.
pub fn measure_tunnel_arc(
    phantom: &VoxelPhantom,
    guide: &[Point3<f64>],
    spacing: f64,
    end_margin: f64,
) -> Result<ArcFit> {
    fit_arc(&phantom.tunnel_centerline(guide, spacing, end_margin)?)
}
