//! Voxel bone phantom: swept-sphere carving, cross-section metrology and
//! orthographic projections.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::point_segment_distance;

pub const DEFAULT_VOXEL_SIZE: f64 = 0.2;
pub const DEFAULT_VOXEL_BUDGET: u64 = 200_000_000;
pub const MATERIAL_PCF5: &str = "PCF5";

/// Half-width of the square raster used for cross-section measurements, mm.
pub const SECTION_HALF_WIDTH: f64 = 12.0;

/// Occupancy grid, one bit per voxel (1 = material). Voxel `(i, j, k)` has
/// its center at `origin + (i + ½, j + ½, k + ½) · voxel_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelPhantom {
    dims: [usize; 3],
    voxel_size: f64,
    origin: Point3<f64>,
    material: String,
    bits: Vec<u64>,
    occupied: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Axis> {
        match s {
            "x" | "X" => Some(Axis::X),
            "y" | "Y" => Some(Axis::Y),
            "z" | "Z" => Some(Axis::Z),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    /// Image axes `(u, v)` seen when looking along this axis.
    fn image_axes(self) -> (usize, usize) {
        match self {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }
}

/// 8-bit grayscale image, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Binary PGM (P5, maxval 255).
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.data)?;
        Ok(())
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_pgm(f)
    }

    /// Box-filtered downsample by an integer factor.
    pub fn downsample(&self, factor: usize) -> GrayImage {
        let factor = factor.max(1);
        let width = self.width.div_ceil(factor);
        let height = self.height.div_ceil(factor);
        let mut data = Vec::with_capacity(width * height);
        for by in 0..height {
            for bx in 0..width {
                let (mut sum, mut n) = (0u32, 0u32);
                for y in by * factor..((by + 1) * factor).min(self.height) {
                    for x in bx * factor..((bx + 1) * factor).min(self.width) {
                        sum += self.get(x, y) as u32;
                        n += 1;
                    }
                }
                data.push(((sum + n / 2) / n) as u8);
            }
        }
        GrayImage { width, height, data }
    }
}

/// Metadata written next to a raw bitset snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: [f64; 3],
    pub material: String,
    /// Always `"x-fastest, lsb-first"`.
    pub bit_order: String,
    pub occupied: usize,
}

const BIT_ORDER: &str = "x-fastest, lsb-first";

/// Builds a fully occupied phantom of `size` mm with its minimum corner at
/// `origin`, using the default voxel budget.
pub fn create_phantom(size: Vector3<f64>, voxel_size: f64, origin: Point3<f64>) -> Result<VoxelPhantom> {
    VoxelPhantom::with_budget(size, voxel_size, origin, DEFAULT_VOXEL_BUDGET)
}

impl VoxelPhantom {
    pub fn with_budget(size: Vector3<f64>, voxel_size: f64, origin: Point3<f64>, budget: u64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "voxel_size must be positive, got {voxel_size}"
            )));
        }
        if !size.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "phantom size must be positive, got {size:?}"
            )));
        }
        // guard against 100/0.2 = 500.00000000000006
        let dim = |s: f64| ((s / voxel_size) - 1e-9).ceil().max(1.0) as usize;
        let dims = [dim(size.x), dim(size.y), dim(size.z)];
        let requested = dims.iter().map(|&d| d as u128).product::<u128>();
        if requested > budget as u128 {
            return Err(Error::VoxelBudget { requested, budget });
        }
        let n = requested as usize;
        let mut bits = vec![u64::MAX; n.div_ceil(64)];
        if !n.is_multiple_of(64) {
            *bits.last_mut().unwrap() = (1u64 << (n % 64)) - 1;
        }
        Ok(Self {
            dims,
            voxel_size,
            origin,
            material: MATERIAL_PCF5.to_string(),
            bits,
            occupied: n,
        })
    }

    /// Block of `size` whose entry face (x = 0 side) is centred on `entry`.
    pub fn block_at_entry(size: Vector3<f64>, voxel_size: f64, entry: Point3<f64>) -> Result<Self> {
        create_phantom(size, voxel_size, entry - Vector3::new(0.0, 0.5 * size.y, 0.5 * size.z))
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn origin(&self) -> Point3<f64> {
        self.origin
    }

    pub fn material(&self) -> &str {
        &self.material
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied
    }

    pub fn carved_count(&self) -> usize {
        self.len() - self.occupied
    }

    /// Volume of removed material, mm³.
    pub fn carved_volume(&self) -> f64 {
        self.carved_count() as f64 * self.voxel_size.powi(3)
    }

    fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn is_occupied(&self, i: usize, j: usize, k: usize) -> bool {
        let n = self.linear(i, j, k);
        self.bits[n / 64] >> (n % 64) & 1 == 1
    }

    fn clear(&mut self, n: usize) -> bool {
        let mask = 1u64 << (n % 64);
        let word = &mut self.bits[n / 64];
        if *word & mask != 0 {
            *word &= !mask;
            self.occupied -= 1;
            true
        } else {
            false
        }
    }

    /// Clears every voxel; used for an air-only phantom.
    pub fn clear_all(&mut self) {
        self.bits.iter_mut().for_each(|w| *w = 0);
        self.occupied = 0;
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.origin + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.voxel_size
    }

    /// Voxel containing `p`, if inside the grid.
    pub fn voxel_of(&self, p: &Point3<f64>) -> Option<[usize; 3]> {
        let rel = (p - self.origin) / self.voxel_size;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = rel[a].floor();
            if !(f >= 0.0 && (f as usize) < self.dims[a]) {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }

    /// Material test at a world point; outside the grid is not material.
    pub fn is_material_at(&self, p: &Point3<f64>) -> bool {
        self.voxel_of(p).is_some_and(|[i, j, k]| self.is_occupied(i, j, k))
    }

    /// Index range of voxels whose centers may lie in `[lo, hi]` along `axis`.
    fn index_range(&self, axis: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let o = self.origin[axis];
        let a = ((lo - o) / self.voxel_size - 0.5).ceil().max(0.0);
        let b = ((hi - o) / self.voxel_size - 0.5).floor();
        if b < 0.0 || a > b || a >= self.dims[axis] as f64 {
            return None;
        }
        Some((a as usize, (b as usize).min(self.dims[axis] - 1)))
    }

    /// Clears every voxel whose center lies within `radius` of segment `[a, b]`.
    fn carve_capsule(&mut self, a: &Point3<f64>, b: &Point3<f64>, radius: f64) -> usize {
        let lo = a.inf(b);
        let hi = a.sup(b);
        let (Some((i0, i1)), Some((j0, j1)), Some((k0, k1))) = (
            self.index_range(0, lo.x - radius, hi.x + radius),
            self.index_range(1, lo.y - radius, hi.y + radius),
            self.index_range(2, lo.z - radius, hi.z + radius),
        ) else {
            return 0;
        };
        let mut cleared = 0;
        for k in k0..=k1 {
            for j in j0..=j1 {
                let row = self.linear(0, j, k);
                for i in i0..=i1 {
                    let n = row + i;
                    if self.bits[n / 64] >> (n % 64) & 1 == 0 {
                        continue;
                    }
                    if point_segment_distance(&self.voxel_center(i, j, k), a, b) <= radius && self.clear(n) {
                        cleared += 1;
                    }
                }
            }
        }
        cleared
    }

    /// Clears every voxel whose center lies within `cut_radius` of the
    /// polyline; returns the number of newly cleared voxels.
    pub fn carve_swept_sphere(&mut self, path: &[Point3<f64>], cut_radius: f64) -> Result<usize> {
        if !(cut_radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cut_radius must be positive, got {cut_radius}"
            )));
        }
        match path {
            [] => Err(Error::InvalidArgument("carve path is empty".into())),
            [p] => Ok(self.carve_capsule(p, p, cut_radius)),
            _ => Ok(path
                .windows(2)
                .map(|w| self.carve_capsule(&w[0], &w[1], cut_radius))
                .sum()),
        }
    }

    /// Rasterizes the plane through `point` with normal `normal` and returns
    /// the empty region connected to the empty pixel nearest `point`.
    pub fn cross_section(&self, point: &Point3<f64>, normal: &Vector3<f64>) -> Result<CrossSection> {
        let n = normal
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("plane normal must be non-zero".into()))?;
        let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = n.cross(&helper).normalize();
        let v = n.cross(&u);
        let px = self.voxel_size;
        let half = (SECTION_HALF_WIDTH / px).round() as i64;
        let side = (2 * half + 1) as usize;

        let mut empty = vec![false; side * side];
        for (r, row) in empty.chunks_mut(side).enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                let p = point + u * ((c as i64 - half) as f64 * px) + v * ((r as i64 - half) as f64 * px);
                // out-of-grid pixels count as boundary
                *cell = self.voxel_of(&p).is_some_and(|[i, j, k]| !self.is_occupied(i, j, k));
            }
        }

        let seed = (0..side * side).filter(|&idx| empty[idx]).min_by_key(|&idx| {
            let (r, c) = ((idx / side) as i64 - half, (idx % side) as i64 - half);
            (r * r + c * c, idx)
        });
        let Some(seed) = seed else {
            return Err(Error::NoTunnel);
        };

        let mut in_component = vec![false; side * side];
        let mut queue = VecDeque::from([seed]);
        in_component[seed] = true;
        let mut pixels = Vec::new();
        while let Some(idx) = queue.pop_front() {
            let (r, c) = ((idx / side) as i64, (idx % side) as i64);
            pixels.push((c - half, r - half));
            for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= side as i64 || nc >= side as i64 {
                    continue;
                }
                let nidx = nr as usize * side + nc as usize;
                if empty[nidx] && !in_component[nidx] {
                    in_component[nidx] = true;
                    queue.push_back(nidx);
                }
            }
        }

        // non-component 4-neighbours, including positions just outside the raster
        let mut boundary = Vec::new();
        let inside = |c: i64, r: i64| c.abs() <= half && r.abs() <= half;
        let mut seen = std::collections::HashSet::new();
        for &(c, r) in &pixels {
            for (dc, dr) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nc, nr) = (c + dc, r + dr);
                let member = inside(nc, nr) && in_component[((nr + half) as usize) * side + (nc + half) as usize];
                if !member && seen.insert((nc, nr)) {
                    boundary.push((nc, nr));
                }
            }
        }
        boundary.sort_unstable();

        Ok(CrossSection {
            origin: *point,
            u,
            v,
            pixel: px,
            pixels,
            boundary,
        })
    }

    /// Diameter of the largest circle inscribed in the empty region of the
    /// cross-section, mm.
    pub fn tunnel_diameter(&self, plane_point: &Point3<f64>, plane_normal: &Vector3<f64>) -> Result<f64> {
        Ok(self.cross_section(plane_point, plane_normal)?.inscribed_diameter())
    }

    /// Measured tunnel axis: centroids of the empty cross-sections taken
    /// perpendicular to `guide` every `spacing` mm. Sections closer than
    /// `end_margin` to either end of the guide are skipped.
    pub fn tunnel_centerline(&self, guide: &[Point3<f64>], spacing: f64, end_margin: f64) -> Result<Vec<Point3<f64>>> {
        if guide.len() < 2 {
            return Err(Error::InvalidArgument("guide needs at least two points".into()));
        }
        let pts = crate::geometry::resample_polyline(guide, spacing);
        let total = crate::geometry::polyline_length(&pts);
        let mut out = Vec::new();
        let mut s = 0.0;
        for i in 0..pts.len() {
            if i > 0 {
                s += (pts[i] - pts[i - 1]).norm();
            }
            if s < end_margin || s > total - end_margin {
                continue;
            }
            let prev = pts[i.saturating_sub(1)];
            let next = pts[(i + 1).min(pts.len() - 1)];
            let section = self.cross_section(&pts[i], &(next - prev))?;
            out.push(section.centroid());
        }
        Ok(out)
    }

    /// Orthographic material sum along `axis`, mapped so that a full column
    /// is 0 and an empty column is 255.
    pub fn project(&self, axis: Axis) -> GrayImage {
        let (ua, va) = axis.image_axes();
        let a = axis.index();
        let (width, height, depth) = (self.dims[ua], self.dims[va], self.dims[a]);
        let mut counts = vec![0u32; width * height];
        let mut idx = [0usize; 3];
        for k in 0..self.dims[2] {
            idx[2] = k;
            for j in 0..self.dims[1] {
                idx[1] = j;
                for i in 0..self.dims[0] {
                    idx[0] = i;
                    if self.is_occupied(i, j, k) {
                        let row = height - 1 - idx[va];
                        counts[row * width + idx[ua]] += 1;
                    }
                }
            }
        }
        let data = counts
            .into_iter()
            .map(|c| (255.0 * (1.0 - c as f64 / depth as f64)).round() as u8)
            .collect();
        GrayImage { width, height, data }
    }

    pub fn snapshot_header(&self) -> SnapshotHeader {
        SnapshotHeader {
            dims: self.dims,
            voxel_size: self.voxel_size,
            origin: [self.origin.x, self.origin.y, self.origin.z],
            material: self.material.clone(),
            bit_order: BIT_ORDER.into(),
            occupied: self.occupied,
        }
    }

    /// Raw bitset, voxel `i + nx (j + ny k)` at byte `n / 8`, bit `n % 8`.
    pub fn write_bits<W: Write>(&self, mut out: W) -> Result<()> {
        let nbytes = self.len().div_ceil(8);
        let mut bytes = Vec::with_capacity(nbytes);
        for w in &self.bits {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        bytes.truncate(nbytes);
        out.write_all(&bytes)?;
        Ok(())
    }

    /// Writes `<stem>.bits` and `<stem>.json`.
    pub fn save_snapshot(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        self.write_bits(std::io::BufWriter::new(std::fs::File::create(
            stem.with_extension("bits"),
        )?))?;
        std::fs::write(
            stem.with_extension("json"),
            serde_json::to_string_pretty(&self.snapshot_header())?,
        )?;
        Ok(())
    }

    pub fn from_snapshot<R: Read>(header: &SnapshotHeader, mut bits: R) -> Result<Self> {
        if header.bit_order != BIT_ORDER {
            return Err(Error::InvalidArgument(format!(
                "unsupported bit order '{}'",
                header.bit_order
            )));
        }
        let n: usize = header.dims.iter().product();
        let mut bytes = Vec::new();
        bits.read_to_end(&mut bytes)?;
        if bytes.len() != n.div_ceil(8) {
            return Err(Error::InvalidArgument(format!(
                "snapshot holds {} bytes, expected {}",
                bytes.len(),
                n.div_ceil(8)
            )));
        }
        bytes.resize(n.div_ceil(64) * 8, 0);
        let words: Vec<u64> = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let occupied = words.iter().map(|w| w.count_ones() as usize).sum();
        let [ox, oy, oz] = header.origin;
        Ok(Self {
            dims: header.dims,
            voxel_size: header.voxel_size,
            origin: Point3::new(ox, oy, oz),
            material: header.material.clone(),
            bits: words,
            occupied,
        })
    }

    pub fn load_snapshot(stem: impl AsRef<Path>) -> Result<Self> {
        let stem = stem.as_ref();
        let header: SnapshotHeader = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        let f = std::io::BufReader::new(std::fs::File::open(stem.with_extension("bits"))?);
        Self::from_snapshot(&header, f)
    }
}

/// Empty region of a planar raster through the phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    origin: Point3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    pixel: f64,
    /// (column, row) offsets of the empty component.
    pixels: Vec<(i64, i64)>,
    boundary: Vec<(i64, i64)>,
}

impl CrossSection {
    pub fn area(&self) -> f64 {
        self.pixels.len() as f64 * self.pixel * self.pixel
    }

    pub fn centroid(&self) -> Point3<f64> {
        let n = self.pixels.len() as f64;
        let (sc, sr) = self
            .pixels
            .iter()
            .fold((0.0, 0.0), |(a, b), &(c, r)| (a + c as f64, b + r as f64));
        self.origin + self.u * (sc / n * self.pixel) + self.v * (sr / n * self.pixel)
    }

    /// Largest inscribed circle of the component: the largest clearance
    /// from a point of the component to the nearest non-component pixel
    /// center, with the best pixel center refined to a tenth of a pixel.
    pub fn inscribed_diameter(&self) -> f64 {
        let edges: Vec<(f64, f64)> = self.boundary.iter().map(|&(c, r)| (c as f64, r as f64)).collect();
        if edges.is_empty() {
            return 0.0;
        }
        let clearance = |x: f64, y: f64| {
            edges
                .iter()
                .map(|&(ex, ey)| (ex - x).powi(2) + (ey - y).powi(2))
                .fold(f64::INFINITY, f64::min)
        };
        let (mut cx, mut cy, mut best) = (0.0, 0.0, -1.0);
        for &(c, r) in &self.pixels {
            let d = clearance(c as f64, r as f64);
            if d > best {
                (cx, cy, best) = (c as f64, r as f64, d);
            }
        }
        for i in -10..=10 {
            for j in -10..=10 {
                best = best.max(clearance(cx + 0.1 * i as f64, cy + 0.1 * j as f64));
            }
        }
        2.0 * best.sqrt() * self.pixel
    }
}
