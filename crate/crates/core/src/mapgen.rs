//! 2.5D map construction: surface sampling of semantic triangle meshes,
//! heading-aligned region cropping and coordinate normalization.
//!
//! Mesh text format, one triangle per line (whitespace separated, `#` starts
//! a comment):
//!
//! ```text
//! cat v1x v1y v1z v2x v2y v2z v3x v3y v3z
//! ```
//!
//! Point-cloud binary format (little-endian): magic `P25D`, version `u16`,
//! count `u64`, then per point `3 x f32` position followed by a `u8` category.

use rand::Rng;
use rayon::prelude::*;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{invalid, Error, Result};
use crate::rng::{seeded, sub_seed};

pub const NUM_CATEGORIES: usize = 24;

/// Category 5 is coastline; the synthetic city never emits it.
pub const COASTLINE: Category = Category::const_new(5);

/// Default sampling density in points per square meter.
pub const DEFAULT_DENSITY: f64 = 0.1;

/// Default crop side in meters.
pub const DEFAULT_CROP_SIDE: f64 = 152.0;

const CLOUD_MAGIC: &[u8; 4] = b"P25D";
const CLOUD_VERSION: u16 = 1;

/// Semantic map class id in `[0, 23]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Category(u8);

impl Category {
    pub fn new(id: u32) -> Result<Self> {
        if (id as usize) < NUM_CATEGORIES {
            Ok(Category(id as u8))
        } else {
            Err(Error::CategoryOutOfRange(id))
        }
    }

    /// Compile-time constructor; panics when `id` is out of range.
    pub const fn const_new(id: u8) -> Self {
        assert!((id as usize) < NUM_CATEGORIES);
        Category(id)
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }
}

/// Coordinate frame of a [`SemanticPointCloud`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// World meters.
    World,
    /// Meters relative to a crop center, heading aligned.
    Crop,
    /// Crop frame divided by the half extent; coordinates in `[-1, 1]`.
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPointCloud {
    pub positions: Vec<[f64; 3]>,
    pub categories: Vec<Category>,
    pub frame: Frame,
}

impl SemanticPointCloud {
    pub fn new(positions: Vec<[f64; 3]>, categories: Vec<Category>, frame: Frame) -> Result<Self> {
        if positions.len() != categories.len() {
            return Err(Error::DimensionMismatch {
                context: "point cloud categories",
                expected: positions.len(),
                actual: categories.len(),
            });
        }
        Ok(Self {
            positions,
            categories,
            frame,
        })
    }

    pub fn empty(frame: Frame) -> Self {
        Self {
            positions: Vec::new(),
            categories: Vec::new(),
            frame,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Subset in the order given by `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            categories: indices.iter().map(|&i| self.categories[i]).collect(),
            frame: self.frame,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triangle {
    pub vertices: [[f64; 3]; 3],
    pub category: Category,
}

impl Triangle {
    pub fn new(v1: [f64; 3], v2: [f64; 3], v3: [f64; 3], category: Category) -> Result<Self> {
        if [v1, v2, v3].iter().flatten().any(|c| !c.is_finite()) {
            return Err(invalid("triangle vertices must be finite"));
        }
        Ok(Self {
            vertices: [v1, v2, v3],
            category,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemanticMesh {
    pub triangles: Vec<Triangle>,
}

impl SemanticMesh {
    pub fn total_area(&self) -> f64 {
        self.triangles.iter().map(triangle_area).sum()
    }
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Half the norm of `(v1 - v3) x (v2 - v3)`.
pub fn triangle_area(t: &Triangle) -> f64 {
    let [v1, v2, v3] = t.vertices;
    let c = cross(sub3(v1, v3), sub3(v2, v3));
    0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

/// Number of points to draw on a surface of `area` at `density`, rounded
/// stochastically so that the expectation is exactly `density * area`.
pub fn sample_count<R: Rng + ?Sized>(area: f64, density: f64, rng: &mut R) -> usize {
    let expected = (density * area).max(0.0);
    let whole = expected.floor();
    let frac = expected - whole;
    let u: f64 = rng.random();
    whole as usize + usize::from(u < frac)
}

/// Barycentric surface sample for uniform variates `r1, r2` in `[0, 1]`.
pub fn sample_triangle(t: &Triangle, r1: f64, r2: f64) -> [f64; 3] {
    let s = r1.sqrt();
    let (a, b, c) = (1.0 - s, s * (1.0 - r2), s * r2);
    let [v1, v2, v3] = t.vertices;
    [
        a * v1[0] + b * v2[0] + c * v3[0],
        a * v1[1] + b * v2[1] + c * v3[1],
        a * v1[2] + b * v2[2] + c * v3[2],
    ]
}

/// Samples every triangle at `density` points/m². Triangle `i` draws from a
/// generator seeded with `sub_seed(seed, i)`, so the result does not depend
/// on how the work is split across threads.
pub fn sample_mesh(mesh: &SemanticMesh, density: f64, seed: u64) -> Result<SemanticPointCloud> {
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if !(density >= 0.0 && density.is_finite()) {
        return Err(invalid(format!("density must be finite and >= 0, got {density}")));
    }
    let per_triangle: Vec<Vec<[f64; 3]>> = mesh
        .triangles
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = seeded(sub_seed(seed, i as u64));
            let n = sample_count(triangle_area(t), density, &mut rng);
            (0..n)
                .map(|_| {
                    let r1: f64 = rng.random();
                    let r2: f64 = rng.random();
                    sample_triangle(t, r1, r2)
                })
                .collect()
        })
        .collect();

    let total = per_triangle.iter().map(Vec::len).sum();
    let mut positions = Vec::with_capacity(total);
    let mut categories = Vec::with_capacity(total);
    for (t, pts) in mesh.triangles.iter().zip(per_triangle) {
        categories.extend(std::iter::repeat_n(t.category, pts.len()));
        positions.extend(pts);
    }
    Ok(SemanticPointCloud {
        positions,
        categories,
        frame: Frame::World,
    })
}

/// Square crop window centered on a location, aligned with its heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSpec {
    pub center: [f64; 2],
    pub heading: f64,
    pub side: f64,
}

impl CropSpec {
    pub fn new(center: [f64; 2], heading: f64, side: f64) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(invalid(format!("crop side must be > 0, got {side}")));
        }
        Ok(Self {
            center,
            heading,
            side,
        })
    }

    pub fn at(center: [f64; 2], heading: f64) -> Self {
        Self {
            center,
            heading,
            side: DEFAULT_CROP_SIDE,
        }
    }

    pub fn half_extent(&self) -> f64 {
        self.side / 2.0
    }
}

/// Rotates horizontal coordinates by `-heading` about the crop center and
/// keeps the points inside the square. Heights are unchanged.
pub fn crop_region(cloud: &SemanticPointCloud, spec: &CropSpec) -> Result<SemanticPointCloud> {
    if cloud.frame != Frame::World {
        return Err(invalid("crop_region expects a world-frame cloud"));
    }
    if !(spec.side > 0.0) {
        return Err(invalid("crop side must be > 0"));
    }
    let (s, c) = spec.heading.sin_cos();
    let half = spec.half_extent();
    let mut out = SemanticPointCloud::empty(Frame::Crop);
    for (p, &cat) in cloud.positions.iter().zip(&cloud.categories) {
        let dx = p[0] - spec.center[0];
        let dy = p[1] - spec.center[1];
        let x = c * dx + s * dy;
        let y = -s * dx + c * dy;
        if x.abs() <= half && y.abs() <= half {
            out.positions.push([x, y, p[2]]);
            out.categories.push(cat);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub cloud: SemanticPointCloud,
    /// Points that had at least one coordinate clamped to `[-1, 1]`.
    pub clamped: usize,
}

/// Divides all three axes by `half_extent` and clamps to `[-1, 1]`.
pub fn normalize_cloud(cloud: &SemanticPointCloud, half_extent: f64) -> Result<Normalized> {
    if cloud.frame != Frame::Crop {
        return Err(invalid("normalize_cloud expects a crop-frame cloud"));
    }
    if !(half_extent > 0.0 && half_extent.is_finite()) {
        return Err(invalid(format!("half extent must be > 0, got {half_extent}")));
    }
    let mut clamped = 0;
    let positions = cloud
        .positions
        .iter()
        .map(|p| {
            let mut q = [0.0; 3];
            let mut hit = false;
            for (qi, pi) in q.iter_mut().zip(p) {
                let v = pi / half_extent;
                hit |= v.abs() > 1.0;
                *qi = v.clamp(-1.0, 1.0);
            }
            clamped += usize::from(hit);
            q
        })
        .collect();
    Ok(Normalized {
        cloud: SemanticPointCloud {
            positions,
            categories: cloud.categories.clone(),
            frame: Frame::Normalized,
        },
        clamped,
    })
}

/// Parses the line-oriented mesh text format.
pub fn parse_mesh(text: &str) -> Result<SemanticMesh> {
    let mut triangles = Vec::new();
    let mut line_start = 0usize;
    for raw in text.split_inclusive('\n') {
        let offset = line_start;
        line_start += raw.len();
        let body = raw.split('#').next().unwrap_or("");
        if body.trim().is_empty() {
            continue;
        }
        let malformed = |at: usize, msg: String| Error::Malformed {
            what: "mesh text",
            offset: at as u64,
            message: msg,
        };
        let mut fields = Vec::with_capacity(10);
        let mut cursor = 0;
        for tok in body.split_whitespace() {
            let rel = body[cursor..].find(tok).unwrap() + cursor;
            cursor = rel + tok.len();
            fields.push((offset + rel, tok));
        }
        if fields.len() != 10 {
            return Err(malformed(
                offset,
                format!("expected 10 fields, found {}", fields.len()),
            ));
        }
        let (cat_at, cat_tok) = fields[0];
        let cat_id: u32 = cat_tok
            .parse()
            .map_err(|_| malformed(cat_at, format!("invalid category {cat_tok:?}")))?;
        let category = Category::new(cat_id).map_err(|e| malformed(cat_at, e.to_string()))?;
        let mut v = [0.0f64; 9];
        for (slot, &(at, tok)) in v.iter_mut().zip(&fields[1..]) {
            *slot = tok
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| malformed(at, format!("invalid coordinate {tok:?}")))?;
        }
        triangles.push(Triangle {
            vertices: [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]],
            category,
        });
    }
    Ok(SemanticMesh { triangles })
}

pub fn format_mesh(mesh: &SemanticMesh) -> String {
    use std::fmt::Write;
    let mut s = String::from("# cat v1x v1y v1z v2x v2y v2z v3x v3y v3z\n");
    for t in &mesh.triangles {
        write!(s, "{}", t.category.id()).unwrap();
        for v in t.vertices.iter().flatten() {
            write!(s, " {v}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn encode_cloud(cloud: &SemanticPointCloud) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(CLOUD_MAGIC);
    w.u16(CLOUD_VERSION);
    w.u64(cloud.len() as u64);
    for (p, c) in cloud.positions.iter().zip(&cloud.categories) {
        for &v in p {
            w.f32(v);
        }
        w.u8(c.0);
    }
    w.finish()
}

/// Decodes a `P25D` blob. The format does not carry the frame, so the
/// caller states it.
pub fn decode_cloud(bytes: &[u8], frame: Frame) -> Result<SemanticPointCloud> {
    let mut r = ByteReader::new(bytes, "point cloud");
    r.magic(CLOUD_MAGIC)?;
    let at = r.offset();
    let version = r.u16()?;
    if version != CLOUD_VERSION {
        return Err(r.error_at(at, format!("unsupported version {version}")));
    }
    let n = r.count_u64(13)?;
    let mut cloud = SemanticPointCloud::empty(frame);
    cloud.positions.reserve(n);
    cloud.categories.reserve(n);
    for _ in 0..n {
        let p = [r.f32()?, r.f32()?, r.f32()?];
        let at = r.offset();
        let c = Category::new(r.u8()? as u32).map_err(|e| r.error_at(at, e.to_string()))?;
        cloud.positions.push(p);
        cloud.categories.push(c);
    }
    r.finish()?;
    Ok(cloud)
}
