//! Seeded synthetic city: a street grid with extruded box buildings, its
//! location graph, and hand-crafted sector encoders producing paired
//! ground-view / map-view feature vectors.
//!
//! Layout: intersections sit on a lattice with pitch `2 * spacing`, and one
//! location sits at the midpoint of every street segment, so the graph
//! alternates intersection and midpoint locations.
//!
//! Paired-features file (little-endian): count `u64`, ground dim `u32`, map
//! dim `u32`, `count` ground rows of `f32`, `count` map rows of `f32`, then
//! `count` ids as `u64`.

use std::f64::consts::{PI, TAU};

use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{invalid, Error, Result};
use crate::localizer::{ConnectivityGraph, LocationRecord};
use crate::mapgen::{Category, SemanticMesh, SemanticPointCloud, Triangle, NUM_CATEGORIES};
use crate::rng::{seeded, sub_seed};

/// Category of road surface.
pub const ROAD: Category = Category::const_new(0);
/// Category of open ground in lots without a building.
pub const PARK: Category = Category::const_new(2);

/// Street half-width as a fraction of the spacing.
const ROAD_HALF_WIDTH: f64 = 0.3;
/// Gap between the road edge and a building footprint, as a fraction of the
/// spacing.
const SETBACK: f64 = 0.1;
/// Probability that a lot is left open.
const OPEN_LOT: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct CitySpec {
    /// Intersections along x.
    pub grid_w: usize,
    /// Intersections along y.
    pub grid_h: usize,
    /// Distance between adjacent locations in meters.
    pub spacing: f64,
    pub height_min: f64,
    pub height_max: f64,
    /// Relative frequency of each category among buildings.
    pub category_weights: [f64; NUM_CATEGORIES],
    pub seed: u64,
}

impl Default for CitySpec {
    fn default() -> Self {
        let mut w = [0.0; NUM_CATEGORIES];
        for c in w.iter_mut().skip(8).take(8) {
            *c = 1.0;
        }
        Self {
            grid_w: 32,
            grid_h: 32,
            spacing: 10.0,
            height_min: 5.0,
            height_max: 40.0,
            category_weights: w,
            seed: 0,
        }
    }
}

impl CitySpec {
    pub fn with_grid(grid_w: usize, grid_h: usize, seed: u64) -> Self {
        Self {
            grid_w,
            grid_h,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_w < 2 || self.grid_h < 2 {
            return Err(invalid("city grid must be at least 2 x 2"));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(invalid("spacing must be > 0"));
        }
        if !(self.height_min > 0.0 && self.height_min <= self.height_max && self.height_max.is_finite()) {
            return Err(invalid("building heights must satisfy 0 < min <= max"));
        }
        if self.category_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
            || self.category_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(invalid("category weights must be >= 0 with a positive sum"));
        }
        Ok(())
    }

    /// Number of locations: intersections plus segment midpoints.
    pub fn location_count(&self) -> usize {
        let (w, h) = (self.grid_w, self.grid_h);
        w * h + (w - 1) * h + w * (h - 1)
    }

    fn pitch(&self) -> f64 {
        2.0 * self.spacing
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub height: f64,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq)]
pub struct City {
    pub spec: CitySpec,
    pub mesh: SemanticMesh,
    pub graph: ConnectivityGraph,
    pub buildings: Vec<Building>,
}

impl City {
    pub fn locations(&self) -> &[LocationRecord] {
        self.graph.records()
    }

    /// Ids of the intersection locations, `j * grid_w + i` for lattice
    /// coordinates `(i, j)`.
    pub fn intersection_ids(&self) -> std::ops::Range<u64> {
        0..(self.spec.grid_w * self.spec.grid_h) as u64
    }
}

fn quad(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3], cat: Category, out: &mut Vec<Triangle>) {
    out.push(Triangle { vertices: [a, b, c], category: cat });
    out.push(Triangle { vertices: [a, c, d], category: cat });
}

/// Closed box: floor, roof and four walls, two triangles each.
pub fn box_triangles(b: &Building) -> Vec<Triangle> {
    let [x0, y0] = b.min;
    let [x1, y1] = b.max;
    let h = b.height;
    let c = b.category;
    let p = |x: f64, y: f64, z: f64| [x, y, z];
    let mut t = Vec::with_capacity(12);
    quad(p(x0, y0, 0.0), p(x0, y1, 0.0), p(x1, y1, 0.0), p(x1, y0, 0.0), c, &mut t);
    quad(p(x0, y0, h), p(x1, y0, h), p(x1, y1, h), p(x0, y1, h), c, &mut t);
    let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
    for k in 0..4 {
        let (ax, ay) = corners[k];
        let (bx, by) = corners[(k + 1) % 4];
        quad(p(ax, ay, 0.0), p(bx, by, 0.0), p(bx, by, h), p(ax, ay, h), c, &mut t);
    }
    t
}

fn flat_rect(min: [f64; 2], max: [f64; 2], cat: Category, out: &mut Vec<Triangle>) {
    quad(
        [min[0], min[1], 0.0],
        [max[0], min[1], 0.0],
        [max[0], max[1], 0.0],
        [min[0], max[1], 0.0],
        cat,
        out,
    );
}

/// Builds the street grid, its location graph and the building mesh.
pub fn generate_city(spec: &CitySpec) -> Result<City> {
    spec.validate()?;
    let (w, h) = (spec.grid_w, spec.grid_h);
    let pitch = spec.pitch();
    let mut rng = seeded(spec.seed);
    let cats = WeightedIndex::new(spec.category_weights).map_err(|e| invalid(e.to_string()))?;

    // locations
    let n_int = w * h;
    let n_hor = (w - 1) * h;
    let inter = |i: usize, j: usize| (j * w + i) as u64;
    let hmid = |i: usize, j: usize| (n_int + j * (w - 1) + i) as u64;
    let vmid = |i: usize, j: usize| (n_int + n_hor + j * w + i) as u64;
    let mut records = Vec::with_capacity(spec.location_count());
    for j in 0..h {
        for i in 0..w {
            let mut nbrs = Vec::with_capacity(4);
            if i > 0 {
                nbrs.push(hmid(i - 1, j));
            }
            if i + 1 < w {
                nbrs.push(hmid(i, j));
            }
            if j > 0 {
                nbrs.push(vmid(i, j - 1));
            }
            if j + 1 < h {
                nbrs.push(vmid(i, j));
            }
            records.push(LocationRecord {
                id: inter(i, j),
                x: i as f64 * pitch,
                y: j as f64 * pitch,
                yaw: 0.0,
                neighbors: nbrs,
            });
        }
    }
    for j in 0..h {
        for i in 0..w - 1 {
            records.push(LocationRecord {
                id: hmid(i, j),
                x: (i as f64 + 0.5) * pitch,
                y: j as f64 * pitch,
                yaw: 0.0,
                neighbors: vec![inter(i, j), inter(i + 1, j)],
            });
        }
    }
    for j in 0..h - 1 {
        for i in 0..w {
            records.push(LocationRecord {
                id: vmid(i, j),
                x: i as f64 * pitch,
                y: (j as f64 + 0.5) * pitch,
                yaw: PI / 2.0,
                neighbors: vec![inter(i, j), inter(i, j + 1)],
            });
        }
    }
    let graph = ConnectivityGraph::new(records)?;

    // roads: full-length strips along x, pieces between them along y
    let r = ROAD_HALF_WIDTH * spec.spacing;
    let x_end = (w - 1) as f64 * pitch;
    let mut triangles = Vec::new();
    for j in 0..h {
        let y = j as f64 * pitch;
        flat_rect([-r, y - r], [x_end + r, y + r], ROAD, &mut triangles);
    }
    for i in 0..w {
        let x = i as f64 * pitch;
        for j in 0..h - 1 {
            let y = j as f64 * pitch;
            flat_rect([x - r, y + r], [x + r, y + pitch - r], ROAD, &mut triangles);
        }
    }

    // each block holds a 2 x 2 arrangement of lots
    let inset = r + SETBACK * spec.spacing;
    let mut buildings = Vec::new();
    for j in 0..h - 1 {
        for i in 0..w - 1 {
            let bx = i as f64 * pitch;
            let by = j as f64 * pitch;
            let inner = pitch - 2.0 * inset;
            let half = inner / 2.0;
            let gap = 0.05 * spec.spacing;
            for (li, lj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let min = [
                    bx + inset + li as f64 * half + if li == 1 { gap } else { 0.0 },
                    by + inset + lj as f64 * half + if lj == 1 { gap } else { 0.0 },
                ];
                let max = [
                    bx + inset + (li + 1) as f64 * half - if li == 0 { gap } else { 0.0 },
                    by + inset + (lj + 1) as f64 * half - if lj == 0 { gap } else { 0.0 },
                ];
                if rng.random::<f64>() < OPEN_LOT {
                    flat_rect(min, max, PARK, &mut triangles);
                    continue;
                }
                let height = rng.random_range(spec.height_min..=spec.height_max);
                let category = Category::new(cats.sample(&mut rng) as u32)?;
                buildings.push(Building { min, max, height, category });
            }
        }
    }
    for b in &buildings {
        triangles.extend(box_triangles(b));
    }
    Ok(City {
        spec: spec.clone(),
        mesh: SemanticMesh { triangles },
        graph,
        buildings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorEncoderSpec {
    pub sectors: usize,
    pub radius: f64,
}

impl Default for SectorEncoderSpec {
    fn default() -> Self {
        Self { sectors: 16, radius: 76.0 }
    }
}

impl SectorEncoderSpec {
    /// Values per sector: category histogram, max height and mean height.
    pub const BLOCK: usize = NUM_CATEGORIES + 2;

    pub fn dim(&self) -> usize {
        self.sectors * Self::BLOCK
    }

    pub fn validate(&self) -> Result<()> {
        if self.sectors < 4 {
            return Err(invalid("sector encoder needs at least 4 sectors"));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(invalid("sector radius must be > 0"));
        }
        Ok(())
    }

    fn sector_of(&self, dx: f64, dy: f64, yaw: f64) -> usize {
        let a = (dy.atan2(dx) - yaw).rem_euclid(TAU);
        ((a / TAU * self.sectors as f64) as usize).min(self.sectors - 1)
    }
}

/// Uniform bucket grid over the xy-plane for radius queries. Candidates are
/// returned in ascending point order, so results match a full scan bit for
/// bit.
pub struct PointGrid<'a> {
    cloud: &'a SemanticPointCloud,
    cell: f64,
    origin: [f64; 2],
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<u32>>,
}

impl<'a> PointGrid<'a> {
    pub fn new(cloud: &'a SemanticPointCloud, cell: f64) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &cloud.positions {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if cloud.is_empty() {
            lo = [0.0; 2];
            hi = [0.0; 2];
        }
        let cols = (((hi[0] - lo[0]) / cell).floor() as usize) + 1;
        let rows = (((hi[1] - lo[1]) / cell).floor() as usize) + 1;
        let mut buckets = vec![Vec::new(); cols * rows];
        for (i, p) in cloud.positions.iter().enumerate() {
            let c = (((p[0] - lo[0]) / cell) as usize).min(cols - 1);
            let r = (((p[1] - lo[1]) / cell) as usize).min(rows - 1);
            buckets[r * cols + c].push(i as u32);
        }
        Self { cloud, cell, origin: lo, cols, rows, buckets }
    }

    /// Indices of points with planar distance `<= radius` from `center`,
    /// ascending.
    pub fn within(&self, center: [f64; 2], radius: f64) -> Vec<u32> {
        let span = |v: f64, o: f64, n: usize| {
            let lo = ((v - radius - o) / self.cell).floor();
            let hi = ((v + radius - o) / self.cell).floor();
            if hi < 0.0 || lo > (n - 1) as f64 {
                return None;
            }
            Some((lo.max(0.0) as usize, (hi as usize).min(n - 1)))
        };
        let (Some((c0, c1)), Some((r0, r1))) = (
            span(center[0], self.origin[0], self.cols),
            span(center[1], self.origin[1], self.rows),
        ) else {
            return Vec::new();
        };
        let r2 = radius * radius;
        let mut out = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                for &i in &self.buckets[r * self.cols + c] {
                    let p = self.cloud.positions[i as usize];
                    let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                    if dx * dx + dy * dy <= r2 {
                        out.push(i);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn all_within(cloud: &SemanticPointCloud, center: [f64; 2], radius: f64) -> Vec<u32> {
    let r2 = radius * radius;
    cloud
        .positions
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
            dx * dx + dy * dy <= r2
        })
        .map(|(i, _)| i as u32)
        .collect()
}

/// Per-sector statistics over the given points with optional histogram
/// weights.
fn sector_features(
    cloud: &SemanticPointCloud,
    idx: &[u32],
    loc: &LocationRecord,
    spec: &SectorEncoderSpec,
    weight: impl Fn(f64) -> f64,
) -> Array1<f64> {
    let block = SectorEncoderSpec::BLOCK;
    let s = spec.sectors;
    let mut out = Array1::zeros(s * block);
    let mut mass = vec![0.0; s];
    let mut count = vec![0usize; s];
    let mut zsum = vec![0.0; s];
    let mut zmax = vec![f64::NEG_INFINITY; s];
    for &i in idx {
        let p = cloud.positions[i as usize];
        let (dx, dy) = (p[0] - loc.x, p[1] - loc.y);
        let k = spec.sector_of(dx, dy, loc.yaw);
        let wgt = weight((dx * dx + dy * dy).sqrt());
        out[k * block + cloud.categories[i as usize].id()] += wgt;
        mass[k] += wgt;
        count[k] += 1;
        zsum[k] += p[2];
        zmax[k] = zmax[k].max(p[2]);
    }
    for k in 0..s {
        if count[k] == 0 {
            continue;
        }
        let b = k * block;
        for c in 0..NUM_CATEGORIES {
            out[b + c] /= mass[k];
        }
        out[b + NUM_CATEGORIES] = zmax[k];
        out[b + NUM_CATEGORIES + 1] = zsum[k] / count[k] as f64;
    }
    out
}

fn check_world(cloud: &SemanticPointCloud) -> Result<()> {
    if cloud.frame != crate::mapgen::Frame::World {
        return Err(invalid("sector encoders expect a world-frame cloud"));
    }
    Ok(())
}

/// Map-view descriptor: per yaw-aligned sector, the normalized category
/// histogram, max height and mean height of points within the radius.
pub fn encode_map_view(
    cloud: &SemanticPointCloud,
    location: &LocationRecord,
    spec: &SectorEncoderSpec,
) -> Result<Array1<f64>> {
    spec.validate()?;
    check_world(cloud)?;
    let idx = all_within(cloud, [location.x, location.y], spec.radius);
    Ok(sector_features(cloud, &idx, location, spec, |_| 1.0))
}

/// Cross-view discrepancy applied to ground views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundViewParams {
    pub noise_sigma: f64,
    pub dropout: f64,
}

impl Default for GroundViewParams {
    fn default() -> Self {
        Self { noise_sigma: 0.05, dropout: 0.2 }
    }
}

impl GroundViewParams {
    pub fn noiseless() -> Self {
        Self { noise_sigma: 0.0, dropout: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid("noise sigma must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

fn ground_from_candidates(
    cloud: &SemanticPointCloud,
    idx: &[u32],
    location: &LocationRecord,
    spec: &SectorEncoderSpec,
    params: &GroundViewParams,
    seed: u64,
) -> Result<Array1<f64>> {
    let mut rng = seeded(seed);
    let kept: Vec<u32> = if params.dropout > 0.0 {
        idx.iter()
            .copied()
            .filter(|_| rng.random::<f64>() >= params.dropout)
            .collect()
    } else {
        idx.to_vec()
    };
    let mut f = sector_features(cloud, &kept, location, spec, |d| 1.0 / (1.0 + d));
    if params.noise_sigma > 0.0 {
        let n = Normal::new(0.0, params.noise_sigma).map_err(|e| invalid(e.to_string()))?;
        f.mapv_inplace(|v| v + n.sample(&mut rng));
    }
    Ok(f)
}

/// Ground-view descriptor: the map-view statistic with `1 / (1 + d)`
/// histogram weights, seeded point dropout and additive Gaussian noise.
pub fn encode_ground_view(
    cloud: &SemanticPointCloud,
    location: &LocationRecord,
    spec: &SectorEncoderSpec,
    params: &GroundViewParams,
    seed: u64,
) -> Result<Array1<f64>> {
    spec.validate()?;
    params.validate()?;
    check_world(cloud)?;
    let idx = all_within(cloud, [location.x, location.y], spec.radius);
    ground_from_candidates(cloud, &idx, location, spec, params, seed)
}

/// Ground and map descriptors for every location of the city, in ascending
/// id order. Location `id` draws its ground view from `sub_seed(seed, id)`.
pub fn paired_features(
    cloud: &SemanticPointCloud,
    graph: &ConnectivityGraph,
    spec: &SectorEncoderSpec,
    params: &GroundViewParams,
    seed: u64,
) -> Result<PairedFeatures> {
    spec.validate()?;
    params.validate()?;
    check_world(cloud)?;
    let grid = PointGrid::new(cloud, spec.radius);
    let locs = graph.records();
    let rows: Vec<(Array1<f64>, Array1<f64>)> = locs
        .par_iter()
        .map(|loc| {
            let idx = grid.within([loc.x, loc.y], spec.radius);
            let map = sector_features(cloud, &idx, loc, spec, |_| 1.0);
            let ground = ground_from_candidates(cloud, &idx, loc, spec, params, sub_seed(seed, loc.id))?;
            Ok((ground, map))
        })
        .collect::<Result<_>>()?;
    let d = spec.dim();
    let mut ground = Array2::zeros((locs.len(), d));
    let mut map = Array2::zeros((locs.len(), d));
    for (i, (g, m)) in rows.into_iter().enumerate() {
        ground.row_mut(i).assign(&g);
        map.row_mut(i).assign(&m);
    }
    PairedFeatures::new(locs.iter().map(|l| l.id).collect(), ground, map)
}

/// Row-aligned ground and map descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedFeatures {
    pub ids: Vec<u64>,
    pub ground: Array2<f64>,
    pub map: Array2<f64>,
}

impl PairedFeatures {
    pub fn new(ids: Vec<u64>, ground: Array2<f64>, map: Array2<f64>) -> Result<Self> {
        for (ctx, m) in [("ground features", &ground), ("map features", &map)] {
            if m.nrows() != ids.len() {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: ids.len(),
                    actual: m.nrows(),
                });
            }
        }
        Ok(Self { ids, ground, map })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn encode_features(f: &PairedFeatures) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.u64(f.len() as u64);
    w.u32(f.ground.ncols() as u32);
    w.u32(f.map.ncols() as u32);
    for v in f.ground.iter().chain(f.map.iter()) {
        w.f32(*v);
    }
    for id in &f.ids {
        w.u64(*id);
    }
    w.finish()
}

pub fn decode_features(bytes: &[u8]) -> Result<PairedFeatures> {
    let mut r = ByteReader::new(bytes, "feature file");
    let n = r.u64()? as usize;
    let dg = r.u32()? as usize;
    let dm = r.u32()? as usize;
    let need = n
        .checked_mul(4 * (dg + dm) + 8)
        .ok_or_else(|| r.error_at(0, "count overflows"))?;
    if bytes.len() - r.offset() as usize != need {
        return Err(r.error_at(
            r.offset(),
            format!("expected {need} payload bytes, found {}", bytes.len() - r.offset() as usize),
        ));
    }
    let ground = Array2::from_shape_vec((n, dg), r.f32_vec(n * dg)?).expect("shape checked");
    let map = Array2::from_shape_vec((n, dm), r.f32_vec(n * dm)?).expect("shape checked");
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(r.u64()?);
    }
    r.finish()?;
    PairedFeatures::new(ids, ground, map)
}

/// Random walks of `length` locations. A walk never returns to the location
/// it just left unless that is the only neighbor.
pub fn generate_routes(graph: &ConnectivityGraph, n: usize, length: usize, seed: u64) -> Result<Vec<Vec<u64>>> {
    if graph.is_empty() {
        return Err(Error::InvalidGraph("empty graph".into()));
    }
    if !graph.is_connected() {
        return Err(Error::GraphDisconnected);
    }
    if length == 0 {
        return Err(invalid("route length must be >= 1"));
    }
    let ids: Vec<u64> = graph.records().iter().map(|r| r.id).collect();
    if ids.len() > 1 && ids.iter().any(|&id| graph.neighbors(id).is_empty()) {
        return Err(Error::GraphDisconnected);
    }
    let mut rng = seeded(seed);
    let mut routes = Vec::with_capacity(n);
    for _ in 0..n {
        let mut walk = Vec::with_capacity(length);
        walk.push(*ids.choose(&mut rng).expect("non-empty"));
        while walk.len() < length {
            let cur = *walk.last().unwrap();
            let prev = walk.len().checked_sub(2).map(|i| walk[i]);
            let mut options = graph.neighbors(cur);
            if options.is_empty() {
                return Err(Error::GraphDisconnected);
            }
            if options.len() > 1 {
                options.retain(|&o| Some(o) != prev);
            }
            walk.push(*options.choose(&mut rng).unwrap());
        }
        routes.push(walk);
    }
    Ok(routes)
}

/// One route per line, ids separated by single spaces.
pub fn format_routes(routes: &[Vec<u64>]) -> String {
    let mut s = String::new();
    for r in routes {
        let line: Vec<String> = r.iter().map(u64::to_string).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_routes(text: &str) -> Result<Vec<Vec<u64>>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let mut route = Vec::new();
        let mut col = 0u64;
        for tok in line.split_inclusive(char::is_whitespace) {
            let t = tok.trim();
            if !t.is_empty() {
                route.push(t.parse::<u64>().map_err(|e| Error::Malformed {
                    what: "route file",
                    offset: offset + col,
                    message: format!("{t:?}: {e}"),
                })?);
            }
            col += tok.len() as u64;
        }
        if !route.is_empty() {
            out.push(route);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}
