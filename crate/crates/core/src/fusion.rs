//! Geometry linking aerial feature grids with 2.5D point features:
//! parallel projection, bilinear sampling, 4x upsampling and the
//! pixel-to-point, point-to-pixel and global fusion heads.
//!
//! All tensors are row-major and channel-last: a grid is `H x W x C`, a point
//! feature set is `N x C`. Reductions run sequentially per channel so results
//! are reproducible bit-for-bit.
//!
//! Parameter file (little-endian): magic `FUSP`, version `u16`, mode `u8`,
//! stage count `u32`, then per stage `in u32`, `out u32`, `relu u8` followed
//! by `f32` blobs for weight (`out x in`), bias, scale and shift. The first
//! three stages are the point MLP, the last one is the fusion stage.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{invalid, Error, Result};
use crate::rng::seeded;

/// Default point-MLP widths.
pub const DEFAULT_MLP_WIDTHS: [usize; 3] = [256, 256, 128];

const PARAMS_MAGIC: &[u8; 4] = b"FUSP";
const PARAMS_VERSION: u16 = 1;

/// Pixel and geographic extent of a feature grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMeta {
    pub width: usize,
    pub height: usize,
    /// Geographic width in meters.
    pub geo_width: f64,
    /// Geographic height in meters.
    pub geo_height: f64,
    pub center_x: f64,
    pub center_y: f64,
}

impl GridMeta {
    pub fn new(
        width: usize,
        height: usize,
        geo_width: f64,
        geo_height: f64,
        center_x: f64,
        center_y: f64,
    ) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(invalid("grid must be at least 2x2 pixels"));
        }
        if !(geo_width > 0.0 && geo_height > 0.0) {
            return Err(invalid("geographic extent must be positive"));
        }
        Ok(Self {
            width,
            height,
            geo_width,
            geo_height,
            center_x,
            center_y,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub meta: GridMeta,
    /// `H x W x C`.
    pub data: Array3<f64>,
}

impl FeatureGrid {
    pub fn new(meta: GridMeta, data: Array3<f64>) -> Result<Self> {
        let (h, w, _) = data.dim();
        if h != meta.height || w != meta.width {
            return Err(Error::DimensionMismatch {
                context: "feature grid pixels",
                expected: meta.height * meta.width,
                actual: h * w,
            });
        }
        Ok(Self { meta, data })
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatureSet {
    /// Horizontal point coordinates in meters.
    pub coords: Vec<[f64; 2]>,
    /// `N x C`.
    pub features: Array2<f64>,
}

impl PointFeatureSet {
    pub fn new(coords: Vec<[f64; 2]>, features: Array2<f64>) -> Result<Self> {
        if coords.len() != features.nrows() {
            return Err(Error::DimensionMismatch {
                context: "point feature rows",
                expected: coords.len(),
                actual: features.nrows(),
            });
        }
        Ok(Self { coords, features })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// `x = (x̄ + W_g/2 - C_x)(W - 1)/(W_g - 1)`, likewise for `y`. The result may
/// fall outside the pixel lattice.
pub fn project_point_to_pixel(p: [f64; 2], meta: &GridMeta) -> [f64; 2] {
    let x = (p[0] + 0.5 * meta.geo_width - meta.center_x) * (meta.width as f64 - 1.0)
        / (meta.geo_width - 1.0);
    let y = (p[1] + 0.5 * meta.geo_height - meta.center_y) * (meta.height as f64 - 1.0)
        / (meta.geo_height - 1.0);
    [x, y]
}

fn bilinear_axis(v: f64, size: usize) -> (usize, f64) {
    let v = v.clamp(0.0, (size - 1) as f64);
    let i0 = (v.floor() as usize).min(size - 2);
    (i0, v - i0 as f64)
}

fn sample_into(data: &Array3<f64>, x: f64, y: f64, out: &mut [f64]) {
    let (h, w, c) = data.dim();
    let (x0, fx) = bilinear_axis(x, w);
    let (y0, fy) = bilinear_axis(y, h);
    let w00 = (1.0 - fx) * (1.0 - fy);
    let w10 = fx * (1.0 - fy);
    let w01 = (1.0 - fx) * fy;
    let w11 = fx * fy;
    for (ch, o) in out.iter_mut().enumerate().take(c) {
        *o = w00 * data[[y0, x0, ch]]
            + w10 * data[[y0, x0 + 1, ch]]
            + w01 * data[[y0 + 1, x0, ch]]
            + w11 * data[[y0 + 1, x0 + 1, ch]];
    }
}

/// Bilinear interpolation at pixel coordinates `(x, y)`; coordinates outside
/// the lattice are clamped to the border. Returns `N x C`.
pub fn grid_sample_bilinear(grid: &FeatureGrid, coords: &[[f64; 2]]) -> Array2<f64> {
    let c = grid.channels();
    let mut out = Array2::zeros((coords.len(), c));
    let mut buf = vec![0.0; c];
    for (mut row, p) in out.rows_mut().into_iter().zip(coords) {
        sample_into(&grid.data, p[0], p[1], &mut buf);
        row.assign(&ArrayView1::from(&buf[..]));
    }
    out
}

/// Corner-aligned bilinear upsampling to `4H x 4W`; geographic extent is
/// kept so the projection formula remains valid on the new lattice.
pub fn upsample_bilinear_4x(grid: &FeatureGrid) -> FeatureGrid {
    let (h, w, c) = grid.data.dim();
    let (oh, ow) = (4 * h, 4 * w);
    let sy = (h - 1) as f64 / (oh - 1) as f64;
    let sx = (w - 1) as f64 / (ow - 1) as f64;
    let mut data = Array3::zeros((oh, ow, c));
    let mut buf = vec![0.0; c];
    for v in 0..oh {
        for u in 0..ow {
            sample_into(&grid.data, u as f64 * sx, v as f64 * sy, &mut buf);
            for (ch, &b) in buf.iter().enumerate() {
                data[[v, u, ch]] = b;
            }
        }
    }
    FeatureGrid {
        meta: GridMeta {
            width: ow,
            height: oh,
            ..grid.meta
        },
        data,
    }
}

/// 1x1 convolution with inference-form per-channel affine normalization and
/// optional ReLU: `relu(scale * (W x + b) + shift)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub relu: bool,
}

impl Stage {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        let out = weight.nrows();
        if bias.len() != out {
            return Err(Error::DimensionMismatch {
                context: "stage bias",
                expected: out,
                actual: bias.len(),
            });
        }
        Ok(Self {
            weight,
            bias,
            scale: Array1::ones(out),
            shift: Array1::zeros(out),
            relu: true,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(Array2::eye(n), Array1::zeros(n)).unwrap()
    }

    /// Uniform `±1/sqrt(in)` weights, zero bias, unit normalization.
    pub fn random(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-bound..bound));
        Self::new(weight, Array1::zeros(outputs)).unwrap()
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn validate(&self) -> Result<()> {
        let out = self.outputs();
        for (len, context) in [
            (self.bias.len(), "stage bias"),
            (self.scale.len(), "stage scale"),
            (self.shift.len(), "stage shift"),
        ] {
            if len != out {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: out,
                    actual: len,
                });
            }
        }
        Ok(())
    }

    /// Applies the stage to every row of `x` (`N x in` -> `N x out`).
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.inputs() {
            return Err(Error::DimensionMismatch {
                context: "stage input",
                expected: self.inputs(),
                actual: x.ncols(),
            });
        }
        let mut out = Array2::zeros((x.nrows(), self.outputs()));
        for (xr, mut or) in x.rows().into_iter().zip(out.rows_mut()) {
            for (o, slot) in or.iter_mut().enumerate() {
                let mut acc = self.bias[o];
                for (wv, xv) in self.weight.row(o).iter().zip(xr.iter()) {
                    acc += wv * xv;
                }
                let v = self.scale[o] * acc + self.shift[o];
                *slot = if self.relu { v.max(0.0) } else { v };
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    PixelToPoint,
    PointToPixel,
    GlobalConcat,
    GlobalAdd,
}

impl FusionMode {
    fn code(self) -> u8 {
        match self {
            Self::PixelToPoint => 0,
            Self::PointToPixel => 1,
            Self::GlobalConcat => 2,
            Self::GlobalAdd => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Self::PixelToPoint,
            1 => Self::PointToPixel,
            2 => Self::GlobalConcat,
            3 => Self::GlobalAdd,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PixelToPoint => "pixel-to-point",
            Self::PointToPixel => "point-to-pixel",
            Self::GlobalConcat => "global-concat",
            Self::GlobalAdd => "global-add",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub mode: FusionMode,
    /// Three stages applied to point features.
    pub mlp: Vec<Stage>,
    /// Stage applied to the concatenated `[grid | point]` features.
    pub fuse: Stage,
}

impl FusionParams {
    pub fn new(mode: FusionMode, mlp: Vec<Stage>, fuse: Stage) -> Result<Self> {
        let p = Self { mode, mlp, fuse };
        p.validate()?;
        Ok(p)
    }

    /// Random parameters with the default MLP widths.
    pub fn random(
        mode: FusionMode,
        grid_channels: usize,
        point_channels: usize,
        embedding: usize,
        seed: u64,
    ) -> Self {
        let mut rng = seeded(seed);
        let mut mlp = Vec::with_capacity(3);
        let mut inputs = point_channels;
        for w in DEFAULT_MLP_WIDTHS {
            mlp.push(Stage::random(inputs, w, &mut rng));
            inputs = w;
        }
        let fuse = Stage::random(grid_channels + inputs, embedding, &mut rng);
        Self { mode, mlp, fuse }
    }

    fn validate(&self) -> Result<()> {
        if self.mlp.len() != 3 {
            return Err(invalid(format!(
                "point MLP needs exactly 3 stages, got {}",
                self.mlp.len()
            )));
        }
        for st in self.mlp.iter().chain([&self.fuse]) {
            st.validate()?;
        }
        for pair in self.mlp.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::DimensionMismatch {
                    context: "point MLP stage chain",
                    expected: pair[0].outputs(),
                    actual: pair[1].inputs(),
                });
            }
        }
        Ok(())
    }

    pub fn point_channels(&self) -> usize {
        self.mlp[0].inputs()
    }

    pub fn embedding_dim(&self) -> usize {
        self.fuse.outputs()
    }

    fn run_mlp(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut h = x.to_owned();
        for st in &self.mlp {
            h = st.forward(h.view())?;
        }
        Ok(h)
    }

    fn check_fuse_inputs(&self, grid_channels: usize) -> Result<()> {
        let expected = grid_channels + self.mlp[2].outputs();
        if self.fuse.inputs() != expected {
            return Err(Error::DimensionMismatch {
                context: "fusion stage input",
                expected,
                actual: self.fuse.inputs(),
            });
        }
        Ok(())
    }

    pub fn manifest(&self) -> String {
        let mut s = format!("mode {}\n", self.mode.name());
        for (i, st) in self.mlp.iter().enumerate() {
            s.push_str(&format!(
                "stage {i} mlp {} -> {}{}\n",
                st.inputs(),
                st.outputs(),
                if st.relu { " relu" } else { "" }
            ));
        }
        s.push_str(&format!(
            "stage 3 fuse {} -> {}{}\n",
            self.fuse.inputs(),
            self.fuse.outputs(),
            if self.fuse.relu { " relu" } else { "" }
        ));
        s
    }
}

fn check_mode(params: &FusionParams, mode: FusionMode) -> Result<()> {
    if params.mode != mode {
        return Err(invalid(format!(
            "parameters are for {} fusion, not {}",
            params.mode.name(),
            mode.name()
        )));
    }
    Ok(())
}

fn concat_columns(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(&a);
    out.slice_mut(s![.., a.ncols()..]).assign(&b);
    out
}

fn max_pool_rows(x: ArrayView2<f64>) -> Array1<f64> {
    x.fold_axis(Axis(0), f64::NEG_INFINITY, |&m, &v| m.max(v))
}

fn mean_pool_rows(x: ArrayView2<f64>) -> Array1<f64> {
    let n = x.nrows() as f64;
    let mut acc = Array1::zeros(x.ncols());
    for row in x.rows() {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc / n
}

/// Grid features sampled at every point of `pts` after 4x upsampling,
/// `N x C_2D`.
pub fn project_grid_to_points(tile: &FeatureGrid, pts: &PointFeatureSet) -> Array2<f64> {
    let up = upsample_bilinear_4x(tile);
    let pix: Vec<[f64; 2]> = pts
        .coords
        .iter()
        .map(|&p| project_point_to_pixel(p, &up.meta))
        .collect();
    grid_sample_bilinear(&up, &pix)
}

/// Upsample the tile, sample it at each projected point, concatenate with the
/// MLP-transformed point features, apply the fusion stage and max-pool.
pub fn pixel_to_point_fuse(
    tile: &FeatureGrid,
    pts: &PointFeatureSet,
    params: &FusionParams,
) -> Result<Array1<f64>> {
    check_mode(params, FusionMode::PixelToPoint)?;
    params.validate()?;
    if pts.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    params.check_fuse_inputs(tile.channels())?;
    let sampled = project_grid_to_points(tile, pts);
    let point = params.run_mlp(pts.features.view())?;
    let fused = params
        .fuse
        .forward(concat_columns(sampled.view(), point.view()).view())?;
    Ok(max_pool_rows(fused.view()))
}

/// Spreads point features over a pixel lattice.
pub trait LatticeInterpolator {
    /// `pixels` are projected point locations; returns `(H * W) x C` in
    /// row-major pixel order.
    fn interpolate(
        &self,
        pixels: &[[f64; 2]],
        features: ArrayView2<f64>,
        height: usize,
        width: usize,
    ) -> Array2<f64>;
}

/// k-nearest projected points weighted by `1 / (d^power + eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseDistance {
    pub k: usize,
    pub power: f64,
    pub eps: f64,
}

impl Default for InverseDistance {
    fn default() -> Self {
        Self {
            k: 3,
            power: 2.0,
            eps: 1e-8,
        }
    }
}

impl LatticeInterpolator for InverseDistance {
    fn interpolate(
        &self,
        pixels: &[[f64; 2]],
        features: ArrayView2<f64>,
        height: usize,
        width: usize,
    ) -> Array2<f64> {
        let c = features.ncols();
        let k = self.k.min(pixels.len()).max(1);
        let mut out = Array2::zeros((height * width, c));
        let mut dists: Vec<(f64, usize)> = Vec::with_capacity(pixels.len());
        for v in 0..height {
            for u in 0..width {
                dists.clear();
                dists.extend(pixels.iter().enumerate().map(|(i, p)| {
                    let dx = p[0] - u as f64;
                    let dy = p[1] - v as f64;
                    (dx * dx + dy * dy, i)
                }));
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k < dists.len() {
                    dists.select_nth_unstable_by(k - 1, cmp);
                }
                let nearest = &mut dists[..k];
                nearest.sort_unstable_by(cmp);
                let weights: Vec<f64> = nearest
                    .iter()
                    .map(|&(d2, _)| 1.0 / (d2.sqrt().powf(self.power) + self.eps))
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut row = out.row_mut(v * width + u);
                for (&(_, i), wgt) in nearest.iter().zip(&weights) {
                    for (o, f) in row.iter_mut().zip(features.row(i)) {
                        *o += wgt / total * f;
                    }
                }
            }
        }
        out
    }
}

/// Point-to-pixel fusion with the default inverse-distance interpolation.
pub fn point_to_pixel_fuse(
    tile: &FeatureGrid,
    pts: &PointFeatureSet,
    params: &FusionParams,
) -> Result<Array1<f64>> {
    point_to_pixel_fuse_with(tile, pts, params, &InverseDistance::default())
}

/// Interpolate point features onto the tile lattice, run the point MLP per
/// pixel, concatenate with the tile features, fuse and average-pool.
pub fn point_to_pixel_fuse_with(
    tile: &FeatureGrid,
    pts: &PointFeatureSet,
    params: &FusionParams,
    interp: &dyn LatticeInterpolator,
) -> Result<Array1<f64>> {
    check_mode(params, FusionMode::PointToPixel)?;
    params.validate()?;
    if pts.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    params.check_fuse_inputs(tile.channels())?;
    let (h, w, c) = tile.data.dim();
    let pix: Vec<[f64; 2]> = pts
        .coords
        .iter()
        .map(|&p| project_point_to_pixel(p, &tile.meta))
        .collect();
    let lattice = interp.interpolate(&pix, pts.features.view(), h, w);
    let point = params.run_mlp(lattice.view())?;
    let tile_rows = tile
        .data
        .view()
        .into_shape_with_order((h * w, c))
        .map_err(|e| invalid(e.to_string()))?;
    let fused = params
        .fuse
        .forward(concat_columns(tile_rows, point.view()).view())?;
    Ok(mean_pool_rows(fused.view()))
}

/// Fully connected layer `W x + b` without activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.weight.ncols() {
            return Err(Error::DimensionMismatch {
                context: "fully connected input",
                expected: self.weight.ncols(),
                actual: x.len(),
            });
        }
        if self.bias.len() != self.weight.nrows() {
            return Err(Error::DimensionMismatch {
                context: "fully connected bias",
                expected: self.weight.nrows(),
                actual: self.bias.len(),
            });
        }
        Ok(self
            .weight
            .rows()
            .into_iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, v)| acc + w * v))
            .collect())
    }
}

/// Combines tile and point global vectors by addition or concatenation,
/// followed by a fully connected layer.
pub fn global_fuse(
    f_tile: ArrayView1<f64>,
    f_point: ArrayView1<f64>,
    mode: FusionMode,
    fc: &Linear,
) -> Result<Array1<f64>> {
    if f_tile.len() != f_point.len() {
        return Err(Error::DimensionMismatch {
            context: "global fusion inputs",
            expected: f_tile.len(),
            actual: f_point.len(),
        });
    }
    let joined: Array1<f64> = match mode {
        FusionMode::GlobalAdd => &f_tile + &f_point,
        FusionMode::GlobalConcat => f_tile.iter().chain(f_point.iter()).copied().collect(),
        other => {
            return Err(invalid(format!(
                "{} is not a global fusion mode",
                other.name()
            )))
        }
    };
    fc.forward(joined.view())
}

/// Channelwise max-pool followed by mean-pool, `2C` values.
pub fn aggregate_point_global(features: ArrayView2<f64>) -> Result<Array1<f64>> {
    if features.nrows() == 0 {
        return Err(Error::EmptyPointSet);
    }
    let max = max_pool_rows(features);
    let mean = mean_pool_rows(features);
    Ok(max.iter().chain(mean.iter()).copied().collect())
}

fn write_stage(w: &mut ByteWriter, st: &Stage) {
    w.u32(st.inputs() as u32);
    w.u32(st.outputs() as u32);
    w.u8(u8::from(st.relu));
    for v in st
        .weight
        .iter()
        .chain(&st.bias)
        .chain(&st.scale)
        .chain(&st.shift)
    {
        w.f32(*v);
    }
}

fn read_stage(r: &mut ByteReader) -> Result<Stage> {
    let inputs = r.u32()? as usize;
    let outputs = r.u32()? as usize;
    let at = r.offset();
    let relu = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(r.error_at(at, format!("invalid relu flag {v}"))),
    };
    let weight = Array2::from_shape_vec((outputs, inputs), r.f32_vec(outputs * inputs)?)
        .map_err(|e| r.error_at(at, e.to_string()))?;
    let bias = Array1::from(r.f32_vec(outputs)?);
    let scale = Array1::from(r.f32_vec(outputs)?);
    let shift = Array1::from(r.f32_vec(outputs)?);
    Ok(Stage {
        weight,
        bias,
        scale,
        shift,
        relu,
    })
}

pub fn encode_params(p: &FusionParams) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(PARAMS_MAGIC);
    w.u16(PARAMS_VERSION);
    w.u8(p.mode.code());
    w.u32((p.mlp.len() + 1) as u32);
    for st in p.mlp.iter().chain([&p.fuse]) {
        write_stage(&mut w, st);
    }
    w.finish()
}

pub fn decode_params(bytes: &[u8]) -> Result<FusionParams> {
    let mut r = ByteReader::new(bytes, "fusion parameters");
    r.magic(PARAMS_MAGIC)?;
    let at = r.offset();
    let version = r.u16()?;
    if version != PARAMS_VERSION {
        return Err(r.error_at(at, format!("unsupported version {version}")));
    }
    let at = r.offset();
    let mode = FusionMode::from_code(r.u8()?)
        .ok_or_else(|| r.error_at(at, "unknown fusion mode"))?;
    let at = r.offset();
    let n = r.u32()? as usize;
    if n != 4 {
        return Err(r.error_at(at, format!("expected 4 stages, found {n}")));
    }
    let mut stages = (0..n).map(|_| read_stage(&mut r)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let fuse = stages.pop().unwrap();
    FusionParams::new(mode, stages, fuse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn meta224() -> GridMeta {
        GridMeta::new(224, 224, 152.0, 152.0, 0.0, 0.0).unwrap()
    }

    fn grid_from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> FeatureGrid {
        let meta = GridMeta::new(w, h, 152.0, 152.0, 0.0, 0.0).unwrap();
        FeatureGrid::new(meta, Array3::from_shape_fn((h, w, c), |(y, x, ch)| f(y, x, ch))).unwrap()
    }

    #[test]
    fn projection_examples() {
        let m = meta224();
        assert_eq!(project_point_to_pixel([-76.0, -76.0], &m), [0.0, 0.0]);
        let x = project_point_to_pixel([75.0, 0.0], &m)[0];
        assert!((x - 223.0).abs() < 1e-9);
        let x = project_point_to_pixel([0.0, 0.0], &m)[0];
        assert!((x - 76.0 * 223.0 / 151.0).abs() < 1e-9);
        assert!((x - 112.2384).abs() < 1e-4);
    }

    #[test]
    fn projection_is_affine() {
        let m = GridMeta::new(60, 40, 90.0, 70.0, 3.0, -2.0).unwrap();
        let mut rng = seeded(1);
        for _ in 0..500 {
            let a = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
            let b = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
            let t: f64 = rng.random();
            let mix = [t * a[0] + (1.0 - t) * b[0], t * a[1] + (1.0 - t) * b[1]];
            let pm = project_point_to_pixel(mix, &m);
            let (pa, pb) = (project_point_to_pixel(a, &m), project_point_to_pixel(b, &m));
            for i in 0..2 {
                assert!((pm[i] - (t * pa[i] + (1.0 - t) * pb[i])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bilinear_sampling_examples() {
        let g = grid_from_fn(5, 6, 2, |y, x, c| (x + 10 * y + 100 * c) as f64);
        let out = grid_sample_bilinear(&g, &[[2.0, 3.0], [5.0, 4.0], [-5.0, 0.0], [9.0, 9.0]]);
        assert_eq!(out.row(0).to_vec(), vec![32.0, 132.0]);
        assert_eq!(out.row(1).to_vec(), vec![45.0, 145.0]);
        assert_eq!(out.row(2).to_vec(), vec![0.0, 100.0]);
        assert_eq!(out.row(3).to_vec(), vec![45.0, 145.0]);

        let g = grid_from_fn(8, 8, 1, |y, x, _| 2.0 * x as f64 + 3.0 * y as f64);
        let mut rng = seeded(4);
        for _ in 0..200 {
            let (x, y) = (rng.random_range(0.0..7.0), rng.random_range(0.0..7.0));
            let v = grid_sample_bilinear(&g, &[[x, y]])[[0, 0]];
            assert!((v - (2.0 * x + 3.0 * y)).abs() < 1e-6);
        }
    }

    #[test]
    fn bilinear_is_lipschitz_on_dense_sweep() {
        let mut rng = seeded(8);
        let g = grid_from_fn(4, 5, 1, |_, _, _| rng.random_range(-1.0..1.0));
        // per-axis slope is bounded by the largest neighbor difference (<= 2)
        let step = 1e-3;
        let mut x = -0.5;
        while x < 4.5 {
            let a = grid_sample_bilinear(&g, &[[x, 1.7]])[[0, 0]];
            let b = grid_sample_bilinear(&g, &[[x + step, 1.7]])[[0, 0]];
            assert!((a - b).abs() <= 2.0 * step + 1e-12);
            x += step;
        }
    }

    #[test]
    fn upsample_examples() {
        let g = grid_from_fn(7, 7, 3, |_, _, _| 2.5);
        let up = upsample_bilinear_4x(&g);
        assert_eq!(up.data.dim(), (28, 28, 3));
        assert!(up.data.iter().all(|&v| (v - 2.5).abs() < 1e-12));

        let g = grid_from_fn(5, 7, 1, |y, x, _| 1.5 * x as f64 - 0.5 * y as f64 + 3.0);
        let up = upsample_bilinear_4x(&g);
        let (sx, sy) = (6.0 / 27.0, 4.0 / 19.0);
        for v in 0..20 {
            for u in 0..28 {
                let expect = 1.5 * u as f64 * sx - 0.5 * v as f64 * sy + 3.0;
                assert!((up.data[[v, u, 0]] - expect).abs() < 1e-6);
            }
        }
        assert_eq!(up.meta.geo_width, g.meta.geo_width);
        assert_eq!(up.meta.width, 28);
    }

    fn point_set(n: usize, c: usize, rng: &mut impl Rng) -> PointFeatureSet {
        let coords = (0..n)
            .map(|_| [rng.random_range(-76.0..76.0), rng.random_range(-76.0..76.0)])
            .collect();
        let feats = Array2::from_shape_fn((n, c), |_| rng.random_range(0.0..1.0));
        PointFeatureSet::new(coords, feats).unwrap()
    }

    fn identity_params(mode: FusionMode, grid_c: usize, point_c: usize) -> FusionParams {
        FusionParams::new(
            mode,
            vec![Stage::identity(point_c); 3],
            Stage::identity(grid_c + point_c),
        )
        .unwrap()
    }

    #[test]
    fn pixel_to_point_identity_oracle() {
        let mut rng = seeded(2);
        let tile = grid_from_fn(6, 6, 3, |_, _, _| rng.random_range(0.0..1.0));
        let pts = point_set(20, 2, &mut rng);
        let params = identity_params(FusionMode::PixelToPoint, 3, 2);
        let out = pixel_to_point_fuse(&tile, &pts, &params).unwrap();
        let sampled = project_grid_to_points(&tile, &pts);
        for ch in 0..5 {
            let expect = (0..20)
                .map(|i| if ch < 3 { sampled[[i, ch]] } else { pts.features[[i, ch - 3]] })
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(out[ch], expect);
        }
    }

    #[test]
    fn pixel_to_point_constant_tile_and_permutation() {
        let mut rng = seeded(3);
        let tile = grid_from_fn(7, 7, 4, |_, _, c| c as f64 + 0.5);
        let pts = point_set(30, 5, &mut rng);
        let sampled = project_grid_to_points(&tile, &pts);
        for row in sampled.rows() {
            for (c, v) in row.iter().enumerate() {
                assert!((v - (c as f64 + 0.5)).abs() < 1e-12);
            }
        }
        let params = FusionParams::random(FusionMode::PixelToPoint, 4, 5, 16, 7);
        let a = pixel_to_point_fuse(&tile, &pts, &params).unwrap();
        let perm: Vec<usize> = (0..30).rev().collect();
        let shuffled = PointFeatureSet::new(
            perm.iter().map(|&i| pts.coords[i]).collect(),
            pts.features.select(Axis(0), &perm),
        )
        .unwrap();
        assert_eq!(a, pixel_to_point_fuse(&tile, &shuffled, &params).unwrap());
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn pixel_to_point_hand_computed() {
        // 2x2 tile with channel values 1 and 2 everywhere, two points with
        // features (3, 0) and (0, 4); identity MLP and identity fusion stage
        let tile = grid_from_fn(2, 2, 2, |_, _, c| (c + 1) as f64);
        let pts = PointFeatureSet::new(
            vec![[-10.0, 5.0], [20.0, -30.0]],
            ndarray::array![[3.0, 0.0], [0.0, 4.0]],
        )
        .unwrap();
        let params = identity_params(FusionMode::PixelToPoint, 2, 2);
        let out = pixel_to_point_fuse(&tile, &pts, &params).unwrap();
        for (a, b) in out.iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((a - b).abs() < 1e-12, "{out}");
        }
    }

    #[test]
    fn fusion_dimension_errors() {
        let tile = grid_from_fn(4, 4, 3, |_, _, _| 1.0);
        let mut rng = seeded(5);
        let pts = point_set(4, 2, &mut rng);
        let params = FusionParams::random(FusionMode::PixelToPoint, 5, 2, 8, 1);
        assert!(matches!(
            pixel_to_point_fuse(&tile, &pts, &params),
            Err(Error::DimensionMismatch { .. })
        ));
        let params = FusionParams::random(FusionMode::PixelToPoint, 3, 6, 8, 1);
        assert!(pixel_to_point_fuse(&tile, &pts, &params).is_err());
        let params = FusionParams::random(FusionMode::PointToPixel, 3, 2, 8, 1);
        assert!(pixel_to_point_fuse(&tile, &pts, &params).is_err());
        let empty = PointFeatureSet::new(vec![], Array2::zeros((0, 2))).unwrap();
        assert!(matches!(
            point_to_pixel_fuse(&tile, &empty, &params),
            Err(Error::EmptyPointSet)
        ));
    }

    #[test]
    fn point_to_pixel_single_point_fills_lattice() {
        let tile = grid_from_fn(3, 4, 1, |y, x, _| (x + y) as f64);
        let pts = PointFeatureSet::new(vec![[12.0, -7.0]], ndarray::array![[0.25, 2.0]]).unwrap();
        let lattice = InverseDistance::default().interpolate(
            &[project_point_to_pixel(pts.coords[0], &tile.meta)],
            pts.features.view(),
            3,
            4,
        );
        for row in lattice.rows() {
            assert!((row[0] - 0.25).abs() < 1e-15 && (row[1] - 2.0).abs() < 1e-15);
        }
        let params = identity_params(FusionMode::PointToPixel, 1, 2);
        let out = point_to_pixel_fuse(&tile, &pts, &params).unwrap();
        let mean_tile = (0..3).flat_map(|y| (0..4).map(move |x| (x + y) as f64)).sum::<f64>() / 12.0;
        assert!((out[0] - mean_tile).abs() < 1e-12);
        assert!((out[1] - 0.25).abs() < 1e-12 && (out[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn idw_symmetric_points_average() {
        let lattice = InverseDistance::default().interpolate(
            &[[0.5, 1.0], [1.5, 1.0]],
            ndarray::array![[2.0], [6.0]].view(),
            2,
            2,
        );
        // pixel (u=1, v=1) sits halfway between the two points
        assert!((lattice[[3, 0]] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn idw_matches_enumeration() {
        let pix = [[0.2, 0.1], [0.9, 0.8], [-0.4, 1.3]];
        let feats = ndarray::array![[1.0, -2.0], [0.5, 3.0], [4.0, 0.0]];
        let lattice = InverseDistance::default().interpolate(&pix, feats.view(), 2, 2);
        for v in 0..2 {
            for u in 0..2 {
                let w: Vec<f64> = pix
                    .iter()
                    .map(|p| {
                        let d2 = (p[0] - u as f64).powi(2) + (p[1] - v as f64).powi(2);
                        1.0 / (d2 + 1e-8)
                    })
                    .collect();
                let tot: f64 = w.iter().sum();
                for c in 0..2 {
                    let e: f64 = (0..3).map(|i| w[i] * feats[[i, c]]).sum::<f64>() / tot;
                    assert!((lattice[[v * 2 + u, c]] - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn point_to_pixel_permutation_invariant() {
        let mut rng = seeded(6);
        let tile = grid_from_fn(5, 5, 2, |_, _, _| rng.random_range(0.0..1.0));
        let pts = point_set(12, 3, &mut rng);
        let params = FusionParams::random(FusionMode::PointToPixel, 2, 3, 8, 2);
        let a = point_to_pixel_fuse(&tile, &pts, &params).unwrap();
        let perm: Vec<usize> = (0..12).map(|i| (i * 5) % 12).collect();
        let shuffled = PointFeatureSet::new(
            perm.iter().map(|&i| pts.coords[i]).collect(),
            pts.features.select(Axis(0), &perm),
        )
        .unwrap();
        let b = point_to_pixel_fuse(&tile, &shuffled, &params).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn global_fuse_modes() {
        let mut rng = seeded(9);
        let c = 6;
        let f_tile = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));
        let f_point = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));
        let fc_add = Linear {
            weight: Array2::from_shape_fn((4, c), |_| rng.random_range(-1.0..1.0)),
            bias: Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0)),
        };
        let zero = Array1::zeros(c);
        assert_eq!(
            global_fuse(f_tile.view(), zero.view(), FusionMode::GlobalAdd, &fc_add).unwrap(),
            fc_add.forward(f_tile.view()).unwrap()
        );
        let out = global_fuse(f_tile.view(), f_point.view(), FusionMode::GlobalAdd, &fc_add).unwrap();
        for o in 0..4 {
            let mut e = fc_add.bias[o];
            for i in 0..c {
                e += fc_add.weight[[o, i]] * (f_tile[i] + f_point[i]);
            }
            assert!((out[o] - e).abs() < 1e-12);
        }

        let fc_cat = Linear {
            weight: Array2::from_shape_fn((4, 2 * c), |_| rng.random_range(-1.0..1.0)),
            bias: Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0)),
        };
        let out = global_fuse(f_tile.view(), f_point.view(), FusionMode::GlobalConcat, &fc_cat).unwrap();
        assert_eq!(out.len(), 4);
        for o in 0..4 {
            let mut e = fc_cat.bias[o];
            for i in 0..c {
                e += fc_cat.weight[[o, i]] * f_tile[i] + fc_cat.weight[[o, c + i]] * f_point[i];
            }
            assert!((out[o] - e).abs() < 1e-12);
        }
        assert!(global_fuse(f_tile.view(), f_point.view(), FusionMode::GlobalConcat, &fc_add).is_err());
        let short = Array1::zeros(c - 1);
        assert!(global_fuse(f_tile.view(), short.view(), FusionMode::GlobalAdd, &fc_add).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let one = ndarray::array![[1.0, -2.0]];
        assert_eq!(aggregate_point_global(one.view()).unwrap().to_vec(), vec![1.0, -2.0, 1.0, -2.0]);
        let two = ndarray::array![[1.0, 3.0], [5.0, 1.0]];
        assert_eq!(aggregate_point_global(two.view()).unwrap().to_vec(), vec![5.0, 3.0, 3.0, 2.0]);
        let swapped = ndarray::array![[5.0, 1.0], [1.0, 3.0]];
        assert_eq!(
            aggregate_point_global(swapped.view()).unwrap(),
            aggregate_point_global(two.view()).unwrap()
        );
        assert!(aggregate_point_global(Array2::<f64>::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn params_file_round_trip() {
        let p = FusionParams::random(FusionMode::PointToPixel, 4, 6, 10, 3);
        let bytes = encode_params(&p);
        assert_eq!(&bytes[..4], b"FUSP");
        let q = decode_params(&bytes).unwrap();
        assert_eq!(q.manifest(), p.manifest());
        for (a, b) in q.fuse.weight.iter().zip(&p.fuse.weight) {
            assert_eq!(*a, (*b as f32) as f64);
        }
        assert!(p.manifest().contains("stage 0 mlp 6 -> 256 relu"));
        assert!(p.manifest().contains("stage 3 fuse 132 -> 10 relu"));
        let err = decode_params(&bytes[..bytes.len() - 2]).unwrap_err();
        assert!(err.to_string().contains("byte offset"));
    }
}
