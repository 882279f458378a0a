//! Point-set subsampling, augmentation and semantic label encoding.

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::mapgen::{Category, Frame, SemanticPointCloud, NUM_CATEGORIES};
use crate::rng::seeded;

/// Default number of points kept after downsampling.
pub const DEFAULT_SAMPLE_POINTS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    Farthest,
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleResult {
    pub indices: Vec<usize>,
    pub strategy: SamplingStrategy,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k > n {
        return Err(Error::InsufficientPoints {
            requested: k,
            available: n,
        });
    }
    if k == 0 {
        return Err(invalid("sample size must be >= 1"));
    }
    Ok(())
}

/// Greedy farthest point sampling starting at `start`.
///
/// Each step picks the unselected point with the largest distance to the
/// selected set; ties go to the lowest index.
pub fn fps(cloud: &SemanticPointCloud, k: usize, start: usize) -> Result<SampleResult> {
    fps_positions(&cloud.positions, k, start)
}

pub fn fps_positions(points: &[[f64; 3]], k: usize, start: usize) -> Result<SampleResult> {
    check_k(k, points.len())?;
    if start >= points.len() {
        return Err(invalid(format!(
            "start index {start} out of range for {} points",
            points.len()
        )));
    }
    let mut selected = vec![false; points.len()];
    let mut min_d: Vec<f64> = points.iter().map(|p| dist2(p, &points[start])).collect();
    let mut indices = Vec::with_capacity(k);
    indices.push(start);
    selected[start] = true;
    while indices.len() < k {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d.iter().enumerate() {
            if !selected[i] && d > best_d {
                best = i;
                best_d = d;
            }
        }
        selected[best] = true;
        indices.push(best);
        let chosen = points[best];
        for (d, p) in min_d.iter_mut().zip(points) {
            let nd = dist2(p, &chosen);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(SampleResult {
        indices,
        strategy: SamplingStrategy::Farthest,
    })
}

/// `k` distinct indices drawn uniformly without replacement.
pub fn rps(cloud: &SemanticPointCloud, k: usize, seed: u64) -> Result<SampleResult> {
    check_k(k, cloud.len())?;
    let indices = index::sample(&mut seeded(seed), cloud.len(), k).into_vec();
    Ok(SampleResult {
        indices,
        strategy: SamplingStrategy::Random,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    pub remove_fraction: f64,
    pub shuffle: bool,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
            remove_fraction: 0.0,
            shuffle: true,
        }
    }
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
            remove_fraction: 0.0,
            shuffle: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(invalid("jitter sigma must be finite and >= 0"));
        }
        if !(self.jitter_clip >= 0.0) {
            return Err(invalid("jitter clip must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.remove_fraction) {
            return Err(invalid("remove fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Shuffle, then clipped Gaussian jitter on positions, then uniform removal
/// of `floor(remove_fraction * N)` points.
pub fn augment_cloud(
    cloud: &SemanticPointCloud,
    params: &AugmentParams,
    seed: u64,
) -> Result<SemanticPointCloud> {
    params.validate()?;
    if cloud.frame != Frame::Normalized {
        return Err(invalid("augment_cloud expects a normalized cloud"));
    }
    let mut rng = seeded(seed);
    let n = cloud.len();
    let mut order: Vec<usize> = (0..n).collect();
    if params.shuffle {
        order.shuffle(&mut rng);
    }
    let mut out = cloud.select(&order);

    if params.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, params.jitter_sigma).map_err(|e| invalid(e.to_string()))?;
        for p in &mut out.positions {
            for c in p.iter_mut() {
                *c += normal
                    .sample(&mut rng)
                    .clamp(-params.jitter_clip, params.jitter_clip);
            }
        }
    }

    let remove = (params.remove_fraction * n as f64).floor() as usize;
    if remove > 0 {
        let mut drop = vec![false; n];
        for i in index::sample(&mut rng, n, remove) {
            drop[i] = true;
        }
        let keep: Vec<usize> = (0..n).filter(|&i| !drop[i]).collect();
        out = out.select(&keep);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SemanticEncoding {
    OneHot24,
    /// Rows of a `24 x 3` projection applied to the one-hot vector.
    Learned3 { projection: Array2<f64> },
}

impl SemanticEncoding {
    pub fn learned3(projection: Array2<f64>) -> Result<Self> {
        if projection.dim() != (NUM_CATEGORIES, 3) {
            return Err(Error::DimensionMismatch {
                context: "semantic projection rows",
                expected: NUM_CATEGORIES,
                actual: projection.nrows(),
            });
        }
        Ok(Self::Learned3 { projection })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::OneHot24 => NUM_CATEGORIES,
            Self::Learned3 { .. } => 3,
        }
    }
}

/// Encodes raw category ids as one-hot rows or projected 3-D rows.
pub fn encode_semantics(categories: &[u32], enc: &SemanticEncoding) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((categories.len(), enc.dim()));
    for (mut row, &id) in out.rows_mut().into_iter().zip(categories) {
        let c = Category::new(id)?.id();
        match enc {
            SemanticEncoding::OneHot24 => row[c] = 1.0,
            // one-hot times projection selects row c
            SemanticEncoding::Learned3 { projection } => row.assign(&projection.row(c)),
        }
    }
    Ok(out)
}

pub fn category_ids(cloud: &SemanticPointCloud) -> Vec<u32> {
    cloud.categories.iter().map(|c| c.id() as u32).collect()
}
