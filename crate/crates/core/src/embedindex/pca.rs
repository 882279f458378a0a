use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{invalid, Error, Result};
use crate::rng::seeded;

pub const PCA_TOLERANCE: f64 = 1e-9;
pub const PCA_MAX_ITERATIONS: usize = 1000;

const PCA_MAGIC: &[u8; 4] = b"PCAM";

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `k x D`, orthonormal rows.
    pub components: Array2<f64>,
    /// Descending, non-negative.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.nrows()
    }
}

fn covariance(data: ArrayView2<f64>, mean: &Array1<f64>) -> Array2<f64> {
    let centered = &data - mean;
    centered.t().dot(&centered) / (data.nrows() as f64 - 1.0)
}

fn orthogonalize(v: &mut Array1<f64>, basis: &[Array1<f64>]) {
    // two passes keep the result orthogonal to machine precision
    for _ in 0..2 {
        for b in basis {
            let p = b.dot(v);
            v.scaled_add(-p, b);
        }
    }
}

/// Start vector for component `j`: `e_j` plus a small fixed perturbation so
/// it is never exactly orthogonal to the target eigenvector.
fn start_vector(j: usize, dim: usize) -> Array1<f64> {
    let mut rng = seeded(0x5043_4153_5441_5254 ^ j as u64);
    let mut v = Array1::from_shape_fn(dim, |_| 1e-3 * rng.random_range(-1.0..1.0));
    v[j % dim] += 1.0;
    v
}

/// Top-`k` eigenpairs of the sample covariance by power iteration with
/// deflation against the components already found.
///
/// An eigenpair is accepted once the Rayleigh quotient is stable to
/// `PCA_TOLERANCE` (relative to the total variance) and the vector moves by
/// less than `PCA_TOLERANCE`. When the vector is still rotating inside a
/// near-degenerate eigenspace after `PCA_MAX_ITERATIONS`, the eigenvalue alone
/// decides.
pub fn pca_fit(data: ArrayView2<f64>, k: usize) -> Result<PcaModel> {
    let (m, d) = data.dim();
    if m < 2 {
        return Err(invalid(format!("PCA needs at least 2 samples, got {m}")));
    }
    if k == 0 || k > (m - 1).min(d) {
        return Err(invalid(format!(
            "PCA dimension {k} outside [1, {}]",
            (m - 1).min(d)
        )));
    }
    let mean = data.mean_axis(Axis(0)).unwrap();
    let cov = covariance(data, &mean);
    let trace: f64 = cov.diag().sum();
    let scale = if trace > 0.0 { trace } else { 1.0 };

    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for j in 0..k {
        let mut v = start_vector(j, d);
        orthogonalize(&mut v, &basis);
        let n = v.dot(&v).sqrt();
        v /= n;
        let mut lambda = f64::NAN;
        let mut eigen_delta = f64::INFINITY;
        let mut vector_delta = f64::INFINITY;
        let mut done = false;
        for _ in 0..PCA_MAX_ITERATIONS {
            let mut w = cov.dot(&v);
            orthogonalize(&mut w, &basis);
            let next_lambda = v.dot(&w);
            let norm = w.dot(&w).sqrt();
            if norm <= 1e-14 * scale {
                // remaining spectrum is numerically zero
                lambda = 0.0;
                eigen_delta = 0.0;
                vector_delta = 0.0;
                done = true;
                break;
            }
            w /= norm;
            eigen_delta = (next_lambda - lambda).abs();
            vector_delta = (&w - &v).dot(&(&w - &v)).sqrt();
            lambda = next_lambda;
            v = w;
            if eigen_delta <= PCA_TOLERANCE * scale && vector_delta <= PCA_TOLERANCE {
                done = true;
                break;
            }
        }
        if !done && !(eigen_delta <= PCA_TOLERANCE * scale) {
            return Err(Error::NonConvergence {
                component: j,
                iterations: PCA_MAX_ITERATIONS,
                eigen_delta,
                vector_delta,
            });
        }
        // sign convention: largest-magnitude entry positive
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if pivot < 0.0 {
            v.mapv_inplace(|x| -x);
        }
        eigenvalues.push(lambda.max(0.0));
        basis.push(v);
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
    let mut components = Array2::zeros((k, d));
    for (row, &src) in order.iter().enumerate() {
        components.row_mut(row).assign(&basis[src]);
    }
    let eigenvalues = order.iter().map(|&i| eigenvalues[i]).collect();
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
    })
}

/// `components · (v - mean)`.
pub fn pca_transform(model: &PcaModel, v: ArrayView1<f64>) -> Result<Array1<f64>> {
    if v.len() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "PCA input",
            expected: model.input_dim(),
            actual: v.len(),
        });
    }
    Ok(model.components.dot(&(&v - &model.mean)))
}

/// Row-wise transform of an `M x D` matrix.
pub fn pca_transform_rows(model: &PcaModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "PCA input",
            expected: model.input_dim(),
            actual: x.ncols(),
        });
    }
    Ok((&x - &model.mean).dot(&model.components.t()))
}

/// Maps a reduced vector back to the input space.
pub fn pca_reconstruct(model: &PcaModel, y: ArrayView1<f64>) -> Result<Array1<f64>> {
    if y.len() != model.output_dim() {
        return Err(Error::DimensionMismatch {
            context: "PCA reconstruction",
            expected: model.output_dim(),
            actual: y.len(),
        });
    }
    Ok(model.components.t().dot(&y) + &model.mean)
}

/// Layout: magic `PCAM`, `D u32`, `k u32`, then `f64` mean (`D`),
/// eigenvalues (`k`) and components (`k x D`, row-major).
pub fn encode_pca(model: &PcaModel) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(PCA_MAGIC);
    w.u32(model.input_dim() as u32);
    w.u32(model.output_dim() as u32);
    for v in model
        .mean
        .iter()
        .chain(&model.eigenvalues)
        .chain(model.components.iter())
    {
        w.f64(*v);
    }
    w.finish()
}

pub fn decode_pca(bytes: &[u8]) -> Result<PcaModel> {
    let mut r = ByteReader::new(bytes, "PCA model");
    r.magic(PCA_MAGIC)?;
    let d = r.u32()? as usize;
    let at = r.offset();
    let k = r.u32()? as usize;
    if k == 0 || k > d {
        return Err(r.error_at(at, format!("invalid dimensions D={d}, k={k}")));
    }
    let mean = Array1::from(r.f64_vec(d)?);
    let eigenvalues = r.f64_vec(k)?;
    let at = r.offset();
    let components = Array2::from_shape_vec((k, d), r.f64_vec(k * d)?)
        .map_err(|e| r.error_at(at, e.to_string()))?;
    r.finish()?;
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
    })
}
