use ndarray::Array2;
use rand::Rng;

use super::loss::{loss_gradient, modal_losses, LossConfig, TrainBatch};
use crate::error::{invalid, Result};
use crate::rng::{seeded, sub_seed};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub batches: usize,
    pub entries: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

/// Random batch with entries uniform in `[-1, 1]`.
pub fn random_batch(b: usize, d: usize, seed: u64) -> TrainBatch {
    let mut rng = seeded(seed);
    let mut m = || Array2::from_shape_fn((b, d), |_| rng.random_range(-1.0..1.0));
    TrainBatch {
        q_t1: m(),
        q_t2: m(),
        r_t1: m(),
        r_t2: m(),
    }
}

fn slot(batch: &mut TrainBatch, k: usize) -> &mut Array2<f64> {
    match k {
        0 => &mut batch.q_t1,
        1 => &mut batch.q_t2,
        2 => &mut batch.r_t1,
        _ => &mut batch.r_t2,
    }
}

/// Relative error `|a - n| / max(|a|, |n|)`, taken as the absolute error
/// when both magnitudes are below `floor`.
pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    let diff = (a - n).abs();
    if scale < floor {
        diff
    } else {
        diff / scale
    }
}

/// Checks every entry of every input matrix of `batches` random batches.
pub fn gradient_check(
    batches: usize,
    b: usize,
    d: usize,
    step: f64,
    cfg: &LossConfig,
    seed: u64,
) -> Result<GradCheckReport> {
    if batches == 0 || b == 0 || d == 0 {
        return Err(invalid("gradient check needs at least one batch, item and dimension"));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid("finite-difference step must be > 0"));
    }
    let mut report = GradCheckReport {
        batches,
        entries: 0,
        max_abs_error: 0.0,
        max_rel_error: 0.0,
    };
    for t in 0..batches {
        let batch = random_batch(b, d, sub_seed(seed, t as u64));
        let mut g = loss_gradient(&batch, cfg)?;
        for k in 0..4 {
            let analytic = slot_of_grad(&mut g, k).clone();
            for i in 0..b {
                for j in 0..d {
                    let mut plus = batch.clone();
                    slot(&mut plus, k)[[i, j]] += step;
                    let mut minus = batch.clone();
                    slot(&mut minus, k)[[i, j]] -= step;
                    let numeric = (modal_losses(&plus, cfg)?.total - modal_losses(&minus, cfg)?.total)
                        / (2.0 * step);
                    let a = analytic[[i, j]];
                    report.entries += 1;
                    report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
                    report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric, 1e-6));
                }
            }
        }
    }
    Ok(report)
}

fn slot_of_grad(g: &mut super::loss::BatchGradient, k: usize) -> &mut Array2<f64> {
    match k {
        0 => &mut g.q_t1,
        1 => &mut g.q_t2,
        2 => &mut g.r_t1,
        _ => &mut g.r_t2,
    }
}
