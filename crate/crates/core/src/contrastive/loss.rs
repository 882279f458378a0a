use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Re-normalize the averaged embeddings before the cross-modal term.
    pub renormalize_average: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            lambda1: 1.0,
            lambda2: 1.0,
            renormalize_average: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid(format!("temperature must be > 0, got {}", self.tau)));
        }
        if !(self.lambda1.is_finite() && self.lambda2.is_finite()) {
            return Err(invalid("loss weights must be finite"));
        }
        Ok(())
    }
}

pub fn l2_normalize(v: ArrayView1<f64>) -> Result<Array1<f64>> {
    let n = v.dot(&v).sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.mapv(|x| x / n))
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}

/// InfoNCE for query `z` whose positive is row `positive` of `bank`.
/// Rows of `bank` and `z` are expected to be unit vectors.
pub fn infonce(z: ArrayView1<f64>, positive: usize, bank: ArrayView2<f64>, tau: f64) -> f64 {
    let logits: Vec<f64> = bank.rows().into_iter().map(|h| z.dot(&h) / tau).collect();
    (log_sum_exp(&logits) - logits[positive]).max(0.0)
}

/// Raw (unnormalized) embeddings of one mini-batch, each `B x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub q_t1: Array2<f64>,
    pub q_t2: Array2<f64>,
    pub r_t1: Array2<f64>,
    pub r_t2: Array2<f64>,
}

impl TrainBatch {
    pub fn new(q_t1: Array2<f64>, q_t2: Array2<f64>, r_t1: Array2<f64>, r_t2: Array2<f64>) -> Result<Self> {
        let dim = q_t1.dim();
        for m in [&q_t2, &r_t1, &r_t2] {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "training batch shapes",
                    expected: dim.0 * dim.1,
                    actual: m.len(),
                });
            }
        }
        if dim.0 == 0 {
            return Err(invalid("batch must contain at least one item"));
        }
        Ok(Self { q_t1, q_t2, r_t1, r_t2 })
    }

    pub fn batch_size(&self) -> usize {
        self.q_t1.nrows()
    }

    pub fn dim(&self) -> usize {
        self.q_t1.ncols()
    }

    /// Swaps the two augmentation slots of every item.
    pub fn swapped(&self) -> Self {
        Self {
            q_t1: self.q_t2.clone(),
            q_t2: self.q_t1.clone(),
            r_t1: self.r_t2.clone(),
            r_t2: self.r_t1.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModalLosses {
    pub pano: f64,
    pub map: f64,
    pub cross: f64,
    pub total: f64,
}

/// Gradients of the total loss w.r.t. the raw batch embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub q_t1: Array2<f64>,
    pub q_t2: Array2<f64>,
    pub r_t1: Array2<f64>,
    pub r_t2: Array2<f64>,
}

struct Normalized {
    unit: Array2<f64>,
    norms: Array1<f64>,
}

fn normalize_rows(x: &Array2<f64>) -> Result<Normalized> {
    let norms: Array1<f64> = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if norms.iter().any(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::ZeroVector);
    }
    let unit = x / &norms.view().insert_axis(Axis(1));
    Ok(Normalized { unit, norms })
}

/// Back-propagates `g` (w.r.t. `u = x / |x|`) to `x`.
fn normalize_backward(g: &Array2<f64>, n: &Normalized) -> Array2<f64> {
    let mut out = g.clone();
    Zip::from(out.rows_mut())
        .and(n.unit.rows())
        .and(&n.norms)
        .for_each(|mut o, u, &norm| {
            let proj = u.dot(&o);
            o.zip_mut_with(&u, |ov, &uv| *ov = (*ov - proj * uv) / norm);
        });
    out
}

/// `(1/2B) sum_i [l(z_i; H) + l(h_i; Z)]` together with its gradients
/// w.r.t. `Z` and `H`.
fn symmetric_pair(z: &Array2<f64>, h: &Array2<f64>, tau: f64) -> (f64, Array2<f64>, Array2<f64>) {
    let b = z.nrows();
    let scale = 1.0 / (2.0 * b as f64);
    let sim = z.dot(&h.t()) / tau;
    let mut gz = Array2::zeros(z.dim());
    let mut gh = Array2::zeros(h.dim());
    let mut loss = 0.0;
    // rows: z_i against bank H; columns: h_i against bank Z
    for dir in 0..2 {
        for i in 0..b {
            let logits: Vec<f64> = if dir == 0 {
                sim.row(i).to_vec()
            } else {
                sim.column(i).to_vec()
            };
            let lse = log_sum_exp(&logits);
            loss += lse - logits[i];
            let p: Vec<f64> = logits.iter().map(|&l| (l - lse).exp()).collect();
            let (query, bank, gq, gb) = if dir == 0 {
                (z, h, &mut gz, &mut gh)
            } else {
                (h, z, &mut gh, &mut gz)
            };
            let coef = scale / tau;
            for k in 0..b {
                let w = p[k] - if k == i { 1.0 } else { 0.0 };
                if w == 0.0 {
                    continue;
                }
                gq.row_mut(i).scaled_add(coef * w, &bank.row(k));
                gb.row_mut(k).scaled_add(coef * w, &query.row(i));
            }
        }
    }
    (loss * scale, gz, gh)
}

fn combine(cfg: &LossConfig, pano: f64, map: f64, cross: f64) -> ModalLosses {
    ModalLosses {
        pano,
        map,
        cross,
        total: pano + cfg.lambda1 * map + cfg.lambda2 * cross,
    }
}

/// Intra-modal (panorama, map) and cross-modal InfoNCE terms plus their
/// weighted total.
pub fn modal_losses(batch: &TrainBatch, cfg: &LossConfig) -> Result<ModalLosses> {
    Ok(loss_and_gradient(batch, cfg)?.0)
}

/// Gradient of the total loss w.r.t. every raw embedding in the batch.
pub fn loss_gradient(batch: &TrainBatch, cfg: &LossConfig) -> Result<BatchGradient> {
    Ok(loss_and_gradient(batch, cfg)?.1)
}

pub fn loss_and_gradient(batch: &TrainBatch, cfg: &LossConfig) -> Result<(ModalLosses, BatchGradient)> {
    cfg.validate()?;
    let nq1 = normalize_rows(&batch.q_t1)?;
    let nq2 = normalize_rows(&batch.q_t2)?;
    let nr1 = normalize_rows(&batch.r_t1)?;
    let nr2 = normalize_rows(&batch.r_t2)?;

    let (pano, mut gq1, mut gq2) = symmetric_pair(&nq1.unit, &nq2.unit, cfg.tau);
    let (map, gr1, gr2) = symmetric_pair(&nr1.unit, &nr2.unit, cfg.tau);
    let mut gr1 = gr1 * cfg.lambda1;
    let mut gr2 = gr2 * cfg.lambda1;

    let q_mean = (&nq1.unit + &nq2.unit) * 0.5;
    let r_mean = (&nr1.unit + &nr2.unit) * 0.5;
    let (cross, gq_avg, gr_avg) = if cfg.renormalize_average {
        let nq = normalize_rows(&q_mean)?;
        let nr = normalize_rows(&r_mean)?;
        let (c, gq, gr) = symmetric_pair(&nq.unit, &nr.unit, cfg.tau);
        (c, normalize_backward(&gq, &nq), normalize_backward(&gr, &nr))
    } else {
        symmetric_pair(&q_mean, &r_mean, cfg.tau)
    };
    let half = 0.5 * cfg.lambda2;
    gq1.scaled_add(half, &gq_avg);
    gq2.scaled_add(half, &gq_avg);
    gr1.scaled_add(half, &gr_avg);
    gr2.scaled_add(half, &gr_avg);

    let grads = BatchGradient {
        q_t1: normalize_backward(&gq1, &nq1),
        q_t2: normalize_backward(&gq2, &nq2),
        r_t1: normalize_backward(&gr1, &nr1),
        r_t2: normalize_backward(&gr2, &nr2),
    };
    Ok((combine(cfg, pano, map, cross), grads))
}
