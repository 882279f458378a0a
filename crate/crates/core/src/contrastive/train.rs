use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::loss::{loss_and_gradient, LossConfig, ModalLosses, TrainBatch};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{invalid, Error, Result};
use crate::rng::seeded;
use crate::synthcity::PairedFeatures;

const CHECKPOINT_MAGIC: &[u8; 4] = b"LENC";
const CHECKPOINT_VERSION: u16 = 1;

/// Parameters of one linear encoder: `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearMap {
    fn random(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-bound..bound)),
            bias: Array1::zeros(outputs),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    /// Applies the map to every row of `x`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weight.ncols() {
            return Err(Error::DimensionMismatch {
                context: "encoder input",
                expected: self.weight.ncols(),
                actual: x.ncols(),
            });
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    first: [LinearMap; 2],
    second: [LinearMap; 2],
    step: u64,
}

/// Ground-view and map-view linear encoders with their optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoderPair {
    pub ground: LinearMap,
    pub map: LinearMap,
    moments: Moments,
}

impl LinearEncoderPair {
    /// Uniform `±1/sqrt(in)` initialization. With `shared_init` (and equal
    /// input widths) both encoders start from the same matrix.
    pub fn new(
        ground_inputs: usize,
        map_inputs: usize,
        dim: usize,
        seed: u64,
        shared_init: bool,
    ) -> Result<Self> {
        if ground_inputs == 0 || map_inputs == 0 || dim == 0 {
            return Err(invalid("encoder dimensions must be >= 1"));
        }
        let mut rng = seeded(seed);
        let ground = LinearMap::random(ground_inputs, dim, &mut rng);
        let map = if shared_init && ground_inputs == map_inputs {
            ground.clone()
        } else {
            LinearMap::random(map_inputs, dim, &mut rng)
        };
        Ok(Self::from_maps(ground, map))
    }

    pub fn from_maps(ground: LinearMap, map: LinearMap) -> Self {
        let moments = Moments {
            first: [ground.zeros_like(), map.zeros_like()],
            second: [ground.zeros_like(), map.zeros_like()],
            step: 0,
        };
        Self { ground, map, moments }
    }

    pub fn dim(&self) -> usize {
        self.ground.weight.nrows()
    }

    pub fn embed_ground(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.ground.forward(x)
    }

    pub fn embed_map(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.map.forward(x)
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.moments.step
    }

    fn adam_step(&mut self, grads: [LinearMap; 2], cfg: &TrainConfig) {
        let m = &mut self.moments;
        m.step += 1;
        let t = m.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let params = [&mut self.ground, &mut self.map];
        for (((p, g), m1), m2) in params
            .into_iter()
            .zip(grads)
            .zip(m.first.iter_mut())
            .zip(m.second.iter_mut())
        {
            let g_all = g.weight.iter().chain(g.bias.iter());
            for (((pv, gv), a), b) in p.params_mut().zip(g_all).zip(m1.params_mut()).zip(m2.params_mut()) {
                *a = cfg.beta1 * *a + (1.0 - cfg.beta1) * gv;
                *b = cfg.beta2 * *b + (1.0 - cfg.beta2) * gv * gv;
                *pv -= cfg.lr * (*a / c1) / ((*b / c2).sqrt() + cfg.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Gaussian feature jitter applied independently to each augmented view.
    pub jitter_sigma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-4,
            batch: 32,
            jitter_sigma: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

/// Mean losses over the mini-batches of one epoch. Epoch 0 is an evaluation
/// pass before any update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub losses: ModalLosses,
}

fn jittered(x: ArrayView2<f64>, noise: Option<&Normal<f64>>, rng: &mut impl Rng) -> Array2<f64> {
    let mut out = x.to_owned();
    if let Some(n) = noise {
        out.mapv_inplace(|v| v + n.sample(rng));
    }
    out
}

/// Mini-batch training of both encoders on the total contrastive loss.
pub fn toy_train(
    data: &PairedFeatures,
    enc: &mut LinearEncoderPair,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLoss>> {
    cfg.loss.validate()?;
    if cfg.batch == 0 {
        return Err(invalid("batch size must be >= 1"));
    }
    let n = data.len();
    if n < 2 * cfg.batch {
        return Err(invalid(format!(
            "training needs at least {} samples, got {n}",
            2 * cfg.batch
        )));
    }
    if !(cfg.lr >= 0.0 && cfg.jitter_sigma >= 0.0) {
        return Err(invalid("learning rate and jitter must be >= 0"));
    }
    let noise = if cfg.jitter_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.jitter_sigma).map_err(|e| invalid(e.to_string()))?)
    } else {
        None
    };
    let mut rng = seeded(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs + 1);

    for epoch in 0..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = ModalLosses::default();
        let mut batches = 0usize;
        for (bi, idx) in order.chunks_exact(cfg.batch).enumerate() {
            let g = data.ground.select(Axis(0), idx);
            let m = data.map.select(Axis(0), idx);
            let g1 = jittered(g.view(), noise.as_ref(), &mut rng);
            let g2 = jittered(g.view(), noise.as_ref(), &mut rng);
            let m1 = jittered(m.view(), noise.as_ref(), &mut rng);
            let m2 = jittered(m.view(), noise.as_ref(), &mut rng);
            let batch = TrainBatch::new(
                enc.embed_ground(g1.view())?,
                enc.embed_ground(g2.view())?,
                enc.embed_map(m1.view())?,
                enc.embed_map(m2.view())?,
            )?;
            let (losses, grads) = loss_and_gradient(&batch, &cfg.loss)?;
            if !losses.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    value: losses.total,
                });
            }
            sum.pano += losses.pano;
            sum.map += losses.map;
            sum.cross += losses.cross;
            sum.total += losses.total;
            batches += 1;
            if epoch == 0 {
                continue;
            }
            let ground_grad = LinearMap {
                weight: grads.q_t1.t().dot(&g1) + grads.q_t2.t().dot(&g2),
                bias: grads.q_t1.sum_axis(Axis(0)) + grads.q_t2.sum_axis(Axis(0)),
            };
            let map_grad = LinearMap {
                weight: grads.r_t1.t().dot(&m1) + grads.r_t2.t().dot(&m2),
                bias: grads.r_t1.sum_axis(Axis(0)) + grads.r_t2.sum_axis(Axis(0)),
            };
            enc.adam_step([ground_grad, map_grad], cfg);
        }
        let k = batches as f64;
        trace.push(EpochLoss {
            epoch,
            losses: ModalLosses {
                pano: sum.pano / k,
                map: sum.map / k,
                cross: sum.cross / k,
                total: sum.total / k,
            },
        });
    }
    Ok(trace)
}

/// `epoch,L_pano,L_map,L_cross,L_total` with a header row.
pub fn loss_trace_csv(trace: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,L_pano,L_map,L_cross,L_total\n");
    for e in trace {
        let l = e.losses;
        s.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9}\n",
            e.epoch, l.pano, l.map, l.cross, l.total
        ));
    }
    s
}

/// Checkpoint layout: magic `LENC`, version `u16`, ground inputs `u32`, map
/// inputs `u32`, embedding dim `u32`, then `f32` ground weight, ground bias,
/// map weight, map bias. Optimizer state is not stored.
pub fn encode_checkpoint(enc: &LinearEncoderPair) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.u32(enc.ground.weight.ncols() as u32);
    w.u32(enc.map.weight.ncols() as u32);
    w.u32(enc.dim() as u32);
    for m in [&enc.ground, &enc.map] {
        for v in m.weight.iter().chain(m.bias.iter()) {
            w.f32(*v);
        }
    }
    w.finish()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<LinearEncoderPair> {
    let mut r = ByteReader::new(bytes, "encoder checkpoint");
    r.magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.error_at(at, format!("unsupported version {version}")));
    }
    let fq = r.u32()? as usize;
    let fr = r.u32()? as usize;
    let at = r.offset();
    let d = r.u32()? as usize;
    if fq == 0 || fr == 0 || d == 0 {
        return Err(r.error_at(at, "zero dimension"));
    }
    let mut read_map = |inputs: usize| -> Result<LinearMap> {
        let at = r.offset();
        let weight = Array2::from_shape_vec((d, inputs), r.f32_vec(d * inputs)?)
            .map_err(|e| r.error_at(at, e.to_string()))?;
        let bias = Array1::from(r.f32_vec(d)?);
        Ok(LinearMap { weight, bias })
    };
    let ground = read_map(fq)?;
    let map = read_map(fr)?;
    r.finish()?;
    Ok(LinearEncoderPair::from_maps(ground, map))
}
