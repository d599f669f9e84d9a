//! Symmetric contrastive alignment of the tactile encoder to frozen targets.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::embed::EmbeddingSource;
use crate::encoder::{backward, directional_check_regimes, encode, init_params, random_check_instance, Activation, EncoderParams};
use crate::error::{Error, Result};
use crate::geometry::pose::AUGMENT_SHIFT_MM;
use crate::geometry::{SensorSpec, TactilePointCloud};
use crate::rng::derive_seed;

pub const JITTER_SIGMA_MM: f64 = 0.02;

/// Loss value plus gradients of a contrastive term.
#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub loss: f64,
    /// Gradient with respect to the trainable side, `B × D`.
    pub grad_a: DMatrix<f64>,
    pub grad_log_tau: f64,
}

/// Max and log of the shifted exponential sum, kept apart so that
/// `x - max - ln_sum` does not lose the small terms to rounding.
fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    (m, v.map(|x| (x - m).exp()).sum::<f64>().ln())
}

fn log_softmax(x: f64, (m, ln_sum): (f64, f64)) -> f64 {
    (x - m) - ln_sum
}

/// Mean symmetric cross-entropy of `S = A Bᵀ / τ` with matched pairs on the
/// diagonal. `b` is frozen and gets no gradient.
pub fn contrastive_loss(a: &DMatrix<f64>, b: &DMatrix<f64>, tau: f64) -> Result<ContrastiveOutput> {
    let n = a.nrows();
    if n < 2 || b.nrows() != n || a.ncols() != b.ncols() {
        return Err(Error::Contract(format!(
            "contrastive loss needs two equal batches of at least 2 rows, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if !(tau.is_finite() && tau > 0.0) || a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite contrastive loss input".into()));
    }
    let s = a * b.transpose() / tau;
    let row_lse: Vec<(f64, f64)> = (0..n).map(|i| log_sum_exp(s.row(i).iter().copied())).collect();
    let col_lse: Vec<(f64, f64)> = (0..n).map(|j| log_sum_exp(s.column(j).iter().copied())).collect();

    let scale = 1.0 / (2.0 * n as f64);
    let mut loss = 0.0;
    for i in 0..n {
        loss -= log_softmax(s[(i, i)], row_lse[i]) + log_softmax(s[(i, i)], col_lse[i]);
    }
    loss *= scale;

    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let eye = if i == j { 1.0 } else { 0.0 };
            let p_row = log_softmax(s[(i, j)], row_lse[i]).exp();
            let p_col = log_softmax(s[(i, j)], col_lse[j]).exp();
            g[(i, j)] = scale * ((p_row - eye) + (p_col - eye));
        }
    }
    let grad_a = &g * b / tau;
    let grad_log_tau = -g.component_mul(&s).sum();
    Ok(ContrastiveOutput { loss, grad_a, grad_log_tau })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_t2l: f64,
    pub l_t2i: f64,
    pub total: f64,
    pub tau: f64,
}

fn rows_to_matrix<T: Float>(rows: &[impl AsRef<[T]>]) -> DMatrix<f64> {
    let d = rows[0].as_ref().len();
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i].as_ref()[j].to_f64().unwrap())
}

/// Both alignment terms for one batch and the gradient of their sum with
/// respect to every encoder parameter and the temperature. With
/// `image_loss` off, the image term is reported as zero.
pub fn total_loss<T: Float + Send + Sync>(
    params: &EncoderParams<T>,
    clouds: &[&[[T; 3]]],
    text: &[&[f32]],
    image: &[&[f32]],
    image_loss: bool,
) -> Result<(LossBreakdown, EncoderParams<T>)> {
    let n = clouds.len();
    if text.len() != n || image.len() != n {
        return Err(Error::Contract("batch modalities differ in size".into()));
    }
    let encoded = clouds
        .par_iter()
        .map(|c| encode(params, c, Activation::Relu))
        .collect::<Result<Vec<_>>>()?;
    let f_t = rows_to_matrix(&encoded.iter().map(|(e, _)| e.as_slice()).collect::<Vec<_>>());
    let tau = params.tau().to_f64().unwrap();

    let t2l = contrastive_loss(&f_t, &rows_to_matrix(text), tau)?;
    let mut grad_rows = t2l.grad_a.clone();
    let mut grad_log_tau = t2l.grad_log_tau;
    let mut l_t2i = 0.0;
    if image_loss {
        let t2i = contrastive_loss(&f_t, &rows_to_matrix(image), tau)?;
        grad_rows += &t2i.grad_a;
        grad_log_tau += t2i.grad_log_tau;
        l_t2i = t2i.loss;
    }

    let per_sample = encoded
        .par_iter()
        .enumerate()
        .map(|(i, (_, trace))| {
            let g: Vec<T> = grad_rows.row(i).iter().map(|v| T::from(*v).unwrap()).collect();
            backward(trace, params, &g)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = EncoderParams::<T>::zeros(params.dim);
    for g in &per_sample {
        grads.add_scaled(T::one(), g);
    }
    grads.log_tau = T::from(grad_log_tau).unwrap();

    let breakdown = LossBreakdown { l_t2l: t2l.loss, l_t2i, total: t2l.loss + l_t2i, tau };
    Ok((breakdown, grads))
}

/// Adam with bias correction, applied to every tensor and the temperature.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: EncoderParams<f32>,
    v: EncoderParams<f32>,
}

impl Adam {
    pub fn new(dim: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            step: 0,
            m: EncoderParams::zeros(dim),
            v: EncoderParams::zeros(dim),
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams<f32>, grads: &EncoderParams<f32>) {
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let lr = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        let update = |p: &mut f32, g: f32, m: &mut f32, v: &mut f32| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * *m / (v.sqrt() + eps);
        };
        let gs = grads.weights();
        let ms = self.m.weights_mut();
        let vs = self.v.weights_mut();
        for (((p, g), m), v) in params.weights_mut().into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..p.len() {
                update(&mut p[i], g[i], &mut m[i], &mut v[i]);
            }
        }
        update(&mut params.log_tau, grads.log_tau, &mut self.m.log_tau, &mut self.v.log_tau);
        params.clamp_tau();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub dim: usize,
    pub image_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 30,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            dim: crate::embed::DEFAULT_DIM,
            image_loss: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::Config("invalid optimizer hyperparameters".into()));
        }
        Ok(())
    }
}

/// Encoder inputs and frozen targets for a set of samples.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub ids: Vec<String>,
    pub clouds: Vec<Vec<[f32; 3]>>,
    pub text: Vec<Vec<f32>>,
    pub image: Vec<Vec<f32>>,
}

impl TrainingSet {
    pub fn from_dataset(ds: &Dataset, source: &EmbeddingSource, sensor: &SensorSpec) -> Result<Self> {
        let targets = ds
            .rows
            .par_iter()
            .zip(&ds.images)
            .map(|(row, img)| {
                let t = source.text(&row.id, &row.description)?;
                let i = source.image(&row.id, img)?;
                Ok((t.into_vec(), i.into_vec()))
            })
            .collect::<Result<Vec<_>>>()?;
        let (text, image) = targets.into_iter().unzip();
        Ok(Self {
            ids: ds.rows.iter().map(|r| r.id.clone()).collect(),
            clouds: ds.clouds.iter().map(|c| c.normalized(sensor)).collect(),
            text,
            image,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_t2l: f64,
    pub l_t2i: f64,
    pub total: f64,
    pub tau: f64,
    /// Median total over the epoch's batches.
    pub median_total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub init: EncoderParams<f32>,
    pub params: EncoderParams<f32>,
    pub history: Vec<EpochRecord>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trains from `start` (or a fresh initialization from the seed) with
/// seeded shuffling, Adam steps and temperature clamping.
pub fn train(set: &TrainingSet, cfg: &TrainConfig, start: Option<EncoderParams<f32>>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if set.len() < cfg.batch_size {
        return Err(Error::Data(format!(
            "{} training samples is fewer than one batch of {}",
            set.len(),
            cfg.batch_size
        )));
    }
    let dim = set.text[0].len();
    let init = match start {
        Some(p) => {
            if p.dim != dim {
                return Err(Error::Shape(format!(
                    "encoder width {} does not match target width {dim}",
                    p.dim
                )));
            }
            p
        }
        None => init_params(derive_seed(cfg.seed, "init"), dim)?,
    };
    let mut params = init.clone();
    let mut adam = Adam::new(dim, cfg);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let shuffle_seed = derive_seed(cfg.seed, "shuffle");
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut totals = Vec::new();
        for batch in order.chunks(cfg.batch_size).filter(|b| b.len() >= 2) {
            let clouds: Vec<&[[f32; 3]]> = batch.iter().map(|&i| set.clouds[i].as_slice()).collect();
            let text: Vec<&[f32]> = batch.iter().map(|&i| set.text[i].as_slice()).collect();
            let image: Vec<&[f32]> = batch.iter().map(|&i| set.image[i].as_slice()).collect();
            let (loss, grads) = total_loss(&params, &clouds, &text, &image, cfg.image_loss)
                .map_err(|e| Error::Data(format!("batch starting at {}: {e}", set.ids[batch[0]])))?;
            adam.step(&mut params, &grads);
            sums.0 += loss.l_t2l;
            sums.1 += loss.l_t2i;
            sums.2 += loss.total;
            totals.push(loss.total);
        }
        if !params.is_finite() {
            return Err(Error::Data(format!("parameters diverged in epoch {epoch}")));
        }
        let nb = totals.len() as f64;
        let rec = EpochRecord {
            epoch,
            l_t2l: sums.0 / nb,
            l_t2i: sums.1 / nb,
            total: sums.2 / nb,
            tau: params.tau() as f64,
            median_total: median(&mut totals),
        };
        log::info!(
            "epoch {epoch}: l_t2l {:.4} l_t2i {:.4} total {:.4} tau {:.4}",
            rec.l_t2l,
            rec.l_t2i,
            rec.total,
            rec.tau
        );
        history.push(rec);
    }
    Ok(TrainOutcome { init, params, history })
}

pub fn loss_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,l_t2l,l_t2i,total,tau\n");
    for r in history {
        s.push_str(&format!(
            "{},{:.8},{:.8},{:.8},{:.8}\n",
            r.epoch, r.l_t2l, r.l_t2i, r.total, r.tau
        ));
    }
    s
}

pub fn write_loss_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    fs::write(path, loss_csv(history)).map_err(|e| Error::file(path, e))
}

/// Worst relative error between the analytic gradient of the summed
/// objective and central differences, on a random batch of `batch` clouds
/// of `points` points with `dim`-wide random unit targets.
pub fn full_loss_check(seed: u64, batch: usize, dim: usize, points: usize, eps: f64) -> Result<f64> {
    let (params, _, _) = random_check_instance(seed, dim, points)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "full-loss-check"));
    let clouds: Vec<Vec<[f64; 3]>> = (0..batch)
        .map(|_| {
            (0..points)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect()
        })
        .collect();
    let mut unit_rows = || -> Vec<Vec<f32>> {
        (0..batch)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| (x / n) as f32).collect()
            })
            .collect()
    };
    let (text, image) = (unit_rows(), unit_rows());
    let cl: Vec<&[[f64; 3]]> = clouds.iter().map(|c| c.as_slice()).collect();
    let tr: Vec<&[f32]> = text.iter().map(|v| v.as_slice()).collect();
    let ir: Vec<&[f32]> = image.iter().map(|v| v.as_slice()).collect();
    let (_, grads) = total_loss(&params, &cl, &tr, &ir, true)?;
    let objective = |q: &EncoderParams<f64>| {
        let loss = total_loss(q, &cl, &tr, &ir, true).map(|(l, _)| l.total).unwrap_or(f64::NAN);
        let regime = cl
            .iter()
            .flat_map(|c| encode(q, c, Activation::Relu).map(|(_, t)| t.regime()).unwrap_or_default())
            .collect();
        (loss, regime)
    };
    Ok(directional_check_regimes(&params, &grads, objective, eps, true, derive_seed(seed, "directions")))
}

/// Cloud-level augmentation switches. Resampling to `num_points` always
/// happens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudAugment {
    pub num_points: usize,
    pub translate: bool,
    pub rotate: bool,
    pub jitter: bool,
}

fn clamp_point(p: [f64; 3], sensor: &SensorSpec) -> [f32; 3] {
    let (hw, hh) = (sensor.width_mm / 2.0, sensor.height_mm / 2.0);
    [
        p[0].clamp(-hw, hw) as f32,
        p[1].clamp(-hh, hh) as f32,
        p[2].clamp(0.0, sensor.max_depth_mm) as f32,
    ]
}

/// Rotates a cloud about the sensor normal through the gel center.
pub fn rotate_cloud(cloud: &TactilePointCloud, angle: f64, sensor: &SensorSpec) -> TactilePointCloud {
    let (s, c) = angle.sin_cos();
    TactilePointCloud::new(
        cloud
            .points
            .iter()
            .map(|p| {
                let (x, y) = (p[0] as f64, p[1] as f64);
                clamp_point([c * x - s * y, s * x + c * y, p[2] as f64], sensor)
            })
            .collect(),
    )
}

/// Shifts a cloud in-plane, shrinking the shift so no point leaves the gel.
pub fn translate_cloud(cloud: &TactilePointCloud, dx: f64, dy: f64, sensor: &SensorSpec) -> TactilePointCloud {
    let (hw, hh) = (sensor.width_mm / 2.0, sensor.height_mm / 2.0);
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &cloud.points {
        lo_x = lo_x.min(p[0] as f64);
        hi_x = hi_x.max(p[0] as f64);
        lo_y = lo_y.min(p[1] as f64);
        hi_y = hi_y.max(p[1] as f64);
    }
    let dx = dx.clamp(-hw - lo_x, hw - hi_x);
    let dy = dy.clamp(-hh - lo_y, hh - hi_y);
    TactilePointCloud::new(
        cloud
            .points
            .iter()
            .map(|p| clamp_point([p[0] as f64 + dx, p[1] as f64 + dy, p[2] as f64], sensor))
            .collect(),
    )
}

/// Resample with replacement, translate, rotate, then jitter.
pub fn augment_cloud(
    cloud: &TactilePointCloud,
    rng: &mut impl Rng,
    sensor: &SensorSpec,
    aug: CloudAugment,
) -> TactilePointCloud {
    if cloud.is_empty() {
        return cloud.clone();
    }
    let mut out = TactilePointCloud::new(
        (0..aug.num_points)
            .map(|_| cloud.points[rng.random_range(0..cloud.len())])
            .collect(),
    );
    if aug.translate {
        let dx = rng.random_range(-AUGMENT_SHIFT_MM..=AUGMENT_SHIFT_MM);
        let dy = rng.random_range(-AUGMENT_SHIFT_MM..=AUGMENT_SHIFT_MM);
        out = translate_cloud(&out, dx, dy, sensor);
    }
    if aug.rotate {
        out = rotate_cloud(&out, rng.random_range(-PI..=PI), sensor);
    }
    if aug.jitter {
        let noise = Normal::new(0.0, JITTER_SIGMA_MM).unwrap();
        for p in out.points.iter_mut() {
            let q = [
                p[0] as f64 + noise.sample(rng),
                p[1] as f64 + noise.sample(rng),
                p[2] as f64 + noise.sample(rng),
            ];
            *p = clamp_point(q, sensor);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::bucket_position;
    use crate::vocab::PositionCat;

    fn random_unit_rows(rng: &mut ChaCha8Rng, b: usize, d: usize) -> DMatrix<f64> {
        let mut m = DMatrix::from_fn(b, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        for mut r in m.row_iter_mut() {
            let n = r.norm();
            r /= n;
        }
        m
    }

    /// Direct evaluation of the symmetric loss from its definition.
    fn brute_loss(a: &DMatrix<f64>, b: &DMatrix<f64>, tau: f64) -> f64 {
        let n = a.nrows();
        let s = |i: usize, j: usize| a.row(i).dot(&b.row(j)) / tau;
        let mut total = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| s(i, j).exp()).sum();
            let col: f64 = (0..n).map(|j| s(j, i).exp()).sum();
            total += (s(i, i).exp() / row).ln() + (s(i, i).exp() / col).ln();
        }
        -total / (2.0 * n as f64)
    }

    #[test]
    fn aligned_orthonormal_pairs_saturate() {
        let a = DMatrix::<f64>::identity(8, 8);
        let out = contrastive_loss(&a, &a, 0.01).unwrap();
        assert!(out.loss < 1e-10);
    }

    #[test]
    fn duplicate_positives_give_ln2() {
        for tau in [0.01, 0.07, 0.5, 1.0] {
            let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
            assert_eq!(contrastive_loss(&a, &a, tau).unwrap().loss, std::f64::consts::LN_2);
        }
    }

    #[test]
    fn matches_direct_evaluation_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_unit_rows(&mut rng, 6, 5);
        let b = random_unit_rows(&mut rng, 6, 5);
        let tau = 0.3;
        let out = contrastive_loss(&a, &b, tau).unwrap();
        assert!((out.loss - brute_loss(&a, &b, tau)).abs() < 1e-12);
        let h = 1e-6;
        for (i, j) in [(0, 0), (3, 2), (5, 4)] {
            let mut p = a.clone();
            let mut m = a.clone();
            p[(i, j)] += h;
            m[(i, j)] -= h;
            let fd = (brute_loss(&p, &b, tau) - brute_loss(&m, &b, tau)) / (2.0 * h);
            assert!((fd - out.grad_a[(i, j)]).abs() < 1e-7);
        }
        let fd = (brute_loss(&a, &b, tau * h.exp()) - brute_loss(&a, &b, tau * (-h).exp())) / (2.0 * h);
        assert!((fd - out.grad_log_tau).abs() < 1e-7);
    }

    #[test]
    fn symmetric_under_joint_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_unit_rows(&mut rng, 10, 6);
        let perm = [3, 1, 4, 0, 9, 2, 6, 5, 8, 7];
        let p = DMatrix::from_fn(10, 6, |i, j| a[(perm[i], j)]);
        let l1 = contrastive_loss(&a, &a, 0.1).unwrap().loss;
        let l2 = contrastive_loss(&p, &p, 0.1).unwrap().loss;
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let a = DMatrix::from_element(1, 3, 0.5);
        assert!(contrastive_loss(&a, &a, 0.1).is_err());
        let mut b = DMatrix::<f64>::identity(3, 3);
        b[(0, 0)] = f64::NAN;
        assert!(matches!(contrastive_loss(&b, &b, 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn full_objective_gradient() {
        for seed in 0..10 {
            let err = full_loss_check(seed, 4, 16, 32, 1e-4).unwrap();
            assert!(err < 1e-3, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn identical_targets_give_identical_terms() {
        let (p, pts, _) = random_check_instance(3, 16, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Vec<Vec<f32>> = (0..3)
            .map(|_| random_unit_rows(&mut rng, 1, 16).iter().map(|v| *v as f32).collect())
            .collect();
        let tr: Vec<&[f32]> = t.iter().map(|v| v.as_slice()).collect();
        let cl = vec![pts.as_slice(); 3];
        let (l, _) = total_loss(&p, &cl, &tr, &tr, true).unwrap();
        assert_eq!(l.l_t2l, l.l_t2i);
        assert!((l.total - (l.l_t2l + l.l_t2i)).abs() < 1e-9);
        let (l, g) = total_loss(&p, &cl, &tr, &tr, false).unwrap();
        assert_eq!(l.l_t2i, 0.0);
        assert!(g.is_finite());
    }

    #[test]
    fn augmentation_contracts() {
        let s = SensorSpec::default();
        let cloud = TactilePointCloud::new(vec![[1.0, 2.0, 0.5], [-3.0, 0.5, 1.5], [9.0, -7.0, 0.1]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let off = CloudAugment { num_points: 3, translate: false, rotate: false, jitter: false };
        let out = augment_cloud(&cloud, &mut rng, &s, off);
        assert_eq!(out.len(), 3);
        assert!(out.points.iter().all(|p| cloud.points.contains(p)));

        let flipped = rotate_cloud(&cloud, PI, &s);
        for (a, b) in cloud.points.iter().zip(&flipped.points) {
            assert!((a[0] + b[0]).abs() < 1e-6 && (a[1] + b[1]).abs() < 1e-6);
            assert_eq!(a[2], b[2]);
        }

        let all = CloudAugment { num_points: 500, translate: true, rotate: true, jitter: true };
        for _ in 0..20 {
            assert!(augment_cloud(&cloud, &mut rng, &s, all).in_bounds(&s));
        }
    }

    #[test]
    fn translated_peak_moves_one_cell() {
        let s = SensorSpec::default();
        let peak = TactilePointCloud::new(vec![[0.0, 0.0, 1.0], [0.3, 0.2, 0.4], [-0.2, -0.3, 0.5]]);
        let deepest = |c: &TactilePointCloud| {
            let p = c.points.iter().max_by(|a, b| a[2].total_cmp(&b[2])).unwrap();
            bucket_position([p[0] as f64, p[1] as f64], &s).unwrap()
        };
        assert_eq!(deepest(&peak), PositionCat::Center);
        let moved = translate_cloud(&peak, 5.0, 0.0, &s);
        assert_eq!(deepest(&moved), PositionCat::MiddleRight);
        let moved = translate_cloud(&peak, 0.0, -4.0, &s);
        assert_eq!(deepest(&moved), PositionCat::BottomCenter);
    }
}
