//! Point-set encoder: a shared per-point network, channel-wise max pooling,
//! a small head and L2 normalization, with an exact hand-written backward
//! pass.
//!
//! Weights are stored input-major (`w[i * out + o]`).

use std::path::Path;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::formats::{self, Tensor};

pub const POINT_HIDDEN: usize = 64;
pub const POINT_FEATURES: usize = 128;
pub const HEAD_HIDDEN: usize = 128;
pub const INIT_TAU: f64 = 0.07;
pub const TAU_MIN: f64 = 0.01;
pub const TAU_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Linear units, used to check gradients without kinks.
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Float>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn passes<T: Float>(self, z: T) -> bool {
        match self {
            Activation::Relu => z > T::zero(),
            Activation::Identity => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T = f32> {
    pub dim: usize,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
    pub w3: Vec<T>,
    pub b3: Vec<T>,
    pub w4: Vec<T>,
    pub b4: Vec<T>,
    pub log_tau: T,
}

pub const TENSOR_NAMES: [&str; 9] = ["w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4", "log_tau"];

fn tensor_dims(name: &str, dim: usize) -> Vec<u32> {
    let d = |v: &[usize]| v.iter().map(|&x| x as u32).collect();
    match name {
        "w1" => d(&[3, POINT_HIDDEN]),
        "b1" => d(&[POINT_HIDDEN]),
        "w2" => d(&[POINT_HIDDEN, POINT_FEATURES]),
        "b2" => d(&[POINT_FEATURES]),
        "w3" => d(&[POINT_FEATURES, HEAD_HIDDEN]),
        "b3" => d(&[HEAD_HIDDEN]),
        "w4" => d(&[HEAD_HIDDEN, dim]),
        "b4" => d(&[dim]),
        _ => Vec::new(),
    }
}

impl<T: Float> EncoderParams<T> {
    pub fn zeros(dim: usize) -> Self {
        let z = |n: usize| vec![T::zero(); n];
        Self {
            dim,
            w1: z(3 * POINT_HIDDEN),
            b1: z(POINT_HIDDEN),
            w2: z(POINT_HIDDEN * POINT_FEATURES),
            b2: z(POINT_FEATURES),
            w3: z(POINT_FEATURES * HEAD_HIDDEN),
            b3: z(HEAD_HIDDEN),
            w4: z(HEAD_HIDDEN * dim),
            b4: z(dim),
            log_tau: T::zero(),
        }
    }

    pub fn tau(&self) -> T {
        self.log_tau.exp()
    }

    /// Keeps the temperature within its allowed range.
    pub fn clamp_tau(&mut self) {
        let lo = T::from(TAU_MIN.ln()).unwrap();
        let hi = T::from(TAU_MAX.ln()).unwrap();
        self.log_tau = self.log_tau.max(lo).min(hi);
    }

    /// Weight tensors in `TENSOR_NAMES` order, without `log_tau`.
    pub fn weights(&self) -> [&[T]; 8] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3, &self.w4, &self.b4]
    }

    pub fn weights_mut(&mut self) -> [&mut Vec<T>; 8] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
            &mut self.w4,
            &mut self.b4,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.weights().iter().map(|w| w.len()).sum::<usize>() + 1
    }

    /// `self += a * other`, including `log_tau`.
    pub fn add_scaled(&mut self, a: T, other: &Self) {
        for (dst, src) in self.weights_mut().into_iter().zip(other.weights()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *d + a * *s;
            }
        }
        self.log_tau = self.log_tau + a * other.log_tau;
    }

    pub fn is_finite(&self) -> bool {
        self.weights().iter().all(|w| w.iter().all(|v| v.is_finite())) && self.log_tau.is_finite()
    }

    pub fn cast<U: Float>(&self) -> EncoderParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from(*x).unwrap()).collect::<Vec<U>>();
        EncoderParams {
            dim: self.dim,
            w1: c(&self.w1),
            b1: c(&self.b1),
            w2: c(&self.w2),
            b2: c(&self.b2),
            w3: c(&self.w3),
            b3: c(&self.b3),
            w4: c(&self.w4),
            b4: c(&self.b4),
            log_tau: U::from(self.log_tau).unwrap(),
        }
    }
}

/// Fan-in scaled uniform weights, zero biases, temperature 0.07.
pub fn init_params(seed: u64, dim: usize) -> Result<EncoderParams<f32>> {
    if dim < 8 {
        return Err(Error::Config(format!("embedding width must be at least 8, got {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = EncoderParams::<f32>::zeros(dim);
    let fan_in = [3, POINT_HIDDEN, POINT_FEATURES, HEAD_HIDDEN];
    for (w, n) in [&mut p.w1, &mut p.w2, &mut p.w3, &mut p.w4].into_iter().zip(fan_in) {
        let bound = (6.0 / n as f64).sqrt();
        for v in w.iter_mut() {
            *v = rng.random_range(-bound..bound) as f32;
        }
    }
    p.log_tau = (INIT_TAU as f32).ln();
    Ok(p)
}

impl EncoderParams<f32> {
    pub fn to_tensors(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = TENSOR_NAMES[..8]
            .iter()
            .zip(self.weights())
            .map(|(name, w)| Tensor {
                name: name.to_string(),
                dims: tensor_dims(name, self.dim),
                data: w.to_vec(),
            })
            .collect();
        out.push(Tensor { name: "log_tau".into(), dims: Vec::new(), data: vec![self.log_tau] });
        out
    }

    /// Rebuilds parameters from named tensors. With `expect_dim`, a
    /// checkpoint of another output width is rejected.
    pub fn from_tensors(tensors: &[Tensor], expect_dim: Option<usize>) -> Result<Self> {
        let find = |name: &str| {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))
        };
        let b4 = find("b4")?;
        if b4.dims.len() != 1 {
            return Err(Error::Format("tensor b4 must have rank 1".into()));
        }
        let dim = b4.dims[0] as usize;
        if let Some(want) = expect_dim {
            if want != dim {
                return Err(Error::Shape(format!(
                    "checkpoint has embedding width {dim}, configuration expects {want}"
                )));
            }
        }
        let mut p = Self::zeros(dim);
        for (name, dst) in TENSOR_NAMES[..8].iter().zip(p.weights_mut()) {
            let t = find(name)?;
            let want = tensor_dims(name, dim);
            if t.dims != want || t.data.len() != t.numel() {
                return Err(Error::Shape(format!(
                    "tensor {name} has dims {:?}, expected {want:?}",
                    t.dims
                )));
            }
            dst.copy_from_slice(&t.data);
        }
        let lt = find("log_tau")?;
        if !lt.dims.is_empty() || lt.data.len() != 1 {
            return Err(Error::Shape("log_tau must be a scalar".into()));
        }
        p.log_tau = lt.data[0];
        Ok(p)
    }
}

pub fn save_checkpoint(params: &EncoderParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    formats::write_checkpoint(path, &params.to_tensors())
}

pub fn load_checkpoint(path: impl AsRef<Path>, expect_dim: Option<usize>) -> Result<EncoderParams<f32>> {
    EncoderParams::from_tensors(&formats::read_checkpoint(path)?, expect_dim)
}

/// Cached state of one forward pass. Only the points that win at least one
/// pooled channel are kept, which is all the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub activation: Activation,
    /// Winning point index for every pooled channel.
    pub argmax: Vec<u32>,
    /// Distinct winning points in increasing index order.
    pub winners: Vec<u32>,
    /// Per winner: input, first-layer and second-layer pre-activations.
    pub inputs: Vec<[T; 3]>,
    pub z1: Vec<Vec<T>>,
    pub z2: Vec<Vec<T>>,
    /// Slot in `winners` for every pooled channel.
    pub slot: Vec<u32>,
    pub pooled: Vec<T>,
    pub z3: Vec<T>,
    pub out: Vec<T>,
    pub norm: T,
    pub embedding: Vec<T>,
}

impl<T: Float> ForwardTrace<T> {
    /// Which side of every pooling and rectifier kink this pass sits on.
    /// Two passes with equal regimes lie on one smooth piece of the network.
    pub fn regime(&self) -> Vec<u32> {
        let sign = |v: &T| (*v > T::zero()) as u32;
        let mut r = self.argmax.clone();
        r.extend(&self.winners);
        r.extend(self.z1.iter().flatten().map(sign));
        r.extend(self.z2.iter().flatten().map(sign));
        r.extend(self.z3.iter().map(sign));
        r
    }
}

#[inline]
fn affine_into<T: Float>(x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let n = b.len();
    out.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        if xi != T::zero() {
            let row = &w[i * n..(i + 1) * n];
            for (o, &wv) in out.iter_mut().zip(row) {
                *o = *o + xi * wv;
            }
        }
    }
}

fn point_stage<T: Float>(
    p: &EncoderParams<T>,
    x: &[T; 3],
    act: Activation,
    z1: &mut [T],
    h1: &mut [T],
    z2: &mut [T],
) {
    affine_into(x, &p.w1, &p.b1, z1);
    for (h, z) in h1.iter_mut().zip(z1.iter()) {
        *h = act.apply(*z);
    }
    affine_into(h1, &p.w2, &p.b2, z2);
}

fn head<T: Float>(p: &EncoderParams<T>, pooled: &[T], act: Activation) -> (Vec<T>, Vec<T>, T, Vec<T>) {
    let mut z3 = vec![T::zero(); HEAD_HIDDEN];
    affine_into(pooled, &p.w3, &p.b3, &mut z3);
    let a3: Vec<T> = z3.iter().map(|z| act.apply(*z)).collect();
    let mut out = vec![T::zero(); p.dim];
    affine_into(&a3, &p.w4, &p.b4, &mut out);
    let norm = out.iter().fold(T::zero(), |s, v| s + *v * *v).sqrt();
    let emb = out.iter().map(|v| *v / norm).collect();
    (z3, out, norm, emb)
}

/// Encodes a normalized point set into a unit vector.
pub fn encode<T: Float>(
    params: &EncoderParams<T>,
    points: &[[T; 3]],
    act: Activation,
) -> Result<(Vec<T>, ForwardTrace<T>)> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut z1 = vec![T::zero(); POINT_HIDDEN];
    let mut h1 = vec![T::zero(); POINT_HIDDEN];
    let mut z2 = vec![T::zero(); POINT_FEATURES];
    let mut pooled = vec![T::neg_infinity(); POINT_FEATURES];
    let mut argmax = vec![0u32; POINT_FEATURES];
    for (n, x) in points.iter().enumerate() {
        point_stage(params, x, act, &mut z1, &mut h1, &mut z2);
        for c in 0..POINT_FEATURES {
            let h = act.apply(z2[c]);
            if h > pooled[c] {
                pooled[c] = h;
                argmax[c] = n as u32;
            }
        }
    }

    let mut winners = argmax.clone();
    winners.sort_unstable();
    winners.dedup();
    let slot = argmax
        .iter()
        .map(|a| winners.binary_search(a).unwrap() as u32)
        .collect();
    let mut inputs = Vec::with_capacity(winners.len());
    let mut z1s = Vec::with_capacity(winners.len());
    let mut z2s = Vec::with_capacity(winners.len());
    for &n in &winners {
        let x = points[n as usize];
        point_stage(params, &x, act, &mut z1, &mut h1, &mut z2);
        inputs.push(x);
        z1s.push(z1.clone());
        z2s.push(z2.clone());
    }

    let (z3, out, norm, embedding) = head(params, &pooled, act);
    if !(norm.is_finite() && norm > T::zero()) {
        return Err(Error::Contract("encoder output has zero or non-finite norm".into()));
    }
    let trace = ForwardTrace {
        activation: act,
        argmax,
        winners,
        inputs,
        z1: z1s,
        z2: z2s,
        slot,
        pooled,
        z3,
        out,
        norm,
        embedding: embedding.clone(),
    };
    Ok((embedding, trace))
}

impl<T: Float> ForwardTrace<T> {
    /// Recomputes the embedding from the cached winners alone.
    pub fn replay(&self, params: &EncoderParams<T>) -> Vec<T> {
        let act = self.activation;
        let mut z1 = vec![T::zero(); POINT_HIDDEN];
        let mut h1 = vec![T::zero(); POINT_HIDDEN];
        let mut z2 = vec![T::zero(); POINT_FEATURES];
        let mut rows = Vec::with_capacity(self.winners.len());
        for x in &self.inputs {
            point_stage(params, x, act, &mut z1, &mut h1, &mut z2);
            rows.push(z2.clone());
        }
        let pooled: Vec<T> = (0..POINT_FEATURES)
            .map(|c| act.apply(rows[self.slot[c] as usize][c]))
            .collect();
        head(params, &pooled, act).3
    }
}

/// Gradient of `⟨grad_out, embedding⟩` with respect to every weight. The
/// `log_tau` entry of the result is zero.
pub fn backward<T: Float>(
    trace: &ForwardTrace<T>,
    params: &EncoderParams<T>,
    grad_out: &[T],
) -> Result<EncoderParams<T>> {
    let d = params.dim;
    if grad_out.len() != d || trace.embedding.len() != d {
        return Err(Error::Contract(format!(
            "gradient width {} does not match embedding width {d}",
            grad_out.len()
        )));
    }
    let act = trace.activation;
    let mut g = EncoderParams::<T>::zeros(d);

    // Through the normalization: (I - f fᵀ) / ‖o‖.
    let f = &trace.embedding;
    let proj = f.iter().zip(grad_out).fold(T::zero(), |s, (a, b)| s + *a * *b);
    let d_out: Vec<T> = f
        .iter()
        .zip(grad_out)
        .map(|(fi, gi)| (*gi - *fi * proj) / trace.norm)
        .collect();

    let a3: Vec<T> = trace.z3.iter().map(|z| act.apply(*z)).collect();
    let mut d_a3 = vec![T::zero(); HEAD_HIDDEN];
    for j in 0..HEAD_HIDDEN {
        let row = &params.w4[j * d..(j + 1) * d];
        let grow = &mut g.w4[j * d..(j + 1) * d];
        let mut acc = T::zero();
        for k in 0..d {
            grow[k] = a3[j] * d_out[k];
            acc = acc + row[k] * d_out[k];
        }
        d_a3[j] = acc;
    }
    g.b4.copy_from_slice(&d_out);

    let d_z3: Vec<T> = (0..HEAD_HIDDEN)
        .map(|j| if act.passes(trace.z3[j]) { d_a3[j] } else { T::zero() })
        .collect();
    let mut d_pool = vec![T::zero(); POINT_FEATURES];
    for i in 0..POINT_FEATURES {
        let row = &params.w3[i * HEAD_HIDDEN..(i + 1) * HEAD_HIDDEN];
        let grow = &mut g.w3[i * HEAD_HIDDEN..(i + 1) * HEAD_HIDDEN];
        let mut acc = T::zero();
        for j in 0..HEAD_HIDDEN {
            grow[j] = trace.pooled[i] * d_z3[j];
            acc = acc + row[j] * d_z3[j];
        }
        d_pool[i] = acc;
    }
    g.b3.copy_from_slice(&d_z3);

    // Route pooled gradients to the winning points.
    let mut d_z2 = vec![vec![T::zero(); POINT_FEATURES]; trace.winners.len()];
    for c in 0..POINT_FEATURES {
        let s = trace.slot[c] as usize;
        if act.passes(trace.z2[s][c]) {
            d_z2[s][c] = d_pool[c];
        }
    }

    for (s, dz2) in d_z2.iter().enumerate() {
        let z1 = &trace.z1[s];
        let h1: Vec<T> = z1.iter().map(|z| act.apply(*z)).collect();
        let mut d_h1 = vec![T::zero(); POINT_HIDDEN];
        for j in 0..POINT_HIDDEN {
            let row = &params.w2[j * POINT_FEATURES..(j + 1) * POINT_FEATURES];
            let grow = &mut g.w2[j * POINT_FEATURES..(j + 1) * POINT_FEATURES];
            let mut acc = T::zero();
            for c in 0..POINT_FEATURES {
                grow[c] = grow[c] + h1[j] * dz2[c];
                acc = acc + row[c] * dz2[c];
            }
            d_h1[j] = acc;
        }
        for c in 0..POINT_FEATURES {
            g.b2[c] = g.b2[c] + dz2[c];
        }
        let x = &trace.inputs[s];
        for j in 0..POINT_HIDDEN {
            let dz1 = if act.passes(z1[j]) { d_h1[j] } else { T::zero() };
            for i in 0..3 {
                g.w1[i * POINT_HIDDEN + j] = g.w1[i * POINT_HIDDEN + j] + x[i] * dz1;
            }
            g.b1[j] = g.b1[j] + dz1;
        }
    }
    Ok(g)
}

fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Relative disagreement of an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares analytic directional derivatives of an objective with central
/// differences, one random direction per weight tensor (and `log_tau` when
/// `with_tau`). Returns the worst relative error.
pub fn directional_check(
    params: &EncoderParams<f64>,
    grad: &EncoderParams<f64>,
    objective: impl Fn(&EncoderParams<f64>) -> f64,
    eps: f64,
    with_tau: bool,
    seed: u64,
) -> f64 {
    directional_check_regimes(params, grad, |p| (objective(p), Vec::new()), eps, with_tau, seed)
}

/// Like [`directional_check`], for a piecewise-smooth objective that also
/// reports its kink regime. A direction whose `±eps` probes leave the
/// regime of `params` is redrawn, up to a fixed number of tries, since
/// central differences across a kink do not estimate the derivative.
pub fn directional_check_regimes(
    params: &EncoderParams<f64>,
    grad: &EncoderParams<f64>,
    objective: impl Fn(&EncoderParams<f64>) -> (f64, Vec<u32>),
    eps: f64,
    with_tau: bool,
    seed: u64,
) -> f64 {
    const TRIES: usize = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, base) = objective(params);
    let mut worst: f64 = 0.0;
    for t in 0..8 {
        let n = params.weights()[t].len();
        let mut err = f64::NAN;
        for _ in 0..TRIES {
            let u = random_direction(&mut rng, n);
            let analytic: f64 = grad.weights()[t].iter().zip(&u).map(|(g, d)| g * d).sum();
            let shifted = |sign: f64| {
                let mut p = params.clone();
                for (v, d) in p.weights_mut()[t].iter_mut().zip(&u) {
                    *v += sign * eps * d;
                }
                objective(&p)
            };
            let ((hi, r_hi), (lo, r_lo)) = (shifted(1.0), shifted(-1.0));
            err = relative_error(analytic, (hi - lo) / (2.0 * eps));
            if r_hi == base && r_lo == base {
                break;
            }
        }
        worst = worst.max(err);
    }
    if with_tau {
        let shifted = |sign: f64| {
            let mut p = params.clone();
            p.log_tau += sign * eps;
            objective(&p).0
        };
        let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
        worst = worst.max(relative_error(grad.log_tau, numeric));
    }
    worst
}

/// Checks the encoder gradient of `⟨embedding, probe⟩` at `eps`.
pub fn gradient_check(
    params: &EncoderParams<f64>,
    points: &[[f64; 3]],
    probe: &[f64],
    eps: f64,
    act: Activation,
) -> Result<f64> {
    let (_, trace) = encode(params, points, act)?;
    let grad = backward(&trace, params, probe)?;
    let objective = |p: &EncoderParams<f64>| {
        let (e, t) = encode(p, points, act).expect("perturbed encode");
        (e.iter().zip(probe).map(|(a, b)| a * b).sum::<f64>(), t.regime())
    };
    Ok(directional_check_regimes(params, &grad, objective, eps, false, 0x6c0d))
}

/// Random instance for gradient checking: parameters, points in the unit
/// cube and a probe vector.
pub fn random_check_instance(
    seed: u64,
    dim: usize,
    n_points: usize,
) -> Result<(EncoderParams<f64>, Vec<[f64; 3]>, Vec<f64>)> {
    let mut p = init_params(seed, dim)?.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for b in [&mut p.b1, &mut p.b2, &mut p.b3, &mut p.b4] {
        for v in b.iter_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    let points = (0..n_points)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let probe = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok((p, points, probe))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;

    fn cloud(seed: u64, n: usize) -> Vec<[f32; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    #[test]
    fn init_contract() {
        let a = init_params(1, 64).unwrap();
        assert_eq!(a, init_params(1, 64).unwrap());
        assert!(((a.tau() as f64) - 0.07).abs() < 1e-6);
        let (e, _) = encode(&a, &cloud(0, 10), Activation::Relu).unwrap();
        assert_eq!(e.len(), 64);
        assert!(init_params(1, 4).is_err());
    }

    #[test]
    fn permutation_and_duplication_invariance() {
        let p = init_params(2, 32).unwrap();
        let pts = cloud(3, 200);
        let (e, t) = encode(&p, &pts, Activation::Relu).unwrap();
        let norm: f64 = e.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(encode(&p, &shuffled, Activation::Relu).unwrap().0, e);
        let doubled: Vec<_> = pts.iter().chain(pts.iter()).copied().collect();
        assert_eq!(encode(&p, &doubled, Activation::Relu).unwrap().0, e);
        assert_eq!(t.replay(&p), e);
        assert!(matches!(encode(&p, &[], Activation::Relu), Err(Error::EmptyInput)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = init_params(5, 16).unwrap();
        let (_, t) = encode(&p, &cloud(1, 30), Activation::Relu).unwrap();
        let g = backward(&t, &p, &[0.0; 16]).unwrap();
        assert!(g.weights().iter().all(|w| w.iter().all(|v| *v == 0.0)));
        assert!(matches!(backward(&t, &p, &[0.0; 8]), Err(Error::Contract(_))));
    }

    #[test]
    fn gradient_check_passes() {
        let (p, pts, probe) = random_check_instance(0, 16, 32).unwrap();
        let e = gradient_check(&p, &pts, &probe, 1e-4, Activation::Relu).unwrap();
        assert!(e < 1e-4, "relative error {e}");
        let e2 = gradient_check(&p, &pts, &probe, 1e-4, Activation::Relu).unwrap();
        assert_eq!(e, e2);
        let lin = gradient_check(&p, &pts, &probe, 1e-4, Activation::Identity).unwrap();
        assert!(lin < 1e-7, "linear relative error {lin}");
    }

    #[test]
    fn dead_first_layer_unit_gets_no_gradient() {
        let (mut p, pts, probe) = random_check_instance(7, 16, 32).unwrap();
        // Unit 0 never fires; unit 1 always does.
        for i in 0..3 {
            p.w1[i * POINT_HIDDEN] = 0.0;
            p.w1[i * POINT_HIDDEN + 1] = 0.0;
        }
        p.b1[0] = -1.0;
        p.b1[1] = 1.0;
        let (_, t) = encode(&p, &pts, Activation::Relu).unwrap();
        let g = backward(&t, &p, &probe).unwrap();
        assert_eq!(g.b1[0], 0.0);
        assert!((0..3).all(|i| g.w1[i * POINT_HIDDEN] == 0.0));
        let fired = t.z1.iter().any(|z| z[1] > 0.0);
        assert!(fired && g.b1[1] != 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tclc");
        let p = init_params(9, 64).unwrap();
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path, Some(64)).unwrap(), p);
        assert!(matches!(load_checkpoint(&path, Some(32)), Err(Error::Shape(_))));
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(Error::Format(_))));
    }
}
