//! Zero-shot prompt classification, frozen-feature probes and reports.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::embed::{EmbeddingSource, EmbeddingVector};
use crate::encoder::{encode, Activation, EncoderParams};
use crate::error::{Error, Result};
use crate::geometry::SensorSpec;
use crate::label::Categories;
use crate::rng::derive_seed;
use crate::train::{train, TrainConfig, TrainingSet};
use crate::vocab::Dimension;

pub const PROBE_HIDDEN: usize = 128;

/// Index of the most similar prompt. Prompts are unit vectors, so the dot
/// product ranks like cosine; the earliest class wins a tie.
pub fn zero_shot_classify(f: &[f32], prompts: &[EmbeddingVector]) -> Result<usize> {
    if prompts.is_empty() {
        return Err(Error::Contract("empty prompt set".into()));
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, p) in prompts.iter().enumerate() {
        let s = crate::embed::dot(f, p.as_slice());
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    Ok(best)
}

/// One embedded prompt per class for each dimension, in vocabulary order.
#[derive(Debug, Clone)]
pub struct PromptSet {
    prompts: Vec<Vec<EmbeddingVector>>,
}

impl PromptSet {
    pub fn from_source(source: &EmbeddingSource) -> Result<Self> {
        let prompts = Dimension::ALL
            .iter()
            .map(|&d| d.words().into_iter().map(|w| source.prompt(d, w)).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        Ok(Self { prompts })
    }

    pub fn get(&self, dim: Dimension) -> &[EmbeddingVector] {
        &self.prompts[dim as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionReport {
    pub dimension: Dimension,
    pub correct: usize,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl DimensionReport {
    fn new(dimension: Dimension) -> Self {
        let c = dimension.num_classes();
        Self { dimension, correct: 0, confusion: vec![vec![0; c]; c] }
    }

    fn record(&mut self, truth: usize, predicted: usize) {
        self.confusion[truth][predicted] += 1;
        if truth == predicted {
            self.correct += 1;
        }
    }

    pub fn n(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Percent correct.
    pub fn accuracy(&self) -> f64 {
        let n = self.n();
        if n == 0 {
            return 0.0;
        }
        100.0 * self.correct as f64 / n as f64
    }

    pub fn trace(&self) -> usize {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotReport {
    pub n: usize,
    pub dims: Vec<DimensionReport>,
}

impl ZeroShotReport {
    pub fn get(&self, dim: Dimension) -> &DimensionReport {
        &self.dims[dim as usize]
    }

    pub fn accuracy(&self, dim: Dimension) -> f64 {
        self.get(dim).accuracy()
    }
}

/// Classifies every embedding on all five dimensions.
pub fn zero_shot_report(embeddings: &[Vec<f32>], truth: &[Categories], prompts: &PromptSet) -> Result<ZeroShotReport> {
    if embeddings.len() != truth.len() {
        return Err(Error::Contract("embeddings and labels differ in count".into()));
    }
    let predictions = embeddings
        .par_iter()
        .map(|f| Dimension::ALL.iter().map(|&d| zero_shot_classify(f, prompts.get(d))).collect())
        .collect::<Result<Vec<Vec<usize>>>>()?;
    let mut dims: Vec<_> = Dimension::ALL.iter().map(|&d| DimensionReport::new(d)).collect();
    for (pred, c) in predictions.iter().zip(truth) {
        for (k, &d) in Dimension::ALL.iter().enumerate() {
            dims[k].record(c.class_index(d), pred[k]);
        }
    }
    Ok(ZeroShotReport { n: truth.len(), dims })
}

/// What produces tactile embeddings at evaluation time.
#[derive(Debug, Clone)]
pub enum EvalEncoder<'a> {
    Trained(&'a EncoderParams<f32>),
    /// Returns each sample's own text embedding.
    Oracle(&'a EmbeddingSource),
}

pub fn encode_clouds(params: &EncoderParams<f32>, clouds: &[Vec<[f32; 3]>]) -> Result<Vec<Vec<f32>>> {
    clouds
        .par_iter()
        .map(|c| encode(params, c, Activation::Relu).map(|(e, _)| e))
        .collect()
}

pub fn embed_dataset(encoder: &EvalEncoder, ds: &Dataset, sensor: &SensorSpec) -> Result<Vec<Vec<f32>>> {
    match encoder {
        EvalEncoder::Trained(p) => {
            let clouds: Vec<_> = ds.clouds.iter().map(|c| c.normalized(sensor)).collect();
            encode_clouds(p, &clouds)
        }
        EvalEncoder::Oracle(source) => ds
            .rows
            .par_iter()
            .map(|r| source.text(&r.id, &r.description).map(EmbeddingVector::into_vec))
            .collect(),
    }
}

/// Fails if any evaluation id was also used for training.
pub fn check_disjoint(train_ids: &[String], eval_ids: &[String]) -> Result<()> {
    let seen: HashSet<&str> = train_ids.iter().map(String::as_str).collect();
    match eval_ids.iter().find(|id| seen.contains(id.as_str())) {
        Some(id) => Err(Error::Data(format!("evaluation sample {id} is part of the training split"))),
        None => Ok(()),
    }
}

pub fn eval_zero_shot(ds: &Dataset, encoder: &EvalEncoder, prompts: &PromptSet, sensor: &SensorSpec) -> Result<ZeroShotReport> {
    let emb = embed_dataset(encoder, ds, sensor)?;
    let truth: Vec<Categories> = ds.rows.iter().map(|r| r.categories()).collect();
    zero_shot_report(&emb, &truth, prompts)
}

/// Rows of `dimension,accuracy,n`, accuracy in percent.
pub fn report_csv(rows: impl IntoIterator<Item = (Dimension, f64, usize)>) -> String {
    let mut s = String::from("dimension,accuracy,n\n");
    for (d, acc, n) in rows {
        s.push_str(&format!("{},{:.1},{}\n", d.name(), acc, n));
    }
    s
}

pub fn confusion_csv(report: &DimensionReport) -> String {
    let mut s = report.dimension.words().join(",");
    s.push('\n');
    for row in &report.confusion {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Writes `report.csv` and one `confusion_<dimension>.csv` per dimension.
pub fn write_zero_shot_report(dir: &Path, report: &ZeroShotReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let rows = report.dims.iter().map(|d| (d.dimension, d.accuracy(), d.n()));
    let path = dir.join("report.csv");
    fs::write(&path, report_csv(rows)).map_err(|e| Error::file(&path, e))?;
    for d in &report.dims {
        let path = dir.join(format!("confusion_{}.csv", d.dimension.name()));
        fs::write(&path, confusion_csv(d)).map_err(|e| Error::file(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 64, learning_rate: 1e-3, seed: 0 }
    }
}

/// Two-layer classifier on frozen embeddings. Weights are input-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeHead {
    pub input: usize,
    pub classes: usize,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

impl ProbeHead {
    pub fn init(input: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |fan_in: usize, n: usize| -> Vec<f32> {
            let a = (6.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-a..a) as f32).collect()
        };
        Self {
            input,
            classes,
            w1: he(input, input * PROBE_HIDDEN),
            b1: vec![0.0; PROBE_HIDDEN],
            w2: he(PROBE_HIDDEN, PROBE_HIDDEN * classes),
            b2: vec![0.0; classes],
        }
    }

    fn hidden(&self, x: &[f32]) -> Vec<f32> {
        let mut h = self.b1.clone();
        for (i, xi) in x.iter().enumerate() {
            let row = &self.w1[i * PROBE_HIDDEN..(i + 1) * PROBE_HIDDEN];
            for (hj, w) in h.iter_mut().zip(row) {
                *hj += xi * w;
            }
        }
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        h
    }

    fn logits(&self, h: &[f32]) -> Vec<f32> {
        let mut out = self.b2.clone();
        for (j, hj) in h.iter().enumerate() {
            let row = &self.w2[j * self.classes..(j + 1) * self.classes];
            for (o, w) in out.iter_mut().zip(row) {
                *o += hj * w;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.w2, &self.b2].iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Highest logit, earliest class on ties.
    pub fn predict(&self, x: &[f32]) -> usize {
        let logits = self.logits(&self.hidden(x));
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        best
    }

    /// Mean cross-entropy gradient over a batch.
    fn gradient(&self, xs: &[&[f32]], ys: &[usize]) -> [Vec<f32>; 4] {
        let c = self.classes;
        let mut g = [
            vec![0.0; self.w1.len()],
            vec![0.0; PROBE_HIDDEN],
            vec![0.0; self.w2.len()],
            vec![0.0; c],
        ];
        let scale = 1.0 / xs.len() as f32;
        for (x, &y) in xs.iter().zip(ys) {
            let h = self.hidden(x);
            let logits = self.logits(&h);
            let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = logits.iter().map(|v| (v - m).exp()).collect();
            let z: f32 = exps.iter().sum();
            let dl: Vec<f32> = exps
                .iter()
                .enumerate()
                .map(|(k, e)| scale * (e / z - if k == y { 1.0 } else { 0.0 }))
                .collect();
            let mut dh = vec![0.0; PROBE_HIDDEN];
            for j in 0..PROBE_HIDDEN {
                let row = &self.w2[j * c..(j + 1) * c];
                for k in 0..c {
                    g[2][j * c + k] += h[j] * dl[k];
                    dh[j] += row[k] * dl[k];
                }
                if h[j] <= 0.0 {
                    dh[j] = 0.0;
                }
            }
            for k in 0..c {
                g[3][k] += dl[k];
            }
            for j in 0..PROBE_HIDDEN {
                g[1][j] += dh[j];
            }
            for (i, xi) in x.iter().enumerate() {
                for j in 0..PROBE_HIDDEN {
                    g[0][i * PROBE_HIDDEN + j] += xi * dh[j];
                }
            }
        }
        g
    }
}

/// Trains a probe head with Adam on fixed features.
pub fn train_probe(features: &[Vec<f32>], labels: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<ProbeHead> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Contract("probe needs one label per feature row".into()));
    }
    if labels.iter().any(|&l| l >= classes) {
        return Err(Error::Contract("probe label out of range".into()));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::DegenerateData(format!("all probe samples belong to class {}", labels[0])));
    }
    let mut head = ProbeHead::init(features[0].len(), classes, derive_seed(cfg.seed, "probe-init"));
    let sizes = [head.w1.len(), head.b1.len(), head.w2.len(), head.b2.len()];
    let mut m: Vec<Vec<f32>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    let mut v = m.clone();
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let mut step = 0;
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "probe-shuffle"));
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let xs: Vec<&[f32]> = batch.iter().map(|&i| features[i].as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let grads = head.gradient(&xs, &ys);
            step += 1;
            let c1 = 1.0 - b1.powi(step);
            let c2 = 1.0 - b2.powi(step);
            let lr = (cfg.learning_rate * c2.sqrt() / c1) as f32;
            let e = (eps * c2.sqrt()) as f32;
            let params = [&mut head.w1, &mut head.b1, &mut head.w2, &mut head.b2];
            for (t, p) in params.into_iter().enumerate() {
                for i in 0..p.len() {
                    let g = grads[t][i];
                    m[t][i] = b1 as f32 * m[t][i] + (1.0 - b1 as f32) * g;
                    v[t][i] = b2 as f32 * v[t][i] + (1.0 - b2 as f32) * g * g;
                    p[i] -= lr * m[t][i] / (v[t][i].sqrt() + e);
                }
            }
        }
    }
    if !head.is_finite() {
        return Err(Error::Data("probe training diverged".into()));
    }
    Ok(head)
}

/// Percent of rows the head classifies correctly.
pub fn eval_probe(head: &ProbeHead, features: &[Vec<f32>], labels: &[usize]) -> f64 {
    if features.is_empty() {
        return 0.0;
    }
    let correct = features.iter().zip(labels).filter(|(x, &y)| head.predict(x) == y).count();
    100.0 * correct as f64 / features.len() as f64
}

/// Trains a probe per dimension and reports held-out accuracy for each.
pub fn probe_all(
    train_features: &[Vec<f32>],
    train_truth: &[Categories],
    test_features: &[Vec<f32>],
    test_truth: &[Categories],
    cfg: &ProbeConfig,
) -> Result<Vec<(Dimension, f64, usize)>> {
    Dimension::ALL
        .iter()
        .map(|&d| {
            let y: Vec<usize> = train_truth.iter().map(|c| c.class_index(d)).collect();
            let head = train_probe(train_features, &y, d.num_classes(), cfg)?;
            let yt: Vec<usize> = test_truth.iter().map(|c| c.class_index(d)).collect();
            Ok((d, eval_probe(&head, test_features, &yt), test_features.len()))
        })
        .collect()
}

/// Paired reports from two runs that differ only in the image term.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub full: ZeroShotReport,
    pub text_only: ZeroShotReport,
}

impl AblationReport {
    /// Full minus text-only accuracy, in points.
    pub fn gap(&self, dim: Dimension) -> f64 {
        self.full.accuracy(dim) - self.text_only.accuracy(dim)
    }
}

pub fn ablation_no_image(
    train_set: &TrainingSet,
    test_clouds: &[Vec<[f32; 3]>],
    test_truth: &[Categories],
    prompts: &PromptSet,
    cfg: &TrainConfig,
) -> Result<AblationReport> {
    let run = |image_loss: bool| -> Result<ZeroShotReport> {
        let cfg = TrainConfig { image_loss, ..cfg.clone() };
        let out = train(train_set, &cfg, None)?;
        zero_shot_report(&encode_clouds(&out.params, test_clouds)?, test_truth, prompts)
    };
    Ok(AblationReport { full: run(true)?, text_only: run(false)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::FrozenSpace;
    use crate::encoder::init_params;
    use crate::vocab::{AreaCat, DepthCat, PositionCat, Shape, Texture};
    use rand_distr::StandardNormal;

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| (x / n) as f32).collect()
    }

    #[test]
    fn classify_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p: Vec<EmbeddingVector> = (0..4).map(|_| EmbeddingVector::from_f32(&unit(&mut rng, 16)).unwrap()).collect();
        assert_eq!(zero_shot_classify(p[2].as_slice(), &p).unwrap(), 2);
        let twins = vec![p[1].clone(), p[1].clone()];
        assert_eq!(zero_shot_classify(p[1].as_slice(), &twins).unwrap(), 0);
        assert!(matches!(zero_shot_classify(p[0].as_slice(), &[]), Err(Error::Contract(_))));
        let scaled: Vec<f32> = p[3].as_slice().iter().map(|v| v * 7.5).collect();
        assert_eq!(zero_shot_classify(&scaled, &p).unwrap(), 3);
    }

    #[test]
    fn matches_brute_force_over_orthogonal_prompts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 16;
        let prompts: Vec<EmbeddingVector> = (0..9)
            .map(|i| {
                let mut v = vec![0.0f32; d];
                v[i] = 1.0;
                EmbeddingVector::from_f32(&v).unwrap()
            })
            .collect();
        for _ in 0..100 {
            let f = unit(&mut rng, d);
            let scores: Vec<f32> = (0..9).map(|i| f[i]).collect();
            let expect = (0..9).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
            assert_eq!(zero_shot_classify(&f, &prompts).unwrap(), expect);
        }
    }

    fn random_truth(rng: &mut ChaCha8Rng, n: usize) -> Vec<Categories> {
        (0..n)
            .map(|_| Categories {
                shape: Shape::ALL[rng.random_range(0..Shape::ALL.len())],
                texture: Texture::ALL[rng.random_range(0..Texture::ALL.len())],
                depth: DepthCat::ALL[rng.random_range(0..DepthCat::ALL.len())],
                position: PositionCat::ALL[rng.random_range(0..PositionCat::ALL.len())],
                area: AreaCat::ALL[rng.random_range(0..AreaCat::ALL.len())],
            })
            .collect()
    }

    #[test]
    fn oracle_embeddings_score_perfectly() {
        let space = FrozenSpace::new(1, 64, SensorSpec::default()).unwrap();
        let prompts = PromptSet::from_source(&EmbeddingSource::Synthetic(space.clone())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = random_truth(&mut rng, 200);
        let emb: Vec<Vec<f32>> = truth.iter().map(|c| space.embed_categories(c).unwrap().into_vec()).collect();
        let report = zero_shot_report(&emb, &truth, &prompts).unwrap();
        for d in &report.dims {
            assert_eq!(d.accuracy(), 100.0);
            assert_eq!(d.trace(), d.correct);
            for (k, row) in d.confusion.iter().enumerate() {
                let support = truth.iter().filter(|c| c.class_index(d.dimension) == k).count();
                assert_eq!(row.iter().sum::<usize>(), support);
            }
        }
        let csv = report_csv(report.dims.iter().map(|d| (d.dimension, d.accuracy(), d.n())));
        assert!(csv.starts_with("dimension,accuracy,n\nshape,100.0,200\n"));
        let conf = confusion_csv(report.get(Dimension::Depth));
        assert_eq!(conf.lines().count(), 5);
    }

    #[test]
    fn random_encoder_is_near_chance_on_position() {
        let space = FrozenSpace::new(1, 64, SensorSpec::default()).unwrap();
        let prompts = PromptSet::from_source(&EmbeddingSource::Synthetic(space)).unwrap();
        let params = init_params(9, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let clouds: Vec<Vec<[f32; 3]>> = (0..500)
            .map(|_| (0..64).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect())
            .collect();
        let truth = random_truth(&mut rng, 500);
        let report = zero_shot_report(&encode_clouds(&params, &clouds).unwrap(), &truth, &prompts).unwrap();
        let acc = report.accuracy(Dimension::Position);
        assert!((5.0..=25.0).contains(&acc), "{acc}");
    }

    #[test]
    fn disjointness() {
        let a = vec!["s1".to_string(), "s2".to_string()];
        assert!(check_disjoint(&a, &["s3".to_string()]).is_ok());
        assert!(matches!(check_disjoint(&a, &["s2".to_string()]), Err(Error::Data(_))));
    }

    fn separable(n: usize, classes: usize, d: usize) -> (Vec<Vec<f32>>, Vec<usize>) {
        let y: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let x = y
            .iter()
            .map(|&c| {
                let mut v = vec![0.0; d];
                v[c] = 1.0;
                v
            })
            .collect();
        (x, y)
    }

    #[test]
    fn probe_separates_one_hot_classes() {
        let (x, y) = separable(300, 5, 16);
        let head = train_probe(&x, &y, 5, &ProbeConfig { seed: 3, ..Default::default() }).unwrap();
        assert_eq!(eval_probe(&head, &x, &y), 100.0);
    }

    #[test]
    fn probe_null_update_and_degenerate() {
        let (x, y) = separable(100, 4, 16);
        let cfg = ProbeConfig { learning_rate: 0.0, seed: 1, ..Default::default() };
        let head = train_probe(&x, &y, 4, &cfg).unwrap();
        let fresh = ProbeHead::init(16, 4, derive_seed(1, "probe-init"));
        assert_eq!(head, fresh);
        assert_eq!(eval_probe(&head, &x, &y), eval_probe(&fresh, &x, &y));
        let same = vec![2; 100];
        assert!(matches!(train_probe(&x, &same, 4, &cfg), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn probe_is_deterministic() {
        let (x, y) = separable(120, 3, 8);
        let cfg = ProbeConfig { epochs: 3, seed: 11, ..Default::default() };
        assert_eq!(train_probe(&x, &y, 3, &cfg).unwrap(), train_probe(&x, &y, 3, &cfg).unwrap());
    }
}
