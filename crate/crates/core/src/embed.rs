//! Frozen text and image embedding functions.
//!
//! The synthetic space assigns every class of every dimension a fixed random
//! unit block. Text is embedded from the categories it names; depth images
//! are embedded from categories re-derived from the pixels plus a block of
//! shape descriptors that text cannot express. Both go through one fixed
//! orthonormal projection, so the two modalities are aligned by
//! construction. External vectors can be supplied through a store file
//! instead.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::formats::{self, StoreEntries};
use crate::geometry::{DepthImage, SensorSpec, CONTACT_EPS_MM};
use crate::label::{self, Categories};
use crate::vocab::Dimension;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_CODEBOOK_SEED: u64 = 0x7AC7_11E5;
pub const MAX_CLASS_COSINE: f64 = 0.5;
/// Scale of the image-only descriptor block relative to a category block.
pub const FINE_WEIGHT: f64 = 1.5;
/// Five attribute blocks plus the image-only block.
const BLOCKS: usize = 6;
const FINE_BLOCK: usize = 5;

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalizes `v`. Fails on a zero or non-finite vector.
    pub fn from_f64(v: &[f64]) -> Result<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Contract("cannot normalize a zero or non-finite vector".into()));
        }
        Ok(Self(v.iter().map(|x| (x / n) as f32).collect()))
    }

    pub fn from_f32(v: &[f32]) -> Result<Self> {
        Self::from_f64(&v.iter().map(|&x| x as f64).collect::<Vec<_>>())
    }

    /// Wraps values that are already unit-norm.
    pub(crate) fn from_unit(v: Vec<f32>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.0, &other.0)
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    dot(a, b) / (na * nb)
}

/// Fixed random class blocks and the shared projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeCodebook {
    pub seed: u64,
    pub dim: usize,
    pub block: usize,
    /// `classes[dimension][class]`, each a unit vector of length `block`.
    pub classes: Vec<Vec<Vec<f64>>>,
    /// `dim × 6·block` with orthonormal columns.
    pub projection: DMatrix<f64>,
}

impl AttributeCodebook {
    pub fn new(seed: u64, dim: usize) -> Result<Self> {
        if dim < 64 || dim % 8 != 0 {
            return Err(Error::Config(format!(
                "synthetic embedding width must be a multiple of 8 and at least 64, got {dim}"
            )));
        }
        let block = dim / 8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut classes = Vec::new();
        for d in Dimension::ALL {
            let mut vecs: Vec<Vec<f64>> = Vec::new();
            let mut attempts = 0;
            while vecs.len() < d.num_classes() {
                attempts += 1;
                if attempts > 100_000 {
                    return Err(Error::Config(format!(
                        "could not draw separated class vectors for {d}"
                    )));
                }
                let v = random_unit(&mut rng, block);
                if vecs.iter().all(|u| dot64(u, &v) < MAX_CLASS_COSINE) {
                    vecs.push(v);
                }
            }
            classes.push(vecs);
        }
        let cols = BLOCKS * block;
        let raw = DMatrix::from_fn(dim, cols, |_, _| StandardNormal.sample(&mut rng));
        let projection = gram_schmidt(raw);
        Ok(Self { seed, dim, block, classes, projection })
    }

    pub fn class_vector(&self, dim: Dimension, class: usize) -> &[f64] {
        &self.classes[dim_slot(dim)][class]
    }

    fn project(&self, concat: &[f64]) -> Result<EmbeddingVector> {
        let x = nalgebra::DVector::from_column_slice(concat);
        let y = &self.projection * x;
        EmbeddingVector::from_f64(y.as_slice())
    }

    fn put(&self, concat: &mut [f64], slot: usize, v: &[f64]) {
        concat[slot * self.block..slot * self.block + v.len()].copy_from_slice(v);
    }
}

fn dim_slot(d: Dimension) -> usize {
    Dimension::ALL.iter().position(|x| *x == d).unwrap()
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dot64(&v, &v).sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn gram_schmidt(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for j in 0..m.ncols() {
        for _ in 0..2 {
            for k in 0..j {
                let proj = m.column(k).dot(&m.column(j));
                let ck = m.column(k).into_owned();
                m.column_mut(j).axpy(-proj, &ck, 1.0);
            }
        }
        let n = m.column(j).norm();
        m.column_mut(j).unscale_mut(n);
    }
    m
}

/// What a piece of text names: a full description or a single prompt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParsedText {
    Description(Categories),
    Prompt(Dimension, usize),
}

pub fn parse_text(text: &str) -> Result<ParsedText> {
    if let Ok(c) = label::parse_description(text) {
        return Ok(ParsedText::Description(c));
    }
    label::parse_prompt(text)
        .map(|(d, i)| ParsedText::Prompt(d, i))
        .map_err(|_| Error::Parse(format!("text is neither a description nor a prompt: {text:?}")))
}

/// Deterministic synthetic text and image embedders sharing one codebook.
#[derive(Debug, Clone)]
pub struct FrozenSpace {
    pub codebook: AttributeCodebook,
    pub sensor: SensorSpec,
}

impl FrozenSpace {
    pub fn new(seed: u64, dim: usize, sensor: SensorSpec) -> Result<Self> {
        Ok(Self { codebook: AttributeCodebook::new(seed, dim)?, sensor })
    }

    pub fn dim(&self) -> usize {
        self.codebook.dim
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let cb = &self.codebook;
        let mut concat = vec![0.0; BLOCKS * cb.block];
        match parse_text(text)? {
            ParsedText::Description(c) => {
                for d in Dimension::ALL {
                    cb.put(&mut concat, dim_slot(d), cb.class_vector(d, c.class_index(d)));
                }
            }
            ParsedText::Prompt(d, i) => cb.put(&mut concat, dim_slot(d), cb.class_vector(d, i)),
        }
        cb.project(&concat)
    }

    pub fn embed_categories(&self, c: &Categories) -> Result<EmbeddingVector> {
        self.embed_text(&label::generate_description(c))
    }

    pub fn embed_image(&self, image: &DepthImage) -> Result<EmbeddingVector> {
        let cb = &self.codebook;
        let feats = image_features(image, &self.sensor)?;
        let mut concat = vec![0.0; BLOCKS * cb.block];
        if let Ok(depth) = label::bucket_depth(feats.peak_mm) {
            cb.put(&mut concat, dim_slot(Dimension::Depth), cb.class_vector(Dimension::Depth, depth.index()));
        }
        let pos = label::bucket_position(feats.peak_xy_mm, &self.sensor)?;
        cb.put(&mut concat, dim_slot(Dimension::Position), cb.class_vector(Dimension::Position, pos.index()));
        let area = label::bucket_area(feats.area_fraction)?;
        cb.put(&mut concat, dim_slot(Dimension::Area), cb.class_vector(Dimension::Area, area.index()));
        let fine: Vec<f64> = feats.fine().iter().map(|v| v * FINE_WEIGHT).collect();
        let n = fine.len().min(cb.block);
        cb.put(&mut concat, FINE_BLOCK, &fine[..n]);
        cb.project(&concat)
    }
}

/// Pixel statistics the image embedder is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub peak_mm: f64,
    pub peak_xy_mm: [f64; 2],
    pub area_fraction: f64,
    /// Rotation, translation and scale invariant moments of the contact mask.
    pub hu: [f64; 7],
    /// Share of image energy above the local mean (ridge/texture content).
    pub high_freq: f64,
}

impl ImageFeatures {
    /// Image-only descriptor block: signed roots of the moment invariants
    /// (the first offset so a disk maps to zero) and the high-frequency share.
    pub fn fine(&self) -> [f64; 8] {
        let roots = [1.0, 2.0, 2.0, 2.0, 4.0, 3.0, 4.0];
        let mut out = [0.0; 8];
        for i in 0..7 {
            let v = if i == 0 { self.hu[0] - 1.0 / std::f64::consts::TAU } else { self.hu[i] };
            out[i] = v.signum() * v.abs().powf(1.0 / roots[i]);
        }
        out[7] = self.high_freq.sqrt();
        out
    }
}

pub fn image_features(image: &DepthImage, sensor: &SensorSpec) -> Result<ImageFeatures> {
    let (w, h) = (image.width, image.height);
    let px = sensor.width_mm / w as f64;
    let py = sensor.height_mm / h as f64;
    let center = |c: usize, r: usize| {
        [
            -sensor.width_mm / 2.0 + (c as f64 + 0.5) * px,
            sensor.height_mm / 2.0 - (r as f64 + 0.5) * py,
        ]
    };

    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    let mut active = 0usize;
    let mut m = [[0.0f64; 4]; 4];
    for r in 0..h {
        for c in 0..w {
            let v = image.get(c, r) as f64;
            if v > best.2 || (v == best.2 && (c < best.0 || (c == best.0 && r > best.1))) {
                best = (c, r, v);
            }
            if v > CONTACT_EPS_MM {
                active += 1;
                let [x, y] = center(c, r);
                m[0][0] += 1.0;
                m[1][0] += x;
                m[0][1] += y;
            }
        }
    }
    if active == 0 {
        return Err(Error::NoContact);
    }
    let (xc, yc) = (m[1][0] / m[0][0], m[0][1] / m[0][0]);

    // Central moments of the mask, in mm, up to order three.
    let mut mu = [[0.0f64; 4]; 4];
    for r in 0..h {
        for c in 0..w {
            if (image.get(c, r) as f64) > CONTACT_EPS_MM {
                let [x, y] = center(c, r);
                let (dx, dy) = (x - xc, y - yc);
                for (p, row) in mu.iter_mut().enumerate() {
                    for (q, cell) in row.iter_mut().enumerate() {
                        if p + q <= 3 {
                            *cell += dx.powi(p as i32) * dy.powi(q as i32) * px * py;
                        }
                    }
                }
            }
        }
    }
    let eta = |p: usize, q: usize| mu[p][q] / mu[0][0].powf(1.0 + (p + q) as f64 / 2.0);
    let (n20, n02, n11) = (eta(2, 0), eta(0, 2), eta(1, 1));
    let (n30, n03, n21, n12) = (eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2));
    let (a, b) = (n30 + n12, n21 + n03);
    let hu = [
        n20 + n02,
        (n20 - n02).powi(2) + 4.0 * n11 * n11,
        (n30 - 3.0 * n12).powi(2) + (3.0 * n21 - n03).powi(2),
        a * a + b * b,
        (n30 - 3.0 * n12) * a * (a * a - 3.0 * b * b) + (3.0 * n21 - n03) * b * (3.0 * a * a - b * b),
        (n20 - n02) * (a * a - b * b) + 4.0 * n11 * a * b,
        (3.0 * n21 - n03) * a * (a * a - 3.0 * b * b) - (n30 - 3.0 * n12) * b * (3.0 * a * a - b * b),
    ];

    // High-pass energy: residual after a 3x3 box mean, relative to total.
    let mut total = 0.0;
    let mut high = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = image.get(c, r) as f64;
            let mut s = 0.0;
            let mut n = 0.0;
            for rr in r.saturating_sub(1)..(r + 2).min(h) {
                for cc in c.saturating_sub(1)..(c + 2).min(w) {
                    s += image.get(cc, rr) as f64;
                    n += 1.0;
                }
            }
            total += v * v;
            high += (v - s / n).powi(2);
        }
    }

    Ok(ImageFeatures {
        peak_mm: best.2,
        peak_xy_mm: center(best.0, best.1),
        area_fraction: active as f64 / (w * h) as f64,
        hu,
        high_freq: if total > 0.0 { high / total } else { 0.0 },
    })
}

/// Precomputed embeddings keyed by id, all of one width.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub dim: usize,
    ids: Vec<String>,
    vectors: HashMap<String, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self { dim, ids: Vec::new(), vectors: HashMap::new() }
    }

    /// Adds an entry, renormalizing it (with a warning) if its norm is off
    /// by more than 1e-4.
    pub fn insert(&mut self, id: &str, values: Vec<f32>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::Shape(format!(
                "embedding {id} has width {}, store width is {}",
                values.len(),
                self.dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("embedding {id} has non-finite values")));
        }
        if self.vectors.contains_key(id) {
            return Err(Error::Format(format!("duplicate embedding id {id}")));
        }
        let norm = dot(&values, &values).sqrt();
        let v = if (norm - 1.0).abs() > 1e-4 {
            log::warn!("embedding {id} has norm {norm:.6}; renormalizing");
            EmbeddingVector::from_f32(&values)?
        } else {
            EmbeddingVector::from_unit(values)
        };
        self.ids.push(id.to_string());
        self.vectors.insert(id.to_string(), v);
        Ok(())
    }

    pub fn lookup(&self, id: &str) -> Result<&EmbeddingVector> {
        self.vectors
            .get(id)
            .ok_or_else(|| Error::Lookup(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn from_entries(entries: StoreEntries) -> Result<Self> {
        let mut s = Self::new(entries.dim);
        for (id, v) in entries.entries {
            s.insert(&id, v)?;
        }
        Ok(s)
    }

    pub fn to_entries(&self) -> StoreEntries {
        StoreEntries {
            dim: self.dim,
            entries: self
                .ids
                .iter()
                .map(|id| (id.clone(), self.vectors[id].as_slice().to_vec()))
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        formats::write_store(path, &self.to_entries())
    }
}

pub fn load_embedding_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    EmbeddingStore::from_entries(formats::read_store(path)?)
}

pub fn text_id(sample: &str) -> String {
    format!("text:{sample}")
}

pub fn image_id(sample: &str) -> String {
    format!("image:{sample}")
}

pub fn prompt_id(dim: Dimension, word: &str) -> String {
    format!("prompt:{dim}:{word}")
}

/// Where frozen targets come from: the synthetic embedders, or a store of
/// precomputed vectors keyed by sample and prompt id.
#[derive(Debug, Clone)]
pub enum EmbeddingSource {
    Synthetic(FrozenSpace),
    Store(EmbeddingStore),
}

impl EmbeddingSource {
    pub fn dim(&self) -> usize {
        match self {
            Self::Synthetic(s) => s.dim(),
            Self::Store(s) => s.dim,
        }
    }

    fn from_store(store: &EmbeddingStore, id: &str) -> Result<EmbeddingVector> {
        store.lookup(id).cloned()
    }

    pub fn text(&self, sample: &str, description: &str) -> Result<EmbeddingVector> {
        match self {
            Self::Synthetic(s) => s.embed_text(description),
            Self::Store(s) => Self::from_store(s, &text_id(sample)),
        }
    }

    pub fn image(&self, sample: &str, image: &DepthImage) -> Result<EmbeddingVector> {
        match self {
            Self::Synthetic(s) => s.embed_image(image),
            Self::Store(s) => Self::from_store(s, &image_id(sample)),
        }
    }

    pub fn prompt(&self, dim: Dimension, word: &str) -> Result<EmbeddingVector> {
        match self {
            Self::Synthetic(s) => s.embed_text(&label::generate_prompt(dim, word)?),
            Self::Store(s) => Self::from_store(s, &prompt_id(dim, word)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{render_depth_image, DisplacementField};
    use crate::vocab::{AreaCat, DepthCat, PositionCat, Shape, Texture};

    fn space() -> FrozenSpace {
        FrozenSpace::new(DEFAULT_CODEBOOK_SEED, DEFAULT_DIM, SensorSpec::default()).unwrap()
    }

    fn disk_field(cx: f64, cy: f64, r: f64, depth: f64) -> DisplacementField {
        let s = SensorSpec::default();
        let mut f = DisplacementField::zeros(s);
        for row in 0..s.ny() {
            for col in 0..s.nx() {
                let [x, y] = s.cell_center(col, row);
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                f.set(col, row, (depth * (1.0 - d2 / (r * r))).max(0.0));
            }
        }
        f
    }

    #[test]
    fn codebook_is_reproducible_and_separated() {
        let a = AttributeCodebook::new(3, 64).unwrap();
        assert_eq!(a, AttributeCodebook::new(3, 64).unwrap());
        for d in Dimension::ALL {
            for i in 0..d.num_classes() {
                for j in 0..i {
                    assert!(dot64(a.class_vector(d, i), a.class_vector(d, j)) < 0.5);
                }
            }
        }
        let p = &a.projection;
        let gram = p.transpose() * p;
        assert!((gram - DMatrix::identity(48, 48)).abs().max() < 1e-12);
        assert!(AttributeCodebook::new(3, 60).is_err());
    }

    #[test]
    fn text_embedding_examples() {
        let s = space();
        let a = s.embed_text("This is a sphere").unwrap();
        assert_eq!(a, s.embed_text("This is a sphere").unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-6);
        let b = s.embed_text("This is a cuboid").unwrap();
        assert!(a.dot(&b) < 0.5);
        assert!(matches!(s.embed_text("hello"), Err(Error::Parse(_))));
    }

    #[test]
    fn description_prefers_its_own_shape_prompt() {
        let s = space();
        let c = Categories {
            shape: Shape::Torus,
            texture: Texture::Bumpy,
            depth: DepthCat::Deep,
            position: PositionCat::TopLeft,
            area: AreaCat::Medium,
        };
        let full = s.embed_categories(&c).unwrap();
        let own = full.dot(&s.embed_text("This is a torus").unwrap());
        for sh in Shape::ALL.iter().filter(|x| **x != Shape::Torus) {
            let p = s.embed_text(&format!("This is a {sh}")).unwrap();
            assert!(own > full.dot(&p));
        }
    }

    #[test]
    fn zero_image_has_no_contact() {
        let img = DepthImage::new(64, 48, vec![0.0; 64 * 48]).unwrap();
        assert!(matches!(space().embed_image(&img), Err(Error::NoContact)));
    }

    #[test]
    fn disk_moments_are_near_zero_and_resolution_stable() {
        let f = disk_field(0.4, -0.2, 3.0, 1.2);
        let s = space();
        let lo = render_depth_image(&f, 64, 48).unwrap();
        let hi = render_depth_image(&f, 128, 96).unwrap();
        let feats = image_features(&lo, &s.sensor).unwrap();
        assert!(feats.fine()[0].abs() < 0.01);
        let c = s.embed_image(&lo).unwrap().dot(&s.embed_image(&hi).unwrap());
        assert!(c > 0.98, "cosine {c}");
    }

    #[test]
    fn elongated_mask_has_large_second_invariant() {
        let s = SensorSpec::default();
        let mut f = DisplacementField::zeros(s);
        for row in 70..80 {
            for col in 20..180 {
                f.set(col, row, 1.0);
            }
        }
        let img = render_depth_image(&f, 64, 48).unwrap();
        let feats = image_features(&img, &s).unwrap();
        assert!(feats.fine()[1] > 0.5);
    }

    #[test]
    fn store_renormalizes_and_rejects_duplicates() {
        let mut st = EmbeddingStore::new(2);
        st.insert("a", vec![1.0, 0.0]).unwrap();
        st.insert("b", vec![0.3, 0.4]).unwrap();
        assert_eq!(st.lookup("a").unwrap().as_slice(), &[1.0, 0.0]);
        assert!((st.lookup("b").unwrap().norm() - 1.0).abs() < 1e-6);
        assert!(st.insert("a", vec![0.0, 1.0]).is_err());
        assert!(matches!(st.lookup("zzz"), Err(Error::Lookup(_))));
    }
}
