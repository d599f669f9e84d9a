//! Synthetic contact dataset: generation, manifest rows and loading.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;
use crate::geometry::pose::{augment_pose, PoseAugment};
use crate::geometry::{
    compute_displacement_field, render_depth_image, sample_contact_pose_large,
    sample_contact_pose_small, sample_point_cloud, seat_pose, ContactPose, DepthImage,
    DisplacementField, Primitive, SensorSpec, TactilePointCloud,
};
use crate::label::{compute_contact_state, generate_description, Categories, ContactState};
use crate::rng::derive_seed;
use crate::train::{augment_cloud, CloudAugment};
use crate::vocab::{AreaCat, DepthCat, PositionCat, Shape, Texture};

pub const MANIFEST: &str = "manifest.jsonl";
/// Objects whose bounding radius exceeds this are posed from a surface point.
pub const LARGE_OBJECT_RADIUS_MM: f64 = 8.0;
const MAX_PLACEMENT_ATTEMPTS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateConfig {
    pub count: usize,
    pub seed: u64,
    pub num_points: usize,
    pub image_w: usize,
    pub image_h: usize,
    pub sensor: SensorSpec,
    pub pose_augment: PoseAugment,
    pub jitter: bool,
    /// Shapes cycled through in order, for balanced categories.
    pub shapes: Vec<Shape>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            count: 1900,
            seed: 0,
            num_points: crate::geometry::DEFAULT_POINTS,
            image_w: crate::geometry::DEFAULT_IMAGE_W,
            image_h: crate::geometry::DEFAULT_IMAGE_H,
            sensor: SensorSpec::default(),
            pose_augment: PoseAugment { rotate: true, translate: true },
            jitter: true,
            shapes: Shape::ALL.to_vec(),
        }
    }
}

/// One generated triplet with the intermediate field kept for checking.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub seed: u64,
    pub primitive: Primitive,
    pub pose: ContactPose,
    pub field: DisplacementField,
    pub cloud: TactilePointCloud,
    pub image: DepthImage,
    pub state: ContactState,
    pub description: String,
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:06}")
}

pub fn sample_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, &format!("sample:{index}"))
}

fn place_contact(
    prim: &Primitive,
    cfg: &GenerateConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(ContactPose, DisplacementField, ContactState)> {
    let sensor = &cfg.sensor;
    let large = prim.bounding_radius() > LARGE_OBJECT_RADIUS_MM;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let pose = if large {
            sample_contact_pose_large(prim, sensor, rng).pose
        } else {
            sample_contact_pose_small(sensor, rng)
        };
        let pose = augment_pose(&pose, cfg.pose_augment, rng);
        let Ok(pose) = seat_pose(prim, &pose, sensor) else { continue };
        let Ok(field) = compute_displacement_field(prim, &pose, sensor) else { continue };
        if let Ok(state) = compute_contact_state(&field, prim, sensor) {
            return Ok((pose, field, state));
        }
    }
    Err(Error::NoContact)
}

/// Generates sample `index` from its own seed; independent of other samples.
pub fn generate_sample(cfg: &GenerateConfig, index: usize) -> Result<Sample> {
    if cfg.shapes.is_empty() {
        return Err(Error::Config("shape list is empty".into()));
    }
    let seed = sample_seed(cfg.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = cfg.shapes[index % cfg.shapes.len()];
    let texture = Texture::ALL[rng.random_range(0..Texture::ALL.len())];
    let id = sample_id(index);
    let mut last = Error::NoContact;
    for _ in 0..4 {
        let prim = Primitive::random(shape, texture, &mut rng);
        match place_contact(&prim, cfg, &mut rng) {
            Ok((pose, field, state)) => {
                let cloud = sample_point_cloud(&field, cfg.num_points, &mut rng)?;
                let aug = CloudAugment {
                    num_points: cfg.num_points,
                    translate: false,
                    rotate: false,
                    jitter: cfg.jitter,
                };
                let cloud = augment_cloud(&cloud, &mut rng, &cfg.sensor, aug);
                let image = render_depth_image(&field, cfg.image_w, cfg.image_h)?;
                let description = generate_description(&state.categories());
                return Ok(Sample {
                    id,
                    seed,
                    primitive: prim,
                    pose,
                    field,
                    cloud,
                    image,
                    state,
                    description,
                });
            }
            Err(e) => last = e,
        }
    }
    Err(Error::Data(format!("sample {id}: could not place a contact ({last})")))
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub shape: Shape,
    pub texture: Texture,
    pub depth_cat: DepthCat,
    pub d_max_mm: f64,
    pub position_cat: PositionCat,
    pub deepest_xy_mm: [f64; 2],
    pub area_cat: AreaCat,
    pub area_fraction: f64,
    pub description: String,
    pub cloud_path: String,
    pub image_path: String,
    pub seed: u64,
    pub warn_ambiguous_position: bool,
}

impl ManifestRow {
    pub fn from_sample(s: &Sample) -> Self {
        let st = &s.state;
        Self {
            id: s.id.clone(),
            shape: st.shape,
            texture: st.texture,
            depth_cat: st.depth_cat,
            d_max_mm: st.d_max_mm,
            position_cat: st.position_cat,
            deepest_xy_mm: st.deepest_xy_mm,
            area_cat: st.area_cat,
            area_fraction: st.area_fraction,
            description: s.description.clone(),
            cloud_path: format!("clouds/{}.tclp", s.id),
            image_path: format!("images/{}.tcld", s.id),
            seed: s.seed,
            warn_ambiguous_position: st.warn_ambiguous_position,
        }
    }

    pub fn categories(&self) -> Categories {
        Categories {
            shape: self.shape,
            texture: self.texture,
            depth: self.depth_cat,
            position: self.position_cat,
            area: self.area_cat,
        }
    }
}

/// True when `dir` exists and has at least one entry.
pub fn dir_is_nonempty(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Generates `cfg.count` samples in parallel and writes the manifest plus
/// one cloud and one image file per sample.
pub fn generate_dataset(cfg: &GenerateConfig, out: &Path, force: bool) -> Result<Vec<ManifestRow>> {
    if dir_is_nonempty(out) && !force {
        return Err(Error::OutputExists(out.to_path_buf()));
    }
    for sub in ["clouds", "images"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::file(&d, e))?;
    }
    let rows = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let s = generate_sample(cfg, i)?;
            let row = ManifestRow::from_sample(&s);
            formats::write_cloud(out.join(&row.cloud_path), &s.cloud)?;
            formats::write_image(out.join(&row.image_path), &s.image)?;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&out.join(MANIFEST), &rows)?;
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(&buf).map_err(|e| Error::file(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let f = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        rows.push(row);
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = rows.iter().find(|r| !seen.insert(r.id.clone())) {
        return Err(Error::Data(format!("duplicate sample id {}", dup.id)));
    }
    Ok(rows)
}

/// Per-class counts for each label dimension, in vocabulary order.
pub fn category_counts(rows: &[ManifestRow]) -> BTreeMap<&'static str, Vec<(&'static str, usize)>> {
    use crate::vocab::Dimension;
    let mut out = BTreeMap::new();
    for dim in Dimension::ALL {
        let words = dim.words();
        let mut counts = vec![0usize; words.len()];
        for r in rows {
            counts[r.categories().class_index(dim)] += 1;
        }
        out.insert(dim.name(), words.into_iter().zip(counts).collect());
    }
    out
}

/// Manifest rows with their clouds and images loaded from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
    pub clouds: Vec<TactilePointCloud>,
    pub images: Vec<DepthImage>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let rows = read_manifest(&root.join(MANIFEST))?;
        let loaded = rows
            .par_iter()
            .map(|r| {
                let cloud = formats::read_cloud(root.join(&r.cloud_path))
                    .map_err(|e| Error::Data(format!("sample {}: {e}", r.id)))?;
                let image = formats::read_image(root.join(&r.image_path))
                    .map_err(|e| Error::Data(format!("sample {}: {e}", r.id)))?;
                Ok((cloud, image))
            })
            .collect::<Result<Vec<_>>>()?;
        let (clouds, images) = loaded.into_iter().unzip();
        Ok(Self { root: root.to_path_buf(), rows, clouds, images })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            root: self.root.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            clouds: idx.iter().map(|&i| self.clouds[i].clone()).collect(),
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
        }
    }

    /// Builds a dataset directly from in-memory samples.
    pub fn from_samples(samples: &[Sample]) -> Self {
        Self {
            root: PathBuf::new(),
            rows: samples.iter().map(ManifestRow::from_sample).collect(),
            clouds: samples.iter().map(|s| s.cloud.clone()).collect(),
            images: samples.iter().map(|s| s.image.clone()).collect(),
        }
    }
}

/// Deterministic train/test partition of row indices: a seeded shuffle with
/// the first `test_count` rows held out.
pub fn split_indices(n: usize, test_count: usize, split_seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if test_count >= n {
        return Err(Error::Config(format!(
            "cannot hold out {test_count} of {n} samples"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(split_seed, "split")));
    let mut test = idx[..test_count].to_vec();
    let mut train = idx[test_count..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

pub fn write_ids(path: &Path, ids: impl IntoIterator<Item = impl AsRef<str>>) -> Result<()> {
    let mut s = String::new();
    for id in ids {
        s.push_str(id.as_ref());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::file(path, e))
}

pub fn read_ids(path: &Path) -> Result<Vec<String>> {
    let s = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(s.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
}
