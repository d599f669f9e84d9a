//! WebAssembly bindings for the browser demo. Every export returns a JSON
//! string so the page needs no generated type glue.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use tacalign_core::dataset::{generate_sample, GenerateConfig};
use tacalign_core::grasp::{run_refinement, GraspEnv, RuleBasedReasoner, DEFAULT_INSTRUCTION};
use tacalign_core::geometry::SensorSpec;
use tacalign_core::train::contrastive_loss;
use tacalign_core::vocab::Shape;
use tacalign_core::{Error, Result};
use wasm_bindgen::prelude::*;

fn to_js<T>(r: Result<T>) -> std::result::Result<T, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[derive(Serialize)]
struct ContactView {
    description: String,
    shape: String,
    texture: String,
    depth: String,
    position: String,
    area: String,
    max_depth_mm: f64,
    area_fraction: f64,
    image_width: usize,
    image_height: usize,
    image: Vec<f32>,
    cloud: Vec<[f32; 3]>,
}

/// Simulates one contact of `shape` and returns its labels, depth image and
/// point cloud.
pub fn simulate_contact_json(shape: &str, seed: u64, num_points: usize) -> Result<String> {
    let cfg = GenerateConfig {
        count: 1,
        seed,
        num_points,
        shapes: vec![Shape::from_word(shape)?],
        ..GenerateConfig::default()
    };
    let s = generate_sample(&cfg, 0)?;
    let c = s.state.categories();
    let view = ContactView {
        description: s.description.clone(),
        shape: c.shape.word().into(),
        texture: c.texture.word().into(),
        depth: c.depth.word().into(),
        position: c.position.word().into(),
        area: c.area.word().into(),
        max_depth_mm: s.state.d_max_mm,
        area_fraction: s.state.area_fraction,
        image_width: s.image.width,
        image_height: s.image.height,
        image: s.image.pixels,
        cloud: s.cloud.points,
    };
    Ok(serde_json::to_string(&view)?)
}

#[derive(Serialize)]
struct LossView {
    loss: f64,
    chance_loss: f64,
    retrieval_accuracy: f64,
}

fn unit_rows(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(rows, cols, &mut f);
    for mut r in m.row_iter_mut() {
        let n = r.norm();
        r /= n;
    }
    m
}

/// Contrastive loss of a batch whose tactile embeddings are the paired
/// targets plus Gaussian noise of the given scale, at temperature `tau`.
pub fn loss_explorer_json(batch: usize, dim: usize, tau: f64, noise: f64, seed: u64) -> Result<String> {
    if !(tau > 0.0) || !(noise >= 0.0) || dim == 0 {
        return Err(Error::Contract(format!("need tau > 0, noise >= 0, dim > 0; got {tau}, {noise}, {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let targets = unit_rows(batch, dim, |_, _| normal());
    let tactile = unit_rows(batch, dim, |i, j| targets[(i, j)] + noise * normal());
    let out = contrastive_loss(&tactile, &targets, tau)?;
    let sims = &tactile * targets.transpose();
    let hits = (0..batch)
        .filter(|&i| (0..batch).all(|j| j == i || sims[(i, j)] < sims[(i, i)]))
        .count();
    let view = LossView {
        loss: out.loss,
        chance_loss: (batch as f64).ln(),
        retrieval_accuracy: hits as f64 / batch as f64,
    };
    Ok(serde_json::to_string(&view)?)
}

/// Runs one rule-based refinement episode from a random or scripted start.
pub fn grasp_episode_json(seed: u64, noise_mm: f64, scripted: bool) -> Result<String> {
    let sensor = SensorSpec::default();
    let mut env = if scripted {
        let mut e = GraspEnv::fig6(sensor, seed);
        e.noise_mm = noise_mm;
        e
    } else {
        GraspEnv::new(sensor, seed, noise_mm)
    };
    let trace = run_refinement(&mut env, &mut RuleBasedReasoner, DEFAULT_INSTRUCTION, 10, None);
    trace.to_json()
}

#[wasm_bindgen]
pub fn simulate_contact(shape: &str, seed: u64) -> std::result::Result<String, JsValue> {
    to_js(simulate_contact_json(shape, seed, 512))
}

#[wasm_bindgen]
pub fn loss_explorer(batch: usize, dim: usize, tau: f64, noise: f64, seed: u64) -> std::result::Result<String, JsValue> {
    to_js(loss_explorer_json(batch, dim, tau, noise, seed))
}

#[wasm_bindgen]
pub fn grasp_episode(seed: u64, noise_mm: f64, scripted: bool) -> std::result::Result<String, JsValue> {
    to_js(grasp_episode_json(seed, noise_mm, scripted))
}

#[wasm_bindgen]
pub fn shape_words() -> String {
    Shape::ALL.iter().map(|s| s.word()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn contact_view_is_consistent() {
        let v: Value = serde_json::from_str(&simulate_contact_json("cone", 3, 256).unwrap()).unwrap();
        assert_eq!(v["shape"], "cone");
        let (w, h) = (v["image_width"].as_u64().unwrap(), v["image_height"].as_u64().unwrap());
        assert_eq!(v["image"].as_array().unwrap().len() as u64, w * h);
        assert_eq!(v["cloud"].as_array().unwrap().len(), 256);
        assert!(v["description"].as_str().unwrap().contains("cone"));
        assert!(simulate_contact_json("blob", 3, 256).is_err());
    }

    #[test]
    fn loss_explorer_extremes() {
        let clean: Value = serde_json::from_str(&loss_explorer_json(16, 32, 0.05, 0.0, 1).unwrap()).unwrap();
        assert_eq!(clean["retrieval_accuracy"], 1.0);
        let noisy: Value = serde_json::from_str(&loss_explorer_json(16, 32, 0.05, 50.0, 1).unwrap()).unwrap();
        assert!(noisy["loss"].as_f64().unwrap() > clean["loss"].as_f64().unwrap());
        assert!(loss_explorer_json(1, 32, 0.05, 0.0, 1).is_err());
        assert!(loss_explorer_json(8, 32, 0.0, 0.0, 1).is_err());
    }

    #[test]
    fn scripted_episode_ends_stable() {
        let v: Value = serde_json::from_str(&grasp_episode_json(0, 0.0, true).unwrap()).unwrap();
        assert_eq!(v["status"]["status"], "success");
        assert_eq!(v["steps"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn shape_list_matches_vocabulary() {
        assert_eq!(shape_words().split(',').count(), 19);
    }
}
