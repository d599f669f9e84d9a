use rand::seq::index;
use rand::Rng;

use super::field::DisplacementField;
use super::sensor::{SensorSpec, CONTACT_EPS_MM};
use crate::error::{Error, Result};

pub const DEFAULT_POINTS: usize = 1024;

/// Sampled gel surface points `(x, y, depth)` in the sensor frame, mm.
#[derive(Debug, Clone, PartialEq)]
pub struct TactilePointCloud {
    pub points: Vec<[f32; 3]>,
}

impl TactilePointCloud {
    pub fn new(points: Vec<[f32; 3]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn in_bounds(&self, sensor: &SensorSpec) -> bool {
        let (hw, hh) = ((sensor.width_mm / 2.0) as f32, (sensor.height_mm / 2.0) as f32);
        let dmax = sensor.max_depth_mm as f32;
        self.points.iter().all(|p| {
            p[0].abs() <= hw && p[1].abs() <= hh && (0.0..=dmax).contains(&p[2])
        })
    }

    /// Coordinates mapped into `[-1, 1]³` for the encoder.
    pub fn normalized(&self, sensor: &SensorSpec) -> Vec<[f32; 3]> {
        self.points.iter().map(|p| sensor.normalize_point(*p)).collect()
    }

    pub fn centroid_xy(&self) -> [f64; 2] {
        let n = self.points.len().max(1) as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(a, b), p| (a + p[0] as f64, b + p[1] as f64));
        [sx / n, sy / n]
    }
}

/// Draws `n` points from contact-active cells, without replacement when
/// enough cells are active, with in-cell jitter in x and y.
pub fn sample_point_cloud(
    field: &DisplacementField,
    n: usize,
    rng: &mut impl Rng,
) -> Result<TactilePointCloud> {
    let nx = field.nx();
    let active: Vec<usize> = field
        .data
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > CONTACT_EPS_MM)
        .map(|(i, _)| i)
        .collect();
    if active.is_empty() {
        return Err(Error::NoContact);
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let picks: Vec<usize> = if active.len() >= n {
        index::sample(rng, active.len(), n).into_iter().collect()
    } else {
        (0..n).map(|_| rng.random_range(0..active.len())).collect()
    };
    let half = field.sensor.grid_pitch_mm / 2.0;
    let points = picks
        .into_iter()
        .map(|k| {
            let cell = active[k];
            let [cx, cy] = field.sensor.cell_center(cell % nx, cell / nx);
            let x = cx + rng.random_range(-half..half);
            let y = cy + rng.random_range(-half..half);
            [x as f32, y as f32, field.data[cell] as f32]
        })
        .collect();
    Ok(TactilePointCloud { points })
}
