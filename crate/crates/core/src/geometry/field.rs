use nalgebra::Rotation3;

use super::pose::ContactPose;
use super::primitive::Primitive;
use super::sdf::V3;
use super::sensor::{SensorSpec, CONTACT_EPS_MM};
use crate::error::{Error, Result};

/// Indentation depth per gel cell, row-major with row 0 at the top edge.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub sensor: SensorSpec,
    pub data: Vec<f64>,
}

impl DisplacementField {
    pub fn from_data(sensor: SensorSpec, data: Vec<f64>) -> Result<Self> {
        sensor.validate()?;
        if data.len() != sensor.nx() * sensor.ny() {
            return Err(Error::Shape(format!(
                "field has {} cells, grid needs {}",
                data.len(),
                sensor.nx() * sensor.ny()
            )));
        }
        if let Some(v) = data
            .iter()
            .find(|v| !(v.is_finite() && **v >= 0.0 && **v <= sensor.max_depth_mm))
        {
            return Err(Error::OutOfRange { what: "field depth", value: *v });
        }
        Ok(Self { sensor, data })
    }

    pub fn zeros(sensor: SensorSpec) -> Self {
        let n = sensor.nx() * sensor.ny();
        Self { sensor, data: vec![0.0; n] }
    }

    pub fn nx(&self) -> usize {
        self.sensor.nx()
    }

    pub fn ny(&self) -> usize {
        self.sensor.ny()
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.nx() + col]
    }

    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        let nx = self.nx();
        self.data[row * nx + col] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Deepest cell as `(col, row, depth)`. Ties go to the smallest x, then
    /// the smallest y.
    pub fn argmax(&self) -> (usize, usize, f64) {
        let nx = self.nx();
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (i, &v) in self.data.iter().enumerate() {
            let (col, row) = (i % nx, i / nx);
            let better = v > best.2
                || (v == best.2 && (col < best.0 || (col == best.0 && row > best.1)));
            if better {
                best = (col, row, v);
            }
        }
        best
    }

    pub fn active_cells(&self) -> usize {
        self.data.iter().filter(|&&v| v > CONTACT_EPS_MM).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.active_cells() as f64 / self.data.len() as f64
    }

    pub fn has_contact(&self) -> bool {
        self.data.iter().any(|&v| v > CONTACT_EPS_MM)
    }
}

/// Penetration of the posed primitive through the gel rest plane, capped by
/// the commanded depth, before texture and smoothing.
pub fn raw_penetration(prim: &Primitive, pose: &ContactPose, sensor: &SensorSpec) -> Vec<f64> {
    let rot_inv = pose.rotation.inverse().to_rotation_matrix();
    let t = pose.translation_mm;
    let (nx, ny) = (sensor.nx(), sensor.ny());
    let mut out = Vec::with_capacity(nx * ny);
    for row in 0..ny {
        for col in 0..nx {
            let [x, y] = sensor.cell_center(col, row);
            let local = rot_inv * (V3::new(x, y, 0.0) - t);
            out.push((-prim.sdf(local)).max(0.0).min(pose.commanded_depth_mm));
        }
    }
    out
}

fn gaussian_kernel(sigma_cells: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_cells).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma_cells * sigma_cells)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    k
}

/// Peak of the smoothed, uncapped penetration in a window around cell
/// `(col, row)`. Used by seating so the commanded depth survives smoothing.
pub(crate) fn smoothed_peak_near(
    prim: &Primitive,
    rot_inv: &Rotation3<f64>,
    t: V3,
    sensor: &SensorSpec,
    col: usize,
    row: usize,
) -> f64 {
    let sigma_cells = sensor.smoothing_sigma_mm / sensor.grid_pitch_mm;
    let inner = (1.0 / sensor.grid_pitch_mm).ceil() as usize;
    let reach = inner + (3.0 * sigma_cells).ceil() as usize;
    let (nx, ny) = (sensor.nx(), sensor.ny());
    let (c0, c1) = (col.saturating_sub(reach), (col + reach + 1).min(nx));
    let (r0, r1) = (row.saturating_sub(reach), (row + reach + 1).min(ny));
    let (w, h) = (c1 - c0, r1 - r0);
    let mut raw = Vec::with_capacity(w * h);
    for r in r0..r1 {
        for c in c0..c1 {
            let [x, y] = sensor.cell_center(c, r);
            raw.push((-prim.sdf(rot_inv * (V3::new(x, y, 0.0) - t))).max(0.0));
        }
    }
    let smooth = gaussian_smooth(&raw, w, h, sigma_cells);
    let mut best = f64::NEG_INFINITY;
    for r in row.saturating_sub(inner).max(r0)..(row + inner + 1).min(r1) {
        for c in col.saturating_sub(inner).max(c0)..(col + inner + 1).min(c1) {
            best = best.max(smooth[(r - r0) * w + (c - c0)]);
        }
    }
    best
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_smooth(data: &[f64], nx: usize, ny: usize, sigma_cells: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma_cells);
    let r = (k.len() / 2) as i64;
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for row in 0..ny {
        let line = &data[row * nx..(row + 1) * nx];
        for col in 0..nx {
            tmp[row * nx + col] = k
                .iter()
                .enumerate()
                .map(|(j, w)| w * line[clamp(col as i64 + j as i64 - r, nx)])
                .sum();
        }
    }
    let mut out = vec![0.0; data.len()];
    for row in 0..ny {
        for col in 0..nx {
            out[row * nx + col] = k
                .iter()
                .enumerate()
                .map(|(j, w)| w * tmp[clamp(row as i64 + j as i64 - r, ny) * nx + col])
                .sum();
        }
    }
    out
}

/// Indentation field of a seated contact: raw penetration, surface texture
/// where in contact, elastic smoothing, then clamping to the gel depth.
pub fn compute_displacement_field(
    prim: &Primitive,
    pose: &ContactPose,
    sensor: &SensorSpec,
) -> Result<DisplacementField> {
    sensor.validate()?;
    pose.validate(sensor)?;
    let (nx, ny) = (sensor.nx(), sensor.ny());
    let mut raw = raw_penetration(prim, pose, sensor);

    let pattern = prim.texture_pattern();
    let yaw = pose.texture_yaw();
    let (s, c) = yaw.sin_cos();
    let t = pose.translation_mm;
    for row in 0..ny {
        for col in 0..nx {
            let v = &mut raw[row * nx + col];
            if *v > 0.0 {
                let [x, y] = sensor.cell_center(col, row);
                let (dx, dy) = (x - t.x, y - t.y);
                let u = c * dx + s * dy;
                let w = -s * dx + c * dy;
                *v = (*v + pattern.height(u, w)).max(0.0);
            }
        }
    }

    let smoothed = gaussian_smooth(&raw, nx, ny, sensor.smoothing_sigma_mm / sensor.grid_pitch_mm);
    let data: Vec<f64> = smoothed
        .into_iter()
        .map(|v| v.clamp(0.0, sensor.max_depth_mm))
        .collect();
    let field = DisplacementField { sensor: *sensor, data };
    if !field.has_contact() {
        return Err(Error::NoContact);
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose::seat_pose;
    use crate::vocab::{Shape, Texture};
    use nalgebra::UnitQuaternion;

    fn pressed(prim: &Primitive, depth: f64) -> (ContactPose, SensorSpec) {
        let s = SensorSpec::default();
        let pose = ContactPose::new(UnitQuaternion::identity(), V3::zeros(), depth);
        (seat_pose(prim, &pose, &s).unwrap(), s)
    }

    #[test]
    fn sphere_peak_at_center() {
        let prim = Primitive::sphere(5.0);
        let (pose, s) = pressed(&prim, 1.0);
        let f = compute_displacement_field(&prim, &pose, &s).unwrap();
        let (col, row, d) = f.argmax();
        assert!((d - 1.0).abs() < 0.02, "peak {d}");
        let [x, y] = s.cell_center(col, row);
        assert!(x.abs() <= s.grid_pitch_mm && y.abs() <= s.grid_pitch_mm);
    }

    #[test]
    fn large_plate_is_uniform() {
        let prim = Primitive::new(Shape::FlatPlate, vec![20.0, 15.0, 2.0]).unwrap();
        let (pose, s) = pressed(&prim, 0.5);
        let f = compute_displacement_field(&prim, &pose, &s).unwrap();
        let ok = f.data.iter().filter(|v| (**v - 0.5).abs() <= 0.01).count();
        assert!(ok as f64 >= 0.99 * f.data.len() as f64);
    }

    #[test]
    fn sphere_contact_radius_matches_circle_of_intersection() {
        let prim = Primitive::sphere(5.0);
        let (pose, s) = pressed(&prim, 1.0);
        let raw = raw_penetration(&prim, &pose, &s);
        let expected = (25.0f64 - 16.0).sqrt();
        let mut r_max: f64 = 0.0;
        for (i, v) in raw.iter().enumerate() {
            if *v > 0.0 {
                let [x, y] = s.cell_center(i % s.nx(), i / s.nx());
                r_max = r_max.max(x.hypot(y));
            }
        }
        assert!((r_max - expected).abs() <= 2.0 * s.grid_pitch_mm, "radius {r_max}");
    }

    #[test]
    fn textured_field_respects_amplitude_bound() {
        let prim = Primitive::sphere(7.0)
            .with_texture(Texture::Grooved, 0.2, 1.0)
            .unwrap();
        let (pose, s) = pressed(&prim, 1.5);
        let f = compute_displacement_field(&prim, &pose, &s).unwrap();
        assert!(f.max() <= 1.5 + 0.2 + 1e-6);
        assert!(f.data.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn lifted_object_has_no_contact() {
        let prim = Primitive::sphere(3.0);
        let s = SensorSpec::default();
        let pose = ContactPose::new(UnitQuaternion::identity(), V3::new(0.0, 0.0, 5.0), 1.0);
        assert!(matches!(
            compute_displacement_field(&prim, &pose, &s),
            Err(Error::NoContact)
        ));
    }

    #[test]
    fn argmax_tie_prefers_left_then_bottom() {
        let s = SensorSpec::default();
        let mut f = DisplacementField::zeros(s);
        f.set(10, 5, 1.0);
        f.set(10, 20, 1.0);
        f.set(30, 40, 1.0);
        let (col, row, _) = f.argmax();
        assert_eq!((col, row), (10, 20));
    }
}
