//! Contact pose sampling and seating.
//!
//! A pose maps the primitive's local frame into the sensor frame. Sampling
//! only chooses an orientation, an anchor and a commanded depth;
//! [`seat_pose`] then fixes the vertical offset so that the deepest
//! penetration over the gel footprint equals the commanded depth.

use std::f64::consts::{PI, TAU};

use nalgebra::{Rotation3, UnitQuaternion};
use rand::Rng;
use rand_distr::StandardNormal;

use super::field::smoothed_peak_near;
use super::primitive::Primitive;
use super::sdf::V3;
use super::sensor::SensorSpec;
use crate::error::{Error, Result};

pub const MIN_COMMANDED_DEPTH_MM: f64 = 0.2;
pub const NORMAL_CONE_DEG: f64 = 15.0;
pub const AUGMENT_SHIFT_MM: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPose {
    /// Local → sensor rotation.
    pub rotation: UnitQuaternion<f64>,
    pub translation_mm: V3,
    pub commanded_depth_mm: f64,
}

impl ContactPose {
    pub fn new(rotation: UnitQuaternion<f64>, translation_mm: V3, commanded_depth_mm: f64) -> Self {
        Self {
            rotation,
            translation_mm,
            commanded_depth_mm,
        }
    }

    pub fn validate(&self, sensor: &SensorSpec) -> Result<()> {
        if (self.rotation.as_ref().norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Contract("pose rotation is not a unit quaternion".into()));
        }
        let d = self.commanded_depth_mm;
        if !(d > 0.0 && d <= sensor.max_depth_mm) {
            return Err(Error::OutOfRange { what: "commanded depth", value: d });
        }
        Ok(())
    }

    /// Direction, in the local frame, along which the sensor approaches the
    /// object (the local direction that faces the gel).
    pub fn approach_axis(&self) -> V3 {
        self.rotation.inverse() * V3::new(0.0, 0.0, -1.0)
    }

    pub fn to_local(&self, p: V3) -> V3 {
        self.rotation.inverse() * (p - self.translation_mm)
    }

    /// Rotation angle of the local x axis about the sensor normal, used to
    /// orient surface textures in the gel plane.
    pub fn texture_yaw(&self) -> f64 {
        let x = self.rotation * V3::x();
        if x.xy().norm() > 0.3 {
            x.y.atan2(x.x)
        } else {
            let y = self.rotation * V3::y();
            y.y.atan2(y.x) - PI / 2.0
        }
    }
}

/// Rotation taking local direction `v` onto −z, followed by a spin about z.
fn facing_rotation(v: V3, spin: f64) -> UnitQuaternion<f64> {
    let down = V3::new(0.0, 0.0, -1.0);
    let align = UnitQuaternion::rotation_between(&v, &down)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&V3::x_axis(), PI));
    UnitQuaternion::from_axis_angle(&V3::z_axis(), spin) * align
}

fn sample_depth(sensor: &SensorSpec, rng: &mut impl Rng) -> f64 {
    rng.random_range(MIN_COMMANDED_DEPTH_MM..=sensor.max_depth_mm)
}

pub fn random_unit_vector(rng: &mut impl Rng) -> V3 {
    loop {
        let v = V3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Unit vector within `half_angle` (radians) of `axis`, uniform over the cap.
pub fn sample_cone(axis: V3, half_angle: f64, rng: &mut impl Rng) -> V3 {
    let cos_min = half_angle.cos();
    let cos_t = if half_angle <= 0.0 {
        1.0
    } else {
        rng.random_range(cos_min..=1.0)
    };
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = rng.random_range(0.0..TAU);
    let axis = axis.normalize();
    let helper = if axis.x.abs() < 0.9 { V3::x() } else { V3::y() };
    let u = axis.cross(&helper).normalize();
    let w = axis.cross(&u);
    axis * cos_t + (u * phi.cos() + w * phi.sin()) * sin_t
}

/// A point on the primitive surface with its outward unit normal.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSample {
    pub point: V3,
    pub normal: V3,
}

fn sdf_gradient(prim: &Primitive, p: V3) -> V3 {
    let h = 1e-6;
    let g = V3::new(
        prim.sdf(p + V3::x() * h) - prim.sdf(p - V3::x() * h),
        prim.sdf(p + V3::y() * h) - prim.sdf(p - V3::y() * h),
        prim.sdf(p + V3::z() * h) - prim.sdf(p - V3::z() * h),
    );
    g / (2.0 * h)
}

/// Samples a surface point by projecting a uniform point of the bounding cube
/// onto the zero level set along the distance gradient.
pub fn sample_surface(prim: &Primitive, rng: &mut impl Rng) -> SurfaceSample {
    let r = prim.bounding_radius();
    loop {
        let mut p = V3::new(
            rng.random_range(-r..r),
            rng.random_range(-r..r),
            rng.random_range(-r..r),
        );
        let mut ok = true;
        for _ in 0..4 {
            let g = sdf_gradient(prim, p);
            let n = g.norm();
            if n < 1e-6 {
                ok = false;
                break;
            }
            p -= g / n * prim.sdf(p);
        }
        if !ok || prim.sdf(p).abs() > 1e-6 {
            continue;
        }
        let g = sdf_gradient(prim, p);
        if g.norm() < 0.5 {
            continue;
        }
        return SurfaceSample {
            point: p,
            normal: g.normalize(),
        };
    }
}

/// Large-object pose together with the surface sample that produced it.
#[derive(Debug, Clone, Copy)]
pub struct LargeContact {
    pub pose: ContactPose,
    pub surface: SurfaceSample,
}

/// Samples a surface point, then an approach within the normal cone. The
/// surface point is placed over the gel center.
pub fn sample_contact_pose_large(
    prim: &Primitive,
    sensor: &SensorSpec,
    rng: &mut impl Rng,
) -> LargeContact {
    sample_contact_pose_large_with_cone(prim, sensor, NORMAL_CONE_DEG.to_radians(), rng)
}

pub fn sample_contact_pose_large_with_cone(
    prim: &Primitive,
    sensor: &SensorSpec,
    half_angle: f64,
    rng: &mut impl Rng,
) -> LargeContact {
    let surface = sample_surface(prim, rng);
    let approach = sample_cone(surface.normal, half_angle, rng);
    let spin = rng.random_range(0.0..TAU);
    let rotation = facing_rotation(approach, spin);
    let translation = -(rotation * surface.point);
    let depth = sample_depth(sensor, rng);
    LargeContact {
        pose: ContactPose::new(rotation, translation, depth),
        surface,
    }
}

/// Uniformly random orientation with the object origin over the gel center.
pub fn sample_contact_pose_small(sensor: &SensorSpec, rng: &mut impl Rng) -> ContactPose {
    let approach = random_unit_vector(rng);
    let spin = rng.random_range(0.0..TAU);
    let depth = sample_depth(sensor, rng);
    ContactPose::new(facing_rotation(approach, spin), V3::zeros(), depth)
}

/// In-plane rigid augmentation toggles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseAugment {
    pub rotate: bool,
    pub translate: bool,
}

/// Rotates the contact about the sensor normal through the gel center and
/// shifts it in-plane. Applied before seating so labels follow the field.
pub fn augment_pose(pose: &ContactPose, aug: PoseAugment, rng: &mut impl Rng) -> ContactPose {
    let mut out = *pose;
    if aug.rotate {
        let spin = UnitQuaternion::from_axis_angle(&V3::z_axis(), rng.random_range(-PI..=PI));
        out.rotation = spin * out.rotation;
        out.translation_mm = spin * out.translation_mm;
    }
    if aug.translate {
        out.translation_mm.x += rng.random_range(-AUGMENT_SHIFT_MM..=AUGMENT_SHIFT_MM);
        out.translation_mm.y += rng.random_range(-AUGMENT_SHIFT_MM..=AUGMENT_SHIFT_MM);
    }
    out
}

/// Largest penetration `-sdf` over cell centers of a regular grid.
fn max_penetration(
    prim: &Primitive,
    rot_inv: &Rotation3<f64>,
    t: V3,
    xs: impl Iterator<Item = f64> + Clone,
    ys: impl Iterator<Item = f64> + Clone,
) -> (f64, f64, f64) {
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for y in ys {
        for x in xs.clone() {
            let pen = -prim.sdf(rot_inv * (V3::new(x, y, 0.0) - t));
            if pen > best.0 {
                best = (pen, x, y);
            }
        }
    }
    best
}

fn grid(lo: f64, n: usize, step: f64) -> impl Iterator<Item = f64> + Clone {
    (0..n).map(move |i| lo + (i as f64 + 0.5) * step)
}

/// Adjusts the vertical offset so the deepest footprint penetration equals
/// the commanded depth.
pub fn seat_pose(prim: &Primitive, pose: &ContactPose, sensor: &SensorSpec) -> Result<ContactPose> {
    let rot_inv = pose.rotation.inverse().to_rotation_matrix();
    let target = pose.commanded_depth_mm;
    let mut t = pose.translation_mm;
    let (w, h) = (sensor.width_mm, sensor.height_mm);

    let coarse = 0.5;
    let (cx, cy) = ((w / coarse).round() as usize, (h / coarse).round() as usize);
    let mut converged = false;
    let mut at = (0.0, 0.0);
    for _ in 0..80 {
        let (pen, x, y) = max_penetration(
            prim,
            &rot_inv,
            t,
            grid(-w / 2.0, cx, coarse),
            grid(-h / 2.0, cy, coarse),
        );
        at = (x, y);
        let err = pen - target;
        t.z += err;
        if err.abs() < 1e-7 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoContact);
    }

    // Refine on the full-resolution grid around the coarse peak.
    let p = sensor.grid_pitch_mm;
    let lo_x = (at.0 - 1.0).max(-w / 2.0);
    let hi_x = (at.0 + 1.0).min(w / 2.0);
    let lo_y = (at.1 - 1.0).max(-h / 2.0);
    let hi_y = (at.1 + 1.0).min(h / 2.0);
    let snap = |v: f64, half: f64| ((v + half) / p).floor() * p - half;
    let (x0, y0) = (snap(lo_x, w / 2.0), snap(lo_y, h / 2.0));
    let nx = ((hi_x - x0) / p).ceil() as usize;
    let ny = ((hi_y - y0) / p).ceil() as usize;
    let mut peak = at;
    for _ in 0..20 {
        let (pen, x, y) = max_penetration(prim, &rot_inv, t, grid(x0, nx, p), grid(y0, ny, p));
        peak = (x, y);
        let err = pen - target;
        t.z += err;
        if err.abs() < 1e-7 {
            break;
        }
    }

    // Press a little further so the smoothed peak, not the raw one, reaches
    // the commanded depth.
    let col = (((peak.0 + w / 2.0) / p).floor() as usize).min(sensor.nx() - 1);
    let row = (((h / 2.0 - peak.1) / p).floor() as usize).min(sensor.ny() - 1);
    for _ in 0..8 {
        let err = smoothed_peak_near(prim, &rot_inv, t, sensor, col, row) - target;
        t.z += err;
        if err.abs() < 1e-6 {
            break;
        }
    }
    Ok(ContactPose::new(pose.rotation, t, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_pose_approach_is_unit() {
        let s = SensorSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pose = sample_contact_pose_small(&s, &mut rng);
        assert!((pose.approach_axis().norm() - 1.0).abs() < 1e-9);
        pose.validate(&s).unwrap();
    }

    #[test]
    fn small_pose_depth_range() {
        let s = SensorSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let d = sample_contact_pose_small(&s, &mut rng).commanded_depth_mm;
            assert!((0.2..=3.5).contains(&d));
        }
    }

    #[test]
    fn degenerate_cone_returns_normal() {
        let s = SensorSpec::default();
        let prim = Primitive::sphere(8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let c = sample_contact_pose_large_with_cone(&prim, &s, 0.0, &mut rng);
            let dev = (c.pose.approach_axis() - c.surface.normal).norm();
            assert!(dev < 1e-9, "deviation {dev}");
        }
    }

    #[test]
    fn large_pose_on_sphere_is_radial() {
        let s = SensorSpec::default();
        let prim = Primitive::sphere(8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = sample_contact_pose_large(&prim, &s, &mut rng);
        let radial = c.surface.point.normalize();
        let ang = c.pose.approach_axis().dot(&radial).clamp(-1.0, 1.0).acos().to_degrees();
        assert!(ang <= 15.0 + 1e-6, "angle {ang}");
        assert!((c.surface.point.norm() - 8.0).abs() < 1e-6);
    }

    #[test]
    fn seating_hits_commanded_depth_for_sphere() {
        let s = SensorSpec::default();
        let prim = Primitive::sphere(5.0);
        let pose = ContactPose::new(UnitQuaternion::identity(), V3::zeros(), 1.3);
        let seated = seat_pose(&prim, &pose, &s).unwrap();
        assert!((seated.translation_mm.z - (5.0 - 1.3)).abs() < 0.05);
        let field = crate::geometry::compute_displacement_field(&prim, &seated, &s).unwrap();
        assert!((field.max() - 1.3).abs() < 0.02, "{}", field.max());
    }

    #[test]
    fn augmentation_keeps_anchor_within_shift() {
        let s = SensorSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pose = sample_contact_pose_small(&s, &mut rng);
        let aug = PoseAugment { rotate: true, translate: true };
        for _ in 0..100 {
            let a = augment_pose(&pose, aug, &mut rng);
            assert!(a.translation_mm.x.abs() <= AUGMENT_SHIFT_MM);
            assert!(a.translation_mm.y.abs() <= AUGMENT_SHIFT_MM);
            assert!((a.rotation.as_ref().norm() - 1.0).abs() < 1e-12);
        }
    }
}
