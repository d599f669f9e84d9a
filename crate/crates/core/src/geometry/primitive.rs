use std::f64::consts::{FRAC_PI_4, TAU};

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sdf::{self, ConvexPolyhedron, V2, V3};
use crate::error::{Error, Result};
use crate::vocab::{Shape, Texture};

pub const MAX_TEXTURE_AMPLITUDE_MM: f64 = 0.3;
pub const MIN_TEXTURE_WAVELENGTH_MM: f64 = 0.5;

/// A shape primitive in its local frame, plus its surface texture.
///
/// Size parameters per shape (all mm):
///
/// | shape | params |
/// |---|---|
/// | sphere | radius |
/// | ellipsoid | semi-axes a, b, c |
/// | cuboid, flat-plate | half-extents x, y, z |
/// | cube, corner | half-extent |
/// | cylinder | radius, half-height |
/// | cone | base radius, height |
/// | peak | base radius, tip radius, height |
/// | torus | major radius, minor radius |
/// | triangular-prism | side, half-length |
/// | hexagonal-prism | circumradius, half-height |
/// | pyramid | base half-width, height |
/// | wedge | half-width, half-length, height |
/// | capsule | radius, half-length |
/// | cross | arm half-length, arm half-width, half-thickness |
/// | ring | outer radius, width, half-height |
/// | dome | radius |
/// | edge | half-length, cross-section half-extents y, z |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub size: Vec<f64>,
    pub texture: Texture,
    pub texture_amplitude_mm: f64,
    pub texture_wavelength_mm: f64,
    #[serde(default)]
    pub texture_seed: u64,
}

fn param_count(shape: Shape) -> usize {
    use Shape::*;
    match shape {
        Sphere | Cube | Dome | Corner => 1,
        Cylinder | Cone | Torus | TriangularPrism | HexagonalPrism | Pyramid | Capsule => 2,
        Ellipsoid | Cuboid | Peak | Wedge | Cross | Ring | Edge | FlatPlate => 3,
    }
}

impl Primitive {
    pub fn new(shape: Shape, size: Vec<f64>) -> Result<Self> {
        let p = Self {
            shape,
            size,
            texture: Texture::Smooth,
            texture_amplitude_mm: 0.0,
            texture_wavelength_mm: 1.0,
            texture_seed: 0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Builds a primitive from a shape word; unknown words are rejected.
    pub fn from_word(shape: &str, size: Vec<f64>) -> Result<Self> {
        let shape = Shape::from_word(shape).map_err(|_| Error::UnsupportedShape(shape.into()))?;
        Self::new(shape, size)
    }

    pub fn sphere(r: f64) -> Self {
        Self::new(Shape::Sphere, vec![r]).expect("positive radius")
    }

    pub fn with_texture(mut self, texture: Texture, amplitude: f64, wavelength: f64) -> Result<Self> {
        self.texture = texture;
        self.texture_amplitude_mm = if texture == Texture::Smooth { 0.0 } else { amplitude };
        self.texture_wavelength_mm = wavelength;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = param_count(self.shape);
        if self.size.len() != n {
            return Err(Error::Contract(format!(
                "{} takes {n} size parameters, got {}",
                self.shape,
                self.size.len()
            )));
        }
        if let Some(&bad) = self.size.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::OutOfRange { what: "size parameter", value: bad });
        }
        let s = &self.size;
        match self.shape {
            Shape::Peak if !(s[1] < s[0] && s[0] - s[1] < s[2]) => {
                return Err(Error::Contract("peak needs tip < base and base - tip < height".into()))
            }
            Shape::Torus if s[1] >= s[0] => {
                return Err(Error::Contract("torus minor radius must be below major".into()))
            }
            Shape::Ring if s[1] >= s[0] => {
                return Err(Error::Contract("ring width must be below outer radius".into()))
            }
            Shape::Cross if s[1] >= s[0] => {
                return Err(Error::Contract("cross arm width must be below arm length".into()))
            }
            _ => {}
        }
        if !(0.0..=MAX_TEXTURE_AMPLITUDE_MM).contains(&self.texture_amplitude_mm) {
            return Err(Error::OutOfRange {
                what: "texture amplitude",
                value: self.texture_amplitude_mm,
            });
        }
        if !(self.texture_wavelength_mm >= MIN_TEXTURE_WAVELENGTH_MM) {
            return Err(Error::OutOfRange {
                what: "texture wavelength",
                value: self.texture_wavelength_mm,
            });
        }
        Ok(())
    }

    /// Signed distance in the local frame.
    pub fn sdf(&self, p: V3) -> f64 {
        let s = &self.size;
        match self.shape {
            Shape::Sphere => sdf::sphere(p, s[0]),
            Shape::Ellipsoid => sdf::ellipsoid(p, V3::new(s[0], s[1], s[2])),
            Shape::Cuboid | Shape::FlatPlate => sdf::cuboid(p, V3::new(s[0], s[1], s[2])),
            Shape::Cube => sdf::cuboid(p, V3::repeat(s[0])),
            Shape::Cylinder => sdf::cylinder(p, s[0], s[1]),
            Shape::Cone => sdf::cone(p, s[0], s[1]),
            Shape::Peak => sdf::round_cone(p, s[0], s[1], s[2]),
            Shape::Torus => sdf::torus(p, s[0], s[1]),
            Shape::TriangularPrism => {
                let verts = sdf::regular_polygon(s[0] / 3f64.sqrt(), 3, TAU / 4.0);
                sdf::extrude(sdf::polygon(p.xy(), &verts), p.z, s[1])
            }
            Shape::HexagonalPrism => {
                let verts = sdf::regular_polygon(s[0], 6, 0.0);
                sdf::extrude(sdf::polygon(p.xy(), &verts), p.z, s[1])
            }
            Shape::Pyramid => {
                ConvexPolyhedron::square_pyramid(s[0], s[1]).distance(p + V3::new(0.0, 0.0, s[1] / 3.0))
            }
            Shape::Wedge => {
                let (a, l, h) = (s[0], s[1], s[2]);
                let tri = [V2::new(-a, -h / 2.0), V2::new(a, -h / 2.0), V2::new(-a, h / 2.0)];
                sdf::extrude(sdf::polygon(V2::new(p.x, p.z), &tri), p.y, l)
            }
            Shape::Capsule => sdf::capsule(p, s[0], s[1]),
            Shape::Cross => {
                let outline = sdf::cross_outline(s[0], s[1]);
                sdf::extrude(sdf::polygon(p.xy(), &outline), p.z, s[2])
            }
            Shape::Ring => sdf::ring(p, s[0], s[1], s[2]),
            Shape::Dome => sdf::hemisphere(p, s[0]),
            Shape::Edge => {
                let rot = UnitQuaternion::from_axis_angle(&V3::x_axis(), FRAC_PI_4);
                sdf::cuboid(rot * p, V3::new(s[0], s[1], s[2]))
            }
            Shape::Corner => {
                let rot = corner_rotation();
                sdf::cuboid(rot * p, V3::repeat(s[0]))
            }
        }
    }

    /// Radius of a ball about the local origin that contains the solid.
    pub fn bounding_radius(&self) -> f64 {
        let s = &self.size;
        match self.shape {
            Shape::Sphere | Shape::Dome => s[0],
            Shape::Ellipsoid => s[0].max(s[1]).max(s[2]),
            Shape::Cuboid | Shape::FlatPlate | Shape::Edge => V3::new(s[0], s[1], s[2]).norm(),
            Shape::Cube | Shape::Corner => s[0] * 3f64.sqrt(),
            Shape::Cylinder | Shape::HexagonalPrism => s[0].hypot(s[1]),
            Shape::Ring => s[0].hypot(s[2]),
            Shape::Cone => s[0].hypot(s[1] / 2.0),
            Shape::Peak => s[0] + s[2] / 2.0,
            Shape::Torus => s[0] + s[1],
            Shape::TriangularPrism => (s[0] / 3f64.sqrt()).hypot(s[1]),
            Shape::Pyramid => (s[0] * 2f64.sqrt()).hypot(s[1]),
            Shape::Wedge => V3::new(s[0], s[1], s[2] / 2.0).norm(),
            Shape::Capsule => s[0] + s[1],
            Shape::Cross => V3::new(s[0], s[1], s[2]).norm(),
        }
    }

    /// Draws size and texture parameters for `shape`.
    pub fn random(shape: Shape, texture: Texture, rng: &mut impl Rng) -> Self {
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let size = match shape {
            Shape::Sphere => vec![u(2.5, 14.0)],
            Shape::Ellipsoid => vec![u(2.0, 10.0), u(2.0, 10.0), u(2.0, 10.0)],
            Shape::Cuboid => vec![u(1.5, 8.0), u(1.5, 8.0), u(1.5, 8.0)],
            Shape::Cube => vec![u(1.5, 6.0)],
            Shape::Cylinder => vec![u(1.5, 6.0), u(2.0, 9.0)],
            Shape::Cone => vec![u(2.0, 6.0), u(4.0, 12.0)],
            Shape::Peak => {
                let base = u(2.5, 6.0);
                let tip = u(0.5, 1.5);
                vec![base, tip, u((base - tip + 1.0).max(4.0), 10.0)]
            }
            Shape::Torus => {
                let major = u(3.0, 6.5);
                vec![major, u(0.8, 2.0)]
            }
            Shape::TriangularPrism => vec![u(4.0, 10.0), u(3.0, 9.0)],
            Shape::HexagonalPrism => vec![u(2.0, 6.0), u(2.0, 8.0)],
            Shape::Pyramid => vec![u(2.0, 6.0), u(3.0, 8.0)],
            Shape::Wedge => vec![u(2.0, 6.0), u(2.0, 7.0), u(2.0, 7.0)],
            Shape::Capsule => vec![u(1.5, 4.0), u(2.0, 7.0)],
            Shape::Cross => {
                let arm = u(3.5, 7.0);
                vec![arm, u(0.8, 2.0), u(1.0, 3.0)]
            }
            Shape::Ring => {
                let outer = u(3.0, 7.0);
                vec![outer, u(0.8, 2.2), u(0.8, 3.0)]
            }
            Shape::Dome => vec![u(3.0, 12.0)],
            Shape::Edge => vec![u(10.0, 20.0), u(2.0, 5.0), u(2.0, 5.0)],
            Shape::Corner => vec![u(4.0, 10.0)],
            Shape::FlatPlate => vec![u(15.0, 30.0), u(15.0, 30.0), u(1.0, 3.0)],
        };
        let (amplitude, wavelength) = match texture {
            Texture::Smooth => (0.0, 1.0),
            _ => (u(0.08, 0.2), u(1.2, 2.5)),
        };
        Self {
            shape,
            size,
            texture,
            texture_amplitude_mm: amplitude,
            texture_wavelength_mm: wavelength,
            texture_seed: rng.random(),
        }
    }

    pub fn texture_pattern(&self) -> TexturePattern {
        TexturePattern::new(self)
    }
}

fn corner_rotation() -> UnitQuaternion<f64> {
    let down = V3::new(0.0, 0.0, -1.0);
    let diag = V3::new(1.0, 1.0, 1.0).normalize();
    UnitQuaternion::rotation_between(&down, &diag).expect("non-antiparallel")
}

/// Surface height modulation in the texture plane, bounded by the amplitude.
#[derive(Debug, Clone)]
pub struct TexturePattern {
    kind: Texture,
    amplitude: f64,
    k: f64,
    components: Vec<RoughComponent>,
}

#[derive(Debug, Clone)]
struct RoughComponent {
    dir: V2,
    k: f64,
    phase: f64,
    weight: f64,
}

const ROUGH_COMPONENTS: usize = 6;

impl TexturePattern {
    fn new(p: &Primitive) -> Self {
        let k = TAU / p.texture_wavelength_mm;
        let mut components = Vec::new();
        if p.texture == Texture::Rough {
            let mut rng = ChaCha8Rng::seed_from_u64(p.texture_seed);
            for _ in 0..ROUGH_COMPONENTS {
                let theta: f64 = rng.random_range(0.0..TAU);
                let stretch: f64 = rng.random_range(1.0..2.0);
                components.push(RoughComponent {
                    dir: V2::new(theta.cos(), theta.sin()),
                    k: k / stretch,
                    phase: rng.random_range(0.0..TAU),
                    weight: rng.random_range(0.2..1.0),
                });
            }
            let total: f64 = components.iter().map(|c| c.weight).sum();
            for c in &mut components {
                c.weight /= total;
            }
        }
        Self {
            kind: p.texture,
            amplitude: p.texture_amplitude_mm,
            k,
            components,
        }
    }

    pub fn height(&self, u: f64, v: f64) -> f64 {
        let a = self.amplitude;
        match self.kind {
            Texture::Smooth => 0.0,
            Texture::Ridged => a * (self.k * u).sin(),
            Texture::Grooved => {
                let s = (self.k * u).sin();
                if s > 0.0 {
                    a
                } else if s < 0.0 {
                    -a
                } else {
                    0.0
                }
            }
            Texture::Bumpy => a * (self.k * u).sin() * (self.k * v).sin(),
            Texture::Rough => {
                a * self
                    .components
                    .iter()
                    .map(|c| c.weight * (c.k * (c.dir.x * u + c.dir.y * v) + c.phase).sin())
                    .sum::<f64>()
            }
        }
    }
}
