//! Exact analytic signed distance functions. Negative inside.
//!
//! Solids of revolution reduce to a 2D distance in the meridian half-plane
//! `(ρ, z)`; prisms reduce to a 2D polygon distance followed by an exact
//! extrusion. The pyramid uses the generic convex-polyhedron distance and the
//! ellipsoid uses the bisection root finder for the closest-point equation.

use nalgebra::{Vector2, Vector3};

pub type V2 = Vector2<f64>;
pub type V3 = Vector3<f64>;

pub fn sphere(p: V3, r: f64) -> f64 {
    p.norm() - r
}

/// Axis-aligned box centered at the origin.
pub fn cuboid(p: V3, half: V3) -> f64 {
    let d = p.abs() - half;
    let outside = d.sup(&V3::zeros()).norm();
    let inside = d.x.max(d.y).max(d.z).min(0.0);
    outside + inside
}

pub fn box2(p: V2, half: V2) -> f64 {
    let d = p.abs() - half;
    d.sup(&V2::zeros()).norm() + d.x.max(d.y).min(0.0)
}

/// Distance to a simple polygon (any winding).
pub fn polygon(p: V2, verts: &[V2]) -> f64 {
    let n = verts.len();
    let mut d = (p - verts[0]).norm_squared();
    let mut s = 1.0;
    let mut j = n - 1;
    for i in 0..n {
        let e = verts[j] - verts[i];
        let w = p - verts[i];
        let t = (w.dot(&e) / e.dot(&e)).clamp(0.0, 1.0);
        let b = w - e * t;
        d = d.min(b.norm_squared());
        let c0 = p.y >= verts[i].y;
        let c1 = p.y < verts[j].y;
        let c2 = e.x * w.y > e.y * w.x;
        if (c0 && c1 && c2) || (!c0 && !c1 && !c2) {
            s = -s;
        }
        j = i;
    }
    s * d.sqrt()
}

/// Exact extrusion of a 2D distance `d2` along an axis with half-length `h`.
pub fn extrude(d2: f64, along: f64, h: f64) -> f64 {
    let w = V2::new(d2, along.abs() - h);
    w.x.max(w.y).min(0.0) + w.sup(&V2::zeros()).norm()
}

/// Meridian coordinates `(ρ, z)` of a point about the local z axis.
pub fn meridian(p: V3) -> V2 {
    V2::new(p.x.hypot(p.y), p.z)
}

/// Capped cylinder along z.
pub fn cylinder(p: V3, r: f64, half_h: f64) -> f64 {
    box2(meridian(p), V2::new(r, half_h))
}

/// Cone with base radius `r` at `z = -h/2` and apex at `z = +h/2`.
pub fn cone(p: V3, r: f64, h: f64) -> f64 {
    let tri = [
        V2::new(-r, -h / 2.0),
        V2::new(r, -h / 2.0),
        V2::new(0.0, h / 2.0),
    ];
    polygon(meridian(p), &tri)
}

/// Convex hull of a base sphere (radius `r1`, at `z = -h/2`) and a tip sphere
/// (radius `r2`, at `z = +h/2`). Requires `r1 - r2 < h`.
pub fn round_cone(p: V3, r1: f64, r2: f64, h: f64) -> f64 {
    let q = meridian(p) + V2::new(0.0, h / 2.0);
    let b = (r1 - r2) / h;
    let a = (1.0 - b * b).sqrt();
    let k = q.dot(&V2::new(-b, a));
    if k < 0.0 {
        q.norm() - r1
    } else if k > a * h {
        (q - V2::new(0.0, h)).norm() - r2
    } else {
        q.dot(&V2::new(a, b)) - r1
    }
}

pub fn torus(p: V3, major: f64, minor: f64) -> f64 {
    let q = meridian(p);
    V2::new(q.x - major, q.y).norm() - minor
}

/// Segment from `(0,0,-half_len)` to `(0,0,half_len)` inflated by `r`.
pub fn capsule(p: V3, r: f64, half_len: f64) -> f64 {
    let q = V3::new(p.x, p.y, p.z - p.z.clamp(-half_len, half_len));
    q.norm() - r
}

/// Flat washer: annulus `[outer - width, outer]` extruded by `half_h`.
pub fn ring(p: V3, outer: f64, width: f64, half_h: f64) -> f64 {
    let q = meridian(p);
    box2(
        V2::new(q.x - (outer - width / 2.0), q.y),
        V2::new(width / 2.0, half_h),
    )
}

/// Solid hemisphere `{|p| <= r, z >= 0}`.
pub fn hemisphere(p: V3, r: f64) -> f64 {
    let q = meridian(p);
    if q.y >= 0.0 {
        let len = q.norm();
        if len > r {
            len - r
        } else {
            -(r - len).min(q.y)
        }
    } else if q.x <= r {
        -q.y
    } else {
        V2::new(q.x - r, q.y).norm()
    }
}

pub fn regular_polygon(radius: f64, sides: usize, phase: f64) -> Vec<V2> {
    (0..sides)
        .map(|k| {
            let a = phase + std::f64::consts::TAU * k as f64 / sides as f64;
            V2::new(radius * a.cos(), radius * a.sin())
        })
        .collect()
}

/// Plus-shaped outline with arms of half-length `arm` and half-width `w`.
pub fn cross_outline(arm: f64, w: f64) -> Vec<V2> {
    vec![
        V2::new(w, w),
        V2::new(w, arm),
        V2::new(-w, arm),
        V2::new(-w, w),
        V2::new(-arm, w),
        V2::new(-arm, -w),
        V2::new(-w, -w),
        V2::new(-w, -arm),
        V2::new(w, -arm),
        V2::new(w, -w),
        V2::new(arm, -w),
        V2::new(arm, w),
    ]
}

/// A convex polyhedron given by its faces. Each face lists its vertices in
/// counter-clockwise order seen from outside.
#[derive(Debug, Clone)]
pub struct ConvexPolyhedron {
    faces: Vec<Face>,
}

#[derive(Debug, Clone)]
struct Face {
    verts: Vec<V3>,
    normal: V3,
}

impl ConvexPolyhedron {
    pub fn new(faces: Vec<Vec<V3>>) -> Self {
        let faces = faces
            .into_iter()
            .map(|verts| {
                let normal = (verts[1] - verts[0]).cross(&(verts[2] - verts[0])).normalize();
                Face { verts, normal }
            })
            .collect();
        Self { faces }
    }

    /// Square pyramid: base `[-b, b]²` at `z = 0`, apex at `(0, 0, h)`.
    pub fn square_pyramid(b: f64, h: f64) -> Self {
        let apex = V3::new(0.0, 0.0, h);
        let c = [
            V3::new(-b, -b, 0.0),
            V3::new(b, -b, 0.0),
            V3::new(b, b, 0.0),
            V3::new(-b, b, 0.0),
        ];
        let mut faces = vec![vec![c[0], c[3], c[2], c[1]]];
        for i in 0..4 {
            faces.push(vec![c[i], c[(i + 1) % 4], apex]);
        }
        Self::new(faces)
    }

    pub fn distance(&self, p: V3) -> f64 {
        let plane_max = self
            .faces
            .iter()
            .map(|f| f.normal.dot(&(p - f.verts[0])))
            .fold(f64::NEG_INFINITY, f64::max);
        if plane_max <= 0.0 {
            return plane_max;
        }
        self.faces
            .iter()
            .map(|f| face_distance(f, p))
            .fold(f64::INFINITY, f64::min)
    }
}

fn face_distance(f: &Face, p: V3) -> f64 {
    let h = f.normal.dot(&(p - f.verts[0]));
    let q = p - f.normal * h;
    let n = f.verts.len();
    let inside = (0..n).all(|i| {
        let a = f.verts[i];
        let b = f.verts[(i + 1) % n];
        (b - a).cross(&(q - a)).dot(&f.normal) >= 0.0
    });
    if inside {
        return h.abs();
    }
    (0..n)
        .map(|i| segment_distance(p, f.verts[i], f.verts[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

fn segment_distance(p: V3, a: V3, b: V3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Ellipsoid with semi-axes `axes` (any order).
pub fn ellipsoid(p: V3, axes: V3) -> f64 {
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| axes[b].total_cmp(&axes[a]));
    let e = [axes[idx[0]], axes[idx[1]], axes[idx[2]]];
    let y = [p[idx[0]].abs(), p[idx[1]].abs(), p[idx[2]].abs()];
    let dist = ellipsoid_distance(e, y);
    let g: f64 = (0..3).map(|i| (y[i] / e[i]).powi(2)).sum();
    if g < 1.0 {
        -dist
    } else {
        dist
    }
}

const MAX_BISECTIONS: usize = 1100;

fn ellipse_root(r0: f64, z0: f64, z1: f64, g: f64) -> f64 {
    let n0 = r0 * z0;
    let mut s0 = z1 - 1.0;
    let mut s1 = if g < 0.0 { 0.0 } else { n0.hypot(z1) - 1.0 };
    let mut s = 0.0;
    for _ in 0..MAX_BISECTIONS {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let ratio0 = n0 / (s + r0);
        let ratio1 = z1 / (s + 1.0);
        let g = ratio0 * ratio0 + ratio1 * ratio1 - 1.0;
        if g > 0.0 {
            s0 = s;
        } else if g < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

/// Unsigned distance from `(y0, y1)` (first quadrant) to the ellipse with
/// semi-axes `e0 >= e1`.
fn ellipse_distance(e0: f64, e1: f64, y0: f64, y1: f64) -> f64 {
    if y1 > 0.0 {
        if y0 > 0.0 {
            let z0 = y0 / e0;
            let z1 = y1 / e1;
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g != 0.0 {
                let r0 = (e0 / e1).powi(2);
                let sbar = ellipse_root(r0, z0, z1, g);
                let x0 = r0 * y0 / (sbar + r0);
                let x1 = y1 / (sbar + 1.0);
                (x0 - y0).hypot(x1 - y1)
            } else {
                0.0
            }
        } else {
            (y1 - e1).abs()
        }
    } else {
        let numer0 = e0 * y0;
        let denom0 = e0 * e0 - e1 * e1;
        if numer0 < denom0 {
            let xde0 = numer0 / denom0;
            let x0 = e0 * xde0;
            let x1 = e1 * (1.0 - xde0 * xde0).sqrt();
            (x0 - y0).hypot(x1)
        } else {
            (y0 - e0).abs()
        }
    }
}

fn ellipsoid_root(r0: f64, r1: f64, z: [f64; 3], g: f64) -> f64 {
    let n0 = r0 * z[0];
    let n1 = r1 * z[1];
    let mut s0 = z[2] - 1.0;
    let mut s1 = if g < 0.0 {
        0.0
    } else {
        V3::new(n0, n1, z[2]).norm() - 1.0
    };
    let mut s = 0.0;
    for _ in 0..MAX_BISECTIONS {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let ratio0 = n0 / (s + r0);
        let ratio1 = n1 / (s + r1);
        let ratio2 = z[2] / (s + 1.0);
        let g = ratio0 * ratio0 + ratio1 * ratio1 + ratio2 * ratio2 - 1.0;
        if g > 0.0 {
            s0 = s;
        } else if g < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

/// Unsigned distance from a first-octant point to the ellipsoid with sorted
/// semi-axes `e[0] >= e[1] >= e[2]`.
fn ellipsoid_distance(e: [f64; 3], y: [f64; 3]) -> f64 {
    if y[2] > 0.0 {
        if y[1] > 0.0 {
            if y[0] > 0.0 {
                let z = [y[0] / e[0], y[1] / e[1], y[2] / e[2]];
                let g = z[0] * z[0] + z[1] * z[1] + z[2] * z[2] - 1.0;
                if g != 0.0 {
                    let r0 = (e[0] / e[2]).powi(2);
                    let r1 = (e[1] / e[2]).powi(2);
                    let sbar = ellipsoid_root(r0, r1, z, g);
                    let x = V3::new(
                        r0 * y[0] / (sbar + r0),
                        r1 * y[1] / (sbar + r1),
                        y[2] / (sbar + 1.0),
                    );
                    (x - V3::new(y[0], y[1], y[2])).norm()
                } else {
                    0.0
                }
            } else {
                ellipse_distance(e[1], e[2], y[1], y[2])
            }
        } else if y[0] > 0.0 {
            ellipse_distance(e[0], e[2], y[0], y[2])
        } else {
            (y[2] - e[2]).abs()
        }
    } else {
        let denom0 = e[0] * e[0] - e[2] * e[2];
        let denom1 = e[1] * e[1] - e[2] * e[2];
        let numer0 = e[0] * y[0];
        let numer1 = e[1] * y[1];
        if numer0 < denom0 && numer1 < denom1 {
            let xde0 = numer0 / denom0;
            let xde1 = numer1 / denom1;
            let discr = 1.0 - xde0 * xde0 - xde1 * xde1;
            if discr > 0.0 {
                let x = V3::new(e[0] * xde0, e[1] * xde1, e[2] * discr.sqrt());
                return (x - V3::new(y[0], y[1], 0.0)).norm();
            }
        }
        ellipse_distance(e[0], e[1], y[0], y[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_examples() {
        assert_eq!(sphere(V3::zeros(), 5.0), -5.0);
        assert_eq!(sphere(V3::new(0.0, 0.0, 5.0), 5.0), 0.0);
    }

    #[test]
    fn polygon_square_matches_box() {
        let sq = [
            V2::new(-1.0, -1.0),
            V2::new(1.0, -1.0),
            V2::new(1.0, 1.0),
            V2::new(-1.0, 1.0),
        ];
        for &(x, y) in &[(0.0, 0.0), (2.0, 0.5), (3.0, 3.0), (0.2, -0.9), (-1.5, 0.0)] {
            let p = V2::new(x, y);
            assert!((polygon(p, &sq) - box2(p, V2::new(1.0, 1.0))).abs() < 1e-12);
        }
    }

    #[test]
    fn hemisphere_regions() {
        assert!((hemisphere(V3::new(0.0, 0.0, 1.0), 2.0) + 1.0).abs() < 1e-12);
        assert!((hemisphere(V3::new(0.0, 0.0, -0.5), 2.0) - 0.5).abs() < 1e-12);
        assert!((hemisphere(V3::new(3.0, 0.0, -1.0), 2.0) - 2f64.sqrt()).abs() < 1e-12);
        assert!((hemisphere(V3::new(0.0, 0.0, 3.0), 2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ellipsoid_reduces_to_sphere() {
        for &p in &[
            V3::new(0.3, -0.2, 0.1),
            V3::new(4.0, 1.0, -2.0),
            V3::new(0.0, 0.0, 0.0),
            V3::new(0.0, 3.0, 0.0),
        ] {
            let e = ellipsoid(p, V3::new(2.0, 2.0, 2.0));
            assert!((e - sphere(p, 2.0)).abs() < 1e-9, "{p:?}: {e}");
        }
    }

    #[test]
    fn ellipsoid_axis_points() {
        let axes = V3::new(3.0, 2.0, 1.0);
        assert!((ellipsoid(V3::new(5.0, 0.0, 0.0), axes) - 2.0).abs() < 1e-9);
        assert!((ellipsoid(V3::new(0.0, 0.0, 0.0), axes) + 1.0).abs() < 1e-9);
        assert!((ellipsoid(V3::new(0.0, 0.0, 1.5), axes) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn pyramid_apex_and_base() {
        let pyr = ConvexPolyhedron::square_pyramid(1.0, 2.0);
        assert!((pyr.distance(V3::new(0.0, 0.0, 3.0)) - 1.0).abs() < 1e-12);
        assert!((pyr.distance(V3::new(0.0, 0.0, -0.5)) - 0.5).abs() < 1e-12);
        assert!(pyr.distance(V3::new(0.0, 0.0, 0.5)) < 0.0);
        assert!((pyr.distance(V3::new(2.0, 2.0, 0.0)) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn extrusion_of_square_is_box() {
        let sq = [
            V2::new(-1.0, -2.0),
            V2::new(1.0, -2.0),
            V2::new(1.0, 2.0),
            V2::new(-1.0, 2.0),
        ];
        for &p in &[V3::new(2.0, 0.0, 0.0), V3::new(0.1, 0.2, 0.3), V3::new(3.0, 4.0, 5.0)] {
            let e = extrude(polygon(p.xy(), &sq), p.z, 3.0);
            assert!((e - cuboid(p, V3::new(1.0, 2.0, 3.0))).abs() < 1e-12);
        }
    }
}
