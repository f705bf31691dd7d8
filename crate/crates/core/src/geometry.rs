//! 3D vectors and finite planar reflectors.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Segment parameters closer than this to either endpoint do not count as hits.
const SEGMENT_EPS: f64 = 1e-9;

/// A point or direction in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Vec3 {
    fn from(v: [f64; 3]) -> Self {
        Vec3::new(v[0], v[1], v[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Unit vector in the same direction, or `None` for a zero/non-finite vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Some(self / n)
        } else {
            None
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Mirror image of `self` about the plane through `point` with unit `normal`.
    pub fn mirror_across(self, point: Vec3, normal: Vec3) -> Vec3 {
        let d = (self - point).dot(normal);
        self - normal * (2.0 * d)
    }

    /// Mirror a direction about a plane with unit `normal`.
    pub fn reflect_direction(self, normal: Vec3) -> Vec3 {
        self - normal * (2.0 * self.dot(normal))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// What a surface is made of.
#[derive(Debug, Clone, PartialEq)]
pub enum Material {
    /// Ordinary wall with a fixed specular reflection loss.
    PlainWall { reflection_loss_db: f64 },
    /// Mount point of the reflectarray panel with this id.
    Panel { panel_id: String },
}

/// A finite planar parallelogram `corner + s·edge_u + t·edge_v`, `s, t ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub id: String,
    pub corner: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    pub material: Material,
}

impl Surface {
    pub fn new(id: impl Into<String>, corner: Vec3, edge_u: Vec3, edge_v: Vec3, material: Material) -> Self {
        Self {
            id: id.into(),
            corner,
            edge_u,
            edge_v,
            material,
        }
    }

    /// Whether the two edges span a plane.
    pub fn is_degenerate(&self) -> bool {
        let c = self.edge_u.cross(self.edge_v).norm();
        let scale = self.edge_u.norm() * self.edge_v.norm();
        !(scale > 0.0 && c > 1e-12 * scale)
    }

    /// Unit normal `edge_u × edge_v`. Meaningless for degenerate surfaces.
    pub fn normal(&self) -> Vec3 {
        self.edge_u
            .cross(self.edge_v)
            .normalized()
            .unwrap_or(Vec3::Z)
    }

    pub fn center(&self) -> Vec3 {
        self.corner + self.edge_u * 0.5 + self.edge_v * 0.5
    }

    pub fn panel_id(&self) -> Option<&str> {
        match &self.material {
            Material::Panel { panel_id } => Some(panel_id),
            Material::PlainWall { .. } => None,
        }
    }

    /// In-plane coordinates `(s, t)` of the projection of `p`.
    pub fn plane_coords(&self, p: Vec3) -> (f64, f64) {
        let d = p - self.corner;
        let uu = self.edge_u.dot(self.edge_u);
        let vv = self.edge_v.dot(self.edge_v);
        let uv = self.edge_u.dot(self.edge_v);
        let du = d.dot(self.edge_u);
        let dv = d.dot(self.edge_v);
        let det = uu * vv - uv * uv;
        ((du * vv - dv * uv) / det, (dv * uu - du * uv) / det)
    }

    /// Signed distance of `p` from the surface plane along the normal.
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        (p - self.corner).dot(self.normal())
    }

    /// True if `p` lies on the plane (within `tol` meters) and inside the
    /// closed parallelogram.
    pub fn contains(&self, p: Vec3, tol: f64) -> bool {
        if self.signed_distance(p).abs() > tol {
            return false;
        }
        let (s, t) = self.plane_coords(p);
        let su = tol / self.edge_u.norm();
        let tv = tol / self.edge_v.norm();
        (-su..=1.0 + su).contains(&s) && (-tv..=1.0 + tv).contains(&t)
    }

    /// Intersection of the line `a + λ(b − a)` with the surface plane,
    /// returning `λ` and the intersection point if it falls strictly inside
    /// the parallelogram. The line parameter is unrestricted.
    pub fn line_hit(&self, a: Vec3, b: Vec3) -> Option<(f64, Vec3)> {
        let n = self.normal();
        let dir = b - a;
        let denom = dir.dot(n);
        if denom.abs() <= 1e-15 * dir.norm() {
            return None;
        }
        let lambda = (self.corner - a).dot(n) / denom;
        let p = a + dir * lambda;
        let (s, t) = self.plane_coords(p);
        if s > 0.0 && s < 1.0 && t > 0.0 && t < 1.0 {
            Some((lambda, p))
        } else {
            None
        }
    }

    /// Whether the open segment `(a, b)` crosses the surface interior.
    pub fn blocks(&self, a: Vec3, b: Vec3) -> bool {
        matches!(self.line_hit(a, b), Some((l, _)) if l > SEGMENT_EPS && l < 1.0 - SEGMENT_EPS)
    }

    /// Mirror a point across the surface plane.
    pub fn mirror(&self, p: Vec3) -> Vec3 {
        p.mirror_across(self.corner, self.normal())
    }

    fn vertices(&self) -> [Vec3; 4] {
        [
            self.corner,
            self.corner + self.edge_u,
            self.corner + self.edge_u + self.edge_v,
            self.corner + self.edge_v,
        ]
    }

    /// Whether two surfaces share interior area. Only coplanar surfaces can
    /// overlap; crossing surfaces meet along a line.
    pub fn overlaps(&self, other: &Surface) -> bool {
        let n = self.normal();
        let m = other.normal();
        if n.cross(m).norm() > 1e-9 {
            return false;
        }
        let scale = self.edge_u.norm().max(self.edge_v.norm()).max(1.0);
        if (other.corner - self.corner).dot(n).abs() > 1e-9 * scale {
            return false;
        }
        let ex = self.edge_u.normalized().unwrap_or(Vec3::X);
        let ey = n.cross(ex);
        let project = |s: &Surface| s.vertices().map(|p| ((p - self.corner).dot(ex), (p - self.corner).dot(ey)));
        let a = project(self);
        let b = project(other);
        let eps = 1e-9 * scale;
        // Separating axis test on the edge normals of both parallelograms.
        for poly in [&a, &b] {
            for i in 0..4 {
                let (x0, y0) = poly[i];
                let (x1, y1) = poly[(i + 1) % 4];
                let axis = (y0 - y1, x1 - x0);
                let span = |pts: &[(f64, f64); 4]| {
                    pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, y)| {
                        let d = x * axis.0 + y * axis.1;
                        (lo.min(d), hi.max(d))
                    })
                };
                let (alo, ahi) = span(&a);
                let (blo, bhi) = span(&b);
                let len = (axis.0 * axis.0 + axis.1 * axis.1).sqrt();
                if ahi.min(bhi) - alo.max(blo) <= eps * len {
                    return false;
                }
            }
        }
        true
    }
}
