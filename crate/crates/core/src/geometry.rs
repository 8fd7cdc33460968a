//! Signed geometric primitives and their exact gradients.
//!
//! Gradients are returned per input vertex, in the same order as the input
//! points. Functions normalising by a vanishing norm return
//! [`Error::Singular`] instead of producing NaN.

use crate::error::{Error, Result};
use crate::mesh::Vec3;

/// Per-vertex gradient, indexed like the vertex list it differentiates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradVec(pub Vec<Vec3>);

impl GradVec {
    pub fn zeros(n: usize) -> Self {
        GradVec(vec![Vec3::zeros(); n])
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|g| g.norm_squared()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn dot(&self, other: &GradVec) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.dot(b)).sum()
    }

    /// Largest per-vertex Euclidean norm.
    pub fn max_norm(&self) -> f64 {
        self.0.iter().map(|g| g.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|g| *g *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.iter().all(|c| c.is_finite()))
    }
}

impl std::ops::Deref for GradVec {
    type Target = [Vec3];

    fn deref(&self) -> &[Vec3] {
        &self.0
    }
}

impl std::ops::DerefMut for GradVec {
    fn deref_mut(&mut self) -> &mut [Vec3] {
        &mut self.0
    }
}

/// `ν(i, j, k) = (x_j - x_i) × (x_k - x_i)`.
#[inline]
pub fn tri_normal(a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    (b - a).cross(&(c - a))
}

/// Signed volume of a tetrahedron, positive when positively oriented.
pub fn tet_volume(x: &[Vec3; 4]) -> f64 {
    tri_normal(&x[0], &x[1], &x[2]).dot(&(x[3] - x[0])) / 6.0
}

/// Area of a triangle. In signed mode the planar determinant of the `xy`
/// components is used, which is negative on clockwise triangles.
pub fn tri_area(x: &[Vec3; 3], signed: bool) -> f64 {
    if signed {
        let u = x[1] - x[0];
        let v = x[2] - x[0];
        0.5 * (u.x * v.y - u.y * v.x)
    } else {
        0.5 * tri_normal(&x[0], &x[1], &x[2]).norm()
    }
}

/// Normal of a closed polygonal curve, `x₁×x₂ + … + xₙ×x₁`. Its norm is
/// twice the enclosed area.
pub fn polygon_normal(x: &[Vec3]) -> Result<Vec3> {
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "polygon normal needs at least 3 points, got {}",
            x.len()
        )));
    }
    // the fan form about x₀ is translation invariant and better conditioned
    let o = x[0];
    Ok((1..x.len() - 1).fold(Vec3::zeros(), |acc, j| {
        acc + (x[j] - o).cross(&(x[j + 1] - o))
    }))
}

/// Unsigned area `½‖ν‖` of a polygon in 3D.
pub fn polygon_area(x: &[Vec3]) -> Result<f64> {
    Ok(0.5 * polygon_normal(x)?.norm())
}

/// Signed shoelace area of a planar polygon (`xy` components).
pub fn polygon_signed_area_2d(x: &[Vec3]) -> f64 {
    let n = x.len();
    if n < 3 {
        return 0.0;
    }
    let o = x[0];
    let mut a = 0.0;
    for j in 1..n - 1 {
        let u = x[j] - o;
        let v = x[j + 1] - o;
        a += u.x * v.y - u.y * v.x;
    }
    0.5 * a
}

/// Cyclic perimeter `Σ ‖x_{i+1} - x_i‖`.
pub fn perimeter(x: &[Vec3]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    (0..n).map(|i| (x[(i + 1) % n] - x[i]).norm()).sum()
}

/// Gradient of [`tet_volume`]: `⅙(ν(4,3,2), ν(4,1,3), ν(4,2,1), ν(1,2,3))`.
pub fn grad_tet_volume(x: &[Vec3; 4]) -> [Vec3; 4] {
    let s = 1.0 / 6.0;
    [
        tri_normal(&x[3], &x[2], &x[1]) * s,
        tri_normal(&x[3], &x[0], &x[2]) * s,
        tri_normal(&x[3], &x[1], &x[0]) * s,
        tri_normal(&x[0], &x[1], &x[2]) * s,
    ]
}

fn unit_normal(nu: Vec3, scale2: f64) -> Result<Vec3> {
    let n = nu.norm();
    if !(n > 1e-14 * scale2) || !n.is_finite() {
        return Err(Error::singular("vanishing normal"));
    }
    Ok(nu / n)
}

fn spread2(x: &[Vec3]) -> f64 {
    x.iter()
        .map(|p| (p - x[0]).norm_squared())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE)
}

/// Gradient of the unsigned triangle area in 3D.
pub fn grad_tri_area(x: &[Vec3; 3]) -> Result<[Vec3; 3]> {
    let n = unit_normal(tri_normal(&x[0], &x[1], &x[2]), spread2(x))?;
    Ok([
        (x[1] - x[2]).cross(&n) * 0.5,
        (x[2] - x[0]).cross(&n) * 0.5,
        (x[0] - x[1]).cross(&n) * 0.5,
    ])
}

/// Gradient of the unsigned polygon area `½‖ν(1,…,n)‖`:
/// `½ (x_{i+1} - x_{i-1}) × ν/‖ν‖`.
pub fn grad_polygon_area(x: &[Vec3]) -> Result<Vec<Vec3>> {
    let n = unit_normal(polygon_normal(x)?, spread2(x))?;
    let k = x.len();
    Ok((0..k)
        .map(|i| (x[(i + 1) % k] - x[(i + k - 1) % k]).cross(&n) * 0.5)
        .collect())
}

/// Gradient of [`polygon_signed_area_2d`]; never singular.
pub fn grad_signed_area_2d(x: &[Vec3]) -> Vec<Vec3> {
    let k = x.len();
    (0..k)
        .map(|i| {
            let d = x[(i + 1) % k] - x[(i + k - 1) % k];
            Vec3::new(0.5 * d.y, -0.5 * d.x, 0.0)
        })
        .collect()
}

/// Gradient of [`perimeter`]: `(x_i - x_{i-1})/‖…‖ + (x_i - x_{i+1})/‖…‖`.
pub fn grad_perimeter(x: &[Vec3]) -> Result<Vec<Vec3>> {
    let k = x.len();
    if k < 2 {
        return Err(Error::InvalidArgument("perimeter needs 2 points".into()));
    }
    let scale = spread2(x).sqrt();
    let mut units = Vec::with_capacity(k);
    for i in 0..k {
        let d = x[(i + 1) % k] - x[i];
        let l = d.norm();
        if !(l > 1e-14 * scale) {
            return Err(Error::singular(format!(
                "coincident adjacent points {i} and {}",
                (i + 1) % k
            )));
        }
        units.push(d / l);
    }
    Ok((0..k).map(|i| units[(i + k - 1) % k] - units[i]).collect())
}

/// Gradient of `‖x‖ⁿ`: `n x ‖x‖^{n-2}`.
pub fn grad_norm_pow(x: &[f64], n: f64) -> Result<Vec<f64>> {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        if n < 2.0 {
            return Err(Error::singular("‖x‖ⁿ is not differentiable at 0 for n < 2"));
        }
        return Ok(vec![0.0; x.len()]);
    }
    let s = n * r.powf(n - 2.0);
    Ok(x.iter().map(|v| s * v).collect())
}

/// Area derivative at a node of a surface mesh whose star is the fan
/// `(x₀, x₁, …, xₙ)`.
///
/// On a boundary node this is `½(x₁ - xₙ) × ν/‖ν‖`, with `ν` the normal of the
/// fan polygon `(x₀, x₁, …, xₙ)`; for a convex corner `ν` has the direction
/// of `ν(0,1,n)`, and unlike `ν(0,1,n)` it stays defined when `x₀` lies on
/// the segment `xₙx₁`. An interior node of a planar mesh (closed link)
/// yields zero.
pub fn grad_area_boundary_node(x0: &Vec3, link: &[Vec3], closed: bool) -> Result<Vec3> {
    if closed {
        return Ok(Vec3::zeros());
    }
    if link.len() < 2 {
        return Err(Error::InvalidArgument(
            "boundary link needs at least 2 points".into(),
        ));
    }
    let mut fan = Vec::with_capacity(link.len() + 1);
    fan.push(*x0);
    fan.extend_from_slice(link);
    let n = unit_normal(polygon_normal(&fan)?, spread2(&fan))?;
    Ok((link[0] - link[link.len() - 1]).cross(&n) * 0.5)
}

fn nu(face: &[Vec3], idx: &[usize]) -> Vec3 {
    let o = face[idx[0] - 1];
    (1..idx.len() - 1).fold(Vec3::zeros(), |acc, j| {
        acc + (face[idx[j] - 1] - o).cross(&(face[idx[j + 1] - 1] - o))
    })
}

/// Contribution `cₙ` of one boundary face `(x₁, …, xₙ)` to `6·∇vol` at its
/// first vertex: the average, over all triangulations of the face, of the
/// normals of the triangles containing `x₁`.
pub fn face_volume_contribution(face: &[Vec3]) -> Result<Vec3> {
    let c = match face.len() {
        3 => nu(face, &[1, 2, 3]),
        4 => (nu(face, &[1, 2, 4]) + nu(face, &[1, 2, 3, 4])) / 2.0,
        5 => {
            (nu(face, &[1, 2, 5]) * 2.0
                + nu(face, &[1, 2, 3, 5])
                + nu(face, &[1, 2, 4, 5])
                + nu(face, &[1, 2, 3, 4, 5]))
                / 5.0
        }
        6 => {
            // 14 triangulations, grouped by the diagonals leaving x₁
            (nu(face, &[1, 2, 6]) * 5.0
                + nu(face, &[1, 2, 3, 6]) * 2.0
                + nu(face, &[1, 2, 5, 6]) * 2.0
                + nu(face, &[1, 2, 4, 6])
                + nu(face, &[1, 2, 3, 4, 6])
                + nu(face, &[1, 2, 3, 5, 6])
                + nu(face, &[1, 2, 4, 5, 6])
                + nu(face, &[1, 2, 3, 4, 5, 6]))
                / 14.0
        }
        n => {
            return Err(Error::Unsupported(format!(
                "boundary faces with {n} vertices (3 to 6 supported)"
            )))
        }
    };
    Ok(c)
}

/// Volume gradient at a boundary node `x₀` when it is the only free vertex.
///
/// `faces` are the outward-oriented boundary faces incident to `x₀`, each
/// listed starting at `x₀`. For all-triangle stars this is `⅙ν(link)`.
pub fn grad_vol_boundary_node(faces: &[&[Vec3]]) -> Result<Vec3> {
    let mut acc = Vec3::zeros();
    for f in faces {
        acc += face_volume_contribution(f)?;
    }
    Ok(acc / 6.0)
}
