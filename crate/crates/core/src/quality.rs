//! Element and mesh quality measures and their gradients.
//!
//! Normalised measures (mean ratio, `iq₂`, `iq₃`) equal 1 on regular
//! elements. The `q` objectives (`q₂`, `q₃`, `vol - λᵢ/Cᵢ`) are the same
//! measures weighted by their denominator and shifted so that every regular
//! element scores exactly 0; with a fixed boundary they are concave.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{self, GradVec};
use crate::mesh::{Dim, ElementKind, Mesh, Vec3, TET_EDGES, TET_FACES};

/// Normalisation constants, from closed forms.
pub mod norm {
    use std::f64::consts::PI;

    /// `iq₂` constant for `n`-gons: `area/perim²` of the regular `n`-gon.
    pub fn c_iq2(n: usize) -> f64 {
        1.0 / (4.0 * n as f64 * (PI / n as f64).tan())
    }

    /// Mean-ratio constant for `n`-gons: `area/λ` of the regular `n`-gon.
    /// For triangles this is `√3/12`.
    pub fn c_mr(n: usize) -> f64 {
        1.0 / (4.0 * (PI / n as f64).tan())
    }

    /// Mixed-mesh constant `C_e` (`√3/6` for triangles, `1/2` for quads).
    /// It carries the factor 2 that the mesh-level `½ Σ C_e λ(x_e)` removes.
    pub fn c_e(n: usize) -> f64 {
        1.0 / (2.0 * (PI / n as f64).tan())
    }

    /// `iq₃` constant: `vol/area^{3/2}` of the regular tetrahedron.
    pub fn c_iq3_tet() -> f64 {
        1.0 / (6.0 * 2f64.sqrt() * 3f64.powf(0.75))
    }

    /// `λᵢ(regular tet) / vol(regular tet)` for `i = 1..=5`.
    pub fn c_lambda(i: usize) -> f64 {
        let s3 = 3f64.sqrt();
        let face = s3 / 4.0;
        let lam = match i {
            1 => 4.0 * face * 3.0,
            2 => 4.0 * face.powf(1.5),
            3 => 6f64.powf(1.5),
            4 => 6.0,
            5 => (4.0 * face).powf(1.5),
            _ => panic!("λ variant {i} out of range 1..=5"),
        };
        lam * 6.0 * 2f64.sqrt()
    }

    /// Mean-ratio scale for tetrahedra, `12·3^{2/3}`.
    pub fn c_mr_tet() -> f64 {
        12.0 * 3f64.powf(2.0 / 3.0)
    }
}

/// Which objective or measure to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QualityKind {
    /// Mean ratio (`area/(C λ)` for polygons, the algebraic tet mean ratio).
    /// As an objective: the mesh average.
    MeanRatio,
    /// `sign(mr)·√|mr|`; as an objective: the mesh average.
    SqrtMeanRatio,
    Iq2,
    /// Product of `iq₂`, evaluated as its logarithm. Experimental: it needs
    /// a valid mesh to start from.
    Iq2Product,
    Iq3,
    /// `area - w C perim²`.
    Q2,
    /// `area - w C λ`, whose maximiser is the weighted Laplacian.
    Q2Lambda,
    /// `vol - w C area^{3/2}` with the boundary area of each tetrahedron.
    Q3,
    /// `½ Σ ‖xᵢ - xⱼ‖²` over mesh edges; minimised.
    LambdaEdges,
    Lambda1,
    Lambda2,
    Lambda3,
    Lambda4,
    Lambda5,
}

impl QualityKind {
    /// False for objectives that are minimised.
    pub fn maximize(self) -> bool {
        !matches!(self, QualityKind::LambdaEdges)
    }

    pub fn lambda_index(self) -> Option<usize> {
        match self {
            QualityKind::Lambda1 => Some(1),
            QualityKind::Lambda2 => Some(2),
            QualityKind::Lambda3 => Some(3),
            QualityKind::Lambda4 => Some(4),
            QualityKind::Lambda5 | QualityKind::Q3 => Some(5),
            _ => None,
        }
    }

    pub fn from_lambda_index(i: usize) -> Option<Self> {
        match i {
            1 => Some(QualityKind::Lambda1),
            2 => Some(QualityKind::Lambda2),
            3 => Some(QualityKind::Lambda3),
            4 => Some(QualityKind::Lambda4),
            5 => Some(QualityKind::Lambda5),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QualityKind::MeanRatio => "mr",
            QualityKind::SqrtMeanRatio => "sqrt-mr",
            QualityKind::Iq2 => "iq2",
            QualityKind::Iq2Product => "iq2-product",
            QualityKind::Iq3 => "iq3",
            QualityKind::Q2 => "q2",
            QualityKind::Q2Lambda => "q2-lambda",
            QualityKind::Q3 => "q3",
            QualityKind::LambdaEdges => "lambda",
            QualityKind::Lambda1 => "lambda1",
            QualityKind::Lambda2 => "lambda2",
            QualityKind::Lambda3 => "lambda3",
            QualityKind::Lambda4 => "lambda4",
            QualityKind::Lambda5 => "lambda5",
        }
    }

    fn averaged(self) -> bool {
        matches!(self, QualityKind::MeanRatio | QualityKind::SqrtMeanRatio)
    }

    /// Objectives with an additive area/volume term. That term is constant
    /// on interior vertices, so its gradient is assembled at mesh level.
    fn has_measure_term(self) -> bool {
        matches!(
            self,
            QualityKind::Q2
                | QualityKind::Q2Lambda
                | QualityKind::Q3
                | QualityKind::Lambda1
                | QualityKind::Lambda2
                | QualityKind::Lambda3
                | QualityKind::Lambda4
                | QualityKind::Lambda5
        )
    }
}

impl std::str::FromStr for QualityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k = match s {
            "mr" => QualityKind::MeanRatio,
            "sqrt-mr" => QualityKind::SqrtMeanRatio,
            "iq2" => QualityKind::Iq2,
            "iq2-product" => QualityKind::Iq2Product,
            "iq3" => QualityKind::Iq3,
            "q2" => QualityKind::Q2,
            "q2-lambda" => QualityKind::Q2Lambda,
            "q3" => QualityKind::Q3,
            "lambda" => QualityKind::LambdaEdges,
            "lambda1" => QualityKind::Lambda1,
            "lambda2" => QualityKind::Lambda2,
            "lambda3" => QualityKind::Lambda3,
            "lambda4" => QualityKind::Lambda4,
            "lambda5" => QualityKind::Lambda5,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown quality measure `{other}`"
                )))
            }
        };
        Ok(k)
    }
}

/// A quality objective with per-element weights `w_e` (default 1).
///
/// For the `q` objectives the weight scales the penalty term, as in
/// `area - w_e C perim²`; for every other kind it scales the element value.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityFn {
    pub kind: QualityKind,
    weights: Vec<f64>,
}

impl QualityFn {
    pub fn new(kind: QualityKind) -> Self {
        QualityFn {
            kind,
            weights: Vec::new(),
        }
    }

    pub fn with_weights(kind: QualityKind, weights: Vec<f64>) -> Result<Self> {
        let mut f = Self::new(kind);
        f.set_weights(weights)?;
        Ok(f)
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "element weights must be positive, got {w}"
            )));
        }
        self.weights = weights;
        Ok(())
    }

    /// Weights, empty when all are 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, e: usize) -> f64 {
        self.weights.get(e).copied().unwrap_or(1.0)
    }
}

impl From<QualityKind> for QualityFn {
    fn from(kind: QualityKind) -> Self {
        QualityFn::new(kind)
    }
}

/// How the area of a polygon gets its sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AreaSign {
    /// Determinant of the `xy` components.
    Planar,
    /// `½‖ν‖`, never negative.
    Unsigned,
    /// `½‖ν‖` times the sign of `ν · reference`.
    Reference(Vec3),
}

pub fn signed_area(x: &[Vec3], sign: AreaSign) -> Result<f64> {
    Ok(match sign {
        AreaSign::Planar => geometry::polygon_signed_area_2d(x),
        AreaSign::Unsigned => geometry::polygon_area(x)?,
        AreaSign::Reference(r) => {
            let nu = geometry::polygon_normal(x)?;
            0.5 * nu.norm() * if nu.dot(&r) < 0.0 { -1.0 } else { 1.0 }
        }
    })
}

fn grad_signed_area(x: &[Vec3], sign: AreaSign) -> Result<Vec<Vec3>> {
    Ok(match sign {
        AreaSign::Planar => geometry::grad_signed_area_2d(x),
        AreaSign::Unsigned => geometry::grad_polygon_area(x)?,
        AreaSign::Reference(r) => {
            let mut g = geometry::grad_polygon_area(x)?;
            if geometry::polygon_normal(x)?.dot(&r) < 0.0 {
                g.iter_mut().for_each(|v| *v = -*v);
            }
            g
        }
    })
}

/// Sum of squared edge lengths: cyclic edges of a polygon, or all six
/// edges of a tetrahedron.
pub fn lambda_edges(kind: ElementKind, x: &[Vec3]) -> f64 {
    match kind {
        ElementKind::Tetrahedron => TET_EDGES
            .iter()
            .map(|&(i, j)| (x[i] - x[j]).norm_squared())
            .sum(),
        _ => {
            let n = x.len();
            (0..n).map(|i| (x[(i + 1) % n] - x[i]).norm_squared()).sum()
        }
    }
}

fn grad_lambda_edges(kind: ElementKind, x: &[Vec3]) -> Vec<Vec3> {
    let mut g = vec![Vec3::zeros(); x.len()];
    let mut add = |i: usize, j: usize| {
        let d = (x[i] - x[j]) * 2.0;
        g[i] += d;
        g[j] -= d;
    };
    match kind {
        ElementKind::Tetrahedron => TET_EDGES.iter().for_each(|&(i, j)| add(i, j)),
        _ => (0..x.len()).for_each(|i| add(i, (i + 1) % x.len())),
    }
    g
}

/// Mean ratio of a triangle, polygon or tetrahedron.
///
/// Polygons: `area/(C λ)`, with `C` making the regular polygon score 1.
/// Tetrahedra: `12 (3|vol|)^{2/3} / Σℓ²` with the sign of `vol`.
pub fn mean_ratio(kind: ElementKind, x: &[Vec3], sign: AreaSign) -> Result<f64> {
    match kind {
        ElementKind::Tetrahedron => Ok(eval_tet(QualityKind::MeanRatio, &tet(x)?, 1.0, false, true)?.0),
        _ => Ok(eval_polygon(QualityKind::MeanRatio, x, sign, 1.0, false, true)?.0),
    }
}

/// Isoperimetric quotient `area/(C perim²)`, 1 on the regular `n`-gon.
pub fn iq2(x: &[Vec3], sign: AreaSign) -> Result<f64> {
    Ok(eval_polygon(QualityKind::Iq2, x, sign, 1.0, false, true)?.0)
}

/// `vol/(C area^{3/2})` with the boundary area, 1 on the regular tetrahedron.
pub fn iq3(x: &[Vec3; 4]) -> Result<f64> {
    Ok(eval_tet(QualityKind::Iq3, x, 1.0, false, true)?.0)
}

/// Penalty used by [`q2_element`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Q2Variant {
    /// `area - w C perim²`
    Perimeter,
    /// `area - w C λ`
    Lambda,
}

pub fn q2_element(x: &[Vec3], variant: Q2Variant, w: f64, sign: AreaSign) -> Result<f64> {
    let kind = match variant {
        Q2Variant::Perimeter => QualityKind::Q2,
        Q2Variant::Lambda => QualityKind::Q2Lambda,
    };
    Ok(eval_polygon(kind, x, sign, w, false, true)?.0)
}

/// `vol - w λᵢ/Cᵢ` for `i = 1..=5`; `i = 5` is `q₃`.
pub fn q3_element(x: &[Vec3; 4], lambda: usize, w: f64) -> Result<f64> {
    let kind = QualityKind::from_lambda_index(lambda)
        .ok_or_else(|| Error::InvalidArgument(format!("λ variant {lambda} out of range")))?;
    Ok(eval_tet(kind, x, w, false, true)?.0)
}

struct TetFaces {
    area: [f64; 4],
    perim: [f64; 4],
}

fn tet_faces(x: &[Vec3; 4]) -> TetFaces {
    let mut area = [0.0; 4];
    let mut perim = [0.0; 4];
    for (k, f) in TET_FACES.iter().enumerate() {
        let p = [x[f[0]], x[f[1]], x[f[2]]];
        area[k] = geometry::tri_area(&p, false);
        perim[k] = geometry::perimeter(&p);
    }
    TetFaces { area, perim }
}

fn face_area_grad(x: &[Vec3; 4], k: usize) -> Result<[Vec3; 4]> {
    let f = TET_FACES[k];
    let ga = geometry::grad_tri_area(&[x[f[0]], x[f[1]], x[f[2]]])?;
    let mut g = [Vec3::zeros(); 4];
    for (a, &i) in f.iter().enumerate() {
        g[i] = ga[a];
    }
    Ok(g)
}

fn face_perim_grad(x: &[Vec3; 4], k: usize) -> Result<[Vec3; 4]> {
    let f = TET_FACES[k];
    let gp = geometry::grad_perimeter(&[x[f[0]], x[f[1]], x[f[2]]])?;
    let mut g = [Vec3::zeros(); 4];
    for (a, &i) in f.iter().enumerate() {
        g[i] = gp[a];
    }
    Ok(g)
}

/// `λᵢ` of a tetrahedron:
///
/// 1. `Σ area(x̂ᵢ) perim(x̂ᵢ)` over faces
/// 2. `Σ area(x̂ᵢ)^{3/2}`
/// 3. `(Σ_{i<j} ‖xᵢ - xⱼ‖²)^{3/2}`
/// 4. `Σ_{i<j} ‖xᵢ - xⱼ‖³`
/// 5. `area^{3/2}` of the whole boundary
pub fn lambda_variant(x: &[Vec3; 4], i: usize) -> Result<f64> {
    Ok(lambda_value_grad(x, i, false)?.0)
}

pub fn grad_lambda_variant(x: &[Vec3; 4], i: usize) -> Result<[Vec3; 4]> {
    Ok(lambda_value_grad(x, i, true)?.1.expect("gradient requested"))
}

fn lambda_value_grad(x: &[Vec3; 4], i: usize, want: bool) -> Result<(f64, Option<[Vec3; 4]>)> {
    let mut g = [Vec3::zeros(); 4];
    let value = match i {
        1 | 2 | 5 => {
            let faces = tet_faces(x);
            match i {
                1 => {
                    if want {
                        for k in 0..4 {
                            let ga = face_area_grad(x, k)?;
                            let gp = face_perim_grad(x, k)?;
                            for v in 0..4 {
                                g[v] += ga[v] * faces.perim[k] + gp[v] * faces.area[k];
                            }
                        }
                    }
                    (0..4).map(|k| faces.area[k] * faces.perim[k]).sum()
                }
                2 => {
                    if want {
                        for k in 0..4 {
                            let ga = face_area_grad(x, k)?;
                            let s = 1.5 * faces.area[k].sqrt();
                            for v in 0..4 {
                                g[v] += ga[v] * s;
                            }
                        }
                    }
                    faces.area.iter().map(|a| a.powf(1.5)).sum()
                }
                _ => {
                    let total: f64 = faces.area.iter().sum();
                    if want {
                        let s = 1.5 * total.sqrt();
                        for k in 0..4 {
                            let ga = face_area_grad(x, k)?;
                            for v in 0..4 {
                                g[v] += ga[v] * s;
                            }
                        }
                    }
                    total.powf(1.5)
                }
            }
        }
        3 => {
            let s = lambda_edges(ElementKind::Tetrahedron, x);
            if want {
                let gs = grad_lambda_edges(ElementKind::Tetrahedron, x);
                for v in 0..4 {
                    g[v] = gs[v] * (1.5 * s.sqrt());
                }
            }
            s.powf(1.5)
        }
        4 => {
            let mut total = 0.0;
            for &(a, b) in &TET_EDGES {
                let d = x[a] - x[b];
                total += d.norm().powi(3);
                if want {
                    let gd = Vec3::from_column_slice(&geometry::grad_norm_pow(d.as_slice(), 3.0)?);
                    g[a] += gd;
                    g[b] -= gd;
                }
            }
            total
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "λ variant {i} out of range 1..=5"
            )))
        }
    };
    Ok((value, want.then_some(g)))
}

fn tet(x: &[Vec3]) -> Result<[Vec3; 4]> {
    if x.len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "tetrahedron needs 4 points, got {}",
            x.len()
        )));
    }
    Ok([x[0], x[1], x[2], x[3]])
}

type Eval = (f64, Option<Vec<Vec3>>);

fn singular_if_zero(v: f64, what: &str) -> Result<()> {
    if v == 0.0 || !v.is_finite() {
        return Err(Error::singular(format!("{what} vanishes")));
    }
    Ok(())
}

/// Value (and optionally gradient) of one polygon. With `measure_grad =
/// false` the gradient omits the additive area term of the `q` objectives.
fn eval_polygon(
    kind: QualityKind,
    x: &[Vec3],
    sign: AreaSign,
    w: f64,
    want: bool,
    measure_grad: bool,
) -> Result<Eval> {
    let n = x.len();
    let area = signed_area(x, sign)?;
    match kind {
        QualityKind::MeanRatio | QualityKind::SqrtMeanRatio => {
            let c = norm::c_mr(n);
            let l = lambda_edges(ElementKind::Triangle, x);
            singular_if_zero(l, "λ")?;
            let mr = area / (c * l);
            let grad_mr = |ga: Vec<Vec3>| -> Vec<Vec3> {
                let gl = grad_lambda_edges(ElementKind::Triangle, x);
                ga.iter()
                    .zip(&gl)
                    .map(|(a, b)| (a * l - b * area) / (c * l * l))
                    .collect()
            };
            if kind == QualityKind::MeanRatio {
                let g = if want {
                    Some(scaled(grad_mr(grad_signed_area(x, sign)?), w))
                } else {
                    None
                };
                Ok((w * mr, g))
            } else {
                let r = mr.abs().sqrt();
                let g = if want {
                    singular_if_zero(r, "mean ratio")?;
                    Some(scaled(grad_mr(grad_signed_area(x, sign)?), w / (2.0 * r)))
                } else {
                    None
                };
                Ok((w * mr.signum() * r, g))
            }
        }
        QualityKind::Iq2 | QualityKind::Iq2Product => {
            let c = norm::c_iq2(n);
            let p = geometry::perimeter(x);
            singular_if_zero(p, "perimeter")?;
            let iq = area / (c * p * p);
            let grad_iq = || -> Result<Vec<Vec3>> {
                let ga = grad_signed_area(x, sign)?;
                let gp = geometry::grad_perimeter(x)?;
                Ok(ga
                    .iter()
                    .zip(&gp)
                    .map(|(a, b)| (a - b * (2.0 * area / p)) / (c * p * p))
                    .collect())
            };
            if kind == QualityKind::Iq2 {
                let g = if want { Some(scaled(grad_iq()?, w)) } else { None };
                Ok((w * iq, g))
            } else {
                if !(iq > 0.0) {
                    if want {
                        return Err(Error::singular("log of a non-positive iq₂"));
                    }
                    return Ok((f64::NEG_INFINITY, None));
                }
                let g = if want { Some(scaled(grad_iq()?, w / iq)) } else { None };
                Ok((w * iq.ln(), g))
            }
        }
        QualityKind::Q2 => {
            let c = norm::c_iq2(n);
            let p = geometry::perimeter(x);
            let g = if want {
                let gp = geometry::grad_perimeter(x)?;
                let mut g: Vec<Vec3> = gp.iter().map(|v| v * (-2.0 * w * c * p)).collect();
                if measure_grad {
                    add_into(&mut g, &grad_signed_area(x, sign)?);
                }
                Some(g)
            } else {
                None
            };
            Ok((area - w * c * p * p, g))
        }
        QualityKind::Q2Lambda => {
            let c = norm::c_mr(n);
            let l = lambda_edges(ElementKind::Triangle, x);
            let g = if want {
                let mut g = scaled(grad_lambda_edges(ElementKind::Triangle, x), -w * c);
                if measure_grad {
                    add_into(&mut g, &grad_signed_area(x, sign)?);
                }
                Some(g)
            } else {
                None
            };
            Ok((area - w * c * l, g))
        }
        other => Err(Error::Unsupported(format!(
            "measure `{}` on polygonal elements",
            other.name()
        ))),
    }
}

fn eval_tet(kind: QualityKind, x: &[Vec3; 4], w: f64, want: bool, measure_grad: bool) -> Result<Eval> {
    let vol = geometry::tet_volume(x);
    let gvol = || geometry::grad_tet_volume(x).to_vec();
    match kind {
        QualityKind::MeanRatio | QualityKind::SqrtMeanRatio => {
            let k = norm::c_mr_tet();
            let s = lambda_edges(ElementKind::Tetrahedron, x);
            singular_if_zero(s, "λ")?;
            let h = vol.signum() * vol.abs().powf(2.0 / 3.0);
            let mr = if vol == 0.0 { 0.0 } else { k * h / s };
            let grad_mr = || -> Result<Vec<Vec3>> {
                singular_if_zero(vol, "volume")?;
                let dh = (2.0 / 3.0) * vol.abs().powf(-1.0 / 3.0);
                let gs = grad_lambda_edges(ElementKind::Tetrahedron, x);
                Ok(gvol()
                    .iter()
                    .zip(&gs)
                    .map(|(gv, gl)| (gv * (dh * s) - gl * h) * (k / (s * s)))
                    .collect())
            };
            if kind == QualityKind::MeanRatio {
                let g = if want { Some(scaled(grad_mr()?, w)) } else { None };
                Ok((w * mr, g))
            } else {
                let r = mr.abs().sqrt();
                let g = if want {
                    singular_if_zero(r, "mean ratio")?;
                    Some(scaled(grad_mr()?, w / (2.0 * r)))
                } else {
                    None
                };
                Ok((w * mr.signum() * r, g))
            }
        }
        QualityKind::Iq3 => {
            let c = norm::c_iq3_tet();
            let faces = tet_faces(x);
            let a: f64 = faces.area.iter().sum();
            singular_if_zero(a, "boundary area")?;
            let denom = c * a.powf(1.5);
            let g = if want {
                let mut g = gvol();
                for k in 0..4 {
                    let ga = face_area_grad(x, k)?;
                    for v in 0..4 {
                        g[v] -= ga[v] * (1.5 * vol / a);
                    }
                }
                Some(scaled(g, w / denom))
            } else {
                None
            };
            Ok((w * vol / denom, g))
        }
        _ => {
            let i = kind.lambda_index().ok_or_else(|| {
                Error::Unsupported(format!("measure `{}` on tetrahedra", kind.name()))
            })?;
            let c = norm::c_lambda(i);
            let (lam, gl) = lambda_value_grad(x, i, want)?;
            let g = gl.map(|gl| {
                let mut g: Vec<Vec3> = gl.iter().map(|v| v * (-w / c)).collect();
                if measure_grad {
                    add_into(&mut g, &gvol());
                }
                g
            });
            Ok((vol - w * lam / c, g))
        }
    }
}

fn scaled(mut g: Vec<Vec3>, s: f64) -> Vec<Vec3> {
    g.iter_mut().for_each(|v| *v *= s);
    g
}

fn add_into(g: &mut [Vec3], h: &[Vec3]) {
    g.iter_mut().zip(h).for_each(|(a, b)| *a += b);
}

/// Area sign convention of element `e` of `m`.
pub fn area_sign(m: &Mesh, e: usize) -> AreaSign {
    match m.dim() {
        Dim::Two => AreaSign::Planar,
        Dim::Three => match m.reference_normals() {
            Some(r) => AreaSign::Reference(r[e]),
            None => AreaSign::Unsigned,
        },
    }
}

/// Signed area (polygons) or volume (tetrahedra) of element `e`.
pub fn element_measure(m: &Mesh, e: usize) -> f64 {
    let x = m.element_points(e);
    match m.elements()[e].kind() {
        ElementKind::Tetrahedron => geometry::tet_volume(&[x[0], x[1], x[2], x[3]]),
        _ => signed_area(&x, area_sign(m, e)).unwrap_or(0.0),
    }
}

/// Value of `kind` on element `e` of `m`, with weight `w`.
pub fn element_quality(m: &Mesh, e: usize, kind: QualityKind, w: f64) -> Result<f64> {
    if kind == QualityKind::LambdaEdges {
        let el = &m.elements()[e];
        return Ok(lambda_edges(el.kind(), &m.element_points(e)));
    }
    element_eval(m, e, kind, w, false, true).map(|r| r.0)
}

fn element_eval(
    m: &Mesh,
    e: usize,
    kind: QualityKind,
    w: f64,
    want: bool,
    measure_grad: bool,
) -> Result<Eval> {
    let x = m.element_points(e);
    let r = match m.elements()[e].kind() {
        ElementKind::Tetrahedron => eval_tet(kind, &tet(&x)?, w, want, measure_grad),
        _ => eval_polygon(kind, &x, area_sign(m, e), w, want, measure_grad),
    };
    r.map_err(|err| err.in_element(e))
}

/// Boundary data reused across evaluations while the connectivity is fixed.
#[derive(Debug, Clone)]
pub struct QualityContext {
    boundary: Vec<bool>,
    /// planar meshes: `(next, prev)` along the boundary curve
    planar_links: Vec<Option<(usize, usize)>>,
    /// tetrahedral meshes: outward boundary faces at each vertex, rotated to
    /// start at that vertex
    vertex_faces: Vec<Vec<[usize; 3]>>,
}

impl QualityContext {
    pub fn new(m: &Mesh) -> Result<Self> {
        let n = m.num_vertices();
        let boundary = m.classify_boundary()?;
        let mut planar_links = vec![None; n];
        let mut vertex_faces = vec![Vec::new(); n];
        if m.is_tetrahedral() {
            for f in m.boundary_faces()? {
                for r in 0..3 {
                    vertex_faces[f[r]].push([f[r], f[(r + 1) % 3], f[(r + 2) % 3]]);
                }
            }
        } else if m.dim() == Dim::Two {
            let mut next = vec![None; n];
            let mut prev = vec![None; n];
            for (a, b) in m.boundary_edges()? {
                next[a] = Some(b);
                prev[b] = Some(a);
            }
            for v in 0..n {
                planar_links[v] = next[v].zip(prev[v]);
            }
        }
        Ok(QualityContext {
            boundary,
            planar_links,
            vertex_faces,
        })
    }

    pub fn boundary(&self) -> &[bool] {
        &self.boundary
    }
}

/// Mesh objective value and, optionally, its gradient over `movable`
/// vertices (all other components are zero).
pub(crate) fn evaluate(
    m: &Mesh,
    f: &QualityFn,
    ctx: &QualityContext,
    movable: Option<&[bool]>,
) -> Result<(f64, Option<GradVec>)> {
    evaluate_scaled(m, f, ctx, movable, false)
}

/// As [`evaluate`]; with `per_element` each element gradient is divided by
/// the square root of its norm before assembly.
pub(crate) fn evaluate_scaled(
    m: &Mesh,
    f: &QualityFn,
    ctx: &QualityContext,
    movable: Option<&[bool]>,
    per_element: bool,
) -> Result<(f64, Option<GradVec>)> {
    let want = movable.is_some();
    let n = m.num_vertices();
    let kind = f.kind;

    if kind == QualityKind::LambdaEdges {
        let mut value = 0.0;
        let mut g = GradVec::zeros(if want { n } else { 0 });
        let x = m.coords();
        for (a, b) in m.edges() {
            let d = x[a] - x[b];
            value += 0.5 * d.norm_squared();
            if want {
                g[a] += d;
                g[b] -= d;
            }
        }
        if let Some(mask) = movable {
            mask_gradient(&mut g, mask);
            return Ok((value, Some(g)));
        }
        return Ok((value, None));
    }

    // planar and tetrahedral meshes: area/volume gradient from the boundary
    let boundary_measure = kind.has_measure_term() && (m.dim() == Dim::Two || m.is_tetrahedral());
    let mut value = 0.0;
    let mut g = GradVec::zeros(if want { n } else { 0 });
    for (e, el) in m.elements().iter().enumerate() {
        let (v, ge) = element_eval(m, e, kind, f.weight(e), want, !boundary_measure)?;
        value += v;
        if let Some(mut ge) = ge {
            if per_element {
                let norm = ge.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
                if norm > 0.0 {
                    ge.iter_mut().for_each(|g| *g /= norm.sqrt());
                }
            }
            for (&vi, gv) in el.verts().iter().zip(&ge) {
                g[vi] += gv;
            }
        }
    }
    if kind.averaged() && m.num_elements() > 0 {
        value /= m.num_elements() as f64;
        g.scale(1.0 / m.num_elements() as f64);
    }
    let Some(mask) = movable else {
        return Ok((value, None));
    };
    if boundary_measure {
        let x = m.coords();
        for v in 0..n {
            if !mask[v] || !ctx.boundary[v] {
                continue;
            }
            if m.is_tetrahedral() {
                let faces: Vec<Vec<Vec3>> = ctx.vertex_faces[v]
                    .iter()
                    .map(|f| f.iter().map(|&i| x[i]).collect())
                    .collect();
                let refs: Vec<&[Vec3]> = faces.iter().map(|f| f.as_slice()).collect();
                g[v] += geometry::grad_vol_boundary_node(&refs)?;
            } else if let Some((next, prev)) = ctx.planar_links[v] {
                let d = x[next] - x[prev];
                g[v] += Vec3::new(0.5 * d.y, -0.5 * d.x, 0.0);
            }
        }
    }
    mask_gradient(&mut g, mask);
    Ok((value, Some(g)))
}

fn mask_gradient(g: &mut GradVec, mask: &[bool]) {
    for (gv, &m) in g.iter_mut().zip(mask) {
        if !m {
            *gv = Vec3::zeros();
        }
    }
}

/// Mesh quality: the weighted sum of element values (the average for the
/// mean-ratio kinds, `½ Σ‖xᵢ - xⱼ‖²` over edges for [`QualityKind::LambdaEdges`]).
pub fn mesh_quality(m: &Mesh, f: &QualityFn) -> Result<f64> {
    let ctx = QualityContext::new(m)?;
    Ok(evaluate(m, f, &ctx, None)?.0)
}

/// Gradient of [`mesh_quality`] with respect to the non-fixed vertices.
pub fn grad_mesh_quality(m: &Mesh, f: &QualityFn) -> Result<GradVec> {
    let ctx = QualityContext::new(m)?;
    let movable: Vec<bool> = m.fixed().iter().map(|&b| !b).collect();
    Ok(evaluate(m, f, &ctx, Some(&movable))?
        .1
        .expect("gradient requested"))
}

/// Per-element values and summary statistics of a measure.
#[derive(Debug, Clone, Serialize)]
pub struct QualityReport {
    pub measure: String,
    pub values: Vec<f64>,
    pub average: f64,
    pub min: f64,
    pub max: f64,
    /// Elements with non-positive signed area or volume.
    pub invalid_count: usize,
}

pub fn quality_report(m: &Mesh, kind: QualityKind) -> Result<QualityReport> {
    let mut values = Vec::with_capacity(m.num_elements());
    for e in 0..m.num_elements() {
        let v = match kind {
            QualityKind::Iq2Product => element_quality(m, e, QualityKind::Iq2, 1.0)?,
            k => element_quality(m, e, k, 1.0)?,
        };
        values.push(v);
    }
    let invalid_count = (0..m.num_elements())
        .filter(|&e| !(element_measure(m, e) > 0.0))
        .count();
    let (average, min, max) = if values.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        (
            values.iter().sum::<f64>() / values.len() as f64,
            values.iter().copied().fold(f64::INFINITY, f64::min),
            values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    Ok(QualityReport {
        measure: kind.name().to_string(),
        values,
        average,
        min,
        max,
        invalid_count,
    })
}
