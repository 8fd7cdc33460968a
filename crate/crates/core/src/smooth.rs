//! Smoothing drivers: Laplacian, weighted Laplacian and gradient ascent
//! with a backtracking line search, plus projection of boundary vertices
//! back onto their geometry and adaptive element weights.

use log::{debug, trace};

use crate::error::{Error, Result};
use crate::geometry::GradVec;
use crate::mesh::{Mesh, Vec3};
use crate::quality::{self, norm, QualityContext, QualityFn, QualityKind};

/// Target geometry for projected vertices.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// Piecewise-linear curve in the `xy` plane.
    Polyline2D { points: Vec<Vec3>, closed: bool },
    /// Circle in the `xy` plane.
    ImplicitCircle { center: Vec3, radius: f64 },
    ImplicitSphere { center: Vec3, radius: f64 },
    FixedPoint(Vec3),
}

impl Geometry {
    /// Nearest point on the geometry.
    ///
    /// Ties are broken deterministically: the centre of a circle or sphere
    /// projects in the `+x` direction, and on a polyline the first segment
    /// (in point order) wins.
    pub fn project(&self, p: &Vec3) -> Vec3 {
        match self {
            Geometry::FixedPoint(q) => *q,
            Geometry::ImplicitCircle { center, radius } => {
                let d = Vec3::new(p.x - center.x, p.y - center.y, 0.0);
                let n = d.norm();
                let dir = if n > 0.0 { d / n } else { Vec3::x() };
                Vec3::new(center.x, center.y, p.z) + dir * *radius
            }
            Geometry::ImplicitSphere { center, radius } => {
                let d = p - center;
                let n = d.norm();
                let dir = if n > 0.0 { d / n } else { Vec3::x() };
                center + dir * *radius
            }
            Geometry::Polyline2D { points, closed } => {
                let k = points.len();
                if k == 0 {
                    return *p;
                }
                if k == 1 {
                    return points[0];
                }
                let segs = if *closed { k } else { k - 1 };
                let mut best = points[0];
                let mut best_d = f64::INFINITY;
                for s in 0..segs {
                    let a = points[s];
                    let b = points[(s + 1) % k];
                    let q = nearest_on_segment(p, &a, &b);
                    let d = (q - p).norm_squared();
                    if d < best_d {
                        best_d = d;
                        best = q;
                    }
                }
                best
            }
        }
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        (self.project(p) - p).norm()
    }

    /// Closed polyline through the four corners of an axis-aligned rectangle.
    pub fn rectangle(min: [f64; 2], max: [f64; 2]) -> Self {
        Geometry::Polyline2D {
            points: vec![
                Vec3::new(min[0], min[1], 0.0),
                Vec3::new(max[0], min[1], 0.0),
                Vec3::new(max[0], max[1], 0.0),
                Vec3::new(min[0], max[1], 0.0),
            ],
            closed: true,
        }
    }
}

fn nearest_on_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> Vec3 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// Nearest point of `g` to `p`.
pub fn project(g: &Geometry, p: &Vec3) -> Vec3 {
    g.project(p)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Laplace,
    /// Laplacian weighted by the mixed-mesh constants `C_e`.
    LaplaceWeighted,
    GradAscent(QualityFn),
}

impl Method {
    /// Command-line name: `laplace`, `laplace-weighted`, or the objective's
    /// quality name.
    pub fn name(&self) -> &'static str {
        match self {
            Method::Laplace => "laplace",
            Method::LaplaceWeighted => "laplace-weighted",
            Method::GradAscent(f) => f.kind.name(),
        }
    }

    /// Row label in method comparison tables.
    pub fn label(&self) -> &'static str {
        match self {
            Method::Laplace => "Laplacian",
            Method::LaplaceWeighted => "weighted Laplacian",
            Method::GradAscent(f) => match f.kind {
                QualityKind::Lambda1 => "λ1",
                QualityKind::Lambda2 => "λ2",
                QualityKind::Lambda3 => "λ3",
                QualityKind::Lambda4 => "λ4",
                QualityKind::Lambda5 => "λ5",
                QualityKind::MeanRatio => "mr",
                QualityKind::SqrtMeanRatio => "√mr",
                QualityKind::Q2 => "q2",
                QualityKind::Q3 => "q3",
                k => k.name(),
            },
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "laplace" => return Ok(Method::Laplace),
            "laplace-weighted" => return Ok(Method::LaplaceWeighted),
            "q2" => QualityKind::Q2,
            "q3" => QualityKind::Q3,
            "lambda1" => QualityKind::Lambda1,
            "lambda2" => QualityKind::Lambda2,
            "lambda3" => QualityKind::Lambda3,
            "lambda4" => QualityKind::Lambda4,
            "lambda5" => QualityKind::Lambda5,
            "mr" => QualityKind::MeanRatio,
            "sqrt-mr" => QualityKind::SqrtMeanRatio,
            other => return Err(Error::InvalidArgument(format!("unknown smoothing method `{other}`"))),
        };
        Ok(Method::GradAscent(kind.into()))
    }
}

/// Vertex update order for the Laplacian methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Sequential in vertex order, using already-updated neighbours.
    #[default]
    GaussSeidel,
    /// Simultaneous update from the previous sweep.
    Jacobi,
}

/// Ascent direction for gradient methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    #[default]
    Gradient,
    /// `∇q / √‖∇q‖`, which makes the step scale invariant.
    GlobalScaled,
    /// Each element gradient divided by the square root of its norm.
    PerElementScaled,
}

/// Parameters of the adaptive weight heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveWeights {
    /// Recompute weights after this many accepted steps.
    pub every: usize,
    /// Trial step along the `iq₂` gradient.
    pub step: f64,
    /// Minimum `iq₂` improvement of the trial element.
    pub improvement: f64,
    /// Only elements below this `iq₂` are adjusted.
    pub threshold: f64,
    pub shrink: f64,
}

impl Default for AdaptiveWeights {
    fn default() -> Self {
        AdaptiveWeights {
            every: 10,
            step: 1e-3,
            improvement: 1e-5,
            threshold: 0.6,
            shrink: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothConfig {
    pub method: Method,
    pub max_iters: usize,
    /// Initial step of every line search.
    pub step_rho: f64,
    /// Backtracking factor.
    pub ls_shrink: f64,
    /// Sufficient-increase constant of the Armijo test.
    pub ls_slope: f64,
    /// Smallest step tried before the line search gives up.
    pub rho_floor: f64,
    /// Stop when no vertex moves farther than this in a sweep.
    /// `None` means `1e-8` times the bounding-box diagonal.
    pub conv_tol: Option<f64>,
    /// Let vertices with a geometry tag move, projected onto their geometry.
    pub project: bool,
    /// Indexed by the mesh's geometry tags.
    pub geometries: Vec<Geometry>,
    pub schedule: Schedule,
    pub direction: Direction,
    pub adaptive: Option<AdaptiveWeights>,
}

impl SmoothConfig {
    pub fn new(method: Method) -> Self {
        SmoothConfig {
            method,
            max_iters: 1000,
            step_rho: 1.0,
            ls_shrink: 0.5,
            ls_slope: 1e-4,
            rho_floor: 1e-16,
            conv_tol: None,
            project: false,
            geometries: Vec::new(),
            schedule: Schedule::default(),
            direction: Direction::default(),
            adaptive: None,
        }
    }

    pub fn quality(kind: QualityKind) -> Self {
        Self::new(Method::GradAscent(QualityFn::new(kind)))
    }

    pub fn max_iters(mut self, n: usize) -> Self {
        self.max_iters = n;
        self
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.conv_tol = Some(tol);
        self
    }

    pub fn with_projection(mut self, geometries: Vec<Geometry>) -> Self {
        self.project = true;
        self.geometries = geometries;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if !(self.ls_shrink > 0.0 && self.ls_shrink < 1.0) {
            return bad("line-search shrink factor must lie in (0, 1)");
        }
        if !(self.ls_slope > 0.0 && self.ls_slope < 1.0) {
            return bad("line-search slope constant must lie in (0, 1)");
        }
        if !(self.step_rho > 0.0) || !(self.rho_floor > 0.0) {
            return bad("step sizes must be positive");
        }
        if let Some(tol) = self.conv_tol {
            if !(tol > 0.0) {
                return bad("convergence tolerance must be positive");
            }
        }
        if let Some(a) = &self.adaptive {
            if a.every == 0 || !(a.shrink > 0.0 && a.shrink <= 1.0) {
                return bad("invalid adaptive weight parameters");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothResult {
    pub iters: usize,
    /// Objective value at the end: the quality function for gradient
    /// methods, the (weighted) edge energy for the Laplacian methods.
    pub final_quality: f64,
    pub converged: bool,
    /// The line search failed before convergence.
    pub stalled: bool,
    /// Objective value after every sweep.
    pub trace: Vec<f64>,
    /// Final element weights (empty unless weights were used).
    pub weights: Vec<f64>,
}

/// Boundary shapes that [`attach_boundary_geometry`] can fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryShape {
    Circle,
    Sphere,
    /// The current boundary polygon itself; its corners stay put.
    Polyline,
}

impl std::str::FromStr for BoundaryShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(BoundaryShape::Circle),
            "sphere" => Ok(BoundaryShape::Sphere),
            "polyline" => Ok(BoundaryShape::Polyline),
            other => Err(Error::InvalidArgument(format!("unknown boundary shape `{other}`"))),
        }
    }
}

/// Fits `shape` to the current boundary, tags the boundary vertices that
/// should follow it, and returns the geometry list the tags index into.
///
/// Circles and spheres are centred at the boundary centroid with the mean
/// centroid distance as radius. Polylines follow each boundary loop; loop
/// vertices where the boundary turns are left untagged.
pub fn attach_boundary_geometry(m: &mut Mesh, shape: BoundaryShape) -> Result<Vec<Geometry>> {
    let planar = m.dim() == crate::mesh::Dim::Two;
    let boundary = m.classify_boundary()?;
    let bverts: Vec<usize> = (0..m.num_vertices()).filter(|&v| boundary[v]).collect();
    if bverts.is_empty() {
        return Err(Error::Topology("mesh has no boundary".into()));
    }
    let fit = |m: &Mesh| {
        let c = bverts.iter().map(|&v| m.coords()[v]).sum::<Vec3>() / bverts.len() as f64;
        let r = bverts.iter().map(|&v| (m.coords()[v] - c).norm()).sum::<f64>() / bverts.len() as f64;
        (c, r)
    };
    match shape {
        BoundaryShape::Circle | BoundaryShape::Sphere => {
            if shape == BoundaryShape::Circle && !planar {
                return Err(Error::Unsupported("circle projection needs a planar mesh".into()));
            }
            let (center, radius) = fit(m);
            for &v in &bverts {
                m.set_geometry_tag(v, Some(0))?;
            }
            Ok(vec![if shape == BoundaryShape::Circle {
                Geometry::ImplicitCircle { center, radius }
            } else {
                Geometry::ImplicitSphere { center, radius }
            }])
        }
        BoundaryShape::Polyline => {
            if !planar {
                return Err(Error::Unsupported("polyline projection needs a planar mesh".into()));
            }
            let mut next = vec![usize::MAX; m.num_vertices()];
            for (a, b) in m.boundary_edges()? {
                next[a] = b;
            }
            let mut seen = vec![false; m.num_vertices()];
            let mut geoms = Vec::new();
            for &start in &bverts {
                if seen[start] {
                    continue;
                }
                let mut lp = vec![start];
                seen[start] = true;
                let mut v = next[start];
                while v != start {
                    if v == usize::MAX || seen[v] {
                        return Err(Error::Topology("open boundary curve".into()));
                    }
                    seen[v] = true;
                    lp.push(v);
                    v = next[v];
                }
                let k = lp.len();
                let tag = geoms.len();
                for i in 0..k {
                    let (p, a, b) = (m.coords()[lp[i]], m.coords()[lp[(i + k - 1) % k]], m.coords()[lp[(i + 1) % k]]);
                    let (u, w) = ((p - a).normalize(), (b - p).normalize());
                    let straight = u.cross(&w).norm() < 1e-9 && u.dot(&w) > 0.0;
                    m.set_geometry_tag(lp[i], straight.then_some(tag))?;
                }
                geoms.push(Geometry::Polyline2D {
                    points: lp.iter().map(|&v| m.coords()[v]).collect(),
                    closed: true,
                });
            }
            Ok(geoms)
        }
    }
}

/// Vertices that may move: free vertices, plus tagged vertices when
/// projecting.
pub fn movable_mask(m: &Mesh, project: bool) -> Vec<bool> {
    m.fixed()
        .iter()
        .zip(m.geometry_tags())
        .map(|(&fixed, tag)| !fixed || (project && tag.is_some()))
        .collect()
}

fn check_stars(m: &Mesh, movable: &[bool]) -> Result<()> {
    for (v, &mv) in movable.iter().enumerate() {
        if mv && m.vertex_star(v)?.is_empty() {
            return Err(Error::Topology(format!("free vertex {v} has no neighbours")));
        }
    }
    Ok(())
}

/// Neighbour weights `w(v, v') = Σ C_e` over elements having `v v'` as an edge.
fn weighted_neighbours(m: &Mesh) -> Vec<Vec<(usize, f64)>> {
    let mut nb: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m.num_vertices()];
    let mut add = |a: usize, b: usize, w: f64| match nb[a].iter_mut().find(|(v, _)| *v == b) {
        Some(entry) => entry.1 += w,
        None => nb[a].push((b, w)),
    };
    for el in m.elements() {
        let c = if el.kind().is_polygon() { norm::c_e(el.len()) } else { 1.0 };
        for (a, b) in el.edges() {
            add(a, b, c);
            add(b, a, c);
        }
    }
    // relative to the first weight, so equal weights give exactly the plain mean
    for list in &mut nb {
        list.sort_by_key(|e| e.0);
        if let Some(&(_, c0)) = list.first() {
            list.iter_mut().for_each(|e| e.1 /= c0);
        }
    }
    nb
}

fn unweighted_neighbours(m: &Mesh) -> Result<Vec<Vec<(usize, f64)>>> {
    (0..m.num_vertices())
        .map(|v| Ok(m.vertex_star(v)?.iter().map(|&w| (w, 1.0)).collect()))
        .collect()
}

fn laplace_sweep(
    m: &mut Mesh,
    nb: &[Vec<(usize, f64)>],
    movable: &[bool],
    schedule: Schedule,
) -> Result<f64> {
    check_stars(m, movable)?;
    let mean = |x: &[Vec3], v: usize| -> Vec3 {
        let (sum, wsum) = nb[v]
            .iter()
            .fold((Vec3::zeros(), 0.0), |(s, t), &(w, c)| (s + x[w] * c, t + c));
        sum / wsum
    };
    let mut max_move: f64 = 0.0;
    match schedule {
        Schedule::GaussSeidel => {
            let x = m.coords_mut();
            for v in 0..x.len() {
                if movable[v] {
                    let p = mean(x, v);
                    max_move = max_move.max((p - x[v]).norm());
                    x[v] = p;
                }
            }
        }
        Schedule::Jacobi => {
            let old = m.coords().to_vec();
            let x = m.coords_mut();
            for v in 0..x.len() {
                if movable[v] {
                    x[v] = mean(&old, v);
                    max_move = max_move.max((x[v] - old[v]).norm());
                }
            }
        }
    }
    Ok(max_move)
}

/// One Gauss–Seidel sweep replacing every free vertex by the mean of its
/// neighbours. Returns the largest vertex displacement.
pub fn laplace_step(m: &mut Mesh) -> Result<f64> {
    let nb = unweighted_neighbours(m)?;
    let movable = movable_mask(m, false);
    laplace_sweep(m, &nb, &movable, Schedule::GaussSeidel)
}

/// One sweep of the `C_e`-weighted Laplacian. On pure triangle meshes it is
/// identical to [`laplace_step`].
pub fn laplace_weighted_step(m: &mut Mesh) -> Result<f64> {
    let nb = weighted_neighbours(m);
    let movable = movable_mask(m, false);
    laplace_sweep(m, &nb, &movable, Schedule::GaussSeidel)
}

/// `g/√‖g‖`; zero stays zero.
pub fn scale_invariant_direction(grad: &GradVec) -> GradVec {
    let n = grad.norm();
    let mut d = grad.clone();
    if n > 0.0 {
        d.scale(1.0 / n.sqrt());
    }
    d
}

/// Outcome of one line-search step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Accepted step, 0 if none.
    pub rho: f64,
    /// Largest vertex displacement.
    pub displacement: f64,
    /// Objective value after the step (before it, if stalled).
    pub value: f64,
    /// Largest displacement a full step would have made.
    pub full_step: f64,
    pub stalled: bool,
}

/// Relative round-off level of objective values.
pub const NOISE: f64 = 1e-12;

/// State shared by consecutive gradient steps on one mesh.
struct Ascent<'a> {
    f: QualityFn,
    cfg: &'a SmoothConfig,
    ctx: QualityContext,
    movable: Vec<bool>,
    /// +1 to maximise, -1 to minimise.
    sense: f64,
}

impl<'a> Ascent<'a> {
    fn new(m: &Mesh, f: QualityFn, cfg: &'a SmoothConfig) -> Result<Self> {
        let sense = if f.kind.maximize() { 1.0 } else { -1.0 };
        Ok(Ascent {
            ctx: QualityContext::new(m)?,
            movable: movable_mask(m, cfg.project),
            f,
            cfg,
            sense,
        })
    }

    fn value(&self, m: &Mesh) -> Result<f64> {
        Ok(quality::evaluate(m, &self.f, &self.ctx, None)?.0)
    }

    /// Armijo test. When the change of the objective drowns in round-off
    /// (below `1e-12` relative), fall back to the equivalent condition on the
    /// directional derivative at the trial point,
    /// `∇f(x₁)·Δx ≥ -(1 - 2c) ∇f(x₀)·Δx` (exact for quadratics). Accepted
    /// steps therefore never decrease the objective by more than that noise.
    fn sufficient(
        &self,
        m: &Mesh,
        f0: f64,
        f1: f64,
        slope: f64,
        x0: &[Vec3],
    ) -> Result<bool> {
        let c = self.cfg.ls_slope;
        if f1 >= f0 + c * slope {
            return Ok(true);
        }
        let noise = NOISE * f0.abs().max(f1.abs());
        if slope <= 0.0 || c * slope > noise || f1 < f0 - noise {
            return Ok(false);
        }
        let g1 = match quality::evaluate(m, &self.f, &self.ctx, Some(&self.movable)) {
            Ok((_, g)) => g.expect("gradient requested"),
            Err(_) => return Ok(false),
        };
        let x = m.coords();
        let d1: f64 = (0..x0.len())
            .filter(|&v| self.movable[v])
            .map(|v| self.sense * g1[v].dot(&(x[v] - x0[v])))
            .sum();
        Ok(d1 >= -(1.0 - 2.0 * c) * slope)
    }

    fn step(&self, m: &mut Mesh) -> Result<StepOutcome> {
        let (value, grad) = quality::evaluate(m, &self.f, &self.ctx, Some(&self.movable))?;
        let mut grad = grad.expect("gradient requested");
        grad.scale(self.sense);
        if !grad.is_finite() {
            return Err(Error::singular("non-finite gradient"));
        }
        let dir = match self.cfg.direction {
            Direction::Gradient => grad.clone(),
            Direction::GlobalScaled => scale_invariant_direction(&grad),
            Direction::PerElementScaled => {
                let (_, d) =
                    quality::evaluate_scaled(m, &self.f, &self.ctx, Some(&self.movable), true)?;
                let mut d = d.expect("gradient requested");
                d.scale(self.sense);
                d
            }
        };
        let f0 = self.sense * value;
        let x0 = m.coords().to_vec();
        let full_step = self.cfg.step_rho * dir.max_norm();
        let mut out = StepOutcome {
            rho: 0.0,
            displacement: 0.0,
            value,
            full_step,
            stalled: false,
        };
        if dir.max_norm() == 0.0 {
            return Ok(out);
        }
        let mut rho = self.cfg.step_rho;
        while rho >= self.cfg.rho_floor {
            {
                let x = m.coords_mut();
                for v in 0..x.len() {
                    if self.movable[v] {
                        x[v] = x0[v] + dir[v] * rho;
                    }
                }
            }
            if self.cfg.project {
                project_tagged(m, &self.cfg.geometries, &self.movable)?;
            }
            // projected Armijo: compare against the actual move
            let slope: f64 = (0..x0.len())
                .filter(|&v| self.movable[v])
                .map(|v| grad[v].dot(&(m.coords()[v] - x0[v])))
                .sum();
            if let Ok(f1) = self.value(m) {
                let f1s = self.sense * f1;
                if f1s.is_finite() && self.sufficient(m, f0, f1s, slope, &x0)? {
                    out.rho = rho;
                    out.value = f1;
                    out.displacement = max_displacement(&x0, m.coords());
                    trace!("accepted step ρ = {rho:e}, value {f1}");
                    return Ok(out);
                }
            }
            rho *= self.cfg.ls_shrink;
        }
        m.coords_mut().copy_from_slice(&x0);
        out.stalled = true;
        Ok(out)
    }
}

fn max_displacement(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
}

fn project_tagged(m: &mut Mesh, geometries: &[Geometry], movable: &[bool]) -> Result<()> {
    let tags = m.geometry_tags().to_vec();
    let x = m.coords_mut();
    for (v, tag) in tags.iter().enumerate() {
        if let (true, Some(t)) = (movable[v], tag) {
            let g = geometries.get(*t).ok_or_else(|| {
                Error::InvalidArgument(format!("vertex {v} refers to unknown geometry {t}"))
            })?;
            x[v] = g.project(&x[v]);
        }
    }
    Ok(())
}

/// One gradient step `x ← x + ρ d` with backtracking from `cfg.step_rho`
/// until the Armijo condition holds. Objectives that are minimised take
/// the step against the gradient. A stalled search leaves `m` unchanged.
pub fn gradient_ascent_step(m: &mut Mesh, f: &QualityFn, cfg: &SmoothConfig) -> Result<StepOutcome> {
    cfg.validate()?;
    Ascent::new(m, f.clone(), cfg)?.step(m)
}

/// Adaptive weight update with the default parameters.
pub fn adaptive_weights(m: &Mesh, f: &QualityFn) -> Result<Vec<f64>> {
    adaptive_weights_with(m, f, &AdaptiveWeights::default())
}

/// One round of the adaptive weight heuristic:
///
/// 1. move the free vertices by `step · ∇iq₂`;
/// 2. for every element with `iq₂ < threshold` whose `iq₂` improved by more
///    than `improvement`, multiply its weight by `shrink`;
/// 3. rescale the weights to mean 1.
pub fn adaptive_weights_with(m: &Mesh, f: &QualityFn, p: &AdaptiveWeights) -> Result<Vec<f64>> {
    let ne = m.num_elements();
    let mut w: Vec<f64> = (0..ne).map(|e| f.weight(e)).collect();
    if ne == 0 {
        return Ok(w);
    }
    let ctx = QualityContext::new(m)?;
    let iq = QualityFn::new(QualityKind::Iq2);
    let movable = movable_mask(m, false);
    let g = quality::evaluate(m, &iq, &ctx, Some(&movable))?
        .1
        .expect("gradient requested");
    let mut moved = m.clone();
    for (x, gv) in moved.coords_mut().iter_mut().zip(g.iter()) {
        *x += gv * p.step;
    }
    for (e, we) in w.iter_mut().enumerate() {
        let before = quality::element_quality(m, e, QualityKind::Iq2, 1.0)?;
        let after = quality::element_quality(&moved, e, QualityKind::Iq2, 1.0)?;
        if after - before > p.improvement && before < p.threshold {
            *we *= p.shrink;
        }
    }
    let mean = w.iter().sum::<f64>() / ne as f64;
    w.iter_mut().for_each(|x| *x /= mean);
    Ok(w)
}

fn weighted_edge_energy(m: &Mesh, nb: &[Vec<(usize, f64)>]) -> f64 {
    let x = m.coords();
    let mut total = 0.0;
    for (v, list) in nb.iter().enumerate() {
        for &(w, c) in list {
            if v < w {
                total += 0.5 * c * (x[v] - x[w]).norm_squared();
            }
        }
    }
    total
}

/// Runs `cfg.method` until no vertex moves more than the tolerance in a
/// sweep, or `cfg.max_iters` sweeps.
pub fn smooth(m: &mut Mesh, cfg: &SmoothConfig) -> Result<SmoothResult> {
    cfg.validate()?;
    let tol = cfg.conv_tol.unwrap_or(1e-8 * m.bbox_diagonal());
    let movable = movable_mask(m, cfg.project);
    if cfg.project {
        project_tagged(m, &cfg.geometries, &movable)?;
    }
    let mut result = SmoothResult {
        iters: 0,
        final_quality: 0.0,
        converged: false,
        stalled: false,
        trace: Vec::new(),
        weights: Vec::new(),
    };
    match &cfg.method {
        Method::Laplace | Method::LaplaceWeighted => {
            let nb = if cfg.method == Method::Laplace {
                unweighted_neighbours(m)?
            } else {
                weighted_neighbours(m)
            };
            while result.iters < cfg.max_iters {
                let before = m.coords().to_vec();
                laplace_sweep(m, &nb, &movable, cfg.schedule)?;
                if cfg.project {
                    project_tagged(m, &cfg.geometries, &movable)?;
                }
                result.iters += 1;
                result.trace.push(weighted_edge_energy(m, &nb));
                if max_displacement(&before, m.coords()) < tol {
                    result.converged = true;
                    break;
                }
            }
            result.final_quality = weighted_edge_energy(m, &nb);
        }
        Method::GradAscent(f) => {
            let mut ascent = Ascent::new(m, f.clone(), cfg)?;
            if cfg.adaptive.is_some() && ascent.f.weights().is_empty() {
                ascent.f.set_weights(vec![1.0; m.num_elements()])?;
            }
            let mut accepted = 0usize;
            result.final_quality = ascent.value(m)?;
            while result.iters < cfg.max_iters {
                let out = ascent.step(m)?;
                result.iters += 1;
                result.final_quality = out.value;
                result.trace.push(out.value);
                if out.stalled {
                    // a full step below tolerance means round-off, not a stall
                    if out.full_step < tol {
                        result.converged = true;
                    } else {
                        debug!("line search stalled after {} iterations", result.iters);
                        result.stalled = true;
                    }
                    break;
                }
                if out.displacement < tol {
                    result.converged = true;
                    break;
                }
                accepted += 1;
                if let Some(a) = &cfg.adaptive {
                    if accepted.is_multiple_of(a.every) {
                        let w = adaptive_weights_with(m, &ascent.f, a)?;
                        ascent.f.set_weights(w)?;
                        result.final_quality = ascent.value(m)?;
                    }
                }
            }
            result.weights = ascent.f.weights().to_vec();
        }
    }
    debug!(
        "smoothing finished: {} iterations, converged = {}, quality {}",
        result.iters, result.converged, result.final_quality
    );
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tests::square;
    use crate::mesh::{Dim, Element};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shaken(n: usize, amp: f64, seed: u64) -> Mesh {
        let mut m = square(n);
        m.fix_boundary().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = amp / n as f64;
        let fixed = m.fixed().to_vec();
        for (p, f) in m.coords_mut().iter_mut().zip(fixed) {
            if !f {
                p.x += rng.gen_range(-h..h);
                p.y += rng.gen_range(-h..h);
            }
        }
        m
    }

    /// Square with one free centre vertex.
    fn fan(center: [f64; 2]) -> Mesh {
        let pts = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0], center];
        let els = (0..4)
            .map(|i| Element::triangle([i, (i + 1) % 4, 4]).unwrap())
            .collect();
        let mut m = Mesh::planar(&pts, els).unwrap();
        m.fix_boundary().unwrap();
        m
    }

    fn max_diff(a: &Mesh, b: &Mesh) -> f64 {
        max_displacement(a.coords(), b.coords())
    }

    #[test]
    fn circle_and_sphere_projection() {
        let c = Geometry::ImplicitCircle { center: Vec3::zeros(), radius: 1.0 };
        assert_eq!(c.project(&Vec3::new(2.0, 0.0, 0.0)), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(c.project(&Vec3::zeros()), Vec3::new(1.0, 0.0, 0.0));
        let s = Geometry::ImplicitSphere { center: Vec3::new(1.0, 1.0, 1.0), radius: 2.0 };
        let p = s.project(&Vec3::new(1.0, 1.0, 5.0));
        assert_relative_eq!(p, Vec3::new(1.0, 1.0, 3.0), epsilon = 1e-15);
        assert_eq!(s.project(&Vec3::new(1.0, 1.0, 1.0)), Vec3::new(3.0, 1.0, 1.0));
    }

    #[test]
    fn polyline_projection_is_nearest_and_idempotent() {
        let g = Geometry::rectangle([0.0, 0.0], [1.0, 1.0]);
        let p = g.project(&Vec3::new(0.5, -0.3, 0.0));
        assert_relative_eq!(p, Vec3::new(0.5, 0.0, 0.0), epsilon = 1e-15);
        assert_eq!(g.project(&p), p);
        let q = g.project(&Vec3::new(1.4, 1.3, 0.0));
        assert_relative_eq!(q, Vec3::new(1.0, 1.0, 0.0), epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = Vec3::new(rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0), 0.0);
            let q = g.project(&p);
            assert_eq!(g.project(&q), q);
            assert!(g.distance(&q) == 0.0);
        }
    }

    #[test]
    fn laplace_moves_vertex_to_star_mean() {
        let mut m = fan([0.3, 1.7]);
        laplace_step(&mut m).unwrap();
        assert_relative_eq!(m.coords()[4], Vec3::new(1.0, 1.0, 0.0), epsilon = 1e-15);
        assert_eq!(laplace_step(&mut m).unwrap(), 0.0);
    }

    #[test]
    fn laplace_rejects_isolated_free_vertex() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]];
        let mut m = Mesh::planar(&pts, vec![Element::triangle([0, 1, 2]).unwrap()]).unwrap();
        m.set_fixed_mask(vec![true, true, true, false]).unwrap();
        assert!(matches!(laplace_step(&mut m), Err(Error::Topology(_))));
    }

    #[test]
    fn laplace_fixed_point_has_zero_edge_gradient() {
        let mut m = shaken(6, 0.4, 3);
        let before = m.clone();
        let r = smooth(&mut m, &SmoothConfig::new(Method::Laplace).tol(1e-13).max_iters(5000)).unwrap();
        assert!(r.converged);
        let g = quality::grad_mesh_quality(&m, &QualityFn::new(QualityKind::LambdaEdges)).unwrap();
        assert!(g.max_norm() < 1e-10);
        for v in 0..m.num_vertices() {
            if m.fixed()[v] {
                assert_eq!(m.coords()[v], before.coords()[v]);
            }
        }
    }

    #[test]
    fn jacobi_and_gauss_seidel_reach_the_same_mesh() {
        let mut a = shaken(5, 0.4, 4);
        let mut b = a.clone();
        let cfg = SmoothConfig::new(Method::Laplace).tol(1e-13).max_iters(10000);
        smooth(&mut a, &cfg).unwrap();
        smooth(&mut b, &SmoothConfig { schedule: Schedule::Jacobi, ..cfg }).unwrap();
        assert!(max_diff(&a, &b) < 1e-10);
    }

    #[test]
    fn weighted_laplace_equals_plain_on_triangles() {
        let mut a = shaken(5, 0.4, 5);
        let mut b = a.clone();
        for _ in 0..20 {
            laplace_step(&mut a).unwrap();
            laplace_weighted_step(&mut b).unwrap();
        }
        assert_eq!(a.coords(), b.coords());
    }

    #[test]
    fn weighted_neighbours_favour_quad_sides() {
        // vertex 1 is shared by a quad (0 1 4 3) and a triangle (1 2 4)
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let els = vec![
            Element::quad([0, 1, 4, 3]).unwrap(),
            Element::triangle([1, 2, 4]).unwrap(),
        ];
        let m = Mesh::planar(&pts, els).unwrap();
        let nb = weighted_neighbours(&m);
        let w = |a: usize, b: usize| nb[a].iter().find(|e| e.0 == b).unwrap().1;
        assert_relative_eq!(w(1, 0) / w(1, 2), 0.5 / (3f64.sqrt() / 6.0), epsilon = 1e-12);
        assert_relative_eq!(w(1, 4) / w(1, 0), (0.5 + 3f64.sqrt() / 6.0) / 0.5, epsilon = 1e-15);
    }

    #[test]
    fn exact_laplace_step_is_gradient_descent_of_edge_energy() {
        let mut a = fan([0.3, 1.7]);
        let mut b = a.clone();
        laplace_step(&mut a).unwrap();
        let f = QualityFn::new(QualityKind::LambdaEdges);
        let cfg = SmoothConfig { step_rho: 0.25, ..SmoothConfig::new(Method::GradAscent(f.clone())) };
        let out = gradient_ascent_step(&mut b, &f, &cfg).unwrap();
        assert_eq!(out.rho, 0.25);
        assert_relative_eq!(b.coords()[4], a.coords()[4], epsilon = 1e-15);
    }

    #[test]
    fn edge_energy_descent_agrees_with_laplace() {
        let mut a = shaken(6, 0.4, 6);
        let mut b = a.clone();
        smooth(&mut a, &SmoothConfig::new(Method::Laplace).tol(1e-14).max_iters(10000)).unwrap();
        // start the line search at the Laplacian step 1/|V(v)|
        let cfg = SmoothConfig {
            step_rho: 1.0 / 6.0,
            ..SmoothConfig::quality(QualityKind::LambdaEdges).tol(1e-14).max_iters(20000)
        };
        let r = smooth(&mut b, &cfg).unwrap();
        assert!(r.converged);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0] + NOISE * w[0].abs()));
        assert!(max_diff(&a, &b) < 1e-10);
    }

    #[test]
    fn q2_ascent_is_monotone_and_untangles() {
        let mut m = shaken(5, 1.2, 7);
        let before = crate::quality::quality_report(&m, QualityKind::Iq2).unwrap();
        assert!(before.invalid_count > 0, "test mesh should start tangled");
        let r = smooth(&mut m, &SmoothConfig::quality(QualityKind::Q2).tol(1e-12).max_iters(20000)).unwrap();
        assert!(r.converged);
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0] - NOISE * w[0].abs()));
        assert_eq!(crate::quality::quality_report(&m, QualityKind::Iq2).unwrap().invalid_count, 0);
    }

    #[test]
    fn q2_limit_does_not_depend_on_the_start() {
        let cfg = SmoothConfig::quality(QualityKind::Q2).tol(1e-12).max_iters(20000);
        let mut a = shaken(5, 0.9, 8);
        let mut b = shaken(5, 0.9, 9);
        smooth(&mut a, &cfg).unwrap();
        smooth(&mut b, &cfg).unwrap();
        assert!(max_diff(&a, &b) < 1e-7);
    }

    #[test]
    fn optimal_mesh_converges_immediately() {
        let mut m = square(4);
        m.fix_boundary().unwrap();
        let r = smooth(&mut m, &SmoothConfig::new(Method::Laplace)).unwrap();
        assert!(r.converged);
        assert_eq!(r.iters, 1);
        let mut m = fan([1.0, 1.0]);
        let r = smooth(&mut m, &SmoothConfig::quality(QualityKind::Q2)).unwrap();
        assert!(r.converged);
        assert_eq!(r.iters, 1);
    }

    #[test]
    fn scaled_directions_share_fixed_points() {
        let run = |d: Direction| {
            let mut m = fan([0.2, 1.5]);
            let cfg = SmoothConfig { direction: d, ..SmoothConfig::quality(QualityKind::Q2).tol(1e-13).max_iters(50000) };
            let r = smooth(&mut m, &cfg).unwrap();
            assert!(r.converged, "{d:?}");
            m.coords()[4]
        };
        let a = run(Direction::Gradient);
        assert_relative_eq!(a, Vec3::new(1.0, 1.0, 0.0), epsilon = 1e-8);
        assert!((run(Direction::GlobalScaled) - a).norm() < 1e-6);
        assert!((run(Direction::PerElementScaled) - a).norm() < 1e-6);
    }

    #[test]
    fn scale_invariant_direction_divides_by_root_norm() {
        let g = GradVec(vec![Vec3::new(4.0, 0.0, 0.0)]);
        assert_relative_eq!(scale_invariant_direction(&g).norm(), 2.0, epsilon = 1e-15);
        let z = GradVec::zeros(3);
        assert_eq!(scale_invariant_direction(&z), z);
    }

    #[test]
    fn projected_boundary_stays_on_geometry() {
        let mut m = shaken(4, 0.3, 10);
        let g = Geometry::rectangle([0.0, 0.0], [1.0, 1.0]);
        let corners = [0usize, 4, 20, 24];
        let mut geoms = vec![g.clone()];
        let boundary = m.classify_boundary().unwrap();
        for v in 0..m.num_vertices() {
            if let Some(k) = corners.iter().position(|&c| c == v) {
                geoms.push(Geometry::FixedPoint(m.coords()[v]));
                m.set_geometry_tag(v, Some(k + 1)).unwrap();
            } else if boundary[v] {
                m.set_geometry_tag(v, Some(0)).unwrap();
            }
        }
        let corner_before: Vec<Vec3> = corners.iter().map(|&c| m.coords()[c]).collect();
        for method in [Method::Laplace, Method::GradAscent(QualityFn::new(QualityKind::Q2))] {
            let mut w = m.clone();
            let cfg = SmoothConfig::new(method).with_projection(geoms.clone()).max_iters(300);
            smooth(&mut w, &cfg).unwrap();
            for v in 0..w.num_vertices() {
                if boundary[v] {
                    assert!(g.distance(&w.coords()[v]) < 1e-12);
                }
            }
            let corner_after: Vec<Vec3> = corners.iter().map(|&c| w.coords()[c]).collect();
            assert_eq!(corner_before, corner_after);
        }
    }

    #[test]
    fn untagged_fixed_vertices_never_move_even_when_projecting() {
        let mut m = shaken(4, 0.3, 11);
        let before = m.clone();
        let cfg = SmoothConfig::quality(QualityKind::Q2).with_projection(vec![]).max_iters(50);
        smooth(&mut m, &cfg).unwrap();
        for v in 0..m.num_vertices() {
            if m.fixed()[v] {
                assert_eq!(m.coords()[v], before.coords()[v]);
            }
        }
    }

    #[test]
    fn unknown_geometry_tag_is_an_error() {
        let mut m = shaken(2, 0.1, 12);
        m.set_geometry_tag(0, Some(3)).unwrap();
        let cfg = SmoothConfig::new(Method::Laplace).with_projection(vec![]);
        assert!(matches!(smooth(&mut m, &cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn config_validation() {
        let ok = SmoothConfig::new(Method::Laplace);
        assert!(ok.validate().is_ok());
        assert!(SmoothConfig { max_iters: 0, ..ok.clone() }.validate().is_err());
        assert!(SmoothConfig { ls_shrink: 1.0, ..ok.clone() }.validate().is_err());
        assert!(SmoothConfig { ls_slope: 0.0, ..ok.clone() }.validate().is_err());
        assert!(SmoothConfig { conv_tol: Some(0.0), ..ok }.validate().is_err());
    }

    #[test]
    fn adaptive_weights_leave_good_meshes_alone() {
        let m = shaken(4, 0.05, 13);
        let w = adaptive_weights(&m, &QualityFn::new(QualityKind::Q2)).unwrap();
        assert!(w.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn adaptive_weights_shrink_improving_bad_elements() {
        let m = fan([1.9, 0.3]);
        let f = QualityFn::new(QualityKind::Q2);
        let w = adaptive_weights(&m, &f).unwrap();
        assert_relative_eq!(w.iter().sum::<f64>() / w.len() as f64, 1.0, epsilon = 1e-12);
        let iq: Vec<f64> = (0..4)
            .map(|e| quality::element_quality(&m, e, QualityKind::Iq2, 1.0).unwrap())
            .collect();
        // bad elements that improve are scaled by 0.99 relative to the rest
        let good = (0..4).find(|&e| w[e] > w.iter().cloned().fold(f64::INFINITY, f64::min)).unwrap();
        for e in 0..4 {
            if w[e] < w[good] {
                assert!(iq[e] < 0.6);
                assert_relative_eq!(w[e] / w[good], 0.99, epsilon = 1e-12);
            }
        }
        assert!(w.iter().any(|&x| x < w[good]));
    }

    #[test]
    fn adaptive_run_keeps_mean_weight_one() {
        let mut m = shaken(4, 0.8, 14);
        let cfg = SmoothConfig {
            adaptive: Some(AdaptiveWeights { every: 3, ..Default::default() }),
            ..SmoothConfig::quality(QualityKind::Q2).max_iters(60)
        };
        let r = smooth(&mut m, &cfg).unwrap();
        assert_eq!(r.weights.len(), m.num_elements());
        assert_relative_eq!(r.weights.iter().sum::<f64>() / r.weights.len() as f64, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn surface_mesh_smoothing_runs() {
        let flat = shaken(3, 0.3, 15);
        let pts: Vec<Vec3> = flat.coords().iter().map(|p| Vec3::new(p.x, p.y, 0.1 * p.x * p.y)).collect();
        let mut m = Mesh::new(Dim::Three, pts, flat.elements().to_vec()).unwrap();
        m.fix_boundary().unwrap();
        m.capture_reference_normals();
        let r = smooth(&mut m, &SmoothConfig::quality(QualityKind::Q2).max_iters(200)).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0] - NOISE * w[0].abs()));
    }

    #[test]
    fn method_names_round_trip() {
        for name in ["laplace", "laplace-weighted", "q2", "q3", "lambda1", "lambda5", "mr", "sqrt-mr"] {
            let m: Method = name.parse().unwrap();
            assert_eq!(m.name(), name);
        }
        assert_eq!("lambda3".parse::<Method>().unwrap().label(), "λ3");
        assert!("iq2".parse::<Method>().is_err());
        assert!("laplacian".parse::<Method>().is_err());
    }

    #[test]
    fn fitted_circle_and_polyline() {
        let mut disk = crate::generate::disk_tri(4).unwrap();
        let g = attach_boundary_geometry(&mut disk, BoundaryShape::Circle).unwrap();
        match &g[0] {
            Geometry::ImplicitCircle { center, radius } => {
                assert!(center.norm() < 1e-12);
                assert!((radius - 1.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(disk.geometry_tags().iter().filter(|t| t.is_some()).count(), 24);

        let mut sq = crate::generate::square_tri(4).unwrap();
        let g = attach_boundary_geometry(&mut sq, BoundaryShape::Polyline).unwrap();
        assert_eq!(g.len(), 1);
        // 16 boundary vertices, 4 of them corners.
        assert_eq!(sq.geometry_tags().iter().filter(|t| t.is_some()).count(), 12);
        assert_eq!(sq.geometry_tags()[0], None);
        assert!(attach_boundary_geometry(&mut sq, BoundaryShape::Circle).is_ok());
        let mut ball = crate::generate::ball_tet(2).unwrap();
        assert!(attach_boundary_geometry(&mut ball, BoundaryShape::Circle).is_err());
        let g = attach_boundary_geometry(&mut ball, BoundaryShape::Sphere).unwrap();
        assert!(matches!(g[0], Geometry::ImplicitSphere { .. }));
    }

    #[test]
    fn polyline_projection_slides_along_square_sides() {
        let mut m = crate::generate::perturbed(&crate::generate::square_tri(6).unwrap(), 0.3, 2).unwrap();
        let g = attach_boundary_geometry(&mut m, BoundaryShape::Polyline).unwrap();
        let corners: Vec<Vec3> = [0, 6, 42, 48].iter().map(|&v| m.coords()[v]).collect();
        let cfg = SmoothConfig::quality(QualityKind::Q2).max_iters(500).with_projection(g);
        smooth(&mut m, &cfg).unwrap();
        for (i, &v) in [0, 6, 42, 48].iter().enumerate() {
            assert_eq!(m.coords()[v], corners[i]);
        }
        for p in m.coords() {
            assert!(p.x >= -1e-12 && p.x <= 1.0 + 1e-12 && p.y >= -1e-12 && p.y <= 1.0 + 1e-12);
        }
    }
}
