//! Index-based mesh storage with lazily cached connectivity.
//!
//! Elements are stored as a flat list of vertex-index lists. Planar meshes may
//! mix triangles, quads and general polygons; volume meshes are tetrahedral
//! only. Smoothing only moves coordinates, so the adjacency cache survives it;
//! every topology edit goes through [`Mesh::set_elements`] (or the crate
//! internal equivalents), which drops the cache.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry;

pub type Vec3 = Vector3<f64>;

/// Ambient dimension of the vertex coordinates.
///
/// Planar meshes keep `z = 0` and use the signed (determinant) area.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Two,
    Three,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Triangle,
    Quad,
    /// General polygon with `n >= 5` vertices.
    Polygon(usize),
    Tetrahedron,
}

impl ElementKind {
    /// Kind of a planar or surface polygon with `n` vertices.
    pub fn polygon(n: usize) -> Result<Self> {
        match n {
            0..=2 => Err(Error::InvalidArgument(format!(
                "polygon needs at least 3 vertices, got {n}"
            ))),
            3 => Ok(ElementKind::Triangle),
            4 => Ok(ElementKind::Quad),
            n => Ok(ElementKind::Polygon(n)),
        }
    }

    pub fn num_vertices(self) -> usize {
        match self {
            ElementKind::Triangle => 3,
            ElementKind::Quad | ElementKind::Tetrahedron => 4,
            ElementKind::Polygon(n) => n,
        }
    }

    pub fn is_polygon(self) -> bool {
        !matches!(self, ElementKind::Tetrahedron)
    }
}

/// One element: its kind and its vertex indices.
///
/// Planar elements are listed counterclockwise; tetrahedra are positively
/// oriented (`vol > 0`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    kind: ElementKind,
    verts: Vec<usize>,
}

/// The six vertex pairs of a tetrahedron.
pub const TET_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Outward-oriented faces of a positively oriented tetrahedron. Face `i` is
/// the face opposite local vertex `i`.
pub const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

impl Element {
    pub fn new(kind: ElementKind, verts: Vec<usize>) -> Result<Self> {
        if verts.len() != kind.num_vertices() {
            return Err(Error::InvalidArgument(format!(
                "{kind:?} needs {} vertices, got {}",
                kind.num_vertices(),
                verts.len()
            )));
        }
        for (i, v) in verts.iter().enumerate() {
            if verts[..i].contains(v) {
                return Err(Error::InvalidArgument(format!(
                    "vertex {v} repeated in element {verts:?}"
                )));
            }
        }
        Ok(Element { kind, verts })
    }

    pub fn triangle(verts: [usize; 3]) -> Result<Self> {
        Self::new(ElementKind::Triangle, verts.to_vec())
    }

    pub fn quad(verts: [usize; 4]) -> Result<Self> {
        Self::new(ElementKind::Quad, verts.to_vec())
    }

    pub fn polygon(verts: Vec<usize>) -> Result<Self> {
        Self::new(ElementKind::polygon(verts.len())?, verts)
    }

    pub fn tetrahedron(verts: [usize; 4]) -> Result<Self> {
        Self::new(ElementKind::Tetrahedron, verts.to_vec())
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn verts(&self) -> &[usize] {
        &self.verts
    }

    pub fn len(&self) -> usize {
        self.verts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verts.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.verts.contains(&v)
    }

    /// Edges as directed vertex pairs: the cyclic boundary of a polygon, or
    /// all six pairs of a tetrahedron.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        match self.kind {
            ElementKind::Tetrahedron => TET_EDGES
                .iter()
                .map(|&(i, j)| (self.verts[i], self.verts[j]))
                .collect(),
            _ => {
                let n = self.verts.len();
                (0..n)
                    .map(|i| (self.verts[i], self.verts[(i + 1) % n]))
                    .collect()
            }
        }
    }

    pub(crate) fn verts_mut(&mut self) -> &mut Vec<usize> {
        &mut self.verts
    }
}

pub(crate) struct RawParts<'a> {
    pub vertices: &'a mut Vec<Vec3>,
    pub elements: &'a mut Vec<Element>,
    pub fixed: &'a mut Vec<bool>,
    pub geometry_tag: &'a mut Vec<Option<usize>>,
    pub reference_normals: &'a mut Option<Vec<Vec3>>,
}

#[derive(Debug)]
struct Adjacency {
    vert_elems: Vec<Vec<usize>>,
    stars: Vec<Vec<usize>>,
}

/// A mesh: coordinates, elements and per-vertex flags.
#[derive(Debug)]
pub struct Mesh {
    dim: Dim,
    vertices: Vec<Vec3>,
    elements: Vec<Element>,
    fixed: Vec<bool>,
    geometry_tag: Vec<Option<usize>>,
    reference_normals: Option<Vec<Vec3>>,
    adjacency: OnceLock<Adjacency>,
}

impl Clone for Mesh {
    fn clone(&self) -> Self {
        Mesh {
            dim: self.dim,
            vertices: self.vertices.clone(),
            elements: self.elements.clone(),
            fixed: self.fixed.clone(),
            geometry_tag: self.geometry_tag.clone(),
            reference_normals: self.reference_normals.clone(),
            adjacency: OnceLock::new(),
        }
    }
}

impl Mesh {
    pub fn new(dim: Dim, vertices: Vec<Vec3>, elements: Vec<Element>) -> Result<Self> {
        let n = vertices.len();
        let mesh = Mesh {
            dim,
            fixed: vec![false; n],
            geometry_tag: vec![None; n],
            vertices,
            elements,
            reference_normals: None,
            adjacency: OnceLock::new(),
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Planar mesh from 2D points.
    pub fn planar(points: &[[f64; 2]], elements: Vec<Element>) -> Result<Self> {
        let vertices = points.iter().map(|p| Vec3::new(p[0], p[1], 0.0)).collect();
        Self::new(Dim::Two, vertices, elements)
    }

    /// Checks index ranges, element kinds and mesh homogeneity.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        let mut has_tet = false;
        let mut has_poly = false;
        for el in &self.elements {
            if el.verts.len() != el.kind.num_vertices() {
                return Err(Error::InvalidArgument(format!(
                    "element {:?} has wrong vertex count",
                    el.verts
                )));
            }
            for (i, &v) in el.verts.iter().enumerate() {
                if v >= n {
                    return Err(Error::IndexOutOfRange { index: v, len: n });
                }
                if el.verts[..i].contains(&v) {
                    return Err(Error::InvalidArgument(format!(
                        "vertex {v} repeated in element {:?}",
                        el.verts
                    )));
                }
            }
            match el.kind {
                ElementKind::Tetrahedron => has_tet = true,
                _ => has_poly = true,
            }
        }
        if has_tet && has_poly {
            return Err(Error::Unsupported(
                "tetrahedra cannot be mixed with surface elements".into(),
            ));
        }
        if has_tet && self.dim == Dim::Two {
            return Err(Error::InvalidArgument(
                "tetrahedral meshes need 3D coordinates".into(),
            ));
        }
        if self.fixed.len() != n || self.geometry_tag.len() != n {
            return Err(Error::InvalidArgument("per-vertex flag length mismatch".into()));
        }
        if let Some(normals) = &self.reference_normals {
            if normals.len() != self.elements.len() {
                return Err(Error::InvalidArgument(
                    "reference normal count does not match element count".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    /// True when every element is a tetrahedron (and there is at least one).
    pub fn is_tetrahedral(&self) -> bool {
        !self.elements.is_empty()
            && self
                .elements
                .iter()
                .all(|e| e.kind == ElementKind::Tetrahedron)
    }

    pub fn is_triangular(&self) -> bool {
        self.elements.iter().all(|e| e.kind == ElementKind::Triangle)
    }

    pub fn coords(&self) -> &[Vec3] {
        &self.vertices
    }

    /// Mutable coordinates. Connectivity is unaffected.
    pub fn coords_mut(&mut self) -> &mut [Vec3] {
        &mut self.vertices
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element_points(&self, e: usize) -> Vec<Vec3> {
        self.elements[e]
            .verts
            .iter()
            .map(|&v| self.vertices[v])
            .collect()
    }

    pub fn fixed(&self) -> &[bool] {
        &self.fixed
    }

    pub fn set_fixed_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.vertices.len() {
            return Err(Error::InvalidArgument(format!(
                "fixed mask has {} entries for {} vertices",
                mask.len(),
                self.vertices.len()
            )));
        }
        self.fixed = mask;
        Ok(())
    }

    pub fn set_fixed(&mut self, v: usize, fixed: bool) -> Result<()> {
        self.check_vertex(v)?;
        self.fixed[v] = fixed;
        Ok(())
    }

    pub fn geometry_tags(&self) -> &[Option<usize>] {
        &self.geometry_tag
    }

    pub fn set_geometry_tag(&mut self, v: usize, tag: Option<usize>) -> Result<()> {
        self.check_vertex(v)?;
        self.geometry_tag[v] = tag;
        Ok(())
    }

    pub fn reference_normals(&self) -> Option<&[Vec3]> {
        self.reference_normals.as_deref()
    }

    /// Records the current normal of every surface polygon. Later signed
    /// areas of 3D surface elements take their sign from this reference.
    pub fn capture_reference_normals(&mut self) {
        if self.dim != Dim::Three || self.is_tetrahedral() {
            return;
        }
        let normals = (0..self.elements.len())
            .map(|e| geometry::polygon_normal(&self.element_points(e)).unwrap_or_else(|_| Vec3::zeros()))
            .collect();
        self.reference_normals = Some(normals);
    }

    /// Replaces the element list. Drops cached adjacency and reference normals.
    pub fn set_elements(&mut self, elements: Vec<Element>) -> Result<()> {
        let old = std::mem::replace(&mut self.elements, elements);
        let normals = self.reference_normals.take();
        if let Err(e) = self.validate() {
            self.elements = old;
            self.reference_normals = normals;
            return Err(e);
        }
        self.invalidate();
        Ok(())
    }

    pub(crate) fn invalidate(&mut self) {
        self.adjacency = OnceLock::new();
    }

    /// Mutable access to all storage for topology edits. The caller keeps
    /// the per-element reference normals in step with the elements.
    pub(crate) fn raw_parts_mut(&mut self) -> RawParts<'_> {
        self.adjacency = OnceLock::new();
        RawParts {
            vertices: &mut self.vertices,
            elements: &mut self.elements,
            fixed: &mut self.fixed,
            geometry_tag: &mut self.geometry_tag,
            reference_normals: &mut self.reference_normals,
        }
    }

    pub(crate) fn check_vertex(&self, v: usize) -> Result<()> {
        if v >= self.vertices.len() {
            return Err(Error::IndexOutOfRange {
                index: v,
                len: self.vertices.len(),
            });
        }
        Ok(())
    }

    fn adjacency(&self) -> &Adjacency {
        self.adjacency.get_or_init(|| {
            let n = self.vertices.len();
            let mut vert_elems = vec![Vec::new(); n];
            let mut stars: Vec<Vec<usize>> = vec![Vec::new(); n];
            for (ei, el) in self.elements.iter().enumerate() {
                for &v in &el.verts {
                    vert_elems[v].push(ei);
                }
                for (a, b) in el.edges() {
                    stars[a].push(b);
                    stars[b].push(a);
                }
            }
            for s in &mut stars {
                s.sort_unstable();
                s.dedup();
            }
            Adjacency { vert_elems, stars }
        })
    }

    /// Vertices joined to `v` by an edge, sorted, excluding `v`.
    pub fn vertex_star(&self, v: usize) -> Result<&[usize]> {
        self.check_vertex(v)?;
        Ok(&self.adjacency().stars[v])
    }

    /// Elements incident to `v`, sorted by index.
    pub fn vertex_elements(&self, v: usize) -> Result<&[usize]> {
        self.check_vertex(v)?;
        Ok(&self.adjacency().vert_elems[v])
    }

    /// Elements containing both `v` and `w`.
    pub fn shared_elements(&self, v: usize, w: usize) -> Result<Vec<usize>> {
        self.check_vertex(v)?;
        self.check_vertex(w)?;
        if v == w {
            return Err(Error::InvalidArgument(format!(
                "shared_elements needs two distinct vertices, got {v} twice"
            )));
        }
        let adj = self.adjacency();
        Ok(adj.vert_elems[v]
            .iter()
            .copied()
            .filter(|&e| self.elements[e].contains(w))
            .collect())
    }

    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let adj = self.adjacency();
        let mut out = Vec::new();
        for (a, star) in adj.stars.iter().enumerate() {
            out.extend(star.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    /// Edge census for polygon meshes: undirected edge to the directed
    /// occurrences `(element, from, to)`.
    fn edge_census(&self) -> BTreeMap<(usize, usize), Vec<(usize, usize, usize)>> {
        let mut census: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for (ei, el) in self.elements.iter().enumerate() {
            for (a, b) in el.edges() {
                census.entry((a.min(b), a.max(b))).or_default().push((ei, a, b));
            }
        }
        census
    }

    /// Face census for tetrahedral meshes: sorted face to outward faces.
    fn face_census(&self) -> BTreeMap<[usize; 3], Vec<[usize; 3]>> {
        let mut census: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for el in &self.elements {
            for f in TET_FACES {
                let face = [el.verts[f[0]], el.verts[f[1]], el.verts[f[2]]];
                let mut key = face;
                key.sort_unstable();
                census.entry(key).or_default().push(face);
            }
        }
        census
    }

    /// Boundary edges of a polygon mesh, directed as they appear in their element.
    pub fn boundary_edges(&self) -> Result<Vec<(usize, usize)>> {
        if self.is_tetrahedral() {
            return Err(Error::Unsupported(
                "boundary edges are defined for polygon meshes".into(),
            ));
        }
        let mut out = Vec::new();
        for ((a, b), occ) in self.edge_census() {
            match occ.len() {
                1 => out.push((occ[0].1, occ[0].2)),
                2 => {}
                k => {
                    return Err(Error::Topology(format!(
                        "non-manifold edge ({a}, {b}) shared by {k} elements"
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Outward-oriented boundary faces of a tetrahedral mesh.
    pub fn boundary_faces(&self) -> Result<Vec<[usize; 3]>> {
        if !self.is_tetrahedral() {
            return Err(Error::Unsupported(
                "boundary faces are defined for tetrahedral meshes".into(),
            ));
        }
        let mut out = Vec::new();
        for (key, occ) in self.face_census() {
            match occ.len() {
                1 => out.push(occ[0]),
                2 => {}
                k => {
                    return Err(Error::Topology(format!(
                        "non-manifold face {key:?} shared by {k} tetrahedra"
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Marks every vertex on a boundary edge (polygon meshes) or boundary
    /// face (tetrahedral meshes).
    ///
    /// A planar boundary vertex must lie on a single boundary curve; pinch
    /// vertices with more than two boundary edges are rejected.
    pub fn classify_boundary(&self) -> Result<Vec<bool>> {
        let mut mask = vec![false; self.vertices.len()];
        if self.is_tetrahedral() {
            for f in self.boundary_faces()? {
                for v in f {
                    mask[v] = true;
                }
            }
            return Ok(mask);
        }
        let mut count = vec![0usize; self.vertices.len()];
        for (a, b) in self.boundary_edges()? {
            mask[a] = true;
            mask[b] = true;
            count[a] += 1;
            count[b] += 1;
        }
        if let Some(v) = count.iter().position(|&c| c > 2) {
            return Err(Error::Topology(format!(
                "vertex {v} lies on more than one boundary curve"
            )));
        }
        Ok(mask)
    }

    /// Sets the fixed mask to the boundary classification.
    pub fn fix_boundary(&mut self) -> Result<()> {
        self.fixed = self.classify_boundary()?;
        Ok(())
    }

    /// For a boundary vertex `v` of a polygon mesh, the neighbours `(next,
    /// prev)` along its boundary curve: `v -> next` and `prev -> v` are
    /// boundary edges in element orientation. `None` for interior vertices.
    pub fn boundary_neighbors(&self, v: usize) -> Result<Option<(usize, usize)>> {
        self.check_vertex(v)?;
        let mut next = None;
        let mut prev = None;
        for &e in self.vertex_elements(v)? {
            for (a, b) in self.elements[e].edges() {
                if a == v && self.shared_elements(a, b)?.len() == 1 {
                    next = Some(b);
                }
                if b == v && self.shared_elements(a, b)?.len() == 1 {
                    prev = Some(a);
                }
            }
        }
        Ok(next.zip(prev))
    }

    /// Axis-aligned bounding box diagonal length.
    pub fn bbox_diagonal(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for p in &self.vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (hi - lo).norm()
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.edges();
        if edges.is_empty() {
            return 0.0;
        }
        edges
            .iter()
            .map(|&(a, b)| (self.vertices[a] - self.vertices[b]).norm())
            .sum::<f64>()
            / edges.len() as f64
    }
}
