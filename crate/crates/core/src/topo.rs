//! Local topology modification of triangle meshes: edge collapse, edge
//! swap, vertex split, and a loop that removes badly shaped triangles by
//! alternating smoothing and collapses.
//!
//! Every operation either succeeds or leaves the mesh untouched and returns
//! [`Error::Rejected`] with the reason.

use std::collections::BTreeSet;

use log::{debug, info};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry;
use crate::mesh::{Dim, Element, Mesh, Vec3};
use crate::quality::{self, QualityKind};
use crate::smooth::{self, SmoothConfig};

/// A single topology operation.
#[derive(Debug, Clone, PartialEq)]
pub enum TopoOp {
    EdgeCollapse(usize, usize),
    EdgeSwap(usize, usize),
    VertexSplit { vertex: usize, dir: Vec3 },
}

pub fn apply(m: &mut Mesh, op: &TopoOp) -> Result<()> {
    match *op {
        TopoOp::EdgeCollapse(a, b) => edge_collapse(m, a, b).map(|_| ()),
        TopoOp::EdgeSwap(a, b) => edge_swap(m, a, b),
        TopoOp::VertexSplit { vertex, dir } => vertex_split(m, vertex, dir).map(|_| ()),
    }
}

fn rejected<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Rejected(msg.into()))
}

fn require_triangles(m: &Mesh) -> Result<()> {
    if !m.is_triangular() {
        return Err(Error::Unsupported(
            "topology operations need a triangle mesh".into(),
        ));
    }
    Ok(())
}

fn check_edge(m: &Mesh, a: usize, b: usize) -> Result<Vec<usize>> {
    m.check_vertex(a)?;
    m.check_vertex(b)?;
    let shared = m.shared_elements(a, b)?;
    if shared.is_empty() {
        return Err(Error::InvalidArgument(format!("({a}, {b}) is not an edge")));
    }
    Ok(shared)
}

/// Unit normal used to detect flipped surface triangles.
fn element_normal(m: &Mesh, e: usize) -> Vec3 {
    let x = m.element_points(e);
    geometry::tri_normal(&x[0], &x[1], &x[2])
}

/// Whether element `e` has positive orientation: positive area for planar
/// meshes, agreement with `reference` for surfaces.
fn positively_oriented(m: &Mesh, e: usize, reference: Option<Vec3>) -> bool {
    match m.dim() {
        Dim::Two => geometry::polygon_signed_area_2d(&m.element_points(e)) > 0.0,
        Dim::Three => {
            let n = element_normal(m, e);
            match reference {
                Some(r) => n.dot(&r) > 0.0,
                None => n.norm() > 0.0,
            }
        }
    }
}

fn star_set(m: &Mesh, v: usize) -> Result<BTreeSet<usize>> {
    Ok(m.vertex_star(v)?.iter().copied().collect())
}

/// Merges `b` into `a` without renumbering; `b` is left without elements.
/// Returns `(survivor, orphan)`.
fn collapse_in_place(m: &mut Mesh, a: usize, b: usize) -> Result<(usize, usize)> {
    require_triangles(m)?;
    let shared = check_edge(m, a, b)?;
    let (fa, fb) = (m.fixed()[a], m.fixed()[b]);
    if fa && fb {
        return rejected(format!("both endpoints of ({a}, {b}) are fixed"));
    }
    let boundary = m.classify_boundary()?;
    let boundary_edge = shared.len() == 1;
    if boundary[a] && boundary[b] && !boundary_edge {
        return rejected(format!("({a}, {b}) joins two boundary vertices through the interior"));
    }

    // link condition: common neighbours are exactly the opposite vertices
    let common: BTreeSet<usize> = star_set(m, a)?.intersection(&star_set(m, b)?).copied().collect();
    let opposite: BTreeSet<usize> = shared
        .iter()
        .flat_map(|&e| m.elements()[e].verts().iter().copied())
        .filter(|&v| v != a && v != b)
        .collect();
    if common != opposite {
        return rejected(format!("collapsing ({a}, {b}) violates the link condition"));
    }
    if m.num_elements() <= shared.len() {
        return rejected("collapse would leave an empty mesh");
    }

    // the survivor keeps the lower index; position and flags come from the
    // fixed (or boundary) endpoint when there is one
    let (survivor, orphan) = (a.min(b), a.max(b));
    let dominant = if fa || (boundary[a] && !boundary[b]) {
        Some(a)
    } else if fb || (boundary[b] && !boundary[a]) {
        Some(b)
    } else {
        None
    };
    let x = m.coords();
    let target = match dominant {
        Some(d) => x[d],
        None => (x[a] + x[b]) * 0.5,
    };
    let (fixed, tag) = match dominant {
        Some(d) => (m.fixed()[d], m.geometry_tags()[d]),
        None => (m.fixed()[survivor], m.geometry_tags()[survivor]),
    };

    let backup = m.clone();
    let affected: Vec<usize> = m.vertex_elements(orphan)?.to_vec();
    let survivor_elems: Vec<usize> = m.vertex_elements(survivor)?.to_vec();
    let references: Vec<Option<Vec3>> = (0..m.num_elements())
        .map(|e| m.reference_normals().map(|r| r[e]).or_else(|| {
            (m.dim() == Dim::Three).then(|| element_normal(m, e))
        }))
        .collect();
    {
        let parts = m.raw_parts_mut();
        parts.vertices[survivor] = target;
        parts.fixed[survivor] = fixed;
        parts.geometry_tag[survivor] = tag;
        parts.fixed[orphan] = false;
        parts.geometry_tag[orphan] = None;
        for &e in &affected {
            for v in parts.elements[e].verts_mut() {
                if *v == orphan {
                    *v = survivor;
                }
            }
        }
        let keep: Vec<bool> = (0..parts.elements.len()).map(|e| !shared.contains(&e)).collect();
        let mut k = keep.iter();
        parts.elements.retain(|_| *k.next().unwrap());
        if let Some(r) = parts.reference_normals.as_mut() {
            let mut k = keep.iter();
            r.retain(|_| *k.next().unwrap());
        }
    }
    // no surviving element may flip
    let mut moved: BTreeSet<usize> = affected.iter().chain(&survivor_elems).copied().collect();
    for &e in &shared {
        moved.remove(&e);
    }
    for &old in &moved {
        let new = old - shared.iter().filter(|&&s| s < old).count();
        if !positively_oriented(m, new, references[old]) {
            *m = backup;
            return rejected(format!("collapsing ({a}, {b}) would invert element {old}"));
        }
    }
    m.invalidate();
    Ok((survivor, orphan))
}

/// Removes vertices that no element references any more, renumbering the rest.
fn compact(m: &mut Mesh, orphans: &[usize]) {
    if orphans.is_empty() {
        return;
    }
    let n = m.num_vertices();
    let mut gone = vec![false; n];
    for &v in orphans {
        gone[v] = true;
    }
    let mut map = vec![usize::MAX; n];
    let mut next = 0;
    for v in 0..n {
        if !gone[v] {
            map[v] = next;
            next += 1;
        }
    }
    let parts = m.raw_parts_mut();
    let mut i = 0;
    parts.vertices.retain(|_| {
        i += 1;
        !gone[i - 1]
    });
    let mut i = 0;
    parts.fixed.retain(|_| {
        i += 1;
        !gone[i - 1]
    });
    let mut i = 0;
    parts.geometry_tag.retain(|_| {
        i += 1;
        !gone[i - 1]
    });
    for el in parts.elements.iter_mut() {
        for v in el.verts_mut() {
            *v = map[*v];
        }
    }
}

/// Collapses edge `(a, b)`. The endpoints merge into the fixed (or boundary)
/// endpoint if there is one, else at the midpoint; the merged vertex keeps
/// the lower index and higher indices shift down by one. Returns the index
/// of the merged vertex.
pub fn edge_collapse(m: &mut Mesh, a: usize, b: usize) -> Result<usize> {
    let (survivor, orphan) = collapse_in_place(m, a, b)?;
    compact(m, &[orphan]);
    Ok(survivor)
}

fn iq2_of(m: &Mesh, e: usize, reference: Option<Vec3>) -> f64 {
    let x = m.element_points(e);
    let sign = match (m.dim(), reference) {
        (Dim::Two, _) => quality::AreaSign::Planar,
        (Dim::Three, Some(r)) => quality::AreaSign::Reference(r),
        (Dim::Three, None) => quality::AreaSign::Unsigned,
    };
    quality::iq2(&x, sign).unwrap_or(f64::NEG_INFINITY)
}

/// Replaces the interior edge `(a, b)` by the other diagonal of the
/// quadrilateral formed by its two triangles, if that quadrilateral is
/// convex and the smaller `iq₂` of the pair strictly increases.
pub fn edge_swap(m: &mut Mesh, a: usize, b: usize) -> Result<()> {
    require_triangles(m)?;
    let shared = check_edge(m, a, b)?;
    if shared.len() != 2 {
        return rejected(format!("({a}, {b}) is a boundary edge"));
    }
    // orient so that e1 contains a -> b and e2 contains b -> a
    let has_directed = |e: usize, p: usize, q: usize| m.elements()[e].edges().contains(&(p, q));
    let (e1, e2) = if has_directed(shared[0], a, b) {
        (shared[0], shared[1])
    } else {
        (shared[1], shared[0])
    };
    if !has_directed(e2, b, a) {
        return rejected("neighbouring triangles are inconsistently oriented");
    }
    let third = |e: usize| {
        *m.elements()[e]
            .verts()
            .iter()
            .find(|&&v| v != a && v != b)
            .expect("triangle has a third vertex")
    };
    let (c, d) = (third(e1), third(e2));
    if m.vertex_star(c)?.contains(&d) {
        return rejected(format!("({c}, {d}) is already an edge"));
    }
    let reference = |e: usize| -> Option<Vec3> {
        match m.dim() {
            Dim::Two => None,
            Dim::Three => Some(m.reference_normals().map(|r| r[e]).unwrap_or_else(|| element_normal(m, e))),
        }
    };
    let r1 = reference(e1);
    let r2 = reference(e2);
    let pair_ref = r1.zip(r2).map(|(p, q)| p + q);
    let old_min = iq2_of(m, e1, r1).min(iq2_of(m, e2, r2));

    let backup = m.clone();
    {
        let parts = m.raw_parts_mut();
        parts.elements[e1] = Element::triangle([c, a, d])?;
        parts.elements[e2] = Element::triangle([d, b, c])?;
    }
    m.invalidate();
    let convex = positively_oriented(m, e1, pair_ref) && positively_oriented(m, e2, pair_ref);
    if !convex {
        *m = backup;
        return rejected(format!("quadrilateral around ({a}, {b}) is not convex"));
    }
    let new_min = iq2_of(m, e1, pair_ref).min(iq2_of(m, e2, pair_ref));
    if new_min <= old_min {
        *m = backup;
        return rejected(format!(
            "swapping ({a}, {b}) would not raise min iq2 ({old_min} -> {new_min})"
        ));
    }
    Ok(())
}

/// Link of an interior vertex as a cycle, in element orientation.
fn ordered_link(m: &Mesh, v: usize) -> Result<Vec<usize>> {
    let mut next = std::collections::BTreeMap::new();
    for &e in m.vertex_elements(v)? {
        let vs = m.elements()[e].verts();
        let i = vs.iter().position(|&w| w == v).expect("element contains v");
        next.insert(vs[(i + 1) % 3], vs[(i + 2) % 3]);
    }
    let start = *next.keys().next().ok_or_else(|| Error::Topology(format!("vertex {v} has no elements")))?;
    let mut cycle = vec![start];
    let mut cur = start;
    loop {
        cur = *next
            .get(&cur)
            .ok_or_else(|| Error::Topology(format!("link of vertex {v} is not closed")))?;
        if cur == start {
            break;
        }
        if cycle.len() > next.len() {
            return Err(Error::Topology(format!("link of vertex {v} is not a cycle")));
        }
        cycle.push(cur);
    }
    if cycle.len() != next.len() {
        return Err(Error::Topology(format!("link of vertex {v} is not a single cycle")));
    }
    Ok(cycle)
}

/// Splits interior vertex `v` in two along `dir`.
///
/// The link is cut at the two link vertices `a`, `b` closest to the line
/// through `v` orthogonal to `dir`. `v` keeps its index, the triangles on
/// the `+dir` side and moves to `v + ε·dir`; a new vertex (appended) takes the
/// other side at `v - ε·dir`, with `ε = 10⁻³ ×` the mean edge length around
/// `v`. Two triangles `(v⁻, a, v⁺)` and `(v⁺, b, v⁻)` fill the gap. Returns
/// the new vertex.
pub fn vertex_split(m: &mut Mesh, v: usize, dir: Vec3) -> Result<usize> {
    require_triangles(m)?;
    m.check_vertex(v)?;
    if m.classify_boundary()?[v] {
        return rejected(format!("vertex {v} is on the boundary"));
    }
    let n = dir.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidArgument("split direction must be nonzero".into()));
    }
    let dir = dir / n;
    let link = ordered_link(m, v)?;
    let k = link.len();
    if k < 4 {
        return rejected(format!("vertex {v} has only {k} neighbours"));
    }
    let x = m.coords().to_vec();
    let s: Vec<f64> = link.iter().map(|&w| (x[w] - x[v]).dot(&dir)).collect();
    // cut the cycle at positions (i, j): arc i..j (exclusive) must lie on the
    // +dir side, arc j..i on the other; both arcs need an interior vertex
    let mut best: Option<((usize, f64), usize, usize)> = None;
    for i in 0..k {
        for gap in 2..=k - 2 {
            let j = (i + gap) % k;
            let wrong = (1..gap).filter(|&t| s[(i + t) % k] < 0.0).count()
                + (1..k - gap).filter(|&t| s[(j + t) % k] > 0.0).count();
            let score = (wrong, s[i].abs() + s[j].abs());
            if best.is_none_or(|(b, _, _)| score < b) {
                best = Some((score, i, j));
            }
        }
    }
    let (_, i, j) = best.expect("k >= 4 leaves a valid cut");
    let (a, b) = (link[i], link[j]);
    let position = |w: usize| link.iter().position(|&l| l == w).expect("link vertex");
    let plus_arc = (j + k - i) % k;

    let star_len: f64 = link.iter().map(|&w| (x[w] - x[v]).norm()).sum::<f64>() / k as f64;
    let eps = 1e-3 * star_len;
    let new = m.num_vertices();
    let backup = m.clone();
    let elems: Vec<usize> = m.vertex_elements(v)?.to_vec();
    let normal_v = elems
        .iter()
        .map(|&e| m.reference_normals().map(|r| r[e]).unwrap_or_else(|| element_normal(m, e)))
        .sum::<Vec3>();
    {
        let parts = m.raw_parts_mut();
        parts.vertices.push(x[v] - dir * eps);
        parts.vertices[v] = x[v] + dir * eps;
        parts.fixed.push(parts.fixed[v]);
        parts.geometry_tag.push(parts.geometry_tag[v]);
        for &e in &elems {
            let vs = parts.elements[e].verts().to_vec();
            let p = vs.iter().position(|&w| w == v).expect("element contains v");
            // triangle (v, next, next2): on the + side iff its arc lies in i..j
            let u = vs[(p + 1) % 3];
            let on_plus = (position(u) + k - i) % k < plus_arc;
            if !on_plus {
                parts.elements[e].verts_mut()[p] = new;
            }
        }
        parts.elements.push(Element::triangle([new, a, v])?);
        parts.elements.push(Element::triangle([v, b, new])?);
        if let Some(r) = parts.reference_normals.as_mut() {
            r.push(normal_v);
            r.push(normal_v);
        }
    }
    m.invalidate();
    let ne = m.num_elements();
    let mut check: Vec<usize> = elems.clone();
    check.extend([ne - 2, ne - 1]);
    let oriented = check.iter().all(|&e| {
        let r = (m.dim() == Dim::Three).then(|| {
            m.reference_normals().map(|r| r[e]).unwrap_or(normal_v)
        });
        positively_oriented(m, e, r)
    });
    if !oriented {
        *m = backup;
        return rejected(format!("splitting vertex {v} would invert an element"));
    }
    Ok(new)
}

/// Counts after each phase of [`remove_bad_elements`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseLog {
    pub bad_before: usize,
    pub collapsed: usize,
    pub bad_after: usize,
    pub elements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovalLog {
    pub phases: Vec<PhaseLog>,
    /// Elements (final numbering) still below the threshold.
    pub irreducible: Vec<usize>,
    pub success: bool,
}

fn bad_elements(m: &Mesh, threshold: f64) -> Result<Vec<usize>> {
    let r = quality::quality_report(m, QualityKind::Iq2)?;
    Ok((0..r.values.len()).filter(|&e| r.values[e] < threshold).collect())
}

/// Vertex sets of the elements, used to find an element again after others
/// were removed.
fn triple(m: &Mesh, e: usize) -> [usize; 3] {
    let mut t = [0; 3];
    t.copy_from_slice(m.elements()[e].verts());
    t.sort_unstable();
    t
}

fn find_triple(m: &Mesh, t: &[usize; 3]) -> Option<usize> {
    let candidates = m.vertex_elements(t[0]).ok()?;
    candidates.iter().copied().find(|&e| triple(m, e) == *t)
}

/// Collapses the shortest legal edge of element `e`; returns the orphan.
fn collapse_shortest(m: &mut Mesh, e: usize) -> Option<usize> {
    let x = m.coords();
    let mut edges = m.elements()[e].edges();
    edges.sort_by(|p, q| {
        let lp = (x[p.0] - x[p.1]).norm();
        let lq = (x[q.0] - x[q.1]).norm();
        lp.total_cmp(&lq)
    });
    for (a, b) in edges {
        match collapse_in_place(m, a, b) {
            Ok((_, orphan)) => return Some(orphan),
            Err(err) => debug!("collapse ({a}, {b}) rejected: {err}"),
        }
    }
    None
}

fn smooth_quietly(m: &mut Mesh, cfg: &SmoothConfig) -> Result<()> {
    let r = smooth::smooth(m, cfg)?;
    if !r.converged {
        debug!("smoothing phase stopped after {} iterations without converging", r.iters);
    }
    Ok(())
}

/// Alternates smoothing with `cfg` and collapsing the shortest legal edge
/// of every triangle whose `iq₂` is below `threshold`, until no such
/// triangle is left or none can be collapsed.
///
/// A phase whose collapses raise the number of bad triangles is undone and
/// retried one collapse at a time; the number of bad triangles after
/// smoothing never increases from phase to phase.
pub fn remove_bad_elements(m: &mut Mesh, threshold: f64, cfg: &SmoothConfig) -> Result<RemovalLog> {
    require_triangles(m)?;
    let mut log = RemovalLog {
        phases: Vec::new(),
        irreducible: Vec::new(),
        success: false,
    };
    smooth_quietly(m, cfg)?;
    loop {
        let bad = bad_elements(m, threshold)?;
        if bad.is_empty() {
            log.success = true;
            break;
        }
        let before = m.clone();
        let targets: Vec<[usize; 3]> = bad.iter().map(|&e| triple(m, e)).collect();
        let mut orphans = Vec::new();
        for t in &targets {
            if let Some(e) = find_triple(m, t) {
                if let Some(o) = collapse_shortest(m, e) {
                    orphans.push(o);
                }
            }
        }
        let mut collapsed = orphans.len();
        let mut after = Vec::new();
        if collapsed > 0 {
            compact(m, &orphans);
            smooth_quietly(m, cfg)?;
            after = bad_elements(m, threshold)?;
        }
        if collapsed == 0 || after.len() > bad.len() {
            // one collapse at a time, keeping the first that does not hurt
            *m = before.clone();
            collapsed = 0;
            for t in &targets {
                let mut trial = before.clone();
                let Some(e) = find_triple(&trial, t) else { continue };
                let Some(o) = collapse_shortest(&mut trial, e) else { continue };
                compact(&mut trial, &[o]);
                smooth_quietly(&mut trial, cfg)?;
                let trial_bad = bad_elements(&trial, threshold)?;
                if trial_bad.len() <= bad.len() {
                    *m = trial;
                    after = trial_bad;
                    collapsed = 1;
                    break;
                }
            }
            if collapsed == 0 {
                log.irreducible = bad;
                break;
            }
        }
        info!(
            "removal phase: {} bad -> {} bad after {} collapses ({} elements)",
            bad.len(),
            after.len(),
            collapsed,
            m.num_elements()
        );
        log.phases.push(PhaseLog {
            bad_before: bad.len(),
            collapsed,
            bad_after: after.len(),
            elements: m.num_elements(),
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tests::square;
    use approx::assert_relative_eq;

    fn assert_manifold(m: &Mesh) {
        m.validate().unwrap();
        m.boundary_edges().unwrap();
        m.classify_boundary().unwrap();
        for e in 0..m.num_elements() {
            assert!(geometry::polygon_signed_area_2d(&m.element_points(e)) > 0.0, "element {e} inverted");
        }
    }

    fn fixed_coords(m: &Mesh) -> Vec<Vec3> {
        (0..m.num_vertices()).filter(|&v| m.fixed()[v]).map(|v| m.coords()[v]).collect()
    }

    #[test]
    fn interior_collapse_removes_two_triangles() {
        let mut m = square(4);
        m.fix_boundary().unwrap();
        let before = fixed_coords(&m);
        let (ne, nv) = (m.num_elements(), m.num_vertices());
        let (a, b) = (6, 7);
        let pa = m.coords()[a];
        let pb = m.coords()[b];
        let v = edge_collapse(&mut m, a, b).unwrap();
        assert_eq!(v, 6);
        assert_eq!(m.num_elements(), ne - 2);
        assert_eq!(m.num_vertices(), nv - 1);
        assert_relative_eq!(m.coords()[v], (pa + pb) * 0.5, epsilon = 1e-15);
        assert_eq!(fixed_coords(&m), before);
        assert_manifold(&m);
    }

    #[test]
    fn collapse_towards_the_boundary_keeps_it() {
        let mut m = square(4);
        m.fix_boundary().unwrap();
        let before = fixed_coords(&m);
        let ne = m.num_elements();
        // 1 is on the bottom edge, 6 directly above it
        edge_collapse(&mut m, 6, 1).unwrap();
        assert_eq!(m.num_elements(), ne - 2);
        assert_eq!(fixed_coords(&m), before);
        assert!(m.fixed()[1]);
        assert_manifold(&m);
    }

    #[test]
    fn boundary_edge_collapse_removes_one_triangle() {
        let mut m = square(3);
        // only corners fixed
        let mut mask = vec![false; m.num_vertices()];
        for c in [0, 3, 12, 15] {
            mask[c] = true;
        }
        m.set_fixed_mask(mask).unwrap();
        let ne = m.num_elements();
        edge_collapse(&mut m, 0, 1).unwrap();
        assert_eq!(m.num_elements(), ne - 1);
        assert_eq!(m.coords()[0], Vec3::zeros());
        assert!(m.fixed()[0]);
        assert_manifold(&m);
        // every boundary vertex still lies on the square outline
        let g = crate::smooth::Geometry::rectangle([0.0, 0.0], [1.0, 1.0]);
        let bd = m.classify_boundary().unwrap();
        for v in 0..m.num_vertices() {
            if bd[v] {
                assert!(g.distance(&m.coords()[v]) < 1e-15);
            }
        }
    }

    #[test]
    fn collapse_rejections_leave_the_mesh_alone() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, 0.3]];
        let els = vec![
            Element::triangle([0, 1, 3]).unwrap(),
            Element::triangle([1, 2, 3]).unwrap(),
            Element::triangle([2, 0, 3]).unwrap(),
        ];
        let mut m = Mesh::planar(&pts, els).unwrap();
        let before = m.clone();
        let err = edge_collapse(&mut m, 0, 1).unwrap_err();
        assert!(matches!(err, Error::Rejected(ref s) if s.contains("link")), "{err}");
        assert_eq!(m.coords(), before.coords());
        assert_eq!(m.elements(), before.elements());

        let mut m = square(3);
        m.fix_boundary().unwrap();
        assert!(matches!(edge_collapse(&mut m, 0, 1), Err(Error::Rejected(_))));
        // interior edge between two boundary vertices
        let mut m = square(1);
        assert!(matches!(edge_collapse(&mut m, 0, 3), Err(Error::Rejected(_))));
        assert!(matches!(edge_collapse(&mut m, 1, 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn collapse_that_would_invert_is_rejected() {
        // a fan where moving the centre to the midpoint of a long edge flips a triangle
        let pts = [[0.0, 0.0], [4.0, 0.0], [4.0, 1.0], [0.0, 1.0], [3.9, 0.5], [0.2, 0.5]];
        let els = vec![
            Element::triangle([0, 1, 4]).unwrap(),
            Element::triangle([1, 2, 4]).unwrap(),
            Element::triangle([2, 3, 4]).unwrap(),
            Element::triangle([3, 5, 4]).unwrap(),
            Element::triangle([3, 0, 5]).unwrap(),
            Element::triangle([0, 4, 5]).unwrap(),
        ];
        let mut m = Mesh::planar(&pts, els).unwrap();
        m.fix_boundary().unwrap();
        assert_manifold(&m);
        let mut mm = m.clone();
        mm.set_fixed(4, false).unwrap();
        mm.set_fixed(5, false).unwrap();
        mm.coords_mut()[4] = Vec3::new(3.95, 0.9, 0.0);
        let before = mm.clone();
        if let Err(e) = edge_collapse(&mut mm, 4, 5) {
            assert!(matches!(e, Error::Rejected(_)));
            assert_eq!(mm.coords(), before.coords());
        } else {
            assert_manifold(&mm);
        }
    }

    #[test]
    fn swap_replaces_long_diagonal() {
        let pts = [[-2.0, 0.0], [0.0, -1.0], [2.0, 0.0], [0.0, 1.0]];
        let els = vec![Element::triangle([0, 1, 2]).unwrap(), Element::triangle([0, 2, 3]).unwrap()];
        let mut m = Mesh::planar(&pts, els).unwrap();
        let min_iq = |m: &Mesh| {
            let r = quality::quality_report(m, QualityKind::Iq2).unwrap();
            r.min
        };
        let before = min_iq(&m);
        edge_swap(&mut m, 0, 2).unwrap();
        assert!(min_iq(&m) > before);
        assert_eq!(m.num_elements(), 2);
        assert!(m.vertex_star(1).unwrap().contains(&3));
        assert_manifold(&m);
        // swapping back would lower the minimum
        let snapshot = m.clone();
        assert!(matches!(edge_swap(&mut m, 1, 3), Err(Error::Rejected(_))));
        assert_eq!(m.elements(), snapshot.elements());
        assert!(matches!(edge_swap(&mut m, 0, 1), Err(Error::Rejected(_))));
    }

    #[test]
    fn swap_rejects_non_convex_quad() {
        let pts = [[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [3.0, -0.1]];
        let els = vec![Element::triangle([0, 1, 2]).unwrap(), Element::triangle([1, 0, 3]).unwrap()];
        let mut m = Mesh::planar(&pts, els).unwrap();
        let err = edge_swap(&mut m, 0, 1).unwrap_err();
        assert!(matches!(err, Error::Rejected(ref s) if s.contains("convex")), "{err}");
    }

    #[test]
    fn split_then_collapse_restores_connectivity() {
        let mut m = square(4);
        m.fix_boundary().unwrap();
        let original = m.clone();
        let v = 12;
        assert_eq!(m.vertex_star(v).unwrap().len(), 6);
        let new = vertex_split(&mut m, v, Vec3::new(1.0, 0.3, 0.0)).unwrap();
        assert_eq!(new, original.num_vertices());
        assert_eq!(m.num_elements(), original.num_elements() + 2);
        assert!(m.vertex_star(v).unwrap().len() >= 4);
        assert!(m.vertex_star(new).unwrap().len() >= 4);
        assert!(m.vertex_star(v).unwrap().contains(&new));
        assert_manifold(&m);
        assert_eq!(m.boundary_edges().unwrap().len(), 16);

        let survivor = edge_collapse(&mut m, v, new).unwrap();
        assert_eq!(survivor, v);
        assert_eq!(m.elements(), original.elements());
        assert_relative_eq!(m.coords()[v], original.coords()[v], epsilon = 1e-15);
    }

    #[test]
    fn split_in_every_direction_stays_valid() {
        for k in 0..16 {
            let t = k as f64 * std::f64::consts::PI / 8.0;
            let mut m = square(4);
            m.fix_boundary().unwrap();
            vertex_split(&mut m, 12, Vec3::new(t.cos(), t.sin(), 0.0)).unwrap();
            assert_manifold(&m);
        }
    }

    #[test]
    fn split_rejections() {
        let mut m = square(4);
        assert!(matches!(vertex_split(&mut m, 0, Vec3::x()), Err(Error::Rejected(_))));
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, 0.3]];
        let els = vec![
            Element::triangle([0, 1, 3]).unwrap(),
            Element::triangle([1, 2, 3]).unwrap(),
            Element::triangle([2, 0, 3]).unwrap(),
        ];
        let mut m = Mesh::planar(&pts, els).unwrap();
        assert!(matches!(vertex_split(&mut m, 3, Vec3::x()), Err(Error::Rejected(_))));
    }

    #[test]
    fn removal_with_zero_threshold_only_smooths() {
        let mut m = square(4);
        m.fix_boundary().unwrap();
        let ne = m.num_elements();
        let log = remove_bad_elements(&mut m, 0.0, &SmoothConfig::quality(QualityKind::Q2)).unwrap();
        assert!(log.success);
        assert!(log.phases.is_empty());
        assert_eq!(m.num_elements(), ne);
    }

    #[test]
    fn pinned_sliver_is_irreducible() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.05]];
        let mut m = Mesh::planar(&pts, vec![Element::triangle([0, 1, 2]).unwrap()]).unwrap();
        m.fix_boundary().unwrap();
        let log = remove_bad_elements(&mut m, 0.6, &SmoothConfig::quality(QualityKind::Q2)).unwrap();
        assert!(!log.success);
        assert_eq!(log.irreducible, vec![0]);
    }

    #[test]
    fn topology_needs_triangles() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let mut m = Mesh::planar(&pts, vec![Element::quad([0, 1, 2, 3]).unwrap()]).unwrap();
        assert!(matches!(edge_collapse(&mut m, 0, 1), Err(Error::Unsupported(_))));
    }
}
