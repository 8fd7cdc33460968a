//! Deterministic desk-scale test meshes.
//!
//! Every generator flags its boundary vertices fixed. Randomness comes from a
//! seeded ChaCha stream, so equal arguments give bit-identical meshes.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::tet_volume;
use crate::mesh::{Dim, Element, Mesh, Vec3};

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("resolution must be at least 2, got {n}")));
    }
    Ok(())
}

fn finish(mut m: Mesh) -> Result<Mesh> {
    m.fix_boundary()?;
    Ok(m)
}

fn grid_points(n: usize) -> Vec<[f64; 2]> {
    let h = 1.0 / n as f64;
    (0..=n)
        .flat_map(|j| (0..=n).map(move |i| [i as f64 * h, j as f64 * h]))
        .collect()
}

/// Unit square, `n × n` cells each split along the same diagonal:
/// `(n+1)²` vertices and `2n²` triangles.
pub fn square_tri(n: usize) -> Result<Mesh> {
    check_n(n)?;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut els = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            els.push(Element::triangle([id(i, j), id(i + 1, j), id(i + 1, j + 1)])?);
            els.push(Element::triangle([id(i, j), id(i + 1, j + 1), id(i, j + 1)])?);
        }
    }
    finish(Mesh::planar(&grid_points(n), els)?)
}

/// Unit square with quads in the left half of the columns and split
/// triangles in the right half.
pub fn square_mixed(n: usize) -> Result<Mesh> {
    check_n(n)?;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut els = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if i < n / 2 {
                els.push(Element::quad([a, b, c, d])?);
            } else {
                els.push(Element::triangle([a, b, c])?);
                els.push(Element::triangle([a, c, d])?);
            }
        }
    }
    finish(Mesh::planar(&grid_points(n), els)?)
}

/// Unit disk as `n` concentric rings; ring `k` carries `6k` vertices.
pub fn disk_tri(n: usize) -> Result<Mesh> {
    check_n(n)?;
    let mut pts = vec![[0.0, 0.0]];
    let mut rings: Vec<Vec<usize>> = vec![vec![0]];
    for k in 1..=n {
        let r = k as f64 / n as f64;
        let count = 6 * k;
        let ring: Vec<usize> = (0..count)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / count as f64;
                pts.push([r * t.cos(), r * t.sin()]);
                pts.len() - 1
            })
            .collect();
        rings.push(ring);
    }
    let mut els = Vec::new();
    for k in 1..=n {
        let (inner, outer) = (&rings[k - 1], &rings[k]);
        let (ni, no) = (inner.len(), outer.len());
        if ni == 1 {
            for j in 0..no {
                els.push(Element::triangle([inner[0], outer[j], outer[(j + 1) % no]])?);
            }
            continue;
        }
        // Zipper between two rings, advancing whichever next vertex has the
        // smaller angle (outer first on ties).
        let (mut i, mut j) = (0, 0);
        while i < ni || j < no {
            let t_in = (i + 1) as f64 / ni as f64;
            let t_out = (j + 1) as f64 / no as f64;
            if j < no && (i == ni || t_out <= t_in) {
                els.push(Element::triangle([inner[i % ni], outer[j], outer[(j + 1) % no]])?);
                j += 1;
            } else {
                els.push(Element::triangle([inner[i], outer[j % no], inner[(i + 1) % ni]])?);
                i += 1;
            }
        }
    }
    finish(Mesh::planar(&pts, els)?)
}

/// Unit ball: the cube `[-1, 1]³` cut into `n³` cells of six Kuhn
/// tetrahedra each, mapped radially by `p ↦ p·‖p‖∞/‖p‖₂`.
pub fn ball_tet(n: usize) -> Result<Mesh> {
    check_n(n)?;
    let id = |i: usize, j: usize, k: usize| (k * (n + 1) + j) * (n + 1) + i;
    let h = 2.0 / n as f64;
    let mut pts = Vec::with_capacity((n + 1).pow(3));
    for k in 0..=n {
        for j in 0..=n {
            for i in 0..=n {
                let p = Vec3::new(-1.0 + i as f64 * h, -1.0 + j as f64 * h, -1.0 + k as f64 * h);
                let r = p.norm();
                pts.push(if r == 0.0 { p } else { p * (p.amax() / r) });
            }
        }
    }
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut els = Vec::with_capacity(6 * n.pow(3));
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut t = [id(c[0], c[1], c[2]); 4];
                    for (s, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = id(c[0], c[1], c[2]);
                    }
                    if tet_volume(&[pts[t[0]], pts[t[1]], pts[t[2]], pts[t[3]]]) < 0.0 {
                        t.swap(2, 3);
                    }
                    els.push(Element::tetrahedron(t)?);
                }
            }
        }
    }
    finish(Mesh::new(Dim::Three, pts, els)?)
}

/// Unit square grid with `count` interior triangles split by a point placed
/// next to one of their edges, leaving a thin sliver there.
///
/// The split triangles are drawn (by `seed`) among triangles whose vertices
/// are all interior, no two sharing a vertex.
pub fn square_slivers(n: usize, count: usize, seed: u64) -> Result<Mesh> {
    let base = square_tri(n)?;
    let fixed = base.fixed().to_vec();
    let mut candidates: Vec<usize> = (0..base.num_elements())
        .filter(|&e| base.elements()[e].verts().iter().all(|&v| !fixed[v]))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = vec![false; base.num_vertices()];
    let mut chosen = Vec::new();
    while chosen.len() < count && !candidates.is_empty() {
        let e = candidates.swap_remove(rng.gen_range(0..candidates.len()));
        let vs = base.elements()[e].verts();
        if vs.iter().any(|&v| used[v]) {
            continue;
        }
        vs.iter().for_each(|&v| used[v] = true);
        chosen.push(e);
    }
    if chosen.len() < count {
        return Err(Error::InvalidArgument(format!(
            "only {} separated interior triangles available, {count} requested",
            chosen.len()
        )));
    }
    chosen.sort_unstable();

    let mut pts: Vec<[f64; 2]> = base.coords().iter().map(|p| [p.x, p.y]).collect();
    let mut els = Vec::new();
    for (e, el) in base.elements().iter().enumerate() {
        if chosen.binary_search(&e).is_err() {
            els.push(el.clone());
            continue;
        }
        let v = el.verts();
        let edge = rng.gen_range(0..3);
        let (a, b, c) = (v[edge], v[(edge + 1) % 3], v[(edge + 2) % 3]);
        let t = rng.gen_range(0.3..0.7);
        let (pa, pb, pc) = (base.coords()[a], base.coords()[b], base.coords()[c]);
        let p = pa * (1.0 - t) * 0.95 + pb * t * 0.95 + pc * 0.05;
        pts.push([p.x, p.y]);
        let s = pts.len() - 1;
        els.push(Element::triangle([a, b, s])?);
        els.push(Element::triangle([b, c, s])?);
        els.push(Element::triangle([c, a, s])?);
    }
    finish(Mesh::planar(&pts, els)?)
}

/// Displaces every free vertex by uniform noise in `[-σh, σh]` per
/// coordinate, `h` the mean edge length. Planar meshes stay in the plane.
pub fn perturbed(m: &Mesh, sigma: f64, seed: u64) -> Result<Mesh> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise amplitude must be >= 0, got {sigma}")));
    }
    let mut out = m.clone();
    let amp = sigma * m.mean_edge_length();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planar = m.dim() == Dim::Two;
    let fixed = m.fixed().to_vec();
    for (p, &f) in out.coords_mut().iter_mut().zip(&fixed) {
        // Draw for every vertex so the stream does not depend on the mask.
        let d = Vec3::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
        if f || amp == 0.0 {
            continue;
        }
        *p += amp * if planar { Vec3::new(d.x, d.y, 0.0) } else { d };
    }
    Ok(out)
}

/// Named generator, as accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    SquareTri,
    SquareMixed,
    DiskTri,
    BallTet,
    SquareSlivers,
}

impl Kind {
    pub fn build(self, n: usize, seed: u64) -> Result<Mesh> {
        match self {
            Kind::SquareTri => square_tri(n),
            Kind::SquareMixed => square_mixed(n),
            Kind::DiskTri => disk_tri(n),
            Kind::BallTet => ball_tet(n),
            Kind::SquareSlivers => square_slivers(n, (n / 3).max(1), seed),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::SquareTri => "square_tri",
            Kind::SquareMixed => "square_mixed",
            Kind::DiskTri => "disk_tri",
            Kind::BallTet => "ball_tet",
            Kind::SquareSlivers => "square_slivers",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "square_tri" => Kind::SquareTri,
            "square_mixed" => Kind::SquareMixed,
            "disk_tri" => Kind::DiskTri,
            "ball_tet" => Kind::BallTet,
            "square_slivers" => Kind::SquareSlivers,
            other => return Err(Error::InvalidArgument(format!("unknown mesh kind `{other}`"))),
        })
    }
}
