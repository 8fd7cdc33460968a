//! Mesh files.
//!
//! Polygon and surface meshes use an OFF-style text file:
//!
//! ```text
//! OFF
//! <vertices> <elements> 0
//! x y z            (one line per vertex)
//! k i0 .. ik-1     (one line per element)
//! dim 2            (optional, planar mesh; default 3)
//! fixed            (optional, one line of 0/1 flags; default: the boundary)
//! geom <count>     (optional, followed by <count> lines "vertex tag")
//! tetrahedra       (optional, 4-vertex elements are tetrahedra)
//! ```
//!
//! Tetrahedral meshes can also be stored as a TetGen-style `.node`/`.ele`
//! pair (0-based, boundary marker = fixed flag), selected by extension.
//! Coordinates are written with 17 significant digits, so a save/load round
//! trip is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mesh::{Dim, Element, ElementKind, Mesh, Vec3};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn format_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        line,
        msg: msg.into(),
    }
}

/// Non-empty lines with comments stripped, paired with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("");
        let toks: Vec<&str> = l.split_whitespace().collect();
        (!toks.is_empty()).then_some((i + 1, toks))
    })
}

fn num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} `{tok}`")))
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Reads the OFF-style format from a string.
pub fn read_off(text: &str) -> Result<Mesh> {
    let mut lines = content_lines(text);
    let (l0, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    if header != ["OFF"] {
        return Err(parse_err(l0, "expected `OFF`"));
    }
    let (lc, counts) = lines.next().ok_or_else(|| parse_err(l0 + 1, "missing counts line"))?;
    if counts.len() < 2 {
        return Err(parse_err(lc, "counts line needs vertex and element counts"));
    }
    let nv: usize = num(counts[0], lc, "vertex count")?;
    let ne: usize = num(counts[1], lc, "element count")?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, toks) = lines
            .next()
            .ok_or_else(|| format_err(lc, format!("expected {nv} vertices")))?;
        if toks.len() != 3 {
            return Err(parse_err(l, format!("vertex needs 3 coordinates, got {}", toks.len())));
        }
        vertices.push(Vec3::new(
            num(toks[0], l, "coordinate")?,
            num(toks[1], l, "coordinate")?,
            num(toks[2], l, "coordinate")?,
        ));
    }
    let mut raw = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (l, toks) = lines
            .next()
            .ok_or_else(|| format_err(lc, format!("expected {ne} elements")))?;
        let k: usize = num(toks[0], l, "vertex count")?;
        if toks.len() != k + 1 {
            return Err(format_err(l, format!("element declares {k} vertices but lists {}", toks.len() - 1)));
        }
        let mut idx = Vec::with_capacity(k);
        for t in &toks[1..] {
            let v: usize = num(t, l, "vertex index")?;
            if v >= nv {
                return Err(format_err(l, format!("vertex {v} out of range ({nv} vertices)")));
            }
            idx.push(v);
        }
        raw.push((l, idx));
    }

    let mut dim = Dim::Three;
    let mut fixed = None;
    let mut tags = vec![None; nv];
    let mut tets = false;
    while let Some((l, toks)) = lines.next() {
        match toks[0] {
            "dim" => {
                dim = match toks.get(1).copied() {
                    Some("2") => Dim::Two,
                    Some("3") => Dim::Three,
                    _ => return Err(parse_err(l, "`dim` must be 2 or 3")),
                }
            }
            "fixed" => {
                let (lf, flags) = lines.next().ok_or_else(|| format_err(l, "missing fixed flags"))?;
                if flags.len() != nv {
                    return Err(format_err(lf, format!("expected {nv} fixed flags, got {}", flags.len())));
                }
                let f: Result<Vec<bool>> = flags
                    .iter()
                    .map(|t| match *t {
                        "0" => Ok(false),
                        "1" => Ok(true),
                        other => Err(parse_err(lf, format!("invalid fixed flag `{other}`"))),
                    })
                    .collect();
                fixed = Some(f?);
            }
            "geom" => {
                let count: usize = num(toks.get(1).copied().unwrap_or(""), l, "geometry count")?;
                for _ in 0..count {
                    let (lg, t) = lines.next().ok_or_else(|| format_err(l, "missing geometry tags"))?;
                    if t.len() != 2 {
                        return Err(parse_err(lg, "geometry tag line needs `vertex tag`"));
                    }
                    let v: usize = num(t[0], lg, "vertex index")?;
                    if v >= nv {
                        return Err(format_err(lg, format!("vertex {v} out of range ({nv} vertices)")));
                    }
                    tags[v] = Some(num(t[1], lg, "geometry tag")?);
                }
            }
            "tetrahedra" => tets = true,
            other => return Err(parse_err(l, format!("unknown section `{other}`"))),
        }
    }

    let mut elements = Vec::with_capacity(ne);
    for (l, idx) in raw {
        let el = if tets && idx.len() == 4 {
            Element::new(ElementKind::Tetrahedron, idx)
        } else {
            Element::polygon(idx)
        };
        elements.push(el.map_err(|e| format_err(l, e.to_string()))?);
    }
    let mut m = Mesh::new(dim, vertices, elements).map_err(|e| format_err(lc, e.to_string()))?;
    let f = match fixed {
        Some(f) => f,
        None => m.classify_boundary().map_err(|e| format_err(lc, e.to_string()))?,
    };
    m.set_fixed_mask(f)?;
    for (v, t) in tags.into_iter().enumerate() {
        m.set_geometry_tag(v, t)?;
    }
    Ok(m)
}

/// Writes the OFF-style format.
pub fn write_off(m: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "OFF");
    let _ = writeln!(s, "{} {} 0", m.num_vertices(), m.num_elements());
    for p in m.coords() {
        let _ = writeln!(s, "{} {} {}", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z));
    }
    for el in m.elements() {
        let _ = write!(s, "{}", el.len());
        for v in el.verts() {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "dim {}", if m.dim() == Dim::Two { 2 } else { 3 });
    if m.is_tetrahedral() {
        let _ = writeln!(s, "tetrahedra");
    }
    let _ = writeln!(s, "fixed");
    let flags: Vec<&str> = m.fixed().iter().map(|&f| if f { "1" } else { "0" }).collect();
    let _ = writeln!(s, "{}", flags.join(" "));
    let tagged: Vec<(usize, usize)> = m
        .geometry_tags()
        .iter()
        .enumerate()
        .filter_map(|(v, t)| t.map(|t| (v, t)))
        .collect();
    if !tagged.is_empty() {
        let _ = writeln!(s, "geom {}", tagged.len());
        for (v, t) in tagged {
            let _ = writeln!(s, "{v} {t}");
        }
    }
    s
}

/// Reads a `.node`/`.ele` pair.
pub fn read_node_ele(node: &str, ele: &str) -> Result<Mesh> {
    let mut lines = content_lines(node);
    let (lh, head) = lines.next().ok_or_else(|| parse_err(1, "empty .node file"))?;
    if head.len() < 2 {
        return Err(parse_err(lh, "header needs point count and dimension"));
    }
    let np: usize = num(head[0], lh, "point count")?;
    let d: usize = num(head[1], lh, "dimension")?;
    if d != 3 {
        return Err(format_err(lh, format!("only 3D node files are supported, got {d}")));
    }
    let nattr: usize = head.get(2).map_or(Ok(0), |t| num(t, lh, "attribute count"))?;
    let has_marker = head.get(3).map_or(Ok(0usize), |t| num(t, lh, "marker flag"))? != 0;
    let mut vertices = vec![Vec3::zeros(); np];
    let mut fixed = vec![false; np];
    for i in 0..np {
        let (l, t) = lines
            .next()
            .ok_or_else(|| format_err(lh, format!("expected {np} points")))?;
        let want = 4 + nattr + has_marker as usize;
        if t.len() != want {
            return Err(parse_err(l, format!("point line needs {want} fields, got {}", t.len())));
        }
        let idx: usize = num(t[0], l, "point index")?;
        if idx != i {
            return Err(format_err(l, format!("expected point {i}, got {idx}")));
        }
        vertices[i] = Vec3::new(num(t[1], l, "coordinate")?, num(t[2], l, "coordinate")?, num(t[3], l, "coordinate")?);
        if has_marker {
            fixed[i] = num::<i64>(t[want - 1], l, "boundary marker")? != 0;
        }
    }

    let mut lines = content_lines(ele);
    let (lh, head) = lines.next().ok_or_else(|| parse_err(1, "empty .ele file"))?;
    if head.len() < 2 {
        return Err(parse_err(lh, "header needs element count and nodes per element"));
    }
    let nt: usize = num(head[0], lh, "element count")?;
    let k: usize = num(head[1], lh, "nodes per element")?;
    if k != 4 {
        return Err(format_err(lh, format!("only 4-node tetrahedra are supported, got {k}")));
    }
    let nattr: usize = head.get(2).map_or(Ok(0), |t| num(t, lh, "attribute count"))?;
    let mut elements = Vec::with_capacity(nt);
    for i in 0..nt {
        let (l, t) = lines
            .next()
            .ok_or_else(|| format_err(lh, format!("expected {nt} elements")))?;
        if t.len() != 5 + nattr {
            return Err(parse_err(l, format!("element line needs {} fields, got {}", 5 + nattr, t.len())));
        }
        let idx: usize = num(t[0], l, "element index")?;
        if idx != i {
            return Err(format_err(l, format!("expected element {i}, got {idx}")));
        }
        let mut vs = [0usize; 4];
        for (j, v) in vs.iter_mut().enumerate() {
            *v = num(t[j + 1], l, "vertex index")?;
            if *v >= np {
                return Err(format_err(l, format!("vertex {v} out of range ({np} vertices)", v = *v)));
            }
        }
        elements.push(Element::tetrahedron(vs)?);
    }
    let mut m = Mesh::new(Dim::Three, vertices, elements)?;
    m.set_fixed_mask(fixed)?;
    Ok(m)
}

/// Writes a `.node`/`.ele` pair.
pub fn write_node_ele(m: &Mesh) -> Result<(String, String)> {
    if !m.is_tetrahedral() {
        return Err(Error::Unsupported("node/ele files hold tetrahedral meshes only".into()));
    }
    let mut node = String::new();
    let _ = writeln!(node, "{} 3 0 1", m.num_vertices());
    for (i, p) in m.coords().iter().enumerate() {
        let _ = writeln!(
            node,
            "{i} {} {} {} {}",
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(p.z),
            m.fixed()[i] as u8
        );
    }
    let mut ele = String::new();
    let _ = writeln!(ele, "{} 4 0", m.num_elements());
    for (i, el) in m.elements().iter().enumerate() {
        let v = el.verts();
        let _ = writeln!(ele, "{i} {} {} {} {}", v[0], v[1], v[2], v[3]);
    }
    Ok((node, ele))
}

fn is_node_ele(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("node" | "ele"))
}

fn pair_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("node"), path.with_extension("ele"))
}

/// Loads a mesh; `.node`/`.ele` paths select the TetGen pair, everything
/// else the OFF-style format.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    if is_node_ele(path) {
        let (n, e) = pair_paths(path);
        read_node_ele(&fs::read_to_string(n)?, &fs::read_to_string(e)?)
    } else {
        read_off(&fs::read_to_string(path)?)
    }
}

pub fn save_mesh(m: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_node_ele(path) {
        let (n, e) = pair_paths(path);
        let (node, ele) = write_node_ele(m)?;
        fs::write(n, node)?;
        fs::write(e, ele)?;
    } else {
        fs::write(path, write_off(m))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tests::square;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn same(a: &Mesh, b: &Mesh) {
        assert_eq!(a.dim(), b.dim());
        assert_eq!(a.coords(), b.coords());
        assert_eq!(a.elements(), b.elements());
        assert_eq!(a.fixed(), b.fixed());
        assert_eq!(a.geometry_tags(), b.geometry_tags());
    }

    #[test]
    fn minimal_triangle() {
        let m = read_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(m.num_vertices(), 3);
        assert_eq!(m.num_elements(), 1);
        assert_eq!(m.dim(), Dim::Three);
    }

    #[test]
    fn boundary_is_fixed_without_a_fixed_section() {
        let m = read_off("OFF\n5 4 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n0.5 0.5 0\n3 0 1 4\n3 1 2 4\n3 2 3 4\n3 3 0 4\ndim 2\n").unwrap();
        assert_eq!(m.fixed(), &[true, true, true, true, false]);
    }

    #[test]
    fn random_mesh_round_trips_exactly() {
        let mut m = square(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in m.coords_mut() {
            p.x += rng.gen_range(-0.01..0.01) * std::f64::consts::PI;
            p.y += rng.gen::<f64>() * 1e-7;
        }
        m.fix_boundary().unwrap();
        m.set_geometry_tag(0, Some(2)).unwrap();
        let text = write_off(&m);
        let back = read_off(&text).unwrap();
        same(&m, &back);
        assert_eq!(write_off(&back), text);
    }

    #[test]
    fn mixed_polygons_round_trip() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [0.0, 1.0], [1.5, 1.5]];
        let els = vec![
            Element::quad([0, 1, 4, 5]).unwrap(),
            Element::polygon(vec![1, 2, 3, 6, 4]).unwrap(),
        ];
        let m = Mesh::planar(&pts, els).unwrap();
        same(&m, &read_off(&write_off(&m)).unwrap());
    }

    #[test]
    fn out_of_range_vertex_reports_its_line() {
        let mut text = String::from("OFF\n10 1 0\n");
        for i in 0..10 {
            text.push_str(&format!("{i} 0 0\n"));
        }
        text.push_str("3 0 1 99\n");
        match read_off(&text).unwrap_err() {
            Error::Format { line, msg } => {
                assert_eq!(line, 13);
                assert!(msg.contains("99"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_coordinate_is_a_parse_error() {
        let err = read_off("OFF\n3 1 0\n0 0 0\n1 x 0\n0 1 0\n3 0 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err:?}");
        let err = read_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n").unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err:?}");
        let err = read_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\nfixed\n1 0\n").unwrap_err();
        assert!(matches!(err, Error::Format { line: 8, .. }), "{err:?}");
        assert!(matches!(read_off("").unwrap_err(), Error::Parse { .. }));
        assert!(matches!(read_off("PLY\n").unwrap_err(), Error::Parse { line: 1, .. }));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let m = read_off("# mesh\nOFF\n\n3 1 0\n0 0 0 # origin\n1 0 0\n0 1 0\n3 0 1 2\ndim 2\n").unwrap();
        assert_eq!(m.dim(), Dim::Two);
    }

    fn two_tets() -> Mesh {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 1.0, 1.0),
        ];
        let els = vec![
            Element::tetrahedron([0, 1, 2, 3]).unwrap(),
            Element::tetrahedron([1, 2, 3, 4]).unwrap(),
        ];
        let mut m = Mesh::new(Dim::Three, pts, els).unwrap();
        m.set_fixed(4, true).unwrap();
        m
    }

    #[test]
    fn node_ele_round_trip() {
        let m = two_tets();
        let (n, e) = write_node_ele(&m).unwrap();
        let back = read_node_ele(&n, &e).unwrap();
        same(&m, &back);
        assert!(back.is_tetrahedral());
        assert!(write_node_ele(&square(1)).is_err());
    }

    #[test]
    fn tets_round_trip_through_off_too() {
        let m = two_tets();
        let back = read_off(&write_off(&m)).unwrap();
        same(&m, &back);
        assert!(back.is_tetrahedral());
    }

    #[test]
    fn node_ele_errors_carry_lines() {
        let err = read_node_ele("2 3 0 0\n0 0 0 0\n1 0 0\n", "0 4 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let (n, _) = write_node_ele(&two_tets()).unwrap();
        let err = read_node_ele(&n, "1 4 0\n0 0 1 2 9\n").unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn files_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let m = two_tets();
        let p = dir.path().join("ball.node");
        save_mesh(&m, &p).unwrap();
        assert!(dir.path().join("ball.ele").exists());
        same(&m, &load_mesh(dir.path().join("ball.ele")).unwrap());
        let q = dir.path().join("sq.mesh");
        let s = square(3);
        save_mesh(&s, &q).unwrap();
        same(&s, &load_mesh(&q).unwrap());
        assert!(matches!(load_mesh(dir.path().join("missing.mesh")), Err(Error::Io(_))));
    }
}
