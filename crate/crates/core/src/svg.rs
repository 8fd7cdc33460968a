//! SVG rendering of planar meshes colored by element quality.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mesh::{Dim, Mesh};
use crate::quality::{element_measure, quality_report, QualityKind};

/// Linear red→green colormap on `[0, 1]`; values outside are clamped.
pub fn color(value: f64) -> String {
    let t = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
    let g = (255.0 * t).round() as u8;
    let r = 255 - g;
    format!("#{r:02X}{g:02X}00")
}

/// One `<polygon>` per element, filled by `measure`. Inverted elements get
/// class `inverted` and a thick outline. The `y` axis points up.
pub fn render_svg(m: &Mesh, measure: QualityKind) -> Result<String> {
    if m.dim() != Dim::Two {
        return Err(Error::Unsupported("SVG output needs a planar mesh".into()));
    }
    let report = quality_report(m, measure)?;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in m.coords() {
        lo = [lo[0].min(p.x), lo[1].min(p.y)];
        hi = [hi[0].max(p.x), hi[1].max(p.y)];
    }
    if m.num_vertices() == 0 {
        (lo, hi) = ([0.0; 2], [1.0; 2]);
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
    let size = 800.0;
    let margin = 10.0;
    let scale = (size - 2.0 * margin) / span;
    let px = |x: f64| margin + (x - lo[0]) * scale;
    let py = |y: f64| size - margin - (y - lo[1]) * scale;
    let stroke = 1.0;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(s, "<title>{} per element</title>", report.measure);
    for (e, el) in m.elements().iter().enumerate() {
        let pts: Vec<String> = el
            .verts()
            .iter()
            .map(|&v| {
                let p = m.coords()[v];
                format!("{:.3},{:.3}", px(p.x), py(p.y))
            })
            .collect();
        let value = report.values[e];
        let fill = color(value);
        if element_measure(m, e) > 0.0 {
            let _ = writeln!(
                s,
                r##"<polygon points="{}" fill="{fill}" stroke="#000000" stroke-width="{stroke}"><title>{e}: {value:.6}</title></polygon>"##,
                pts.join(" ")
            );
        } else {
            let _ = writeln!(
                s,
                r##"<polygon class="inverted" points="{}" fill="{fill}" fill-opacity="0.6" stroke="#0000FF" stroke-width="{}"><title>{e}: {value:.6} (inverted)</title></polygon>"##,
                pts.join(" "),
                4.0 * stroke
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}
