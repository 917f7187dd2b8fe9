//! Flat SVG pictures of a design.

use std::io::{self, Write};

use otto::optimize::Evaluation;

/// Pixel width of the picture.
const WIDTH: f64 = 600.0;
const MATERIAL: &str = "#2f5d8a";
const VOID: &str = "#e4e4e4";

/// Draws the domain outline and one polygon per mesh element, filled by
/// the phase of its cell. Regions without elements (the void of a modified
/// diagram) keep the white background.
pub fn write_svg<W: Write>(w: &mut W, ev: &Evaluation) -> io::Result<()> {
    let domain = &ev.diagram.domain;
    let (lo, hi) = domain.bbox();
    let scale = WIDTH / (hi.x - lo.x);
    let height = (hi.y - lo.y) * scale;
    // Flip y so that the picture has the usual orientation.
    let px = |x: f64, y: f64| format!("{:.2},{:.2}", (x - lo.x) * scale, (hi.y - y) * scale);
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.2}">"#
    )?;
    let outline: Vec<String> = domain.vertices().iter().map(|p| px(p.x, p.y)).collect();
    writeln!(w, r#"<polygon points="{}" fill="white" stroke="black" stroke-width="1"/>"#, outline.join(" "))?;
    for e in 0..ev.mesh.num_elements() {
        let fill = if ev.design.material[ev.mesh.element_cell[e]] { MATERIAL } else { VOID };
        let pts: Vec<String> = ev.mesh.element_points(e).iter().map(|p| px(p.x, p.y)).collect();
        writeln!(w, r##"<polygon points="{}" fill="{fill}" stroke="#555" stroke-width="0.3"/>"##, pts.join(" "))?;
    }
    writeln!(w, "</svg>")
}
