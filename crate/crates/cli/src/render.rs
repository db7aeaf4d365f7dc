//! Static SVG of a cell partition and its support points.
//!
//! Grid cells are drawn as rectangles colored by region (runs of equal
//! labels along the first axis are merged), and each point as a dot whose
//! diameter is proportional to its mass.

use std::fmt::Write as _;

use sdquant::cells::UNASSIGNED;
use sdquant::{GridDensity, PointConfiguration};

const WIDTH_PX: f64 = 600.0;
const STRIP_PX: f64 = 60.0;

fn region_color(label: u32) -> String {
    let hue = (label as f64 * 137.507_764) % 360.0;
    format!("hsl({hue:.1},55%,78%)")
}

/// Render `labels` (one per grid cell) and `points` sized by `masses`.
/// Only 1-D and 2-D grids are supported.
pub fn render_svg(
    d: &GridDensity,
    labels: &[u32],
    points: &PointConfiguration,
    masses: &[f64],
) -> Result<String, String> {
    if d.dim() > 2 || points.dim() != d.dim() {
        return Err(format!("cannot render a {}-D instance", d.dim()));
    }
    let (lo, hi) = d.bounds();
    let extent_x = hi[0] - lo[0];
    let scale = WIDTH_PX / extent_x;
    let (extent_y, height) = if d.dim() == 2 {
        (hi[1] - lo[1], (hi[1] - lo[1]) * scale)
    } else {
        (0.0, STRIP_PX)
    };
    let sx = |x: f64| (x - lo[0]) * scale;
    let sy = |y: f64| {
        if d.dim() == 2 {
            (hi[1] - y) * scale
        } else {
            STRIP_PX / 2.0
        }
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH_PX:.0}" height="{height:.0}" viewBox="0 0 {WIDTH_PX:.3} {height:.3}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let nx = d.shape()[0];
    let ny = if d.dim() == 2 { d.shape()[1] } else { 1 };
    let hx = d.spacing()[0] * scale;
    let hy = if d.dim() == 2 {
        d.spacing()[1] * scale
    } else {
        STRIP_PX
    };
    let _ = writeln!(svg, r#"<g shape-rendering="crispEdges">"#);
    for row in 0..ny {
        let mut col = 0;
        while col < nx {
            let label = labels[col + nx * row];
            let mut end = col + 1;
            while end < nx && labels[end + nx * row] == label {
                end += 1;
            }
            if label != UNASSIGNED {
                let x = sx(d.origin()[0]) + col as f64 * hx;
                let y = if d.dim() == 2 {
                    sy(d.origin()[1]) - (row + 1) as f64 * hy
                } else {
                    0.0
                };
                let _ = writeln!(
                    svg,
                    r#"<rect x="{x:.3}" y="{y:.3}" width="{:.3}" height="{hy:.3}" fill="{}"/>"#,
                    (end - col) as f64 * hx,
                    region_color(label)
                );
            }
            col = end;
        }
    }
    let _ = writeln!(svg, "</g>");
    let max_mass = masses.iter().copied().fold(0.0f64, f64::max);
    let base = 0.04 * extent_x.max(extent_y) * scale;
    for i in 0..points.len() {
        let p = points.point(i);
        let m = masses.get(i).copied().unwrap_or(0.0);
        let diameter = if max_mass > 0.0 {
            (base * m / max_mass).max(1.0)
        } else {
            1.0
        };
        let cy = if d.dim() == 2 { sy(p[1]) } else { sy(0.0) };
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.3}" cy="{cy:.3}" r="{:.3}" fill="#1f4e9c"/>"##,
            sx(p[0]),
            diameter / 2.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sdquant::build_uniform_box;

    #[test]
    fn merges_runs_and_sizes_dots_by_mass() {
        let d = build_uniform_box(&[0.0, 0.0], &[1.0, 1.0], &[4, 2]).unwrap();
        let labels = [0, 0, 1, 1, 0, 0, 0, UNASSIGNED];
        let y = PointConfiguration::from_rows(&[vec![0.25, 0.5], vec![0.75, 0.5]]).unwrap();
        let svg = render_svg(&d, &labels, &y, &[0.6, 0.3]).unwrap();
        assert_eq!(svg.matches("<rect x=").count(), 3);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains(r#"r="12.000""#) && svg.contains(r#"r="6.000""#));
    }
}
