//! Marching-squares contour plot of an `HbarGrid`.

use std::fmt::Write;

use hbargeo::cell_pde::HbarGrid;
use hbargeo::geometry::xml_escape;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 40.0;

fn interp(a: f64, b: f64, level: f64) -> f64 {
    if (b - a).abs() < 1e-300 {
        0.5
    } else {
        ((level - a) / (b - a)).clamp(0.0, 1.0)
    }
}

/// Segments of the `level` set, in grid coordinates `(i, j)` with `i` along `p1`.
fn segments(g: &HbarGrid, level: f64) -> Vec<[(f64, f64); 2]> {
    let n = g.count;
    let v = |i: usize, j: usize| g.hbar_values[i * n + j];
    let mut out = Vec::new();
    for j in 0..n.saturating_sub(1) {
        for i in 0..n - 1 {
            let c = [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)];
            if c.iter().any(|x| !x.is_finite()) {
                continue;
            }
            let corners = [(i as f64, j as f64), (i as f64 + 1.0, j as f64), (i as f64 + 1.0, j as f64 + 1.0), (i as f64, j as f64 + 1.0)];
            let mut pts = Vec::with_capacity(4);
            for k in 0..4 {
                let (a, b) = (c[k], c[(k + 1) % 4]);
                if (a > level) != (b > level) {
                    let t = interp(a, b, level);
                    let (p, q) = (corners[k], corners[(k + 1) % 4]);
                    pts.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
                }
            }
            match pts.len() {
                2 => out.push([pts[0], pts[1]]),
                // Saddle cell: pair crossings by the centre value.
                4 => {
                    let centre = c.iter().sum::<f64>() / 4.0;
                    if (centre > level) == (c[0] > level) {
                        out.push([pts[0], pts[3]]);
                        out.push([pts[1], pts[2]]);
                    } else {
                        out.push([pts[0], pts[1]]);
                        out.push([pts[2], pts[3]]);
                    }
                }
                _ => {}
            }
        }
    }
    out
}

/// SVG with the flat set `{H̄ ≤ eps_flat}` shaded and `levels` contour lines.
pub fn contour_svg(g: &HbarGrid, eps_flat: f64, levels: usize, caption: &str) -> String {
    let n = g.count;
    let cell = SIZE / (n.max(2) - 1) as f64;
    let map = |(i, j): (f64, f64)| (MARGIN + i * cell, MARGIN + SIZE - j * cell);
    let vmax = g.hbar_values.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let mut s = String::new();
    let total = SIZE + 2.0 * MARGIN;
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{total}" height="{h}" viewBox="0 0 {total} {h}">"#,
        h = total + 30.0
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for j in 0..n {
        for i in 0..n {
            let v = g.hbar_values[i * n + j];
            let (x, y) = map((i as f64, j as f64));
            let fill = if !v.is_finite() {
                "#e74c3c"
            } else if v <= eps_flat {
                "#9ecae1"
            } else {
                continue;
            };
            let _ = writeln!(
                s,
                r#"<rect x="{:.3}" y="{:.3}" width="{cell:.3}" height="{cell:.3}" fill="{fill}" fill-opacity="0.6"/>"#,
                x - 0.5 * cell,
                y - 0.5 * cell
            );
        }
    }
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="#888"/>"##
    );
    let mut all_levels = vec![(eps_flat, "#08519c", 2.0)];
    for k in 1..=levels {
        all_levels.push((vmax * k as f64 / (levels + 1) as f64, "#555", 1.0));
    }
    for (level, colour, width) in all_levels {
        if level <= 0.0 {
            continue;
        }
        let _ = write!(s, r#"<path fill="none" stroke="{colour}" stroke-width="{width}" d=""#);
        for [a, b] in segments(g, level) {
            let ((x1, y1), (x2, y2)) = (map(a), map(b));
            let _ = write!(s, "M{x1:.3} {y1:.3}L{x2:.3} {y2:.3}");
        }
        let _ = writeln!(s, r#""><title>level {level:.6e}</title></path>"#);
    }
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{:.1}" font-size="12" font-family="monospace">p in [{:.3}, {:.3}]^2; {}</text>"#,
        total + 15.0,
        g.p_min,
        g.p_max,
        xml_escape(caption)
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_contour_crossings_lie_on_level() {
        let g = HbarGrid::from_fn(2.0, 0.25, (0.0, 0.0), |p| p[0] * p[0] + p[1] * p[1]).unwrap();
        let segs = segments(&g, 1.0);
        assert!(!segs.is_empty());
        for s in segs {
            for (i, j) in s {
                let p = [g.p_min + i * g.p_step, g.p_min + j * g.p_step];
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                // Linear interpolation of r² along a cell edge of width 0.25.
                assert!((r - 1.0).abs() < 0.03, "{r}");
            }
        }
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let g = HbarGrid::from_fn(1.0, 0.5, (0.0, 0.0), |p| p[0].abs()).unwrap();
        let s = contour_svg(&g, 0.1, 3, "a<b");
        assert!(s.starts_with("<?xml") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a&lt;b"));
    }
}
