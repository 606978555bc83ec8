//! Minimal SVG rendering of contour overlays.

use std::fmt::Write as _;

use crate::geometry::Vec2;

pub const CANVAS: f64 = 800.0;
pub const MARGIN: f64 = 0.05;

pub const MEMBER_STROKE: &str = "#9a9a9a";
pub const MEAN_STROKE: &str = "#1a9641";

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<'a> {
    pub points: &'a [Vec2],
    pub stroke: &'a str,
    pub width: f64,
}

/// Renders closed polylines fitted into the canvas; later layers draw on top.
pub fn render(layers: &[Layer<'_>]) -> String {
    let (mut lo, mut hi) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in layers.iter().flat_map(|l| l.points) {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let span = (hi.x - lo.x).max(hi.y - lo.y);
    let inner = CANVAS * (1.0 - 2.0 * MARGIN);
    let scale = if span > 0.0 && span.is_finite() { inner / span } else { 1.0 };
    // centre the drawing inside the margin box
    let shift = Vec2::new(
        CANVAS * MARGIN + 0.5 * (inner - scale * (hi.x - lo.x)),
        CANVAS * MARGIN + 0.5 * (inner - scale * (hi.y - lo.y)),
    );

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for layer in layers {
        if layer.points.is_empty() {
            continue;
        }
        let mut pts = String::new();
        for (i, p) in layer.points.iter().enumerate() {
            let q = (*p - lo) * scale + shift;
            if i > 0 {
                pts.push(' ');
            }
            write!(pts, "{:.3},{:.3}", q.x, q.y).unwrap();
        }
        writeln!(
            out,
            r#"<polygon points="{pts}" fill="none" stroke="{}" stroke-width="{}" stroke-linejoin="round"/>"#,
            layer.stroke, layer.width
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Constituents in gray with the mean in green on top.
pub fn mean_overlay<'a>(members: impl IntoIterator<Item = &'a [Vec2]>, mean: &[Vec2]) -> String {
    let mut layers: Vec<Layer<'_>> =
        members.into_iter().map(|points| Layer { points, stroke: MEMBER_STROKE, width: 1.5 }).collect();
    layers.push(Layer { points: mean, stroke: MEAN_STROKE, width: 2.5 });
    render(&layers)
}
