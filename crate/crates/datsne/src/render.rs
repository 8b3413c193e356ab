//! Static SVG rendering of embeddings with directed arrows.
//!
//! Coordinates are mapped affinely onto a fixed canvas with 5% margins and
//! the aspect ratio preserved, so uniformly rescaled embeddings produce the
//! same document. Points can be colored by timestamp (a dark-purple-to-
//! yellow ramp from earliest to latest), by categorical label, or not at
//! all. Each edge is drawn as a line plus a triangular head at its target.

use crate::model::TemporalGraph;

const CANVAS: f64 = 800.0;
const MARGIN_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorBy {
    /// Ramp from earliest (dark purple) to latest (yellow); falls back to
    /// the point index when no timestamps are present.
    Timestamp,
    /// Categorical palette keyed by label; single color when absent.
    Label,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub point_radius: f64,
    pub arrow_head_size: f64,
    pub color_by: ColorBy,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            point_radius: 3.0,
            arrow_head_size: 6.0,
            color_by: ColorBy::Timestamp,
        }
    }
}

/// Sampled viridis ramp, dark purple at 0 to yellow at 1.
const RAMP: [[f64; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [71.0, 44.0, 122.0],
    [59.0, 81.0, 139.0],
    [44.0, 113.0, 142.0],
    [33.0, 144.0, 141.0],
    [39.0, 173.0, 129.0],
    [92.0, 200.0, 99.0],
    [170.0, 220.0, 50.0],
    [253.0, 231.0, 37.0],
];

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const DEFAULT_COLOR: &str = "#4878a8";

fn ramp_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let mix = |k: usize| (RAMP[i][k] + f * (RAMP[i + 1][k] - RAMP[i][k])).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(0), mix(1), mix(2))
}

/// Renders the embedding as an SVG document with exactly one circle marker
/// per point and one arrow group (line plus head) per edge.
pub fn render_svg(
    coords: &[[f64; 2]],
    graph: &TemporalGraph,
    labels: Option<&[String]>,
    timestamps: Option<&[i64]>,
    options: &RenderOptions,
) -> String {
    let n = coords.len();
    let margin = CANVAS * MARGIN_FRACTION;
    let avail = CANVAS - 2.0 * margin;

    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in coords {
        for k in 0..2 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    let span = [max[0] - min[0], max[1] - min[1]];
    let largest = span[0].max(span[1]);
    let scale = if largest > 0.0 { avail / largest } else { 0.0 };
    let center = [(min[0] + max[0]) / 2.0, (min[1] + max[1]) / 2.0];
    // y grows upward in the data, downward on the canvas
    let place = |p: [f64; 2]| -> (f64, f64) {
        (
            CANVAS / 2.0 + (p[0] - center[0]) * scale,
            CANVAS / 2.0 - (p[1] - center[1]) * scale,
        )
    };

    let colors = point_colors(n, labels, timestamps, options.color_by);

    let mut svg = String::with_capacity(128 * (n + graph.n_edges()) + 512);
    svg.push_str(&format!(
        "<svg version=\"1.1\" xmlns=\"http://www.w3.org/2000/svg\" width=\"{CANVAS}\" height=\"{CANVAS}\" viewBox=\"0 0 {CANVAS} {CANVAS}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{CANVAS}\" height=\"{CANVAS}\" fill=\"white\"/>\n"
    ));

    for (i, &p) in coords.iter().enumerate() {
        let (cx, cy) = place(p);
        svg.push_str(&format!(
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{:.2}\" fill=\"{}\" fill-opacity=\"0.85\"/>\n",
            options.point_radius, colors[i]
        ));
    }

    let head = options.arrow_head_size;
    for edge in graph.edges() {
        let (x1, y1) = place(coords[edge.source]);
        let (x2, y2) = place(coords[edge.target]);
        let (dx, dy) = (x2 - x1, y2 - y1);
        let len = (dx * dx + dy * dy).sqrt();
        let (ux, uy) = if len > 0.0 {
            (dx / len, dy / len)
        } else {
            (1.0, 0.0)
        };
        let (bx, by) = (x2 - head * ux, y2 - head * uy);
        let (px, py) = (-uy * head * 0.4, ux * head * 0.4);
        svg.push_str(&format!(
            "<g class=\"arrow\"><line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"#444444\" stroke-opacity=\"0.55\" stroke-width=\"1\"/><polygon points=\"{x2:.2},{y2:.2} {:.2},{:.2} {:.2},{:.2}\" fill=\"#444444\" fill-opacity=\"0.55\"/></g>\n",
            bx + px, by + py, bx - px, by - py
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn point_colors(
    n: usize,
    labels: Option<&[String]>,
    timestamps: Option<&[i64]>,
    color_by: ColorBy,
) -> Vec<String> {
    match color_by {
        ColorBy::None => vec![DEFAULT_COLOR.to_string(); n],
        ColorBy::Label => match labels {
            Some(labels) => {
                let mut seen: Vec<&str> = Vec::new();
                labels
                    .iter()
                    .map(|l| {
                        let idx = match seen.iter().position(|s| s == l) {
                            Some(i) => i,
                            None => {
                                seen.push(l);
                                seen.len() - 1
                            }
                        };
                        PALETTE[idx % PALETTE.len()].to_string()
                    })
                    .collect()
            }
            None => vec![DEFAULT_COLOR.to_string(); n],
        },
        ColorBy::Timestamp => {
            let ordinals: Vec<f64> = match timestamps {
                Some(ts) => ts.iter().map(|&t| t as f64).collect(),
                None => (0..n).map(|i| i as f64).collect(),
            };
            let lo = ordinals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ordinals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            ordinals
                .iter()
                .map(|&t| {
                    if hi > lo {
                        ramp_color((t - lo) / (hi - lo))
                    } else {
                        ramp_color(0.0)
                    }
                })
                .collect()
        }
    }
}
