//! Static SVG line chart of the task weights over training steps.

use std::fmt::Write as _;

use awl_core::awl::TrajectoryRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const SERIES: [(&str, &str); 3] = [
    ("w_polarity", "#1f77b4"),
    ("w_aspect", "#ff7f0e"),
    ("w_opinion", "#2ca02c"),
];

pub fn weights_svg(rows: &[TrajectoryRow]) -> String {
    let last = rows.last().map_or(1, |r| r.step.max(1)) as f64;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x = |step: u64| MARGIN + plot_w * step as f64 / last;
    let y = |w: f64| HEIGHT - MARGIN - plot_h * w.clamp(0.0, 1.0);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, y(0.0), y(1.0));
    let _ = writeln!(
        svg,
        "<path d=\"M{x0},{y1} L{x0},{y0} L{x1},{y0}\" fill=\"none\" stroke=\"black\"/>"
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let ty = y(tick);
        let _ = writeln!(
            svg,
            "<line x1=\"{x0}\" y1=\"{ty}\" x2=\"{x1}\" y2=\"{ty}\" stroke=\"#ddd\"/>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{tick:.2}</text>",
            x0 - 6.0,
            ty + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{x0}\" y=\"{}\">0</text><text x=\"{x1}\" y=\"{}\" text-anchor=\"end\">{last}</text>\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">step</text>",
        y0 + 16.0,
        y0 + 16.0,
        WIDTH / 2.0,
        y0 + 32.0
    );
    for (k, (name, colour)) in SERIES.iter().enumerate() {
        let points: Vec<String> = rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", x(r.step), y(r.weights()[k])))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.join(" ")
        );
        let ly = MARGIN / 2.0;
        let lx = MARGIN + k as f64 * 130.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{colour}\" stroke-width=\"3\"/>\
             <text x=\"{}\" y=\"{}\">{name}</text>",
            lx + 18.0,
            lx + 22.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
