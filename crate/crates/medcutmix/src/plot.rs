//! Dependency-free SVG bar charts for per-disease metrics.

use std::fmt::Write as _;

pub struct BarChart {
    pub title: String,
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 50.0;

impl BarChart {
    pub fn to_svg(&self) -> String {
        let n = self.values.len().max(1);
        let plot_w = W - 2.0 * MARGIN;
        let plot_h = H - 2.0 * MARGIN;
        let max = self.values.iter().cloned().fold(0.0_f64, f64::max).max(1.0);
        let bar_w = plot_w / n as f64 * 0.7;
        let gap = plot_w / n as f64 * 0.3;

        let mut svg = String::new();
        let _ = write!(
            svg,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>",
            W / 2.0,
            xml_escape(&self.title)
        );
        // axes
        let _ = write!(
            svg,
            "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/><line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
            m = MARGIN,
            b = H - MARGIN,
            r = W - MARGIN,
            t = MARGIN
        );
        for tick in 0..=5 {
            let v = max * tick as f64 / 5.0;
            let y = H - MARGIN - plot_h * tick as f64 / 5.0;
            let _ = write!(
                svg,
                "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{v:.2}</text>",
                MARGIN - 6.0,
                y + 3.0
            );
        }
        for (i, (label, &value)) in self.labels.iter().zip(&self.values).enumerate() {
            let x = MARGIN + gap / 2.0 + i as f64 * (bar_w + gap);
            let h = plot_h * (value / max).clamp(0.0, 1.0);
            let y = H - MARGIN - h;
            let _ = write!(
                svg,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{h:.1}\" fill=\"#4878a8\"/>"
            );
            let _ = write!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
                x + bar_w / 2.0,
                H - MARGIN + 14.0,
                xml_escape(label)
            );
            let _ = write!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{value:.3}</text>",
                x + bar_w / 2.0,
                y - 4.0
            );
        }
        svg.push_str("</svg>");
        svg
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
