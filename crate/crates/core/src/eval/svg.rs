//! Minimal non-interactive SVG line plots for quick inspection.

use crate::error::Result;
use crate::scalar::Real;
use std::fmt::Write as _;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const W: f64 = 720.0;
const H: f64 = 420.0;
const MARGIN: f64 = 48.0;

/// Render labelled curves to an SVG string. Curves are `(label, xs, ys)`.
pub fn line_plot<F: Real>(title: &str, curves: &[(&str, &[F], &[F])]) -> String {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for (_, xs, ys) in curves {
        for v in xs.iter() {
            let v = v.to_f64x();
            if v.is_finite() {
                xmin = xmin.min(v);
                xmax = xmax.max(v);
            }
        }
        for v in ys.iter() {
            let v = v.to_f64x();
            if v.is_finite() {
                ymin = ymin.min(v);
                ymax = ymax.max(v);
            }
        }
    }
    if !xmin.is_finite() || xmin == xmax {
        xmin -= 0.5;
        xmax = xmin + 1.0;
    }
    if !ymin.is_finite() || ymin == ymax {
        ymin -= 0.5;
        ymax = ymin + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - xmin) / (xmax - xmin) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - ymin) / (ymax - ymin) * (H - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        W / 2.0,
        title
    );
    // axes
    let _ = writeln!(
        out,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#333\" stroke-width=\"1\"/>",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    let _ = writeln!(
        out,
        "<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"#333\" stroke-width=\"1\"/>",
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN
    );
    for (tick, label) in [(xmin, format!("{xmin:.3}")), (xmax, format!("{xmax:.3}"))] {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            sx(tick),
            H - MARGIN + 16.0,
            label
        );
    }
    for (tick, label) in [(ymin, format!("{ymin:.3}")), (ymax, format!("{ymax:.3}"))] {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            MARGIN - 6.0,
            sy(tick) + 4.0,
            label
        );
    }
    for (ci, (label, xs, ys)) in curves.iter().enumerate() {
        let color = COLORS[ci % COLORS.len()];
        let mut d = String::new();
        for (i, (x, y)) in xs.iter().zip(ys.iter()).enumerate() {
            let (x, y) = (x.to_f64x(), y.to_f64x());
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            let _ = write!(d, "{}{:.3},{:.3} ", if i == 0 { "M" } else { "L" }, sx(x), sy(y));
        }
        let _ = writeln!(
            out,
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.4\"/>",
            d.trim_end()
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>",
            W - MARGIN - 150.0,
            MARGIN + 16.0 * ci as f64 + 4.0,
            label
        );
    }
    let _ = writeln!(out, "</svg>");
    out
}

pub fn write_line_plot<F: Real>(
    path: &std::path::Path,
    title: &str,
    curves: &[(&str, &[F], &[F])],
) -> Result<()> {
    crate::io::write_atomic(path, line_plot(title, curves).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_contains_paths_and_labels() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let svg = line_plot("test", &[("sq", &xs, &ys)]);
        assert!(svg.contains("<svg"));
        assert!(svg.contains("<path"));
        assert!(svg.contains("sq"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn plot_is_deterministic() {
        let xs: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        assert_eq!(line_plot("p", &[("a", &xs, &ys)]), line_plot("p", &[("a", &xs, &ys)]));
    }
}
