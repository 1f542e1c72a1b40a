//! Text-only SVG line charts of sweep results: per-algorithm series with a
//! min-max band over seeds, on log-log axes. Structural output, no renderer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("results CSV has no data rows")]
    Empty,
    #[error("results CSV is missing columns: {0}")]
    MissingColumns(String),
    #[error("malformed CSV at line {0}")]
    Malformed(usize),
}

/// Minimal CSV reading for the fixed results schema (no quoting needed).
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>), PlotError> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or(PlotError::Empty)?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(PlotError::Malformed(i + 2));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn column(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

/// Which column drives the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XAxis {
    EpisodeCount,
    CorruptionBudget,
}

impl XAxis {
    fn column_name(self) -> &'static str {
        match self {
            XAxis::EpisodeCount => "n",
            XAxis::CorruptionBudget => "zeta_approx",
        }
    }
    fn label(self) -> &'static str {
        match self {
            XAxis::EpisodeCount => "episodes n (log)",
            XAxis::CorruptionBudget => "corruption budget (log)",
        }
    }
}

struct SeriesPoint {
    x: f64,
    mean: f64,
    lo: f64,
    hi: f64,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 20.0;
const MARGIN_B: f64 = 50.0;
const FLOOR: f64 = 1e-9;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn fmt_coord(v: f64) -> String {
    format!("{v:.2}")
}

/// Renders one chart from results CSV text. The x axis takes the distinct
/// values of the chosen column (ticks labeled with those exact values);
/// y is the suboptimality column. One polyline and one band per algorithm,
/// one legend entry each.
pub fn render_chart(csv_text: &str, axis: XAxis) -> Result<String, PlotError> {
    let (header, rows) = parse_csv(csv_text)?;
    if rows.is_empty() {
        return Err(PlotError::Empty);
    }
    let mut missing = Vec::new();
    let need = [axis.column_name(), "algorithm", "suboptimality"];
    for name in need {
        if column(&header, name).is_none() {
            missing.push(name);
        }
    }
    if !missing.is_empty() {
        return Err(PlotError::MissingColumns(missing.join(", ")));
    }
    let xcol = column(&header, axis.column_name()).unwrap();
    let acol = column(&header, "algorithm").unwrap();
    let ycol = column(&header, "suboptimality").unwrap();

    // group y-values by (algorithm, x)
    let mut groups: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        let y: f64 = row[ycol].parse().map_err(|_| PlotError::Malformed(i + 2))?;
        groups
            .entry(row[acol].clone())
            .or_default()
            .entry(row[xcol].clone())
            .or_default()
            .push(y);
    }

    // distinct x values in numeric order, keeping their source text as labels
    let mut xs: Vec<(f64, String)> = Vec::new();
    for per_algo in groups.values() {
        for xtext in per_algo.keys() {
            let xv: f64 = xtext.parse().map_err(|_| PlotError::Malformed(0))?;
            if !xs.iter().any(|(v, _)| *v == xv) {
                xs.push((xv, xtext.clone()));
            }
        }
    }
    xs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let series: BTreeMap<String, Vec<SeriesPoint>> = groups
        .iter()
        .map(|(name, per_x)| {
            let pts = xs
                .iter()
                .filter_map(|(xv, xtext)| {
                    per_x.get(xtext).map(|ys| {
                        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
                        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        SeriesPoint {
                            x: *xv,
                            mean: mean.max(FLOOR),
                            lo: lo.max(FLOOR),
                            hi: hi.max(FLOOR),
                        }
                    })
                })
                .collect();
            (name.clone(), pts)
        })
        .collect();

    // log-log ranges
    let lx = |v: f64| v.max(FLOOR).ln();
    let x_min = lx(xs.first().map(|(v, _)| *v).unwrap_or(1.0));
    let x_max = lx(xs.last().map(|(v, _)| *v).unwrap_or(10.0));
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for pts in series.values() {
        for p in pts {
            y_min = y_min.min(p.lo.ln());
            y_max = y_max.max(p.hi.ln());
        }
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        return Err(PlotError::Empty);
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let x_span = (x_max - x_min).max(1e-12);
    let to_px = |xv: f64| MARGIN_L + (lx(xv) - x_min) / x_span * (WIDTH - MARGIN_L - MARGIN_R);
    let to_py =
        |yv: f64| HEIGHT - MARGIN_B - (yv.ln() - y_min) / (y_max - y_min) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    // axes
    let _ = writeln!(
        svg,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        fmt_coord(MARGIN_L),
        fmt_coord(HEIGHT - MARGIN_B),
        fmt_coord(WIDTH - MARGIN_R),
        fmt_coord(HEIGHT - MARGIN_B)
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        fmt_coord(MARGIN_L),
        fmt_coord(MARGIN_T),
        fmt_coord(MARGIN_L),
        fmt_coord(HEIGHT - MARGIN_B)
    );
    // x ticks: exactly the distinct data values
    for (xv, xtext) in &xs {
        let px = to_px(*xv);
        let _ = writeln!(
            svg,
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>",
            fmt_coord(px),
            fmt_coord(HEIGHT - MARGIN_B),
            fmt_coord(HEIGHT - MARGIN_B + 5.0)
        );
        let _ = writeln!(
            svg,
            "<text class=\"xtick\" x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>",
            fmt_coord(px),
            fmt_coord(HEIGHT - MARGIN_B + 18.0),
            xtext
        );
    }
    // y ticks: 4 log-spaced reference lines
    for k in 0..4 {
        let yv = (y_min + (y_max - y_min) * k as f64 / 3.0).exp();
        let py = to_py(yv);
        let _ = writeln!(
            svg,
            "<line x1=\"{0}\" y1=\"{2}\" x2=\"{1}\" y2=\"{2}\" stroke=\"#dddddd\"/>",
            fmt_coord(MARGIN_L),
            fmt_coord(WIDTH - MARGIN_R),
            fmt_coord(py)
        );
        let _ = writeln!(
            svg,
            "<text class=\"ytick\" x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{:.2e}</text>",
            fmt_coord(MARGIN_L - 6.0),
            fmt_coord(py + 4.0),
            yv
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
        fmt_coord((MARGIN_L + WIDTH - MARGIN_R) / 2.0),
        fmt_coord(HEIGHT - 10.0),
        axis.label()
    );
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {})\">suboptimality (log)</text>",
        fmt_coord(HEIGHT / 2.0),
        fmt_coord(HEIGHT / 2.0)
    );

    // bands then lines, then legend
    for (idx, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        if pts.len() > 1 {
            let mut poly = String::new();
            for p in pts {
                let _ = write!(poly, "{},{} ", fmt_coord(to_px(p.x)), fmt_coord(to_py(p.hi)));
            }
            for p in pts.iter().rev() {
                let _ = write!(poly, "{},{} ", fmt_coord(to_px(p.x)), fmt_coord(to_py(p.lo)));
            }
            let _ = writeln!(
                svg,
                "<polygon class=\"band\" points=\"{}\" fill=\"{}\" fill-opacity=\"0.15\" stroke=\"none\"/>",
                poly.trim_end(),
                color
            );
        }
        let mut line = String::new();
        for p in pts {
            let _ = write!(line, "{},{} ", fmt_coord(to_px(p.x)), fmt_coord(to_py(p.mean)));
        }
        let _ = writeln!(
            svg,
            "<polyline class=\"series\" points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"/>",
            line.trim_end(),
            color
        );
        let ly = MARGIN_T + 16.0 * idx as f64 + 8.0;
        let _ = writeln!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"4\" fill=\"{}\"/>",
            fmt_coord(WIDTH - MARGIN_R - 130.0),
            fmt_coord(ly - 4.0),
            color
        );
        let _ = writeln!(
            svg,
            "<text class=\"legend\" x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>",
            fmt_coord(WIDTH - MARGIN_R - 112.0),
            fmt_coord(ly),
            name
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_csv() -> String {
        let mut s = String::from(crate::sweep::CSV_HEADER);
        s.push('\n');
        for (algo, n, sub) in [
            ("cr_pevi", 100, 0.5),
            ("cr_pevi", 400, 0.25),
            ("pevi", 100, 0.6),
            ("pevi", 400, 0.36),
        ] {
            s.push_str(&format!(
                "1,{n},3,4,8,3,none,0,0,0,0,0.5,1,0.1,uncertainty,{algo},{sub},1,1,0.2,0\n"
            ));
        }
        s
    }

    #[test]
    fn chart_has_one_line_and_legend_entry_per_algorithm() {
        let svg = render_chart(&tiny_csv(), XAxis::EpisodeCount).unwrap();
        assert_eq!(svg.matches("<polyline class=\"series\"").count(), 2);
        assert_eq!(svg.matches("class=\"legend\"").count(), 2);
        // tick labels are the distinct n values verbatim
        assert!(svg.contains(">100</text>"));
        assert!(svg.contains(">400</text>"));
    }

    #[test]
    fn empty_csv_is_an_error() {
        let only_header = format!("{}\n", crate::sweep::CSV_HEADER);
        assert!(matches!(
            render_chart(&only_header, XAxis::EpisodeCount),
            Err(PlotError::Empty)
        ));
    }

    #[test]
    fn missing_columns_are_named() {
        let err = render_chart("a,b\n1,2\n", XAxis::EpisodeCount).unwrap_err();
        match err {
            PlotError::MissingColumns(msg) => {
                assert!(msg.contains('n') && msg.contains("algorithm") && msg.contains("suboptimality"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
