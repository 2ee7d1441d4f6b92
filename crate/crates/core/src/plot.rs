//! Learning-curve rendering: turns curve CSVs into a self-contained SVG
//! with axes, one polyline per series, and a legend. No drawing
//! dependencies — the files this produces are small enough to emit by hand.

use crate::error::{Error, Result};
use crate::report::CsvTable;
use std::path::Path;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// One named series of (x, y) points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Extract a series from a curve table using the given columns.
pub fn series_from_table(name: &str, table: &CsvTable, x_col: &str, y_col: &str) -> Result<Series> {
    let xs = table.floats(x_col)?;
    let ys = table.floats(y_col)?;
    let points = xs
        .into_iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    Ok(Series {
        name: name.to_string(),
        points,
    })
}

fn bounds(series: &[Series]) -> Result<(f64, f64, f64, f64)> {
    let mut pts = series.iter().flat_map(|s| s.points.iter());
    let first = *pts
        .next()
        .ok_or_else(|| Error::contract("no finite points to plot"))?;
    let (mut x0, mut x1, mut y0, mut y1) = (first.0, first.0, first.1, first.1);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    // Degenerate spans still need a drawable box.
    if x0 == x1 {
        x1 = x0 + 1.0;
    }
    if y0 == y1 {
        y1 = y0 + 1.0;
    }
    Ok((x0, x1, y0, y1))
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Render the series to an SVG document. `sources` (format tags and config
/// hashes of the inputs) are embedded as a provenance comment.
pub fn render(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    sources: &[(String, String)],
) -> Result<String> {
    let (x0, x1, y0, y1) = bounds(series)?;
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |y: f64| HEIGHT - MARGIN_B - (y - y0) / (y1 - y0) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str("<!-- format=plot-v1");
    for (tag, hash) in sources {
        svg.push_str(&format!(" source={tag}:{hash}"));
    }
    svg.push_str(" -->\n");
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));

    // Axes box and gridlines at quartiles.
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    ));
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let gx = px(fx);
        let gy = py(fy);
        if i > 0 && i < 4 {
            svg.push_str(&format!(
                "<line x1=\"{gx:.1}\" y1=\"{MARGIN_T}\" x2=\"{gx:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n",
                HEIGHT - MARGIN_B
            ));
            svg.push_str(&format!(
                "<line x1=\"{MARGIN_L}\" y1=\"{gy:.1}\" x2=\"{:.1}\" y2=\"{gy:.1}\" stroke=\"#ddd\"/>\n",
                WIDTH - MARGIN_R
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{gx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MARGIN_B + 18.0,
            fmt_tick(fx)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{gy:.1}\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>\n",
            MARGIN_L - 8.0,
            fmt_tick(fy)
        ));
    }

    // Series polylines and legend.
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            pts.join(" ")
        ));
        let ly = MARGIN_T + 16.0 + 16.0 * k as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"3\"/>\n",
            MARGIN_L + 10.0,
            MARGIN_L + 34.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            MARGIN_L + 40.0,
            ly + 4.0,
            xml_escape(&s.name)
        ));
    }

    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 12.0,
        xml_escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        xml_escape(y_label)
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// CLI entry: read curve CSVs, plot `y_col` against `x_col`, one series per
/// file (named by file stem), and write the SVG.
pub fn plot_files(inputs: &[std::path::PathBuf], x_col: &str, y_col: &str, out: &Path) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::contract("no curve files given"));
    }
    let mut series = Vec::new();
    let mut sources = Vec::new();
    for path in inputs {
        let table = CsvTable::load(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        series.push(series_from_table(&name, &table, x_col, y_col)?);
        sources.push((table.format_tag.clone(), table.config_hash.clone()));
    }
    let svg = render(
        &format!("{y_col} vs {x_col}"),
        x_col,
        y_col,
        &series,
        &sources,
    )?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}
