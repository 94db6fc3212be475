//! Artifact writers: CSV with a fixed schema, pretty JSON, and a small SVG line plot.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

/// One CSV field.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Empty,
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    fn render(&self, column: &str) -> Result<String, CliError> {
        match self {
            Cell::Int(v) => Ok(v.to_string()),
            Cell::Float(v) if !v.is_finite() => Err(CliError::Schema(format!("non-finite value {v} in column `{column}`"))),
            Cell::Float(v) => Ok(format!("{:.16e}", v + 0.0)),
            Cell::Text(s) => Ok(s.clone()),
            Cell::Empty => Ok(String::new()),
        }
    }
}

/// Renders `rows` under `schema` to CSV text; floats carry 17 significant digits.
pub fn render_csv(schema: &[&str], rows: &[Vec<Cell>]) -> Result<String, CliError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(schema).map_err(|e| CliError::Schema(e.to_string()))?;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != schema.len() {
            return Err(CliError::Schema(format!("row {i} has {} fields, schema has {}", row.len(), schema.len())));
        }
        let fields = row.iter().zip(schema).map(|(c, col)| c.render(col)).collect::<Result<Vec<_>, _>>()?;
        w.write_record(&fields).map_err(|e| CliError::Schema(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Schema(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Schema(e.to_string()))
}

pub fn emit_csv(schema: &[&str], rows: &[Vec<Cell>], path: &Path) -> Result<(), CliError> {
    let text = render_csv(schema, rows)?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Schema(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// A named polyline for [`render_svg`].
pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Minimal line chart with linear axes; display only.
pub fn render_svg(title: &str, series: &[Series<'_>]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let all = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() || x1 <= x0 {
        x0 = 0.0;
        x1 = x1.max(1.0);
    }
    if !y1.is_finite() || y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut out = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n");
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += &format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{title}</text>\n",
        W / 2.0
    );
    out += &format!(
        "<path d=\"M{M} {M} L{M} {b} L{r} {b}\" stroke=\"black\" fill=\"none\"/>\n",
        b = H - M,
        r = W - M
    );
    out += &format!(
        "<text x=\"{M}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{x0:.4}</text>\n",
        H - M + 16.0
    );
    out += &format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{x1:.4}</text>\n",
        W - M,
        H - M + 16.0
    );
    out += &format!(
        "<text x=\"{}\" y=\"{M}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{y1:.4}</text>\n",
        M - 4.0
    );
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        out += &format!(
            "<polyline points=\"{}\" stroke=\"{}\" stroke-width=\"1.5\" fill=\"none\"/>\n",
            pts.join(" "),
            s.color
        );
        out += &format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{}</text>\n",
            M + 10.0,
            M + 14.0 * (i as f64 + 1.0),
            s.color,
            s.name
        );
    }
    out += "</svg>\n";
    out
}
