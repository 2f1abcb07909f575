//! Output files: CSV tables with a provenance comment header, binary
//! density-matrix snapshots and simple SVG line plots.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::operator_core::DensityMatrix;
use crate::{Error, Result, C64, VERSION};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) if v.is_nan() => "NaN".into(),
            Cell::Num(v) => format!("{v}"),
            Cell::Int(v) => format!("{v}"),
            Cell::Text(s) => s.clone(),
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            Cell::Text(_) => None,
        }
    }
}

/// Provenance written at the top of every CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub scenario_sha256: String,
    /// Extra `key value` comment lines.
    pub notes: Vec<(String, String)>,
}

impl Header {
    pub fn new(scenario_sha256: &str) -> Self {
        Self {
            scenario_sha256: scenario_sha256.to_string(),
            notes: Vec::new(),
        }
    }

    pub fn note(mut self, key: &str, value: impl ToString) -> Self {
        self.notes.push((key.to_string(), value.to_string()));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k].as_f64().unwrap_or(f64::NAN)).collect())
    }

    pub fn to_bytes(&self, header: &Header) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        writeln!(buf, "# mist-sim {VERSION}")?;
        writeln!(buf, "# scenario_sha256 {}", header.scenario_sha256)?;
        for (k, v) in &header.notes {
            writeln!(buf, "# {k} {v}")?;
        }
        let mut w = csv::Writer::from_writer(buf);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.columns).map_err(io)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render)).map_err(io)?;
        }
        w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    pub fn write(&self, dir: &Path, name: &str, header: &Header) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(name);
        std::fs::write(&path, self.to_bytes(header)?)?;
        Ok(path)
    }
}

/// Writes `rho` as little-endian data: one `u64` per subsystem dimension
/// followed by the row-major `complex128` entries.
pub fn write_snapshot(path: &Path, rho: &DensityMatrix) -> Result<()> {
    let d = rho.dim();
    let mut buf = Vec::with_capacity(8 * rho.dims.len() + 16 * d * d);
    for &n in &rho.dims {
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for i in 0..d {
        for j in 0..d {
            let z = rho.matrix[(i, j)];
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`] given its number of
/// subsystems.
pub fn read_snapshot(path: &Path, subsystems: usize) -> Result<(Vec<usize>, Vec<C64>)> {
    let bytes = std::fs::read(path)?;
    let f = |k: usize| f64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
    if bytes.len() < 8 * subsystems {
        return Err(Error::dims(8 * subsystems, bytes.len()));
    }
    let dims: Vec<usize> = (0..subsystems)
        .map(|k| u64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().unwrap()) as usize)
        .collect();
    let d: usize = dims.iter().product();
    let off = 8 * subsystems;
    if bytes.len() != off + 16 * d * d {
        return Err(Error::dims(off + 16 * d * d, bytes.len()));
    }
    let data = (0..d * d).map(|k| C64::new(f(off + 16 * k), f(off + 16 * k + 8))).collect();
    Ok((dims, data))
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line plot of the `y` columns of `table` against column `x`.
pub fn render_svg(table: &CsvTable, x: &str, ys: &[&str], title: &str) -> Option<String> {
    let xs = table.column(x)?;
    let series: Vec<(&str, Vec<f64>)> = ys.iter().filter_map(|y| table.column(y).map(|v| (*y, v))).collect();
    if xs.is_empty() || series.is_empty() {
        return None;
    }
    let finite = |v: &&f64| v.is_finite();
    let (x0, x1) = bounds(xs.iter().filter(finite));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.1.iter()).filter(finite));
    let (w, h, m) = (640.0, 400.0, 50.0);
    let px = |v: f64| m + (v - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |v: f64| h - m - (v - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x}</text>"#, w / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="{m}" y="{}" text-anchor="middle">{x0:.3}</text>"#, h - m + 15.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x1:.3}</text>"#, w - m, h - m + 15.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text>"#, m - 4.0, h - m);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#, m - 4.0, m + 4.0);
    for (k, (name, v)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(v)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| format!("{:.2},{:.2}", px(*a), py(*b)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            w - m + 4.0,
            m + 14.0 * (k as f64 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

fn bounds<'a>(it: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}
