//! Diagnostic artifacts: grayscale bit maps (binary PGM), x/y data tables
//! and a bare-bones SVG line plot.
//!
//! Bit maps lay the B values out row by row in a near-square grid of
//! `ceil(sqrt(B))` columns. The layout is for looking at only; it says
//! nothing about the physical cell arrangement. Cells past the end of the
//! map are painted [`SENTINEL_SHADE`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::bitcore::{InstabilityMap, P1Map};
use crate::error::{invalid, Error, Result};
use crate::features::{blockwise_p1, p1_address_regression, p1_spectrum, SpearmanMode};

/// Mid-gray used for padding cells.
pub const SENTINEL_SHADE: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RenderMode {
    #[default]
    Unsorted,
    /// Each row sorted ascending.
    RowRanked,
}

impl std::str::FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unsorted" => Ok(RenderMode::Unsorted),
            "row-ranked" | "ranked" => Ok(RenderMode::RowRanked),
            other => Err(Error::Parse(format!("unknown render mode `{other}`"))),
        }
    }
}

/// `(rows, cols)` of the grid holding `n` cells.
pub fn grid_shape(n: usize) -> (usize, usize) {
    if n == 0 {
        return (0, 0);
    }
    let mut cols = (n as f64).sqrt() as usize;
    while cols * cols < n {
        cols += 1;
    }
    while cols > 1 && (cols - 1) * (cols - 1) >= n {
        cols -= 1;
    }
    (n.div_ceil(cols), cols)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn row(&self, r: usize) -> &[u8] {
        &self.pixels[r * self.width..(r + 1) * self.width]
    }

    /// Binary (P5) portable graymap.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Parse("not a binary 8-bit graymap".into());
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad());
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
        }
        pos += 1;
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
        if fields[0] != "P5" || num(fields[3])? != 255 {
            return Err(bad());
        }
        let (width, height) = (num(fields[1])?, num(fields[2])?);
        let pixels = bytes.get(pos..).ok_or_else(bad)?.to_vec();
        if pixels.len() != width * height {
            return Err(bad());
        }
        Ok(Self { width, height, pixels })
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

fn shade(v: f64, full_scale: f64) -> u8 {
    (v / full_scale * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Grayscale rendering of `values` where 0 is black and `full_scale` white.
pub fn render_bitmap(values: &[f64], full_scale: f64, mode: RenderMode) -> GrayImage {
    let (height, width) = grid_shape(values.len());
    let mut pixels = vec![SENTINEL_SHADE; width * height];
    for (r, chunk) in values.chunks(width.max(1)).enumerate() {
        let mut row = chunk.to_vec();
        if mode == RenderMode::RowRanked {
            row.sort_by(f64::total_cmp);
        }
        for (c, v) in row.into_iter().enumerate() {
            pixels[r * width + c] = shade(v, full_scale);
        }
    }
    GrayImage { width, height, pixels }
}

pub fn render_p1(p1: &P1Map, mode: RenderMode) -> GrayImage {
    render_bitmap(&p1.values(), 1.0, mode)
}

pub fn render_instability(map: &InstabilityMap, mode: RenderMode) -> GrayImage {
    render_bitmap(map.values(), 0.5, mode)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

/// One x column and any number of y columns, optionally with a fitted line.
#[derive(Debug, Clone, PartialEq)]
pub struct XyTable {
    pub x_label: String,
    pub y_labels: Vec<String>,
    pub x: Vec<f64>,
    /// One entry per row, each holding a value per y column.
    pub y: Vec<Vec<f64>>,
    pub fit: Option<LineFit>,
}

impl XyTable {
    pub fn new(x_label: &str, y_labels: &[&str]) -> Self {
        Self {
            x_label: x_label.into(),
            y_labels: y_labels.iter().map(|s| s.to_string()).collect(),
            x: Vec::new(),
            y: Vec::new(),
            fit: None,
        }
    }

    pub fn push(&mut self, x: f64, ys: Vec<f64>) {
        assert_eq!(ys.len(), self.y_labels.len(), "one value per y column");
        self.x.push(x);
        self.y.push(ys);
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Block-mean P1 against normalised address, with the least-squares
    /// line of the full map. Each block sits at the mean address of its bits.
    pub fn p1_blocks(p1: &P1Map, block_bytes: usize) -> Result<Self> {
        let blocks = blockwise_p1(p1, block_bytes)?;
        let reg = p1_address_regression(p1, block_bytes, SpearmanMode::Blockwise)?;
        let block_bits = (block_bytes * 8) as f64;
        let span = (p1.len() - 1) as f64;
        let mut t = Self::new("address", &["p1"]);
        for (b, v) in blocks.into_iter().enumerate() {
            t.push((b as f64 * block_bits + (block_bits - 1.0) / 2.0) / span, vec![v]);
        }
        t.fit = Some(LineFit {
            slope: reg.slope,
            intercept: reg.intercept,
        });
        Ok(t)
    }

    /// Spectrum amplitudes of several P1 maps side by side, one column each.
    pub fn spectra(maps: &[(&str, &P1Map)]) -> Result<Self> {
        let spectra: Vec<Vec<f64>> = maps.iter().map(|(_, m)| p1_spectrum(m)).collect::<Result<_>>()?;
        let len = spectra.first().map_or(0, Vec::len);
        if spectra.iter().any(|s| s.len() != len) {
            return Err(invalid("spectra of different memory sizes"));
        }
        let labels: Vec<&str> = maps.iter().map(|(n, _)| *n).collect();
        let mut t = Self::new("bin", &labels);
        for k in 0..len {
            t.push(k as f64, spectra.iter().map(|s| s[k]).collect());
        }
        Ok(t)
    }

    /// Comma-separated text; the fit, if any, follows as `#` comment lines.
    pub fn to_csv(&self) -> String {
        let mut s = self.x_label.clone();
        for l in &self.y_labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (x, ys) in self.x.iter().zip(&self.y) {
            let _ = write!(s, "{x}");
            for v in ys {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        if let Some(f) = self.fit {
            let _ = writeln!(s, "# slope={}", f.slope);
            let _ = writeln!(s, "# intercept={}", f.intercept);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{v}`: {e}")));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty table".into()))?;
        let mut cols = header.split(',');
        let x_label = cols.next().unwrap_or_default().to_string();
        let y_labels: Vec<String> = cols.map(str::to_string).collect();
        let mut t = XyTable {
            x_label,
            y_labels,
            x: Vec::new(),
            y: Vec::new(),
            fit: None,
        };
        let (mut slope, mut intercept) = (None, None);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            if let Some(c) = line.strip_prefix('#') {
                match c.trim().split_once('=') {
                    Some(("slope", v)) => slope = Some(parse(v)?),
                    Some(("intercept", v)) => intercept = Some(parse(v)?),
                    _ => {}
                }
                continue;
            }
            let vals: Vec<f64> = line.split(',').map(parse).collect::<Result<_>>()?;
            if vals.len() != t.y_labels.len() + 1 {
                return Err(Error::Parse(format!("row `{line}` has {} fields", vals.len())));
            }
            t.x.push(vals[0]);
            t.y.push(vals[1..].to_vec());
        }
        if let (Some(slope), Some(intercept)) = (slope, intercept) {
            t.fit = Some(LineFit { slope, intercept });
        }
        Ok(t)
    }

    /// Line plot of every y column, plus the fitted line when present.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const M: f64 = 48.0;
        let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
        let finite = |v: &&f64| v.is_finite();
        let (x0, x1) = bounds(self.x.iter().filter(finite));
        let mut ys: Vec<f64> = self.y.iter().flatten().copied().filter(|v| v.is_finite()).collect();
        if let Some(f) = self.fit {
            ys.extend([f.intercept + f.slope * x0, f.intercept + f.slope * x1]);
        }
        let (y0, y1) = bounds(ys.iter());
        let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
        let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * M,
            H - 2.0 * M
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 12.0,
            escape(&self.x_label)
        );
        for (i, (v, y)) in [(x0, H - M + 14.0), (x1, H - M + 14.0)].iter().enumerate() {
            let x = if i == 0 { M } else { W - M };
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{y}" font-size="10" text-anchor="middle">{}</text>"#,
                fmt_tick(*v)
            );
        }
        for (v, y) in [(y0, H - M), (y1, M)] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#,
                M - 4.0,
                y + 4.0,
                fmt_tick(v)
            );
        }
        for (c, label) in self.y_labels.iter().enumerate() {
            let color = colors[c % colors.len()];
            let pts: Vec<String> = self
                .x
                .iter()
                .zip(&self.y)
                .filter(|(x, r)| x.is_finite() && r[c].is_finite())
                .map(|(&x, r)| format!("{:.2},{:.2}", px(x), py(r[c])))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
                M + 8.0,
                M + 14.0 * (c + 1) as f64,
                escape(label)
            );
        }
        if let Some(f) = self.fit {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="6 4"/>"#,
                px(x0),
                py(f.intercept + f.slope * x0),
                px(x1),
                py(f.intercept + f.slope * x1)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Writes `<stem>.csv` and `<stem>.svg`.
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        let csv = stem.with_extension("csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let svg = stem.with_extension("svg");
        fs::write(&svg, self.to_svg()).map_err(|e| Error::io(&svg, e))
    }
}

fn bounds<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
