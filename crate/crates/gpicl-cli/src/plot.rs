//! Standalone SVG charts from CSV: line plots with optional confidence
//! bands, categorical heatmaps with a legend, and scatter plots. Output is
//! a pure function of (spec, CSV bytes): numeric formatting is pinned so
//! golden-file comparisons are byte-exact.

use std::path::{Path, PathBuf};

use gpicl::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const PALETTE: [&str; 6] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Line,
    Heatmap,
    Scatter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log2,
}

impl Scale {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Scale::Linear),
            "log2" => Ok(Scale::Log2),
            other => Err(Error::Config(format!("unknown scale {other:?} (linear, log2)"))),
        }
    }

    fn transform(self, v: f64, column: &str) -> Result<f64> {
        match self {
            Scale::Linear => Ok(v),
            Scale::Log2 => {
                if v <= 0.0 {
                    return Err(Error::Config(format!(
                        "column {column:?} has non-positive value {v} on a log2 axis"
                    )));
                }
                Ok(v.log2())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlotSpec {
    pub kind: PlotKind,
    pub input: String,
    pub x: String,
    pub y: String,
    /// heatmap cell value column
    pub value: Option<String>,
    pub series: Option<String>,
    /// CI half-width column; drawn as a band around each line
    pub ci: Option<String>,
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub title: String,
    pub x_label: Option<String>,
    pub y_label: Option<String>,
    pub filter: Vec<(String, String)>,
    pub out: Option<String>,
}

impl PlotSpec {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut input = None;
        let mut x = None;
        let mut y = None;
        let mut value = None;
        let mut series = None;
        let mut ci = None;
        let mut x_scale = Scale::Linear;
        let mut y_scale = Scale::Linear;
        let mut title = String::new();
        let mut x_label = None;
        let mut y_label = None;
        let mut filter = Vec::new();
        let mut out = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            let (key, val) = (key.trim(), val.trim());
            match key {
                "kind" => {
                    kind = Some(match val {
                        "line" => PlotKind::Line,
                        "heatmap" => PlotKind::Heatmap,
                        "scatter" => PlotKind::Scatter,
                        other => {
                            return Err(Error::Config(format!(
                                "unknown plot kind {other:?} (line, heatmap, scatter)"
                            )))
                        }
                    })
                }
                "input" => input = Some(val.to_string()),
                "x" => x = Some(val.to_string()),
                "y" => y = Some(val.to_string()),
                "value" => value = Some(val.to_string()),
                "series" => series = Some(val.to_string()),
                "ci" => ci = Some(val.to_string()),
                "x_scale" => x_scale = Scale::parse(val)?,
                "y_scale" => y_scale = Scale::parse(val)?,
                "title" => title = val.to_string(),
                "x_label" => x_label = Some(val.to_string()),
                "y_label" => y_label = Some(val.to_string()),
                "filter" => {
                    let (col, want) = val.split_once(':').ok_or_else(|| {
                        Error::Config(format!("filter must be column:value, got {val:?}"))
                    })?;
                    filter.push((col.trim().to_string(), want.trim().to_string()));
                }
                "out" => out = Some(val.to_string()),
                other => {
                    return Err(Error::Config(format!(
                        "unknown plot key {other:?} (kind, input, x, y, value, series, ci, x_scale, y_scale, title, x_label, y_label, filter, out)"
                    )))
                }
            }
        }
        let kind = kind.ok_or_else(|| Error::Config("plot spec needs kind=".into()))?;
        let spec = PlotSpec {
            kind,
            input: input.ok_or_else(|| Error::Config("plot spec needs input=".into()))?,
            x: x.ok_or_else(|| Error::Config("plot spec needs x=".into()))?,
            y: y.ok_or_else(|| Error::Config("plot spec needs y=".into()))?,
            value,
            series,
            ci,
            x_scale,
            y_scale,
            title,
            x_label,
            y_label,
            filter,
            out,
        };
        if spec.kind == PlotKind::Heatmap && spec.value.is_none() {
            return Err(Error::Config("heatmap needs value= (the cell color column)".into()));
        }
        Ok(spec)
    }
}

pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn parse(text: &str) -> Result<Csv> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Format("empty CSV".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            if row.len() != header.len() {
                return Err(Error::Format(format!(
                    "CSV row {} has {} fields, header has {}",
                    i + 2,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Csv { header, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| {
            Error::Config(format!(
                "column {name:?} not in CSV (columns: {})",
                self.header.join(", ")
            ))
        })
    }
}

fn parse_cell(column: &str, raw: &str) -> Result<f64> {
    raw.parse()
        .map_err(|_| Error::Config(format!("column {column:?} has non-numeric value {raw:?}")))
}

/// Two-decimal pixel coordinates: enough for clean rendering, coarse
/// enough to be stable.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_tick(v: f64) -> String {
    if v == v.round() && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.6}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    }
}

struct Axis {
    min: f64,
    max: f64,
    /// (position in transformed units, label)
    ticks: Vec<(f64, String)>,
}

impl Axis {
    /// `values` are already transformed.
    fn fit(values: impl Iterator<Item = f64>, scale: Scale) -> Axis {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() {
            (min, max) = (0.0, 1.0);
        }
        if min == max {
            min -= 1.0;
            max += 1.0;
        }
        let ticks = match scale {
            Scale::Linear => linear_ticks(min, max),
            Scale::Log2 => log2_ticks(min, max),
        };
        Axis { min, max, ticks }
    }

    fn frac(&self, t: f64) -> f64 {
        (t - self.min) / (self.max - self.min)
    }
}

fn linear_ticks(min: f64, max: f64) -> Vec<(f64, String)> {
    let span = max - min;
    let raw_step = span / 5.0;
    let mag = 10f64.powf(raw_step.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut ticks = Vec::new();
    let mut t = (min / step).ceil() * step;
    // guard against -0.0 labels
    while t <= max + 1e-9 * span {
        let v = if t == 0.0 { 0.0 } else { t };
        ticks.push((v, fmt_tick(v)));
        t += step;
    }
    ticks
}

fn log2_ticks(min: f64, max: f64) -> Vec<(f64, String)> {
    let lo = min.ceil() as i64;
    let hi = max.floor() as i64;
    let count = (hi - lo + 1).max(1);
    let step = ((count + 7) / 8).max(1);
    let mut ticks = Vec::new();
    let mut k = lo;
    while k <= hi {
        let label = if (0..=10).contains(&k) {
            fmt_tick(2f64.powi(k as i32))
        } else {
            format!("2^{k}")
        };
        ticks.push((k as f64, label));
        k += step;
    }
    ticks
}

/// Five-stop dark-to-bright ramp for heatmap cells.
fn ramp(t: f64) -> String {
    const STOPS: [(f64, [u8; 3]); 5] = [
        (0.00, [0x44, 0x01, 0x54]),
        (0.25, [0x3b, 0x52, 0x8b]),
        (0.50, [0x21, 0x91, 0x8c]),
        (0.75, [0x5e, 0xc9, 0x62]),
        (1.00, [0xfd, 0xe7, 0x25]),
    ];
    let t = t.clamp(0.0, 1.0);
    let i = STOPS.iter().rposition(|(s, _)| *s <= t).unwrap_or(0).min(STOPS.len() - 2);
    let (s0, c0) = STOPS[i];
    let (s1, c1) = STOPS[i + 1];
    let f = if s1 > s0 { (t - s0) / (s1 - s0) } else { 0.0 };
    let mix = |a: u8, b: u8| (a as f64 + f * (b as f64 - a as f64)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(c0[0], c1[0]), mix(c0[1], c1[1]), mix(c0[2], c1[2]))
}

struct Frame {
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
}

impl Frame {
    fn map_x(&self, axis: &Axis, t: f64) -> f64 {
        self.left + axis.frac(t) * (self.right - self.left)
    }

    fn map_y(&self, axis: &Axis, t: f64) -> f64 {
        self.bottom - axis.frac(t) * (self.bottom - self.top)
    }
}

fn svg_open(out: &mut String, title: &str) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"Helvetica,Arial,sans-serif\">\n"
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n"
    ));
    if !title.is_empty() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\" fill=\"#222222\">{}</text>\n",
            px(WIDTH / 2.0),
            escape(title)
        ));
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_axes(out: &mut String, f: &Frame, xa: &Axis, ya: &Axis, x_label: &str, y_label: &str) {
    out.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
        px(f.left), px(f.bottom), px(f.right), px(f.bottom)
    ));
    out.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
        px(f.left), px(f.top), px(f.left), px(f.bottom)
    ));
    for (t, label) in &xa.ticks {
        let x = f.map_x(xa, *t);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
            px(x), px(f.bottom), px(x), px(f.bottom + 4.0)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\" fill=\"#333333\">{}</text>\n",
            px(x), px(f.bottom + 16.0), escape(label)
        ));
    }
    for (t, label) in &ya.ticks {
        let y = f.map_y(ya, *t);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
            px(f.left - 4.0), px(y), px(f.left), px(y)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\" fill=\"#333333\">{}</text>\n",
            px(f.left - 7.0), px(y + 3.5), escape(label)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\" fill=\"#222222\">{}</text>\n",
        px((f.left + f.right) / 2.0),
        px(f.bottom + 34.0),
        escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\" fill=\"#222222\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        px((f.top + f.bottom) / 2.0),
        px((f.top + f.bottom) / 2.0),
        escape(y_label)
    ));
}

/// Render `spec` against already-loaded CSV text.
pub fn render(spec: &PlotSpec, csv_text: &str) -> Result<String> {
    let csv = Csv::parse(csv_text)?;
    let xi = csv.column(&spec.x)?;
    let yi = csv.column(&spec.y)?;
    let vi = spec.value.as_ref().map(|c| csv.column(c)).transpose()?;
    let si = spec.series.as_ref().map(|c| csv.column(c)).transpose()?;
    let ci = spec.ci.as_ref().map(|c| csv.column(c)).transpose()?;
    let filters: Vec<(usize, &str)> = spec
        .filter
        .iter()
        .map(|(col, want)| Ok((csv.column(col)?, want.as_str())))
        .collect::<Result<_>>()?;
    let rows: Vec<&Vec<String>> = csv
        .rows
        .iter()
        .filter(|row| filters.iter().all(|(i, want)| row[*i] == *want))
        .collect();
    if rows.is_empty() {
        return Err(Error::Config(format!(
            "plot selection is empty: no CSV rows{}",
            if spec.filter.is_empty() { "" } else { " match the filters" }
        )));
    }

    match spec.kind {
        PlotKind::Line | PlotKind::Scatter => render_xy(spec, &rows, xi, yi, si, ci),
        PlotKind::Heatmap => render_heatmap(spec, &rows, xi, yi, vi.expect("checked at parse")),
    }
}

fn render_xy(
    spec: &PlotSpec,
    rows: &[&Vec<String>],
    xi: usize,
    yi: usize,
    si: Option<usize>,
    ci: Option<usize>,
) -> Result<String> {
    struct Pt {
        tx: f64,
        ty: f64,
        half: f64,
    }
    // series name -> points, series in first-appearance order
    let mut groups: Vec<(String, Vec<Pt>)> = Vec::new();
    for row in rows {
        let tx = spec.x_scale.transform(parse_cell(&spec.x, &row[xi])?, &spec.x)?;
        let ty = spec.y_scale.transform(parse_cell(&spec.y, &row[yi])?, &spec.y)?;
        let half = match ci {
            Some(i) => parse_cell(spec.ci.as_ref().expect("ci column"), &row[i])?,
            None => 0.0,
        };
        let name = si.map_or(String::new(), |i| row[i].clone());
        match groups.iter_mut().find(|(n, _)| *n == name) {
            Some((_, pts)) => pts.push(Pt { tx, ty, half }),
            None => groups.push((name, vec![Pt { tx, ty, half }])),
        }
    }
    for (_, pts) in &mut groups {
        pts.sort_by(|a, b| a.tx.total_cmp(&b.tx));
    }

    let xa = Axis::fit(groups.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.tx)), spec.x_scale);
    // CI bands count toward the y range so they never clip
    let ya = Axis::fit(
        groups.iter().flat_map(|(_, pts)| {
            pts.iter().flat_map(|p| [p.ty - p.half, p.ty + p.half])
        }),
        spec.y_scale,
    );
    let frame = Frame { left: 62.0, right: WIDTH - 20.0, top: 34.0, bottom: HEIGHT - 52.0 };

    let mut out = String::new();
    svg_open(&mut out, &spec.title);
    draw_axes(
        &mut out,
        &frame,
        &xa,
        &ya,
        spec.x_label.as_deref().unwrap_or(&spec.x),
        spec.y_label.as_deref().unwrap_or(&spec.y),
    );
    for (g, (name, pts)) in groups.iter().enumerate() {
        let color = PALETTE[g % PALETTE.len()];
        if spec.kind == PlotKind::Line {
            if ci.is_some() && pts.iter().any(|p| p.half > 0.0) {
                let mut band = String::new();
                for p in pts {
                    band.push_str(&format!(
                        "{},{} ",
                        px(frame.map_x(&xa, p.tx)),
                        px(frame.map_y(&ya, p.ty + p.half))
                    ));
                }
                for p in pts.iter().rev() {
                    band.push_str(&format!(
                        "{},{} ",
                        px(frame.map_x(&xa, p.tx)),
                        px(frame.map_y(&ya, p.ty - p.half))
                    ));
                }
                out.push_str(&format!(
                    "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
                    band.trim_end()
                ));
            }
            let points: Vec<String> = pts
                .iter()
                .map(|p| format!("{},{}", px(frame.map_x(&xa, p.tx)), px(frame.map_y(&ya, p.ty))))
                .collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                points.join(" ")
            ));
        } else {
            for p in pts {
                out.push_str(&format!(
                    "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{color}\" fill-opacity=\"0.8\"/>\n",
                    px(frame.map_x(&xa, p.tx)),
                    px(frame.map_y(&ya, p.ty))
                ));
            }
        }
        if si.is_some() {
            let ly = frame.top + 14.0 * g as f64 + 4.0;
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
                px(frame.right - 110.0),
                px(ly - 9.0)
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"#333333\">{}</text>\n",
                px(frame.right - 96.0),
                px(ly),
                escape(name)
            ));
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn render_heatmap(
    spec: &PlotSpec,
    rows: &[&Vec<String>],
    xi: usize,
    yi: usize,
    vi: usize,
) -> Result<String> {
    let value_col = spec.value.as_ref().expect("checked at parse");
    // categorical grid: unique coordinate values, sorted numerically when
    // every value parses, lexically otherwise
    let uniques = |idx: usize| -> Vec<String> {
        let mut vals: Vec<String> = Vec::new();
        for row in rows {
            if !vals.contains(&row[idx]) {
                vals.push(row[idx].clone());
            }
        }
        let nums: Option<Vec<f64>> = vals.iter().map(|v| v.parse().ok()).collect();
        if let Some(nums) = nums {
            let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(vals).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            pairs.into_iter().map(|(_, v)| v).collect()
        } else {
            vals.sort();
            vals
        }
    };
    let xs = uniques(xi);
    let ys = uniques(yi);

    // duplicate (x, y) rows average, so repeated seeds collapse to a mean
    let mut sums = vec![0.0f64; xs.len() * ys.len()];
    let mut counts = vec![0usize; xs.len() * ys.len()];
    for row in rows {
        let cx = xs.iter().position(|v| *v == row[xi]).expect("from uniques");
        let cy = ys.iter().position(|v| *v == row[yi]).expect("from uniques");
        sums[cy * xs.len() + cx] += parse_cell(value_col, &row[vi])?;
        counts[cy * xs.len() + cx] += 1;
    }
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..sums.len() {
        if counts[i] > 0 {
            let v = sums[i] / counts[i] as f64;
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
    }
    let spread = if vmax > vmin { vmax - vmin } else { 1.0 };

    let frame = Frame { left: 62.0, right: WIDTH - 86.0, top: 34.0, bottom: HEIGHT - 52.0 };
    let cw = (frame.right - frame.left) / xs.len() as f64;
    let ch = (frame.bottom - frame.top) / ys.len() as f64;

    let mut out = String::new();
    svg_open(&mut out, &spec.title);
    for (r, _) in ys.iter().enumerate() {
        for (c, _) in xs.iter().enumerate() {
            if counts[r * xs.len() + c] == 0 {
                continue;
            }
            let v = sums[r * xs.len() + c] / counts[r * xs.len() + c] as f64;
            // row 0 at the bottom, matching ascending axis order
            let cell_x = frame.left + c as f64 * cw;
            let cell_y = frame.bottom - (r + 1) as f64 * ch;
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                px(cell_x),
                px(cell_y),
                px(cw),
                px(ch),
                ramp((v - vmin) / spread)
            ));
        }
    }
    // tick labels at cell centers
    for (c, label) in xs.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\" fill=\"#333333\">{}</text>\n",
            px(frame.left + (c as f64 + 0.5) * cw),
            px(frame.bottom + 16.0),
            escape(label)
        ));
    }
    for (r, label) in ys.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\" fill=\"#333333\">{}</text>\n",
            px(frame.left - 7.0),
            px(frame.bottom - (r as f64 + 0.5) * ch + 3.5),
            escape(label)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\" fill=\"#222222\">{}</text>\n",
        px((frame.left + frame.right) / 2.0),
        px(frame.bottom + 34.0),
        escape(spec.x_label.as_deref().unwrap_or(&spec.x))
    ));
    out.push_str(&format!(
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\" fill=\"#222222\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        px((frame.top + frame.bottom) / 2.0),
        px((frame.top + frame.bottom) / 2.0),
        escape(spec.y_label.as_deref().unwrap_or(&spec.y))
    ));

    // legend: gradient bar with min/max labels
    let (lx, lw) = (frame.right + 16.0, 14.0);
    let segments = 32;
    let lh = (frame.bottom - frame.top) / segments as f64;
    for s in 0..segments {
        let t = (segments - 1 - s) as f64 / (segments - 1) as f64;
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
            px(lx),
            px(frame.top + s as f64 * lh),
            px(lw),
            px(lh + 0.5),
            ramp(t)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"9\" fill=\"#333333\">{}</text>\n",
        px(lx + lw + 4.0),
        px(frame.top + 8.0),
        fmt_tick_trim(vmax)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"9\" fill=\"#333333\">{}</text>\n",
        px(lx + lw + 4.0),
        px(frame.bottom),
        fmt_tick_trim(vmin)
    ));
    out.push_str("</svg>\n");
    Ok(out)
}

fn fmt_tick_trim(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".into()
    } else {
        s.to_string()
    }
}

/// The `plot <spec>` subcommand: CSV and output paths resolve relative to
/// the spec file's directory.
pub fn plot_cmd(spec_path: &Path, out_override: Option<&Path>) -> Result<PathBuf> {
    let spec = PlotSpec::parse_file(spec_path)?;
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let input = base.join(&spec.input);
    let csv_text = std::fs::read_to_string(&input)
        .map_err(|e| Error::Config(format!("{}: {e}", input.display())))?;
    let svg = render(&spec, &csv_text)?;
    let out = match out_override {
        Some(p) => p.to_path_buf(),
        None => match &spec.out {
            Some(name) => base.join(name),
            None => {
                let stem = spec_path.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
                base.join(format!("{stem}.svg"))
            }
        },
    };
    std::fs::write(&out, svg)?;
    Ok(out)
}
