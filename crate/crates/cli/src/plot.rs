//! SVG line and scatter plots of the CSV files this tool writes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::csv::{parse_csv, write_atomic, ParsedCsv};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Scatter,
}

/// How a recognised CSV layout is drawn.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    series: &'static [&'static str],
    x: &'static str,
    y: &'static str,
    style: Style,
    /// Average repeated `(series, x)` points, e.g. across sketch seeds.
    average: bool,
}

fn layout(header: &[String]) -> Option<Layout> {
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let l = |series, x, y, style, average| Layout {
        series,
        x,
        y,
        style,
        average,
    };
    Some(match h.as_slice() {
        ["spec", "seed", "iteration", "quadratic_cost", "relative_residual"] => {
            l(&["spec"], "iteration", "quadratic_cost", Style::Line, true)
        }
        ["spec", "iteration", "mean", "std", "count"] => l(&["spec"], "iteration", "mean", Style::Line, false),
        ["axis", "value", "spec", "iteration", "mean", "std", "count"] => {
            l(&["spec", "axis", "value"], "iteration", "mean", Style::Line, false)
        }
        ["spec", "index", "eigenvalue"] => l(&["spec"], "index", "eigenvalue", Style::Scatter, false),
        ["spec", "seed", "index", "theta"] => l(&["spec"], "index", "theta", Style::Scatter, false),
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub log_y: bool,
    /// Column to plot instead of the layout's default.
    pub y_column: Option<String>,
    pub title: Option<String>,
}

fn series_from(path: &Path, csv: &ParsedCsv, opts: &PlotOptions, prefix: Option<&str>) -> CliResult<(Vec<Series>, Style, String, String)> {
    let bad = |message: String| CliError::Input {
        path: path.to_path_buf(),
        message,
    };
    let lay = layout(&csv.header).ok_or_else(|| bad(format!("unrecognised header '{}'", csv.header.join(","))))?;
    let y_name = opts.y_column.as_deref().unwrap_or(lay.y);
    let col = |name: &str| csv.column(name).ok_or_else(|| bad(format!("no column '{name}'")));
    let (xi, yi) = (col(lay.x)?, col(y_name)?);
    let keys = lay.series.iter().map(|s| col(s)).collect::<CliResult<Vec<_>>>()?;
    let mut groups: BTreeMap<String, BTreeMap<u64, (f64, Vec<f64>)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut scatter: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (r, row) in csv.rows.iter().enumerate() {
        let num = |i: usize| {
            row[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("row {}: '{}' is not a finite number", r + 2, row[i])))
        };
        let (x, y) = (num(xi)?, num(yi)?);
        let mut name = row[keys[0]].clone();
        if keys.len() > 1 {
            let extra: Vec<String> = keys[1..].iter().map(|&k| row[k].clone()).collect();
            write!(name, " ({})", extra.join("=")).unwrap();
        }
        if let Some(p) = prefix {
            name = format!("{p}: {name}");
        }
        if !order.contains(&name) {
            order.push(name.clone());
        }
        if lay.average {
            let slot = groups.entry(name).or_default().entry(x.to_bits()).or_insert((x, Vec::new()));
            slot.1.push(y);
        } else {
            scatter.entry(name).or_default().push((x, y));
        }
    }
    let series = order
        .into_iter()
        .map(|name| {
            let points = if lay.average {
                let mut pts: Vec<(f64, f64)> = groups[&name]
                    .values()
                    .map(|(x, ys)| (*x, ys.iter().sum::<f64>() / ys.len() as f64))
                    .collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                pts
            } else {
                scatter[&name].clone()
            };
            Series { name, points }
        })
        .collect();
    Ok((series, lay.style, lay.x.to_string(), y_name.to_string()))
}

/// Reads the inputs and renders one SVG document.
pub fn render_files(inputs: &[PathBuf], opts: &PlotOptions) -> CliResult<String> {
    let mut all = Vec::new();
    let mut style = Style::Line;
    let mut labels = (String::new(), String::new());
    for (i, path) in inputs.iter().enumerate() {
        let csv = parse_csv(path)?;
        let prefix = (inputs.len() > 1).then(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        let (series, st, x, y) = series_from(path, &csv, opts, prefix.as_deref())?;
        if series.is_empty() {
            return Err(CliError::Input {
                path: path.clone(),
                message: "no data rows".into(),
            });
        }
        if opts.log_y {
            if let Some(s) = series.iter().find(|s| s.points.iter().any(|p| p.1 <= 0.0)) {
                return Err(CliError::Input {
                    path: path.clone(),
                    message: format!("series '{}' has non-positive values on a log axis", s.name),
                });
            }
        }
        if i == 0 {
            style = st;
            labels = (x, y);
        }
        all.extend(series);
    }
    Ok(render(&all, style, &labels.0, &labels.1, opts))
}

pub fn plot(inputs: &[PathBuf], out: &Path, opts: &PlotOptions) -> CliResult<PathBuf> {
    let svg = render_files(inputs, opts)?;
    let target = if out.extension().is_some_and(|e| e == "svg") {
        out.to_path_buf()
    } else {
        let stem = inputs[0]
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "plot".into());
        out.join(format!("{stem}.svg"))
    };
    if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    write_atomic(&target, svg.as_bytes())?;
    Ok(target)
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 240.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        let s = format!("{v:.1e}");
        return s.replace(".0e", "e");
    }
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Roughly five evenly spaced round ticks covering `[lo, hi]`.
fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        let pad = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

pub fn render(series: &[Series], style: Style, x_label: &str, y_label: &str, opts: &PlotOptions) -> String {
    let ty = |y: f64| if opts.log_y { y.log10() } else { y };
    let (x0, x1) = padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (mut y0, mut y1) = padded_range(series.iter().flat_map(|s| s.points.iter().map(|p| ty(p.1))));
    if opts.log_y {
        y0 = y0.floor();
        y1 = y1.ceil().max(y0 + 1.0);
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    if let Some(t) = &opts.title {
        writeln!(
            s,
            r#"<text x="{:.2}" y="28" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(t)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();

    for x in linear_ticks(x0, x1) {
        let px = sx(x);
        writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#dddddd"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP,
            TOP + ph,
            TOP + ph + 18.0,
            tick_label(x)
        )
        .unwrap();
    }
    let y_ticks: Vec<(f64, String)> = if opts.log_y {
        (y0 as i64..=y1 as i64).map(|e| (e as f64, format!("1e{e}"))).collect()
    } else {
        linear_ticks(y0, y1).into_iter().map(|y| (y, tick_label(y))).collect()
    };
    for (y, label) in y_ticks {
        let py = sy(y);
        writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            py + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    )
    .unwrap();
    let y_title = if opts.log_y { format!("{y_label} (log scale)") } else { y_label.to_string() };
    writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&y_title)
    )
    .unwrap();

    for (i, series) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(ty(y))))
            .collect();
        match style {
            Style::Line => writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            )
            .unwrap(),
            Style::Scatter => {
                write!(s, r#"<g fill="{color}">"#).unwrap();
                for p in &pts {
                    let (x, y) = p.split_once(',').expect("point");
                    write!(s, r#"<circle cx="{x}" cy="{y}" r="2"/>"#).unwrap();
                }
                writeln!(s, "</g>").unwrap();
            }
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 15.0;
        writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&series.name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
