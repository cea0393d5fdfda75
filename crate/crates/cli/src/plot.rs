//! Line-plus-band SVG figures from the per-grid-point CSV files.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::CliError;

pub const COLUMNS: [&str; 4] = ["epoch", "mean_dist", "std_dist", "censored_count"];

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Debug)]
pub struct PlotSpec {
    pub inputs: Vec<PathBuf>,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn parse_series(name: &str, text: &str) -> Result<Series, CliError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| CliError::Plot(format!("{name}: empty CSV")))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    for (j, want) in COLUMNS.iter().enumerate() {
        match cols.get(j) {
            Some(got) if got == want => {}
            Some(got) => {
                return Err(CliError::Plot(format!(
                    "{name}: column {} is `{got}`, expected `{want}`",
                    j + 1
                )))
            }
            None => return Err(CliError::Plot(format!("{name}: missing column `{want}`"))),
        }
    }
    if let Some(extra) = cols.get(COLUMNS.len()) {
        return Err(CliError::Plot(format!("{name}: unexpected column `{extra}`")));
    }
    let mut s = Series {
        name: name.to_string(),
        x: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
    };
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != COLUMNS.len() {
            return Err(CliError::Plot(format!(
                "{name}: row {} has {} fields, expected {}",
                row + 1,
                fields.len(),
                COLUMNS.len()
            )));
        }
        let num = |j: usize| -> Result<f64, CliError> {
            fields[j].parse().map_err(|_| {
                CliError::Plot(format!(
                    "{name}: row {}: column `{}` has non-numeric value `{}`",
                    row + 1,
                    COLUMNS[j],
                    fields[j]
                ))
            })
        };
        let (x, m, sd) = (num(0)?, num(1)?, num(2)?);
        num(3)?;
        // fully censored points carry NaN and are left out of the figure
        if x.is_finite() && m.is_finite() && sd.is_finite() {
            s.x.push(x);
            s.mean.push(m);
            s.std.push(sd);
        }
    }
    if s.x.is_empty() {
        return Err(CliError::Plot(format!("{name}: no data rows")));
    }
    Ok(s)
}

enum Token {
    Text(String),
    Num(f64),
}

fn tokens(s: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let start = i;
        if chars[i].is_ascii_digit() {
            let mut seen_dot = false;
            while i < chars.len() && (chars[i].is_ascii_digit() || (chars[i] == '.' && !seen_dot)) {
                seen_dot |= chars[i] == '.';
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Token::Num(text.trim_end_matches('.').parse().unwrap_or(0.0)));
        } else {
            while i < chars.len() && !chars[i].is_ascii_digit() {
                i += 1;
            }
            out.push(Token::Text(chars[start..i].iter().collect()));
        }
    }
    out
}

/// Orders `step0.005` before `step0.025` before `step0.1`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (ta, tb) = (tokens(a), tokens(b));
    for (x, y) in ta.iter().zip(&tb) {
        let ord = match (x, y) {
            (Token::Num(p), Token::Num(q)) => p.partial_cmp(q).unwrap_or(Ordering::Equal),
            (Token::Text(p), Token::Text(q)) => p.cmp(q),
            (Token::Num(_), Token::Text(_)) => Ordering::Less,
            (Token::Text(_), Token::Num(_)) => Ordering::Greater,
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ta.len().cmp(&tb.len()).then_with(|| a.cmp(b))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.0e}")
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn map(&self, v: f64, a: f64, b: f64) -> f64 {
        let (v, lo, hi) = if self.log {
            (v.log10(), self.lo.log10(), self.hi.log10())
        } else {
            (v, self.lo, self.hi)
        };
        a + (v - lo) / (hi - lo) * (b - a)
    }
}

pub fn render_svg(series: &[Series], spec: &PlotSpec) -> Result<String, CliError> {
    let (w, h) = (720.0, 480.0);
    let (left, right, top, bottom) = (80.0, 190.0, 50.0, 60.0);
    let (x0, x1, y0, y1) = (left, w - right, h - bottom, top);

    let xs = series.iter().flat_map(|s| s.x.iter().copied());
    let (mut xlo, mut xhi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if xlo == xhi {
        xlo -= 0.5;
        xhi += 0.5;
    }
    let x_axis = Axis { lo: xlo, hi: xhi, log: false };

    let upper = |s: &Series, j: usize| s.mean[j] + s.std[j];
    let y_axis = if spec.log_y {
        let positives: Vec<f64> = series.iter().flat_map(|s| s.mean.iter().copied()).filter(|v| *v > 0.0).collect();
        if positives.is_empty() {
            return Err(CliError::Plot("log-y needs at least one positive mean".into()));
        }
        let lo = positives.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = series
            .iter()
            .flat_map(|s| (0..s.x.len()).map(move |j| upper(s, j)))
            .fold(lo, f64::max);
        let lo = 10f64.powf(lo.log10().floor());
        let hi = 10f64.powf(hi.log10().ceil().max(lo.log10() + 1.0));
        Axis { lo, hi, log: true }
    } else {
        let hi = series
            .iter()
            .flat_map(|s| (0..s.x.len()).map(move |j| upper(s, j)))
            .fold(0.0, f64::max);
        Axis { lo: 0.0, hi: if hi > 0.0 { hi * 1.05 } else { 1.0 }, log: false }
    };
    let py = |v: f64| {
        let v = if y_axis.log { v.max(y_axis.lo) } else { v };
        y_axis.map(v, y0, y1)
    };
    let px = |v: f64| x_axis.map(v, x0, x1);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
        (x0 + x1) / 2.0,
        escape(&spec.title)
    );

    for t in nice_ticks(x_axis.lo, x_axis.hi, 6) {
        let x = px(t);
        let _ = writeln!(svg, r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="#000"/>"##, y0 + 5.0);
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, y0 + 20.0, tick_label(t));
    }
    let y_ticks: Vec<f64> = if y_axis.log {
        let (a, b) = (y_axis.lo.log10().round() as i32, y_axis.hi.log10().round() as i32);
        (a..=b).map(|e| 10f64.powi(e)).collect()
    } else {
        nice_ticks(y_axis.lo, y_axis.hi, 5)
    };
    for t in y_ticks {
        let y = py(t);
        let _ = writeln!(svg, r##"<line x1="{}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/>"##, x0 - 5.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 8.0, y + 4.0, tick_label(t));
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="#000"/>"##,
        x1 - x0,
        y0 - y1
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        h - 15.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
        (y0 + y1) / 2.0,
        escape(&spec.y_label)
    );

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut band = String::new();
        for j in 0..s.x.len() {
            let _ = write!(band, "{:.2},{:.2} ", px(s.x[j]), py(s.mean[j] + s.std[j]));
        }
        for j in (0..s.x.len()).rev() {
            let _ = write!(band, "{:.2},{:.2} ", px(s.x[j]), py(s.mean[j] - s.std[j]));
        }
        let _ = writeln!(svg, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.trim_end());
        let line: Vec<String> = (0..s.x.len())
            .map(|j| format!("{:.2},{:.2}", px(s.x[j]), py(s.mean[j])))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = top + 10.0 + 20.0 * k as f64;
        let lx = x1 + 15.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.name));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn legend_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads every input, then writes the SVG. Nothing is written when any
/// input is rejected.
pub fn emit_plot(spec: &PlotSpec) -> Result<(), CliError> {
    if spec.inputs.is_empty() {
        return Err(CliError::Usage("plot needs at least one input CSV".into()));
    }
    let mut series = spec
        .inputs
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Plot(format!("cannot read {}: {e}", p.display())))?;
            parse_series(&legend_name(p), &text)
        })
        .collect::<Result<Vec<_>, _>>()?;
    series.sort_by(|a, b| natural_cmp(&a.name, &b.name));
    let svg = render_svg(&series, spec)?;
    if let Some(parent) = spec.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Plot(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(&spec.output, svg)
        .map_err(|e| CliError::Plot(format!("cannot write {}: {e}", spec.output.display())))
}
