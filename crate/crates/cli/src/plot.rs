//! Minimal SVG line charts of utilization and system power.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const WIDTH: f64 = 900.0;
const PANEL_HEIGHT: f64 = 260.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_TOP: f64 = 30.0;
const GAP: f64 = 50.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Read column `col` of a headered CSV against its first column.
fn read_column(path: &Path, col: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let header = rdr.headers().map_err(|e| format!("{}: {e}", path.display()))?;
    let idx = header
        .iter()
        .position(|h| h == col)
        .ok_or_else(|| format!("{}: no column `{col}`", path.display()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| format!("{}: bad number `{s}`", path.display()))
        };
        out.push((parse(&rec[0])?, parse(&rec[idx])?));
    }
    Ok(out)
}

fn label_of(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Load utilization (percent) and facility power (kW) series, one per
/// directory, sorted by directory name.
pub fn load_series(dirs: &[PathBuf]) -> Result<(Vec<Series>, Vec<Series>), String> {
    if dirs.is_empty() {
        return Err("no run directories given".into());
    }
    let mut dirs = dirs.to_vec();
    dirs.sort_by_key(|d| label_of(d));
    let mut util = Vec::new();
    let mut power = Vec::new();
    for dir in &dirs {
        let label = label_of(dir);
        let u = read_column(&dir.join("util.csv"), "utilization")?;
        let p = read_column(&dir.join("power_history.csv"), "facility_w")?;
        util.push(Series {
            label: label.clone(),
            points: u.into_iter().map(|(t, v)| (t, v * 100.0)).collect(),
        });
        power.push(Series {
            label,
            points: p.into_iter().map(|(t, v)| (t, v / 1000.0)).collect(),
        });
    }
    Ok((util, power))
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in series.iter().flat_map(|s| &s.points) {
        b = (b.0.min(*x), b.1.max(*x), b.2.min(*y), b.3.max(*y));
    }
    if !b.0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if b.1 <= b.0 {
        b.1 = b.0 + 1.0;
    }
    if b.3 <= b.2 {
        b = (b.0, b.1, b.2 - 0.5, b.3 + 0.5);
    }
    b
}

fn panel(svg: &mut String, series: &[Series], top: f64, title: &str, y_label: &str) {
    let (x0, x1, y0, y1) = bounds(series);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| top + PANEL_HEIGHT - (y - y0) / (y1 - y0) * PANEL_HEIGHT;
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_LEFT}" y="{top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN_LEFT}" y="{:.1}" font-size="14">{title}</text>"#,
        top - 8.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{:.1}" font-size="12" transform="rotate(-90 15 {:.1})">{y_label}</text>"#,
        top + PANEL_HEIGHT / 2.0,
        top + PANEL_HEIGHT / 2.0
    );
    for (v, anchor_y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 5.0,
            anchor_y + 4.0,
            fmt_tick(v)
        );
    }
    for (v, x) in [(x0, sx(x0)), (x1, sx(x1))] {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            top + PANEL_HEIGHT + 15.0,
            fmt_tick(v)
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 15.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 10.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{:.1}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Two stacked panels: utilization in percent, then system power in kW.
pub fn render_svg(util: &[Series], power: &[Series]) -> String {
    let height = MARGIN_TOP + 2.0 * PANEL_HEIGHT + GAP + 40.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    panel(&mut svg, util, MARGIN_TOP, "Utilization", "%");
    panel(&mut svg, power, MARGIN_TOP + PANEL_HEIGHT + GAP, "System power", "kW");
    svg.push_str("</svg>\n");
    svg
}

pub fn plot_dirs(dirs: &[PathBuf], out: &Path) -> Result<(), String> {
    let (util, power) = load_series(dirs)?;
    fs::write(out, render_svg(&util, &power)).map_err(|e| format!("{}: {e}", out.display()))
}
