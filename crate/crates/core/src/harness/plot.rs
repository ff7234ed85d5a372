use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{read_records, ResultRecord};
use crate::error::{self, Result};
use crate::eval::percentile;

const METRICS: [&str; 3] = ["train_loss", "test_nmse", "planner_reward"];
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

/// Member-averaged checkpoint rows of one curve file:
/// `update -> [train_loss, test_nmse, planner_reward]`.
pub fn read_curve(path: &Path) -> Result<BTreeMap<usize, [Option<f64>; 3]>> {
    let text = fs::read_to_string(path)?;
    let mut sums: BTreeMap<usize, [(f64, usize); 3]> = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(error::format(format!("{}:{}: expected 5 columns", path.display(), i + 1)));
        }
        let update: usize = f[0].parse().map_err(|_| error::format(format!("{}:{}: bad update", path.display(), i + 1)))?;
        let slot = sums.entry(update).or_insert([(0.0, 0); 3]);
        for (m, cell) in f[2..].iter().enumerate() {
            if let Ok(v) = cell.parse::<f64>() {
                if v.is_finite() {
                    slot[m].0 += v;
                    slot[m].1 += 1;
                }
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|(u, s)| (u, s.map(|(sum, n)| (n > 0).then(|| sum / n as f64))))
        .collect())
}

#[derive(Clone, Debug)]
pub struct PlotSummary {
    /// `None` when there was nothing to plot.
    pub csv: Option<PathBuf>,
    pub rows: usize,
    pub svgs: Vec<PathBuf>,
}

struct Band {
    label: String,
    points: Vec<(f64, f64, f64, f64)>,
}

/// Gathers every record's learning curve into one CSV and draws one SVG per
/// metric: per config, the mean over seeds with a 20–80 percentile band.
pub fn emit_curves(out: &Path) -> Result<PlotSummary> {
    let records = read_records(&out.join("records.jsonl"))?;
    let mut latest: BTreeMap<(String, u64), ResultRecord> = BTreeMap::new();
    for r in records {
        if r.curve_path.is_some() {
            latest.insert((r.config_hash.clone(), r.seed), r);
        }
    }
    if latest.is_empty() {
        log::info!("no learning curves under {}; nothing to plot", out.display());
        return Ok(PlotSummary { csv: None, rows: 0, svgs: Vec::new() });
    }
    let dir = out.join("plots");
    fs::create_dir_all(&dir)?;
    let mut csv = String::from("config_hash,seed,update_idx,train_loss,test_nmse,planner_reward\n");
    let mut rows = 0;
    // metric -> config -> update -> values over seeds
    let mut series: Vec<BTreeMap<String, BTreeMap<usize, Vec<f64>>>> = vec![BTreeMap::new(); 3];
    for ((hash, seed), r) in &latest {
        let path = PathBuf::from(r.curve_path.as_ref().expect("filtered"));
        let curve = match read_curve(&path) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("skipping curve {}: {e}", path.display());
                continue;
            }
        };
        for (u, vals) in curve {
            let cell = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            let _ = writeln!(csv, "{hash},{seed},{u},{},{},{}", cell(vals[0]), cell(vals[1]), cell(vals[2]));
            rows += 1;
            for (m, v) in vals.iter().enumerate() {
                if let Some(v) = v {
                    series[m].entry(hash.clone()).or_default().entry(u).or_default().push(*v);
                }
            }
        }
    }
    let csv_path = dir.join("curves.csv");
    fs::write(&csv_path, csv)?;
    let mut svgs = Vec::new();
    for (m, name) in METRICS.iter().enumerate() {
        if series[m].is_empty() {
            continue;
        }
        let bands: Vec<Band> = series[m]
            .iter()
            .map(|(hash, by_update)| Band {
                label: hash.clone(),
                points: by_update
                    .iter()
                    .map(|(u, v)| {
                        let mean = v.iter().sum::<f64>() / v.len() as f64;
                        (*u as f64, mean, percentile(v, 20.0), percentile(v, 80.0))
                    })
                    .collect(),
            })
            .collect();
        let path = dir.join(format!("{name}.svg"));
        fs::write(&path, render_svg(name, &bands))?;
        svgs.push(path);
    }
    Ok(PlotSummary { csv: Some(csv_path), rows, svgs })
}

fn render_svg(title: &str, bands: &[Band]) -> String {
    let all = || bands.iter().flat_map(|b| b.points.iter());
    let log_y = all().all(|p| p.2 > 0.0);
    let ty = |v: f64| if log_y { v.log10() } else { v };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in all() {
        x0 = x0.min(p.0);
        x1 = x1.max(p.0);
        y0 = y0.min(ty(p.2).min(ty(p.1)));
        y1 = y1.max(ty(p.3).max(ty(p.1)));
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (ty(y) - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}{}</text>"#,
        WIDTH / 2.0,
        if log_y { " (log scale)" } else { "" }
    );
    let _ = writeln!(
        s,
        r#"<path d="M{MARGIN},{} H{} M{MARGIN},{} V{}" stroke="black" fill="none"/>"#,
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN,
        MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">update</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{0}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 15 {0})">{title}</text>"#,
        HEIGHT / 2.0
    );
    let unty = |v: f64| if log_y { 10f64.powf(v) } else { v };
    for (x, y, anchor, v) in [
        (MARGIN, HEIGHT - MARGIN + 15.0, "middle", x0),
        (WIDTH - MARGIN, HEIGHT - MARGIN + 15.0, "middle", x1),
        (MARGIN - 5.0, HEIGHT - MARGIN, "end", unty(y0)),
        (MARGIN - 5.0, MARGIN, "end", unty(y1)),
    ] {
        let v = if v == 0.0 || (1e-2..1e4).contains(&v.abs()) { format!("{v:.3}") } else { format!("{v:.2e}") };
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" font-size="10">{v}</text>"#
        );
    }
    for (i, b) in bands.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut band = String::new();
        for (k, p) in b.points.iter().enumerate() {
            let _ = write!(band, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, sx(p.0), sy(p.3));
        }
        for p in b.points.iter().rev() {
            let _ = write!(band, "L{:.2},{:.2} ", sx(p.0), sy(p.2));
        }
        let _ = writeln!(s, r#"<path d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band);
        let mut line = String::new();
        for (k, p) in b.points.iter().enumerate() {
            let _ = write!(line, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, sx(p.0), sy(p.1));
        }
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.trim_end());
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="11" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 120.0,
            MARGIN + 14.0 * i as f64,
            b.label
        );
    }
    s.push_str("</svg>\n");
    s
}
