// SPDX-License-Identifier: Apache-2.0

//! Artifact writers: CSV for numbers, PGM for images, self-contained SVG for
//! plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::NoiseSweepGrid;
use crate::solver::Trajectory;

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

/// Writes points as CSV with columns `x0, x1, ...` and an optional `label`
/// column.
pub fn write_points_csv(path: &Path, points: &[Vec<f64>], labels: Option<&[usize]>) -> Result<()> {
    create_parent(path)?;
    let dim = points.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..dim).map(|d| format!("x{d}")).collect();
    if labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for (i, p) in points.iter().enumerate() {
        let mut rec: Vec<String> = p.iter().map(f64::to_string).collect();
        if let Some(ls) = labels {
            rec.push(ls[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Points read back from a CSV with a header. Columns named `x<d>` are
/// coordinates; a `label` column is returned separately when present.
pub fn read_points_csv(path: &Path) -> Result<(Vec<Vec<f64>>, Option<Vec<usize>>)> {
    let what = || path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingInput {
            path: path.to_path_buf(),
            hint: "samples file not found".into(),
        },
        _ => Error::format(what(), e.to_string()),
    })?;
    let header = r.headers().map_err(|e| Error::format(what(), e.to_string()))?.clone();
    let coords: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('x') && h[1..].parse::<usize>().is_ok())
        .map(|(i, _)| i)
        .collect();
    if coords.is_empty() {
        return Err(Error::format(what(), "no x0, x1, ... columns"));
    }
    let label_col = header.iter().position(|h| h == "label");
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(what(), e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let p = coords
            .iter()
            .map(|&i| {
                field(i)
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(what(), format!("row {}: bad number `{}`", line + 2, field(i))))
            })
            .collect::<Result<Vec<f64>>>()?;
        points.push(p);
        if let Some(c) = label_col {
            let l = field(c)
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::format(what(), format!("row {}: bad label `{}`", line + 2, field(c))))?;
            labels.push(l);
        }
    }
    if points.is_empty() {
        return Err(Error::Empty("samples file"));
    }
    Ok((points, label_col.map(|_| labels)))
}

/// One row per recorded state: `sample, label, lab_time, alg_time, x0, ...`.
/// Unconditional trajectories get an empty label.
pub fn write_trajectories_csv(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    create_parent(path)?;
    let dim = trajectories.first().map_or(0, |t| t.final_state.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample".to_string(), "label".into(), "lab_time".into(), "alg_time".into()];
    header.extend((0..dim).map(|d| format!("x{d}")));
    w.write_record(&header)?;
    for (i, t) in trajectories.iter().enumerate() {
        let label = t.label.map(|l| l.to_string()).unwrap_or_default();
        for ((lab, alg), s) in t.times.iter().zip(&t.alg_times).zip(&t.states) {
            let mut rec = vec![i.to_string(), label.clone(), lab.to_string(), alg.to_string()];
            rec.extend(s.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// State of each trajectory at the recorded lab time nearest `time`.
pub fn snapshot(trajectories: &[Trajectory], time: f64) -> Vec<Vec<f64>> {
    trajectories
        .iter()
        .filter_map(|t| {
            let k = t
                .times
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - time).abs().total_cmp(&(b.1 - time).abs()))?
                .0;
            Some(t.states[k].clone())
        })
        .collect()
}

/// Binary greyscale PGM of a row-major image with values in [-1, 1].
pub fn write_pgm(path: &Path, image: &[f64], side: usize) -> Result<()> {
    if image.len() != side * side {
        return Err(Error::Dimension {
            context: "pgm image",
            expected: side * side,
            got: image.len(),
        });
    }
    create_parent(path)?;
    let mut bytes = format!("P5\n{side} {side}\n255\n").into_bytes();
    bytes.extend(image.iter().map(|v| (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8));
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Images as CSV, one flattened image per row.
pub fn write_images_csv(path: &Path, images: &[Vec<f64>]) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for img in images {
        w.write_record(img.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Axis-aligned plotting window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Bounds {
    pub fn square(half: f64) -> Self {
        Self {
            lo: [-half, -half],
            hi: [half, half],
        }
    }
}

/// Scatter plot of 2-D point groups, one colour per group.
pub fn scatter_svg(path: &Path, title: &str, groups: &[(String, Vec<Vec<f64>>)], bounds: Bounds) -> Result<()> {
    let size = 480.0;
    let pad = 30.0;
    let span = size - 2.0 * pad;
    let px = |x: f64| pad + (x - bounds.lo[0]) / (bounds.hi[0] - bounds.lo[0]) * span;
    let py = |y: f64| size - pad - (y - bounds.lo[1]) / (bounds.hi[1] - bounds.lo[1]) * span;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="20" font-family="sans-serif" font-size="14">{}</text>"#,
        xml_escape(title)
    );
    for (g, (name, pts)) in groups.iter().enumerate() {
        let colour = PALETTE[g % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" font-family="sans-serif" font-size="12" fill="{colour}">{}</text>"#,
            size - pad - 60.0 * (groups.len() - g) as f64,
            xml_escape(name)
        );
        let _ = writeln!(s, r#"<g fill="{colour}" fill-opacity="0.5">"#);
        for p in pts.iter().filter(|p| p.len() >= 2) {
            if (bounds.lo[0]..=bounds.hi[0]).contains(&p[0]) && (bounds.lo[1]..=bounds.hi[1]).contains(&p[1]) {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5"/>"#, px(p[0]), py(p[1]));
            }
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    create_parent(path)?;
    std::fs::write(path, s)?;
    Ok(())
}

/// Heatmap of the mean KL per (write, read) cell. Failed cells are grey.
pub fn heatmap_svg(path: &Path, grid: &NoiseSweepGrid) -> Result<()> {
    let cell = 64.0;
    let left = 90.0;
    let top = 50.0;
    let (nw, nr) = (grid.write_sigmas.len(), grid.read_sigmas.len());
    let means: Vec<Vec<Option<f64>>> = grid
        .runs
        .iter()
        .map(|row| {
            row.iter()
                .map(|reps| {
                    let ok: Vec<f64> = reps.iter().flatten().copied().collect();
                    (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
                })
                .collect()
        })
        .collect();
    let vals: Vec<f64> = means.iter().flatten().flatten().copied().collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = left + cell * nr as f64 + 20.0;
    let height = top + cell * nw as f64 + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="10" y="20" font-family="sans-serif" font-size="14">mean KL, {:?} mode (rows: write level, columns: read level)</text>"#,
        grid.mode
    );
    for (w, row) in means.iter().enumerate() {
        let y = top + cell * w as f64;
        let _ = writeln!(
            s,
            r#"<text x="10" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            y + cell / 2.0,
            grid.write_sigmas[w]
        );
        for (r, m) in row.iter().enumerate() {
            let x = left + cell * r as f64;
            let (fill, label) = match m {
                Some(v) => {
                    let f = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
                    let c = (255.0 * (1.0 - f)).round() as u8;
                    (format!("rgb(255,{c},{c})"), format!("{v:.3}"))
                }
                None => ("#bbbbbb".into(), "fail".into()),
            };
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="black"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{label}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    for (r, v) in grid.read_sigmas.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">{v}</text>"#,
            left + cell * (r as f64 + 0.5),
            top + cell * nw as f64 + 20.0
        );
    }
    s.push_str("</svg>\n");
    create_parent(path)?;
    std::fs::write(path, s)?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
