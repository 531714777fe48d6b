//! SVG and CSV renderings of projections and term tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::terms::TermFrequencyTable;
use super::{AnalysisError, ProjectedPoint, HUMAN_CENTROID};
use crate::catalogue::Family;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 50.0;
const MARK_SIZE: f64 = 5.0;
const MIN_FONT: f64 = 10.0;
const MAX_FONT: f64 = 40.0;

pub fn family_color(f: Family) -> &'static str {
    match f {
        Family::Fresh => "#2a9d8f",
        Family::Floral => "#e76f51",
        Family::Oriental => "#e9c46a",
        Family::Woody => "#6d597a",
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn write_atomic(path: &Path, body: &[u8]) -> Result<(), AnalysisError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, body)?;
    Ok(())
}

/// Renders the scatter: human centroids as crosses, model points as dots,
/// coloured by family.
pub fn scatter_svg(points: &[ProjectedPoint]) -> String {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (sx, sy) = ((WIDTH - 2.0 * MARGIN) / span(x0, x1), (HEIGHT - 2.0 * MARGIN) / span(y0, y1));
    let px = |x: f64| MARGIN + (x - x0) * sx;
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) * sy;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, f) in Family::ALL.iter().enumerate() {
        let y = 20.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<g class="legend"><rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}" font-size="12">{:?}</text></g>"#,
            WIDTH - 110.0,
            y - 9.0,
            family_color(*f),
            WIDTH - 95.0,
            y,
            f
        );
    }
    for p in points {
        let (x, y) = (px(p.x), py(p.y));
        let color = family_color(p.family);
        let title = escape(&p.label);
        if p.source == HUMAN_CENTROID {
            let m = MARK_SIZE;
            let _ = writeln!(
                s,
                r#"<path class="mark centroid" d="M{:.3} {:.3}L{:.3} {:.3}M{:.3} {:.3}L{:.3} {:.3}" stroke="{color}" stroke-width="2"><title>{title}</title></path>"#,
                x - m,
                y - m,
                x + m,
                y + m,
                x - m,
                y + m,
                x + m,
                y - m
            );
        } else {
            let _ = writeln!(
                s,
                r#"<circle class="mark model" cx="{x:.3}" cy="{y:.3}" r="{:.1}" fill="{color}" fill-opacity="0.8"><title>{title}</title></circle>"#,
                MARK_SIZE - 1.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// 12 significant digits, round-trippable through `str::parse`.
pub fn format_coord(v: f64) -> String {
    format!("{v:.11e}")
}

pub fn scatter_csv(points: &[ProjectedPoint]) -> Result<String, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "source", "scent_id", "family", "x", "y"])?;
    for p in points {
        w.write_record([
            p.label.clone(),
            p.source.clone(),
            p.group.to_string(),
            format!("{:?}", p.family),
            format_coord(p.x),
            format_coord(p.y),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| AnalysisError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn export_scatter(
    points: &[ProjectedPoint],
    svg_path: impl AsRef<Path>,
    csv_path: impl AsRef<Path>,
) -> Result<(), AnalysisError> {
    write_atomic(svg_path.as_ref(), scatter_svg(points).as_bytes())?;
    write_atomic(csv_path.as_ref(), scatter_csv(points)?.as_bytes())
}

/// Term list with font size affine in count.
pub fn frequencies_svg(table: &TermFrequencyTable) -> String {
    let line = MAX_FONT * 1.2;
    let height = MARGIN + line * table.terms.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    );
    let lo = table.terms.iter().map(|t| t.1).min().unwrap_or(0) as f64;
    let hi = table.terms.iter().map(|t| t.1).max().unwrap_or(0) as f64;
    let mut y = MARGIN / 2.0;
    for (term, count) in &table.terms {
        let size = if hi > lo {
            MIN_FONT + (MAX_FONT - MIN_FONT) * (*count as f64 - lo) / (hi - lo)
        } else {
            MAX_FONT
        };
        y += size * 1.2;
        let _ = writeln!(
            s,
            r#"<text class="term" x="{MARGIN}" y="{y:.2}" font-size="{size:.2}" data-count="{count}">{}</text>"#,
            escape(term)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn frequencies_csv(table: &TermFrequencyTable) -> Result<String, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["term", "count"])?;
    for (term, count) in &table.terms {
        w.write_record([term.as_str(), &count.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| AnalysisError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn export_frequencies(
    table: &TermFrequencyTable,
    svg_path: impl AsRef<Path>,
    csv_path: impl AsRef<Path>,
) -> Result<(), AnalysisError> {
    write_atomic(svg_path.as_ref(), frequencies_svg(table).as_bytes())?;
    write_atomic(csv_path.as_ref(), frequencies_csv(table)?.as_bytes())
}
