//! Trajectory CSVs, log-scale SVG charts, and atomic file writes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use perfopt::TrajectoryRecord;

use crate::error::{HarnessError, Result};

pub const CSV_HEADER: [&str; 9] = [
    "iteration",
    "epoch",
    "inner_k",
    "risk",
    "grad_norm_sq",
    "step_size",
    "ifo_optimizer",
    "ifo_metrics",
    "wall_ms",
];

/// Shortest round-trip form; `{:e}` parses back to the same bits.
fn real(v: f64) -> String {
    format!("{v:e}")
}

fn opt_real(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

pub fn csv_bytes(records: &[TrajectoryRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let data_err = |e: csv::Error| HarnessError::Data(e.to_string());
    w.write_record(CSV_HEADER).map_err(data_err)?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            r.epoch.to_string(),
            r.inner_k.to_string(),
            opt_real(r.risk),
            opt_real(r.grad_norm_sq),
            real(r.step_size),
            r.ifo_optimizer.to_string(),
            r.ifo_metrics.to_string(),
            opt_real(r.wall_ms),
        ])
        .map_err(data_err)?;
    }
    w.into_inner().map_err(|e| HarnessError::Data(e.to_string()))
}

/// Parses a trajectory CSV written by [`csv_bytes`].
pub fn read_csv(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let bad = |what: String| HarnessError::Data(format!("{}: {what}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?;
    if headers.iter().ne(CSV_HEADER) {
        return Err(bad(format!("unexpected header {headers:?}")));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize| {
            field(i)
                .parse::<u64>()
                .map_err(|_| bad(format!("row {}: `{}` in {}", row + 2, field(i), CSV_HEADER[i])))
        };
        let opt = |i: usize| -> Result<Option<f64>> {
            match field(i) {
                "" => Ok(None),
                s => s
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| bad(format!("row {}: `{s}` in {}", row + 2, CSV_HEADER[i]))),
            }
        };
        out.push(TrajectoryRecord {
            iteration: int(0)? as usize,
            epoch: int(1)? as usize,
            inner_k: int(2)? as usize,
            risk: opt(3)?,
            grad_norm_sq: opt(4)?,
            step_size: opt(5)?.ok_or_else(|| bad(format!("row {}: empty step_size", row + 2)))?,
            ifo_optimizer: int(6)?,
            ifo_metrics: int(7)?,
            wall_ms: opt(8)?,
        });
    }
    Ok(out)
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = std::fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    f.sync_all().map_err(|e| HarnessError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 30.0, 50.0); // left, right, top, bottom
const MAX_POINTS: usize = 2000;

/// Line chart of `grad_norm_sq` and `risk` against iteration on a log10
/// y-axis. Nonpositive values are dropped.
pub fn render_svg(records: &[TrajectoryRecord], title: &str) -> String {
    let grad: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.grad_norm_sq.filter(|v| *v > 0.0).map(|v| (r.iteration as f64, v.log10())))
        .collect();
    let risk: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.risk.filter(|v| *v > 0.0).map(|v| (r.iteration as f64, v.log10())))
        .collect();

    let (l, r, t, b) = MARGIN;
    let (pw, ph) = (WIDTH - l - r, HEIGHT - t - b);
    let x_max = records.last().map_or(1.0, |r| r.iteration.max(1) as f64);
    let ys = grad.iter().chain(&risk).map(|p| p.1);
    let (mut y_lo, mut y_hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (-1.0, 0.0);
    }
    y_lo = y_lo.floor();
    y_hi = y_hi.ceil().max(y_lo + 1.0);
    let sx = |x: f64| l + pw * x / x_max;
    let sy = |y: f64| t + ph * (y_hi - y) / (y_hi - y_lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(s, r##"<rect x="{l}" y="{t}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##);

    let step = ((y_hi - y_lo) / 10.0).ceil().max(1.0);
    let mut d = y_lo;
    while d <= y_hi {
        let y = sy(d);
        let _ = writeln!(s, r##"<line x1="{l}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, l + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{}</text>"#, l - 6.0, y + 4.0, d as i64);
        d += step;
    }
    for i in 0..=4 {
        let xv = x_max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            t + ph + 16.0,
            xv.round() as u64
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">iteration</text>"#, l + pw / 2.0, HEIGHT - 10.0);

    for (series, colour, label, row) in [(&grad, "#1f77b4", "grad_norm_sq", 0.0), (&risk, "#d62728", "risk", 1.0)] {
        if !series.is_empty() {
            let stride = series.len().div_ceil(MAX_POINTS);
            let mut pts = String::new();
            for (i, p) in series.iter().enumerate() {
                if i % stride == 0 || i + 1 == series.len() {
                    let _ = write!(pts, "{:.1},{:.1} ", sx(p.0), sy(p.1));
                }
            }
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{}"/>"#, pts.trim_end());
        }
        let ly = t + 14.0 + 16.0 * row;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{label}</text>"#,
            l + pw - 120.0,
            l + pw - 100.0,
            l + pw - 94.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize, g: Option<f64>) -> TrajectoryRecord {
        TrajectoryRecord {
            iteration: i,
            epoch: i / 3,
            inner_k: i % 3,
            risk: g.map(|v| v * 2.0),
            grad_norm_sq: g,
            step_size: 0.1 + 1e-17 * i as f64,
            ifo_optimizer: 10 * i as u64,
            ifo_metrics: 7,
            wall_ms: None,
        }
    }

    #[test]
    fn csv_round_trips_bit_for_bit() {
        let records: Vec<_> = (0..20)
            .map(|i| rec(i, (i % 4 == 0).then(|| 1.0 / 3.0 / (i + 1) as f64)))
            .chain([rec(20, Some(f64::MIN_POSITIVE)), rec(21, Some(1e300))])
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_atomic(&path, &csv_bytes(&records).unwrap()).unwrap();
        assert_eq!(read_csv(&path).unwrap(), records);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("iteration,epoch,inner_k,risk,grad_norm_sq,step_size,ifo_optimizer,ifo_metrics,wall_ms\n"));
        assert!(text.lines().nth(2).unwrap().contains(",,"));
    }

    #[test]
    fn read_rejects_foreign_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_csv(&path).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_atomic(&path, b"{}").unwrap();
        write_atomic(&path, b"{\"a\":1}").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "{\"a\":1}");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn svg_has_both_series() {
        let records: Vec<_> = (0..50).map(|i| rec(i, Some(1.0 / (i + 1) as f64))).collect();
        let svg = render_svg(&records, "a < b");
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a &lt; b"));
        // empty trajectories still render a frame
        assert!(render_svg(&[], "").contains("</svg>"));
    }
}
