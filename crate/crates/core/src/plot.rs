//! Self-contained SVG line/bar charts from CSV files.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown plot kind `{0}`; expected line|bar")]
    UnknownKind(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("malformed csv: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Line,
    Bar,
}

impl FromStr for PlotKind {
    type Err = PlotError;

    fn from_str(s: &str) -> Result<Self, PlotError> {
        match s {
            "line" => Ok(PlotKind::Line),
            "bar" => Ok(PlotKind::Bar),
            other => Err(PlotError::UnknownKind(other.to_string())),
        }
    }
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f",
];
const W: f64 = 640.0;
const H: f64 = 440.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 30.0;
const MB: f64 = 60.0;

/// Parsed numeric table: x column plus named series.
pub struct Table {
    pub x_name: String,
    pub x: Vec<f64>,
    pub series: Vec<(String, Vec<f64>)>,
}

/// Read a CSV (hash comments allowed) selecting `x_col` and `y_cols`.
/// An empty `y_cols` selects every non-x column.
pub fn read_table(path: &Path, x_col: &str, y_cols: &[String]) -> Result<Table, PlotError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let x_idx = headers
        .iter()
        .position(|h| h == x_col)
        .ok_or_else(|| PlotError::MissingColumn(x_col.to_string()))?;
    let y_idx: Vec<(String, usize)> = if y_cols.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != x_idx)
            .map(|(i, h)| (h.clone(), i))
            .collect()
    } else {
        y_cols
            .iter()
            .map(|c| {
                headers
                    .iter()
                    .position(|h| h == c)
                    .map(|i| (c.clone(), i))
                    .ok_or_else(|| PlotError::MissingColumn(c.clone()))
            })
            .collect::<Result<_, _>>()?
    };
    let mut x = Vec::new();
    let mut series: Vec<(String, Vec<f64>)> =
        y_idx.iter().map(|(n, _)| (n.clone(), Vec::new())).collect();
    for rec in rdr.records() {
        let rec = rec?;
        let xv: f64 = rec
            .get(x_idx)
            .ok_or_else(|| PlotError::Malformed("short row".into()))?
            .parse()
            .map_err(|e| PlotError::Malformed(format!("x value: {e}")))?;
        x.push(xv);
        for ((_, idx), (_, vals)) in y_idx.iter().zip(series.iter_mut()) {
            let v: f64 = rec
                .get(*idx)
                .ok_or_else(|| PlotError::Malformed("short row".into()))?
                .parse()
                .unwrap_or(f64::NAN);
            vals.push(v);
        }
    }
    if x.is_empty() {
        return Err(PlotError::Malformed("no data rows".into()));
    }
    Ok(Table {
        x_name: x_col.to_string(),
        x,
        series,
    })
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    (0..=4).map(|i| lo + span * i as f64 / 4.0).collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

/// Render the table to a standalone SVG string.
pub fn render_svg(table: &Table, kind: PlotKind, y_label: &str) -> String {
    let finite: Vec<f64> = table
        .series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .collect();
    let (mut y_lo, mut y_hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !y_lo.is_finite() {
        y_lo = 0.0;
        y_hi = 1.0;
    }
    if y_lo > 0.0 && kind == PlotKind::Bar {
        y_lo = 0.0;
    }
    if (y_hi - y_lo).abs() < 1e-12 {
        y_hi = y_lo + 1.0;
    }
    let (x_lo, x_hi) = table
        .x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let x_span = (x_hi - x_lo).max(1e-12);
    let px = |x: f64| ML + (x - x_lo) / x_span * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y_lo) / (y_hi - y_lo) * (H - MT - MB);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    // Axes.
    let _ = writeln!(
        s,
        r#"<line x1="{ML}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        H - MB,
        W - MR
    );
    let _ = writeln!(
        s,
        r#"<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{0}" stroke="black"/>"#,
        H - MB
    );
    for t in nice_ticks(x_lo, x_hi) {
        let xp = px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{xp}" y1="{0}" x2="{xp}" y2="{1}" stroke="black"/><text x="{xp}" y="{2}" font-size="11" text-anchor="middle">{3}</text>"#,
            H - MB,
            H - MB + 5.0,
            H - MB + 18.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(y_lo, y_hi) {
        let yp = py(t);
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="{yp}" x2="{ML}" y2="{yp}" stroke="black"/><text x="{1}" y="{2}" font-size="11" text-anchor="end">{3}</text>"#,
            ML - 5.0,
            ML - 8.0,
            yp + 4.0,
            fmt_tick(t)
        );
    }
    // Axis labels (units live in the column names).
    let _ = writeln!(
        s,
        r#"<text x="{0}" y="{1}" font-size="13" text-anchor="middle">{2}</text>"#,
        (ML + W - MR) / 2.0,
        H - 15.0,
        table.x_name
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (MT + H - MB) / 2.0,
        y_label
    );

    match kind {
        PlotKind::Line => {
            for (si, (name, vals)) in table.series.iter().enumerate() {
                let color = PALETTE[si % PALETTE.len()];
                let pts: Vec<String> = table
                    .x
                    .iter()
                    .zip(vals)
                    .filter(|(_, v)| v.is_finite())
                    .map(|(&x, &v)| format!("{:.2},{:.2}", px(x), py(v)))
                    .collect();
                if pts.len() == 1 {
                    let xy: Vec<&str> = pts[0].split(',').collect();
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{}" cy="{}" r="4" fill="{color}"/>"#,
                        xy[0], xy[1]
                    );
                } else {
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                        pts.join(" ")
                    );
                }
                let _ = writeln!(
                    s,
                    r#"<rect x="{0}" y="{1}" width="12" height="4" fill="{color}"/><text x="{2}" y="{3}" font-size="11">{name}</text>"#,
                    W - MR - 150.0,
                    MT + 14.0 * si as f64,
                    W - MR - 134.0,
                    MT + 14.0 * si as f64 + 5.0
                );
            }
        }
        PlotKind::Bar => {
            let groups = table.x.len();
            let n_series = table.series.len();
            let group_w = (W - ML - MR) / groups as f64;
            let bar_w = (group_w * 0.8) / n_series as f64;
            for (si, (name, vals)) in table.series.iter().enumerate() {
                let color = PALETTE[si % PALETTE.len()];
                for (gi, &v) in vals.iter().enumerate() {
                    if !v.is_finite() {
                        continue;
                    }
                    let x0 = ML + gi as f64 * group_w + group_w * 0.1 + si as f64 * bar_w;
                    let y0 = py(v);
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x0:.2}" y="{y0:.2}" width="{bar_w:.2}" height="{:.2}" fill="{color}"/>"#,
                        (H - MB - y0).max(0.0)
                    );
                }
                let _ = writeln!(
                    s,
                    r#"<rect x="{0}" y="{1}" width="12" height="4" fill="{color}"/><text x="{2}" y="{3}" font-size="11">{name}</text>"#,
                    W - MR - 150.0,
                    MT + 14.0 * si as f64,
                    W - MR - 134.0,
                    MT + 14.0 * si as f64 + 5.0
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// CSV in, SVG out.
pub fn plot_csv(
    csv_path: &Path,
    kind: PlotKind,
    x_col: &str,
    y_cols: &[String],
    out_svg: &Path,
) -> Result<(), PlotError> {
    let table = read_table(csv_path, x_col, y_cols)?;
    let y_label = if table.series.len() == 1 {
        table.series[0].0.clone()
    } else {
        "value".to_string()
    };
    let svg = render_svg(&table, kind, &y_label);
    if let Some(parent) = out_svg.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out_svg, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn sample_csv(dir: &Path) -> std::path::PathBuf {
        let p = dir.join("data.csv");
        let mut f = std::fs::File::create(&p).unwrap();
        writeln!(f, "# config_hash=deadbeef").unwrap();
        writeln!(f, "density,prr_mappo,prr_ccg").unwrap();
        for (d, a, b) in [(20, 0.9, 0.8), (40, 0.88, 0.75), (60, 0.85, 0.7), (80, 0.8, 0.66), (100, 0.75, 0.6)] {
            writeln!(f, "{d},{a},{b}").unwrap();
        }
        p
    }

    #[test]
    fn two_series_two_polylines() {
        let dir = tempfile::tempdir().unwrap();
        let p = sample_csv(dir.path());
        let t = read_table(&p, "density", &[]).unwrap();
        let svg = render_svg(&t, PlotKind::Line, "prr");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("prr_mappo") && svg.contains("prr_ccg"));
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn single_point_renders_marker() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.csv");
        std::fs::write(&p, "x,y\n1.0,2.0\n").unwrap();
        let t = read_table(&p, "x", &[]).unwrap();
        let svg = render_svg(&t, PlotKind::Line, "y");
        assert!(svg.contains("<circle"));
    }

    #[test]
    fn missing_column_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = sample_csv(dir.path());
        match read_table(&p, "density", &["nope".to_string()]) {
            Err(PlotError::MissingColumn(c)) => assert_eq!(c, "nope"),
            other => panic!("expected missing column, got {:?}", other.is_ok()),
        }
        assert!(matches!(
            read_table(&p, "bogus", &[]),
            Err(PlotError::MissingColumn(_))
        ));
    }

    #[test]
    fn bar_chart_renders_rects() {
        let dir = tempfile::tempdir().unwrap();
        let p = sample_csv(dir.path());
        let t = read_table(&p, "density", &["prr_ccg".to_string()]).unwrap();
        let svg = render_svg(&t, PlotKind::Bar, "prr");
        assert!(svg.matches("<rect").count() >= 5);
    }

    #[test]
    fn plot_csv_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let p = sample_csv(dir.path());
        let out = dir.path().join("fig.svg");
        plot_csv(&p, PlotKind::Line, "density", &[], &out).unwrap();
        assert!(out.exists());
    }

    #[test]
    fn kind_parse() {
        assert!(matches!("line".parse(), Ok(PlotKind::Line)));
        assert!(matches!("bar".parse(), Ok(PlotKind::Bar)));
        assert!("pie".parse::<PlotKind>().is_err());
    }
}
