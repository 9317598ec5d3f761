//! Run outputs: accuracy CSVs, JSON-lines logs and SVG line charts.
//!
//! CSV files start with one `#` comment line carrying the producing method
//! and the SHA-256 of the run configuration, followed by a header row.
//! Task indices are 1-based.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::runner::{AccuracyMatrix, LogRecord};

/// `after_task,eval_task,accuracy`, one row per lower-triangular entry.
pub fn accuracy_csv(matrix: &AccuracyMatrix, comment: &str) -> String {
    let mut out = format!("# {comment}\nafter_task,eval_task,accuracy\n");
    for t in 0..matrix.num_tasks() {
        for (b, acc) in matrix.row(t).into_iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", t + 1, b + 1, acc);
        }
    }
    out
}

/// `after_task,accuracy`: the aggregate `A_t` per stage.
pub fn curve_csv(matrix: &AccuracyMatrix, comment: &str) -> String {
    let mut out = format!("# {comment}\nafter_task,accuracy\n");
    for (t, a) in matrix.curve().into_iter().enumerate() {
        let _ = writeln!(out, "{},{}", t + 1, a);
    }
    out
}

pub fn log_jsonl(log: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r).expect("log records serialize"));
        out.push('\n');
    }
    out
}

/// Parses a `curve.csv` back into `A_t` values (comment lines skipped).
pub fn parse_curve_csv(text: &str) -> Result<Vec<f64>, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let a = rec
            .get(1)
            .ok_or("missing accuracy column")?
            .parse::<f64>()
            .map_err(|e| e.to_string())?;
        out.push(a);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    /// `(x, y)` points in drawing order.
    pub points: Vec<(f64, f64)>,
    /// Optional symmetric error bar per point.
    #[serde(default)]
    pub errors: Option<Vec<f64>>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// A line chart with y fixed to [0, 1] and integer x ticks.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (64.0, 180.0, 40.0, 56.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (mut x_min, mut x_max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !x_min.is_finite() {
        (x_min, x_max) = (1.0, 1.0);
    }
    if x_max - x_min < 1e-12 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    let sx = |x: f64| left + (x - x_min) / (x_max - x_min) * pw;
    let sy = |y: f64| top + (1.0 - y.clamp(0.0, 1.0)) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let py = sy(y);
        let _ = writeln!(
            out,
            r##"<line x1="{left}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{y:.1}</text>"##,
            left + pw,
            left - 6.0,
            py + 4.0
        );
    }
    let first = x_min.ceil() as i64;
    let last = x_max.floor() as i64;
    for x in first..=last {
        let px = sx(x as f64);
        let _ = writeln!(
            out,
            r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#444"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{x}</text>"##,
            top + ph,
            top + ph + 4.0,
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        out,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let Some(errs) = &s.errors {
            for (&(x, y), e) in s.points.iter().zip(errs) {
                let _ = writeln!(
                    out,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}"/>"#,
                    sx(x),
                    sy(y - e),
                    sx(x),
                    sy(y + e)
                );
            }
        }
        let path: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = top + 10.0 + 18.0 * k as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Sample mean and (n-1) standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{EvalCount, Protocol};

    fn matrix() -> AccuracyMatrix {
        let mut m = AccuracyMatrix::new(Protocol::ClassIncremental);
        m.push_row(vec![EvalCount { correct: 3, total: 4 }]);
        m.push_row(vec![EvalCount { correct: 1, total: 4 }, EvalCount { correct: 4, total: 4 }]);
        m
    }

    #[test]
    fn csv_layouts() {
        let m = matrix();
        let acc = accuracy_csv(&m, "method=gcl");
        assert_eq!(
            acc,
            "# method=gcl\nafter_task,eval_task,accuracy\n1,1,0.75\n2,1,0.25\n2,2,1\n"
        );
        let curve = curve_csv(&m, "x");
        assert_eq!(curve, "# x\nafter_task,accuracy\n1,0.75\n2,0.625\n");
        assert_eq!(parse_curve_csv(&curve).unwrap(), vec![0.75, 0.625]);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let s = svg_line_chart(
            "A <t>",
            "task",
            "accuracy",
            &[Series {
                name: "gdro".into(),
                points: vec![(1.0, 0.5), (2.0, 0.7)],
                errors: Some(vec![0.1, 0.0]),
            }],
        );
        assert!(s.starts_with("<svg"));
        assert!(s.trim_end().ends_with("</svg>"));
        assert!(s.contains("A &lt;t&gt;"));
        assert_eq!(s.matches("<polyline").count(), 1);
    }

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
