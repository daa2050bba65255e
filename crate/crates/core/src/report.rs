//! Result persistence: the records CSV, the JSON run summary, and a
//! self-contained SVG log-log plot.
//!
//! Floats are written with the shortest round-trip representation, so an
//! export/import cycle reproduces records bit for bit. The only
//! non-deterministic output field is the summary's `generated_unix_ms`
//! timestamp (and the per-record wall times); byte-identity comparisons
//! exclude exactly those.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lab::{aggregate_errors, ContractionRecord, ErrField, RateFit};

pub const CSV_HEADER: [&str; 8] = [
    "n",
    "replicate",
    "alpha_hat",
    "err_u",
    "err_m",
    "posterior_trace",
    "tail_mass",
    "wall_time_ms",
];

/// Writes records as CSV in the stable column order.
pub fn write_records_csv(records: &[ContractionRecord], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record(CSV_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for r in records {
        writer
            .write_record(&[
                r.n.to_string(),
                r.replicate.to_string(),
                r.alpha_hat.to_string(),
                r.err_u.to_string(),
                r.err_m.to_string(),
                r.posterior_trace.to_string(),
                r.tail_mass.to_string(),
                r.wall_time_ms.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a records CSV back; inverse of [`write_records_csv`].
pub fn read_records_csv(path: &Path) -> Result<Vec<ContractionRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::format(
            path,
            format!("unexpected CSV header {headers:?}"),
        ));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let field = |idx: usize| -> Result<f64> {
            row.get(idx)
                .ok_or_else(|| Error::format(path, format!("missing column {idx}")))?
                .parse::<f64>()
                .map_err(|e| Error::format(path, format!("column {idx}: {e}")))
        };
        records.push(ContractionRecord {
            n: field(0)?,
            replicate: row
                .get(1)
                .ok_or_else(|| Error::format(path, "missing replicate column"))?
                .parse::<usize>()
                .map_err(|e| Error::format(path, format!("replicate: {e}")))?,
            alpha_hat: field(2)?,
            err_u: field(3)?,
            err_m: field(4)?,
            posterior_trace: field(5)?,
            tail_mass: field(6)?,
            wall_time_ms: field(7)?,
        });
    }
    Ok(records)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

/// Machine identification stamped into every summary.
#[derive(Debug, Clone, Serialize)]
pub struct EnvironmentStamp {
    pub package_version: &'static str,
    pub os: &'static str,
    pub arch: &'static str,
    pub threads: usize,
}

impl EnvironmentStamp {
    pub fn collect(threads: usize) -> Self {
        Self {
            package_version: env!("CARGO_PKG_VERSION"),
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            threads,
        }
    }
}

/// The JSON run summary: command, echoed effective configuration, fits and
/// counters, the environment stamp, and the timestamp field.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub command: String,
    pub effective_config: serde_json::Value,
    pub environment: EnvironmentStamp,
    pub record_count: usize,
    pub fits: Vec<RateFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
    /// Wall-clock stamp; excluded from byte-identity comparisons.
    pub generated_unix_ms: u128,
}

impl RunSummary {
    pub fn new(
        command: impl Into<String>,
        effective_config: serde_json::Value,
        threads: usize,
    ) -> Self {
        Self {
            command: command.into(),
            effective_config,
            environment: EnvironmentStamp::collect(threads),
            record_count: 0,
            fits: Vec::new(),
            extra: None,
            generated_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

// ---------------------------------------------------------------------------
// SVG rate plot
// ---------------------------------------------------------------------------

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_B: f64 = 50.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_R: f64 = 25.0;

struct Axes {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Axes {
    fn x(&self, v: f64) -> f64 {
        MARGIN_L + (v - self.x_min) / (self.x_max - self.x_min) * (PLOT_W - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        PLOT_H - MARGIN_B
            - (v - self.y_min) / (self.y_max - self.y_min) * (PLOT_H - MARGIN_T - MARGIN_B)
    }
}

/// Renders the log-log plot of mean error against `n` with a guide line of
/// the target slope anchored at the last mean point. Self-contained SVG, no
/// external assets.
pub fn render_report(
    records: &[ContractionRecord],
    fits: &[RateFit],
    title: &str,
    path: &Path,
) -> Result<()> {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
         viewBox=\"0 0 {PLOT_W} {PLOT_H}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"18\" text-anchor=\"middle\">{}</text>\n",
        PLOT_W / 2.0,
        xml_escape(title)
    ));

    let field = fits.first().map(|f| f.field).unwrap_or(ErrField::ErrU);
    let means = aggregate_errors(records, field);
    if means.is_empty() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">no records</text>\n</svg>\n",
            PLOT_W / 2.0,
            PLOT_H / 2.0
        ));
        return fs::write(path, svg).map_err(|e| Error::io(path, e));
    }

    let xs: Vec<f64> = means.iter().map(|(n, _, _)| n.ln()).collect();
    let ys: Vec<f64> = means
        .iter()
        .map(|(_, mean, _)| mean.max(f64::MIN_POSITIVE).ln())
        .collect();
    let pad = 0.5;
    let axes = Axes {
        x_min: xs.iter().cloned().fold(f64::INFINITY, f64::min) - pad,
        x_max: xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + pad,
        y_min: ys.iter().cloned().fold(f64::INFINITY, f64::min) - pad,
        y_max: ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + pad,
    };

    // frame and tick labels (natural-log axes labelled in powers of ten)
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        MARGIN_L,
        MARGIN_T,
        PLOT_W - MARGIN_L - MARGIN_R,
        PLOT_H - MARGIN_T - MARGIN_B
    ));
    let ln10 = std::f64::consts::LN_10;
    let mut decade = (axes.x_min / ln10).ceil() as i64;
    while (decade as f64) * ln10 <= axes.x_max {
        let x = axes.x(decade as f64 * ln10);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"#cccccc\"/>\n",
            MARGIN_T,
            PLOT_H - MARGIN_B
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">1e{decade}</text>\n",
            PLOT_H - MARGIN_B + 18.0
        ));
        decade += 1;
    }
    let mut y_decade = (axes.y_min / ln10).ceil() as i64;
    while (y_decade as f64) * ln10 <= axes.y_max {
        let y = axes.y(y_decade as f64 * ln10);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#cccccc\"/>\n",
            MARGIN_L,
            PLOT_W - MARGIN_R
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\">1e{y_decade}</text>\n",
            MARGIN_L - 6.0
        ));
        y_decade += 1;
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">n</text>\n",
        (MARGIN_L + PLOT_W - MARGIN_R) / 2.0,
        PLOT_H - 10.0
    ));
    let err_label = match field {
        ErrField::ErrU => "mean err_u",
        ErrField::ErrM => "mean err_m",
    };
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_T + PLOT_H - MARGIN_B) / 2.0,
        (MARGIN_T + PLOT_H - MARGIN_B) / 2.0,
        err_label
    ));

    // raw replicate scatter
    for record in records {
        let value = match field {
            ErrField::ErrU => record.err_u,
            ErrField::ErrM => record.err_m,
        };
        let cx = axes.x(record.n.ln());
        let cy = axes.y(value.max(f64::MIN_POSITIVE).ln());
        svg.push_str(&format!(
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"2\" fill=\"#9ecae1\"/>\n"
        ));
    }

    // mean polyline
    let polyline: Vec<String> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| format!("{:.2},{:.2}", axes.x(*x), axes.y(*y)))
        .collect();
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#08519c\" stroke-width=\"2\"/>\n",
        polyline.join(" ")
    ));

    // guide line with the target slope through the last mean point
    if let Some(fit) = fits.first() {
        let (x_end, y_end) = (*xs.last().expect("non-empty"), *ys.last().expect("non-empty"));
        let x_start = xs[0];
        let y_start = y_end + fit.target_exponent * (x_start - x_end);
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
             stroke=\"#e6550d\" stroke-dasharray=\"6 4\" stroke-width=\"1.5\"/>\n",
            axes.x(x_start),
            axes.y(y_start),
            axes.x(x_end),
            axes.y(y_end)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">target slope {:.4} (illustrative constants), fitted {:.4}</text>\n",
            MARGIN_L + 8.0,
            MARGIN_T + 16.0,
            fit.target_exponent,
            fit.slope
        ));
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
