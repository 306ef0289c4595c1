//! Long-format CSV, metadata JSON and quick-look SVG.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CSV_COLUMNS: [&str; 6] = ["n_spins", "tau_s", "phi_rad", "observable", "value", "stderr"];

/// One output row. Spectrum rows leave `phi_rad` empty and name the order in
/// `observable` (`I_2`, `A_-4`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub n_spins: usize,
    pub tau_s: Option<f64>,
    pub phi_rad: Option<f64>,
    pub observable: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

impl Row {
    pub fn at(n_spins: usize, tau: f64, phi: f64, observable: impl Into<String>, value: f64) -> Self {
        Self {
            n_spins,
            tau_s: Some(tau),
            phi_rad: Some(phi),
            observable: observable.into(),
            value,
            stderr: None,
        }
    }

    pub fn scalar(n_spins: usize, tau: Option<f64>, observable: impl Into<String>, value: f64) -> Self {
        Self {
            n_spins,
            tau_s: tau,
            phi_rad: None,
            observable: observable.into(),
            value,
            stderr: None,
        }
    }

    pub fn with_stderr(mut self, s: f64) -> Self {
        self.stderr = Some(s);
        self
    }
}

pub fn write_csv<W: Write>(w: W, rows: &[Row]) -> Result<(), CliError> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(CSV_COLUMNS).map_err(io)?;
    for r in rows {
        wr.serialize(r).map_err(io)?;
    }
    wr.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<Row>, CliError> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers().map_err(io)?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(CliError::Schema(format!("unexpected CSV header {headers:?}")));
    }
    rd.deserialize().map(|r| r.map_err(io)).collect()
}

fn io(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

/// Metadata written next to every CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub name: String,
    pub version: String,
    pub status: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub workers: usize,
    pub wall_clock_s: f64,
    pub rows: usize,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Line plots: value against `phi` per arm time for sweep rows, and against
/// `tau` per observable for spectrum and scalar rows.
pub fn svg(rows: &[Row], title: &str) -> String {
    let mut sweeps: BTreeMap<String, BTreeMap<u64, Vec<(f64, f64)>>> = BTreeMap::new();
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        match (r.phi_rad, r.tau_s) {
            (Some(phi), Some(tau)) => sweeps
                .entry(r.observable.clone())
                .or_default()
                .entry(tau.to_bits())
                .or_default()
                .push((phi, r.value)),
            (None, Some(tau)) => {
                // keep spectra readable: even orders up to 10 and non-spectral scalars
                if let Some(m) = spectral_order(&r.observable) {
                    if m < 0 || m % 2 != 0 || m > 10 {
                        continue;
                    }
                }
                series.entry(r.observable.clone()).or_default().push((tau, r.value));
            }
            _ => {}
        }
    }
    let mut panels: Vec<(String, Vec<Line>)> = Vec::new();
    for (obs, per_tau) in sweeps {
        let lines = per_tau
            .into_iter()
            .map(|(bits, pts)| (format!("{:.3} ms", f64::from_bits(bits) * 1e3), pts))
            .collect();
        panels.push((format!("{obs} vs phi"), lines));
    }
    if !series.is_empty() {
        panels.push(("vs tau".into(), series.into_iter().collect()));
    }
    let (w, h) = (640.0, 360.0);
    let mut out = String::new();
    let total_h = h * panels.len().max(1) as f64;
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{total_h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    out.push_str(&format!("<title>{}</title>\n", escape(title)));
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];
    for (pi, (name, lines)) in panels.iter().enumerate() {
        let y0 = pi as f64 * h;
        let pts = lines.iter().flat_map(|(_, p)| p.iter());
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            if x.is_finite() && y.is_finite() {
                xmin = xmin.min(x);
                xmax = xmax.max(x);
                ymin = ymin.min(y);
                ymax = ymax.max(y);
            }
        }
        if !(xmax > xmin) {
            xmax = xmin + 1.0;
        }
        if !(ymax > ymin) {
            ymax = ymin + 1.0;
        }
        let (l, r, t, b) = (60.0, 140.0, 30.0, 40.0);
        let sx = |x: f64| l + (x - xmin) / (xmax - xmin) * (w - l - r);
        let sy = |y: f64| y0 + t + (1.0 - (y - ymin) / (ymax - ymin)) * (h - t - b);
        out.push_str(&format!(
            "<text x=\"{l}\" y=\"{}\">{}</text>\n<rect x=\"{l}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n",
            y0 + 18.0,
            escape(name),
            y0 + t,
            w - l - r,
            h - t - b
        ));
        out.push_str(&format!(
            "<text x=\"{l}\" y=\"{}\">{xmin:.3}</text><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{xmax:.3e}</text>\n",
            y0 + h - b + 14.0,
            w - r,
            y0 + h - b + 14.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{ymax:.3}</text><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{ymin:.3}</text>\n",
            l - 4.0,
            y0 + t + 4.0,
            l - 4.0,
            y0 + h - b
        ));
        for (i, (label, p)) in lines.iter().enumerate() {
            let mut p = p.clone();
            p.sort_by(|a, b| a.0.total_cmp(&b.0));
            let c = colors[i % colors.len()];
            let path: Vec<String> = p
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            out.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                path.join(" ")
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" fill=\"{c}\">{}</text>\n",
                w - r + 8.0,
                y0 + t + 12.0 * (i as f64 + 1.0),
                escape(label)
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

type Line = (String, Vec<(f64, f64)>);

fn spectral_order(obs: &str) -> Option<i64> {
    let tail = obs.rsplit('/').next()?;
    let rest = tail.strip_prefix("I_").or_else(|| tail.strip_prefix("A_"))?;
    rest.trim_end_matches("_im").parse().ok()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
