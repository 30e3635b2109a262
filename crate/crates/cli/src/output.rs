//! Output files of a run: `epochs.csv`, `summary.txt`, `manifest.json` and
//! optional SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use givint_core::factors::SensorClass;
use givint_core::pipeline::{statistic, EpochRecord, RunResult};
use givint_core::FaultMode;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const EPOCHS_FILE: &str = "epochs.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

const UNITS: &str = "# time [s]; truth_*/est_* local ENU position [m]; hpe horizontal position error [m]; \
nees normalized position error squared [-]; stat_*/thr_* windowed chi-square statistic and threshold [-]; \
dof_* residual count [-]; exclusions ';'-separated; continuity_alert 0/1; peb_* horizontal error bound per fault mode [m], \
empty when the mode has no allocation; avail_* bound within the alert limit 0/1; fault_* injected truth labels";

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn header() -> Vec<String> {
    let mut h: Vec<String> = [
        "epoch", "time", "truth_e", "truth_n", "truth_u", "est_e", "est_n", "est_u", "hpe", "nees",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for c in ["gnss", "imu", "vision"] {
        h.push(format!("stat_{c}"));
        h.push(format!("thr_{c}"));
        h.push(format!("dof_{c}"));
    }
    h.push("exclusions".into());
    h.push("continuity_alert".into());
    for m in FaultMode::ALLOCATED {
        h.push(format!("peb_{}", m.tag()));
    }
    for m in FaultMode::ALLOCATED {
        h.push(format!("avail_{}", m.tag()));
    }
    h.extend(["fault_gnss", "fault_imu", "fault_vision"].map(String::from));
    h
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

fn row(r: &EpochRecord) -> Vec<String> {
    let mut v = vec![r.index.to_string(), f(r.time)];
    v.extend(r.truth.iter().map(|x| f(*x)));
    v.extend(r.estimate.iter().map(|x| f(*x)));
    v.push(f(r.hpe));
    v.push(f(r.nees));
    for c in SensorClass::ALL {
        let s = statistic(r, c);
        v.push(f(s.value));
        v.push(f(s.threshold));
        v.push(s.dof.to_string());
    }
    v.push(r.exclusions.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(";"));
    v.push(u8::from(r.continuity_alert).to_string());
    for m in FaultMode::ALLOCATED {
        v.push(r.mode(m).map_or(String::new(), |b| f(b.horizontal)));
    }
    for m in FaultMode::ALLOCATED {
        v.push(r.mode(m).map_or(String::new(), |b| u8::from(b.available).to_string()));
    }
    v.push(r.faults.gnss.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";"));
    v.push(u8::from(r.faults.imu).to_string());
    v.push(u8::from(r.faults.vision).to_string());
    v
}

pub fn write_epochs(path: &Path, result: &RunResult) -> Result<(), CliError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(UNITS.as_bytes());
    buf.push(b'\n');
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let e = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(header()).map_err(e)?;
        for r in &result.records {
            w.write_record(row(r)).map_err(e)?;
        }
        w.flush().map_err(|e| io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| io(path, e))
}

/// One parsed row of `epochs.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvEpoch {
    pub epoch: u64,
    pub time: f64,
    pub hpe: f64,
    /// Horizontal bound per allocated mode, `None` when not allocated.
    pub peb: Vec<(FaultMode, Option<f64>)>,
    pub available: Vec<(FaultMode, Option<bool>)>,
    pub exclusions: Vec<String>,
    pub continuity_alert: bool,
    pub faulted: bool,
}

pub fn read_epochs(path: &Path) -> Result<Vec<CsvEpoch>, CliError> {
    let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let cols: Vec<String> = rd.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
    if cols != header() {
        return Err(bad("unexpected columns".into()));
    }
    let at = |name: &str| cols.iter().position(|c| c == name).unwrap_or(0);
    let num = |s: &str| -> Result<f64, CliError> { s.parse().map_err(|_| bad(format!("bad number '{s}'"))) };
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let g = |name: &str| rec.get(at(name)).unwrap_or("");
        let mut peb = Vec::new();
        let mut available = Vec::new();
        for m in FaultMode::ALLOCATED {
            let p = g(&format!("peb_{}", m.tag()));
            peb.push((m, if p.is_empty() { None } else { Some(num(p)?) }));
            let a = g(&format!("avail_{}", m.tag()));
            available.push((m, if a.is_empty() { None } else { Some(a == "1") }));
        }
        let list = |s: &str| s.split(';').filter(|x| !x.is_empty()).map(String::from).collect::<Vec<_>>();
        out.push(CsvEpoch {
            epoch: g("epoch").parse().map_err(|_| bad("bad epoch".into()))?,
            time: num(g("time"))?,
            hpe: num(g("hpe"))?,
            peb,
            available,
            exclusions: list(g("exclusions")),
            continuity_alert: g("continuity_alert") == "1",
            faulted: !g("fault_gnss").is_empty() || g("fault_imu") == "1" || g("fault_vision") == "1",
        });
    }
    Ok(out)
}

pub fn summary_text(result: &RunResult, fde: bool) -> String {
    let summary = result.summary();
    let mut s = String::new();
    let _ = writeln!(s, "Summary of results");
    let _ = writeln!(
        s,
        "P_HMI,total = {:e}   AL = {} m   FDE = {}   epochs = {}",
        result.budget.total,
        result.alert_limit,
        if fde { "on" } else { "off" },
        result.records.len()
    );
    let _ = writeln!(s);
    let _ = write!(s, "{:<20}", "Fault mode");
    for (m, _) in &summary {
        let _ = write!(s, "{:>10}", m.tag());
    }
    let _ = writeln!(s);
    let line = |s: &mut String, label: &str, f: &dyn Fn(&givint_core::ModeSummary) -> String| {
        let _ = write!(s, "{label:<20}");
        for (_, m) in &summary {
            let _ = write!(s, "{:>10}", f(m));
        }
        let _ = writeln!(s);
    };
    line(&mut s, "Average error (m)", &|m| format!("{:.3}", m.mean_error));
    line(&mut s, "Average PEB (m)", &|m| format!("{:.3}", m.mean_peb));
    line(&mut s, "Availability (%)", &|m| format!("{:.2}", m.availability));
    let _ = writeln!(s);
    let alerts = result.records.iter().filter(|r| r.continuity_alert).count();
    let excluded: usize = result.records.iter().map(|r| r.exclusions.len()).sum();
    let _ = writeln!(s, "Continuity alerts: {alerts} epochs");
    let _ = writeln!(s, "Exclusions: {excluded}");
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub fde: bool,
    pub source: String,
    pub dump_schema: String,
    pub dump_version: u32,
    pub epochs: usize,
    pub continuity_alert: bool,
    pub files: Vec<String>,
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(m).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io(path, e))
}

/// HPE and the horizontal bound of `mode` against time.
pub fn svg_plot(result: &RunResult, mode: FaultMode) -> String {
    let (w, h, pad) = (800.0, 400.0, 50.0);
    let t: Vec<f64> = result.records.iter().map(|r| r.time).collect();
    let hpe: Vec<f64> = result.records.iter().map(|r| r.hpe).collect();
    let peb: Vec<f64> = result
        .records
        .iter()
        .map(|r| r.mode(mode).map_or(f64::NAN, |b| b.horizontal))
        .collect();
    let t0 = t.first().copied().unwrap_or(0.0);
    let t1 = t.last().copied().unwrap_or(1.0).max(t0 + 1e-9);
    let ymax = hpe
        .iter()
        .chain(peb.iter())
        .chain(std::iter::once(&result.alert_limit))
        .filter(|v| v.is_finite())
        .fold(1.0f64, |a, b| a.max(*b))
        * 1.1;
    let x = |v: f64| pad + (v - t0) / (t1 - t0) * (w - 2.0 * pad);
    let y = |v: f64| h - pad - v.min(ymax) / ymax * (h - 2.0 * pad);
    let line = |vals: &[f64]| {
        t.iter()
            .zip(vals)
            .filter(|(_, v)| v.is_finite())
            .map(|(a, b)| format!("{:.2},{:.2}", x(*a), y(*b)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{pad},{pad} V{} H{}" fill="none" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    for k in 0..=4 {
        let v = ymax * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="5" y="{:.1}">{v:.1}</text>"#, y(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{}">{t0:.0} s</text>"#, pad, h - pad + 20.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{}">{t1:.0} s</text>"#, w - pad - 30.0, h - pad + 20.0);
    let al = y(result.alert_limit);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" x2="{}" y1="{al:.2}" y2="{al:.2}" stroke="gray" stroke-dasharray="4 4"/>"#,
        w - pad
    );
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="red"/>"#, line(&peb));
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="blue"/>"#, line(&hpe));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20">HPE (blue), {} PEB (red), AL (dashed) [m]</text>"#,
        pad,
        mode.tag()
    );
    s.push_str("</svg>\n");
    s
}
