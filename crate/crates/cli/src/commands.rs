//! `run`, `replay` and `compare`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use givint_core::scenario::{read_dump, write_dump, DUMP_SCHEMA, DUMP_VERSION};
use givint_core::{generate_scenario, run_pipeline, FaultMode, RunResult, Scenario};
use rayon::prelude::*;

use crate::config::{config_hash, RunConfig};
use crate::output::{
    read_epochs, summary_text, svg_plot, write_epochs, write_manifest, Manifest, EPOCHS_FILE, MANIFEST_FILE,
    SUMMARY_FILE,
};
use crate::CliError;

pub const COMPARE_FILE: &str = "compare.csv";
pub const MONTECARLO_FILE: &str = "montecarlo.txt";

#[derive(Clone, Debug, Default)]
pub struct OutputOptions {
    pub plots: bool,
    /// Also write the scenario dump to this path.
    pub dump: Option<PathBuf>,
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Runs `scenario` and writes every output file into `out`.
pub fn execute(
    cfg: &RunConfig,
    scenario: &Scenario,
    source: &str,
    out: &Path,
    opts: &OutputOptions,
) -> Result<RunResult, CliError> {
    fs::create_dir_all(out).map_err(|e| io(out, e))?;
    if let Some(path) = &opts.dump {
        let f = fs::File::create(path).map_err(|e| io(path, e))?;
        write_dump(scenario, BufWriter::new(f))?;
    }
    let result = run_pipeline(scenario, &cfg.pipeline())?;
    write_epochs(&out.join(EPOCHS_FILE), &result)?;
    let summary = out.join(SUMMARY_FILE);
    fs::write(&summary, summary_text(&result, cfg.fde)).map_err(|e| io(&summary, e))?;
    let mut files = vec![EPOCHS_FILE.to_string(), SUMMARY_FILE.to_string()];
    if opts.plots {
        for (mode, _) in result.summary() {
            let name = format!("plot_{}.svg", mode.tag());
            let path = out.join(&name);
            fs::write(&path, svg_plot(&result, mode)).map_err(|e| io(&path, e))?;
            files.push(name);
        }
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(cfg, &scenario.config),
        seed: scenario.config.seed,
        fde: cfg.fde,
        source: source.to_string(),
        dump_schema: DUMP_SCHEMA.to_string(),
        dump_version: DUMP_VERSION,
        epochs: result.records.len(),
        continuity_alert: result.continuity_alert(),
        files,
    };
    write_manifest(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(result)
}

fn alert_status(result: &RunResult) -> Result<(), CliError> {
    let n = result.records.iter().filter(|r| r.continuity_alert).count();
    if n > 0 {
        Err(CliError::ContinuityAlert(n))
    } else {
        Ok(())
    }
}

/// One generated run. Outputs are written before a continuity alert is
/// reported as an error.
pub fn run(cfg: &RunConfig, out: &Path, opts: &OutputOptions) -> Result<RunResult, CliError> {
    let scenario = generate_scenario(&cfg.resolved_scenario())?;
    let result = execute(cfg, &scenario, "generated", out, opts)?;
    alert_status(&result)?;
    Ok(result)
}

/// Runs seeds `base, base + 1, ..` in parallel, one `seed_<S>` directory
/// each, and writes the mean of the per-run summaries to `montecarlo.txt`.
pub fn montecarlo(cfg: &RunConfig, runs: usize, out: &Path, opts: &OutputOptions) -> Result<String, CliError> {
    if runs == 0 {
        return Err(CliError::Config("--montecarlo needs at least one run".into()));
    }
    let base = cfg.resolved_scenario().seed;
    let results: Vec<Result<(u64, RunResult), CliError>> = (0..runs as u64)
        .into_par_iter()
        .map(|k| {
            let seed = base + k;
            let cfg = RunConfig { seed: Some(seed), ..cfg.clone() };
            let opts = OutputOptions { plots: opts.plots, dump: None };
            let scenario = generate_scenario(&cfg.resolved_scenario())?;
            let r = execute(&cfg, &scenario, "generated", &out.join(format!("seed_{seed}")), &opts)?;
            Ok((seed, r))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let text = montecarlo_text(&results, cfg.fde);
    let path = out.join(MONTECARLO_FILE);
    fs::write(&path, &text).map_err(|e| io(&path, e))?;
    let alerts = results.iter().filter(|(_, r)| r.continuity_alert()).count();
    if alerts > 0 {
        return Err(CliError::ContinuityAlert(alerts));
    }
    Ok(text)
}

fn montecarlo_text(results: &[(u64, RunResult)], fde: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Monte Carlo summary");
    let _ = writeln!(
        s,
        "runs = {}   seeds = {}..={}   FDE = {}",
        results.len(),
        results.first().map_or(0, |r| r.0),
        results.last().map_or(0, |r| r.0),
        if fde { "on" } else { "off" }
    );
    let _ = writeln!(s);
    let summaries: Vec<_> = results.iter().map(|(_, r)| r.summary()).collect();
    let modes: Vec<FaultMode> = summaries.first().map_or(Vec::new(), |v| v.iter().map(|(m, _)| *m).collect());
    let _ = write!(s, "{:<24}", "Fault mode");
    for m in &modes {
        let _ = write!(s, "{:>10}", m.tag());
    }
    let _ = writeln!(s);
    let n = summaries.len().max(1) as f64;
    let rows: [(&str, fn(&givint_core::ModeSummary) -> f64, usize); 3] = [
        ("Average error (m)", |m| m.mean_error, 3),
        ("Average PEB (m)", |m| m.mean_peb, 3),
        ("Availability (%)", |m| m.availability, 2),
    ];
    for (label, get, prec) in rows {
        let _ = write!(s, "{label:<24}");
        for (i, _) in modes.iter().enumerate() {
            let mean = summaries.iter().filter_map(|v| v.get(i)).map(|(_, m)| get(m)).sum::<f64>() / n;
            let _ = write!(s, "{:>10.prec$}", mean);
        }
        let _ = writeln!(s);
    }
    let _ = writeln!(s);
    let alerts = results.iter().filter(|(_, r)| r.continuity_alert()).count();
    let _ = writeln!(s, "Runs with a continuity alert: {alerts}");
    s
}

/// Reads a scenario dump. Faults recorded in its header are applied unless
/// `cfg.faults` is off.
pub fn load_dump(path: &Path, cfg: &RunConfig) -> Result<Scenario, CliError> {
    let f = fs::File::open(path).map_err(|e| io(path, e))?;
    let scenario = read_dump(BufReader::new(f))?;
    if cfg.faults || scenario.config.faults.is_empty() {
        return Ok(scenario);
    }
    let mut config = scenario.config.clone();
    config.faults.clear();
    Ok(Scenario::from_clean(config, scenario.clean)?)
}

pub fn replay(dump: &Path, cfg: &RunConfig, out: &Path, opts: &OutputOptions) -> Result<RunResult, CliError> {
    let scenario = load_dump(dump, cfg)?;
    let result = execute(cfg, &scenario, "dump", out, opts)?;
    alert_status(&result)?;
    Ok(result)
}

/// Maximum and mean HPE over faulted epochs of one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaultHpe {
    pub epochs: usize,
    pub max: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub epochs: usize,
    pub max_abs_hpe_delta: f64,
    pub max_abs_peb_delta: f64,
    pub a: FaultHpe,
    pub b: FaultHpe,
    pub report: String,
}

fn fault_hpe(rows: &[crate::output::CsvEpoch]) -> FaultHpe {
    let v: Vec<f64> = rows.iter().filter(|r| r.faulted).map(|r| r.hpe).collect();
    FaultHpe {
        epochs: v.len(),
        max: v.iter().copied().fold(0.0, f64::max),
        mean: if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 },
    }
}

/// Per-epoch deltas `B - A` of HPE and every horizontal bound. Writes
/// `compare.csv` into `out` when given.
pub fn compare(a_dir: &Path, b_dir: &Path, out: Option<&Path>) -> Result<Comparison, CliError> {
    let a = read_epochs(&a_dir.join(EPOCHS_FILE))?;
    let b = read_epochs(&b_dir.join(EPOCHS_FILE))?;
    if a.len() != b.len() {
        return Err(CliError::EpochMismatch(format!("{} vs {} epochs", a.len(), b.len())));
    }
    if let Some((x, y)) = a.iter().zip(&b).find(|(x, y)| x.epoch != y.epoch || x.time != y.time) {
        return Err(CliError::EpochMismatch(format!(
            "epoch {} at {} s vs epoch {} at {} s",
            x.epoch, x.time, y.epoch, y.time
        )));
    }
    let mut header = vec!["epoch".to_string(), "time".into(), "faulted".into(), "hpe_delta".into()];
    header.extend(FaultMode::ALLOCATED.iter().map(|m| format!("peb_{}_delta", m.tag())));
    let mut rows = Vec::with_capacity(a.len());
    let (mut max_hpe, mut max_peb) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(&b) {
        let dh = y.hpe - x.hpe;
        max_hpe = max_hpe.max(dh.abs());
        let mut row = vec![x.epoch.to_string(), format!("{:.6}", x.time), u8::from(x.faulted || y.faulted).to_string()];
        row.push(format!("{dh:.6}"));
        for ((_, pa), (_, pb)) in x.peb.iter().zip(&y.peb) {
            row.push(match (pa, pb) {
                (Some(pa), Some(pb)) => {
                    let d = pb - pa;
                    if d.is_finite() {
                        max_peb = max_peb.max(d.abs());
                    }
                    format!("{d:.6}")
                }
                _ => String::new(),
            });
        }
        rows.push(row);
    }
    let (fa, fb) = (fault_hpe(&a), fault_hpe(&b));
    let mut report = String::new();
    let _ = writeln!(report, "A: {}", a_dir.display());
    let _ = writeln!(report, "B: {}", b_dir.display());
    let _ = writeln!(report, "epochs: {}", a.len());
    let _ = writeln!(report, "max |HPE delta| (m): {max_hpe:.6}");
    let _ = writeln!(report, "max |PEB delta| (m): {max_peb:.6}");
    let _ = writeln!(report, "faulted epochs: A {} / B {}", fa.epochs, fb.epochs);
    let _ = writeln!(report, "in-fault HPE max (m): A {:.6} / B {:.6} / B - A {:.6}", fa.max, fb.max, fb.max - fa.max);
    let _ = writeln!(report, "in-fault HPE mean (m): A {:.6} / B {:.6} / B - A {:.6}", fa.mean, fb.mean, fb.mean - fa.mean);
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| io(out, e))?;
        let path = out.join(COMPARE_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let e = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(&header).map_err(e)?;
        for r in &rows {
            w.write_record(r).map_err(e)?;
        }
        w.flush().map_err(|e| io(&path, e))?;
        let path = out.join("compare.txt");
        fs::write(&path, &report).map_err(|e| io(&path, e))?;
    }
    Ok(Comparison {
        epochs: a.len(),
        max_abs_hpe_delta: max_hpe,
        max_abs_peb_delta: max_peb,
        a: fa,
        b: fb,
        report,
    })
}
