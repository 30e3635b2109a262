//! Line-delimited JSON scenario dumps.
//!
//! Line 1 is a header object `{schema, version, epochs, config}`; each of
//! the following `epochs` lines is one clean [`MeasurementEpoch`]. Faults are
//! re-applied from the header's config on load.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{MeasurementEpoch, Scenario, ScenarioConfig, ScenarioError};

pub const DUMP_SCHEMA: &str = "givint-scenario";
pub const DUMP_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    epochs: usize,
    config: ScenarioConfig,
}

pub fn write_dump<W: Write>(scenario: &Scenario, mut out: W) -> Result<(), ScenarioError> {
    let io = |e: std::io::Error| ScenarioError::Io(e.to_string());
    let header = Header {
        schema: DUMP_SCHEMA.to_string(),
        version: DUMP_VERSION,
        epochs: scenario.clean.len(),
        config: scenario.config.clone(),
    };
    let line = serde_json::to_string(&header).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    writeln!(out, "{line}").map_err(io)?;
    for e in &scenario.clean {
        let line = serde_json::to_string(e).map_err(|e| ScenarioError::Schema(e.to_string()))?;
        writeln!(out, "{line}").map_err(io)?;
    }
    Ok(())
}

pub fn read_dump<R: BufRead>(input: R) -> Result<Scenario, ScenarioError> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| ScenarioError::Schema("empty dump".into()))?
        .map_err(|e| ScenarioError::Io(e.to_string()))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| ScenarioError::Schema(format!("header: {e}")))?;
    if header.schema != DUMP_SCHEMA || header.version != DUMP_VERSION {
        return Err(ScenarioError::Schema(format!(
            "expected {DUMP_SCHEMA} v{DUMP_VERSION}, found {} v{}",
            header.schema, header.version
        )));
    }
    let mut epochs = Vec::with_capacity(header.epochs);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| ScenarioError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: MeasurementEpoch =
            serde_json::from_str(&line).map_err(|e| ScenarioError::Schema(format!("epoch line {}: {e}", i + 2)))?;
        epochs.push(e);
    }
    if epochs.len() != header.epochs {
        return Err(ScenarioError::Schema(format!(
            "header declares {} epochs, found {}",
            header.epochs,
            epochs.len()
        )));
    }
    Scenario::from_clean(header.config, epochs)
}
