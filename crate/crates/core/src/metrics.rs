//! Line-delimited experiment output: one JSON record per line, tagged as a
//! header, a per-round row, or a closing summary. The format is append-only
//! and diffable, so regression checks can compare emitted files byte for
//! byte and every downstream table can be rebuilt from a file alone.

use crate::engine::{RoundTrace, RunSummary};
use crate::numeric::KahanSum;
use crate::types::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MetricsRecord {
    Header {
        scenario: String,
        seed: u64,
        devices: usize,
        slots: usize,
        initial_loss: f64,
        initial_accuracy: f64,
    },
    Round {
        round: u64,
        scenario: String,
        seed: u64,
        loss: f64,
        accuracy: f64,
        /// One-off generation cost, repeated on every row (J).
        energy_gen_total: f64,
        /// Realized compute energy across this round's slots (J).
        energy_tr_round: f64,
        /// Realized transmission energy across this round's slots (J).
        energy_cu_round: f64,
        /// Generation cost plus the prefix sum of round energies (J).
        energy_cum: f64,
        skipped: bool,
        /// Occupied participant slots.
        participants: u64,
        /// Slots whose transmission failed.
        outages: u64,
    },
    Summary {
        rounds_to_target: Option<u64>,
        /// Realized energy of the whole run: generation plus every round (J).
        total_energy: f64,
        reached_target: bool,
    },
}

/// Assembles the full record stream for one run: header, one row per round
/// with running cumulative energy, and the summary.
pub fn build_records(
    scenario: &str,
    seed: u64,
    devices: usize,
    slots: usize,
    initial_loss: f64,
    initial_accuracy: f64,
    gen_total_j: f64,
    traces: &[RoundTrace],
    summary: &RunSummary,
) -> Vec<MetricsRecord> {
    let mut records = Vec::with_capacity(traces.len() + 2);
    records.push(MetricsRecord::Header {
        scenario: scenario.to_string(),
        seed,
        devices,
        slots,
        initial_loss,
        initial_accuracy,
    });
    let mut cum = KahanSum::new();
    cum.add(gen_total_j);
    for trace in traces {
        let tr: f64 = trace.energy.iter().map(|e| e.train_j).sum();
        let cu: f64 = trace.energy.iter().map(|e| e.comm_j).sum();
        cum.add(tr);
        cum.add(cu);
        records.push(MetricsRecord::Round {
            round: trace.round,
            scenario: scenario.to_string(),
            seed,
            loss: trace.loss,
            accuracy: trace.accuracy,
            energy_gen_total: gen_total_j,
            energy_tr_round: tr,
            energy_cu_round: cu,
            energy_cum: cum.value(),
            skipped: trace.skipped,
            participants: trace.participants.len() as u64,
            outages: trace.delivered.iter().filter(|&&d| !d).count() as u64,
        });
    }
    records.push(MetricsRecord::Summary {
        rounds_to_target: summary.rounds_to_target,
        total_energy: cum.value(),
        reached_target: summary.reached_target,
    });
    records
}

/// Serializes records as one JSON object per line.
pub fn render(records: &[MetricsRecord]) -> Result<String> {
    let mut out = String::new();
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Invalid(format!("metrics record not serializable: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    fs::write(path, render(records)?)?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path)?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: MetricsRecord = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("metrics line {}: {e}", i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// The summary record of a stream, if present.
pub fn summary_of(records: &[MetricsRecord]) -> Option<&MetricsRecord> {
    records
        .iter()
        .find(|r| matches!(r, MetricsRecord::Summary { .. }))
}
