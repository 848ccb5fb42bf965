//! Metrics stream schema and round-trip behavior: field names on the wire,
//! cumulative energy arithmetic, and parse errors that name the bad line.

use feddpq_core::energy::EnergyBreakdown;
use feddpq_core::engine::{RoundTrace, RunSummary};
use feddpq_core::metrics::{
    build_records, parse, read_records, render, summary_of, write_records, MetricsRecord,
};
use serde_json::Value;

fn slot_energy(train_j: f64, comm_j: f64) -> EnergyBreakdown {
    EnergyBreakdown {
        gen_s: 0.0,
        gen_j: 0.0,
        train_s: 0.0,
        train_j,
        comm_s: 0.0,
        comm_j,
    }
}

fn trace(round: u64, loss: f64, delivered: Vec<bool>) -> RoundTrace {
    let skipped = delivered.iter().all(|&d| !d);
    RoundTrace {
        round,
        participants: (0..delivered.len()).collect(),
        delivered,
        energy: vec![slot_energy(0.25, 0.125); 2],
        loss,
        accuracy: 0.5,
        skipped,
    }
}

fn records() -> Vec<MetricsRecord> {
    let traces = vec![
        trace(1, 1.8, vec![true, true]),
        trace(2, 1.8, vec![false, false]),
        trace(3, 1.2, vec![true, false]),
    ];
    let summary = RunSummary {
        rounds_run: 3,
        skipped_rounds: 1,
        rounds_to_target: Some(3),
        reached_target: true,
    };
    build_records("FedDPQ", 9, 4, 2, 2.0, 0.25, 0.5, &traces, &summary)
}

#[test]
fn stream_shape_is_header_rounds_summary() {
    let records = records();
    assert_eq!(records.len(), 5);
    assert!(matches!(records[0], MetricsRecord::Header { .. }));
    assert!(records[1..4]
        .iter()
        .all(|r| matches!(r, MetricsRecord::Round { .. })));
    assert!(matches!(records[4], MetricsRecord::Summary { .. }));
    assert_eq!(summary_of(&records), Some(&records[4]));
}

#[test]
fn cumulative_energy_includes_generation_and_every_round() {
    let per_round = 2.0 * (0.25 + 0.125);
    for (i, record) in records()[1..4].iter().enumerate() {
        match record {
            MetricsRecord::Round {
                round,
                energy_gen_total,
                energy_tr_round,
                energy_cu_round,
                energy_cum,
                ..
            } => {
                assert_eq!(*round, i as u64 + 1);
                assert_eq!(*energy_gen_total, 0.5);
                assert_eq!(*energy_tr_round, 0.5);
                assert_eq!(*energy_cu_round, 0.25);
                let expect = 0.5 + per_round * (i as f64 + 1.0);
                assert!((energy_cum - expect).abs() < 1e-12);
            }
            other => panic!("expected round record, got {other:?}"),
        }
    }
    match records().last().unwrap() {
        MetricsRecord::Summary {
            total_energy,
            rounds_to_target,
            reached_target,
        } => {
            assert!((total_energy - (0.5 + 3.0 * per_round)).abs() < 1e-12);
            assert_eq!(*rounds_to_target, Some(3));
            assert!(reached_target);
        }
        other => panic!("expected summary record, got {other:?}"),
    }
}

#[test]
fn outage_and_skip_flags_come_from_the_trace() {
    let records = records();
    let flags: Vec<(bool, u64, u64)> = records[1..4]
        .iter()
        .map(|r| match r {
            MetricsRecord::Round {
                skipped,
                participants,
                outages,
                ..
            } => (*skipped, *participants, *outages),
            other => panic!("expected round record, got {other:?}"),
        })
        .collect();
    assert_eq!(flags, vec![(false, 2, 0), (true, 2, 2), (false, 2, 1)]);
}

#[test]
fn wire_format_uses_snake_case_type_tags_and_field_names() {
    let text = render(&records()).unwrap();
    let lines: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines[0]["type"], "header");
    assert_eq!(lines[1]["type"], "round");
    assert_eq!(lines[4]["type"], "summary");

    for key in [
        "scenario",
        "seed",
        "devices",
        "slots",
        "initial_loss",
        "initial_accuracy",
    ] {
        assert!(lines[0].get(key).is_some(), "header missing {key}");
    }
    for key in [
        "round",
        "scenario",
        "seed",
        "loss",
        "accuracy",
        "energy_gen_total",
        "energy_tr_round",
        "energy_cu_round",
        "energy_cum",
        "skipped",
        "participants",
        "outages",
    ] {
        assert!(lines[1].get(key).is_some(), "round missing {key}");
    }
    for key in ["rounds_to_target", "total_energy", "reached_target"] {
        assert!(lines[4].get(key).is_some(), "summary missing {key}");
    }
}

#[test]
fn text_and_file_round_trips_are_exact() {
    let records = records();
    let text = render(&records).unwrap();
    assert_eq!(parse(&text).unwrap(), records);

    let dir = std::env::temp_dir().join("feddpq-metrics-io-test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("run.jsonl");
    write_records(&path, &records).unwrap();
    assert_eq!(read_records(&path).unwrap(), records);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn blank_lines_are_skipped_and_bad_lines_are_located() {
    let good = render(&records()).unwrap();
    let padded = format!("\n{good}\n\n");
    assert_eq!(parse(&padded).unwrap().len(), 5);

    let broken = format!("{good}{{\"type\":\"round\"}}\n");
    let err = parse(&broken).unwrap_err().to_string();
    assert!(err.contains("line 6"), "error did not name line 6: {err}");

    let err = parse("not json\n").unwrap_err().to_string();
    assert!(err.contains("line 1"), "error did not name line 1: {err}");
}

#[test]
fn no_target_summary_round_trips_null() {
    let record = MetricsRecord::Summary {
        rounds_to_target: None,
        total_energy: 3.5,
        reached_target: false,
    };
    let line = serde_json::to_string(&record).unwrap();
    let value: Value = serde_json::from_str(&line).unwrap();
    assert!(value["rounds_to_target"].is_null());
    assert_eq!(parse(&line).unwrap(), vec![record]);
}
