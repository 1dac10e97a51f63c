mod common;

use common::{data_path, CASES};
use mpgn::case_io::{build_admittance, read_matpower_case, read_trace_csv, write_trace_csv};
use mpgn::trace::IterationRecord;
use num_complex::Complex64;

#[test]
fn bus_counts() {
    for (name, buses) in CASES.iter().zip([14, 39, 57, 118]) {
        let case = read_matpower_case(data_path(name)).unwrap();
        assert_eq!(case.buses.len(), buses, "{name}");
        assert!(!case.branches.is_empty());
    }
}

#[test]
fn two_bus_file_gives_textbook_admittance() {
    let case = read_matpower_case(data_path("two_bus.m")).unwrap();
    let (g, b) = build_admittance(&case).unwrap();
    // Series admittance 1/(r + jx) and half the line charging at each end.
    let series = Complex64::new(1.0, 0.0) / Complex64::new(0.01, 0.1);
    let diag = series + Complex64::new(0.0, 0.01);
    let expected = [[diag, -series], [-series, diag]];
    for i in 0..2 {
        for k in 0..2 {
            assert!((g[(i, k)] - expected[i][k].re).abs() < 1e-12);
            assert!((b[(i, k)] - expected[i][k].im).abs() < 1e-12);
        }
    }
    assert!((g[(0, 0)] - 0.990_099_009_900_990_1).abs() < 1e-12);
    assert!((b[(0, 1)] - 9.900_990_099_009_901).abs() < 1e-12);
}

#[test]
fn case_voltage_bounds_are_read() {
    let case = read_matpower_case(data_path("case14.m")).unwrap();
    assert!(case
        .buses
        .iter()
        .all(|b| b.voltage_bounds == Some((0.94, 1.06))));
}

#[test]
fn missing_file_is_an_io_error() {
    let err = read_matpower_case(data_path("no_such_case.m")).unwrap_err();
    assert!(matches!(err, mpgn::Error::Io { .. }));
}

#[test]
fn trace_round_trip_through_file() {
    let records: Vec<IterationRecord> = (0..5)
        .map(|k| IterationRecord {
            iter: k,
            f: 1.0 / (k as f64 + 3.0),
            step_norm: std::f64::consts::PI * k as f64,
            reg: 2f64.powi(k as i32 - 2),
            ls_doublings: k,
            sub_gap: 1e-13 * k as f64,
            sub_iters: 7 * k,
            stat_surrogate: (k as f64).sqrt(),
            time_ms: 0.0,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    write_trace_csv(&records, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(!text.contains('\r'));
    let back = read_trace_csv(&path).unwrap();
    assert_eq!(back, records);
}
