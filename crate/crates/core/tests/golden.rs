//! Byte-level schema check of a fixed-seed sweep. Set `UPDATE_GOLDEN=1` to rewrite.

use oampnet::detectors::{Detector, OampConfig};
use oampnet::harness::{export_report, run_ber, DetectorInfo, ReportFormat, SweepOptions};
use oampnet::model::{ChannelModel, SystemConfig};

fn check(name: &str, format: ReportFormat) {
    let sys = SystemConfig::new(2, 2, 4, 0.0, 2024).unwrap();
    let det = Detector::Oamp(OampConfig::with_layers(5));
    let opts = SweepOptions { min_errors: 50, max_bits: 4000, timing: false };
    let report = run_ber(&det, DetectorInfo::of(&det, None), &sys, ChannelModel::Kronecker { rho: 0.3 }, &[0.0, 5.0, 30.0], &opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join(name);
    export_report(&report, format, &out).unwrap();
    let golden = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::copy(&out, &golden).unwrap();
    }
    let got = std::fs::read_to_string(&out).unwrap();
    let want = std::fs::read_to_string(&golden).unwrap();
    assert_eq!(got, want);
}

#[test]
fn golden_json() {
    check("golden_sweep.json", ReportFormat::Json);
}

#[test]
fn golden_csv() {
    check("golden_sweep.csv", ReportFormat::Csv);
}
