use cavlab::runner::{run, Command, RunOptions, EXIT_NONCOMPLIANT, EXIT_OK};
use cavlab::scenario::{preset_names, preset_source, Scenario, SCHEMA_VERSION};
use cavlab::Error;

fn bang_bang() -> String {
    preset_source("bang-bang-q1").unwrap().to_string()
}

fn opts(dir: &tempfile::TempDir) -> RunOptions {
    RunOptions { out: dir.path().to_path_buf(), h: Some(1.0 / 16.0), ..RunOptions::default() }
}

#[test]
fn every_preset_roundtrips_through_toml() {
    for name in preset_names() {
        let s = Scenario::preset(name).unwrap();
        let again = Scenario::from_toml(&s.to_toml().unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(s.to_toml().unwrap(), again.to_toml().unwrap(), "{name}");
    }
}

#[test]
fn wrong_schema_version_is_a_parse_error() {
    let text = bang_bang().replace("schema = 1", &format!("schema = {}", SCHEMA_VERSION + 1));
    assert!(matches!(Scenario::from_toml(&text), Err(Error::ConfigParse(_))));
}

#[test]
fn unknown_section_key_is_a_parse_error() {
    let text = bang_bang().replace("[time]", "[time]\ndt = 0.1");
    assert!(matches!(Scenario::from_toml(&text), Err(Error::ConfigParse(m)) if m.contains("dt")));
}

#[test]
fn missing_region_reference_is_reported() {
    let text = bang_bang().replace("region = \"gamma\"", "region = \"nowhere\"");
    assert!(matches!(Scenario::from_toml(&text), Err(Error::MissingReference(m)) if m.contains("nowhere")));
}

#[test]
fn validate_only_writes_report_and_stops() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(Command::Distinguish, &bang_bang(), &RunOptions { validate_only: true, ..opts(&dir) }).unwrap();
    assert_eq!(out.exit_code, EXIT_OK);
    assert_eq!(out.summary.get("result"), Some("VALIDATED"));
    assert_eq!(out.summary.get("hypotheses"), Some("PASS"));
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("vanishes-on-cavities"), "{report}");
    assert!(dir.path().join("summary.txt").exists());
}

#[test]
fn source_touching_a_cavity_is_noncompliant() {
    let dir = tempfile::tempdir().unwrap();
    let text = bang_bang().replace("x0 = 1.625, y0 = 0.375", "x0 = 1.25, y0 = 0.375");
    let out = run(Command::Distinguish, &text, &opts(&dir)).unwrap();
    assert_eq!(out.exit_code, EXIT_NONCOMPLIANT);
    assert_eq!(out.summary.get("result"), Some("NONCOMPLIANT"));
    assert!(!out.report.clause("vanishes-on-cavities").unwrap().passed);
}

#[test]
fn forward_with_zero_data_writes_a_zero_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = bang_bang();
    let start = text.find("[source]").unwrap();
    let end = text.find("[experiment]").unwrap();
    text.replace_range(start..end, "[source]\nkind = \"none\"\n\n");
    let text = text.replace("require_compliance = true", "require_compliance = false");
    let out = run(Command::Forward, &text, &opts(&dir)).unwrap();
    assert_eq!(out.exit_code, EXIT_OK);
    let csv = std::fs::read_to_string(dir.path().join("u_final.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,y,u"));
    let rows: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(rows.len(), 29 * 29);
    assert!(rows.iter().all(|&v| v == 0.0));
    assert!(dir.path().join("u_final.pgm").exists());
    assert_eq!(out.summary.number("max_abs"), Some(0.0));
}

#[test]
fn empty_sweep_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let text = preset_source("jump-location-sweep").unwrap();
    let out = run(Command::Sweep, text, &RunOptions { values: Some(vec![]), ..opts(&dir) }).unwrap();
    assert_eq!(out.exit_code, EXIT_OK);
    assert_eq!(out.summary.number("samples"), Some(0.0));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv, "parameter,gap,floor,ratio,verdict\n");
}

#[test]
fn sweep_over_a_non_numeric_entry_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = preset_source("jump-location-sweep").unwrap();
    for axis in ["source.kind", "source.breakpoints.9", "no.such.key"] {
        let o = RunOptions { axis: Some(axis.into()), values: Some(vec![]), ..opts(&dir) };
        assert!(matches!(run(Command::Sweep, text, &o), Err(Error::BadAxis(_))), "{axis}");
    }
}

#[test]
fn observation_noise_follows_the_seed_override() {
    let text = bang_bang().replace("expect = \"distinguishable\"", "expect = \"distinguishable\"\n\n[inverse]\ntruth = \"D1\"\nnoise = 0.01\nharmonics = 0\nlower = [0.6, 0.6, 0.1]\nupper = [1.4, 1.4, 0.5]");
    let read = |seed: u64| {
        let dir = tempfile::tempdir().unwrap();
        run(Command::Observe, &text, &RunOptions { seed: Some(seed), ..opts(&dir) }).unwrap();
        std::fs::read_to_string(dir.path().join("observation.csv")).unwrap()
    };
    assert_eq!(read(5), read(5));
    assert_ne!(read(5), read(6));
}

#[test]
fn non_commuting_operators_are_reported_but_still_compared() {
    let dir = tempfile::tempdir().unwrap();
    let text = preset_source("constant-coeff-q2").unwrap().replace("a11 = 2.0", "a11 = { preset = \"linear\", c0 = 2.0, cx = 1.0, cy = 0.0 }");
    let out = run(Command::Q2, &text, &opts(&dir)).unwrap();
    assert_eq!(out.exit_code, EXIT_OK);
    assert_eq!(out.summary.get("commuting"), Some("UNMET"));
    assert!(out.summary.number("commutator").unwrap() > 1e-6);
    assert!(out.summary.number("gap").unwrap() > 0.0);
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("commuting-operators: UNMET"), "{report}");
}

#[test]
fn equal_cavities_and_operators_give_zero_gap() {
    let dir = tempfile::tempdir().unwrap();
    let text = preset_source("constant-coeff-q2").unwrap().replace("d2 = \"D2\"", "d2 = \"D1\"").replace("operator2 = \"A2\"", "operator2 = \"A1\"");
    let out = run(Command::Q2, &text, &opts(&dir)).unwrap();
    assert_eq!(out.summary.number("gap"), Some(0.0));
    assert_eq!(out.summary.get("commuting"), Some("PASS"));
    assert_eq!(out.summary.get("verdict"), Some("INDISTINGUISHABLE"));
}
