use std::path::Path;
use std::process::Command;

const MINIMAL: &str = r#"seed = 5
states = 10

[scenario]
bs_position = [0.0, 0.0, 0.0]
irs_position = [70.0, 0.0, 0.0]
reference_loss_db = -30.0
exponent_bu = 3.5
exponent_bi = 2.2
exponent_iu = 2.8

[fading]
rician_factor_db = 3.0
noise_power_dbm = -90.0
num_elements = 1

[budget]
avg_power_dbm = 30.0
peak_offset_db = 3.0
min_rate = 0.5

[scheme]
access = "noma"
adjustment = "dynamic"
quantization = 3
"#;

fn irsma(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_irsma")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn minimal_config_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out = dir.path().join("out.csv");
    let res = irsma(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "scheme,adjustment,N,L,P̄_dBm,R̄,avg_sum_rate,R1_avg,R2_avg,power_residual,rate_residual,seed,runtime_s"
    );
    assert!(lines[1].starts_with("NOMA,dynamic,1,3,30,0.5,"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out.json")).unwrap()).unwrap();
    let trace = &json["points"][0]["outcome"]["solved"]["ao_trace"];
    assert!(trace.as_array().is_some_and(|t| !t.is_empty()));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &MINIMAL.replace("access = \"noma\"", "access = [\"noma\", \"tdma\"]"));
    let mut files = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let res = irsma(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--no-timing", "--states", "20"]);
        assert!(res.status.success());
        files.push((std::fs::read(&out).unwrap(), std::fs::read(out.with_extension("json")).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn unknown_key_is_a_config_error_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &MINIMAL.replace("quantization = 3", "quantization = 3\nblocksize = 4"));
    let res = irsma(&["run", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("line 26") && err.contains("blocksize"), "{err}");
}

#[test]
fn unreachable_floor_exits_with_infeasible_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &MINIMAL.replace("min_rate = 0.5", "min_rate = 40.0"));
    let out = dir.path().join("out.csv");
    let res = irsma(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1);
}

#[test]
fn oracle_suite_names() {
    let res = irsma(&["oracle-check", "sdp"]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).lines().all(|l| l.starts_with("ok")));
    assert_eq!(irsma(&["oracle-check", "nope"]).status.code(), Some(1));
}

#[test]
fn figure_presets_print_and_reject_unknown() {
    let res = irsma(&["figure", "fig5", "--print-config"]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("avg_power_dbm = [20.0, 25.0, 30.0, 35.0, 40.0]"));
    assert_eq!(irsma(&["figure", "fig2"]).status.code(), Some(1));
}
