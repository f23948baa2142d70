//! End-to-end runs of the binary: reports, files and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
seed = 3

[schedule]
steps = 20

[network]
depth = 2
base_channels = 4
time_embed_dim = 8

[train]
iters = 2
batch = 2
image_size = 12
pool_size = 4
window = 1

[data]
count = 2
size = 12

[roundtrip]
size = 12
seeds = 2

[probe]
trials = 2
block_trials = 1
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_c2fdiff"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn c2fdiff")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn report(out: &Output) -> Value {
    assert_eq!(
        code(out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn envelope_and_generated_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let out = run(&["--config", s(&cfg), "--out", s(&data), "gen-data"]);
    assert!(out.stdout.ends_with(b"}\n"));
    let r = report(&out);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["command"], "gen-data");
    assert_eq!(r["config"]["seed"], 3);
    assert_eq!(r["config"]["schedule"]["steps"], 20);
    let items = r["result"].as_array().unwrap();
    assert_eq!(items.len(), 2);
    for item in items {
        let (tag, seed) = (
            item["tag"].as_str().unwrap(),
            item["seed"].as_u64().unwrap(),
        );
        assert_eq!(tag, "lowlight");
        for (key, suffix) in [("degraded", "deg"), ("reference", "ref")] {
            let path = PathBuf::from(item[key].as_str().unwrap());
            assert_eq!(
                path.file_name().unwrap(),
                format!("{tag}_{seed}_{suffix}.ppm").as_str()
            );
            assert!(std::fs::read(&path)
                .unwrap()
                .starts_with(b"P6\n12 12\n255\n"));
        }
    }
}

#[test]
fn count_flag_overrides_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let r = report(&run(&[
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("d")),
        "gen-data",
        "--count",
        "3",
    ]));
    assert_eq!(r["result"].as_array().unwrap().len(), 3);
    assert_eq!(r["config"]["data"]["count"], 3);
}

#[test]
fn metrics_of_an_image_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let g = report(&run(&[
        "--config",
        s(&cfg),
        "--out",
        s(&data),
        "gen-data",
        "--count",
        "1",
    ]));
    let img = g["result"][0]["reference"].as_str().unwrap().to_string();
    let r = report(&run(&[
        "--config",
        s(&cfg),
        "metrics",
        "--input",
        &img,
        "--reference",
        &img,
    ]));
    assert_eq!(r["result"]["metrics"]["psnr_db"], "+inf");
    assert_eq!(r["result"]["metrics"]["ssim"], 1.0);
    for k in ["pixel", "edge", "hist", "combined"] {
        assert_eq!(r["result"]["losses"][k], 0.0, "{k}");
    }
    let deg = g["result"][0]["degraded"].as_str().unwrap();
    let r = report(&run(&[
        "--config",
        s(&cfg),
        "metrics",
        "--input",
        deg,
        "--reference",
        &img,
    ]));
    let p = r["result"]["metrics"]["psnr_db"].as_f64().unwrap();
    assert!(p.is_finite() && p > 0.0);
    assert!(r["result"]["losses"]["combined"].as_f64().unwrap() > 0.0);
}

#[test]
fn train_then_restore() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let ck = dir.path().join("ck.json");
    let t = report(&run(&["--config", s(&cfg), "--out", s(&ck), "train-toy"]));
    assert_eq!(t["result"]["iterations"], 2);
    assert_eq!(t["result"]["resumed_from"], Value::Null);
    assert_eq!(t["result"]["history"].as_array().unwrap().len(), 2);

    // Resume to four iterations.
    let ck4 = dir.path().join("ck4.json");
    let t4 = report(&run(&[
        "--config",
        s(&cfg),
        "--out",
        s(&ck4),
        "train-toy",
        "--iters",
        "4",
        "--resume",
        s(&ck),
    ]));
    assert_eq!(t4["result"]["resumed_from"], 2);
    assert_eq!(t4["result"]["iterations"], 4);

    let data = dir.path().join("data");
    let g = report(&run(&[
        "--config",
        s(&cfg),
        "--out",
        s(&data),
        "gen-data",
        "--count",
        "1",
    ]));
    let deg = g["result"][0]["degraded"].as_str().unwrap();
    let reference = g["result"][0]["reference"].as_str().unwrap();
    let restored = dir.path().join("restored.ppm");

    let r = report(&run(&[
        "--config",
        s(&cfg),
        "--out",
        s(&restored),
        "restore",
        "--checkpoint",
        s(&ck4),
        "--input",
        deg,
    ]));
    let obj = r["result"].as_object().unwrap();
    assert!(!obj.contains_key("metrics") && !obj.contains_key("input_metrics"));
    assert_eq!(r["result"]["deterministic"], true);
    assert!(std::fs::read(&restored)
        .unwrap()
        .starts_with(b"P6\n12 12\n255\n"));

    let r = report(&run(&[
        "--config",
        s(&cfg),
        "--out",
        s(&restored),
        "restore",
        "--checkpoint",
        s(&ck4),
        "--input",
        deg,
        "--reference",
        reference,
    ]));
    assert!(r["result"]["metrics"]["psnr_db"].as_f64().is_some());
    assert!(r["result"]["input_metrics"]["ssim"].as_f64().is_some());
}

#[test]
fn roundtrip_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let rec = dir.path().join("rec.ppm");
    let r = report(&run(&[
        "--config",
        s(&cfg),
        "--out",
        s(&rec),
        "sde-roundtrip",
        "--steps",
        "30",
    ]));
    let res = &r["result"];
    assert_eq!(res["steps"], 30);
    assert_eq!(res["residuals"].as_array().unwrap().len(), 31);
    assert_eq!(res["study"]["seeds"], 2);
    assert_eq!(res["recovered"], s(&rec));
    assert!(rec.exists());

    // With an input file there is no study block.
    let r = report(&run(&[
        "--config",
        s(&cfg),
        "sde-roundtrip",
        "--input",
        s(&rec),
    ]));
    assert!(r["result"].get("study").is_none());
    assert!(r["result"].get("recovered").is_none());
}

#[test]
fn report_flag_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let rep = dir.path().join("r.json");
    let out = run(&["--config", s(&cfg), "--report", s(&rep), "probe"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_slice(&std::fs::read(&rep).unwrap()).unwrap();
    assert_eq!(
        r["result"]["ladder"]["measured"],
        serde_json::json!([3, 7, 15, 31])
    );
    assert_eq!(r["result"]["passed"], true);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\nlearning_rate = 3\n").unwrap();
    assert_eq!(code(&run(&["--config", s(&bad), "probe"])), 2);
    std::fs::write(&bad, "[train]\nepochs = 3\n").unwrap();
    assert_eq!(code(&run(&["--config", s(&bad), "probe"])), 2);
    std::fs::write(&bad, "seed = \"x\"\n").unwrap();
    assert_eq!(code(&run(&["--config", s(&bad), "probe"])), 2);

    assert_eq!(code(&run(&["--steps", "0", "sde-roundtrip"])), 2);
    assert_eq!(code(&run(&["--kappa", "-1", "sde-roundtrip"])), 2);
    assert_eq!(code(&run(&["probe", "--dilations", "2,4"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["metrics", "--input", "a.ppm"])), 2);
    assert_eq!(code(&run(&["train-toy"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn io_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let img = dir.path().join("nope.ppm");
    let out = dir.path().join("o.ppm");
    let r = run(&[
        "--out",
        s(&out),
        "restore",
        "--checkpoint",
        s(&missing),
        "--input",
        s(&img),
    ]);
    assert_eq!(code(&r), 3);
    assert!(!r.stderr.is_empty());
    assert_eq!(code(&run(&["--config", s(&missing), "probe"])), 3);
    assert_eq!(
        code(&run(&[
            "metrics",
            "--input",
            s(&img),
            "--reference",
            s(&img)
        ])),
        3
    );

    // A file that is not a checkpoint.
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "{\"format\": \"other\"}").unwrap();
    let r = run(&[
        "--out",
        s(&out),
        "restore",
        "--checkpoint",
        s(&junk),
        "--input",
        s(&img),
    ]);
    assert_eq!(code(&r), 3);
}

#[test]
fn failed_probe_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = run(&["--config", s(&cfg), "probe", "--dilations", "2,4,4"]);
    assert_eq!(code(&out), 4);
    // The report is still written so the failure can be inspected.
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["result"]["ladder_passed"], false);
    assert_ne!(
        r["result"]["ladder"]["measured"],
        serde_json::json!([3, 7, 15, 31])
    );
}
