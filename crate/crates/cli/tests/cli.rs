use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lobpredict_core::itch::{write_framed, MessageBody, Side, Symbol};
use lobpredict_core::ItchMessage;

const BIN: &str = env!("CARGO_BIN_EXE_lobpredict");

/// A five-day synthetic experiment small enough to train in seconds.
const TINY: &str = r#"
variant = "level1"
train_days = 2
scaler_days = 2
train_stride = 4

[data]
kind = "synth"

[data.config]
n_days = 5
events_per_day = 400
seed = 3
signal_beta = 1.0
activity = 0.4

[policy]
k = 5
k_prime = 5
window = 20

[model]
kind = "network"

[model.widths]
conv = 2
inception = 2
lstm = 3
dropout = 0.2

[train]
epochs = 1
batch_size = 32
seed = 5
"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path.display().to_string()
}

#[test]
fn config_prints_overrides() {
    let text = ok(&[
        "config",
        "--set",
        "train.epochs=7",
        "--set",
        "variant=prices_only",
    ]);
    assert!(text.contains("epochs = 7"), "{text}");
    assert!(text.contains("variant = \"prices_only\""), "{text}");
}

#[test]
fn bad_override_is_reported() {
    let out = run(&["config", "--set", "no_such_key=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
    let out = run(&["config", "--set", "train_days"]);
    assert!(!out.status.success());
}

#[test]
fn synth_then_run_on_snapshots_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let data = tmp.path().join("data");
    ok(&["synth", "-c", &cfg, "-o", data.to_str().unwrap()]);
    let csvs = fs::read_dir(&data)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 5);
    assert!(data.join("manifest.json").exists());

    let out = tmp.path().join("out");
    let table = ok(&[
        "run",
        "-c",
        &cfg,
        "--set",
        "data.kind=snapshots",
        "--set",
        &format!("data.dir={:?}", data.display().to_string()),
        "--set",
        &format!("output_dir={:?}", out.display().to_string()),
    ]);
    assert!(table.contains("Daily average"), "{table}");
    assert_eq!(fs::read_to_string(out.join("aggregate.txt")).unwrap(), table);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 5);
    assert_eq!(manifest["evaluated"].as_array().unwrap().len(), 1);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    let report = ok(&["report", out.to_str().unwrap()]);
    assert_eq!(report, table);
    let json = ok(&["report", "--json", out.to_str().unwrap()]);
    let back: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(
        back,
        serde_json::from_str::<serde_json::Value>(&fs::read_to_string(out.join("aggregate.json")).unwrap())
            .unwrap()
    );
}

#[test]
fn compare_writes_one_tree_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("cmp");
    let table = ok(&[
        "compare",
        "-c",
        &cfg,
        "--variants",
        "prices_only,level1",
        "--set",
        &format!("output_dir={:?}", out.display().to_string()),
    ]);
    assert!(table.contains("Prices & volumes"), "{table}");
    assert_eq!(fs::read_to_string(out.join("comparison.txt")).unwrap(), table);
    for v in ["prices_only", "level1"] {
        assert!(out.join(v).join("manifest.json").exists());
    }
    let side_by_side = ok(&[
        "report",
        out.join("prices_only").to_str().unwrap(),
        out.join("level1").to_str().unwrap(),
    ]);
    assert!(side_by_side.contains("prices_only") && side_by_side.contains("level1"));
}

#[test]
fn label_exports_archives() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("labels");
    ok(&["label", "-c", &cfg, "-o", out.to_str().unwrap()]);
    let archives = fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "samples")
        })
        .count();
    assert_eq!(archives, 3);
}

#[test]
fn ingest_replays_one_symbol() {
    let tmp = tempfile::tempdir().unwrap();
    let open = (9 * 3600 + 30 * 60) * 1_000_000_000u64;
    let add = |locate, r, side, price, sym: &str, t| {
        ItchMessage::new(
            locate,
            0,
            open + t,
            MessageBody::AddOrder {
                order_ref: r,
                side,
                shares: 100,
                symbol: Symbol::new(sym).unwrap(),
                price,
            },
        )
        .unwrap()
    };
    let msgs = [
        add(1, 1, Side::Bid, 99_0000, "AAPL", 1),
        add(2, 2, Side::Bid, 50_0000, "MSFT", 2),
        add(1, 3, Side::Ask, 101_0000, "AAPL", 3),
        add(1, 4, Side::Bid, 100_0000, "AAPL", 4),
        ItchMessage::new(1, 0, open + 5, MessageBody::OrderDelete { order_ref: 4 }).unwrap(),
    ];
    let mut bytes = Vec::new();
    for m in &msgs {
        write_framed(&mut bytes, m);
    }
    let input = tmp.path().join("2022-01-03.itch");
    fs::write(&input, bytes).unwrap();
    let csv = ok(&["ingest", input.to_str().unwrap(), "--symbol", "AAPL"]);
    let lines: Vec<&str> = csv.lines().collect();
    // Header plus one row per top-of-book change.
    assert_eq!(lines.len(), 5, "{csv}");
    assert!(lines[0].starts_with("ts_ns,ask_px_1"));
    assert!(lines[3].contains("1000000"));
    let out = tmp.path().join("day.csv");
    ok(&[
        "ingest",
        input.to_str().unwrap(),
        "-s",
        "AAPL",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(fs::read_to_string(out).unwrap(), csv);
}

#[test]
fn readme_config_block_is_the_default() {
    let readme = include_str!("../../../README.md");
    let block = readme
        .split("```toml\n")
        .nth(1)
        .and_then(|rest| rest.split("```").next())
        .expect("README has a toml block");
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("readme.toml");
    fs::write(&path, block).unwrap();
    assert_eq!(ok(&["config", "-c", path.to_str().unwrap()]), ok(&["config"]));
}
