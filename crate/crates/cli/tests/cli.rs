use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use quantgf::experiments::ExperimentConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quantgf"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn ok(out: Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{stdout}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

const SMALL_DENOISE: &str = "scenario = 'denoise'\nseed = 3\ntrials = 8\niterations = 20\n\
    shift = 'scaled-laplacian'\n[graph]\ntype = 'random-geometric'\nnodes = 15\nradius = 0.5\n\
    [filter]\nweight = 0.25\norder = 4\n[sweep]\naxis = 'p'\nvalues = [0.8, 1.0]\n";

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn shipped_configs_parse_and_validate() {
    let mut seen = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let ext = path.extension().and_then(|e| e.to_str());
        if matches!(ext, Some("toml" | "json")) {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, SMALL_DENOISE).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(bin()
            .arg("run")
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(dir)
            .output()
            .unwrap());
    }
    let (fa, fb) = (read_dir(&a), read_dir(&b));
    assert!(fa.iter().any(|(n, _)| n == "manifest.json"));
    assert_eq!(fa, fb);
}

#[test]
fn seed_and_trials_overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, SMALL_DENOISE).unwrap();
    let out = tmp.path().join("o");
    ok(bin()
        .args(["run", "--seed", "42", "--trials", "3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 42);
    assert_eq!(summary["trials"], 3);
}

#[test]
fn bounds_passes_on_a_small_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(bin()
        .arg("bounds")
        .arg("--config")
        .arg(configs_dir().join("bounds-audit-quick.json"))
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap());
    assert!(!stdout.contains("VIOLATION"), "{stdout}");
    assert!(tmp.path().join("manifest.json").is_file());
}

#[test]
fn sweep_overrides_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, SMALL_DENOISE).unwrap();
    let out = tmp.path().join("o");
    ok(bin()
        .args(["sweep", "--axis", "chi", "--values", "6,10", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["values"], serde_json::json!([6.0, 10.0]));
}

#[test]
fn dataset_validate_reports_the_bundle() {
    let stdout = ok(bin()
        .args(["dataset", "validate", "--config"])
        .arg(configs_dir().join("interpolate-dataset.toml"))
        .output()
        .unwrap());
    assert!(stdout.contains("30 nodes"), "{stdout}");
    assert!(stdout.contains("8 snapshots"), "{stdout}");
}

#[test]
fn dataset_validate_rejects_ragged_signals() {
    let tmp = tempfile::tempdir().unwrap();
    let (c, s) = (tmp.path().join("c.csv"), tmp.path().join("s.csv"));
    fs::write(&c, "node,x,y\n0,0,0\n1,1,0\n2,0,1\n").unwrap();
    fs::write(&s, "1,2\n3\n4,5\n").unwrap();
    let out = bin()
        .args(["dataset", "validate", "--k", "1", "--coords"])
        .arg(&c)
        .arg("--signals")
        .arg(&s)
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn bad_config_exits_nonzero_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(
        &cfg,
        "scenario = 'denoise'\ntrials = 0\n[sweep]\naxis = 'K'\nvalues = [4]\n",
    )
    .unwrap();
    let out = bin().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
