use quantgf::experiments::{self, ExperimentConfig, Scenario, SweepAxis, TABLE_HEADER};
use quantgf::Error;

fn cfg(toml: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(toml).unwrap()
}

#[test]
fn defaults_are_filled_in() {
    let c = cfg("scenario = 'denoise'\n[sweep]\naxis = 'K'\nvalues = [4]\n");
    assert_eq!(c.trials, experiments::DEFAULT_TRIALS);
    assert_eq!(c.iterations, experiments::DEFAULT_ITERATIONS);
    assert_eq!(c.sweep.axis, SweepAxis::Order);
    c.validate().unwrap();
}

#[test]
fn unknown_fields_are_rejected() {
    let err = ExperimentConfig::from_toml_str(
        "scenario = 'lowpass'\ntrails = 3\n[sweep]\naxis = 'K'\nvalues = [4]\n",
    )
    .unwrap_err();
    assert!(err.to_string().contains("trails"), "{err}");
}

#[test]
fn json_and_toml_agree() {
    let t = cfg(
        "scenario = 'interpolate'\nseed = 9\n[sweep]\naxis = 'missing-fraction'\nvalues = [0.1]\n",
    );
    let j = ExperimentConfig::from_json_str(
        r#"{"scenario":"interpolate","seed":9,"sweep":{"axis":"missing-fraction","values":[0.1]}}"#,
    )
    .unwrap();
    assert_eq!(t, j);
    assert_eq!(t.config_hash().unwrap(), j.config_hash().unwrap());
}

#[test]
fn invalid_values_fail_validation() {
    for toml in [
        "scenario = 'lowpass'\n[sweep]\naxis = 'p'\nvalues = [0.5]\n",
        "scenario = 'denoise'\n[sweep]\naxis = 'p'\nvalues = [1.5]\n",
        "scenario = 'denoise'\n[sweep]\naxis = 'K'\nvalues = []\n",
        "scenario = 'interpolate'\nmissing_fraction = 1.0\n[sweep]\naxis = 'chi'\nvalues = [8]\n",
        "scenario = 'denoise'\n[res]\np = 0.9\n[sweep]\naxis = 'K'\nvalues = [4]\n",
        "scenario = 'lowpass'\n[quantization]\ndelta0 = -1.0\n[sweep]\naxis = 'K'\nvalues = [4]\n",
    ] {
        let c = ExperimentConfig::from_toml_str(toml);
        assert!(c.map_or(true, |c| c.validate().is_err()), "{toml}");
    }
}

#[test]
fn missing_files_are_reported() {
    let c = cfg(
        "scenario = 'interpolate'\n[dataset]\ncoords = '/nonexistent/c.csv'\nsignals = '/nonexistent/s.csv'\n\
         [sweep]\naxis = 'missing-fraction'\nvalues = [0.1]\n",
    );
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}

#[test]
fn scenario_names_round_trip() {
    for s in Scenario::ALL {
        assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
    }
    assert!("fig2".parse::<Scenario>().is_err());
}

#[test]
fn tables_use_the_fixed_header_and_finite_values() {
    let c = cfg(
        "scenario = 'interpolate'\ntrials = 10\niterations = 20\n[graph]\ntype = 'random-geometric'\n\
         nodes = 25\nradius = 0.4\n[sweep]\naxis = 'missing-fraction'\nvalues = [0.0, 0.2]\n",
    );
    let out = experiments::execute(&c).unwrap();
    assert!(!out.summary.tables.is_empty());
    for rows in out.summary.tables.values() {
        assert!(rows
            .iter()
            .all(|r| r.nse_mean.is_finite() && r.nse_mean >= 0.0));
    }
    let csv_name = out
        .files
        .keys()
        .find(|k| k.ends_with(".csv") && !k.contains("trajectory"))
        .unwrap();
    let first_line = out.files[csv_name].split(|b| *b == b'\n').next().unwrap();
    assert_eq!(first_line, TABLE_HEADER.join(",").as_bytes());
}

#[test]
fn manifest_hashes_every_file() {
    let c = cfg(
        "scenario = 'bounds-audit'\ntrials = 20\niterations = 15\n[graph]\ntype = 'random-geometric'\n\
         nodes = 12\nradius = 0.6\n[sweep]\naxis = 'K'\nvalues = [2]\n",
    );
    let out = experiments::execute(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = experiments::write_outputs(&out, &c, dir.path()).unwrap();
    assert_eq!(manifest.seed, c.seed);
    assert_eq!(manifest.config_sha256, c.config_hash().unwrap());
    for name in out.files.keys() {
        assert!(manifest.files.contains_key(name), "{name}");
        assert!(dir.path().join(name).is_file());
    }
    assert!(dir.path().join("summary.json").is_file());
    assert!(dir.path().join("manifest.json").is_file());
    assert_eq!(out.summary.violations, 0);
}

#[test]
fn audit_refuses_large_graphs() {
    let c = cfg(
        "scenario = 'bounds-audit'\ntrials = 5\n[graph]\ntype = 'random-geometric'\nnodes = 60\n\
         [sweep]\naxis = 'K'\nvalues = [2]\n",
    );
    assert!(experiments::execute(&c).is_err());
}

#[test]
fn dataset_bundle_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let coords = "node,x,y\n0,0,0\n1,1,0\n2,2,0\n3,3,0\n";
    let signals = "1,2\n2,3\n3,4\n4,5\n";
    let mask = "1,1\n0,1\n1,0\n1,1\n";
    for (name, body) in [("c.csv", coords), ("s.csv", signals), ("m.csv", mask)] {
        std::fs::write(dir.path().join(name), body).unwrap();
    }
    let d = experiments::DatasetConfig {
        coords: dir.path().join("c.csv"),
        signals: dir.path().join("s.csv"),
        mask: Some(dir.path().join("m.csv")),
        k: 1,
    };
    let b = experiments::DatasetBundle::load(&d).unwrap();
    assert_eq!(b.node_count(), 4);
    assert_eq!(b.snapshots(), 2);
    assert!(!b.mask[1][0] && b.mask[1][1]);
}
