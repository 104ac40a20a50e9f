use std::path::Path;
use std::process::{Command, Output};

fn dacml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dacml"))
        .arg("-q")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = dacml(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn exit_codes_separate_usage_from_data_errors() {
    assert_eq!(dacml(&["--help"]).status.code(), Some(0));
    assert_eq!(dacml(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(dacml(&["train", "--family", "GBM"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = dir.path().join("m.txt");
    let r = dacml(&[
        "train",
        "--features",
        p(&missing),
        "--family",
        "GBM",
        "--out",
        p(&out),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing.csv"));
    assert!(!out.exists());
}

#[test]
fn bad_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"synth": {"tracts": 50, "trcts": 3}}"#).unwrap();
    let r = dacml(&["synth", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn synthetic_corpus_flows_through_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (raw, ing, feat) = (d.join("raw"), d.join("ing"), d.join("feat"));
    ok(&[
        "synth",
        "--tracts",
        "240",
        "--history",
        "2016-2017",
        "--seed",
        "5",
        "--out",
        p(&raw),
    ]);
    for y in ["2016", "2017", "2018"] {
        let f = |k: &str| raw.join(format!("{k}_{y}.csv"));
        let mut args = vec![
            "ingest".to_string(),
            "--rac".into(),
            p(&f("lodes_rac")).into(),
            "--wac".into(),
            p(&f("lodes_wac")).into(),
            "--acs".into(),
            p(&f("acs")).into(),
            "--year".into(),
            y.into(),
            "--out".into(),
            p(&ing).into(),
        ];
        if y == "2018" {
            args.extend(["--dac".into(), p(&f("dac")).into()]);
        }
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
        ok(&[
            "features",
            "--input",
            p(&ing),
            "--year",
            y,
            "--variant",
            "v2b",
            "--out",
            p(&feat),
        ]);
    }
    let ingested = std::fs::read_to_string(ing.join("rac_2018.csv")).unwrap();
    assert_eq!(ingested.lines().count(), 241);

    let f2018 = feat.join("features_v2b_2018.csv");
    let aml = d.join("aml");
    ok(&[
        "automl",
        "--features",
        p(&f2018),
        "--budget",
        "6",
        "--families",
        "GBM,GLM",
        "--out",
        p(&aml),
    ]);
    let model = aml.join("model_v2b.txt");
    let board = std::fs::read_to_string(aml.join("leaderboard.csv")).unwrap();
    assert_eq!(board.lines().count(), 7);

    let eval = d.join("eval");
    ok(&[
        "evaluate",
        "--model",
        p(&model),
        "--features",
        p(&f2018),
        "--out",
        p(&eval),
    ]);
    let metrics = std::fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert!(metrics.contains("\nf1,"));

    let imp = d.join("importance.csv");
    ok(&["importance", "--model", p(&model), "--top", "5", "--out", p(&imp)]);
    assert_eq!(std::fs::read_to_string(&imp).unwrap().lines().count(), 6);

    let diag = d.join("diag");
    ok(&[
        "diagnose",
        "--model",
        p(&model),
        "--features",
        p(&f2018),
        "--dac",
        p(&ing.join("dac_2018.csv")),
        "--out",
        p(&diag),
    ]);

    let inf = d.join("inf");
    let feats: Vec<String> = ["2016", "2017", "2018"]
        .iter()
        .map(|y| p(&feat.join(format!("features_v2b_{y}.csv"))).to_string())
        .collect();
    let mut args = vec!["infer", "--model", p(&model), "--geojson"];
    let geo = raw.join("tracts.geojson");
    args.push(p(&geo));
    args.push("--out");
    args.push(p(&inf));
    args.push("--features");
    args.extend(feats.iter().map(String::as_str));
    ok(&args);
    let counts = std::fs::read_to_string(inf.join("counts.csv")).unwrap();
    assert_eq!(counts.lines().count(), 4);
    let geo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(inf.join("dac_2017.geojson")).unwrap()).unwrap();
    assert!(geo["features"][0]["properties"]["dac_pred"].is_boolean());

    let trend = d.join("trend.csv");
    let mut args = vec!["trend", "--counts"];
    let c = inf.join("counts.csv");
    args.extend([
        p(&c),
        "--importance",
        p(&imp),
        "--population",
        p(&ing),
        "--out",
        p(&trend),
        "--features",
    ]);
    args.extend(feats.iter().map(String::as_str));
    ok(&args);

    let report = ok(&[
        "report",
        "--from",
        p(&aml.join("grid.csv")),
        "--importance",
        p(&imp),
        "--diagnostics",
        p(&diag.join("rankings.csv")),
        "--counts",
        p(&c),
        "--trend",
        p(&trend),
    ]);
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.starts_with("# DAC classification report"));
    assert!(text.contains("| LI(R+W)+ACS |"));
    assert!(!text.contains("_No "), "{text}");

    let preds = d.join("preds.csv");
    ok(&[
        "predict",
        "--model",
        p(&model),
        "--features",
        &feats[0],
        "--out",
        p(&preds),
    ]);
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), 241);
    assert!(d.join("preds.csv.manifest.json").exists());
}

#[test]
fn manifest_reruns_reproduce_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&[
        "synth",
        "--tracts",
        "60",
        "--history",
        "2017",
        "--seed",
        "9",
        "--out",
        p(&a),
    ]);
    ok(&[
        "synth",
        "--config",
        p(&a.join("manifest.json")),
        "--workers",
        "2",
        "--out",
        p(&b),
    ]);
    for f in ["dac_2018.csv", "lodes_rac_2017.csv", "acs_2018.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "synth");
    assert_eq!(manifest["seed"], 9);
}
