use std::path::Path;
use std::process::{Command, Output};

use lesiongen::io;

fn lesiongen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lesiongen")).args(args).env_remove("LESIONGEN_CONFIG").output().unwrap()
}

fn ok(args: &[&str]) {
    let out = lesiongen(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn make_phantom(dir: &Path, extra: &[&str]) {
    let mut args = vec!["phantom", "--seed", "7", "--out-dir", s(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap();
    serde_json::from_str(line).unwrap()
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let ph = root.join("phantoms");
    make_phantom(&ph, &[]);
    let subj = ph.join("phantom_7");
    let file = |n: &str| subj.join(n);
    assert!(ph.join("manifest.toml").exists());

    let bank = root.join("bank");
    ok(&["make-masks", "--flair", s(&file("flair.nii.gz")), "--brain", s(&file("brain.nii.gz")), "--gm", s(&file("gm.nii.gz")), "--out-dir", s(&bank)]);
    assert!(bank.join("il_8.nii.gz").exists());

    let fill = root.join("fill");
    ok(&[
        "fill",
        "--t1",
        s(&file("t1.nii.gz")),
        "--flair",
        s(&file("flair.nii.gz")),
        "--brain",
        s(&file("brain.nii.gz")),
        "--wm",
        s(&file("wm.nii.gz")),
        "--bank-dir",
        s(&bank),
        "--out-dir",
        s(&fill),
    ]);
    for n in ["filled_t1.nii.gz", "filled_flair.nii.gz", "normalization.json", "fill_report.json", "provenance.json"] {
        assert!(fill.join(n).exists(), "{n}");
    }

    let config = root.join("gen.toml");
    std::fs::write(&config, "patch_size = 16\npatch_stride = 16\nbase_width = 2\nlatent_channels = 4\nlevels = 2\nbatch_size = 16\nmax_epochs = 2\npatience = 2\n").unwrap();
    let train = root.join("train");
    ok(&["train", "--manifest", s(&ph.join("manifest.toml")), "--config", s(&config), "--seed", "3", "--out-dir", s(&train)]);
    let model = train.join("model.lgm");
    assert!(model.exists());
    let history = std::fs::read_to_string(train.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let synth = root.join("synth");
    ok(&["synthesize", "--model", s(&model), "--fill-dir", s(&fill), "--bank-dir", s(&bank), "--brain", s(&file("brain.nii.gz")), "--out-dir", s(&synth)]);
    let (generated, _) = io::read_volume(synth.join("synthetic_flair.nii.gz")).unwrap();
    let (real, _) = io::read_volume(file("flair.nii.gz")).unwrap();
    assert_eq!(generated.dims(), real.dims());

    let graft = root.join("graft");
    ok(&[
        "transplant",
        "--model",
        s(&model),
        "--fill-dir",
        s(&fill),
        "--bank-dir",
        s(&bank),
        "--brain",
        s(&file("brain.nii.gz")),
        "--source-lesion",
        s(&file("lesion.nii.gz")),
        "--source-bank-dir",
        s(&bank),
        "--out-dir",
        s(&graft),
    ]);
    let (lesion, _) = io::read_mask(graft.join("lesion.nii.gz")).unwrap();
    let (source, _) = io::read_mask(file("lesion.nii.gz")).unwrap();
    assert_eq!(lesion, source);

    let eval = root.join("eval");
    ok(&[
        "evaluate",
        "--generated",
        s(&synth.join("synthetic_flair.nii.gz")),
        "--real",
        s(&file("flair.nii.gz")),
        "--brain",
        s(&file("brain.nii.gz")),
        "--out-dir",
        s(&eval),
    ]);
    let metrics = std::fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert!(metrics.lines().any(|l| l.contains(",brain,ssim,")), "{metrics}");

    let png = root.join("render/flair.png");
    ok(&["render", "--volume", s(&file("flair.nii.gz")), "--outline", s(&file("lesion.nii.gz")), "--slices", "3,4", "--out", s(&png)]);
    assert!(png.exists());

    let prov: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(train.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["subcommand"], "train");
    assert_eq!(prov["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn fill_with_empty_mask_copies_input() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let ph = root.join("ph");
    make_phantom(&ph, &["--lesion-free"]);
    let subj = ph.join("phantom_7");
    let flair = subj.join("flair.nii.gz");
    let t1 = subj.join("t1.nii.gz");
    let bank = root.join("bank");
    // a threshold far above every intensity leaves every band empty
    ok(&["make-masks", "--flair", s(&flair), "--gammas", "1000", "--out-dir", s(&bank)]);
    let fill = root.join("fill");
    ok(&["fill", "--t1", s(&t1), "--flair", s(&flair), "--bank-dir", s(&bank), "--out-dir", s(&fill)]);
    for (orig, filled) in [(&t1, "filled_t1.nii.gz"), (&flair, "filled_flair.nii.gz")] {
        let (a, _) = io::read_volume(orig).unwrap();
        let (b, _) = io::read_volume(fill.join(filled)).unwrap();
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn evaluate_ground_truth_against_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    make_phantom(&ph, &[]);
    let lesion = ph.join("phantom_7/lesion.nii.gz");
    let out = tmp.path().join("eval");
    ok(&["evaluate", "--seg", s(&lesion), "--gt", s(&lesion), "--image-id", "p7", "--out-dir", s(&out)]);
    let text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let value = |metric: &str| rows.iter().find(|r| &r[2] == metric).unwrap()[3].parse::<f64>().unwrap();
    assert_eq!(value("dsc"), 1.0);
    assert_eq!(value("sensitivity"), 1.0);
    assert_eq!(value("precision"), 1.0);
    assert!(rows.iter().all(|r| &r[0] == "p7"));
}

#[test]
fn missing_input_exits_with_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lesiongen(&["make-masks", "--flair", s(&tmp.path().join("nope.nii.gz")), "--out-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["error"], "missing_input");
    assert_eq!(err["exit_code"], 3);
}

#[test]
fn bad_arguments_exit_with_code_2() {
    let out = lesiongen(&["fill", "--t1", "a.nii"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn invalid_config_exits_with_code_6() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    std::fs::write(&config, "no_such_field = 1\n").unwrap();
    let out = lesiongen(&["phantom", "--config", s(&config), "--out-dir", s(&tmp.path().join("ph"))]);
    assert_eq!(out.status.code(), Some(6));
    assert_eq!(error_json(&out)["error"], "invalid_config");
}
