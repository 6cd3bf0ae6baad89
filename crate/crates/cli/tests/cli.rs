use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stac(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stac"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("stac runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn make_phantom(dir: &Path) {
    let out = stac(
        dir,
        &[
            "phantom",
            "--preset",
            "multi_organ",
            "--dims",
            "64,64,64",
            "--seed",
            "3",
            "--out-image",
            "img.mhd",
            "--out-label",
            "lab.mhd",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn zero_alpha_outputs_match_inputs() {
    let dir = tempfile::tempdir().unwrap();
    make_phantom(dir.path());
    fs::create_dir(dir.path().join("out")).unwrap();
    let out = stac(
        dir.path(),
        &[
            "augment",
            "--image",
            "img.mhd",
            "--label",
            "lab.mhd",
            "--minority",
            "2",
            "--alpha",
            "0",
            "--out-image",
            "out/img.mhd",
            "--out-label",
            "out/lab.mhd",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["img.mhd", "img.raw", "lab.mhd", "lab.raw"] {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(dir.path().join("out").join(name)).unwrap(),
            "{name}"
        );
    }
    let sidecar: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/lab.provenance.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["minority"], serde_json::json!([2]));
    assert_eq!(sidecar["params"]["alpha"], 0.0);
    assert_eq!(
        sidecar["sources"]["image_sha256"].as_str().unwrap().len(),
        64
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    make_phantom(dir.path());
    let absent = stac(
        dir.path(),
        &[
            "augment",
            "--image",
            "img.mhd",
            "--label",
            "lab.mhd",
            "--minority",
            "99",
            "--out-image",
            "a.mhd",
            "--out-label",
            "b.mhd",
        ],
    );
    assert_eq!(code(&absent), 3);
    assert!(!dir.path().join("a.mhd").exists());

    let missing = stac(
        dir.path(),
        &[
            "augment",
            "--image",
            "nope.mhd",
            "--label",
            "lab.mhd",
            "--minority",
            "2",
            "--out-image",
            "a.mhd",
            "--out-label",
            "b.mhd",
        ],
    );
    assert_eq!(code(&missing), 2);

    let swapped = stac(
        dir.path(),
        &[
            "augment",
            "--image",
            "lab.mhd",
            "--label",
            "lab.mhd",
            "--minority",
            "2",
            "--out-image",
            "a.mhd",
            "--out-label",
            "b.mhd",
        ],
    );
    assert_eq!(code(&swapped), 2);

    assert_eq!(
        code(&stac(dir.path(), &["augment", "--image", "img.mhd"])),
        1
    );
    assert_eq!(code(&stac(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&stac(dir.path(), &["--help"])), 0);
    let no_policy = stac(
        dir.path(),
        &[
            "augment",
            "--image",
            "img.mhd",
            "--label",
            "lab.mhd",
            "--out-image",
            "a.mhd",
            "--out-label",
            "b.mhd",
        ],
    );
    assert_eq!(code(&no_policy), 1);
    let bad_beta = stac(
        dir.path(),
        &[
            "augment",
            "--image",
            "img.mhd",
            "--label",
            "lab.mhd",
            "--minority",
            "2",
            "--beta",
            "1",
            "--out-image",
            "a.mhd",
            "--out-label",
            "b.mhd",
        ],
    );
    assert_eq!(code(&bad_beta), 3);
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = stac(dir.path(), &["verify"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{text}");
    assert_eq!(text.matches("PASS").count(), 4);
}

#[test]
fn stats_and_metrics_reports() {
    let dir = tempfile::tempdir().unwrap();
    make_phantom(dir.path());
    let out = stac(
        dir.path(),
        &["stats", "--label", "lab.mhd", "--json", "stats.json"],
    );
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(dir.path().join("stats.json")).unwrap();
    let keys: Vec<usize> = [
        "\"counts\"",
        "\"fractions\"",
        "\"imbalance_ratio\"",
        "\"minority\"",
    ]
    .iter()
    .map(|k| text.find(k).unwrap())
    .collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
    let stats: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(stats["minority"], serde_json::json!([2]));
    assert_eq!(stats["counts"]["2"], 895);

    let out = stac(
        dir.path(),
        &[
            "metrics",
            "--pred",
            "lab.mhd",
            "--ref",
            "lab.mhd",
            "--classes",
            "1,2,9",
            "--json",
            "m.json",
        ],
    );
    assert_eq!(code(&out), 0);
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(m["dice"]["1"], 1.0);
    assert_eq!(m["asd_mm"]["2"], 0.0);
    assert!(m["asd_mm"]["9"].is_null());
}

#[test]
fn supplied_sdf_matches_label_path() {
    let dir = tempfile::tempdir().unwrap();
    make_phantom(dir.path());
    let run = |args: &[&str]| {
        let out = stac(dir.path(), args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&[
        "sdf",
        "--label",
        "lab.mhd",
        "--classes",
        "2",
        "--centered",
        "--out",
        "phi.mhd",
    ]);
    run(&[
        "augment",
        "--image",
        "img.mhd",
        "--label",
        "lab.mhd",
        "--minority",
        "2",
        "--out-image",
        "a_img.mhd",
        "--out-label",
        "a_lab.mhd",
    ]);
    run(&[
        "augment",
        "--image",
        "img.mhd",
        "--label",
        "lab.mhd",
        "--sdf-in",
        "phi.mhd",
        "--out-image",
        "b_img.mhd",
        "--out-label",
        "b_lab.mhd",
    ]);
    for (a, b) in [("a_img.raw", "b_img.raw"), ("a_lab.raw", "b_lab.raw")] {
        assert_eq!(
            fs::read(dir.path().join(a)).unwrap(),
            fs::read(dir.path().join(b)).unwrap()
        );
    }
    let sidecar = fs::read_to_string(dir.path().join("b_lab.provenance.json")).unwrap();
    assert!(sidecar.contains("\"sdf_source\": \"supplied\""));
}

#[test]
fn shrink_flags_agree() {
    let dir = tempfile::tempdir().unwrap();
    make_phantom(dir.path());
    for (flag, prefix) in [("--shrink", "s"), ("--literal-eq4-sign", "l")] {
        let img = format!("{prefix}_img.mhd");
        let lab = format!("{prefix}_lab.mhd");
        let out = stac(
            dir.path(),
            &[
                "augment",
                "--image",
                "img.mhd",
                "--label",
                "lab.mhd",
                "--minority",
                "2",
                flag,
                "--out-image",
                &img,
                "--out-label",
                &lab,
            ],
        );
        assert_eq!(code(&out), 0);
    }
    assert_eq!(
        fs::read(dir.path().join("s_lab.raw")).unwrap(),
        fs::read(dir.path().join("l_lab.raw")).unwrap()
    );
    let original = fs::read(dir.path().join("lab.raw")).unwrap();
    let shrunk = fs::read(dir.path().join("s_lab.raw")).unwrap();
    let count = |v: &[u8]| v.iter().filter(|&&c| c == 2).count();
    assert!(count(&shrunk) < count(&original));
}
