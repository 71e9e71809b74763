use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fqpe_core::dic::CorrectionOrder;
use fqpe_core::harness::{read_png, synthetic_corpus, write_png};
use fqpe_core::pipeline::{
    count_params, estimate_flops, init_weights, load_weights, save_weights, RunConfig,
};
use serde_json::Value;

fn fqpe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fqpe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn image(&self, name: &str, size: usize) -> PathBuf {
        let p = self.path(name);
        write_png(&p, &synthetic_corpus(1, size, 77).remove(0)).unwrap();
        p
    }

    fn weights(&self, name: &str, levels: usize) -> PathBuf {
        let p = self.path(name);
        let cfg = RunConfig {
            levels,
            ..RunConfig::default()
        };
        save_weights(&init_weights(3, &cfg).unwrap(), &p).unwrap();
        p
    }

    fn corpus(&self, n: usize, size: usize) -> PathBuf {
        let d = self.path("corpus");
        std::fs::create_dir_all(&d).unwrap();
        for (i, img) in synthetic_corpus(n, size, 5).iter().enumerate() {
            write_png(&d.join(format!("{i:02}.png")), img).unwrap();
        }
        d
    }
}

#[test]
fn enhance_writes_image_of_input_size() {
    let f = Fixture::new();
    let input = f.image("in.png", 24);
    let w = f.weights("w.fqpe", 3);
    let out = f.path("out.png");
    let r = fqpe(&[
        "enhance",
        "--in",
        s(&input),
        "--out",
        s(&out),
        "--weights",
        s(&w),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_eq!(read_png(&out).unwrap().shape(), &[3, 24, 24]);
}

#[test]
fn bypass_round_trips_pixels() {
    let f = Fixture::new();
    let input = f.image("in.png", 20);
    let out = f.path("out.png");
    let r = fqpe(&[
        "enhance",
        "--in",
        s(&input),
        "--out",
        s(&out),
        "--levels",
        "0",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_eq!(read_png(&out).unwrap(), read_png(&input).unwrap());
}

#[test]
fn weights_errors_use_code_three() {
    let f = Fixture::new();
    let input = f.image("in.png", 16);
    let out = f.path("out.png");
    let missing = f.path("missing.fqpe");
    let r = fqpe(&[
        "enhance",
        "--in",
        s(&input),
        "--out",
        s(&out),
        "--weights",
        s(&missing),
    ]);
    assert_eq!(code(&r), 3);
    assert_eq!(stderr(&r).trim().lines().count(), 1);

    let junk = f.path("junk.fqpe");
    std::fs::write(&junk, b"not a weights file").unwrap();
    let r = fqpe(&[
        "enhance",
        "--in",
        s(&input),
        "--out",
        s(&out),
        "--weights",
        s(&junk),
    ]);
    assert_eq!(code(&r), 3);

    let r = fqpe(&["enhance", "--in", s(&input), "--out", s(&out)]);
    assert_eq!(code(&r), 3);
    assert!(!out.exists());
}

#[test]
fn unreadable_input_uses_code_two() {
    let f = Fixture::new();
    let w = f.weights("w.fqpe", 2);
    let bad = f.path("bad.png");
    std::fs::write(&bad, b"garbage").unwrap();
    let r = fqpe(&[
        "enhance",
        "--in",
        s(&bad),
        "--out",
        s(&f.path("o.png")),
        "--weights",
        s(&w),
    ]);
    assert_eq!(code(&r), 2);
    let r = fqpe(&[
        "enhance",
        "--in",
        s(&f.path("none.png")),
        "--out",
        s(&f.path("o.png")),
        "--weights",
        s(&w),
    ]);
    assert_eq!(code(&r), 2);
}

#[test]
fn flag_conflicts_use_code_four() {
    let f = Fixture::new();
    let input = f.image("in.png", 16);
    let w = f.weights("w.fqpe", 2);
    let out = s(&f.path("o.png")).to_string();
    let r = fqpe(&[
        "enhance",
        "--in",
        s(&input),
        "--out",
        &out,
        "--weights",
        s(&w),
        "--levels",
        "3",
    ]);
    assert_eq!(code(&r), 4);
    let r = fqpe(&[
        "enhance",
        "--in",
        s(&input),
        "--out",
        &out,
        "--weights",
        s(&w),
        "--levels",
        "0",
    ]);
    assert_eq!(code(&r), 4);
    let r = fqpe(&[
        "enhance",
        "--in",
        s(&input),
        "--out",
        &out,
        "--weights",
        s(&w),
        "--order",
        "local_to_global",
    ]);
    assert_eq!(code(&r), 4);
    let cfg = f.path("run.json");
    std::fs::write(&cfg, r#"{"levels": 5}"#).unwrap();
    let r = fqpe(&[
        "enhance",
        "--in",
        s(&input),
        "--out",
        &out,
        "--weights",
        s(&w),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(code(&r), 4);
    let r = fqpe(&[
        "enhance",
        "--in",
        s(&input),
        "--out",
        &out,
        "--weights",
        s(&w),
        "--levels",
        "2",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
}

#[test]
fn unknown_flags_are_rejected() {
    assert_eq!(code(&fqpe(&["info", "--nonsense"])), 2);
    assert_eq!(code(&fqpe(&["info", "--levels", "7"])), 2);
}

fn info_json(args: &[&str]) -> Value {
    let mut full = vec!["info", "--json"];
    full.extend_from_slice(args);
    let r = fqpe(&full);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    serde_json::from_slice(&r.stdout).unwrap()
}

#[test]
fn info_matches_library_accounting() {
    let f = Fixture::new();
    let w = f.weights("w.fqpe", 4);
    let v = info_json(&["--weights", s(&w)]);
    let lib = load_weights(&w).unwrap();
    let p = count_params(&lib);
    let fl = estimate_flops(&lib, (256, 192)).unwrap();
    assert_eq!(v["params"]["dic"], p.dic);
    assert_eq!(v["params"]["mld"], p.mld);
    assert_eq!(v["params"]["total"], p.total);
    assert_eq!(v["gflops"]["total"].as_f64().unwrap(), fl.total);
    assert_eq!(v["gflops"]["dic"].as_f64().unwrap(), fl.dic);

    let bigger = info_json(&["--weights", s(&w), "--resolution", "512x384"]);
    assert_eq!(bigger["params"], v["params"]);
    assert!(
        bigger["gflops"]["total"].as_f64().unwrap() > 3.9 * v["gflops"]["total"].as_f64().unwrap()
    );

    let text = fqpe(&["info", "--weights", s(&w)]);
    assert!(String::from_utf8_lossy(&text.stdout).contains(&format!("total {}", p.total)));
    assert_eq!(code(&fqpe(&["info", "--weights", s(&f.path("nope"))])), 3);
}

#[test]
fn degrade_identity_settings_keep_pixels() {
    let f = Fixture::new();
    let input = f.image("in.png", 16);
    let out = f.path("d.png");
    let r = fqpe(&[
        "degrade",
        "--in",
        s(&input),
        "--out",
        s(&out),
        "--darken",
        "1",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_eq!(read_png(&out).unwrap(), read_png(&input).unwrap());
    let r = fqpe(&[
        "degrade",
        "--in",
        s(&input),
        "--out",
        s(&out),
        "--darken",
        "9",
    ]);
    assert_eq!(code(&r), 2);
}

fn train_args<'a>(corpus: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "train",
        "--corpus",
        corpus,
        "--out",
        out,
        "--levels",
        "2",
        "--epochs",
        "2",
        "--batch-size",
        "2",
        "--seed",
        "9",
    ];
    v.extend_from_slice(extra);
    v
}

#[test]
fn train_is_reproducible_and_logs_json() {
    let f = Fixture::new();
    let corpus = f.corpus(6, 16);
    let (a, b) = (f.path("a.fqpe"), f.path("b.fqpe"));
    let r = fqpe(&train_args(s(&corpus), s(&a), &["--single-thread"]));
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let lines: Vec<Value> = String::from_utf8_lossy(&r.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i + 1);
        assert!(l["loss"].is_f64() && l["psnr"].is_f64());
    }
    let r = fqpe(&train_args(s(&corpus), s(&b), &["--single-thread"]));
    assert_eq!(code(&r), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let w = load_weights(&a).unwrap();
    assert_eq!((w.levels, w.order), (2, CorrectionOrder::GlobalToLocal));
}

#[test]
fn train_config_errors_use_code_two() {
    let f = Fixture::new();
    let corpus = f.corpus(2, 16);
    let out = f.path("w.fqpe");
    let cfg = f.path("c.json");
    std::fs::write(&cfg, "{ this is not json").unwrap();
    assert_eq!(
        code(&fqpe(&train_args(
            s(&corpus),
            s(&out),
            &["--config", s(&cfg)]
        ))),
        2
    );
    std::fs::write(&cfg, r#"{"learning_rate": 1}"#).unwrap();
    assert_eq!(
        code(&fqpe(&train_args(
            s(&corpus),
            s(&out),
            &["--config", s(&cfg)]
        ))),
        2
    );
    let empty = f.path("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(code(&fqpe(&train_args(s(&empty), s(&out), &[]))), 2);
    assert!(!out.exists());
}

#[test]
fn divergent_training_uses_code_five() {
    let f = Fixture::new();
    let corpus = f.corpus(8, 16);
    let out = f.path("w.fqpe");
    let r = fqpe(&train_args(s(&corpus), s(&out), &["--lr", "1e30"]));
    assert_eq!(code(&r), 5, "{}", stderr(&r));
    assert!(!out.exists());
}

#[test]
fn evaluate_bypass_reports_equal_psnr() {
    let f = Fixture::new();
    let corpus = f.corpus(6, 16);
    let csv_path = f.path("eval.csv");
    let r = fqpe(&[
        "evaluate",
        "--levels",
        "0",
        "--corpus",
        s(&corpus),
        "--all",
        "--out",
        s(&csv_path),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let mut rd = csv::Reader::from_path(&csv_path).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    let counts: usize = rows[..3]
        .iter()
        .map(|r| r[1].parse::<usize>().unwrap())
        .sum();
    assert_eq!(counts, 6);
    for row in &rows {
        assert_eq!(&row[2], &row[3]);
    }
}

#[test]
fn ablate_emits_grid_matching_info() {
    let f = Fixture::new();
    let corpus = f.corpus(4, 32);
    let csv_path = f.path("ablate.csv");
    let r = fqpe(&[
        "ablate",
        "--corpus",
        s(&corpus),
        "--epochs",
        "1",
        "--batch-size",
        "3",
        "--single-thread",
        "--resolution",
        "64x48",
        "--out",
        s(&csv_path),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let mut rd = csv::Reader::from_path(&csv_path).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.iter().filter(|r| &r[0] == "depth").count(), 6);
    assert_eq!(rows.iter().filter(|r| &r[0] == "order").count(), 2);
    for row in &rows {
        let v = info_json(&[
            "--levels",
            &row[1],
            "--order",
            &row[2],
            "--resolution",
            "64x48",
        ]);
        assert_eq!(
            row[5].parse::<u64>().unwrap(),
            v["params"]["total"].as_u64().unwrap()
        );
        assert_eq!(
            row[8].parse::<f64>().unwrap(),
            v["gflops"]["total"].as_f64().unwrap()
        );
    }
}

#[test]
fn gradcheck_subset_passes() {
    let r = fqpe(&["gradcheck", "--points", "2", "--filter", "conv2d"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let out = String::from_utf8_lossy(&r.stdout);
    assert_eq!(out.lines().count(), 3);
    assert!(out.lines().all(|l| l.ends_with("PASS")));
    assert!(stderr(&r).contains("worst:"));
    assert_eq!(code(&fqpe(&["gradcheck", "--filter", "no_such_check"])), 2);
}

#[test]
fn init_and_gen_corpus_write_files() {
    let f = Fixture::new();
    let w = f.path("w.fqpe");
    let r = fqpe(&["init", "--out", s(&w), "--levels", "3", "--seed", "4"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let cfg = RunConfig {
        levels: 3,
        ..RunConfig::default()
    };
    assert_eq!(load_weights(&w).unwrap(), init_weights(4, &cfg).unwrap());
    let d = f.path("corpus");
    assert_eq!(code(&fqpe(&["gen-corpus", "--out", s(&d)])), 0);
    assert_eq!(std::fs::read_dir(&d).unwrap().count(), 64);
}
