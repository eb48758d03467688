#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_culturebridge");

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .env_remove("CULTUREBRIDGE_JOBS")
        .output()
        .expect("spawn culturebridge")
}

pub fn run_ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "culturebridge {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

const STEPS: [u64; 3] = [100, 200, 300];

/// Runs every artifact-producing subcommand over the desk fixture in `dir`.
pub fn desk_pipeline(dir: &Path, jobs: &str) {
    run_ok(dir, &["fixture", "desk", "--seed", "11", "--out", "."]);
    let c = |rest: &[&str]| {
        let mut args = vec!["--config", "config.json", "--jobs", jobs];
        args.extend_from_slice(rest);
        run_ok(dir, &args);
    };
    c(&["filter", "--corpus", "en", "--out", "out/en.ndjson"]);
    c(&["filter", "--corpus", "ko", "--out", "out/ko.ndjson"]);
    for mode in ["bridged", "unbridged"] {
        let out = format!("out/{mode}.ndjson");
        c(&["bridge", "--mono", "out/en.ndjson", "out/ko.ndjson", "--mode", mode, "--out", &out]);
    }
    c(&["train-ngram", "--input", "out/en.ndjson", "--order", "4", "--out", "models/base.json"]);
    for (setting, mode) in [("bridge", "bridged"), ("no_bridge", "unbridged")] {
        let data = format!("out/{mode}.ndjson");
        let n = std::fs::read_to_string(dir.join(&data)).unwrap().lines().count();
        for step in STEPS {
            let take = (n as u64 * step / 300).to_string();
            let model = format!("models/{setting}-{step}.json");
            c(&["train-ngram", "--input", &data, "--order", "4", "--take", &take, "--out", &model]);
        }
    }
    for setting in ["bridge", "no_bridge"] {
        for step in [0].into_iter().chain(STEPS) {
            for lang in ["en", "ko"] {
                let out = format!("out/runs/{setting}-{step}-{lang}.json");
                c(&["eval", "--setting", setting, "--step", &step.to_string(), "--lang", lang, "--out", &out]);
            }
        }
    }
    let runs = eval_runs(dir);
    let mut report = vec!["report", "--out-dir", "out/report", "--runs"];
    report.extend(runs.iter().map(String::as_str));
    c(&report);

    for lang in ["en", "ko"] {
        let corpus = format!("out/{lang}.ndjson");
        let chunks = format!("out/{lang}.chunks.ndjson");
        let index = format!("out/{lang}.index.json");
        let hits = format!("out/{lang}.hits.ndjson");
        let judgments = format!("out/{lang}.judgments.ndjson");
        let density = format!("out/{lang}.density.json");
        let manifest = format!("out/{lang}.ndjson.manifest.json");
        c(&["chunk", "--input", &corpus, "--out", &chunks]);
        c(&["index", "--chunks", &chunks, "--lang", lang, "--out", &index]);
        c(&["search", "--index", &index, "--out", &hits]);
        c(&["judge", "--index", &index, "--hits", &hits, "--out", &judgments]);
        c(&["density", "--hits", &hits, "--judgments", &judgments, "--manifest", &manifest, "--out", &density]);
    }
    c(&["report", "--out-dir", "out/report", "--density", "out/en.density.json", "out/ko.density.json"]);
    let mut transfer = vec![
        "transfer",
        "--out",
        "out/transfer.json",
        "--occurrences",
        "out/en.density.json.occurrences.ndjson",
        "out/ko.density.json.occurrences.ndjson",
        "--runs",
    ];
    transfer.extend(runs.iter().map(String::as_str));
    c(&transfer);
    std::fs::write(
        dir.join("people.ndjson"),
        concat!(
            r#"{"name":"Ann Lee","place_of_birth":"Busan"}"#, "\n",
            r#"{"name":"Bo Kim","place_of_birth":"Seoul"}"#, "\n",
            r#"{"name":"Cy Park","place_of_birth":"Incheon"}"#, "\n",
            r#"{"name":"Di Choi","place_of_birth":"Daegu"}"#, "\n",
        ),
    )
    .unwrap();
    c(&["entities", "--records", "people.ndjson", "--lang", "en", "--culture", "ko", "--out", "out/entities.ndjson"]);
}

pub fn eval_runs(dir: &Path) -> Vec<String> {
    let mut runs: Vec<String> = std::fs::read_dir(dir.join("out/runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json") && !n.ends_with(".run.json"))
        .map(|n| format!("out/runs/{n}"))
        .collect();
    runs.sort();
    runs
}

/// Every file under `dir` except run manifests, relative and sorted.
pub fn artifacts(dir: &Path) -> Vec<PathBuf> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if !p.to_string_lossy().ends_with(".run.json") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
