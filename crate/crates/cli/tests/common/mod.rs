#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn techscape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_techscape"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes a run configuration over the bundled fixture into `dir`; all
/// outputs land in `dir/out`.
pub fn write_config(dir: &Path, seed: u64) -> PathBuf {
    let f = fixture_dir();
    let text = format!(
        "# bundled fixture run\n\
         seed = {seed}\n\
         mentions.website = {website}\n\
         mentions.jobs = {jobs}\n\
         embeddings = {emb}\n\
         labels = {labels}\n\
         categories = {cats}\n\
         classifier = out/classifier.txt\n\
         predictions = out/predictions.csv\n\
         matrix = out/matrix.txt\n\
         model = out/model.txt\n\
         classifier.h1 = 16\n\
         classifier.h2 = 8\n\
         classifier.lr = 0.05\n\
         classifier.epochs = 100\n\
         classifier.batch = 8\n\
         recommender.d = 16\n\
         recommender.margin = 0.05\n\
         recommender.epochs = 200\n",
        website = f.join("website.jsonl").display(),
        jobs = f.join("jobs.jsonl").display(),
        emb = f.join("embeddings.tsv").display(),
        labels = f.join("labels.csv").display(),
        cats = f.join("categories.csv").display(),
    );
    let path = dir.join("run.conf");
    fs::write(&path, text).unwrap();
    path
}

/// Every pipeline step, in order, with the files each one produces.
pub fn pipeline_steps() -> Vec<(Vec<&'static str>, &'static str)> {
    vec![
        (vec!["ingest", "--out", "out/ingest.csv"], "out/ingest.csv"),
        (
            vec!["train-classifier", "--progress", "out/classifier_progress.csv"],
            "out/classifier.txt",
        ),
        (vec!["predict-tech"], "out/predictions.csv"),
        (vec!["build-matrix"], "out/matrix.txt"),
        (
            vec!["train-recommender", "--progress", "out/recommender_progress.csv"],
            "out/model.txt",
        ),
        (
            vec![
                "query",
                "com-tech",
                "--company",
                "c000",
                "--top",
                "5",
                "--out",
                "out/com_tech.csv",
            ],
            "out/com_tech.csv",
        ),
        (
            vec![
                "query",
                "com-com",
                "--company",
                "c003",
                "--top",
                "5",
                "--format",
                "jsonl",
                "--out",
                "out/com_com.jsonl",
            ],
            "out/com_com.jsonl",
        ),
        (
            vec![
                "query",
                "tech-com",
                "--tech",
                "t013",
                "--top",
                "5",
                "--out",
                "out/tech_com.csv",
            ],
            "out/tech_com.csv",
        ),
        (
            vec!["evaluate", "--k", "5,10,15,20", "--out", "out/evaluation.csv"],
            "out/evaluation.csv",
        ),
    ]
}

/// Runs the whole pipeline in `dir` and returns each artifact's bytes.
/// Paths given as flags are relative to the working directory, so the
/// binary runs inside `dir`.
pub fn run_pipeline(dir: &Path, seed: u64) -> Result<Vec<(String, Vec<u8>)>, String> {
    let config = write_config(dir, seed);
    let mut artifacts = Vec::new();
    for (args, produced) in pipeline_steps() {
        let mut full = vec!["--config".to_string(), config.display().to_string()];
        full.extend(args.iter().map(|s| s.to_string()));
        let out = Command::new(env!("CARGO_BIN_EXE_techscape"))
            .args(&full)
            .current_dir(dir)
            .env_remove("RUST_LOG")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
        let path = dir.join(produced);
        let bytes = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        artifacts.push((produced.to_string(), bytes));
    }
    for extra in ["out/classifier_progress.csv", "out/recommender_progress.csv"] {
        let bytes = fs::read(dir.join(extra)).map_err(|e| e.to_string())?;
        artifacts.push((extra.to_string(), bytes));
    }
    Ok(artifacts)
}
