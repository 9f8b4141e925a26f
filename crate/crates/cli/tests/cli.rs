use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vaecil::data::{write_feature_file, LabeledSet};
use vaecil::numcore::Tensor;

const DIM: usize = 8;

fn vaecil() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vaecil"))
}

fn run(args: &[&str]) -> Output {
    vaecil().args(args).output().expect("spawn vaecil")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Four classes; class `k` lights up coordinates `k` and `k + 4`, with a small deterministic jitter.
fn blobs(per_class: usize, offset: usize) -> LabeledSet {
    let mut v = Vec::new();
    let mut labels = Vec::new();
    for k in 0..4u32 {
        for i in 0..per_class {
            for d in 0..DIM {
                let on = d == k as usize || d == k as usize + 4;
                let jitter =
                    (((i + offset) * 31 + d * 17 + k as usize * 7) % 13) as f64 / 13.0 - 0.5;
                v.push(if on { 0.85 } else { 0.15 } + 0.1 * jitter);
            }
            labels.push(k);
        }
    }
    LabeledSet::new(Tensor::matrix(labels.len(), DIM, v).unwrap(), labels).unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_feature_file(&dir.path().join("train.vcf"), &blobs(40, 0)).unwrap();
        write_feature_file(&dir.path().join("test.vcf"), &blobs(10, 1000)).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    /// Small, fast run on the synthetic feature files.
    fn common(&self) -> Vec<String> {
        [
            "--features",
            &self.s("train.vcf"),
            "--test-features",
            &self.s("test.vcf"),
            "--epochs",
            "3",
            "--batch-size",
            "16",
            "--r-intra",
            "0.05",
            "--r-inter",
            "0.5",
        ]
        .map(String::from)
        .to_vec()
    }
}

fn train(fx: &Fixture, out: &Path, ckpt: &Path) -> Output {
    let mut args = vec!["train".to_string()];
    args.extend(fx.common());
    args.extend([
        "--out".into(),
        out.display().to_string(),
        "--checkpoint".into(),
        ckpt.display().to_string(),
    ]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run(&refs)
}

#[test]
fn missing_dataset_exits_two_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-mnist");
    let o = run(&[
        "train",
        "--dataset",
        &missing.display().to_string(),
        "--out",
        &dir.path().display().to_string(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("no-such-mnist"), "{}", stderr(&o));
}

#[test]
fn invalid_settings_exit_two() {
    let o = run(&["train", "--variant", "var9"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(&["train", "--r-intra", "80", "--r-inter", "50"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(&["sweep", "r_intra", "--values", "10,300", "--r-inter", "200"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn train_then_eval_reproduces_the_report() {
    let fx = Fixture::new();
    let (out, ckpt) = (fx.path("run"), fx.path("final.ckpt"));
    let o = train(&fx, &out, &ckpt);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("task-1.ckpt").exists() && out.join("task-2.ckpt").exists());
    let report = fs::read_to_string(out.join("train-report.csv")).unwrap();

    let mut args = vec!["eval".to_string()];
    args.extend(fx.common());
    args.extend([
        "--checkpoint".into(),
        fx.s("final.ckpt"),
        "--out".into(),
        fx.s("eval"),
    ]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = run(&refs);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(fx.path("eval").join("eval-report.csv")).unwrap(),
        report
    );

    let o = run(&["inspect", "--checkpoint", &fx.s("final.ckpt")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("tasks learned   2"), "{}", stdout(&o));
}

#[test]
fn same_seed_gives_identical_files() {
    let fx = Fixture::new();
    assert!(train(&fx, &fx.path("a"), &fx.path("a.ckpt"))
        .status
        .success());
    assert!(train(&fx, &fx.path("b"), &fx.path("b.ckpt"))
        .status
        .success());
    assert_eq!(
        fs::read(fx.path("a.ckpt")).unwrap(),
        fs::read(fx.path("b.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read(fx.path("a").join("train-report.csv")).unwrap(),
        fs::read(fx.path("b").join("train-report.csv")).unwrap()
    );
}

#[test]
fn corrupted_checkpoint_reports_the_offset() {
    let fx = Fixture::new();
    let ckpt = fx.path("final.ckpt");
    assert!(train(&fx, &fx.path("run"), &ckpt).status.success());
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[40] ^= 0xff;
    fs::write(&ckpt, &bytes).unwrap();
    let o = run(&["inspect", "--checkpoint", &ckpt.display().to_string()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("offset"), "{}", stderr(&o));

    fs::write(&ckpt, b"not a checkpoint").unwrap();
    let o = run(&["inspect", "--checkpoint", &ckpt.display().to_string()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn flags_override_file_override_defaults() {
    let fx = Fixture::new();
    let cfg = fx.path("run.cfg");
    fs::write(
        &cfg,
        "# layered settings\nepochs = 2\nr_intra = 0.04\nlambda2 = 0.5\n",
    )
    .unwrap();
    let out = fx.path("layers");
    // The flag overrides the file's r_intra of 0.04.
    let o = run(&[
        "train",
        "--config",
        &cfg.display().to_string(),
        "--features",
        &fx.s("train.vcf"),
        "--test-features",
        &fx.s("test.vcf"),
        "--r-inter",
        "0.5",
        "--r-intra",
        "0.03",
        "--out",
        &out.display().to_string(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let written = fs::read_to_string(out.join("config.txt")).unwrap();
    for line in [
        "epochs = 2",
        "r_intra = 0.03",
        "lambda2 = 0.5",
        "lambda1 = 1",
        "latent_dim = 8",
    ] {
        assert!(
            written.lines().any(|l| l == line),
            "missing {line:?} in\n{written}"
        );
    }
}

#[test]
fn unknown_config_key_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs = 2\ncolour = blue\n").unwrap();
    let o = run(&["train", "--config", &cfg.display().to_string()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("bad.cfg:2"), "{}", stderr(&o));
}
