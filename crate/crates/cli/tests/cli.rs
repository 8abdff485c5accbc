use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
replicas = 1
snapshot_epoch = 2

[synth]
count = 30
min_chars = 2
max_chars = 3
charset = "abc"
space_prob = 0.0
char_ms = 50.0

[model]
filters = 4
kernel = 3
gru_hidden = 4

[schedule]
epochs = 2
learning_rate = 0.01

[sweep]
filters = [1, 2, 3, 4, 5]
"#;

fn crnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crnn")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn count_params_full_size() {
    let o = crnn(&["count-params", "--full-size"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("4439294"), "{out}");
    assert!(out.contains("178400"), "{out}");
}

#[test]
fn train_then_transcribe_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let out = dir.path().join("run");
    let o = crnn(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["best.ckpt", "last.ckpt", "history.csv", "lm.txt"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let data = dir.path().join("data");
    let o = crnn(&["synth-data", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert!(o.status.success());
    let manifest = std::fs::read_to_string(data.join("manifest.tsv")).unwrap();
    let wav = data.join(manifest.lines().next().unwrap().split('\t').next().unwrap());

    let ckpt = out.join("best.ckpt");
    let o = crnn(&["transcribe", "--checkpoint", ckpt.to_str().unwrap(), "--wav", wav.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lm = out.join("lm.txt");
    let o = crnn(&[
        "transcribe",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--wav",
        wav.to_str().unwrap(),
        "--beam-width",
        "4",
        "--lm",
        lm.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = crnn(&["evaluate", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("wer"));
}

#[test]
fn sweep_is_reproducible_and_correlates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = crnn(&["sweep-filters", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["filters.csv", "filters_curves.csv", "filters.gp"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let results = a.join("filters.csv");
    let o = crnn(&["correlate", "--results", results.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("spearman(CFV, WER)"));
    assert!(a.join("correlation.csv").exists());
}

#[test]
fn correlate_needs_five_configs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    std::fs::write(&csv, "label,cfv_snapshot,wer\na,1.0,0.5\nb,2.0,0.6\n").unwrap();
    let o = crnn(&["correlate", "--results", csv.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn corrupt_checkpoint_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let wav = dir.path().join("x.wav");
    std::fs::write(&wav, b"RIFF").unwrap();
    let o = crnn(&["transcribe", "--checkpoint", ckpt.to_str().unwrap(), "--wav", wav.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(o.stdout.is_empty());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "[thresholds]\nbogus = 1\n");
    let o = crnn(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = crnn(&["compare-dropout", "--config", &tiny_config(dir.path(), "[dropout]\nrates = [1.0]\n")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let o = crnn(&[
        "train",
        "--config",
        &cfg,
        "--epochs",
        "10",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&cfg).unwrap().replace("learning_rate = 0.01", "learning_rate = 1e300");
    std::fs::write(&cfg, text).unwrap();
    let o = crnn(&["train", "--config", &cfg, "--epochs", "10", "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}
