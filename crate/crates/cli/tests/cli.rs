use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn vamce(args: &[&str], dir: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vamce"));
    cmd.args(args).current_dir(dir).env("RUST_LOG", "warn");
    match threads {
        Some(t) => cmd.env("VAMCE_THREADS", t),
        None => cmd.env_remove("VAMCE_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = vamce(args, dir, None);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn small_corpus(dir: &Path, name: &str, seed: &str) {
    ok(
        &["make-corpus", "--out", name, "--n-clean", "2", "--n-mixtures", "2", "--secs", "0.5", "--seed", seed],
        dir,
    );
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn help_lists_defaults() {
    let dir = TempDir::new().unwrap();
    let help = stdout(&ok(&["enhance", "--help"], dir.path()));
    for needle in [
        "--kb <KB>",
        "[default: 10]",
        "[default: 0.01]",
        "[default: 40]",
        "[default: 30]",
        "[default: 100]",
        "[default: 75]",
        "--win-ms <WIN_MS>",
        "[default: 64]",
        "[default: 0.75]",
        "--freeze-gains",
        "--dump-trace",
    ] {
        assert!(help.contains(needle), "enhance --help lacks {needle}:\n{help}");
    }
    let help = stdout(&ok(&["train-vae", "--help"], dir.path()));
    for needle in ["--hidden <HIDDEN>", "[default: 128]", "--latent-dim", "[default: 8]", "[default: 0.001]"] {
        assert!(help.contains(needle), "train-vae --help lacks {needle}");
    }
    let help = stdout(&ok(&["train-dict", "--help"], dir.path()));
    assert!(help.contains("[default: 64]"));
    let help = stdout(&ok(&["gain-robustness", "--help"], dir.path()));
    assert!(help.contains("[default: -12,-6,0,6,12,18]"));
    let help = stdout(&ok(&["--help"], dir.path()));
    assert!(help.contains("VAMCE_THREADS"));
}

#[test]
fn exit_codes_distinguish_usage_io_and_input() {
    let dir = TempDir::new().unwrap();
    let out = vamce(&["enhance", "--model", "missing-model.json", "--in", "x.wav", "--out", "y.wav"], dir.path(), None);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing-model.json"));

    assert_eq!(vamce(&["enhance", "--no-such-flag"], dir.path(), None).status.code(), Some(2));
    assert_eq!(vamce(&["no-such-command"], dir.path(), None).status.code(), Some(2));
    let out = vamce(&["make-corpus", "--out", "c", "--secs", "0.01"], dir.path(), None);
    assert_eq!(out.status.code(), Some(2));
    let out = vamce(&["make-corpus", "--out", "c", "--n-clean", "1", "--n-mixtures", "0", "--secs", "0.2"], dir.path(), Some("many"));
    assert_eq!(out.status.code(), Some(2));

    fs::write(dir.path().join("garbage.json"), "{ not json").unwrap();
    let out = vamce(&["enhance", "--model", "garbage.json", "--in", "x.wav", "--out", "y.wav"], dir.path(), None);
    assert_eq!(out.status.code(), Some(3));
}

fn resolved(dir: &Path, config: Option<&str>, flags: &[&str]) -> Value {
    let mut args = vec!["enhance", "--model", "m.json", "--in", "a.wav", "--out", "b.wav", "--print-config"];
    if let Some(c) = config {
        fs::write(dir.join("cfg.json"), c).unwrap();
        args.extend(["--config", "cfg.json"]);
    }
    args.extend_from_slice(flags);
    serde_json::from_str(&stdout(&ok(&args, dir))).unwrap()
}

#[test]
fn config_file_merging_matrix() {
    let dir = TempDir::new().unwrap();
    let file = r#"{"kb": 7, "eps2": 0.5, "seed": 11, "freeze_gains": true, "win-ms": 32}"#;
    // (file?, flags?) for each knob: default, file only, flag only, both.
    let cases: [(Option<&str>, &[&str], [(&str, Value); 5]); 4] = [
        (
            None,
            &[],
            [
                ("kb", 10.into()),
                ("eps2", 0.01.into()),
                ("seed", 0.into()),
                ("freeze_gains", false.into()),
                ("win_ms", 64.0.into()),
            ],
        ),
        (
            Some(file),
            &[],
            [
                ("kb", 7.into()),
                ("eps2", 0.5.into()),
                ("seed", 11.into()),
                ("freeze_gains", true.into()),
                ("win_ms", 32.0.into()),
            ],
        ),
        (
            None,
            &["--kb", "3", "--eps2", "0.02", "--seed", "5", "--freeze-gains", "--win-ms", "48"],
            [
                ("kb", 3.into()),
                ("eps2", 0.02.into()),
                ("seed", 5.into()),
                ("freeze_gains", true.into()),
                ("win_ms", 48.0.into()),
            ],
        ),
        (
            Some(file),
            &["--kb", "3", "--eps2", "0.02", "--seed", "5", "--win-ms", "48"],
            [
                ("kb", 3.into()),
                ("eps2", 0.02.into()),
                ("seed", 5.into()),
                ("freeze_gains", true.into()),
                ("win_ms", 48.0.into()),
            ],
        ),
    ];
    for (config, flags, expected) in cases {
        let v = resolved(dir.path(), config, flags);
        assert_eq!(v["subcommand"], "enhance");
        for (key, want) in expected {
            let got = v.get(key).or_else(|| v["mcem"].get(key)).or_else(|| v["stft"].get(key));
            assert_eq!(got, Some(&want), "{key} with config {config:?} and flags {flags:?}: {v}");
        }
    }
    // A flag given only partially overrides: the file still supplies the rest.
    let v = resolved(dir.path(), Some(file), &["--kb", "2"]);
    assert_eq!(v["mcem"]["kb"], 2);
    assert_eq!(v["mcem"]["eps2"], 0.5);

    fs::write(dir.path().join("bad.json"), r#"{"no_such_knob": 1}"#).unwrap();
    let out = vamce(&["enhance", "--model", "m", "--in", "a", "--out", "b", "--config", "bad.json"], dir.path(), None);
    assert_eq!(out.status.code(), Some(2));
    let out = vamce(&["enhance", "--model", "m", "--in", "a", "--out", "b", "--config", "absent.json"], dir.path(), None);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn corpus_without_mixtures_lists_clean_only() {
    let dir = TempDir::new().unwrap();
    ok(&["make-corpus", "--out", "c", "--n-clean", "2", "--n-mixtures", "0", "--secs", "0.3"], dir.path());
    let manifest = fs::read_to_string(dir.path().join("c/manifest.csv")).unwrap();
    let rows: Vec<&str> = manifest.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.contains(",clean,")));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    small_corpus(d, "a", "4");
    small_corpus(d, "b", "4");
    assert_eq!(tree_bytes(&d.join("a")), tree_bytes(&d.join("b")));

    let train = ["train-vae", "--corpus", "a", "--latent-dim", "3", "--hidden", "8", "--epochs", "3", "--seed", "2"];
    ok(&[&train[..], &["--out", "m1.json"]].concat(), d);
    ok(&[&train[..], &["--out", "m2.json"]].concat(), d);
    assert_eq!(fs::read(d.join("m1.json")).unwrap(), fs::read(d.join("m2.json")).unwrap());

    let dict = ["train-dict", "--corpus", "a", "--rank", "4", "--max-iters", "20", "--win-ms", "16"];
    ok(&[&dict[..], &["--out", "d1.json"]].concat(), d);
    ok(&[&dict[..], &["--out", "d2.json"]].concat(), d);
    assert_eq!(fs::read(d.join("d1.json")).unwrap(), fs::read(d.join("d2.json")).unwrap());

    let enhance = |threads: &str, out: &str| {
        let args = [
            "enhance", "--model", "m1.json", "--in", "a", "--out", out, "--max-iters", "2", "--estep-iters", "6",
            "--estep-burn-in", "3", "--recon-iters", "6", "--recon-burn-in", "3", "--seed", "9", "--dump-trace",
        ];
        let trace = format!("{out}-trace");
        let o = vamce(&[&args[..], &[trace.as_str()]].concat(), d, Some(threads));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    enhance("1", "e1");
    enhance("4", "e4");
    enhance("0", "e0");
    let reference = tree_bytes(&d.join("e1"));
    assert_eq!(reference.len(), 2);
    assert_eq!(reference, tree_bytes(&d.join("e4")));
    assert_eq!(reference, tree_bytes(&d.join("e0")));
    assert_eq!(tree_bytes(&d.join("e1-trace")), tree_bytes(&d.join("e4-trace")));
}

#[test]
fn full_pipeline_runs_and_reports() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    small_corpus(d, "c", "5");
    ok(&["train-vae", "--corpus", "c", "--out", "m.json", "--latent-dim", "3", "--hidden", "8", "--epochs", "2", "--log", "log.csv"], d);
    ok(&["train-dict", "--corpus", "c", "--out", "d.json", "--rank", "4", "--max-iters", "10"], d);
    ok(&["enhance", "--model", "m.json", "--in", "c", "--out", "vae", "--max-iters", "2"], d);
    ok(&["enhance", "--model", "m.json", "--in", "c/test/mix_0000_mix.wav", "--out", "one.wav", "--max-iters", "2", "--freeze-gains", "--dump-trace", "t.csv"], d);
    ok(&["enhance-nmf", "--dict", "d.json", "--in", "c", "--out", "nmf", "--max-iters", "10"], d);
    let summary = stdout(&ok(&["evaluate", "--corpus", "c", "--estimates", "vae=vae", "--estimates", "nmf=nmf", "--out", "report.csv"], d));
    assert!(summary.starts_with("method,count,"));
    assert_eq!(summary.lines().count(), 3);

    let report = fs::read_to_string(d.join("report.csv")).unwrap();
    assert!(report.starts_with("id,method,sdr_noisy_db,sdr_enhanced_db,improvement_db"));
    assert_eq!(report.lines().count(), 5);
    let trace = fs::read_to_string(d.join("t.csv")).unwrap();
    assert!(trace.starts_with("iter,q_tilde,mean_accept"));
    assert_eq!(trace.lines().count(), 3);
    assert!(fs::read_to_string(d.join("log.csv")).unwrap().starts_with("epoch,train_loss,validation_loss"));

    ok(
        &[
            "gain-robustness", "--model", "m.json", "--mixture", "c/test/mix_0000_mix.wav", "--clean",
            "c/test/mix_0000_clean.wav", "--scalings=-6,0,6", "--max-iters", "2", "--out", "rob.csv",
        ],
        d,
    );
    let rob = fs::read_to_string(d.join("rob.csv")).unwrap();
    assert!(rob.starts_with("scaling_db,sdr_free_db,sdr_frozen_db"));
    assert_eq!(rob.lines().count(), 4);
}
