use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::CommandFactory;

use planb::cli::{Cli, OracleFile};
use planb::dataset::{Dataset, Layout};
use planb::formats::{
    parse_csv, parse_prediction_text, AblationRow, MetricsRow, SweepRow, ABLATION_HEADER, METRICS_HEADER, SWEEP_HEADER,
};
use planb_core::datagen::{sample_video, FeatureModel, GrammarSpec};
use planb_core::metrics::choice_f1;
use planb_core::seed::derive_seed;

const FORK: &str = r#"{"actions": ["a", "p", "b1", "b2"], "startDist": [1, 0, 0, 0],
 "transitions": [[0, 1, 0, 0, 0], [0, 0, 0.5, 0.5, 0], [0, 0, 0, 0, 1], [0, 0, 0, 0, 1]],
 "durationRange": [[8, 8], [7, 7], [25, 25], [25, 25]], "maxVideoLen": 100}"#;

const TINY: &[&str] = &[
    "--set",
    "epochs=2",
    "--set",
    "restarts=1",
    "--set",
    "hidden_lower=6",
    "--set",
    "hidden_upper=5",
    "--set",
    "embed_dim=3",
    "--set",
    "threads=2",
];

fn planb(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_planb"))
        .args(args)
        .env_remove("PLANB_SEED")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn grammar_file(dir: &Path) -> PathBuf {
    let p = dir.join("g.json");
    fs::write(&p, FORK).unwrap();
    p
}

fn gen(dir: &Path, name: &str, videos: usize, extra: &[&str]) -> PathBuf {
    let g = grammar_file(dir);
    let out = dir.join(name);
    let n = videos.to_string();
    let mut args = vec!["gen-data", "--grammar", s(&g), "--out", s(&out), "--videos", &n];
    args.extend_from_slice(extra);
    let (code, text) = planb(&args);
    assert_eq!(code, 0, "{text}");
    out
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn every_flag_is_documented() {
    let root = Cli::command();
    for sub in root.get_subcommands() {
        let mut sub = sub.clone();
        let help = sub.render_long_help().to_string();
        for arg in sub.get_arguments() {
            let id = arg.get_id().as_str();
            if id == "help" || id == "version" {
                continue;
            }
            assert!(arg.get_help().is_some(), "{} --{id} lacks help", sub.get_name());
            match arg.get_long() {
                Some(l) => assert!(help.contains(&format!("--{l}")), "{} help misses --{l}", sub.get_name()),
                None => assert!(help.to_uppercase().contains(&id.to_uppercase()), "{} help misses {id}", sub.get_name()),
            }
        }
    }
    let (code, text) = planb(&["train", "--help"]);
    assert_eq!(code, 0);
    for flag in ["--data", "--split", "--out", "--config", "--set", "--seed", "--jobs", "--verbose"] {
        assert!(text.contains(flag), "{flag}");
    }
    let (_, text) = planb(&["gen-data", "--help"]);
    assert!(text.contains("durationRange") && text.contains("maxVideoLen"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(planb(&["frobnicate"]).0, 1);
    assert_eq!(planb(&[]).0, 1);
    assert_eq!(planb(&["train", "--data", "x"]).0, 1);
    let dir = tempfile::tempdir().unwrap();
    let ds = gen(dir.path(), "ds", 4, &[]);
    let out = dir.path().join("run");
    let (code, text) = planb(&["train", "--data", s(&ds), "--out", s(&out), "--set", "lamda=1"]);
    assert_eq!(code, 1, "{text}");
    assert!(text.contains("lamda"));
    assert!(!out.exists());
}

#[test]
fn zero_videos_give_empty_splits_and_a_vocab() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen(dir.path(), "ds", 0, &[]);
    assert_eq!(fs::read_to_string(ds.join("mapping.txt")).unwrap(), "a\np\nb1\nb2\n");
    assert_eq!(fs::read_to_string(ds.join("splits/train.split")).unwrap(), "");
    assert_eq!(fs::read_to_string(ds.join("splits/test.split")).unwrap(), "");
}

#[test]
fn generation_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a", 12, &["--seed", "9"]);
    let b = gen(dir.path(), "b", 12, &["--seed", "9"]);
    let c = gen(dir.path(), "c", 12, &["--seed", "10"]);
    assert_eq!(tree(&a), tree(&b));
    assert_ne!(tree(&a), tree(&c));
    let env = dir.path().join("env");
    let g = grammar_file(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_planb"))
        .args(["gen-data", "--grammar", s(&g), "--out", s(&env), "--videos", "12"])
        .env("PLANB_SEED", "9")
        .status()
        .unwrap();
    assert!(out.success());
    assert_eq!(tree(&a), tree(&env));
}

#[test]
fn generated_labels_reload_as_sampled() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen(dir.path(), "ds", 10, &["--seed", "4", "--test-fraction", "0.3"]);
    let grammar: GrammarSpec = serde_json::from_str(FORK).unwrap();
    let fm = FeatureModel::new(4, 16, 0.1, derive_seed(4, u64::MAX)).unwrap();
    let layout = Layout::new(&ds);
    let train = Dataset::load(&layout, Some("train"), 1).unwrap();
    let test = Dataset::load(&layout, Some("test"), 1).unwrap();
    assert_eq!((train.ids.len(), test.ids.len()), (7, 3));
    for (i, v) in train.videos.iter().chain(&test.videos).enumerate() {
        assert_eq!(v, &sample_video(&grammar, &fm, derive_seed(4, i as u64)).unwrap());
    }
    for id in &test.ids {
        let o: OracleFile = serde_json::from_str(&fs::read_to_string(layout.oracle(id)).unwrap()).unwrap();
        assert_eq!(o.horizon, 20);
        let probs: Vec<f64> = o.distribution.entries.iter().map(|e| e.probability).collect();
        assert_eq!(probs, vec![0.5, 0.5]);
    }
    assert!(!layout.oracle(&train.ids[0]).exists());
}

#[test]
fn bad_grammar_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    fs::write(&g, FORK.replace("0.5, 0.5", "0.5, 0.6")).unwrap();
    let (code, text) = planb(&["gen-data", "--grammar", s(&g), "--out", s(&dir.path().join("o")), "--videos", "1"]);
    assert_eq!(code, 2, "{text}");
    fs::write(&g, FORK.replace("maxVideoLen", "maxLen")).unwrap();
    assert_eq!(planb(&["gen-data", "--grammar", s(&g), "--out", s(&dir.path().join("o")), "--videos", "1"]).0, 2);
}

#[test]
fn unwritable_output_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let g = grammar_file(dir.path());
    let (code, _) = planb(&["gen-data", "--grammar", s(&g), "--out", s(&blocker.join("sub")), "--videos", "1"]);
    assert_eq!(code, 2);
}

#[test]
fn train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen(dir.path(), "fork", 10, &[]);
    let run = dir.path().join("run");
    let mut args = vec!["train", "--data", s(&ds), "--out", s(&run), "--seed", "5"];
    args.extend_from_slice(TINY);
    let (code, text) = planb(&args);
    assert_eq!(code, 0, "{text}");
    for f in ["model.plnb", "epochs.csv", "restarts.csv", "config.txt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let epochs = fs::read_to_string(run.join("epochs.csv")).unwrap();
    assert!(epochs.starts_with("epoch,total,recognition,action,time,similarity,upper,lr,teacherForcing\n"));
    assert_eq!(epochs.lines().count(), 3);
    assert!(fs::read_to_string(run.join("config.txt")).unwrap().contains("seed=5\n"));

    let ev = dir.path().join("ev");
    let model = run.join("model.plnb");
    let (code, text) = planb(&["eval", "--data", s(&ds), "--model", s(&model), "--out", s(&ev), "--alpha", "0.2,0.3", "--beta", "0.3,0.5"]);
    assert_eq!(code, 0, "{text}");
    let metrics = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    let rows: Vec<MetricsRow> = parse_csv(&ev.join("metrics.csv"), &metrics, METRICS_HEADER).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    assert!(rows.iter().all(|r| r.dataset == "fork"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["reports"].as_array().unwrap().len(), 4);
    assert_eq!(json["reports"][0]["accAtK"].as_array().unwrap().len(), 2);

    let pred_dir = ev.join("predictions").join("a0.3_b0.5");
    let first = fs::read_dir(&pred_dir).unwrap().next().unwrap().unwrap().path();
    let lines = parse_prediction_text(&first, &fs::read_to_string(&first).unwrap()).unwrap();
    assert_eq!(lines.iter().map(|l| l.rank).collect::<Vec<_>>(), vec![1, 2]);
    assert!(lines[0].log_prob >= lines[1].log_prob);
    for l in &lines {
        let total: f64 = l.segments.iter().map(|s| s.1).sum();
        assert!(l.segments.is_empty() || (total - 1.0).abs() < 1e-9);
    }

    // a rerun reproduces the checkpoint and the metrics exactly
    let run2 = dir.path().join("run2");
    let mut args = vec!["train", "--data", s(&ds), "--out", s(&run2), "--seed", "5"];
    args.extend_from_slice(TINY);
    assert_eq!(planb(&args).0, 0);
    assert_eq!(fs::read(&model).unwrap(), fs::read(run2.join("model.plnb")).unwrap());

    let rep = dir.path().join("rep");
    let (code, text) = planb(&["report", s(&ev.join("metrics.csv")), "--out", s(&rep)]);
    assert_eq!(code, 0, "{text}");
    let merged: Vec<MetricsRow> = parse_csv(&rep, &fs::read_to_string(rep.join("report.csv")).unwrap(), METRICS_HEADER).unwrap();
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.alpha.total_cmp(&b.alpha).then(a.beta.total_cmp(&b.beta)).then(a.k.cmp(&b.k)));
    assert_eq!(merged, sorted);
    for w in merged.windows(2) {
        if (w[0].alpha, w[0].beta) == (w[1].alpha, w[1].beta) {
            assert!(w[1].k > w[0].k);
        }
    }
    for r in &merged {
        assert!((choice_f1(r.mpta_at_k, r.acc_at_k) - r.choice_f1).abs() <= 1e-12);
    }
    // the same table twice collides
    let (code, _) = planb(&["report", s(&ev.join("metrics.csv")), s(&ev.join("metrics.csv")), "--out", s(&rep)]);
    assert_eq!(code, 2);
    let other = dir.path().join("other.csv");
    fs::write(&other, "dataset,alpha,beta,k,acc\nx,0.3,0.5,1,0.5\n").unwrap();
    let (code, text) = planb(&["report", s(&ev.join("metrics.csv")), s(&other), "--out", s(&rep)]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("columns"), "{text}");

    // a dataset with a different vocabulary
    let g2 = dir.path().join("g2.json");
    fs::write(&g2, r#"{"actions": ["a", "b"], "startDist": [1, 0], "transitions": [[0, 1, 0], [0, 0, 1]],
        "durationRange": [[10, 10], [20, 20]], "maxVideoLen": 50}"#).unwrap();
    let ds2 = dir.path().join("ds2");
    assert_eq!(planb(&["gen-data", "--grammar", s(&g2), "--out", s(&ds2), "--videos", "3", "--test-fraction", "1"]).0, 0);
    let (code, text) = planb(&["eval", "--data", s(&ds2), "--model", s(&model), "--out", s(&dir.path().join("ev2"))]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("actions"), "{text}");
}

#[test]
fn numeric_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen(dir.path(), "ds", 5, &[]);
    let out = dir.path().join("r");
    let mut args = vec!["train", "--data", s(&ds), "--out", s(&out), "--set", "lr=1e300"];
    args.extend_from_slice(TINY);
    let (code, text) = planb(&args);
    assert_eq!(code, 3, "{text}");
    assert!(text.contains("epoch 1, sample"), "{text}");
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen(dir.path(), "ds", 6, &[]);
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, "# tiny\nepochs = 1\nthreads = 3\nseed = 8\nhidden_lower=4\nhidden_upper=4\nembed_dim=2\nrestarts=1\n").unwrap();
    let out = dir.path().join("r");
    let (code, text) = planb(&["train", "--data", s(&ds), "--out", s(&out), "--config", s(&cfg), "--set", "threads=2"]);
    assert_eq!(code, 0, "{text}");
    let written = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(written.contains("threads=2\n") && written.contains("epochs=1\n") && written.contains("seed=8\n"));
    // the environment seed does not override one named in the file
    let status = Command::new(env!("CARGO_BIN_EXE_planb"))
        .args(["train", "--data", s(&ds), "--out", s(&out), "--config", s(&cfg)])
        .env("PLANB_SEED", "77")
        .status()
        .unwrap();
    assert!(status.success());
    assert!(fs::read_to_string(out.join("config.txt")).unwrap().contains("seed=8\n"));
    let (code, _) = planb(&["train", "--data", s(&ds), "--out", s(&out), "--config", s(&dir.path().join("missing"))]);
    assert_eq!(code, 2);
}

#[test]
fn ablation_has_four_rows_that_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen(dir.path(), "ds", 6, &[]);
    let out = dir.path().join("ablation.csv");
    let mut args = vec!["ablate", "--data", s(&ds), "--out", s(&out), "--set", "threads=4"];
    args.extend_from_slice(&TINY[..10]);
    let (code, text) = planb(&args);
    assert_eq!(code, 0, "{text}");
    let rows: Vec<AblationRow> = parse_csv(&out, &fs::read_to_string(&out).unwrap(), ABLATION_HEADER).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, vec!["multi-decoder", "+sp-rln", "+k-threads", "+crnn"]);
    assert_eq!(rows.iter().map(|r| r.threads).collect::<Vec<_>>(), vec![3, 3, 4, 4]);
    assert_eq!((rows[0].lambda, rows[0].phi), (0.0, 1.0));
    assert_eq!(rows[3].levels, "collaborative");
    assert!(rows.iter().all(|r| r.acc_at3 >= r.acc_at1));
}

#[test]
fn single_thread_sweep_matches_plain_eval() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen(dir.path(), "ds", 8, &[]);
    let sweep = dir.path().join("sweep.csv");
    let mut args = vec!["sweep-threads", "--data", s(&ds), "--out", s(&sweep), "--threads", "1", "--seed", "2"];
    args.extend_from_slice(&TINY[..10]);
    let (code, text) = planb(&args);
    assert_eq!(code, 0, "{text}");
    let rows: Vec<SweepRow> = parse_csv(&sweep, &fs::read_to_string(&sweep).unwrap(), SWEEP_HEADER).unwrap();
    assert_eq!(rows.len(), 1);

    let run = dir.path().join("run");
    let mut args = vec!["train", "--data", s(&ds), "--out", s(&run), "--seed", "2", "--set", "threads=1"];
    args.extend_from_slice(&TINY[..10]);
    assert_eq!(planb(&args).0, 0);
    let ev = dir.path().join("ev");
    assert_eq!(planb(&["eval", "--data", s(&ds), "--model", s(&run.join("model.plnb")), "--out", s(&ev)]).0, 0);
    let m: Vec<MetricsRow> = parse_csv(&ev, &fs::read_to_string(ev.join("metrics.csv")).unwrap(), METRICS_HEADER).unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!((rows[0].acc_at1, rows[0].acc_at_k, rows[0].choice_f1_at_k), (m[0].acc_at_k, m[0].acc_at_k, m[0].choice_f1));
}
