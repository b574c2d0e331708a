//! End-to-end checks of the command layer on small configs.

use std::fs;
use std::path::Path;

use connflow_cli::commands::{cmd_connectivity, cmd_frozen_sweep, cmd_run, cmd_theory, RunOverrides};
use connflow_cli::config::{build_tasks, ExperimentConfig};

fn no_overrides() -> RunOverrides {
    RunOverrides {
        out: None,
        trials: None,
        seed_offset: None,
    }
}

fn small_config(out: &Path, extra: &str) -> String {
    format!(
        "[dataset]\nkind = permuted\nnum_tasks = 3\nseed = 11\ntrain_per_task = 120\n\
         eval_per_task = 60\nclasses = 3\ndim = 12\nseparation = 5.0\n\n\
         [network]\nhidden = 12,10\n\n\
         [train]\nepochs = 8\nfinetune_epochs = 2\nlr = 0.1\nbatch_size = 16\nconvergence_eps = 0.00001\n\n\
         [prune]\nbase_fraction = 0.8\npolicy = top\nn = 1\nk = 2\n\n\
         [connectivity]\nprobe_batch = 60\n\n\
         [metrics]\nlambda_iters = 40\n\n\
         [run]\ntrials = 1\nseed = 5\nout = {}\n{extra}",
        out.display()
    )
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.ini");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_emits_full_artifact_set() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &small_config(&out, ""));
    cmd_run(&cfg, &no_overrides()).unwrap();

    for file in [
        "run_config.txt",
        "manifest.txt",
        "summary.csv",
        "trials.csv",
        "trend_report.csv",
    ] {
        assert!(out.join(file).is_file(), "missing {file}");
    }
    let trial = out.join("trial_0");
    for file in [
        "loss_matrix.csv",
        "acc_matrix.csv",
        "forgetting.csv",
        "masked_accuracy.csv",
        "connectivity_task0.csv",
        "connectivity_task2.csv",
        "checkpoint_task0.cfw",
        "checkpoint_task2.cfw",
        "masks_task0.csv",
    ] {
        assert!(trial.join(file).is_file(), "missing trial_0/{file}");
    }
    // every CSV starts with the reproducibility comment
    for entry in fs::read_dir(&trial).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) == Some("csv") {
            let text = fs::read_to_string(&path).unwrap();
            assert!(
                text.starts_with("# config_hash="),
                "{} lacks the metadata line",
                path.display()
            );
        }
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("policy,n,k,trials,mean_avg_accuracy,std_avg_accuracy"));
    assert!(summary.contains("top,1,2,1,"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let cfg_a = write_config(&tmp.path().join("."), &small_config(&out_a, ""));
    cmd_run(&cfg_a, &no_overrides()).unwrap();
    // same settings, different out dir (out is not hashed into CSV bodies)
    cmd_run(
        &cfg_a,
        &RunOverrides {
            out: Some(out_b.clone()),
            trials: None,
            seed_offset: None,
        },
    )
    .unwrap();
    for entry in fs::read_dir(out_a.join("trial_0")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        if !name.ends_with(".csv") {
            continue;
        }
        let a = fs::read_to_string(&path).unwrap();
        let b = fs::read_to_string(out_b.join("trial_0").join(&name)).unwrap();
        // bodies (non-comment lines) must agree byte for byte; the comment
        // line embeds the config hash, which covers the out dir, so skip it
        let body = |s: &str| {
            s.lines()
                .filter(|l| !l.starts_with('#'))
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(body(&a), body(&b), "{name} differs between reruns");
    }
}

#[test]
fn connectivity_aggregation_is_verbatim() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &small_config(&out, ""));
    cmd_run(&cfg, &no_overrides()).unwrap();
    cmd_connectivity(&out).unwrap();
    let trial = out.join("trial_0");
    let long = fs::read_to_string(trial.join("connectivity_long.csv")).unwrap();
    // every source row appears verbatim in the aggregate
    for t in 0..3 {
        let src = fs::read_to_string(trial.join(format!("connectivity_task{t}.csv"))).unwrap();
        for line in src.lines().skip(2) {
            assert!(long.contains(line), "row {line} lost in aggregation");
        }
    }
    let table = fs::read_to_string(trial.join("connectivity_table.csv")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("layer,task_0,task_1,task_2"));
}

#[test]
fn theory_reports_one_row_per_transition() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &small_config(&out, ""));
    cmd_run(&cfg, &no_overrides()).unwrap();
    cmd_theory(&out).unwrap();
    let report = fs::read_to_string(out.join("trial_0").join("theory_report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 2, "3 tasks -> 2 transitions");
    assert!(out.join("trial_0").join("frobenius_check.csv").is_file());
    assert!(out.join("trial_0").join("taylor_check.csv").is_file());
}

#[test]
fn theory_detects_corrupted_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &small_config(&out, ""));
    cmd_run(&cfg, &no_overrides()).unwrap();
    let ckpt = out.join("trial_0").join("checkpoint_task1.cfw");
    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x55;
    fs::write(&ckpt, bytes).unwrap();
    let err = cmd_theory(&out).unwrap_err();
    assert!(
        err.to_string().contains("checksum"),
        "unexpected error: {err}"
    );
}

#[test]
fn theory_requires_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(cmd_theory(tmp.path()).is_err());
}

#[test]
fn frozen_sweep_emits_per_layer_rows_and_correlation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let cfg = write_config(tmp.path(), &small_config(&out, ""));
    cmd_frozen_sweep(&cfg, &no_overrides()).unwrap();
    let text = fs::read_to_string(out.join("frozen_sweep.csv")).unwrap();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("layer,"))
        .collect();
    assert_eq!(rows.len(), 3, "one row per layer: {text}");
    assert!(text.contains("# rank_correlation"), "correlation line missing");
    // reproducible under the same config
    let out2 = tmp.path().join("sweep2");
    cmd_frozen_sweep(
        &cfg,
        &RunOverrides {
            out: Some(out2.clone()),
            trials: None,
            seed_offset: None,
        },
    )
    .unwrap();
    let text2 = fs::read_to_string(out2.join("frozen_sweep.csv")).unwrap();
    let body = |s: &str| {
        s.lines()
            .filter(|l| !l.starts_with("# config_hash"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(body(&text), body(&text2));
}

#[test]
fn idx_fixture_feeds_the_permuted_pipeline() {
    use byteorder_free::write_idx_pair;
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    write_idx_pair(&data, 40, 4);
    let cfg = ExperimentConfig::parse(
        "[dataset]\nkind = permuted\nnum_tasks = 2\ntrain_per_task = 30\neval_per_task = 10\ndownscale = 2\n",
    )
    .unwrap();
    let (tasks, manifest) = build_tasks(&cfg, Some(&data)).unwrap();
    assert_eq!(tasks.len(), 2);
    assert_eq!(tasks[0].input_dim, 4); // 4x4 images pooled to 2x2
    assert_eq!(manifest.provenance, connflow::data::Provenance::Idx);
}

/// Hand-rolled IDX pair for the fixture test.
mod byteorder_free {
    use std::fs;
    use std::path::Path;

    pub fn write_idx_pair(dir: &Path, count: usize, side: usize) {
        let mut images = Vec::new();
        images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        images.extend_from_slice(&(count as u32).to_be_bytes());
        images.extend_from_slice(&(side as u32).to_be_bytes());
        images.extend_from_slice(&(side as u32).to_be_bytes());
        for i in 0..count * side * side {
            images.push((i * 37 % 251) as u8);
        }
        fs::write(dir.join("train-images-idx3-ubyte"), images).unwrap();
        let mut labels = Vec::new();
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&(count as u32).to_be_bytes());
        for i in 0..count {
            labels.push((i % 3) as u8);
        }
        fs::write(dir.join("train-labels-idx1-ubyte"), labels).unwrap();
    }
}
